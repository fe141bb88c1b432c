//! Response templates and the guard language that selects them.
//!
//! Guard grammar:
//!
//! ```text
//! expr  := and ("||" and)*
//! and   := unary ("&&" unary)*
//! unary := "!" unary | "(" expr ")" | atom
//! atom  := "true" | "false" | "hasScale" | "hasFigure" | "answerable" | "asserted"
//!        | "mentioned(" attr ")" | "known(" attr "," figure ")"
//! ```
//!
//! `figure` is `left`, `right` or `focus` (the figure resolved for the turn).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::entity::{Attribute, EntityAnnotation, FigureRef};
use crate::nlu::DialogueAct;
use crate::rational::Rational;
use crate::scenario::ScenarioState;

use super::DialogueError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FigureArg {
    Left,
    Right,
    Focus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Atom {
    True,
    False,
    HasScale,
    HasFigure,
    Answerable,
    Asserted,
    Mentioned(Attribute),
    Known(Attribute, FigureArg),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Guard {
    Atom(Atom),
    Not(Box<Guard>),
    And(Box<Guard>, Box<Guard>),
    Or(Box<Guard>, Box<Guard>),
}

/// What a guard can see about the current turn.
#[derive(Clone, Copy, Debug)]
pub struct GuardContext<'a> {
    pub annotation: &'a EntityAnnotation,
    pub state: &'a ScenarioState,
    /// Figure resolved for this turn, after carrying context forward.
    pub figure: Option<FigureRef>,
    /// The attribute the utterance asks or talks about.
    pub focus: Option<Attribute>,
    /// Whether this turn added facts to the scenario.
    pub asserted: bool,
}

impl GuardContext<'_> {
    fn answer(&self) -> Option<Rational> {
        self.state.query(self.figure, self.focus?).known()
    }

    fn holds(&self, atom: Atom) -> bool {
        match atom {
            Atom::True => true,
            Atom::False => false,
            Atom::HasScale => self.state.scale_factor().is_some(),
            Atom::HasFigure => self.figure.is_some(),
            Atom::Answerable => self.answer().is_some(),
            Atom::Asserted => self.asserted,
            Atom::Mentioned(a) => self.annotation.mentions(a),
            Atom::Known(a, f) => {
                let figure = match f {
                    FigureArg::Left => Some(FigureRef::Left),
                    FigureArg::Right => Some(FigureRef::Right),
                    FigureArg::Focus => self.figure,
                };
                figure.is_some() && self.state.query(figure, a).known().is_some()
            }
        }
    }
}

impl Guard {
    pub fn parse(src: &str) -> Result<Guard, DialogueError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens: &tokens, pos: 0, src };
        let g = p.expr()?;
        if p.pos != tokens.len() {
            return Err(p.error("trailing input"));
        }
        Ok(g)
    }

    pub fn eval(&self, ctx: &GuardContext<'_>) -> bool {
        match self {
            Guard::Atom(a) => ctx.holds(*a),
            Guard::Not(g) => !g.eval(ctx),
            Guard::And(a, b) => a.eval(ctx) && b.eval(ctx),
            Guard::Or(a, b) => a.eval(ctx) || b.eval(ctx),
        }
    }

    /// Atoms that are true in every context where the guard holds.
    /// Conservative: negations guarantee nothing.
    pub fn guaranteed(&self) -> BTreeSet<Atom> {
        match self {
            Guard::Atom(a) => BTreeSet::from([*a]),
            Guard::Not(_) => BTreeSet::new(),
            Guard::And(a, b) => a.guaranteed().union(&b.guaranteed()).copied().collect(),
            Guard::Or(a, b) => a.guaranteed().intersection(&b.guaranteed()).copied().collect(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::True => f.write_str("true"),
            Atom::False => f.write_str("false"),
            Atom::HasScale => f.write_str("hasScale"),
            Atom::HasFigure => f.write_str("hasFigure"),
            Atom::Answerable => f.write_str("answerable"),
            Atom::Asserted => f.write_str("asserted"),
            Atom::Mentioned(a) => write!(f, "mentioned({})", a.as_str()),
            Atom::Known(a, fig) => {
                let fig = match fig {
                    FigureArg::Left => "left",
                    FigureArg::Right => "right",
                    FigureArg::Focus => "focus",
                };
                write!(f, "known({}, {fig})", a.as_str())
            }
        }
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::Atom(a) => a.fmt(f),
            Guard::Not(g) => write!(f, "!({g})"),
            Guard::And(a, b) => write!(f, "({a} && {b})"),
            Guard::Or(a, b) => write!(f, "({a} || {b})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Comma,
    Not,
    And,
    Or,
}

fn lex(src: &str) -> Result<Vec<Tok>, DialogueError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            c if c.is_whitespace() => {}
            '(' => out.push(Tok::LParen),
            ')' => out.push(Tok::RParen),
            ',' => out.push(Tok::Comma),
            '!' => out.push(Tok::Not),
            '&' | '|' => {
                if chars.next_if(|&(_, n)| n == c).is_none() {
                    return Err(DialogueError::Template(format!("guard {src:?}: lone {c:?} at {i}")));
                }
                out.push(if c == '&' { Tok::And } else { Tok::Or });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut ident = String::from(c);
                while let Some((_, n)) = chars.next_if(|&(_, n)| n.is_ascii_alphanumeric() || n == '_') {
                    ident.push(n);
                }
                out.push(Tok::Ident(ident));
            }
            other => {
                return Err(DialogueError::Template(format!("guard {src:?}: unexpected {other:?} at {i}")))
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Tok],
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> DialogueError {
        DialogueError::Template(format!("guard {:?}: {msg} at token {}", self.src, self.pos))
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<(), DialogueError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.error(&format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Guard, DialogueError> {
        let mut g = self.and()?;
        while self.eat(&Tok::Or) {
            g = Guard::Or(Box::new(g), Box::new(self.and()?));
        }
        Ok(g)
    }

    fn and(&mut self) -> Result<Guard, DialogueError> {
        let mut g = self.unary()?;
        while self.eat(&Tok::And) {
            g = Guard::And(Box::new(g), Box::new(self.unary()?));
        }
        Ok(g)
    }

    fn unary(&mut self) -> Result<Guard, DialogueError> {
        if self.eat(&Tok::Not) {
            return Ok(Guard::Not(Box::new(self.unary()?)));
        }
        if self.eat(&Tok::LParen) {
            let g = self.expr()?;
            self.expect(&Tok::RParen, "')'")?;
            return Ok(g);
        }
        self.atom().map(Guard::Atom)
    }

    fn ident(&mut self) -> Result<String, DialogueError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    fn attribute(&mut self) -> Result<Attribute, DialogueError> {
        let name = self.ident()?;
        name.parse().map_err(|_| self.error(&format!("unknown attribute {name:?}")))
    }

    fn atom(&mut self) -> Result<Atom, DialogueError> {
        let name = self.ident()?;
        Ok(match name.as_str() {
            "true" => Atom::True,
            "false" => Atom::False,
            "hasScale" => Atom::HasScale,
            "hasFigure" => Atom::HasFigure,
            "answerable" => Atom::Answerable,
            "asserted" => Atom::Asserted,
            "mentioned" => {
                self.expect(&Tok::LParen, "'('")?;
                let a = self.attribute()?;
                self.expect(&Tok::RParen, "')'")?;
                Atom::Mentioned(a)
            }
            "known" => {
                self.expect(&Tok::LParen, "'('")?;
                let a = self.attribute()?;
                self.expect(&Tok::Comma, "','")?;
                let fig = match self.ident()?.as_str() {
                    "left" => FigureArg::Left,
                    "right" => FigureArg::Right,
                    "focus" => FigureArg::Focus,
                    other => return Err(self.error(&format!("unknown figure {other:?}"))),
                };
                self.expect(&Tok::RParen, "')'")?;
                Atom::Known(a, fig)
            }
            other => return Err(self.error(&format!("unknown predicate {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Attr,
    Value,
    Figure,
    Scale,
    Derivation,
}

impl Slot {
    fn parse(name: &str) -> Option<Slot> {
        Some(match name {
            "attr" => Slot::Attr,
            "value" => Slot::Value,
            "figure" => Slot::Figure,
            "scale" => Slot::Scale,
            "derivation" => Slot::Derivation,
            _ => return None,
        })
    }

    /// Whether a guard that guarantees `atoms` makes this slot fillable.
    fn fillable(self, atoms: &BTreeSet<Atom>) -> bool {
        let has = |a: Atom| atoms.contains(&a);
        match self {
            Slot::Attr => has(Atom::Answerable) || atoms.iter().any(|a| matches!(a, Atom::Mentioned(_))),
            Slot::Value => has(Atom::Answerable),
            Slot::Figure => has(Atom::HasFigure),
            Slot::Scale | Slot::Derivation => {
                has(Atom::HasScale) || has(Atom::Known(Attribute::ScaleFactor, FigureArg::Left))
                    || has(Atom::Known(Attribute::ScaleFactor, FigureArg::Right))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Piece {
    Text(String),
    Slot(Slot),
}

fn parse_pattern(pattern: &str) -> Result<Vec<Piece>, DialogueError> {
    let mut pieces = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            pieces.push(Piece::Text(rest[..open].to_string()));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| DialogueError::Template(format!("pattern {pattern:?}: unclosed '{{'")))?;
        let name = &rest[open + 1..open + close];
        let slot = Slot::parse(name)
            .ok_or_else(|| DialogueError::Template(format!("pattern {pattern:?}: unknown slot {{{name}}}")))?;
        pieces.push(Piece::Slot(slot));
        rest = &rest[open + close + 1..];
    }
    if rest.contains('}') {
        return Err(DialogueError::Template(format!("pattern {pattern:?}: stray '}}'")));
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest.to_string()));
    }
    Ok(pieces)
}

/// One entry of the template file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub act: DialogueAct,
    pub guard: String,
    pub pattern: String,
}

#[derive(Clone, Debug)]
pub struct ResponseTemplate {
    pub spec: TemplateSpec,
    guard: Guard,
    pieces: Vec<Piece>,
}

impl ResponseTemplate {
    pub fn new(spec: TemplateSpec) -> Result<Self, DialogueError> {
        let guard = Guard::parse(&spec.guard)?;
        let pieces = parse_pattern(&spec.pattern)?;
        let atoms = guard.guaranteed();
        for piece in &pieces {
            if let Piece::Slot(slot) = piece {
                if !slot.fillable(&atoms) {
                    return Err(DialogueError::Template(format!(
                        "pattern {:?}: slot {slot:?} is not guaranteed by guard {:?}",
                        spec.pattern, spec.guard
                    )));
                }
            }
        }
        Ok(Self { spec, guard, pieces })
    }

    pub fn guard(&self) -> &Guard {
        &self.guard
    }

    fn fill(&self, ctx: &GuardContext<'_>) -> Option<String> {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(Slot::Attr) => out.push_str(ctx.focus?.noun()),
                Piece::Slot(Slot::Value) => out.push_str(&ctx.answer()?.to_string()),
                Piece::Slot(Slot::Figure) => out.push_str(ctx.figure?.as_str()),
                Piece::Slot(Slot::Scale) => out.push_str(&ctx.state.scale_factor()?.to_string()),
                Piece::Slot(Slot::Derivation) => {
                    let d = ctx.state.derivation()?;
                    let k = ctx.state.scale_factor()?;
                    out.push_str(&format!("{d} = {k}"));
                }
            }
        }
        Some(out)
    }
}

/// Ordered template library; the first matching template wins.
#[derive(Clone, Debug)]
pub struct TemplateSet {
    templates: Vec<ResponseTemplate>,
}

const DEFAULT_TEMPLATES: &[(DialogueAct, &str, &str)] = &[
    (
        DialogueAct::Factual,
        "mentioned(scale_factor) && hasScale",
        "The scale factor is {scale} because {derivation}.",
    ),
    (DialogueAct::Factual, "answerable && hasFigure", "The {attr} of the {figure} prism is {value}."),
    (
        DialogueAct::Factual,
        "mentioned(scale_factor) && !hasScale",
        "I cannot find the scale factor yet. I need the same side on both prisms.",
    ),
    (DialogueAct::Factual, "asserted", "Okay, I wrote that down."),
    (
        DialogueAct::Probing,
        "mentioned(scale_factor) && hasScale",
        "I divided the right side by the matching left side: {derivation}.",
    ),
    (
        DialogueAct::Probing,
        "answerable && hasFigure",
        "I used the scale factor to get the {attr} of the {figure} prism, so it is {value}.",
    ),
    (
        DialogueAct::Probing,
        "hasScale",
        "Each side of the right prism is {scale} times the left one, since {derivation}.",
    ),
    (DialogueAct::Expository, "asserted", "Okay, I wrote that down."),
    (DialogueAct::Expository, "true", "Okay, I am looking at it."),
];

impl Default for TemplateSet {
    fn default() -> Self {
        let specs = DEFAULT_TEMPLATES
            .iter()
            .map(|(act, guard, pattern)| TemplateSpec {
                act: *act,
                guard: guard.to_string(),
                pattern: pattern.to_string(),
            })
            .collect();
        Self::new(specs).expect("shipped templates validate")
    }
}

impl TemplateSet {
    pub fn new(specs: Vec<TemplateSpec>) -> Result<Self, DialogueError> {
        let templates = specs.into_iter().map(ResponseTemplate::new).collect::<Result<_, _>>()?;
        Ok(Self { templates })
    }

    pub fn from_json(s: &str) -> Result<Self, DialogueError> {
        let specs: Vec<TemplateSpec> =
            serde_json::from_str(s).map_err(|e| DialogueError::Template(e.to_string()))?;
        Self::new(specs)
    }

    pub fn to_json(&self) -> String {
        let specs: Vec<&TemplateSpec> = self.templates.iter().map(|t| &t.spec).collect();
        serde_json::to_string_pretty(&specs).expect("templates serialize")
    }

    pub fn templates(&self) -> &[ResponseTemplate] {
        &self.templates
    }

    pub fn count_for(&self, act: DialogueAct) -> usize {
        self.templates.iter().filter(|t| t.spec.act == act).count()
    }

    /// First template for `act` whose guard holds, filled from the context.
    /// `None` means no template applies.
    pub fn render(&self, act: DialogueAct, ctx: &GuardContext<'_>) -> Option<String> {
        self.templates
            .iter()
            .filter(|t| t.spec.act == act && t.guard.eval(ctx))
            .find_map(|t| t.fill(ctx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::extract_entities;
    use crate::nlu::normalize;
    use crate::scenario::ScenarioSeed;

    fn ctx<'a>(ann: &'a EntityAnnotation, state: &'a ScenarioState) -> GuardContext<'a> {
        GuardContext { annotation: ann, state, figure: None, focus: ann.attribute_set().first().copied(), asserted: false }
    }

    #[test]
    fn parses_and_prints() {
        let g = Guard::parse("known(width, left) && !(hasScale || mentioned(volume))").unwrap();
        assert_eq!(g.to_string(), "(known(width, left) && !((hasScale || mentioned(volume))))");
        for bad in ["", "hasScale &&", "known(width)", "mentioned(colour)", "a & b", "(true", "true false", "x$"] {
            assert!(Guard::parse(bad).is_err(), "{bad:?} should not parse");
        }
    }

    #[test]
    fn precedence_and_binds_tighter() {
        let g = Guard::parse("false && false || true").unwrap();
        let ann = extract_entities("");
        let state = ScenarioState::new();
        assert!(g.eval(&ctx(&ann, &state)));
    }

    #[test]
    fn guaranteed_atoms() {
        let g = Guard::parse("hasScale && (answerable || answerable && hasFigure)").unwrap();
        let atoms = g.guaranteed();
        assert!(atoms.contains(&Atom::HasScale) && atoms.contains(&Atom::Answerable));
        assert!(!atoms.contains(&Atom::HasFigure));
        assert!(Guard::parse("!hasScale").unwrap().guaranteed().is_empty());
    }

    #[test]
    fn static_slot_analysis_rejects_unfillable_slots() {
        let mk = |guard: &str, pattern: &str| {
            ResponseTemplate::new(TemplateSpec {
                act: DialogueAct::Factual,
                guard: guard.into(),
                pattern: pattern.into(),
            })
        };
        assert!(mk("true", "k = {scale}").is_err());
        assert!(mk("hasScale || asserted", "k = {scale}").is_err());
        assert!(mk("hasScale", "k = {scale}, {derivation}").is_ok());
        assert!(mk("answerable", "the {attr} is {value}").is_ok());
        assert!(mk("answerable", "the {attr} of the {figure}").is_err());
        assert!(mk("true", "{colour}").is_err());
        assert!(mk("true", "open { brace").is_err());
    }

    #[test]
    fn shipped_library_shape() {
        let set = TemplateSet::default();
        for act in [DialogueAct::Probing, DialogueAct::Factual, DialogueAct::Expository] {
            assert!(set.count_for(act) >= 2, "{act}");
        }
        assert_eq!(set.count_for(DialogueAct::Other), 0);
        let round = TemplateSet::from_json(&set.to_json()).unwrap();
        assert_eq!(round.to_json(), set.to_json());
    }

    #[test]
    fn scale_factor_reply() {
        let set = TemplateSet::default();
        let state = ScenarioSeed::default().build().unwrap();
        let ann = extract_entities(&normalize("What is the scale factor?"));
        let reply = set.render(DialogueAct::Factual, &ctx(&ann, &state)).unwrap();
        assert_eq!(reply, "The scale factor is 2 because 10 / 5 = 2.");
        let probing = set.render(DialogueAct::Probing, &ctx(&ann, &state)).unwrap();
        assert!(probing.contains("10 / 5"));
    }

    #[test]
    fn expository_fallback_and_other() {
        let set = TemplateSet::default();
        let state = ScenarioState::new();
        let ann = extract_entities(&normalize("Look at this diagram"));
        assert_eq!(set.render(DialogueAct::Expository, &ctx(&ann, &state)).unwrap(), "Okay, I am looking at it.");
        assert_eq!(set.render(DialogueAct::Other, &ctx(&ann, &state)), None);
        assert_eq!(set.render(DialogueAct::Probing, &ctx(&ann, &state)), None);
    }

    #[test]
    fn answerable_uses_figure_and_focus() {
        let set = TemplateSet::default();
        let state = ScenarioSeed::default().build().unwrap();
        let ann = extract_entities(&normalize("what is the volume of the right prism ?"));
        let mut c = ctx(&ann, &state);
        c.figure = Some(FigureRef::Right);
        assert_eq!(set.render(DialogueAct::Factual, &c).unwrap(), "The volume of the right prism is 480.");
    }
}
