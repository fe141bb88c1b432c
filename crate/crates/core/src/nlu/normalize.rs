//! Text normalization shared by every analysis stage.

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Word,
    Digit,
    Space,
    Punct,
}

fn class_of(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if c.is_ascii_digit() {
        Class::Digit
    } else if c.is_alphanumeric() {
        Class::Word
    } else {
        Class::Punct
    }
}

fn vulgar_fraction(c: char) -> Option<&'static str> {
    Some(match c {
        '½' => "1/2",
        '⅓' => "1/3",
        '⅔' => "2/3",
        '¼' => "1/4",
        '¾' => "3/4",
        '⅕' => "1/5",
        '⅛' => "1/8",
        _ => return None,
    })
}

/// Lowercases, splits punctuation and letter/digit runs into separate tokens
/// and collapses whitespace.
///
/// `.` and `/` between two digits stay inside the number (`2.5`, `1/2`), and an
/// apostrophe between two letters stays inside the word (`don't`). Vulgar
/// fraction glyphs are spelled out as `n/d`. The output is a fixed point:
/// `normalize(&normalize(x)) == normalize(x)`.
pub fn normalize(text: &str) -> String {
    let mut expanded = String::with_capacity(text.len());
    for c in text.chars() {
        match vulgar_fraction(c) {
            Some(frac) => {
                expanded.push(' ');
                expanded.push_str(frac);
                expanded.push(' ');
            }
            None => expanded.extend(c.to_lowercase()),
        }
    }

    let chars: Vec<char> = expanded.chars().collect();
    let mut tokens: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut current_class = Class::Space;

    let flush = |tokens: &mut Vec<String>, current: &mut String| {
        if !current.is_empty() {
            tokens.push(std::mem::take(current));
        }
    };

    for (i, &c) in chars.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| chars[j]);
        let next = chars.get(i + 1).copied();
        let mut class = class_of(c);
        // Glue characters that belong to the surrounding token.
        if class == Class::Punct {
            let between = |want: Class| {
                prev.map(class_of) == Some(want) && next.map(class_of) == Some(want)
            };
            if (c == '.' || c == '/') && between(Class::Digit) && current_class == Class::Digit {
                current.push(c);
                continue;
            }
            if (c == '\'' || c == '’') && between(Class::Word) && current_class == Class::Word {
                current.push('\'');
                continue;
            }
        }
        match class {
            Class::Space => {
                flush(&mut tokens, &mut current);
            }
            Class::Punct => {
                flush(&mut tokens, &mut current);
                tokens.push(c.to_string());
                class = Class::Space;
            }
            Class::Word | Class::Digit => {
                if class != current_class {
                    flush(&mut tokens, &mut current);
                }
                current.push(c);
            }
        }
        current_class = class;
    }
    flush(&mut tokens, &mut current);
    tokens.join(" ")
}

/// Splits normalized text into tokens together with their byte offsets.
pub fn tokens_with_spans(normalized: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for tok in normalized.split(' ') {
        if !tok.is_empty() {
            out.push((offset, tok));
        }
        offset += tok.len() + 1;
    }
    out
}
