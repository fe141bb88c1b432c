//! The `iqa` command line. Every report is printed as a table followed by
//! one line of compact JSON, so the last stdout line is machine readable.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use iqa_core::config::Config;
use iqa_core::corpus::{
    cross_validate, cross_validate_relations, generate_relation_corpus, generate_synthetic, label_corpus,
    shipped_labeling_functions, CorpusError, CorpusRecord, CvReport, RelationCvReport,
};
use iqa_core::dialogue::{Engine, TemplateSet};
use iqa_core::entity::{RelationRecord, RelationScorer, RelationTrainConfig};
use iqa_core::nlu::{ActClassifier, ActModel, DialogueAct, TrainConfig};
use iqa_core::scenario::ScenarioSeed;
use iqa_core::shipped::{self, FixtureReport, RELATION_SEED, RELATION_SENTENCES};
use iqa_core::uncertainty::{calibration_report, ensemble_classify, UncertaintyConfig};
use iqa_service::http::{serve, AppState};
use iqa_service::replay::{log_config, verify_log, VerifyReport};
use iqa_service::survey::SurveyDefinition;
use iqa_service::{Hub, HubOptions};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("file not found: {0}")]
    Missing(PathBuf),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Missing(_) => 2,
            CliError::Invalid(_) => 3,
            CliError::Failed(_) | CliError::Io(_) => 1,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Missing(_) => "missing_file",
            CliError::Invalid(_) => "validation",
            CliError::Failed(_) => "check_failed",
            CliError::Io(_) => "io",
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self.code(), "message": self.to_string() }).to_string()
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        invalid(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "iqa", version, about = "Simulated-student dialogue system")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CorpusKind {
    Acts,
    Relations,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus as JSON lines.
    GenCorpus {
        #[arg(long, default_value_t = shipped::CORPUS_SEED)]
        seed: u64,
        /// Utterances per act, or sentences for the relation corpus.
        #[arg(long, default_value_t = shipped::CORPUS_PER_CLASS)]
        n: usize,
        #[arg(long, value_enum, default_value_t = CorpusKind::Acts)]
        kind: CorpusKind,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the act classifier and the relation scorer.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Relation corpus; the synthetic one is generated when omitted.
        #[arg(long)]
        relations: Option<PathBuf>,
        /// Output directory for classifier.bin and scorer.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = TrainConfig::default().seed)]
        seed: u64,
    },
    /// Stratified cross-validation of the act classifier (and optionally the relation scorer).
    Cv {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        relations: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Fold assignment seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Calibration of the ensemble on a labelled corpus.
    Calibrate {
        #[arg(long)]
        corpus: PathBuf,
        /// Trained classifier; the shipped one when omitted.
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Re-execute a session log and check it reproduces exactly.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        models: ModelArgs,
    },
    /// Run the act and relation fixture suites.
    EvalFixtures {
        #[command(flatten)]
        models: ModelArgs,
    },
}

#[derive(Debug, Default, clap::Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long)]
    pub scorer: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Default, clap::Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    #[command(flatten)]
    pub models: ModelArgs,
    /// Scenario seed JSON used for new sessions.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub survey: Option<PathBuf>,
    #[arg(long)]
    pub tau_act: Option<f64>,
    #[arg(long)]
    pub tau_entity: Option<f64>,
    #[arg(long)]
    pub token: Option<String>,
    /// Ensemble seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { seed, n, kind, out } => gen_corpus(seed, n, kind, out.as_deref()),
        Command::Train { corpus, relations, out, seed } => train(&corpus, relations.as_deref(), &out, seed),
        Command::Cv { corpus, relations, k, seed } => cv(&corpus, relations.as_deref(), k, seed),
        Command::Calibrate { corpus, classifier, samples, dropout, seed } => {
            let mut cfg = UncertaintyConfig::default();
            cfg.sample_count = samples.unwrap_or(cfg.sample_count);
            cfg.dropout_rate = dropout.unwrap_or(cfg.dropout_rate);
            cfg.seed = seed.unwrap_or(cfg.seed);
            calibrate(&corpus, classifier.as_deref(), &cfg)
        }
        Command::Serve(args) => serve_cmd(args),
        Command::Replay { log, models } => replay(&log, &models),
        Command::EvalFixtures { models } => eval_fixtures(&models),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => CliError::Missing(path.to_path_buf()),
        _ => CliError::Io(format!("{}: {e}", path.display())),
    })
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).map_err(|_| invalid(format!("{}: not UTF-8", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit(table: &str, report: &impl Serialize) {
    let mut out = io::stdout().lock();
    let _ = write!(out, "{table}");
    if !table.ends_with('\n') {
        let _ = writeln!(out);
    }
    let _ = writeln!(out, "{}", serde_json::to_string(report).expect("report serializes"));
}

fn gen_corpus(seed: u64, n: usize, kind: CorpusKind, out: Option<&Path>) -> Result<()> {
    let (text, count) = match kind {
        CorpusKind::Acts => {
            let records: Vec<CorpusRecord> = generate_synthetic(seed, n)?
                .into_iter()
                .map(|(text, label)| CorpusRecord { text, label: Some(label) })
                .collect();
            (CorpusRecord::to_jsonl(&records), records.len())
        }
        CorpusKind::Relations => {
            let records = generate_relation_corpus(seed, n)?;
            (RelationRecord::to_jsonl(&records), records.len())
        }
    };
    match out {
        Some(path) => {
            write(path, text.as_bytes())?;
            let report = json!({ "kind": format!("{kind:?}").to_lowercase(), "seed": seed, "records": count, "out": path });
            emit(&format!("wrote {count} records to {}", path.display()), &report);
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct LabelledCorpus {
    records: usize,
    gold: usize,
    weak_labelled: usize,
    dropped: usize,
}

/// Gold labels are kept; unlabelled lines go through the labeling functions.
fn load_act_corpus(path: &Path) -> Result<(Vec<(String, DialogueAct)>, LabelledCorpus)> {
    let records = CorpusRecord::parse_jsonl(&read_text(path)?)?;
    let mut corpus = CorpusRecord::labelled(&records);
    let gold = corpus.len();
    let unlabelled: Vec<String> = records.iter().filter(|r| r.label.is_none()).map(|r| r.text.clone()).collect();
    let mut weak = 0;
    if !unlabelled.is_empty() {
        let (labelled, _) = label_corpus(&unlabelled, &shipped_labeling_functions())?;
        weak = labelled.len();
        corpus.extend(labelled);
    }
    if corpus.is_empty() {
        return Err(invalid(format!("{}: no usable utterances", path.display())));
    }
    let summary = LabelledCorpus { records: records.len(), gold, weak_labelled: weak, dropped: records.len() - gold - weak };
    Ok((corpus, summary))
}

fn load_relations(path: Option<&Path>) -> Result<Vec<RelationRecord>> {
    match path {
        Some(p) => RelationRecord::parse_jsonl(&read_text(p)?).map_err(invalid),
        None => generate_relation_corpus(RELATION_SEED, RELATION_SENTENCES).map_err(CliError::from),
    }
}

fn train(corpus: &Path, relations: Option<&Path>, out: &Path, seed: u64) -> Result<()> {
    let (acts, summary) = load_act_corpus(corpus)?;
    let rels = load_relations(relations)?;
    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    let clf = ActClassifier::train(&acts, &cfg).map_err(invalid)?;
    let scorer = RelationScorer::train(&rels, &RelationTrainConfig::default()).map_err(invalid)?;
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let clf_path = out.join("classifier.bin");
    let scorer_path = out.join("scorer.json");
    write(&clf_path, &clf.to_bytes().map_err(|e| CliError::Io(e.to_string()))?)?;
    write(&scorer_path, scorer.to_json().as_bytes())?;
    let report = json!({
        "corpus": summary,
        "relation_records": rels.len(),
        "seed": seed,
        "corpus_hash": clf.meta().corpus_hash,
        "classifier": clf_path,
        "scorer": scorer_path,
    });
    let table = format!(
        "trained on {} utterances and {} relation pairs (seed {seed})\nclassifier {}\nscorer     {}\n",
        acts.len(),
        rels.len(),
        clf_path.display(),
        scorer_path.display()
    );
    emit(&table, &report);
    Ok(())
}

#[derive(Serialize)]
struct CvOutput {
    corpus: LabelledCorpus,
    acts: CvReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    relations: Option<RelationCvReport>,
}

fn cv(corpus: &Path, relations: Option<&Path>, k: usize, seed: u64) -> Result<()> {
    let (acts, summary) = load_act_corpus(corpus)?;
    let report = cross_validate(&acts, k, seed, &TrainConfig::default())?;
    let rel = match relations {
        Some(p) => Some(cross_validate_relations(&load_relations(Some(p))?, k, seed, &RelationTrainConfig::default())?),
        None => None,
    };
    let mut table = report.to_table();
    if let Some(r) = &rel {
        table.push_str(&r.to_table());
    }
    emit(&table, &CvOutput { corpus: summary, acts: report, relations: rel });
    Ok(())
}

fn load_classifier(path: Option<&Path>) -> Result<Arc<ActClassifier>> {
    match path {
        Some(p) => Ok(Arc::new(ActClassifier::from_bytes(&read(p)?).map_err(invalid)?)),
        None => Ok(shipped::shipped_classifier()),
    }
}

fn calibrate(corpus: &Path, classifier: Option<&Path>, cfg: &UncertaintyConfig) -> Result<()> {
    cfg.validate().map_err(invalid)?;
    let (acts, _) = load_act_corpus(corpus)?;
    let clf = load_classifier(classifier)?;
    let pairs = acts
        .iter()
        .map(|(text, truth)| {
            let fv = clf.featurizer().featurize(text);
            ensemble_classify(clf.as_ref(), &fv, cfg).map(|d| (d.mean_probs, *truth))
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(invalid)?;
    let report = calibration_report(&pairs).map_err(invalid)?;
    emit(&report.to_table(), &report);
    Ok(())
}

/// Builds an engine from explicit files, falling back to the shipped models.
pub fn load_engine(models: &ModelArgs) -> Result<Engine> {
    let classifier: Arc<dyn ActModel> = load_classifier(models.classifier.as_deref())?;
    let scorer = match &models.scorer {
        Some(p) => Arc::new(RelationScorer::from_json(&read_text(p)?).map_err(invalid)?),
        None => shipped::shipped_scorer(),
    };
    let templates = match &models.templates {
        Some(p) => TemplateSet::from_json(&read_text(p)?).map_err(invalid)?,
        None => TemplateSet::default(),
    };
    Ok(Engine { classifier, scorer, templates: Arc::new(templates) })
}

fn resolve_config(args: &ServeArgs) -> Result<Config> {
    let mut cfg = match &args.config {
        Some(p) => Config::from_json(&read_text(p)?).map_err(invalid)?,
        None => Config::default(),
    };
    let p = &mut cfg.paths;
    p.classifier = args.models.classifier.clone().or(p.classifier.take());
    p.scorer = args.models.scorer.clone().or(p.scorer.take());
    p.templates = args.models.templates.clone().or(p.templates.take());
    p.scenario = args.scenario.clone().or(p.scenario.take());
    p.survey = args.survey.clone().or(p.survey.take());
    if let Some(d) = &args.log_dir {
        p.log_dir = d.clone();
    }
    if let Some(b) = &args.bind {
        cfg.server.bind = b.clone();
    }
    if let Some(port) = args.port {
        cfg.server.port = port;
    }
    if let Some(t) = &args.token {
        cfg.server.supervisor_token = t.clone();
    }
    if let Some(t) = args.tau_act {
        cfg.thresholds.tau_act = t;
    }
    if let Some(t) = args.tau_entity {
        cfg.thresholds.tau_entity = t;
    }
    if let Some(s) = args.seed {
        cfg.ensemble.seed = s;
    }
    cfg.validate().map_err(invalid)?;
    Ok(cfg)
}

fn serve_cmd(args: ServeArgs) -> Result<()> {
    let _ = tracing_subscriber::fmt().with_writer(io::stderr).try_init();
    let cfg = resolve_config(&args)?;
    let models = ModelArgs {
        classifier: cfg.paths.classifier.clone(),
        scorer: cfg.paths.scorer.clone(),
        templates: cfg.paths.templates.clone(),
    };
    let engine = load_engine(&models)?;
    let seed = match &cfg.paths.scenario {
        Some(p) => ScenarioSeed::from_json(&read_text(p)?).map_err(invalid)?,
        None => ScenarioSeed::default(),
    };
    let survey = match &cfg.paths.survey {
        Some(p) => SurveyDefinition::from_json(&read_text(p)?).map_err(invalid)?,
        None => SurveyDefinition::default(),
    };
    let log_dir = (!cfg.paths.log_dir.as_os_str().is_empty()).then(|| cfg.paths.log_dir.clone());
    let addr = format!("{}:{}", cfg.server.bind, cfg.server.port);
    let token = cfg.server.supervisor_token.clone();
    let (hub, warnings) =
        Hub::open(engine, HubOptions { config: cfg, seed, survey, log_dir }).map_err(|e| CliError::Io(e.to_string()))?;
    for w in &warnings {
        eprintln!("{}", json!({ "warning": w }));
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| CliError::Io(format!("{addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        println!("listening on http://{local}");
        let _ = io::stdout().flush();
        let state = AppState { hub: Arc::new(hub), token };
        serve(listener, state, shutdown_signal()).await.map_err(|e| CliError::Io(e.to_string()))
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn replay_table(report: &VerifyReport) -> String {
    let mut out = format!("session {}  {} records  phase {}\n", report.session, report.records, report.transcript.phase);
    for t in &report.transcript.turns {
        out.push_str(&format!("{:>3} {:<22} {}\n", t.id, format!("{:?}", t.speaker), t.text));
    }
    for w in &report.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    match &report.divergence {
        None => out.push_str("replay: identical\n"),
        Some(d) => out.push_str(&format!("replay: diverges at line {} ({})\n", d.line, d.note)),
    }
    out
}

fn replay(log: &Path, overrides: &ModelArgs) -> Result<()> {
    let text = read_text(log)?;
    let cfg = log_config(log, &text).map_err(invalid)?;
    let models = ModelArgs {
        classifier: overrides.classifier.clone().or(cfg.paths.classifier),
        scorer: overrides.scorer.clone().or(cfg.paths.scorer),
        templates: overrides.templates.clone().or(cfg.paths.templates),
    };
    let report = verify_log(load_engine(&models)?, log, &text).map_err(invalid)?;
    emit(&replay_table(&report), &report);
    match &report.divergence {
        None => Ok(()),
        Some(d) => Err(CliError::Failed(format!("log diverges from replay at line {}: {}", d.line, d.note))),
    }
}

#[derive(Serialize)]
struct FixtureOutput {
    acts: FixtureReport,
    relations: FixtureReport,
}

fn eval_fixtures(models: &ModelArgs) -> Result<()> {
    let engine = load_engine(models)?;
    let acts = shipped::eval_act_fixtures(engine.classifier.as_ref(), &UncertaintyConfig::default());
    let relations = shipped::eval_relation_fixtures(&engine.scorer);
    emit(&format!("{}{}", acts.to_table(), relations.to_table()), &FixtureOutput { acts: acts.clone(), relations: relations.clone() });
    let failed = (acts.total - acts.passed) + (relations.total - relations.passed);
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} fixture(s) mismatched")));
    }
    Ok(())
}
