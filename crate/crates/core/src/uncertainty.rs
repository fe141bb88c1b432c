//! Dropout-ensemble uncertainty, the escalation gate and calibration reports.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nlu::{fnv1a, ActModel, ActProbs, DialogueAct, DropoutMask, FeatureVector, NluError, NUM_ACTS};

const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum UncertaintyError {
    #[error("not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("invalid uncertainty config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyConfig {
    pub sample_count: usize,
    pub dropout_rate: f64,
    /// Escalate when predictive entropy (nats) exceeds this.
    pub tau_act: f64,
    /// Escalate when the weakest entity confidence falls below this.
    pub tau_entity: f64,
    pub seed: u64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self { sample_count: 30, dropout_rate: 0.2, tau_act: 0.8, tau_entity: 0.6, seed: 2022 }
    }
}

impl UncertaintyConfig {
    pub fn validate(&self) -> Result<(), UncertaintyError> {
        let bad = |m: &str| Err(UncertaintyError::InvalidConfig(m.to_string()));
        if self.sample_count == 0 {
            return bad("sample_count must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.tau_act >= 0.0 && self.tau_act.is_finite()) {
            return bad("tau_act must be a finite non-negative number of nats");
        }
        if !(0.0..=1.0).contains(&self.tau_entity) {
            return bad("tau_entity must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64, UncertaintyError> {
    if p.is_empty() {
        return Err(UncertaintyError::NotADistribution("empty vector".into()));
    }
    if let Some(x) = p.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(UncertaintyError::NotADistribution(format!("entry {x} is not a probability")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(UncertaintyError::NotADistribution(format!("sums to {total}")));
    }
    let h = -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
    Ok(h.max(0.0))
}

/// Ensemble summary for one utterance: the per-class bars shown to the supervisor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActDistribution {
    pub mean_probs: ActProbs,
    pub predictive_entropy: f64,
    pub sample_count: usize,
    pub per_sample_argmax_agreement: f64,
}

impl ActDistribution {
    pub fn act(&self) -> DialogueAct {
        DialogueAct::argmax(&self.mean_probs)
    }

    pub fn prob(&self, act: DialogueAct) -> f64 {
        self.mean_probs[act.index()]
    }
}

fn stream_seed(base: u64, fv: &FeatureVector) -> u64 {
    let mut bytes = Vec::with_capacity(8 + fv.len() * 4);
    bytes.extend_from_slice(&base.to_le_bytes());
    for i in &fv.indices {
        bytes.extend_from_slice(&i.to_le_bytes());
    }
    fnv1a(&bytes)
}

/// Runs `sample_count` independently masked passes and summarizes them.
///
/// The mask stream is seeded from the config seed and the feature ids, so the
/// result is a pure function of (model, features, config).
pub fn ensemble_classify(
    model: &dyn ActModel,
    fv: &FeatureVector,
    cfg: &UncertaintyConfig,
) -> Result<ActDistribution, NluError> {
    let samples = cfg.sample_count.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, fv));
    let mut passes: Vec<ActProbs> = Vec::with_capacity(samples);
    for _ in 0..samples {
        let probs = if cfg.dropout_rate > 0.0 {
            let mask = DropoutMask::sample(&mut rng, fv.len(), cfg.dropout_rate);
            model.act_probs(fv, Some(&mask))?
        } else {
            model.act_probs(fv, None)?
        };
        passes.push(probs);
    }
    let mut mean = [0.0; NUM_ACTS];
    for p in &passes {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= samples as f64;
    }
    let winner = DialogueAct::argmax(&mean);
    let agree = passes.iter().filter(|p| DialogueAct::argmax(&p[..]) == winner).count();
    let predictive_entropy = entropy(&mean).unwrap_or_else(|_| (NUM_ACTS as f64).ln());
    Ok(ActDistribution {
        mean_probs: mean,
        predictive_entropy,
        sample_count: samples,
        per_sample_argmax_agreement: agree as f64 / samples as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Proceed,
    Escalate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    ActUncertainty,
    EntityUncertainty,
    NoTemplate,
    ScenarioConflict,
    None,
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trigger::ActUncertainty => "dialogue-act uncertainty",
            Trigger::EntityUncertainty => "entity uncertainty",
            Trigger::NoTemplate => "no response template",
            Trigger::ScenarioConflict => "scenario conflict",
            Trigger::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateDiagnostics {
    pub predictive_entropy: f64,
    pub argmax_agreement: f64,
    pub entity_confidence: f64,
    pub template_available: bool,
    pub scenario_consistent: bool,
    pub tau_act: f64,
    pub tau_entity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub verdict: Verdict,
    pub triggered_by: Trigger,
    pub diagnostics: GateDiagnostics,
}

impl GateDecision {
    pub fn escalates(&self) -> bool {
        self.verdict == Verdict::Escalate
    }
}

/// Proceed/escalate decision. Checks run in a fixed order (act, entity,
/// template, scenario) and the first failure names the trigger. NaN scores
/// count as failures.
pub fn gate(
    act: &ActDistribution,
    entity_conf: f64,
    template_available: bool,
    scenario_consistent: bool,
    cfg: &UncertaintyConfig,
) -> GateDecision {
    let triggered_by = if !(act.predictive_entropy <= cfg.tau_act) {
        Trigger::ActUncertainty
    } else if !(entity_conf >= cfg.tau_entity) {
        Trigger::EntityUncertainty
    } else if !template_available {
        Trigger::NoTemplate
    } else if !scenario_consistent {
        Trigger::ScenarioConflict
    } else {
        Trigger::None
    };
    GateDecision {
        verdict: if triggered_by == Trigger::None { Verdict::Proceed } else { Verdict::Escalate },
        triggered_by,
        diagnostics: GateDiagnostics {
            predictive_entropy: act.predictive_entropy,
            argmax_agreement: act.per_sample_argmax_agreement,
            entity_confidence: entity_conf,
            template_available,
            scenario_consistent,
            tau_act: cfg.tau_act,
            tau_entity: cfg.tau_entity,
        },
    }
}

pub const CALIBRATION_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub samples: usize,
    pub ece: f64,
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub bins: Vec<CalibrationBin>,
}

/// Expected calibration error over ten equal-width bins of max-probability
/// confidence, plus accuracy and mean predictive entropy.
pub fn calibration_report(pairs: &[(ActProbs, DialogueAct)]) -> Result<CalibrationReport, UncertaintyError> {
    if pairs.is_empty() {
        return Err(UncertaintyError::EmptyEvaluation);
    }
    let mut conf_sum = [0.0; CALIBRATION_BINS];
    let mut correct = [0usize; CALIBRATION_BINS];
    let mut count = [0usize; CALIBRATION_BINS];
    let mut entropy_sum = 0.0;
    for (probs, truth) in pairs {
        entropy_sum += entropy(probs)?;
        let predicted = DialogueAct::argmax(probs);
        let confidence = probs[predicted.index()];
        let bin = ((confidence * CALIBRATION_BINS as f64) as usize).min(CALIBRATION_BINS - 1);
        conf_sum[bin] += confidence;
        count[bin] += 1;
        if predicted == *truth {
            correct[bin] += 1;
        }
    }
    let n = pairs.len() as f64;
    let mut ece = 0.0;
    let bins = (0..CALIBRATION_BINS)
        .map(|b| {
            let (mean_confidence, accuracy) = if count[b] == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum[b] / count[b] as f64, correct[b] as f64 / count[b] as f64)
            };
            ece += count[b] as f64 / n * (accuracy - mean_confidence).abs();
            CalibrationBin {
                lower: b as f64 / CALIBRATION_BINS as f64,
                upper: (b + 1) as f64 / CALIBRATION_BINS as f64,
                count: count[b],
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    Ok(CalibrationReport {
        samples: pairs.len(),
        ece: ece.clamp(0.0, 1.0),
        accuracy: correct.iter().sum::<usize>() as f64 / n,
        mean_entropy: entropy_sum / n,
        bins,
    })
}

impl CalibrationReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "samples {}  accuracy {:.4}  ECE {:.4}  mean entropy {:.4} nats\n",
            self.samples, self.accuracy, self.ece, self.mean_entropy
        );
        out.push_str(&format!("{:<11} {:>6} {:>10} {:>9}\n", "bin", "count", "confidence", "accuracy"));
        for b in &self.bins {
            out.push_str(&format!(
                "{:<11} {:>6} {:>10.4} {:>9.4}\n",
                format!("[{:.1},{:.1})", b.lower, b.upper),
                b.count,
                b.mean_confidence,
                b.accuracy
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(entropy: f64) -> ActDistribution {
        ActDistribution {
            mean_probs: [0.25; 4],
            predictive_entropy: entropy,
            sample_count: 1,
            per_sample_argmax_agreement: 1.0,
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_non_distributions() {
        assert!(matches!(entropy(&[0.5, 0.6]), Err(UncertaintyError::NotADistribution(_))));
        assert!(entropy(&[-0.1, 1.1]).is_err());
        assert!(entropy(&[]).is_err());
        assert!(entropy(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn gate_examples() {
        let cfg = UncertaintyConfig::default();
        let d = gate(&dist(1.3), 1.0, true, true, &cfg);
        assert_eq!((d.verdict, d.triggered_by), (Verdict::Escalate, Trigger::ActUncertainty));
        let d = gate(&dist(0.1), 0.95, true, true, &cfg);
        assert_eq!((d.verdict, d.triggered_by), (Verdict::Proceed, Trigger::None));
        let d = gate(&dist(0.1), 0.95, false, true, &cfg);
        assert_eq!((d.verdict, d.triggered_by), (Verdict::Escalate, Trigger::NoTemplate));
        let d = gate(&dist(0.1), 0.2, false, false, &cfg);
        assert_eq!(d.triggered_by, Trigger::EntityUncertainty);
        let d = gate(&dist(0.1), 0.9, true, false, &cfg);
        assert_eq!(d.triggered_by, Trigger::ScenarioConflict);
    }

    #[test]
    fn calibration_examples() {
        let perfect: Vec<_> = DialogueAct::ALL
            .iter()
            .map(|&a| {
                let mut p = [0.0; 4];
                p[a.index()] = 1.0;
                (p, a)
            })
            .collect();
        let r = calibration_report(&perfect).unwrap();
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.accuracy, 1.0);

        let uniform: Vec<_> = DialogueAct::ALL.iter().map(|&a| ([0.25; 4], a)).collect();
        let r = calibration_report(&uniform).unwrap();
        assert!(r.ece.abs() < 1e-12);
        assert_eq!(r.accuracy, 0.25);
        assert_eq!(r.bins[2].count, 4);

        assert_eq!(calibration_report(&[]), Err(UncertaintyError::EmptyEvaluation));
    }

    #[test]
    fn config_validation() {
        assert!(UncertaintyConfig::default().validate().is_ok());
        assert!(UncertaintyConfig { sample_count: 0, ..Default::default() }.validate().is_err());
        assert!(UncertaintyConfig { tau_entity: 1.5, ..Default::default() }.validate().is_err());
        assert!(UncertaintyConfig { dropout_rate: -0.1, ..Default::default() }.validate().is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_map(|w| {
            let total: f64 = w.iter().sum();
            if total == 0.0 {
                let mut one = vec![0.0; w.len()];
                one[0] = 1.0;
                one
            } else {
                w.iter().map(|x| x / total).collect()
            }
        })
    }

    proptest! {
        #[test]
        fn entropy_is_bounded(p in (1usize..8).prop_flat_map(simplex)) {
            let h = entropy(&p).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn gate_is_total(h in proptest::num::f64::ANY, e in proptest::num::f64::ANY, t: bool, s: bool) {
            let d = gate(&dist(h), e, t, s, &UncertaintyConfig::default());
            prop_assert_eq!(d.verdict == Verdict::Escalate, d.triggered_by != Trigger::None);
        }
    }
}
