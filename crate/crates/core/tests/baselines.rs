//! Measured baselines for the shipped seeds. Each value was computed once and
//! frozen; tolerances are the ones the regression contract allows.

use std::collections::BTreeSet;

use iqa_core::corpus::{
    cross_validate, generate_synthetic, label_corpus, production_disjointness, shipped_labeling_functions,
    stratified_folds,
};
use iqa_core::nlu::{ActClassifier, ActProbs, DialogueAct, TrainConfig};
use iqa_core::shipped::{shipped_classifier, shipped_corpus, CORPUS_SEED};
use iqa_core::uncertainty::{calibration_report, ensemble_classify, gate, UncertaintyConfig, Verdict};

const LF_COVERAGE: f64 = 0.927;
const HELD_OUT_ECE: f64 = 0.0906;
const CV_MACRO_F1: f64 = 0.995;

/// Straight-line ECE: bucket by floor(10 * confidence), clamp 1.0 into the top bin.
fn reference_ece(pairs: &[(ActProbs, DialogueAct)]) -> f64 {
    let mut sum_conf = [0.0; 10];
    let mut hits = [0.0; 10];
    let mut count = [0usize; 10];
    for (p, truth) in pairs {
        let (best, conf) = p.iter().enumerate().fold((0, -1.0), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        let b = ((conf * 10.0) as usize).min(9);
        count[b] += 1;
        sum_conf[b] += conf;
        hits[b] += (best == truth.index()) as u8 as f64;
    }
    (0..10)
        .filter(|&b| count[b] > 0)
        .map(|b| (sum_conf[b] - hits[b]).abs() / pairs.len() as f64)
        .sum()
}

#[test]
fn labeling_function_coverage() {
    let corpus = generate_synthetic(CORPUS_SEED, 100).unwrap();
    let texts: Vec<String> = corpus.iter().map(|(t, _)| t.clone()).collect();
    let (labelled, report) = label_corpus(&texts, &shipped_labeling_functions()).unwrap();
    assert!(report.coverage >= 0.9, "coverage {}", report.coverage);
    assert!((report.coverage - LF_COVERAGE).abs() <= 0.05, "coverage {}", report.coverage);
    assert_eq!(report.labelled, labelled.len());
    assert_eq!(report.labelled + report.abstained + report.conflicts, report.total);
    let again = label_corpus(&texts, &shipped_labeling_functions()).unwrap().0;
    assert_eq!(again, labelled);
}

#[test]
fn generator_is_not_circular() {
    assert!(production_disjointness(&shipped_labeling_functions()) >= 0.3);
}

#[test]
fn held_out_calibration() {
    let corpus = shipped_corpus();
    let labels: Vec<usize> = corpus.iter().map(|(_, a)| a.index()).collect();
    let folds = stratified_folds(&labels, 5, CORPUS_SEED);
    let train: Vec<_> = corpus.iter().zip(&folds).filter(|(_, f)| **f != 0).map(|(x, _)| x.clone()).collect();
    let clf = ActClassifier::train(&train, &TrainConfig::default()).unwrap();
    let cfg = UncertaintyConfig::default();
    let pairs: Vec<(ActProbs, DialogueAct)> = corpus
        .iter()
        .zip(&folds)
        .filter(|(_, f)| **f == 0)
        .map(|((t, a), _)| (ensemble_classify(&clf, &clf.featurizer().featurize(t), &cfg).unwrap().mean_probs, *a))
        .collect();
    let report = calibration_report(&pairs).unwrap();
    assert!((report.ece - reference_ece(&pairs)).abs() < 1e-12);
    assert!((report.ece - HELD_OUT_ECE).abs() <= 0.05, "ece {}", report.ece);
}

#[test]
fn cross_validation_meets_floor() {
    let report = cross_validate(&shipped_corpus(), 5, CORPUS_SEED, &TrainConfig::default()).unwrap();
    assert_eq!(report.samples, 400);
    assert!(report.macro_f1 >= 0.85);
    assert!((report.macro_f1 - CV_MACRO_F1).abs() <= 0.05, "macro-F1 {}", report.macro_f1);
    assert!(!report.reference_comparable);
}

#[test]
fn in_distribution_is_less_uncertain_than_gibberish() {
    let clf = shipped_classifier();
    let cfg = UncertaintyConfig::default();
    let h = |t: &str| ensemble_classify(&*clf, &clf.featurizer().featurize(t), &cfg).unwrap().predictive_entropy;
    let (known, noise) = (h("what is 3 x 5 ?"), h("zzq qqz zqz"));
    assert!(known < noise, "{known} vs {noise}");
    assert!(noise > cfg.tau_act);
}

#[test]
fn lowering_tau_act_only_adds_escalations() {
    let clf = shipped_classifier();
    let base = UncertaintyConfig::default();
    let corpus = generate_synthetic(3, 50).unwrap();
    assert_eq!(corpus.len(), 200);
    let dists: Vec<_> = corpus
        .iter()
        .map(|(t, _)| ensemble_classify(&*clf, &clf.featurizer().featurize(t), &base).unwrap())
        .collect();
    let escalated = |tau: f64| -> BTreeSet<usize> {
        let cfg = UncertaintyConfig { tau_act: tau, ..base.clone() };
        (0..dists.len()).filter(|&i| gate(&dists[i], 1.0, true, true, &cfg).verdict == Verdict::Escalate).collect()
    };
    let mut previous = escalated(2.0);
    assert!(previous.is_empty());
    for step in (0..=40).rev() {
        let current = escalated(step as f64 * 0.035);
        assert!(previous.is_subset(&current), "tau {}", step as f64 * 0.035);
        previous = current;
    }
    assert_eq!(previous.len(), dists.len());
}
