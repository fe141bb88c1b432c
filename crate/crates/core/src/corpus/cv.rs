//! Stratified k-fold cross-validation for the act classifier and the
//! relation scorer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::entity::{RelationRecord, RelationScorer, RelationTrainConfig};
use crate::nlu::{corpus_hash, ActClassifier, DialogueAct, TrainConfig, NUM_ACTS};

/// Published act-classification F1 on private data; printed for context only.
pub const REFERENCE_ACT_F1: f64 = 0.71;
/// Published entity-recognition precision, recall, F1 on private data.
pub const REFERENCE_RELATION_PRF: (f64, f64, f64) = (0.84, 0.82, 0.83);

/// Fold index for every sample. Each class is shuffled with `seed` and dealt
/// round-robin, so every sample lands in exactly one test fold.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut next = 0;
    for class in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    pub fn from_counts(label: &str, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self {
            label: label.to_string(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// `counts[truth][predicted]`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; NUM_ACTS]; NUM_ACTS],
}

impl Confusion {
    pub fn add(&mut self, truth: DialogueAct, predicted: DialogueAct) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &Confusion) {
        for t in 0..NUM_ACTS {
            for p in 0..NUM_ACTS {
                self.counts[t][p] += other.counts[t][p];
            }
        }
    }

    pub fn per_class(&self) -> Vec<ClassMetrics> {
        DialogueAct::ALL
            .iter()
            .map(|act| {
                let c = act.index();
                let tp = self.counts[c][c];
                let fp = (0..NUM_ACTS).filter(|&t| t != c).map(|t| self.counts[t][c]).sum();
                let fn_ = (0..NUM_ACTS).filter(|&p| p != c).map(|p| self.counts[c][p]).sum();
                ClassMetrics::from_counts(act.as_str(), tp, fp, fn_)
            })
            .collect()
    }

    pub fn macro_f1(&self) -> f64 {
        let per = self.per_class();
        per.iter().map(|m| m.f1).sum::<f64>() / per.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_size: usize,
    pub confusion: Confusion,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub fold_seed: u64,
    pub corpus_hash: String,
    pub samples: usize,
    pub folds: Vec<FoldReport>,
    /// Metrics over the pooled out-of-fold predictions.
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub mean_fold_macro_f1: f64,
    pub reference_f1: f64,
    pub reference_comparable: bool,
}

fn check_k(k: usize) -> Result<(), CorpusError> {
    if k < 2 {
        return Err(CorpusError::BadFoldCount(k));
    }
    Ok(())
}

/// Trains one classifier per fold (folds run on separate threads) and
/// scores it on the held-out slice.
pub fn cross_validate(
    corpus: &[(String, DialogueAct)],
    k: usize,
    seed: u64,
    train: &TrainConfig,
) -> Result<CvReport, CorpusError> {
    check_k(k)?;
    for act in DialogueAct::ALL {
        let have = corpus.iter().filter(|(_, a)| *a == act).count();
        if have < k {
            return Err(CorpusError::TooFewSamples { act: act.to_string(), have, k });
        }
    }
    let labels: Vec<usize> = corpus.iter().map(|(_, a)| a.index()).collect();
    let assignment = stratified_folds(&labels, k, seed);

    let folds: Vec<Result<FoldReport, CorpusError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..k)
            .map(|fold| {
                let assignment = &assignment;
                scope.spawn(move || {
                    let train_set: Vec<(String, DialogueAct)> = corpus
                        .iter()
                        .zip(assignment)
                        .filter(|(_, f)| **f != fold)
                        .map(|(s, _)| s.clone())
                        .collect();
                    let clf = ActClassifier::train(&train_set, train)?;
                    let mut confusion = Confusion::default();
                    let mut test_size = 0;
                    for ((text, truth), f) in corpus.iter().zip(assignment) {
                        if *f == fold {
                            test_size += 1;
                            let fv = clf.featurizer().featurize(text);
                            confusion.add(*truth, clf.predict(&fv)?);
                        }
                    }
                    Ok(FoldReport {
                        fold,
                        test_size,
                        per_class: confusion.per_class(),
                        macro_f1: confusion.macro_f1(),
                        confusion,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fold thread panicked")).collect()
    });
    let folds = folds.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut pooled = Confusion::default();
    for f in &folds {
        pooled.merge(&f.confusion);
    }
    Ok(CvReport {
        k,
        fold_seed: seed,
        corpus_hash: corpus_hash(corpus.iter().map(|(t, a)| (t.as_str(), Some(*a)))),
        samples: corpus.len(),
        mean_fold_macro_f1: folds.iter().map(|f| f.macro_f1).sum::<f64>() / k as f64,
        per_class: pooled.per_class(),
        macro_f1: pooled.macro_f1(),
        folds,
        reference_f1: REFERENCE_ACT_F1,
        reference_comparable: false,
    })
}

impl CvReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{}-fold CV over {} utterances (fold seed {}, corpus {})\n",
            self.k,
            self.samples,
            self.fold_seed,
            &self.corpus_hash[..12.min(self.corpus_hash.len())]
        );
        out.push_str(&format!("{:<12} {:>9} {:>9} {:>9}\n", "class", "precision", "recall", "f1"));
        for m in &self.per_class {
            out.push_str(&format!("{:<12} {:>9.4} {:>9.4} {:>9.4}\n", m.label, m.precision, m.recall, m.f1));
        }
        out.push_str(&format!("macro-F1 {:.4} (mean over folds {:.4})\n", self.macro_f1, self.mean_fold_macro_f1));
        out.push_str(&format!(
            "reference F1 {:.2} was measured on private classroom data and is not comparable\n",
            self.reference_f1
        ));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationCvReport {
    pub k: usize,
    pub fold_seed: u64,
    pub records: usize,
    pub folds: Vec<ClassMetrics>,
    /// Metrics for the `true` label over pooled out-of-fold predictions.
    pub pooled: ClassMetrics,
    pub reference: (f64, f64, f64),
    pub reference_comparable: bool,
}

impl RelationCvReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("{}-fold relation CV over {} pairs (fold seed {})\n", self.k, self.records, self.fold_seed);
        out.push_str(&format!("{:<8} {:>9} {:>9} {:>9}\n", "fold", "precision", "recall", "f1"));
        for (i, m) in self.folds.iter().enumerate() {
            out.push_str(&format!("{:<8} {:>9.4} {:>9.4} {:>9.4}\n", i, m.precision, m.recall, m.f1));
        }
        let m = &self.pooled;
        out.push_str(&format!("{:<8} {:>9.4} {:>9.4} {:>9.4}\n", "pooled", m.precision, m.recall, m.f1));
        out.push_str(&format!(
            "reference P/R/F1 {:.2}/{:.2}/{:.2} were measured on private data and are not comparable\n",
            self.reference.0, self.reference.1, self.reference.2
        ));
        out
    }
}

pub fn cross_validate_relations(
    corpus: &[RelationRecord],
    k: usize,
    seed: u64,
    train: &RelationTrainConfig,
) -> Result<RelationCvReport, CorpusError> {
    check_k(k)?;
    for label in [true, false] {
        let have = corpus.iter().filter(|r| r.label == label).count();
        if have < k {
            return Err(CorpusError::TooFewSamples { act: label.to_string(), have, k });
        }
    }
    let labels: Vec<usize> = corpus.iter().map(|r| usize::from(r.label)).collect();
    let assignment = stratified_folds(&labels, k, seed);
    let mut folds = Vec::with_capacity(k);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for fold in 0..k {
        let train_set: Vec<RelationRecord> = corpus
            .iter()
            .zip(&assignment)
            .filter(|(_, f)| **f != fold)
            .map(|(r, _)| r.clone())
            .collect();
        let scorer = RelationScorer::train(&train_set, train)?;
        let (mut ftp, mut ffp, mut ffn) = (0, 0, 0);
        for (r, f) in corpus.iter().zip(&assignment) {
            if *f != fold {
                continue;
            }
            let predicted = scorer.predict_record(r) >= 0.5;
            match (predicted, r.label) {
                (true, true) => ftp += 1,
                (true, false) => ffp += 1,
                (false, true) => ffn += 1,
                (false, false) => {}
            }
        }
        tp += ftp;
        fp += ffp;
        fn_ += ffn;
        folds.push(ClassMetrics::from_counts("true", ftp, ffp, ffn));
    }
    Ok(RelationCvReport {
        k,
        fold_seed: seed,
        records: corpus.len(),
        folds,
        pooled: ClassMetrics::from_counts("true", tp, fp, fn_),
        reference: REFERENCE_RELATION_PRF,
        reference_comparable: false,
    })
}
