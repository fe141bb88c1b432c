//! Multinomial logistic-regression act classifier over hashed features.
//!
//! The model is trained with seeded mini-batch SGD and inverted input dropout,
//! so that the same dropout can be re-applied at inference to draw an
//! ensemble of stochastic predictions.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ActProbs, DialogueAct, FeatureVector, Featurizer, NluError, NUM_ACTS};

pub const CLASSIFIER_MAGIC: &[u8; 6] = b"IQAACT";
pub const CLASSIFIER_VERSION: u16 = 1;

/// Anything that maps a feature vector to act probabilities. The linear
/// classifier below is the only backend shipped today.
pub trait ActModel: Send + Sync {
    fn featurizer(&self) -> &Featurizer;

    fn act_probs(&self, fv: &FeatureVector, mask: Option<&DropoutMask>) -> Result<ActProbs, NluError>;
}

/// Per-entry keep mask for one stochastic pass. Kept entries are multiplied
/// by `scale` (inverted dropout); dropped entries contribute zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    pub keep: Vec<bool>,
    pub scale: f64,
}

impl DropoutMask {
    pub fn all_kept(len: usize) -> Self {
        Self { keep: vec![true; len], scale: 1.0 }
    }

    pub fn all_dropped(len: usize) -> Self {
        Self { keep: vec![false; len], scale: 1.0 }
    }

    /// Independent Bernoulli draws: each entry is dropped with probability `rate`.
    pub fn sample<R: Rng>(rng: &mut R, len: usize, rate: f64) -> Self {
        let keep = (0..len).map(|_| rng.random::<f64>() >= rate).collect();
        let scale = if rate < 1.0 { 1.0 / (1.0 - rate) } else { 1.0 };
        Self { keep, scale }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub feature_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            feature_dim: super::DEFAULT_FEATURE_DIM,
            epochs: 40,
            learning_rate: 0.5,
            l2: 1e-4,
            batch_size: 8,
            dropout_rate: 0.2,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub corpus_hash: String,
    pub seed: u64,
}

/// SHA-256 over `label \t text \n` lines, hex encoded.
pub fn corpus_hash<'a>(corpus: impl IntoIterator<Item = (&'a str, Option<DialogueAct>)>) -> String {
    let mut hasher = Sha256::new();
    for (text, label) in corpus {
        hasher.update(label.map_or("", |l| l.as_str()).as_bytes());
        hasher.update(b"\t");
        hasher.update(text.as_bytes());
        hasher.update(b"\n");
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActClassifier {
    featurizer: Featurizer,
    /// Row-major `NUM_ACTS x dim`; empty when untrained.
    weights: Vec<f64>,
    bias: [f64; NUM_ACTS],
    dropout_rate: f64,
    meta: TrainingMeta,
}

fn softmax(logits: [f64; NUM_ACTS]) -> ActProbs {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_ACTS];
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in &mut out {
        *o /= total;
    }
    out
}

impl ActClassifier {
    pub fn untrained(featurizer: Featurizer) -> Self {
        Self {
            featurizer,
            weights: Vec::new(),
            bias: [0.0; NUM_ACTS],
            dropout_rate: 0.0,
            meta: TrainingMeta { corpus_hash: String::new(), seed: 0 },
        }
    }

    pub fn is_trained(&self) -> bool {
        !self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.featurizer.dim()
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn bias(&self) -> &[f64; NUM_ACTS] {
        &self.bias
    }

    fn logits(&self, fv: &FeatureVector, mask: Option<&DropoutMask>) -> Result<[f64; NUM_ACTS], NluError> {
        if !self.is_trained() {
            return Err(NluError::UntrainedClassifier);
        }
        if let Some(m) = mask {
            if m.keep.len() != fv.len() {
                return Err(NluError::MaskLength { mask: m.keep.len(), features: fv.len() });
            }
        }
        let dim = self.dim();
        let mut logits = self.bias;
        for (pos, (index, value)) in fv.iter().enumerate() {
            let j = index as usize;
            if j >= dim {
                return Err(NluError::FeatureOutOfRange { index, dim });
            }
            let x = match mask {
                Some(m) if !m.keep[pos] => continue,
                Some(m) => value * m.scale,
                None => value,
            };
            for (c, l) in logits.iter_mut().enumerate() {
                *l += self.weights[c * dim + j] * x;
            }
        }
        Ok(logits)
    }

    /// Act probabilities for one (optionally masked) forward pass.
    pub fn classify(&self, fv: &FeatureVector, mask: Option<&DropoutMask>) -> Result<ActProbs, NluError> {
        self.logits(fv, mask).map(softmax)
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<DialogueAct, NluError> {
        self.classify(fv, None).map(|p| DialogueAct::argmax(&p))
    }

    /// Trains on already-normalized `(text, act)` pairs.
    pub fn train(corpus: &[(String, DialogueAct)], config: &TrainConfig) -> Result<Self, NluError> {
        if corpus.len() < NUM_ACTS {
            return Err(NluError::DegenerateCorpus(format!(
                "{} samples, need at least {NUM_ACTS}",
                corpus.len()
            )));
        }
        for act in DialogueAct::ALL {
            if !corpus.iter().any(|(_, a)| *a == act) {
                return Err(NluError::DegenerateCorpus(format!("no samples labelled {act}")));
            }
        }

        let featurizer = Featurizer::new(config.feature_dim);
        let dim = featurizer.dim();
        let samples: Vec<(FeatureVector, usize)> =
            corpus.iter().map(|(t, a)| (featurizer.featurize(t), a.index())).collect();

        // The bias is pinned to the centered log class prior and never updated,
        // so an utterance with no known evidence falls back to the prior.
        let mut bias = [0.0; NUM_ACTS];
        for (c, b) in bias.iter_mut().enumerate() {
            let count = samples.iter().filter(|(_, l)| *l == c).count();
            *b = (count as f64 / samples.len() as f64).ln();
        }
        let mean_bias = bias.iter().sum::<f64>() / NUM_ACTS as f64;
        for b in &mut bias {
            *b -= mean_bias;
        }

        let mut model = Self {
            featurizer,
            weights: vec![0.0; NUM_ACTS * dim],
            bias,
            dropout_rate: config.dropout_rate,
            meta: TrainingMeta {
                corpus_hash: corpus_hash(corpus.iter().map(|(t, a)| (t.as_str(), Some(*a)))),
                seed: config.seed,
            },
        };

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let batch_size = config.batch_size.max(1);
        let decay = 1.0 - config.learning_rate * config.l2;

        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(batch_size) {
                let step = config.learning_rate / batch.len() as f64;
                let mut updates: Vec<(usize, f64)> = Vec::new();
                for &i in batch {
                    let (fv, label) = &samples[i];
                    let mask = DropoutMask::sample(&mut rng, fv.len(), config.dropout_rate);
                    let probs = model.classify(fv, Some(&mask))?;
                    for (c, p) in probs.iter().enumerate() {
                        let g = p - if c == *label { 1.0 } else { 0.0 };
                        for (pos, (index, value)) in fv.iter().enumerate() {
                            if mask.keep[pos] {
                                updates.push((c * dim + index as usize, g * value * mask.scale));
                            }
                        }
                    }
                }
                for (w, g) in updates {
                    model.weights[w] -= step * g;
                }
            }
            if config.l2 > 0.0 {
                for w in &mut model.weights {
                    *w *= decay;
                }
            }
        }
        Ok(model)
    }

    /// Binary layout, little endian: magic, u16 version, u32 act count,
    /// u32 feature dim, f64 dropout rate, u64 seed, u16 hash length + hash
    /// bytes, then bias and row-major weights as f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NluError> {
        if !self.is_trained() {
            return Err(NluError::UntrainedClassifier);
        }
        w.write_all(CLASSIFIER_MAGIC)?;
        w.write_all(&CLASSIFIER_VERSION.to_le_bytes())?;
        w.write_all(&(NUM_ACTS as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&self.dropout_rate.to_le_bytes())?;
        w.write_all(&self.meta.seed.to_le_bytes())?;
        let hash = self.meta.corpus_hash.as_bytes();
        w.write_all(&(hash.len() as u16).to_le_bytes())?;
        w.write_all(hash)?;
        for b in self.bias {
            w.write_all(&b.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.weights.len() * 8);
        for x in &self.weights {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NluError> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NluError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NluError> {
        let mut cur = Cursor { bytes, at: 0 };
        if cur.take(6)? != CLASSIFIER_MAGIC {
            return Err(NluError::Format("bad magic header".into()));
        }
        let version = u16::from_le_bytes(cur.array()?);
        if version != CLASSIFIER_VERSION {
            return Err(NluError::VersionMismatch { found: version, expected: CLASSIFIER_VERSION });
        }
        let acts = u32::from_le_bytes(cur.array()?) as usize;
        if acts != NUM_ACTS {
            return Err(NluError::Format(format!("file has {acts} acts, expected {NUM_ACTS}")));
        }
        let dim = u32::from_le_bytes(cur.array()?) as usize;
        if dim <= super::Flag::COUNT {
            return Err(NluError::Format(format!("feature dimension {dim} too small")));
        }
        let dropout_rate = f64::from_le_bytes(cur.array()?);
        let seed = u64::from_le_bytes(cur.array()?);
        let hash_len = u16::from_le_bytes(cur.array()?) as usize;
        let corpus_hash = String::from_utf8(cur.take(hash_len)?.to_vec())
            .map_err(|_| NluError::Format("corpus hash is not UTF-8".into()))?;
        let mut bias = [0.0; NUM_ACTS];
        for b in &mut bias {
            *b = f64::from_le_bytes(cur.array()?);
        }
        let expected = NUM_ACTS * dim * 8;
        let raw = cur.take(expected)?;
        if cur.at != bytes.len() {
            return Err(NluError::Format(format!("{} trailing bytes", bytes.len() - cur.at)));
        }
        let weights = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            featurizer: Featurizer::new(dim),
            weights,
            bias,
            dropout_rate,
            meta: TrainingMeta { corpus_hash, seed },
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NluError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NluError::Format("unexpected end of file".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], NluError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
}

impl ActModel for ActClassifier {
    fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    fn act_probs(&self, fv: &FeatureVector, mask: Option<&DropoutMask>) -> Result<ActProbs, NluError> {
        self.classify(fv, mask)
    }
}
