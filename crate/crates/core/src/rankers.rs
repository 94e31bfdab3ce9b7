//! Trainable rankers: feature extraction, a small feed-forward scorer with
//! analytic gradients, the shared training loop, and the position-bias
//! mitigation (loss reweighting) scheme.
//!
//! Four ranker kinds span two capacity axes: in-slate context modeling
//! (point-wise vs slate-aware) and recent-history modeling (static vs
//! dynamic). Rankers only ever see observable user/document features; the
//! extractor's signature takes the observable slices directly so hidden
//! state cannot flow in.

use std::collections::BTreeMap;
use std::path::Path;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::ActionModel;
use crate::error::{Result, SimError};
use crate::metrics::{offline_auc, offline_ndcg};
use crate::oracles::{RankContext, Strategy, ENUM_LIMIT};
use crate::types::{DocId, Document, DocumentSet, InteractionLog, UserState};

/// Default EMA decay for the dynamic-history click embedding.
pub const HISTORY_DECAY: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankerKind {
    Pointwise,
    SlateAware,
    HistoryStatic,
    HistoryDynamic,
}

impl RankerKind {
    pub fn name(&self) -> &'static str {
        match self {
            RankerKind::Pointwise => "pointwise",
            RankerKind::SlateAware => "slate-aware",
            RankerKind::HistoryStatic => "history-static",
            RankerKind::HistoryDynamic => "history-dynamic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pointwise" => Some(RankerKind::Pointwise),
            "slate-aware" => Some(RankerKind::SlateAware),
            "history-static" => Some(RankerKind::HistoryStatic),
            "history-dynamic" => Some(RankerKind::HistoryDynamic),
            _ => None,
        }
    }

    /// Input width of the scorer for given observable dimensions.
    pub fn input_dim(&self, user_dim: usize, doc_dim: usize) -> usize {
        // user + doc + their dot-product affinity
        let base = user_dim + doc_dim + 1;
        match self {
            RankerKind::Pointwise => base,
            // mean+min of co-displayed docs, mean of preceding docs,
            // normalized position
            RankerKind::SlateAware => base + 3 * doc_dim + 1,
            // EMA click embedding, its alignment with the candidate doc,
            // and the full history-candidate interaction (attention-style).
            // Both history kinds share the architecture; they differ only in
            // whether the embedding is refreshed while serving.
            RankerKind::HistoryStatic | RankerKind::HistoryDynamic => {
                base + doc_dim + 1 + doc_dim * doc_dim
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

/// Observable in-slate context of one impression: all displayed documents'
/// observable attrs (in display order) and the document's position.
#[derive(Debug, Clone)]
pub struct SlateView<'a> {
    pub slate_attrs: &'a [Vec<f64>],
    pub position: usize,
}

fn elementwise(acc: &mut [f64], v: &[f64], f: impl Fn(f64, f64) -> f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a = f(*a, *x);
    }
}

/// Deterministic observable-only feature map. `user_obs` is the user's
/// observable block, never the hidden preference state; `doc_attrs` is the
/// document's observable block, never its hidden vector.
pub fn extract_features(
    kind: RankerKind,
    user_obs: &[f64],
    doc_attrs: &[f64],
    slate: Option<&SlateView<'_>>,
    history_ema: Option<&[f64]>,
) -> Result<FeatureVector> {
    let d = doc_attrs.len();
    let mut f = Vec::with_capacity(kind.input_dim(user_obs.len(), d));
    f.extend_from_slice(user_obs);
    f.extend_from_slice(doc_attrs);
    // user-document affinity (dot product over the shared prefix), the
    // standard interaction feature; zero when the user vector is empty
    f.push(user_obs.iter().zip(doc_attrs).map(|(a, b)| a * b).sum());
    match kind {
        RankerKind::Pointwise => {}
        RankerKind::SlateAware => {
            let view = slate.ok_or_else(|| {
                SimError::Contract("slate-aware features need the slate context".into())
            })?;
            let others: Vec<&Vec<f64>> = view
                .slate_attrs
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != view.position)
                .map(|(_, a)| a)
                .collect();
            let mut mean = vec![0.0; d];
            let mut min = vec![f64::INFINITY; d];
            if others.is_empty() {
                // a singleton slate is its own context
                mean.copy_from_slice(doc_attrs);
                min.copy_from_slice(doc_attrs);
            } else {
                for o in &others {
                    elementwise(&mut mean, o, |a, x| a + x);
                    elementwise(&mut min, o, f64::min);
                }
                for m in &mut mean {
                    *m /= others.len() as f64;
                }
            }
            let mut prev_mean = vec![0.0; d];
            if view.position > 0 {
                for a in &view.slate_attrs[..view.position] {
                    elementwise(&mut prev_mean, a, |x, y| x + y);
                }
                for m in &mut prev_mean {
                    *m /= view.position as f64;
                }
            }
            let denom = (view.slate_attrs.len() as f64 - 1.0).max(1.0);
            f.extend_from_slice(&mean);
            f.extend_from_slice(&min);
            f.extend_from_slice(&prev_mean);
            f.push(view.position as f64 / denom);
        }
        RankerKind::HistoryStatic | RankerKind::HistoryDynamic => {
            match history_ema {
                Some(h) => {
                    if h.len() != d {
                        return Err(SimError::Contract(format!(
                            "history embedding dim {} != doc dim {d}",
                            h.len()
                        )));
                    }
                    f.extend_from_slice(h);
                    // alignment of recent clicks with this candidate
                    f.push(h.iter().zip(doc_attrs).map(|(a, b)| a * b).sum());
                    // outer product: history conditioned on the candidate,
                    // so context-dependent policies are linearly reachable
                    for a in h {
                        for b in doc_attrs {
                            f.push(a * b);
                        }
                    }
                }
                // no clicks yet: zero history block
                None => f.extend(std::iter::repeat(0.0).take(d + 1 + d * d)),
            }
        }
    }
    Ok(FeatureVector(f))
}

/// Advance the dynamic-history EMA after one round's clicks.
pub fn update_history_ema(ema: &mut Vec<f64>, clicked_attrs: &[&[f64]], decay: f64) {
    for attrs in clicked_attrs {
        if ema.is_empty() {
            *ema = vec![0.0; attrs.len()];
        }
        for (e, a) in ema.iter_mut().zip(*attrs) {
            *e = decay * *e + (1.0 - decay) * a;
        }
    }
}

/// One-hidden-layer tanh scorer: score = w2 · tanh(W1 f + b1) + b2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    pub kind: RankerKind,
    pub user_dim: usize,
    pub doc_dim: usize,
    pub hidden: usize,
    /// Row-major hidden × input.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl RankerModel {
    pub fn input_dim(&self) -> usize {
        self.kind.input_dim(self.user_dim, self.doc_dim)
    }

    /// Small symmetric random initialization, deterministic in the seed.
    pub fn init(kind: RankerKind, user_dim: usize, doc_dim: usize, hidden: usize, seed: u64) -> Self {
        let input = kind.input_dim(user_dim, doc_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (input.max(1) as f64).sqrt();
        let mut draw = |n: usize, s: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-s..s)).collect()
        };
        let w1 = draw(hidden * input, scale);
        let b1 = vec![0.0; hidden];
        let w2 = draw(hidden, 1.0 / (hidden as f64).sqrt());
        RankerModel { kind, user_dim, doc_dim, hidden, w1, b1, w2, b2: 0.0 }
    }

    /// Predicted relevance logit.
    pub fn score(&self, f: &FeatureVector) -> Result<f64> {
        Ok(self.forward(f)?.1)
    }

    /// Hidden activations and output logit.
    fn forward(&self, f: &FeatureVector) -> Result<(Vec<f64>, f64)> {
        let input = self.input_dim();
        if f.0.len() != input {
            return Err(SimError::Config(format!(
                "feature dim {} does not match model input dim {input}",
                f.0.len()
            )));
        }
        let mut act = Vec::with_capacity(self.hidden);
        for h in 0..self.hidden {
            let row = &self.w1[h * input..(h + 1) * input];
            let z: f64 = row.iter().zip(&f.0).map(|(w, x)| w * x).sum::<f64>() + self.b1[h];
            act.push(z.tanh());
        }
        let out: f64 = self.w2.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>() + self.b2;
        Ok((act, out))
    }

    /// Accumulate the gradient of `weight · BCE(σ(score), label)` for one
    /// example into `grad`; returns the example's weighted loss.
    fn accumulate_grad(
        &self,
        f: &FeatureVector,
        label: f64,
        weight: f64,
        grad: &mut Gradient,
    ) -> Result<f64> {
        let (act, out) = self.forward(f)?;
        let p = sigmoid(out);
        let g_out = weight * (p - label);
        grad.b2 += g_out;
        let input = self.input_dim();
        for h in 0..self.hidden {
            grad.w2[h] += g_out * act[h];
            let g_hidden = g_out * self.w2[h] * (1.0 - act[h] * act[h]);
            grad.b1[h] += g_hidden;
            let row = &mut grad.w1[h * input..(h + 1) * input];
            for (gw, x) in row.iter_mut().zip(&f.0) {
                *gw += g_hidden * x;
            }
        }
        Ok(weight * bce(p, label))
    }

    fn apply(&mut self, grad: &Gradient, lr_over_batch: f64) {
        for (w, g) in self.w1.iter_mut().zip(&grad.w1) {
            *w -= lr_over_batch * g;
        }
        for (w, g) in self.b1.iter_mut().zip(&grad.b1) {
            *w -= lr_over_batch * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&grad.w2) {
            *w -= lr_over_batch * g;
        }
        self.b2 -= lr_over_batch * grad.b2;
    }

    /// Serialize weights plus the training-config hash; `load` refuses a
    /// file whose embedded hash disagrees with the expected config.
    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            config_hash: config_hash.to_string(),
            model: self.clone(),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<(Self, String)> {
        let bytes = std::fs::read(path)?;
        let file: ModelFile = serde_json::from_slice(&bytes)?;
        if file.version != MODEL_FILE_VERSION {
            return Err(SimError::Config(format!(
                "unsupported model file version {}",
                file.version
            )));
        }
        if let Some(h) = expected_hash {
            if h != file.config_hash {
                return Err(SimError::Config(format!(
                    "model config hash mismatch: file has {}, expected {h}",
                    file.config_hash
                )));
            }
        }
        Ok((file.model, file.config_hash))
    }
}

const MODEL_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    config_hash: String,
    model: RankerModel,
}

struct Gradient {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl Gradient {
    fn zeros(model: &RankerModel) -> Self {
        Gradient {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: 0.0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn bce(p: f64, y: f64) -> f64 {
    let eps = 1e-12;
    -(y * (p.max(eps)).ln() + (1.0 - y) * ((1.0 - p).max(eps)).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    Reweighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Mix ratio α of the dataset this model was trained on (bookkeeping;
    /// the mixing itself happens upstream).
    pub mix_ratio: f64,
    /// Position-bias vector for the reweighted loss; ignored otherwise.
    pub position_bias: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 30,
            batch_size: 64,
            seed: 0,
            loss: LossKind::CrossEntropy,
            mix_ratio: 1.0,
            position_bias: vec![1.0; 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(SimError::Config("learning rate must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(SimError::Config("mix_ratio must be in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(SimError::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }

    /// Stable hash embedded in model files so a model can't silently load
    /// against a different training config.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(self).expect("config serializes"));
        format!("{:x}", hasher.finalize())
    }
}

/// One training example: features, sampled click, display position, and the
/// predecessor feature vector (for the mitigation reweighting).
#[derive(Debug, Clone)]
pub struct Example {
    pub features: FeatureVector,
    pub label: f64,
    pub position: usize,
    pub prev_features: Option<FeatureVector>,
    /// Row index in the source log, for slate-grouped holdout metrics.
    pub row: usize,
}

/// Flatten a log into per-impression training examples for one ranker kind,
/// rebuilding each user's click-history EMA by replaying their rounds in
/// order.
pub fn build_dataset(
    kind: RankerKind,
    log: &InteractionLog,
    docs: &DocumentSet,
    history_decay: f64,
) -> Result<Vec<Example>> {
    let mut emas: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut out = Vec::new();
    for (row_idx, row) in log.rows.iter().enumerate() {
        let slate_attrs: Vec<Vec<f64>> = row
            .slate
            .docs
            .iter()
            .map(|id| docs.get(*id).obs.clone())
            .collect();
        // Cold-start prior: the history EMA starts from the user profile when
        // the profile lives in document-attribute space (sequential scenario),
        // and empty otherwise.
        let doc_dim = slate_attrs.first().map_or(0, Vec::len);
        emas.entry(row.user_id).or_insert_with(|| {
            if row.user_obs.len() == doc_dim { row.user_obs.clone() } else { Vec::new() }
        });
        let ema = emas.get(&row.user_id).filter(|v| !v.is_empty()).cloned();
        let mut prev: Option<FeatureVector> = None;
        for (pos, id) in row.slate.docs.iter().enumerate() {
            let view = SlateView { slate_attrs: &slate_attrs, position: pos };
            let f = extract_features(
                kind,
                &row.user_obs,
                &docs.get(*id).obs,
                Some(&view),
                ema.as_deref(),
            )?;
            out.push(Example {
                features: f.clone(),
                label: row.slate.clicks[pos] as f64,
                position: pos,
                prev_features: prev.clone(),
                row: row_idx,
            });
            // History masking: every impression is also seen with the history
            // blanked, so the base weights carry the full no-history policy
            // and the history weights learn only the residual. Without this,
            // history and document features are nearly collinear in logs from
            // a consistent policy, the credit splits between them, and the
            // model degrades badly on users whose histories it shaped itself.
            if matches!(kind, RankerKind::HistoryStatic | RankerKind::HistoryDynamic) && ema.is_some()
            {
                let masked = extract_features(
                    kind,
                    &row.user_obs,
                    &docs.get(*id).obs,
                    Some(&view),
                    None,
                )?;
                out.push(Example {
                    features: masked,
                    label: row.slate.clicks[pos] as f64,
                    position: pos,
                    prev_features: None,
                    row: row_idx,
                });
            }
            prev = Some(f);
        }
        let clicked: Vec<&[f64]> = row
            .slate
            .docs
            .iter()
            .zip(&row.slate.clicks)
            .filter(|(_, &c)| c == 1)
            .map(|(id, _)| docs.get(*id).obs.as_slice())
            .collect();
        let entry = emas.entry(row.user_id).or_default();
        update_history_ema(entry, &clicked, history_decay);
    }
    Ok(out)
}

/// Offline evaluation numbers on the held-out split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub auc: Option<f64>,
    pub ndcg: Option<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub n_train: usize,
    pub n_test: usize,
}

const HOLDOUT_FRACTION: f64 = 0.15;

/// Mini-batch gradient descent on weighted per-impression cross-entropy.
/// Holds out 15% of the log's rows (whole slates) as the test split;
/// deterministic in `cfg.seed`.
pub fn train(
    model: &mut RankerModel,
    log: &InteractionLog,
    docs: &DocumentSet,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if log.rows.is_empty() {
        return Err(SimError::Contract("cannot train on an empty log".into()));
    }
    let examples = build_dataset(model.kind, log, docs, HISTORY_DECAY)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_rows = log.rows.len();
    let mut row_order: Vec<usize> = (0..n_rows).collect();
    row_order.shuffle(&mut rng);
    let n_test_rows = ((n_rows as f64) * HOLDOUT_FRACTION).round() as usize;
    let test_rows: std::collections::BTreeSet<usize> =
        row_order[..n_test_rows].iter().copied().collect();

    let (test, train_set): (Vec<&Example>, Vec<&Example>) =
        examples.iter().partition(|e| test_rows.contains(&e.row));
    if train_set.is_empty() {
        return Err(SimError::Contract("holdout left no training rows".into()));
    }

    let eval_loss = |m: &RankerModel| -> Result<f64> {
        let mut g = Gradient::zeros(m);
        let mut total = 0.0;
        for e in &train_set {
            total += m.accumulate_grad(&e.features, e.label, 1.0, &mut g)?;
        }
        Ok(total / train_set.len() as f64)
    };
    let initial_loss = eval_loss(model)?;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for _ in 0..cfg.epochs {
        // mitigation weights are recomputed per epoch from the current
        // model and treated as constants inside the gradient
        let weights: Vec<f64> = match cfg.loss {
            LossKind::CrossEntropy => vec![1.0; train_set.len()],
            LossKind::Reweighted => train_set
                .iter()
                .map(|e| {
                    let r_j = model.score(&e.features)?;
                    let r_i = match &e.prev_features {
                        Some(pf) => model.score(pf)?,
                        None => r_j,
                    };
                    mitigation_weight(e.position, r_j, r_i, &cfg.position_bias)
                })
                .collect::<Result<Vec<f64>>>()?,
        };
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = Gradient::zeros(model);
            for &i in batch {
                let e = train_set[i];
                model.accumulate_grad(&e.features, e.label, weights[i], &mut grad)?;
            }
            model.apply(&grad, cfg.learning_rate / batch.len() as f64);
        }
    }
    let final_loss = eval_loss(model)?;

    // held-out metrics: AUC over impressions, NDCG averaged over slates
    let mut preds = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for e in &test {
        preds.push(model.score(&e.features)?);
        labels.push(e.label as u8);
    }
    let auc = offline_auc(&preds, &labels);
    let mut by_row: BTreeMap<usize, Vec<(f64, u8)>> = BTreeMap::new();
    for (e, (&p, &l)) in test.iter().zip(preds.iter().zip(&labels)) {
        by_row.entry(e.row).or_default().push((p, l));
    }
    let mut ndcg_sum = 0.0;
    let mut ndcg_n = 0usize;
    for slate in by_row.values() {
        let mut ranked = slate.clone();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let ranked_labels: Vec<u8> = ranked.iter().map(|(_, l)| *l).collect();
        ndcg_sum += offline_ndcg(&ranked_labels);
        ndcg_n += 1;
    }
    Ok(TrainReport {
        auc,
        ndcg: (ndcg_n > 0).then(|| ndcg_sum / ndcg_n as f64),
        initial_loss,
        final_loss,
        n_train: train_set.len(),
        n_test: test.len(),
    })
}

/// Maximum relative error between the analytic gradient and central finite
/// differences of the summed cross-entropy loss over `batch`, probing every
/// parameter of the scorer.
pub fn gradient_max_rel_error(
    model: &RankerModel,
    batch: &[(FeatureVector, f64)],
    h: f64,
) -> Result<f64> {
    let mut grad = Gradient::zeros(model);
    for (f, y) in batch {
        model.accumulate_grad(f, *y, 1.0, &mut grad)?;
    }
    let loss = |m: &RankerModel| -> Result<f64> {
        let mut total = 0.0;
        for (f, y) in batch {
            total += bce(sigmoid(m.score(f)?), *y);
        }
        Ok(total)
    };
    let n_w1 = model.w1.len();
    let n_b1 = model.b1.len();
    let n_w2 = model.w2.len();
    fn slot_at(m: &mut RankerModel, idx: usize, n_w1: usize, n_b1: usize, n_w2: usize) -> &mut f64 {
        if idx < n_w1 {
            &mut m.w1[idx]
        } else if idx < n_w1 + n_b1 {
            &mut m.b1[idx - n_w1]
        } else if idx < n_w1 + n_b1 + n_w2 {
            &mut m.w2[idx - n_w1 - n_b1]
        } else {
            &mut m.b2
        }
    }
    let analytic = |idx: usize| -> f64 {
        if idx < n_w1 {
            grad.w1[idx]
        } else if idx < n_w1 + n_b1 {
            grad.b1[idx - n_w1]
        } else if idx < n_w1 + n_b1 + n_w2 {
            grad.w2[idx - n_w1 - n_b1]
        } else {
            grad.b2
        }
    };
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for idx in 0..(n_w1 + n_b1 + n_w2 + 1) {
        let orig = *slot_at(&mut probe, idx, n_w1, n_b1, n_w2);
        *slot_at(&mut probe, idx, n_w1, n_b1, n_w2) = orig + h;
        let up = loss(&probe)?;
        *slot_at(&mut probe, idx, n_w1, n_b1, n_w2) = orig - h;
        let down = loss(&probe)?;
        *slot_at(&mut probe, idx, n_w1, n_b1, n_w2) = orig;
        let numeric = (up - down) / (2.0 * h);
        let g = analytic(idx);
        // mixed tolerance: floor the denominator at 1 so that near-zero
        // gradients are compared absolutely (a pure ratio there only
        // measures the round-off noise of the central difference)
        let denom = numeric.abs().max(g.abs()).max(1.0);
        worst = worst.max(((numeric - g) / denom).abs());
    }
    Ok(worst)
}

/// Inverse decoy-adjusted propensity: 1 / (w_k · exp(r_j − r_i)). The first
/// position has no predecessor; its decoy factor is fixed at 1.
pub fn mitigation_weight(position: usize, r_j: f64, r_i: f64, w: &[f64]) -> Result<f64> {
    let wk = *w.get(position).ok_or_else(|| {
        SimError::Config(format!("position {position} beyond bias vector"))
    })?;
    if wk <= 0.0 {
        return Err(SimError::Config("position-bias entries must be > 0".into()));
    }
    if position == 0 {
        return Ok(1.0 / wk);
    }
    Ok(1.0 / (wk * (r_j - r_i).exp()))
}

/// Empirical position-bias estimate: serve uniformly random size-K slates,
/// take per-position click rates, normalize so w₁ = 1. Returns the vector
/// and a flag that is set when a zero-click position was floored.
pub fn estimate_position_bias(
    model: &dyn ActionModel,
    users: &[UserState],
    docs: &DocumentSet,
    k: usize,
    n_rounds: usize,
    seed: u64,
) -> Result<(Vec<f64>, bool)> {
    if n_rounds == 0 || users.is_empty() {
        return Err(SimError::Contract(
            "position-bias estimation needs users and at least one round".into(),
        ));
    }
    let ids = docs.bound_ids();
    if ids.len() < k {
        return Err(SimError::Contract("fewer documents than slate size".into()));
    }
    let mut clicks = vec![0u64; k];
    let mut shown = vec![0u64; k];
    for user in users {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (user.user_id as u64).wrapping_mul(0x9e3779b97f4a7c15));
        for _ in 0..n_rounds {
            let mut pool: Vec<DocId> = ids.to_vec();
            pool.shuffle(&mut rng);
            let slate: Vec<&Document> = pool[..k].iter().map(|id| docs.get(*id)).collect();
            let probs = model.click_probs(user, &slate);
            for (pos, p) in probs.iter().enumerate() {
                shown[pos] += 1;
                if rng.gen::<f64>() < *p {
                    clicks[pos] += 1;
                }
            }
        }
    }
    let mut rates: Vec<f64> = clicks
        .iter()
        .zip(&shown)
        .map(|(c, s)| *c as f64 / *s as f64)
        .collect();
    let mut floored = false;
    const EPS: f64 = 1e-6;
    for r in &mut rates {
        if *r <= 0.0 {
            *r = EPS;
            floored = true;
        }
    }
    let w1 = rates[0];
    Ok((rates.iter().map(|r| r / w1).collect(), floored))
}

/// A trained model exposed as a ranking strategy. Only observable state
/// reaches the feature extractor: `user.obs`, document `attrs`, and the
/// pipeline-maintained click-history EMA.
pub struct RankerStrategy<'a> {
    pub model: &'a RankerModel,
    pub slate_size: usize,
}

impl<'a> RankerStrategy<'a> {
    pub fn new(model: &'a RankerModel, slate_size: usize) -> Self {
        RankerStrategy { model, slate_size }
    }

    fn score_sorted(&self, user_obs: &[f64], recall: &[&Document]) -> Result<Vec<DocId>> {
        let mut scored: Vec<(DocId, f64)> = Vec::with_capacity(recall.len());
        for d in recall {
            let f = extract_features(self.model.kind, user_obs, &d.obs, None, None)?;
            scored.push((d.id, self.model.score(&f)?));
        }
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().take(self.slate_size).map(|(d, _)| d).collect())
    }

    fn score_sorted_dynamic(
        &self,
        user_obs: &[f64],
        recall: &[&Document],
        ema: Option<&[f64]>,
    ) -> Result<Vec<DocId>> {
        let mut scored: Vec<(DocId, f64)> = Vec::with_capacity(recall.len());
        for d in recall {
            let f = extract_features(self.model.kind, user_obs, &d.obs, None, ema)?;
            scored.push((d.id, self.model.score(&f)?));
        }
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().take(self.slate_size).map(|(d, _)| d).collect())
    }

    /// Predicted mean click probability of one candidate permutation.
    pub fn predicted_slate_ctr(&self, user_obs: &[f64], perm: &[&Document]) -> Result<f64> {
        let slate_attrs: Vec<Vec<f64>> = perm.iter().map(|d| d.obs.clone()).collect();
        let mut total = 0.0;
        for (pos, d) in perm.iter().enumerate() {
            let view = SlateView { slate_attrs: &slate_attrs, position: pos };
            let f = extract_features(self.model.kind, user_obs, &d.obs, Some(&view), None)?;
            total += sigmoid(self.model.score(&f)?);
        }
        Ok(total / perm.len() as f64)
    }

    fn slate_search(&self, user_obs: &[f64], recall: &[&Document]) -> Result<Vec<DocId>> {
        if recall.len() > ENUM_LIMIT && self.slate_size > 1 {
            return Err(SimError::EnumerationLimit { n: recall.len(), max: ENUM_LIMIT });
        }
        let mut sorted: Vec<&Document> = recall.to_vec();
        sorted.sort_by_key(|d| d.id);
        let mut best: Option<(Vec<DocId>, f64)> = None;
        for perm in sorted.iter().copied().permutations(self.slate_size) {
            let ctr = self.predicted_slate_ctr(user_obs, &perm)?;
            let ids: Vec<DocId> = perm.iter().map(|d| d.id).collect();
            // strict improvement keeps the lexicographically least
            // permutation among ties (iteration order is lexicographic)
            if best.as_ref().map_or(true, |(_, b)| ctr > *b) {
                best = Some((ids, ctr));
            }
        }
        Ok(best.expect("nonempty recall").0)
    }
}

impl Strategy for RankerStrategy<'_> {
    fn name(&self) -> &str {
        self.model.kind.name()
    }

    fn rank(
        &self,
        user: &UserState,
        recall: &[&Document],
        ctx: &RankContext<'_>,
    ) -> Result<Vec<DocId>> {
        if recall.is_empty() {
            return Err(SimError::Contract("cannot rank an empty recall list".into()));
        }
        match self.model.kind {
            RankerKind::Pointwise => self.score_sorted(&user.obs, recall),
            // The static deployment keeps the history embedding pinned to its
            // cold-start value; the dynamic one consumes the live EMA the
            // pipeline maintains from observed clicks.
            RankerKind::HistoryStatic => {
                let frozen = (user.obs.len() == self.model.doc_dim).then_some(&user.obs);
                self.score_sorted_dynamic(&user.obs, recall, frozen.map(Vec::as_slice))
            }
            RankerKind::HistoryDynamic => {
                self.score_sorted_dynamic(&user.obs, recall, ctx.history_ema)
            }
            RankerKind::SlateAware => self.slate_search(&user.obs, recall),
        }
    }
}
