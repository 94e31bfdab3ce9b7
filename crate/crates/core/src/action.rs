//! User behavior models.
//!
//! An [`ActionModel`] maps (user state, displayed list) to per-position
//! click probabilities and owns the user-state transition applied after the
//! sampled clicks come back. Two concrete models are provided: a regret-based
//! slate choice model with positional examination (exhibits the decoy
//! effect) and a topic/quality/time-budget sequential model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::types::{Document, DocumentSet, UserState};

/// Contract every simulated user model satisfies.
///
/// Outputs are pure functions of the inputs; binary click sampling happens
/// outside the model.
pub trait ActionModel: Sync + Send {
    /// Click probability for each position of the displayed list.
    fn click_probs(&self, user: &UserState, docs: &[&Document]) -> Vec<f64>;

    /// Click probability when `doc` is shown alone (the initial-preference
    /// probe when called with the round-0 state).
    fn singleton_prob(&self, user: &UserState, doc: &Document) -> f64 {
        self.click_probs(user, &[doc])[0]
    }

    /// In-context preference strengths used by the unbiased-ranking test:
    /// click probabilities conditional on the whole list being examined, so
    /// within-slate interactions count but positional exposure does not.
    fn context_prefs(&self, user: &UserState, docs: &[&Document]) -> Vec<f64> {
        self.click_probs(user, docs)
    }

    /// Apply the transition model given the sampled clicks.
    fn transition(&self, user: &mut UserState, docs: &[&Document], clicks: &[u8]);
}

/// Parameters of the regret-based slate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RrmParams {
    /// Log-weight of the no-choice option.
    pub no_choice_logit: f64,
    /// Per-position examination probabilities; length bounds the slate size.
    pub exam_probs: Vec<f64>,
}

impl Default for RrmParams {
    fn default() -> Self {
        RrmParams {
            no_choice_logit: -1.0,
            exam_probs: vec![1.0, 0.8, 0.6],
        }
    }
}

impl RrmParams {
    pub fn validate(&self) -> Result<()> {
        if self.exam_probs.is_empty() || self.exam_probs.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(SimError::Config(
                "slate.exam_probs must be nonempty probabilities in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Pairwise regret of `target` against the other documents of the examined
/// set: sum over competitors of max(h_i - h_j, 0) + max(m_i - m_j, 0).
pub fn rrm_regret(target: &Document, examined: &[&Document]) -> Result<f64> {
    if !examined.iter().any(|d| d.id == target.id) {
        return Err(SimError::Contract(format!(
            "regret target {} is not in the examined set",
            target.id
        )));
    }
    let mut total = 0.0;
    for other in examined {
        if other.id == target.id {
            continue;
        }
        for (a, b) in target.attrs.iter().zip(other.attrs.iter()) {
            total += (a - b).max(0.0);
        }
    }
    Ok(total)
}

/// Choice probability of `target` among an examined set.
///
/// A singleton set uses the utility form exp(U)/(exp(L)+exp(U)) with
/// U = -(h+m); larger sets use the regret softmax with no-choice mass exp(L).
pub fn rrm_choice_prob(target: &Document, examined: &[&Document], params: &RrmParams) -> Result<f64> {
    if examined.is_empty() {
        return Err(SimError::Contract("examined set is empty".into()));
    }
    let l = params.no_choice_logit;
    if examined.len() == 1 {
        if examined[0].id != target.id {
            return Err(SimError::Contract(format!(
                "singleton examined set does not contain {}",
                target.id
            )));
        }
        let u = -target.attrs.iter().sum::<f64>();
        return Ok(u.exp() / (l.exp() + u.exp()));
    }
    let num = (-rrm_regret(target, examined)?).exp();
    let mut den = l.exp();
    for d in examined {
        den += (-rrm_regret(d, examined)?).exp();
    }
    Ok(num / den)
}

/// Marginal click probability of the document at `pos` in `slate`, summing
/// the choice probability over all 2^K Bernoulli examination patterns that
/// examine `pos`, pattern e weighted by prod_k w_k^{e_k} (1-w_k)^{1-e_k}.
pub fn rrm_slate_prob(pos: usize, slate: &[&Document], params: &RrmParams) -> Result<f64> {
    let k = slate.len();
    if pos >= k {
        return Err(SimError::Contract(format!("position {pos} out of range")));
    }
    if k > params.exam_probs.len() {
        return Err(SimError::Config(format!(
            "slate size {k} exceeds exam_probs length {}",
            params.exam_probs.len()
        )));
    }
    let mut total = 0.0;
    for pattern in 0u32..(1 << k) {
        if pattern & (1 << pos) == 0 {
            continue;
        }
        let mut weight = 1.0;
        for (i, w) in params.exam_probs[..k].iter().enumerate() {
            weight *= if pattern & (1 << i) != 0 { *w } else { 1.0 - w };
        }
        if weight == 0.0 {
            continue;
        }
        let examined: Vec<&Document> = (0..k)
            .filter(|i| pattern & (1 << i) != 0)
            .map(|i| slate[i])
            .collect();
        total += weight * rrm_choice_prob(slate[pos], &examined, params)?;
    }
    Ok(total)
}

/// Slate model: regret-based choice under positional examination. The user
/// state is static (no transition).
#[derive(Debug, Clone)]
pub struct RrmModel {
    pub params: RrmParams,
}

impl RrmModel {
    pub fn new(params: RrmParams) -> Self {
        RrmModel { params }
    }
}

impl ActionModel for RrmModel {
    fn click_probs(&self, _user: &UserState, docs: &[&Document]) -> Vec<f64> {
        (0..docs.len())
            .map(|j| rrm_slate_prob(j, docs, &self.params).expect("valid slate"))
            .collect()
    }

    fn context_prefs(&self, _user: &UserState, docs: &[&Document]) -> Vec<f64> {
        // Condition on full examination: interactions between the displayed
        // documents still apply, positional exposure does not.
        docs.iter()
            .map(|d| rrm_choice_prob(d, docs, &self.params).expect("valid slate"))
            .collect()
    }

    fn transition(&self, _user: &mut UserState, _docs: &[&Document], _clicks: &[u8]) {}
}

/// Parameters of the sequential topic/quality/budget model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeqModelParams {
    pub n_topics: usize,
    pub docs_per_topic: usize,
    /// Per-topic quality means; empty means evenly spaced over [0.2, 1.0].
    pub quality_means: Vec<f64>,
    pub quality_std: f64,
    pub initial_budget: f64,
    pub budget_cost_base: f64,
    pub quality_bonus: f64,
    /// Per-round cost never drops below this.
    pub budget_cost_floor: f64,
    pub click_sharpness: f64,
    pub drift_rate: f64,
}

impl Default for SeqModelParams {
    fn default() -> Self {
        SeqModelParams {
            n_topics: 10,
            docs_per_topic: 10,
            quality_means: Vec::new(),
            quality_std: 0.1,
            initial_budget: 6.0,
            budget_cost_base: 1.0,
            quality_bonus: 0.9,
            budget_cost_floor: 0.05,
            click_sharpness: 4.0,
            drift_rate: 0.15,
        }
    }
}

impl SeqModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_topics == 0 || self.docs_per_topic == 0 {
            return Err(SimError::Config("sequential world must be nonempty".into()));
        }
        if self.quality_std <= 0.0 {
            return Err(SimError::Config("sequential.quality_std must be > 0".into()));
        }
        if self.initial_budget <= 0.0 {
            return Err(SimError::Config("sequential.initial_budget must be > 0".into()));
        }
        if !self.quality_means.is_empty() && self.quality_means.len() != self.n_topics {
            return Err(SimError::Config(
                "sequential.quality_means length must equal n_topics".into(),
            ));
        }
        Ok(())
    }

    /// Mean quality of each topic.
    pub fn topic_means(&self) -> Vec<f64> {
        if !self.quality_means.is_empty() {
            return self.quality_means.clone();
        }
        let m = self.n_topics;
        (0..m)
            .map(|t| {
                if m == 1 {
                    0.6
                } else {
                    0.2 + 0.8 * t as f64 / (m - 1) as f64
                }
            })
            .collect()
    }

    /// Budget cost of a round in which a document of `quality` was clicked.
    pub fn click_cost(&self, quality: f64) -> f64 {
        (self.budget_cost_base - self.quality_bonus * quality).max(self.budget_cost_floor)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Click probability of a document for a user: logistic in the user's
/// preference for the document's topic.
pub fn seq_click_prob(user: &UserState, doc: &Document, params: &SeqModelParams) -> Result<f64> {
    if user.exited {
        return Err(SimError::Contract(format!(
            "user {} has exited the platform",
            user.user_id
        )));
    }
    let topic = doc.topic();
    if topic >= user.u.len() {
        return Err(SimError::Contract(format!(
            "document {} topic {topic} outside user feature",
            doc.id
        )));
    }
    Ok(sigmoid(params.click_sharpness * (user.u[topic] - 0.5)))
}

/// Apply the preference drift and budget dynamics after one round.
///
/// Clicked topics drift toward 1 (u + eta*(1-u)); the round's budget cost is
/// reduced by clicked quality, clamped at the positive floor; rounds with no
/// click cost the full base amount.
pub fn seq_transition(
    user: &mut UserState,
    docs: &[&Document],
    clicks: &[u8],
    params: &SeqModelParams,
) {
    if user.exited {
        return;
    }
    let mut cost = 0.0;
    let mut any_click = false;
    for (doc, &c) in docs.iter().zip(clicks.iter()) {
        if c == 0 {
            continue;
        }
        any_click = true;
        let t = doc.topic();
        user.u[t] += params.drift_rate * (1.0 - user.u[t]);
        user.u[t] = user.u[t].clamp(0.0, 1.0);
        cost += params.click_cost(doc.quality());
    }
    if !any_click {
        cost = params.budget_cost_base;
    }
    if let Some(b) = user.budget.as_mut() {
        *b -= cost;
        if *b <= 0.0 {
            user.exited = true;
        }
    }
}

/// Sequential model wrapper implementing the action-model contract.
#[derive(Debug, Clone)]
pub struct SeqModel {
    pub params: SeqModelParams,
}

impl SeqModel {
    pub fn new(params: SeqModelParams) -> Self {
        SeqModel { params }
    }
}

impl ActionModel for SeqModel {
    fn click_probs(&self, user: &UserState, docs: &[&Document]) -> Vec<f64> {
        docs.iter()
            .map(|d| seq_click_prob(user, d, &self.params).expect("active user"))
            .collect()
    }

    fn transition(&self, user: &mut UserState, docs: &[&Document], clicks: &[u8]) {
        seq_transition(user, docs, clicks, &self.params);
    }
}

/// Independent Bernoulli click draws per position.
pub fn sample_clicks<R: Rng>(probs: &[f64], rng: &mut R) -> Vec<u8> {
    probs
        .iter()
        .map(|&p| u8::from(rng.gen::<f64>() < p))
        .collect()
}

/// Generate the slate-scenario document set: `n_groups` groups of four
/// documents with attributes [traveling time, price]. Half the groups are
/// sampled from the decoy-producing rules, the other half are time/price
/// swaps of the first half.
pub fn generate_slate_documents<R: Rng>(n_groups: usize, rng: &mut R) -> Result<DocumentSet> {
    if n_groups % 2 != 0 {
        return Err(SimError::Config("n_groups must be even".into()));
    }
    let mut groups: Vec<[(f64, f64); 4]> = Vec::with_capacity(n_groups);
    for _ in 0..n_groups / 2 {
        let h1 = 0.5 + rng.gen::<f64>() * 0.5;
        let m1 = 1.0 - h1;
        let h2 = h1 + rng.gen::<f64>() * 0.1;
        let m2 = m1 + rng.gen::<f64>() * 0.1;
        let h3 = (1.0 - h1 - rng.gen::<f64>() * 0.1).max(0.0);
        let m3 = (1.0 - m1 - rng.gen::<f64>() * 0.1).max(0.0);
        let h4 = (h1 + h3) / 2.0;
        let m4 = (m1 + m3) / 2.0;
        groups.push([(h1, m1), (h2, m2), (h3, m3), (h4, m4)]);
    }
    for i in 0..n_groups / 2 {
        let g = groups[i];
        groups.push([
            (g[0].1, g[0].0),
            (g[1].1, g[1].0),
            (g[2].1, g[2].0),
            (g[3].1, g[3].0),
        ]);
    }
    let mut docs = Vec::with_capacity(n_groups * 4);
    for (gi, g) in groups.iter().enumerate() {
        for (di, (h, m)) in g.iter().enumerate() {
            docs.push(Document::new((gi * 4 + di) as u32, vec![*h, *m]));
        }
    }
    // Rankers additionally see a document-id indicator. The raw attributes
    // are deliberately ambiguous here -- half the groups are coordinate
    // swaps of the other half -- so a scorer over attributes alone sees the
    // same average label in mirrored regions and cannot express a
    // policy-dependent ranking. The id indicator plays the role of the id
    // embedding every production CTR model carries.
    let n_docs = docs.len();
    for (i, d) in docs.iter_mut().enumerate() {
        let mut onehot = vec![0.0; n_docs];
        onehot[i] = 1.0;
        d.obs = d.attrs.iter().copied().chain(onehot).collect();
    }
    DocumentSet::single_query(docs)
}

/// The worked example group: d1=(0.8,0.2), d2=(1.0,0.4), d3=(0.1,0.8),
/// d4=(0.45,0.5). Used pervasively by tests.
pub fn example_group() -> Vec<Document> {
    vec![
        Document::new(0, vec![0.8, 0.2]),
        Document::new(1, vec![1.0, 0.4]),
        Document::new(2, vec![0.1, 0.8]),
        Document::new(3, vec![0.45, 0.5]),
    ]
}

/// Generate the sequential world: one-hot topic documents with hidden
/// Gaussian quality, and users with uniform initial topic preferences and a
/// full budget.
pub fn generate_sequential_world<R: Rng>(
    params: &SeqModelParams,
    n_users: usize,
    rng: &mut R,
) -> Result<(DocumentSet, Vec<UserState>)> {
    params.validate()?;
    let means = params.topic_means();
    let mut docs = Vec::with_capacity(params.n_topics * params.docs_per_topic);
    for t in 0..params.n_topics {
        for k in 0..params.docs_per_topic {
            let mut attrs = vec![0.0; params.n_topics];
            attrs[t] = 1.0;
            // Box-Muller keeps the dependency surface minimal
            let (a, b): (f64, f64) = (rng.gen::<f64>().max(f64::MIN_POSITIVE), rng.gen());
            let z = (-2.0 * a.ln()).sqrt() * (2.0 * std::f64::consts::PI * b).cos();
            let quality = means[t] + params.quality_std * z;
            docs.push(Document::with_hidden(
                (t * params.docs_per_topic + k) as u32,
                attrs,
                vec![quality],
            ));
        }
    }
    let set = DocumentSet::single_query(docs)?;
    let users = (0..n_users)
        .map(|i| {
            let u0: Vec<f64> = (0..params.n_topics).map(|_| rng.gen::<f64>()).collect();
            UserState::new(i as u32, u0, Some(params.initial_budget))
        })
        .collect();
    Ok((set, users))
}
