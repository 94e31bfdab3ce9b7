//! Reference ranking strategies with privileged access to the behavior
//! model: the unbiased oracle, the greedy enumeration oracle, and the
//! lookahead planner for the sequential scenario.

use itertools::Itertools;

use crate::action::{ActionModel, SeqModelParams};
use crate::error::{Result, SimError};
use crate::types::{DocId, Document, PreferenceTable, UserState};

/// Factorial enumeration is capped at this many documents.
pub const ENUM_LIMIT: usize = 8;

/// A ranking policy: permutes (a subset of) the recalled documents.
/// Strategies are stateless; any cross-round history a policy needs is
/// carried by the pipeline and passed through the context.
pub trait Strategy: Sync {
    fn name(&self) -> &str;

    /// Rank the recalled documents. Returns a permutation of `recall`'s ids;
    /// the pipeline displays the top-K prefix.
    fn rank(&self, user: &UserState, recall: &[&Document], ctx: &RankContext<'_>)
        -> Result<Vec<DocId>>;
}

/// Per-round side information a strategy may consult.
#[derive(Debug, Clone, Copy, Default)]
pub struct RankContext<'a> {
    pub prefs: Option<&'a PreferenceTable>,
    /// Exponential moving average of the user's clicked-document observable
    /// features, maintained by the pipeline (history-dynamic rankers).
    pub history_ema: Option<&'a [f64]>,
}

/// Round-0 view of a user: current feature reset to the initial one.
pub fn initial_view(user: &UserState) -> UserState {
    let mut v = user.clone();
    v.u = v.u0.clone();
    v.exited = false;
    v
}

fn check_enum_limit(n: usize) -> Result<()> {
    if n > ENUM_LIMIT {
        return Err(SimError::EnumerationLimit { n, max: ENUM_LIMIT });
    }
    Ok(())
}

fn sorted_by_id<'a>(docs: &[&'a Document]) -> Vec<&'a Document> {
    let mut v = docs.to_vec();
    v.sort_by_key(|d| d.id);
    v
}

/// Count adjacent pairs whose in-context preferences increase down the list.
fn adjacent_inversions(prefs: &[f64]) -> usize {
    prefs.windows(2).filter(|w| w[0] + 1e-12 < w[1]).count()
}

/// Enumerate every permutation of `docs` that passes the unbiasedness test:
/// in-context preference strengths (under the round-0 user state) are
/// non-increasing down the list. Returns the qualifying permutations in
/// lexicographic id order, or -- when none qualifies -- the permutations
/// minimizing adjacent inversions, with the fallback flag set.
pub fn unbiased_set(
    user0: &UserState,
    docs: &[&Document],
    model: &dyn ActionModel,
) -> Result<(Vec<Vec<DocId>>, bool)> {
    check_enum_limit(docs.len())?;
    if docs.is_empty() {
        return Err(SimError::Contract("cannot rank an empty list".into()));
    }
    let base = sorted_by_id(docs);
    let mut qualifying: Vec<Vec<DocId>> = Vec::new();
    let mut best_inversions = usize::MAX;
    let mut fallback: Vec<Vec<DocId>> = Vec::new();
    for perm in base.iter().copied().permutations(base.len()) {
        let prefs = model.context_prefs(user0, &perm);
        let ids: Vec<DocId> = perm.iter().map(|d| d.id).collect();
        let inv = adjacent_inversions(&prefs);
        if inv == 0 {
            qualifying.push(ids);
        } else if qualifying.is_empty() {
            match inv.cmp(&best_inversions) {
                std::cmp::Ordering::Less => {
                    best_inversions = inv;
                    fallback = vec![ids];
                }
                std::cmp::Ordering::Equal => fallback.push(ids),
                std::cmp::Ordering::Greater => {}
            }
        }
    }
    if qualifying.is_empty() {
        Ok((fallback, true))
    } else {
        Ok((qualifying, false))
    }
}

/// Return an unbiased ranking of `docs` under the round-0 user state: the
/// lexicographically least qualifying permutation, or the
/// inversion-minimizing fallback (flag set) when none qualifies.
pub fn unbiased_rank(
    user0: &UserState,
    docs: &[&Document],
    model: &dyn ActionModel,
) -> Result<(Vec<DocId>, bool)> {
    let (set, flagged) = unbiased_set(user0, docs, model)?;
    // permutations are generated in lexicographic id order
    Ok((set.into_iter().next().expect("nonempty set"), flagged))
}

/// Enumerate all permutations and return the one maximizing expected total
/// clicks (sum of in-context click probabilities); ties broken by
/// lexicographic id sequence.
pub fn greedy_enum_rank(
    user: &UserState,
    docs: &[&Document],
    model: &dyn ActionModel,
) -> Result<Vec<DocId>> {
    check_enum_limit(docs.len())?;
    if docs.is_empty() {
        return Err(SimError::Contract("cannot rank an empty list".into()));
    }
    let base = sorted_by_id(docs);
    let mut best: Option<(f64, Vec<DocId>)> = None;
    for perm in base.iter().copied().permutations(base.len()) {
        let total: f64 = model.click_probs(user, &perm).iter().sum();
        let better = match &best {
            None => true,
            Some((b, _)) => total > *b,
        };
        if better {
            best = Some((total, perm.iter().map(|d| d.id).collect()));
        }
    }
    Ok(best.expect("nonempty").1)
}

/// Pick the document maximizing expected cumulative clicks over a
/// deterministic rollout: keep recommending a virtual document of the
/// candidate's topic at the topic's mean quality, accumulate expected clicks,
/// and apply the expected drift and budget dynamics until the horizon or
/// budget exhaustion. Ties go to the lowest id.
pub fn planner_rank(
    user: &UserState,
    docs: &[&Document],
    params: &SeqModelParams,
    horizon: usize,
) -> Result<DocId> {
    if docs.is_empty() {
        return Err(SimError::Contract("cannot rank an empty list".into()));
    }
    let means = params.topic_means();
    let mut best: Option<(f64, DocId)> = None;
    for doc in sorted_by_id(docs) {
        let topic = doc.topic();
        let quality = means[topic];
        let mut pref = user.u[topic];
        let mut budget = user.budget.unwrap_or(f64::MAX);
        let mut total = 0.0;
        for _ in 0..horizon {
            if budget <= 0.0 {
                break;
            }
            let p = 1.0 / (1.0 + (-params.click_sharpness * (pref - 0.5)).exp());
            total += p;
            pref += p * params.drift_rate * (1.0 - pref);
            budget -= p * params.click_cost(quality) + (1.0 - p) * params.budget_cost_base;
        }
        let better = match &best {
            None => true,
            Some((b, _)) => total > *b + 1e-12,
        };
        if better {
            best = Some((total, doc.id));
        }
    }
    Ok(best.expect("nonempty").1)
}

/// Pick the document with the highest initial preference score; ties go to
/// the lowest id.
pub fn unbiased_sequential_rank(
    user: &UserState,
    docs: &[&Document],
    prefs: &PreferenceTable,
) -> Result<DocId> {
    if docs.is_empty() {
        return Err(SimError::Contract("cannot rank an empty list".into()));
    }
    let mut best: Option<(f64, DocId)> = None;
    for doc in sorted_by_id(docs) {
        let score = prefs.get(user.user_id, doc.id).ok_or_else(|| {
            SimError::StageOrdering(format!(
                "no initial preference for user {} doc {}; run the preference stage first",
                user.user_id, doc.id
            ))
        })?;
        let better = match &best {
            None => true,
            Some((b, _)) => score > *b + 1e-12,
        };
        if better {
            best = Some((score, doc.id));
        }
    }
    Ok(best.expect("nonempty").1)
}

/// Slate-scenario unbiased oracle.
pub struct UnbiasedSlateOracle<'m> {
    pub model: &'m dyn ActionModel,
}

impl Strategy for UnbiasedSlateOracle<'_> {
    fn name(&self) -> &str {
        "unbiased"
    }

    fn rank(
        &self,
        user: &UserState,
        recall: &[&Document],
        _ctx: &RankContext<'_>,
    ) -> Result<Vec<DocId>> {
        let (ranked, _flag) = unbiased_rank(&initial_view(user), recall, self.model)?;
        Ok(ranked)
    }
}

/// Slate-scenario greedy enumeration oracle (also plays the decoy oracle
/// role: the CTR-maximizing permutation places the decoy pair adjacently).
pub struct GreedySlateOracle<'m> {
    pub model: &'m dyn ActionModel,
}

impl Strategy for GreedySlateOracle<'_> {
    fn name(&self) -> &str {
        "greedy"
    }

    fn rank(
        &self,
        user: &UserState,
        recall: &[&Document],
        _ctx: &RankContext<'_>,
    ) -> Result<Vec<DocId>> {
        greedy_enum_rank(user, recall, self.model)
    }
}

/// Sequential-scenario lookahead oracle.
pub struct PlannerOracle {
    pub params: SeqModelParams,
    pub horizon: usize,
}

impl Strategy for PlannerOracle {
    fn name(&self) -> &str {
        "planner"
    }

    fn rank(
        &self,
        user: &UserState,
        recall: &[&Document],
        _ctx: &RankContext<'_>,
    ) -> Result<Vec<DocId>> {
        let chosen = planner_rank(user, recall, &self.params, self.horizon)?;
        Ok(put_first(recall, chosen))
    }
}

/// Sequential-scenario oracle ranking purely by initial preference.
pub struct UnbiasedSeqOracle;

impl Strategy for UnbiasedSeqOracle {
    fn name(&self) -> &str {
        "unbiased"
    }

    fn rank(
        &self,
        user: &UserState,
        recall: &[&Document],
        ctx: &RankContext<'_>,
    ) -> Result<Vec<DocId>> {
        let prefs = ctx.prefs.ok_or_else(|| {
            SimError::StageOrdering("unbiased oracle requires the preference table".into())
        })?;
        let chosen = unbiased_sequential_rank(user, recall, prefs)?;
        Ok(put_first(recall, chosen))
    }
}

fn put_first(recall: &[&Document], chosen: DocId) -> Vec<DocId> {
    let mut rest: Vec<DocId> = recall.iter().map(|d| d.id).filter(|&d| d != chosen).collect();
    rest.sort();
    let mut out = vec![chosen];
    out.extend(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{example_group, seq_click_prob, seq_transition, RrmModel, RrmParams};
    use crate::types::Document;

    fn slate_user() -> UserState {
        UserState::new(0, vec![], None)
    }

    fn refs(docs: &[Document]) -> Vec<&Document> {
        docs.iter().collect()
    }

    #[test]
    fn unbiased_rank_singleton() {
        let g = example_group();
        let model = RrmModel::new(RrmParams::default());
        let docs = vec![g[0].clone()];
        let (ranked, flag) = unbiased_rank(&slate_user(), &refs(&docs), &model).unwrap();
        assert_eq!(ranked, vec![g[0].id]);
        assert!(!flag);
    }

    #[test]
    fn unbiased_rank_sorts_by_choice_probability() {
        // full trio choice probs order d1 > d3 > d2
        let g = example_group();
        let model = RrmModel::new(RrmParams::default());
        let docs = vec![g[0].clone(), g[1].clone(), g[2].clone()];
        let (ranked, flag) = unbiased_rank(&slate_user(), &refs(&docs), &model).unwrap();
        assert!(!flag);
        assert_eq!(ranked, vec![g[0].id, g[2].id, g[1].id]);
    }

    #[test]
    fn unbiased_rank_example_recall_d1_d3_d4() {
        // verified by the pre-build brute-force checker: in-context order
        // d4 > d3 > d1 for the {d1, d3, d4} recall list
        let g = example_group();
        let model = RrmModel::new(RrmParams::default());
        let docs = vec![g[0].clone(), g[2].clone(), g[3].clone()];
        let (ranked, flag) = unbiased_rank(&slate_user(), &refs(&docs), &model).unwrap();
        assert!(!flag);
        assert_eq!(ranked, vec![g[3].id, g[2].id, g[0].id]);
    }

    #[test]
    fn unbiased_rank_enforces_enum_limit() {
        let docs: Vec<Document> = (0..9).map(|i| Document::new(i, vec![0.1, 0.1])).collect();
        let model = RrmModel::new(RrmParams {
            exam_probs: vec![1.0; 9],
            ..Default::default()
        });
        assert!(matches!(
            unbiased_rank(&slate_user(), &refs(&docs), &model),
            Err(SimError::EnumerationLimit { .. })
        ));
    }

    #[test]
    fn greedy_rank_on_example_recall() {
        // exhaustive enumeration pins (d1, d2, d3) as the CTR-maximizing
        // permutation of the example recall list: the decoy d2 directly
        // follows the document it dominates
        let g = example_group();
        let model = RrmModel::new(RrmParams::default());
        let docs = vec![g[0].clone(), g[1].clone(), g[2].clone()];
        let ranked = greedy_enum_rank(&slate_user(), &refs(&docs), &model).unwrap();
        assert_eq!(ranked, vec![g[0].id, g[1].id, g[2].id]);
    }

    #[test]
    fn greedy_rank_order_independent_model_breaks_ties_by_id() {
        let model = RrmModel::new(RrmParams {
            exam_probs: vec![1.0, 1.0, 1.0],
            ..Default::default()
        });
        // identical attributes: every permutation ties
        let docs: Vec<Document> = vec![
            Document::new(2, vec![0.3, 0.3]),
            Document::new(0, vec![0.3, 0.3]),
            Document::new(1, vec![0.3, 0.3]),
        ];
        let ranked = greedy_enum_rank(&slate_user(), &refs(&docs), &model).unwrap();
        assert_eq!(ranked, vec![DocId(0), DocId(1), DocId(2)]);
    }

    #[test]
    fn greedy_rank_k1() {
        let g = example_group();
        let model = RrmModel::new(RrmParams::default());
        let docs = vec![g[2].clone()];
        let ranked = greedy_enum_rank(&slate_user(), &refs(&docs), &model).unwrap();
        assert_eq!(ranked, vec![g[2].id]);
    }

    fn seq_world() -> (Vec<Document>, SeqModelParams) {
        let params = SeqModelParams::default();
        let means = params.topic_means();
        let docs = (0..params.n_topics)
            .map(|t| {
                let mut attrs = vec![0.0; params.n_topics];
                attrs[t] = 1.0;
                Document::with_hidden(t as u32, attrs, vec![means[t]])
            })
            .collect();
        (docs, params)
    }

    #[test]
    fn planner_horizon_one_is_immediate_argmax() {
        let (docs, params) = seq_world();
        let mut u0 = vec![0.3; 10];
        u0[4] = 0.9;
        let user = UserState::new(0, u0, Some(params.initial_budget));
        let chosen = planner_rank(&user, &refs(&docs), &params, 1).unwrap();
        assert_eq!(chosen, DocId(4));
    }

    #[test]
    fn planner_no_drift_uniform_quality_is_immediate_argmax() {
        let (docs, mut params) = seq_world();
        params.drift_rate = 0.0;
        params.quality_means = vec![0.6; 10];
        let docs: Vec<Document> = docs
            .iter()
            .map(|d| Document::with_hidden(d.id.0, d.attrs.clone(), vec![0.6]))
            .collect();
        let mut u0 = vec![0.3; 10];
        u0[7] = 0.8;
        let user = UserState::new(0, u0, Some(params.initial_budget));
        let chosen = planner_rank(&user, &refs(&docs), &params, 20).unwrap();
        assert_eq!(chosen, DocId(7));
    }

    #[test]
    fn planner_beats_unbiased_on_total_clicks() {
        use rand::SeedableRng;
        let (docs, params) = seq_world();
        let mut totals = [0.0f64; 2];
        for (which, use_planner) in [(0usize, false), (1usize, true)] {
            let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(17);
            for i in 0..400u32 {
                use rand::Rng;
                let u0: Vec<f64> = (0..10).map(|_| rng2.gen::<f64>()).collect();
                let mut prefs = PreferenceTable::default();
                let user0 = UserState::new(i, u0.clone(), Some(params.initial_budget));
                for d in &docs {
                    prefs.insert(i, d.id, seq_click_prob(&user0, d, &params).unwrap());
                }
                let mut user = user0.clone();
                for _ in 0..20 {
                    if user.exited {
                        break;
                    }
                    let chosen = if use_planner {
                        planner_rank(&user, &refs(&docs), &params, 20).unwrap()
                    } else {
                        unbiased_sequential_rank(&user, &refs(&docs), &prefs).unwrap()
                    };
                    let doc = docs.iter().find(|d| d.id == chosen).unwrap();
                    let p = seq_click_prob(&user, doc, &params).unwrap();
                    totals[which] += p;
                    let click = u8::from(rng2.gen::<f64>() < p);
                    seq_transition(&mut user, &[doc], &[click], &params);
                }
            }
        }
        assert!(
            totals[1] > totals[0],
            "planner {} vs unbiased {}",
            totals[1],
            totals[0]
        );
    }

    #[test]
    fn unbiased_sequential_ties_go_to_lowest_id() {
        let (docs, params) = seq_world();
        let user = UserState::new(0, vec![0.5; 10], Some(params.initial_budget));
        let mut prefs = PreferenceTable::default();
        for d in &docs {
            prefs.insert(0, d.id, 0.5);
        }
        let chosen = unbiased_sequential_rank(&user, &refs(&docs), &prefs).unwrap();
        assert_eq!(chosen, DocId(0));
    }

    #[test]
    fn unbiased_sequential_requires_preferences() {
        let (docs, params) = seq_world();
        let user = UserState::new(0, vec![0.5; 10], Some(params.initial_budget));
        let prefs = PreferenceTable::default();
        assert!(matches!(
            unbiased_sequential_rank(&user, &refs(&docs), &prefs),
            Err(SimError::StageOrdering(_))
        ));
    }

    #[test]
    fn unbiased_sequential_ignores_drift() {
        let (docs, params) = seq_world();
        let mut user = UserState::new(0, vec![0.2; 10], Some(params.initial_budget));
        let mut prefs = PreferenceTable::default();
        for d in &docs {
            prefs.insert(0, d.id, if d.id == DocId(3) { 0.9 } else { 0.1 });
        }
        user.u[8] = 1.0; // drifted hard toward topic 8
        let chosen = unbiased_sequential_rank(&user, &refs(&docs), &prefs).unwrap();
        assert_eq!(chosen, DocId(3));
    }
}
