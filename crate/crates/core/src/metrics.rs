//! Manipulation-aware evaluation metrics: CTR, favorite sets, FCTR,
//! ManiScore, rank-biased-overlap preference shift, position statistics, and
//! offline AUC/NDCG.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::action::ActionModel;
use crate::error::{Result, SimError};
use crate::oracles::unbiased_set;
use crate::types::{DocId, Document, DocumentSet, InteractionLog, UserState};

/// Expected clicks per displayed position.
pub fn ctr(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(SimError::Contract("CTR of an empty list".into()));
    }
    Ok(probs.iter().sum::<f64>() / probs.len() as f64)
}

/// Fraction of expected clicks that land on favorite documents
/// (ratio-of-expectations form). `None` when the list draws no clicks at
/// all; such rows are excluded from averages.
pub fn fctr(probs: &[f64], docs: &[DocId], favorites: &BTreeSet<DocId>) -> Option<f64> {
    let den: f64 = probs.iter().sum();
    if den <= 0.0 {
        return None;
    }
    let num: f64 = probs
        .iter()
        .zip(docs.iter())
        .filter(|(_, d)| favorites.contains(d))
        .map(|(p, _)| p)
        .sum();
    Some(num / den)
}

/// The K documents with the highest initial preference score for one user;
/// ties broken by ascending id.
pub fn favorite_set(scores: &[(DocId, f64)], k: usize) -> Vec<DocId> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    sorted.into_iter().take(k).map(|(d, _)| d).collect()
}

/// ManiScore decomposition for one evaluated list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManiScoreReport {
    pub ctr_d: f64,
    pub fctr_d: f64,
    /// max CTR over the unbiased rankings.
    pub ctr_u: f64,
    /// min FCTR over the unbiased rankings.
    pub fctr_u: f64,
    pub satisfaction_term: f64,
    pub revenue_term: f64,
    pub score: f64,
    /// Set when no permutation passed the unbiasedness test and the
    /// inversion-minimizing fallback set was used.
    pub unbiased_flag: bool,
}

fn normalized_gap(hi: f64, lo: f64) -> f64 {
    let den = hi + lo;
    if den <= 0.0 {
        return 0.0;
    }
    ((hi - lo) / den).max(0.0)
}

/// ManiScore of a displayed list: exp(satisfaction term + revenue term),
/// comparing the list's FCTR/CTR against the extremal unbiased rankings of
/// the same documents under the round-0 user state.
pub fn maniscore(
    user0: &UserState,
    displayed: &[&Document],
    favorites: &BTreeSet<DocId>,
    model: &dyn ActionModel,
) -> Result<ManiScoreReport> {
    let probs = model.click_probs(user0, displayed);
    let ids: Vec<DocId> = displayed.iter().map(|d| d.id).collect();
    let ctr_d = ctr(&probs)?;
    let fctr_d = fctr(&probs, &ids, favorites).unwrap_or(0.0);

    let (unbiased, flag) = unbiased_set(user0, displayed, model)?;
    let mut ctr_u = f64::NEG_INFINITY;
    let mut fctr_u = f64::INFINITY;
    for perm in &unbiased {
        let docs: Vec<&Document> = perm
            .iter()
            .map(|id| *displayed.iter().find(|d| d.id == *id).expect("same docs"))
            .collect();
        let p = model.click_probs(user0, &docs);
        ctr_u = ctr_u.max(ctr(&p)?);
        fctr_u = fctr_u.min(fctr(&p, perm, favorites).unwrap_or(0.0));
    }
    let satisfaction_term = normalized_gap(fctr_u, fctr_d);
    let revenue_term = normalized_gap(ctr_d, ctr_u);
    Ok(ManiScoreReport {
        ctr_d,
        fctr_d,
        ctr_u,
        fctr_u,
        satisfaction_term,
        revenue_term,
        score: (satisfaction_term + revenue_term).exp(),
        unbiased_flag: flag,
    })
}

/// Truncated rank-biased overlap, normalized so identical length-K lists
/// score exactly 1.
pub fn rbo_similarity(l0: &[DocId], lr: &[DocId], p: f64, k: usize) -> Result<f64> {
    if l0.len() != lr.len() || l0.len() != k {
        return Err(SimError::Contract(format!(
            "rbo requires two length-{k} lists, got {} and {}",
            l0.len(),
            lr.len()
        )));
    }
    if !(0.0 < p && p < 1.0) {
        return Err(SimError::Contract("rbo persistence must be in (0, 1)".into()));
    }
    let mut seen0 = BTreeSet::new();
    let mut seenr = BTreeSet::new();
    let mut sum = 0.0;
    let mut overlap = 0usize;
    for d in 0..k {
        // incremental overlap of the depth-(d+1) prefixes
        if seenr.contains(&l0[d]) {
            overlap += 1;
        }
        if seen0.contains(&lr[d]) {
            overlap += 1;
        }
        if l0[d] == lr[d] {
            overlap += 1;
        }
        seen0.insert(l0[d]);
        seenr.insert(lr[d]);
        sum += p.powi(d as i32) * overlap as f64 / (d + 1) as f64;
    }
    Ok((1.0 - p) * sum / (1.0 - p.powi(k as i32)))
}

/// Top-K preference list of one user state: documents sorted by descending
/// singleton click score, ties by ascending id.
pub fn preference_list(
    user: &UserState,
    docs: &DocumentSet,
    model: &dyn ActionModel,
    k: usize,
) -> Vec<DocId> {
    let scores: Vec<(DocId, f64)> = docs
        .bound_ids()
        .iter()
        .map(|id| (*id, model.singleton_prob(user, docs.get(*id))))
        .collect();
    favorite_set(&scores, k)
}

/// Preference shift of the current user state against the initial one:
/// 1 - RBO(top-K initial list, top-K current list).
pub fn preference_shift(
    user: &UserState,
    docs: &DocumentSet,
    model: &dyn ActionModel,
    k: usize,
    p: f64,
) -> Result<f64> {
    let l0 = preference_list(&crate::oracles::initial_view(user), docs, model, k);
    let lr = preference_list(user, docs, model, k);
    if l0 == lr {
        return Ok(0.0);
    }
    // clamp away normalization round-off so the shift stays in [0, 1]
    Ok((1.0 - rbo_similarity(&l0, &lr, p, k)?).clamp(0.0, 1.0))
}

/// Average slate position (1-indexed) of the per-user favorite and
/// least-favorite documents, over the slates where each appears.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    pub favorite_avg: Option<f64>,
    pub favorite_count: usize,
    pub least_favorite_avg: Option<f64>,
    pub least_favorite_count: usize,
}

/// `extremes` maps user_id → (favorite doc, least-favorite doc).
pub fn position_stats(
    log: &InteractionLog,
    extremes: &std::collections::BTreeMap<u32, (DocId, DocId)>,
) -> PositionStats {
    let mut fav = (0.0, 0usize);
    let mut least = (0.0, 0usize);
    for row in &log.rows {
        let Some((f, l)) = extremes.get(&row.user_id) else {
            continue;
        };
        for (pos, d) in row.slate.docs.iter().enumerate() {
            if d == f {
                fav.0 += (pos + 1) as f64;
                fav.1 += 1;
            }
            if d == l {
                least.0 += (pos + 1) as f64;
                least.1 += 1;
            }
        }
    }
    PositionStats {
        favorite_avg: (fav.1 > 0).then(|| fav.0 / fav.1 as f64),
        favorite_count: fav.1,
        least_favorite_avg: (least.1 > 0).then(|| least.0 / least.1 as f64),
        least_favorite_count: least.1,
    }
}

fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &x in &idx[i..=j] {
            ranks[x] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of midranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = midranks(xs);
    let ry = midranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// ROC-AUC via the rank statistic; `None` when labels are single-class.
pub fn offline_auc(predictions: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(predictions.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let ranks = midranks(predictions);
    let rank_sum: f64 = labels
        .iter()
        .zip(ranks.iter())
        .filter(|(&l, _)| l == 1)
        .map(|(_, r)| r)
        .sum();
    let auc = (rank_sum - pos as f64 * (pos as f64 + 1.0) / 2.0) / (pos as f64 * neg as f64);
    Some(auc)
}

/// NDCG of one slate with binary gains and log2 discounts; `labels` must be
/// in ranked (displayed) order.
pub fn offline_ndcg(ranked_labels: &[u8]) -> f64 {
    let dcg: f64 = ranked_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| l as f64 / ((i + 2) as f64).log2())
        .sum();
    let mut ideal = ranked_labels.to_vec();
    ideal.sort_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .enumerate()
        .map(|(i, &l)| l as f64 / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        // no relevant documents: conventionally a perfect (vacuous) ranking
        1.0
    } else {
        dcg / idcg
    }
}
