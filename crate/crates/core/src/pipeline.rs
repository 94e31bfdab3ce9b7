//! The four-stage evaluation pipeline: initial preferences, data collection
//! with mixing, training + online interaction, and metric computation.
//! Per-user simulation is data-parallel; all randomness comes from
//! per-user streams derived from the configured seed.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{
    generate_sequential_world, generate_slate_documents, sample_clicks, ActionModel, RrmModel,
    SeqModel,
};
use crate::config::{SamplerKind, ScenarioConfig, ScenarioKind};
use crate::error::{Result, SimError};
use crate::exec::map_indexed;
use crate::metrics::{
    self, maniscore, position_stats, preference_list, rbo_similarity, PositionStats,
};
use crate::oracles::{
    GreedySlateOracle, PlannerOracle, RankContext, Strategy, UnbiasedSeqOracle,
    UnbiasedSlateOracle,
};
use crate::rankers::{
    train, update_history_ema, RankerKind, RankerModel, RankerStrategy, TrainConfig, TrainReport,
    HISTORY_DECAY,
};
use crate::types::{
    DocId, Document, DocumentSet, InteractionLog, LogRow, PreferenceTable, Slate, UserState,
};

/// The action model in force for a scenario.
#[derive(Debug, Clone)]
pub enum WorldModel {
    Rrm(RrmModel),
    Seq(SeqModel),
}

impl WorldModel {
    pub fn as_dyn(&self) -> &dyn ActionModel {
        match self {
            WorldModel::Rrm(m) => m,
            WorldModel::Seq(m) => m,
        }
    }
}

/// Everything a run needs: documents, the user population at round 0, and
/// the action model.
pub struct World {
    pub cfg: ScenarioConfig,
    pub docs: DocumentSet,
    pub users: Vec<UserState>,
    pub model: WorldModel,
}

fn user_stream(seed: u64, user_id: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (user_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Deterministically build the scenario world from its config.
pub fn build_world(cfg: &ScenarioConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (docs, users, model) = match cfg.scenario {
        ScenarioKind::SyntheticSlate => {
            let docs = generate_slate_documents(cfg.n_groups(), &mut rng)?;
            let users = (0..cfg.population())
                .map(|i| UserState::new(i as u32, Vec::new(), None))
                .collect();
            (docs, users, WorldModel::Rrm(RrmModel::new(cfg.slate.clone())))
        }
        ScenarioKind::SyntheticSequential => {
            let (docs, users) =
                generate_sequential_world(&cfg.sequential, cfg.population(), &mut rng)?;
            (docs, users, WorldModel::Seq(SeqModel::new(cfg.sequential.clone())))
        }
    };
    Ok(World { cfg: cfg.clone(), docs, users, model })
}

impl World {
    pub fn initial_budget(&self) -> Option<f64> {
        match self.cfg.scenario {
            ScenarioKind::SyntheticSlate => None,
            ScenarioKind::SyntheticSequential => Some(self.cfg.sequential.initial_budget),
        }
    }

    /// Observable user feature width / document attr width.
    pub fn feature_dims(&self) -> (usize, usize) {
        let user_dim = self.users.first().map_or(0, |u| u.obs.len());
        let doc_dim = self.docs.docs.first().map_or(0, |d| d.obs.len());
        (user_dim, doc_dim)
    }

    /// Look up the built-in oracle strategies by name.
    pub fn oracle_by_name(&self, name: &str) -> Result<Box<dyn Strategy + '_>> {
        match (self.cfg.scenario, name) {
            (ScenarioKind::SyntheticSlate, "unbiased") => {
                Ok(Box::new(UnbiasedSlateOracle { model: self.model.as_dyn() }))
            }
            (ScenarioKind::SyntheticSlate, "greedy") => {
                Ok(Box::new(GreedySlateOracle { model: self.model.as_dyn() }))
            }
            (ScenarioKind::SyntheticSequential, "unbiased") => Ok(Box::new(UnbiasedSeqOracle)),
            (ScenarioKind::SyntheticSequential, "planner") => Ok(Box::new(PlannerOracle {
                params: self.cfg.sequential.clone(),
                horizon: self.cfg.planner_horizon,
            })),
            _ => Err(SimError::Config(format!(
                "no oracle named '{name}' for this scenario (expected {})",
                match self.cfg.scenario {
                    ScenarioKind::SyntheticSlate => "'unbiased' or 'greedy'",
                    ScenarioKind::SyntheticSequential => "'unbiased' or 'planner'",
                }
            ))),
        }
    }
}

/// Stage 1: singleton click probability of every (user, document) pair at
/// the round-0 state. Pure; recomputation yields an identical table.
pub fn compute_initial_preferences(world: &World) -> PreferenceTable {
    let model = world.model.as_dyn();
    let per_user: Vec<Vec<(u32, DocId, f64)>> = map_indexed(world.users.len(), |i| {
        let user = &world.users[i];
        world
            .docs
            .docs
            .iter()
            .map(|d| (user.user_id, d.id, model.singleton_prob(user, d)))
            .collect()
    });
    let mut table = PreferenceTable::default();
    for rows in per_user {
        for (uid, doc, score) in rows {
            table.insert(uid, doc, score);
        }
    }
    table
}

/// Per-document (shown, clicked) counts backing the ctr-weighted sampler.
#[derive(Debug, Clone, Default)]
pub struct ClickHistory {
    counts: BTreeMap<DocId, (u64, u64)>,
}

impl ClickHistory {
    pub fn record(&mut self, doc: DocId, clicked: bool) {
        let e = self.counts.entry(doc).or_insert((0, 0));
        e.0 += 1;
        e.1 += u64::from(clicked);
    }

    /// Laplace-smoothed click rate; 0.5 before any history exists.
    fn rate(&self, doc: DocId) -> f64 {
        let (shown, clicked) = self.counts.get(&doc).copied().unwrap_or((0, 0));
        (clicked as f64 + 1.0) / (shown as f64 + 2.0)
    }
}

/// Stage 2 document sampler: uniform or proportional-to-click-rate, both
/// without replacement.
pub fn sample_recall<R: Rng>(
    docs: &DocumentSet,
    sampler: SamplerKind,
    size: usize,
    rng: &mut R,
    history: &ClickHistory,
) -> Result<Vec<DocId>> {
    if size > docs.len() {
        return Err(SimError::Config(format!(
            "recall size {size} exceeds the {}-document set",
            docs.len()
        )));
    }
    let ids = docs.bound_ids();
    match sampler {
        SamplerKind::Random => {
            let mut pool: Vec<DocId> = ids.to_vec();
            pool.shuffle(rng);
            pool.truncate(size);
            Ok(pool)
        }
        SamplerKind::CtrWeighted => {
            let mut pool: Vec<DocId> = ids.to_vec();
            let mut out = Vec::with_capacity(size);
            for _ in 0..size {
                let weights: Vec<f64> = pool.iter().map(|d| history.rate(*d)).collect();
                let total: f64 = weights.iter().sum();
                let mut t = rng.gen::<f64>() * total;
                let mut pick = pool.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    t -= w;
                    if t <= 0.0 {
                        pick = i;
                        break;
                    }
                }
                out.push(pool.remove(pick));
            }
            Ok(out)
        }
    }
}

/// The slate scenario's fixed recall rule: pick a group uniformly, then one
/// of its two candidate lists {d1,d2,d3} / {d1,d3,d4} equiprobably.
pub fn slate_scenario_recall<R: Rng>(n_groups: usize, rng: &mut R) -> Vec<DocId> {
    let g = rng.gen_range(0..n_groups) as u32;
    let base = g * 4;
    if rng.gen_bool(0.5) {
        vec![DocId(base), DocId(base + 1), DocId(base + 2)]
    } else {
        vec![DocId(base), DocId(base + 2), DocId(base + 3)]
    }
}

fn simulate_user(
    world: &World,
    strategy: &dyn Strategy,
    prefs: &PreferenceTable,
    idx: usize,
    rounds: u32,
    seed: u64,
) -> Result<(Vec<LogRow>, UserState)> {
    let mut user = world.users[idx].clone();
    user.reset(world.initial_budget());
    let mut rng = user_stream(seed, user.user_id);
    let model = world.model.as_dyn();
    let k = world.cfg.slate_size();
    // Cold-start prior: the click-history EMA starts from the user profile
    // when the profile lives in document-attribute space.
    let (user_dim, doc_dim) = world.feature_dims();
    let mut ema: Vec<f64> =
        if user_dim == doc_dim { user.obs.clone() } else { Vec::new() };
    let mut history = ClickHistory::default();
    let mut rows = Vec::new();
    for round in 1..=rounds {
        if user.exited {
            break;
        }
        let recall_ids = match world.cfg.scenario {
            ScenarioKind::SyntheticSlate => slate_scenario_recall(world.cfg.n_groups(), &mut rng),
            ScenarioKind::SyntheticSequential => sample_recall(
                &world.docs,
                world.cfg.sampler,
                world.cfg.recall_size(),
                &mut rng,
                &history,
            )?,
        };
        let recall: Vec<&Document> = recall_ids.iter().map(|id| world.docs.get(*id)).collect();
        let ctx = RankContext {
            prefs: Some(prefs),
            history_ema: (!ema.is_empty()).then(|| ema.as_slice()),
        };
        let mut ranked = strategy.rank(&user, &recall, &ctx)?;
        ranked.truncate(k);
        let shown: Vec<&Document> = ranked.iter().map(|id| world.docs.get(*id)).collect();
        let probs = model.click_probs(&user, &shown);
        let clicks = sample_clicks(&probs, &mut rng);
        model.transition(&mut user, &shown, &clicks);
        let mut hidden = user.u.clone();
        if let Some(b) = user.budget {
            hidden.push(b);
        }
        rows.push(LogRow {
            user_id: user.user_id,
            round,
            user_obs: user.obs.clone(),
            user_hidden: hidden,
            slate: Slate {
                docs: ranked.clone(),
                click_probs: probs,
                clicks: clicks.clone(),
                strategy_tag: strategy.name().to_string(),
            },
        });
        let clicked_attrs: Vec<&[f64]> = shown
            .iter()
            .zip(&clicks)
            .filter(|(_, &c)| c == 1)
            .map(|(d, _)| d.obs.as_slice())
            .collect();
        update_history_ema(&mut ema, &clicked_attrs, HISTORY_DECAY);
        for (id, c) in ranked.iter().zip(&clicks) {
            history.record(*id, *c == 1);
        }
    }
    Ok((rows, user))
}

/// Stage 2/3 interaction loop: per user, per round, recall → rank → show
/// top-K → sample clicks → transition → log. Returns the canonical
/// (user, round)-ordered log and the final user states.
pub fn collect(
    world: &World,
    strategy: &dyn Strategy,
    prefs: &PreferenceTable,
    rounds: u32,
    seed: u64,
) -> Result<(InteractionLog, Vec<UserState>)> {
    collect_mode(world, strategy, prefs, rounds, seed, crate::exec::ExecMode::Parallel)
}

/// `collect` with an explicit execution mode; the sequential path exists for
/// the benchmark suite and produces identical output.
pub fn collect_mode(
    world: &World,
    strategy: &dyn Strategy,
    prefs: &PreferenceTable,
    rounds: u32,
    seed: u64,
    mode: crate::exec::ExecMode,
) -> Result<(InteractionLog, Vec<UserState>)> {
    if !prefs.is_complete(&world.users, &world.docs) {
        return Err(SimError::StageOrdering(
            "preference table is incomplete; run the preference stage first".into(),
        ));
    }
    let results: Vec<Result<(Vec<LogRow>, UserState)>> =
        crate::exec::map_mode(mode, world.users.len(), |i| {
            simulate_user(world, strategy, prefs, i, rounds, seed)
        });
    let mut log = InteractionLog::default();
    let mut finals = Vec::with_capacity(world.users.len());
    for r in results {
        let (rows, user) = r?;
        log.rows.extend(rows);
        finals.push(user);
    }
    Ok((log, finals))
}

/// Stage 2 mixing: per user, an α fraction of their rounds (rounded to
/// nearest, ties up) comes from `log_a`, the rest from `log_b`; round
/// indices and provenance tags are preserved.
pub fn mix(
    log_a: &InteractionLog,
    log_b: &InteractionLog,
    alpha: f64,
    seed: u64,
) -> Result<InteractionLog> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SimError::Config("mix ratio must be in [0, 1]".into()));
    }
    let index = |log: &InteractionLog| -> BTreeMap<u32, BTreeMap<u32, LogRow>> {
        let mut m: BTreeMap<u32, BTreeMap<u32, LogRow>> = BTreeMap::new();
        for row in &log.rows {
            m.entry(row.user_id).or_default().insert(row.round, row.clone());
        }
        m
    };
    let a = index(log_a);
    let b = index(log_b);
    if a.keys().ne(b.keys()) {
        return Err(SimError::Contract(
            "mix requires logs over the same user population".into(),
        ));
    }
    let mut out = InteractionLog::default();
    for (uid, rounds_a) in &a {
        let rounds_b = &b[uid];
        if rounds_a.keys().ne(rounds_b.keys()) {
            return Err(SimError::Contract(format!(
                "mix requires matching rounds per user (user {uid} differs)"
            )));
        }
        let round_ids: Vec<u32> = rounds_a.keys().copied().collect();
        let n = round_ids.len();
        // nearest integer, ties up
        let k = ((n as f64) * alpha + 0.5).floor() as usize;
        let mut rng = user_stream(seed, *uid);
        let mut picks = round_ids.clone();
        picks.shuffle(&mut rng);
        let from_a: BTreeSet<u32> = picks.into_iter().take(k).collect();
        for r in round_ids {
            let row = if from_a.contains(&r) { &rounds_a[&r] } else { &rounds_b[&r] };
            out.rows.push(row.clone());
        }
    }
    Ok(out)
}

/// One point of the per-round evaluation curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundCurve {
    pub round: u32,
    pub ctr: f64,
    pub ps: f64,
}

/// Stage 4 output for one evaluated policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub policy: String,
    pub alpha: f64,
    pub seed: u64,
    pub ctr: f64,
    /// `None` when every evaluated slate drew zero expected clicks.
    pub fctr: Option<f64>,
    pub maniscore: f64,
    pub ps: f64,
    pub position: PositionStats,
    pub auc: Option<f64>,
    pub ndcg: Option<f64>,
    /// Rows whose unbiased reference set came from the inversion-minimizing
    /// fallback rather than a strict Def-3.4 pass.
    pub unbiased_fallback_rows: usize,
    pub curves: Vec<RoundCurve>,
}

/// Identification of a report plus the offline training numbers that cannot
/// be re-derived from the interaction log alone.
#[derive(Debug, Clone, Default)]
pub struct ReportMeta {
    pub policy: String,
    pub alpha: f64,
    pub seed: u64,
    pub auc: Option<f64>,
    pub ndcg: Option<f64>,
}

fn reconstruct_state(template: &UserState, hidden: &[f64]) -> UserState {
    let mut u = template.clone();
    u.reset(None);
    if !hidden.is_empty() {
        let n = template.u0.len();
        u.u = hidden[..n].to_vec();
        u.budget = hidden.get(n).copied();
    }
    u
}

/// Stage 4: compute every metric from a stored interaction log. Pure in
/// (world, prefs, log, meta), which is what makes `verify` possible.
pub fn report_from_log(
    world: &World,
    prefs: &PreferenceTable,
    log: &InteractionLog,
    rounds: u32,
    meta: &ReportMeta,
) -> Result<MetricReport> {
    if !prefs.is_complete(&world.users, &world.docs) {
        return Err(SimError::StageOrdering(
            "preference table is incomplete; run the preference stage first".into(),
        ));
    }
    let model = world.model.as_dyn();
    let k = world.cfg.slate_size();
    let fav_k = world.cfg.favorite_k();
    let n_users = world.users.len();
    let ps_k = world.cfg.metrics.ps_k.min(world.docs.len());
    let rbo_p = world.cfg.metrics.rbo_p;

    // per-user global favorite sets + position extremes from Stage 1
    let mut global_favs: BTreeMap<u32, BTreeSet<DocId>> = BTreeMap::new();
    let mut extremes: BTreeMap<u32, (DocId, DocId)> = BTreeMap::new();
    for user in &world.users {
        let scores: Vec<(DocId, f64)> = world
            .docs
            .bound_ids()
            .iter()
            .map(|id| (*id, prefs.get(user.user_id, *id).expect("complete table")))
            .collect();
        let favs = metrics::favorite_set(&scores, fav_k);
        let best = favs[0];
        let worst = metrics::favorite_set(
            &scores.iter().map(|(d, s)| (*d, -s)).collect::<Vec<_>>(),
            1,
        )[0];
        global_favs.insert(user.user_id, favs.into_iter().collect());
        extremes.insert(user.user_id, (best, worst));
    }

    // favorites used for FCTR/ManiScore: slate scenario narrows to the
    // displayed group (the recall list IS the slate there)
    let row_favorites = |row: &LogRow| -> BTreeSet<DocId> {
        match world.cfg.scenario {
            ScenarioKind::SyntheticSlate => {
                let scores: Vec<(DocId, f64)> = row
                    .slate
                    .docs
                    .iter()
                    .map(|id| (*id, prefs.get(row.user_id, *id).expect("complete table")))
                    .collect();
                metrics::favorite_set(&scores, fav_k).into_iter().collect()
            }
            ScenarioKind::SyntheticSequential => global_favs[&row.user_id].clone(),
        }
    };

    let mut prob_sum = 0.0;
    let mut fctr_sum = 0.0;
    let mut fctr_n = 0usize;
    let mut mani_sum = 0.0;
    let mut mani_n = 0usize;
    let mut fallback_rows = 0usize;
    let per_row: Vec<(f64, Option<f64>, f64, bool)> = map_indexed(log.rows.len(), |i| {
        let row = &log.rows[i];
        let favs = row_favorites(row);
        let p_sum: f64 = row.slate.click_probs.iter().sum();
        let f = metrics::fctr(&row.slate.click_probs, &row.slate.docs, &favs);
        let user0 = &world.users[row.user_id as usize];
        let displayed: Vec<&Document> =
            row.slate.docs.iter().map(|id| world.docs.get(*id)).collect();
        let mani =
            maniscore(&crate::oracles::initial_view(user0), &displayed, &favs, model)
                .expect("displayed slate within enumeration limits");
        (p_sum, f, mani.score, mani.unbiased_flag)
    });
    for (p_sum, f, m, flag) in per_row {
        prob_sum += p_sum;
        if let Some(f) = f {
            fctr_sum += f;
            fctr_n += 1;
        }
        mani_sum += m;
        mani_n += 1;
        fallback_rows += usize::from(flag);
    }
    // exited users count as zero-click samples: the denominator covers the
    // full population × rounds × slate size
    let ctr = prob_sum / (n_users as f64 * rounds as f64 * k as f64);
    let fctr = (fctr_n > 0).then(|| fctr_sum / fctr_n as f64);
    let mani = if mani_n > 0 { mani_sum / mani_n as f64 } else { 1.0 };

    // preference shift: per-round curves with carry-forward for exited
    // users, final-round value reported
    let mut by_user: BTreeMap<u32, BTreeMap<u32, &LogRow>> = BTreeMap::new();
    for row in &log.rows {
        by_user.entry(row.user_id).or_default().insert(row.round, row);
    }
    let ps_per_user: Vec<Vec<f64>> = map_indexed(n_users, |i| {
        let user = &world.users[i];
        let l0 = preference_list(&crate::oracles::initial_view(user), &world.docs, model, ps_k);
        let rows = by_user.get(&user.user_id);
        let mut current = 0.0;
        let mut out = Vec::with_capacity(rounds as usize);
        for round in 1..=rounds {
            if let Some(row) = rows.and_then(|m| m.get(&round)) {
                let state = reconstruct_state(user, &row.user_hidden);
                current = if state.u == user.u0 {
                    0.0
                } else {
                    let lr = preference_list(&state, &world.docs, model, ps_k);
                    1.0 - rbo_similarity(&l0, &lr, rbo_p, ps_k).expect("matched lengths")
                };
            }
            out.push(current);
        }
        out
    });
    let mut curves = Vec::with_capacity(rounds as usize);
    for (ri, round) in (1..=rounds).enumerate() {
        let round_prob: f64 = log
            .rows
            .iter()
            .filter(|r| r.round == round)
            .map(|r| r.slate.click_probs.iter().sum::<f64>())
            .sum();
        let ps_round: f64 =
            ps_per_user.iter().map(|v| v[ri]).sum::<f64>() / n_users.max(1) as f64;
        curves.push(RoundCurve {
            round,
            ctr: round_prob / (n_users as f64 * k as f64),
            ps: ps_round,
        });
    }
    let ps = curves.last().map_or(0.0, |c| c.ps);

    Ok(MetricReport {
        policy: meta.policy.clone(),
        alpha: meta.alpha,
        seed: meta.seed,
        ctr,
        fctr,
        maniscore: mani,
        ps,
        position: position_stats(log, &extremes),
        auc: meta.auc,
        ndcg: meta.ndcg,
        unbiased_fallback_rows: fallback_rows,
        curves,
    })
}

/// Stage 3+4: run the interaction loop with a policy on the reset
/// population, then compute the full report from the produced log.
pub fn evaluate(
    world: &World,
    strategy: &dyn Strategy,
    prefs: &PreferenceTable,
    seed: u64,
    meta: &ReportMeta,
) -> Result<(MetricReport, InteractionLog)> {
    let rounds = world.cfg.rounds();
    let (log, _finals) = collect(world, strategy, prefs, rounds, seed)?;
    let report = report_from_log(world, prefs, &log, rounds, meta)?;
    Ok((report, log))
}

/// The two collection strategies mixed in Stage 2: `a` is the more
/// manipulative one (mix α = fraction from `a`).
pub fn collection_pair(scenario: ScenarioKind) -> (&'static str, &'static str) {
    match scenario {
        ScenarioKind::SyntheticSlate => ("greedy", "unbiased"),
        ScenarioKind::SyntheticSequential => ("planner", "unbiased"),
    }
}

/// Artifacts of one sweep cell that later stages (reports, manifests,
/// verification) consume.
pub struct SweepCell {
    pub meta: ReportMeta,
    pub outcome: std::result::Result<(MetricReport, InteractionLog), String>,
}

/// Train one ranker kind on `train_log` and evaluate it online.
pub fn train_and_evaluate(
    world: &World,
    prefs: &PreferenceTable,
    train_log: &InteractionLog,
    kind: RankerKind,
    train_cfg: &TrainConfig,
    eval_seed: u64,
) -> Result<(MetricReport, InteractionLog, RankerModel, TrainReport)> {
    let (user_dim, doc_dim) = world.feature_dims();
    let mut model = RankerModel::init(kind, user_dim, doc_dim, 16, train_cfg.seed);
    let train_report = train(&mut model, train_log, &world.docs, train_cfg)?;
    let strategy = RankerStrategy::new(&model, world.cfg.slate_size());
    let meta = ReportMeta {
        policy: kind.name().to_string(),
        alpha: train_cfg.mix_ratio,
        // label with the training seed; eval_seed only drives the RNG
        seed: train_cfg.seed,
        auc: train_report.auc,
        ndcg: train_report.ndcg,
    };
    let (report, log) = evaluate(world, &strategy, prefs, eval_seed, &meta)?;
    Ok((report, log, model, train_report))
}

/// Full mix-ratio × ranker-kind × seed grid. Individual cell failures are
/// recorded and the sweep continues; output order is fixed as
/// (seed, ratio, kind).
pub fn sweep(
    cfg: &ScenarioConfig,
    ratios: &[f64],
    kinds: &[RankerKind],
    seeds: &[u64],
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::new();
    for &seed in seeds {
        let mut cell_cfg = cfg.clone();
        cell_cfg.seed = seed;
        let world = build_world(&cell_cfg)?;
        let prefs = compute_initial_preferences(&world);
        let (name_a, name_b) = collection_pair(cfg.scenario);
        let strat_a = world.oracle_by_name(name_a)?;
        let strat_b = world.oracle_by_name(name_b)?;
        let rounds = world.cfg.rounds();
        let (log_a, _) = collect(&world, strat_a.as_ref(), &prefs, rounds, seed)?;
        let (log_b, _) = collect(&world, strat_b.as_ref(), &prefs, rounds, seed.wrapping_add(1))?;
        for &alpha in ratios {
            let mixed = mix(&log_a, &log_b, alpha, seed)?;
            for &kind in kinds {
                let train_cfg = TrainConfig {
                    seed,
                    mix_ratio: alpha,
                    ..cfg.train.clone()
                };
                let meta = ReportMeta {
                    policy: kind.name().to_string(),
                    alpha,
                    seed,
                    auc: None,
                    ndcg: None,
                };
                let outcome = train_and_evaluate(
                    &world,
                    &prefs,
                    &mixed,
                    kind,
                    &train_cfg,
                    seed.wrapping_add(2),
                )
                .map(|(report, log, _model, _tr)| (report, log))
                .map_err(|e| e.to_string());
                let meta = match &outcome {
                    Ok((report, _)) => ReportMeta {
                        auc: report.auc,
                        ndcg: report.ndcg,
                        ..meta
                    },
                    Err(_) => meta,
                };
                cells.push(SweepCell { meta, outcome });
            }
        }
    }
    Ok(cells)
}

/// Stable-column CSV of one report per row; `error` is empty on success.
pub fn write_reports_csv<W: std::io::Write>(
    w: W,
    cells: &[(&ReportMeta, std::result::Result<&MetricReport, &str>)],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "policy",
        "alpha",
        "seed",
        "ctr",
        "fctr",
        "maniscore",
        "ps",
        "favorite_avg_pos",
        "least_favorite_avg_pos",
        "auc",
        "ndcg",
        "unbiased_fallback_rows",
        "error",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (meta, outcome) in cells {
        match outcome {
            Ok(r) => wtr.write_record([
                r.policy.clone(),
                r.alpha.to_string(),
                r.seed.to_string(),
                r.ctr.to_string(),
                opt(r.fctr),
                r.maniscore.to_string(),
                r.ps.to_string(),
                opt(r.position.favorite_avg),
                opt(r.position.least_favorite_avg),
                opt(r.auc),
                opt(r.ndcg),
                r.unbiased_fallback_rows.to_string(),
                String::new(),
            ])?,
            Err(e) => wtr.write_record([
                meta.policy.clone(),
                meta.alpha.to_string(),
                meta.seed.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                (*e).to_string(),
            ])?,
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Per-round curves for external plotting: one row per (report, round).
pub fn write_curves_csv<W: std::io::Write>(w: W, reports: &[&MetricReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["policy", "alpha", "seed", "round", "ctr", "ps"])?;
    for r in reports {
        for c in &r.curves {
            wtr.write_record([
                r.policy.clone(),
                r.alpha.to_string(),
                r.seed.to_string(),
                c.round.to_string(),
                c.ctr.to_string(),
                c.ps.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
