//! Domain types shared by every stage of the simulation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Opaque document identifier. Tie-breaks throughout the harness are by
/// ascending id so every run replays exactly.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct DocId(pub u32);

impl std::fmt::Display for DocId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An item that can be shown to users.
///
/// `attrs` is the observable attribute vector (visible to rankers); `hidden`
/// holds attributes only the behavior model may read. The split is
/// structural so feature extraction cannot leak hidden fields by accident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: DocId,
    pub attrs: Vec<f64>,
    #[serde(default)]
    pub hidden: Vec<f64>,
    /// Ranker-visible document view. Defaults to `attrs`; scenario builders
    /// may extend it with observable identity features (e.g. a document-id
    /// indicator, the analogue of an id embedding in production CTR models).
    /// Choice models always read `attrs`, rankers always read `obs`.
    #[serde(default)]
    pub obs: Vec<f64>,
}

impl Document {
    pub fn new(id: u32, attrs: Vec<f64>) -> Self {
        Document {
            id: DocId(id),
            obs: attrs.clone(),
            attrs,
            hidden: Vec::new(),
        }
    }

    pub fn with_hidden(id: u32, attrs: Vec<f64>, hidden: Vec<f64>) -> Self {
        Document {
            id: DocId(id),
            obs: attrs.clone(),
            attrs,
            hidden,
        }
    }

    /// Topic index for one-hot encoded documents (sequential scenario).
    pub fn topic(&self) -> usize {
        self.attrs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Hidden scalar quality (sequential scenario).
    pub fn quality(&self) -> f64 {
        self.hidden.first().copied().unwrap_or(0.0)
    }
}

/// All documents of a scenario plus the query → document binding.
///
/// Both synthetic scenarios bind every document to a single shared query;
/// the index is kept so multi-query scenarios can plug in later.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentSet {
    pub docs: Vec<Document>,
    pub query_index: BTreeMap<String, Vec<DocId>>,
}

pub const SHARED_QUERY: &str = "q";

impl DocumentSet {
    /// Build a set with every document bound to the shared query.
    pub fn single_query(docs: Vec<Document>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for d in &docs {
            if !seen.insert(d.id) {
                return Err(SimError::Contract(format!("duplicate document id {}", d.id)));
            }
            if d.attrs.iter().chain(d.hidden.iter()).any(|v| !v.is_finite()) {
                return Err(SimError::Contract(format!(
                    "document {} has non-finite attributes",
                    d.id
                )));
            }
        }
        let ids = docs.iter().map(|d| d.id).collect();
        let mut query_index = BTreeMap::new();
        query_index.insert(SHARED_QUERY.to_string(), ids);
        Ok(DocumentSet { docs, query_index })
    }

    pub fn get(&self, id: DocId) -> &Document {
        // ids are assigned contiguously by the generators
        &self.docs[id.0 as usize]
    }

    pub fn bound_ids(&self) -> &[DocId] {
        &self.query_index[SHARED_QUERY]
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// One simulated user.
///
/// `u0` is the initial feature vector and never changes; `u` evolves through
/// the transition model. `obs` is the only user field rankers may read --
/// it defaults to `u0`, but scenario builders may coarsen it (a platform
/// rarely knows a user's exact taste, only a rough profile plus behavior).
/// `u` and `budget` are internal to the behavior model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub user_id: u32,
    pub u0: Vec<f64>,
    pub u: Vec<f64>,
    /// Ranker-visible user snapshot.
    pub obs: Vec<f64>,
    pub q: Vec<f64>,
    /// Remaining time budget; `None` outside the sequential scenario.
    pub budget: Option<f64>,
    pub exited: bool,
}

impl UserState {
    pub fn new(user_id: u32, u0: Vec<f64>, budget: Option<f64>) -> Self {
        UserState {
            user_id,
            u: u0.clone(),
            obs: u0.clone(),
            u0,
            q: Vec::new(),
            budget,
            exited: false,
        }
    }

    /// Reset to the round-0 state (initial feature, full budget).
    pub fn reset(&mut self, initial_budget: Option<f64>) {
        self.u = self.u0.clone();
        self.budget = initial_budget;
        self.exited = false;
    }
}

/// One displayed slate with the model's click probabilities and the sampled
/// binary clicks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slate {
    pub docs: Vec<DocId>,
    pub click_probs: Vec<f64>,
    pub clicks: Vec<u8>,
    pub strategy_tag: String,
}

/// One logged interaction row.
///
/// `user_obs` is the observable user snapshot the trainer may read;
/// `user_hidden` stores the post-round internal state (current feature and
/// remaining budget) so metrics can be re-derived from the log alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub user_id: u32,
    pub round: u32,
    pub user_obs: Vec<f64>,
    pub user_hidden: Vec<f64>,
    pub slate: Slate,
}

/// Append-only interaction dataset, ordered by (user, round).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub rows: Vec<LogRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogViolation {
    /// Rows out of (user_id, round) order.
    Ordering { index: usize },
    /// Rounds of one user not contiguous from 1.
    RoundGap { user_id: u32, expected: u32, found: u32 },
    /// Slate vector lengths disagree.
    Shape { index: usize },
    /// Click probability outside [0, 1].
    ProbRange { index: usize },
}

impl std::fmt::Display for LogViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LogViolation::Ordering { index } => write!(f, "row {index}: out of (user, round) order"),
            LogViolation::RoundGap {
                user_id,
                expected,
                found,
            } => write!(f, "user {user_id}: expected round {expected}, found {found}"),
            LogViolation::Shape { index } => write!(f, "row {index}: slate vector lengths disagree"),
            LogViolation::ProbRange { index } => {
                write!(f, "row {index}: click probability outside [0, 1]")
            }
        }
    }
}

/// Check every structural invariant of the log. Violations are returned,
/// never thrown, so callers can report all of them at once.
pub fn validate_log(log: &InteractionLog) -> Vec<LogViolation> {
    let mut out = Vec::new();
    let mut prev: Option<(u32, u32)> = None;
    for (i, row) in log.rows.iter().enumerate() {
        let key = (row.user_id, row.round);
        if let Some(p) = prev {
            if key <= p {
                out.push(LogViolation::Ordering { index: i });
            }
            if row.user_id == p.0 && row.round != p.1 + 1 {
                out.push(LogViolation::RoundGap {
                    user_id: row.user_id,
                    expected: p.1 + 1,
                    found: row.round,
                });
            }
        }
        if prev.map(|p| p.0) != Some(row.user_id) && row.round != 1 {
            out.push(LogViolation::RoundGap {
                user_id: row.user_id,
                expected: 1,
                found: row.round,
            });
        }
        let s = &row.slate;
        if s.docs.len() != s.click_probs.len() || s.docs.len() != s.clicks.len() {
            out.push(LogViolation::Shape { index: i });
        }
        if s.click_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            out.push(LogViolation::ProbRange { index: i });
        }
        prev = Some(key);
    }
    out
}

impl InteractionLog {
    /// Persist as JSON lines, one row per (user, round).
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for row in &self.rows {
            serde_json::to_writer(&mut w, row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(f))
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut rows = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(serde_json::from_str(&line)?);
        }
        Ok(InteractionLog { rows })
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(BufReader::new(f))
    }
}

/// Map (user, document) → initial preference score.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTable {
    pub scores: BTreeMap<(u32, DocId), f64>,
}

impl PreferenceTable {
    pub fn get(&self, user_id: u32, doc: DocId) -> Option<f64> {
        self.scores.get(&(user_id, doc)).copied()
    }

    pub fn insert(&mut self, user_id: u32, doc: DocId, score: f64) {
        self.scores.insert((user_id, doc), score);
    }

    /// A table is complete when every (user, bound document) pair is scored.
    pub fn is_complete(&self, users: &[UserState], docs: &DocumentSet) -> bool {
        users.iter().all(|u| {
            docs.bound_ids()
                .iter()
                .all(|d| self.scores.contains_key(&(u.user_id, *d)))
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["user_id", "doc_id", "score"])?;
        for ((uid, doc), score) in &self.scores {
            wtr.write_record([uid.to_string(), doc.to_string(), format!("{score}")])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut table = PreferenceTable::default();
        for rec in rdr.records() {
            let rec = rec?;
            let uid: u32 = rec[0]
                .parse()
                .map_err(|e| SimError::Contract(format!("bad user_id: {e}")))?;
            let doc: u32 = rec[1]
                .parse()
                .map_err(|e| SimError::Contract(format!("bad doc_id: {e}")))?;
            let score: f64 = rec[2]
                .parse()
                .map_err(|e| SimError::Contract(format!("bad score: {e}")))?;
            table.insert(uid, DocId(doc), score);
        }
        Ok(table)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(BufReader::new(f))
    }
}
