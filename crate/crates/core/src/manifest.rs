//! Run-directory manifests: artifact hashes, config snapshot, and the
//! verification path that re-derives every report bit-identically from the
//! stored logs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::error::{Result, SimError};
use crate::pipeline::{
    build_world, compute_initial_preferences, report_from_log, write_curves_csv,
    write_reports_csv, MetricReport, ReportMeta, SweepCell,
};
use crate::types::{validate_log, InteractionLog};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_bytes(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
}

/// One report cell: where its log lives and the offline training numbers
/// that cannot be re-derived from the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub policy: String,
    pub alpha: f64,
    pub seed: u64,
    pub log_file: Option<String>,
    pub auc: Option<f64>,
    pub ndcg: Option<f64>,
    pub error: Option<String>,
}

impl CellRecord {
    pub fn meta(&self) -> ReportMeta {
        ReportMeta {
            policy: self.policy.clone(),
            alpha: self.alpha,
            seed: self.seed,
            auc: self.auc,
            ndcg: self.ndcg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    pub created_unix: u64,
    /// Exact text of the config the run was driven by.
    pub config_toml: String,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<Artifact>,
    pub cells: Vec<CellRecord>,
}

impl RunManifest {
    pub fn new(config_toml: String, seeds: Vec<u64>) -> Self {
        RunManifest {
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config_toml,
            seeds,
            artifacts: Vec::new(),
            cells: Vec::new(),
        }
    }

    /// Record a file already written into the run directory.
    pub fn add_artifact(&mut self, dir: &Path, rel: &str) -> Result<()> {
        let hash = sha256_file(&dir.join(rel))?;
        self.artifacts.push(Artifact { path: rel.to_string(), sha256: hash });
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(SimError::StageOrdering(format!(
                "no {MANIFEST_FILE} in {}; nothing to verify",
                dir.display()
            )));
        }
        let m: RunManifest = serde_json::from_slice(&std::fs::read(path)?)?;
        if m.version != MANIFEST_VERSION {
            return Err(SimError::Verification(format!(
                "unsupported manifest version {}",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn verify_hashes(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let path = dir.join(&a.path);
            if !path.exists() {
                return Err(SimError::Verification(format!("missing artifact {}", a.path)));
            }
            let actual = sha256_file(&path)?;
            if actual != a.sha256 {
                return Err(SimError::Verification(format!(
                    "hash mismatch for {}: manifest {}, actual {actual}",
                    a.path, a.sha256
                )));
            }
        }
        Ok(())
    }
}

/// Render the three report artifacts exactly as a run writes them, so
/// verification can compare bytes.
pub fn render_reports(
    cells: &[(ReportMeta, std::result::Result<MetricReport, String>)],
) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>)> {
    #[derive(Serialize)]
    struct Entry<'a> {
        policy: &'a str,
        alpha: f64,
        seed: u64,
        #[serde(skip_serializing_if = "Option::is_none")]
        report: Option<&'a MetricReport>,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<&'a str>,
    }
    let entries: Vec<Entry<'_>> = cells
        .iter()
        .map(|(meta, outcome)| Entry {
            policy: &meta.policy,
            alpha: meta.alpha,
            seed: meta.seed,
            report: outcome.as_ref().ok(),
            error: outcome.as_ref().err().map(String::as_str),
        })
        .collect();
    let mut json = serde_json::to_vec_pretty(&entries)?;
    json.push(b'\n');

    let csv_cells: Vec<(&ReportMeta, std::result::Result<&MetricReport, &str>)> = cells
        .iter()
        .map(|(m, o)| (m, o.as_ref().map_err(String::as_str)))
        .collect();
    let mut report_csv = Vec::new();
    write_reports_csv(&mut report_csv, &csv_cells)?;

    let ok_reports: Vec<&MetricReport> =
        cells.iter().filter_map(|(_, o)| o.as_ref().ok()).collect();
    let mut curves_csv = Vec::new();
    write_curves_csv(&mut curves_csv, &ok_reports)?;
    Ok((json, report_csv, curves_csv))
}

/// Persist a run: logs were already written by the caller; this writes the
/// per-seed preference tables, the three report files, the config snapshot,
/// and the manifest.
pub fn write_run(
    dir: &Path,
    config_toml: &str,
    seeds: &[u64],
    cells: &[SweepCell],
    log_files: &[Option<String>],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let cfg = ScenarioConfig::parse(config_toml)?;
    let mut manifest = RunManifest::new(config_toml.to_string(), seeds.to_vec());

    std::fs::write(dir.join("config.toml"), config_toml)?;
    manifest.add_artifact(dir, "config.toml")?;

    for &seed in seeds {
        let mut seed_cfg = cfg.clone();
        seed_cfg.seed = seed;
        let world = build_world(&seed_cfg)?;
        let prefs = compute_initial_preferences(&world);
        let name = format!("prefs_{seed}.csv");
        prefs.save_csv(&dir.join(&name))?;
        manifest.add_artifact(dir, &name)?;
    }

    let mut rendered: Vec<(ReportMeta, std::result::Result<MetricReport, String>)> = Vec::new();
    for (cell, log_file) in cells.iter().zip(log_files) {
        match (&cell.outcome, log_file) {
            (Ok((report, log)), Some(name)) => {
                log.save_jsonl(&dir.join(name))?;
                manifest.add_artifact(dir, name)?;
                manifest.cells.push(CellRecord {
                    policy: cell.meta.policy.clone(),
                    alpha: cell.meta.alpha,
                    seed: cell.meta.seed,
                    log_file: Some(name.clone()),
                    auc: cell.meta.auc,
                    ndcg: cell.meta.ndcg,
                    error: None,
                });
                rendered.push((cell.meta.clone(), Ok(report.clone())));
            }
            (Err(e), _) => {
                manifest.cells.push(CellRecord {
                    policy: cell.meta.policy.clone(),
                    alpha: cell.meta.alpha,
                    seed: cell.meta.seed,
                    log_file: None,
                    auc: None,
                    ndcg: None,
                    error: Some(e.clone()),
                });
                rendered.push((cell.meta.clone(), Err(e.clone())));
            }
            (Ok(_), None) => {
                return Err(SimError::Contract(
                    "successful cell without a log file name".into(),
                ))
            }
        }
    }
    let (json, report_csv, curves_csv) = render_reports(&rendered)?;
    std::fs::write(dir.join("report.json"), &json)?;
    std::fs::write(dir.join("report.csv"), &report_csv)?;
    std::fs::write(dir.join("curves.csv"), &curves_csv)?;
    manifest.add_artifact(dir, "report.json")?;
    manifest.add_artifact(dir, "report.csv")?;
    manifest.add_artifact(dir, "curves.csv")?;
    manifest.save(dir)?;
    Ok(())
}

/// Re-check artifact hashes, re-run the log invariants, rebuild every world
/// and report from the stored logs, and demand byte-identical report files.
pub fn verify_run(dir: &Path) -> Result<()> {
    let manifest = RunManifest::load(dir)?;
    manifest.verify_hashes(dir)?;
    let cfg = ScenarioConfig::parse(&manifest.config_toml)
        .map_err(|e| SimError::Verification(format!("stored config does not parse: {e}")))?;

    let mut worlds = BTreeMap::new();
    for &seed in &manifest.seeds {
        let mut seed_cfg = cfg.clone();
        seed_cfg.seed = seed;
        let world = build_world(&seed_cfg)?;
        let prefs = compute_initial_preferences(&world);
        // preference tables are pure in the config: the stored CSV must be
        // reproduced exactly
        let name = format!("prefs_{seed}.csv");
        let mut bytes = Vec::new();
        prefs.write_csv(&mut bytes)?;
        let stored = std::fs::read(dir.join(&name))?;
        if bytes != stored {
            return Err(SimError::Verification(format!("{name} is not reproducible")));
        }
        worlds.insert(seed, (world, prefs));
    }

    let mut rendered: Vec<(ReportMeta, std::result::Result<MetricReport, String>)> = Vec::new();
    for cell in &manifest.cells {
        match (&cell.log_file, &cell.error) {
            (Some(name), None) => {
                let log = InteractionLog::load_jsonl(&dir.join(name))?;
                let violations = validate_log(&log);
                if !violations.is_empty() {
                    return Err(SimError::Verification(format!(
                        "{name} violates log invariants: {violations:?}"
                    )));
                }
                let (world, prefs) = worlds.get(&cell.seed).ok_or_else(|| {
                    SimError::Verification(format!(
                        "cell references seed {} absent from the manifest",
                        cell.seed
                    ))
                })?;
                let report =
                    report_from_log(world, prefs, &log, world.cfg.rounds(), &cell.meta())?;
                rendered.push((cell.meta(), Ok(report)));
            }
            (None, Some(e)) => rendered.push((cell.meta(), Err(e.clone()))),
            _ => {
                return Err(SimError::Verification(
                    "malformed cell record (log/error mismatch)".into(),
                ))
            }
        }
    }
    let (json, report_csv, curves_csv) = render_reports(&rendered)?;
    for (name, bytes) in [
        ("report.json", &json),
        ("report.csv", &report_csv),
        ("curves.csv", &curves_csv),
    ] {
        let stored = std::fs::read(dir.join(name))?;
        if &stored != bytes {
            return Err(SimError::Verification(format!(
                "{name} could not be re-derived bit-identically from the stored logs"
            )));
        }
    }
    Ok(())
}

/// Canonical log file name for one cell.
pub fn cell_log_name(policy: &str, alpha: f64, seed: u64) -> String {
    format!("log_{policy}_a{alpha}_s{seed}.jsonl")
}

/// Helper for single-policy eval runs: run one cell and persist the run dir.
pub fn artifact_paths(dir: &Path, manifest: &RunManifest) -> Vec<PathBuf> {
    manifest.artifacts.iter().map(|a| dir.join(&a.path)).collect()
}
