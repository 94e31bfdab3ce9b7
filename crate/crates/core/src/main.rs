//! `manisim` command line: one subcommand per pipeline stage plus sweep and
//! verification. Errors land on stderr as JSON {code, message, context};
//! exit codes: 0 success, 2 config error, 3 stage-prerequisite error,
//! 4 verification failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use manisim::config::{reference_text, ScenarioConfig};
use manisim::error::{Result, SimError};
use manisim::manifest::{cell_log_name, verify_run, write_run};
use manisim::pipeline::{
    build_world, collect, compute_initial_preferences, evaluate, mix, sweep, ReportMeta,
    SweepCell, World,
};
use manisim::rankers::{RankerKind, RankerModel, RankerStrategy};
use manisim::types::{InteractionLog, PreferenceTable};

#[derive(Parser)]
#[command(name = "manisim", version, about = "Preference-manipulation simulation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: compute the initial preference table.
    Prefs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: collect an interaction log with a named oracle strategy.
    Collect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: mix two logs at a given ratio (α fraction from --a).
    Mixdata {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 3: train a ranker on a log; prints offline AUC/NDCG.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 3+4: evaluate a trained model or an oracle online.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "oracle")]
        model: Option<PathBuf>,
        #[arg(long)]
        oracle: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full mix-ratio × model × seed grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated mix ratios, e.g. 0,0.2,0.4.
        #[arg(long, value_delimiter = ',')]
        ratios: Vec<f64>,
        /// Comma-separated ranker kinds, e.g. pointwise,slate-aware.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check hashes and re-derive every report from the stored logs.
    Verify {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the annotated default configuration.
    ConfigReference,
}

fn exit_code_for(err: &SimError) -> u8 {
    match err {
        SimError::Config(_) | SimError::EnumerationLimit { .. } => 2,
        SimError::StageOrdering(_) => 3,
        SimError::Verification(_) => 4,
        _ => 1,
    }
}

fn load_config(path: &Path) -> Result<(ScenarioConfig, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        SimError::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    Ok((ScenarioConfig::parse(&text)?, text))
}

fn load_prefs(dir: &Path, world: &World) -> Result<PreferenceTable> {
    let path = dir.join("prefs.csv");
    if !path.exists() {
        return Err(SimError::StageOrdering(format!(
            "{} not found; run `manisim prefs` first",
            path.display()
        )));
    }
    let prefs = PreferenceTable::load_csv(&path)?;
    if !prefs.is_complete(&world.users, &world.docs) {
        return Err(SimError::StageOrdering(
            "stored preference table does not cover this config's population".into(),
        ));
    }
    Ok(prefs)
}

fn parse_kind(name: &str) -> Result<RankerKind> {
    RankerKind::parse(name).ok_or_else(|| {
        SimError::Config(format!(
            "unknown ranker kind '{name}' (expected pointwise, slate-aware, history-static, or history-dynamic)"
        ))
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prefs { config, out } => {
            let (cfg, _) = load_config(&config)?;
            let world = build_world(&cfg)?;
            let prefs = compute_initial_preferences(&world);
            std::fs::create_dir_all(&out)?;
            prefs.save_csv(&out.join("prefs.csv"))?;
            println!("wrote {} ({} users x {} docs)", out.join("prefs.csv").display(),
                world.users.len(), world.docs.len());
        }
        Command::Collect { config, strategy, out } => {
            let (cfg, _) = load_config(&config)?;
            let world = build_world(&cfg)?;
            let prefs = load_prefs(&out, &world)?;
            let strat = world.oracle_by_name(&strategy)?;
            let (log, _) = collect(&world, strat.as_ref(), &prefs, cfg.rounds(), cfg.seed)?;
            let path = out.join(format!("log_{strategy}.jsonl"));
            log.save_jsonl(&path)?;
            println!("wrote {} ({} rows)", path.display(), log.rows.len());
        }
        Command::Mixdata { a, b, ratio, seed, out } => {
            let log_a = InteractionLog::load_jsonl(&a)?;
            let log_b = InteractionLog::load_jsonl(&b)?;
            let mixed = mix(&log_a, &log_b, ratio, seed)?;
            mixed.save_jsonl(&out)?;
            println!("wrote {} ({} rows)", out.display(), mixed.rows.len());
        }
        Command::Train { config, log, model, out } => {
            let (cfg, _) = load_config(&config)?;
            let world = build_world(&cfg)?;
            let kind = parse_kind(&model)?;
            let train_log = InteractionLog::load_jsonl(&log)?;
            if train_log.rows.is_empty() {
                return Err(SimError::StageOrdering(format!(
                    "{} is empty; collect data first",
                    log.display()
                )));
            }
            let (user_dim, doc_dim) = world.feature_dims();
            let mut ranker = RankerModel::init(kind, user_dim, doc_dim, 16, cfg.train.seed);
            let report =
                manisim::rankers::train(&mut ranker, &train_log, &world.docs, &cfg.train)?;
            ranker.save(&out, &cfg.train.hash())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Eval { config, model, oracle, out } => {
            let (cfg, cfg_text) = load_config(&config)?;
            let world = build_world(&cfg)?;
            let prefs = compute_initial_preferences(&world);
            let ranker;
            let strat: Box<dyn manisim::oracles::Strategy + '_> = match (&model, &oracle) {
                (Some(path), None) => {
                    if !path.exists() {
                        return Err(SimError::StageOrdering(format!(
                            "model file {} not found; run `manisim train` first",
                            path.display()
                        )));
                    }
                    let (m, _hash) = RankerModel::load(path, Some(&cfg.train.hash()))?;
                    ranker = m;
                    Box::new(RankerStrategy::new(&ranker, cfg.slate_size()))
                }
                (None, Some(name)) => world.oracle_by_name(name)?,
                _ => {
                    return Err(SimError::Config(
                        "eval needs exactly one of --model or --oracle".into(),
                    ))
                }
            };
            let meta = ReportMeta {
                policy: strat.name().to_string(),
                alpha: cfg.mix_ratio,
                seed: cfg.seed,
                auc: None,
                ndcg: None,
            };
            let (report, log) = evaluate(&world, strat.as_ref(), &prefs, cfg.seed, &meta)?;
            std::fs::create_dir_all(&out)?;
            let log_name = cell_log_name(&meta.policy, meta.alpha, meta.seed);
            let cell = SweepCell { meta, outcome: Ok((report.clone(), log)) };
            write_run(&out, &cfg_text, &[cfg.seed], &[cell], &[Some(log_name)])?;
            println!(
                "policy={} ctr={:.6} fctr={} maniscore={:.6} ps={:.6}",
                report.policy,
                report.ctr,
                report.fctr.map_or("n/a".into(), |v| format!("{v:.6}")),
                report.maniscore,
                report.ps
            );
        }
        Command::Sweep { config, ratios, models, seeds, out } => {
            let (cfg, cfg_text) = load_config(&config)?;
            if ratios.is_empty() || models.is_empty() || seeds.is_empty() {
                return Err(SimError::Config(
                    "sweep needs nonempty --ratios, --models, and --seeds".into(),
                ));
            }
            let kinds = models
                .iter()
                .map(|m| parse_kind(m))
                .collect::<Result<Vec<_>>>()?;
            let cells = sweep(&cfg, &ratios, &kinds, &seeds)?;
            let log_files: Vec<Option<String>> = cells
                .iter()
                .map(|c| {
                    c.outcome
                        .is_ok()
                        .then(|| cell_log_name(&c.meta.policy, c.meta.alpha, c.meta.seed))
                })
                .collect();
            write_run(&out, &cfg_text, &seeds, &cells, &log_files)?;
            let failures = cells.iter().filter(|c| c.outcome.is_err()).count();
            println!(
                "wrote {} report rows to {} ({} failed cells)",
                cells.len(),
                out.display(),
                failures
            );
        }
        Command::Verify { out } => {
            verify_run(&out)?;
            println!("verified {}", out.display());
        }
        Command::ConfigReference => {
            print!("{}", reference_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let context = std::env::args().nth(1).unwrap_or_default();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code_for(&e);
            let payload = serde_json::json!({
                "code": code,
                "message": e.to_string(),
                "context": context,
            });
            eprintln!("{payload}");
            ExitCode::from(code)
        }
    }
}
