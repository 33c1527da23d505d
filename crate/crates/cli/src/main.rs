//! gedlab: seeded experiment runner for the constrained contextual
//! decision-making laboratory.
//!
//! Exit codes: 0 when every gate passes, 2 when a gate fails, 1 on usage,
//! config, or I/O errors. `GEDLAB_THREADS` caps sweep parallelism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gedlab_core::divergence::Metric;
use gedlab_core::eluder::{eluder_dim_greedy, ModelPairGrid};
use gedlab_core::harness::{
    default_config, emit_plots, lemma_report, ls_coverage, mle_coverage, run_one, run_sweep,
    seeds_for, ClassConfig, RunConfig, SCHEMA_VERSION,
};
use gedlab_core::par;
use gedlab_core::policy::TrajectoryRecord;
use gedlab_core::{Error, LemmaCheck, Result};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_GATE: u8 = 2;

/// Coverage-gate slack below the nominal 1 - delta level, shared with the
/// acceptance protocol so the CLI and the test suite agree.
const COVERAGE_SLACK: f64 = 0.05;

#[derive(Parser)]
#[command(name = "gedlab", version, about = "Constrained contextual decision-making laboratory")]
struct Cli {
    /// Print the default run config as JSON and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one seeded run; write CSV, summary, and trajectory files.
    Run {
        /// Run config JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Seed override; defaults to the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "gedlab-out")]
        out: PathBuf,
    },
    /// Run a multi-seed sweep; write the aggregate report, per-seed
    /// summaries, and plot data.
    Sweep {
        /// Run config JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Number of replicate seeds; defaults to the config's replications.
        #[arg(long)]
        seeds: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy eluder-dimension certificate for a model class over a point
    /// pool.
    Eluder {
        /// Class file: {"metric": ..., "class": <class config>}.
        #[arg(long)]
        class: PathBuf,
        /// Independence threshold epsilon.
        #[arg(long)]
        eps: f64,
        /// Pool file: JSON array of [context, action] pairs.
        #[arg(long)]
        pool: PathBuf,
    },
    /// Monte-Carlo coverage check of an oracle guarantee.
    OracleCheck {
        #[arg(long, value_enum)]
        kind: OracleKind,
        #[arg(long)]
        trials: usize,
        /// Base seed for the trial streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-audit the lemma checks of a stored trajectory file.
    Lemmas {
        /// Trajectory file written by `run`.
        #[arg(long)]
        trajectory: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OracleKind {
    /// Finite-class maximum likelihood at the reference geometry
    /// (8 members, 50 samples, delta 0.1).
    Mle,
    /// Linear-Gaussian least squares at the reference geometry
    /// (3 dims, 100 samples, sigma 1, delta 0.1).
    Ls,
}

/// On-disk trajectory format: the config rides along so the lemma audit can
/// rebuild the model classes without guessing.
#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    schema_version: u32,
    config: RunConfig,
    trajectory: TrajectoryRecord,
}

/// On-disk model class for the eluder subcommand.
#[derive(Serialize, Deserialize)]
struct EluderClassFile {
    metric: Metric,
    class: ClassConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not usage errors.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(cap) = std::env::var_os("GEDLAB_THREADS") {
        match cap.to_str().and_then(|s| s.parse::<usize>().ok()) {
            Some(n) if n >= 1 => par::set_thread_cap(n),
            _ => {
                eprintln!("error: GEDLAB_THREADS must be a positive integer");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    if cli.print_config {
        match default_config().to_json_pretty() {
            Ok(text) => {
                println!("{text}");
                return ExitCode::from(EXIT_OK);
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (try --help)");
        return ExitCode::from(EXIT_USAGE);
    };
    match dispatch(command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, &out),
        Command::Sweep { config, seeds, out } => cmd_sweep(&config, seeds, &out),
        Command::Eluder { class, eps, pool } => cmd_eluder(&class, eps, &pool),
        Command::OracleCheck { kind, trials, seed } => cmd_oracle_check(kind, trials, seed),
        Command::Lemmas { trajectory } => cmd_lemmas(&trajectory),
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        field: "config".into(),
        detail: format!("{}: {e}", path.display()),
    })?;
    RunConfig::from_json_str(&text)
}

/// Keep labels usable as file stems.
fn sanitize(label: &str) -> String {
    let cleaned: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect();
    if cleaned.is_empty() { "run".into() } else { cleaned }
}

fn gate_line(name: &str, pass: bool, detail: &str) -> bool {
    println!("[{}] {name}: {detail}", if pass { "pass" } else { "FAIL" });
    pass
}

fn lemma_line(name: &str, check: &LemmaCheck) -> bool {
    gate_line(
        name,
        check.holds(),
        &format!("lhs {:.6} <= rhs {:.6}", check.lhs, check.rhs),
    )
}

fn cmd_run(config: &Path, seed: Option<u64>, out: &Path) -> Result<u8> {
    let cfg = load_config(config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let art = run_one(&cfg, seed)?;
    fs::create_dir_all(out)?;
    let stem = format!("{}-seed{}", sanitize(&cfg.label), seed);
    let csv_path = out.join(format!("{stem}.csv"));
    let summary_path = out.join(format!("{stem}.summary.json"));
    let trajectory_path = out.join(format!("{stem}.trajectory.json"));
    fs::write(&csv_path, &art.csv)?;
    fs::write(&summary_path, serde_json::to_string_pretty(&art.summary)?)?;
    let record = TrajectoryFile {
        schema_version: SCHEMA_VERSION,
        config: cfg,
        trajectory: art.trajectory,
    };
    fs::write(&trajectory_path, serde_json::to_string_pretty(&record)?)?;

    println!(
        "run {} seed {} | final regret {:.6} | violations {} | wall {} ms",
        art.summary.config_hash, seed, art.summary.final_regret, art.summary.violations,
        art.summary.wall_ms,
    );
    for p in [&csv_path, &summary_path, &trajectory_path] {
        println!("wrote {}", p.display());
    }
    let mut all = lemma_line("potential-lemma", &art.summary.potential);
    for (eps, check) in &art.summary.pded1 {
        all &= lemma_line(&format!("pded-lemma-1 eps={eps}"), check);
    }
    all &= lemma_line("pded-lemma-2", &art.summary.pded2);
    Ok(if all { EXIT_OK } else { EXIT_GATE })
}

fn cmd_sweep(config: &Path, seeds: Option<usize>, out: &Path) -> Result<u8> {
    let cfg = load_config(config)?;
    let n = seeds.unwrap_or(cfg.replications);
    let seed_list = seeds_for(cfg.seed, n);
    let report = run_sweep(&cfg, &seed_list)?;

    fs::create_dir_all(out)?;
    let summaries_dir = out.join("summaries");
    fs::create_dir_all(&summaries_dir)?;
    for summary in &report.per_seed {
        let stem = format!("{}-seed{}", sanitize(&summary.label), summary.seed);
        fs::write(
            summaries_dir.join(format!("{stem}.summary.json")),
            serde_json::to_string_pretty(summary)?,
        )?;
    }
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let manifest = emit_plots(&report.per_seed, &out.join("plots"))?;

    println!(
        "sweep {} over {} seeds | mean final regret {:.6} | bound ratio {:.4}",
        report.config_hash, n, report.mean_final_regret, report.regret_bound_ratio,
    );
    for c in &report.checkpoints {
        println!(
            "  t={:<6} mean regret {:.6} +- {:.6}",
            c.round, c.mean, c.stderr
        );
    }
    println!("wrote {}", out.join("report.json").display());
    println!("wrote {} plot files", manifest.files.len());

    let mut all = gate_line(
        "feasibility",
        report.wilson_low <= cfg.delta,
        &format!(
            "violation fraction {:.4}, wilson lower {:.4} <= delta {}",
            report.violation_fraction, report.wilson_low, cfg.delta
        ),
    );
    all &= gate_line(
        "potential-lemma",
        report.all_potential_hold,
        &format!("holds on all {n} trajectories"),
    );
    all &= gate_line(
        "pded-lemmas",
        report.all_pded_hold,
        &format!("hold on all {n} trajectories"),
    );
    Ok(if all { EXIT_OK } else { EXIT_GATE })
}

fn cmd_eluder(class: &Path, eps: f64, pool: &Path) -> Result<u8> {
    let class_text = fs::read_to_string(class).map_err(|e| Error::Config {
        field: "class".into(),
        detail: format!("{}: {e}", class.display()),
    })?;
    let class_file: EluderClassFile = serde_json::from_str(&class_text)?;
    let tables = class_file.class.build()?;
    let grid = ModelPairGrid::new(tables, class_file.metric)?;

    let pool_text = fs::read_to_string(pool).map_err(|e| Error::Config {
        field: "pool".into(),
        detail: format!("{}: {e}", pool.display()),
    })?;
    let points: Vec<(usize, usize)> = serde_json::from_str(&pool_text)?;
    for &(x, a) in &points {
        if x >= grid.n_contexts() || a >= grid.n_actions() {
            return Err(Error::Config {
                field: "pool".into(),
                detail: format!(
                    "point ({x}, {a}) outside the class's {}x{} cells",
                    grid.n_contexts(),
                    grid.n_actions()
                ),
            });
        }
    }

    let cert = eluder_dim_greedy(&grid, &points, eps)?;
    println!("{}", serde_json::to_string_pretty(&cert)?);
    let cap = grid.n_contexts() * grid.n_actions();
    let pass = gate_line(
        "finite-cap",
        cert.sequence.len() <= cap,
        &format!(
            "greedy length {} <= |X||A| = {cap}",
            cert.sequence.len()
        ),
    );
    Ok(if pass { EXIT_OK } else { EXIT_GATE })
}

fn cmd_oracle_check(kind: OracleKind, trials: usize, seed: u64) -> Result<u8> {
    let report = match kind {
        OracleKind::Mle => mle_coverage(trials, 50, 0.1, seed)?,
        OracleKind::Ls => ls_coverage(trials, 100, 1.0, 0.1, seed)?,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    let pass = gate_line(
        "coverage",
        report.passes(COVERAGE_SLACK),
        &format!(
            "wilson lower {:.4} >= {:.2}",
            report.wilson_low,
            1.0 - report.delta - COVERAGE_SLACK
        ),
    );
    Ok(if pass { EXIT_OK } else { EXIT_GATE })
}

fn cmd_lemmas(trajectory: &Path) -> Result<u8> {
    let text = fs::read_to_string(trajectory).map_err(|e| Error::Config {
        field: "trajectory".into(),
        detail: format!("{}: {e}", trajectory.display()),
    })?;
    let file: TrajectoryFile = serde_json::from_str(&text)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Config {
            field: "schema_version".into(),
            detail: format!(
                "got {}, this build reads schema {SCHEMA_VERSION}",
                file.schema_version
            ),
        });
    }
    let report = lemma_report(&file.config, &file.trajectory)?;
    println!(
        "trajectory seed {} | {} rounds, {} warm-up",
        report.seed, report.rounds, report.warmup
    );
    let mut all = lemma_line("potential-lemma", &report.potential);
    for (eps, check) in &report.pded1 {
        all &= lemma_line(&format!("pded-lemma-1 eps={eps}"), check);
    }
    all &= lemma_line("pded-lemma-2", &report.pded2);
    Ok(if all { EXIT_OK } else { EXIT_GATE })
}
