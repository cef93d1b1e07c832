use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use qcausal::format::{
    self, AlgorithmConfig, AlgorithmKind, ExperimentConfig, GeneratorConfig, GeneratorKind, ModeDto, OracleConfig,
    PolicyDto, FORMAT_VERSION,
};
use qcausal::harness::{self, all_orders, run_experiment, verify};
use qcausal::lemmas::{self, SuiteSizes};
use qcausal_core::comb::{build_choi, DEFAULT_DIM_CAP};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "qcausal",
    version,
    about = "Causal-order discovery for simulated quantum combs"
)]
struct Cli {
    /// Directory for output files that are not given an explicit path.
    #[arg(long, global = true, env = "QCAUSAL_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Unitary,
    Memoryless,
    Totalorder,
    PairwiseBlind,
    CnotMemory,
}

impl From<GenKind> for GeneratorKind {
    fn from(k: GenKind) -> Self {
        match k {
            GenKind::Unitary => GeneratorKind::Unitary,
            GenKind::Memoryless => GeneratorKind::Memoryless,
            GenKind::Totalorder => GeneratorKind::Totalorder,
            GenKind::PairwiseBlind => GeneratorKind::PairwiseBlind,
            GenKind::CnotMemory => GeneratorKind::CnotMemory,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoKind {
    General,
    Totalorder,
    Memoryless,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a comb and write it as JSON.
    Gen {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        d_a: usize,
        #[arg(long, default_value_t = 2)]
        d_m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Required pairwise chi_1 floor for `totalorder`.
        #[arg(long)]
        chi_floor: Option<f64>,
        /// Output file (default: <out-dir>/comb.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment config and write the run summary.
    Discover {
        #[arg(long)]
        config: PathBuf,
        /// Use this comb file instead of the config's generator section.
        #[arg(long)]
        comb: Option<PathBuf>,
        /// Override the Choi dimension cap.
        #[arg(long)]
        dim_cap: Option<usize>,
        /// Write per-operation query counts as JSON lines.
        #[arg(long)]
        query_log: Option<PathBuf>,
        /// Success rate below which the exit code is 1.
        #[arg(long, default_value_t = 1.0)]
        min_success: f64,
    },
    /// Check the comb condition for one order, or for every order.
    Verify {
        #[arg(long)]
        comb: PathBuf,
        /// Order such as "(A1,B2),(A2,B1)".
        #[arg(long, conflicts_with = "all_orders")]
        order: Option<String>,
        /// Enumerate all n!^2 orders and list the valid ones.
        #[arg(long)]
        all_orders: bool,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        dim_cap: Option<usize>,
    },
    /// Run the numerical checks of the estimator bounds and identities.
    Lemmas {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Smaller sample sizes for a fast smoke run.
        #[arg(long)]
        quick: bool,
        /// Write the results as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several configs and print one JSON line of aggregates per config.
    Bench {
        /// Config files; a built-in grid is used when none are given.
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 8)]
        trials: usize,
    },
    /// Print an example experiment config.
    Template {
        #[arg(long, value_enum, default_value = "general")]
        algorithm: AlgoKind,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen {
            kind,
            n,
            d_a,
            d_m,
            seed,
            chi_floor,
            out,
        } => {
            let g = GeneratorConfig {
                kind: kind.into(),
                n,
                d_a,
                d_m,
                seed,
                chi_floor_target: chi_floor,
            };
            let spec = harness::generate(&g)?;
            let path = out.unwrap_or_else(|| cli.out_dir.join("comb.json"));
            format::save_comb(&path, &spec)?;
            println!(
                "wrote {} (n={} d_a={} d_m={} true order {})",
                path.display(),
                spec.n,
                spec.d_a,
                spec.d_m,
                spec.true_order()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Discover {
            config,
            comb,
            dim_cap,
            query_log,
            min_success,
        } => {
            let mut cfg: ExperimentConfig = format::read_json(&config)?;
            if let Some(cap) = dim_cap {
                cfg.oracle.dim_cap = cap;
            }
            cfg.validate()?;
            let spec = harness::comb_for(&cfg, comb.as_deref())?;
            let exp = run_experiment(&cfg, &spec, query_log.is_some())?;
            let out = cfg
                .output_path
                .as_ref()
                .map(PathBuf::from)
                .unwrap_or_else(|| cli.out_dir.join("summary.json"));
            format::write_json(&out, &exp.summary)?;
            if let Some(log) = query_log {
                write_lines(&log, &exp.events)?;
            }
            print!("{}", format::summary_table(&exp.summary));
            println!("summary written to {}", out.display());
            Ok(if exp.summary.aggregate.success_rate >= min_success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Verify {
            comb,
            order,
            all_orders: enumerate,
            tol,
            dim_cap,
        } => {
            let spec = format::load_comb(&comb)?;
            let choi = build_choi(&spec, dim_cap.unwrap_or(DEFAULT_DIM_CAP))?;
            let orders = match (order, enumerate) {
                (Some(text), false) => vec![format::parse_order(&text)?],
                (None, true) => {
                    if spec.n > 4 {
                        bail!("--all-orders is limited to n <= 4");
                    }
                    all_orders(&choi.inputs(), &choi.outputs())
                }
                _ => bail!("give either --order or --all-orders"),
            };
            let mut valid = 0usize;
            for o in &orders {
                let v = verify(&choi, o, tol)?;
                valid += usize::from(v.ok);
                if !enumerate || v.ok {
                    println!(
                        "{}  {}  worst={:.3e}  per-step={:?}",
                        if v.ok { "valid  " } else { "INVALID" },
                        o,
                        v.worst_deviation,
                        v.deviations.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>()
                    );
                }
            }
            if enumerate {
                println!(
                    "{valid} of {} orders satisfy the comb condition at tol={tol:e}",
                    orders.len()
                );
            }
            Ok(if valid > 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Lemmas { seed, quick, out } => {
            let sizes = if quick {
                SuiteSizes {
                    swap_trials: 300,
                    chi_trials: 10,
                    chi_shots: 100_000,
                    states: 100,
                    pairs: 300,
                    rank_combs: 9,
                    stat_combs: 1,
                    stat_shots: 1_000_000,
                }
            } else {
                SuiteSizes::default()
            };
            let results = lemmas::run_suite(&sizes, seed)?;
            for r in &results {
                println!("{}", r.line());
            }
            if let Some(path) = out {
                format::write_json(&path, &results)?;
            }
            Ok(if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Bench { configs, trials } => {
            let named: Vec<(String, ExperimentConfig)> = if configs.is_empty() {
                builtin_grid(trials)
            } else {
                configs
                    .iter()
                    .map(|p| Ok((p.display().to_string(), format::read_json(p)?)))
                    .collect::<Result<_>>()?
            };
            let mut all_ok = true;
            for (name, cfg) in named {
                cfg.validate().with_context(|| format!("config {name}"))?;
                let spec = harness::generate(&cfg.generator)?;
                let exp = run_experiment(&cfg, &spec, false)?;
                let a = &exp.summary.aggregate;
                all_ok &= a.failures == 0;
                let line = BenchLine {
                    name,
                    algorithm: cfg.algorithm.kind,
                    mode: cfg.oracle.mode,
                    n: spec.n,
                    d_m: spec.d_m,
                    trials: cfg.trials,
                    success_rate: a.success_rate,
                    mean_queries: a.mean_queries,
                    mean_wall_ms: a.mean_wall_ms,
                };
                println!("{}", serde_json::to_string(&line)?);
            }
            Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Template { algorithm } => {
            print!("{}", format::to_json(&template(algorithm))?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[derive(Serialize)]
struct BenchLine {
    name: String,
    algorithm: AlgorithmKind,
    mode: ModeDto,
    n: usize,
    d_m: usize,
    trials: usize,
    success_rate: f64,
    mean_queries: f64,
    mean_wall_ms: f64,
}

fn write_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn template(algorithm: AlgoKind) -> ExperimentConfig {
    let (generator, algo, mode) = match algorithm {
        AlgoKind::General => (
            GeneratorConfig {
                kind: GeneratorKind::Unitary,
                n: 3,
                d_a: 2,
                d_m: 2,
                seed: 1,
                chi_floor_target: None,
            },
            AlgorithmConfig {
                kind: AlgorithmKind::General,
                delta: Some(1e-6),
                kappa: Some(0.05),
                shots: None,
                chi_minus: None,
                chi_min: None,
            },
            ModeDto::Exact,
        ),
        AlgoKind::Totalorder => (
            GeneratorConfig {
                kind: GeneratorKind::Totalorder,
                n: 3,
                d_a: 2,
                d_m: 2,
                seed: 1,
                chi_floor_target: Some(0.05),
            },
            AlgorithmConfig {
                kind: AlgorithmKind::Totalorder,
                delta: None,
                kappa: Some(0.05),
                shots: None,
                chi_minus: None,
                chi_min: None,
            },
            ModeDto::Sampled,
        ),
        AlgoKind::Memoryless => (
            GeneratorConfig {
                kind: GeneratorKind::Memoryless,
                n: 3,
                d_a: 2,
                d_m: 1,
                seed: 1,
                chi_floor_target: None,
            },
            AlgorithmConfig {
                kind: AlgorithmKind::Memoryless,
                delta: None,
                kappa: None,
                shots: Some(100_000),
                chi_minus: Some(0.05),
                chi_min: None,
            },
            ModeDto::Sampled,
        ),
    };
    ExperimentConfig {
        format_version: FORMAT_VERSION,
        generator,
        algorithm: algo,
        oracle: OracleConfig {
            mode,
            query_policy: PolicyDto::Actual,
            seed: 1,
            dim_cap: DEFAULT_DIM_CAP,
        },
        trials: 4,
        povm_preset: "sic2".into(),
        output_path: None,
        verify_tol: 1e-6,
    }
}

fn builtin_grid(trials: usize) -> Vec<(String, ExperimentConfig)> {
    let mut grid = Vec::new();
    for n in [2, 3] {
        for algo in [AlgoKind::General, AlgoKind::Totalorder, AlgoKind::Memoryless] {
            let mut cfg = template(algo);
            cfg.generator.n = n;
            cfg.trials = trials;
            if matches!(algo, AlgoKind::General) {
                cfg.oracle.mode = ModeDto::Sampled;
                cfg.algorithm.delta = Some(0.05);
            }
            let name = format!("{}-n{n}", cfg.algorithm.kind.name());
            grid.push((name, cfg));
        }
    }
    grid
}

trait KindName {
    fn name(self) -> &'static str;
}

impl KindName for AlgorithmKind {
    fn name(self) -> &'static str {
        match self {
            AlgorithmKind::General => "general",
            AlgorithmKind::Totalorder => "totalorder",
            AlgorithmKind::Memoryless => "memoryless",
        }
    }
}
