//! Command-line driver: binds TOML configuration to the allocation library.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::FileConfig;
use saa_alloc::io::{format_float, write_csv, Cell};
use saa_alloc::{
    algo1_run, algo2_run, ldp_validate_gaussian_exact, pair_rate_binomial, pair_rate_gaussian,
    pair_rate_numeric, q_set, run_experiment, Algo1Config, Algo2Config, AllocProblem, Allocation,
    BinomialRates, DesignGrid, Error, GaussianRates, IterationRecord, LossModel, NumericRates,
    PairRateEval, RateFamily, RateResult, Result,
};

#[derive(Parser)]
#[command(
    name = "saa",
    about = "Rate functions, optimal sampling allocations and sequential \
             allocation experiments over a finite design grid"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV files; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cross-check optimization results against the brute-force oracle.
    #[arg(long, global = true)]
    verify: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the pairwise mis-ordering rate for one pair.
    Rate {
        /// gaussian | binomial
        #[arg(long)]
        family: String,
        #[arg(long)]
        fx: f64,
        #[arg(long)]
        fy: f64,
        #[arg(long, default_value_t = 1.0)]
        vx: f64,
        #[arg(long, default_value_t = 1.0)]
        vy: f64,
        /// Binomial trial count m.
        #[arg(long, default_value_t = 10)]
        m: u64,
        #[arg(long)]
        ax: f64,
        #[arg(long)]
        ay: f64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
    },
    /// Solve the true-parameter allocation problem.
    Optimize,
    /// Run the closed-form sequential loop.
    Algo1,
    /// Run the EM-style sequential loop.
    Algo2,
    /// Run a replicated experiment and write the summary CSVs.
    Experiment,
    /// Tabulate exact tail probabilities against the analytic rate.
    Ldp,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for configuration problems, 2 for runtime failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidGrid(_)
        | Error::InvalidModel(_)
        | Error::InvalidGamma(_)
        | Error::EpsilonTooSmall { .. }
        | Error::EmptyQSet => 1,
        _ => 2,
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Rate {
            family,
            fx,
            fy,
            vx,
            vy,
            m,
            ax,
            ay,
            gamma,
        } => cmd_rate(family, *fx, *fy, *vx, *vy, *m, *ax, *ay, *gamma),
        Command::Optimize => cmd_optimize(cli),
        Command::Algo1 => cmd_algo1(cli),
        Command::Algo2 => cmd_algo2(cli),
        Command::Experiment => cmd_experiment(cli),
        Command::Ldp => cmd_ldp(cli),
    }
}

fn load_config(cli: &Cli) -> Result<FileConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this subcommand requires --config PATH".into()))?;
    FileConfig::load(path)
}

fn out_dir(cli: &Cli, cfg: &FileConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.run.as_ref().and_then(|r| r.out.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn seed(cli: &Cli, cfg: &FileConfig) -> u64 {
    cli.seed
        .or_else(|| cfg.run.as_ref().and_then(|r| r.seed))
        .unwrap_or(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_rate(
    family: &str,
    fx: f64,
    fy: f64,
    vx: f64,
    vy: f64,
    m: u64,
    ax: f64,
    ay: f64,
    gamma: f64,
) -> Result<()> {
    let (backend, closed, numeric): (&str, RateResult, RateResult) = match family {
        "gaussian" => {
            let closed = pair_rate_gaussian(gamma, fx, fy, vx, vy, ax, ay)?;
            let model = LossModel::gaussian(vec![fx, fy], vec![vx, vy])?;
            let numeric = pair_rate_numeric(gamma, ax, ay, &model.cgf_at(0), &model.cgf_at(1))?;
            ("gaussian-closed", closed, numeric)
        }
        "binomial" => {
            let model = LossModel::binomial(vec![fx, fy], m)?;
            let numeric = pair_rate_numeric(gamma, ax, ay, &model.cgf_at(0), &model.cgf_at(1))?;
            if gamma == 0.0 {
                ("binomial-closed", pair_rate_binomial(fx, fy, m, ax, ay)?, numeric)
            } else {
                // No closed form off γ = 0.
                ("binomial-numeric", numeric, numeric)
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown family {other:?}; expected gaussian or binomial"
            )))
        }
    };
    println!("backend {backend}");
    println!("value {}", format_float(closed.value));
    println!("t_star {}", format_float(closed.t_star));
    println!(
        "numeric_check_delta {}",
        format_float((closed.value - numeric.value).abs())
    );
    Ok(())
}

/// True-parameter rate backend for the configured model family.
fn true_rates<'a>(
    cfg: &FileConfig,
    model: &'a LossModel,
    f: &[f64],
) -> Result<Box<dyn PairRateEval + 'a>> {
    let section = FileConfig::require(&cfg.model, "model")?;
    Ok(match section.family.as_str() {
        "gaussian" => Box::new(GaussianRates {
            f: f.to_vec(),
            var: cfg.variances(f.len())?,
        }),
        "binomial" => Box::new(BinomialRates {
            f: f.to_vec(),
            trials: section.trials.unwrap_or(10),
        }),
        _ => Box::new(NumericRates { model }),
    })
}

fn solve_reference(
    cfg: &FileConfig,
    grid: &DesignGrid,
    model: &LossModel,
) -> Result<(Vec<f64>, Allocation, f64)> {
    let delta = cfg.delta()?;
    let f = model.true_values()?;
    let f_min = f.iter().copied().fold(f64::INFINITY, f64::min);
    let q = q_set(&f, f_min, delta)?.members;
    if q.is_empty() {
        return Err(Error::EmptyQSet);
    }
    let rates = true_rates(cfg, model, &f)?;
    let problem = AllocProblem::new(f.clone(), q, rates.as_ref(), cfg.solver())?;
    let out = problem.optimize(None)?;
    let _ = grid;
    Ok((f, out.alloc, out.objective))
}

fn cmd_optimize(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let grid = cfg.grid()?;
    let model = cfg.model(&grid)?;
    let (f, alloc, objective) = solve_reference(&cfg, &grid, &model)?;
    println!("objective {}", format_float(objective));
    println!(
        "alpha {}",
        alloc
            .weights()
            .iter()
            .map(|w| format_float(*w))
            .collect::<Vec<_>>()
            .join(",")
    );
    if cli.verify {
        let delta = cfg.delta()?;
        let f_min = f.iter().copied().fold(f64::INFINITY, f64::min);
        let q = q_set(&f, f_min, delta)?.members;
        let rates = true_rates(&cfg, &model, &f)?;
        let problem = AllocProblem::new(f.clone(), q, rates.as_ref(), cfg.solver())?;
        let (_, oracle) = problem.brute_force_oracle(0.01)?;
        let gap = objective - oracle;
        println!("oracle_objective {}", format_float(oracle));
        println!("oracle_gap {}", format_float(gap));
        if gap < -1e-4 {
            return Err(Error::InvalidProblem(format!(
                "optimizer fell short of the lattice oracle by {:.3e}",
                -gap
            )));
        }
    }
    write_allocation(&out_dir(cli, &cfg), &grid, &alloc, &alloc)?;
    Ok(())
}

fn write_allocation(
    dir: &Path,
    grid: &DesignGrid,
    reference: &Allocation,
    estimate: &Allocation,
) -> Result<()> {
    let rows: Vec<Vec<Cell>> = (0..grid.len())
        .map(|i| {
            vec![
                Cell::from(i),
                Cell::from(grid.points()[i]),
                Cell::from(reference.get(i)),
                Cell::from(estimate.get(i)),
            ]
        })
        .collect();
    write_csv(
        &dir.join("allocation.csv"),
        &["point_index", "x", "true_alpha", "mean_est_alpha"],
        &rows,
    )
}

fn write_iterations(dir: &Path, records: &[IterationRecord]) -> Result<()> {
    let rows: Vec<Vec<Cell>> = records
        .iter()
        .map(|r| {
            vec![
                Cell::from(r.iteration),
                Cell::from(r.counts.iter().sum::<usize>()),
                Cell::from(r.q_hat.len()),
                Cell::from(usize::from(r.skipped_reopt)),
                Cell::from(r.og.unwrap_or(f64::NAN)),
            ]
        })
        .collect();
    write_csv(
        &dir.join("iterations.csv"),
        &["iteration", "cumulative_samples", "q_size", "skipped_reopt", "og"],
        &rows,
    )
}

fn cmd_algo1(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let grid = cfg.grid()?;
    let model = cfg.model(&grid)?;
    let section = FileConfig::require(&cfg.algo1, "algo1")?;
    let model_section = FileConfig::require(&cfg.model, "model")?;
    let family = match model_section.family.as_str() {
        "gaussian" => RateFamily::Gaussian {
            known_variances: if section.known_variances.unwrap_or(true) {
                Some(cfg.variances(grid.len())?)
            } else {
                None
            },
        },
        "binomial" => RateFamily::Binomial {
            trials: model_section.trials.unwrap_or(10),
        },
        other => {
            return Err(Error::Config(format!(
                "algo1 supports gaussian or binomial models, got {other:?}"
            )))
        }
    };
    let (_, reference, _) = solve_reference(&cfg, &grid, &model)?;
    let acfg = Algo1Config {
        pilot: section.pilot.unwrap_or(10),
        per_iteration: section.per_iteration,
        total_budget: section.total_budget,
        delta: cfg.delta()?,
        family,
        seed: seed(cli, &cfg),
        solver: cfg.solver(),
    };
    let records = algo1_run(&model, &acfg, Some(&reference))?;
    let dir = out_dir(cli, &cfg);
    write_iterations(&dir, &records)?;
    let last = records.last().expect("at least the pilot record");
    write_allocation(&dir, &grid, &reference, &last.alloc)?;
    println!("iterations {}", records.len());
    println!("final_og {}", format_float(last.og.unwrap_or(f64::NAN)));
    Ok(())
}

fn cmd_algo2(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let grid = cfg.grid()?;
    let model = cfg.model(&grid)?;
    let section = FileConfig::require(&cfg.algo2, "algo2")?;
    let (_, reference, _) = solve_reference(&cfg, &grid, &model)?;
    let acfg = Algo2Config {
        initial: cfg.initial_allocation()?,
        per_iteration: section.per_iteration,
        delta: cfg.delta()?,
        tolerance: section.tolerance.unwrap_or(1e-3),
        max_iterations: section.max_iterations.unwrap_or(50),
        budget_coupling: section.budget_coupling,
        seed: seed(cli, &cfg),
        solver: cfg.solver(),
    };
    let out = algo2_run(&model, &acfg, Some(&reference))?;
    let dir = out_dir(cli, &cfg);
    write_iterations(&dir, &out.records)?;
    let last = out.records.last().expect("at least one record");
    write_allocation(&dir, &grid, &reference, &last.alloc)?;
    println!("iterations {}", out.records.len());
    println!("converged {}", out.converged);
    println!("final_og {}", format_float(last.og.unwrap_or(f64::NAN)));
    Ok(())
}

fn cmd_experiment(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let ecfg = cfg.experiment(cli.seed, cli.out.clone())?;
    let summary = run_experiment(&ecfg)?;
    println!("replications {}", summary.replications);
    println!("converged_paths {}", summary.converged_paths);
    if let Some((_, _, _, q50, _)) = summary.og_quantiles.last() {
        println!("final_median_og {}", format_float(*q50));
    }
    println!("out {}", ecfg.out_dir.display());
    Ok(())
}

fn cmd_ldp(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let section = FileConfig::require(&cfg.ldp, "ldp")?;
    let ladder = section
        .n_ladder
        .clone()
        .unwrap_or_else(|| vec![1_000, 10_000, 100_000, 1_000_000]);
    let rungs = ldp_validate_gaussian_exact(
        section.fx,
        section.fy,
        section.vx,
        section.vy,
        section.ax,
        section.ay,
        section.gamma,
        &ladder,
    )?;
    let dir = out_dir(cli, &cfg);
    let rows: Vec<Vec<Cell>> = rungs
        .iter()
        .map(|r| {
            vec![
                Cell::from(r.n),
                Cell::from(r.log_prob),
                Cell::from(r.implied_rate),
                Cell::from(r.analytic_rate),
            ]
        })
        .collect();
    write_csv(
        &dir.join("ldp.csv"),
        &["n", "log_prob", "implied_rate", "analytic_rate"],
        &rows,
    )?;
    println!("n,implied_rate,analytic_rate");
    for r in &rungs {
        println!(
            "{},{},{}",
            r.n,
            format_float(r.implied_rate),
            format_float(r.analytic_rate)
        );
    }
    Ok(())
}
