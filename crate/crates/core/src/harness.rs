//! Experiment orchestration: replicated sequential runs with quantile
//! summaries of the optimality gap, decay-rate validation against exact or
//! Monte Carlo tail probabilities, and CSV emission.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::alloc_opt::{AllocProblem, SolverSettings};
use crate::error::{Error, Result};
use crate::grid::DesignGrid;
use crate::io::{write_csv, Cell};
use crate::loss::LossModel;
use crate::rate::{
    misorder_rate, pair_rate_numeric, q_set, Allocation, BinomialRates, GaussianRates,
    NumericRates, PairRateEval,
};
use crate::rng::scheduler_stream;
use crate::sequential::{
    algo1_run, algo2_run, Algo1Config, Algo2Config, IterationRecord, RateFamily,
};
use crate::stats::{log_normal_upper_tail, quantile};

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    GaussianAlgo1,
    BinomialAlgo1,
    SquaredAlgo2,
    LdpValidate,
}

/// Full experiment description. The objective over the grid is
/// f(x) = objective_scale · x² + objective_offset; the binomial default
/// offset keeps means inside (0, trials) on the default interval.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    pub objective_scale: f64,
    pub objective_offset: f64,
    /// Per-point loss variance (Gaussian scenario) or observation-noise
    /// variance (squared-error scenario).
    pub noise_variance: f64,
    pub trials: u64,
    /// Gaussian scenario: plug known variances into the estimator rather
    /// than sample variances.
    pub known_variances: bool,
    pub delta: f64,
    pub pilot: usize,
    pub total_budget: usize,
    pub per_iteration: Option<usize>,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub budget_coupling: Option<f64>,
    pub replications: usize,
    pub seed_base: u64,
    pub out_dir: PathBuf,
    pub solver: SolverSettings,
    /// Mis-ordering margin for the decay-rate study; when NaN it is derived
    /// from the boundary pair as half the value gap.
    pub gamma: f64,
    pub n_ladder: Vec<usize>,
    pub mc_replications: usize,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        let binomial = scenario == Scenario::BinomialAlgo1;
        Self {
            scenario,
            grid_lo: -3.0,
            grid_hi: 3.0,
            grid_points: 46,
            objective_scale: 1.0,
            objective_offset: if binomial { 0.5 } else { 0.0 },
            noise_variance: 1.0,
            trials: 10,
            known_variances: true,
            delta: 1.0,
            pilot: 10,
            total_budget: 4_600,
            per_iteration: None,
            tolerance: 1e-3,
            max_iterations: 50,
            budget_coupling: None,
            replications: 50,
            seed_base: 0,
            out_dir: PathBuf::from("out"),
            solver: SolverSettings::default(),
            gamma: f64::NAN,
            n_ladder: vec![1_000, 10_000, 100_000, 1_000_000],
            mc_replications: 100_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grid_points < 2 {
            return Err(Error::Config("grid needs at least 2 points".into()));
        }
        if self.replications < 1 {
            return Err(Error::Config("replication count must be at least 1".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if self.scenario == Scenario::LdpValidate && self.n_ladder.is_empty() {
            return Err(Error::Config("n ladder is empty".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<DesignGrid> {
        DesignGrid::equispaced(self.grid_lo, self.grid_hi, self.grid_points)
    }

    fn objective(&self, x: f64) -> f64 {
        self.objective_scale * x * x + self.objective_offset
    }

    /// Loss model over the grid for this scenario.
    pub fn model(&self) -> Result<LossModel> {
        let grid = self.grid()?;
        let f: Vec<f64> = grid.points().iter().map(|&x| self.objective(x)).collect();
        match self.scenario {
            Scenario::GaussianAlgo1 | Scenario::LdpValidate => {
                LossModel::gaussian(f, vec![self.noise_variance; self.grid_points])
            }
            Scenario::BinomialAlgo1 => LossModel::binomial(f, self.trials),
            Scenario::SquaredAlgo2 => {
                // The squared loss carries its own objective (x - μ)² + s²;
                // the scale/offset knobs act only through the grid.
                LossModel::squared_error(grid.points().to_vec(), 0.0, self.noise_variance)
            }
        }
    }
}

/// Aggregate of a replicated run.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub reference: Allocation,
    pub mean_final_alloc: Vec<f64>,
    /// Per iteration: (iteration, cumulative samples, q10, q50, q90).
    pub og_quantiles: Vec<(usize, usize, f64, f64, f64)>,
    pub seeds: Vec<u64>,
    pub converged_paths: usize,
    pub replications: usize,
}

/// Boundary pair of the Q-set: the member of smallest value and the
/// non-member of largest value (lowest index on ties). These straddle the
/// threshold and dominate the objective.
pub fn q_boundary_indices(f_values: &[f64], q: &[usize]) -> Option<(usize, usize)> {
    let inside = q
        .iter()
        .copied()
        .min_by(|&a, &b| f_values[a].total_cmp(&f_values[b]))?;
    let outside = (0..f_values.len())
        .filter(|i| !q.contains(i))
        .max_by(|&a, &b| f_values[a].total_cmp(&f_values[b]))?;
    Some((inside, outside))
}

/// Reference allocation and true values from the model's true parameters.
pub fn reference_allocation(
    cfg: &ExperimentConfig,
    model: &LossModel,
) -> Result<(Vec<f64>, Vec<usize>, Allocation)> {
    let f = model.true_values()?;
    let f_min = f.iter().copied().fold(f64::INFINITY, f64::min);
    let q = q_set(&f, f_min, cfg.delta)?.members;
    if q.is_empty() {
        return Err(Error::EmptyQSet);
    }
    let rates: Box<dyn PairRateEval> = match cfg.scenario {
        Scenario::GaussianAlgo1 | Scenario::LdpValidate => Box::new(GaussianRates {
            f: f.clone(),
            var: vec![cfg.noise_variance; f.len()],
        }),
        Scenario::BinomialAlgo1 => Box::new(BinomialRates {
            f: f.clone(),
            trials: cfg.trials,
        }),
        Scenario::SquaredAlgo2 => Box::new(NumericRates { model }),
    };
    let problem = AllocProblem::new(f.clone(), q.clone(), rates.as_ref(), cfg.solver.clone())?;
    let alloc = problem.optimize(None)?.alloc;
    Ok((f, q, alloc))
}

/// Runs the scenario's algorithm over all replications, aggregates the
/// optimality-gap quantiles, and writes `allocation.csv`, `og_quantiles.csv`
/// and `ldp.csv` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let model = cfg.model()?;
    let (f, q, reference) = reference_allocation(cfg, &model)?;
    let grid = cfg.grid()?;

    if cfg.scenario == Scenario::LdpValidate {
        let rungs = ldp_study(cfg, &model, &f, &q, &reference)?;
        write_ldp_csv(&cfg.out_dir, &rungs)?;
        write_allocation_csv(&cfg.out_dir, &grid, &reference, reference.weights())?;
        write_og_csv(&cfg.out_dir, &[])?;
        return Ok(ExperimentSummary {
            mean_final_alloc: reference.weights().to_vec(),
            reference,
            og_quantiles: Vec::new(),
            seeds: Vec::new(),
            converged_paths: 0,
            replications: 0,
        });
    }

    let seeds: Vec<u64> = (0..cfg.replications)
        .map(|i| cfg.seed_base + i as u64)
        .collect();
    let paths: Vec<Result<(Vec<IterationRecord>, bool)>> = seeds
        .par_iter()
        .map(|&seed| match cfg.scenario {
            Scenario::GaussianAlgo1 | Scenario::BinomialAlgo1 => {
                let family = match cfg.scenario {
                    Scenario::GaussianAlgo1 => RateFamily::Gaussian {
                        known_variances: if cfg.known_variances {
                            Some(vec![cfg.noise_variance; cfg.grid_points])
                        } else {
                            None
                        },
                    },
                    _ => RateFamily::Binomial { trials: cfg.trials },
                };
                let acfg = Algo1Config {
                    pilot: cfg.pilot,
                    per_iteration: cfg.per_iteration,
                    total_budget: cfg.total_budget,
                    delta: cfg.delta,
                    family,
                    seed,
                    solver: cfg.solver.clone(),
                };
                Ok((algo1_run(&model, &acfg, Some(&reference))?, true))
            }
            Scenario::SquaredAlgo2 => {
                let acfg = Algo2Config {
                    initial: None,
                    per_iteration: cfg.per_iteration.unwrap_or(460),
                    delta: cfg.delta,
                    tolerance: cfg.tolerance,
                    max_iterations: cfg.max_iterations,
                    budget_coupling: cfg.budget_coupling,
                    seed,
                    solver: cfg.solver.clone(),
                };
                let out = algo2_run(&model, &acfg, Some(&reference))?;
                Ok((out.records, out.converged))
            }
            Scenario::LdpValidate => unreachable!(),
        })
        .collect();
    let mut records = Vec::with_capacity(paths.len());
    let mut converged_paths = 0usize;
    for path in paths {
        let (recs, converged) = path?;
        if converged {
            converged_paths += 1;
        }
        records.push(recs);
    }

    // OG quantiles per iteration index; shorter paths carry their last gap
    // forward.
    let longest = records.iter().map(Vec::len).max().unwrap_or(0);
    let mut og_quantiles = Vec::with_capacity(longest);
    for k in 0..longest {
        let gaps: Vec<f64> = records
            .iter()
            .map(|path| {
                let r = &path[k.min(path.len() - 1)];
                r.og.expect("reference was supplied")
            })
            .collect();
        let donor = records
            .iter()
            .find(|p| p.len() > k)
            .expect("k < longest path");
        let cumulative: usize = donor[k].counts.iter().sum();
        og_quantiles.push((
            donor[k].iteration,
            cumulative,
            quantile(&gaps, 0.1),
            quantile(&gaps, 0.5),
            quantile(&gaps, 0.9),
        ));
    }

    let d = cfg.grid_points;
    let mut mean_final_alloc = vec![0.0; d];
    for path in &records {
        let last = path.last().expect("every path has records");
        for (m, w) in mean_final_alloc.iter_mut().zip(last.alloc.weights()) {
            *m += w;
        }
    }
    for m in &mut mean_final_alloc {
        *m /= records.len() as f64;
    }

    write_allocation_csv(&cfg.out_dir, &grid, &reference, &mean_final_alloc)?;
    write_og_csv(&cfg.out_dir, &og_quantiles)?;
    let rungs = ldp_study(cfg, &model, &f, &q, &reference)?;
    write_ldp_csv(&cfg.out_dir, &rungs)?;

    Ok(ExperimentSummary {
        reference,
        mean_final_alloc,
        og_quantiles,
        seeds,
        converged_paths,
        replications: cfg.replications,
    })
}

/// One rung of the decay-rate ladder.
#[derive(Debug, Clone, Copy)]
pub struct LdpRung {
    pub n: usize,
    pub log_prob: f64,
    /// -(1/n) log P of the mis-ordering event.
    pub implied_rate: f64,
    pub analytic_rate: f64,
    /// Monte Carlo estimate rests on fewer than 10 events (or none, in
    /// which case `log_prob` is the resolution lower bound).
    pub flagged: bool,
}

/// Exact Gaussian mode: the difference of empirical means is Normal with
/// mean Δf and variance (σ²_y/α_y + σ²_x/α_x)/n, so the tail is evaluated
/// directly in log space.
#[allow(clippy::too_many_arguments)]
pub fn ldp_validate_gaussian_exact(
    f_x: f64,
    f_y: f64,
    var_x: f64,
    var_y: f64,
    alpha_x: f64,
    alpha_y: f64,
    gamma: f64,
    ladder: &[usize],
) -> Result<Vec<LdpRung>> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    let spread = var_y / alpha_y + var_x / alpha_x;
    let delta_f = f_y - f_x;
    let analytic = misorder_rate(gamma, f_x, f_y, |g| {
        crate::rate::pair_rate_gaussian(g, f_x, f_y, var_x, var_y, alpha_x, alpha_y)
    })?;
    Ok(ladder
        .iter()
        .map(|&n| {
            let sd = (spread / n as f64).sqrt();
            let z = (gamma - delta_f) / sd;
            let log_prob = log_normal_upper_tail(z);
            LdpRung {
                n,
                log_prob,
                implied_rate: -log_prob / n as f64,
                analytic_rate: analytic,
                flagged: false,
            }
        })
        .collect())
}

/// Monte Carlo mode: `draw_diff(n, rng)` must return one realization of
/// f̂(y) - f̂(x) at total budget n.
pub fn ldp_validate_mc(
    draw_diff: &(dyn Fn(usize, &mut ChaCha8Rng) -> f64 + Sync),
    analytic_rate: f64,
    gamma: f64,
    ladder: &[usize],
    replications: usize,
    seed: u64,
) -> Result<Vec<LdpRung>> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    if replications < 100_000 {
        return Err(Error::Config(
            "Monte Carlo mode needs at least 100000 replications per rung".into(),
        ));
    }
    Ok(ladder
        .iter()
        .enumerate()
        .map(|(rung, &n)| {
            let mut rng = scheduler_stream(seed.wrapping_add(rung as u64));
            let mut events = 0usize;
            for _ in 0..replications {
                if draw_diff(n, &mut rng) >= gamma {
                    events += 1;
                }
            }
            let (log_prob, flagged) = if events == 0 {
                // No events observed: report the resolution lower bound.
                (-(replications as f64).ln(), true)
            } else {
                ((events as f64 / replications as f64).ln(), events < 10)
            };
            LdpRung {
                n,
                log_prob,
                implied_rate: -log_prob / n as f64,
                analytic_rate,
                flagged,
            }
        })
        .collect())
}

/// Decay-rate study on the boundary pair of the scenario's Q-set.
fn ldp_study(
    cfg: &ExperimentConfig,
    model: &LossModel,
    f: &[f64],
    q: &[usize],
    reference: &Allocation,
) -> Result<Vec<LdpRung>> {
    let (inside, outside) = q_boundary_indices(f, q)
        .ok_or_else(|| Error::Config("no boundary pair: Q-set covers the grid".into()))?;
    // Event: the better point `outside` looks worse than `inside` by margin
    // γ, defaulting to half the true value gap.
    let (x, y) = (inside, outside);
    let gamma = if cfg.gamma.is_nan() {
        0.5 * (f[x] - f[y])
    } else {
        cfg.gamma
    };
    let (ax, ay) = (reference.get(x), reference.get(y));
    match cfg.scenario {
        Scenario::GaussianAlgo1 | Scenario::LdpValidate => ldp_validate_gaussian_exact(
            f[x],
            f[y],
            cfg.noise_variance,
            cfg.noise_variance,
            ax,
            ay,
            gamma,
            &cfg.n_ladder,
        ),
        Scenario::BinomialAlgo1 => {
            let analytic = misorder_rate(gamma, f[x], f[y], |g| {
                pair_rate_numeric(g, ax, ay, &model.cgf_at(x), &model.cgf_at(y))
            })?;
            let m = cfg.trials;
            let (px, py) = (f[x] / m as f64, f[y] / m as f64);
            let draw = move |n: usize, rng: &mut ChaCha8Rng| {
                let cx = ((ax * n as f64).round() as u64).max(1);
                let cy = ((ay * n as f64).round() as u64).max(1);
                // Sums of binomial losses are again binomial.
                let sx = Binomial::new(cx * m, px).expect("valid p").sample(rng) as f64;
                let sy = Binomial::new(cy * m, py).expect("valid p").sample(rng) as f64;
                sy / cy as f64 - sx / cx as f64
            };
            ldp_validate_mc(&draw, analytic, gamma, &cfg.n_ladder, cfg.mc_replications, cfg.seed_base)
        }
        Scenario::SquaredAlgo2 => {
            let analytic = misorder_rate(gamma, f[x], f[y], |g| {
                pair_rate_numeric(g, ax, ay, &model.cgf_at(x), &model.cgf_at(y))
            })?;
            let grid = cfg.grid()?;
            let s2 = cfg.noise_variance;
            let (dx, dy) = (grid.point(x)?, grid.point(y)?);
            let draw = move |n: usize, rng: &mut ChaCha8Rng| {
                // Sum of k squared-error losses is s² times a noncentral
                // chi-square with k degrees of freedom.
                let mut mean = |point: f64, count: u64| {
                    let k = count.max(2);
                    let lambda = k as f64 * point * point / s2;
                    let chi = ChiSquared::new((k - 1) as f64).expect("k ≥ 2").sample(rng);
                    let z: f64 = StandardNormal.sample(rng);
                    s2 * (chi + (z + lambda.sqrt()).powi(2)) / k as f64
                };
                let cx = (ax * n as f64).round() as u64;
                let cy = (ay * n as f64).round() as u64;
                let fx_hat = mean(dx, cx);
                let fy_hat = mean(dy, cy);
                fy_hat - fx_hat
            };
            ldp_validate_mc(&draw, analytic, gamma, &cfg.n_ladder, cfg.mc_replications, cfg.seed_base)
        }
    }
}

fn write_allocation_csv(
    dir: &Path,
    grid: &DesignGrid,
    reference: &Allocation,
    mean_est: &[f64],
) -> Result<()> {
    let rows: Vec<Vec<Cell>> = (0..grid.len())
        .map(|i| {
            vec![
                Cell::from(i),
                Cell::from(grid.points()[i]),
                Cell::from(reference.get(i)),
                Cell::from(mean_est[i]),
            ]
        })
        .collect();
    write_csv(
        &dir.join("allocation.csv"),
        &["point_index", "x", "true_alpha", "mean_est_alpha"],
        &rows,
    )
}

fn write_og_csv(dir: &Path, quantiles: &[(usize, usize, f64, f64, f64)]) -> Result<()> {
    let rows: Vec<Vec<Cell>> = quantiles
        .iter()
        .map(|&(iter, cum, q10, q50, q90)| {
            vec![
                Cell::from(iter),
                Cell::from(cum),
                Cell::from(q10),
                Cell::from(q50),
                Cell::from(q90),
            ]
        })
        .collect();
    write_csv(
        &dir.join("og_quantiles.csv"),
        &["iteration", "cumulative_samples", "q10", "q50", "q90"],
        &rows,
    )
}

fn write_ldp_csv(dir: &Path, rungs: &[LdpRung]) -> Result<()> {
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
    )
}
