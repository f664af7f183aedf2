//! Sequential allocation: a closed-form plug-in loop and an EM-style loop
//! that alternates per-pair exponent optimization with allocation
//! re-optimization at frozen exponents, plus multinomial budget scheduling
//! and the optimality gap.

use std::collections::HashMap;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::alloc_opt::{AllocProblem, SolverSettings};
use crate::error::{Error, Result};
use crate::loss::{EmpiricalCgf, LossModel, SampleStore};
use crate::rate::{
    pair_rate_binomial, pair_rate_gaussian, pair_rate_numeric, q_set, Allocation, BinomialRates,
    GaussianRates, PairRateEval,
};
use crate::rng::{point_streams, scheduler_stream};

/// Binomial means are clamped this far inside (0, m) before entering the
/// closed form, so an all-zero or all-max sample column stays evaluable.
const MEAN_CLAMP: f64 = 1e-9;

/// Loss family assumed by the closed-form plug-in estimator.
#[derive(Debug, Clone)]
pub enum RateFamily {
    /// Per-point variances are plugged in from samples unless known.
    Gaussian { known_variances: Option<Vec<f64>> },
    Binomial { trials: u64 },
}

/// Family parameters of a single pair, as consumed by the plug-in rate.
#[derive(Debug, Clone, Copy)]
pub enum PairFamily {
    Gaussian { known_variances: Option<(f64, f64)> },
    Binomial { trials: u64 },
}

/// Draws `n` i.i.d. categorical indices from the allocation and returns the
/// per-point counts. Counts sum to `n`; zero counts are allowed.
pub fn multinomial_schedule(
    alloc: &Allocation,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; alloc.len()];
    if n == 0 {
        return Ok(counts);
    }
    let dist = WeightedIndex::new(alloc.weights().iter().copied())
        .map_err(|e| Error::InvalidAllocation(e.to_string()))?;
    for _ in 0..n {
        counts[dist.sample(rng)] += 1;
    }
    Ok(counts)
}

/// Plug-in estimate of the γ = 0 pair rate: empirical means (and, for the
/// Gaussian family, empirical variances unless known) entered into the
/// closed form.
pub fn estimate_pair_rate_closed_form(
    samples_x: &[f64],
    samples_y: &[f64],
    alpha_x: f64,
    alpha_y: f64,
    family: &PairFamily,
) -> Result<f64> {
    if samples_x.is_empty() || samples_y.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var = |s: &[f64], point: usize| -> Result<f64> {
        if s.len() < 2 {
            return Err(Error::TooFewSamples(point, s.len()));
        }
        let m = mean(s);
        Ok(s.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / (s.len() - 1) as f64)
    };
    let (fx, fy) = (mean(samples_x), mean(samples_y));
    match family {
        PairFamily::Gaussian { known_variances } => {
            let (vx, vy) = match known_variances {
                Some(v) => *v,
                None => (var(samples_x, 0)?, var(samples_y, 1)?),
            };
            Ok(pair_rate_gaussian(0.0, fx, fy, vx, vy, alpha_x, alpha_y)?.value)
        }
        PairFamily::Binomial { trials } => {
            let m = *trials as f64;
            let clamp = |f: f64| f.clamp(MEAN_CLAMP, m - MEAN_CLAMP);
            Ok(pair_rate_binomial(clamp(fx), clamp(fy), *trials, alpha_x, alpha_y)?.value)
        }
    }
}

/// Configuration of the closed-form sequential loop.
#[derive(Debug, Clone)]
pub struct Algo1Config {
    /// Pilot draws per design point; at least 2 so variances are estimable.
    pub pilot: usize,
    /// Per-iteration budget; defaults to max(d, total_budget / 10).
    pub per_iteration: Option<usize>,
    /// Total sampling budget, pilot included.
    pub total_budget: usize,
    /// Threshold over the estimated grid minimum defining Q̂.
    pub delta: f64,
    pub family: RateFamily,
    pub seed: u64,
    pub solver: SolverSettings,
}

/// Configuration of the EM-style loop.
#[derive(Debug, Clone)]
pub struct Algo2Config {
    /// Starting allocation; uniform when absent.
    pub initial: Option<Allocation>,
    /// Samples scheduled per iteration.
    pub per_iteration: usize,
    pub delta: f64,
    /// Stop when the L∞ change in α drops below this.
    pub tolerance: f64,
    /// Hard iteration cap.
    pub max_iterations: usize,
    /// Budget coupling γ_c: caps the loop at ⌊per_iteration · γ_c⌋
    /// iterations when set.
    pub budget_coupling: Option<f64>,
    pub seed: u64,
    pub solver: SolverSettings,
}

/// State emitted once per iteration of either loop.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Cumulative per-point sample counts.
    pub counts: Vec<usize>,
    /// Estimated objective values; NaN at points never sampled.
    pub f_hat: Vec<f64>,
    /// Members of Q̂(δ) at this iteration.
    pub q_hat: Vec<usize>,
    pub alloc: Allocation,
    /// L1 distance to the reference allocation, when one was supplied.
    pub og: Option<f64>,
    /// The allocation step was skipped (Q̂ empty) and α carried over.
    pub skipped_reopt: bool,
    /// Seconds since the start of the run.
    pub wall_clock: f64,
}

/// Σ |α̂ - α|.
pub fn optimality_gap(estimate: &Allocation, reference: &Allocation) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            left: estimate.len(),
            right: reference.len(),
        });
    }
    Ok(estimate
        .weights()
        .iter()
        .zip(reference.weights())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Closed-form sequential loop: pilot, then re-estimate / re-optimize /
/// schedule until the budget is spent. All estimates at an iteration use
/// every sample accumulated so far.
pub fn algo1_run(
    model: &LossModel,
    cfg: &Algo1Config,
    reference: Option<&Allocation>,
) -> Result<Vec<IterationRecord>> {
    let d = model.len();
    if cfg.pilot < 2 {
        return Err(Error::Config("pilot size must be at least 2".into()));
    }
    if cfg.total_budget < d * cfg.pilot {
        return Err(Error::Config(format!(
            "total budget {} cannot cover the pilot {} x {d}",
            cfg.total_budget, cfg.pilot
        )));
    }
    if !(cfg.delta > 0.0) {
        return Err(Error::Config("delta must be positive".into()));
    }
    if let RateFamily::Gaussian {
        known_variances: Some(v),
    } = &cfg.family
    {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                left: v.len(),
                right: d,
            });
        }
    }
    let per_iteration = cfg.per_iteration.unwrap_or(d.max(cfg.total_budget / 10));
    if per_iteration == 0 {
        return Err(Error::Config("per-iteration budget must be positive".into()));
    }

    let start = Instant::now();
    let mut scheduler = scheduler_stream(cfg.seed);
    let mut streams = point_streams(cfg.seed, d);
    let mut store = SampleStore::new(d);
    for point in 0..d {
        let draws = model.sample(point, cfg.pilot, &mut streams[point])?;
        store.append(point, &draws);
    }
    let mut used = d * cfg.pilot;

    let mut alloc = Allocation::uniform(d);
    let mut records = Vec::new();
    let mut iteration = 0usize;
    loop {
        let f_hat: Vec<f64> = (0..d).map(|i| store.mean(i)).collect::<Result<_>>()?;
        let f_min = f_hat.iter().copied().fold(f64::INFINITY, f64::min);
        let q_hat = q_set(&f_hat, f_min, cfg.delta)?.members;

        let mut skipped_reopt = false;
        if q_hat.is_empty() {
            skipped_reopt = true;
        } else {
            let rates = plugin_rates(&cfg.family, &f_hat, &store)?;
            let problem =
                AllocProblem::new(f_hat.clone(), q_hat.clone(), rates.as_ref(), cfg.solver.clone())?;
            alloc = problem.optimize(Some(&alloc))?.alloc;
        }

        let og = reference.map(|r| optimality_gap(&alloc, r)).transpose()?;
        records.push(IterationRecord {
            iteration,
            counts: store.counts(),
            f_hat,
            q_hat,
            alloc: alloc.clone(),
            og,
            skipped_reopt,
            wall_clock: start.elapsed().as_secs_f64(),
        });

        if used >= cfg.total_budget {
            break;
        }
        // Truncate the final draw to the remaining budget.
        let batch = per_iteration.min(cfg.total_budget - used);
        let counts = multinomial_schedule(&alloc, batch, &mut scheduler)?;
        for (point, &c) in counts.iter().enumerate() {
            if c > 0 {
                let draws = model.sample(point, c, &mut streams[point])?;
                store.append(point, &draws);
            }
        }
        used += batch;
        iteration += 1;
    }
    Ok(records)
}

/// Closed-form backend over the current estimates.
fn plugin_rates(
    family: &RateFamily,
    f_hat: &[f64],
    store: &SampleStore,
) -> Result<Box<dyn PairRateEval>> {
    match family {
        RateFamily::Gaussian { known_variances } => {
            let var = match known_variances {
                Some(v) => v.clone(),
                None => (0..f_hat.len())
                    .map(|i| store.variance(i))
                    .collect::<Result<_>>()?,
            };
            Ok(Box::new(GaussianRates {
                f: f_hat.to_vec(),
                var,
            }))
        }
        RateFamily::Binomial { trials } => {
            let m = *trials as f64;
            Ok(Box::new(BinomialRates {
                f: f_hat
                    .iter()
                    .map(|f| f.clamp(MEAN_CLAMP, m - MEAN_CLAMP))
                    .collect(),
                trials: *trials,
            }))
        }
    }
}

/// EM-style run output: the per-iteration records plus whether the α change
/// dropped below tolerance before the iteration cap.
#[derive(Debug, Clone)]
pub struct Algo2Outcome {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

/// Pair rates with exponents frozen at the last t-step: for each tracked
/// pair, Î(α_x, α_y) = -(α_y Λ̂(y, t/α_y) + α_x Λ̂(x, -t/α_x)). Each term
/// α Λ̂(·, t/α) is convex in α, so the surrogate is concave; its value may
/// be negative away from the optimizing exponent.
pub struct FrozenTRates<'a> {
    samples: Vec<&'a [f64]>,
    t: HashMap<(usize, usize), f64>,
}

impl<'a> FrozenTRates<'a> {
    pub fn new(samples: Vec<&'a [f64]>, t: HashMap<(usize, usize), f64>) -> Self {
        Self { samples, t }
    }

    fn frozen(&self, x: usize, y: usize) -> Result<f64> {
        self.t.get(&(x, y)).copied().ok_or_else(|| {
            Error::InvalidProblem(format!("no frozen exponent for pair ({x}, {y})"))
        })
    }
}

impl PairRateEval for FrozenTRates<'_> {
    fn rate(&self, x: usize, y: usize, alpha_x: f64, alpha_y: f64) -> Result<f64> {
        let t = self.frozen(x, y)?;
        let cy = EmpiricalCgf::new(self.samples[y])?;
        let cx = EmpiricalCgf::new(self.samples[x])?;
        let (ly, _) = cy.eval_deriv(t / alpha_y);
        let (lx, _) = cx.eval_deriv(-t / alpha_x);
        Ok(-(alpha_y * ly + alpha_x * lx))
    }

    fn grad(&self, x: usize, y: usize, alpha_x: f64, alpha_y: f64) -> Result<(f64, f64)> {
        let t = self.frozen(x, y)?;
        let uy = t / alpha_y;
        let ux = -t / alpha_x;
        let (ly, dly) = EmpiricalCgf::new(self.samples[y])?.eval_deriv(uy);
        let (lx, dlx) = EmpiricalCgf::new(self.samples[x])?.eval_deriv(ux);
        Ok((-lx + ux * dlx, -ly + uy * dly))
    }
}

/// EM-style loop: schedule from α⁽ᵏ⁾, maximize over t per pair on the
/// empirical CGFs of all accumulated samples, then re-optimize α with every
/// exponent frozen.
pub fn algo2_run(
    model: &LossModel,
    cfg: &Algo2Config,
    reference: Option<&Allocation>,
) -> Result<Algo2Outcome> {
    let d = model.len();
    if cfg.per_iteration == 0 {
        return Err(Error::Config("per-iteration sample count must be positive".into()));
    }
    if !(cfg.delta > 0.0) {
        return Err(Error::Config("delta must be positive".into()));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let mut cap = cfg.max_iterations;
    if let Some(gc) = cfg.budget_coupling {
        if !(0.0..=1.0).contains(&gc) {
            return Err(Error::Config("budget coupling must lie in [0, 1]".into()));
        }
        cap = cap.min(((cfg.per_iteration as f64 * gc).floor() as usize).max(1));
    }
    if cap == 0 {
        return Err(Error::Config("iteration cap must be positive".into()));
    }

    let mut alloc = match &cfg.initial {
        Some(a) => {
            if a.len() != d {
                return Err(Error::DimensionMismatch {
                    left: a.len(),
                    right: d,
                });
            }
            a.clone()
        }
        None => Allocation::uniform(d),
    };

    let start = Instant::now();
    let mut scheduler = scheduler_stream(cfg.seed);
    let mut streams = point_streams(cfg.seed, d);
    let mut store = SampleStore::new(d);
    let mut records = Vec::new();
    let mut converged = false;

    for iteration in 1..=cap {
        let counts = multinomial_schedule(&alloc, cfg.per_iteration, &mut scheduler)?;
        for (point, &c) in counts.iter().enumerate() {
            if c > 0 {
                let draws = model.sample(point, c, &mut streams[point])?;
                store.append(point, &draws);
            }
        }

        // Points never sampled have no estimate; they sit outside Q̂ and
        // above every sampled point so no pair touches them.
        let f_hat: Vec<f64> = (0..d)
            .map(|i| store.mean(i).unwrap_or(f64::INFINITY))
            .collect();
        let f_min = f_hat.iter().copied().fold(f64::INFINITY, f64::min);
        let q_hat: Vec<usize> = (0..d)
            .filter(|&i| f_hat[i].is_finite() && f_hat[i] > f_min + cfg.delta)
            .collect();

        let mut skipped_reopt = false;
        if q_hat.is_empty() {
            // α carries over unchanged; the zero change satisfies any
            // positive tolerance.
            skipped_reopt = true;
            converged = true;
        } else {
            // t-step: maximize -φ̂ over t for every active pair, at the
            // current α.
            let pairs: Vec<(usize, usize)> = q_hat
                .iter()
                .flat_map(|&x| {
                    let f_hat = &f_hat;
                    (0..d)
                        .filter(move |&y| f_hat[y] < f_hat[x])
                        .map(move |y| (x, y))
                })
                .collect();
            let exponents: Vec<Result<f64>> = pairs
                .par_iter()
                .map(|&(x, y)| {
                    let cx = EmpiricalCgf::new(store.samples(x))?;
                    let cy = EmpiricalCgf::new(store.samples(y))?;
                    Ok(pair_rate_numeric(0.0, alloc.get(x), alloc.get(y), &cx, &cy)?.t_star)
                })
                .collect();
            let mut frozen = HashMap::new();
            for (&pair, t) in pairs.iter().zip(exponents) {
                frozen.insert(pair, t?);
            }

            // M-step at the frozen exponents.
            let samples: Vec<&[f64]> = (0..d).map(|i| store.samples(i)).collect();
            let rates = FrozenTRates::new(samples, frozen);
            let problem =
                AllocProblem::new(f_hat.clone(), q_hat.clone(), &rates, cfg.solver.clone())?;
            let next = problem.optimize(Some(&alloc))?.alloc;
            let change = next
                .weights()
                .iter()
                .zip(alloc.weights())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            alloc = next;
            if change < cfg.tolerance {
                converged = true;
            }
        }

        let og = reference.map(|r| optimality_gap(&alloc, r)).transpose()?;
        records.push(IterationRecord {
            iteration,
            counts: store.counts(),
            f_hat: f_hat
                .iter()
                .map(|f| if f.is_finite() { *f } else { f64::NAN })
                .collect(),
            q_hat,
            alloc: alloc.clone(),
            og,
            skipped_reopt,
            wall_clock: start.elapsed().as_secs_f64(),
        });
        if converged {
            break;
        }
    }
    Ok(Algo2Outcome { records, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    #[test]
    fn schedule_degenerate_and_empty() {
        let floor = 1e-6;
        let w = vec![1.0 - 3.0 * floor, floor, floor, floor];
        let alloc = Allocation::new_unchecked(w);
        let mut rng = scheduler_stream(1);
        let counts = multinomial_schedule(&alloc, 100, &mut rng).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), 100);
        assert!(counts[0] >= 98, "counts {counts:?}");
        let counts = multinomial_schedule(&alloc, 0, &mut rng).unwrap();
        assert_eq!(counts, vec![0; 4]);
    }

    #[test]
    fn schedule_uniform_clt() {
        let alloc = Allocation::uniform(4);
        let mut rng = scheduler_stream(7);
        let counts = multinomial_schedule(&alloc, 1_000_000, &mut rng).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), 1_000_000);
        for &c in &counts {
            assert!((c as f64 - 250_000.0).abs() < 3_000.0, "counts {counts:?}");
        }
    }

    #[test]
    fn plugin_rate_identical_samples_is_zero() {
        let s = [0.3, 1.7, -0.2];
        let v = estimate_pair_rate_closed_form(
            &s,
            &s,
            0.5,
            0.5,
            &PairFamily::Gaussian { known_variances: None },
        )
        .unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn plugin_rate_known_variance_example() {
        // Sample means exactly 0 and 1, known unit variances.
        let v = estimate_pair_rate_closed_form(
            &[-1.0, 1.0],
            &[0.0, 2.0],
            0.5,
            0.5,
            &PairFamily::Gaussian {
                known_variances: Some((1.0, 1.0)),
            },
        )
        .unwrap();
        assert_relative_eq!(v, 0.125);
        // Single-sample variance request fails.
        assert!(estimate_pair_rate_closed_form(
            &[0.0],
            &[1.0],
            0.5,
            0.5,
            &PairFamily::Gaussian { known_variances: None },
        )
        .is_err());
    }

    #[test]
    fn plugin_rate_is_consistent() {
        // Median abs error against I = 0.125 shrinks from n=100 to n=100000.
        let model = LossModel::gaussian(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let family = PairFamily::Gaussian { known_variances: None };
        let mut medians = Vec::new();
        for n in [100usize, 1_000, 10_000, 100_000] {
            let errs: Vec<f64> = (0..20)
                .map(|seed| {
                    let sx = model
                        .sample(0, n, &mut crate::rng::point_stream(seed, 0))
                        .unwrap();
                    let sy = model
                        .sample(1, n, &mut crate::rng::point_stream(seed, 1))
                        .unwrap();
                    (estimate_pair_rate_closed_form(&sx, &sy, 0.5, 0.5, &family).unwrap()
                        - 0.125)
                        .abs()
                })
                .collect();
            medians.push(median(errs));
        }
        for w in medians.windows(2) {
            assert!(w[1] < w[0], "medians not decreasing: {medians:?}");
        }
    }

    #[test]
    fn gap_examples() {
        let a = Allocation::uniform(2);
        assert_eq!(optimality_gap(&a, &a).unwrap(), 0.0);
        let b = Allocation::new_unchecked(vec![1.0, 0.0]);
        let c = Allocation::new_unchecked(vec![0.0, 1.0]);
        assert_eq!(optimality_gap(&b, &c).unwrap(), 2.0);
        let d = Allocation::new_unchecked(vec![0.6, 0.4]);
        assert_relative_eq!(optimality_gap(&d, &a).unwrap(), 0.2);
        assert!(optimality_gap(&a, &Allocation::uniform(3)).is_err());
    }

    fn algo1_two_point(seed: u64) -> Vec<IterationRecord> {
        let model = LossModel::gaussian(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let cfg = Algo1Config {
            pilot: 10,
            per_iteration: None,
            total_budget: 2_000,
            delta: 0.5,
            family: RateFamily::Gaussian {
                known_variances: Some(vec![1.0, 1.0]),
            },
            seed,
            solver: SolverSettings::default(),
        };
        algo1_run(&model, &cfg, None).unwrap()
    }

    #[test]
    fn algo1_symmetric_two_point() {
        // True optimum is (0.5, 0.5); the median final weight over 50 seeds
        // lands within 0.05 of it.
        let finals: Vec<f64> = (0..50)
            .map(|seed| algo1_two_point(seed).last().unwrap().alloc.get(0))
            .collect();
        let med = median(finals);
        assert!((med - 0.5).abs() < 0.05, "median {med}");
    }

    #[test]
    fn algo1_counts_nondecreasing_and_budgeted() {
        let records = algo1_two_point(3);
        for w in records.windows(2) {
            for (a, b) in w[0].counts.iter().zip(&w[1].counts) {
                assert!(b >= a);
            }
        }
        let total: usize = records.last().unwrap().counts.iter().sum();
        assert_eq!(total, 2_000);
    }

    #[test]
    fn algo1_pilot_only_budget() {
        let model = LossModel::gaussian(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let cfg = Algo1Config {
            pilot: 5,
            per_iteration: None,
            total_budget: 10,
            delta: 0.5,
            family: RateFamily::Gaussian {
                known_variances: Some(vec![1.0, 1.0]),
            },
            seed: 0,
            solver: SolverSettings::default(),
        };
        let records = algo1_run(&model, &cfg, None).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].counts, vec![5, 5]);
    }

    #[test]
    fn algo1_is_bit_reproducible() {
        let a = algo1_two_point(11);
        let b = algo1_two_point(11);
        assert_eq!(a.len(), b.len());
        for (r, s) in a.iter().zip(&b) {
            assert_eq!(r.counts, s.counts);
            assert_eq!(r.alloc.weights(), s.alloc.weights());
            assert_eq!(r.f_hat, s.f_hat);
        }
    }

    #[test]
    fn algo1_records_og_against_reference() {
        let reference = Allocation::uniform(2);
        let model = LossModel::gaussian(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let cfg = Algo1Config {
            pilot: 10,
            per_iteration: None,
            total_budget: 500,
            delta: 0.5,
            family: RateFamily::Gaussian {
                known_variances: Some(vec![1.0, 1.0]),
            },
            seed: 5,
            solver: SolverSettings::default(),
        };
        let records = algo1_run(&model, &cfg, Some(&reference)).unwrap();
        for r in &records {
            let og = r.og.unwrap();
            assert!((0.0..=2.0).contains(&og));
        }
    }

    #[test]
    fn frozen_t_surrogate_is_midpoint_concave() {
        let model = LossModel::gaussian(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let sx = model.sample(0, 500, &mut crate::rng::point_stream(2, 0)).unwrap();
        let sy = model.sample(1, 500, &mut crate::rng::point_stream(2, 1)).unwrap();
        let mut t = HashMap::new();
        t.insert((1usize, 0usize), -0.25);
        let rates = FrozenTRates::new(vec![&sx, &sy], t);
        let eval = |ax: f64, ay: f64| rates.rate(1, 0, ax, ay).unwrap();
        // Midpoint concavity along several segments of the square.
        let pts = [(0.2, 0.3), (0.7, 0.6), (0.4, 0.9), (0.1, 0.1)];
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let (a, b) = (pts[i], pts[j]);
                let mid = eval(0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
                assert!(
                    mid >= 0.5 * (eval(a.0, a.1) + eval(b.0, b.1)) - 1e-9,
                    "segment {i}-{j}"
                );
            }
        }
    }

    fn algo2_two_point(seed: u64, tolerance: f64) -> Algo2Outcome {
        // Symmetric squared loss: both points sit one unit from the noise
        // mean, so the true values tie and the optimum is uniform.
        let model = LossModel::squared_error(vec![-1.0, 1.0], 0.0, 1.0).unwrap();
        let cfg = Algo2Config {
            initial: None,
            per_iteration: 200,
            delta: 1.0,
            tolerance,
            max_iterations: 20,
            budget_coupling: None,
            seed,
            solver: SolverSettings::default(),
        };
        algo2_run(&model, &cfg, None).unwrap()
    }

    #[test]
    fn algo2_symmetric_squared_loss() {
        let finals: Vec<f64> = (0..30)
            .map(|seed| {
                algo2_two_point(seed, 1e-3)
                    .records
                    .last()
                    .unwrap()
                    .alloc
                    .get(0)
            })
            .collect();
        let med = median(finals);
        assert!((med - 0.5).abs() < 0.05, "median {med}");
    }

    #[test]
    fn algo2_infinite_tolerance_single_iteration() {
        let out = algo2_two_point(4, f64::INFINITY);
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn algo2_budget_coupling_caps_iterations() {
        let model = LossModel::gaussian(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let cfg = Algo2Config {
            initial: None,
            per_iteration: 100,
            delta: 0.5,
            tolerance: 1e-12,
            max_iterations: 1_000,
            budget_coupling: Some(0.03),
            seed: 1,
            solver: SolverSettings::default(),
        };
        let out = algo2_run(&model, &cfg, None).unwrap();
        assert!(out.records.len() <= 3, "{} records", out.records.len());
    }

    #[test]
    fn algo2_is_bit_reproducible() {
        let a = algo2_two_point(9, 1e-3);
        let b = algo2_two_point(9, 1e-3);
        assert_eq!(a.converged, b.converged);
        assert_eq!(a.records.len(), b.records.len());
        for (r, s) in a.records.iter().zip(&b.records) {
            assert_eq!(r.counts, s.counts);
            assert_eq!(r.alloc.weights(), s.alloc.weights());
        }
    }

    #[test]
    fn algo2_separated_gaussian_pulls_mass_to_the_pair() {
        // Three points with a clear gap: the far point decays, the boundary
        // pair keeps real mass.
        let model = LossModel::gaussian(vec![0.0, 1.0, 3.0], vec![1.0, 1.0, 1.0]).unwrap();
        let cfg = Algo2Config {
            initial: None,
            per_iteration: 300,
            delta: 0.5,
            tolerance: 1e-3,
            max_iterations: 30,
            budget_coupling: None,
            seed: 12,
            solver: SolverSettings::default(),
        };
        let out = algo2_run(&model, &cfg, None).unwrap();
        let alloc = &out.records.last().unwrap().alloc;
        assert!(alloc.get(0) > 0.2, "alloc {:?}", alloc.weights());
        assert!(alloc.get(1) > 0.2, "alloc {:?}", alloc.weights());
        assert!(alloc.get(2) < alloc.get(1));
    }
}
