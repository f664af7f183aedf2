//! Concave max-min allocation program over the probability simplex:
//! projected supergradient ascent with a diminishing-step schedule followed
//! by an adaptive-step polish, plus a brute-force lattice oracle.

use crate::error::{Error, Result};
use crate::rate::{min_sum_rate, Allocation, PairRateEval, DEFAULT_ALPHA_FLOOR};

/// Ascent configuration.
#[derive(Debug, Clone)]
pub struct SolverSettings {
    /// Base step size c; the schedule phase uses c/√k.
    pub step_scale: f64,
    /// Iterations of the diminishing-step phase.
    pub schedule_iterations: usize,
    /// Total iteration cap across both phases.
    pub max_iterations: usize,
    /// Stop when the best objective has improved by less than
    /// `stall_tolerance` for this many consecutive iterations.
    pub stall_window: usize,
    pub stall_tolerance: f64,
    /// Allocation floor α_min.
    pub floor: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            step_scale: 0.3,
            schedule_iterations: 300,
            max_iterations: 10_000,
            stall_window: 50,
            stall_tolerance: 1e-9,
            floor: DEFAULT_ALPHA_FLOOR,
        }
    }
}

/// Result of the ascent: the best feasible iterate seen.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub alloc: Allocation,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// The max-min program: maximize over feasible α the minimum over x in the
/// Q-set of Σ_{y: f(y) < f(x)} I(α_x, α_y).
pub struct AllocProblem<'a> {
    f_values: Vec<f64>,
    q: Vec<usize>,
    rates: &'a dyn PairRateEval,
    settings: SolverSettings,
}

impl<'a> AllocProblem<'a> {
    pub fn new(
        f_values: Vec<f64>,
        q: Vec<usize>,
        rates: &'a dyn PairRateEval,
        settings: SolverSettings,
    ) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::EmptyQSet);
        }
        let d = f_values.len();
        if d < 2 {
            return Err(Error::InvalidProblem("need at least 2 points".into()));
        }
        if d as f64 * settings.floor >= 1.0 {
            return Err(Error::InvalidProblem(format!(
                "floor {} infeasible for {d} points",
                settings.floor
            )));
        }
        for &x in &q {
            if x >= d {
                return Err(Error::InvalidIndex { index: x, len: d });
            }
            if !f_values.iter().any(|&fy| fy < f_values[x]) {
                return Err(Error::InvalidProblem(format!(
                    "point {x} in the Q-set dominates no other point; its inner \
                     sum is empty and the objective degenerates to 0"
                )));
            }
        }
        Ok(Self {
            f_values,
            q,
            rates,
            settings,
        })
    }

    pub fn dim(&self) -> usize {
        self.f_values.len()
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f_values
    }

    pub fn q(&self) -> &[usize] {
        &self.q
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    /// g(α) = min_{x∈Q} Σ_{y: f(y)<f(x)} I(α_x, α_y).
    pub fn objective(&self, alloc: &Allocation) -> Result<f64> {
        self.check_feasible(alloc)?;
        Ok(min_sum_rate(&self.f_values, &self.q, alloc.weights(), self.rates)?.0)
    }

    fn check_feasible(&self, alloc: &Allocation) -> Result<()> {
        if alloc.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                left: alloc.len(),
                right: self.dim(),
            });
        }
        Ok(())
    }

    /// Supergradient at α: the gradient of the active branch of the outer
    /// min (lowest index on ties), assembled from the envelope-theorem
    /// partials of each pair rate. Entries of points appearing in no active
    /// pair are zero.
    pub fn supergradient(&self, alloc: &Allocation) -> Result<Vec<f64>> {
        Ok(self.eval_with_supergradient(alloc)?.1)
    }

    fn eval_with_supergradient(&self, alloc: &Allocation) -> Result<(f64, Vec<f64>)> {
        self.check_feasible(alloc)?;
        let w = alloc.weights();
        let (value, active) = min_sum_rate(&self.f_values, &self.q, w, self.rates)?;
        let mut grad = vec![0.0; self.dim()];
        for y in 0..self.dim() {
            if self.f_values[y] < self.f_values[active] {
                let (gx, gy) = self.rates.grad(active, y, w[active], w[y])?;
                grad[active] += gx;
                grad[y] += gy;
            }
        }
        Ok((value, grad))
    }

    /// Projected supergradient ascent from `start` (uniform when absent).
    /// Phase one follows the c/√k schedule along the normalized
    /// supergradient; phase two switches to an adaptive step that grows on
    /// success and shrinks on failure. The best iterate is returned.
    pub fn optimize(&self, start: Option<&Allocation>) -> Result<OptimizeOutcome> {
        let d = self.dim();
        let floor = self.settings.floor;
        let project = |v: &[f64]| Allocation::new_unchecked(project_to_floored_simplex(v, floor));

        let mut alpha = match start {
            Some(a) => {
                self.check_feasible(a)?;
                project(a.weights())
            }
            None => project(Allocation::uniform(d).weights()),
        };
        let (mut value, mut grad) = self.eval_with_supergradient(&alpha)?;
        let mut best = alpha.clone();
        let mut best_value = value;
        let mut stall = 0usize;
        let mut iterations = 0usize;
        let mut converged = false;

        // Phase 1: diminishing steps.
        for k in 1..=self.settings.schedule_iterations {
            if iterations >= self.settings.max_iterations {
                break;
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm < 1e-15 {
                converged = true;
                break;
            }
            let step = self.settings.step_scale / (k as f64).sqrt();
            let trial: Vec<f64> = alpha
                .weights()
                .iter()
                .zip(&grad)
                .map(|(a, g)| a + step * g / norm)
                .collect();
            alpha = project(&trial);
            let (v, g) = self.eval_with_supergradient(&alpha)?;
            value = v;
            grad = g;
            iterations += 1;
            if value > best_value + self.settings.stall_tolerance {
                stall = 0;
            } else {
                stall += 1;
            }
            if value > best_value {
                best_value = value;
                best = alpha.clone();
            }
            if stall >= self.settings.stall_window {
                converged = true;
                break;
            }
        }

        // Phase 2: adaptive step from the best iterate so far.
        if !converged {
            alpha = best.clone();
            let (v, g) = self.eval_with_supergradient(&alpha)?;
            value = v;
            grad = g;
            let mut step = self.settings.step_scale;
            while iterations < self.settings.max_iterations {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm < 1e-15 || step < 1e-13 {
                    converged = true;
                    break;
                }
                let trial: Vec<f64> = alpha
                    .weights()
                    .iter()
                    .zip(&grad)
                    .map(|(a, g)| a + step * g / norm)
                    .collect();
                let cand = project(&trial);
                let cand_value = self.objective(&cand)?;
                iterations += 1;
                if cand_value > value {
                    alpha = cand;
                    value = cand_value;
                    let (_, g) = self.eval_with_supergradient(&alpha)?;
                    grad = g;
                    step *= 1.6;
                } else {
                    step *= 0.5;
                }
                if value > best_value + self.settings.stall_tolerance {
                    stall = 0;
                } else {
                    stall += 1;
                }
                if value > best_value {
                    best_value = value;
                    best = alpha.clone();
                }
                if stall >= self.settings.stall_window {
                    converged = true;
                    break;
                }
            }
        }

        Ok(OptimizeOutcome {
            alloc: best,
            objective: best_value,
            iterations,
            converged,
        })
    }

    /// Exhaustive search over the simplex lattice with the given spacing.
    /// Limited to small grids; used to cross-check `optimize`.
    pub fn brute_force_oracle(&self, resolution: f64) -> Result<(Allocation, f64)> {
        const MAX_D: usize = 4;
        let d = self.dim();
        if d > MAX_D {
            return Err(Error::OracleTooLarge { max: MAX_D, got: d });
        }
        if ![0.01, 0.02, 0.05].iter().any(|r| (r - resolution).abs() < 1e-12) {
            return Err(Error::InvalidProblem(format!(
                "oracle resolution must be one of 0.01, 0.02, 0.05, got {resolution}"
            )));
        }
        let k = (1.0 / resolution).round() as usize;
        let mut counts = vec![0usize; d];
        let mut best: Option<(Vec<f64>, f64)> = None;
        self.lattice_search(resolution, k, 0, k, &mut counts, &mut best)?;
        let (weights, value) = best.ok_or_else(|| {
            Error::InvalidProblem("no feasible lattice point above the floor".into())
        })?;
        Ok((Allocation::new_unchecked(weights), value))
    }

    fn lattice_search(
        &self,
        resolution: f64,
        k: usize,
        coord: usize,
        remaining: usize,
        counts: &mut Vec<usize>,
        best: &mut Option<(Vec<f64>, f64)>,
    ) -> Result<()> {
        let d = self.dim();
        if coord == d - 1 {
            counts[coord] = remaining;
            let weights: Vec<f64> = counts.iter().map(|&c| c as f64 * resolution).collect();
            if weights.iter().all(|w| *w >= self.settings.floor) {
                let alloc = Allocation::new_unchecked(weights.clone());
                let value = self.objective(&alloc)?;
                if best.as_ref().is_none_or(|(_, b)| value > *b) {
                    *best = Some((weights, value));
                }
            }
            return Ok(());
        }
        for c in 0..=remaining {
            counts[coord] = c;
            self.lattice_search(resolution, k, coord + 1, remaining - c, counts, best)?;
        }
        Ok(())
    }
}

/// Euclidean projection onto {α : Σα = 1, α ≥ floor} by the sort-and-
/// threshold rule applied to the floored residual simplex.
pub fn project_to_floored_simplex(v: &[f64], floor: f64) -> Vec<f64> {
    let d = v.len();
    let mass = 1.0 - d as f64 * floor;
    debug_assert!(mass > 0.0);
    let shifted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumulative += s;
        let candidate = (cumulative - mass) / (i + 1) as f64;
        if i + 1 == d || sorted[i + 1] <= candidate {
            tau = candidate;
            break;
        }
    }
    shifted
        .iter()
        .map(|&s| (s - tau).max(0.0) + floor)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::GaussianRates;
    use approx::assert_relative_eq;

    fn two_point(var: [f64; 2]) -> GaussianRates {
        GaussianRates {
            f: vec![0.0, 1.0],
            var: var.to_vec(),
        }
    }

    #[test]
    fn projection_feasible_and_exact() {
        let p = project_to_floored_simplex(&[0.3, 0.9, -2.0], 1e-6);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&w| w >= 1e-6));
        // A feasible point projects to itself.
        let p = project_to_floored_simplex(&[0.25, 0.75], 1e-6);
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn objective_two_point() {
        let rates = two_point([1.0, 1.0]);
        let p = AllocProblem::new(
            vec![0.0, 1.0],
            vec![1],
            &rates,
            SolverSettings::default(),
        )
        .unwrap();
        let g = p.objective(&Allocation::uniform(2)).unwrap();
        assert_relative_eq!(g, 0.125);
        // Starving either side of the pair kills the objective.
        let g = p
            .objective(&Allocation::new_unchecked(vec![1e-6, 1.0 - 1e-6]))
            .unwrap();
        assert!(g < 1e-5);
    }

    #[test]
    fn objective_symmetric_under_relabeling() {
        let rates = GaussianRates {
            f: vec![0.0, 1.0, 1.0],
            var: vec![1.0, 2.0, 2.0],
        };
        let p = AllocProblem::new(
            vec![0.0, 1.0, 1.0],
            vec![1, 2],
            &rates,
            SolverSettings::default(),
        )
        .unwrap();
        let a = p
            .objective(&Allocation::new_unchecked(vec![0.4, 0.35, 0.25]))
            .unwrap();
        let b = p
            .objective(&Allocation::new_unchecked(vec![0.4, 0.25, 0.35]))
            .unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn rejects_degenerate_q_member() {
        let rates = two_point([1.0, 1.0]);
        // Index 0 is the grid minimizer; placing it in Q leaves an empty sum.
        let err = AllocProblem::new(
            vec![0.0, 1.0],
            vec![0],
            &rates,
            SolverSettings::default(),
        );
        assert!(matches!(err, Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn supergradient_symmetry_and_fd() {
        let rates = two_point([1.0, 1.0]);
        let p = AllocProblem::new(
            vec![0.0, 1.0],
            vec![1],
            &rates,
            SolverSettings::default(),
        )
        .unwrap();
        let g = p.supergradient(&Allocation::uniform(2)).unwrap();
        assert_relative_eq!(g[0], g[1], epsilon = 1e-12);
        // Central finite differences on the active branch.
        let a = Allocation::new_unchecked(vec![0.4, 0.6]);
        let g = p.supergradient(&a).unwrap();
        let h = 1e-5;
        for i in 0..2 {
            let mut up = a.weights().to_vec();
            let mut dn = up.clone();
            up[i] += h;
            dn[i] -= h;
            let branch = |w: &[f64]| rates.rate(1, 0, w[1], w[0]).unwrap();
            let fd = (branch(&up) - branch(&dn)) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "coord {i}");
        }
    }

    #[test]
    fn gaussian_grad_matches_calculus() {
        // d/dα of ½Δf²/(σ²_y/α_y + σ²_x/α_x).
        let rates = GaussianRates {
            f: vec![0.0, 1.5],
            var: vec![0.7, 2.0],
        };
        let (ax, ay) = (0.45, 0.55);
        let (gx, gy) = rates.grad(0, 1, ax, ay).unwrap();
        let spread = 2.0 / ay + 0.7 / ax;
        let expect_x = 0.5 * 1.5f64.powi(2) * (0.7 / (ax * ax)) / (spread * spread);
        let expect_y = 0.5 * 1.5f64.powi(2) * (2.0 / (ay * ay)) / (spread * spread);
        assert_relative_eq!(gx, expect_x, epsilon = 1e-8);
        assert_relative_eq!(gy, expect_y, epsilon = 1e-8);
    }

    #[test]
    fn optimize_symmetric_two_point() {
        let rates = two_point([1.0, 1.0]);
        let p = AllocProblem::new(
            vec![0.0, 1.0],
            vec![1],
            &rates,
            SolverSettings::default(),
        )
        .unwrap();
        let out = p.optimize(None).unwrap();
        assert!((out.alloc.get(0) - 0.5).abs() < 1e-6);
        assert!((out.alloc.get(1) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn optimize_unequal_variances() {
        // σ = (1, 2): optimum at α ∝ σ, i.e. (1/3, 2/3).
        let rates = two_point([1.0, 4.0]);
        let p = AllocProblem::new(
            vec![0.0, 1.0],
            vec![1],
            &rates,
            SolverSettings::default(),
        )
        .unwrap();
        let out = p.optimize(None).unwrap();
        assert!(
            (out.alloc.get(0) - 1.0 / 3.0).abs() < 1e-4,
            "α = {:?}",
            out.alloc.weights()
        );
        assert!((out.alloc.get(1) - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn optimize_is_deterministic() {
        let rates = GaussianRates {
            f: vec![0.0, 0.7, 1.9],
            var: vec![1.0, 2.5, 0.4],
        };
        let p = AllocProblem::new(
            vec![0.0, 0.7, 1.9],
            vec![1, 2],
            &rates,
            SolverSettings::default(),
        )
        .unwrap();
        let a = p.optimize(None).unwrap();
        let b = p.optimize(None).unwrap();
        assert_eq!(a.alloc.weights(), b.alloc.weights());
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn returned_alloc_is_simplex_tight() {
        let rates = two_point([1.0, 4.0]);
        let p = AllocProblem::new(
            vec![0.0, 1.0],
            vec![1],
            &rates,
            SolverSettings::default(),
        )
        .unwrap();
        let out = p.optimize(None).unwrap();
        let sum: f64 = out.alloc.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_examples() {
        let rates = two_point([1.0, 1.0]);
        let p = AllocProblem::new(
            vec![0.0, 1.0],
            vec![1],
            &rates,
            SolverSettings::default(),
        )
        .unwrap();
        let (alloc, _) = p.brute_force_oracle(0.01).unwrap();
        assert_relative_eq!(alloc.get(0), 0.5, epsilon = 1e-9);

        let rates = two_point([1.0, 4.0]);
        let p = AllocProblem::new(
            vec![0.0, 1.0],
            vec![1],
            &rates,
            SolverSettings::default(),
        )
        .unwrap();
        let (alloc, value) = p.brute_force_oracle(0.01).unwrap();
        assert_relative_eq!(alloc.get(0), 0.33, epsilon = 1e-9);
        assert_relative_eq!(alloc.get(1), 0.67, epsilon = 1e-9);
        // Ascent dominates the lattice.
        let out = p.optimize(None).unwrap();
        assert!(out.objective >= value - 1e-4);
    }

    #[test]
    fn oracle_rejects_big_and_odd() {
        let rates = GaussianRates {
            f: vec![0.0; 5].iter().enumerate().map(|(i, _)| i as f64).collect(),
            var: vec![1.0; 5],
        };
        let f: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let p = AllocProblem::new(f, vec![4], &rates, SolverSettings::default()).unwrap();
        assert!(matches!(
            p.brute_force_oracle(0.01),
            Err(Error::OracleTooLarge { .. })
        ));
        let rates = two_point([1.0, 1.0]);
        let p = AllocProblem::new(
            vec![0.0, 1.0],
            vec![1],
            &rates,
            SolverSettings::default(),
        )
        .unwrap();
        assert!(p.brute_force_oracle(0.03).is_err());
    }
}
