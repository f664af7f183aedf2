//! Pairwise mis-ordering rate functions: closed forms for Gaussian and
//! binomial losses, a numerical Legendre-Fenchel transform for arbitrary
//! CGFs, and the regret decay rate over a design grid.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::{CgfEval, LossModel};
use crate::search::{maximize_concave, Maximum};

/// Smallest admissible per-point allocation weight. The rate functions
/// evaluate Λ(·, t/α); a zero weight is a genuine singularity, so the
/// feasible set is floored away from the simplex boundary.
pub const DEFAULT_ALPHA_FLOOR: f64 = 1e-6;

const SIMPLEX_TOL: f64 = 1e-12;

/// Probability vector over the design grid: the linear allocation rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    weights: Vec<f64>,
}

impl Allocation {
    /// Validates against the default floor.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        Self::with_floor(weights, DEFAULT_ALPHA_FLOOR)
    }

    pub fn with_floor(weights: Vec<f64>, floor: f64) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidAllocation(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < floor || *w > 1.0) {
            return Err(Error::InvalidAllocation(format!(
                "weights must lie in [{floor}, 1]"
            )));
        }
        Ok(Self { weights })
    }

    pub(crate) fn new_unchecked(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn uniform(d: usize) -> Self {
        Self {
            weights: vec![1.0 / d as f64; d],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, i: usize) -> f64 {
        self.weights[i]
    }
}

/// Value of a rate function together with the optimizing exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateResult {
    pub value: f64,
    pub t_star: f64,
    pub converged: bool,
    pub iterations: u32,
}

/// φ(t) = α_y Λ(y, t/α_y) + α_x Λ(x, -t/α_x), the limiting scaled CGF of
/// the difference of empirical means.
pub fn phi(
    t: f64,
    alpha_x: f64,
    alpha_y: f64,
    cgf_x: &dyn CgfEval,
    cgf_y: &dyn CgfEval,
) -> Result<f64> {
    check_weight(alpha_x)?;
    check_weight(alpha_y)?;
    Ok(alpha_y * cgf_y.eval(t / alpha_y)? + alpha_x * cgf_x.eval(-t / alpha_x)?)
}

fn check_weight(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidAllocation(format!(
            "pair weight {alpha} outside (0, 1]"
        )));
    }
    Ok(())
}

/// Numerical Legendre-Fenchel transform
/// I(γ, α_x, α_y) = sup_t ( tγ - φ(t) ),
/// solved by bracketing expansion from t = 0 and golden-section refinement.
/// `converged = false` flags a supremum pushed to the domain boundary.
pub fn pair_rate_numeric(
    gamma: f64,
    alpha_x: f64,
    alpha_y: f64,
    cgf_x: &dyn CgfEval,
    cgf_y: &dyn CgfEval,
) -> Result<RateResult> {
    check_weight(alpha_x)?;
    check_weight(alpha_y)?;
    // Intersect the t-domains induced by both CGFs.
    let (dx_lo, dx_hi) = cgf_x.domain();
    let (dy_lo, dy_hi) = cgf_y.domain();
    let lo = (alpha_y * dy_lo).max(-alpha_x * dx_hi);
    let hi = (alpha_y * dy_hi).min(-alpha_x * dx_lo);
    if !(lo < 0.0 && hi > 0.0) {
        return Err(Error::CgfDomain { theta: 0.0 });
    }

    let h = |t: f64| match phi(t, alpha_x, alpha_y, cgf_x, cgf_y) {
        Ok(p) => t * gamma - p,
        Err(_) => f64::NEG_INFINITY,
    };
    let dphi = |t: f64| -> Option<f64> {
        let dy = cgf_y.deriv(t / alpha_y)?;
        let dx = cgf_x.deriv(-t / alpha_x)?;
        Some(gamma - dy + dx)
    };
    let has_deriv = cgf_x.deriv(0.0).is_some() && cgf_y.deriv(0.0).is_some();
    let m: Maximum = if has_deriv {
        maximize_concave(&h, Some(&dphi), lo, hi)
    } else {
        maximize_concave(&h, None, lo, hi)
    };
    Ok(RateResult {
        value: m.value.max(0.0),
        t_star: m.t,
        converged: m.converged,
        iterations: m.iterations,
    })
}

/// Closed-form rate for Gaussian losses:
/// (γ - (f_y - f_x))² / (2 (σ²_y/α_y + σ²_x/α_x)).
/// At γ = 0 this is ½ (f(x) - f(y))² (σ²(y)/α_y + σ²(x)/α_x)^{-1}.
pub fn pair_rate_gaussian(
    gamma: f64,
    f_x: f64,
    f_y: f64,
    var_x: f64,
    var_y: f64,
    alpha_x: f64,
    alpha_y: f64,
) -> Result<RateResult> {
    check_weight(alpha_x)?;
    check_weight(alpha_y)?;
    if !(var_x > 0.0 && var_y > 0.0) {
        return Err(Error::InvalidModel("variance must be positive".into()));
    }
    let spread = var_y / alpha_y + var_x / alpha_x;
    let shifted = gamma - (f_y - f_x);
    Ok(RateResult {
        value: shifted * shifted / (2.0 * spread),
        t_star: shifted / spread,
        converged: true,
        iterations: 0,
    })
}

/// Closed-form rate for binomial losses at γ = 0, with the explicit
/// optimizing exponent
/// t* = log( f_x (m - f_y) / (f_y (m - f_x)) ) / (1/α_x + 1/α_y).
pub fn pair_rate_binomial(
    f_x: f64,
    f_y: f64,
    trials: u64,
    alpha_x: f64,
    alpha_y: f64,
) -> Result<RateResult> {
    check_weight(alpha_x)?;
    check_weight(alpha_y)?;
    let m = trials as f64;
    if !(f_x > 0.0 && f_x < m && f_y > 0.0 && f_y < m) {
        return Err(Error::InvalidModel(format!(
            "binomial means must lie strictly in (0, {m})"
        )));
    }
    let t_star =
        ((f_x * (m - f_y)) / (f_y * (m - f_x))).ln() / (1.0 / alpha_x + 1.0 / alpha_y);
    let p_x = f_x / m;
    let p_y = f_y / m;
    let value = m
        * (-alpha_y * (1.0 - p_y + p_y * (t_star / alpha_y).exp()).ln()
            - alpha_x * (1.0 - p_x + p_x * (-t_star / alpha_x).exp()).ln());
    Ok(RateResult {
        value,
        t_star,
        converged: true,
        iterations: 0,
    })
}

/// Positive decay rate of the mis-ordering event {f̂(y) - f̂(x) ≥ γ}:
/// I(γ, α_x, α_y) when the event is atypical (f(y) - f(x) < γ, strictly),
/// zero otherwise. The limit in the LDP is the negation of this value.
pub fn misorder_rate(
    gamma: f64,
    f_x: f64,
    f_y: f64,
    rate: impl FnOnce(f64) -> Result<RateResult>,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    if f_y - f_x < gamma {
        Ok(rate(gamma)?.value)
    } else {
        Ok(0.0)
    }
}

/// Grid points whose true value exceeds the optimum by more than ε, plus the
/// sampling-error threshold δ = ε - (min f - f*).
#[derive(Debug, Clone, PartialEq)]
pub struct QSet {
    pub members: Vec<usize>,
    pub delta: f64,
}

/// Membership is decided by the strict inequality f(x) > f* + ε; requires
/// ε to exceed the discretization error so that δ > 0.
pub fn q_set(f_values: &[f64], f_star: f64, eps: f64) -> Result<QSet> {
    let discretization = f_values.iter().copied().fold(f64::INFINITY, f64::min) - f_star;
    if !(eps > discretization) {
        return Err(Error::EpsilonTooSmall { discretization });
    }
    let members = f_values
        .iter()
        .enumerate()
        .filter(|(_, f)| **f > f_star + eps)
        .map(|(i, _)| i)
        .collect();
    Ok(QSet {
        members,
        delta: eps - discretization,
    })
}

/// Evaluates the γ = 0 pair rate I(α_x, α_y) and its gradient for a fixed
/// instance. Implementations are pure and safe to call concurrently.
pub trait PairRateEval: Sync {
    /// I(α_x, α_y) for the pair (x, y). For surrogate evaluators the value
    /// may be negative.
    fn rate(&self, x: usize, y: usize, alpha_x: f64, alpha_y: f64) -> Result<f64>;

    /// (∂I/∂α_x, ∂I/∂α_y).
    fn grad(&self, x: usize, y: usize, alpha_x: f64, alpha_y: f64) -> Result<(f64, f64)>;
}

/// Gaussian closed-form backend over per-point means and variances.
pub struct GaussianRates {
    pub f: Vec<f64>,
    pub var: Vec<f64>,
}

impl PairRateEval for GaussianRates {
    fn rate(&self, x: usize, y: usize, alpha_x: f64, alpha_y: f64) -> Result<f64> {
        Ok(pair_rate_gaussian(
            0.0,
            self.f[x],
            self.f[y],
            self.var[x],
            self.var[y],
            alpha_x,
            alpha_y,
        )?
        .value)
    }

    fn grad(&self, x: usize, y: usize, alpha_x: f64, alpha_y: f64) -> Result<(f64, f64)> {
        let spread = self.var[y] / alpha_y + self.var[x] / alpha_x;
        let df2 = (self.f[y] - self.f[x]).powi(2);
        let common = 0.5 * df2 / (spread * spread);
        Ok((
            common * self.var[x] / (alpha_x * alpha_x),
            common * self.var[y] / (alpha_y * alpha_y),
        ))
    }
}

/// Binomial closed-form backend.
pub struct BinomialRates {
    pub f: Vec<f64>,
    pub trials: u64,
}

impl PairRateEval for BinomialRates {
    fn rate(&self, x: usize, y: usize, alpha_x: f64, alpha_y: f64) -> Result<f64> {
        Ok(pair_rate_binomial(self.f[x], self.f[y], self.trials, alpha_x, alpha_y)?.value)
    }

    fn grad(&self, x: usize, y: usize, alpha_x: f64, alpha_y: f64) -> Result<(f64, f64)> {
        let r = pair_rate_binomial(self.f[x], self.f[y], self.trials, alpha_x, alpha_y)?;
        let model = binomial_cgf(self.f[x], self.trials);
        let model_y = binomial_cgf(self.f[y], self.trials);
        Ok(envelope_grad(r.t_star, alpha_x, alpha_y, &model, &model_y))
    }
}

fn binomial_cgf(f: f64, trials: u64) -> impl Fn(f64) -> (f64, f64) {
    let m = trials as f64;
    let p = f / m;
    move |theta: f64| {
        let (lam, dlam) = if theta > 0.0 {
            let q = (1.0 - p) * (-theta).exp() + p;
            (m * (theta + q.ln()), m * p / q)
        } else {
            let e = theta.exp();
            let q = 1.0 - p + p * e;
            (m * q.ln(), m * p * e / q)
        };
        (lam, dlam)
    }
}

/// Envelope-theorem gradient of I = sup_t(-φ) at the optimizing exponent:
/// ∂I/∂α_y = -Λ(y, t*/α_y) + (t*/α_y) Λ'(y, t*/α_y), and symmetrically for
/// α_x at -t*.
fn envelope_grad(
    t_star: f64,
    alpha_x: f64,
    alpha_y: f64,
    cgf_x: &dyn Fn(f64) -> (f64, f64),
    cgf_y: &dyn Fn(f64) -> (f64, f64),
) -> (f64, f64) {
    let uy = t_star / alpha_y;
    let ux = -t_star / alpha_x;
    let (ly, dly) = cgf_y(uy);
    let (lx, dlx) = cgf_x(ux);
    (-lx + ux * dlx, -ly + uy * dly)
}

/// Numerical backend over a loss model's analytic CGFs.
pub struct NumericRates<'a> {
    pub model: &'a LossModel,
}

impl PairRateEval for NumericRates<'_> {
    fn rate(&self, x: usize, y: usize, alpha_x: f64, alpha_y: f64) -> Result<f64> {
        let r = pair_rate_numeric(
            0.0,
            alpha_x,
            alpha_y,
            &self.model.cgf_at(x),
            &self.model.cgf_at(y),
        )?;
        if !r.converged {
            return Err(Error::PairUnconverged { x, y });
        }
        Ok(r.value)
    }

    fn grad(&self, x: usize, y: usize, alpha_x: f64, alpha_y: f64) -> Result<(f64, f64)> {
        let r = pair_rate_numeric(
            0.0,
            alpha_x,
            alpha_y,
            &self.model.cgf_at(x),
            &self.model.cgf_at(y),
        )?;
        if !r.converged {
            return Err(Error::PairUnconverged { x, y });
        }
        let uy = r.t_star / alpha_y;
        let ux = -r.t_star / alpha_x;
        let (ly, dly) = (self.model.cgf(y, uy)?, self.model.cgf_deriv(y, uy)?);
        let (lx, dlx) = (self.model.cgf(x, ux)?, self.model.cgf_deriv(x, ux)?);
        Ok((-lx + ux * dlx, -ly + uy * dly))
    }
}

/// min over x in Q of Σ_{y: f(y) < f(x)} I(α_x, α_y), together with the
/// lowest-index active minimizer. Pair evaluations run in parallel; the
/// reduction order is fixed, so results are deterministic.
pub(crate) fn min_sum_rate(
    f_values: &[f64],
    q: &[usize],
    weights: &[f64],
    rates: &dyn PairRateEval,
) -> Result<(f64, usize)> {
    if q.is_empty() {
        return Err(Error::EmptyQSet);
    }
    let sums: Vec<Result<f64>> = q
        .par_iter()
        .map(|&x| {
            let mut sum = 0.0;
            for y in 0..f_values.len() {
                if f_values[y] < f_values[x] {
                    sum += rates.rate(x, y, weights[x], weights[y])?;
                }
            }
            Ok(sum)
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut best_x = q[0];
    for (&x, sum) in q.iter().zip(sums) {
        let sum = sum?;
        if sum < best {
            best = sum;
            best_x = x;
        }
    }
    Ok((best, best_x))
}

/// Regret decay rate J(ε) = min_{x∈Q(δ)} Σ_{y: f(y)<f(x)} I(α_x, α_y).
pub fn regret_rate(
    f_values: &[f64],
    f_star: f64,
    eps: f64,
    alloc: &Allocation,
    rates: &dyn PairRateEval,
) -> Result<f64> {
    if alloc.len() != f_values.len() {
        return Err(Error::DimensionMismatch {
            left: alloc.len(),
            right: f_values.len(),
        });
    }
    let q = q_set(f_values, f_star, eps)?;
    let (value, _) = min_sum_rate(f_values, &q.members, alloc.weights(), rates)?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossModel;
    use approx::assert_relative_eq;

    #[test]
    fn phi_examples() {
        let model = LossModel::gaussian(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let (x, y) = (model.cgf_at(0), model.cgf_at(1));
        assert_eq!(phi(0.0, 0.5, 0.5, &x, &y).unwrap(), 0.0);
        assert_relative_eq!(phi(1.0, 0.5, 0.5, &x, &y).unwrap(), 3.0);
        // Identical models: mean terms cancel, φ(t) = t² (2σ²/α) / 2.
        let same = LossModel::gaussian(vec![0.7, 0.7], vec![2.0, 2.0]).unwrap();
        let (sx, sy) = (same.cgf_at(0), same.cgf_at(1));
        let t = 0.3;
        assert_relative_eq!(
            phi(t, 0.25, 0.25, &sx, &sy).unwrap(),
            t * t * (2.0 * 2.0 / 0.25) / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gaussian_closed_form_examples() {
        let r = pair_rate_gaussian(0.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5).unwrap();
        assert_eq!(r.value, 0.0);
        let r = pair_rate_gaussian(0.0, 0.0, 1.0, 1.0, 1.0, 0.5, 0.5).unwrap();
        assert_relative_eq!(r.value, 0.125);
        let r = pair_rate_gaussian(0.5, 0.0, 1.0, 1.0, 1.0, 0.5, 0.5).unwrap();
        assert_relative_eq!(r.value, 0.03125);
    }

    #[test]
    fn numeric_matches_gaussian_closed_form() {
        let model = LossModel::gaussian(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let r = pair_rate_numeric(0.0, 0.5, 0.5, &model.cgf_at(0), &model.cgf_at(1)).unwrap();
        assert!((r.value - 0.125).abs() < 1e-6, "value {}", r.value);
        assert!((r.t_star + 0.25).abs() < 1e-6, "t* {}", r.t_star);
        assert!(r.converged);
        // Equal means, γ = 0: maximum at the origin.
        let flat = LossModel::gaussian(vec![1.0, 1.0], vec![1.0, 2.0]).unwrap();
        let r = pair_rate_numeric(0.0, 0.5, 0.5, &flat.cgf_at(0), &flat.cgf_at(1)).unwrap();
        assert!(r.value < 1e-12);
        assert!(r.t_star.abs() < 1e-6);
    }

    #[test]
    fn binomial_t_star_formula() {
        let r = pair_rate_binomial(6.0, 4.0, 10, 0.5, 0.5).unwrap();
        assert!((r.t_star - 0.202733).abs() < 1e-6, "t* {}", r.t_star);
        let model = LossModel::binomial(vec![6.0, 4.0], 10).unwrap();
        let num = pair_rate_numeric(0.0, 0.5, 0.5, &model.cgf_at(0), &model.cgf_at(1)).unwrap();
        assert!((r.value - num.value).abs() < 1e-6);
        assert!((r.t_star - num.t_star).abs() < 1e-8);
        // Equal means: zero rate at t* = 0.
        let r = pair_rate_binomial(4.0, 4.0, 10, 0.3, 0.7).unwrap();
        assert_eq!(r.t_star, 0.0);
        assert!(r.value.abs() < 1e-15);
    }

    #[test]
    fn squared_loss_numeric_rate_is_finite() {
        // CGF domain is a half line; the transform must stay interior.
        let model = LossModel::squared_error(vec![0.5, 2.0], 0.0, 1.0).unwrap();
        let r = pair_rate_numeric(0.0, 0.5, 0.5, &model.cgf_at(0), &model.cgf_at(1)).unwrap();
        assert!(r.converged);
        assert!(r.value > 0.0);
        assert!(r.value.is_finite());
    }

    #[test]
    fn misorder_examples() {
        // Typical event: indicator off.
        let v = misorder_rate(1.0, 0.0, 2.0, |g| {
            pair_rate_gaussian(g, 0.0, 2.0, 1.0, 1.0, 0.5, 0.5)
        })
        .unwrap();
        assert_eq!(v, 0.0);
        // Equal means, γ = 0.1: γ² / (2·4).
        let v = misorder_rate(0.1, 0.0, 0.0, |g| {
            pair_rate_gaussian(g, 0.0, 0.0, 1.0, 1.0, 0.5, 0.5)
        })
        .unwrap();
        assert_relative_eq!(v, 0.00125);
        // Boundary f(y) - f(x) = γ exactly: strict inequality, rate 0.
        let v = misorder_rate(0.5, 0.0, 0.5, |g| {
            pair_rate_gaussian(g, 0.0, 0.5, 1.0, 1.0, 0.5, 0.5)
        })
        .unwrap();
        assert_eq!(v, 0.0);
        assert!(misorder_rate(0.0, 0.0, 1.0, |_| unreachable!()).is_err());
    }

    #[test]
    fn rate_convex_in_gamma_with_min_at_mean_gap() {
        // z ↦ I(z, ·) is convex with minimum 0 at z = f(y) - f(x).
        let (fx, fy) = (0.2, 1.1);
        let eval = |z: f64| {
            pair_rate_gaussian(z, fx, fy, 1.0, 0.5, 0.4, 0.6)
                .unwrap()
                .value
        };
        let zs: Vec<f64> = (0..41).map(|i| -1.0 + 0.1 * i as f64).collect();
        for w in zs.windows(3) {
            let mid = eval(w[1]);
            assert!(mid <= 0.5 * (eval(w[0]) + eval(w[2])) + 1e-12);
        }
        assert!(eval(fy - fx) < 1e-15);
        assert!(eval(fy - fx + 0.3) > 0.0);
        assert!(eval(fy - fx - 0.3) > 0.0);
    }

    #[test]
    fn q_set_examples() {
        let q = q_set(&[0.0, 0.1, 0.5, 2.0], 0.0, 1.0).unwrap();
        assert_eq!(q.members, vec![3]);
        assert_eq!(q.delta, 1.0);
        let q = q_set(&[0.0, 0.1, 0.5, 2.0], 0.0, 5.0).unwrap();
        assert!(q.members.is_empty());
        let q = q_set(&[0.0, 1.0, 2.0, 3.0], 0.0, 1.5).unwrap();
        assert_eq!(q.members, vec![2, 3]);
        assert!(matches!(
            q_set(&[0.5, 1.0], 0.0, 0.2),
            Err(Error::EpsilonTooSmall { .. })
        ));
    }

    #[test]
    fn regret_rate_two_point() {
        let alloc = Allocation::uniform(2);
        let rates = GaussianRates {
            f: vec![0.0, 1.0],
            var: vec![1.0, 1.0],
        };
        let j = regret_rate(&[0.0, 1.0], 0.0, 0.5, &alloc, &rates).unwrap();
        assert_relative_eq!(j, 0.125);
        // Empty Q is an error.
        assert!(matches!(
            regret_rate(&[0.0, 1.0], 0.0, 2.0, &alloc, &rates),
            Err(Error::EmptyQSet)
        ));
    }

    #[test]
    fn regret_rate_shrinks_as_competitor_starves() {
        let rates = GaussianRates {
            f: vec![0.0, 1.0],
            var: vec![1.0, 1.0],
        };
        let mut last = f64::INFINITY;
        for ay in [0.5, 0.1, 0.01, 1e-4] {
            let alloc = Allocation::new_unchecked(vec![ay, 1.0 - ay]);
            let j = regret_rate(&[0.0, 1.0], 0.0, 0.5, &alloc, &rates).unwrap();
            assert!(j < last);
            last = j;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn backends_agree_on_regret() {
        let model = LossModel::gaussian(vec![0.0, 0.6, 1.4], vec![1.0, 0.5, 2.0]).unwrap();
        let alloc = Allocation::new_unchecked(vec![0.5, 0.3, 0.2]);
        let f = model.true_values().unwrap();
        let closed = GaussianRates {
            f: f.clone(),
            var: vec![1.0, 0.5, 2.0],
        };
        let numeric = NumericRates { model: &model };
        let a = regret_rate(&f, 0.0, 0.3, &alloc, &closed).unwrap();
        let b = regret_rate(&f, 0.0, 0.3, &alloc, &numeric).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn allocation_validation() {
        assert!(Allocation::new(vec![0.5, 0.5]).is_ok());
        assert!(Allocation::new(vec![0.6, 0.5]).is_err());
        assert!(Allocation::new(vec![1.0, 0.0]).is_err());
        assert!(Allocation::new(vec![0.5, 0.25, 0.25]).is_ok());
    }
}
