//! Loss distributions at design points: sampling, analytic cumulant
//! generating functions, and the empirical CGF estimator.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};

use crate::error::{Error, Result};

/// Evaluates a cumulant generating function Λ(θ).
///
/// `eval` returns a domain error outside the finiteness region; `domain`
/// reports that region as an open interval; `deriv` is Λ'(θ) when available.
pub trait CgfEval: Sync {
    fn eval(&self, theta: f64) -> Result<f64>;

    fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn deriv(&self, _theta: f64) -> Option<f64> {
        None
    }
}

#[derive(Debug)]
enum Kind {
    /// Loss at point i is N(means[i], variances[i]).
    Gaussian { means: Vec<f64>, variances: Vec<f64> },
    /// Loss at point i is Bin(f[i]/m, m); values are success counts.
    Binomial { f: Vec<f64>, trials: u64 },
    /// Loss at point i is (x_i - ξ)^2 with ξ ~ N(noise_mean, noise_variance).
    SquaredError {
        points: Vec<f64>,
        noise_mean: f64,
        noise_variance: f64,
    },
    /// Externally supplied sample streams, one column per point. Draws are
    /// consumed sequentially and never reused.
    Table {
        columns: Vec<Vec<f64>>,
        cursors: Vec<AtomicUsize>,
    },
}

/// Per-point sampling distribution of the loss, with analytic CGFs where the
/// distribution family admits one.
#[derive(Debug)]
pub struct LossModel {
    kind: Kind,
}

impl Clone for LossModel {
    fn clone(&self) -> Self {
        let kind = match &self.kind {
            Kind::Gaussian { means, variances } => Kind::Gaussian {
                means: means.clone(),
                variances: variances.clone(),
            },
            Kind::Binomial { f, trials } => Kind::Binomial {
                f: f.clone(),
                trials: *trials,
            },
            Kind::SquaredError {
                points,
                noise_mean,
                noise_variance,
            } => Kind::SquaredError {
                points: points.clone(),
                noise_mean: *noise_mean,
                noise_variance: *noise_variance,
            },
            Kind::Table { columns, cursors } => Kind::Table {
                columns: columns.clone(),
                cursors: cursors
                    .iter()
                    .map(|c| AtomicUsize::new(c.load(Ordering::Relaxed)))
                    .collect(),
            },
        };
        Self { kind }
    }
}

impl LossModel {
    pub fn gaussian(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::DimensionMismatch {
                left: means.len(),
                right: variances.len(),
            });
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidModel("variance must be positive".into()));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidModel("non-finite mean".into()));
        }
        Ok(Self {
            kind: Kind::Gaussian { means, variances },
        })
    }

    pub fn binomial(f: Vec<f64>, trials: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::InvalidModel("trials must be positive".into()));
        }
        let m = trials as f64;
        if f.iter().any(|v| !(*v > 0.0 && *v < m)) {
            return Err(Error::InvalidModel(format!(
                "binomial mean must lie strictly in (0, {m})"
            )));
        }
        Ok(Self {
            kind: Kind::Binomial { f, trials },
        })
    }

    pub fn squared_error(points: Vec<f64>, noise_mean: f64, noise_variance: f64) -> Result<Self> {
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::InvalidModel("noise variance must be positive".into()));
        }
        if !noise_mean.is_finite() || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        Ok(Self {
            kind: Kind::SquaredError {
                points,
                noise_mean,
                noise_variance,
            },
        })
    }

    pub fn table(columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidModel("table has no columns".into()));
        }
        let cursors = columns.iter().map(|_| AtomicUsize::new(0)).collect();
        Ok(Self {
            kind: Kind::Table { columns, cursors },
        })
    }

    /// Reads a table model from CSV text: a header row of point indices, then
    /// one column of loss values per design point.
    pub fn table_from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidModel("empty table CSV".into()))?;
        let d = header.split(',').count();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); d];
        for (row_no, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d {
                return Err(Error::InvalidModel(format!(
                    "table row {} has {} fields, expected {d}",
                    row_no + 2,
                    fields.len()
                )));
            }
            for (col, field) in fields.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidModel(format!("bad number {:?} in table row {}", field, row_no + 2))
                })?;
                columns[col].push(v);
            }
        }
        Self::table(columns)
    }

    /// Number of design points the model is bound to.
    pub fn len(&self) -> usize {
        match &self.kind {
            Kind::Gaussian { means, .. } => means.len(),
            Kind::Binomial { f, .. } => f.len(),
            Kind::SquaredError { points, .. } => points.len(),
            Kind::Table { columns, .. } => columns.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_index(&self, point: usize) -> Result<()> {
        if point >= self.len() {
            return Err(Error::InvalidIndex {
                index: point,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// True objective value f(x_i) = E[L(x_i, ξ)].
    pub fn true_value(&self, point: usize) -> Result<f64> {
        self.check_index(point)?;
        match &self.kind {
            Kind::Gaussian { means, .. } => Ok(means[point]),
            Kind::Binomial { f, .. } => Ok(f[point]),
            Kind::SquaredError {
                points,
                noise_mean,
                noise_variance,
            } => Ok((points[point] - noise_mean).powi(2) + noise_variance),
            Kind::Table { .. } => Err(Error::NoAnalyticCgf),
        }
    }

    /// All true objective values.
    pub fn true_values(&self) -> Result<Vec<f64>> {
        (0..self.len()).map(|i| self.true_value(i)).collect()
    }

    /// True variance of the loss at a point, where the family admits one.
    pub fn true_variance(&self, point: usize) -> Result<f64> {
        self.check_index(point)?;
        match &self.kind {
            Kind::Gaussian { variances, .. } => Ok(variances[point]),
            Kind::Binomial { f, trials } => {
                let m = *trials as f64;
                let p = f[point] / m;
                Ok(m * p * (1.0 - p))
            }
            Kind::SquaredError {
                points,
                noise_mean,
                noise_variance,
            } => {
                // Var[(x-ξ)^2] = 2 s^4 + 4 s^2 δ^2 for ξ ~ N(μ, s^2), δ = x-μ.
                let delta2 = (points[point] - noise_mean).powi(2);
                let s2 = *noise_variance;
                Ok(2.0 * s2 * s2 + 4.0 * s2 * delta2)
            }
            Kind::Table { .. } => Err(Error::NoAnalyticCgf),
        }
    }

    /// Draws `count` i.i.d. losses at the given point. Deterministic given
    /// the rng state; table models consume their stored stream instead.
    pub fn sample(&self, point: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.check_index(point)?;
        match &self.kind {
            Kind::Gaussian { means, variances } => {
                let dist = Normal::new(means[point], variances[point].sqrt())
                    .expect("validated at construction");
                Ok((0..count).map(|_| dist.sample(rng)).collect())
            }
            Kind::Binomial { f, trials } => {
                let dist = Binomial::new(*trials, f[point] / *trials as f64)
                    .expect("validated at construction");
                Ok((0..count).map(|_| dist.sample(rng) as f64).collect())
            }
            Kind::SquaredError {
                points,
                noise_mean,
                noise_variance,
            } => {
                let dist = Normal::new(*noise_mean, noise_variance.sqrt())
                    .expect("validated at construction");
                let x = points[point];
                Ok((0..count).map(|_| (x - dist.sample(rng)).powi(2)).collect())
            }
            Kind::Table { columns, cursors } => {
                let col = &columns[point];
                let start = cursors[point].fetch_add(count, Ordering::Relaxed);
                if start + count > col.len() {
                    cursors[point].store(col.len(), Ordering::Relaxed);
                    return Err(Error::TableExhausted {
                        point,
                        requested: count,
                        remaining: col.len().saturating_sub(start),
                    });
                }
                Ok(col[start..start + count].to_vec())
            }
        }
    }

    pub fn has_analytic_cgf(&self) -> bool {
        !matches!(self.kind, Kind::Table { .. })
    }

    /// Open interval of θ on which the CGF at `point` is finite.
    pub fn cgf_domain(&self, point: usize) -> Result<(f64, f64)> {
        self.check_index(point)?;
        match &self.kind {
            Kind::Gaussian { .. } | Kind::Binomial { .. } => {
                Ok((f64::NEG_INFINITY, f64::INFINITY))
            }
            Kind::SquaredError { noise_variance, .. } => {
                Ok((f64::NEG_INFINITY, 0.5 / noise_variance))
            }
            Kind::Table { .. } => Err(Error::NoAnalyticCgf),
        }
    }

    /// Analytic CGF Λ(x_point, θ).
    pub fn cgf(&self, point: usize, theta: f64) -> Result<f64> {
        self.check_index(point)?;
        if !theta.is_finite() {
            return Err(Error::CgfDomain { theta });
        }
        match &self.kind {
            Kind::Gaussian { means, variances } => {
                Ok(means[point] * theta + 0.5 * variances[point] * theta * theta)
            }
            Kind::Binomial { f, trials } => {
                let m = *trials as f64;
                let p = f[point] / m;
                // m log(1 - p + p e^θ), stabilized for large θ.
                if theta > 0.0 {
                    Ok(m * (theta + ((1.0 - p) * (-theta).exp() + p).ln()))
                } else {
                    Ok(m * (1.0 - p + p * theta.exp()).ln())
                }
            }
            Kind::SquaredError {
                points,
                noise_mean,
                noise_variance,
            } => {
                let s2 = *noise_variance;
                let u = s2 * theta;
                if u >= 0.5 {
                    return Err(Error::CgfDomain { theta });
                }
                let lambda = (points[point] - noise_mean).powi(2) / s2;
                Ok(lambda * u / (1.0 - 2.0 * u) - 0.5 * (1.0 - 2.0 * u).ln())
            }
            Kind::Table { .. } => Err(Error::NoAnalyticCgf),
        }
    }

    /// Analytic Λ'(x_point, θ).
    pub fn cgf_deriv(&self, point: usize, theta: f64) -> Result<f64> {
        self.check_index(point)?;
        if !theta.is_finite() {
            return Err(Error::CgfDomain { theta });
        }
        match &self.kind {
            Kind::Gaussian { means, variances } => Ok(means[point] + variances[point] * theta),
            Kind::Binomial { f, trials } => {
                let m = *trials as f64;
                let p = f[point] / m;
                // m p e^θ / (1 - p + p e^θ), stabilized for large |θ|.
                if theta > 0.0 {
                    Ok(m * p / ((1.0 - p) * (-theta).exp() + p))
                } else {
                    let e = theta.exp();
                    Ok(m * p * e / (1.0 - p + p * e))
                }
            }
            Kind::SquaredError {
                points,
                noise_mean,
                noise_variance,
            } => {
                let s2 = *noise_variance;
                let u = s2 * theta;
                if u >= 0.5 {
                    return Err(Error::CgfDomain { theta });
                }
                let lambda = (points[point] - noise_mean).powi(2) / s2;
                let r = 1.0 - 2.0 * u;
                Ok(s2 * (lambda / (r * r) + 1.0 / r))
            }
            Kind::Table { .. } => Err(Error::NoAnalyticCgf),
        }
    }

    /// CGF of a single point as a [`CgfEval`] binding.
    pub fn cgf_at(&self, point: usize) -> ModelCgf<'_> {
        ModelCgf { model: self, point }
    }
}

/// Analytic CGF of one design point.
pub struct ModelCgf<'a> {
    model: &'a LossModel,
    point: usize,
}

impl CgfEval for ModelCgf<'_> {
    fn eval(&self, theta: f64) -> Result<f64> {
        self.model.cgf(self.point, theta)
    }

    fn domain(&self) -> (f64, f64) {
        self.model
            .cgf_domain(self.point)
            .unwrap_or((f64::NEG_INFINITY, f64::INFINITY))
    }

    fn deriv(&self, theta: f64) -> Option<f64> {
        self.model.cgf_deriv(self.point, theta).ok()
    }
}

/// Empirical CGF estimator log((1/m) Σ exp(θ L_i)), computed in
/// log-sum-exp form so that large θ·L does not overflow.
pub fn empirical_cgf(samples: &[f64], theta: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if theta == 0.0 {
        return Ok(0.0);
    }
    let shift = samples
        .iter()
        .map(|l| theta * l)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = samples.iter().map(|l| (theta * l - shift).exp()).sum();
    Ok(shift + (sum / samples.len() as f64).ln())
}

/// Empirical CGF of a fixed sample set as a [`CgfEval`].
pub struct EmpiricalCgf<'a> {
    samples: &'a [f64],
}

impl<'a> EmpiricalCgf<'a> {
    pub fn new(samples: &'a [f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        Ok(Self { samples })
    }

    /// Fused (Λ̂(θ), Λ̂'(θ)) in a single pass over the samples.
    pub fn eval_deriv(&self, theta: f64) -> (f64, f64) {
        if theta == 0.0 {
            let mean = self.samples.iter().sum::<f64>() / self.samples.len() as f64;
            return (0.0, mean);
        }
        let shift = self
            .samples
            .iter()
            .map(|l| theta * l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for &l in self.samples {
            let w = (theta * l - shift).exp();
            sum += w;
            weighted += w * l;
        }
        (
            shift + (sum / self.samples.len() as f64).ln(),
            weighted / sum,
        )
    }
}

impl CgfEval for EmpiricalCgf<'_> {
    fn eval(&self, theta: f64) -> Result<f64> {
        empirical_cgf(self.samples, theta)
    }

    fn deriv(&self, theta: f64) -> Option<f64> {
        Some(self.eval_deriv(theta).1)
    }
}

/// Append-only per-point sample buffers.
#[derive(Debug, Clone, Default)]
pub struct SampleStore {
    buffers: Vec<Vec<f64>>,
}

impl SampleStore {
    pub fn new(d: usize) -> Self {
        Self {
            buffers: vec![Vec::new(); d],
        }
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn append(&mut self, point: usize, samples: &[f64]) {
        self.buffers[point].extend_from_slice(samples);
    }

    pub fn count(&self, point: usize) -> usize {
        self.buffers[point].len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.buffers.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.buffers.iter().map(Vec::len).sum()
    }

    pub fn samples(&self, point: usize) -> &[f64] {
        &self.buffers[point]
    }

    pub fn mean(&self, point: usize) -> Result<f64> {
        let buf = &self.buffers[point];
        if buf.is_empty() {
            return Err(Error::NoSamples(point));
        }
        Ok(buf.iter().sum::<f64>() / buf.len() as f64)
    }

    /// Unbiased sample variance; needs at least two samples.
    pub fn variance(&self, point: usize) -> Result<f64> {
        let buf = &self.buffers[point];
        if buf.len() < 2 {
            return Err(Error::TooFewSamples(point, buf.len()));
        }
        let mean = buf.iter().sum::<f64>() / buf.len() as f64;
        let ss: f64 = buf.iter().map(|l| (l - mean) * (l - mean)).sum();
        Ok(ss / (buf.len() - 1) as f64)
    }
}
