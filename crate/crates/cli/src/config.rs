//! TOML configuration mirroring the library's run parameters. Unknown keys
//! are rejected; flags override file values.

use std::path::PathBuf;

use serde::Deserialize;

use saa_alloc::{
    Allocation, DesignGrid, Error, ExperimentConfig, LossModel, Result, Scenario, SolverSettings,
};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub run: Option<RunSection>,
    pub grid: Option<GridSection>,
    pub model: Option<ModelSection>,
    pub problem: Option<ProblemSection>,
    pub algo1: Option<Algo1Section>,
    pub algo2: Option<Algo2Section>,
    pub experiment: Option<ExperimentSection>,
    pub ldp: Option<LdpSection>,
    pub solver: Option<SolverSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// gaussian | binomial | squared
    pub family: String,
    /// Explicit per-point means; otherwise derived from the quadratic
    /// objective over the grid.
    pub means: Option<Vec<f64>>,
    pub variances: Option<Vec<f64>>,
    pub variance: Option<f64>,
    pub trials: Option<u64>,
    pub objective_scale: Option<f64>,
    pub objective_offset: Option<f64>,
    pub noise_mean: Option<f64>,
    pub noise_variance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub delta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Algo1Section {
    pub pilot: Option<usize>,
    pub per_iteration: Option<usize>,
    pub total_budget: usize,
    pub known_variances: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Algo2Section {
    pub per_iteration: usize,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub budget_coupling: Option<f64>,
    pub initial: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// gaussian-algo1 | binomial-algo1 | squared-algo2 | ldp-validate
    pub scenario: String,
    pub replications: usize,
    pub seed_base: Option<u64>,
    pub gamma: Option<f64>,
    pub n_ladder: Option<Vec<usize>>,
    pub mc_replications: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpSection {
    pub fx: f64,
    pub fy: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
    pub gamma: f64,
    pub n_ladder: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub step_scale: Option<f64>,
    pub schedule_iterations: Option<usize>,
    pub max_iterations: Option<usize>,
    pub stall_window: Option<usize>,
    pub stall_tolerance: Option<f64>,
    pub floor: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
        section
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing required config section [{name}]")))
    }

    pub fn grid(&self) -> Result<DesignGrid> {
        let g = Self::require(&self.grid, "grid")?;
        DesignGrid::equispaced(g.lo, g.hi, g.points)
    }

    pub fn solver(&self) -> SolverSettings {
        let mut s = SolverSettings::default();
        if let Some(sec) = &self.solver {
            if let Some(v) = sec.step_scale {
                s.step_scale = v;
            }
            if let Some(v) = sec.schedule_iterations {
                s.schedule_iterations = v;
            }
            if let Some(v) = sec.max_iterations {
                s.max_iterations = v;
            }
            if let Some(v) = sec.stall_window {
                s.stall_window = v;
            }
            if let Some(v) = sec.stall_tolerance {
                s.stall_tolerance = v;
            }
            if let Some(v) = sec.floor {
                s.floor = v;
            }
        }
        s
    }

    pub fn delta(&self) -> Result<f64> {
        Ok(Self::require(&self.problem, "problem")?.delta)
    }

    /// Per-point means: explicit, or the quadratic objective over the grid.
    pub fn means(&self, grid: &DesignGrid) -> Result<Vec<f64>> {
        let m = Self::require(&self.model, "model")?;
        if let Some(means) = &m.means {
            if means.len() != grid.len() {
                return Err(Error::Config(format!(
                    "model.means has {} entries for a {}-point grid",
                    means.len(),
                    grid.len()
                )));
            }
            return Ok(means.clone());
        }
        let scale = m.objective_scale.unwrap_or(1.0);
        let offset = m.objective_offset.unwrap_or(0.0);
        Ok(grid.points().iter().map(|&x| scale * x * x + offset).collect())
    }

    pub fn variances(&self, d: usize) -> Result<Vec<f64>> {
        let m = Self::require(&self.model, "model")?;
        if let Some(v) = &m.variances {
            if v.len() != d {
                return Err(Error::Config(format!(
                    "model.variances has {} entries for {d} points",
                    v.len()
                )));
            }
            return Ok(v.clone());
        }
        Ok(vec![m.variance.unwrap_or(1.0); d])
    }

    pub fn model(&self, grid: &DesignGrid) -> Result<LossModel> {
        let m = Self::require(&self.model, "model")?;
        match m.family.as_str() {
            "gaussian" => LossModel::gaussian(self.means(grid)?, self.variances(grid.len())?),
            "binomial" => LossModel::binomial(self.means(grid)?, m.trials.unwrap_or(10)),
            "squared" => LossModel::squared_error(
                grid.points().to_vec(),
                m.noise_mean.unwrap_or(0.0),
                m.noise_variance.unwrap_or(1.0),
            ),
            other => Err(Error::Config(format!(
                "unknown model.family {other:?}; expected gaussian, binomial or squared"
            ))),
        }
    }

    pub fn initial_allocation(&self) -> Result<Option<Allocation>> {
        match self.algo2.as_ref().and_then(|a| a.initial.as_ref()) {
            Some(w) => Ok(Some(Allocation::new(w.clone())?)),
            None => Ok(None),
        }
    }

    /// Assembles the harness configuration for the `experiment` subcommand.
    pub fn experiment(&self, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
        let e = Self::require(&self.experiment, "experiment")?;
        let scenario = match e.scenario.as_str() {
            "gaussian-algo1" => Scenario::GaussianAlgo1,
            "binomial-algo1" => Scenario::BinomialAlgo1,
            "squared-algo2" => Scenario::SquaredAlgo2,
            "ldp-validate" => Scenario::LdpValidate,
            other => {
                return Err(Error::Config(format!(
                    "unknown experiment.scenario {other:?}"
                )))
            }
        };
        let mut cfg = ExperimentConfig::new(scenario);
        if let Some(g) = &self.grid {
            cfg.grid_lo = g.lo;
            cfg.grid_hi = g.hi;
            cfg.grid_points = g.points;
        }
        if let Some(m) = &self.model {
            if let Some(v) = m.objective_scale {
                cfg.objective_scale = v;
            }
            if let Some(v) = m.objective_offset {
                cfg.objective_offset = v;
            }
            if let Some(v) = m.variance {
                cfg.noise_variance = v;
            }
            if let Some(v) = m.noise_variance {
                cfg.noise_variance = v;
            }
            if let Some(v) = m.trials {
                cfg.trials = v;
            }
        }
        if let Some(p) = &self.problem {
            cfg.delta = p.delta;
        }
        if let Some(a) = &self.algo1 {
            if let Some(v) = a.pilot {
                cfg.pilot = v;
            }
            cfg.per_iteration = a.per_iteration;
            cfg.total_budget = a.total_budget;
            if let Some(v) = a.known_variances {
                cfg.known_variances = v;
            }
        }
        if let Some(a) = &self.algo2 {
            cfg.per_iteration = Some(a.per_iteration);
            if let Some(v) = a.tolerance {
                cfg.tolerance = v;
            }
            if let Some(v) = a.max_iterations {
                cfg.max_iterations = v;
            }
            cfg.budget_coupling = a.budget_coupling;
        }
        cfg.replications = e.replications;
        cfg.seed_base = seed
            .or(e.seed_base)
            .or(self.run.as_ref().and_then(|r| r.seed))
            .unwrap_or(0);
        if let Some(g) = e.gamma {
            cfg.gamma = g;
        }
        if let Some(l) = &e.n_ladder {
            cfg.n_ladder = l.clone();
        }
        if let Some(r) = e.mc_replications {
            cfg.mc_replications = r;
        }
        cfg.out_dir = out
            .or(self.run.as_ref().and_then(|r| r.out.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        cfg.solver = self.solver();
        Ok(cfg)
    }
}
