//! Panel trajectories and the two synthetic sine families.
//!
//! Set A varies the amplitude of `sin(2πt)` across classes; set B keeps unit
//! amplitude and varies the frequency. Both start at zero and differ only
//! through their dynamics, which is what makes B out-of-distribution for a
//! model trained on A.

mod io;

pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset};

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::json;

/// One observed temporal sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub label: Option<usize>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub meta: Value,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let t = Trajectory {
            id: 0,
            label: None,
            times,
            values,
            meta: Value::Object(Default::default()),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::invalid(format!("trajectory {} has no observations", self.id)));
        }
        if self.times.len() != self.values.len() {
            return Err(Error::invalid(format!(
                "trajectory {}: {} times but {} value rows",
                self.id,
                self.times.len(),
                self.values.len()
            )));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "trajectory {}: times are not strictly increasing",
                self.id
            )));
        }
        let d = self.values[0].len();
        if d == 0 || self.values.iter().any(|v| v.len() != d) {
            return Err(Error::invalid(format!(
                "trajectory {}: ragged or empty observation rows",
                self.id
            )));
        }
        if self
            .times
            .iter()
            .chain(self.values.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid(format!("trajectory {}: non-finite entry", self.id)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Observations with `t <= cutoff`.
    pub fn truncated(&self, cutoff: f64) -> Option<Trajectory> {
        let n = self.times.iter().take_while(|t| **t <= cutoff).count();
        (n > 0).then(|| Trajectory {
            times: self.times[..n].to_vec(),
            values: self.values[..n].to_vec(),
            ..self.clone()
        })
    }

    /// The class parameter recorded by the generators, if any.
    pub fn param(&self) -> Option<f64> {
        self.meta.get("param").and_then(Value::as_f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanelDataset {
    pub trajectories: Vec<Trajectory>,
    pub obs_dim: usize,
    pub generator: String,
    pub seed: Option<u64>,
    pub meta: Value,
}

impl PanelDataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let obs_dim = trajectories
            .first()
            .ok_or_else(|| Error::invalid("dataset is empty"))?
            .obs_dim();
        let data = PanelDataset {
            trajectories,
            obs_dim,
            generator: "external".into(),
            seed: None,
            meta: Value::Object(Default::default()),
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        for t in &self.trajectories {
            t.validate()?;
            if t.obs_dim() != self.obs_dim {
                return Err(Error::invalid(format!(
                    "trajectory {} has observation dimension {}, dataset has {}",
                    t.id,
                    t.obs_dim(),
                    self.obs_dim
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.trajectories.iter().map(|t| t.label).collect()
    }

    pub fn max_points(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).max().unwrap_or(0)
    }

    /// Keeps the first `k` trajectories of every label in the first part and
    /// the rest in the second. Unlabelled trajectories form their own group.
    pub fn split_per_class(&self, k: usize) -> (PanelDataset, PanelDataset) {
        let mut seen = std::collections::HashMap::<Option<usize>, usize>::new();
        let (mut head, mut tail) = (Vec::new(), Vec::new());
        for t in &self.trajectories {
            let c = seen.entry(t.label).or_default();
            if *c < k {
                head.push(t.clone());
            } else {
                tail.push(t.clone());
            }
            *c += 1;
        }
        let part = |trajectories: Vec<Trajectory>| PanelDataset {
            trajectories,
            ..self.clone()
        };
        (part(head), part(tail))
    }

    pub fn subset(&self, indices: &[usize]) -> PanelDataset {
        PanelDataset {
            trajectories: indices.iter().map(|&i| self.trajectories[i].clone()).collect(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    /// One draw per trajectory added to every observation.
    PerTrajectory,
    /// Independent draw per observation.
    PerPoint,
    None,
}

impl NoiseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseMode::PerTrajectory => "per_trajectory",
            NoiseMode::PerPoint => "per_point",
            NoiseMode::None => "none",
        }
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_trajectory" | "per-trajectory" => Ok(NoiseMode::PerTrajectory),
            "per_point" | "per-point" => Ok(NoiseMode::PerPoint),
            "none" => Ok(NoiseMode::None),
            other => Err(Error::invalid(format!("unknown noise mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SineConfig {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub n_points: usize,
    pub t_max: f64,
    pub seed: u64,
    /// Noise variance.
    pub noise_var: f64,
    pub noise: NoiseMode,
    /// Put the first observation at `t = 0`.
    pub include_origin: bool,
    /// Fixed class parameters instead of drawing them from `Unif(0, 10)`.
    pub class_params: Option<Vec<f64>>,
}

impl Default for SineConfig {
    fn default() -> Self {
        SineConfig {
            n_per_class: 100,
            n_classes: 10,
            n_points: 10,
            t_max: 1.5,
            seed: 0,
            noise_var: 1e-3,
            noise: NoiseMode::PerTrajectory,
            include_origin: false,
            class_params: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SineFamily {
    /// `A·sin(2πt)`, amplitude per class.
    Amplitude,
    /// `sin(2πBt)`, frequency per class.
    Frequency,
}

impl SineFamily {
    pub fn eval(self, param: f64, t: f64) -> f64 {
        match self {
            SineFamily::Amplitude => param * (2.0 * PI * t).sin(),
            SineFamily::Frequency => (2.0 * PI * param * t).sin(),
        }
    }

    fn names(self) -> (&'static str, &'static str) {
        match self {
            SineFamily::Amplitude => ("set_a", "amplitude"),
            SineFamily::Frequency => ("set_b", "frequency"),
        }
    }
}

pub fn generate_set_a(cfg: &SineConfig) -> Result<PanelDataset> {
    generate(SineFamily::Amplitude, cfg)
}

pub fn generate_set_b(cfg: &SineConfig) -> Result<PanelDataset> {
    generate(SineFamily::Frequency, cfg)
}

pub fn generate(family: SineFamily, cfg: &SineConfig) -> Result<PanelDataset> {
    if cfg.n_per_class == 0 || cfg.n_classes == 0 || cfg.n_points == 0 {
        return Err(Error::invalid("n_per_class, n_classes and n_points must be positive"));
    }
    if !(cfg.t_max > 0.0) || !(cfg.noise_var >= 0.0) {
        return Err(Error::invalid("t_max must be positive and noise variance non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params: Vec<f64> = match &cfg.class_params {
        Some(p) if p.len() == cfg.n_classes => p.clone(),
        Some(p) => {
            return Err(Error::invalid(format!(
                "{} class parameters given for {} classes",
                p.len(),
                cfg.n_classes
            )))
        }
        None => (0..cfg.n_classes).map(|_| rng.random_range(0.0..10.0)).collect(),
    };
    let std = cfg.noise_var.sqrt();
    let mut trajectories = Vec::with_capacity(cfg.n_per_class * cfg.n_classes);
    for (class, &param) in params.iter().enumerate() {
        for _ in 0..cfg.n_per_class {
            let times = sample_times(&mut rng, cfg);
            let offset: f64 = match cfg.noise {
                NoiseMode::PerTrajectory => std * rng.sample::<f64, _>(StandardNormal),
                _ => 0.0,
            };
            let values = times
                .iter()
                .map(|&t| {
                    let eps = match cfg.noise {
                        NoiseMode::PerPoint => std * rng.sample::<f64, _>(StandardNormal),
                        _ => offset,
                    };
                    vec![family.eval(param, t) + eps]
                })
                .collect();
            trajectories.push(Trajectory {
                id: trajectories.len(),
                label: Some(class),
                times,
                values,
                meta: json!({ "param": json::float(param) }),
            });
        }
    }
    let (generator, param_name) = family.names();
    Ok(PanelDataset {
        trajectories,
        obs_dim: 1,
        generator: generator.into(),
        seed: Some(cfg.seed),
        meta: json!({
            "param_name": param_name,
            "class_params": json::floats(&params),
            "n_per_class": cfg.n_per_class,
            "n_classes": cfg.n_classes,
            "n_points": cfg.n_points,
            "t_max": json::float(cfg.t_max),
            "noise_var": json::float(cfg.noise_var),
            "noise": cfg.noise.as_str(),
            "include_origin": cfg.include_origin,
        }),
    })
}

fn sample_times(rng: &mut ChaCha8Rng, cfg: &SineConfig) -> Vec<f64> {
    loop {
        let mut times: Vec<f64> = Vec::with_capacity(cfg.n_points);
        if cfg.include_origin {
            times.push(0.0);
        }
        while times.len() < cfg.n_points {
            times.push(rng.random_range(0.0..cfg.t_max));
        }
        times.sort_by(f64::total_cmp);
        if times.windows(2).all(|w| w[1] > w[0]) {
            return times;
        }
    }
}

/// Class parameters recorded in a generated dataset's metadata.
pub fn class_params(data: &PanelDataset) -> Option<Vec<f64>> {
    data.meta
        .get("class_params")?
        .as_array()?
        .iter()
        .map(Value::as_f64)
        .collect()
}
