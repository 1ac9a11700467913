//! Plain-text `key = value` run configuration. Blank lines and `#` comments
//! are ignored; unknown or repeated keys are errors.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gmm::{CovType, EmConfig};
use crate::model::{ModelConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct GmmSettings {
    pub components: Vec<usize>,
    pub cov_types: Vec<CovType>,
    pub n_gamma: usize,
    pub joint: bool,
    pub em: EmSettings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl EmSettings {
    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            max_iter: self.max_iter,
            tol: self.tol,
            restarts: self.restarts,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `slots == 0` sizes the encoders to the longest training trajectory.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gmm: GmmSettings,
    pub seed: u64,
    pub ood_n_gamma: usize,
    pub ood_quantile: f64,
}

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "seed",
        "0",
        "master seed; initial weights use it, training seed+1, mixture fitting seed+2",
    ),
    ("latent_dim", "8", "latent state width p"),
    ("gamma_dim", "16", "dynamics embedding width"),
    (
        "slots",
        "0",
        "most observations per trajectory the encoders accept (0 = longest training trajectory)",
    ),
    ("field_hidden", "100,100", "hidden widths of the ODE vector field"),
    ("hyper_hidden", "128,128", "hidden widths of the hypernetwork"),
    ("z0_encoder_hidden", "16", "hidden widths of the z0 encoder"),
    ("gamma_encoder_hidden", "64,64", "hidden widths of the gamma encoder"),
    ("decoder_hidden", "64", "hidden widths of the decoder (empty = linear)"),
    (
        "sigma_x",
        "0.05",
        "observation noise standard deviation of the likelihood",
    ),
    ("step_size", "0.1", "RK4 step"),
    ("lambda_init", "0.1", "initial output scale of the hypernetwork"),
    ("t0", "0", "time of the latent initial state"),
    ("epochs", "200", "training epochs"),
    ("batch_size", "32", "trajectories per mini-batch"),
    ("learning_rate", "0.001", "Adam step size"),
    ("kl_anneal_epochs", "50", "epochs of the linear KL warm-up"),
    ("mc_samples", "1", "Monte-Carlo draws per ELBO estimate"),
    (
        "gmm_components",
        "1..20",
        "component counts: `a..b`, `a..b:step` or a comma list",
    ),
    (
        "gmm_cov_types",
        "spherical,tied,diag,full",
        "covariance structures to search",
    ),
    (
        "gmm_n_gamma",
        "2",
        "posterior draws per training trajectory in the sample bank",
    ),
    ("gmm_joint", "false", "fit the mixture on z0‖γ instead of γ"),
    ("gmm_max_iter", "200", "EM iteration cap"),
    (
        "gmm_tol",
        "1e-6",
        "EM stops when the mean per-row log-likelihood gains less than this",
    ),
    ("gmm_restarts", "3", "seeded restarts per EM fit"),
    ("ood_n_gamma", "16", "posterior draws per trajectory in OOD scores"),
    (
        "ood_quantile",
        "0.95",
        "training-score quantile used as the OOD threshold",
    ),
];

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            gmm: GmmSettings {
                components: vec![],
                cov_types: vec![],
                n_gamma: 0,
                joint: false,
                em: EmSettings {
                    max_iter: 0,
                    tol: 0.0,
                    restarts: 0,
                },
            },
            seed: 0,
            ood_n_gamma: 0,
            ood_quantile: 0.0,
        };
        for (key, value, _) in KEYS {
            cfg.set(key, value).expect("documented defaults parse");
        }
        cfg
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("`{key}`: cannot parse `{value}`")))
}

fn widths(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(vec![]);
    }
    value.split(',').map(|w| parse(key, w.trim())).collect()
}

/// `a..b` (inclusive), `a..b:step` or `a,b,c`.
pub fn parse_range(key: &str, value: &str) -> Result<Vec<usize>> {
    let value = value.trim();
    let out: Vec<usize> = if let Some((a, rest)) = value.split_once("..") {
        let (b, step) = match rest.split_once(':') {
            Some((b, s)) => (b, parse::<usize>(key, s.trim())?),
            None => (rest, 1),
        };
        let (a, b): (usize, usize) = (parse(key, a.trim())?, parse(key, b.trim())?);
        if step == 0 || a > b {
            return Err(Error::invalid(format!("`{key}`: empty range `{value}`")));
        }
        (a..=b).step_by(step).collect()
    } else {
        widths(key, value)?
    };
    if out.is_empty() || out.contains(&0) {
        return Err(Error::invalid(format!("`{key}`: component counts must be positive")));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.set_seed(parse(key, v)?),
            "latent_dim" => self.model.latent_dim = parse(key, v)?,
            "gamma_dim" => self.model.gamma_dim = parse(key, v)?,
            "slots" => self.model.slots = parse(key, v)?,
            "field_hidden" => self.model.field_hidden = widths(key, v)?,
            "hyper_hidden" => self.model.hyper_hidden = widths(key, v)?,
            "z0_encoder_hidden" => self.model.z0_encoder_hidden = widths(key, v)?,
            "gamma_encoder_hidden" => self.model.gamma_encoder_hidden = widths(key, v)?,
            "decoder_hidden" => self.model.decoder_hidden = widths(key, v)?,
            "sigma_x" => self.model.sigma_x = parse(key, v)?,
            "step_size" => self.model.step_size = parse(key, v)?,
            "lambda_init" => self.model.lambda_init = parse(key, v)?,
            "t0" => self.model.t0 = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "kl_anneal_epochs" => self.train.kl_anneal_epochs = parse(key, v)?,
            "mc_samples" => self.train.mc_samples = parse(key, v)?,
            "gmm_components" => self.gmm.components = parse_range(key, v)?,
            "gmm_cov_types" => self.gmm.cov_types = v.split(',').map(|c| c.trim().parse()).collect::<Result<_>>()?,
            "gmm_n_gamma" => self.gmm.n_gamma = parse(key, v)?,
            "gmm_joint" => self.gmm.joint = parse(key, v)?,
            "gmm_max_iter" => self.gmm.em.max_iter = parse(key, v)?,
            "gmm_tol" => self.gmm.em.tol = parse(key, v)?,
            "gmm_restarts" => self.gmm.em.restarts = parse(key, v)?,
            "ood_n_gamma" => self.ood_n_gamma = parse(key, v)?,
            "ood_quantile" => self.ood_quantile = parse(key, v)?,
            _ => return Err(Error::invalid(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Sets the master seed and the seeds derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed.wrapping_add(1);
    }

    pub fn gmm_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(err(format!("key `{key}` given twice")));
            }
            seen.push(key);
            cfg.set(key, value).map_err(|e| err(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::parse(&fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let mut model = self.model.clone();
        if model.slots == 0 {
            model.slots = 1;
        }
        model.validate()?;
        self.train.validate()?;
        if self.gmm.n_gamma == 0 || self.gmm.cov_types.is_empty() || self.gmm.em.max_iter == 0 {
            return Err(Error::invalid(
                "gmm_n_gamma, gmm_max_iter and gmm_cov_types must be non-empty/positive",
            ));
        }
        if !(self.gmm.em.tol >= 0.0) {
            return Err(Error::invalid("gmm_tol must be non-negative"));
        }
        if self.ood_n_gamma == 0 || !(self.ood_quantile > 0.0 && self.ood_quantile <= 1.0) {
            return Err(Error::invalid(
                "ood_n_gamma must be positive and ood_quantile in (0, 1]",
            ));
        }
        Ok(())
    }

    /// The configuration as a file that parses back to itself.
    pub fn render(&self) -> String {
        let list = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        for (key, _, doc) in KEYS {
            let value = match *key {
                "seed" => self.seed.to_string(),
                "latent_dim" => self.model.latent_dim.to_string(),
                "gamma_dim" => self.model.gamma_dim.to_string(),
                "slots" => self.model.slots.to_string(),
                "field_hidden" => list(&self.model.field_hidden),
                "hyper_hidden" => list(&self.model.hyper_hidden),
                "z0_encoder_hidden" => list(&self.model.z0_encoder_hidden),
                "gamma_encoder_hidden" => list(&self.model.gamma_encoder_hidden),
                "decoder_hidden" => list(&self.model.decoder_hidden),
                "sigma_x" => self.model.sigma_x.to_string(),
                "step_size" => self.model.step_size.to_string(),
                "lambda_init" => self.model.lambda_init.to_string(),
                "t0" => self.model.t0.to_string(),
                "epochs" => self.train.epochs.to_string(),
                "batch_size" => self.train.batch_size.to_string(),
                "learning_rate" => self.train.learning_rate.to_string(),
                "kl_anneal_epochs" => self.train.kl_anneal_epochs.to_string(),
                "mc_samples" => self.train.mc_samples.to_string(),
                "gmm_components" => list(&self.gmm.components),
                "gmm_cov_types" => self
                    .gmm
                    .cov_types
                    .iter()
                    .map(|c| c.as_str())
                    .collect::<Vec<_>>()
                    .join(","),
                "gmm_n_gamma" => self.gmm.n_gamma.to_string(),
                "gmm_joint" => self.gmm.joint.to_string(),
                "gmm_max_iter" => self.gmm.em.max_iter.to_string(),
                "gmm_tol" => self.gmm.em.tol.to_string(),
                "gmm_restarts" => self.gmm.em.restarts.to_string(),
                "ood_n_gamma" => self.ood_n_gamma.to_string(),
                "ood_quantile" => self.ood_quantile.to_string(),
                _ => unreachable!("every key is rendered"),
            };
            out.push_str(&format!("# {doc}\n{key} = {value}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documentation() {
        let c = RunConfig::default();
        assert_eq!(c.model.latent_dim, 8);
        assert_eq!(c.model.field_hidden, vec![100, 100]);
        assert_eq!(c.gmm.components, (1..=20).collect::<Vec<_>>());
        assert_eq!(c.gmm.cov_types, CovType::ALL.to_vec());
        assert_eq!(c.train.seed, 1);
        c.validate().unwrap();
    }

    #[test]
    fn render_parses_back() {
        let mut c = RunConfig::default();
        c.set("gmm_components", "10..200:10").unwrap();
        c.set("sigma_x", "0.1").unwrap();
        c.set("seed", "42").unwrap();
        assert_eq!(RunConfig::parse(&c.render(), "r").unwrap(), c);
    }

    #[test]
    fn unknown_and_repeated_keys() {
        assert!(matches!(
            RunConfig::parse("nope = 1\n", "c"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("epochs = 3\n\nepochs = 4\n", "c"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(RunConfig::parse("epochs = x\n", "c").is_err());
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("k", "10..200:10").unwrap().len(), 20);
        assert_eq!(parse_range("k", "3,5").unwrap(), vec![3, 5]);
        assert!(parse_range("k", "5..1").is_err());
        assert!(parse_range("k", "0,1").is_err());
    }
}
