//! Versioned JSON model archives. Floats are written with 17 significant
//! digits, so loading an archive reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::json::{float, floats, to_string};
use crate::model::{ElboBreakdown, FnodeModel, ModelConfig, TrainConfig};
use crate::tensor::{ParamSet, Tensor};

pub const FORMAT: &str = "fnode-model";
pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelArchive {
    pub model: FnodeModel,
    pub train: Option<TrainConfig>,
    pub history: Vec<ElboBreakdown>,
    pub gmm: Option<GmmModel>,
    /// Seed the initial weights were drawn with.
    pub init_seed: u64,
    /// Seed of the posterior sample bank and mixture fit, when fitted.
    pub gmm_seed: Option<u64>,
}

fn usizes(v: &[usize]) -> Value {
    Value::Array(v.iter().map(|x| json!(x)).collect())
}

fn config_json(c: &ModelConfig) -> Value {
    json!({
        "latent_dim": c.latent_dim,
        "gamma_dim": c.gamma_dim,
        "obs_dim": c.obs_dim,
        "slots": c.slots,
        "field_hidden": usizes(&c.field_hidden),
        "hyper_hidden": usizes(&c.hyper_hidden),
        "z0_encoder_hidden": usizes(&c.z0_encoder_hidden),
        "gamma_encoder_hidden": usizes(&c.gamma_encoder_hidden),
        "decoder_hidden": usizes(&c.decoder_hidden),
        "sigma_x": float(c.sigma_x),
        "step_size": float(c.step_size),
        "lambda_init": float(c.lambda_init),
        "t0": float(c.t0),
    })
}

fn train_json(t: &TrainConfig) -> Value {
    json!({
        "epochs": t.epochs,
        "batch_size": t.batch_size,
        "learning_rate": float(t.learning_rate),
        "kl_anneal_epochs": t.kl_anneal_epochs,
        "seed": t.seed,
        "mc_samples": t.mc_samples,
    })
}

fn history_json(h: &ElboBreakdown) -> Value {
    json!({
        "elbo": float(h.total),
        "recon": float(h.recon_loglik),
        "kl_z0": float(h.kl_z0),
        "kl_gamma": float(h.kl_gamma),
        "kl_weight": float(h.kl_weight),
    })
}

impl ModelArchive {
    pub fn new(model: FnodeModel, init_seed: u64) -> Self {
        ModelArchive {
            model,
            train: None,
            history: Vec::new(),
            gmm: None,
            init_seed,
            gmm_seed: None,
        }
    }

    pub fn to_json(&self) -> Value {
        let params: Vec<Value> = self
            .model
            .params
            .iter()
            .map(|(name, t)| json!({"name": name, "shape": usizes(t.shape()), "data": floats(t.data())}))
            .collect();
        json!({
            "format": FORMAT,
            "format_version": FORMAT_VERSION,
            "config": config_json(&self.model.config),
            "params": params,
            "train": self.train.as_ref().map(train_json),
            "history": Value::Array(self.history.iter().map(history_json).collect()),
            "gmm": self.gmm.as_ref().map(GmmModel::to_json),
            "seeds": {"init": self.init_seed, "gmm": self.gmm_seed},
        })
    }

    pub fn to_string(&self) -> String {
        let mut s = to_string(&self.to_json());
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsio::write_atomic(path, self.to_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        ModelArchive::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        ModelArchive::from_json(&v)
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| bad("archive root"))?;
        if obj.get("format").and_then(Value::as_str) != Some(FORMAT) {
            return Err(Error::invalid(format!(
                "not a model archive (expected format \"{FORMAT}\")"
            )));
        }
        let version = obj
            .get("format_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| bad("format_version"))?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let config = parse_config(
            obj.get("config")
                .and_then(Value::as_object)
                .ok_or_else(|| bad("config"))?,
        )?;
        let mut params = ParamSet::new();
        for p in obj
            .get("params")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("params"))?
        {
            let name = p
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("params.name"))?;
            let shape = usize_list(p.get("shape"), "params.shape")?;
            let data = f64_list(p.get("data"), "params.data")?;
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        let model = FnodeModel::from_params(config, params)?;
        let train = match obj.get("train") {
            None | Some(Value::Null) => None,
            Some(t) => Some(parse_train(t.as_object().ok_or_else(|| bad("train"))?)?),
        };
        let history = obj
            .get("history")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("history"))?
            .iter()
            .map(|h| {
                let f = |k: &str| h.get(k).and_then(Value::as_f64).ok_or_else(|| bad("history"));
                Ok(ElboBreakdown {
                    total: f("elbo")?,
                    recon_loglik: f("recon")?,
                    kl_z0: f("kl_z0")?,
                    kl_gamma: f("kl_gamma")?,
                    kl_weight: f("kl_weight")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let gmm = match obj.get("gmm") {
            None | Some(Value::Null) => None,
            Some(g) => Some(GmmModel::from_json(g)?),
        };
        let seeds = obj.get("seeds").ok_or_else(|| bad("seeds"))?;
        Ok(ModelArchive {
            model,
            train,
            history,
            gmm,
            init_seed: seeds
                .get("init")
                .and_then(Value::as_u64)
                .ok_or_else(|| bad("seeds.init"))?,
            gmm_seed: seeds.get("gmm").and_then(Value::as_u64),
        })
    }
}

fn bad(what: &str) -> Error {
    Error::invalid(format!("model archive: bad or missing `{what}`"))
}

fn usize_list(v: Option<&Value>, what: &str) -> Result<Vec<usize>> {
    v.and_then(Value::as_array)
        .ok_or_else(|| bad(what))?
        .iter()
        .map(|x| x.as_u64().map(|u| u as usize).ok_or_else(|| bad(what)))
        .collect()
}

fn f64_list(v: Option<&Value>, what: &str) -> Result<Vec<f64>> {
    v.and_then(Value::as_array)
        .ok_or_else(|| bad(what))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| bad(what)))
        .collect()
}

fn parse_config(o: &Map<String, Value>) -> Result<ModelConfig> {
    let n = |k: &str| {
        o.get(k)
            .and_then(Value::as_u64)
            .map(|u| u as usize)
            .ok_or_else(|| bad(k))
    };
    let f = |k: &str| o.get(k).and_then(Value::as_f64).ok_or_else(|| bad(k));
    Ok(ModelConfig {
        latent_dim: n("latent_dim")?,
        gamma_dim: n("gamma_dim")?,
        obs_dim: n("obs_dim")?,
        slots: n("slots")?,
        field_hidden: usize_list(o.get("field_hidden"), "field_hidden")?,
        hyper_hidden: usize_list(o.get("hyper_hidden"), "hyper_hidden")?,
        z0_encoder_hidden: usize_list(o.get("z0_encoder_hidden"), "z0_encoder_hidden")?,
        gamma_encoder_hidden: usize_list(o.get("gamma_encoder_hidden"), "gamma_encoder_hidden")?,
        decoder_hidden: usize_list(o.get("decoder_hidden"), "decoder_hidden")?,
        sigma_x: f("sigma_x")?,
        step_size: f("step_size")?,
        lambda_init: f("lambda_init")?,
        t0: f("t0")?,
    })
}

fn parse_train(o: &Map<String, Value>) -> Result<TrainConfig> {
    let n = |k: &str| o.get(k).and_then(Value::as_u64).ok_or_else(|| bad(k));
    Ok(TrainConfig {
        epochs: n("epochs")? as usize,
        batch_size: n("batch_size")? as usize,
        learning_rate: o
            .get("learning_rate")
            .and_then(Value::as_f64)
            .ok_or_else(|| bad("learning_rate"))?,
        kl_anneal_epochs: n("kl_anneal_epochs")? as usize,
        seed: n("seed")?,
        mc_samples: n("mc_samples")? as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            latent_dim: 2,
            gamma_dim: 2,
            slots: 3,
            field_hidden: vec![4],
            hyper_hidden: vec![3],
            z0_encoder_hidden: vec![4],
            gamma_encoder_hidden: vec![4],
            decoder_hidden: vec![3],
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut a = ModelArchive::new(FnodeModel::new(small(), 5).unwrap(), 5);
        a.history.push(ElboBreakdown {
            total: -1.0 / 3.0,
            recon_loglik: 0.1,
            kl_z0: 0.2,
            kl_gamma: 0.3,
            kl_weight: 1.0,
        });
        a.train = Some(TrainConfig::default());
        let text = a.to_string();
        let back = ModelArchive::parse(&text).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_string(), text);
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let a = ModelArchive::new(FnodeModel::new(small(), 1).unwrap(), 1);
        let text = a.to_string().replace("\"format_version\":1", "\"format_version\":7");
        assert!(matches!(
            ModelArchive::parse(&text),
            Err(Error::Version { found: 7, expected: 1 })
        ));
    }
}
