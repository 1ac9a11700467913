//! Training followed by the ex-post mixture fit, as run by `fnode train`.

use crate::archive::ModelArchive;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gmm::{collect_gamma_samples, select_model, GmmModel, SelectionRow};
use crate::model::{fit_with, ElboBreakdown, FnodeModel};
use crate::syndata::PanelDataset;

/// Fresh model sized for `data` (encoder slots from the longest trajectory
/// unless configured).
pub fn build_model(data: &PanelDataset, cfg: &RunConfig) -> Result<FnodeModel> {
    let mut mc = cfg.model.clone();
    mc.obs_dim = data.obs_dim;
    if mc.slots == 0 {
        mc.slots = data.max_points();
    }
    FnodeModel::new(mc, cfg.seed)
}

/// Sample bank from `data` under `m`, then BIC selection over the
/// configured grid.
pub fn fit_mixture(m: &FnodeModel, data: &PanelDataset, cfg: &RunConfig) -> Result<(GmmModel, Vec<SelectionRow>)> {
    let bank = collect_gamma_samples(m, data, cfg.gmm.n_gamma, cfg.gmm_seed(), cfg.gmm.joint)?;
    let usable: Vec<usize> = cfg
        .gmm
        .components
        .iter()
        .copied()
        .filter(|k| *k <= bank.len())
        .collect();
    if usable.is_empty() {
        return Err(Error::invalid(format!(
            "every configured component count exceeds the {} bank rows",
            bank.len()
        )));
    }
    select_model(
        &bank,
        &usable,
        &cfg.gmm.cov_types,
        cfg.gmm_seed(),
        &cfg.gmm.em.em_config(),
    )
}

pub struct TrainOutcome {
    pub archive: ModelArchive,
    pub selection: Option<Vec<SelectionRow>>,
}

/// What to run after (optional) training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixtureStep {
    /// Fit the mixture when at least one epoch ran.
    Auto,
    Always,
    Never,
}

/// Trains `start` (or a fresh model) on `data` and fits the mixture.
pub fn train(
    data: &PanelDataset,
    cfg: &RunConfig,
    start: Option<ModelArchive>,
    mixture: MixtureStep,
    on_epoch: impl FnMut(usize, &ElboBreakdown),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut archive = match start {
        Some(a) => a,
        None => ModelArchive::new(build_model(data, cfg)?, cfg.seed),
    };
    if cfg.train.epochs > 0 {
        let (model, history) = fit_with(&archive.model, data, &cfg.train, on_epoch)?;
        archive.model = model;
        archive.history.extend(history);
        archive.train = Some(cfg.train.clone());
    }
    let fit_gmm = match mixture {
        MixtureStep::Auto => cfg.train.epochs > 0,
        MixtureStep::Always => true,
        MixtureStep::Never => false,
    };
    let mut selection = None;
    if fit_gmm {
        let (gmm, table) = fit_mixture(&archive.model, data, cfg)?;
        archive.gmm = Some(gmm);
        archive.gmm_seed = Some(cfg.gmm_seed());
        selection = Some(table);
    }
    Ok(TrainOutcome { archive, selection })
}
