//! The `fnode` command line. Every command is deterministic given its flags
//! and seeds, and writes its outputs atomically.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::archive::ModelArchive;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::gmm::{selection_csv, GmmModel};
use crate::inference::{
    self, credible_band, extrapolation_csv, extrapolation_errors, neighborhood_sample, ood_calibrate, ood_test,
    sample_prior, sample_trajectories, sample_unconditional, transfer_trajectory, Decoded, DrawSource,
};
use crate::json::format_f64;
use crate::model::FnodeModel;
use crate::odeint::TimeGrid;
use crate::pipeline::{self, MixtureStep};
use crate::plot;
use crate::syndata::{self as io, NoiseMode, PanelDataset, SineConfig, Trajectory};

#[derive(Parser, Debug)]
#[command(name = "fnode", version, about = "Functional neural ODEs for panel time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic sine-panel dataset.
    GenerateData(GenerateArgs),
    /// Train a model and fit the ex-post mixture over its embeddings.
    Train(TrainArgs),
    /// Decode new trajectories from a trained model.
    Sample(SampleArgs),
    /// Credible band around one trajectory.
    Band(BandArgs),
    /// Out-of-distribution test against training-score calibration.
    Ood(OodArgs),
    /// Interpolation and extrapolation error table.
    Eval(EvalArgs),
    /// Render trajectory (and band) CSV files as SVG.
    Plot(PlotArgs),
    /// Print the default run configuration.
    Config,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SetName {
    A,
    B,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub set: SetName,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 10)]
    pub n_classes: usize,
    #[arg(long, default_value_t = 10)]
    pub n_points: usize,
    #[arg(long, default_value_t = 1.5)]
    pub t_max: f64,
    /// per-trajectory, per-point or none.
    #[arg(long, default_value = "per-trajectory")]
    pub noise: String,
    #[arg(long, default_value_t = 1e-3)]
    pub noise_var: f64,
    /// Always observe t = 0.
    #[arg(long)]
    pub include_origin: bool,
    /// Comma-separated class parameters instead of random ones.
    #[arg(long)]
    pub params: Option<String>,
    /// Move this many trajectories per class into a held-out file.
    #[arg(long, default_value_t = 0, requires = "holdout_out")]
    pub holdout: usize,
    #[arg(long)]
    pub holdout_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-epoch CSV log (default: `<out>.log.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Mixture selection table CSV (default: `<out>.gmm.csv`).
    #[arg(long)]
    pub selection: Option<PathBuf>,
    /// Continue from an existing archive instead of fresh weights.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Skip training and only fit the mixture.
    #[arg(long)]
    pub gmm_only: bool,
    /// Do not fit the mixture.
    #[arg(long, conflicts_with = "gmm_only")]
    pub no_gmm: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SampleMode {
    /// γ from the fitted mixture, z0 from the indexed trajectory.
    Gmm,
    /// γ from the standard-normal prior.
    Prior,
    /// γ of the exemplar applied to the indexed trajectory.
    Transfer,
    /// Mixture draws within δ of the exemplar's γ.
    Neighborhood,
    /// z0 and γ from a mixture fitted on both.
    Joint,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Points in the output time grid.
    #[arg(long, default_value_t = 100)]
    pub n_times: usize,
    /// End of the output grid (default: last observed time in the dataset).
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Use the indexed trajectory's own observation times.
    #[arg(long)]
    pub observed_times: bool,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, value_enum, default_value = "gmm")]
    pub mode: SampleMode,
    #[arg(long)]
    pub exemplar: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 100_000)]
    pub max_attempts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BandSource {
    Posterior,
    Gmm,
}

#[derive(Args, Debug)]
pub struct BandArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 200)]
    pub draws: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value = "posterior")]
    pub source: BandSource,
    /// Band for the latent curve only, without observation noise.
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Args, Debug)]
pub struct OodArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train_data: PathBuf,
    #[arg(long)]
    pub test_data: PathBuf,
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long)]
    pub n_gamma: Option<usize>,
    /// Fixed threshold instead of calibration.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub observe_fraction: f64,
    /// Posterior draws per trajectory; 1 uses posterior means.
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long)]
    pub band: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command, writing human-readable summaries to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenerateData(a) => generate(a, stdout),
        Command::Train(a) => train(a, stdout),
        Command::Sample(a) => sample(a, stdout),
        Command::Band(a) => band(a, stdout),
        Command::Ood(a) => ood(a, stdout),
        Command::Eval(a) => eval(a, stdout),
        Command::Plot(a) => plot_cmd(a, stdout),
        Command::Config => {
            write!(stdout, "{}", RunConfig::default().render())?;
            Ok(())
        }
    }
}

/// 0 success, 1 runtime failure, 2 usage or validation error.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_validation() => 2,
        Err(_) => 1,
    }
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let class_params = a
        .params
        .as_deref()
        .map(|p| {
            p.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad class parameter `{v}`")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let cfg = SineConfig {
        n_per_class: a.n_per_class,
        n_classes: class_params.as_ref().map_or(a.n_classes, Vec::len),
        n_points: a.n_points,
        t_max: a.t_max,
        seed: a.seed,
        noise_var: a.noise_var,
        noise: a.noise.parse::<NoiseMode>()?,
        include_origin: a.include_origin,
        class_params,
    };
    let mut data = match a.set {
        SetName::A => io::generate_set_a(&cfg)?,
        SetName::B => io::generate_set_b(&cfg)?,
    };
    if let Some(path) = &a.holdout_out {
        if a.holdout >= a.n_per_class {
            return Err(Error::invalid("--holdout must be smaller than --n-per-class"));
        }
        let (train, held) = data.split_per_class(a.n_per_class - a.holdout);
        io::save_dataset(&held, path)?;
        writeln!(out, "wrote {}: N={} held out", path.display(), held.len())?;
        data = train;
    }
    io::save_dataset(&data, &a.out)?;
    writeln!(
        out,
        "wrote {}: N={} classes={} obs_dim={}",
        a.out.display(),
        data.len(),
        cfg.n_classes,
        data.obs_dim
    )?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let data = io::load_dataset(&a.data)?;
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.set_seed(seed);
    }
    let start = a.init.as_deref().map(ModelArchive::load).transpose()?;
    if a.gmm_only {
        cfg.train.epochs = 0;
    }
    cfg.validate()?;
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log.csv"));
    // The log is appended epoch by epoch so a diverged run keeps its history.
    let mut log = File::create(&log_path)?;
    writeln!(log, "epoch,elbo,recon,kl_z0,kl_gamma,kl_weight")?;
    let quiet = a.quiet;
    let mut log_err = None;
    let fit_gmm = if a.gmm_only {
        true
    } else {
        !a.no_gmm && cfg.train.epochs > 0
    };
    let outcome = pipeline::train(&data, &cfg, start, MixtureStep::Never, |epoch, b| {
        let line = format!(
            "{},{},{},{},{},{}",
            epoch,
            format_f64(b.total),
            format_f64(b.recon_loglik),
            format_f64(b.kl_z0),
            format_f64(b.kl_gamma),
            format_f64(b.kl_weight)
        );
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
        if !quiet {
            eprintln!(
                "epoch {epoch}: elbo {:.3} (recon {:.3}, kl_z0 {:.3}, kl_gamma {:.3}, w {:.2})",
                b.total, b.recon_loglik, b.kl_z0, b.kl_gamma, b.kl_weight
            );
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let mut archive = outcome.archive;
    if !fit_gmm {
        archive.save(&a.out)?;
        writeln!(out, "wrote {}", a.out.display())?;
        return Ok(());
    }
    // The trained weights are written before the (slow) mixture search so an
    // interrupted fit can be resumed with --init --gmm-only.
    if !a.gmm_only {
        archive.save(&a.out)?;
        if !quiet {
            eprintln!("wrote {}; fitting the mixture", a.out.display());
        }
    }
    let (gmm, table) = pipeline::fit_mixture(&archive.model, &data, &cfg)?;
    archive.gmm = Some(gmm);
    archive.gmm_seed = Some(cfg.gmm_seed());
    archive.save(&a.out)?;
    writeln!(out, "wrote {}", a.out.display())?;
    let path = a.selection.clone().unwrap_or_else(|| with_suffix(&a.out, ".gmm.csv"));
    write_atomic(&path, selection_csv(&table).as_bytes())?;
    let g = archive.gmm.as_ref().expect("just fitted");
    writeln!(
        out,
        "mixture: K={} cov={} (table {})",
        g.k(),
        g.cov_type,
        path.display()
    )?;
    Ok(())
}

fn load_pair(model: &Path, data: &Path) -> Result<(ModelArchive, PanelDataset)> {
    Ok((ModelArchive::load(model)?, io::load_dataset(data)?))
}

fn pick<'a>(data: &'a PanelDataset, index: usize, what: &str) -> Result<&'a Trajectory> {
    data.trajectories.get(index).ok_or_else(|| {
        Error::invalid(format!(
            "{what} index {index} out of range (dataset has {})",
            data.len()
        ))
    })
}

fn output_grid(m: &FnodeModel, data: &PanelDataset, x: &Trajectory, g: &GridArgs) -> Result<TimeGrid> {
    if g.observed_times {
        return TimeGrid::new(x.times.clone());
    }
    if g.n_times == 0 {
        return Err(Error::invalid("--n-times must be at least 1"));
    }
    let last = data
        .trajectories
        .iter()
        .map(|t| t.times[t.len() - 1])
        .fold(f64::NEG_INFINITY, f64::max);
    let end = g.t_max.unwrap_or(last);
    if !(end > m.config.t0) {
        return Err(Error::invalid(format!(
            "grid end {end} must exceed the model origin {}",
            m.config.t0
        )));
    }
    TimeGrid::linspace(m.config.t0, end, g.n_times)
}

fn require_gmm(a: &ModelArchive) -> Result<&GmmModel> {
    a.gmm
        .as_ref()
        .ok_or_else(|| Error::invalid("the archive holds no fitted mixture (train with the mixture step)"))
}

/// `sample_id,time,value_1..value_d` rows.
pub fn trajectories_csv(grid: &TimeGrid, draws: &[Decoded]) -> String {
    let dims = draws.first().and_then(|d| d.first()).map_or(0, |v| v.len());
    let mut out = String::from("sample_id,time");
    for d in 1..=dims {
        out.push_str(&format!(",value_{d}"));
    }
    out.push('\n');
    for (i, draw) in draws.iter().enumerate() {
        for (t, v) in grid.times().iter().zip(draw) {
            out.push_str(&format!("{i},{}", format_f64(*t)));
            for e in v.data() {
                out.push(',');
                out.push_str(&format_f64(*e));
            }
            out.push('\n');
        }
    }
    out
}

fn sample(a: SampleArgs, out: &mut dyn Write) -> Result<()> {
    if a.n == 0 {
        return Err(Error::invalid("--n must be at least 1"));
    }
    let (archive, data) = load_pair(&a.model, &a.data)?;
    let m = &archive.model;
    let x = pick(&data, a.index, "trajectory")?;
    let grid = output_grid(m, &data, x, &a.grid)?;
    let exemplar = || -> Result<&Trajectory> {
        let j = a
            .exemplar
            .ok_or_else(|| Error::invalid("--exemplar is required for this mode"))?;
        pick(&data, j, "exemplar")
    };
    let draws = match a.mode {
        SampleMode::Gmm => sample_trajectories(m, require_gmm(&archive)?, x, &grid, a.n, a.seed)?,
        SampleMode::Prior => sample_prior(m, x, &grid, a.n, a.seed)?,
        SampleMode::Joint => sample_unconditional(m, require_gmm(&archive)?, &grid, a.n, a.seed)?,
        SampleMode::Transfer => vec![transfer_trajectory(m, x, exemplar()?, &grid)?],
        SampleMode::Neighborhood => {
            let delta = a
                .delta
                .ok_or_else(|| Error::invalid("--delta is required for neighborhood mode"))?;
            let nb = neighborhood_sample(
                m,
                require_gmm(&archive)?,
                exemplar()?,
                delta,
                a.n,
                a.max_attempts,
                a.seed,
                &grid,
            )?;
            writeln!(
                out,
                "accepted {} of {} draws (rate {:.4})",
                nb.gammas.len(),
                nb.attempts,
                nb.acceptance_rate()
            )?;
            nb.trajectories
        }
    };
    write_atomic(&a.out, trajectories_csv(&grid, &draws).as_bytes())?;
    writeln!(out, "wrote {} ({} trajectories)", a.out.display(), draws.len())?;
    Ok(())
}

fn band(a: BandArgs, out: &mut dyn Write) -> Result<()> {
    let (archive, data) = load_pair(&a.model, &a.data)?;
    let m = &archive.model;
    let x = pick(&data, a.index, "trajectory")?;
    let grid = output_grid(m, &data, x, &a.grid)?;
    let source = match a.source {
        BandSource::Posterior => DrawSource::Posterior,
        BandSource::Gmm => DrawSource::Mixture(require_gmm(&archive)?),
    };
    let band = credible_band(m, source, x, &grid, a.draws, a.level, !a.no_noise, a.seed)?;
    write_atomic(&a.out, band.to_csv().as_bytes())?;
    if a.grid.observed_times {
        let inside = x.values.iter().enumerate().filter(|(i, v)| band.covers(*i, v)).count();
        writeln!(out, "observed points inside the band: {inside}/{}", x.len())?;
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

fn ood(a: OodArgs, out: &mut dyn Write) -> Result<()> {
    let archive = ModelArchive::load(&a.model)?;
    let s = require_gmm(&archive)?;
    let m = &archive.model;
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let quantile = a.quantile.unwrap_or(cfg.ood_quantile);
    let n_gamma = a.n_gamma.unwrap_or(cfg.ood_n_gamma);
    let test = io::load_dataset(&a.test_data)?;
    let threshold = match a.threshold {
        Some(t) => t,
        None => {
            let train = io::load_dataset(&a.train_data)?;
            ood_calibrate(m, s, &train, n_gamma, quantile, a.seed)?
        }
    };
    let report = ood_test(m, s, threshold, &test, n_gamma, a.seed)?;
    write_atomic(&a.out, report.to_csv().as_bytes())?;
    let flagged = report.rows.iter().filter(|r| r.flagged).count();
    writeln!(
        out,
        "threshold {:.6}: flagged {flagged}/{} (proportion {:.4})",
        report.threshold,
        report.rows.len(),
        report.flag_rate()
    )?;
    if let Some(classes) = &report.per_class {
        for c in classes {
            writeln!(
                out,
                "class {}: {}/{} flagged ({:.4})",
                c.label,
                c.flagged,
                c.count,
                c.proportion()
            )?;
        }
    }
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (archive, data) = load_pair(&a.model, &a.data)?;
    let rows = extrapolation_errors(&archive.model, &data, a.observe_fraction, a.samples, a.seed)?;
    let csv = extrapolation_csv(&rows);
    write_atomic(&a.out, csv.as_bytes())?;
    if let Some(mean) = csv.lines().last() {
        writeln!(out, "{mean}")?;
    }
    Ok(())
}

fn plot_cmd(a: PlotArgs, out: &mut dyn Write) -> Result<()> {
    let traj = fs::read_to_string(&a.traj)?;
    let series = plot::parse_trajectories(&traj, &a.traj.display().to_string())?;
    let band = match &a.band {
        Some(p) => Some(plot::parse_band(&fs::read_to_string(p)?, &p.display().to_string())?),
        None => None,
    };
    let svg = plot::render_svg(&series, band.as_deref())?;
    write_atomic(&a.out, svg.as_bytes())?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

/// Nearest-training MSE of decoded draws, for comparing samplers.
pub fn median_nearest_mse(grid: &TimeGrid, draws: &[Decoded], train: &PanelDataset) -> f64 {
    let mut v: Vec<f64> = draws.iter().map(|d| inference::nearest_mse(grid, d, train)).collect();
    v.sort_by(f64::total_cmp);
    inference::quantile_sorted(&v, 0.5)
}
