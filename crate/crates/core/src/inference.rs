//! Statistical inference with a trained model and a fitted mixture over its
//! embeddings: sampling new trajectories, dynamics transfer, neighbourhood
//! sampling, credible bands, out-of-distribution scoring and
//! interpolation/extrapolation error.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::json::format_f64;
use crate::model::{reparameterize, FnodeModel};
use crate::odeint::TimeGrid;
use crate::syndata::{PanelDataset, Trajectory};
use crate::tensor::Tensor;

/// Decoded trajectory: one observation vector per time.
pub type Decoded = Vec<Tensor>;

/// How a mixture's rows map onto `(z0, γ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Embedding {
    Gamma,
    /// Rows are `z0 ‖ γ`.
    Joint,
}

impl Embedding {
    pub fn of(m: &FnodeModel, s: &GmmModel) -> Result<Self> {
        let (p, d) = (m.latent_dim(), m.gamma_dim());
        if s.d == d {
            Ok(Embedding::Gamma)
        } else if s.d == p + d {
            Ok(Embedding::Joint)
        } else {
            Err(Error::invalid(format!(
                "mixture dimension {} matches neither γ ({d}) nor z0‖γ ({})",
                s.d,
                p + d
            )))
        }
    }
}

fn gamma_part(m: &FnodeModel, row: &[f64]) -> Result<Tensor> {
    Tensor::vector(row[row.len() - m.gamma_dim()..].to_vec())
}

fn normal<R: RngExt + ?Sized>(rng: &mut R, n: usize) -> Result<Tensor> {
    Tensor::vector((0..n).map(|_| rng.sample(StandardNormal)).collect())
}

/// `n` trajectories sharing `z0 = μ_z0(z0_source)` with `γ` drawn from `s`.
pub fn sample_trajectories(
    m: &FnodeModel,
    s: &GmmModel,
    z0_source: &Trajectory,
    times: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<Vec<Decoded>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    Embedding::of(m, s)?;
    let z0 = m.encode_z0(z0_source)?.mean;
    let gammas = s
        .sample(n, seed)?
        .iter()
        .map(|r| gamma_part(m, r))
        .collect::<Result<Vec<_>>>()?;
    m.decode_many(&vec![z0; n], &gammas, times)
}

/// Fully generative draws from a mixture fitted on `z0 ‖ γ`.
pub fn sample_unconditional(
    m: &FnodeModel,
    s: &GmmModel,
    times: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<Vec<Decoded>> {
    if Embedding::of(m, s)? != Embedding::Joint {
        return Err(Error::invalid("unconditional sampling needs a mixture fitted on z0‖γ"));
    }
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let p = m.latent_dim();
    let rows = s.sample(n, seed)?;
    let z0s = rows
        .iter()
        .map(|r| Tensor::vector(r[..p].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let gammas = rows.iter().map(|r| gamma_part(m, r)).collect::<Result<Vec<_>>>()?;
    m.decode_many(&z0s, &gammas, times)
}

/// Like [`sample_trajectories`] but with `γ ~ N(0, I)`, the prior.
pub fn sample_prior(
    m: &FnodeModel,
    z0_source: &Trajectory,
    times: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<Vec<Decoded>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let z0 = m.encode_z0(z0_source)?.mean;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gammas = (0..n)
        .map(|_| normal(&mut rng, m.gamma_dim()))
        .collect::<Result<Vec<_>>>()?;
    m.decode_many(&vec![z0; n], &gammas, times)
}

/// Dynamics of `exemplar` applied from the initial state of `z0_source`.
pub fn transfer_trajectory(
    m: &FnodeModel,
    z0_source: &Trajectory,
    exemplar: &Trajectory,
    times: &TimeGrid,
) -> Result<Decoded> {
    let z0 = m.encode_z0(z0_source)?.mean;
    let gamma = m.encode_gamma(exemplar)?.mean;
    Ok(m.decode_many(&[z0], &[gamma], times)?.remove(0))
}

#[derive(Clone, Debug)]
pub struct Neighborhood {
    pub gammas: Vec<Tensor>,
    pub trajectories: Vec<Decoded>,
    pub attempts: usize,
    pub centre: Tensor,
}

impl Neighborhood {
    pub fn acceptance_rate(&self) -> f64 {
        self.gammas.len() as f64 / self.attempts.max(1) as f64
    }
}

/// Rejection sampling from `s` restricted to the Euclidean `delta`-ball
/// around `μ_γ(exemplar)`. Stops after `n` acceptances or `max_attempts`
/// draws; decodes from `μ_z0(exemplar)`.
pub fn neighborhood_sample(
    m: &FnodeModel,
    s: &GmmModel,
    exemplar: &Trajectory,
    delta: f64,
    n: usize,
    max_attempts: usize,
    seed: u64,
    times: &TimeGrid,
) -> Result<Neighborhood> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    if n == 0 || max_attempts == 0 {
        return Err(Error::invalid("n and max_attempts must be at least 1"));
    }
    Embedding::of(m, s)?;
    let centre = m.encode_gamma(exemplar)?.mean;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gammas = Vec::new();
    let mut attempts = 0;
    while gammas.len() < n && attempts < max_attempts {
        attempts += 1;
        let g = gamma_part(m, &s.draw(&mut rng))?;
        let dist = euclidean(g.data(), centre.data());
        if dist <= delta {
            assert!(dist <= delta, "accepted draw outside the δ-ball");
            gammas.push(g);
        }
    }
    if gammas.is_empty() {
        return Err(Error::NoAcceptance {
            attempts,
            // One-sided 95% upper bound on the rate after zero successes.
            rate_bound: 3.0 / attempts as f64,
        });
    }
    let z0 = m.encode_z0(exemplar)?.mean;
    let trajectories = m.decode_many(&vec![z0; gammas.len()], &gammas, times)?;
    Ok(Neighborhood {
        gammas,
        trajectories,
        attempts,
        centre,
    })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Where the draws of a credible band come from.
#[derive(Clone, Copy, Debug)]
pub enum DrawSource<'a> {
    /// `(z0, γ)` from the trajectory's own posterior.
    Posterior,
    /// `z0 = μ_z0(x)`, `γ` from the mixture.
    Mixture(&'a GmmModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CredibleBand {
    pub times: TimeGrid,
    pub lower: Vec<Tensor>,
    pub mean: Vec<Tensor>,
    pub upper: Vec<Tensor>,
    pub level: f64,
    pub n_draws: usize,
}

impl CredibleBand {
    /// Whether `value` at time index `i` lies inside the band in every
    /// dimension.
    pub fn covers(&self, i: usize, value: &[f64]) -> bool {
        value
            .iter()
            .zip(self.lower[i].data())
            .zip(self.upper[i].data())
            .all(|((v, lo), hi)| lo <= v && v <= hi)
    }

    /// `time,dim,lower,mean,upper` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,dim,lower,mean,upper\n");
        for (i, t) in self.times.times().iter().enumerate() {
            for d in 0..self.mean[i].len() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    format_f64(*t),
                    d,
                    format_f64(self.lower[i].data()[d]),
                    format_f64(self.mean[i].data()[d]),
                    format_f64(self.upper[i].data()[d])
                ));
            }
        }
        out
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Per-time, per-dimension empirical quantiles `(1 ± level)/2` and mean of
/// decoded draws. The bounds are widened to contain the mean if needed.
pub fn band_from_draws(times: &TimeGrid, draws: &[Decoded], level: f64) -> Result<CredibleBand> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {level}")));
    }
    if draws.is_empty() || draws.iter().any(|d| d.len() != times.len()) {
        return Err(Error::invalid("draws must be non-empty and match the time grid"));
    }
    let dims = draws[0][0].len();
    let (mut lower, mut mean, mut upper) = (Vec::new(), Vec::new(), Vec::new());
    let mut column = vec![0.0; draws.len()];
    for i in 0..times.len() {
        let (mut lo, mut mu, mut hi) = (vec![0.0; dims], vec![0.0; dims], vec![0.0; dims]);
        for d in 0..dims {
            for (c, draw) in column.iter_mut().zip(draws) {
                *c = draw[i].data()[d];
            }
            let m = column.iter().sum::<f64>() / column.len() as f64;
            column.sort_by(f64::total_cmp);
            mu[d] = m;
            lo[d] = quantile_sorted(&column, (1.0 - level) / 2.0).min(m);
            hi[d] = quantile_sorted(&column, (1.0 + level) / 2.0).max(m);
        }
        lower.push(Tensor::vector(lo)?);
        mean.push(Tensor::vector(mu)?);
        upper.push(Tensor::vector(hi)?);
    }
    Ok(CredibleBand {
        times: times.clone(),
        lower,
        mean,
        upper,
        level,
        n_draws: draws.len(),
    })
}

/// Decoded draws for a credible band. With `observation_noise`, every
/// decoded value is perturbed by `N(0, σ_x²)` so the band describes new
/// observations rather than the latent curve.
pub fn band_draws(
    m: &FnodeModel,
    source: DrawSource,
    x: &Trajectory,
    times: &TimeGrid,
    n_draws: usize,
    observation_noise: bool,
    seed: u64,
) -> Result<Vec<Decoded>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q0 = m.encode_z0(x)?;
    let (z0s, gammas) = match source {
        DrawSource::Posterior => {
            let qg = m.encode_gamma(x)?;
            let mut z0s = Vec::with_capacity(n_draws);
            let mut gs = Vec::with_capacity(n_draws);
            for _ in 0..n_draws {
                z0s.push(reparameterize(&q0, &normal(&mut rng, q0.dim())?)?);
                gs.push(reparameterize(&qg, &normal(&mut rng, qg.dim())?)?);
            }
            (z0s, gs)
        }
        DrawSource::Mixture(s) => {
            Embedding::of(m, s)?;
            let gs = (0..n_draws)
                .map(|_| gamma_part(m, &s.draw(&mut rng)))
                .collect::<Result<Vec<_>>>()?;
            (vec![q0.mean.clone(); n_draws], gs)
        }
    };
    let mut draws = m.decode_many(&z0s, &gammas, times)?;
    if observation_noise {
        let sigma = m.config.sigma_x;
        for draw in &mut draws {
            for v in draw.iter_mut() {
                for e in v.data_mut() {
                    *e += sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    Ok(draws)
}

/// Credible band at `level` from `n_draws` decoded draws over `times`.
#[allow(clippy::too_many_arguments)]
pub fn credible_band(
    m: &FnodeModel,
    source: DrawSource,
    x: &Trajectory,
    times: &TimeGrid,
    n_draws: usize,
    level: f64,
    observation_noise: bool,
    seed: u64,
) -> Result<CredibleBand> {
    if n_draws < 20 {
        return Err(Error::invalid(format!(
            "credible bands need at least 20 draws, got {n_draws}"
        )));
    }
    let draws = band_draws(m, source, x, times, n_draws, observation_noise, seed)?;
    band_from_draws(times, &draws, level)
}

/// Mean of `−log S(e)` over `n_gamma` posterior draws of the embedding of
/// `x`, using the generator seeded with `seed`.
pub fn ood_score(m: &FnodeModel, s: &GmmModel, x: &Trajectory, n_gamma: usize, seed: u64) -> Result<f64> {
    if n_gamma == 0 {
        return Err(Error::invalid("n_gamma must be at least 1"));
    }
    let joint = Embedding::of(m, s)? == Embedding::Joint;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let qg = m.encode_gamma(x)?;
    let q0 = if joint { Some(m.encode_z0(x)?) } else { None };
    let mut total = 0.0;
    for _ in 0..n_gamma {
        let mut row = Vec::with_capacity(s.d);
        if let Some(q0) = &q0 {
            row.extend_from_slice(reparameterize(q0, &normal(&mut rng, q0.dim())?)?.data());
        }
        row.extend_from_slice(reparameterize(&qg, &normal(&mut rng, qg.dim())?)?.data());
        total -= s.log_likelihood(&row)?;
    }
    Ok(total / n_gamma as f64)
}

/// Scores of every trajectory; trajectory `i` uses seed `seed ^ i`.
pub fn ood_scores(m: &FnodeModel, s: &GmmModel, data: &PanelDataset, n_gamma: usize, seed: u64) -> Result<Vec<f64>> {
    data.trajectories
        .iter()
        .enumerate()
        .map(|(i, x)| ood_score(m, s, x, n_gamma, seed ^ i as u64))
        .collect()
}

/// The `⌈qN⌉`-th smallest score.
pub fn order_statistic_threshold(scores: &[f64], quantile: f64) -> Result<f64> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::invalid(format!("quantile must lie in (0, 1], got {quantile}")));
    }
    if scores.is_empty() {
        return Err(Error::invalid("no scores to calibrate on"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((quantile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Threshold at the `quantile` of training scores.
pub fn ood_calibrate(
    m: &FnodeModel,
    s: &GmmModel,
    train: &PanelDataset,
    n_gamma: usize,
    quantile: f64,
    seed: u64,
) -> Result<f64> {
    order_statistic_threshold(&ood_scores(m, s, train, n_gamma, seed)?, quantile)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OodRow {
    pub index: usize,
    pub label: Option<usize>,
    pub nll: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassRate {
    pub label: usize,
    pub count: usize,
    pub flagged: usize,
}

impl ClassRate {
    pub fn proportion(&self) -> f64 {
        self.flagged as f64 / self.count as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OodReport {
    pub rows: Vec<OodRow>,
    pub threshold: f64,
    /// Present when every test trajectory carries a label.
    pub per_class: Option<Vec<ClassRate>>,
}

impl OodReport {
    pub fn from_scores(scores: &[f64], labels: &[Option<usize>], threshold: f64) -> Self {
        let rows: Vec<OodRow> = scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(index, (&nll, &label))| OodRow {
                index,
                label,
                nll,
                flagged: nll > threshold,
            })
            .collect();
        let per_class = labels.iter().all(Option::is_some).then(|| {
            let mut classes: Vec<ClassRate> = Vec::new();
            for r in &rows {
                let label = r.label.expect("all labelled");
                match classes.iter_mut().find(|c| c.label == label) {
                    Some(c) => {
                        c.count += 1;
                        c.flagged += usize::from(r.flagged);
                    }
                    None => classes.push(ClassRate {
                        label,
                        count: 1,
                        flagged: usize::from(r.flagged),
                    }),
                }
            }
            classes.sort_by_key(|c| c.label);
            classes
        });
        OodReport {
            rows,
            threshold,
            per_class,
        }
    }

    pub fn flag_rate(&self) -> f64 {
        self.rows.iter().filter(|r| r.flagged).count() as f64 / self.rows.len().max(1) as f64
    }

    /// `index,label,nll,threshold,flagged`; the label is empty when absent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,label,nll,threshold,flagged\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.index,
                r.label.map(|l| l.to_string()).unwrap_or_default(),
                format_f64(r.nll),
                format_f64(self.threshold),
                u8::from(r.flagged)
            ));
        }
        out
    }
}

/// Scores `test` and flags every trajectory scoring above `threshold`.
pub fn ood_test(
    m: &FnodeModel,
    s: &GmmModel,
    threshold: f64,
    test: &PanelDataset,
    n_gamma: usize,
    seed: u64,
) -> Result<OodReport> {
    let scores = ood_scores(m, s, test, n_gamma, seed)?;
    Ok(OodReport::from_scores(&scores, &test.labels(), threshold))
}

/// Linear interpolation of a decoded path (on `grid`) at time `t`; times
/// outside the grid take the nearest end value.
pub fn interpolate(grid: &TimeGrid, path: &[Tensor], t: f64) -> Vec<f64> {
    let ts = grid.times();
    if t <= ts[0] {
        return path[0].data().to_vec();
    }
    if t >= ts[ts.len() - 1] {
        return path[ts.len() - 1].data().to_vec();
    }
    let hi = ts.partition_point(|s| *s < t);
    let lo = hi - 1;
    let w = (t - ts[lo]) / (ts[hi] - ts[lo]);
    path[lo]
        .data()
        .iter()
        .zip(path[hi].data())
        .map(|(a, b)| a + (b - a) * w)
        .collect()
}

/// Mean squared error between a decoded path and a trajectory's
/// observations, the path interpolated at the observation times.
pub fn path_mse(grid: &TimeGrid, path: &[Tensor], x: &Trajectory) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, v) in x.times.iter().zip(&x.values) {
        let p = interpolate(grid, path, *t);
        for (a, b) in p.iter().zip(v) {
            total += (a - b) * (a - b);
            count += 1;
        }
    }
    total / count.max(1) as f64
}

/// Smallest [`path_mse`] over a dataset.
pub fn nearest_mse(grid: &TimeGrid, path: &[Tensor], data: &PanelDataset) -> f64 {
    data.trajectories
        .iter()
        .map(|x| path_mse(grid, path, x))
        .fold(f64::INFINITY, f64::min)
}

pub const HORIZONS: [f64; 4] = [0.1, 0.2, 0.5, 1.0];

/// Interpolation and extrapolation errors for one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtrapolationRow {
    pub index: usize,
    pub interpolation: f64,
    /// One entry per [`HORIZONS`] fraction; `None` when no observation falls
    /// in that horizon.
    pub extrapolation: Vec<Option<f64>>,
}

/// Conditions on the observations in the first `observe_fraction` of each
/// trajectory's time span and reports the squared error on them and on the
/// points within each horizon beyond the cutoff, horizons being fractions of
/// the remaining span. `samples == 1` uses posterior means; otherwise errors
/// are averaged over that many posterior draws.
pub fn extrapolation_errors(
    m: &FnodeModel,
    data: &PanelDataset,
    observe_fraction: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<ExtrapolationRow>> {
    if !(observe_fraction > 0.0 && observe_fraction <= 1.0) {
        return Err(Error::invalid("observe fraction must lie in (0, 1]"));
    }
    if samples == 0 {
        return Err(Error::invalid("samples must be at least 1"));
    }
    let mut out = Vec::with_capacity(data.len());
    for (index, x) in data.trajectories.iter().enumerate() {
        let (start, end) = (x.times[0], x.times[x.len() - 1]);
        let cutoff = start + observe_fraction * (end - start);
        let Some(observed) = x.truncated(cutoff) else {
            continue;
        };
        let grid = TimeGrid::new(x.times.clone())?;
        let draws: Vec<Decoded> = if samples == 1 {
            let z0 = m.encode_z0(&observed)?.mean;
            let g = m.encode_gamma(&observed)?.mean;
            m.decode_many(&[z0], &[g], &grid)?
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index as u64);
            let q0 = m.encode_z0(&observed)?;
            let qg = m.encode_gamma(&observed)?;
            let mut z0s = Vec::with_capacity(samples);
            let mut gs = Vec::with_capacity(samples);
            for _ in 0..samples {
                z0s.push(reparameterize(&q0, &normal(&mut rng, q0.dim())?)?);
                gs.push(reparameterize(&qg, &normal(&mut rng, qg.dim())?)?);
            }
            m.decode_many(&z0s, &gs, &grid)?
        };
        let mse_where = |keep: &dyn Fn(f64) -> bool| -> Option<f64> {
            let mut total = 0.0;
            let mut count = 0usize;
            for draw in &draws {
                for (i, t) in x.times.iter().enumerate() {
                    if keep(*t) {
                        for (a, b) in draw[i].data().iter().zip(&x.values[i]) {
                            total += (a - b) * (a - b);
                            count += 1;
                        }
                    }
                }
            }
            (count > 0).then(|| total / count as f64)
        };
        let interpolation = mse_where(&|t| t <= cutoff).expect("at least one observed point");
        let extrapolation = HORIZONS
            .iter()
            .map(|h| {
                if observe_fraction >= 1.0 {
                    return None;
                }
                let limit = cutoff + h * (end - cutoff);
                mse_where(&|t| t > cutoff && t <= limit)
            })
            .collect();
        out.push(ExtrapolationRow {
            index,
            interpolation,
            extrapolation,
        });
    }
    Ok(out)
}

/// `index,interpolation,extrap_10,extrap_20,extrap_50,extrap_100`, empty
/// cells for horizons without observations, then a `mean` row.
pub fn extrapolation_csv(rows: &[ExtrapolationRow]) -> String {
    let mut out = String::from("index,interpolation");
    for h in HORIZONS {
        out.push_str(&format!(",extrap_{}", (h * 100.0).round() as u32));
    }
    out.push('\n');
    let cell = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
    for r in rows {
        out.push_str(&format!("{},{}", r.index, format_f64(r.interpolation)));
        for e in &r.extrapolation {
            out.push(',');
            out.push_str(&cell(*e));
        }
        out.push('\n');
    }
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    out.push_str("mean,");
    out.push_str(&cell(mean(rows.iter().map(|r| r.interpolation).collect())));
    for i in 0..HORIZONS.len() {
        out.push(',');
        out.push_str(&cell(mean(rows.iter().filter_map(|r| r.extrapolation[i]).collect())));
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_band_matches_normal_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sigma = 2.0;
        let grid = TimeGrid::new(vec![0.0]).unwrap();
        let draws: Vec<Decoded> = (0..1000)
            .map(|_| vec![Tensor::vector(vec![sigma * rng.sample::<f64, _>(StandardNormal)]).unwrap()])
            .collect();
        let band = band_from_draws(&grid, &draws, 0.95).unwrap();
        let half = 1.96 * sigma;
        assert!((band.upper[0].data()[0] - half).abs() < 0.05 * half * 2.0);
        assert!((band.lower[0].data()[0] + half).abs() < 0.05 * half * 2.0);
    }

    #[test]
    fn threshold_is_order_statistic() {
        let scores: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(order_statistic_threshold(&scores, 0.95).unwrap(), 950.0);
        assert_eq!(order_statistic_threshold(&scores, 1.0).unwrap(), 1000.0);
        assert!(order_statistic_threshold(&scores, 0.0).is_err());
    }

    #[test]
    fn report_without_labels_has_no_classes() {
        let r = OodReport::from_scores(&[1.0, 3.0], &[None, Some(1)], 2.0);
        assert!(r.per_class.is_none());
        assert_eq!(r.flag_rate(), 0.5);
        assert!(r.to_csv().starts_with("index,label,nll,threshold,flagged\n0,,"));
    }

    #[test]
    fn interpolation_between_grid_points() {
        let grid = TimeGrid::new(vec![0.0, 1.0]).unwrap();
        let path = vec![Tensor::vector(vec![0.0]).unwrap(), Tensor::vector(vec![2.0]).unwrap()];
        assert_eq!(interpolate(&grid, &path, 0.25), vec![0.5]);
        assert_eq!(interpolate(&grid, &path, 3.0), vec![2.0]);
    }
}
