//! Gaussian mixtures over posterior embedding samples: EM fitting, BIC model
//! selection, density scoring and ancestral sampling.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::{reparameterize, FnodeModel};
use crate::syndata::PanelDataset;
use crate::tensor::Tensor;

/// Lower bound on variances and on the diagonal of Cholesky factors.
pub const COV_FLOOR: f64 = 1e-6;
pub const RESTARTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CovType {
    Spherical,
    Tied,
    Diag,
    Full,
}

impl CovType {
    /// Also the tie-break order of [`select_model`].
    pub const ALL: [CovType; 4] = [CovType::Spherical, CovType::Tied, CovType::Diag, CovType::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            CovType::Spherical => "spherical",
            CovType::Tied => "tied",
            CovType::Diag => "diag",
            CovType::Full => "full",
        }
    }
}

impl fmt::Display for CovType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CovType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CovType::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown covariance type `{s}`")))
    }
}

/// Covariance parameters, one variant per structure.
#[derive(Clone, Debug, PartialEq)]
pub enum Covariances {
    /// One variance per component.
    Spherical(Vec<f64>),
    /// Per-component, per-dimension variances.
    Diag(Vec<Vec<f64>>),
    /// One matrix shared by all components.
    Tied(DMatrix<f64>),
    Full(Vec<DMatrix<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Covariances,
    pub cov_type: CovType,
    pub d: usize,
    /// Lower Cholesky factors for the matrix variants, derived from
    /// `covariances`.
    chol: Vec<DMatrix<f64>>,
}

/// Posterior samples collected for fitting.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaSampleBank {
    pub samples: Vec<Vec<f64>>,
    /// Source trajectory index of every row.
    pub provenance: Vec<usize>,
    pub n_gamma: usize,
    /// Rows hold `z0 ‖ γ` instead of `γ` alone.
    pub joint: bool,
}

impl GammaSampleBank {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        let provenance = (0..samples.len()).collect();
        let bank = GammaSampleBank {
            samples,
            provenance,
            n_gamma: 1,
            joint: false,
        };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.samples.first().map(Vec::len).unwrap_or(0);
        if d == 0 {
            return Err(Error::invalid("sample bank is empty"));
        }
        if self
            .samples
            .iter()
            .any(|r| r.len() != d || r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid("sample bank rows must be finite and of equal width"));
        }
        if self.provenance.len() != self.samples.len() || self.n_gamma == 0 {
            return Err(Error::invalid("sample bank provenance does not match its rows"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map(Vec::len).unwrap_or(0)
    }
}

/// Draws `n_gamma` reparameterised posterior samples of `γ` (or `z0 ‖ γ`
/// when `joint`) for every trajectory, grouped by source.
pub fn collect_gamma_samples(
    m: &FnodeModel,
    data: &PanelDataset,
    n_gamma: usize,
    seed: u64,
    joint: bool,
) -> Result<GammaSampleBank> {
    if n_gamma == 0 {
        return Err(Error::invalid("n_gamma must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(data.len() * n_gamma);
    let mut provenance = Vec::with_capacity(data.len() * n_gamma);
    for (j, x) in data.trajectories.iter().enumerate() {
        let qg = m.encode_gamma(x)?;
        let q0 = if joint { Some(m.encode_z0(x)?) } else { None };
        for _ in 0..n_gamma {
            let mut row = Vec::with_capacity(m.gamma_dim() + m.latent_dim());
            if let Some(q0) = &q0 {
                let e = normal_vec(&mut rng, q0.dim());
                row.extend_from_slice(reparameterize(q0, &Tensor::vector(e)?)?.data());
            }
            let e = normal_vec(&mut rng, qg.dim());
            row.extend_from_slice(reparameterize(&qg, &Tensor::vector(e)?)?.data());
            samples.push(row);
            provenance.push(j);
        }
    }
    Ok(GammaSampleBank {
        samples,
        provenance,
        n_gamma,
        joint,
    })
}

fn normal_vec<R: RngExt + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Cholesky factor with diagonal at least [`COV_FLOOR`], adding a growing
/// ridge to `cov` until that holds. Returns the (possibly ridged) covariance.
fn floored_cholesky(mut cov: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = cov.nrows();
    let mut ridge = COV_FLOOR;
    loop {
        if let Some(ch) = cov.clone().cholesky() {
            let l = ch.l();
            if l.diagonal().iter().all(|v| *v >= COV_FLOOR) {
                return (cov, l);
            }
        }
        cov += DMatrix::identity(d, d) * ridge;
        ridge *= 10.0;
    }
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Covariances) -> Result<Self> {
        let k = weights.len();
        let d = means.first().map(Vec::len).unwrap_or(0);
        if k == 0 || d == 0 || means.len() != k || means.iter().any(|m| m.len() != d) {
            return Err(Error::invalid("mixture needs K ≥ 1 means of equal positive width"));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixture weights must be positive and sum to 1"));
        }
        let (cov_type, covariances, chol) = match covariances {
            Covariances::Spherical(v) => {
                if v.len() != k || v.iter().any(|x| !(*x >= COV_FLOOR) || !x.is_finite()) {
                    return Err(Error::invalid("spherical variances must be K values ≥ 1e-6"));
                }
                (CovType::Spherical, Covariances::Spherical(v), vec![])
            }
            Covariances::Diag(v) => {
                if v.len() != k
                    || v.iter()
                        .any(|r| r.len() != d || r.iter().any(|x| !(*x >= COV_FLOOR) || !x.is_finite()))
                {
                    return Err(Error::invalid("diagonal variances must be K×d values ≥ 1e-6"));
                }
                (CovType::Diag, Covariances::Diag(v), vec![])
            }
            Covariances::Tied(c) => {
                let l = checked_cholesky(&c, d)?;
                (CovType::Tied, Covariances::Tied(c), vec![l])
            }
            Covariances::Full(cs) => {
                if cs.len() != k {
                    return Err(Error::invalid("full covariance needs one matrix per component"));
                }
                let chol = cs.iter().map(|c| checked_cholesky(c, d)).collect::<Result<Vec<_>>>()?;
                (CovType::Full, Covariances::Full(cs), chol)
            }
        };
        Ok(GmmModel {
            weights,
            means,
            covariances,
            cov_type,
            d,
            chol,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Free parameters: means `K·d`, weights `K−1`, plus the covariance count
    /// of the structure.
    pub fn n_params(&self) -> usize {
        n_params(self.k(), self.d, self.cov_type)
    }

    fn component_log_pdf(&self, k: usize, x: &[f64]) -> f64 {
        let d = self.d as f64;
        let mu = &self.means[k];
        let base = -0.5 * d * (2.0 * PI).ln();
        match &self.covariances {
            Covariances::Spherical(v) => {
                let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                base - 0.5 * (d * v[k].ln() + sq / v[k])
            }
            Covariances::Diag(v) => {
                let mut s = 0.0;
                for ((a, b), var) in x.iter().zip(mu).zip(&v[k]) {
                    s += var.ln() + (a - b) * (a - b) / var;
                }
                base - 0.5 * s
            }
            Covariances::Tied(_) | Covariances::Full(_) => {
                let l = if self.cov_type == CovType::Tied {
                    &self.chol[0]
                } else {
                    &self.chol[k]
                };
                let diff = DVector::from_iterator(self.d, x.iter().zip(mu).map(|(a, b)| a - b));
                let y = l.solve_lower_triangular(&diff).expect("positive diagonal");
                let logdet: f64 = l.diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
                base - 0.5 * (logdet + y.norm_squared())
            }
        }
    }

    fn weighted_log_pdfs(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.weights[k].ln() + self.component_log_pdf(k, x);
        }
    }

    /// `log Σ_k w_k N(x; μ_k, Σ_k)`, stable far from every component.
    pub fn log_likelihood(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.d {
            return Err(Error::shape(
                "log_likelihood",
                format!("point width {} vs {}", point.len(), self.d),
            ));
        }
        let mut buf = vec![0.0; self.k()];
        self.weighted_log_pdfs(point, &mut buf);
        Ok(log_sum_exp(&buf))
    }

    /// Sum of [`GmmModel::log_likelihood`] over the rows.
    pub fn total_log_likelihood(&self, rows: &[Vec<f64>]) -> Result<f64> {
        rows.iter().map(|r| self.log_likelihood(r)).sum()
    }

    /// Ancestral sampling: component by weight, then its Gaussian.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| self.draw(&mut rng)).collect())
    }

    /// One ancestral draw from a caller-owned generator.
    pub fn draw<R: RngExt + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.k() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let e = normal_vec(rng, self.d);
        let mu = &self.means[k];
        match &self.covariances {
            Covariances::Spherical(v) => mu.iter().zip(&e).map(|(m, z)| m + v[k].sqrt() * z).collect(),
            Covariances::Diag(v) => mu
                .iter()
                .zip(&e)
                .zip(&v[k])
                .map(|((m, z), var)| m + var.sqrt() * z)
                .collect(),
            Covariances::Tied(_) | Covariances::Full(_) => {
                let l = if self.cov_type == CovType::Tied {
                    &self.chol[0]
                } else {
                    &self.chol[k]
                };
                let y = l * DVector::from_vec(e);
                mu.iter().zip(y.iter()).map(|(m, v)| m + v).collect()
            }
        }
    }

    pub fn to_json(&self) -> Value {
        let floats = |v: &[f64]| crate::json::floats(v);
        let matrix = |m: &DMatrix<f64>| {
            Value::Array(
                (0..m.nrows())
                    .map(|r| floats(&m.row(r).iter().copied().collect::<Vec<_>>()))
                    .collect(),
            )
        };
        let cov = match &self.covariances {
            Covariances::Spherical(v) => floats(v),
            Covariances::Diag(v) => Value::Array(v.iter().map(|r| floats(r)).collect()),
            Covariances::Tied(m) => matrix(m),
            Covariances::Full(ms) => Value::Array(ms.iter().map(matrix).collect()),
        };
        json!({
            "cov_type": self.cov_type.as_str(),
            "d": self.d,
            "weights": floats(&self.weights),
            "means": Value::Array(self.means.iter().map(|m| floats(m)).collect()),
            "covariances": cov,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |what: &str| Error::invalid(format!("mixture JSON: bad or missing `{what}`"));
        let vec = |v: &Value, what: &str| -> Result<Vec<f64>> {
            v.as_array()
                .ok_or_else(|| bad(what))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| bad(what)))
                .collect()
        };
        let mat = |v: &Value, what: &str| -> Result<Vec<Vec<f64>>> {
            v.as_array()
                .ok_or_else(|| bad(what))?
                .iter()
                .map(|r| vec(r, what))
                .collect()
        };
        let to_dm = |rows: Vec<Vec<f64>>| -> Result<DMatrix<f64>> {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(bad("covariances"));
            }
            Ok(DMatrix::from_row_iterator(n, n, rows.into_iter().flatten()))
        };
        let cov_type: CovType = v
            .get("cov_type")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("cov_type"))?
            .parse()?;
        let weights = vec(v.get("weights").ok_or_else(|| bad("weights"))?, "weights")?;
        let means = mat(v.get("means").ok_or_else(|| bad("means"))?, "means")?;
        let c = v.get("covariances").ok_or_else(|| bad("covariances"))?;
        let covariances = match cov_type {
            CovType::Spherical => Covariances::Spherical(vec(c, "covariances")?),
            CovType::Diag => Covariances::Diag(mat(c, "covariances")?),
            CovType::Tied => Covariances::Tied(to_dm(mat(c, "covariances")?)?),
            CovType::Full => Covariances::Full(
                c.as_array()
                    .ok_or_else(|| bad("covariances"))?
                    .iter()
                    .map(|m| to_dm(mat(m, "covariances")?))
                    .collect::<Result<_>>()?,
            ),
        };
        GmmModel::new(weights, means, covariances)
    }
}

fn checked_cholesky(c: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    if c.nrows() != d || c.ncols() != d {
        return Err(Error::invalid(format!("covariance must be {d}×{d}")));
    }
    let l = c
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("covariance is not positive definite"))?
        .l();
    if l.diagonal().iter().any(|v| *v < COV_FLOOR) {
        return Err(Error::invalid("covariance Cholesky diagonal below 1e-6"));
    }
    Ok(l)
}

pub fn n_params(k: usize, d: usize, cov: CovType) -> usize {
    let cov_params = match cov {
        CovType::Spherical => k,
        CovType::Diag => k * d,
        CovType::Tied => d * (d + 1) / 2,
        CovType::Full => k * d * (d + 1) / 2,
    };
    k * d + (k - 1) + cov_params
}

/// `−2·loglik + params·ln(n)`.
pub fn bic(model: &GmmModel, bank: &GammaSampleBank) -> Result<f64> {
    let ll = model.total_log_likelihood(&bank.samples)?;
    Ok(bic_from(ll, model.n_params(), bank.len()))
}

fn bic_from(loglik: f64, params: usize, n: usize) -> f64 {
    -2.0 * loglik + params as f64 * (n as f64).ln()
}

#[derive(Clone, Debug)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the mean per-row log-likelihood improves by less than this.
    pub tol: f64,
    pub restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 300,
            tol: 1e-8,
            restarts: RESTARTS,
        }
    }
}

/// Result of one [`em_fit`]: the model, the total log-likelihood after each
/// E-step of the kept restart, and how many empty components were re-seeded.
#[derive(Clone, Debug)]
pub struct EmFit {
    pub model: GmmModel,
    pub loglik_history: Vec<f64>,
    pub reseeded: usize,
}

/// Rows in a canonical (lexicographic) order, so fits do not depend on how
/// the bank happens to be ordered.
fn canonical_rows(rows: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    out.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    out
}

pub fn em_fit(bank: &GammaSampleBank, k: usize, cov_type: CovType, seed: u64, cfg: &EmConfig) -> Result<EmFit> {
    bank.validate()?;
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let rows = canonical_rows(&bank.samples);
    let distinct = 1 + rows.windows(2).filter(|w| w[0] != w[1]).count();
    if k > distinct {
        return Err(Error::invalid(format!(
            "K = {k} exceeds the {distinct} distinct rows of the bank"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<EmFit> = None;
    for _ in 0..cfg.restarts.max(1) {
        let fit = em_once(&rows, k, cov_type, &mut rng, cfg)?;
        let better = match &best {
            None => true,
            Some(b) => fit.loglik_history.last() > b.loglik_history.last(),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// k-means++ seeding: first centre uniform, the rest with probability
/// proportional to the squared distance to the nearest chosen centre.
fn kmeanspp<R: RngExt + ?Sized>(rows: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = rows.len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centres = vec![rows[rng.random_range(0..n)].to_vec()];
    let mut dist: Vec<f64> = rows.iter().map(|r| sq(r, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if u < acc && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = rows[pick].to_vec();
        for (d, r) in dist.iter_mut().zip(rows) {
            *d = d.min(sq(r, &c));
        }
        centres.push(c);
    }
    centres
}

fn em_once<R: RngExt + ?Sized>(
    rows: &[&[f64]],
    k: usize,
    cov_type: CovType,
    rng: &mut R,
    cfg: &EmConfig,
) -> Result<EmFit> {
    let n = rows.len();
    let d = rows[0].len();
    let centres = kmeanspp(rows, k, rng);
    // Hard assignment to the nearest centre gives the starting responsibilities.
    let mut resp = vec![0.0; n * k];
    for (i, r) in rows.iter().enumerate() {
        let nearest = (0..k)
            .min_by(|&a, &b| {
                let da: f64 = r.iter().zip(&centres[a]).map(|(x, y)| (x - y) * (x - y)).sum();
                let db: f64 = r.iter().zip(&centres[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                da.total_cmp(&db)
            })
            .expect("k >= 1");
        resp[i * k + nearest] = 1.0;
    }
    let mut reseeded = 0;
    let mut model = m_step(rows, &resp, k, d, cov_type, &centres, &mut reseeded, None)?;
    let mut history = Vec::new();
    let mut point_ll = vec![0.0; n];
    let mut buf = vec![0.0; k];
    for _ in 0..cfg.max_iter.max(1) {
        // E-step
        let mut total = 0.0;
        for (i, r) in rows.iter().enumerate() {
            model.weighted_log_pdfs(r, &mut buf);
            let lse = log_sum_exp(&buf);
            point_ll[i] = lse;
            total += lse;
            for (j, b) in buf.iter().enumerate() {
                resp[i * k + j] = (b - lse).exp();
            }
        }
        let converged = history
            .last()
            .is_some_and(|prev: &f64| (total - prev) / (n as f64) < cfg.tol);
        history.push(total);
        if converged {
            break;
        }
        model = m_step(rows, &resp, k, d, cov_type, &centres, &mut reseeded, Some(&point_ll))?;
    }
    Ok(EmFit {
        model,
        loglik_history: history,
        reseeded,
    })
}

/// Maximum-likelihood parameters for the given responsibilities. A component
/// with (numerically) no mass is re-seeded at the worst-fitting row.
#[allow(clippy::too_many_arguments)]
fn m_step(
    rows: &[&[f64]],
    resp: &[f64],
    k: usize,
    d: usize,
    cov_type: CovType,
    centres: &[Vec<f64>],
    reseeded: &mut usize,
    point_ll: Option<&[f64]>,
) -> Result<GmmModel> {
    let n = rows.len();
    let mut nk = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            nk[j] += resp[i * k + j];
        }
    }
    let mut means = vec![vec![0.0; d]; k];
    for (i, r) in rows.iter().enumerate() {
        for j in 0..k {
            let w = resp[i * k + j];
            if w != 0.0 {
                for (m, x) in means[j].iter_mut().zip(r.iter()) {
                    *m += w * x;
                }
            }
        }
    }
    let tiny = 10.0 * f64::EPSILON * n as f64;
    let mut empty = vec![false; k];
    for j in 0..k {
        if nk[j] > tiny {
            for m in means[j].iter_mut() {
                *m /= nk[j];
            }
        } else {
            empty[j] = true;
        }
    }
    if empty.iter().any(|e| *e) {
        // Worst-fitting rows first; without scores fall back to the seeds.
        let mut order: Vec<usize> = (0..n).collect();
        if let Some(ll) = point_ll {
            order.sort_by(|&a, &b| ll[a].total_cmp(&ll[b]));
        }
        let mut next = order.into_iter();
        for j in 0..k {
            if empty[j] {
                means[j] = match point_ll {
                    Some(_) => rows[next.next().expect("n >= k")].to_vec(),
                    None => centres[j].clone(),
                };
                nk[j] = 1.0;
                *reseeded += 1;
            }
        }
    }
    let total_nk: f64 = nk.iter().sum();
    let weights: Vec<f64> = nk.iter().map(|v| v / total_nk).collect();

    // Global per-dimension variance, used for re-seeded components.
    let global_var: Vec<f64> = (0..d)
        .map(|c| {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n as f64;
            (rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n as f64).max(COV_FLOOR)
        })
        .collect();

    let scatter = |j: usize| -> DMatrix<f64> {
        let mut s = DMatrix::zeros(d, d);
        for (i, r) in rows.iter().enumerate() {
            let w = resp[i * k + j];
            if w == 0.0 {
                continue;
            }
            for a in 0..d {
                let da = r[a] - means[j][a];
                for b in 0..=a {
                    s[(a, b)] += w * da * (r[b] - means[j][b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                s[(b, a)] = s[(a, b)];
            }
        }
        s
    };
    let diag_var = |j: usize| -> Vec<f64> {
        if empty[j] {
            return global_var.clone();
        }
        (0..d)
            .map(|c| {
                let s: f64 = rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| resp[i * k + j] * (r[c] - means[j][c]).powi(2))
                    .sum();
                (s / nk[j]).max(COV_FLOOR)
            })
            .collect()
    };

    let covariances = match cov_type {
        CovType::Spherical => Covariances::Spherical(
            (0..k)
                .map(|j| {
                    if empty[j] {
                        return global_var.iter().sum::<f64>() / d as f64;
                    }
                    let s: f64 = rows
                        .iter()
                        .enumerate()
                        .map(|(i, r)| {
                            resp[i * k + j] * r.iter().zip(&means[j]).map(|(x, m)| (x - m).powi(2)).sum::<f64>()
                        })
                        .sum();
                    (s / (nk[j] * d as f64)).max(COV_FLOOR)
                })
                .collect(),
        ),
        CovType::Diag => Covariances::Diag((0..k).map(diag_var).collect()),
        CovType::Tied => {
            let mut s = DMatrix::zeros(d, d);
            for j in 0..k {
                if !empty[j] {
                    s += scatter(j);
                }
            }
            let (c, _) = floored_cholesky(s / n as f64);
            Covariances::Tied(c)
        }
        CovType::Full => Covariances::Full(
            (0..k)
                .map(|j| {
                    let c = if empty[j] {
                        DMatrix::from_diagonal(&DVector::from_vec(global_var.clone()))
                    } else {
                        scatter(j) / nk[j]
                    };
                    floored_cholesky(c).0
                })
                .collect(),
        ),
    };
    GmmModel::new(weights, means, covariances)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRow {
    pub k: usize,
    pub cov_type: CovType,
    pub loglik: f64,
    pub params: usize,
    pub bic: f64,
    pub selected: bool,
}

/// Fits every `(K, cov_type)` pair and keeps the lowest BIC. Exact ties go
/// to fewer parameters, then to the order of [`CovType::ALL`].
pub fn select_model(
    bank: &GammaSampleBank,
    component_range: &[usize],
    cov_types: &[CovType],
    seed: u64,
    cfg: &EmConfig,
) -> Result<(GmmModel, Vec<SelectionRow>)> {
    if component_range.is_empty() || cov_types.is_empty() {
        return Err(Error::invalid("component range and covariance types must be non-empty"));
    }
    let mut table = Vec::new();
    let mut models = Vec::new();
    let mut failures = Vec::new();
    for &k in component_range {
        for &cov in cov_types {
            match em_fit(bank, k, cov, seed, cfg) {
                Ok(fit) => {
                    let loglik = *fit.loglik_history.last().expect("non-empty history");
                    // Score the final model, not the last E-step's predecessor.
                    let loglik = fit.model.total_log_likelihood(&bank.samples).unwrap_or(loglik);
                    let params = fit.model.n_params();
                    table.push(SelectionRow {
                        k,
                        cov_type: cov,
                        loglik,
                        params,
                        bic: bic_from(loglik, params, bank.len()),
                        selected: false,
                    });
                    models.push(fit.model);
                }
                Err(e) => failures.push(format!("K={k} {cov}: {e}")),
            }
        }
    }
    let best = (0..table.len())
        .filter(|&i| table[i].bic.is_finite())
        .min_by(|&a, &b| {
            let (x, y) = (&table[a], &table[b]);
            x.bic
                .total_cmp(&y.bic)
                .then(x.params.cmp(&y.params))
                .then(x.cov_type.cmp(&y.cov_type))
        })
        .ok_or_else(|| Error::SelectionFailed(failures.join("; ")))?;
    table[best].selected = true;
    Ok((models.swap_remove(best), table))
}

/// `K,cov_type,loglik,params,bic,selected` with a header row.
pub fn selection_csv(table: &[SelectionRow]) -> String {
    let mut out = String::from("K,cov_type,loglik,params,bic,selected\n");
    for r in table {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.k,
            r.cov_type,
            crate::json::format_f64(r.loglik),
            r.params,
            crate::json::format_f64(r.bic),
            u8::from(r.selected)
        ));
    }
    out
}
