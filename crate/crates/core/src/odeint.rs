//! Fixed-step fourth-order Runge–Kutta integration recorded on a [`Tape`], so
//! the solution is differentiable with respect to the initial state and
//! anything the vector field reads from the tape.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub step_size: f64,
}

impl SolverConfig {
    pub fn rk4(step_size: f64) -> Result<Self> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {step_size}")));
        }
        Ok(SolverConfig {
            method: Method::Rk4,
            step_size,
        })
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Rk4,
            step_size: 0.1,
        }
    }
}

/// Strictly increasing evaluation times.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("time grid is empty"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("time grid contains non-finite values"));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "time grid not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(TimeGrid(times))
    }

    /// `n` evenly spaced times over `[start, end]`.
    pub fn linspace(start: f64, end: f64, n: usize) -> Result<Self> {
        match n {
            0 => Err(Error::invalid("linspace needs at least one point")),
            1 => TimeGrid::new(vec![start]),
            _ => {
                let step = (end - start) / (n - 1) as f64;
                TimeGrid::new((0..n).map(|i| start + step * i as f64).collect())
            }
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.0[0]
    }

    pub fn end(&self) -> f64 {
        self.0[self.0.len() - 1]
    }
}

/// Right-hand side `dz/dt = f(z, t)` recorded on a tape.
pub trait VectorField {
    fn eval(&self, tape: &mut Tape, z: Var, t: f64) -> Result<Var>;
}

impl<F> VectorField for F
where
    F: Fn(&mut Tape, Var, f64) -> Result<Var>,
{
    fn eval(&self, tape: &mut Tape, z: Var, t: f64) -> Result<Var> {
        self(tape, z, t)
    }
}

fn at_time(time: f64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Blowup { time },
        other => other,
    }
}

fn rk4_step<F: VectorField + ?Sized>(tape: &mut Tape, field: &F, z: Var, t: f64, h: f64) -> Result<Var> {
    let k1 = field.eval(tape, z, t)?;
    let z2 = tape.lincomb(&[(z, 1.0), (k1, 0.5 * h)])?;
    let k2 = field.eval(tape, z2, t + 0.5 * h)?;
    let z3 = tape.lincomb(&[(z, 1.0), (k2, 0.5 * h)])?;
    let k3 = field.eval(tape, z3, t + 0.5 * h)?;
    let z4 = tape.lincomb(&[(z, 1.0), (k3, h)])?;
    let k4 = field.eval(tape, z4, t + h)?;
    tape.lincomb(&[(z, 1.0), (k1, h / 6.0), (k2, h / 3.0), (k3, h / 3.0), (k4, h / 6.0)])
}

/// Integrates from `z0` at `grid.start()` and returns the state at every grid
/// time, the first being `z0` itself. Between grid times, steps of
/// `cfg.step_size` are taken and the last step of each interval is shortened
/// to land on the next grid time. A grid running backwards in time is not
/// supported; integrate the negated field instead.
pub fn integrate<F: VectorField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    z0: Var,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<Vec<Var>> {
    let h = cfg.step_size;
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    let mut states = Vec::with_capacity(grid.len());
    let mut z = z0;
    states.push(z);
    for w in grid.times().windows(2) {
        let (start, end) = (w[0], w[1]);
        let mut k = 0usize;
        loop {
            let t = start + h * k as f64;
            let remaining = end - t;
            // Anything within rounding of a full step is the final step.
            let last = remaining <= h * (1.0 + 1e-9);
            let dt = if last { remaining } else { h };
            z = rk4_step(tape, field, z, t, dt).map_err(at_time(t))?;
            if last {
                break;
            }
            k += 1;
        }
        states.push(z);
    }
    Ok(states)
}

/// Number of RK4 steps [`integrate`] takes over `grid`.
pub fn step_count(grid: &TimeGrid, cfg: &SolverConfig) -> usize {
    let h = cfg.step_size;
    grid.times()
        .windows(2)
        .map(|w| {
            let mut k = 0usize;
            loop {
                let remaining = w[1] - (w[0] + h * k as f64);
                k += 1;
                if remaining <= h * (1.0 + 1e-9) {
                    break k;
                }
            }
        })
        .sum()
}
