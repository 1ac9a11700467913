//! Program-level entry points: evaluate a differentiable computation, take its
//! gradient with respect to a [`ParamSet`], and check that gradient against
//! central finite differences.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamSet, Tensor};

/// Parameters of a [`ParamSet`] placed on a tape, looked up by name.
#[derive(Debug, Default, Clone)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn bind(tape: &mut Tape, params: &ParamSet) -> Bound {
        let vars = params
            .iter()
            .map(|(name, t)| (name.to_string(), tape.leaf(t.clone())))
            .collect();
        Bound { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// A differentiable computation recorded onto a tape from bound parameters
/// and input leaves.
pub trait Program {
    fn record(&self, tape: &mut Tape, params: &Bound, inputs: &[Var]) -> Result<Var>;
}

impl<F> Program for F
where
    F: Fn(&mut Tape, &Bound, &[Var]) -> Result<Var>,
{
    fn record(&self, tape: &mut Tape, params: &Bound, inputs: &[Var]) -> Result<Var> {
        self(tape, params, inputs)
    }
}

fn record<P: Program + ?Sized>(program: &P, params: &ParamSet, inputs: &[Tensor]) -> Result<(Tape, Bound, Var)> {
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, params);
    let input_vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = program.record(&mut tape, &bound, &input_vars)?;
    Ok((tape, bound, out))
}

pub fn evaluate<P: Program + ?Sized>(program: &P, params: &ParamSet, inputs: &[Tensor]) -> Result<Tensor> {
    let (tape, _, out) = record(program, params, inputs)?;
    Ok(tape.value(out).clone())
}

/// Gradient of a scalar program, one tensor per parameter.
pub fn gradient<P: Program + ?Sized>(program: &P, params: &ParamSet, inputs: &[Tensor]) -> Result<ParamSet> {
    Ok(value_and_gradient(program, params, inputs)?.1)
}

pub fn value_and_gradient<P: Program + ?Sized>(
    program: &P,
    params: &ParamSet,
    inputs: &[Tensor],
) -> Result<(f64, ParamSet)> {
    let (tape, bound, out) = record(program, params, inputs)?;
    let mut grads = tape.backward(out)?;
    let mut result = ParamSet::new();
    for (name, var) in bound.iter() {
        result.insert(name, grads.take(var))?;
    }
    Ok((tape.value(out).data()[0], result))
}

/// Relative error used by [`finite_diff_check`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest entrywise relative error between [`gradient`] and central
/// differences with step `h`.
pub fn finite_diff_check<P: Program + ?Sized>(
    program: &P,
    params: &ParamSet,
    inputs: &[Tensor],
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let analytic = gradient(program, params, inputs)?;
    let scalar = |p: &ParamSet| -> Result<f64> {
        let v = evaluate(program, p, inputs)?;
        v.item().ok_or_else(|| Error::NotScalar(v.shape().to_vec()))
    };
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (name, grad) in analytic.iter() {
        for i in 0..grad.len() {
            let x0 = params.require(name)?.data()[i];
            probe.get_mut(name).expect("cloned").data_mut()[i] = x0 + h;
            let fp = scalar(&probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = x0 - h;
            let fm = scalar(&probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
    }
    Ok(worst)
}
