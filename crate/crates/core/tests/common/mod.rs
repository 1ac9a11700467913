//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use fnode::grad::Bound;
use fnode::{ParamSet, Result, Tape, Tensor, Var};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn params(rng: &mut ChaCha8Rng) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("a", random(rng, &[2, 3], -1.5, 1.5)).unwrap();
    p.insert("b", random(rng, &[2, 3], -1.5, 1.5)).unwrap();
    p.insert("pos", random(rng, &[2, 3], 0.5, 2.0)).unwrap();
    p.insert("m", random(rng, &[3, 4], -1.0, 1.0)).unwrap();
    p.insert("w", random(rng, &[4, 3], -1.0, 1.0)).unwrap();
    p.insert("bias", random(rng, &[4], -1.0, 1.0)).unwrap();
    p.insert("row", random(rng, &[3], -1.0, 1.0)).unwrap();
    p.insert("s", random(rng, &[1], 0.5, 1.5)).unwrap();
    p
}

pub const PRIMITIVES: [&str; 18] = [
    "add",
    "sub",
    "mul",
    "matmul",
    "linear",
    "broadcast_add",
    "tanh",
    "exp",
    "log",
    "square",
    "sum",
    "mean",
    "scale",
    "scale_by",
    "lincomb",
    "concat",
    "slice",
    "reshape",
];

/// A scalar program exercising one primitive; the output is contracted with
/// fixed weights so every entry of the gradient is informative.
pub fn primitive(name: &'static str, weights: Tensor) -> impl Fn(&mut Tape, &Bound, &[Var]) -> Result<Var> {
    move |t: &mut Tape, p: &Bound, _: &[Var]| {
        let (a, b) = (p.get("a")?, p.get("b")?);
        let out = match name {
            "add" => t.add(a, b)?,
            "sub" => t.sub(a, b)?,
            "mul" => t.mul(a, b)?,
            "matmul" => t.matmul(a, p.get("m")?)?,
            "linear" => t.linear(a, p.get("w")?, p.get("bias")?)?,
            "broadcast_add" => t.broadcast_add(a, p.get("row")?)?,
            "tanh" => t.tanh(a)?,
            "exp" => t.exp(a)?,
            "log" => t.log(p.get("pos")?)?,
            "square" => t.square(a)?,
            "sum" => {
                let s = t.sum(a)?;
                let s2 = t.square(s)?;
                return Ok(s2);
            }
            "mean" => {
                let s = t.mean(a)?;
                return t.exp(s);
            }
            "scale" => t.scale(a, -2.5)?,
            "scale_by" => t.scale_by(a, p.get("s")?)?,
            "lincomb" => t.lincomb(&[(a, 0.3), (b, -1.7), (a, 2.0)])?,
            "concat" => t.concat(&[a, b])?,
            "slice" => {
                let s = t.slice(a, 1, 4)?;
                let s2 = t.square(s)?;
                return t.sum(s2);
            }
            "reshape" => {
                let r = t.reshape(a, &[3, 2])?;
                let r = t.matmul(r, a)?;
                return t.sum(r);
            }
            other => unreachable!("{other}"),
        };
        let n = t.value(out).len();
        let w = t.leaf(Tensor::vector(weights.data()[..n].to_vec())?);
        let w = t.reshape(w, &t.shape(out).to_vec())?;
        let prod = t.mul(out, w)?;
        t.sum(prod)
    }
}
