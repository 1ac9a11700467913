//! Network building blocks: plain MLPs whose weights live in a [`ParamSet`],
//! "functional" MLPs whose weights are sliced out of a single flat vector on
//! the tape, the hypernetwork producing such vectors, and the encoders and
//! decoder around the latent ODE.

use rand::{Rng, RngExt};

use crate::error::{Error, Result};
use crate::grad::Bound;
use crate::syndata::Trajectory;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinalActivation {
    None,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub final_activation: FinalActivation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, final_activation: FinalActivation) -> Result<Self> {
        if layer_widths.len() < 2 || layer_widths.contains(&0) {
            return Err(Error::invalid(format!(
                "an MLP needs at least two positive widths, got {layer_widths:?}"
            )));
        }
        Ok(MlpSpec {
            layer_widths,
            activation: Activation::Tanh,
            final_activation,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// `(in, out)` per affine layer.
    pub fn layer_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_widths.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn weight_count(&self) -> usize {
        self.layer_shapes().map(|(i, o)| i * o + o).sum()
    }
}

pub fn weight_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.l{layer}.w")
}

pub fn bias_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.l{layer}.b")
}

/// One affine layer on the tape.
#[derive(Clone, Copy, Debug)]
pub struct Layer {
    pub w: Var,
    pub b: Var,
}

/// Adds uniformly initialised weights and biases in `[-1/√fan_in, 1/√fan_in]`.
pub fn init_mlp<R: Rng + ?Sized>(spec: &MlpSpec, prefix: &str, rng: &mut R, params: &mut ParamSet) -> Result<()> {
    for (l, (inp, out)) in spec.layer_shapes().enumerate() {
        let bound = 1.0 / (inp as f64).sqrt();
        let w = (0..inp * out).map(|_| rng.random_range(-bound..bound)).collect();
        let b = (0..out).map(|_| rng.random_range(-bound..bound)).collect();
        params.insert(weight_name(prefix, l), Tensor::from_raw(vec![out, inp], w))?;
        params.insert(bias_name(prefix, l), Tensor::from_raw(vec![out], b))?;
    }
    Ok(())
}

pub fn zero_mlp(spec: &MlpSpec, prefix: &str, params: &mut ParamSet) -> Result<()> {
    for (l, (inp, out)) in spec.layer_shapes().enumerate() {
        params.insert(weight_name(prefix, l), Tensor::zeros(&[out, inp]))?;
        params.insert(bias_name(prefix, l), Tensor::zeros(&[out]))?;
    }
    Ok(())
}

pub fn bind_mlp(spec: &MlpSpec, bound: &Bound, prefix: &str) -> Result<Vec<Layer>> {
    (0..spec.n_layers())
        .map(|l| {
            Ok(Layer {
                w: bound.get(&weight_name(prefix, l))?,
                b: bound.get(&bias_name(prefix, l))?,
            })
        })
        .collect()
}

/// Affine layers with tanh between them; the last layer applies
/// `spec.final_activation`. `x` is `[in]` or `[rows, in]`.
pub fn forward_layers(tape: &mut Tape, spec: &MlpSpec, layers: &[Layer], x: Var) -> Result<Var> {
    let width = *tape.shape(x).last().unwrap_or(&0);
    if width != spec.input_width() {
        return Err(Error::shape(
            "mlp",
            format!("input width {width}, network expects {}", spec.input_width()),
        ));
    }
    let mut h = x;
    for (l, layer) in layers.iter().enumerate() {
        h = tape.linear(h, layer.w, layer.b)?;
        let last = l + 1 == layers.len();
        if !last || spec.final_activation == FinalActivation::Tanh {
            h = tape.tanh(h)?;
        }
    }
    Ok(h)
}

pub fn mlp_forward(tape: &mut Tape, spec: &MlpSpec, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let layers = bind_mlp(spec, bound, prefix)?;
    forward_layers(tape, spec, &layers, x)
}

/// Flat weight vector for a functional MLP: per layer, the `[out, in]`
/// weight matrix in row-major order, then the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    theta: Tensor,
}

impl WeightVector {
    pub fn new(spec: &MlpSpec, theta: Tensor) -> Result<Self> {
        if theta.len() != spec.weight_count() {
            return Err(Error::shape(
                "functional_forward",
                format!("expected {} weights, got {}", spec.weight_count(), theta.len()),
            ));
        }
        Ok(WeightVector {
            theta: theta.reshaped(vec![spec.weight_count()])?,
        })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.theta
    }

    pub fn into_tensor(self) -> Tensor {
        self.theta
    }
}

/// Concatenates an MLP's parameters in functional slicing order.
pub fn flatten(spec: &MlpSpec, params: &ParamSet, prefix: &str) -> Result<WeightVector> {
    let mut out = Vec::with_capacity(spec.weight_count());
    for l in 0..spec.n_layers() {
        out.extend_from_slice(params.require(&weight_name(prefix, l))?.data());
        out.extend_from_slice(params.require(&bias_name(prefix, l))?.data());
    }
    WeightVector::new(spec, Tensor::from_raw(vec![out.len()], out))
}

/// Slices `theta` (a `[weight_count]` node) into per-layer weights and biases.
pub fn slice_layers(tape: &mut Tape, spec: &MlpSpec, theta: Var) -> Result<Vec<Layer>> {
    let n = tape.value(theta).len();
    if n != spec.weight_count() {
        return Err(Error::shape(
            "functional_forward",
            format!("expected {} weights, got {n}", spec.weight_count()),
        ));
    }
    let mut offset = 0;
    let mut layers = Vec::with_capacity(spec.n_layers());
    for (inp, out) in spec.layer_shapes() {
        let flat = tape.slice(theta, offset, inp * out)?;
        let w = tape.reshape(flat, &[out, inp])?;
        offset += inp * out;
        let b = tape.slice(theta, offset, out)?;
        offset += out;
        layers.push(Layer { w, b });
    }
    Ok(layers)
}

pub fn functional_forward(tape: &mut Tape, spec: &MlpSpec, theta: Var, x: Var) -> Result<Var> {
    let layers = slice_layers(tape, spec, theta)?;
    forward_layers(tape, spec, &layers, x)
}

/// Tensor-in, tensor-out evaluation of a parameterised MLP.
pub fn eval_mlp(spec: &MlpSpec, params: &ParamSet, prefix: &str, input: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let layers = (0..spec.n_layers())
        .map(|l| {
            Ok(Layer {
                w: tape.leaf(params.require(&weight_name(prefix, l))?.clone()),
                b: tape.leaf(params.require(&bias_name(prefix, l))?.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let x = tape.leaf(input.clone());
    let y = forward_layers(&mut tape, spec, &layers, x)?;
    Ok(tape.value(y).clone())
}

/// Tensor-in, tensor-out evaluation of a functional MLP.
pub fn eval_functional(spec: &MlpSpec, theta: &WeightVector, input: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let t = tape.leaf(theta.tensor().clone());
    let x = tape.leaf(input.clone());
    let y = functional_forward(&mut tape, spec, t, x)?;
    Ok(tape.value(y).clone())
}

/// Maps an embedding `γ` to the flat weights of a target functional MLP:
/// `θ = λ·tanh(body(γ))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypernetwork {
    pub body: MlpSpec,
    pub prefix: String,
}

impl Hypernetwork {
    /// `hidden` are the body's hidden widths; the output width is the target's
    /// weight count.
    pub fn new(gamma_dim: usize, hidden: &[usize], target: &MlpSpec, prefix: &str) -> Result<Self> {
        let mut widths = vec![gamma_dim];
        widths.extend_from_slice(hidden);
        widths.push(target.weight_count());
        Ok(Hypernetwork {
            body: MlpSpec::new(widths, FinalActivation::Tanh)?,
            prefix: prefix.to_string(),
        })
    }

    pub fn body_prefix(&self) -> String {
        format!("{}.body", self.prefix)
    }

    pub fn lambda_name(&self) -> String {
        format!("{}.lambda", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, lambda: f64, rng: &mut R, params: &mut ParamSet) -> Result<()> {
        init_mlp(&self.body, &self.body_prefix(), rng, params)?;
        params.insert(self.lambda_name(), Tensor::scalar(lambda))
    }

    /// `gamma` is `[d_γ]` or `[rows, d_γ]`; the result has matching leading
    /// shape and width `weight_count`.
    pub fn map(&self, tape: &mut Tape, bound: &Bound, gamma: Var) -> Result<Var> {
        let squashed = mlp_forward(tape, &self.body, bound, &self.body_prefix(), gamma)?;
        let lambda = bound.get(&self.lambda_name())?;
        tape.scale_by(squashed, lambda)
    }
}

/// Diagonal Gaussian in mean / log-variance form.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl GaussianParams {
    pub fn new(mean: Tensor, log_var: Tensor) -> Result<Self> {
        if mean.shape() != log_var.shape() {
            return Err(Error::shape(
                "gaussian",
                format!("mean {:?} vs log-variance {:?}", mean.shape(), log_var.shape()),
            ));
        }
        Ok(GaussianParams { mean, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.data().iter().map(|v| v.exp()).collect()
    }
}

/// [`GaussianParams`] on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVars {
    pub mean: Var,
    pub log_var: Var,
}

/// Fully connected encoder from a whole observed trajectory to a diagonal
/// Gaussian. The input is a fixed number of slots, one per observation,
/// each holding `(t, x_1..x_D, 1)`; unused slots are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub body: MlpSpec,
    pub slots: usize,
    pub obs_dim: usize,
    pub out_dim: usize,
    pub prefix: String,
}

impl Encoder {
    pub fn new(slots: usize, obs_dim: usize, hidden: &[usize], out_dim: usize, prefix: &str) -> Result<Self> {
        if slots == 0 || obs_dim == 0 || out_dim == 0 || hidden.is_empty() {
            return Err(Error::invalid(
                "encoder needs positive slots, dimensions and a hidden layer",
            ));
        }
        let mut widths = vec![slots * (obs_dim + 2)];
        widths.extend_from_slice(hidden);
        Ok(Encoder {
            body: MlpSpec::new(widths, FinalActivation::Tanh)?,
            slots,
            obs_dim,
            out_dim,
            prefix: prefix.to_string(),
        })
    }

    fn head(&self, which: &str) -> (String, String) {
        (
            format!("{}.{which}.w", self.prefix),
            format!("{}.{which}.b", self.prefix),
        )
    }

    fn body_prefix(&self) -> String {
        format!("{}.body", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut ParamSet) -> Result<()> {
        init_mlp(&self.body, &self.body_prefix(), rng, params)?;
        let hidden = self.body.output_width();
        let bound = 1.0 / (hidden as f64).sqrt();
        for which in ["mean", "log_var"] {
            let (wn, bn) = self.head(which);
            let w = (0..hidden * self.out_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let b = (0..self.out_dim).map(|_| rng.random_range(-bound..bound)).collect();
            params.insert(wn, Tensor::from_raw(vec![self.out_dim, hidden], w))?;
            params.insert(bn, Tensor::from_raw(vec![self.out_dim], b))?;
        }
        Ok(())
    }

    pub fn init_zero(&self, params: &mut ParamSet) -> Result<()> {
        zero_mlp(&self.body, &self.body_prefix(), params)?;
        let hidden = self.body.output_width();
        for which in ["mean", "log_var"] {
            let (wn, bn) = self.head(which);
            params.insert(wn, Tensor::zeros(&[self.out_dim, hidden]))?;
            params.insert(bn, Tensor::zeros(&[self.out_dim]))?;
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.body.input_width()
    }

    /// Slot features of one trajectory.
    pub fn features(&self, x: &Trajectory) -> Result<Vec<f64>> {
        if x.is_empty() {
            return Err(Error::invalid("cannot encode an empty trajectory"));
        }
        if x.len() > self.slots {
            return Err(Error::invalid(format!(
                "trajectory has {} observations, encoder holds at most {}",
                x.len(),
                self.slots
            )));
        }
        if x.obs_dim() != self.obs_dim {
            return Err(Error::shape(
                "encode",
                format!(
                    "observation dimension {}, encoder expects {}",
                    x.obs_dim(),
                    self.obs_dim
                ),
            ));
        }
        let mut f = vec![0.0; self.input_width()];
        let stride = self.obs_dim + 2;
        for (i, (t, v)) in x.times.iter().zip(&x.values).enumerate() {
            let slot = &mut f[i * stride..(i + 1) * stride];
            slot[0] = *t;
            slot[1..=self.obs_dim].copy_from_slice(v);
            slot[stride - 1] = 1.0;
        }
        Ok(f)
    }

    /// Stacked features `[rows, in]` for several trajectories.
    pub fn batch_features(&self, xs: &[&Trajectory]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(xs.len() * self.input_width());
        for x in xs {
            data.extend(self.features(x)?);
        }
        Tensor::new(vec![xs.len(), self.input_width()], data)
    }

    /// Encodes a `[in]` or `[rows, in]` feature node.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, features: Var) -> Result<GaussianVars> {
        let h = mlp_forward(tape, &self.body, bound, &self.body_prefix(), features)?;
        let (mw, mb) = self.head("mean");
        let (vw, vb) = self.head("log_var");
        let mean = tape.linear(h, bound.get(&mw)?, bound.get(&mb)?)?;
        let log_var = tape.linear(h, bound.get(&vw)?, bound.get(&vb)?)?;
        Ok(GaussianVars { mean, log_var })
    }

    pub fn encode_tensor(&self, params: &ParamSet, x: &Trajectory) -> Result<GaussianParams> {
        let mut tape = Tape::new();
        let bound = Bound::bind(&mut tape, params);
        let f = tape.leaf(Tensor::vector(self.features(x)?)?);
        let q = self.encode(&mut tape, &bound, f)?;
        GaussianParams::new(tape.value(q.mean).clone(), tape.value(q.log_var).clone())
    }
}

/// Per-time-step decoder from latent state to observation mean.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub spec: MlpSpec,
    pub prefix: String,
}

impl Decoder {
    pub fn new(latent_dim: usize, hidden: &[usize], obs_dim: usize, prefix: &str) -> Result<Self> {
        let mut widths = vec![latent_dim];
        widths.extend_from_slice(hidden);
        widths.push(obs_dim);
        Ok(Decoder {
            spec: MlpSpec::new(widths, FinalActivation::None)?,
            prefix: prefix.to_string(),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut ParamSet) -> Result<()> {
        init_mlp(&self.spec, &self.prefix, rng, params)
    }

    /// `z` is `[p]` or `[steps, p]`.
    pub fn decode(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<Var> {
        mlp_forward(tape, &self.spec, bound, &self.prefix, z)
    }

    pub fn decode_tensor(&self, params: &ParamSet, z: &Tensor) -> Result<Tensor> {
        eval_mlp(&self.spec, params, &self.prefix, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_count_formula() {
        let spec = MlpSpec::new(vec![9, 100, 100, 8], FinalActivation::None).unwrap();
        assert_eq!(spec.weight_count(), 9 * 100 + 100 + 100 * 100 + 100 + 100 * 8 + 8);
        assert!(MlpSpec::new(vec![3], FinalActivation::None).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::new(vec![3, 4, 2], FinalActivation::None).unwrap();
        let mut p = ParamSet::new();
        zero_mlp(&spec, "m", &mut p).unwrap();
        let y = eval_mlp(&spec, &p, "m", &Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        let theta = WeightVector::new(&spec, Tensor::zeros(&[spec.weight_count()])).unwrap();
        let y = eval_functional(&spec, &theta, &Tensor::vector(vec![5.0, 6.0, 7.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn single_identity_layer_passes_through() {
        let spec = MlpSpec::new(vec![3, 3], FinalActivation::None).unwrap();
        let mut p = ParamSet::new();
        p.insert(weight_name("m", 0), Tensor::eye(3)).unwrap();
        p.insert(bias_name("m", 0), Tensor::zeros(&[3])).unwrap();
        let x = Tensor::vector(vec![0.5, -1.5, 2.0]).unwrap();
        assert_eq!(eval_mlp(&spec, &p, "m", &x).unwrap().data(), x.data());
    }

    #[test]
    fn two_layer_golden_value() {
        // W1 = [[0.5, -1], [2, 0.25]], b1 = [0.1, -0.2]
        // W2 = [[1, -2]], b2 = [0.3]; x = [1, 2]
        let spec = MlpSpec::new(vec![2, 2, 1], FinalActivation::None).unwrap();
        let mut p = ParamSet::new();
        p.insert(
            weight_name("m", 0),
            Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap(),
        )
        .unwrap();
        p.insert(bias_name("m", 0), Tensor::vector(vec![0.1, -0.2]).unwrap())
            .unwrap();
        p.insert(weight_name("m", 1), Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap())
            .unwrap();
        p.insert(bias_name("m", 1), Tensor::vector(vec![0.3]).unwrap()).unwrap();
        let y = eval_mlp(&spec, &p, "m", &Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        // h = tanh([0.5 - 2 + 0.1, 2 + 0.5 - 0.2]) = tanh([-1.4, 2.3])
        let expected = (-1.4f64).tanh() - 2.0 * 2.3f64.tanh() + 0.3;
        assert!((y.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn functional_matches_standard_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = MlpSpec::new(vec![4, 7, 5, 3], FinalActivation::Tanh).unwrap();
        let mut p = ParamSet::new();
        init_mlp(&spec, "f", &mut rng, &mut p).unwrap();
        let x = Tensor::matrix(2, 4, (0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let a = eval_mlp(&spec, &p, "f", &x).unwrap();
        let b = eval_functional(&spec, &flatten(&spec, &p, "f").unwrap(), &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weight_vector_length_is_checked() {
        let spec = MlpSpec::new(vec![2, 2], FinalActivation::None).unwrap();
        let err = WeightVector::new(&spec, Tensor::zeros(&[5])).unwrap_err();
        assert!(err.to_string().contains("expected 6"), "{err}");
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let spec = MlpSpec::new(vec![3, 2], FinalActivation::None).unwrap();
        let mut p = ParamSet::new();
        zero_mlp(&spec, "m", &mut p).unwrap();
        assert!(eval_mlp(&spec, &p, "m", &Tensor::vector(vec![1.0]).unwrap()).is_err());
    }

    fn hyper_setup(lambda: f64) -> (Hypernetwork, ParamSet) {
        let target = MlpSpec::new(vec![2, 3, 2], FinalActivation::None).unwrap();
        let h = Hypernetwork::new(2, &[4], &target, "hyper").unwrap();
        let mut p = ParamSet::new();
        h.init(lambda, &mut ChaCha8Rng::seed_from_u64(5), &mut p).unwrap();
        (h, p)
    }

    fn hyper_eval(h: &Hypernetwork, p: &ParamSet, gamma: Vec<f64>) -> Tensor {
        let mut tape = Tape::new();
        let bound = Bound::bind(&mut tape, p);
        let g = tape.leaf(Tensor::vector(gamma).unwrap());
        let theta = h.map(&mut tape, &bound, g).unwrap();
        tape.value(theta).clone()
    }

    #[test]
    fn zero_lambda_gives_zero_weights() {
        let (h, p) = hyper_setup(0.0);
        let theta = hyper_eval(&h, &p, vec![3.0, -1.0]);
        assert!(theta.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hypernet_output_bounded_for_huge_gamma() {
        let (h, p) = hyper_setup(-0.7);
        let theta = hyper_eval(&h, &p, vec![1e6, -1e6]);
        assert!(theta.data().iter().all(|v| v.abs() <= 0.7));
    }

    #[test]
    fn hypernet_saturates() {
        // body: one layer [1 -> 2], weights [0, 1e3], lambda 2, gamma = 1
        let target = MlpSpec::new(vec![1, 1], FinalActivation::None).unwrap();
        let h = Hypernetwork::new(1, &[], &target, "h").unwrap();
        let mut p = ParamSet::new();
        p.insert(weight_name("h.body", 0), Tensor::matrix(2, 1, vec![0.0, 1e3]).unwrap())
            .unwrap();
        p.insert(bias_name("h.body", 0), Tensor::zeros(&[2])).unwrap();
        p.insert("h.lambda", Tensor::scalar(2.0)).unwrap();
        let theta = hyper_eval(&h, &p, vec![1.0]);
        assert_eq!(theta.data()[0], 0.0);
        assert!((theta.data()[1] - 2.0).abs() < 1e-12);
    }

    fn traj(values: &[f64]) -> Trajectory {
        Trajectory::new(
            (0..values.len()).map(|i| i as f64 * 0.1).collect(),
            values.iter().map(|v| vec![*v]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_encoder_is_unit_gaussian() {
        let enc = Encoder::new(4, 1, &[5], 3, "enc").unwrap();
        let mut p = ParamSet::new();
        enc.init_zero(&mut p).unwrap();
        let q = enc.encode_tensor(&p, &traj(&[1.0, 2.0])).unwrap();
        assert_eq!(q.mean.data(), &[0.0; 3]);
        assert_eq!(q.log_var.data(), &[0.0; 3]);
    }

    #[test]
    fn encoder_is_deterministic_and_sensitive() {
        let enc = Encoder::new(4, 1, &[5], 3, "enc").unwrap();
        let mut p = ParamSet::new();
        enc.init(&mut ChaCha8Rng::seed_from_u64(2), &mut p).unwrap();
        let a = enc.encode_tensor(&p, &traj(&[1.0, 2.0, 3.0])).unwrap();
        let b = enc.encode_tensor(&p, &traj(&[1.0, 2.0, 3.0])).unwrap();
        let c = enc.encode_tensor(&p, &traj(&[1.0, 2.5, 3.0])).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn encoder_rejects_too_many_points_and_empty() {
        let enc = Encoder::new(2, 1, &[5], 3, "enc").unwrap();
        assert!(enc.features(&traj(&[1.0, 2.0, 3.0])).is_err());
        let empty = Trajectory {
            id: 0,
            label: None,
            times: vec![],
            values: vec![],
            meta: serde_json::Value::Null,
        };
        assert!(enc.features(&empty).is_err());
    }

    #[test]
    fn decoder_zero_and_deterministic() {
        let dec = Decoder::new(3, &[4], 1, "dec").unwrap();
        let mut p = ParamSet::new();
        zero_mlp(&dec.spec, "dec", &mut p).unwrap();
        let z = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(dec.decode_tensor(&p, &z).unwrap().data(), &[0.0]);
        let mut p = ParamSet::new();
        dec.init(&mut ChaCha8Rng::seed_from_u64(3), &mut p).unwrap();
        assert_eq!(dec.decode_tensor(&p, &z).unwrap(), dec.decode_tensor(&p, &z).unwrap());
        assert!(dec.decode_tensor(&p, &Tensor::vector(vec![1.0]).unwrap()).is_err());
    }
}
