use fnode::grad::{self, finite_diff_check, Bound};
use fnode::nets::{eval_functional, eval_mlp, flatten, init_mlp, FinalActivation, Hypernetwork, MlpSpec};
use fnode::odeint::{integrate, SolverConfig, TimeGrid};
use fnode::{ParamSet, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::{params, primitive, random, PRIMITIVES};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_length_matches_shape(shape in proptest::collection::vec(0usize..4, 0..4), extra in 0usize..3) {
        let n: usize = shape.iter().product();
        prop_assert!(Tensor::new(shape.clone(), vec![0.5; n]).is_ok());
        if extra > 0 {
            prop_assert!(Tensor::new(shape, vec![0.5; n + extra]).is_err());
        }
    }

    #[test]
    fn tensor_rejects_non_finite(n in 1usize..6, at in 0usize..6, bad in prop_oneof![Just(f64::NAN), Just(f64::INFINITY), Just(f64::NEG_INFINITY)]) {
        let mut data = vec![1.0; n];
        data[at % n] = bad;
        prop_assert!(Tensor::vector(data).is_err());
    }

    #[test]
    fn param_set_order_is_insertion_order(names in proptest::collection::hash_set("[a-z]{1,6}", 1..8)) {
        let names: Vec<String> = names.into_iter().collect();
        let build = || {
            let mut p = ParamSet::new();
            for n in &names {
                p.insert(n.clone(), Tensor::scalar(1.0)).unwrap();
            }
            p
        };
        let (a, b) = (build(), build());
        prop_assert_eq!(a.names().collect::<Vec<_>>(), names.iter().map(String::as_str).collect::<Vec<_>>());
        prop_assert_eq!(a.names().collect::<Vec<_>>(), b.names().collect::<Vec<_>>());
        let mut dup = build();
        prop_assert!(dup.insert(names[0].clone(), Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn primitive_gradients_match_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = params(&mut rng);
        let weights = random(&mut rng, &[16], -1.0, 1.0);
        for name in PRIMITIVES {
            let err = finite_diff_check(&primitive(name, weights.clone()), &p, &[], 1e-5).unwrap();
            prop_assert!(err <= 1e-4, "{name}: relative error {err}");
        }
    }

    #[test]
    fn gradient_is_linear(seed in any::<u64>(), ca in -3.0f64..3.0, cb in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = params(&mut rng);
        let weights = random(&mut rng, &[16], -1.0, 1.0);
        let f = primitive("tanh", weights.clone());
        let g = primitive("matmul", weights.clone());
        let combined = |t: &mut Tape, b: &Bound, i: &[Var]| {
            let (x, y) = (f(t, b, i)?, g(t, b, i)?);
            t.lincomb(&[(x, ca), (y, cb)])
        };
        let gf = grad::gradient(&f, &p, &[]).unwrap();
        let gg = grad::gradient(&g, &p, &[]).unwrap();
        let gc = grad::gradient(&combined, &p, &[]).unwrap();
        for (name, v) in gc.iter() {
            for i in 0..v.len() {
                let expect = ca * gf.require(name).unwrap().data()[i] + cb * gg.require(name).unwrap().data()[i];
                let got = v.data()[i];
                prop_assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{name}[{i}]: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = params(&mut rng);
        let f = primitive("linear", random(&mut rng, &[16], -1.0, 1.0));
        let (v1, g1) = grad::value_and_gradient(&f, &p, &[]).unwrap();
        let (v2, g2) = grad::value_and_gradient(&f, &p, &[]).unwrap();
        prop_assert_eq!(v1.to_bits(), v2.to_bits());
        prop_assert_eq!(g1, g2);
    }

    #[test]
    fn integration_reverses_with_negated_field(z0 in -2.0f64..2.0, w in 0.5f64..3.0, t_end in 0.3f64..2.0) {
        // dz/dt = sin(w·t)·tanh(z), which is smooth and time dependent.
        let cfg = SolverConfig::rk4(0.01).unwrap();
        let forward = |tape: &mut Tape, z: Var, t: f64| {
            let th = tape.tanh(z)?;
            tape.scale(th, (w * t).sin())
        };
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::vector(vec![z0]).unwrap());
        let end = *integrate(&mut tape, &forward, z, &TimeGrid::new(vec![0.0, t_end]).unwrap(), &cfg).unwrap().last().unwrap();
        // Reversed time s = t_end − t runs the negated field forwards.
        let backward = |tape: &mut Tape, z: Var, s: f64| {
            let th = tape.tanh(z)?;
            tape.scale(th, -(w * (t_end - s)).sin())
        };
        let back = *integrate(&mut tape, &backward, end, &TimeGrid::new(vec![0.0, t_end]).unwrap(), &cfg).unwrap().last().unwrap();
        let got = tape.value(back).data()[0];
        prop_assert!((got - z0).abs() <= 1e-6 * z0.abs().max(1.0), "{got} vs {z0}");
    }

    #[test]
    fn linear_flow_sensitivity_is_exponential(a in -2.0f64..2.0, t_end in 0.1f64..2.0, z0 in -2.0f64..2.0) {
        let n = 20;
        let cfg = SolverConfig::rk4(t_end / n as f64).unwrap();
        let field = |tape: &mut Tape, z: Var, _t: f64| tape.scale(z, a);
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::vector(vec![z0]).unwrap());
        let end = *integrate(&mut tape, &field, z, &TimeGrid::new(vec![0.0, t_end]).unwrap(), &cfg).unwrap().last().unwrap();
        let s = tape.sum(end).unwrap();
        let g = tape.backward(s).unwrap().wrt(z).data()[0];
        // One RK4 step multiplies by the degree-4 Taylor polynomial of exp(a h).
        let x = a * t_end / n as f64;
        let per_step = 1.0 + x + x * x / 2.0 + x.powi(3) / 6.0 + x.powi(4) / 24.0;
        let discrete = per_step.powi(n);
        prop_assert!((g - discrete).abs() <= 1e-12 * discrete, "{g} vs {discrete}");
        let exact = (a * t_end).exp();
        prop_assert!((g - exact).abs() <= 1e-4 * exact, "{g} vs {exact}");
    }

    #[test]
    fn functional_and_standard_mlps_agree_bitwise(seed in any::<u64>(), rows in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec::new(vec![4, 7, 5, 3], FinalActivation::None).unwrap();
        let mut p = ParamSet::new();
        init_mlp(&spec, "f", &mut rng, &mut p).unwrap();
        let x = random(&mut rng, &[rows, 4], -2.0, 2.0);
        let standard = eval_mlp(&spec, &p, "f", &x).unwrap();
        let functional = eval_functional(&spec, &flatten(&spec, &p, "f").unwrap(), &x).unwrap();
        prop_assert_eq!(standard, functional);
    }

    #[test]
    fn hypernetwork_output_is_bounded(seed in any::<u64>(), scale in prop_oneof![Just(1.0), Just(1e3), Just(1e6)], lambda in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = MlpSpec::new(vec![3, 4, 2], FinalActivation::None).unwrap();
        let hyper = Hypernetwork::new(3, &[6], &target, "h").unwrap();
        let mut p = ParamSet::new();
        hyper.init(lambda, &mut rng, &mut p).unwrap();
        let gamma: Vec<f64> = (0..3).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let bound = Bound::bind(&mut tape, &p);
        let g = tape.leaf(Tensor::vector(gamma).unwrap());
        let theta = hyper.map(&mut tape, &bound, g).unwrap();
        prop_assert_eq!(tape.value(theta).len(), target.weight_count());
        prop_assert!(tape.value(theta).data().iter().all(|v| v.abs() <= lambda.abs()));
    }
}
