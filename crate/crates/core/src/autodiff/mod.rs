//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub(crate) use checkpoint::Reader;
pub use params::{init_parameters, DiffTensor, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    fn close(analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        diff < 1e-6 || diff / analytic.abs().max(numeric.abs()) < 1e-4
    }

    /// Central differences of `f` with respect to every entry of `x`.
    fn finite_diff(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut plus = x.clone();
                plus.data_mut()[i] += h;
                let mut minus = x.clone();
                minus.data_mut()[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn activations_at_zero() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        assert_eq!(z.sigmoid().value().item(), 0.5);
        assert!((z.softplus().value().item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let tape = Tape::new();
        let c = tape.constant(a.clone()).matmul(&tape.constant(b.clone())).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.get2(i, k) * b.get2(k, j);
                }
                assert!((c.value().get2(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors_name_the_op() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let msg = a.matmul(&b).err().unwrap().to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(a.mul(&c).err().unwrap().to_string().contains("mul"));
        assert!(a.add(&c).is_err());
        assert!(a.squared_error(&c).is_err());
    }

    #[test]
    fn sum_gives_all_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[2, 3, 4], 0.7));
        let loss = x.sum();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap(), &Tensor::ones(&[2, 3, 4]));
        assert!(tape.is_empty());
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(0.0));
        let g = tape.backward(&w.sigmoid()).unwrap();
        assert_eq!(g.get(&w).unwrap().item(), 0.25);
    }

    #[test]
    fn backward_rejects_non_scalar_and_untracked() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        assert!(tape.backward(&x.exp()).is_err());
        let c = tape.constant(Tensor::scalar(1.0));
        assert!(tape.backward(&c).is_err());
    }

    #[test]
    fn frozen_forward_records_nothing() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[4, 3]));
        let w = tape.constant(Tensor::ones(&[3, 2]));
        let b = tape.constant(Tensor::ones(&[2]));
        let y = x.matmul(&w).unwrap().add(&b).unwrap().relu().sigmoid().sum();
        assert!(!y.requires_grad());
        assert_eq!(tape.len(), 0);
    }

    #[test]
    fn reused_tensor_accumulates_both_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = random(&[5], &mut rng);
        let f = |x: &Tensor| x.data().iter().map(|v| v * v + v).sum::<f64>();
        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum();
        let g = tape.backward(&y).unwrap();
        let numeric = finite_diff(&x0, f);
        for (a, n) in g.get(&x).unwrap().data().iter().zip(&numeric) {
            assert!(close(*a, *n), "{a} vs {n}");
        }
    }

    /// Checks every unary op at 20 random points against central differences.
    #[test]
    fn unary_ops_match_finite_differences() {
        type Build = for<'t> fn(&Var<'t>) -> Var<'t>;
        let ops: [(&str, Build); 7] = [
            ("relu", |v| v.relu()),
            ("sigmoid", |v| v.sigmoid()),
            ("softplus", |v| v.softplus()),
            ("sin", |v| v.sin()),
            ("cos", |v| v.cos()),
            ("exp", |v| v.exp()),
            ("neg", |v| v.neg()),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let weights = random(&[20], &mut rng);
        for (name, op) in ops {
            let x0 = random(&[20], &mut rng);
            let eval = |x: &Tensor| {
                let tape = Tape::new();
                let y = op(&tape.constant(x.clone()));
                y.value().data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let loss = op(&x).mul(&tape.constant(weights.clone())).unwrap().sum();
            let g = tape.backward(&loss).unwrap();
            let numeric = finite_diff(&x0, eval);
            for (a, n) in g.get(&x).unwrap().data().iter().zip(&numeric) {
                assert!(close(*a, *n), "{name}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a0 = random(&[4, 3], &mut rng);
        let b0 = random(&[4, 2], &mut rng);
        let w = random(&[4, 5], &mut rng);
        let t0 = random(&[8, 2], &mut rng);
        let pipeline = |a: &Tensor, b: &Tensor| -> f64 {
            let tape = Tape::new();
            let (a, b) = (tape.constant(a.clone()), tape.constant(b.clone()));
            let c = Var::concat(&[&a, &b]).unwrap();
            let s = c.slice_cols(1, 4).unwrap().mul(&c.slice_cols(0, 4).unwrap()).unwrap();
            let r = s.reshape(&[8, 2]).unwrap().add(&tape.constant(t0.clone())).unwrap();
            let m = r.reshape(&[2, 8]).unwrap().mean();
            let e = Var::concat(&[&a, &b]).unwrap().slice_cols(0, 5).unwrap();
            let q = e.squared_error(&tape.constant(w.clone())).unwrap();
            m.add(&q).unwrap().value().item()
        };
        let tape = Tape::new();
        let a = tape.leaf(a0.clone());
        let b = tape.leaf(b0.clone());
        let c = Var::concat(&[&a, &b]).unwrap();
        let s = c.slice_cols(1, 4).unwrap().mul(&c.slice_cols(0, 4).unwrap()).unwrap();
        let r = s.reshape(&[8, 2]).unwrap().add(&tape.constant(t0.clone())).unwrap();
        let m = r.reshape(&[2, 8]).unwrap().mean();
        let e = Var::concat(&[&a, &b]).unwrap().slice_cols(0, 5).unwrap();
        let q = e.squared_error(&tape.constant(w.clone())).unwrap();
        let loss = m.add(&q).unwrap();
        let g = tape.backward(&loss).unwrap();
        let na = finite_diff(&a0, |x| pipeline(x, &b0));
        let nb = finite_diff(&b0, |x| pipeline(&a0, x));
        for (x, n) in g.get(&a).unwrap().data().iter().zip(&na) {
            assert!(close(*x, *n), "a: {x} vs {n}");
        }
        for (x, n) in g.get(&b).unwrap().data().iter().zip(&nb) {
            assert!(close(*x, *n), "b: {x} vs {n}");
        }
    }

    #[test]
    fn two_layer_mlp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random(&[6, 4], &mut rng);
        let target = random(&[6, 2], &mut rng);
        let params = init_parameters(&[4, 5, 2], 8).unwrap();
        let values: Vec<Tensor> = params.iter().map(|p| p.value.clone()).collect();

        let loss_of = |vals: &[Tensor]| -> f64 {
            let tape = Tape::new();
            let v: Vec<_> = vals.iter().map(|t| tape.constant(t.clone())).collect();
            let h = tape.constant(x.clone()).matmul(&v[0]).unwrap().add(&v[1]).unwrap().sigmoid();
            let y = h.matmul(&v[2]).unwrap().add(&v[3]).unwrap();
            y.squared_error(&tape.constant(target.clone())).unwrap().value().item()
        };

        let tape = Tape::new();
        let v: Vec<_> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let h = tape.constant(x.clone()).matmul(&v[0]).unwrap().add(&v[1]).unwrap().sigmoid();
        let y = h.matmul(&v[2]).unwrap().add(&v[3]).unwrap();
        let loss = y.squared_error(&tape.constant(target.clone())).unwrap();
        let g = tape.backward(&loss).unwrap();

        for p in 0..values.len() {
            let numeric = finite_diff(&values[p], |t| {
                let mut vals = values.clone();
                vals[p] = t.clone();
                loss_of(&vals)
            });
            for (a, n) in g.get(&v[p]).unwrap().data().iter().zip(&numeric) {
                assert!(close(*a, *n), "param {p}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_parameters(&[7, 5, 3], 42).unwrap();
        let b = init_parameters(&[7, 5, 3], 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a[1].value.data().iter().all(|&x| x == 0.0));
        assert!(a[3].value.data().iter().all(|&x| x == 0.0));
        assert_ne!(a, init_parameters(&[7, 5, 3], 43).unwrap());
        assert!(init_parameters(&[3, 0], 1).is_err());
    }

    #[test]
    fn init_bounds_and_mean() {
        let params = init_parameters(&[64, 64, 64, 64], 1234).unwrap();
        let w: Vec<f64> = params
            .iter()
            .step_by(2)
            .flat_map(|p| p.value.data().to_vec())
            .collect();
        assert!(w.len() >= 10_000);
        let limit = (6.0f64 / 128.0).sqrt();
        assert!(w.iter().all(|x| x.abs() <= limit));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        // uniform(-a, a) has std a/sqrt(3)
        let se = limit / 3f64.sqrt() / (w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }
}
