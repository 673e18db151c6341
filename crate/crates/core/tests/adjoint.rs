//! Backward passes are linear in the output seed: for fixed inputs,
//! `Jᵀ(a·g₁ + b·g₂) = a·Jᵀg₁ + b·Jᵀg₂`.

use galnet::gal::{gal_forward, GalParams};
use galnet::{LatticeGraph, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn combine(a: f64, x: &Tensor<f64>, b: f64, y: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_fn(x.shape(), |i| a * x.data()[i] + b * y.data()[i])
}

/// Checks linearity of the adjoint for every leaf in `leaves`.
fn assert_linear(tape: &Tape<f64>, out: Var, leaves: &[Var], rng: &mut impl Rng) {
    let shape = tape.shape(out).to_vec();
    let (g1, g2) = (random(rng, &shape), random(rng, &shape));
    let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let r1 = tape.backward_with(out, g1.clone()).unwrap();
    let r2 = tape.backward_with(out, g2.clone()).unwrap();
    let r = tape.backward_with(out, combine(a, &g1, b, &g2)).unwrap();
    for &v in leaves {
        let want = combine(a, &r1.wrt(v), b, &r2.wrt(v));
        let err = r.wrt(v).max_abs_diff(&want);
        assert!(err <= 1e-10, "leaf {}: {err}", v.index());
    }
}

#[test]
fn elementwise_and_structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::new();
    let x = tape.leaf(random(&mut rng, &[4, 4, 2]));
    let y = tape.leaf(random(&mut rng, &[4, 4, 2]));
    let bias = tape.leaf(random(&mut rng, &[2]));
    let m = tape.mul(x, y).unwrap();
    let s = tape.sub(m, x).unwrap();
    let a = tape.add_bias(s, bias).unwrap();
    let r = tape.relu(a);
    let c = tape.concat(r, y).unwrap();
    let u = tape.upsample(c, 2).unwrap();
    assert_linear(&tape, u, &[x, y, bias], &mut rng);
}

#[test]
fn convolution_and_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::new();
    let x = tape.leaf(random(&mut rng, &[6, 5, 3]));
    let k = tape.leaf(random(&mut rng, &[3, 3, 3, 4]));
    let w = tape.leaf(random(&mut rng, &[4, 2]));
    let y = tape.conv2d(x, k, 2).unwrap();
    let s = tape.shape(y).to_vec();
    let rows = tape.reshape(y, &[s[0] * s[1], s[2]]).unwrap();
    let z = tape.matmul(rows, w).unwrap();
    assert_linear(&tape, z, &[x, k, w], &mut rng);
}

#[test]
fn attention_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w, c) = (4, 5, 6);
    let g = LatticeGraph::build(h, w).unwrap();
    let params = GalParams::<f64>::init(c, 9).unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(random(&mut rng, &[h, w, c]));
    let vars = params.bind(&mut tape);
    let out = gal_forward(&mut tape, x, &g, &vars).unwrap().output;
    let mut leaves = vec![x];
    leaves.extend(vars.all());
    assert_linear(&tape, out, &leaves, &mut rng);
}
