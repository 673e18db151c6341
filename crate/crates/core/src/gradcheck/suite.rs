//! Gradient checks over every tape op and each stage of the attention layer,
//! sized from one H×W×C feature map.

use std::sync::Arc;

use rand::Rng;

use super::{GradCheckReport, GradChecker, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::gal::{
    aggregate_edges, edge_update, gal_forward, make_edge_features, make_vertex_features, modulate_and_reshape,
    vertex_update, GalParams, GalVars,
};
use crate::lattice::LatticeGraph;
use crate::seed;
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

pub const SUITE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SuiteConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seed: u64,
    /// Corrupts the backward rule of one op kind, to prove the suite notices.
    pub fault: Option<OpKind>,
}

impl SuiteConfig {
    pub fn new(height: usize, width: usize, channels: usize, seed: u64) -> Self {
        Self { height, width, channels, seed, fault: None }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.passes(SUITE_TOLERANCE)
    }
}

type Scalar = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// Reduces any output to a scalar through a fixed random weighting, so every
/// output coordinate reaches the gradient.
fn project(tape: &mut Tape<f64>, out: Var, salt: u64) -> Var {
    let mut rng = seed::rng(salt);
    let r = Tensor::from_fn(tape.shape(out), |_| rng.gen_range(-1.0..1.0));
    let r = tape.leaf(r);
    let y = tape.mul(out, r).expect("same shape");
    tape.sum(y)
}

fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Layer parameters with every entry randomized, biases included.
fn gal_inputs(c: usize, rng: &mut impl Rng) -> Result<Vec<Tensor<f64>>> {
    let p = GalParams::<f64>::init(c, rng.gen())?;
    Ok(p.params()
        .iter()
        .map(|(name, q)| {
            let center = if *name == "mod_b" { 1.0 } else { 0.0 };
            Tensor::from_fn(q.shape(), |_| center + rng.gen_range(-0.5..0.5))
        })
        .collect())
}

fn gal_vars(v: &[Var]) -> GalVars {
    GalVars::from_array(v.try_into().expect("ten layer parameters"))
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteEntry>> {
    let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
    if c == 0 || c % 2 != 0 {
        return Err(Error::Config(format!("channel count must be even and positive, got {c}")));
    }
    let g = Arc::new(LatticeGraph::build(h, w)?);
    let half = c / 2;
    let n = h * w;
    let mut rng = seed::rng(seed::derive(cfg.seed, seed::stream::PROBE));
    let salt: u64 = rng.gen();

    let map = random(&mut rng, &[h, w, c]);
    let other = random(&mut rng, &[h, w, c]);
    let rows = random(&mut rng, &[n, c]);
    let mat = random(&mut rng, &[c, half]);
    let kernel = random(&mut rng, &[3, 3, c, half]);
    let bias = random(&mut rng, &[c]);
    let edges = random(&mut rng, &[4 * n, half]);
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..c as u8)).collect();
    let gal = gal_inputs(c, &mut rng)?;

    let with_gal = |mut first: Vec<Tensor<f64>>| {
        first.extend(gal.iter().cloned());
        first
    };

    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, Scalar)> = Vec::new();
    let mut add = |name, inputs, f: Scalar| cases.push((name, inputs, f));

    add("matmul", vec![rows.clone(), mat.clone()], Box::new(move |t, v| {
        let y = t.matmul(v[0], v[1])?;
        Ok(project(t, y, salt))
    }));
    for (name, stride) in [("conv2d/stride1", 1), ("conv2d/stride2", 2)] {
        add(name, vec![map.clone(), kernel.clone()], Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1], stride)?;
            Ok(project(t, y, salt))
        }));
    }
    add("add_bias", vec![map.clone(), bias.clone()], Box::new(move |t, v| {
        let y = t.add_bias(v[0], v[1])?;
        Ok(project(t, y, salt))
    }));
    add("add", vec![map.clone(), other.clone()], Box::new(move |t, v| {
        let y = t.add(v[0], v[1])?;
        Ok(project(t, y, salt))
    }));
    add("sub", vec![map.clone(), other.clone()], Box::new(move |t, v| {
        let y = t.sub(v[0], v[1])?;
        Ok(project(t, y, salt))
    }));
    add("mul", vec![map.clone(), other.clone()], Box::new(move |t, v| {
        let y = t.mul(v[0], v[1])?;
        Ok(project(t, y, salt))
    }));
    add("relu", vec![map.clone()], Box::new(move |t, v| {
        let y = t.relu(v[0]);
        Ok(project(t, y, salt))
    }));
    add("upsample", vec![map.clone()], Box::new(move |t, v| {
        let y = t.upsample(v[0], 2)?;
        Ok(project(t, y, salt))
    }));
    add("concat", vec![map.clone(), other.clone()], Box::new(move |t, v| {
        let y = t.concat(v[0], v[1])?;
        Ok(project(t, y, salt))
    }));
    add("mean_rows", vec![edges.clone()], Box::new(move |t, v| {
        let y = t.mean_rows(v[0], 4)?;
        Ok(project(t, y, salt))
    }));
    add("reshape", vec![map.clone()], Box::new(move |t, v| {
        let y = t.reshape(v[0], &[n, c])?;
        Ok(project(t, y, salt))
    }));
    let senders = g.senders().clone();
    add("gather_rows", vec![rows.clone()], Box::new(move |t, v| {
        let y = t.gather_rows(v[0], senders.clone())?;
        Ok(project(t, y, salt))
    }));
    add("sum", vec![map.clone()], Box::new(|t, v| Ok(t.sum(v[0]))));
    add("softmax_cross_entropy", vec![map.clone()], Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels)));

    let gg = g.clone();
    add("gal/edge_features", vec![map.clone()], Box::new(move |t, v| {
        let vx = make_vertex_features(t, v[0])?;
        let e = make_edge_features(t, vx, &gg)?;
        Ok(project(t, e, salt))
    }));
    let gg = g.clone();
    add("gal/edge_update", with_gal(vec![map.clone()]), Box::new(move |t, v| {
        let p = gal_vars(&v[1..]);
        let vx = make_vertex_features(t, v[0])?;
        let e = make_edge_features(t, vx, &gg)?;
        let re = edge_update(t, e, vx, &gg, &p)?;
        Ok(project(t, re, salt))
    }));
    add("gal/aggregate", vec![edges.clone()], Box::new(move |t, v| {
        let a = aggregate_edges(t, v[0])?;
        Ok(project(t, a, salt))
    }));
    let agg = random(&mut rng, &[n, half]);
    add("gal/vertex_update", with_gal(vec![agg, rows.clone()]), Box::new(move |t, v| {
        let p = gal_vars(&v[2..]);
        let rv = vertex_update(t, v[0], v[1], &p)?;
        Ok(project(t, rv, salt))
    }));
    let rv = random(&mut rng, &[n, half]);
    add("gal/modulate", with_gal(vec![rv, edges.clone()]), Box::new(move |t, v| {
        let p = gal_vars(&v[2..]);
        let (_, out) = modulate_and_reshape(t, v[0], v[1], h, w, &p)?;
        Ok(project(t, out, salt))
    }));
    let gg = g.clone();
    add("gal/layer", with_gal(vec![map.clone()]), Box::new(move |t, v| {
        let p = gal_vars(&v[1..]);
        let s = gal_forward(t, v[0], &gg, &p)?;
        Ok(project(t, s.output, salt))
    }));

    let checker = GradChecker::new(DEFAULT_EPS).with_fault(cfg.fault);
    cases
        .into_iter()
        .map(|(name, inputs, f)| Ok(SuiteEntry { name, report: checker.check(&*f, &inputs)? }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_on_a_small_map() {
        let entries = run_suite(&SuiteConfig::new(3, 4, 4, 1)).unwrap();
        assert_eq!(entries.len(), 21);
        for e in &entries {
            assert!(e.passed(), "{}: {:?}", e.name, e.report);
        }
    }

    #[test]
    fn fault_in_one_op_is_caught() {
        let cfg = SuiteConfig { fault: Some(OpKind::MeanRows), ..SuiteConfig::new(3, 3, 2, 2) };
        let failed: Vec<_> = run_suite(&cfg).unwrap().into_iter().filter(|e| !e.passed()).map(|e| e.name).collect();
        assert!(failed.contains(&"mean_rows") && failed.contains(&"gal/layer"), "{failed:?}");
        assert!(!failed.contains(&"matmul"));
    }

    #[test]
    fn rejects_odd_channels() {
        assert!(run_suite(&SuiteConfig::new(3, 3, 3, 0)).is_err());
    }
}
