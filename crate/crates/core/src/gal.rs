//! Graph attention layer.
//!
//! Refines an H×W×C feature map into an H×W×(C/2) map in one message-passing
//! pass over the lattice:
//!
//! 1. vertex features `V` (HW×C) are the channel vectors of the map;
//! 2. initial edge features are `e_k = v[s_k] − v[r_k]`;
//! 3. the edge perceptron maps `[e_k ; v[r_k] ; v[s_k]]` to `R_e[k]` (C′ wide);
//! 4. each vertex averages its four incoming `R_e` rows into `ē′_i`;
//! 5. the vertex perceptron maps `[ē′_i ; v_i]` to `R_v[i]`;
//! 6. a linear projection of the vertex's four slot-ordered `R_e` rows gives a
//!    modulation `Δw[i]`, and the output is `R_v[i] ⊙ Δw[i]` reshaped to
//!    H×W×C′.
//!
//! Both perceptrons are two layers wide (hidden width C, relu, linear head)
//! with weights shared across all edges and vertices respectively.

use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::LatticeGraph;
use crate::optim::Param;
use crate::seed;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Real, Tensor};

/// Uniform in ±1/√fan_in, rows = fan_in.
pub(crate) fn fan_in_uniform<T: Real>(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<T> {
    let bound = 1.0 / (rows as f64).sqrt();
    Tensor::from_fn(&[rows, cols], |_| T::lit(rng.gen_range(-bound..bound)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GalParams<T> {
    channels: usize,
    pub edge_w1: Param<T>,
    pub edge_b1: Param<T>,
    pub edge_w2: Param<T>,
    pub edge_b2: Param<T>,
    pub vertex_w1: Param<T>,
    pub vertex_b1: Param<T>,
    pub vertex_w2: Param<T>,
    pub vertex_b2: Param<T>,
    pub mod_w: Param<T>,
    pub mod_b: Param<T>,
}

/// Tape handles for one binding of [`GalParams`].
#[derive(Clone, Copy, Debug)]
pub struct GalVars {
    pub edge_w1: Var,
    pub edge_b1: Var,
    pub edge_w2: Var,
    pub edge_b2: Var,
    pub vertex_w1: Var,
    pub vertex_b1: Var,
    pub vertex_w2: Var,
    pub vertex_b2: Var,
    pub mod_w: Var,
    pub mod_b: Var,
}

impl GalVars {
    /// Inverse of [`GalVars::all`]; order matches [`GAL_PARAM_NAMES`].
    pub fn from_array(v: [Var; 10]) -> Self {
        let [edge_w1, edge_b1, edge_w2, edge_b2, vertex_w1, vertex_b1, vertex_w2, vertex_b2, mod_w, mod_b] = v;
        Self { edge_w1, edge_b1, edge_w2, edge_b2, vertex_w1, vertex_b1, vertex_w2, vertex_b2, mod_w, mod_b }
    }

    pub fn all(&self) -> [Var; 10] {
        [
            self.edge_w1,
            self.edge_b1,
            self.edge_w2,
            self.edge_b2,
            self.vertex_w1,
            self.vertex_b1,
            self.vertex_w2,
            self.vertex_b2,
            self.mod_w,
            self.mod_b,
        ]
    }
}

pub const GAL_PARAM_NAMES: [&str; 10] = [
    "edge_w1", "edge_b1", "edge_w2", "edge_b2", "vertex_w1", "vertex_b1", "vertex_w2", "vertex_b2",
    "mod_w", "mod_b",
];

fn check_channels(channels: usize) -> Result<()> {
    if channels == 0 || !channels.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "graph attention layer needs an even, positive channel count, got {channels}"
        )));
    }
    Ok(())
}

impl<T: Real> GalParams<T> {
    /// Fan-in-scaled uniform weights, zero biases, and a modulation bias of
    /// one so the layer starts out passing `R_v` through unchanged.
    pub fn init(channels: usize, seed: u64) -> Result<Self> {
        check_channels(channels)?;
        let c = channels;
        let h = c / 2;
        let mut rng = seed::rng(seed);
        let p = |t: Tensor<T>| Param::new(t);
        Ok(Self {
            channels,
            edge_w1: p(fan_in_uniform(&mut rng, 3 * c, c)),
            edge_b1: p(Tensor::zeros(&[c])),
            edge_w2: p(fan_in_uniform(&mut rng, c, h)),
            edge_b2: p(Tensor::zeros(&[h])),
            vertex_w1: p(fan_in_uniform(&mut rng, h + c, c)),
            vertex_b1: p(Tensor::zeros(&[c])),
            vertex_w2: p(fan_in_uniform(&mut rng, c, h)),
            vertex_b2: p(Tensor::zeros(&[h])),
            mod_w: p(fan_in_uniform(&mut rng, 4 * h, h)),
            mod_b: p(Tensor::full(&[h], T::one())),
        })
    }

    /// All-zero weights and biases.
    pub fn zeros(channels: usize) -> Result<Self> {
        let mut p = Self::init(channels, 0)?;
        p.params_mut().into_iter().for_each(|(_, q)| q.value.fill(T::zero()));
        Ok(p)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn out_channels(&self) -> usize {
        self.channels / 2
    }

    pub fn params(&self) -> [(&'static str, &Param<T>); 10] {
        [
            ("edge_w1", &self.edge_w1),
            ("edge_b1", &self.edge_b1),
            ("edge_w2", &self.edge_w2),
            ("edge_b2", &self.edge_b2),
            ("vertex_w1", &self.vertex_w1),
            ("vertex_b1", &self.vertex_b1),
            ("vertex_w2", &self.vertex_w2),
            ("vertex_b2", &self.vertex_b2),
            ("mod_w", &self.mod_w),
            ("mod_b", &self.mod_b),
        ]
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Param<T>); 10] {
        [
            ("edge_w1", &mut self.edge_w1),
            ("edge_b1", &mut self.edge_b1),
            ("edge_w2", &mut self.edge_w2),
            ("edge_b2", &mut self.edge_b2),
            ("vertex_w1", &mut self.vertex_w1),
            ("vertex_b1", &mut self.vertex_b1),
            ("vertex_w2", &mut self.vertex_w2),
            ("vertex_b2", &mut self.vertex_b2),
            ("mod_w", &mut self.mod_w),
            ("mod_b", &mut self.mod_b),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.value.is_finite())
    }

    /// Copies the first C′×C′ block of the modulation weight onto the other
    /// three slots, so every slot is projected identically.
    pub fn tie_modulation_slots(&mut self) {
        let h = self.out_channels();
        let w = self.mod_w.value.data_mut();
        let block: Vec<T> = w[..h * h].to_vec();
        for slot in 1..4 {
            w[slot * h * h..(slot + 1) * h * h].copy_from_slice(&block);
        }
    }

    pub fn cast<U: Real>(&self) -> GalParams<U> {
        GalParams {
            channels: self.channels,
            edge_w1: self.edge_w1.cast(),
            edge_b1: self.edge_b1.cast(),
            edge_w2: self.edge_w2.cast(),
            edge_b2: self.edge_b2.cast(),
            vertex_w1: self.vertex_w1.cast(),
            vertex_b1: self.vertex_b1.cast(),
            vertex_w2: self.vertex_w2.cast(),
            vertex_b2: self.vertex_b2.cast(),
            mod_w: self.mod_w.cast(),
            mod_b: self.mod_b.cast(),
        }
    }

    /// Records the current values as leaves on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> GalVars {
        let mut leaf = |p: &Param<T>| tape.leaf(p.value.clone());
        GalVars {
            edge_w1: leaf(&self.edge_w1),
            edge_b1: leaf(&self.edge_b1),
            edge_w2: leaf(&self.edge_w2),
            edge_b2: leaf(&self.edge_b2),
            vertex_w1: leaf(&self.vertex_w1),
            vertex_b1: leaf(&self.vertex_b1),
            vertex_w2: leaf(&self.vertex_w2),
            vertex_b2: leaf(&self.vertex_b2),
            mod_w: leaf(&self.mod_w),
            mod_b: leaf(&self.mod_b),
        }
    }

    /// Adds the gradients of a bound copy into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients<T>, vars: &GalVars) {
        for ((_, p), v) in self.params_mut().into_iter().zip(vars.all()) {
            if let Some(g) = grads.get(v) {
                p.accumulate(g);
            }
        }
    }
}

/// Intermediate results of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct GalState {
    pub vertices: Var,
    pub edges: Var,
    pub edge_updates: Var,
    pub aggregated: Var,
    pub vertex_updates: Var,
    pub modulation: Var,
    pub output: Var,
}

/// H×W×C map → (HW)×C vertex matrix, row i = position (i / W, i % W).
pub fn make_vertex_features<T: Real>(tape: &mut Tape<T>, t: Var) -> Result<Var> {
    let s = tape.shape(t).to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected an HxWxC map, got {s:?}")));
    }
    tape.reshape(t, &[s[0] * s[1], s[2]])
}

/// Edge features `v[s_k] − v[r_k]`, (4HW)×C. Also returns the gathered
/// receiver and sender rows for reuse by the edge perceptron.
fn edge_features_with_endpoints<T: Real>(
    tape: &mut Tape<T>,
    vertices: Var,
    g: &LatticeGraph,
) -> Result<(Var, Var, Var)> {
    let n = tape.shape(vertices)[0];
    if n != g.vertex_count() {
        return Err(Error::Shape(format!(
            "{n} vertex rows for a {}x{} lattice",
            g.height(),
            g.width()
        )));
    }
    let recv = tape.gather_rows(vertices, g.receivers().clone())?;
    let send = tape.gather_rows(vertices, g.senders().clone())?;
    let edges = tape.sub(send, recv)?;
    Ok((edges, recv, send))
}

pub fn make_edge_features<T: Real>(tape: &mut Tape<T>, vertices: Var, g: &LatticeGraph) -> Result<Var> {
    edge_features_with_endpoints(tape, vertices, g).map(|(e, _, _)| e)
}

fn perceptron<T: Real>(tape: &mut Tape<T>, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = tape.matmul(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.relu(h);
    let y = tape.matmul(h, w2)?;
    tape.add_bias(y, b2)
}

/// `R_e[k] = φe([e_k ; v[r_k] ; v[s_k]])`, (4HW)×C′.
pub fn edge_update<T: Real>(
    tape: &mut Tape<T>,
    edges: Var,
    vertices: Var,
    g: &LatticeGraph,
    p: &GalVars,
) -> Result<Var> {
    let recv = tape.gather_rows(vertices, g.receivers().clone())?;
    let send = tape.gather_rows(vertices, g.senders().clone())?;
    edge_perceptron(tape, edges, recv, send, p)
}

fn edge_perceptron<T: Real>(tape: &mut Tape<T>, edges: Var, recv: Var, send: Var, p: &GalVars) -> Result<Var> {
    let x = tape.concat(edges, recv)?;
    let x = tape.concat(x, send)?;
    perceptron(tape, x, p.edge_w1, p.edge_b1, p.edge_w2, p.edge_b2)
}

/// Mean of each vertex's four incoming edge rows, (HW)×C′.
pub fn aggregate_edges<T: Real>(tape: &mut Tape<T>, edge_updates: Var) -> Result<Var> {
    tape.mean_rows(edge_updates, 4)
}

/// `R_v[i] = φv([ē′_i ; v_i])`, (HW)×C′.
pub fn vertex_update<T: Real>(tape: &mut Tape<T>, aggregated: Var, vertices: Var, p: &GalVars) -> Result<Var> {
    let x = tape.concat(aggregated, vertices)?;
    perceptron(tape, x, p.vertex_w1, p.vertex_b1, p.vertex_w2, p.vertex_b2)
}

/// `Δw[i] = W_mᵀ·[R_e[4i] ; … ; R_e[4i+3]] + b_m`; output `R_v ⊙ Δw`
/// reshaped to H×W×C′. Returns `(modulation, output)`.
pub fn modulate_and_reshape<T: Real>(
    tape: &mut Tape<T>,
    vertex_updates: Var,
    edge_updates: Var,
    height: usize,
    width: usize,
    p: &GalVars,
) -> Result<(Var, Var)> {
    let c_out = tape.shape(vertex_updates)[1];
    let n = height * width;
    // rows 4i..4i+4 are contiguous, so a reshape groups them per receiver
    let grouped = tape.reshape(edge_updates, &[n, 4 * c_out])?;
    let dw = tape.matmul(grouped, p.mod_w)?;
    let dw = tape.add_bias(dw, p.mod_b)?;
    let y = tape.mul(vertex_updates, dw)?;
    let out = tape.reshape(y, &[height, width, c_out])?;
    Ok((dw, out))
}

/// Full layer on an H×W×C map already on the tape.
pub fn gal_forward<T: Real>(tape: &mut Tape<T>, t: Var, g: &LatticeGraph, p: &GalVars) -> Result<GalState> {
    let s = tape.shape(t).to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected an HxWxC map, got {s:?}")));
    }
    check_channels(s[2])?;
    if tape.shape(p.edge_w1)[1] != s[2] {
        return Err(Error::Shape(format!(
            "layer built for {} channels applied to {s:?}",
            tape.shape(p.edge_w1)[1]
        )));
    }
    if (g.height(), g.width()) != (s[0], s[1]) {
        return Err(Error::Shape(format!(
            "{}x{} lattice for a {s:?} map",
            g.height(),
            g.width()
        )));
    }
    let vertices = make_vertex_features(tape, t)?;
    let (edges, recv, send) = edge_features_with_endpoints(tape, vertices, g)?;
    let edge_updates = edge_perceptron(tape, edges, recv, send, p)?;
    let aggregated = aggregate_edges(tape, edge_updates)?;
    let vertex_updates = vertex_update(tape, aggregated, vertices, p)?;
    let (modulation, output) = modulate_and_reshape(tape, vertex_updates, edge_updates, s[0], s[1], p)?;
    Ok(GalState { vertices, edges, edge_updates, aggregated, vertex_updates, modulation, output })
}

/// Convenience: evaluates the layer on a tensor with a throwaway tape.
pub fn apply<T: Real>(t: &Tensor<T>, params: &GalParams<T>) -> Result<Tensor<T>> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected an HxWxC map, got {s:?}")));
    }
    let g = LatticeGraph::build(s[0], s[1])?;
    let mut tape = Tape::new();
    let x = tape.leaf(t.clone());
    let vars = params.bind(&mut tape);
    let state = gal_forward(&mut tape, x, &g, &vars)?;
    Ok(tape.value(state.output).clone())
}
