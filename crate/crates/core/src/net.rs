//! Small encoder/decoder segmentation network with an optional graph
//! attention branch.
//!
//! ```text
//! x (H×W×Cin)
//!   conv3×3/2 → relu → conv3×3/2 → relu → conv3×3 → relu     F: H/4×W/4×2B
//!   [with GAL]  G = gal(F) (B channels), concat(F, G)          3B channels
//!   1×1 fusion → relu                                          2B channels
//!   bilinear ×4 → conv3×3                                      H×W×2 logits
//! ```
//!
//! The baseline is the same graph with the branch removed, so the fusion
//! projection sees 2B input channels instead of 3B.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::data::{load_galt, save_galt, ClassMask};
use crate::error::{Error, Result};
use crate::gal::{gal_forward, GalParams, GalVars};
use crate::lattice::LatticeGraph;
use crate::optim::Param;
use crate::seed;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Real, Tensor};

/// Total spatial downsampling of the encoder.
pub const DOWNSAMPLE: usize = 4;
pub const CLASSES: usize = 2;
pub const DEFAULT_BASE_CHANNELS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub with_gal: bool,
    pub seed: u64,
}

impl NetConfig {
    pub fn new(in_channels: usize, with_gal: bool, seed: u64) -> Self {
        Self { in_channels, base_channels: DEFAULT_BASE_CHANNELS, with_gal, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.in_channels == 1 || self.in_channels == 3) {
            return Err(Error::Config(format!("input channels must be 1 or 3, got {}", self.in_channels)));
        }
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "base channels must be even and positive, got {}",
                self.base_channels
            )));
        }
        Ok(())
    }

    fn fused_channels(&self) -> usize {
        if self.with_gal {
            3 * self.base_channels
        } else {
            2 * self.base_channels
        }
    }

    /// `key=value` lines, stable order.
    pub fn to_text(&self) -> String {
        format!(
            "in_channels={}\nbase_channels={}\nwith_gal={}\nseed={}\n",
            self.in_channels, self.base_channels, self.with_gal, self.seed
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = NetConfig::new(0, false, 0);
        let mut seen = 0u8;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            let bad = || Error::Config(format!("bad value for {key}: `{value}`"));
            match key.trim() {
                "in_channels" => cfg.in_channels = value.trim().parse().map_err(|_| bad())?,
                "base_channels" => cfg.base_channels = value.trim().parse().map_err(|_| bad())?,
                "with_gal" => cfg.with_gal = value.trim().parse().map_err(|_| bad())?,
                "seed" => cfg.seed = value.trim().parse().map_err(|_| bad())?,
                other => return Err(Error::Config(format!("unknown config key `{other}`"))),
            }
            seen += 1;
        }
        if seen < 4 {
            return Err(Error::Config("network config is missing keys".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Uniform in ±gain/√fan_in over a tensor whose leading dims multiply to
/// the fan-in.
fn init_uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], fan_in: usize, gain: f64) -> Param<T> {
    let bound = gain / (fan_in as f64).sqrt();
    Param::new(Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound))))
}

// He-style gain for layers followed by relu.
const RELU_GAIN: f64 = 2.449_489_742_783_178; // √6

#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T> {
    config: NetConfig,
    pub enc1_k: Param<T>,
    pub enc1_b: Param<T>,
    pub enc2_k: Param<T>,
    pub enc2_b: Param<T>,
    pub enc3_k: Param<T>,
    pub enc3_b: Param<T>,
    pub gal: Option<GalParams<T>>,
    pub fuse_w: Param<T>,
    pub fuse_b: Param<T>,
    pub dec_k: Param<T>,
    pub dec_b: Param<T>,
}

/// Tape handles for one binding of [`NetParams`].
#[derive(Clone, Copy, Debug)]
pub struct NetVars {
    pub enc1_k: Var,
    pub enc1_b: Var,
    pub enc2_k: Var,
    pub enc2_b: Var,
    pub enc3_k: Var,
    pub enc3_b: Var,
    pub gal: Option<GalVars>,
    pub fuse_w: Var,
    pub fuse_b: Var,
    pub dec_k: Var,
    pub dec_b: Var,
}

// Per-layer init streams, so layers shared by the two variants start out
// identical for the same seed.
const LAYER_STREAMS: [u64; 7] = [1, 2, 3, 4, 5, 6, 7];

impl<T: Real> NetParams<T> {
    pub fn init(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let (cin, b) = (config.in_channels, config.base_channels);
        let base = seed::derive(config.seed, seed::stream::INIT);
        let layer = |i: usize| seed::rng(seed::derive(base, LAYER_STREAMS[i]));
        let (mut r1, mut r2, mut r3, mut r5, mut r6) = (layer(0), layer(1), layer(2), layer(4), layer(5));
        let fused = config.fused_channels();
        Ok(Self {
            config,
            enc1_k: init_uniform(&mut r1, &[3, 3, cin, b], 9 * cin, RELU_GAIN),
            enc1_b: Param::new(Tensor::zeros(&[b])),
            enc2_k: init_uniform(&mut r2, &[3, 3, b, 2 * b], 9 * b, RELU_GAIN),
            enc2_b: Param::new(Tensor::zeros(&[2 * b])),
            enc3_k: init_uniform(&mut r3, &[3, 3, 2 * b, 2 * b], 18 * b, RELU_GAIN),
            enc3_b: Param::new(Tensor::zeros(&[2 * b])),
            gal: if config.with_gal {
                Some(GalParams::init(2 * b, seed::derive(base, LAYER_STREAMS[3]))?)
            } else {
                None
            },
            fuse_w: {
                // rows for F are drawn exactly as in the baseline; rows for G
                // come from their own stream with the same bound
                let mut w = init_uniform::<T>(&mut r5, &[2 * b, 2 * b], 2 * b, RELU_GAIN).value.into_data();
                if fused > 2 * b {
                    let mut rg = layer(6);
                    w.extend(init_uniform::<T>(&mut rg, &[fused - 2 * b, 2 * b], 2 * b, RELU_GAIN).value.into_data());
                }
                Param::new(Tensor::new(&[fused, 2 * b], w)?)
            },
            fuse_b: Param::new(Tensor::zeros(&[2 * b])),
            dec_k: init_uniform(&mut r6, &[3, 3, 2 * b, CLASSES], 18 * b, 1.0),
            dec_b: Param::new(Tensor::zeros(&[CLASSES])),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Named parameters in a fixed order; GAL tensors carry a `gal.` prefix.
    pub fn named(&self) -> Vec<(String, &Param<T>)> {
        let mut out: Vec<(String, &Param<T>)> = vec![
            ("enc1.kernel".into(), &self.enc1_k),
            ("enc1.bias".into(), &self.enc1_b),
            ("enc2.kernel".into(), &self.enc2_k),
            ("enc2.bias".into(), &self.enc2_b),
            ("enc3.kernel".into(), &self.enc3_k),
            ("enc3.bias".into(), &self.enc3_b),
        ];
        if let Some(g) = &self.gal {
            out.extend(g.params().into_iter().map(|(n, p)| (format!("gal.{n}"), p)));
        }
        out.extend([
            ("fuse.weight".to_string(), &self.fuse_w),
            ("fuse.bias".to_string(), &self.fuse_b),
            ("dec.kernel".to_string(), &self.dec_k),
            ("dec.bias".to_string(), &self.dec_b),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out: Vec<(String, &mut Param<T>)> = vec![
            ("enc1.kernel".into(), &mut self.enc1_k),
            ("enc1.bias".into(), &mut self.enc1_b),
            ("enc2.kernel".into(), &mut self.enc2_k),
            ("enc2.bias".into(), &mut self.enc2_b),
            ("enc3.kernel".into(), &mut self.enc3_k),
            ("enc3.bias".into(), &mut self.enc3_b),
        ];
        if let Some(g) = &mut self.gal {
            out.extend(g.params_mut().into_iter().map(|(n, p)| (format!("gal.{n}"), p)));
        }
        out.extend([
            ("fuse.weight".to_string(), &mut self.fuse_w),
            ("fuse.bias".to_string(), &mut self.fuse_b),
            ("dec.kernel".to_string(), &mut self.dec_k),
            ("dec.bias".to_string(), &mut self.dec_b),
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, p)| p.value.is_finite())
    }

    pub fn zero_grad(&mut self) {
        self.named_mut().into_iter().for_each(|(_, p)| p.zero_grad());
    }

    pub fn cast<U: Real>(&self) -> NetParams<U> {
        NetParams {
            config: self.config,
            enc1_k: self.enc1_k.cast(),
            enc1_b: self.enc1_b.cast(),
            enc2_k: self.enc2_k.cast(),
            enc2_b: self.enc2_b.cast(),
            enc3_k: self.enc3_k.cast(),
            enc3_b: self.enc3_b.cast(),
            gal: self.gal.as_ref().map(GalParams::cast),
            fuse_w: self.fuse_w.cast(),
            fuse_b: self.fuse_b.cast(),
            dec_k: self.dec_k.cast(),
            dec_b: self.dec_b.cast(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> NetVars {
        let mut leaf = |p: &Param<T>| tape.leaf(p.value.clone());
        let (enc1_k, enc1_b) = (leaf(&self.enc1_k), leaf(&self.enc1_b));
        let (enc2_k, enc2_b) = (leaf(&self.enc2_k), leaf(&self.enc2_b));
        let (enc3_k, enc3_b) = (leaf(&self.enc3_k), leaf(&self.enc3_b));
        let gal = self.gal.as_ref().map(|g| g.bind(tape));
        let mut leaf = |p: &Param<T>| tape.leaf(p.value.clone());
        NetVars {
            enc1_k,
            enc1_b,
            enc2_k,
            enc2_b,
            enc3_k,
            enc3_b,
            gal,
            fuse_w: leaf(&self.fuse_w),
            fuse_b: leaf(&self.fuse_b),
            dec_k: leaf(&self.dec_k),
            dec_b: leaf(&self.dec_b),
        }
    }

    /// Adds the gradients of a bound copy into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients<T>, vars: &NetVars) {
        let pairs = [
            (&mut self.enc1_k, vars.enc1_k),
            (&mut self.enc1_b, vars.enc1_b),
            (&mut self.enc2_k, vars.enc2_k),
            (&mut self.enc2_b, vars.enc2_b),
            (&mut self.enc3_k, vars.enc3_k),
            (&mut self.enc3_b, vars.enc3_b),
            (&mut self.fuse_w, vars.fuse_w),
            (&mut self.fuse_b, vars.fuse_b),
            (&mut self.dec_k, vars.dec_k),
            (&mut self.dec_b, vars.dec_b),
        ];
        for (p, v) in pairs {
            if let Some(g) = grads.get(v) {
                p.accumulate(g);
            }
        }
        if let (Some(g), Some(v)) = (&mut self.gal, &vars.gal) {
            g.accumulate(grads, v);
        }
    }
}

/// Handles to the interesting intermediate maps of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct NetOutput {
    /// Encoder output F.
    pub features: Var,
    /// GAL output G, when the branch is present.
    pub refined: Option<Var>,
    pub logits: Var,
}

fn conv_relu<T: Real>(tape: &mut Tape<T>, x: Var, k: Var, b: Var, stride: usize) -> Result<Var> {
    let y = tape.conv2d(x, k, stride)?;
    let y = tape.add_bias(y, b)?;
    Ok(tape.relu(y))
}

pub fn check_input(shape: &[usize], config: &NetConfig) -> Result<()> {
    if shape.len() != 3 || shape[2] != config.in_channels {
        return Err(Error::Shape(format!(
            "network expects an HxWx{} input, got {shape:?}",
            config.in_channels
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
        return Err(Error::Shape(format!("input {h}x{w} is not divisible by {DOWNSAMPLE}")));
    }
    if config.with_gal && (h < 2 * DOWNSAMPLE || w < 2 * DOWNSAMPLE) {
        return Err(Error::Shape(format!(
            "input {h}x{w} is too small for the attention branch (needs at least {0}x{0})",
            2 * DOWNSAMPLE
        )));
    }
    Ok(())
}

/// Records the network on `tape` for an input already on it.
pub fn net_forward<T: Real>(tape: &mut Tape<T>, x: Var, params: &NetParams<T>, vars: &NetVars) -> Result<NetOutput> {
    let config = params.config();
    check_input(tape.shape(x), config)?;
    let b = config.base_channels;
    let e1 = conv_relu(tape, x, vars.enc1_k, vars.enc1_b, 2)?;
    let e2 = conv_relu(tape, e1, vars.enc2_k, vars.enc2_b, 2)?;
    let features = conv_relu(tape, e2, vars.enc3_k, vars.enc3_b, 1)?;
    let (h, w) = (tape.shape(features)[0], tape.shape(features)[1]);

    let (fused_in, refined) = match &vars.gal {
        Some(gv) => {
            let g = LatticeGraph::build(h, w)?;
            let out = gal_forward(tape, features, &g, gv)?.output;
            (tape.concat(features, out)?, Some(out))
        }
        None => (features, None),
    };

    let flat = tape.reshape(fused_in, &[h * w, config.fused_channels()])?;
    let z = tape.matmul(flat, vars.fuse_w)?;
    let z = tape.add_bias(z, vars.fuse_b)?;
    let z = tape.relu(z);
    let z = tape.reshape(z, &[h, w, 2 * b])?;

    let up = tape.upsample(z, DOWNSAMPLE)?;
    let logits = tape.conv2d(up, vars.dec_k, 1)?;
    let logits = tape.add_bias(logits, vars.dec_b)?;
    Ok(NetOutput { features, refined, logits })
}

/// Evaluates the network on one image and returns (features, logits).
pub fn infer<T: Real>(params: &NetParams<T>, image: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut tape = Tape::new();
    let x = tape.leaf(image.clone());
    let vars = params.bind(&mut tape);
    let out = net_forward(&mut tape, x, params, &vars)?;
    Ok((tape.value(out.features).clone(), tape.value(out.logits).clone()))
}

/// Per-pixel argmax over H×W×K logits; exact ties go to class 0.
pub fn predict<T: Real>(logits: &Tensor<T>) -> Result<ClassMask> {
    let s = logits.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected HxWxK logits, got {s:?}")));
    }
    let data = logits
        .data()
        .chunks(s[2])
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    ClassMask::new(s[0], s[1], data)
}

/// Channel-mean of an h×w×c map, min-max scaled to 0..=255 with
/// round-half-up. A constant map gives all zeros.
pub fn export_activation_map<T: Real>(features: &Tensor<T>) -> Result<Vec<u8>> {
    let s = features.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected an hxwxc map, got {s:?}")));
    }
    let c = s[2] as f64;
    let means: Vec<f64> = features
        .data()
        .chunks(s[2])
        .map(|px| px.iter().map(|v| v.as_f64()).sum::<f64>() / c)
        .collect();
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo || !(hi - lo).is_finite() {
        return Ok(vec![0; means.len()]);
    }
    Ok(means
        .iter()
        .map(|m| ((m - lo) / (hi - lo) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect())
}

const CONFIG_FILE: &str = "config.txt";

/// Writes `config.txt` plus one `<name>.galt` per parameter into `dir`.
pub fn save_checkpoint(params: &NetParams<f32>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = params.config().to_text();
    for (name, p) in params.named() {
        save_galt(&p.value, dir.join(format!("{name}.galt")))?;
        writeln!(index, "# {name} {:?}", p.shape()).unwrap();
    }
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, index).map_err(|e| Error::io(&path, e))
}

/// Reads a checkpoint directory. Every tensor must match the shape implied
/// by the stored config; a mismatch names the offending tensor.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<NetParams<f32>> {
    let dir = dir.as_ref();
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let config = NetConfig::from_text(&text)?;
    let mut params = NetParams::<f32>::init(config)?;
    for (name, p) in params.named_mut() {
        let file = dir.join(format!("{name}.galt"));
        let t = load_galt(&file).map_err(|e| Error::Checkpoint { name: name.clone(), message: e.to_string() })?;
        if t.shape() != p.shape() {
            return Err(Error::Checkpoint {
                name,
                message: format!("expected shape {:?}, found {:?}", p.shape(), t.shape()),
            });
        }
        *p = Param::new(t);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, c: usize, seed: u64) -> Tensor<f64> {
        let mut rng = seed::rng(seed);
        Tensor::from_fn(&[h, w, c], |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn logits_have_input_resolution() {
        for with_gal in [false, true] {
            let p = NetParams::<f64>::init(NetConfig::new(1, with_gal, 3)).unwrap();
            let (f, logits) = infer(&p, &image(32, 32, 1, 1)).unwrap();
            assert_eq!(f.shape(), &[8, 8, 32]);
            assert_eq!(logits.shape(), &[32, 32, 2]);
        }
        let rgb = NetParams::<f64>::init(NetConfig::new(3, true, 3)).unwrap();
        assert_eq!(infer(&rgb, &image(16, 24, 3, 2)).unwrap().1.shape(), &[16, 24, 2]);
    }

    #[test]
    fn gal_variant_has_more_parameters() {
        let a = NetParams::<f32>::init(NetConfig::new(1, false, 0)).unwrap();
        let b = NetParams::<f32>::init(NetConfig::new(1, true, 0)).unwrap();
        assert!(b.parameter_count() > a.parameter_count());
        // shared layers start from the same values
        assert_eq!(a.enc1_k, b.enc1_k);
        assert_eq!(a.dec_k, b.dec_k);
        assert_eq!(a.fuse_w.value.data(), &b.fuse_w.value.data()[..32 * 32]);
    }

    #[test]
    fn rejects_bad_inputs_and_configs() {
        let p = NetParams::<f64>::init(NetConfig::new(1, true, 0)).unwrap();
        assert!(infer(&p, &image(30, 32, 1, 0)).is_err());
        assert!(infer(&p, &image(32, 32, 3, 0)).is_err());
        assert!(infer(&p, &image(4, 4, 1, 0)).is_err());
        let mut cfg = NetConfig::new(2, false, 0);
        assert!(NetParams::<f32>::init(cfg).is_err());
        cfg.in_channels = 1;
        cfg.base_channels = 5;
        assert!(NetParams::<f32>::init(cfg).is_err());
    }

    #[test]
    fn predict_ties_go_to_background() {
        let logits = Tensor::new(&[1, 3, 2], vec![0.2, 0.9, 0.5, 0.5, 1.0, -1.0]).unwrap();
        assert_eq!(predict(&logits).unwrap().data(), &[1, 0, 0]);
    }

    #[test]
    fn activation_map_normalization() {
        let constant = Tensor::<f64>::full(&[2, 2, 3], 0.7);
        assert_eq!(export_activation_map(&constant).unwrap(), vec![0; 4]);

        let one = Tensor::new(&[1, 3, 1], vec![2.0, 4.0, 3.0]).unwrap();
        assert_eq!(export_activation_map(&one).unwrap(), vec![0, 255, 128]);

        // channel means −1, 0, 1 → 0, 127.5 → 128 (half up), 255
        let two = Tensor::new(&[1, 3, 2], vec![-1.0, -1.0, 0.5, -0.5, 0.0, 2.0]).unwrap();
        assert_eq!(export_activation_map(&two).unwrap(), vec![0, 128, 255]);
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = NetConfig { in_channels: 3, base_channels: 8, with_gal: true, seed: 99 };
        assert_eq!(NetConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert!(NetConfig::from_text("in_channels=1\n").is_err());
        assert!(NetConfig::from_text("bogus=1\n").is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = NetParams::<f32>::init(NetConfig::new(1, true, 5)).unwrap();
        save_checkpoint(&p, dir.path()).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap(), p);

        let wrong = Tensor::<f32>::zeros(&[3, 3, 1, 4]);
        save_galt(&wrong, dir.path().join("enc1.kernel.galt")).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(err.contains("enc1.kernel"), "{err}");

        fs::remove_file(dir.path().join("gal.mod_w.galt")).unwrap();
        save_galt(&p.enc1_k.value, dir.path().join("enc1.kernel.galt")).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(err.contains("gal.mod_w"), "{err}");
    }
}
