//! Denoiser networks: a per-slice MLP and a small two-stage conv U-net,
//! both conditioned on the diffusion step through a sinusoidal embedding.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::embed::sinusoidal_embedding;
use super::params::ParameterSet;
use super::{check_step, Denoiser, NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Which network estimates eps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Per-slice multilayer perceptron over the channel vector.
    Mlp,
    /// Conv U-net with two downsampling and two upsampling stages.
    ConvUnet,
}

impl Architecture {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Self::Mlp),
            "conv_unet" => Ok(Self::ConvUnet),
            other => Err(Error::config(format!(
                "denoiser.arch must be mlp or conv_unet, got {other}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mlp => "mlp",
            Self::ConvUnet => "conv_unet",
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone)]
pub struct DenoiserConfig {
    pub arch: Architecture,
    /// Hidden widths of the MLP.
    pub hidden: Vec<usize>,
    /// Base channel count of the U-net.
    pub base_channels: usize,
    /// Channel multipliers for (stage 0, stage 1, bottleneck).
    pub channel_mults: [usize; 3],
    /// Sinusoidal embedding width.
    pub time_embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::Mlp,
            hidden: vec![64, 64],
            base_channels: 16,
            channel_mults: [1, 2, 4],
            time_embed_dim: 32,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::config(
                "denoiser.time_embed_dim must be even and at least 2".to_string(),
            ));
        }
        match self.arch {
            Architecture::Mlp => {
                if self.hidden.is_empty() || self.hidden.contains(&0) {
                    return Err(Error::config(
                        "denoiser.hidden must list positive widths".to_string(),
                    ));
                }
            }
            Architecture::ConvUnet => {
                if self.base_channels == 0 || self.channel_mults.contains(&0) {
                    return Err(Error::config(
                        "denoiser.base_channels and channel_mults must be positive".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn init_weight(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    init_scaled(shape, fan_in, 1.0, rng)
}

/// Output layers start near (not at) zero: the prediction begins at the zero
/// baseline while upstream layers still receive gradient through the head.
fn init_output(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    init_scaled(shape, fan_in, 0.05, rng)
}

fn init_scaled(shape: &[usize], fan_in: usize, gain: f64, rng: &mut impl Rng) -> Tensor {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (z * std) as f32
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// A trainable eps-predictor with named parameters.
#[derive(Debug, Clone)]
pub struct NetDenoiser {
    cfg: DenoiserConfig,
    channels: usize,
    t_max: usize,
    params: ParameterSet,
}

impl NetDenoiser {
    /// Builds a freshly initialized network for `channels`-wide feature
    /// slices. Weights come from the `(seed, "init")` stream; output layers
    /// start at zero so training starts from the zero predictor.
    pub fn new(cfg: DenoiserConfig, channels: usize, t_max: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if channels == 0 {
            return Err(Error::invalid("channel count must be positive"));
        }
        if t_max == 0 {
            return Err(Error::invalid("t_max must be positive"));
        }
        let mut r = rng::stream(seed, "init", 0);
        let mut params = ParameterSet::new();
        match cfg.arch {
            Architecture::Mlp => {
                let mut widths = vec![channels];
                widths.extend_from_slice(&cfg.hidden);
                widths.push(channels);
                params.insert(
                    "mlp.temb.w",
                    init_weight(&[cfg.time_embed_dim, widths[1]], cfg.time_embed_dim, &mut r),
                );
                params.insert("mlp.temb.b", Tensor::zeros(&[widths[1]]));
                let last = widths.len() - 2;
                for (i, pair) in widths.windows(2).enumerate() {
                    let (din, dout) = (pair[0], pair[1]);
                    let w = if i == last {
                        init_output(&[din, dout], din, &mut r)
                    } else {
                        init_weight(&[din, dout], din, &mut r)
                    };
                    params.insert(format!("mlp.l{i}.w"), w);
                    params.insert(format!("mlp.l{i}.b"), Tensor::zeros(&[dout]));
                }
            }
            Architecture::ConvUnet => {
                let c = cfg.channel_mults.map(|m| m * cfg.base_channels);
                let stages: [(&str, usize, usize); 5] = [
                    ("enc0", channels, c[0]),
                    ("enc1", c[0], c[1]),
                    ("mid", c[1], c[2]),
                    ("dec1", c[2] + c[1], c[1]),
                    ("dec0", c[1] + c[0], c[0]),
                ];
                for (name, cin, cout) in stages {
                    params.insert(
                        format!("unet.{name}.c1.w"),
                        init_weight(&[3, 3, cin, cout], 9 * cin, &mut r),
                    );
                    params.insert(format!("unet.{name}.c1.b"), Tensor::zeros(&[cout]));
                    params.insert(
                        format!("unet.{name}.temb.w"),
                        init_weight(&[cfg.time_embed_dim, cout], cfg.time_embed_dim, &mut r),
                    );
                    params.insert(format!("unet.{name}.temb.b"), Tensor::zeros(&[cout]));
                    params.insert(
                        format!("unet.{name}.c2.w"),
                        init_weight(&[3, 3, cout, cout], 9 * cout, &mut r),
                    );
                    params.insert(format!("unet.{name}.c2.b"), Tensor::zeros(&[cout]));
                }
                params.insert(
                    "unet.head.w",
                    init_output(&[3, 3, c[0], channels], 9 * c[0], &mut r),
                );
                params.insert("unet.head.b", Tensor::zeros(&[channels]));
            }
        }
        Ok(Self {
            cfg,
            channels,
            t_max,
            params,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn param_leaf(
        &self,
        tape: &mut Tape,
        ids: &mut BTreeMap<String, NodeId>,
        name: &str,
    ) -> Result<NodeId> {
        let id = tape.leaf(self.params.value(name)?.clone());
        ids.insert(name.to_string(), id);
        Ok(id)
    }

    /// Records the eps prediction for `x_t` on `tape`; returns the output
    /// node and the tape ids of every parameter leaf.
    pub fn build_eps_graph(
        &self,
        tape: &mut Tape,
        x_t: &Tensor,
        t: usize,
    ) -> Result<(NodeId, BTreeMap<String, NodeId>)> {
        check_step(t, self.t_max)?;
        let shape = x_t.shape().to_vec();
        let &[h, w, c] = &shape[..] else {
            return Err(Error::shape(format!("denoiser expects [h,w,c], got {shape:?}")));
        };
        if c != self.channels {
            return Err(Error::shape(format!(
                "denoiser built for {} channels, input has {c}",
                self.channels
            )));
        }
        let mut ids = BTreeMap::new();
        let temb = sinusoidal_embedding(t, self.cfg.time_embed_dim);
        match self.cfg.arch {
            Architecture::Mlp => {
                let x = tape.leaf(x_t.clone());
                let rows = tape.reshape(x, &[h * w, c])?;
                let te = tape.leaf(temb);
                let te_row = tape.reshape(te, &[1, self.cfg.time_embed_dim])?;
                let tw = self.param_leaf(tape, &mut ids, "mlp.temb.w")?;
                let tb = self.param_leaf(tape, &mut ids, "mlp.temb.b")?;
                let proj = tape.affine(te_row, tw, tb)?;
                let proj = tape.reshape(proj, &[self.cfg.hidden[0]])?;

                let n_layers = self.cfg.hidden.len() + 1;
                let mut cur = rows;
                for i in 0..n_layers {
                    let wid = self.param_leaf(tape, &mut ids, &format!("mlp.l{i}.w"))?;
                    let bid = self.param_leaf(tape, &mut ids, &format!("mlp.l{i}.b"))?;
                    cur = tape.affine(cur, wid, bid)?;
                    if i == 0 {
                        cur = tape.add_row_vec(cur, proj)?;
                    }
                    if i + 1 < n_layers {
                        cur = tape.silu(cur);
                    }
                }
                let out = tape.reshape(cur, &[h, w, c])?;
                Ok((out, ids))
            }
            Architecture::ConvUnet => {
                if h % 4 != 0 || w % 4 != 0 {
                    return Err(Error::shape(format!(
                        "conv_unet needs spatial dims divisible by 4, got [{h},{w}]"
                    )));
                }
                let te = tape.leaf(temb);
                let te_row = tape.reshape(te, &[1, self.cfg.time_embed_dim])?;
                let stage = |tape: &mut Tape,
                                 ids: &mut BTreeMap<String, NodeId>,
                                 name: &str,
                                 input: NodeId|
                 -> Result<NodeId> {
                    let w1 = self.param_leaf(tape, ids, &format!("unet.{name}.c1.w"))?;
                    let b1 = self.param_leaf(tape, ids, &format!("unet.{name}.c1.b"))?;
                    let tw = self.param_leaf(tape, ids, &format!("unet.{name}.temb.w"))?;
                    let tb = self.param_leaf(tape, ids, &format!("unet.{name}.temb.b"))?;
                    let w2 = self.param_leaf(tape, ids, &format!("unet.{name}.c2.w"))?;
                    let b2 = self.param_leaf(tape, ids, &format!("unet.{name}.c2.b"))?;
                    let cout = tape.value(b1).len();
                    let y = tape.conv3x3(input, w1, b1)?;
                    let proj = tape.affine(te_row, tw, tb)?;
                    let proj = tape.reshape(proj, &[cout])?;
                    let y = tape.add_chan_vec(y, proj)?;
                    let y = tape.silu(y);
                    let y = tape.conv3x3(y, w2, b2)?;
                    Ok(tape.silu(y))
                };

                let x = tape.leaf(x_t.clone());
                let s0 = stage(tape, &mut ids, "enc0", x)?;
                let d1 = tape.avg_pool2(s0)?;
                let s1 = stage(tape, &mut ids, "enc1", d1)?;
                let d2 = tape.avg_pool2(s1)?;
                let mid = stage(tape, &mut ids, "mid", d2)?;
                let u1 = tape.upsample2(mid)?;
                let cat1 = tape.concat_channels(u1, s1)?;
                let r1 = stage(tape, &mut ids, "dec1", cat1)?;
                let u0 = tape.upsample2(r1)?;
                let cat0 = tape.concat_channels(u0, s0)?;
                let r0 = stage(tape, &mut ids, "dec0", cat0)?;
                let hw = self.param_leaf(tape, &mut ids, "unet.head.w")?;
                let hb = self.param_leaf(tape, &mut ids, "unet.head.b")?;
                let out = tape.conv3x3(r0, hw, hb)?;
                Ok((out, ids))
            }
        }
    }

    /// Records the training objective `||eps - eps_hat(x_t, t)||^2` on a new
    /// tape. `x_t` must already be the corrupted input.
    pub fn build_loss_graph(
        &self,
        x_t: &Tensor,
        t: usize,
        eps: &Tensor,
    ) -> Result<(Tape, NodeId, BTreeMap<String, NodeId>)> {
        let mut tape = Tape::new();
        let (out, ids) = self.build_eps_graph(&mut tape, x_t, t)?;
        let target = tape.leaf(eps.clone());
        let diff = tape.sub(target, out)?;
        let loss = tape.sum_squares(diff);
        Ok((tape, loss, ids))
    }
}

impl Denoiser for NetDenoiser {
    fn t_max(&self) -> usize {
        self.t_max
    }

    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (out, _) = self.build_eps_graph(&mut tape, x_t, t)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_networks_produce_finite_output_of_input_shape() {
        for arch in [Architecture::Mlp, Architecture::ConvUnet] {
            let cfg = DenoiserConfig {
                arch,
                hidden: vec![16],
                base_channels: 4,
                channel_mults: [1, 2, 2],
                time_embed_dim: 8,
            };
            let net = NetDenoiser::new(cfg, 3, 50, 42).unwrap();
            let mut r = rng::stream(42, "net-in", 0);
            let x = Tensor::standard_normal(&[8, 8, 3], &mut r);
            let y = net.predict_eps(&x, 25).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn step_out_of_range_is_rejected() {
        let net = NetDenoiser::new(DenoiserConfig::default(), 2, 10, 0).unwrap();
        let x = Tensor::zeros(&[2, 2, 2]);
        assert!(net.predict_eps(&x, 0).is_err());
        assert!(net.predict_eps(&x, 11).is_err());
        assert!(net.predict_eps(&x, 10).is_ok());
    }

    #[test]
    fn mlp_per_slice_equals_batched_application() {
        let net = NetDenoiser::new(DenoiserConfig::default(), 3, 100, 7).unwrap();
        let mut r = rng::stream(7, "slices", 0);
        let x = Tensor::standard_normal(&[2, 3, 3], &mut r);
        let batched = net.predict_eps(&x, 60).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let slice = Tensor::new(vec![1, 1, 3], x.slice_at(i, j).to_vec()).unwrap();
                let single = net.predict_eps(&slice, 60).unwrap();
                assert_eq!(single.data(), batched.slice_at(i, j));
            }
        }
    }

    #[test]
    fn fresh_net_starts_near_the_zero_predictor() {
        let net = NetDenoiser::new(DenoiserConfig::default(), 4, 100, 3).unwrap();
        let mut r = rng::stream(3, "zero-out", 0);
        let x = Tensor::standard_normal(&[4, 4, 4], &mut r);
        let y = net.predict_eps(&x, 50).unwrap();
        let rms = (y.sum_squares() / y.len() as f64).sqrt();
        assert!(rms < 0.5, "initial prediction rms {rms}");
    }

    #[test]
    fn unet_rejects_indivisible_spatial_dims() {
        let cfg = DenoiserConfig {
            arch: Architecture::ConvUnet,
            base_channels: 4,
            ..Default::default()
        };
        let net = NetDenoiser::new(cfg, 2, 10, 0).unwrap();
        let x = Tensor::zeros(&[6, 6, 2]);
        assert!(net.predict_eps(&x, 5).is_err());
    }
}
