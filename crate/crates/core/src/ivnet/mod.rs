//! Iterated V-block surrogate network.
//!
//! One block restricts its input through `L` levels of parallel strided dilated
//! convolutions, prolongs back with stride-2 transposed convolutions and mixes down to a
//! single channel. `n_b` blocks are chained as `u_{k+1} = u_k + V_k([u_k, coefficient, f])`
//! starting from `u_0 = 0`.

mod config;
mod io;
mod norm;

pub use config::{block_params, count_params, IvNetConfig, DEFAULT_BASE_CHANNELS};
pub use io::{decode_model, encode_model, load_model, load_model_expect, save_model, MODEL_MAGIC};
pub use norm::{source_is_constant, Normalization};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::datagen::Task;
use crate::rng::{stream_rng, Stream};
use crate::tape::{BatchNormState, BnMode, Real, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

impl ParamKind {
    /// Whether decoupled weight decay applies.
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<f32>,
}

#[derive(Clone, Copy, Debug)]
struct ConvRef {
    w: usize,
    b: usize,
    stride: usize,
    dilation: usize,
}

#[derive(Clone, Copy, Debug)]
struct BnRef {
    gamma: usize,
    beta: usize,
    state: usize,
}

#[derive(Clone, Debug)]
struct Down {
    smooth: Vec<ConvRef>,
    branches: Vec<ConvRef>,
    bn: BnRef,
}

#[derive(Clone, Debug)]
struct Up {
    convt: ConvRef,
    bn: BnRef,
    smooth: Vec<ConvRef>,
}

#[derive(Clone, Debug)]
struct Block {
    down: Vec<Down>,
    coarse: Vec<ConvRef>,
    /// Coarsest level first.
    up: Vec<Up>,
    mix: ConvRef,
}

/// Network parameters, batch-norm statistics and the input normalization they were trained with.
#[derive(Clone, Debug)]
pub struct IvNet {
    config: IvNetConfig,
    pub task: Task,
    pub normalization: Normalization,
    pub params: Vec<Param>,
    pub bn: Vec<BatchNormState>,
    blocks: Vec<Block>,
}

/// Result of a forward pass. Tensors have shape `(batch, 1, m, m)`.
pub struct Forward {
    pub output: Var,
    /// `u_1, …, u_{n_b}` (the last equals `output`).
    pub iterates: Vec<Var>,
}

struct Builder<'a> {
    params: Vec<Param>,
    bn: Vec<BatchNormState>,
    rng: &'a mut rand_chacha::ChaCha8Rng,
    k: usize,
}

impl Builder<'_> {
    fn conv(&mut self, name: String, c_in: usize, c_out: usize, stride: usize, dilation: usize, zero: bool) -> ConvRef {
        let k = self.k;
        let fan_in = (c_in * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        self.push_conv(name, [c_out, c_in, k, k], c_out, std, zero, stride, dilation)
    }

    fn convt(&mut self, name: String, c_in: usize, c_out: usize) -> ConvRef {
        let k = self.k;
        // A stride-2 transposed convolution reaches each output node with about k²/4 taps per input channel.
        let fan_in = ((c_in * k * k) as f64 / 4.0).max(1.0);
        let std = (2.0 / fan_in).sqrt();
        self.push_conv(name, [c_in, c_out, k, k], c_out, std, false, 2, 1)
    }

    #[allow(clippy::too_many_arguments)]
    fn push_conv(
        &mut self,
        name: String,
        shape: [usize; 4],
        c_out: usize,
        std: f64,
        zero: bool,
        stride: usize,
        dilation: usize,
    ) -> ConvRef {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = if zero {
            vec![0.0; n]
        } else {
            (0..n).map(|_| (std * self.rng.sample::<f64, _>(StandardNormal)) as f32).collect()
        };
        let w = self.params.len();
        let value = Tensor::new(shape, data).expect("length matches shape");
        self.params.push(Param { name: format!("{name}.weight"), kind: ParamKind::Weight, value });
        self.params.push(Param { name: format!("{name}.bias"), kind: ParamKind::Bias, value: Tensor::zeros([1, c_out, 1, 1]) });
        ConvRef { w, b: w + 1, stride, dilation }
    }

    fn bn(&mut self, name: String, c: usize) -> BnRef {
        let gamma = self.params.len();
        self.params.push(Param { name: format!("{name}.gamma"), kind: ParamKind::BnScale, value: Tensor::full([1, c, 1, 1], 1.0) });
        self.params.push(Param { name: format!("{name}.beta"), kind: ParamKind::BnShift, value: Tensor::zeros([1, c, 1, 1]) });
        self.bn.push(BatchNormState::new(c));
        BnRef { gamma, beta: gamma + 1, state: self.bn.len() - 1 }
    }

    fn block(&mut self, cfg: &IvNetConfig, tag: &str) -> Block {
        let c = cfg.level_channels();
        let state = |l: usize| if l == 0 { cfg.in_channels } else { cfg.dilations * c[l - 1] };
        let mut down = Vec::new();
        for l in 0..cfg.levels {
            let smooth = (0..cfg.smoothing_convs)
                .map(|j| self.conv(format!("{tag}.down{l}.smooth{j}"), state(l), state(l), 1, 1, false))
                .collect();
            let branches = (0..cfg.dilations)
                .map(|j| self.conv(format!("{tag}.restrict{}.d{}", l + 1, j + 1), state(l), c[l], 2, j + 1, false))
                .collect();
            let bn = self.bn(format!("{tag}.restrict{}.bn", l + 1), state(l + 1));
            down.push(Down { smooth, branches, bn });
        }
        let coarse = (0..cfg.coarse_convs)
            .map(|j| self.conv(format!("{tag}.coarse{j}"), state(cfg.levels), state(cfg.levels), 1, 1, false))
            .collect();
        let mut up = Vec::new();
        for i in (1..=cfg.levels).rev() {
            let out = if i == 1 { cfg.fine_channels() } else { state(i - 1) };
            let convt = self.convt(format!("{tag}.prolong{i}"), state(i), out);
            let bn = self.bn(format!("{tag}.prolong{i}.bn"), out);
            let smooth = (0..cfg.smoothing_convs)
                .map(|j| self.conv(format!("{tag}.up{}.smooth{j}", i - 1), out, out, 1, 1, false))
                .collect();
            up.push(Up { convt, bn, smooth });
        }
        let mix = self.conv(format!("{tag}.mix"), cfg.fine_channels(), 1, 1, 1, true);
        Block { down, coarse, up, mix }
    }
}

impl IvNet {
    /// Fresh network: Kaiming fan-in normal weights drawn in parameter order, zero biases,
    /// unit batch-norm scales and a zero mixing layer (so the initial output is zero).
    pub fn new(config: IvNetConfig, task: Task, normalization: Normalization, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let mut b = Builder { params: Vec::new(), bn: Vec::new(), rng: &mut rng, k: config.kernel };
        let copies = if config.share_weights { 1 } else { config.blocks };
        let blocks = (0..copies).map(|k| b.block(&config, &format!("block{k}"))).collect();
        let Builder { params, bn, .. } = b;
        Ok(IvNet { config, task, normalization, params, bn, blocks })
    }

    pub fn config(&self) -> &IvNetConfig {
        &self.config
    }

    /// Trainable scalar count by enumeration.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Static input channels per sample (the iterate channel is added internally).
    pub fn static_channels(&self) -> usize {
        self.config.in_channels - 1
    }

    /// Registers every parameter as a differentiable leaf, in parameter order.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.cast())).collect()
    }

    /// Runs the chained blocks on `input` of shape `(batch, in_channels − 1, m, m)`.
    ///
    /// `params` come from [`IvNet::bind`] (or any tape leaves of the same shapes, in order).
    /// Batch-norm statistics in `bn` are updated in [`BnMode::Train`].
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        bn: &mut [BatchNormState],
        input: Var,
        mode: BnMode,
    ) -> Result<Forward> {
        let cfg = &self.config;
        if params.len() != self.params.len() || bn.len() != self.bn.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters and {} batch-norm states, got {} and {}",
                self.params.len(),
                self.bn.len(),
                params.len(),
                bn.len()
            )));
        }
        let [batch, c, h, w] = tape.shape(input);
        if c != self.static_channels() || h != w {
            return Err(Error::Shape(format!(
                "expected input (batch, {}, m, m), got {:?}",
                self.static_channels(),
                [batch, c, h, w]
            )));
        }
        let side = cfg.padded_side(h);
        let x = if side == h { input } else { tape.pad(input, side, side)? };
        let mut u = tape.constant(Tensor::zeros([batch, 1, side, side]));
        let mut iterates = Vec::with_capacity(cfg.blocks);
        for k in 0..cfg.blocks {
            let block = &self.blocks[if cfg.share_weights { 0 } else { k }];
            let xk = tape.concat_channels(&[u, x])?;
            let v = self.v_block(tape, params, bn, block, xk, mode)?;
            u = if cfg.no_residual { v } else { tape.add(u, v)? };
            if !tape.value(u).is_finite() {
                return Err(Error::NumericalFailure(format!("non-finite iterate after block {k}")));
            }
            iterates.push(if side == h { u } else { tape.crop(u, h, w)? });
        }
        Ok(Forward { output: *iterates.last().expect("at least one block"), iterates })
    }

    fn conv<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], c: ConvRef, x: Var) -> Result<Var> {
        tape.conv2d(x, p[c.w], Some(p[c.b]), c.stride, c.dilation)
    }

    fn v_block<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        bn: &mut [BatchNormState],
        block: &Block,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let cfg = &self.config;
        let mut h = x;
        let mut states = Vec::with_capacity(cfg.levels + 1);
        for d in &block.down {
            states.push(h);
            for &s in &d.smooth {
                let y = self.conv(tape, p, s, h)?;
                h = tape.relu(y);
            }
            let mut parts = Vec::with_capacity(d.branches.len());
            for &br in &d.branches {
                let y = self.conv(tape, p, br, h)?;
                parts.push(tape.relu(y));
            }
            let cat = tape.concat_channels(&parts)?;
            h = tape.batch_norm(cat, p[d.bn.gamma], p[d.bn.beta], &mut bn[d.bn.state], mode)?;
        }
        if !block.coarse.is_empty() {
            let mut c = h;
            for &s in &block.coarse {
                let y = self.conv(tape, p, s, c)?;
                c = tape.relu(y);
            }
            h = if cfg.extra_level_residuals { tape.add(h, c)? } else { c };
        }
        for (idx, up) in block.up.iter().enumerate() {
            let level = cfg.levels - 1 - idx;
            let y = tape.conv_transpose2d(h, p[up.convt.w], Some(p[up.convt.b]), 2)?;
            let y = tape.relu(y);
            h = tape.batch_norm(y, p[up.bn.gamma], p[up.bn.beta], &mut bn[up.bn.state], mode)?;
            if cfg.extra_level_residuals && level >= 1 {
                h = tape.add(h, states[level])?;
            }
            for &s in &up.smooth {
                let y = self.conv(tape, p, s, h)?;
                h = tape.relu(y);
            }
        }
        self.conv(tape, p, block.mix, h)
    }

    /// The same network with every block holding its own copy of the shared parameters.
    pub fn unshared(&self) -> Result<IvNet> {
        if !self.config.share_weights {
            return Ok(self.clone());
        }
        let mut cfg = self.config.clone();
        cfg.share_weights = false;
        let mut out = IvNet::new(cfg, self.task, self.normalization.clone(), 0)?;
        let per_block = self.params.len();
        for (i, p) in out.params.iter_mut().enumerate() {
            p.value = self.params[i % per_block].value.clone();
        }
        let per_bn = self.bn.len();
        for (i, s) in out.bn.iter_mut().enumerate() {
            *s = self.bn[i % per_bn].clone();
        }
        Ok(out)
    }

    /// Evaluation-mode prediction in network units for a batch of static inputs.
    pub fn predict(&self, input: Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::<f32>::new();
        let params: Vec<Var> = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let x = tape.constant(input);
        let mut bn = self.bn.clone();
        let out = self.forward(&mut tape, &params, &mut bn, x, BnMode::Eval)?;
        Ok(tape.value(out.output).clone())
    }
}
