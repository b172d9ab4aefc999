use crate::kv::KeyValues;
use crate::{Error, Result};

/// Default level-1 channel count before the width multiplier; doubles per level.
pub const DEFAULT_BASE_CHANNELS: usize = 8;

/// Architecture of an iterated V-block network.
#[derive(Clone, Debug, PartialEq)]
pub struct IvNetConfig {
    /// Restriction (and prolongation) steps per block.
    pub levels: usize,
    pub blocks: usize,
    /// Parallel restriction branches with dilations `1..=dilations`.
    pub dilations: usize,
    pub width: f64,
    /// Channels per branch at levels `1..=levels` before applying `width`.
    pub base_channels: Vec<usize>,
    pub kernel: usize,
    pub no_residual: bool,
    pub extra_level_residuals: bool,
    pub coarse_convs: usize,
    pub smoothing_convs: usize,
    pub share_weights: bool,
    /// 3 for `[u, coefficient, f]`, 2 when `f` is omitted.
    pub in_channels: usize,
}

impl IvNetConfig {
    /// `(L, n_b, w)` with the default base schedule and every other setting at its default.
    pub fn new(levels: usize, blocks: usize, width: f64) -> Self {
        IvNetConfig {
            levels,
            blocks,
            dilations: 2,
            width,
            base_channels: (0..levels).map(|i| DEFAULT_BASE_CHANNELS << i).collect(),
            kernel: 3,
            no_residual: false,
            extra_level_residuals: false,
            coarse_convs: 0,
            smoothing_convs: 0,
            share_weights: false,
            in_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.levels == 0 || self.blocks == 0 || self.dilations == 0 {
            return bad(format!("levels, blocks and dilations must be ≥ 1 (got {}, {}, {})", self.levels, self.blocks, self.dilations));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return bad(format!("width must be positive, got {}", self.width));
        }
        if self.base_channels.len() != self.levels || self.base_channels.contains(&0) {
            return bad(format!("need {} positive base channel counts, got {:?}", self.levels, self.base_channels));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel size must be odd, got {}", self.kernel));
        }
        if !(self.in_channels == 2 || self.in_channels == 3) {
            return bad(format!("input channels must be 2 or 3, got {}", self.in_channels));
        }
        Ok(())
    }

    /// Branch channels `c_i = max(1, round(w·base_i))` for `i = 1..=L`.
    pub fn level_channels(&self) -> Vec<usize> {
        self.base_channels.iter().map(|&b| ((self.width * b as f64).round() as usize).max(1)).collect()
    }

    /// Channels of the state at level `ℓ ≥ 1` (all branches concatenated).
    pub fn state_channels(&self, level: usize) -> usize {
        self.dilations * self.level_channels()[level - 1]
    }

    /// Channels entering the mixing convolution (`c_0 := c_1`).
    pub fn fine_channels(&self) -> usize {
        self.level_channels()[0]
    }

    /// Spatial side after padding an `m`-node grid to a multiple of `2^L`.
    pub fn padded_side(&self, m: usize) -> usize {
        let q = 1usize << self.levels;
        m.div_ceil(q) * q
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("levels", self.levels);
        kv.set("blocks", self.blocks);
        kv.set("dilations", self.dilations);
        kv.set("width", self.width);
        let base: Vec<String> = self.base_channels.iter().map(usize::to_string).collect();
        kv.set("base_channels", base.join(","));
        kv.set("kernel", self.kernel);
        kv.set("no_residual", self.no_residual);
        kv.set("extra_level_residuals", self.extra_level_residuals);
        kv.set("coarse_convs", self.coarse_convs);
        kv.set("smoothing_convs", self.smoothing_convs);
        kv.set("share_weights", self.share_weights);
        kv.set("in_channels", self.in_channels);
    }

    /// Reads the architecture keys, falling back to defaults for the ones that are absent.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let levels = kv.get("levels")?.unwrap_or(1);
        let mut cfg = IvNetConfig::new(levels, kv.get("blocks")?.unwrap_or(22), kv.get("width")?.unwrap_or(0.8));
        if let Some(d) = kv.get("dilations")? {
            cfg.dilations = d;
        }
        if let Some(b) = kv.get_str("base_channels") {
            cfg.base_channels = b
                .split(',')
                .map(|t| t.trim().parse().map_err(|_| Error::Format(format!("bad base_channels '{b}'"))))
                .collect::<Result<_>>()?;
        }
        if let Some(k) = kv.get("kernel")? {
            cfg.kernel = k;
        }
        cfg.no_residual = kv.get("no_residual")?.unwrap_or(false);
        cfg.extra_level_residuals = kv.get("extra_level_residuals")?.unwrap_or(false);
        cfg.coarse_convs = kv.get("coarse_convs")?.unwrap_or(0);
        cfg.smoothing_convs = kv.get("smoothing_convs")?.unwrap_or(0);
        cfg.share_weights = kv.get("share_weights")?.unwrap_or(false);
        cfg.in_channels = kv.get("in_channels")?.unwrap_or(3);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn conv_count(c_in: usize, c_out: usize, k: usize) -> usize {
    c_out * c_in * k * k + c_out
}

/// Parameters of one block (weights, biases, batch-norm `γ` and `β`).
pub fn block_params(cfg: &IvNetConfig) -> usize {
    let k = cfg.kernel;
    let c = cfg.level_channels();
    let state = |l: usize| if l == 0 { cfg.in_channels } else { cfg.dilations * c[l - 1] };
    let mut total = 0;
    for l in 0..cfg.levels {
        total += cfg.smoothing_convs * conv_count(state(l), state(l), k);
        total += cfg.dilations * conv_count(state(l), c[l], k);
        total += 2 * state(l + 1);
    }
    total += cfg.coarse_convs * conv_count(state(cfg.levels), state(cfg.levels), k);
    for i in (1..=cfg.levels).rev() {
        let out = if i == 1 { cfg.fine_channels() } else { state(i - 1) };
        total += conv_count(state(i), out, k) + 2 * out;
        total += cfg.smoothing_convs * conv_count(out, out, k);
    }
    total + conv_count(cfg.fine_channels(), 1, k)
}

/// Closed-form trainable parameter count `M`.
pub fn count_params(cfg: &IvNetConfig) -> usize {
    let per_block = block_params(cfg);
    if cfg.share_weights {
        per_block
    } else {
        per_block * cfg.blocks
    }
}
