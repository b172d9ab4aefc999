use crate::datagen::{Dataset, Task};
use crate::grid::GridField;
use crate::kv::KeyValues;
use crate::Result;

/// Fixed per-dataset input/target transforms.
///
/// Coefficients enter as `log10(1 + c)` mapped affinely onto `[0, 1]` by the training
/// minimum and maximum; `f` and `u` are divided by their training max-abs.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub coef_log_min: f64,
    pub coef_log_max: f64,
    pub f_scale: f64,
    pub u_scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { coef_log_min: 0.0, coef_log_max: 1.0, f_scale: 1.0, u_scale: 1.0 }
    }
}

fn max_abs<'a>(fields: impl Iterator<Item = &'a GridField>) -> f64 {
    let m = fields.map(GridField::max_abs).fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

impl Normalization {
    pub fn fit(ds: &Dataset) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &ds.samples {
            for &v in s.coef.values() {
                let l = (1.0 + v).log10();
                lo = lo.min(l);
                hi = hi.max(l);
            }
        }
        if !(hi > lo) {
            hi = lo + 1.0;
        }
        Normalization {
            coef_log_min: lo,
            coef_log_max: hi,
            f_scale: max_abs(ds.samples.iter().map(|s| &s.f)),
            u_scale: max_abs(ds.samples.iter().map(|s| &s.u)),
        }
    }

    pub fn encode_coef(&self, v: f64) -> f64 {
        ((1.0 + v).log10() - self.coef_log_min) / (self.coef_log_max - self.coef_log_min)
    }

    pub fn decode_coef(&self, z: f64) -> f64 {
        10f64.powf(z * (self.coef_log_max - self.coef_log_min) + self.coef_log_min) - 1.0
    }

    pub fn encode_f(&self, v: f64) -> f64 {
        v / self.f_scale
    }

    pub fn encode_u(&self, v: f64) -> f64 {
        v / self.u_scale
    }

    pub fn decode_u(&self, z: f64) -> f64 {
        z * self.u_scale
    }

    /// Network input channels for sample `i` (without the iterate channel).
    pub fn inputs(&self, ds: &Dataset, i: usize, include_f: bool) -> Vec<Vec<f64>> {
        let s = &ds.samples[i];
        let first: Vec<f64> = match ds.meta.task {
            Task::Forward => s.coef.values().iter().map(|&v| self.encode_coef(v)).collect(),
            Task::Inverse => s.u.values().iter().map(|&v| self.encode_u(v)).collect(),
        };
        let mut out = vec![first];
        if include_f {
            out.push(s.f.values().iter().map(|&v| self.encode_f(v)).collect());
        }
        out
    }

    /// Target in network units for sample `i`.
    pub fn target(&self, ds: &Dataset, i: usize) -> Vec<f64> {
        let s = &ds.samples[i];
        match ds.meta.task {
            Task::Forward => s.u.values().iter().map(|&v| self.encode_u(v)).collect(),
            Task::Inverse => s.coef.values().iter().map(|&v| self.encode_coef(v)).collect(),
        }
    }

    /// Maps a network output back to original units for the given task.
    pub fn decode_output(&self, task: Task, z: &[f64]) -> Vec<f64> {
        match task {
            Task::Forward => z.iter().map(|&v| self.decode_u(v)).collect(),
            Task::Inverse => z.iter().map(|&v| self.decode_coef(v)).collect(),
        }
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("norm_coef_log_min", self.coef_log_min);
        kv.set("norm_coef_log_max", self.coef_log_max);
        kv.set("norm_f_scale", self.f_scale);
        kv.set("norm_u_scale", self.u_scale);
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        Ok(Normalization {
            coef_log_min: kv.require("norm_coef_log_min")?,
            coef_log_max: kv.require("norm_coef_log_max")?,
            f_scale: kv.require("norm_f_scale")?,
            u_scale: kv.require("norm_u_scale")?,
        })
    }
}

/// True when every sample shares one spatially constant `f` (then `f` carries no information).
pub fn source_is_constant(ds: &Dataset) -> bool {
    let Some(first) = ds.samples.first() else { return true };
    let v0 = first.f.values()[0];
    ds.samples.iter().all(|s| s.f.values().iter().all(|&v| v == v0))
}
