//! Layer and network descriptions.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Convolution geometry. `pad` is applied on the top/left edges and
/// `pad_end` (defaulting to `pad`) on the bottom/right edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_end: Option<usize>,
}

fn one() -> usize {
    1
}

impl ConvSpec {
    pub fn new(n: usize, m: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            n,
            m,
            k,
            stride,
            pad,
            pad_end: None,
        }
    }

    pub fn with_pad_end(mut self, pad_end: usize) -> Self {
        self.pad_end = Some(pad_end);
        self
    }

    pub fn pad_begin(&self) -> usize {
        self.pad
    }

    pub fn pad_end(&self) -> usize {
        self.pad_end.unwrap_or(self.pad)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidSpec(
                "conv map counts must be positive".into(),
            ));
        }
        if self.k == 0 {
            return Err(Error::InvalidSpec("conv.k must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidSpec("conv.stride must be positive".into()));
        }
        if self.stride > self.k {
            return Err(Error::InvalidSpec(format!(
                "conv.stride {} exceeds kernel side {}",
                self.stride, self.k
            )));
        }
        Ok(())
    }

    /// Output extent along one axis: `(len + pads − k)/stride + 1`, rejecting
    /// anything that would need truncation.
    pub fn out_dim(&self, len: usize) -> Result<usize> {
        let padded = len + self.pad_begin() + self.pad_end();
        if padded < self.k {
            return Err(Error::InvalidSpec(format!(
                "padded input {padded} smaller than kernel {}",
                self.k
            )));
        }
        let span = padded - self.k;
        if !span.is_multiple_of(self.stride) {
            return Err(Error::InvalidSpec(format!(
                "input {len} with pads ({}, {}) and k={} not divisible by stride {}",
                self.pad_begin(),
                self.pad_end(),
                self.k,
                self.stride
            )));
        }
        Ok(span / self.stride + 1)
    }

    pub fn macs(&self, out_h: usize, out_w: usize) -> u64 {
        (self.k * self.k) as u64 * self.n as u64 * self.m as u64 * out_h as u64 * out_w as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub p: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn new(p: usize, stride: usize) -> Self {
        Self { p, stride }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidSpec("pool.p must be at least 1".into()));
        }
        if self.stride == 0 || self.stride > self.p {
            return Err(Error::InvalidSpec(format!(
                "pool.stride must be in 1..={}, got {}",
                self.p, self.stride
            )));
        }
        Ok(())
    }

    /// Pooled extent; windows must tile the map exactly.
    pub fn out_dim(&self, len: usize) -> Result<usize> {
        if len < self.p {
            return Err(Error::InvalidSpec(format!(
                "pool window {} overruns map of extent {len}",
                self.p
            )));
        }
        let span = len - self.p;
        if !span.is_multiple_of(self.stride) {
            return Err(Error::InvalidSpec(format!(
                "pool window {} stride {} overruns map of extent {len}",
                self.p, self.stride
            )));
        }
        Ok(span / self.stride + 1)
    }
}

/// Convolution + optional ReLU + optional average pooling, processed as one
/// fused unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperLayerSpec {
    pub conv: ConvSpec,
    #[serde(default = "yes")]
    pub act: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PoolSpec>,
    pub input_h: usize,
    pub input_w: usize,
}

fn yes() -> bool {
    true
}

/// Derived extents of a super layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub in_h: usize,
    pub in_w: usize,
    pub conv_h: usize,
    pub conv_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl SuperLayerSpec {
    pub fn new(
        conv: ConvSpec,
        act: bool,
        pool: Option<PoolSpec>,
        input_h: usize,
        input_w: usize,
    ) -> Self {
        Self {
            conv,
            act,
            pool,
            input_h,
            input_w,
        }
    }

    pub fn dims(&self) -> Result<LayerDims> {
        self.conv.validate()?;
        if self.input_h == 0 || self.input_w == 0 {
            return Err(Error::InvalidSpec("input dims must be positive".into()));
        }
        let conv_h = self.conv.out_dim(self.input_h)?;
        let conv_w = self.conv.out_dim(self.input_w)?;
        let (out_h, out_w) = match &self.pool {
            Some(pool) => {
                pool.validate()?;
                (pool.out_dim(conv_h)?, pool.out_dim(conv_w)?)
            }
            None => (conv_h, conv_w),
        };
        Ok(LayerDims {
            in_h: self.input_h,
            in_w: self.input_w,
            conv_h,
            conv_w,
            out_h,
            out_w,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub batch: usize,
    pub layers: Vec<SuperLayerSpec>,
    /// Per-layer duplication factor (grouped convolutions).
    pub groups: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, batch: usize, layers: Vec<SuperLayerSpec>) -> Self {
        let groups = vec![1; layers.len()];
        Self {
            name: name.into(),
            batch,
            layers,
            groups,
        }
    }

    pub fn with_groups(mut self, groups: Vec<usize>) -> Self {
        self.groups = groups;
        self
    }

    pub fn groups_of(&self, layer: usize) -> usize {
        self.groups.get(layer).copied().unwrap_or(1)
    }

    pub fn layer(&self, index: usize) -> Result<&SuperLayerSpec> {
        self.layers.get(index).ok_or_else(|| Error::Layer {
            layer: index,
            message: format!("network has {} layers", self.layers.len()),
        })
    }

    /// Checks every layer and the dimension chain between adjacent layers.
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidSpec("batch must be positive".into()));
        }
        if self.groups.len() != self.layers.len() {
            return Err(Error::InvalidSpec(format!(
                "groups has {} entries for {} layers",
                self.groups.len(),
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if self.groups[l] == 0 {
                return Err(Error::Layer {
                    layer: l,
                    message: "groups must be at least 1".into(),
                });
            }
            layer.validate().map_err(|e| Error::Layer {
                layer: l,
                message: e.to_string(),
            })?;
        }
        for l in 1..self.layers.len() {
            let prev = &self.layers[l - 1];
            let next = &self.layers[l];
            let pd = prev.dims()?;
            let prev_maps = prev.conv.m * self.groups[l - 1];
            let next_maps = next.conv.n * self.groups[l];
            if prev_maps != next_maps {
                return Err(Error::Layer {
                    layer: l,
                    message: format!(
                        "input maps {next_maps} do not match previous output maps {prev_maps}"
                    ),
                });
            }
            if (pd.out_h, pd.out_w) != (next.input_h, next.input_w) {
                return Err(Error::Layer {
                    layer: l,
                    message: format!(
                        "input {}x{} does not match previous output {}x{}",
                        next.input_h, next.input_w, pd.out_h, pd.out_w
                    ),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
}

impl TrainConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "learning rate must be >= 0, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }
}

/// Training phase of a super layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "fp")]
    Forward,
    #[serde(rename = "dp")]
    DeltaProp,
    #[serde(rename = "ku")]
    KernelUpdate,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Forward, Phase::DeltaProp, Phase::KernelUpdate];

    pub fn short(&self) -> &'static str {
        match self {
            Phase::Forward => "fp",
            Phase::DeltaProp => "dp",
            Phase::KernelUpdate => "ku",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fp" | "forward" => Ok(Phase::Forward),
            "dp" | "deltap" | "delta" => Ok(Phase::DeltaProp),
            "ku" | "kernel-update" => Ok(Phase::KernelUpdate),
            other => Err(Error::InvalidSpec(format!(
                "unknown phase `{other}` (fp|dp|ku)"
            ))),
        }
    }
}
