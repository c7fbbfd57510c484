//! Closed-form external-memory traffic and operation counts.
//!
//! Byte counts are decimal SI and every multiply and every add is one op.
//! The model works in 32-bit words per image and per group, then scales by
//! batch, group count and word size. The kernel store is the only term that
//! is paid once per batch instead of once per image.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::reference::transposed_spec;
use crate::spec::{LayerDims, NetworkSpec, Phase, SuperLayerSpec};

/// The five traffic-reduction strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StrategySet {
    kernels_on_chip: bool,
    window_reuse: bool,
    on_chip_accumulate: bool,
    line_buffer: bool,
    super_layer_fusion: bool,
}

impl StrategySet {
    pub fn new(s1: bool, s2: bool, s3: bool, s4: bool, s5: bool) -> Result<Self> {
        if s5 && !(s1 && s2 && s3 && s4) {
            return Err(Error::InvalidSpec(
                "strategy 5 (super-layer fusion) requires strategies 1-4".into(),
            ));
        }
        Ok(Self {
            kernels_on_chip: s1,
            window_reuse: s2,
            on_chip_accumulate: s3,
            line_buffer: s4,
            super_layer_fusion: s5,
        })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self::cumulative(5)
    }

    /// Strategies `1..=count` enabled.
    pub fn cumulative(count: usize) -> Self {
        Self {
            kernels_on_chip: count >= 1,
            window_reuse: count >= 2,
            on_chip_accumulate: count >= 3,
            line_buffer: count >= 4,
            super_layer_fusion: count >= 5,
        }
    }

    /// The six nested subsets `{}`, `{1}`, …, `{1..5}`.
    pub fn cascade() -> [Self; 6] {
        [0, 1, 2, 3, 4, 5].map(Self::cumulative)
    }

    /// Every valid subset (16 without fusion plus the fused one).
    pub fn all_valid() -> Vec<Self> {
        let mut out: Vec<Self> = (0..16u8)
            .map(|b| Self::new(b & 1 != 0, b & 2 != 0, b & 4 != 0, b & 8 != 0, false).unwrap())
            .collect();
        out.push(Self::all());
        out
    }

    pub fn kernels_on_chip(&self) -> bool {
        self.kernels_on_chip
    }
    pub fn window_reuse(&self) -> bool {
        self.window_reuse
    }
    pub fn on_chip_accumulate(&self) -> bool {
        self.on_chip_accumulate
    }
    pub fn line_buffer(&self) -> bool {
        self.line_buffer
    }
    pub fn super_layer_fusion(&self) -> bool {
        self.super_layer_fusion
    }

    pub fn flags(&self) -> [bool; 5] {
        [
            self.kernels_on_chip,
            self.window_reuse,
            self.on_chip_accumulate,
            self.line_buffer,
            self.super_layer_fusion,
        ]
    }

    /// True when every strategy of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.flags().iter().zip(other.flags()).all(|(a, b)| !a || b)
    }
}

impl fmt::Display for StrategySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self
            .flags()
            .iter()
            .enumerate()
            .filter(|(_, on)| **on)
            .map(|(i, _)| char::from(b'1' + i as u8))
            .collect();
        if s.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&s)
        }
    }
}

impl FromStr for StrategySet {
    type Err = Error;

    /// Accepts `none`, `all`, or digits `1`-`5` (each optionally prefixed
    /// with `s`) optionally separated by commas.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "" | "none" => return Ok(Self::none()),
            "all" => return Ok(Self::all()),
            _ => {}
        }
        let mut flags = [false; 5];
        for ch in s
            .chars()
            .filter(|c| !matches!(c, ',' | 's' | 'S') && !c.is_whitespace())
        {
            match ch.to_digit(10) {
                Some(d @ 1..=5) => flags[d as usize - 1] = true,
                _ => {
                    return Err(Error::InvalidSpec(format!(
                        "unknown strategy `{ch}` in `{s}` (expected digits 1-5)"
                    )))
                }
            }
        }
        Self::new(flags[0], flags[1], flags[2], flags[3], flags[4])
    }
}

impl Serialize for StrategySet {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StrategySet {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// External traffic and operation counts of some unit of work.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrafficReport {
    pub input_bytes: u64,
    pub output_bytes: u64,
    /// One-time kernel-store transfer (kernels in, or gradients out).
    pub kernel_bytes: u64,
    pub conv_ops: u64,
    pub act_ops: u64,
    pub pool_ops: u64,
    /// Streaming traffic per convolution flop, MB/GFlop.
    pub normalized_bw: f64,
}

impl TrafficReport {
    pub fn new(
        input_bytes: u64,
        output_bytes: u64,
        kernel_bytes: u64,
        conv_ops: u64,
        act_ops: u64,
        pool_ops: u64,
    ) -> Self {
        let mut r = Self {
            input_bytes,
            output_bytes,
            kernel_bytes,
            conv_ops,
            act_ops,
            pool_ops,
            normalized_bw: 0.0,
        };
        r.normalized_bw = r.recompute_normalized_bw();
        r
    }

    pub fn total_bytes(&self) -> u64 {
        self.input_bytes + self.output_bytes + self.kernel_bytes
    }

    /// `(input + output) bytes / 1e6 ÷ conv_ops / 1e9`. The kernel store is
    /// loaded before a batch starts and is not part of the streaming figure.
    pub fn recompute_normalized_bw(&self) -> f64 {
        if self.conv_ops == 0 {
            return 0.0;
        }
        ((self.input_bytes + self.output_bytes) as f64 / 1e6) / (self.conv_ops as f64 / 1e9)
    }

    pub fn is_consistent(&self) -> bool {
        let expect = self.recompute_normalized_bw();
        (self.normalized_bw - expect).abs() <= 1e-12 * expect.abs().max(1.0)
    }

    pub fn merged(&self, other: &Self) -> Self {
        Self::new(
            self.input_bytes + other.input_bytes,
            self.output_bytes + other.output_bytes,
            self.kernel_bytes + other.kernel_bytes,
            self.conv_ops + other.conv_ops,
            self.act_ops + other.act_ops,
            self.pool_ops + other.pool_ops,
        )
    }
}

fn prod(what: &'static str, factors: &[u64]) -> Result<u64> {
    factors
        .iter()
        .try_fold(1u64, |acc, &f| acc.checked_mul(f))
        .ok_or(Error::Overflow(what))
}

fn u(v: usize) -> u64 {
    v as u64
}

/// Operation counts of one super layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub conv_ops: u64,
    pub act_ops: u64,
    pub pool_ops: u64,
}

pub fn op_count(layer: &SuperLayerSpec, batch: usize, groups: usize) -> Result<OpCounts> {
    let d = layer.dims()?;
    let c = &layer.conv;
    let reps = prod("op count", &[u(batch), u(groups)])?;
    let conv_ops = prod(
        "conv ops",
        &[
            2,
            u(c.k),
            u(c.k),
            u(c.n),
            u(c.m),
            u(d.conv_h),
            u(d.conv_w),
            reps,
        ],
    )?;
    let act_ops = if layer.act {
        prod("act ops", &[u(c.m), u(d.conv_h), u(d.conv_w), reps])?
    } else {
        0
    };
    let pool_ops = match &layer.pool {
        Some(p) => prod(
            "pool ops",
            &[u(p.p), u(p.p), u(c.m), u(d.out_h), u(d.out_w), reps],
        )?,
        None => 0,
    };
    Ok(OpCounts {
        conv_ops,
        act_ops,
        pool_ops,
    })
}

/// Storage footprint of one layer's tensors, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStorage {
    pub input_bytes: u64,
    pub conv_output_bytes: u64,
    pub output_bytes: u64,
    pub kernel_bytes: u64,
}

pub fn layer_storage(
    layer: &SuperLayerSpec,
    batch: usize,
    word_bytes: usize,
) -> Result<LayerStorage> {
    let d = layer.dims()?;
    let c = &layer.conv;
    let wb = prod("storage", &[u(batch), u(word_bytes)])?;
    Ok(LayerStorage {
        input_bytes: prod("storage", &[u(c.n), u(d.in_h), u(d.in_w), wb])?,
        conv_output_bytes: prod("storage", &[u(c.m), u(d.conv_h), u(d.conv_w), wb])?,
        output_bytes: prod("storage", &[u(c.m), u(d.out_h), u(d.out_w), wb])?,
        kernel_bytes: prod("storage", &[u(c.n), u(c.m), u(c.k), u(c.k), u(word_bytes)])?,
    })
}

/// Shape of one convolution pass as the engine sees it (one group, one
/// image). For δ-propagation this is the transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvWork {
    pub n_in: usize,
    pub m_out: usize,
    pub k: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvWork {
    pub fn forward(layer: &SuperLayerSpec) -> Result<Self> {
        let d = layer.dims()?;
        Ok(Self {
            n_in: layer.conv.n,
            m_out: layer.conv.m,
            k: layer.conv.k,
            stride: layer.conv.stride,
            in_h: d.in_h,
            in_w: d.in_w,
            out_h: d.conv_h,
            out_w: d.conv_w,
        })
    }

    pub fn delta(layer: &SuperLayerSpec) -> Result<Self> {
        let d = layer.dims()?;
        let t = transposed_spec(&layer.conv)?;
        Ok(Self {
            n_in: t.n,
            m_out: t.m,
            k: t.k,
            stride: 1,
            in_h: d.conv_h,
            in_w: d.conv_w,
            out_h: d.in_h,
            out_w: d.in_w,
        })
    }

    /// Filters evaluated per image: one per (input map, output map, position).
    pub fn filters(&self) -> u64 {
        u(self.n_in) * u(self.m_out) * u(self.out_h) * u(self.out_w)
    }

    pub fn taps(&self) -> u64 {
        u(self.k) * u(self.k)
    }

    /// Words of the streamed feature operand read per image.
    pub fn window_words(&self, s: &StrategySet) -> u64 {
        if s.line_buffer() {
            u(self.n_in) * u(self.in_h) * u(self.in_w)
        } else if s.window_reuse() {
            u(self.n_in) * u(self.out_h) * u(self.out_w) * self.taps()
        } else {
            self.filters() * self.taps()
        }
    }

    pub fn kernel_store_words(&self) -> u64 {
        u(self.n_in) * u(self.m_out) * self.taps()
    }
}

/// Word counts before scaling: per image (streamed) and per batch (store).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Words {
    input: u64,
    output: u64,
    store: u64,
}

fn forward_conv_words(w: &ConvWork, s: &StrategySet) -> Words {
    let kernel_operands = if s.kernels_on_chip() {
        0
    } else {
        w.filters() * w.taps()
    };
    let output = if s.on_chip_accumulate() {
        u(w.m_out) * u(w.out_h) * u(w.out_w)
    } else {
        w.filters()
    };
    Words {
        input: w.window_words(s) + kernel_operands,
        output,
        store: if s.kernels_on_chip() {
            w.kernel_store_words()
        } else {
            0
        },
    }
}

fn gradient_words(w: &ConvWork, s: &StrategySet) -> Words {
    let positions = u(w.out_h) * u(w.out_w);
    let delta_reads = if s.on_chip_accumulate() {
        u(w.m_out) * positions
    } else {
        w.filters()
    };
    Words {
        input: w.window_words(s) + delta_reads,
        output: if s.kernels_on_chip() {
            0
        } else {
            w.filters() * w.taps()
        },
        store: if s.kernels_on_chip() {
            w.kernel_store_words()
        } else {
            0
        },
    }
}

fn plane(maps: usize, h: usize, w: usize) -> u64 {
    u(maps) * u(h) * u(w)
}

fn forward_words(layer: &SuperLayerSpec, d: &LayerDims, s: &StrategySet) -> Result<Words> {
    let work = ConvWork::forward(layer)?;
    let mut words = forward_conv_words(&work, s);
    let m = layer.conv.m;
    if s.super_layer_fusion() {
        words.output = plane(m, d.out_h, d.out_w);
        return Ok(words);
    }
    if layer.act {
        words.input += plane(m, d.conv_h, d.conv_w);
        words.output += plane(m, d.conv_h, d.conv_w);
    }
    if let Some(p) = &layer.pool {
        words.input += u(p.p) * u(p.p) * plane(m, d.out_h, d.out_w);
        words.output += plane(m, d.out_h, d.out_w);
    }
    Ok(words)
}

fn delta_words(layer: &SuperLayerSpec, prev: &SuperLayerSpec, s: &StrategySet) -> Result<Words> {
    let work = ConvWork::delta(layer)?;
    let pd = prev.dims()?;
    let maps = work.m_out;
    let mut words = forward_conv_words(&work, s);
    if s.super_layer_fusion() {
        words.output = plane(maps, pd.conv_h, pd.conv_w);
        return Ok(words);
    }
    if let Some(p) = &prev.pool {
        words.input += plane(maps, pd.out_h, pd.out_w);
        words.output += u(p.p) * u(p.p) * plane(maps, pd.out_h, pd.out_w);
    }
    if prev.act {
        words.input += plane(maps, pd.conv_h, pd.conv_w);
        words.output += plane(maps, pd.conv_h, pd.conv_w);
    }
    Ok(words)
}

fn scale(words: Words, batch: usize, groups: usize, word_bytes: usize) -> Result<(u64, u64, u64)> {
    let per = prod("traffic", &[u(batch), u(groups), u(word_bytes)])?;
    let store = prod("traffic", &[u(groups), u(word_bytes)])?;
    Ok((
        words
            .input
            .checked_mul(per)
            .ok_or(Error::Overflow("input bytes"))?,
        words
            .output
            .checked_mul(per)
            .ok_or(Error::Overflow("output bytes"))?,
        words
            .store
            .checked_mul(store)
            .ok_or(Error::Overflow("kernel bytes"))?,
    ))
}

/// Traffic of the convolution stage alone in the forward phase (one group).
pub fn conv_traffic(
    layer: &SuperLayerSpec,
    strategies: &StrategySet,
    batch: usize,
    word_bytes: usize,
) -> Result<TrafficReport> {
    let work = ConvWork::forward(layer)?;
    let (input, output, kernel) =
        scale(forward_conv_words(&work, strategies), batch, 1, word_bytes)?;
    let ops = op_count(layer, batch, 1)?;
    Ok(TrafficReport::new(
        input,
        output,
        kernel,
        ops.conv_ops,
        0,
        0,
    ))
}

/// Traffic of super layer `index` of `net` in `phase`.
///
/// Forward: conv + act + pool of layer `index`. δ-propagation: conv of layer
/// `index` transposed, followed by the pool and activation backward stages of
/// layer `index − 1`. Kernel update: gradient of layer `index`'s kernels.
/// Without fusion the intermediate tensors round-trip through external memory.
pub fn super_traffic(
    index: usize,
    net: &NetworkSpec,
    phase: Phase,
    strategies: &StrategySet,
    word_bytes: usize,
) -> Result<TrafficReport> {
    let layer = net.layer(index)?;
    let groups = net.groups_of(index);
    let batch = net.batch;
    let d = layer.dims()?;
    let fp_ops = op_count(layer, batch, groups)?;
    let (words, act_ops, pool_ops) = match phase {
        Phase::Forward => (
            forward_words(layer, &d, strategies)?,
            fp_ops.act_ops,
            fp_ops.pool_ops,
        ),
        Phase::DeltaProp => {
            if index == 0 {
                return Err(Error::Unsupported(
                    "delta propagation is undefined for the first super layer".into(),
                ));
            }
            let prev = net.layer(index - 1)?;
            let pd = prev.dims()?;
            let maps = u(layer.conv.n) * u(groups) * u(batch);
            let act = if prev.act {
                maps * u(pd.conv_h) * u(pd.conv_w)
            } else {
                0
            };
            let pool = prev
                .pool
                .map(|p| u(p.p) * u(p.p) * maps * u(pd.out_h) * u(pd.out_w))
                .unwrap_or(0);
            (delta_words(layer, prev, strategies)?, act, pool)
        }
        Phase::KernelUpdate => (gradient_words(&ConvWork::forward(layer)?, strategies), 0, 0),
    };
    let (input, output, kernel) = scale(words, batch, groups, word_bytes)?;
    Ok(TrafficReport::new(
        input,
        output,
        kernel,
        fp_ops.conv_ops,
        act_ops,
        pool_ops,
    ))
}

/// Per-layer reports of a network for one phase, plus their sum. Layers for
/// which the phase is undefined (δ-propagation of the first layer) are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTraffic {
    pub phase: Phase,
    pub layers: Vec<(usize, TrafficReport)>,
    pub total: TrafficReport,
}

pub fn network_summary(
    net: &NetworkSpec,
    phase: Phase,
    strategies: &StrategySet,
    word_bytes: usize,
) -> Result<NetworkTraffic> {
    net.validate()?;
    let mut layers = Vec::new();
    let mut total = TrafficReport::default();
    for l in 0..net.layers.len() {
        if phase == Phase::DeltaProp && l == 0 {
            continue;
        }
        let r = super_traffic(l, net, phase, strategies, word_bytes)?;
        total = total.merged(&r);
        layers.push((l, r));
    }
    Ok(NetworkTraffic {
        phase,
        layers,
        total,
    })
}

/// Unfused, strategy-free traffic of a layer split by stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTraffic {
    pub conv: TrafficReport,
    pub act_bytes: u64,
    pub pool_bytes: u64,
}

impl StageTraffic {
    pub fn total_bytes(&self) -> u64 {
        self.conv.total_bytes() + self.act_bytes + self.pool_bytes
    }
}

pub fn baseline_traffic(
    layer: &SuperLayerSpec,
    batch: usize,
    word_bytes: usize,
) -> Result<StageTraffic> {
    let d = layer.dims()?;
    let m = layer.conv.m;
    let wb = u(batch) * u(word_bytes);
    let conv = conv_traffic(layer, &StrategySet::none(), batch, word_bytes)?;
    let act_bytes = if layer.act {
        2 * plane(m, d.conv_h, d.conv_w) * wb
    } else {
        0
    };
    let pool_bytes = match &layer.pool {
        Some(p) => (u(p.p) * u(p.p) + 1) * plane(m, d.out_h, d.out_w) * wb,
        None => 0,
    };
    Ok(StageTraffic {
        conv,
        act_bytes,
        pool_bytes,
    })
}

/// No-strategy conv + act + pool bytes over the fully fused total (kernel
/// store included).
pub fn reduction_factor(layer: &SuperLayerSpec, word_bytes: usize, batch: usize) -> Result<f64> {
    let base = baseline_traffic(layer, batch, word_bytes)?;
    let net = NetworkSpec::new("single", batch, vec![*layer]);
    let fused = super_traffic(0, &net, Phase::Forward, &StrategySet::all(), word_bytes)?;
    Ok(base.total_bytes() as f64 / fused.total_bytes() as f64)
}
