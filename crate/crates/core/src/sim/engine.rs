//! Super-layer execution: window acquisition, CU sweep, ReLU/pool engine and
//! external-memory transactions for one image of one group.
//!
//! The engine runs either functionally (f32 data flows through the banks and
//! accumulators) or in counting mode, where the same schedule issues the same
//! transactions without data. Counters are scaled by batch and group count
//! afterwards, the kernel store by group count only.

use serde::Serialize;

use super::accumulator::{accumulate_sweep, filter, AccumulatorBank};
use super::line_buffer::LineBuffer;
use super::memory::{ExternalMemory, MemoryStats, Region};
use super::pool_engine::{
    pool_engine_schedule, scatter_schedule, PoolAccumulator, PoolScatter, PoolSchedule,
};
use crate::arch::{check_budget, cycles_per_position, BudgetReport, HwConfig};
use crate::error::{ensure_dim, Error, Result};
use crate::reference::{apply_gradient, transposed_spec};
use crate::spec::{NetworkSpec, Phase, SuperLayerSpec, TrainConfig};
use crate::tensor::{FeatureMaps, KernelBank};
use crate::traffic::{op_count, StrategySet, TrafficReport};

/// Address charged for a padding tap that is fetched from memory (only
/// without line buffers; with them padding is generated on chip).
pub const PAD_ADDR: u64 = u64::MAX;

/// Operands of one super layer for one image of one group.
#[derive(Debug, Clone, Copy)]
pub enum SimInput<'a> {
    Forward {
        x: &'a FeatureMaps<f32>,
        kernels: &'a KernelBank<f32>,
    },
    /// `delta` sits on this layer's conv-output grid; `pre_act` is the
    /// previous layer's conv output (its activation mask source).
    DeltaProp {
        delta: &'a FeatureMaps<f32>,
        kernels: &'a KernelBank<f32>,
        pre_act: &'a FeatureMaps<f32>,
    },
    KernelUpdate {
        x: &'a FeatureMaps<f32>,
        delta: &'a FeatureMaps<f32>,
        kernels: &'a KernelBank<f32>,
    },
}

impl SimInput<'_> {
    pub fn phase(&self) -> Phase {
        match self {
            SimInput::Forward { .. } => Phase::Forward,
            SimInput::DeltaProp { .. } => Phase::DeltaProp,
            SimInput::KernelUpdate { .. } => Phase::KernelUpdate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Keep per-address read/write histograms.
    pub track_addresses: bool,
    /// Learning rate of the kernel update.
    pub alpha: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            track_addresses: false,
            alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub layer: usize,
    pub phase: Phase,
    pub strategies: StrategySet,
    /// FP: layer output. δP: δ on the previous layer's conv-output grid.
    #[serde(skip)]
    pub outputs: Option<FeatureMaps<f32>>,
    /// FP only: conv output before the activation.
    #[serde(skip)]
    pub pre_act: Option<FeatureMaps<f32>>,
    #[serde(skip)]
    pub gradient: Option<KernelBank<f32>>,
    #[serde(skip)]
    pub kernels: Option<KernelBank<f32>>,
    pub traffic: TrafficReport,
    pub cycles_per_image: u64,
    /// Over the batch and all groups.
    pub cycles: u64,
    pub sram_bytes: u64,
    pub register_bits: u64,
    pub pool_schedule: Option<PoolSchedule>,
    /// Per image and group.
    pub memory_stats: MemoryStats,
    #[serde(skip)]
    pub memory: ExternalMemory,
}

/// Convolution pass as the CUs see it.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    m: usize,
    k: usize,
    stride: usize,
    pad: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn forward(layer: &SuperLayerSpec) -> Result<Self> {
        let d = layer.dims()?;
        let c = &layer.conv;
        Ok(Self {
            n: c.n,
            m: c.m,
            k: c.k,
            stride: c.stride,
            pad: c.pad_begin(),
            in_h: d.in_h,
            in_w: d.in_w,
            out_h: d.conv_h,
            out_w: d.conv_w,
        })
    }

    fn delta(layer: &SuperLayerSpec) -> Result<Self> {
        let d = layer.dims()?;
        let t = transposed_spec(&layer.conv)?;
        Ok(Self {
            n: t.n,
            m: t.m,
            k: t.k,
            stride: 1,
            pad: t.pad_begin(),
            in_h: d.conv_h,
            in_w: d.conv_w,
            out_h: d.in_h,
            out_w: d.in_w,
        })
    }

    fn taps(&self) -> usize {
        self.k * self.k
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn origin(&self, r: usize, c: usize) -> (isize, isize) {
        (
            (r * self.stride) as isize - self.pad as isize,
            (c * self.stride) as isize - self.pad as isize,
        )
    }
}

fn flat(maps_h_w: (usize, usize), map: usize, row: usize, col: usize) -> u64 {
    ((map * maps_h_w.0 + row) * maps_h_w.1 + col) as u64
}

/// Tags separating tensors that share a region.
fn tagged(tag: u64, addr: u64) -> u64 {
    (tag << 48) | addr
}

/// Delivers `k × k` windows of the streamed operand, charging external reads
/// according to the strategies.
struct WindowSource<'a> {
    g: Geometry,
    input: Option<&'a FeatureMaps<f32>>,
    line_buffer: Option<LineBuffer>,
    track: bool,
}

impl<'a> WindowSource<'a> {
    fn new(g: Geometry, input: Option<&'a FeatureMaps<f32>>, s: &StrategySet, track: bool) -> Self {
        Self {
            g,
            input,
            line_buffer: s
                .line_buffer()
                .then(|| LineBuffer::new(g.k, g.n, g.in_h, g.in_w)),
            track,
        }
    }

    /// Streams what the line buffers still miss for position `(r, c)`.
    fn advance(&mut self, mem: &mut ExternalMemory, r: usize, c: usize) {
        let (top, left) = self.g.origin(r, c);
        let dims = (self.g.in_h, self.g.in_w);
        let input = self.input;
        if let Some(lb) = self.line_buffer.as_mut() {
            for map in 0..self.g.n {
                lb.ensure(map, top, left + self.g.k as isize, |row, col| {
                    mem.read(Region::Features, flat(dims, map, row, col));
                    input.map_or(0.0, |x| x.get(map, row, col))
                });
            }
        }
    }

    /// Charges one off-chip window fetch of `map`.
    fn charge(&self, mem: &mut ExternalMemory, map: usize, r: usize, c: usize) {
        if !self.track {
            mem.read_burst(Region::Features, 0, self.g.taps() as u64);
            return;
        }
        let (top, left) = self.g.origin(r, c);
        let dims = (self.g.in_h, self.g.in_w);
        for u in 0..self.g.k as isize {
            for v in 0..self.g.k as isize {
                let (row, col) = (top + u, left + v);
                let inside =
                    row >= 0 && col >= 0 && (row as usize) < dims.0 && (col as usize) < dims.1;
                let addr = if inside {
                    flat(dims, map, row as usize, col as usize)
                } else {
                    PAD_ADDR
                };
                mem.read(Region::Features, addr);
            }
        }
    }

    /// Window values of `map` at `(r, c)`. Served from the bank grid when
    /// line buffers are on, else straight from the operand (no charge here).
    fn values(&mut self, map: usize, r: usize, c: usize, out: &mut [f32]) {
        let (top, left) = self.g.origin(r, c);
        if let Some(lb) = self.line_buffer.as_mut() {
            lb.grid_mut().window_fetch(map, top, left, out);
            return;
        }
        match self.input {
            Some(x) => {
                let k = self.g.k;
                for u in 0..k {
                    for v in 0..k {
                        out[u * k + v] = x.get_padded(map, top + u as isize, left + v as isize);
                    }
                }
            }
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }
}

/// Forward-style convolution pass. `emit(mem, r, c, outputs)` receives the
/// `m` results of each position in raster order; with on-chip accumulation it
/// decides where they go, otherwise the pass has already written the
/// per-filter partials and `emit` only sees the values.
#[allow(clippy::too_many_arguments)]
fn conv_pass(
    g: Geometry,
    s: &StrategySet,
    hw: &HwConfig,
    mem: &mut ExternalMemory,
    input: Option<&FeatureMaps<f32>>,
    kernels: Option<&KernelBank<f32>>,
    track: bool,
    mut emit: impl FnMut(&mut ExternalMemory, usize, usize, &[f32]),
) -> u64 {
    let functional = input.is_some() && kernels.is_some();
    let mut src = WindowSource::new(g, input, s, track);
    let mut windows = vec![vec![0.0f32; g.taps()]; g.n];
    let mut acc = AccumulatorBank::new(g.m);
    let mut outs = vec![0.0f32; g.m];
    let per_position = cycles_per_position(g.n, g.m, hw.num_cu);
    let positions = g.positions() as u64;
    let mut cycles = 0;

    if s.kernels_on_chip() {
        mem.read_burst(Region::KernelStore, 0, (g.n * g.m * g.taps()) as u64);
    }
    for r in 0..g.out_h {
        for c in 0..g.out_w {
            let pos = (r * g.out_w + c) as u64;
            src.advance(mem, r, c);
            for (i, w) in windows.iter_mut().enumerate() {
                if s.window_reuse() && !s.line_buffer() {
                    src.charge(mem, i, r, c);
                }
                if functional || s.line_buffer() {
                    src.values(i, r, c, w);
                }
            }
            charge_filters(&src, mem, g, s, r, c, pos, positions, track);

            if functional {
                let ker = kernels.expect("functional pass has kernels");
                if s.on_chip_accumulate() {
                    outs.copy_from_slice(
                        &accumulate_sweep(&mut acc, &windows, ker, hw.num_cu).outputs,
                    );
                } else {
                    for (j, o) in outs.iter_mut().enumerate() {
                        *o = 0.0;
                        for (i, w) in windows.iter().enumerate() {
                            *o += filter(w, ker.kernel(i, j));
                        }
                    }
                }
            }
            cycles += per_position;
            emit(mem, r, c, &outs);
        }
    }
    cycles
}

/// Per-filter transactions: kernel operands without the kernel store, window
/// re-fetches without reuse, partial writes without on-chip accumulation.
#[allow(clippy::too_many_arguments)]
fn charge_filters(
    src: &WindowSource,
    mem: &mut ExternalMemory,
    g: Geometry,
    s: &StrategySet,
    r: usize,
    c: usize,
    pos: u64,
    positions: u64,
    track: bool,
) {
    let refetch = !s.window_reuse() && !s.line_buffer();
    let filters = (g.n * g.m) as u64;
    let taps = g.taps() as u64;
    if !track {
        if !s.kernels_on_chip() {
            mem.read_burst(Region::KernelOperand, 0, filters * taps);
        }
        if refetch {
            mem.read_burst(Region::Features, 0, filters * taps);
        }
        if !s.on_chip_accumulate() {
            mem.write_burst(Region::Partials, 0, filters);
        }
        return;
    }
    for j in 0..g.m {
        for i in 0..g.n {
            let f = (i * g.m + j) as u64;
            if !s.kernels_on_chip() {
                mem.read_burst(Region::KernelOperand, f * taps, taps);
            }
            if refetch {
                src.charge(mem, i, r, c);
            }
            if !s.on_chip_accumulate() {
                mem.write(Region::Partials, ((j * g.n + i) as u64) * positions + pos);
            }
        }
    }
}

/// Kernel-gradient pass over the conv-output grid of `layer`.
#[allow(clippy::too_many_arguments)]
fn gradient_pass(
    g: Geometry,
    s: &StrategySet,
    hw: &HwConfig,
    mem: &mut ExternalMemory,
    x: Option<&FeatureMaps<f32>>,
    delta: Option<&FeatureMaps<f32>>,
    track: bool,
) -> (u64, Option<KernelBank<f32>>) {
    let functional = x.is_some() && delta.is_some();
    let mut src = WindowSource::new(g, x, s, track);
    let mut windows = vec![vec![0.0f32; g.taps()]; g.n];
    let mut grad =
        functional.then(|| KernelBank::zeros(g.n, g.m, g.k).expect("validated geometry"));
    let per_position = cycles_per_position(g.n, g.m, hw.num_cu);
    let positions = g.positions() as u64;
    let taps = g.taps() as u64;
    let filters = (g.n * g.m) as u64;
    let refetch = !s.window_reuse() && !s.line_buffer();
    let mut cycles = 0;

    for r in 0..g.out_h {
        for c in 0..g.out_w {
            let pos = (r * g.out_w + c) as u64;
            src.advance(mem, r, c);
            for (i, w) in windows.iter_mut().enumerate() {
                if s.window_reuse() && !s.line_buffer() {
                    src.charge(mem, i, r, c);
                }
                if functional || s.line_buffer() {
                    src.values(i, r, c, w);
                }
            }
            // δ scalars: once per output map with on-chip accumulation, else
            // once per filter.
            if s.on_chip_accumulate() {
                for j in 0..g.m {
                    mem.read(
                        Region::DeltaOperand,
                        if track { j as u64 * positions + pos } else { 0 },
                    );
                }
            }
            if track {
                for j in 0..g.m {
                    for i in 0..g.n {
                        if !s.on_chip_accumulate() {
                            mem.read(Region::DeltaOperand, j as u64 * positions + pos);
                        }
                        if refetch {
                            src.charge(mem, i, r, c);
                        }
                        if !s.kernels_on_chip() {
                            let f = (i * g.m + j) as u64;
                            mem.write_burst(Region::Partials, (f * positions + pos) * taps, taps);
                        }
                    }
                }
            } else {
                if !s.on_chip_accumulate() {
                    mem.read_burst(Region::DeltaOperand, 0, filters);
                }
                if refetch {
                    mem.read_burst(Region::Features, 0, filters * taps);
                }
                if !s.kernels_on_chip() {
                    mem.write_burst(Region::Partials, 0, filters * taps);
                }
            }
            if let (Some(grad), Some(d)) = (grad.as_mut(), delta) {
                for j in 0..g.m {
                    let dj = d.get(j, r, c);
                    for (i, w) in windows.iter().enumerate() {
                        for (gk, xv) in grad.kernel_mut(i, j).iter_mut().zip(w) {
                            *gk += dj * xv;
                        }
                    }
                }
            }
            cycles += per_position;
        }
    }
    if s.kernels_on_chip() {
        mem.write_burst(Region::KernelStore, 0, filters * taps);
    }
    (cycles, grad)
}

/// Checks the hardware limits and returns the on-chip storage in use.
fn check_hw(
    layer: &SuperLayerSpec,
    g: &Geometry,
    hw: &HwConfig,
    s: &StrategySet,
) -> Result<(u64, u64)> {
    hw.validate()?;
    let c = &layer.conv;
    if c.k > hw.max_k {
        return Err(Error::Config(format!(
            "kernel side {} exceeds supported {}",
            c.k, hw.max_k
        )));
    }
    let word = hw.word_bytes as u64;
    let report = BudgetReport {
        kernel_sram_bytes: if s.kernels_on_chip() {
            (c.n * c.m * c.k * c.k) as u64 * word
        } else {
            0
        },
        line_buffer_bytes: if s.line_buffer() {
            (g.n * g.k * g.in_w) as u64 * word
        } else {
            0
        },
        window_register_bits: 8 * word * (g.k * g.k) as u64,
        accumulator_bits: if s.on_chip_accumulate() {
            32 * g.m as u64
        } else {
            0
        },
    };
    check_budget(&report, hw)?;
    Ok((
        report.kernel_sram_bytes + report.line_buffer_bytes,
        report.window_register_bits * hw.num_cu as u64 + report.accumulator_bits,
    ))
}

struct Counters {
    act_ops: u64,
    pool_ops: u64,
}

/// Runs super layer `index` functionally on one image of one group.
pub fn run_super_layer(
    net: &NetworkSpec,
    index: usize,
    input: &SimInput,
    hw: &HwConfig,
    strategies: &StrategySet,
    options: &SimOptions,
) -> Result<SimResult> {
    simulate(
        net,
        index,
        input.phase(),
        Some(input),
        hw,
        strategies,
        options,
    )
}

/// Runs the same schedule without data; only the counters are produced.
pub fn count_super_layer(
    net: &NetworkSpec,
    index: usize,
    phase: Phase,
    hw: &HwConfig,
    strategies: &StrategySet,
) -> Result<SimResult> {
    simulate(
        net,
        index,
        phase,
        None,
        hw,
        strategies,
        &SimOptions::default(),
    )
}

fn simulate(
    net: &NetworkSpec,
    index: usize,
    phase: Phase,
    input: Option<&SimInput>,
    hw: &HwConfig,
    s: &StrategySet,
    options: &SimOptions,
) -> Result<SimResult> {
    let layer = net.layer(index)?;
    let d = layer.dims().map_err(|e| Error::Layer {
        layer: index,
        message: e.to_string(),
    })?;
    let groups = net.groups_of(index);
    let track = options.track_addresses;
    let train = TrainConfig::new(options.alpha)?;
    let mut mem = ExternalMemory::new(track);
    let mut counters = Counters {
        act_ops: 0,
        pool_ops: 0,
    };
    let mut result_outputs = None;
    let mut result_pre_act = None;
    let mut gradient = None;
    let mut new_kernels = None;
    let mut pool_schedule = None;
    let fused = s.super_layer_fusion();
    let (m, n) = (layer.conv.m, layer.conv.n);

    let (cycles_per_image, storage) = match phase {
        Phase::Forward => {
            let g = Geometry::forward(layer)?;
            let storage = check_hw(layer, &g, hw, s)?;
            let (x, ker) = match input {
                Some(SimInput::Forward { x, kernels }) => {
                    ensure_dim("input maps", n, x.maps())?;
                    ensure_dim("input height", d.in_h, x.height())?;
                    ensure_dim("input width", d.in_w, x.width())?;
                    check_kernels(kernels, n, m, layer.conv.k)?;
                    (Some(*x), Some(*kernels))
                }
                None => (None, None),
                Some(_) => return Err(Error::InvalidSpec("input does not match phase".into())),
            };
            let functional = x.is_some();
            let mut pre_act = functional.then(|| FeatureMaps::zeros(m, d.conv_h, d.conv_w));
            let mut out = functional.then(|| FeatureMaps::zeros(m, d.out_h, d.out_w));
            let conv_plane = (d.conv_h, d.conv_w);
            let out_plane = (d.out_h, d.out_w);
            let cycles;
            if fused {
                let budget = cycles_per_position(g.n, g.m, hw.num_cu);
                pool_schedule = Some(pool_engine_schedule(
                    m,
                    conv_plane,
                    layer.pool.as_ref(),
                    budget,
                    hw.relu_pool_units,
                ));
                let mut pooler = layer
                    .pool
                    .map(|p| PoolAccumulator::new(p, m, d.out_h, d.out_w));
                cycles = conv_pass(g, s, hw, &mut mem, x, ker, track, |mem, r, c, vals| {
                    for (j, &v) in vals.iter().enumerate() {
                        if let Some(pa) = pre_act.as_mut() {
                            pa.set(j, r, c, v);
                        }
                        let a = if layer.act {
                            counters.act_ops += 1;
                            v.max(0.0)
                        } else {
                            v
                        };
                        match pooler.as_mut() {
                            Some(pl) => {
                                counters.pool_ops += covering_taps(layer, &d, r, c);
                                pl.push(j, r, c, a, |pr, pc, pv| {
                                    mem.write(Region::Output, flat(out_plane, j, pr, pc));
                                    if let Some(o) = out.as_mut() {
                                        o.set(j, pr, pc, pv);
                                    }
                                });
                            }
                            None => {
                                mem.write(Region::Output, flat(out_plane, j, r, c));
                                if let Some(o) = out.as_mut() {
                                    o.set(j, r, c, a);
                                }
                            }
                        }
                    }
                });
            } else {
                let staged = layer.act || layer.pool.is_some();
                let conv_region = if !s.on_chip_accumulate() {
                    Region::Partials
                } else if staged {
                    Region::Intermediate
                } else {
                    Region::Output
                };
                cycles = conv_pass(g, s, hw, &mut mem, x, ker, track, |mem, r, c, vals| {
                    for (j, &v) in vals.iter().enumerate() {
                        if s.on_chip_accumulate() {
                            mem.write(conv_region, tagged(0, flat(conv_plane, j, r, c)));
                        }
                        if let Some(pa) = pre_act.as_mut() {
                            pa.set(j, r, c, v);
                        }
                    }
                });
                let mut cur = pre_act.clone();
                let mut cur_region = conv_region;
                let mut cur_tag = 0;
                if layer.act {
                    let dst = if layer.pool.is_some() {
                        Region::Intermediate
                    } else {
                        Region::Output
                    };
                    for j in 0..m {
                        for r in 0..d.conv_h {
                            for c in 0..d.conv_w {
                                let a = flat(conv_plane, j, r, c);
                                mem.read(cur_region, tagged(cur_tag, a));
                                mem.write(dst, tagged(1, a));
                                counters.act_ops += 1;
                            }
                        }
                    }
                    cur = cur.map(|t| t.map_values(|v| v.max(0.0)));
                    cur_region = dst;
                    cur_tag = 1;
                }
                if let Some(p) = &layer.pool {
                    for j in 0..m {
                        for pr in 0..d.out_h {
                            for pc in 0..d.out_w {
                                let mut sum = 0.0f32;
                                for u in 0..p.p {
                                    for v in 0..p.p {
                                        let (r, c) = (pr * p.stride + u, pc * p.stride + v);
                                        mem.read(
                                            cur_region,
                                            tagged(cur_tag, flat(conv_plane, j, r, c)),
                                        );
                                        if let Some(t) = cur.as_ref() {
                                            sum += t.get(j, r, c);
                                        }
                                        counters.pool_ops += 1;
                                    }
                                }
                                mem.write(Region::Output, flat(out_plane, j, pr, pc));
                                if let Some(o) = out.as_mut() {
                                    o.set(j, pr, pc, sum / (p.p * p.p) as f32);
                                }
                            }
                        }
                    }
                } else {
                    out = cur;
                }
            }
            result_outputs = out;
            result_pre_act = pre_act;
            (cycles, storage)
        }
        Phase::DeltaProp => {
            if index == 0 {
                return Err(Error::Unsupported(
                    "delta propagation is undefined for the first super layer".into(),
                ));
            }
            let prev = net.layer(index - 1)?;
            let pd = prev.dims()?;
            let g = Geometry::delta(layer)?;
            let storage = check_hw(layer, &g, hw, s)?;
            let (delta, ker, pre_act) = match input {
                Some(SimInput::DeltaProp {
                    delta,
                    kernels,
                    pre_act,
                }) => {
                    ensure_dim("delta maps", m, delta.maps())?;
                    ensure_dim("delta height", d.conv_h, delta.height())?;
                    ensure_dim("delta width", d.conv_w, delta.width())?;
                    check_kernels(kernels, n, m, layer.conv.k)?;
                    ensure_dim("pre-activation maps", n, pre_act.maps())?;
                    ensure_dim("pre-activation height", pd.conv_h, pre_act.height())?;
                    ensure_dim("pre-activation width", pd.conv_w, pre_act.width())?;
                    (
                        Some(*delta),
                        Some(kernels.rotated_transpose()),
                        Some(*pre_act),
                    )
                }
                None => (None, None, None),
                Some(_) => return Err(Error::InvalidSpec("input does not match phase".into())),
            };
            let functional = delta.is_some();
            let grid = (pd.conv_h, pd.conv_w);
            let pooled = (pd.out_h, pd.out_w);
            let mask = |j: usize, y: usize, x: usize, v: f32| -> f32 {
                match pre_act {
                    Some(z) if prev.act && z.get(j, y, x) <= 0.0 => 0.0,
                    _ => v,
                }
            };
            let mut out = functional.then(|| FeatureMaps::zeros(n, pd.conv_h, pd.conv_w));
            let cycles;
            if fused {
                let budget = cycles_per_position(g.n, g.m, hw.num_cu);
                pool_schedule = Some(scatter_schedule(
                    n,
                    prev.pool.as_ref(),
                    budget,
                    hw.relu_pool_units,
                ));
                let mut scatter = PoolScatter::new(prev.pool, n, pd.conv_h, pd.conv_w);
                let taps_per = prev.pool.map_or(0, |p| (p.p * p.p) as u64);
                cycles = conv_pass(
                    g,
                    s,
                    hw,
                    &mut mem,
                    delta,
                    ker.as_ref(),
                    track,
                    |mem, r, c, vals| {
                        for (j, &v) in vals.iter().enumerate() {
                            counters.pool_ops += taps_per;
                            scatter.push(j, r, c, v, |y, x, sv| {
                                if prev.act {
                                    counters.act_ops += 1;
                                }
                                mem.write(Region::Output, flat(grid, j, y, x));
                                if let Some(o) = out.as_mut() {
                                    o.set(j, y, x, mask(j, y, x, sv));
                                }
                            });
                        }
                    },
                );
                for (j, y, x) in scatter.uncovered() {
                    if prev.act {
                        counters.act_ops += 1;
                    }
                    mem.write(Region::Output, flat(grid, j, y, x));
                }
            } else {
                let staged = prev.act || prev.pool.is_some();
                let conv_region = if !s.on_chip_accumulate() {
                    Region::Partials
                } else if staged {
                    Region::Intermediate
                } else {
                    Region::Output
                };
                let mut at_input = functional.then(|| FeatureMaps::zeros(n, d.in_h, d.in_w));
                cycles = conv_pass(
                    g,
                    s,
                    hw,
                    &mut mem,
                    delta,
                    ker.as_ref(),
                    track,
                    |mem, r, c, vals| {
                        for (j, &v) in vals.iter().enumerate() {
                            if s.on_chip_accumulate() {
                                mem.write(conv_region, tagged(0, flat(pooled, j, r, c)));
                            }
                            if let Some(t) = at_input.as_mut() {
                                t.set(j, r, c, v);
                            }
                        }
                    },
                );
                let mut cur = at_input;
                let mut cur_region = conv_region;
                let mut cur_tag = 0;
                if let Some(p) = &prev.pool {
                    let dst = if prev.act {
                        Region::Intermediate
                    } else {
                        Region::Output
                    };
                    let mut up = functional.then(|| FeatureMaps::zeros(n, pd.conv_h, pd.conv_w));
                    let share = 1.0 / (p.p * p.p) as f32;
                    for j in 0..n {
                        for pr in 0..pd.out_h {
                            for pc in 0..pd.out_w {
                                mem.read(cur_region, tagged(cur_tag, flat(pooled, j, pr, pc)));
                                let v = cur.as_ref().map_or(0.0, |t| t.get(j, pr, pc)) * share;
                                for u in 0..p.p {
                                    for w in 0..p.p {
                                        let (y, x) = (pr * p.stride + u, pc * p.stride + w);
                                        mem.write(dst, tagged(1, flat(grid, j, y, x)));
                                        counters.pool_ops += 1;
                                        if let Some(t) = up.as_mut() {
                                            t.add_at(j, y, x, v);
                                        }
                                    }
                                }
                            }
                        }
                    }
                    cur = up;
                    cur_region = dst;
                    cur_tag = 1;
                }
                if prev.act {
                    for j in 0..n {
                        for y in 0..pd.conv_h {
                            for x in 0..pd.conv_w {
                                mem.read(cur_region, tagged(cur_tag, flat(grid, j, y, x)));
                                mem.write(Region::Output, flat(grid, j, y, x));
                                counters.act_ops += 1;
                                if let Some(t) = cur.as_mut() {
                                    let v = t.get(j, y, x);
                                    t.set(j, y, x, mask(j, y, x, v));
                                }
                            }
                        }
                    }
                }
                out = cur;
            }
            result_outputs = out;
            (cycles, storage)
        }
        Phase::KernelUpdate => {
            let g = Geometry::forward(layer)?;
            let storage = check_hw(layer, &g, hw, s)?;
            let (x, delta, ker) = match input {
                Some(SimInput::KernelUpdate { x, delta, kernels }) => {
                    ensure_dim("input maps", n, x.maps())?;
                    ensure_dim("input height", d.in_h, x.height())?;
                    ensure_dim("input width", d.in_w, x.width())?;
                    ensure_dim("delta maps", m, delta.maps())?;
                    ensure_dim("delta height", d.conv_h, delta.height())?;
                    ensure_dim("delta width", d.conv_w, delta.width())?;
                    check_kernels(kernels, n, m, layer.conv.k)?;
                    (Some(*x), Some(*delta), Some(*kernels))
                }
                None => (None, None, None),
                Some(_) => return Err(Error::InvalidSpec("input does not match phase".into())),
            };
            let (cycles, grad) = gradient_pass(g, s, hw, &mut mem, x, delta, track);
            if let (Some(grad), Some(ker)) = (grad.as_ref(), ker) {
                new_kernels = Some(apply_gradient(ker, grad, &train)?);
            }
            gradient = grad;
            (cycles, storage)
        }
    };
    let reps = (net.batch * groups) as u64;
    let word = hw.word_bytes as u64;
    let overflow = |what| Error::Overflow(what);
    let input_bytes = mem
        .streamed_reads()
        .checked_mul(reps * word)
        .ok_or_else(|| overflow("simulated input bytes"))?;
    let output_bytes = mem
        .streamed_writes()
        .checked_mul(reps * word)
        .ok_or_else(|| overflow("simulated output bytes"))?;
    let kernel_bytes = mem.store_words() * groups as u64 * word;
    let conv_ops = op_count(layer, net.batch, groups)?.conv_ops;
    let traffic = TrafficReport::new(
        input_bytes,
        output_bytes,
        kernel_bytes,
        conv_ops,
        counters.act_ops * reps,
        counters.pool_ops * reps,
    );
    Ok(SimResult {
        layer: index,
        phase,
        strategies: *s,
        outputs: result_outputs,
        pre_act: result_pre_act,
        gradient,
        kernels: new_kernels,
        traffic,
        cycles_per_image,
        cycles: cycles_per_image * reps,
        sram_bytes: storage.0,
        register_bits: storage.1,
        pool_schedule,
        memory_stats: mem.stats(),
        memory: mem,
    })
}

fn check_kernels(ker: &KernelBank<f32>, n: usize, m: usize, k: usize) -> Result<()> {
    ensure_dim("kernel n_in", n, ker.n_in())?;
    ensure_dim("kernel m_out", m, ker.m_out())?;
    ensure_dim("kernel k", k, ker.k())
}

/// Pooling taps that conv-grid element `(r, c)` contributes to.
fn covering_taps(layer: &SuperLayerSpec, d: &crate::spec::LayerDims, r: usize, c: usize) -> u64 {
    use super::pool_engine::covering;
    match &layer.pool {
        Some(p) => (covering(r, p, d.out_h).len() * covering(c, p, d.out_w).len()) as u64,
        None => 0,
    }
}
