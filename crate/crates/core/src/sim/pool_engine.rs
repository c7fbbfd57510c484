//! ReLU/pooling engine fed by the accumulators, and its backward twin.

use serde::Serialize;

use crate::spec::PoolSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PoolSchedule {
    /// Pooling taps attributable to one output position (all `m` maps).
    pub work: u64,
    pub required_cycles: u64,
    pub feasible: bool,
}

/// Checks whether `units` ReLU/pool units keep up with the CUs. Every conv
/// output element feeds on average `p²·Hp·Wp / (Ho·Wo)` pooling taps, so one
/// output position of `m` maps carries `⌈m·p²·Hp·Wp / (Ho·Wo)⌉` taps. Without
/// pooling the work is the `m` activations.
pub fn pool_engine_schedule(
    m: usize,
    conv_dims: (usize, usize),
    pool: Option<&PoolSpec>,
    conv_cycles_budget: u64,
    units: usize,
) -> PoolSchedule {
    assert!(units >= 1, "at least one ReLU/pool unit");
    let work = match pool {
        Some(p) => {
            let ph = (conv_dims.0 - p.p) / p.stride + 1;
            let pw = (conv_dims.1 - p.p) / p.stride + 1;
            let taps = (m * p.p * p.p * ph * pw) as u64;
            taps.div_ceil((conv_dims.0 * conv_dims.1) as u64)
        }
        None => m as u64,
    };
    let required_cycles = work.div_ceil(units as u64);
    PoolSchedule {
        work,
        required_cycles,
        feasible: required_cycles <= conv_cycles_budget,
    }
}

/// Backward counterpart: every δ produced at a pooled position of `n` maps
/// scatters `p²` shares (or passes through one mask without pooling).
pub fn scatter_schedule(
    n: usize,
    pool: Option<&PoolSpec>,
    conv_cycles_budget: u64,
    units: usize,
) -> PoolSchedule {
    assert!(units >= 1, "at least one ReLU/pool unit");
    let work = (n * pool.map_or(1, |p| p.p * p.p)) as u64;
    let required_cycles = work.div_ceil(units as u64);
    PoolSchedule {
        work,
        required_cycles,
        feasible: required_cycles <= conv_cycles_budget,
    }
}

/// Pooling windows (along one axis) that cover position `y`.
pub(crate) fn covering(y: usize, pool: &PoolSpec, out_len: usize) -> std::ops::Range<usize> {
    let lo = if y + 1 >= pool.p {
        (y + 1 - pool.p).div_ceil(pool.stride)
    } else {
        0
    };
    let hi = (y / pool.stride + 1).min(out_len);
    lo..hi.max(lo)
}

/// On-chip average pooling that consumes activations in raster order and
/// emits each pooled element as soon as its last tap arrives.
#[derive(Debug, Clone)]
pub struct PoolAccumulator {
    pool: PoolSpec,
    out_h: usize,
    out_w: usize,
    sums: Vec<f32>,
    remaining: Vec<u16>,
}

impl PoolAccumulator {
    pub fn new(pool: PoolSpec, maps: usize, out_h: usize, out_w: usize) -> Self {
        let taps = (pool.p * pool.p) as u16;
        Self {
            pool,
            out_h,
            out_w,
            sums: vec![0.0; maps * out_h * out_w],
            remaining: vec![taps; maps * out_h * out_w],
        }
    }

    /// Adds conv-grid element `(r, c)` of `map`; calls `emit(pr, pc, value)`
    /// for every pooled element it completes.
    pub fn push(
        &mut self,
        map: usize,
        r: usize,
        c: usize,
        value: f32,
        mut emit: impl FnMut(usize, usize, f32),
    ) {
        let scale = 1.0 / (self.pool.p * self.pool.p) as f32;
        for pr in covering(r, &self.pool, self.out_h) {
            for pc in covering(c, &self.pool, self.out_w) {
                let idx = (map * self.out_h + pr) * self.out_w + pc;
                self.sums[idx] += value;
                self.remaining[idx] -= 1;
                if self.remaining[idx] == 0 {
                    emit(pr, pc, self.sums[idx] * scale);
                }
            }
        }
    }
}

/// Backward pooling on chip: scatters `δ/p²` from pooled positions onto the
/// conv grid and releases each conv-grid element once every window that
/// covers it has contributed.
#[derive(Debug, Clone)]
pub struct PoolScatter {
    pool: Option<PoolSpec>,
    grid_h: usize,
    grid_w: usize,
    sums: Vec<f32>,
    remaining: Vec<u16>,
}

impl PoolScatter {
    /// `grid_*` is the conv-output grid of the layer whose pool is undone.
    pub fn new(pool: Option<PoolSpec>, maps: usize, grid_h: usize, grid_w: usize) -> Self {
        let mut remaining = vec![1u16; maps * grid_h * grid_w];
        if let Some(p) = &pool {
            let ph = (grid_h - p.p) / p.stride + 1;
            let pw = (grid_w - p.p) / p.stride + 1;
            for map in 0..maps {
                for y in 0..grid_h {
                    let cy = covering(y, p, ph).len();
                    for x in 0..grid_w {
                        remaining[(map * grid_h + y) * grid_w + x] =
                            (cy * covering(x, p, pw).len()) as u16;
                    }
                }
            }
        }
        Self {
            pool,
            grid_h,
            grid_w,
            sums: vec![0.0; maps * grid_h * grid_w],
            remaining,
        }
    }

    /// Feeds δ at pooled position `(r, c)`; `emit(y, x, value)` fires for
    /// each grid element completed by it.
    pub fn push(
        &mut self,
        map: usize,
        r: usize,
        c: usize,
        delta: f32,
        mut emit: impl FnMut(usize, usize, f32),
    ) {
        match self.pool {
            None => emit(r, c, delta),
            Some(p) => {
                let share = delta / (p.p * p.p) as f32;
                for u in 0..p.p {
                    for v in 0..p.p {
                        let (y, x) = (r * p.stride + u, c * p.stride + v);
                        let idx = (map * self.grid_h + y) * self.grid_w + x;
                        self.sums[idx] += share;
                        self.remaining[idx] -= 1;
                        if self.remaining[idx] == 0 {
                            emit(y, x, self.sums[idx]);
                        }
                    }
                }
            }
        }
    }

    /// Grid elements that no pooling window covers; their δ is zero.
    pub fn uncovered(&self) -> Vec<(usize, usize, usize)> {
        if self.pool.is_none() {
            return Vec::new();
        }
        let plane = self.grid_h * self.grid_w;
        let mut out = Vec::new();
        for (idx, _) in self.remaining.iter().enumerate().filter(|(_, r)| **r == 0) {
            // Elements that started at zero were never emitted.
            let map = idx / plane;
            let rest = idx % plane;
            if self.initially_uncovered(rest / self.grid_w, rest % self.grid_w) {
                out.push((map, rest / self.grid_w, rest % self.grid_w));
            }
        }
        out
    }

    fn initially_uncovered(&self, y: usize, x: usize) -> bool {
        match &self.pool {
            Some(p) => {
                let ph = (self.grid_h - p.p) / p.stride + 1;
                let pw = (self.grid_w - p.p) / p.stride + 1;
                covering(y, p, ph).is_empty() || covering(x, p, pw).is_empty()
            }
            None => false,
        }
    }
}
