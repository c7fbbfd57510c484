//! Hardware budget, cycle, efficiency, reconfiguration and roofline formulas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spec::SuperLayerSpec;

/// Accelerator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwConfig {
    pub num_cu: usize,
    pub word_bytes: usize,
    /// ReLU / pooling units working in parallel.
    pub relu_pool_units: usize,
    pub clock_hz: f64,
    pub bitstream_bytes: f64,
    pub cfg_bus_bytes_per_cycle: f64,
    pub cfg_clock_hz: f64,
    pub dram_bytes_per_s: f64,
    pub max_n: usize,
    pub max_m: usize,
    pub max_k: usize,
    /// Optional cap on the line-buffer SRAM; unbounded when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_buffer_bytes: Option<u64>,
}

impl HwConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_cu", self.num_cu),
            ("word_bytes", self.word_bytes),
            ("relu_pool_units", self.relu_pool_units),
            ("max_n", self.max_n),
            ("max_m", self.max_m),
            ("max_k", self.max_k),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let rates = [
            ("clock_hz", self.clock_hz),
            ("cfg_bus_bytes_per_cycle", self.cfg_bus_bytes_per_cycle),
            ("cfg_clock_hz", self.cfg_clock_hz),
            ("dram_bytes_per_s", self.dram_bytes_per_s),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.bitstream_bytes.is_nan() || self.bitstream_bytes < 0.0 {
            return Err(Error::Config("bitstream_bytes must be non-negative".into()));
        }
        Ok(())
    }

    /// Multipliers per CU.
    pub fn multipliers_per_cu(&self) -> usize {
        self.max_k * self.max_k
    }

    /// Capacity of the on-chip kernel store, sized for the largest supported layer.
    pub fn kernel_store_capacity(&self) -> u64 {
        (self.max_n * self.max_m * self.max_k * self.max_k * self.word_bytes) as u64
    }
}

/// Flops per second: each CU retires k² multiplies and k²−1 adds per cycle.
pub fn peak_throughput(hw: &HwConfig, k: usize) -> Result<f64> {
    if k == 0 || k > hw.max_k {
        return Err(Error::Config(format!(
            "kernel side {k} outside 1..={}",
            hw.max_k
        )));
    }
    Ok(hw.num_cu as f64 * (2 * k * k - 1) as f64 * hw.clock_hz)
}

fn check_dims(layer: &SuperLayerSpec, hw: &HwConfig) -> Result<()> {
    let c = &layer.conv;
    if c.n > hw.max_n || c.m > hw.max_m || c.k > hw.max_k {
        return Err(Error::Config(format!(
            "layer {}x{} k={} exceeds supported {}x{} k={}",
            c.n, c.m, c.k, hw.max_n, hw.max_m, hw.max_k
        )));
    }
    Ok(())
}

/// CU waves needed to sweep `n` input maps.
pub fn waves(n: usize, num_cu: usize) -> usize {
    n.div_ceil(num_cu)
}

/// Forward conv cycles: `H_out·W_out·m·⌈n/num_cu⌉·batch` (one group).
pub fn cycle_count(layer: &SuperLayerSpec, hw: &HwConfig, batch: usize) -> Result<u64> {
    check_dims(layer, hw)?;
    let d = layer.dims()?;
    Ok((d.conv_h * d.conv_w) as u64
        * cycles_per_position(layer.conv.n, layer.conv.m, hw.num_cu)
        * batch as u64)
}

pub fn cycles_per_position(n: usize, m: usize, num_cu: usize) -> u64 {
    (m * waves(n, num_cu)) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Invalid maps zero-padded up to the design's maximum dims.
    pub naive_efficiency: f64,
    /// Invalid maps skipped by index-range registers; waste only from the
    /// last partial CU wave.
    pub controlled_efficiency: f64,
}

pub fn logic_efficiency(layer: &SuperLayerSpec, hw: &HwConfig) -> Result<EfficiencyReport> {
    check_dims(layer, hw)?;
    let (n, m) = (layer.conv.n, layer.conv.m);
    let naive = (n * m) as f64 / (hw.max_n * hw.max_m) as f64;
    let controlled = n as f64 / (waves(n, hw.num_cu) * hw.num_cu) as f64;
    Ok(EfficiencyReport {
        naive_efficiency: naive,
        controlled_efficiency: controlled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub kernel_sram_bytes: u64,
    pub line_buffer_bytes: u64,
    /// Per CU.
    pub window_register_bits: u64,
    pub accumulator_bits: u64,
}

pub fn sram_budget(layer: &SuperLayerSpec, hw: &HwConfig) -> Result<BudgetReport> {
    let d = layer.dims()?;
    let c = &layer.conv;
    let word = hw.word_bytes as u64;
    let report = BudgetReport {
        kernel_sram_bytes: (c.n * c.m * c.k * c.k) as u64 * word,
        line_buffer_bytes: (c.n * c.k * d.in_w) as u64 * word,
        window_register_bits: 8 * word * (c.k * c.k) as u64,
        accumulator_bits: 8 * word * c.m as u64,
    };
    check_budget(&report, hw)?;
    Ok(report)
}

pub(crate) fn check_budget(report: &BudgetReport, hw: &HwConfig) -> Result<()> {
    let capacity = hw.kernel_store_capacity();
    if report.kernel_sram_bytes > capacity {
        return Err(Error::Budget {
            budget: "kernel store",
            required: report.kernel_sram_bytes,
            capacity,
        });
    }
    if let Some(cap) = hw.line_buffer_bytes {
        if report.line_buffer_bytes > cap {
            return Err(Error::Budget {
                budget: "line buffer",
                required: report.line_buffer_bytes,
                capacity: cap,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconfigReport {
    pub cfg_seconds: f64,
    pub compute_seconds: f64,
    pub overhead_fraction: f64,
}

/// Bitstream transfer time over the configuration bus and its share of the
/// total time of one super layer.
pub fn reconfig_overhead(hw: &HwConfig, compute_seconds: f64) -> Result<ReconfigReport> {
    let rate = hw.cfg_bus_bytes_per_cycle * hw.cfg_clock_hz;
    if rate.is_nan() || rate <= 0.0 {
        return Err(Error::Config(
            "configuration bus rate must be positive".into(),
        ));
    }
    if compute_seconds.is_nan() || compute_seconds < 0.0 {
        return Err(Error::Config("compute time must be non-negative".into()));
    }
    let cfg_seconds = hw.bitstream_bytes / rate;
    let total = cfg_seconds + compute_seconds;
    let overhead_fraction = if total > 0.0 {
        cfg_seconds / total
    } else {
        0.0
    };
    Ok(ReconfigReport {
        cfg_seconds,
        compute_seconds,
        overhead_fraction,
    })
}

/// `min(peak, dram / bytes-per-flop)` with `normalized_bw` in MB/GFlop.
pub fn roofline_attainable(
    normalized_bw: f64,
    dram_bytes_per_s: f64,
    peak_flops_per_s: f64,
) -> f64 {
    let bytes_per_flop = normalized_bw * 1e6 / 1e9;
    peak_flops_per_s.min(dram_bytes_per_s / bytes_per_flop)
}
