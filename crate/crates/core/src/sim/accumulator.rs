//! Co-located accumulation: one 32-bit register per output map, swept over
//! all input maps before the results leave the chip.

use crate::arch::waves;
use crate::tensor::KernelBank;

#[derive(Debug, Clone)]
pub struct AccumulatorBank {
    acc: Vec<f32>,
    sweep: usize,
}

impl AccumulatorBank {
    pub fn new(m: usize) -> Self {
        Self {
            acc: vec![0.0; m],
            sweep: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.acc.len()
    }

    pub fn capacity_bits(&self) -> u64 {
        32 * self.acc.len() as u64
    }

    pub fn clear(&mut self) {
        self.acc.iter_mut().for_each(|v| *v = 0.0);
        self.sweep = 0;
    }

    /// Input maps swept since the last clear.
    pub fn swept(&self) -> usize {
        self.sweep
    }

    pub fn values(&self) -> &[f32] {
        &self.acc
    }
}

/// Result of one accumulation sweep over all co-located windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub outputs: Vec<f32>,
    pub cycles: u64,
    pub utilization: f64,
}

#[inline]
pub(crate) fn filter(window: &[f32], kernel: &[f32]) -> f32 {
    window
        .iter()
        .zip(kernel)
        .fold(0.0, |acc, (x, w)| acc + x * w)
}

/// Sweeps the `n` co-located windows of one output position through the
/// CUs. CUs work on `num_cu` input maps at a time; each cycle of a wave
/// serves one output map `j`, so a sweep takes `m·⌈n/num_cu⌉` cycles.
pub fn accumulate_sweep(
    acc: &mut AccumulatorBank,
    windows: &[Vec<f32>],
    kernels: &KernelBank<f32>,
    num_cu: usize,
) -> SweepOutput {
    let n = windows.len();
    let m = acc.width();
    assert_eq!(kernels.n_in(), n, "one window per input map");
    assert_eq!(kernels.m_out(), m, "one accumulator per output map");
    acc.clear();
    let mut cycles = 0;
    for wave in (0..n).step_by(num_cu) {
        let end = (wave + num_cu).min(n);
        for j in 0..m {
            cycles += 1;
            for (i, window) in windows.iter().enumerate().take(end).skip(wave) {
                acc.acc[j] += filter(window, kernels.kernel(i, j));
            }
        }
        acc.sweep = end;
    }
    SweepOutput {
        outputs: acc.acc.clone(),
        cycles,
        utilization: n as f64 / (waves(n, num_cu) * num_cu) as f64,
    }
}
