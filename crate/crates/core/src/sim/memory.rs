//! External-memory transaction counters.

use serde::Serialize;
use std::collections::HashMap;

/// What a transaction touches. Addresses are word offsets inside the region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Region {
    /// Streamed feature maps (or δ maps) feeding a convolution.
    Features,
    /// Kernel words fetched per filter when kernels are not on chip.
    KernelOperand,
    /// δ scalars fetched by the kernel-update engine.
    DeltaOperand,
    /// Partial results written per filter when accumulation is off chip.
    Partials,
    /// Tensors round-tripped between unfused stages.
    Intermediate,
    /// Final output of the super layer.
    Output,
    /// One-time kernel-store transfer (kernels in, gradients out).
    KernelStore,
}

impl Region {
    pub const ALL: [Region; 7] = [
        Region::Features,
        Region::KernelOperand,
        Region::DeltaOperand,
        Region::Partials,
        Region::Intermediate,
        Region::Output,
        Region::KernelStore,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

/// Word-granular read/write counters with optional per-address histograms.
#[derive(Debug, Clone, Default)]
pub struct ExternalMemory {
    reads: [u64; 7],
    writes: [u64; 7],
    histograms: Option<Histograms>,
}

#[derive(Debug, Clone, Default)]
struct Histograms {
    reads: HashMap<(Region, u64), u32>,
    writes: HashMap<(Region, u64), u32>,
}

impl ExternalMemory {
    pub fn new(track_addresses: bool) -> Self {
        Self {
            histograms: track_addresses.then(Histograms::default),
            ..Self::default()
        }
    }

    #[inline]
    pub fn read(&mut self, region: Region, addr: u64) {
        self.reads[region.slot()] += 1;
        if let Some(h) = &mut self.histograms {
            *h.reads.entry((region, addr)).or_default() += 1;
        }
    }

    /// `words` consecutive reads starting at `addr`.
    #[inline]
    pub fn read_burst(&mut self, region: Region, addr: u64, words: u64) {
        if self.histograms.is_some() {
            for a in addr..addr + words {
                self.read(region, a);
            }
        } else {
            self.reads[region.slot()] += words;
        }
    }

    #[inline]
    pub fn write(&mut self, region: Region, addr: u64) {
        self.writes[region.slot()] += 1;
        if let Some(h) = &mut self.histograms {
            *h.writes.entry((region, addr)).or_default() += 1;
        }
    }

    #[inline]
    pub fn write_burst(&mut self, region: Region, addr: u64, words: u64) {
        if self.histograms.is_some() {
            for a in addr..addr + words {
                self.write(region, a);
            }
        } else {
            self.writes[region.slot()] += words;
        }
    }

    pub fn reads(&self, region: Region) -> u64 {
        self.reads[region.slot()]
    }

    pub fn writes(&self, region: Region) -> u64 {
        self.writes[region.slot()]
    }

    pub fn stats(&self) -> MemoryStats {
        MemoryStats {
            reads: Region::ALL.iter().map(|r| (*r, self.reads(*r))).collect(),
            writes: Region::ALL.iter().map(|r| (*r, self.writes(*r))).collect(),
        }
    }

    /// Read count per address of `region`, if tracking was enabled.
    pub fn read_histogram(&self, region: Region) -> Option<HashMap<u64, u32>> {
        self.histograms.as_ref().map(|h| {
            h.reads
                .iter()
                .filter(|((r, _), _)| *r == region)
                .map(|((_, a), c)| (*a, *c))
                .collect()
        })
    }

    pub fn write_histogram(&self, region: Region) -> Option<HashMap<u64, u32>> {
        self.histograms.as_ref().map(|h| {
            h.writes
                .iter()
                .filter(|((r, _), _)| *r == region)
                .map(|((_, a), c)| (*a, *c))
                .collect()
        })
    }

    /// Words read from streamed regions (everything but the kernel store).
    pub fn streamed_reads(&self) -> u64 {
        Region::ALL
            .iter()
            .filter(|r| **r != Region::KernelStore)
            .map(|r| self.reads(*r))
            .sum()
    }

    pub fn streamed_writes(&self) -> u64 {
        Region::ALL
            .iter()
            .filter(|r| **r != Region::KernelStore)
            .map(|r| self.writes(*r))
            .sum()
    }

    pub fn store_words(&self) -> u64 {
        self.reads(Region::KernelStore) + self.writes(Region::KernelStore)
    }
}

/// Per-region word counts of one simulated image of one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryStats {
    pub reads: Vec<(Region, u64)>,
    pub writes: Vec<(Region, u64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bursts_match_single_reads() {
        let mut a = ExternalMemory::new(false);
        let mut b = ExternalMemory::new(true);
        a.read_burst(Region::Features, 10, 5);
        b.read_burst(Region::Features, 10, 5);
        assert_eq!(a.reads(Region::Features), 5);
        assert_eq!(b.reads(Region::Features), 5);
        let h = b.read_histogram(Region::Features).unwrap();
        assert_eq!(h.len(), 5);
        assert!(h.values().all(|&c| c == 1));
        assert!(a.read_histogram(Region::Features).is_none());
    }

    #[test]
    fn store_is_separate() {
        let mut m = ExternalMemory::new(false);
        m.read_burst(Region::KernelStore, 0, 7);
        m.write(Region::Output, 0);
        assert_eq!(m.streamed_reads(), 0);
        assert_eq!(m.streamed_writes(), 1);
        assert_eq!(m.store_words(), 7);
    }
}
