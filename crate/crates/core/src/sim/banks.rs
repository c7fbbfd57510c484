//! `k × k` modular bank grid backing the line buffers.
//!
//! Element `(row, col)` of any map always lives in bank `(row mod k, col mod
//! k)`, at slot `col / k` of that map's column range. Any `k × k` window then
//! touches every bank exactly once, so the whole window can be read in one
//! cycle; the fetch logic undoes the rotation so the CU sees the window in
//! natural order.

/// Bank holding element `(row, col)`.
#[inline]
pub fn bank_route(_map: usize, row: usize, col: usize, k: usize) -> (usize, usize) {
    (row % k, col % k)
}

#[derive(Debug, Clone)]
struct Bank {
    words: Vec<f32>,
    /// `row + 1` of the resident element, 0 when empty.
    tags: Vec<u32>,
    reads: u64,
    writes: u64,
}

#[derive(Debug, Clone)]
pub struct BankGrid {
    k: usize,
    height: usize,
    width: usize,
    slots_per_map: usize,
    banks: Vec<Bank>,
}

impl BankGrid {
    pub fn new(k: usize, maps: usize, height: usize, width: usize) -> Self {
        assert!(k >= 1, "bank grid needs k >= 1");
        let slots_per_map = width.div_ceil(k);
        let bank = Bank {
            words: vec![0.0; maps * slots_per_map],
            tags: vec![0; maps * slots_per_map],
            reads: 0,
            writes: 0,
        };
        Self {
            k,
            height,
            width,
            slots_per_map,
            banks: vec![bank; k * k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    fn locate(&self, map: usize, row: usize, col: usize) -> (usize, usize) {
        let (a, b) = bank_route(map, row, col, self.k);
        (a * self.k + b, map * self.slots_per_map + col / self.k)
    }

    /// Writes an element; returns true when it displaced a different row.
    pub fn store(&mut self, map: usize, row: usize, col: usize, value: f32) -> bool {
        let (bank, slot) = self.locate(map, row, col);
        let b = &mut self.banks[bank];
        let old = b.tags[slot];
        b.words[slot] = value;
        b.tags[slot] = row as u32 + 1;
        b.writes += 1;
        old != 0 && old != row as u32 + 1
    }

    pub fn is_resident(&self, map: usize, row: usize, col: usize) -> bool {
        let (bank, slot) = self.locate(map, row, col);
        self.banks[bank].tags[slot] == row as u32 + 1
    }

    /// Reads the `k × k` window whose top-left corner is `(r, c)` (may be
    /// negative: out-of-map positions are zero padding generated on chip).
    ///
    /// Panics if an in-map element of the window is not resident; that is a
    /// scheduling bug, not a user error.
    pub fn window_fetch(&mut self, map: usize, r: isize, c: isize, out: &mut [f32]) {
        let k = self.k;
        debug_assert_eq!(out.len(), k * k);
        for i in 0..k {
            let row = r + i as isize;
            for j in 0..k {
                let col = c + j as isize;
                out[i * k + j] = if row < 0
                    || col < 0
                    || row as usize >= self.height
                    || col as usize >= self.width
                {
                    0.0
                } else {
                    let (row, col) = (row as usize, col as usize);
                    let (bank, slot) = self.locate(map, row, col);
                    let b = &mut self.banks[bank];
                    assert_eq!(
                        b.tags[slot],
                        row as u32 + 1,
                        "line buffer invariant violated: map {map} row {row} col {col} not resident"
                    );
                    b.reads += 1;
                    b.words[slot]
                };
            }
        }
    }

    /// Per-bank read counters, row-major over the grid.
    pub fn bank_reads(&self) -> Vec<u64> {
        self.banks.iter().map(|b| b.reads).collect()
    }

    pub fn bank_writes(&self) -> Vec<u64> {
        self.banks.iter().map(|b| b.writes).collect()
    }
}
