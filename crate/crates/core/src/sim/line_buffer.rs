//! Per-map line buffers: the `k` most recent input rows of every map, kept in
//! a [`BankGrid`]. Elements are admitted strictly in row-major order and each
//! admission costs exactly one external read.

use super::banks::BankGrid;

#[derive(Debug, Clone)]
pub struct LineBuffer {
    grid: BankGrid,
    height: usize,
    width: usize,
    /// Linear index (row · width + col) of the next element each map expects.
    cursors: Vec<usize>,
    admitted: u64,
}

impl LineBuffer {
    pub fn new(k: usize, maps: usize, height: usize, width: usize) -> Self {
        Self {
            grid: BankGrid::new(k, maps, height, width),
            height,
            width,
            cursors: vec![0; maps],
            admitted: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.grid.k()
    }

    pub fn grid_mut(&mut self) -> &mut BankGrid {
        &mut self.grid
    }

    /// Elements admitted so far over all maps.
    pub fn admitted(&self) -> u64 {
        self.admitted
    }

    /// Next `(row, col)` expected for `map`, or `None` once the map is complete.
    pub fn watermark(&self, map: usize) -> Option<(usize, usize)> {
        let cur = self.cursors[map];
        (cur < self.height * self.width).then(|| (cur / self.width, cur % self.width))
    }

    /// Admits one element. Returns whether it evicted an element of an older
    /// row. Panics on out-of-order arrival (a scheduling bug).
    pub fn push(&mut self, map: usize, row: usize, col: usize, value: f32) -> bool {
        let expect = self.cursors[map];
        assert_eq!(
            row * self.width + col,
            expect,
            "line buffer invariant violated: map {map} got ({row},{col}), expected ({},{})",
            expect / self.width,
            expect % self.width
        );
        self.cursors[map] += 1;
        self.admitted += 1;
        self.grid.store(map, row, col, value)
    }

    /// Streams in whatever the window with top row `top` and right edge
    /// `col_end` (exclusive) still needs for `map`: all rows above the band's
    /// last in-map row are completed and that row is filled up to `col_end`.
    /// `fetch(row, col)` performs the external read. Returns the number of
    /// elements admitted.
    pub fn ensure(
        &mut self,
        map: usize,
        top: isize,
        col_end: isize,
        mut fetch: impl FnMut(usize, usize) -> f32,
    ) -> usize {
        let k = self.k() as isize;
        let last_row = (top + k).min(self.height as isize) - 1;
        if last_row < 0 {
            return 0;
        }
        let cols = col_end.clamp(0, self.width as isize) as usize;
        let target = last_row as usize * self.width + cols;
        let mut loaded = 0;
        while self.cursors[map] < target {
            let cur = self.cursors[map];
            let (row, col) = (cur / self.width, cur % self.width);
            let v = fetch(row, col);
            self.push(map, row, col, v);
            loaded += 1;
        }
        loaded
    }
}
