//! Array-side state: pixel shifter, weights rotator, PE array and output pipe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::ArithmeticModel;

use super::header::ConfigHeader;

/// Register bank of `R + max_F` words; rows read the first `R`.
#[derive(Debug, Clone)]
pub struct PixelShifter {
    rows: usize,
    regs: Vec<i64>,
    window: usize,
}

impl PixelShifter {
    pub fn new(rows: usize, max_shift: usize) -> Self {
        PixelShifter { rows, regs: vec![0; rows + max_shift], window: rows }
    }

    pub fn configure(&mut self, header: &ConfigHeader) -> Result<()> {
        let window = self.rows + header.shift as usize;
        if window > self.regs.len() {
            return Err(Error::Header(format!(
                "shift factor {} exceeds the {} spare registers",
                header.shift,
                self.regs.len() - self.rows
            )));
        }
        self.window = window;
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn load(&mut self, beat: &[i64]) {
        debug_assert_eq!(beat.len(), self.window);
        self.regs[..self.window].copy_from_slice(beat);
    }

    /// Moves every register one position toward row 0.
    pub fn shift(&mut self) {
        self.regs[..self.window].rotate_left(1);
        self.regs[self.window - 1] = 0;
    }

    #[inline]
    pub fn rows(&self) -> &[i64] {
        &self.regs[..self.rows]
    }
}

/// Double-buffered weight store. The active bank replays one iteration's beats
/// while the standby bank fills from the weight stream.
#[derive(Debug, Clone)]
pub struct WeightsRotator {
    cores: usize,
    depth: usize,
    banks: [Vec<i64>; 2],
    active: usize,
    pending: Vec<i64>,
    budget: u64,
    elapsed: u64,
    filled: u64,
    rate: Option<f64>,
}

impl WeightsRotator {
    pub fn new(cores: usize, depth: usize) -> Self {
        WeightsRotator {
            cores,
            depth,
            banks: [Vec::new(), Vec::new()],
            active: 0,
            pending: Vec::new(),
            budget: 0,
            elapsed: 0,
            filled: 0,
            rate: None,
        }
    }

    /// `replays` is how many times the bank is read per iteration.
    pub fn check_capacity(&self, beats: usize, replays: usize) -> Result<()> {
        if replays > 1 && beats > self.depth {
            return Err(Error::RotatorCapacity { needed: beats, depth: self.depth });
        }
        Ok(())
    }

    /// Fills the active bank directly, before any clock has run.
    pub fn preload(&mut self, words: &[i64]) {
        debug_assert_eq!(words.len() % self.cores, 0);
        self.banks[self.active] = words.to_vec();
    }

    /// Starts filling the standby bank with `words` spread over `budget` clocks.
    /// `rate` caps the fill in words per clock.
    pub fn begin_prefetch(&mut self, words: &[i64], budget: u64, rate: Option<f64>) {
        self.pending = words.to_vec();
        self.banks[1 - self.active].clear();
        self.budget = budget.max(1);
        self.elapsed = 0;
        self.filled = 0;
        self.rate = rate;
    }

    pub fn tick(&mut self) {
        self.elapsed += 1;
        let needed = self.pending.len() as u64;
        let target = match self.rate {
            // Exact feed: the volume arrives evenly over the budget.
            None => (needed * self.elapsed.min(self.budget)) / self.budget,
            Some(r) => ((r * self.elapsed as f64).floor() as u64).min(needed),
        };
        if target > self.filled {
            let standby = 1 - self.active;
            let (from, to) = (self.filled as usize, target as usize);
            self.banks[standby].extend_from_slice(&self.pending[from..to]);
            self.filled = target;
        }
    }

    pub fn switch(&mut self) -> Result<()> {
        let needed = self.pending.len() as u64;
        if self.filled < needed {
            return Err(Error::RotatorUnderrun { prefetched: self.filled, needed });
        }
        self.active = 1 - self.active;
        self.pending.clear();
        self.filled = 0;
        Ok(())
    }

    #[inline]
    pub fn beat(&self, index: usize) -> &[i64] {
        &self.banks[self.active][index * self.cores..(index + 1) * self.cores]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MuxSelect {
    #[default]
    OwnProduct,
    LeftNeighborSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PeState {
    pub accumulator: i64,
    pub mux_select: MuxSelect,
    /// Products folded into the partial sum currently held.
    pub products: u32,
    /// Neighbor sums merged into it.
    pub merges: u32,
}

/// `rows x cores` PEs stored core-major.
#[derive(Debug, Clone)]
pub struct PeArray {
    rows: usize,
    cores: usize,
    pes: Vec<PeState>,
    arith: ArithmeticModel,
}

impl PeArray {
    pub fn new(rows: usize, cores: usize, arith: ArithmeticModel) -> Self {
        PeArray { rows, cores, pes: vec![PeState::default(); rows * cores], arith }
    }

    #[inline]
    pub fn pe(&self, core: usize, row: usize) -> &PeState {
        &self.pes[core * self.rows + row]
    }

    pub fn reset(&mut self) {
        self.pes.fill(PeState::default());
    }

    /// One MAC clock on `core`: every row multiplies its pixel by the broadcast weight.
    #[inline]
    pub fn mac(&mut self, core: usize, weight: i64, pixels: &[i64]) -> Result<()> {
        let base = core * self.rows;
        for (r, &x) in pixels.iter().enumerate() {
            let pe = &mut self.pes[base + r];
            pe.accumulator = self.arith.accumulate(pe.accumulator, x, weight).ok_or_else(|| Error::Overflow {
                site: format!("PE row {r} core {core}"),
                bits: self.arith.acc_bits,
            })?;
            pe.products += 1;
        }
        Ok(())
    }

    /// Shift clock: each lane takes its left neighbor's sum within groups of
    /// `group` cores, and the first lane of each group starts from zero.
    pub fn shift_groups(&mut self, group: usize, groups: usize) {
        let rows = self.rows;
        for e in 0..groups {
            let first = e * group;
            for lane in (1..group).rev() {
                let (dst, src) = ((first + lane) * rows, (first + lane - 1) * rows);
                for r in 0..rows {
                    let mut moved = self.pes[src + r];
                    if moved.products > 0 {
                        moved.merges += 1;
                    }
                    moved.mux_select = MuxSelect::LeftNeighborSum;
                    self.pes[dst + r] = moved;
                }
            }
            for r in 0..rows {
                self.pes[first * rows + r] = PeState { mux_select: MuxSelect::LeftNeighborSum, ..PeState::default() };
            }
        }
    }

    /// Accumulators resume adding their own products after the shift clock.
    pub fn release_mux(&mut self) {
        for pe in &mut self.pes {
            pe.mux_select = MuxSelect::OwnProduct;
        }
    }

    pub fn cores(&self) -> usize {
        self.cores
    }
}

/// FIFO between the array and the output stream, drained at a fixed word rate.
#[derive(Debug, Clone)]
pub struct OutputPipe {
    capacity: usize,
    rate: usize,
    occupancy: usize,
    pub peak: usize,
}

impl OutputPipe {
    pub fn new(capacity: usize, rate: usize) -> Self {
        OutputPipe { capacity, rate: rate.max(1), occupancy: 0, peak: 0 }
    }

    /// Words per clock for a layer releasing `words` every `period` clocks.
    pub fn drain_rate(words: usize, period: usize) -> usize {
        words.div_ceil(period.max(1))
    }

    pub fn push(&mut self, words: usize) -> Result<()> {
        self.occupancy += words;
        self.peak = self.peak.max(self.occupancy);
        if self.occupancy > self.capacity {
            return Err(Error::OutputOverrun { occupancy: self.occupancy, capacity: self.capacity });
        }
        Ok(())
    }

    pub fn tick(&mut self) {
        self.occupancy = self.occupancy.saturating_sub(self.rate);
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }
}
