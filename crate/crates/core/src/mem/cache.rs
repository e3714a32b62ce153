// SPDX-License-Identifier: Apache-2.0

//! Set-associative cache directories with LRU replacement.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid cache geometry: {0}")]
pub struct GeometryError(String);

/// Size, associativity and line size of one cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheGeometry {
    size: usize,
    ways: usize,
    line: usize,
}

impl CacheGeometry {
    /// Line sizes are powers of two between one word and 64 words so a
    /// line's word tags fit one `u64` mask.
    pub fn new(size: usize, ways: usize, line: usize) -> Result<Self, GeometryError> {
        if !line.is_power_of_two() || !(8..=512).contains(&line) {
            return Err(GeometryError(format!(
                "line size {line} must be a power of two in 8..=512"
            )));
        }
        if ways == 0 || size == 0 || !size.is_multiple_of(ways * line) {
            return Err(GeometryError(format!(
                "{size} bytes is not a multiple of {ways} ways x {line} bytes"
            )));
        }
        let sets = size / (ways * line);
        if !sets.is_power_of_two() {
            return Err(GeometryError(format!("set count {sets} must be a power of two")));
        }
        Ok(CacheGeometry { size, ways, line })
    }

    /// 32 KiB, 8-way, 64-byte lines.
    pub fn l1() -> Self {
        CacheGeometry {
            size: 32 * 1024,
            ways: 8,
            line: 64,
        }
    }

    /// 4 KiB, 8-way, 64-byte lines.
    pub fn tag_cache() -> Self {
        CacheGeometry {
            size: 4 * 1024,
            ways: 8,
            line: 64,
        }
    }

    /// A single one-word line: every access that is not to the last word
    /// touched goes to DRAM.
    pub fn degenerate() -> Self {
        CacheGeometry {
            size: 8,
            ways: 1,
            line: 8,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn line_bytes(&self) -> usize {
        self.line
    }

    pub fn words_per_line(&self) -> usize {
        self.line / 8
    }

    pub fn sets(&self) -> usize {
        self.size / (self.ways * self.line)
    }
}

/// Line evicted to make room for a fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Victim {
    pub line_addr: u64,
    pub dirty: bool,
}

/// Tag array of a cache, without data. `slot = set * ways + way`.
#[derive(Debug, Clone)]
pub struct Directory {
    geometry: CacheGeometry,
    line_addr: Vec<u64>,
    valid: Vec<bool>,
    dirty: Vec<bool>,
    last_use: Vec<u64>,
    clock: u64,
}

impl Directory {
    pub fn new(geometry: CacheGeometry) -> Self {
        let slots = geometry.sets() * geometry.ways();
        Directory {
            geometry,
            line_addr: vec![0; slots],
            valid: vec![false; slots],
            dirty: vec![false; slots],
            last_use: vec![0; slots],
            clock: 0,
        }
    }

    pub fn geometry(&self) -> CacheGeometry {
        self.geometry
    }

    pub fn slots(&self) -> usize {
        self.valid.len()
    }

    fn set_range(&self, line_addr: u64) -> std::ops::Range<usize> {
        let set = (line_addr / self.geometry.line as u64) as usize & (self.geometry.sets() - 1);
        let ways = self.geometry.ways();
        set * ways..(set + 1) * ways
    }

    /// Slot holding `line_addr`, without touching replacement state.
    pub fn probe(&self, line_addr: u64) -> Option<usize> {
        self.set_range(line_addr)
            .find(|&s| self.valid[s] && self.line_addr[s] == line_addr)
    }

    /// Slot holding `line_addr`, marking it most recently used.
    pub fn lookup(&mut self, line_addr: u64) -> Option<usize> {
        let slot = self.probe(line_addr)?;
        self.touch(slot);
        Some(slot)
    }

    fn touch(&mut self, slot: usize) {
        self.clock += 1;
        self.last_use[slot] = self.clock;
    }

    /// Slot to replace for `line_addr`: an invalid way if any, else LRU.
    pub fn victim_slot(&self, line_addr: u64) -> (usize, Option<Victim>) {
        let range = self.set_range(line_addr);
        if let Some(free) = range.clone().find(|&s| !self.valid[s]) {
            return (free, None);
        }
        let slot = range.min_by_key(|&s| self.last_use[s]).expect("non-empty set");
        let victim = Victim {
            line_addr: self.line_addr[slot],
            dirty: self.dirty[slot],
        };
        (slot, Some(victim))
    }

    /// Install `line_addr` clean in `slot` as most recently used.
    pub fn install(&mut self, slot: usize, line_addr: u64) {
        self.line_addr[slot] = line_addr;
        self.valid[slot] = true;
        self.dirty[slot] = false;
        self.touch(slot);
    }

    /// Access with allocate-on-miss: `(slot, hit, victim)`.
    pub fn access(&mut self, line_addr: u64) -> (usize, bool, Option<Victim>) {
        if let Some(slot) = self.lookup(line_addr) {
            return (slot, true, None);
        }
        let (slot, victim) = self.victim_slot(line_addr);
        self.install(slot, line_addr);
        (slot, false, victim)
    }

    pub fn line_addr(&self, slot: usize) -> Option<u64> {
        self.valid[slot].then_some(self.line_addr[slot])
    }

    pub fn is_dirty(&self, slot: usize) -> bool {
        self.valid[slot] && self.dirty[slot]
    }

    pub fn set_dirty(&mut self, slot: usize, dirty: bool) {
        debug_assert!(self.valid[slot]);
        self.dirty[slot] = dirty;
    }

    pub fn invalidate(&mut self, slot: usize) {
        self.valid[slot] = false;
        self.dirty[slot] = false;
    }

    pub fn invalidate_all(&mut self) {
        self.valid.fill(false);
        self.dirty.fill(false);
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.slots()).filter(|&s| self.valid[s])
    }
}
