// SPDX-License-Identifier: Apache-2.0

//! The tagged memory hierarchy.
//!
//! Registers and caches hold plaintext with one tag bit per 64-bit word.
//! DRAM holds ciphertext for tagged words: each dirty line is encrypted word
//! by word on writeback (key = current thread key, tweak = word address) and
//! decrypted on fill. The shadow tag store sits next to DRAM, one bit per
//! word, outside the simulated address space.
//!
//! Alongside the hardware tags the system keeps a byte-granularity taint
//! map (the oracle) used to measure over-tagging and to check that no
//! sensitive byte ever sits in an untagged word.
//!
//! Architectural results never depend on the cycle model or cache
//! geometry; only the cycle and traffic counters do.

mod cache;
mod cost;
mod dump;
mod reference;

pub use cache::{CacheGeometry, Directory, GeometryError, Victim};
pub use cost::{CycleCosts, CycleModel};
pub use dump::RawDump;
pub use reference::ReferenceMemory;

use serde::Serialize;
use thiserror::Error;

use crate::crypt::{qarma_decrypt, qarma_encrypt, Key128, Tweak};

pub const DEFAULT_DRAM_BASE: u64 = 0x8000_0000;
pub const DEFAULT_DRAM_SIZE: u64 = 64 * 1024 * 1024;

/// The key the memory engine uses for the running thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyCtx {
    pub tid: u64,
    pub key: Key128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("access of {len} bytes at {addr:#x} is outside DRAM")]
    OutOfBounds { addr: u64, len: u64 },
    #[error("misaligned {width}-byte access at {addr:#x}")]
    Misaligned { addr: u64, width: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemConfig {
    pub base: u64,
    pub size: u64,
    pub dcache: CacheGeometry,
    pub icache: CacheGeometry,
    pub tag_cache: CacheGeometry,
    pub model: CycleModel,
    pub costs: CycleCosts,
    /// Reject loads and stores that are not naturally aligned.
    pub strict_align: bool,
}

impl Default for MemConfig {
    fn default() -> Self {
        MemConfig {
            base: DEFAULT_DRAM_BASE,
            size: DEFAULT_DRAM_SIZE,
            dcache: CacheGeometry::l1(),
            icache: CacheGeometry::l1(),
            tag_cache: CacheGeometry::tag_cache(),
            model: CycleModel::ModelB,
            costs: CycleCosts::default(),
            strict_align: false,
        }
    }
}

/// Hit/miss and traffic counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MemStats {
    pub dcache_hits: u64,
    pub dcache_misses: u64,
    pub icache_hits: u64,
    pub icache_misses: u64,
    pub tagcache_hits: u64,
    pub tagcache_misses: u64,
    pub dram_data_accesses: u64,
    pub dram_tag_accesses: u64,
    pub cipher_blocks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadResult {
    pub value: u64,
    /// OR of the tags of every word the access touched.
    pub tag: bool,
    /// Oracle taint of the loaded bytes, bit `i` for byte `i`.
    pub taint: u8,
    pub cycles: u64,
}

/// Violations found in checking mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CheckLog {
    /// A word held an oracle-tainted byte while its hardware tag was 0.
    pub under_tagged_words: u64,
    /// A word with tainted bytes was written to DRAM as plaintext.
    pub plaintext_writebacks: u64,
    /// A load returned something other than the reference model's view.
    pub load_mismatches: u64,
    /// After a flush, DRAM disagreed with the reference model.
    pub flush_mismatches: u64,
}

impl CheckLog {
    pub fn total(&self) -> u64 {
        self.under_tagged_words + self.plaintext_writebacks + self.load_mismatches + self.flush_mismatches
    }
}

#[derive(Debug, Clone)]
struct Checker {
    reference: ReferenceMemory,
    log: CheckLog,
    touched: Vec<u64>,
}

/// Final tag census, taken after a flush.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TagCensus {
    pub words_tagged: u64,
    pub bytes_tainted: u64,
    /// Bytes inside tagged words whose oracle bit is 0.
    pub overtagged_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct MemorySystem {
    cfg: MemConfig,
    dram: Vec<u64>,
    /// Shadow tag store, one bit per DRAM word.
    tags: Vec<u64>,
    /// Oracle byte taints, one mask per DRAM word.
    oracle: Vec<u8>,
    dcache: Directory,
    dcache_data: Vec<u64>,
    dcache_tags: Vec<u64>,
    icache: Directory,
    tag_cache: Directory,
    stats: MemStats,
    overtag_cycles: u64,
    checker: Option<Box<Checker>>,
}

fn align_up(x: u64, a: u64) -> u64 {
    x.div_ceil(a) * a
}

impl MemorySystem {
    /// # Panics
    ///
    /// If the DRAM range is not line-aligned or not a whole number of words.
    pub fn new(cfg: MemConfig) -> Self {
        let words = (cfg.size / 8) as usize;
        assert!(
            cfg.size.is_multiple_of(8) && cfg.size > 0,
            "DRAM size must be a positive multiple of 8"
        );
        for g in [cfg.dcache, cfg.icache, cfg.tag_cache] {
            assert_eq!(cfg.base % g.line_bytes() as u64, 0, "DRAM base must be line aligned");
        }
        let slots = cfg.dcache.sets() * cfg.dcache.ways();
        MemorySystem {
            dram: vec![0; words],
            tags: vec![0; words.div_ceil(64)],
            oracle: vec![0; words],
            dcache: Directory::new(cfg.dcache),
            dcache_data: vec![0; slots * cfg.dcache.words_per_line()],
            dcache_tags: vec![0; slots],
            icache: Directory::new(cfg.icache),
            tag_cache: Directory::new(cfg.tag_cache),
            stats: MemStats::default(),
            overtag_cycles: 0,
            checker: None,
            cfg,
        }
    }

    /// Turn on the reference model and continuous invariant checks.
    /// Must be called before any content is written.
    pub fn enable_checking(&mut self, master: Key128) {
        self.checker = Some(Box::new(Checker {
            reference: ReferenceMemory::new(master),
            log: CheckLog::default(),
            touched: Vec::new(),
        }));
    }

    pub fn check_log(&self) -> Option<CheckLog> {
        self.checker.as_ref().map(|c| c.log)
    }

    pub fn config(&self) -> &MemConfig {
        &self.cfg
    }

    pub fn model(&self) -> CycleModel {
        self.cfg.model
    }

    pub fn stats(&self) -> MemStats {
        self.stats
    }

    /// Cipher cycles spent on tagged words that hold no oracle-tainted byte.
    pub fn overtag_cycles(&self) -> u64 {
        self.overtag_cycles
    }

    pub fn base(&self) -> u64 {
        self.cfg.base
    }

    pub fn end(&self) -> u64 {
        self.cfg.base + self.cfg.size
    }

    /// Bytes of shadow tag storage.
    pub fn tag_store_bytes(&self) -> u64 {
        self.tags.len() as u64 * 8
    }

    pub fn check_bounds(&self, addr: u64, len: u64) -> Result<(), MemError> {
        let end = addr.checked_add(len).ok_or(MemError::OutOfBounds { addr, len })?;
        if addr < self.cfg.base || end > self.end() {
            return Err(MemError::OutOfBounds { addr, len });
        }
        Ok(())
    }

    fn check_access(&self, addr: u64, width: u64) -> Result<(), MemError> {
        self.check_bounds(addr, width)?;
        if self.cfg.strict_align && !addr.is_multiple_of(width) {
            return Err(MemError::Misaligned { addr, width });
        }
        Ok(())
    }

    fn index(&self, addr: u64) -> usize {
        ((addr - self.cfg.base) / 8) as usize
    }

    fn shadow_tag(&self, idx: usize) -> bool {
        self.tags[idx / 64] >> (idx % 64) & 1 == 1
    }

    fn set_shadow_tag(&mut self, idx: usize, tag: bool) {
        let bit = 1u64 << (idx % 64);
        if tag {
            self.tags[idx / 64] |= bit;
        } else {
            self.tags[idx / 64] &= !bit;
        }
    }

    fn dline(&self, addr: u64) -> u64 {
        addr & !(self.cfg.dcache.line_bytes() as u64 - 1)
    }

    fn dslot_word(&self, slot: usize, addr: u64) -> (usize, usize) {
        let wpl = self.cfg.dcache.words_per_line();
        let w = ((addr - self.dline(addr)) / 8) as usize;
        (slot * wpl + w, w)
    }

    /// Shadow-region line holding the tag bits for `addr`. One tag-cache line
    /// covers `line_bytes * 64` bytes of data (4 KiB for 64-byte lines).
    pub fn tag_line_of(&self, addr: u64) -> u64 {
        let line = self.cfg.tag_cache.line_bytes() as u64;
        let reach = line * 64;
        (addr - self.cfg.base) / reach * line
    }

    fn cipher_cost(&mut self, blocks: u64, overtagged: u64) -> u64 {
        if !self.cfg.model.is_tagged() {
            return 0;
        }
        self.stats.cipher_blocks += blocks;
        self.overtag_cycles += overtagged * self.cfg.costs.cipher_block;
        blocks * self.cfg.costs.cipher_block
    }

    /// Cycles to encrypt the word at `wa` for output (one cipher block in the
    /// tagged models).
    pub fn emission_cycles(&mut self, wa: u64) -> u64 {
        let over = u64::from(self.oracle_mask(wa) == 0);
        self.cipher_cost(1, over)
    }

    /// Tag traffic for one line transfer; returns the line's shadow tag bits
    /// and the cycles charged under the current model.
    pub fn tag_lookup(&mut self, line_addr: u64, write: bool) -> (u64, u64) {
        let first = self.index(line_addr);
        let wpl = self.cfg.dcache.words_per_line();
        let bits = (0..wpl).fold(0u64, |m, w| m | (u64::from(self.shadow_tag(first + w)) << w));
        let costs = self.cfg.costs;
        let cycles = match self.cfg.model {
            CycleModel::Baseline => 0,
            CycleModel::ModelA => {
                self.stats.dram_tag_accesses += 1;
                costs.dram_latency
            }
            CycleModel::ModelB => {
                let tl = self.tag_line_of(line_addr);
                let (slot, hit, victim) = self.tag_cache.access(tl);
                let mut cycles;
                if hit {
                    self.stats.tagcache_hits += 1;
                    cycles = costs.tag_cache_hit;
                } else {
                    self.stats.tagcache_misses += 1;
                    self.stats.dram_tag_accesses += 1;
                    cycles = costs.dram_latency;
                    if victim.is_some_and(|v| v.dirty) {
                        self.stats.dram_tag_accesses += 1;
                        cycles += costs.dram_latency;
                    }
                }
                if write {
                    self.tag_cache.set_dirty(slot, true);
                }
                cycles
            }
        };
        (bits, cycles)
    }

    /// Write a dirty data-cache line back to DRAM, encrypting tagged words.
    fn line_writeback(&mut self, slot: usize, ctx: KeyCtx) -> u64 {
        let la = self.dcache.line_addr(slot).expect("writeback of invalid slot");
        let wpl = self.cfg.dcache.words_per_line();
        let mask = self.dcache_tags[slot];
        let (mut blocks, mut over, mut changed) = (0, 0, false);
        for w in 0..wpl {
            let addr = la + 8 * w as u64;
            let idx = self.index(addr);
            let value = self.dcache_data[slot * wpl + w];
            let tagged = mask >> w & 1 == 1;
            if tagged {
                self.dram[idx] = qarma_encrypt(ctx.key, Tweak(addr), value);
                blocks += 1;
                if self.oracle[idx] == 0 {
                    over += 1;
                }
            } else {
                self.dram[idx] = value;
                if self.oracle[idx] != 0 {
                    if let Some(c) = self.checker.as_mut() {
                        c.log.plaintext_writebacks += 1;
                    }
                }
            }
            changed |= self.shadow_tag(idx) != tagged;
            self.set_shadow_tag(idx, tagged);
        }
        self.dcache.set_dirty(slot, false);
        self.stats.dram_data_accesses += 1;
        // The tag line only becomes dirty when a bit actually changes.
        let (_, tag_cycles) = self.tag_lookup(la, changed);
        self.cfg.costs.dram_latency + tag_cycles + self.cipher_cost(blocks, over)
    }

    /// Fill `slot` with `line_addr` from DRAM, decrypting tagged words.
    fn line_fill(&mut self, line_addr: u64, slot: usize, ctx: KeyCtx) -> u64 {
        let wpl = self.cfg.dcache.words_per_line();
        let (mask, tag_cycles) = self.tag_lookup(line_addr, false);
        let (mut blocks, mut over) = (0, 0);
        for w in 0..wpl {
            let addr = line_addr + 8 * w as u64;
            let idx = self.index(addr);
            let raw = self.dram[idx];
            self.dcache_data[slot * wpl + w] = if mask >> w & 1 == 1 {
                blocks += 1;
                if self.oracle[idx] == 0 {
                    over += 1;
                }
                qarma_decrypt(ctx.key, Tweak(addr), raw)
            } else {
                raw
            };
        }
        self.dcache_tags[slot] = mask;
        self.stats.dram_data_accesses += 1;
        self.cfg.costs.dram_latency + tag_cycles + self.cipher_cost(blocks, over)
    }

    /// Make the line holding `addr` resident; returns its slot and the miss
    /// penalty (0 on a hit).
    fn ensure_line(&mut self, addr: u64, ctx: KeyCtx) -> (usize, u64) {
        let la = self.dline(addr);
        if let Some(slot) = self.dcache.lookup(la) {
            self.stats.dcache_hits += 1;
            return (slot, 0);
        }
        self.stats.dcache_misses += 1;
        let (slot, victim) = self.dcache.victim_slot(la);
        let mut cycles = 0;
        if victim.is_some_and(|v| v.dirty) {
            cycles += self.line_writeback(slot, ctx);
        }
        self.dcache.install(slot, la);
        (slot, cycles + self.line_fill(la, slot, ctx))
    }

    /// Logical value and tag of the word containing `addr`, with no timing or
    /// replacement side effects.
    pub fn peek_word(&self, addr: u64, ctx: KeyCtx) -> (u64, bool) {
        let wa = addr & !7;
        if let Some(slot) = self.dcache.probe(self.dline(wa)) {
            let (i, w) = self.dslot_word(slot, wa);
            return (self.dcache_data[i], self.dcache_tags[slot] >> w & 1 == 1);
        }
        let idx = self.index(wa);
        let raw = self.dram[idx];
        if self.shadow_tag(idx) {
            (qarma_decrypt(ctx.key, Tweak(wa), raw), true)
        } else {
            (raw, false)
        }
    }

    /// Oracle taint mask of the word containing `addr`.
    pub fn oracle_mask(&self, addr: u64) -> u8 {
        self.oracle[self.index(addr & !7)]
    }

    fn words_spanned(addr: u64, len: u64) -> impl Iterator<Item = u64> {
        let first = addr & !7;
        let last = (addr + len - 1) & !7;
        (first..=last).step_by(8)
    }

    pub fn load(&mut self, addr: u64, width: u64, signed: bool, ctx: KeyCtx) -> Result<LoadResult, MemError> {
        self.check_access(addr, width)?;
        let end = addr + width;
        let costs = self.cfg.costs;
        let mut cycles = if (addr & !7) != ((end - 1) & !7) {
            costs.load_hit_crossing
        } else {
            costs.load_hit
        };
        let mut bytes = [0u8; 8];
        let (mut tag, mut taint) = (false, 0u8);
        for wa in Self::words_spanned(addr, width) {
            let (slot, penalty) = self.ensure_line(wa, ctx);
            cycles += penalty;
            let (i, w) = self.dslot_word(slot, wa);
            let value = self.dcache_data[i];
            let word_tag = self.dcache_tags[slot] >> w & 1 == 1;
            tag |= word_tag;
            let le = value.to_le_bytes();
            let oracle = self.oracle[self.index(wa)];
            for b in addr.max(wa)..end.min(wa + 8) {
                let (src, dst) = ((b - wa) as usize, (b - addr) as usize);
                bytes[dst] = le[src];
                taint |= (oracle >> src & 1) << dst;
            }
            if let Some(c) = self.checker.as_mut() {
                if c.reference.view(wa, ctx) != (value, word_tag) {
                    c.log.load_mismatches += 1;
                }
            }
        }
        let mut value = u64::from_le_bytes(bytes);
        if signed && width < 8 {
            let shift = 64 - 8 * width;
            value = ((value << shift) as i64 >> shift) as u64;
        }
        Ok(LoadResult {
            value,
            tag,
            taint,
            cycles,
        })
    }

    /// Store the low `width` bytes of `value`. A store that overwrites a whole
    /// word sets its tag to `tag`; any narrower store ORs `tag` into the
    /// word's existing tag. Oracle bytes take the bits of `taint`.
    pub fn store(
        &mut self,
        addr: u64,
        width: u64,
        value: u64,
        tag: bool,
        taint: u8,
        ctx: KeyCtx,
    ) -> Result<u64, MemError> {
        self.check_access(addr, width)?;
        let end = addr + width;
        let src = value.to_le_bytes();
        let mut cycles = self.cfg.costs.store_hit;
        for wa in Self::words_spanned(addr, width) {
            let (slot, penalty) = self.ensure_line(wa, ctx);
            cycles += penalty;
            let (i, w) = self.dslot_word(slot, wa);
            let mut le = self.dcache_data[i].to_le_bytes();
            let idx = self.index(wa);
            let (lo, hi) = (addr.max(wa), end.min(wa + 8));
            for b in lo..hi {
                let (dst, s) = ((b - wa) as usize, (b - addr) as usize);
                le[dst] = src[s];
                let bit = 1u8 << dst;
                if taint >> s & 1 == 1 {
                    self.oracle[idx] |= bit;
                } else {
                    self.oracle[idx] &= !bit;
                }
            }
            self.dcache_data[i] = u64::from_le_bytes(le);
            let full = lo == wa && hi == wa + 8;
            let old = self.dcache_tags[slot] >> w & 1 == 1;
            let new = if full { tag } else { old || tag };
            self.dcache_tags[slot] = (self.dcache_tags[slot] & !(1 << w)) | (u64::from(new) << w);
            self.dcache.set_dirty(slot, true);
            if let Some(c) = self.checker.as_mut() {
                let part = &src[(lo - addr) as usize..(hi - addr) as usize];
                c.reference.record_store(lo, part, tag, ctx);
                c.touched.push(wa);
            }
        }
        Ok(cycles)
    }

    /// Set (`set = true`) or clear tags over `[addr, addr + len)`.
    ///
    /// Setting tags every word the range overlaps. Clearing only affects
    /// words fully inside the range, so a word that still holds bytes outside
    /// it stays tagged. Oracle taints follow the byte range exactly.
    ///
    /// Tagged models route each word through the data cache (fill, retag,
    /// dirty). The baseline has no tag hardware to pay for, so it updates the
    /// word in place without disturbing cache timing state.
    pub fn tag_range(&mut self, addr: u64, len: u64, set: bool, ctx: KeyCtx) -> Result<u64, MemError> {
        if len == 0 {
            return Ok(0);
        }
        self.check_bounds(addr, len)?;
        let end = addr + len;
        for b in addr..end {
            let idx = self.index(b);
            let bit = 1u8 << (b % 8);
            if set {
                self.oracle[idx] |= bit;
            } else {
                self.oracle[idx] &= !bit;
            }
        }
        let words: Vec<u64> = if set {
            Self::words_spanned(addr, len).collect()
        } else {
            (align_up(addr, 8)..end & !7).step_by(8).collect()
        };
        let mut cycles = 0;
        for wa in words {
            if self.cfg.model.is_tagged() {
                let (slot, penalty) = self.ensure_line(wa, ctx);
                cycles += penalty + self.cfg.costs.store_hit;
                let (_, w) = self.dslot_word(slot, wa);
                self.dcache_tags[slot] = (self.dcache_tags[slot] & !(1 << w)) | (u64::from(set) << w);
                self.dcache.set_dirty(slot, true);
            } else {
                self.retag_in_place(wa, set, ctx);
            }
            if let Some(c) = self.checker.as_mut() {
                c.reference.record_tag(wa, set, ctx);
                c.touched.push(wa);
            }
        }
        Ok(cycles)
    }

    fn retag_in_place(&mut self, wa: u64, set: bool, ctx: KeyCtx) {
        let idx = self.index(wa);
        if let Some(slot) = self.dcache.probe(self.dline(wa)) {
            let (i, w) = self.dslot_word(slot, wa);
            if (self.dcache_tags[slot] >> w & 1 == 1) == set {
                return;
            }
            self.dcache_tags[slot] ^= 1 << w;
            if !self.dcache.is_dirty(slot) {
                // Write through so the clean line still matches DRAM.
                let v = self.dcache_data[i];
                self.dram[idx] = if set { qarma_encrypt(ctx.key, Tweak(wa), v) } else { v };
                self.set_shadow_tag(idx, set);
            }
        } else {
            if self.shadow_tag(idx) == set {
                return;
            }
            let raw = self.dram[idx];
            self.dram[idx] = if set {
                qarma_encrypt(ctx.key, Tweak(wa), raw)
            } else {
                qarma_decrypt(ctx.key, Tweak(wa), raw)
            };
            self.set_shadow_tag(idx, set);
        }
    }

    /// Tag of the word containing `addr`, read the way the running model's
    /// hardware would.
    pub fn read_tag(&mut self, addr: u64, ctx: KeyCtx) -> Result<(bool, u64), MemError> {
        self.check_bounds(addr, 1)?;
        if !self.cfg.model.is_tagged() {
            return Ok((self.peek_word(addr, ctx).1, 0));
        }
        let (slot, penalty) = self.ensure_line(addr, ctx);
        let (_, w) = self.dslot_word(slot, addr & !7);
        Ok((self.dcache_tags[slot] >> w & 1 == 1, penalty + self.cfg.costs.load_hit))
    }

    /// Fetch the instruction word at `pc`; returns it with the miss penalty.
    pub fn fetch(&mut self, pc: u64, ctx: KeyCtx) -> Result<(u32, u64), MemError> {
        self.check_bounds(pc, 4)?;
        if !pc.is_multiple_of(4) {
            return Err(MemError::Misaligned { addr: pc, width: 4 });
        }
        let line = self.cfg.icache.line_bytes() as u64;
        let la = pc & !(line - 1);
        let (_, hit, _) = self.icache.access(la);
        let mut cycles = 0;
        if hit {
            self.stats.icache_hits += 1;
        } else {
            self.stats.icache_misses += 1;
            self.stats.dram_data_accesses += 1;
            let (_, tag_cycles) = self.tag_lookup(self.dline(la), false);
            let tagged: Vec<u64> = (la..la + line)
                .step_by(8)
                .filter(|&wa| self.peek_word(wa, ctx).1)
                .collect();
            let over = tagged.iter().filter(|&&wa| self.oracle_mask(wa) == 0).count() as u64;
            cycles = self.cfg.costs.dram_latency + tag_cycles + self.cipher_cost(tagged.len() as u64, over);
        }
        let (word, _) = self.peek_word(pc, ctx);
        Ok(((word >> ((pc & 4) * 8)) as u32, cycles))
    }

    /// Write back every dirty line, invalidate the caches and leave DRAM in
    /// its at-rest form. Dirty tag-cache lines are written back and kept.
    pub fn flush(&mut self, ctx: KeyCtx) -> u64 {
        let mut cycles = 0;
        let occupied: Vec<usize> = self.dcache.occupied().collect();
        for slot in occupied {
            if self.dcache.is_dirty(slot) {
                cycles += self.line_writeback(slot, ctx);
            }
            self.dcache.invalidate(slot);
        }
        self.icache.invalidate_all();
        let dirty_tags: Vec<usize> = self
            .tag_cache
            .occupied()
            .filter(|&s| self.tag_cache.is_dirty(s))
            .collect();
        for slot in dirty_tags {
            self.stats.dram_tag_accesses += 1;
            cycles += self.cfg.costs.dram_latency;
            self.tag_cache.set_dirty(slot, false);
        }
        if let Some(c) = &self.checker {
            let bad = c
                .reference
                .check_flushed(|wa| {
                    let idx = self.index(wa);
                    (self.dram[idx], self.shadow_tag(idx))
                })
                .len() as u64;
            let stray = self
                .tagged_word_addrs()
                .filter(|wa| !self.reference_tagged(*wa))
                .count() as u64;
            if let Some(c) = self.checker.as_mut() {
                c.log.flush_mismatches += bad + stray;
            }
        }
        cycles
    }

    fn reference_tagged(&self, wa: u64) -> bool {
        self.checker.as_ref().is_some_and(|c| c.reference.is_tagged(wa))
    }

    fn tagged_word_addrs(&self) -> impl Iterator<Item = u64> + '_ {
        let base = self.cfg.base;
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .flat_map(move |(i, &bits)| {
                (0..64)
                    .filter(move |k| bits >> k & 1 == 1)
                    .map(move |k| base + 8 * (i as u64 * 64 + k))
            })
    }

    /// Flush, then return the raw DRAM words and tag bits covering
    /// `[addr, addr + len)`, widened to whole words.
    pub fn raw_dump(&mut self, addr: u64, len: u64, ctx: KeyCtx) -> Result<RawDump, MemError> {
        self.check_bounds(addr, len.max(1))?;
        self.flush(ctx);
        let first = addr & !7;
        let end = align_up(addr + len, 8);
        let words = (first..end)
            .step_by(8)
            .map(|wa| {
                let idx = self.index(wa);
                (self.dram[idx], self.shadow_tag(idx))
            })
            .collect();
        Ok(RawDump { base: first, words })
    }

    /// Raw DRAM word and shadow tag, as currently stored (no flush).
    pub fn raw_word(&self, addr: u64) -> (u64, bool) {
        let idx = self.index(addr & !7);
        (self.dram[idx], self.shadow_tag(idx))
    }

    /// Copy program bytes straight into DRAM with tags cleared.
    ///
    /// # Panics
    ///
    /// If the data cache holds any line.
    pub fn write_image(&mut self, addr: u64, bytes: &[u8]) -> Result<(), MemError> {
        assert!(
            self.dcache.occupied().next().is_none(),
            "image must be loaded into a cold hierarchy"
        );
        self.check_bounds(addr, bytes.len() as u64)?;
        for (i, &b) in bytes.iter().enumerate() {
            let a = addr + i as u64;
            let idx = self.index(a);
            let shift = (a % 8) * 8;
            self.dram[idx] = (self.dram[idx] & !(0xff << shift)) | (u64::from(b) << shift);
            self.set_shadow_tag(idx, false);
            self.oracle[idx] &= !(1 << (a % 8));
        }
        if let Some(c) = self.checker.as_mut() {
            if !bytes.is_empty() {
                for wa in Self::words_spanned(addr, bytes.len() as u64) {
                    let idx = ((wa - self.cfg.base) / 8) as usize;
                    c.reference.record_image_word(wa, self.dram[idx]);
                }
            }
        }
        Ok(())
    }

    /// Check the words touched since the last call: none may hold a tainted
    /// byte while untagged. Returns the number of violations found.
    pub fn check_touched(&mut self, ctx: KeyCtx) -> u64 {
        let Some(c) = self.checker.as_mut() else { return 0 };
        let touched = std::mem::take(&mut c.touched);
        let bad = touched
            .iter()
            .filter(|&&wa| self.oracle_mask(wa) != 0 && !self.peek_word(wa, ctx).1)
            .count() as u64;
        if let Some(c) = self.checker.as_mut() {
            c.log.under_tagged_words += bad;
        }
        bad
    }

    /// Full scan for words with a tainted byte but no tag.
    pub fn under_tagged_words(&self, ctx: KeyCtx) -> u64 {
        self.oracle
            .iter()
            .enumerate()
            .filter(|(_, &m)| m != 0)
            .filter(|&(i, _)| !self.peek_word(self.cfg.base + 8 * i as u64, ctx).1)
            .count() as u64
    }

    /// Census of tags against oracle taints. Exact only once flushed.
    pub fn tag_census(&self) -> TagCensus {
        let mut census = TagCensus::default();
        for (i, &mask) in self.oracle.iter().enumerate() {
            census.bytes_tainted += u64::from(mask.count_ones());
            if self.shadow_tag(i) {
                census.words_tagged += 1;
                census.overtagged_bytes += u64::from(8 - mask.count_ones());
            }
        }
        census
    }

    /// Every logical word that is non-zero or tagged, for cross-run
    /// comparison. Only meaningful after a flush.
    pub fn logical_image(&self, ctx: KeyCtx) -> Vec<(u64, u64, bool)> {
        (0..self.dram.len())
            .filter(|&i| self.dram[i] != 0 || self.shadow_tag(i))
            .map(|i| {
                let wa = self.cfg.base + 8 * i as u64;
                let (v, t) = self.peek_word(wa, ctx);
                (wa, v, t)
            })
            .collect()
    }
}
