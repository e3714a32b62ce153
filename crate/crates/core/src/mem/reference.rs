// SPDX-License-Identifier: Apache-2.0

//! Cache-free reference model of the logical memory, used in checking mode.
//!
//! It records, per written word, the logical value, the tag and the thread
//! whose key last encrypted it, and from that predicts both what any thread
//! should read and what DRAM must contain once everything is flushed.

use std::collections::BTreeMap;

use crate::crypt::{derive_thread_key, qarma_decrypt, qarma_encrypt, Key128, Tweak};

use super::KeyCtx;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RefWord {
    value: u64,
    tag: bool,
    owner: u64,
}

#[derive(Debug, Clone)]
pub struct ReferenceMemory {
    master: Key128,
    words: BTreeMap<u64, RefWord>,
}

impl ReferenceMemory {
    pub fn new(master: Key128) -> Self {
        ReferenceMemory {
            master,
            words: BTreeMap::new(),
        }
    }

    fn key(&self, tid: u64) -> Key128 {
        derive_thread_key(self.master, tid)
    }

    /// What thread `ctx` observes at the word `word_addr`.
    pub fn view(&self, word_addr: u64, ctx: KeyCtx) -> (u64, bool) {
        match self.words.get(&word_addr) {
            None => (0, false),
            Some(w) if w.tag && w.owner != ctx.tid => {
                let at_rest = qarma_encrypt(self.key(w.owner), Tweak(word_addr), w.value);
                (qarma_decrypt(ctx.key, Tweak(word_addr), at_rest), true)
            }
            Some(w) => (w.value, w.tag),
        }
    }

    pub fn record_image_word(&mut self, word_addr: u64, value: u64) {
        self.words.insert(
            word_addr,
            RefWord {
                value,
                tag: false,
                owner: 0,
            },
        );
    }

    /// A store of `bytes` at `addr` (within one word) with hardware tag `tag`.
    pub fn record_store(&mut self, addr: u64, bytes: &[u8], tag: bool, ctx: KeyCtx) {
        let word_addr = addr & !7;
        let offset = (addr - word_addr) as usize;
        let (seen, seen_tag) = self.view(word_addr, ctx);
        let mut le = seen.to_le_bytes();
        le[offset..offset + bytes.len()].copy_from_slice(bytes);
        let full = bytes.len() == 8;
        let tag = if full { tag } else { tag || seen_tag };
        self.words.insert(
            word_addr,
            RefWord {
                value: u64::from_le_bytes(le),
                tag,
                owner: ctx.tid,
            },
        );
    }

    pub fn record_tag(&mut self, word_addr: u64, set: bool, ctx: KeyCtx) {
        let (seen, seen_tag) = self.view(word_addr, ctx);
        if seen_tag == set {
            return;
        }
        self.words.insert(
            word_addr,
            RefWord {
                value: seen,
                tag: set,
                owner: ctx.tid,
            },
        );
    }

    /// Words whose flushed DRAM state disagrees with the model.
    /// `dram(word_addr)` returns the raw word and its shadow tag.
    pub fn check_flushed(&self, mut dram: impl FnMut(u64) -> (u64, bool)) -> Vec<u64> {
        let mut bad = Vec::new();
        for (&addr, w) in &self.words {
            let (raw, tag) = dram(addr);
            let expect = if w.tag {
                qarma_encrypt(self.key(w.owner), Tweak(addr), w.value)
            } else {
                w.value
            };
            if tag != w.tag || raw != expect {
                bad.push(addr);
            }
        }
        bad
    }

    pub fn is_tagged(&self, word_addr: u64) -> bool {
        self.words.get(&word_addr).is_some_and(|w| w.tag)
    }
}
