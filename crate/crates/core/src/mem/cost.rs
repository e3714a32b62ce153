// SPDX-License-Identifier: Apache-2.0

use serde::Serialize;

/// Which hardware the cycle accounting models.
///
/// All three execute identically; they differ only in what the tag and
/// cipher traffic costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleModel {
    /// No tagged-memory extension: tags and cipher are free.
    Baseline,
    /// Tags in a shadow DRAM region, one extra DRAM access per line transfer.
    ModelA,
    /// Model A plus a small dedicated tag cache.
    ModelB,
}

impl CycleModel {
    pub const ALL: [CycleModel; 3] = [CycleModel::Baseline, CycleModel::ModelA, CycleModel::ModelB];

    pub fn is_tagged(self) -> bool {
        self != CycleModel::Baseline
    }

    pub fn name(self) -> &'static str {
        match self {
            CycleModel::Baseline => "baseline",
            CycleModel::ModelA => "a",
            CycleModel::ModelB => "b",
        }
    }
}

/// Per-event cycle costs shared by every model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleCosts {
    pub alu: u64,
    pub mul: u64,
    pub div: u64,
    /// Load hit that stays inside one 8-byte word.
    pub load_hit: u64,
    /// Load hit that crosses an 8-byte boundary.
    pub load_hit_crossing: u64,
    pub store_hit: u64,
    pub branch: u64,
    pub mispredict_penalty: u64,
    pub jump: u64,
    pub system: u64,
    pub dram_latency: u64,
    pub cipher_block: u64,
    pub tag_cache_hit: u64,
}

impl Default for CycleCosts {
    fn default() -> Self {
        CycleCosts {
            alu: 1,
            mul: 3,
            div: 33,
            load_hit: 2,
            load_hit_crossing: 3,
            store_hit: 1,
            branch: 1,
            mispredict_penalty: 3,
            jump: 2,
            system: 1,
            dram_latency: 60,
            cipher_block: 4,
            tag_cache_hit: 1,
        }
    }
}

impl CycleCosts {
    pub fn with_dram_latency(mut self, latency: u64) -> Self {
        self.dram_latency = latency;
        self
    }

    pub fn all_positive(&self) -> bool {
        [
            self.alu,
            self.mul,
            self.div,
            self.load_hit,
            self.load_hit_crossing,
            self.store_hit,
            self.branch,
            self.mispredict_penalty,
            self.jump,
            self.system,
            self.dram_latency,
            self.cipher_block,
            self.tag_cache_hit,
        ]
        .iter()
        .all(|&c| c > 0)
    }
}
