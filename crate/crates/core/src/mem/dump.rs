// SPDX-License-Identifier: Apache-2.0

use std::fmt;

/// The attacker's view of a DRAM range: raw words (ciphertext where tagged)
/// and the shadow tag bits. Produced only after a full flush.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDump {
    pub base: u64,
    pub words: Vec<(u64, bool)>,
}

impl RawDump {
    /// Little-endian byte image of the dumped words.
    pub fn bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|(w, _)| w.to_le_bytes()).collect()
    }

    pub fn word_at(&self, addr: u64) -> Option<(u64, bool)> {
        let offset = addr.checked_sub(self.base)?;
        if offset % 8 != 0 {
            return None;
        }
        self.words.get((offset / 8) as usize).copied()
    }
}

impl fmt::Display for RawDump {
    /// One `address: word tag` line per word; a `#` comment line heads each
    /// group of eight words.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (word, tag)) in self.words.iter().enumerate() {
            let addr = self.base + 8 * i as u64;
            if i % 8 == 0 {
                writeln!(f, "# {addr:#018x}")?;
            }
            writeln!(f, "{addr:016x}: {word:016x} {}", u8::from(*tag))?;
        }
        Ok(())
    }
}
