// SPDX-License-Identifier: Apache-2.0

//! QARMA-64 tweakable block cipher and the processor key hierarchy.
//!
//! The memory engine uses the five-round instance with the σ₁ S-box
//! (`QARMA5-64-σ1`): a 64-bit block, a 128-bit key split into a whitening
//! half `w0` and a core half `k0`, and a 64-bit tweak. The other S-boxes and
//! round counts are kept only so the full table of reference vectors can be
//! checked.
//!
//! The 64-bit state is viewed as sixteen 4-bit cells, cell 0 being the most
//! significant nibble, laid out row-major in a 4x4 matrix.

use std::fmt;

/// Round constants `c0..c7` (digits of π).
const ROUND_CONSTANTS: [u64; 8] = [
    0x0000_0000_0000_0000,
    0x1319_8A2E_0370_7344,
    0xA409_3822_299F_31D0,
    0x082E_FA98_EC4E_6C89,
    0x4528_21E6_38D0_1377,
    0xBE54_66CF_34E9_0C6C,
    0x3F84_D5B5_B547_0917,
    0x9216_D5D9_8979_FB1B,
];

/// Reflection constant α.
const ALPHA: u64 = 0xC0AC_29B7_C97C_50DD;

const SBOX_0: [u8; 16] = [0, 14, 2, 10, 9, 15, 8, 11, 6, 4, 3, 7, 13, 12, 1, 5];
const SBOX_1: [u8; 16] = [10, 13, 14, 6, 15, 7, 3, 5, 9, 8, 0, 12, 11, 1, 2, 4];
const SBOX_2: [u8; 16] = [11, 6, 8, 15, 12, 0, 9, 14, 3, 7, 4, 5, 13, 2, 1, 10];

/// Cell shuffle τ: `out[i] = in[TAU[i]]`.
const TAU: [usize; 16] = [0, 11, 6, 13, 10, 1, 12, 7, 5, 14, 3, 8, 15, 4, 9, 2];
/// Tweak cell permutation h.
const TWEAK_PERM: [usize; 16] = [6, 5, 14, 15, 0, 1, 2, 3, 7, 12, 13, 4, 8, 9, 10, 11];
/// Tweak cells that pass through the ω LFSR after the permutation.
const LFSR_CELLS: [usize; 7] = [0, 1, 3, 4, 8, 11, 13];

const fn invert(p: [usize; 16]) -> [usize; 16] {
    let mut out = [0; 16];
    let mut i = 0;
    while i < 16 {
        out[p[i]] = i;
        i += 1;
    }
    out
}

const fn invert_sbox(s: [u8; 16]) -> [u8; 16] {
    let mut out = [0; 16];
    let mut i = 0;
    while i < 16 {
        out[s[i] as usize] = i as u8;
        i += 1;
    }
    out
}

const TAU_INV: [usize; 16] = invert(TAU);
const TWEAK_PERM_INV: [usize; 16] = invert(TWEAK_PERM);

/// Choice of the 4-bit S-box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sbox {
    Sigma0,
    Sigma1,
    Sigma2,
}

impl Sbox {
    fn table(self) -> [u8; 16] {
        match self {
            Sbox::Sigma0 => SBOX_0,
            Sbox::Sigma1 => SBOX_1,
            Sbox::Sigma2 => SBOX_2,
        }
    }
}

type Cells = [u8; 16];

fn to_cells(x: u64) -> Cells {
    let mut c = [0u8; 16];
    for (i, cell) in c.iter_mut().enumerate() {
        *cell = ((x >> (60 - 4 * i)) & 0xF) as u8;
    }
    c
}

fn from_cells(c: &Cells) -> u64 {
    c.iter().fold(0u64, |acc, &v| (acc << 4) | u64::from(v))
}

fn permute(c: &Cells, p: &[usize; 16]) -> Cells {
    let mut out = [0u8; 16];
    for i in 0..16 {
        out[i] = c[p[i]];
    }
    out
}

fn rot4(v: u8, n: u32) -> u8 {
    ((v << n) | (v >> (4 - n))) & 0xF
}

/// Multiplication by the involutory matrix circ(0, ρ, ρ², ρ).
fn mix_columns(c: &Cells) -> Cells {
    let mut out = [0u8; 16];
    for col in 0..4 {
        for row in 0..4 {
            let mut acc = 0u8;
            for j in 0..4 {
                let v = c[4 * j + col];
                acc ^= match (j + 4 - row) % 4 {
                    0 => 0,
                    2 => rot4(v, 2),
                    _ => rot4(v, 1),
                };
            }
            out[4 * row + col] = acc;
        }
    }
    out
}

fn sub_cells(c: &Cells, s: &[u8; 16]) -> Cells {
    c.map(|v| s[v as usize])
}

fn lfsr(b: u8) -> u8 {
    (((b ^ (b >> 1)) & 1) << 3) | (b >> 1)
}

fn lfsr_inv(b: u8) -> u8 {
    ((b << 1) & 0xF) | (((b >> 3) ^ b) & 1)
}

fn tweak_update(t: u64) -> u64 {
    let mut c = permute(&to_cells(t), &TWEAK_PERM);
    for &i in &LFSR_CELLS {
        c[i] = lfsr(c[i]);
    }
    from_cells(&c)
}

fn tweak_update_inv(t: u64) -> u64 {
    let mut c = to_cells(t);
    for &i in &LFSR_CELLS {
        c[i] = lfsr_inv(c[i]);
    }
    from_cells(&permute(&c, &TWEAK_PERM_INV))
}

/// The 128-bit cipher key: whitening half `w0` and core half `k0`.
///
/// `Debug` is redacted and the type has no serializer; key material must not
/// reach any report or dump.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Key128 {
    pub w0: u64,
    pub k0: u64,
}

impl Key128 {
    pub const fn new(w0: u64, k0: u64) -> Self {
        Key128 { w0, k0 }
    }
}

impl fmt::Debug for Key128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Key128(<redacted>)")
    }
}

/// A 64-bit tweak. The memory engine always uses the 8-byte-aligned address
/// of the word being transformed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tweak(pub u64);

impl Tweak {
    /// Tweak for the word containing `addr`.
    pub fn for_address(addr: u64) -> Self {
        Tweak(addr & !7)
    }
}

/// A parameterized QARMA-64 instance.
#[derive(Debug, Clone, Copy)]
pub struct Qarma64 {
    rounds: usize,
    sbox: [u8; 16],
    sbox_inv: [u8; 16],
}

impl Qarma64 {
    /// The instance used by the memory engine: five rounds, σ₁.
    pub const MEMORY: Qarma64 = Qarma64 {
        rounds: 5,
        sbox: SBOX_1,
        sbox_inv: invert_sbox(SBOX_1),
    };

    /// # Panics
    ///
    /// If `rounds` is not in `1..=7`.
    pub fn new(rounds: usize, sbox: Sbox) -> Self {
        assert!((1..=7).contains(&rounds), "QARMA-64 supports 1..=7 rounds");
        let table = sbox.table();
        Qarma64 {
            rounds,
            sbox: table,
            sbox_inv: invert_sbox(table),
        }
    }

    fn forward(&self, x: u64, key: u64, tweak: u64, full: bool) -> u64 {
        let mut c = to_cells(x ^ key ^ tweak);
        if full {
            c = mix_columns(&permute(&c, &TAU));
        }
        from_cells(&sub_cells(&c, &self.sbox))
    }

    fn backward(&self, x: u64, key: u64, tweak: u64, full: bool) -> u64 {
        let mut c = sub_cells(&to_cells(x), &self.sbox_inv);
        if full {
            c = permute(&mix_columns(&c), &TAU_INV);
        }
        from_cells(&c) ^ key ^ tweak
    }

    fn reflect(x: u64, k1: u64) -> u64 {
        let c = mix_columns(&permute(&to_cells(x), &TAU));
        let c = to_cells(from_cells(&c) ^ k1);
        from_cells(&permute(&c, &TAU_INV))
    }

    fn reflect_inv(x: u64, k1: u64) -> u64 {
        let c = permute(&to_cells(x), &TAU);
        let c = to_cells(from_cells(&c) ^ k1);
        from_cells(&permute(&mix_columns(&c), &TAU_INV))
    }

    fn tweak_schedule(&self, tweak: u64) -> [u64; 8] {
        let mut ts = [0u64; 8];
        ts[0] = tweak;
        for i in 1..=self.rounds {
            ts[i] = tweak_update(ts[i - 1]);
        }
        debug_assert_eq!(tweak_update_inv(ts[1]), tweak);
        ts
    }

    pub fn encrypt(&self, key: Key128, tweak: Tweak, plaintext: u64) -> u64 {
        let (w0, k0) = (key.w0, key.k0);
        let w1 = whitening_successor(w0);
        let ts = self.tweak_schedule(tweak.0);
        let r = self.rounds;

        let mut x = plaintext ^ w0;
        for (i, &t) in ts.iter().enumerate().take(r) {
            x = self.forward(x, k0 ^ ROUND_CONSTANTS[i], t, i != 0);
        }
        x = self.forward(x, w1, ts[r], true);
        x = Self::reflect(x, k0);
        x = self.backward(x, w0, ts[r], true);
        for i in (0..r).rev() {
            x = self.backward(x, k0 ^ ROUND_CONSTANTS[i] ^ ALPHA, ts[i], i != 0);
        }
        x ^ w1
    }

    pub fn decrypt(&self, key: Key128, tweak: Tweak, ciphertext: u64) -> u64 {
        let (w0, k0) = (key.w0, key.k0);
        let w1 = whitening_successor(w0);
        let ts = self.tweak_schedule(tweak.0);
        let r = self.rounds;

        let mut x = ciphertext ^ w1;
        for (i, &t) in ts.iter().enumerate().take(r) {
            x = self.forward(x, k0 ^ ROUND_CONSTANTS[i] ^ ALPHA, t, i != 0);
        }
        x = self.forward(x, w0, ts[r], true);
        x = Self::reflect_inv(x, k0);
        x = self.backward(x, w1, ts[r], true);
        for i in (0..r).rev() {
            x = self.backward(x, k0 ^ ROUND_CONSTANTS[i], ts[i], i != 0);
        }
        x ^ w0
    }
}

/// w1 = (w0 >>> 1) ^ (w0 >> 63).
fn whitening_successor(w0: u64) -> u64 {
    w0.rotate_right(1) ^ (w0 >> 63)
}

/// QARMA5-64-σ1 encryption.
pub fn qarma_encrypt(key: Key128, tweak: Tweak, plaintext: u64) -> u64 {
    Qarma64::MEMORY.encrypt(key, tweak, plaintext)
}

/// QARMA5-64-σ1 decryption.
pub fn qarma_decrypt(key: Key128, tweak: Tweak, ciphertext: u64) -> u64 {
    Qarma64::MEMORY.decrypt(key, tweak, ciphertext)
}

/// Seeded xorshift64* generator.
///
/// The seed is passed through the splitmix64 finalizer first so that every
/// seed, including 0, yields a non-zero internal state.
#[derive(Debug, Clone)]
pub struct XorShift64 {
    state: u64,
}

impl XorShift64 {
    pub fn new(seed: u64) -> Self {
        let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        XorShift64 {
            state: if z == 0 { 0x2545_F491_4F6C_DD1D } else { z },
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn fill_bytes(&mut self, buf: &mut [u8]) {
        for chunk in buf.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Boot-time master key: two draws from the seeded generator, `w0` then `k0`.
pub fn generate_master_key(seed: u64) -> Key128 {
    let mut rng = XorShift64::new(seed);
    let w0 = rng.next_u64();
    let k0 = rng.next_u64();
    Key128 { w0, k0 }
}

const THREAD_KEY_W0_CONST: u64 = 0xA5A5_A5A5_A5A5_A5A5;
const THREAD_KEY_K0_CONST: u64 = 0x5A5A_5A5A_5A5A_5A5A;

/// Per-thread key: both halves are encryptions of fixed constants under the
/// master key, tweaked by the thread id.
pub fn derive_thread_key(master: Key128, tid: u64) -> Key128 {
    let tweak = Tweak(tid);
    Key128 {
        w0: qarma_encrypt(master, tweak, THREAD_KEY_W0_CONST),
        k0: qarma_encrypt(master, tweak, THREAD_KEY_K0_CONST),
    }
}
