// SPDX-License-Identifier: Apache-2.0

//! The system-call shim: a small virtual filesystem with sensitive input
//! channels, tagged `getrandom`, ciphertext-only output of tagged data and
//! explicit thread switches with per-thread keys.
//!
//! Syscall ABI: number in `a7`, arguments in `a0..a5`, result in `a0`.
//! Errors are returned as negated errno values.

use std::collections::BTreeMap;

use crate::cpu::isa::Reg;
use crate::cpu::{MachineState, TaggedWord};
use crate::crypt::{derive_thread_key, qarma_encrypt, Key128, Tweak, XorShift64};
use crate::mem::{MemError, MemorySystem};

/// Open flag that marks a descriptor as a sensitive input channel.
pub const O_SENSITIVE: u64 = 0x0200_0000;

pub mod sysno {
    pub const OPENAT: u64 = 56;
    pub const CLOSE: u64 = 57;
    pub const READ: u64 = 63;
    pub const WRITE: u64 = 64;
    pub const EXIT: u64 = 93;
    pub const EXIT_GROUP: u64 = 94;
    pub const GETRANDOM: u64 = 278;
    pub const THREAD_SWITCH: u64 = 5000;
}

pub mod errno {
    pub const ENOENT: i64 = 2;
    pub const EBADF: i64 = 9;
    pub const EACCES: i64 = 13;
    pub const EFAULT: i64 = 14;
    pub const EINVAL: i64 = 22;
    pub const EMFILE: i64 = 24;
    pub const ENAMETOOLONG: i64 = 36;
    pub const ENOSYS: i64 = 38;
}

const MAX_FDS: usize = 64;
const MAX_PATH: u64 = 4096;
// Keeps the getrandom stream independent of the key generator's stream.
const RNG_DOMAIN: u64 = 0x6765_7472_616e_646f;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Channel {
    Input { data: Vec<u8> },
    Stdout,
    Stderr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileDesc {
    pub fd: u64,
    pub origin: String,
    pub sensitive: bool,
    pub cursor: usize,
    channel: Channel,
}

/// Result of one `ecall`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EcallOutcome {
    pub cycles: u64,
    pub exit: Option<i64>,
}

#[derive(Debug, Clone)]
pub struct OsShim {
    files: BTreeMap<String, Vec<u8>>,
    fds: Vec<Option<FileDesc>>,
    rng: XorShift64,
    key_registry: BTreeMap<u64, Key128>,
    strict_write: bool,
    stdout: Vec<u8>,
    stderr: Vec<u8>,
    writes: BTreeMap<String, Vec<u8>>,
    pub leak_averted_bytes: u64,
    /// Tagged words whose emitted bytes equalled their plaintext.
    pub barrier_violations: u64,
}

impl OsShim {
    pub fn new(seed: u64) -> Self {
        let std = |fd: u64, origin: &str, channel: Channel| {
            Some(FileDesc {
                fd,
                origin: origin.to_string(),
                sensitive: false,
                cursor: 0,
                channel,
            })
        };
        let mut fds = vec![None; MAX_FDS];
        fds[0] = std(0, "<stdin>", Channel::Input { data: Vec::new() });
        fds[1] = std(1, "<stdout>", Channel::Stdout);
        fds[2] = std(2, "<stderr>", Channel::Stderr);
        OsShim {
            files: BTreeMap::new(),
            fds,
            rng: XorShift64::new(seed ^ RNG_DOMAIN),
            key_registry: BTreeMap::new(),
            strict_write: false,
            stdout: Vec::new(),
            stderr: Vec::new(),
            writes: BTreeMap::new(),
            leak_averted_bytes: 0,
            barrier_violations: 0,
        }
    }

    /// Register a virtual file (or synthetic stream) readable via `openat`.
    pub fn add_file(&mut self, path: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(path.into(), bytes);
    }

    pub fn set_stdin(&mut self, bytes: Vec<u8>) {
        if let Some(fd) = self.fds[0].as_mut() {
            fd.channel = Channel::Input { data: bytes };
            fd.cursor = 0;
        }
    }

    /// Fail writes of tagged data with `EACCES` instead of emitting ciphertext.
    pub fn set_strict_write(&mut self, strict: bool) {
        self.strict_write = strict;
    }

    pub fn stdout(&self) -> &[u8] {
        &self.stdout
    }

    pub fn stderr(&self) -> &[u8] {
        &self.stderr
    }

    /// Bytes written to descriptors opened on virtual files, by path.
    pub fn file_writes(&self) -> &BTreeMap<String, Vec<u8>> {
        &self.writes
    }

    pub fn descriptor(&self, fd: u64) -> Option<&FileDesc> {
        self.fds.get(fd as usize)?.as_ref()
    }

    pub fn handle_ecall(&mut self, st: &mut MachineState, mem: &mut MemorySystem) -> EcallOutcome {
        let arg = |i: u8| st.reg(Reg::a(i)).value;
        let (a0, a1, a2) = (arg(0), arg(1), arg(2));
        let mut cycles = 0;
        let result = match arg(7) {
            sysno::EXIT | sysno::EXIT_GROUP => {
                return EcallOutcome {
                    cycles: 0,
                    exit: Some(a0 as i64),
                }
            }
            sysno::OPENAT => self.sys_openat(st, mem, a1, a2, &mut cycles),
            sysno::CLOSE => self.sys_close(a0),
            sysno::READ => self.sys_read(st, mem, a0, a1, a2, &mut cycles),
            sysno::WRITE => self.sys_write(st, mem, a0, a1, a2, &mut cycles),
            sysno::GETRANDOM => self.sys_getrandom(st, mem, a0, a1, &mut cycles),
            sysno::THREAD_SWITCH => self.sys_thread_switch(st, mem, a0, &mut cycles),
            _ => -errno::ENOSYS,
        };
        st.set_reg(Reg::A0, TaggedWord::plain(result as u64));
        EcallOutcome { cycles, exit: None }
    }

    fn sys_openat(
        &mut self,
        st: &MachineState,
        mem: &mut MemorySystem,
        path: u64,
        flags: u64,
        cycles: &mut u64,
    ) -> i64 {
        let ctx = st.key_ctx();
        let mut name = Vec::new();
        loop {
            if name.len() as u64 >= MAX_PATH {
                return -errno::ENAMETOOLONG;
            }
            let Ok(r) = mem.load(path + name.len() as u64, 1, false, ctx) else {
                return -errno::EFAULT;
            };
            *cycles += r.cycles;
            if r.value == 0 {
                break;
            }
            name.push(r.value as u8);
        }
        let name = String::from_utf8_lossy(&name).into_owned();
        let Some(data) = self.files.get(&name) else {
            return -errno::ENOENT;
        };
        let Some(slot) = self.fds.iter().position(Option::is_none) else {
            return -errno::EMFILE;
        };
        self.fds[slot] = Some(FileDesc {
            fd: slot as u64,
            origin: name,
            sensitive: flags & O_SENSITIVE != 0,
            cursor: 0,
            channel: Channel::Input { data: data.clone() },
        });
        slot as i64
    }

    fn sys_close(&mut self, fd: u64) -> i64 {
        match self.fds.get_mut(fd as usize) {
            Some(slot @ Some(_)) => {
                *slot = None;
                0
            }
            _ => -errno::EBADF,
        }
    }

    fn sys_read(
        &mut self,
        st: &MachineState,
        mem: &mut MemorySystem,
        fd: u64,
        buf: u64,
        len: u64,
        cycles: &mut u64,
    ) -> i64 {
        let ctx = st.key_ctx();
        let Some(Some(desc)) = self.fds.get_mut(fd as usize) else {
            return -errno::EBADF;
        };
        let Channel::Input { data } = &desc.channel else {
            return -errno::EBADF;
        };
        let n = (data.len() - desc.cursor).min(len as usize);
        if n == 0 {
            return 0;
        }
        if mem.check_bounds(buf, n as u64).is_err() {
            return -errno::EFAULT;
        }
        let tag = desc.sensitive;
        for (i, &b) in data[desc.cursor..desc.cursor + n].iter().enumerate() {
            *cycles += store_byte(mem, buf + i as u64, b, tag, ctx);
        }
        desc.cursor += n;
        n as i64
    }

    fn sys_write(
        &mut self,
        st: &MachineState,
        mem: &mut MemorySystem,
        fd: u64,
        buf: u64,
        len: u64,
        cycles: &mut u64,
    ) -> i64 {
        let ctx = st.key_ctx();
        let target = match self.fds.get(fd as usize) {
            Some(Some(desc)) => match desc.channel {
                Channel::Stdout => None,
                Channel::Stderr => Some(None),
                Channel::Input { .. } => Some(Some(desc.origin.clone())),
            },
            _ => return -errno::EBADF,
        };
        if len == 0 {
            return 0;
        }
        if mem.check_bounds(buf, len).is_err() {
            return -errno::EFAULT;
        }
        let end = buf + len;
        if self.strict_write {
            let tagged = (buf..end).filter(|&a| mem.peek_word(a, ctx).1).count() as u64;
            if tagged > 0 {
                self.leak_averted_bytes += tagged;
                return -errno::EACCES;
            }
        }
        let mut out = Vec::with_capacity(len as usize);
        let mut word = (u64::MAX, 0u64, false);
        for a in buf..end {
            let r = mem.load(a, 1, false, ctx).expect("range checked");
            *cycles += r.cycles;
            let wa = a & !7;
            if word.0 != wa {
                let (logical, tag) = mem.peek_word(wa, ctx);
                let at_rest = if tag {
                    *cycles += mem.emission_cycles(wa);
                    let ct = qarma_encrypt(ctx.key, Tweak(wa), logical);
                    if wa >= buf && wa + 8 <= end && ct == logical {
                        self.barrier_violations += 1;
                    }
                    ct
                } else {
                    logical
                };
                word = (wa, at_rest, tag);
            }
            if word.2 {
                self.leak_averted_bytes += 1;
                out.push(word.1.to_le_bytes()[(a - wa) as usize]);
            } else {
                out.push(r.value as u8);
            }
        }
        match target {
            None => self.stdout.extend_from_slice(&out),
            Some(None) => self.stderr.extend_from_slice(&out),
            Some(Some(path)) => self.writes.entry(path).or_default().extend_from_slice(&out),
        }
        len as i64
    }

    fn sys_getrandom(
        &mut self,
        st: &MachineState,
        mem: &mut MemorySystem,
        buf: u64,
        len: u64,
        cycles: &mut u64,
    ) -> i64 {
        if len == 0 {
            return 0;
        }
        if mem.check_bounds(buf, len).is_err() {
            return -errno::EFAULT;
        }
        let ctx = st.key_ctx();
        let mut bytes = vec![0u8; len as usize];
        self.rng.fill_bytes(&mut bytes);
        for (i, &b) in bytes.iter().enumerate() {
            *cycles += store_byte(mem, buf + i as u64, b, true, ctx);
        }
        len as i64
    }

    fn sys_thread_switch(&mut self, st: &mut MachineState, mem: &mut MemorySystem, tid: u64, cycles: &mut u64) -> i64 {
        if (tid as i64) < 0 {
            return -errno::EINVAL;
        }
        let old = st.key_ctx();
        *cycles += mem.flush(old);
        self.key_registry.insert(old.tid, old.key);
        let master = st.master_key();
        let key = *self
            .key_registry
            .entry(tid)
            .or_insert_with(|| derive_thread_key(master, tid));
        st.switch_thread(tid, key);
        0
    }
}

fn store_byte(mem: &mut MemorySystem, addr: u64, b: u8, tag: bool, ctx: crate::mem::KeyCtx) -> u64 {
    let r: Result<u64, MemError> = mem.store(addr, 1, u64::from(b), tag, u8::from(tag), ctx);
    r.expect("range checked")
}
