//! Binary persistence for [`PrototypeSet`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "PROMIPS\0"
//! version      u32      1
//! depth        u64
//! K            u64      number of background prototypes
//! k_max        u64
//! flags        u8       bit 0 = bg mixture, bit 1 = fg refinement
//! max_iters    u64
//! iterations   u64
//! spawns       u64
//! empties      u64
//! stop_reason  u8
//! vectors      (K + 1) * depth f64, foreground first
//! ```

use std::path::Path;

use super::{FitConfig, FitDiagnostics, PrototypeSet, StopReason};
use crate::error::{PromiError, Result};

const MAGIC: &[u8; 8] = b"PROMIPS\0";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 * 3 + 1 + 8 * 4 + 1;

pub fn serialize_prototypes(protos: &PrototypeSet) -> Vec<u8> {
    let cfg = protos.config();
    let d = &protos.diagnostics;
    let mut out = Vec::with_capacity(HEADER_LEN + protos.vectors().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [protos.depth(), protos.num_background(), cfg.k_max] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.push(u8::from(cfg.bg_mixture_enabled) | (u8::from(cfg.fg_refinement_enabled) << 1));
    for v in [
        cfg.max_iterations,
        d.iterations_run,
        d.spawn_events,
        d.empty_cluster_events,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.push(d.stop_reason.code());
    for v in protos.vectors() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| PromiError::Format("truncated prototype payload".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| PromiError::Format("integer field overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn deserialize_prototypes(bytes: &[u8]) -> Result<PrototypeSet> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(PromiError::Format("not a prototype file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(PromiError::Format(format!(
            "unsupported prototype file version {version}"
        )));
    }
    let depth = c.usize()?;
    let k = c.usize()?;
    let k_max = c.usize()?;
    let flags = c.u8()?;
    if flags > 3 {
        return Err(PromiError::Format(format!("unknown flag bits {flags:#x}")));
    }
    let max_iterations = c.usize()?;
    let iterations_run = c.usize()?;
    let spawn_events = c.usize()?;
    let empty_cluster_events = c.usize()?;
    let stop_reason = StopReason::from_code(c.u8()?).ok_or_else(|| PromiError::Format("unknown stop reason".into()))?;

    if depth == 0 || k == 0 || k > k_max {
        return Err(PromiError::Format(format!(
            "inconsistent header: depth {depth}, K {k}, k_max {k_max}"
        )));
    }
    let count = (k + 1)
        .checked_mul(depth)
        .filter(|&n| n.checked_mul(8).is_some_and(|b| b == bytes.len() - c.pos))
        .ok_or_else(|| PromiError::Format("payload length does not match header".into()))?;
    let mut vectors = Vec::with_capacity(count);
    for _ in 0..count {
        let v = c.f64()?;
        if !v.is_finite() {
            return Err(PromiError::Format("non-finite prototype value".into()));
        }
        vectors.push(v);
    }

    let config = FitConfig {
        k_max,
        bg_mixture_enabled: flags & 1 != 0,
        fg_refinement_enabled: flags & 2 != 0,
        max_iterations,
    };
    let diagnostics = FitDiagnostics {
        iterations_run,
        spawn_events,
        empty_cluster_events,
        stop_reason,
    };
    Ok(PrototypeSet::from_parts(depth, vectors, config, diagnostics))
}

pub fn save_prototypes(protos: &PrototypeSet, path: &Path) -> Result<()> {
    std::fs::write(path, serialize_prototypes(protos)).map_err(|e| PromiError::io(path, e))
}

pub fn load_prototypes(path: &Path) -> Result<PrototypeSet> {
    let bytes = std::fs::read(path).map_err(|e| PromiError::io(path, e))?;
    deserialize_prototypes(&bytes)
}
