//! Binary network checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "SNNBCKPT"
//! version      u32      1
//! config_len   u32
//! config       config_len bytes of JSON (NetworkConfig)
//! block_count  u32
//! block*       kind u8 (0 parameter, 1 buffer)
//!              name_len u16, name (UTF-8)
//!              ndim u8, dims u32 * ndim
//!              values f64 * prod(dims)
//! ```
//!
//! Blocks must cover exactly the tensors the config implies, with matching
//! extents. Values must be finite.

use std::collections::HashSet;
use std::path::Path;

use super::config::NetworkConfig;
use super::network::{param_layout, Network, Slot};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;

pub const MAGIC: &[u8; 8] = b"SNNBCKPT";
pub const VERSION: u32 = 1;

pub fn serialize_checkpoint(net: &Network) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(net.config())?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let layout = param_layout(net.config())?;
    out.extend_from_slice(&(layout.len() as u32).to_le_bytes());
    for (name, shape, slot) in layout {
        let (kind, store) = match slot {
            Slot::Param => (0u8, net.params()),
            Slot::Buffer => (1u8, net.buffers()),
        };
        let id = store.find(&name).ok_or_else(|| Error::Invariant(format!("missing tensor `{name}`")))?;
        out.push(kind);
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for d in &shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in store.get(id) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated at byte {} reading {what}", self.pos))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

struct Block {
    slot: Slot,
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Decodes a checkpoint, rebuilding the network it describes.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a network checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg: NetworkConfig =
        serde_json::from_slice(r.take(cfg_len, "config")?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    cfg.validate()?;
    let count = r.u32("block count")? as usize;
    let mut blocks = Vec::new();
    for i in 0..count {
        let slot = match r.u8("block kind")? {
            0 => Slot::Param,
            1 => Slot::Buffer,
            k => return Err(Error::Checkpoint(format!("block {i}: unknown kind {k}"))),
        };
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("block {i}: name is not UTF-8")))?
            .to_string();
        let ndim = r.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut numel = 1usize;
        for _ in 0..ndim {
            let d = r.u32("dimension")? as usize;
            numel = numel.checked_mul(d).ok_or_else(|| Error::Checkpoint(format!("block `{name}`: extent overflow")))?;
            shape.push(d);
        }
        if numel.checked_mul(8).is_none_or(|n| n > r.remaining()) {
            return Err(Error::Checkpoint(format!("block `{name}`: {numel} values exceed remaining bytes")));
        }
        let raw = r.take(numel * 8, "values")?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("block `{name}`: non-finite value")));
        }
        blocks.push(Block { slot, name, shape, values });
    }
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
    }

    let expected = param_layout(&cfg)?;
    let mut seen = HashSet::new();
    for b in &blocks {
        if !seen.insert(b.name.as_str()) {
            return Err(Error::Checkpoint(format!("duplicate block `{}`", b.name)));
        }
        match expected.iter().find(|(n, _, _)| *n == b.name) {
            None => return Err(Error::Checkpoint(format!("unexpected block `{}`", b.name))),
            Some((_, shape, slot)) if *shape != b.shape || *slot != b.slot => {
                return Err(Error::Checkpoint(format!(
                    "block `{}` has extents {:?}, config implies {:?}",
                    b.name, b.shape, shape
                )))
            }
            Some(_) => {}
        }
    }
    if let Some((missing, _, _)) = expected.iter().find(|(n, _, _)| !seen.contains(n.as_str())) {
        return Err(Error::Checkpoint(format!("missing block `{missing}`")));
    }

    let mut net = Network::build(&cfg, 0)?;
    for b in blocks {
        let store = match b.slot {
            Slot::Param => net.params_mut(),
            Slot::Buffer => net.buffers_mut(),
        };
        let id = store.find(&b.name).ok_or_else(|| Error::Invariant(format!("layout lacks `{}`", b.name)))?;
        store.get_mut(id).copy_from_slice(&b.values);
    }
    Ok(net)
}

pub fn write_checkpoint(net: &Network, path: &Path) -> Result<()> {
    write_atomic(path, &serialize_checkpoint(net)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Network> {
    parse_checkpoint(&std::fs::read(path)?)
}
