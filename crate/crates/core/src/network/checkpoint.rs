//! Binary layout, all integers little-endian `u32`:
//!
//! ```text
//! "WHSR" version
//! num_blocks layers_per_block channels heads base_window upscale
//! ffn_expansion gate_reduction alternate schedule_len schedule[..]
//! tensor_count
//! { name_len name[..] rank extents[..] f32[..] } × tensor_count
//! ```

use std::path::Path;

use super::{ModelConfig, ParamStore, SrModel};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WHSR";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint { offset: buf.len(), detail: format!("{v} does not fit in u32") })?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes a model. Values are stored as `f32`.
pub fn write_checkpoint(model: &SrModel) -> Result<Vec<u8>> {
    let cfg = model.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        cfg.num_blocks,
        cfg.layers_per_block,
        cfg.channels,
        cfg.heads,
        cfg.base_window,
        cfg.upscale,
        cfg.ffn_expansion,
        cfg.gate_reduction,
        cfg.alternate as usize,
        cfg.window_schedule.len(),
    ] {
        put(&mut buf, v)?;
    }
    for &w in &cfg.window_schedule {
        put(&mut buf, w)?;
    }
    put(&mut buf, model.params().len())?;
    for (name, t) in model.params().iter() {
        put(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put(&mut buf, t.rank())?;
        for &e in t.shape() {
            put(&mut buf, e)?;
        }
        for &x in t.data() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn fail<T>(&self, detail: impl Into<String>) -> Result<T> {
        Err(Error::Checkpoint { offset: self.pos, detail: detail.into() })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!("truncated while reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parses a checkpoint and validates it against the config it carries.
pub fn read_checkpoint(bytes: &[u8]) -> Result<SrModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return r.fail("bad magic, not a checkpoint");
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        r.pos -= 4;
        return r.fail(format!("unsupported version {version}"));
    }
    let mut cfg = ModelConfig {
        num_blocks: r.u32("num_blocks")?,
        layers_per_block: r.u32("layers_per_block")?,
        channels: r.u32("channels")?,
        heads: r.u32("heads")?,
        base_window: r.u32("base_window")?,
        upscale: r.u32("upscale")?,
        ffn_expansion: r.u32("ffn_expansion")?,
        gate_reduction: r.u32("gate_reduction")?,
        alternate: false,
        window_schedule: Vec::new(),
    };
    cfg.alternate = match r.u32("alternate")? {
        0 => false,
        1 => true,
        v => {
            r.pos -= 4;
            return r.fail(format!("alternate flag must be 0 or 1, got {v}"));
        }
    };
    let len = r.u32("schedule length")?;
    if len > crate::network::MAX_WINDOW * 16 {
        return r.fail(format!("implausible schedule length {len}"));
    }
    for _ in 0..len {
        cfg.window_schedule.push(r.u32("window schedule")?);
    }
    let config_end = r.pos;
    if let Err(e) = cfg.validate() {
        r.pos = config_end;
        return r.fail(format!("config block: {e}"));
    }
    let expected = SrModel::new(cfg.clone(), 0)?;
    let count = r.u32("tensor count")?;
    if count != expected.params().len() {
        return r.fail(format!("{count} tensors, config expects {}", expected.params().len()));
    }
    let mut store = ParamStore::new();
    for (want, wt) in expected.params().iter() {
        let at = r.pos;
        let n = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(n, "tensor name")?)
            .map_err(|_| Error::Checkpoint { offset: at, detail: "tensor name is not UTF-8".into() })?
            .to_owned();
        if name != want {
            r.pos = at;
            return r.fail(format!("tensor {name:?} where {want:?} was expected"));
        }
        let rank = r.u32("rank")?;
        if rank != wt.rank() {
            return r.fail(format!("tensor {name:?} has rank {rank}, expected {}", wt.rank()));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")?);
        }
        if shape != wt.shape() {
            return r.fail(format!("tensor {name:?} has shape {shape:?}, expected {:?}", wt.shape()));
        }
        let data = r
            .take(4 * wt.numel(), "tensor data")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect::<Vec<_>>();
        if data.iter().any(|v| !v.is_finite()) {
            return r.fail(format!("tensor {name:?} contains non-finite values"));
        }
        store.push(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return r.fail(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    SrModel::from_params(cfg, store)
}

pub fn save_checkpoint(model: &SrModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SrModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
