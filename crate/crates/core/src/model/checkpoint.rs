//! `TOPT1` checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        5 bytes  "TOPT1"
//! config       u32 d, u32 e, u32 h, u32 layers, u32 ffn_mult,
//!              u32 head_hidden, u32 n_classes, f64 dropout_p
//! count        u32 number of parameter blobs
//! blob*        u32 name_len, name (UTF-8), u32 rank, u64 extent × rank,
//!              f64 × product(extents)
//! ```

use super::{ModelConfig, ModelError, Result, TransOptModel};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 5] = b"TOPT1";

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| ModelError::Checkpoint(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

pub fn write_checkpoint(model: &TransOptModel, w: &mut impl Write) -> Result<()> {
    let c = model.config();
    w.write_all(MAGIC)?;
    for v in [
        c.d,
        c.e,
        c.h,
        c.layers,
        c.ffn_mult,
        c.head_hidden,
        c.n_classes,
    ] {
        put_u32(w, v)?;
    }
    w.write_all(&c.dropout_p.to_le_bytes())?;
    let params = model.parameters();
    put_u32(w, params.len())?;
    for (name, t) in params {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.rank())?;
        for &ext in t.shape() {
            w.write_all(&(ext as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<TransOptModel> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let mut f = [0usize; 7];
    for v in &mut f {
        *v = get_u32(r)?;
    }
    let config = ModelConfig {
        d: f[0],
        e: f[1],
        h: f[2],
        layers: f[3],
        ffn_mult: f[4],
        head_hidden: f[5],
        n_classes: f[6],
        dropout_p: get_f64(r)?,
    };
    config.validate()?;
    let expected = config.parameter_shapes();
    let count = get_u32(r)?;
    if count != expected.len() {
        return Err(ModelError::Checkpoint(format!(
            "{count} parameter blobs, config implies {}",
            expected.len()
        )));
    }
    let mut named = Vec::with_capacity(count);
    for (_, want_shape) in &expected {
        let len = get_u32(r)?;
        if len > 4096 {
            return Err(ModelError::Checkpoint(format!("name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| ModelError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = get_u32(r)?;
        let shape = (0..rank)
            .map(|_| get_u64(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if &shape != want_shape {
            return Err(ModelError::Checkpoint(format!(
                "{name}: shape {shape:?}, expected {want_shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
        named.push((name, Tensor::new(shape, data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }
    TransOptModel::from_parts(config, named)
}

pub fn save_checkpoint(model: &TransOptModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TransOptModel> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
