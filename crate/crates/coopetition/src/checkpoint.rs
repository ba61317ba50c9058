//! Checkpoint files: a text header (the resolved config record plus run
//! state) followed by named tensors, each stored as (name, dtype tag, rank,
//! extents, row-major little-endian payload). Save -> load -> save is
//! byte-identical.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::expconfig::Doc;
use crate::model::ModelParams;
use crate::optim::{AdamHyper, AdamState};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 8] = b"COOPCKPT";
pub const FORMAT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

pub struct NamedTensor {
    pub name: String,
    pub dtype: u8,
    pub shape: Vec<usize>,
    pub raw: Vec<u8>,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn dtype_of<T: Scalar>() -> u8 {
    if std::mem::size_of::<T>() == 4 {
        DTYPE_F32
    } else {
        DTYPE_F64
    }
}

fn tensor_bytes<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.numel() * std::mem::size_of::<T>());
    if dtype_of::<T>() == DTYPE_F32 {
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    } else {
        for &v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

fn tensor_from_raw<T: Scalar>(nt: &NamedTensor) -> Result<Tensor<T>> {
    let numel: usize = nt.shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    match nt.dtype {
        DTYPE_F32 => {
            if nt.raw.len() != numel * 4 {
                return Err(Error::Checkpoint(format!("{}: payload size mismatch", nt.name)));
            }
            for c in nt.raw.chunks_exact(4) {
                data.push(T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64));
            }
        }
        DTYPE_F64 => {
            if nt.raw.len() != numel * 8 {
                return Err(Error::Checkpoint(format!("{}: payload size mismatch", nt.name)));
            }
            for c in nt.raw.chunks_exact(8) {
                data.push(T::from_f64(f64::from_le_bytes(c.try_into().unwrap())));
            }
        }
        d => return Err(Error::Checkpoint(format!("unknown dtype tag {d}"))),
    }
    Tensor::from_vec(&nt.shape, data)
}

/// Write a checkpoint: header doc plus named tensors in the given order.
pub fn write_file(path: &Path, header: &Doc, tensors: &[(&str, u8, &[usize], Vec<u8>)]) -> Result<()> {
    let tmp = path.with_extension("bin.tmp");
    {
        let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        write_u32(&mut w, FORMAT_VERSION)?;
        let header_text = header.to_text();
        write_u64(&mut w, header_text.len() as u64)?;
        w.write_all(header_text.as_bytes())?;
        write_u32(&mut w, tensors.len() as u32)?;
        for (name, dtype, shape, raw) in tensors {
            write_u32(&mut w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[*dtype])?;
            write_u32(&mut w, shape.len() as u32)?;
            for &e in *shape {
                write_u64(&mut w, e as u64)?;
            }
            write_u64(&mut w, raw.len() as u64)?;
            w.write_all(raw)?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<(Doc, Vec<NamedTensor>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let header_len = read_u64(&mut r)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header = Doc::parse(
        std::str::from_utf8(&header_bytes)
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?,
    )?;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let raw_len = read_u64(&mut r)? as usize;
        let mut raw = vec![0u8; raw_len];
        r.read_exact(&mut raw)?;
        tensors.push(NamedTensor {
            name: String::from_utf8(name).map_err(|_| Error::Checkpoint("bad tensor name".into()))?,
            dtype: dtype[0],
            shape,
            raw,
        });
    }
    Ok((header, tensors))
}

/// Full training snapshot.
pub struct Checkpoint<T> {
    pub header: Doc,
    pub step: u64,
    pub sequences_seen: u64,
    pub data_rng_word_pos: u128,
    pub params: ModelParams<T>,
    pub adam: Option<AdamState<T>>,
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    config_record: &Doc,
    step: u64,
    sequences_seen: u64,
    data_rng_word_pos: u128,
    params: &ModelParams<T>,
    adam: Option<&AdamState<T>>,
) -> Result<()> {
    let mut header = config_record.clone();
    header.set("state.step", step);
    header.set("state.sequences_seen", sequences_seen);
    header.set("state.data_rng_word_pos", data_rng_word_pos);
    header.set("state.has_optimizer", adam.is_some());
    if let Some(a) = adam {
        header.set("state.adam_t", a.t);
        header.set("state.adam_lr", a.hyper.lr);
        header.set("state.adam_beta1", a.hyper.beta1);
        header.set("state.adam_beta2", a.hyper.beta2);
        header.set("state.adam_eps", a.hyper.eps);
    }
    header.set("state.format", FORMAT_VERSION);

    let dtype = dtype_of::<T>();
    let mut tensors: Vec<(&str, u8, &[usize], Vec<u8>)> = Vec::new();
    let named = params.named();
    let mut owned_names: Vec<String> = Vec::new();
    for (name, t) in &named {
        owned_names.push(name.clone());
        tensors.push(("", dtype, t.shape(), tensor_bytes(t)));
    }
    if let Some(a) = adam {
        for (name, t) in &named {
            owned_names.push(format!("adam.m.{name}"));
            let m = a.m.get(name).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
            tensors.push(("", dtype, t.shape(), tensor_bytes(&m)));
        }
        for (name, t) in &named {
            owned_names.push(format!("adam.v.{name}"));
            let v = a.v.get(name).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
            tensors.push(("", dtype, t.shape(), tensor_bytes(&v)));
        }
    }
    // shapes borrow from `named`; patch in the owned names by index
    let shapes: Vec<Vec<usize>> = tensors.iter().map(|(_, _, s, _)| s.to_vec()).collect();
    let patched: Vec<(&str, u8, &[usize], Vec<u8>)> = tensors
        .into_iter()
        .enumerate()
        .map(|(i, (_, d, _, raw))| (owned_names[i].as_str(), d, shapes[i].as_slice(), raw))
        .collect();
    write_file(path, &header, &patched)
}

pub fn load_checkpoint<T: Scalar>(path: &Path, want_params_like: Option<&ModelParams<T>>) -> Result<Checkpoint<T>> {
    let (header, tensors) = read_file(path)?;
    let step: u64 = header.require_parse("state.step")?;
    let sequences_seen: u64 = header.require_parse("state.sequences_seen")?;
    let word_pos: u128 = header.require_parse("state.data_rng_word_pos")?;
    let has_optimizer: bool = header.get_or("state.has_optimizer", false)?;

    // Rebuild the model config from the header to construct params.
    let config = crate::trainer::model_config_from_doc(&header)?;
    let mut params = match want_params_like {
        Some(p) => p.clone(),
        None => ModelParams::<T>::init(&config, 0)?,
    };
    let by_name: std::collections::BTreeMap<&str, &NamedTensor> =
        tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    for name in names {
        let nt = by_name
            .get(name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        let tensor = tensor_from_raw::<T>(nt)?;
        params.set(&name, tensor)?;
    }

    let adam = if has_optimizer {
        let hyper = AdamHyper {
            lr: header.require_parse("state.adam_lr")?,
            beta1: header.require_parse("state.adam_beta1")?,
            beta2: header.require_parse("state.adam_beta2")?,
            eps: header.require_parse("state.adam_eps")?,
        };
        let mut state = AdamState::new(hyper);
        state.t = header.require_parse("state.adam_t")?;
        for (name, _) in params.named() {
            let m = by_name
                .get(format!("adam.m.{name}").as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing adam.m.{name}")))?;
            let v = by_name
                .get(format!("adam.v.{name}").as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing adam.v.{name}")))?;
            state.m.insert(name.clone(), tensor_from_raw::<T>(m)?);
            state.v.insert(name.clone(), tensor_from_raw::<T>(v)?);
        }
        Some(state)
    } else {
        None
    };

    Ok(Checkpoint { header, step, sequences_seen, data_rng_word_pos: word_pos, params, adam })
}

/// Load just the parameters from a checkpoint.
pub fn load_params<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    Ok(load_checkpoint::<T>(path, None)?.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_is_byte_identical() {
        let dir = tempdir();
        let path = dir.join("t.bin");
        let mut header = Doc::new();
        header.set("alpha", 1);
        header.set("state.step", 0);
        let t = Tensor::from_vec(&[2, 2], vec![1.0f32, -2.5, 3.25, 0.0]).unwrap();
        let raw = tensor_bytes(&t);
        write_file(&path, &header, &[("w", DTYPE_F32, &[2, 2], raw)]).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();

        let (h2, ts) = read_file(&path).unwrap();
        assert_eq!(h2.get("alpha"), Some("1"));
        let back: Tensor<f32> = tensor_from_raw(&ts[0]).unwrap();
        assert!(back.bits_eq(&t));

        // write again from the parsed content
        let path2 = dir.join("t2.bin");
        write_file(&path2, &h2, &[("w", ts[0].dtype, &ts[0].shape, ts[0].raw.clone())]).unwrap();
        let bytes2 = std::fs::read(&path2).unwrap();
        assert_eq!(bytes1, bytes2);
        std::fs::remove_dir_all(&dir).ok();
    }

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("coopckpt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
