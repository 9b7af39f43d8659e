//! Little-endian checkpoint format:
//!
//! ```text
//! "PKBN" | version u32 | config length u32 | config UTF-8 | tensor count u32
//! per tensor: name length u32 | name UTF-8 | rank u32 | extents u32[rank] | f32[numel]
//! ```

use std::io::{Read, Write};

use crate::error::AutodiffError;
use crate::optim::ParameterStore;
use crate::tensor::{Element, Tensor};

pub const MAGIC: &[u8; 4] = b"PKBN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<(), AutodiffError> {
    let v = u32::try_from(v).map_err(|_| AutodiffError::Checkpoint(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize, AutodiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_string(r: &mut impl Read, limit: usize) -> Result<String, AutodiffError> {
    let n = get_u32(r)?;
    if n > limit {
        return Err(AutodiffError::Checkpoint(format!("string length {n} exceeds {limit}")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
}

pub fn write_checkpoint<T: Element>(
    w: &mut impl Write,
    config: &str,
    store: &ParameterStore<T>,
) -> Result<(), AutodiffError> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION as usize)?;
    put_u32(w, config.len())?;
    w.write_all(config.as_bytes())?;
    put_u32(w, store.len())?;
    for (_, name, t) in store.iter() {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.shape.len())?;
        for &e in &t.shape {
            put_u32(w, e)?;
        }
        let mut bytes = Vec::with_capacity(4 * t.numel());
        for x in &t.data {
            let v = x.to_f32().unwrap_or(f32::NAN);
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint, AutodiffError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION as usize {
        return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let config = get_string(r, 1 << 20)?;
    let count = get_u32(r)?;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = get_string(r, 4096)?;
        let rank = get_u32(r)?;
        if rank > 8 {
            return Err(AutodiffError::Checkpoint(format!("rank {rank} for {name}")));
        }
        let shape = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; 4 * n];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, Tensor { shape, data }));
    }
    Ok(Checkpoint { config, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut s = ParameterStore::<f32>::new();
        s.add("a", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, 0.0]).unwrap()).unwrap();
        s.add("b.bias", Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "{\"c\":64}", &s).unwrap();
        assert_eq!(&buf[..4], b"PKBN");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        let ck = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(ck.config, "{\"c\":64}");
        assert_eq!(ck.tensors.len(), 2);
        assert_eq!(ck.tensors[0].1, *s.get(s.id("a").unwrap()));
        let mut fresh = ParameterStore::<f32>::new();
        fresh.add("a", Tensor::zeros(&[2, 2])).unwrap();
        fresh.add("b.bias", Tensor::zeros(&[3])).unwrap();
        fresh.load(&ck.tensors).unwrap();
        assert_eq!(fresh.get(fresh.id("b.bias").unwrap()).data, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_checkpoint(&mut &b"NOPE\x01\0\0\0"[..]).is_err());
        let mut s = ParameterStore::<f32>::new();
        s.add("a", Tensor::zeros(&[4, 4])).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "", &s).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());
    }
}
