//! `FTR1` tensor blobs and CRC-protected parameter checkpoints.
//!
//! Blob: `b"FTR1"`, u32 LE rank, rank × u32 LE dims, f32 LE payload.
//! Checkpoint: repeated (u16 LE name length, name bytes, blob) followed by a
//! u32 LE CRC32 of every preceding byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FTR1";

pub fn encode_tensor(t: &Tensor<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.reserve(t.len() * 4);
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format(format!("truncated data at byte {pos}")))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4)?.try_into().unwrap()))
}

/// Decodes one blob starting at `*pos`, advancing past it.
pub fn decode_tensor(bytes: &[u8], pos: &mut usize) -> Result<Tensor<f32>> {
    if take(bytes, pos, 4)? != MAGIC {
        return Err(Error::Format("bad FTR1 magic".into()));
    }
    let rank = read_u32(bytes, pos)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(bytes, pos)? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    let payload = take(bytes, pos, n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn tensor_to_bytes(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    encode_tensor(t, &mut out);
    out
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let t = decode_tensor(bytes, &mut pos)?;
    if pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(t)
}

pub fn write_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    fs::write(path, tensor_to_bytes(t))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    tensor_from_bytes(&fs::read(path)?)
}

pub fn checkpoint_to_bytes(store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for p in store.iter() {
        let name = p.name.as_bytes();
        let len: u16 = name
            .len()
            .try_into()
            .map_err(|_| Error::Format(format!("parameter name too long: {}", p.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        encode_tensor(&p.value, &mut out);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ParamStore<f32>> {
    if bytes.len() < 4 {
        return Err(Error::Format("checkpoint shorter than its checksum".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Format(format!(
            "checkpoint CRC mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut store = ParamStore::new();
    let mut pos = 0;
    while pos < body.len() {
        let len = u16::from_le_bytes(take(body, &mut pos, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(body, &mut pos, len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_owned();
        let t = decode_tensor(body, &mut pos)?;
        store.add(name, t)?;
    }
    Ok(store)
}

pub fn save_checkpoint(path: &Path, store: &ParamStore<f32>) -> Result<()> {
    let bytes = checkpoint_to_bytes(store)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    checkpoint_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn blob_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0f32, -2.5]).unwrap();
        let b = tensor_to_bytes(&t);
        assert_eq!(&b[..4], b"FTR1");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24);
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::full(&[3], 0.5f32)).unwrap();
        let mut bytes = checkpoint_to_bytes(&s).unwrap();
        bytes[8] ^= 1;
        assert!(checkpoint_from_bytes(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_roundtrip_is_bit_exact(
            shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..4), 1..5),
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::seed::rng(seed);
            let mut s = ParamStore::new();
            for (i, shape) in shapes.iter().enumerate() {
                let t = Tensor::from_fn(shape, |_| f32::from_bits(rng.gen::<u32>() & 0x7F7F_FFFF));
                s.add(format!("layer{i}.w"), t).unwrap();
            }
            let back = checkpoint_from_bytes(&checkpoint_to_bytes(&s).unwrap()).unwrap();
            prop_assert_eq!(back.len(), s.len());
            for (a, b) in s.iter().zip(back.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(a.value.shape(), b.value.shape());
                let bits_a: Vec<u32> = a.value.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u32> = b.value.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}
