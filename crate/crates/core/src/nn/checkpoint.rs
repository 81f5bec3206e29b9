//! Checkpoint encoding: a versioned header followed by named parameter
//! blobs (name, shape, raw little-endian values). The Q-network, the
//! classifier and optimizer moments all use the same format.

use std::io::{Read, Write};

use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BGCK";
const VERSION: u16 = 1;

/// Element width tag stored in the header.
fn dtype_tag<E: Element>() -> u8 {
    match std::mem::size_of::<E>() {
        4 => 4,
        8 => 8,
        _ => unreachable!("unsupported element width"),
    }
}

pub fn write_blobs<W: Write, E: Element>(
    out: &mut W,
    blobs: &[(String, &Tensor<E>)],
) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[dtype_tag::<E>()])?;
    out.write_all(&(blobs.len() as u32).to_le_bytes())?;
    for (name, t) in blobs {
        let nb = name.as_bytes();
        out.write_all(&(nb.len() as u16).to_le_bytes())?;
        out.write_all(nb)?;
        out.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * std::mem::size_of::<E>());
        for v in t.data() {
            let x = v.to_f64();
            if dtype_tag::<E>() == 4 {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_blobs<R: Read, E: Element>(input: &mut R) -> Result<Vec<(String, Tensor<E>)>> {
    let mut head = [0u8; 4];
    input
        .read_exact(&mut head)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    if &head != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let mut v2 = [0u8; 2];
    input.read_exact(&mut v2)?;
    let version = u16::from_le_bytes(v2);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file is v{version}, this build reads v{VERSION}"
        )));
    }
    let mut tag = [0u8; 1];
    input.read_exact(&mut tag)?;
    if tag[0] != dtype_tag::<E>() {
        return Err(Error::Checkpoint(format!(
            "dtype mismatch: file stores {}-byte floats",
            tag[0]
        )));
    }
    let mut c4 = [0u8; 4];
    input.read_exact(&mut c4)?;
    let count = u32::from_le_bytes(c4) as usize;
    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        let mut l2 = [0u8; 2];
        input.read_exact(&mut l2)?;
        let mut name = vec![0u8; u16::from_le_bytes(l2) as usize];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("blob name is not utf-8".into()))?;
        let mut nd = [0u8; 1];
        input.read_exact(&mut nd)?;
        let mut shape = Vec::with_capacity(nd[0] as usize);
        for _ in 0..nd[0] {
            input.read_exact(&mut c4)?;
            shape.push(u32::from_le_bytes(c4) as usize);
        }
        let numel: usize = shape.iter().product();
        let width = std::mem::size_of::<E>();
        let mut raw = vec![0u8; numel * width];
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::Checkpoint(format!("blob `{name}` truncated")))?;
        let mut data = Vec::with_capacity(numel);
        for chunk in raw.chunks_exact(width) {
            let v = if width == 4 {
                f32::from_le_bytes(chunk.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(chunk.try_into().unwrap())
            };
            data.push(E::from_f64(v));
        }
        blobs.push((name, Tensor::from_vec(&shape, data)));
    }
    Ok(blobs)
}

/// Collects a network's parameters as named blobs.
pub fn net_blobs<E: Element>(net: &mut impl super::optim::Net<E>) -> Vec<(String, Tensor<E>)> {
    let mut blobs = Vec::new();
    net.visit_params(&mut |name, p, _| blobs.push((name.to_string(), p.clone())));
    blobs
}

/// Loads named blobs into a network; every parameter must be present with
/// a matching shape. Extra blobs (optimizer state) are ignored here.
pub fn load_net_blobs<E: Element>(
    net: &mut impl super::optim::Net<E>,
    blobs: &[(String, Tensor<E>)],
) -> Result<()> {
    let mut missing = Vec::new();
    net.visit_params(&mut |name, p, _| {
        match blobs.iter().find(|(n, _)| n == name) {
            Some((_, t)) if t.shape() == p.shape() => *p = t.clone(),
            Some((_, t)) => missing.push(format!(
                "{name}: shape {:?} in file, {:?} expected",
                t.shape(),
                p.shape()
            )),
            None => missing.push(format!("{name}: absent from checkpoint")),
        }
    });
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint(missing.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let t1 = Tensor::from_vec(&[2, 3], vec![1.5f32, -2.25, 3.0, 0.1, f32::MIN_POSITIVE, 7.0]);
        let t2 = Tensor::from_vec(&[4], vec![0.0f32, -0.0, 1e-30, 1e30]);
        let blobs = vec![("a.w".to_string(), &t1), ("b.b".to_string(), &t2)];
        let mut buf = Vec::new();
        write_blobs(&mut buf, &blobs).unwrap();
        let back = read_blobs::<_, f32>(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a.w");
        assert_eq!(back[0].1.data(), t1.data());
        assert_eq!(back[1].1.shape(), &[4]);
        for (a, b) in back[1].1.data().iter().zip(t2.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_and_mismatched_files_are_refused() {
        let mut buf = Vec::new();
        write_blobs::<_, f32>(&mut buf, &[]).unwrap();
        buf[5] = 9; // version byte
        let err = read_blobs::<_, f32>(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version mismatch"), "{err}");

        let garbage = b"nope".to_vec();
        assert!(read_blobs::<_, f32>(&mut garbage.as_slice()).is_err());

        let mut ok = Vec::new();
        write_blobs::<_, f32>(&mut ok, &[]).unwrap();
        let err = read_blobs::<_, f64>(&mut ok.as_slice()).unwrap_err();
        assert!(err.to_string().contains("dtype mismatch"), "{err}");
    }
}
