//! Binary layer dump.
//!
//! Layout, all little-endian:
//!
//! | bytes | content                       |
//! |-------|-------------------------------|
//! | 4     | magic `SCLR`                  |
//! | 4     | format version, `u32` = 1     |
//! | 8×3   | `m`, `n`, `r` as `u64`        |
//! | 8     | `lora_scale` as `f64`         |
//! | 8·m·n | `w_base`, row-major `f64`     |
//! | 8·m·r | `a`, row-major `f64`          |
//! | 8·n·r | `b`, row-major `f64`          |
//!
//! Values are always stored as `f64`, whatever the in-memory scalar.

use std::io::{Read, Write};
use std::path::Path;

use crate::adapter::LoraLayer;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SCLR";
pub const VERSION: u32 = 1;

// Refuses headers claiming more than this many values.
const MAX_VALUES: u64 = 1 << 32;

pub fn write_layer<T: Scalar, W: Write>(layer: &LoraLayer<T>, mut out: W) -> Result<()> {
    let (m, n) = layer.shape();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for d in [m, n, layer.rank()] {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    out.write_all(&layer.lora_scale().to_f64_lossy().to_le_bytes())?;
    for mat in [layer.w_base(), layer.a(), layer.b()] {
        for &x in mat.data() {
            out.write_all(&x.to_f64_lossy().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(input)?))
}

fn read_matrix<T: Scalar, R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<DenseMatrix<T>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(T::lit(read_f64(input)?));
    }
    DenseMatrix::new(rows, cols, data)
}

pub fn read_layer<T: Scalar, R: Read>(mut input: R) -> Result<LoraLayer<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut ver = [0u8; 4];
    input.read_exact(&mut ver)?;
    let version = u32::from_le_bytes(ver);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let m = read_u64(&mut input)?;
    let n = read_u64(&mut input)?;
    let r = read_u64(&mut input)?;
    let total = m
        .checked_mul(n)
        .and_then(|mn| (m + n).checked_mul(r).and_then(|x| x.checked_add(mn)));
    if total.is_none_or(|t| t > MAX_VALUES) {
        return Err(Error::Format(format!("implausible dimensions {m}x{n}, rank {r}")));
    }
    let (m, n, r) = (m as usize, n as usize, r as usize);
    let lora_scale = T::lit(read_f64(&mut input)?);
    let w_base = read_matrix(&mut input, m, n)?;
    let a = read_matrix(&mut input, m, r)?;
    let b = read_matrix(&mut input, n, r)?;
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after layer".into()));
    }
    LoraLayer::from_parts(w_base, a, b, lora_scale)
}

pub fn save_layer<T: Scalar>(layer: &LoraLayer<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_layer(layer, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_layer<T: Scalar>(path: impl AsRef<Path>) -> Result<LoraLayer<T>> {
    let file = std::fs::File::open(path)?;
    read_layer(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type M = DenseMatrix<f64>;

    fn layer(m: usize, n: usize, r: usize, seed: u64) -> LoraLayer<f64> {
        let w = M::from_fn(m, n, |i, j| ((i * 31 + j * 17) as f64 + seed as f64).sin());
        let mut l = LoraLayer::init(w, r, 0.3, seed).unwrap().with_lora_scale(1.5);
        let b = M::from_fn(n, r, |i, j| (i as f64 - j as f64) * 0.125);
        let a = l.a().clone();
        l.merge_factor(a, b).unwrap();
        l
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_layer(&layer(3, 2, 1, 0), &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SCLR");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[24..32].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(buf[32..40].try_into().unwrap()), 1.5);
        assert_eq!(buf.len(), 40 + 8 * (6 + 3 + 2));
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut buf = Vec::new();
        write_layer(&layer(3, 2, 1, 0), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_layer::<f64, _>(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(read_layer::<f64, _>(&buf[..buf.len() - 1]), Err(Error::Io(_))));
        let mut huge = buf.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(read_layer::<f64, _>(&huge[..]), Err(Error::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_layer::<f64, _>(&long[..]), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("scalora-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("layer.bin");
        let l = layer(5, 4, 2, 3);
        save_layer(&l, &path).unwrap();
        assert_eq!(load_layer::<f64>(&path).unwrap(), l);
        std::fs::remove_dir_all(dir).unwrap();
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(m in 1usize..7, n in 1usize..7, seed in 0u64..1000) {
            let r = 1 + (seed as usize) % m.min(n);
            let l = layer(m, n, r, seed);
            let mut buf = Vec::new();
            write_layer(&l, &mut buf).unwrap();
            let back: LoraLayer<f64> = read_layer(&buf[..]).unwrap();
            prop_assert_eq!(back, l);
        }
    }
}
