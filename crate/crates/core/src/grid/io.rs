//! Binary grid dump: magic `LSG1`, u32 axis count, u32 extent per axis,
//! f64 spacing, f64 origin per axis, then the f64 values with x fastest.
//! Everything little-endian.

use super::LevelSetGrid;
use crate::error::{Error, Result};
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"LSG1";

pub fn write_grid<W: Write>(g: &LevelSetGrid, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(g.ndim() as u32).to_le_bytes())?;
    for &d in g.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&g.spacing().to_le_bytes())?;
    for a in 0..g.ndim() {
        w.write_all(&g.origin()[a].to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(8 * g.len());
    for v in g.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_grid<R: Read>(mut r: R) -> Result<LevelSetGrid> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an LSG1 grid file".into()));
    }
    let ndim = read_u32(&mut r)? as usize;
    if ndim != 2 && ndim != 3 {
        return Err(Error::Format(format!("unsupported axis count {ndim}")));
    }
    let dims = (0..ndim)
        .map(|_| read_u32(&mut r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let spacing = read_f64(&mut r)?;
    let origin = (0..ndim).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= 1 << 32)
        .ok_or_else(|| Error::Format(format!("implausible extents {dims:?}")))?;
    let mut raw = vec![0u8; 8 * len];
    r.read_exact(&mut raw)?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    LevelSetGrid::new(&dims, spacing, &origin, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_grid(&b"LSG2\x02\x00\x00\x00"[..]).is_err());
        let g = LevelSetGrid::from_fn_2d(4, 5, 0.5, [1.0, 2.0], |p| p[0] - p[1]).unwrap();
        let mut buf = Vec::new();
        write_grid(&g, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_grid(&buf[..]).is_err());
    }

    #[test]
    fn header_layout() {
        let g = LevelSetGrid::from_fn_2d(4, 5, 0.5, [1.0, 2.0], |_| 0.0).unwrap();
        let mut buf = Vec::new();
        write_grid(&g, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"LSG1");
        assert_eq!(buf[4..8], 2u32.to_le_bytes());
        assert_eq!(buf[8..12], 4u32.to_le_bytes());
        assert_eq!(buf[12..16], 5u32.to_le_bytes());
        assert_eq!(buf.len(), 4 + 4 + 8 + 8 + 16 + 8 * 20);
    }

    proptest! {
        #[test]
        fn roundtrip_is_lossless(
            dims in prop::collection::vec(4usize..7, 2..=3),
            spacing in 1e-3f64..10.0,
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let origin: Vec<f64> = dims.iter().map(|&d| d as f64 * -0.37).collect();
            let values: Vec<f64> = (0..n)
                .map(|i| ((seed as f64 + i as f64) * 0.618).sin() * 1e3)
                .collect();
            let g = LevelSetGrid::new(&dims, spacing, &origin, values).unwrap();
            let mut buf = Vec::new();
            write_grid(&g, &mut buf).unwrap();
            let back = read_grid(&buf[..]).unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
