//! Binary field snapshots.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `HFLD` |
//! | 4     | format version (u32, currently 1) |
//! | 4     | dims (u32) |
//! | 12    | cells per axis (3 x u32, unused axes 1) |
//! | 1     | location (0 node, 1 edge, 2 face, 3 cell) |
//! | 1     | topology (0 periodic, 1 bounded) |
//! | 4     | component count (u32) |
//! | 48    | extent lo[3], hi[3] (f64) |
//! | 8     | value count (u64) |
//! | 8 n   | values (f64) |
//!
//! Cell masks are not stored; reading a masked field requires the grid.

use std::io::{Read, Write};

use super::field::DiscreteField;
use super::grid::{build_grid, Extent, GridRef, Location, Topology};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HFLD";
const VERSION: u32 = 1;

pub fn write_snapshot<W: Write>(field: &DiscreteField, mut w: W) -> Result<()> {
    let g = field.grid();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(g.dims() as u32).to_le_bytes())?;
    for n in g.resolution() {
        w.write_all(&(n as u32).to_le_bytes())?;
    }
    w.write_all(&[field.location().code()])?;
    w.write_all(&[match g.topology() {
        Topology::Periodic => 0u8,
        Topology::Bounded => 1u8,
    }])?;
    w.write_all(&(field.components() as u32).to_le_bytes())?;
    let e = g.extent();
    for v in e.lo.iter().chain(e.hi.iter()) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(field.values().len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * field.values().len());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Reads a snapshot. With `grid` given, the header must match it and the
/// field is attached to that grid (needed for masked grids); otherwise an
/// unmasked grid is rebuilt from the header.
pub fn read_snapshot<R: Read>(mut r: R, grid: Option<&GridRef>) -> Result<DiscreteField> {
    let mut head = [0u8; 86];
    r.read_exact(&mut head)?;
    if &head[0..4] != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = u32_at(&head, 4);
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let dims = u32_at(&head, 8) as usize;
    let res: Vec<usize> = (0..3).map(|j| u32_at(&head, 12 + 4 * j) as usize).collect();
    let location = Location::from_code(head[24]).ok_or_else(|| Error::Snapshot("bad location".into()))?;
    let topology = match head[25] {
        0 => Topology::Periodic,
        1 => Topology::Bounded,
        t => return Err(Error::Snapshot(format!("bad topology {t}"))),
    };
    let comps = u32_at(&head, 26) as usize;
    let lo: [f64; 3] = std::array::from_fn(|j| f64_at(&head, 30 + 8 * j));
    let hi: [f64; 3] = std::array::from_fn(|j| f64_at(&head, 54 + 8 * j));
    let count = u64::from_le_bytes(head[78..86].try_into().unwrap()) as usize;
    if !(dims == 2 || dims == 3) {
        return Err(Error::Snapshot(format!("bad dims {dims}")));
    }
    let g = match grid {
        Some(g) => {
            if g.dims() != dims
                || g.resolution()[..dims] != res[..dims]
                || g.topology() != topology
                || g.extent().lo[..dims] != lo[..dims]
                || g.extent().hi[..dims] != hi[..dims]
            {
                return Err(Error::Snapshot("header does not match the supplied grid".into()));
            }
            g.clone()
        }
        None => build_grid(dims, &res[..dims], topology, Extent::new(lo, hi), None)?,
    };
    if g.components(location) != comps || g.entity_count(location) != count {
        return Err(Error::Snapshot("component or value count mismatch".into()));
    }
    let mut raw = vec![0u8; 8 * count];
    r.read_exact(&mut raw)?;
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    DiscreteField::from_values(&g, location, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let g =
            build_grid(3, &[3, 4, 5], Topology::Bounded, Extent::new([0.0, -1.0, 0.5], [1.0, 1.0, 2.0]), None).unwrap();
        let f = DiscreteField::from_fn(&g, Location::Face, |c, x| c as f64 + x[0] * x[1] - x[2]);
        let mut buf = Vec::new();
        write_snapshot(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 86 + 8 * f.values().len());
        let back = read_snapshot(buf.as_slice(), None).unwrap();
        assert_eq!(back.values(), f.values());
        assert_eq!(back.location(), Location::Face);
        let again = read_snapshot(buf.as_slice(), Some(&g)).unwrap();
        assert_eq!(again.values(), f.values());
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_snapshot(&[0u8; 100][..], None).is_err());
    }
}
