//! Portable grid files and PGM images.
//!
//! Layout: magic `BLGRID1\0`, a kind byte (0 = f64 field, 1 = packed bits), the
//! half-width `N` as u64 and the cell size as f64, then `(2N+1)^2` row-major entries
//! (little-endian f64, or bits packed LSB-first into bytes).

#[allow(unused_imports)]
use num_traits::{Float, FloatConst, One, ToPrimitive, Zero};
use std::io::{self, Read, Write};

use crate::scalar::Real;

use super::dirichlet::ScalarField;
use super::lattice::{Lattice, SquareLattice};
use super::mask::LatticeMask;
use super::GridError;

const MAGIC: &[u8; 8] = b"BLGRID1\0";

fn write_header<W: Write>(w: &mut W, kind: u8, extent: usize, cell_size: f64) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[kind])?;
    w.write_all(&(extent as u64).to_le_bytes())?;
    w.write_all(&cell_size.to_le_bytes())
}

fn read_header<R: Read>(r: &mut R, kind: u8) -> Result<(usize, f64), GridError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GridError::Malformed("bad magic".into()));
    }
    let mut k = [0u8; 1];
    r.read_exact(&mut k)?;
    if k[0] != kind {
        return Err(GridError::Malformed(format!(
            "expected kind {kind}, found {}",
            k[0]
        )));
    }
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let extent = u64::from_le_bytes(b) as usize;
    r.read_exact(&mut b)?;
    let cell = f64::from_le_bytes(b);
    if extent == 0 || extent > 1 << 20 || !(cell > 0.0) {
        return Err(GridError::Malformed("bad header".into()));
    }
    Ok((extent, cell))
}

pub fn write_field<T: Real, W: Write>(
    field: &ScalarField<SquareLattice<T>>,
    mut w: W,
) -> io::Result<()> {
    let lat = field.lattice();
    write_header(&mut w, 0, lat.extent, lat.cell_size.as_f64())?;
    for v in field.values() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

/// Reads a field written by [`write_field`]; every cell comes back free.
pub fn read_field<R: Read>(mut r: R) -> Result<ScalarField<SquareLattice<f64>>, GridError> {
    let (extent, cell) = read_header(&mut r, 0)?;
    let lat = SquareLattice::new(cell, extent)?;
    let mut values = Vec::with_capacity(lat.cell_count());
    let mut b = [0u8; 8];
    for _ in 0..lat.cell_count() {
        r.read_exact(&mut b)?;
        values.push(f64::from_le_bytes(b));
    }
    Ok(ScalarField::from_values(lat, values))
}

pub fn write_mask<T: Real, W: Write>(
    mask: &LatticeMask<SquareLattice<T>>,
    mut w: W,
) -> io::Result<()> {
    let lat = mask.lattice();
    write_header(&mut w, 1, lat.extent, lat.cell_size.as_f64())?;
    let n = lat.cell_count();
    let mut bytes = vec![0u8; n.div_ceil(8)];
    for c in mask.occupied_cells() {
        bytes[c / 8] |= 1 << (c % 8);
    }
    w.write_all(&bytes)
}

pub fn read_mask<R: Read>(mut r: R) -> Result<LatticeMask<SquareLattice<f64>>, GridError> {
    let (extent, cell) = read_header(&mut r, 1)?;
    let lat = SquareLattice::new(cell, extent)?;
    let n = lat.cell_count();
    let mut bytes = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut bytes)?;
    let mut mask = LatticeMask::empty(lat);
    for c in 0..n {
        if bytes[c / 8] >> (c % 8) & 1 == 1 {
            mask.set(c);
        }
    }
    Ok(mask)
}

/// Binary PGM with row 0 at the top of the image (largest `y`), values scaled from
/// `[lo, hi]` to `0..=255`.
pub fn write_pgm<W: Write>(
    rows: usize,
    cols: usize,
    value: impl Fn(usize, usize) -> f64,
    lo: f64,
    hi: f64,
    mut w: W,
) -> io::Result<()> {
    write!(w, "P5\n{cols} {rows}\n255\n")?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut line = vec![0u8; cols];
    for r in (0..rows).rev() {
        for (c, px) in line.iter_mut().enumerate() {
            let t = ((value(r, c) - lo) / span).clamp(0.0, 1.0);
            *px = (t * 255.0).round() as u8;
        }
        w.write_all(&line)?;
    }
    Ok(())
}

pub fn field_to_pgm<L: Lattice, W: Write>(field: &ScalarField<L>, w: W) -> io::Result<()> {
    let (rows, cols) = field.lattice().dims();
    write_pgm(
        rows,
        cols,
        |r, c| field.get(r * cols + c).as_f64(),
        0.0,
        1.0,
        w,
    )
}

/// Occupied cells black on white.
pub fn mask_to_pgm<L: Lattice, W: Write>(mask: &LatticeMask<L>, w: W) -> io::Result<()> {
    let (rows, cols) = mask.lattice().dims();
    write_pgm(
        rows,
        cols,
        |r, c| {
            if mask.is_occupied(r * cols + c) {
                0.0
            } else {
                1.0
            }
        },
        0.0,
        1.0,
        w,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{PlanarPath, Point2};

    #[test]
    fn mask_round_trip() {
        let p = PlanarPath::new(vec![Point2::new(-2.0, 1.0), Point2::new(3.0, -2.5)], 1.0).unwrap();
        let m = crate::grid::rasterize_square(&[&p], 0.5, 9).unwrap();
        let mut buf = Vec::new();
        write_mask(&m, &mut buf).unwrap();
        let back = read_mask(buf.as_slice()).unwrap();
        assert_eq!(
            back.occupied_cells().collect::<Vec<_>>(),
            m.occupied_cells().collect::<Vec<_>>()
        );
        assert!(read_field(buf.as_slice()).is_err());
    }

    #[test]
    fn field_round_trip_and_pgm() {
        let lat = SquareLattice::new(0.25, 4).unwrap();
        let values: Vec<f64> = (0..lat.cell_count()).map(|i| i as f64 / 100.0).collect();
        let f = ScalarField::from_values(lat, values.clone());
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        assert_eq!(
            read_field(buf.as_slice()).unwrap().values(),
            values.as_slice()
        );
        let mut img = Vec::new();
        field_to_pgm(&f, &mut img).unwrap();
        assert!(img.starts_with(b"P5\n9 9\n255\n"));
        assert_eq!(img.len(), 11 + 81);
    }
}
