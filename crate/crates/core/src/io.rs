//! Flat binary container for controls and raw grid frames.
//!
//! Layout: header `N: u32, T: u32, p: f64, r: f64`, then row-major grids of
//! 64-bit floats, all little-endian. A controls container stores the `T-1`
//! normal-control slices followed by the `T-1` slices of each momenta
//! component; a frame container stores a single grid.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::controls::{MomentaField, NormalControl, NormPowers};
use crate::error::{Error, Result};
use crate::Grid;

/// Container header: grid size, time steps and the norm exponents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainerHeader {
    pub n: u32,
    pub t_steps: u32,
    pub p: f64,
    pub r: f64,
}

impl ContainerHeader {
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.n.to_le_bytes())?;
        w.write_all(&self.t_steps.to_le_bytes())?;
        w.write_all(&self.p.to_le_bytes())?;
        w.write_all(&self.r.to_le_bytes())?;
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        Ok(Self {
            n: read_u32(r)?,
            t_steps: read_u32(r)?,
            p: read_f64(r)?,
            r: read_f64(r)?,
        })
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_grid(w: &mut impl Write, grid: &Grid) -> Result<()> {
    for &v in grid.iter() {
        write_f64(w, v)?;
    }
    Ok(())
}

pub fn read_grid(r: &mut impl Read, n: usize) -> Result<Grid> {
    let mut out = Array2::zeros((n, n));
    for v in out.iter_mut() {
        *v = read_f64(r)?;
    }
    Ok(out)
}

/// Writes the controls container: header, `u` slices, `m1` slices, `m2`
/// slices, time-major.
pub fn write_controls(
    w: &mut impl Write,
    u: &NormalControl,
    m: &MomentaField,
    powers: &NormPowers,
    t_steps: usize,
) -> Result<()> {
    let header = ContainerHeader {
        n: u.n() as u32,
        t_steps: t_steps as u32,
        p: powers.p(),
        r: powers.r(),
    };
    header.write(w)?;
    for g in u.slices() {
        write_grid(w, g)?;
    }
    for comp in [1, 2] {
        for g in m.component(comp) {
            write_grid(w, g)?;
        }
    }
    Ok(())
}

/// Reads a controls container back; the header is returned alongside.
pub fn read_controls(
    r: &mut impl Read,
) -> Result<(ContainerHeader, NormalControl, MomentaField)> {
    let header = ContainerHeader::read(r)?;
    let n = header.n as usize;
    if header.t_steps < 2 {
        return Err(Error::BadContainer(format!(
            "t_steps = {} in header",
            header.t_steps
        )));
    }
    let slots = header.t_steps as usize - 1;
    let mut u = Vec::with_capacity(slots);
    for _ in 0..slots {
        u.push(read_grid(r, n)?);
    }
    let mut m1 = Vec::with_capacity(slots);
    for _ in 0..slots {
        m1.push(read_grid(r, n)?);
    }
    let mut m2 = Vec::with_capacity(slots);
    for _ in 0..slots {
        m2.push(read_grid(r, n)?);
    }
    Ok((
        header,
        NormalControl::new(u)?,
        MomentaField::new(m1, m2)?,
    ))
}

/// Writes one raw frame with the shared header layout.
pub fn write_frame(
    w: &mut impl Write,
    frame: &Grid,
    t_steps: usize,
    powers: &NormPowers,
) -> Result<()> {
    let header = ContainerHeader {
        n: frame.dim().0 as u32,
        t_steps: t_steps as u32,
        p: powers.p(),
        r: powers.r(),
    };
    header.write(w)?;
    write_grid(w, frame)
}

pub fn read_frame(r: &mut impl Read) -> Result<(ContainerHeader, Grid)> {
    let header = ContainerHeader::read(r)?;
    let grid = read_grid(r, header.n as usize)?;
    Ok((header, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn controls_strategy() -> impl Strategy<Value = (NormalControl, MomentaField)> {
        (2usize..5, 3usize..6).prop_flat_map(|(slots, n)| {
            let grid = proptest::collection::vec(-10.0f64..10.0, n * n);
            let slice = grid.prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap());
            let free = proptest::collection::vec(slice, slots - 1);
            (free.clone(), free.clone(), free).prop_map(move |(u, m1, m2)| {
                let with_zero = |mut v: Vec<Grid>| {
                    v.insert(0, Array2::zeros((n, n)));
                    v
                };
                (
                    NormalControl::new(with_zero(u)).unwrap(),
                    MomentaField::new(with_zero(m1), with_zero(m2)).unwrap(),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn controls_container_roundtrip((u, m) in controls_strategy()) {
            let powers = NormPowers::default();
            let t_steps = u.slots() + 1;
            let mut buf = Vec::new();
            write_controls(&mut buf, &u, &m, &powers, t_steps).unwrap();
            let (header, u2, m2) = read_controls(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(header.n as usize, u.n());
            prop_assert_eq!(header.t_steps as usize, t_steps);
            prop_assert_eq!(u, u2);
            prop_assert_eq!(m, m2);
        }
    }

    #[test]
    fn frame_roundtrip_and_header_bytes() {
        let frame = Array2::from_shape_fn((3, 3), |(i, j)| (i * 3 + j) as f64);
        let powers = NormPowers::default();
        let mut buf = Vec::new();
        write_frame(&mut buf, &frame, 5, &powers).unwrap();
        // Header is exactly N, T, p, r in little-endian.
        assert_eq!(&buf[0..4], &3u32.to_le_bytes());
        assert_eq!(&buf[4..8], &5u32.to_le_bytes());
        assert_eq!(&buf[8..16], &4.0f64.to_le_bytes());
        assert_eq!(&buf[16..24], &6.0f64.to_le_bytes());
        let (header, back) = read_frame(&mut buf.as_slice()).unwrap();
        assert_eq!(header.n, 3);
        assert_eq!(back, frame);
    }

    #[test]
    fn truncated_container_errors() {
        let buf = vec![0u8; 10];
        assert!(read_controls(&mut buf.as_slice()).is_err());
    }
}
