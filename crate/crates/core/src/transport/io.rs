//! Text and binary serialization of solutions.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! magic      8 bytes  "SETOTSOL"
//! version    u64      1
//! m, k, arcs u64 x 3
//! d          u64
//! dims       u64 x d
//! bounds     f64 x 2d     (lo, hi per axis)
//! t0, tf     f64 x 2
//! masses     f64 x (k + 1) m   node-major
//! fluxes     f64 x k * arcs    step-major
//! arcs       (u64 channel, u64 sign (0 = +, 1 = -), u64 tail, u64 head, f64 rate) x arcs
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geometry::Grid;

use super::{Solution, TimeGrid};

pub const MAGIC: &[u8; 8] = b"SETOTSOL";

/// One snapshot: `box,x1..xd,value`. With `as_density` the value is mass
/// divided by box volume.
pub fn write_snapshot_csv<W: Write>(mut w: W, grid: &Grid, masses: &[f64], as_density: bool) -> std::io::Result<()> {
    let d = grid.dim();
    let coords: Vec<String> = (1..=d).map(|a| format!("x{a}")).collect();
    writeln!(w, "box,{},{}", coords.join(","), if as_density { "density" } else { "mass" })?;
    let scale = if as_density { 1.0 / grid.box_volume() } else { 1.0 };
    for (v, &x) in masses.iter().enumerate() {
        write!(w, "{v}")?;
        for c in grid.box_center(v) {
            write!(w, ",{c}")?;
        }
        writeln!(w, ",{:e}", x * scale)?;
    }
    Ok(())
}

/// `step,arc,channel,sign,tail,head,flux` rows for nonzero fluxes.
pub fn write_flux_csv<W: Write>(mut w: W, solution: &Solution) -> std::io::Result<()> {
    writeln!(w, "step,arc,channel,sign,tail,head,flux")?;
    for (j, f) in solution.flux.iter().enumerate() {
        for (a, (arc, &x)) in solution.arcs.iter().zip(f).enumerate() {
            if x != 0.0 {
                writeln!(w, "{j},{a},{},{},{},{},{x:e}", arc.channel + 1, arc.sign.symbol(), arc.tail, arc.head)?;
            }
        }
    }
    Ok(())
}

pub fn write_binary<W: Write>(mut w: W, grid: &Grid, time: &TimeGrid, solution: &Solution) -> std::io::Result<()> {
    let u = |w: &mut W, x: u64| w.write_all(&x.to_le_bytes());
    let f = |w: &mut W, x: f64| w.write_all(&x.to_le_bytes());
    w.write_all(MAGIC)?;
    u(&mut w, 1)?;
    u(&mut w, grid.len() as u64)?;
    u(&mut w, time.k as u64)?;
    u(&mut w, solution.arcs.len() as u64)?;
    u(&mut w, grid.dim() as u64)?;
    for &n in grid.dims() {
        u(&mut w, n as u64)?;
    }
    for b in grid.bounds() {
        f(&mut w, b[0])?;
        f(&mut w, b[1])?;
    }
    f(&mut w, time.t0)?;
    f(&mut w, time.tf)?;
    for x in solution.density.iter().flatten().chain(solution.flux.iter().flatten()) {
        f(&mut w, *x)?;
    }
    for arc in &solution.arcs {
        u(&mut w, arc.channel as u64)?;
        u(&mut w, if arc.sign.is_plus() { 0 } else { 1 })?;
        u(&mut w, arc.tail as u64)?;
        u(&mut w, arc.head as u64)?;
        f(&mut w, arc.rate)?;
    }
    Ok(())
}

/// Masses and fluxes read back from [`write_binary`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub m: usize,
    pub k: usize,
    pub dims: Vec<usize>,
    pub bounds: Vec<[f64; 2]>,
    pub t0: f64,
    pub tf: f64,
    pub density: Vec<Vec<f64>>,
    pub flux: Vec<Vec<f64>>,
}

pub fn read_binary<R: Read>(mut r: R) -> Result<BinarySolution> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Dimension("not a solution file".into()));
    }
    let mut buf = [0u8; 8];
    let mut u = |r: &mut R| -> Result<usize> {
        r.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf) as usize)
    };
    let version = u(&mut r)?;
    if version != 1 {
        return Err(Error::Dimension(format!("unsupported solution file version {version}")));
    }
    let (m, k, na, d) = (u(&mut r)?, u(&mut r)?, u(&mut r)?, u(&mut r)?);
    let dims = (0..d).map(|_| u(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut fbuf = [0u8; 8];
    let mut f = |r: &mut R| -> Result<f64> {
        r.read_exact(&mut fbuf)?;
        Ok(f64::from_le_bytes(fbuf))
    };
    let bounds = (0..d).map(|_| Ok([f(&mut r)?, f(&mut r)?])).collect::<Result<Vec<_>>>()?;
    let (t0, tf) = (f(&mut r)?, f(&mut r)?);
    let density = (0..=k).map(|_| (0..m).map(|_| f(&mut r)).collect()).collect::<Result<Vec<Vec<f64>>>>()?;
    let flux = (0..k).map(|_| (0..na).map(|_| f(&mut r)).collect()).collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(BinarySolution { m, k, dims, bounds, t0, tf, density, flux })
}
