//! Finite periodic grids on [0,1)^3 and dense real-valued grid functions.
//!
//! Axis i is resolved into 2^{L_i} cells; a `GridFunction` stores one value
//! per cell with cell-average semantics. All scale bookkeeping elsewhere is
//! in integer exponents, so lattice identities stay exact; floating point
//! enters only through function values.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-axis dyadic resolutions (N_i = 2^{L_i}) of the periodic grid.
///
/// The constraint `L3 >= L1 + L2` keeps Zygmund scale triples
/// j3 = j1 + j2 admissible down to the finest parameter-1/2 scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub l: [u32; 3],
}

impl GridSpec {
    pub fn new(l1: u32, l2: u32, l3: u32) -> Result<Self> {
        if l3 < l1 + l2 {
            return Err(Error::ConfigInvalid(format!(
                "GridSpec requires L3 >= L1 + L2, got ({l1},{l2},{l3})"
            )));
        }
        if l1 + l2 + l3 > 30 {
            return Err(Error::ConfigInvalid(format!(
                "grid with 2^{} cells is beyond desk scale",
                l1 + l2 + l3
            )));
        }
        Ok(GridSpec { l: [l1, l2, l3] })
    }

    /// Default desk-scale grid: 8 x 8 x 64 = 4096 cells.
    pub fn default_grid() -> Self {
        GridSpec { l: [3, 3, 6] }
    }

    /// A (2,3)-plane grid is modelled as a 3-D grid with a trivial axis 1.
    pub fn plane23(l2: u32, l3: u32) -> Result<Self> {
        GridSpec::new(0, l2, l3)
    }

    #[inline]
    pub fn level(&self, axis: usize) -> u32 {
        self.l[axis]
    }

    #[inline]
    pub fn n(&self, axis: usize) -> u32 {
        1 << self.l[axis]
    }

    #[inline]
    pub fn cells(&self) -> usize {
        1usize << (self.l[0] + self.l[1] + self.l[2])
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.cells() as f64
    }

    #[inline]
    pub fn index(&self, c: [u32; 3]) -> usize {
        debug_assert!(c[0] < self.n(0) && c[1] < self.n(1) && c[2] < self.n(2));
        (((c[0] as usize) << self.l[1] | c[1] as usize) << self.l[2]) | c[2] as usize
    }

    /// Center of a cell in [0,1)^3 coordinates.
    pub fn cell_center(&self, c: [u32; 3]) -> [f64; 3] {
        [
            (c[0] as f64 + 0.5) / self.n(0) as f64,
            (c[1] as f64 + 0.5) / self.n(1) as f64,
            (c[2] as f64 + 0.5) / self.n(2) as f64,
        ]
    }
}

/// Dense real function on a grid, one value per cell (cell averages).
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(spec: GridSpec) -> Self {
        GridFunction {
            spec,
            values: vec![0.0; spec.cells()],
        }
    }

    pub fn constant(spec: GridSpec, v: f64) -> Self {
        GridFunction {
            spec,
            values: vec![v; spec.cells()],
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.cells() {
            return Err(Error::GridMismatch);
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::ConfigInvalid("non-finite grid value".into()));
        }
        Ok(GridFunction { spec, values })
    }

    pub fn from_fn(spec: GridSpec, mut f: impl FnMut([u32; 3]) -> f64) -> Self {
        let mut g = GridFunction::zeros(spec);
        for c1 in 0..spec.n(0) {
            for c2 in 0..spec.n(1) {
                for c3 in 0..spec.n(2) {
                    g.values[spec.index([c1, c2, c3])] = f([c1, c2, c3]);
                }
            }
        }
        g
    }

    /// Uniform[-1,1) entries; the workhorse random fixture.
    pub fn random(spec: GridSpec, rng: &mut impl Rng) -> Self {
        GridFunction {
            spec,
            values: (0..spec.cells()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[inline]
    pub fn at(&self, c: [u32; 3]) -> f64 {
        self.values[self.spec.index(c)]
    }

    #[inline]
    pub fn at_mut(&mut self, c: [u32; 3]) -> &mut f64 {
        &mut self.values[self.spec.index(c)]
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn add_assign(&mut self, other: &GridFunction) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch);
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch);
        }
        Ok(GridFunction {
            spec: self.spec,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn pointwise_mul(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch);
        }
        Ok(GridFunction {
            spec: self.spec,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    /// Riemann-sum pairing <f,g> = sum f*g*cellvol.
    pub fn inner(&self, other: &GridFunction) -> Result<f64> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch);
        }
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        Ok(dot * self.spec.cell_volume())
    }

    pub fn norm_sup(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn norm_l2(&self) -> f64 {
        (self
            .values
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            * self.spec.cell_volume())
        .sqrt()
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_volume()
    }
}

/// Relative sup-norm residual |a - b|_inf / max(|a|_inf, |b|_inf, 1).
pub fn rel_residual(a: &GridFunction, b: &GridFunction) -> f64 {
    let mut num = 0.0f64;
    for (x, y) in a.values.iter().zip(&b.values) {
        num = num.max((x - y).abs());
    }
    num / a.norm_sup().max(b.norm_sup()).max(1.0)
}

/// 3-D inclusive prefix sums supporting O(1) periodic box sums.
///
/// Every Haar pairing and rectangle average in the toolkit reduces to a
/// handful of box sums, so this is the central accelerator.
pub struct BoxSums {
    spec: GridSpec,
    // prefix[i1][i2][i3] = sum over c < i componentwise, dims (n1+1)(n2+1)(n3+1)
    prefix: Vec<f64>,
    d1: usize,
    d2: usize,
}

impl BoxSums {
    pub fn new(f: &GridFunction) -> Self {
        let spec = f.spec;
        let (n1, n2, n3) = (spec.n(0) as usize, spec.n(1) as usize, spec.n(2) as usize);
        let d2 = n3 + 1;
        let d1 = (n2 + 1) * d2;
        let mut prefix = vec![0.0f64; (n1 + 1) * d1];
        for c1 in 0..n1 {
            for c2 in 0..n2 {
                let mut row = 0.0;
                for c3 in 0..n3 {
                    row += f.values[spec.index([c1 as u32, c2 as u32, c3 as u32])];
                    let idx = (c1 + 1) * d1 + (c2 + 1) * d2 + (c3 + 1);
                    prefix[idx] = row + prefix[idx - d2] + prefix[idx - d1] - prefix[idx - d1 - d2];
                }
            }
        }
        BoxSums { spec, prefix, d1, d2 }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    #[inline]
    fn corner(&self, i1: usize, i2: usize, i3: usize) -> f64 {
        self.prefix[i1 * self.d1 + i2 * self.d2 + i3]
    }

    /// Sum over the axis-aligned box [a1,b1) x [a2,b2) x [a3,b3), no wrap.
    #[inline]
    fn box_sum_flat(&self, a: [usize; 3], b: [usize; 3]) -> f64 {
        self.corner(b[0], b[1], b[2]) - self.corner(a[0], b[1], b[2]) - self.corner(b[0], a[1], b[2])
            - self.corner(b[0], b[1], a[2])
            + self.corner(a[0], a[1], b[2])
            + self.corner(a[0], b[1], a[2])
            + self.corner(b[0], a[1], a[2])
            - self.corner(a[0], a[1], a[2])
    }

    /// Sum of cell values over a periodic box given per-axis (start, len).
    /// Each axis range may wrap once around the torus.
    pub fn box_sum(&self, spans: [(u32, u32); 3]) -> f64 {
        // split each axis into at most two flat segments
        let mut segs: [[(usize, usize); 2]; 3] = [[(0, 0); 2]; 3];
        let mut counts = [0usize; 3];
        for ax in 0..3 {
            let n = self.spec.n(ax);
            let (start, len) = spans[ax];
            debug_assert!(len <= n);
            let start = start % n;
            if start + len <= n {
                segs[ax][0] = (start as usize, (start + len) as usize);
                counts[ax] = 1;
            } else {
                segs[ax][0] = (start as usize, n as usize);
                segs[ax][1] = (0, (start + len - n) as usize);
                counts[ax] = 2;
            }
        }
        let mut total = 0.0;
        for s1 in 0..counts[0] {
            for s2 in 0..counts[1] {
                for s3 in 0..counts[2] {
                    let a = [segs[0][s1].0, segs[1][s2].0, segs[2][s3].0];
                    let b = [segs[0][s1].1, segs[1][s2].1, segs[2][s3].1];
                    total += self.box_sum_flat(a, b);
                }
            }
        }
        total
    }

    /// Riemann integral over the box (box_sum times cell volume).
    pub fn box_integral(&self, spans: [(u32, u32); 3]) -> f64 {
        self.box_sum(spans) * self.spec.cell_volume()
    }
}

const BIN_MAGIC_RESERVED: u32 = 0;

/// Binary serialization: 16-byte header (L1,L2,L3,reserved as little-endian
/// u32) followed by row-major 8-byte little-endian floats.
pub fn write_binary(f: &GridFunction, w: &mut impl Write) -> Result<()> {
    for part in [f.spec.l[0], f.spec.l[1], f.spec.l[2], BIN_MAGIC_RESERVED] {
        w.write_all(&part.to_le_bytes())?;
    }
    for v in &f.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary(r: &mut impl Read) -> Result<GridFunction> {
    let mut hdr = [0u8; 16];
    r.read_exact(&mut hdr)?;
    let word = |i: usize| u32::from_le_bytes(hdr[4 * i..4 * i + 4].try_into().unwrap());
    let spec = GridSpec::new(word(0), word(1), word(2))?;
    let mut values = vec![0.0f64; spec.cells()];
    let mut buf = [0u8; 8];
    for v in &mut values {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    GridFunction::from_values(spec, values)
}

/// CSV export: header line `c1,c2,c3,value`, one row per cell.
pub fn write_csv(f: &GridFunction, w: &mut impl Write) -> Result<()> {
    writeln!(w, "c1,c2,c3,value")?;
    let spec = f.spec;
    for c1 in 0..spec.n(0) {
        for c2 in 0..spec.n(1) {
            for c3 in 0..spec.n(2) {
                writeln!(w, "{},{},{},{:.17e}", c1, c2, c3, f.at([c1, c2, c3]))?;
            }
        }
    }
    Ok(())
}

pub fn read_csv(spec: GridSpec, r: &mut impl Read) -> Result<GridFunction> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut g = GridFunction::zeros(spec);
    let mut seen = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with("c1") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::ConfigInvalid(format!("bad csv line {}", lineno + 1)));
        }
        let parse_u = |s: &str| -> Result<u32> {
            s.trim()
                .parse()
                .map_err(|_| Error::ConfigInvalid(format!("bad csv field `{s}`")))
        };
        let c = [parse_u(parts[0])?, parse_u(parts[1])?, parse_u(parts[2])?];
        let v: f64 = parts[3]
            .trim()
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("bad csv value `{}`", parts[3])))?;
        *g.at_mut(c) = v;
        seen += 1;
    }
    if seen != spec.cells() {
        return Err(Error::ConfigInvalid(format!(
            "csv had {seen} cells, grid needs {}",
            spec.cells()
        )));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_invariant_enforced() {
        assert!(GridSpec::new(3, 3, 5).is_err());
        assert!(GridSpec::new(3, 3, 6).is_ok());
    }

    #[test]
    fn inner_of_ones_is_one() {
        let spec = GridSpec::new(2, 2, 4).unwrap();
        let one = GridFunction::constant(spec, 1.0);
        assert_eq!(one.inner(&one).unwrap(), 1.0);
    }

    #[test]
    fn box_sums_match_direct() {
        let spec = GridSpec::new(2, 1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = GridFunction::random(spec, &mut rng);
        let sums = BoxSums::new(&f);
        // wrap-around box on every axis
        let spans = [(3u32, 2u32), (1, 2), (6, 5)];
        let mut direct = 0.0;
        for d1 in 0..spans[0].1 {
            for d2 in 0..spans[1].1 {
                for d3 in 0..spans[2].1 {
                    let c = [
                        (spans[0].0 + d1) % spec.n(0),
                        (spans[1].0 + d2) % spec.n(1),
                        (spans[2].0 + d3) % spec.n(2),
                    ];
                    direct += f.at(c);
                }
            }
        }
        assert!((sums.box_sum(spans) - direct).abs() < 1e-12);
    }

    #[test]
    fn binary_roundtrip() {
        let spec = GridSpec::new(1, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = GridFunction::random(spec, &mut rng);
        let mut buf = Vec::new();
        write_binary(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * spec.cells());
        let g = read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn csv_roundtrip() {
        let spec = GridSpec::new(1, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = GridFunction::random(spec, &mut rng);
        let mut buf = Vec::new();
        write_csv(&f, &mut buf).unwrap();
        let g = read_csv(spec, &mut buf.as_slice()).unwrap();
        for (a, b) in f.values.iter().zip(&g.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
