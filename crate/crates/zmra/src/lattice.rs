//! Dyadic intervals on the periodic axes, shifted lattices, goodness,
//! Zygmund rectangles and the dilated families D_lambda, D_lambda^{2,3}.
//!
//! Scale bookkeeping is pure integer arithmetic: an interval of scale j on
//! axis a has side length 2^{-j} and occupies 2^{L_a - j} consecutive cells
//! (cyclically). Lattice shifts are truncated binary series realized as
//! whole numbers of finest cells, so shifted lattices live on the same grid.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Coordinate axis of the 3 = 1 + 2 parameter split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X1,
    X2,
    X3,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X1, Axis::X2, Axis::X3];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Axis::X1 => 0,
            Axis::X2 => 1,
            Axis::X3 => 2,
        }
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i]
    }

    pub fn from_number(n: u32) -> Result<Axis> {
        match n {
            1 => Ok(Axis::X1),
            2 => Ok(Axis::X2),
            3 => Ok(Axis::X3),
            _ => Err(Error::ConfigInvalid(format!("axis {n} out of range"))),
        }
    }

    pub fn number(self) -> u32 {
        self.index() as u32 + 1
    }
}

/// Addressed dyadic interval: axis, scale exponent j (side 2^{-j}) and
/// position in [0, 2^j). The associated lattice shift lives in `Lattice`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub axis: Axis,
    pub j: u32,
    pub pos: u32,
}

impl DyadicInterval {
    /// Position is reduced mod 2^j.
    pub fn new(axis: Axis, j: u32, pos: u32) -> DyadicInterval {
        DyadicInterval { axis, j, pos: pos % (1u32 << j) }
    }

    /// Side length 2^{-j} in units of the unit torus.
    #[inline]
    pub fn side(&self) -> f64 {
        (0.5f64).powi(self.j as i32)
    }

    /// Text address form `a<axis>:j<scale>:p<pos>`.
    pub fn parse(text: &str) -> Result<DyadicInterval> {
        let parts: Vec<&str> = text.split(':').collect();
        let bad = || Error::ConfigInvalid(format!("bad interval address `{text}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let axis = Axis::from_number(parts[0].strip_prefix('a').ok_or_else(bad)?.parse().map_err(|_| bad())?)?;
        let j: u32 = parts[1].strip_prefix('j').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let pos: u32 = parts[2].strip_prefix('p').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if j > 30 || pos >= (1 << j) {
            return Err(bad());
        }
        Ok(DyadicInterval { axis, j, pos })
    }
}

impl fmt::Display for DyadicInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}:j{}:p{}", self.axis.number(), self.j, self.pos)
    }
}

/// Truncated random binary shift for one axis: bit i (1 <= i <= finest)
/// holds omega_i; the realized offset of a scale-j interval is
/// sum_{i>j} omega_i 2^{-i}, a whole number of finest cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LatticeShift {
    bits: u64,
    finest: u32,
}

impl LatticeShift {
    pub fn zero(finest: u32) -> LatticeShift {
        LatticeShift { bits: 0, finest }
    }

    pub fn from_bits(bits: u64, finest: u32) -> LatticeShift {
        let mask = if finest >= 64 { u64::MAX } else { (1u64 << finest) - 1 };
        LatticeShift { bits: bits & mask, finest }
    }

    pub fn random(finest: u32, rng: &mut impl Rng) -> LatticeShift {
        LatticeShift::from_bits(rng.random::<u64>(), finest)
    }

    #[inline]
    pub fn bit(&self, i: u32) -> u32 {
        if i == 0 || i > self.finest {
            0
        } else {
            ((self.bits >> (i - 1)) & 1) as u32
        }
    }

    /// Offset of scale-j intervals, in units of finest cells (2^{-finest}).
    #[inline]
    pub fn offset_cells(&self, j: u32) -> u32 {
        let mut off = 0u32;
        for i in (j + 1)..=self.finest {
            off += self.bit(i) << (self.finest - i);
        }
        off
    }
}

/// A shifted dyadic lattice on the full grid: the grid spec plus one
/// truncated shift per axis. Immutable; all interval operations live here
/// because children/parent assignments depend on the shift bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub spec: GridSpec,
    pub shifts: [LatticeShift; 3],
}

impl Lattice {
    pub fn canonical(spec: GridSpec) -> Lattice {
        Lattice {
            spec,
            shifts: [
                LatticeShift::zero(spec.level(0)),
                LatticeShift::zero(spec.level(1)),
                LatticeShift::zero(spec.level(2)),
            ],
        }
    }

    pub fn shifted(spec: GridSpec, shifts: [LatticeShift; 3]) -> Lattice {
        Lattice { spec, shifts }
    }

    pub fn random(spec: GridSpec, rng: &mut impl Rng) -> Lattice {
        Lattice {
            spec,
            shifts: [
                LatticeShift::random(spec.level(0), rng),
                LatticeShift::random(spec.level(1), rng),
                LatticeShift::random(spec.level(2), rng),
            ],
        }
    }

    /// Random shift derived deterministically from a seed (external
    /// interface: {"L":[...],"shift_seed":u64}).
    pub fn from_seed(spec: GridSpec, seed: u64) -> Lattice {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Lattice::random(spec, &mut rng)
    }

    #[inline]
    fn level_of(&self, axis: Axis) -> u32 {
        self.spec.level(axis.index())
    }

    pub fn check_scale(&self, iv: &DyadicInterval) -> Result<()> {
        if iv.j > self.level_of(iv.axis) || iv.pos >= (1u32 << iv.j) {
            return Err(Error::ConfigInvalid(format!("interval {iv} not on grid")));
        }
        Ok(())
    }

    /// Number of cells covered by a scale-j interval on its axis.
    #[inline]
    pub fn width_cells(&self, iv: &DyadicInterval) -> u32 {
        1u32 << (self.level_of(iv.axis) - iv.j)
    }

    /// First covered cell (cyclic) of the interval on its axis.
    #[inline]
    pub fn start_cell(&self, iv: &DyadicInterval) -> u32 {
        let n = self.spec.n(iv.axis.index());
        let w = self.width_cells(iv);
        (iv.pos * w + self.shifts[iv.axis.index()].offset_cells(iv.j)) % n
    }

    /// (start, len) cell span of the interval on its axis (may wrap).
    #[inline]
    pub fn span(&self, iv: &DyadicInterval) -> (u32, u32) {
        (self.start_cell(iv), self.width_cells(iv))
    }

    /// The two children of an interval; left child shares the parent start.
    pub fn children(&self, iv: &DyadicInterval) -> Result<(DyadicInterval, DyadicInterval)> {
        if iv.j >= self.level_of(iv.axis) {
            return Err(Error::FinestScale);
        }
        let jc = iv.j + 1;
        let m = 1u32 << jc;
        let base = (2 * iv.pos + self.shifts[iv.axis.index()].bit(jc)) % m;
        Ok((
            DyadicInterval { axis: iv.axis, j: jc, pos: base },
            DyadicInterval { axis: iv.axis, j: jc, pos: (base + 1) % m },
        ))
    }

    pub fn parent(&self, iv: &DyadicInterval) -> Result<DyadicInterval> {
        if iv.j == 0 {
            return Err(Error::CoarsestScale);
        }
        let m = 1u32 << iv.j;
        let shifted = (iv.pos + m - self.shifts[iv.axis.index()].bit(iv.j)) % m;
        Ok(DyadicInterval {
            axis: iv.axis,
            j: iv.j - 1,
            pos: shifted >> 1,
        })
    }

    /// k-th parent I^{(k)}; parent_k(I, 0) = I.
    pub fn parent_k(&self, iv: &DyadicInterval, k: u32) -> Result<DyadicInterval> {
        if k > iv.j {
            return Err(Error::CoarsestScale);
        }
        let mut cur = *iv;
        for _ in 0..k {
            cur = self.parent(&cur)?;
        }
        Ok(cur)
    }

    /// I translated by n side lengths: pos + n mod 2^j (periodic).
    pub fn translate(&self, iv: &DyadicInterval, n: i64) -> DyadicInterval {
        let m = 1i64 << iv.j;
        DyadicInterval {
            axis: iv.axis,
            j: iv.j,
            pos: ((iv.pos as i64 + n).rem_euclid(m)) as u32,
        }
    }

    /// Relative position of the interval inside its k-th parent, in units
    /// of its own width (0 .. 2^k - 1).
    pub fn relative_position(&self, iv: &DyadicInterval, k: u32) -> Result<u32> {
        let par = self.parent_k(iv, k)?;
        let n = self.spec.n(iv.axis.index());
        let w = self.width_cells(iv);
        let delta = (self.start_cell(iv) + n - self.start_cell(&par)) % n;
        Ok(delta / w)
    }

    /// Goodness: distance from the interval to the boundary of its k-th
    /// parent is at least 2^{k-2} times its side length. Requires k >= 2.
    pub fn is_good(&self, iv: &DyadicInterval, k: u32) -> Result<bool> {
        if k < 2 {
            return Err(Error::ConfigInvalid(format!("goodness requires k >= 2, got {k}")));
        }
        let rel = self.relative_position(iv, k)?;
        let quarter = 1u32 << (k - 2);
        Ok(rel >= quarter && (1u32 << k) - 1 - rel >= quarter)
    }
}

/// Zygmund rectangle: axis-respecting triple with l(I3) = l(I1) l(I2),
/// i.e. j3 = j1 + j2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ZygRect {
    pub i1: DyadicInterval,
    pub i2: DyadicInterval,
    pub i3: DyadicInterval,
}

impl ZygRect {
    pub fn new(i1: DyadicInterval, i2: DyadicInterval, i3: DyadicInterval) -> Result<ZygRect> {
        if i1.axis != Axis::X1 || i2.axis != Axis::X2 || i3.axis != Axis::X3 {
            return Err(Error::ConfigInvalid("rectangle axes out of order".into()));
        }
        if i3.j != i1.j + i2.j {
            return Err(Error::ScaleMismatch);
        }
        Ok(ZygRect { i1, i2, i3 })
    }

    pub fn from_scales(js: [u32; 3], pos: [u32; 3]) -> Result<ZygRect> {
        ZygRect::new(
            DyadicInterval { axis: Axis::X1, j: js[0], pos: pos[0] },
            DyadicInterval { axis: Axis::X2, j: js[1], pos: pos[1] },
            DyadicInterval { axis: Axis::X3, j: js[2], pos: pos[2] },
        )
    }

    pub fn scales(&self) -> [u32; 3] {
        [self.i1.j, self.i2.j, self.i3.j]
    }

    pub fn interval(&self, axis: Axis) -> DyadicInterval {
        match axis {
            Axis::X1 => self.i1,
            Axis::X2 => self.i2,
            Axis::X3 => self.i3,
        }
    }

    /// Lebesgue measure |I| = 2^{-(j1+j2+j3)}.
    pub fn measure(&self) -> f64 {
        (0.5f64).powi((self.i1.j + self.i2.j + self.i3.j) as i32)
    }

    /// Componentwise translate by (n1,n2,n3) side lengths (periodic).
    pub fn translate(&self, lat: &Lattice, n: [i64; 3]) -> ZygRect {
        ZygRect {
            i1: lat.translate(&self.i1, n[0]),
            i2: lat.translate(&self.i2, n[1]),
            i3: lat.translate(&self.i3, n[2]),
        }
    }

    /// Componentwise k-th parent I^{(k)}; lands in D_lambda with
    /// lambda = 2^{k3 - k1 - k2}.
    pub fn parent_k(&self, lat: &Lattice, k: [u32; 3]) -> Result<Rect3> {
        Ok(Rect3 {
            i1: lat.parent_k(&self.i1, k[0])?,
            i2: lat.parent_k(&self.i2, k[1])?,
            i3: lat.parent_k(&self.i3, k[2])?,
        })
    }

    pub fn as_rect3(&self) -> Rect3 {
        Rect3 { i1: self.i1, i2: self.i2, i3: self.i3 }
    }
}

/// General dyadic rectangle (no scale relation imposed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect3 {
    pub i1: DyadicInterval,
    pub i2: DyadicInterval,
    pub i3: DyadicInterval,
}

impl Rect3 {
    pub fn scales(&self) -> [u32; 3] {
        [self.i1.j, self.i2.j, self.i3.j]
    }

    pub fn measure(&self) -> f64 {
        (0.5f64).powi((self.i1.j + self.i2.j + self.i3.j) as i32)
    }

    pub fn interval(&self, axis: Axis) -> DyadicInterval {
        match axis {
            Axis::X1 => self.i1,
            Axis::X2 => self.i2,
            Axis::X3 => self.i3,
        }
    }

    /// Dilation parameter n with l(I3) = 2^n l(I1) l(I2), i.e.
    /// n = j1 + j2 - j3.
    pub fn lambda_log2(&self) -> i32 {
        self.i1.j as i32 + self.i2.j as i32 - self.i3.j as i32
    }

    pub fn is_zygmund(&self) -> bool {
        self.lambda_log2() == 0
    }
}

/// Scale pairs (j1, j2) of grid-admissible Zygmund rectangles.
pub fn zygmund_scale_pairs(spec: &GridSpec) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for j1 in 0..=spec.level(0) {
        for j2 in 0..=spec.level(1) {
            if j1 + j2 <= spec.level(2) {
                out.push((j1, j2));
            }
        }
    }
    out
}

/// All Zygmund rectangles of the grid, ordered by scale then position.
pub fn enum_zygmund(spec: &GridSpec) -> Vec<ZygRect> {
    let mut out = Vec::new();
    for (j1, j2) in zygmund_scale_pairs(spec) {
        let j3 = j1 + j2;
        for p1 in 0..1u32 << j1 {
            for p2 in 0..1u32 << j2 {
                for p3 in 0..1u32 << j3 {
                    out.push(ZygRect::from_scales([j1, j2, j3], [p1, p2, p3]).unwrap());
                }
            }
        }
    }
    out
}

/// Zygmund rectangles admitting the cancellative Zygmund Haar tensor
/// (children exist along every axis: j1 < L1, j2 < L2, j3 < L3).
pub fn enum_zygmund_cancellative(spec: &GridSpec) -> Vec<ZygRect> {
    enum_zygmund(spec)
        .into_iter()
        .filter(|r| {
            r.i1.j < spec.level(0) && r.i2.j < spec.level(1) && r.i3.j < spec.level(2)
        })
        .collect()
}

/// Which dilated family a rectangle enumeration targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DilatedFlavor {
    /// 3-D family: lambda * l(K1) * l(K2) = l(K3).
    Full3,
    /// 2-D family in axes (2,3): l(I3) = lambda * l(I2).
    Plane23,
}

/// lambda = 2^{lambda_log2}, an exact power of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilatedLatticeSpec {
    pub lambda_log2: i32,
    pub flavor: DilatedFlavor,
}

impl DilatedLatticeSpec {
    pub fn full3(lambda_log2: i32) -> DilatedLatticeSpec {
        DilatedLatticeSpec { lambda_log2, flavor: DilatedFlavor::Full3 }
    }

    pub fn plane23(lambda_log2: i32) -> DilatedLatticeSpec {
        DilatedLatticeSpec { lambda_log2, flavor: DilatedFlavor::Plane23 }
    }

    /// Admissible scale tuples on the grid. For Full3 these are (j1,j2,j3)
    /// with j3 = j1 + j2 + lambda_log2; for Plane23 pairs (j2,j3) with
    /// j3 = j2 + lambda_log2 (encoded with j1 = 0).
    pub fn scale_tuples(&self, spec: &GridSpec) -> Result<Vec<[u32; 3]>> {
        let n = self.lambda_log2;
        let mut out = Vec::new();
        match self.flavor {
            DilatedFlavor::Full3 => {
                // lambda l(K1) l(K2) = l(K3)  <=>  j3 = j1 + j2 - n
                for j1 in 0..=spec.level(0) as i64 {
                    for j2 in 0..=spec.level(1) as i64 {
                        let j3 = j1 + j2 - n as i64;
                        if (0..=spec.level(2) as i64).contains(&j3) {
                            out.push([j1 as u32, j2 as u32, j3 as u32]);
                        }
                    }
                }
            }
            DilatedFlavor::Plane23 => {
                // l(I3) = lambda l(I2)  <=>  j3 = j2 - n
                for j2 in 0..=spec.level(1) as i64 {
                    let j3 = j2 - n as i64;
                    if (0..=spec.level(2) as i64).contains(&j3) {
                        out.push([0, j2 as u32, j3 as u32]);
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::LambdaOutOfRange(n));
        }
        Ok(out)
    }

    /// All rectangles of the family. Plane23 rectangles carry the trivial
    /// full axis-1 interval.
    pub fn enumerate(&self, spec: &GridSpec) -> Result<Vec<Rect3>> {
        let tuples = self.scale_tuples(spec)?;
        let mut out = Vec::new();
        for js in tuples {
            let p1max = match self.flavor {
                DilatedFlavor::Full3 => 1u32 << js[0],
                DilatedFlavor::Plane23 => 1,
            };
            for p1 in 0..p1max {
                for p2 in 0..1u32 << js[1] {
                    for p3 in 0..1u32 << js[2] {
                        out.push(Rect3 {
                            i1: DyadicInterval { axis: Axis::X1, j: if matches!(self.flavor, DilatedFlavor::Full3) { js[0] } else { 0 }, pos: p1 },
                            i2: DyadicInterval { axis: Axis::X2, j: js[1], pos: p2 },
                            i3: DyadicInterval { axis: Axis::X3, j: js[2], pos: p3 },
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Goodness of a rectangle per axis: component k^i = 0 skips the axis
/// ("a 0 designates that we do not have goodness in that parameter");
/// nonzero components require k^i >= 2.
pub fn is_good_rect(lat: &Lattice, rect: &ZygRect, k: [u32; 3]) -> Result<bool> {
    for ax in 0..3 {
        if k[ax] == 0 {
            continue;
        }
        if !lat.is_good(&rect.interval(Axis::from_index(ax)), k[ax])? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lat(l1: u32, l2: u32, l3: u32) -> Lattice {
        Lattice::canonical(GridSpec::new(l1, l2, l3).unwrap())
    }

    #[test]
    fn children_of_unit_interval() {
        let lat = lat(1, 1, 2);
        let i = DyadicInterval { axis: Axis::X1, j: 0, pos: 0 };
        let (l, r) = lat.children(&i).unwrap();
        assert_eq!((l.j, l.pos), (1, 0));
        assert_eq!((r.j, r.pos), (1, 1));
    }

    #[test]
    fn children_index_doubling_axis3() {
        let lat = lat(1, 1, 3);
        let i = DyadicInterval { axis: Axis::X3, j: 2, pos: 3 };
        let (l, r) = lat.children(&i).unwrap();
        assert_eq!((l.j, l.pos), (3, 6));
        assert_eq!((r.j, r.pos), (3, 7));
    }

    #[test]
    fn children_partition_parent_under_random_shifts() {
        let spec = GridSpec::new(3, 2, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let lat = Lattice::random(spec, &mut rng);
            for axis in Axis::ALL {
                let lmax = spec.level(axis.index());
                for j in 0..lmax {
                    for pos in 0..1u32 << j {
                        let iv = DyadicInterval { axis, j, pos };
                        let (a, b) = lat.children(&iv).unwrap();
                        // children cells tile the parent cells exactly
                        let n = spec.n(axis.index());
                        let mut cells = vec![0u8; n as usize];
                        for child in [a, b] {
                            let (s, w) = lat.span(&child);
                            for d in 0..w {
                                cells[((s + d) % n) as usize] += 1;
                            }
                        }
                        let (s, w) = lat.span(&iv);
                        for c in 0..n {
                            let inside = (c + n - s) % n < w;
                            assert_eq!(cells[c as usize], u8::from(inside));
                        }
                        // parent inverts children
                        assert_eq!(lat.parent(&a).unwrap(), iv);
                        assert_eq!(lat.parent(&b).unwrap(), iv);
                    }
                }
            }
        }
    }

    #[test]
    fn parent_k_is_shift_right_on_canonical() {
        let lat = lat(3, 3, 6);
        let i = DyadicInterval { axis: Axis::X1, j: 3, pos: 5 };
        let p = lat.parent_k(&i, 2).unwrap();
        assert_eq!((p.j, p.pos), (1, 1));
        assert_eq!(lat.parent_k(&i, 0).unwrap(), i);
        assert!(lat.parent_k(&i, 4).is_err());
    }

    #[test]
    fn translate_wraps() {
        let lat = lat(3, 3, 6);
        let i = DyadicInterval { axis: Axis::X1, j: 2, pos: 1 };
        assert_eq!(lat.translate(&i, 2).pos, 3);
        assert_eq!(lat.translate(&i, 0), i);
        assert_eq!(lat.translate(&i, -2).pos, 3); // periodic: 1-2 mod 4 = 3
    }

    #[test]
    fn goodness_boundary_cases() {
        // canonical lattice: interval at relative position r inside its
        // k-th parent is good iff 2^{k-2} <= r <= 3*2^{k-2} - 1.
        let lat = lat(3, 3, 6);
        let k = 2u32;
        for pos in 0..8u32 {
            let iv = DyadicInterval { axis: Axis::X3, j: 3, pos };
            let rel = lat.relative_position(&iv, k).unwrap();
            let expect = rel >= 1 && rel <= 2;
            assert_eq!(lat.is_good(&iv, k).unwrap(), expect);
        }
        let leftmost = DyadicInterval { axis: Axis::X3, j: 3, pos: 0 };
        assert!(!lat.is_good(&leftmost, 2).unwrap());
    }

    #[test]
    fn goodness_probability_is_exactly_half_in_distribution() {
        // every assignment of the k driving shift bits occurs equally often,
        // so counting over all 2^finest shift masks gives exactly 1/2.
        let spec = GridSpec::new(3, 3, 6).unwrap();
        for k in [2u32, 3] {
            let j = 3u32;
            let mut good = 0u32;
            let mut total = 0u32;
            for mask in 0..(1u64 << spec.level(2)) {
                let lat = Lattice::shifted(
                    spec,
                    [
                        LatticeShift::zero(spec.level(0)),
                        LatticeShift::zero(spec.level(1)),
                        LatticeShift::from_bits(mask, spec.level(2)),
                    ],
                );
                let iv = DyadicInterval { axis: Axis::X3, j, pos: 5 };
                total += 1;
                good += u32::from(lat.is_good(&iv, k).unwrap());
            }
            assert_eq!(2 * good, total);
        }
    }

    #[test]
    fn kparent_stability_for_good_intervals() {
        let spec = GridSpec::new(3, 3, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let lat = Lattice::random(spec, &mut rng);
            for k in [2u32, 3] {
                for pos in 0..1u32 << 3 {
                    let iv = DyadicInterval { axis: Axis::X3, j: 3, pos };
                    if lat.is_good(&iv, k).unwrap() {
                        let par = lat.parent_k(&iv, k).unwrap();
                        let reach = 1i64 << (k - 2);
                        for n in -reach..=reach {
                            let t = lat.translate(&iv, n);
                            assert_eq!(lat.parent_k(&t, k).unwrap(), par);
                        }
                    }
                }
            }
        }
    }

    /// Independent oracle: brute-force enumeration of interval triples with
    /// the scale relation, used to freeze the catalog sizes.
    fn brute_force_zygmund_count(spec: &GridSpec) -> usize {
        let mut count = 0usize;
        for j1 in 0..=spec.level(0) {
            for p1 in 0..1u32 << j1 {
                for j2 in 0..=spec.level(1) {
                    for p2 in 0..1u32 << j2 {
                        for j3 in 0..=spec.level(2) {
                            for p3 in 0..1u32 << j3 {
                                if j3 == j1 + j2 {
                                    let _ = (p1, p2, p3);
                                    count += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn zygmund_enumeration_matches_brute_force() {
        let small = GridSpec::new(1, 1, 2).unwrap();
        assert_eq!(brute_force_zygmund_count(&small), 25);
        assert_eq!(enum_zygmund(&small).len(), 25);
        let point = GridSpec::new(0, 0, 0).unwrap();
        assert_eq!(enum_zygmund(&point).len(), 1);
        let spec = GridSpec::new(2, 1, 3).unwrap();
        assert_eq!(enum_zygmund(&spec).len(), brute_force_zygmund_count(&spec));
        for r in enum_zygmund(&spec) {
            assert_eq!(r.i3.j, r.i1.j + r.i2.j);
        }
    }

    #[test]
    fn dilated_lambda_one_is_zygmund_family() {
        let spec = GridSpec::new(2, 2, 4).unwrap();
        let d1 = DilatedLatticeSpec::full3(0).enumerate(&spec).unwrap();
        let zy = enum_zygmund(&spec);
        assert_eq!(d1.len(), zy.len());
        for (a, b) in d1.iter().zip(zy.iter()) {
            assert_eq!((a.i1, a.i2, a.i3), (b.i1, b.i2, b.i3));
        }
    }

    #[test]
    fn dilated_plane23_scale_pairs() {
        // lambda = 1/2 on axes (2,3): pairs (j2, j3) with j3 = j2 + 1.
        let spec = GridSpec::new(1, 2, 3).unwrap();
        let tuples = DilatedLatticeSpec::plane23(-1).scale_tuples(&spec).unwrap();
        let pairs: Vec<(u32, u32)> = tuples.iter().map(|t| (t[1], t[2])).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2), (2, 3)]);
        assert!(DilatedLatticeSpec::plane23(7).scale_tuples(&spec).is_err());
    }

    #[test]
    fn zygmund_parent_lands_in_dilated_family() {
        let spec = GridSpec::new(3, 3, 6).unwrap();
        let lat = Lattice::canonical(spec);
        for r in enum_zygmund(&spec) {
            let k = [
                r.i1.j.min(1),
                r.i2.j.min(2).min(r.i2.j),
                r.i3.j.min(2),
            ];
            if k[0] <= r.i1.j && k[1] <= r.i2.j && k[2] <= r.i3.j {
                let p = r.parent_k(&lat, k).unwrap();
                assert_eq!(p.lambda_log2(), k[2] as i32 - k[0] as i32 - k[1] as i32);
            }
        }
    }

    #[test]
    fn interval_address_roundtrip() {
        let iv = DyadicInterval { axis: Axis::X3, j: 4, pos: 11 };
        assert_eq!(DyadicInterval::parse(&iv.to_string()).unwrap(), iv);
        assert!(DyadicInterval::parse("a4:j1:p0").is_err());
    }
}
