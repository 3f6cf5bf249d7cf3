//! Haar functions, averaging/martingale-difference operators, the Zygmund
//! martingale difference and the finite Zygmund expansion with explicit
//! completion terms.
//!
//! Convention: h^0_J = |J|^{-1/2} 1_J is the non-cancellative Haar function
//! and h^1_J = |J|^{-1/2}(1_{J_l} - 1_{J_r}) with the left child positive.
//! On rectangles of axes (2,3) the cancellative one-parameter Haar carries
//! a tag eta = (eta2, eta3) != (0,0); the finite eta summation is always
//! materialized.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::{BoxSums, GridFunction, GridSpec};
use crate::lattice::{Axis, DyadicInterval, Lattice, ZygRect};

/// Cancellation tag for a one-parameter Haar function on I^2 x I^3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Eta {
    pub e2: bool,
    pub e3: bool,
}

impl Eta {
    pub const CANCELLATIVE: [Eta; 3] = [
        Eta { e2: false, e3: true },
        Eta { e2: true, e3: false },
        Eta { e2: true, e3: true },
    ];

    pub fn label(&self) -> &'static str {
        match (self.e2, self.e3) {
            (false, false) => "00",
            (false, true) => "01",
            (true, false) => "10",
            (true, true) => "11",
        }
    }
}

/// One tensor factor of a test function along a single axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HaarFactor {
    /// Constant 1 along the whole axis.
    Unit,
    /// Plain indicator 1_J (no normalization).
    Indicator(DyadicInterval),
    /// h^0_J = |J|^{-1/2} 1_J.
    NonCanc(DyadicInterval),
    /// h^1_J = |J|^{-1/2} (1_{J_l} - 1_{J_r}).
    Canc(DyadicInterval),
}

impl HaarFactor {
    fn interval(&self) -> Option<&DyadicInterval> {
        match self {
            HaarFactor::Unit => None,
            HaarFactor::Indicator(iv) | HaarFactor::NonCanc(iv) | HaarFactor::Canc(iv) => Some(iv),
        }
    }
}

/// Tensor-product test function with one factor per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarTensor {
    pub factors: [HaarFactor; 3],
}

impl HaarTensor {
    pub fn new(f1: HaarFactor, f2: HaarFactor, f3: HaarFactor) -> HaarTensor {
        HaarTensor { factors: [f1, f2, f3] }
    }

    /// Fully non-cancellative tensor h^0_{I1} x h^0_{I2} x h^0_{I3}.
    pub fn avg(rect: &ZygRect) -> HaarTensor {
        HaarTensor::new(
            HaarFactor::NonCanc(rect.i1),
            HaarFactor::NonCanc(rect.i2),
            HaarFactor::NonCanc(rect.i3),
        )
    }

    /// Zygmund Haar tensor h_{I^1} x h^eta_{I^2 x I^3}.
    pub fn zygmund(rect: &ZygRect, eta: Eta) -> HaarTensor {
        HaarTensor::new(
            HaarFactor::Canc(rect.i1),
            if eta.e2 { HaarFactor::Canc(rect.i2) } else { HaarFactor::NonCanc(rect.i2) },
            if eta.e3 { HaarFactor::Canc(rect.i3) } else { HaarFactor::NonCanc(rect.i3) },
        )
    }

    /// Every cancellative factor needs children on the grid.
    pub fn check_admissible(&self, lat: &Lattice) -> Result<()> {
        for f in &self.factors {
            if let Some(iv) = f.interval() {
                lat.check_scale(iv)?;
                if matches!(f, HaarFactor::Canc(_)) && iv.j >= lat.spec.level(iv.axis.index()) {
                    return Err(Error::FinestScale);
                }
            }
        }
        Ok(())
    }
}

/// Per-axis expansion of a factor into at most two signed cell spans,
/// together with the factor's scalar normalization weight.
fn factor_spans(lat: &Lattice, axis: usize, f: &HaarFactor) -> (f64, Vec<((u32, u32), f64)>) {
    let n = lat.spec.n(axis);
    match f {
        HaarFactor::Unit => (1.0, vec![((0, n), 1.0)]),
        HaarFactor::Indicator(iv) => (1.0, vec![(lat.span(iv), 1.0)]),
        HaarFactor::NonCanc(iv) => ((iv.side()).powf(-0.5), vec![(lat.span(iv), 1.0)]),
        HaarFactor::Canc(iv) => {
            let (l, r) = lat.children(iv).expect("cancellative factor at finest scale");
            ((iv.side()).powf(-0.5), vec![(lat.span(&l), 1.0), (lat.span(&r), -1.0)])
        }
    }
}

/// <f, tensor> via O(1) box sums.
pub fn pair(sums: &BoxSums, lat: &Lattice, t: &HaarTensor) -> f64 {
    let (w1, s1) = factor_spans(lat, 0, &t.factors[0]);
    let (w2, s2) = factor_spans(lat, 1, &t.factors[1]);
    let (w3, s3) = factor_spans(lat, 2, &t.factors[2]);
    let mut acc = 0.0;
    for (a, sg1) in &s1 {
        for (b, sg2) in &s2 {
            for (c, sg3) in &s3 {
                acc += sg1 * sg2 * sg3 * sums.box_sum([*a, *b, *c]);
            }
        }
    }
    w1 * w2 * w3 * acc * lat.spec.cell_volume()
}

/// out += coeff * tensor (as a grid function).
pub fn accumulate(out: &mut GridFunction, lat: &Lattice, t: &HaarTensor, coeff: f64) {
    let (w1, s1) = factor_spans(lat, 0, &t.factors[0]);
    let (w2, s2) = factor_spans(lat, 1, &t.factors[1]);
    let (w3, s3) = factor_spans(lat, 2, &t.factors[2]);
    let w = coeff * w1 * w2 * w3;
    let spec = lat.spec;
    for (a, sg1) in &s1 {
        for (b, sg2) in &s2 {
            for (c, sg3) in &s3 {
                let v = w * sg1 * sg2 * sg3;
                for d1 in 0..a.1 {
                    let c1 = (a.0 + d1) % spec.n(0);
                    for d2 in 0..b.1 {
                        let c2 = (b.0 + d2) % spec.n(1);
                        for d3 in 0..c.1 {
                            let c3 = (c.0 + d3) % spec.n(2);
                            *out.at_mut([c1, c2, c3]) += v;
                        }
                    }
                }
            }
        }
    }
}

/// Materialize a tensor as a grid function.
pub fn tensor_function(lat: &Lattice, t: &HaarTensor) -> GridFunction {
    let mut g = GridFunction::zeros(lat.spec);
    accumulate(&mut g, lat, t, 1.0);
    g
}

/// One-axis Haar function broadcast over the remaining axes.
/// tag = false gives h^0, tag = true the cancellative h^1.
pub fn haar(lat: &Lattice, iv: &DyadicInterval, cancellative: bool) -> Result<GridFunction> {
    lat.check_scale(iv)?;
    let f = if cancellative {
        if iv.j >= lat.spec.level(iv.axis.index()) {
            return Err(Error::FinestScale);
        }
        HaarFactor::Canc(*iv)
    } else {
        HaarFactor::NonCanc(*iv)
    };
    let mut factors = [HaarFactor::Unit; 3];
    factors[iv.axis.index()] = f;
    Ok(tensor_function(lat, &HaarTensor { factors }))
}

/// h^eta on the rectangle I^2 x I^3, broadcast along axis 1.
pub fn haar_rect(lat: &Lattice, i2: &DyadicInterval, i3: &DyadicInterval, eta: Eta) -> Result<GridFunction> {
    let f2 = if eta.e2 { HaarFactor::Canc(*i2) } else { HaarFactor::NonCanc(*i2) };
    let f3 = if eta.e3 { HaarFactor::Canc(*i3) } else { HaarFactor::NonCanc(*i3) };
    let t = HaarTensor::new(HaarFactor::Unit, f2, f3);
    t.check_admissible(lat)?;
    Ok(tensor_function(lat, &t))
}

// ---------------------------------------------------------------------------
// level operators
// ---------------------------------------------------------------------------

/// Project f onto scale-j averages along one axis (acts on the full grid,
/// identity along the other axes).
pub fn avg_level_axis(f: &GridFunction, lat: &Lattice, axis: Axis, j: u32) -> GridFunction {
    let spec = f.spec;
    let ai = axis.index();
    debug_assert!(j <= spec.level(ai));
    let mut out = GridFunction::zeros(spec);
    let m = 1u32 << j;
    for pos in 0..m {
        let iv = DyadicInterval { axis, j, pos };
        let (start, width) = lat.span(&iv);
        // iterate the complementary axes
        let (oa, ob) = match ai {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for ca in 0..spec.n(oa) {
            for cb in 0..spec.n(ob) {
                let mut sum = 0.0;
                for d in 0..width {
                    let c = (start + d) % spec.n(ai);
                    let mut idx = [0u32; 3];
                    idx[ai] = c;
                    idx[oa] = ca;
                    idx[ob] = cb;
                    sum += f.at(idx);
                }
                let mean = sum / width as f64;
                for d in 0..width {
                    let c = (start + d) % spec.n(ai);
                    let mut idx = [0u32; 3];
                    idx[ai] = c;
                    idx[oa] = ca;
                    idx[ob] = cb;
                    *out.at_mut(idx) = mean;
                }
            }
        }
    }
    out
}

/// Simultaneous projection onto scale-(j2,j3) averages in axes (2,3).
pub fn avg_level_23(f: &GridFunction, lat: &Lattice, j2: u32, j3: u32) -> GridFunction {
    let a = avg_level_axis(f, lat, Axis::X2, j2);
    avg_level_axis(&a, lat, Axis::X3, j3)
}

/// Level martingale difference along one axis:
/// sum over scale-j intervals of Delta_I.
pub fn delta_level_axis(f: &GridFunction, lat: &Lattice, axis: Axis, j: u32) -> Result<GridFunction> {
    if j + 1 > lat.spec.level(axis.index()) {
        return Err(Error::FinestScale);
    }
    let fine = avg_level_axis(f, lat, axis, j + 1);
    let coarse = avg_level_axis(f, lat, axis, j);
    fine.sub(&coarse)
}

/// One-parameter level difference on axes (2,3): both scales advance
/// together, (j2, j3) -> (j2+1, j3+1).
pub fn delta_level_23(f: &GridFunction, lat: &Lattice, j2: u32, j3: u32) -> Result<GridFunction> {
    if j2 + 1 > lat.spec.level(1) || j3 + 1 > lat.spec.level(2) {
        return Err(Error::FinestScale);
    }
    let fine = avg_level_23(f, lat, j2 + 1, j3 + 1);
    let coarse = avg_level_23(f, lat, j2, j3);
    fine.sub(&coarse)
}

/// E_I f = <f>_I 1_I localized to one interval (partial average along the
/// interval's axis, zero outside).
pub fn avg_interval(f: &GridFunction, lat: &Lattice, iv: &DyadicInterval) -> Result<GridFunction> {
    lat.check_scale(iv)?;
    let spec = f.spec;
    let ai = iv.axis.index();
    let (start, width) = lat.span(iv);
    let mut out = GridFunction::zeros(spec);
    let (oa, ob) = match ai {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for ca in 0..spec.n(oa) {
        for cb in 0..spec.n(ob) {
            let mut sum = 0.0;
            for d in 0..width {
                let c = (start + d) % spec.n(ai);
                let mut idx = [0u32; 3];
                idx[ai] = c;
                idx[oa] = ca;
                idx[ob] = cb;
                sum += f.at(idx);
            }
            let mean = sum / width as f64;
            for d in 0..width {
                let c = (start + d) % spec.n(ai);
                let mut idx = [0u32; 3];
                idx[ai] = c;
                idx[oa] = ca;
                idx[ob] = cb;
                *out.at_mut(idx) = mean;
            }
        }
    }
    Ok(out)
}

/// E over a product of intervals on distinct axes (partial average over
/// those axes, localized to the product).
pub fn avg_rect(f: &GridFunction, lat: &Lattice, ivs: &[DyadicInterval]) -> Result<GridFunction> {
    let mut out = f.clone();
    let mut seen = [false; 3];
    for iv in ivs {
        if seen[iv.axis.index()] {
            return Err(Error::ConfigInvalid("duplicate axis in rectangle".into()));
        }
        seen[iv.axis.index()] = true;
        out = avg_interval(&out, lat, iv)?;
    }
    Ok(out)
}

/// Martingale difference of a single interval:
/// Delta_I f = sum_{J in ch(I)} E_J f - E_I f.
pub fn delta_interval(f: &GridFunction, lat: &Lattice, iv: &DyadicInterval) -> Result<GridFunction> {
    let (l, r) = lat.children(iv)?;
    let mut out = avg_interval(f, lat, &l)?;
    out.add_assign(&avg_interval(f, lat, &r)?)?;
    let coarse = avg_interval(f, lat, iv)?;
    out.sub(&coarse)
}

/// One-parameter martingale difference on the rectangle I^2 x I^3:
/// children are the four quadrants (both axes halve together).
pub fn delta_rect23(f: &GridFunction, lat: &Lattice, i2: &DyadicInterval, i3: &DyadicInterval) -> Result<GridFunction> {
    let (l2, r2) = lat.children(i2)?;
    let (l3, r3) = lat.children(i3)?;
    let mut out = GridFunction::zeros(f.spec);
    for c2 in [l2, r2] {
        for c3 in [l3, r3] {
            out.add_assign(&avg_rect(f, lat, &[c2, c3])?)?;
        }
    }
    let coarse = avg_rect(f, lat, &[*i2, *i3])?;
    out.sub(&coarse)
}

/// Zygmund martingale difference Delta_{I,Z} = Delta_{I^1} Delta_{I^2xI^3}.
pub fn delta_z(f: &GridFunction, lat: &Lattice, rect: &ZygRect) -> Result<GridFunction> {
    let inner = delta_rect23(f, lat, &rect.i2, &rect.i3)?;
    delta_interval(&inner, lat, &rect.i1)
}

/// Martingale difference block Delta_{I,k} = sum_{J^{(k)} = I} Delta_J,
/// restricted to I.
pub fn delta_block(f: &GridFunction, lat: &Lattice, iv: &DyadicInterval, k: u32) -> Result<GridFunction> {
    let ai = iv.axis.index();
    if iv.j + k + 1 > lat.spec.level(ai) {
        return Err(Error::FinestScale);
    }
    let fine = avg_level_axis(f, lat, iv.axis, iv.j + k + 1);
    let coarse = avg_level_axis(f, lat, iv.axis, iv.j + k);
    let diff = fine.sub(&coarse)?;
    // restrict to the interval's span
    let mut out = GridFunction::zeros(f.spec);
    let (start, width) = lat.span(iv);
    let spec = f.spec;
    let (oa, ob) = match ai {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for d in 0..width {
        let c = (start + d) % spec.n(ai);
        for ca in 0..spec.n(oa) {
            for cb in 0..spec.n(ob) {
                let mut idx = [0u32; 3];
                idx[ai] = c;
                idx[oa] = ca;
                idx[ob] = cb;
                *out.at_mut(idx) = diff.at(idx);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// martingale ladders
// ---------------------------------------------------------------------------

/// Splits f into mutually orthogonal level pieces summing to f exactly.
/// `pieces[0]` is the coarse top; the final piece is the unresolved bottom
/// residual when the family cannot reach single cells.
pub struct LevelLadder {
    pub pieces: Vec<GridFunction>,
    pub labels: Vec<String>,
}

impl LevelLadder {
    /// Axis ladder: [E_0 f, Delta-level_0 f, ..., Delta-level_{L-1} f].
    pub fn axis(f: &GridFunction, lat: &Lattice, axis: Axis) -> LevelLadder {
        let lmax = lat.spec.level(axis.index());
        let mut pieces = Vec::with_capacity(lmax as usize + 1);
        let mut labels = Vec::new();
        let mut prev = avg_level_axis(f, lat, axis, 0);
        pieces.push(prev.clone());
        labels.push("top".into());
        for j in 0..lmax {
            let next = avg_level_axis(f, lat, axis, j + 1);
            pieces.push(next.sub(&prev).unwrap());
            labels.push(format!("delta{j}"));
            prev = next;
        }
        LevelLadder { pieces, labels }
    }

    /// One-parameter (2,3) ladder of the dilated family D^{2,3}_{2^{-j1}}:
    /// top at scales (0, j1), one-parameter deltas, then the bottom
    /// residual f - E_{(J, j1+J)} f.
    pub fn plane23(f: &GridFunction, lat: &Lattice, j1: u32) -> LevelLadder {
        let spec = lat.spec;
        let depth = spec.level(1).min(spec.level(2).saturating_sub(j1));
        let mut pieces = Vec::new();
        let mut labels = Vec::new();
        let mut prev = avg_level_23(f, lat, 0, j1);
        pieces.push(prev.clone());
        labels.push("top".into());
        for t in 0..depth {
            let next = avg_level_23(f, lat, t + 1, j1 + t + 1);
            pieces.push(next.sub(&prev).unwrap());
            labels.push(format!("delta{t}"));
            prev = next;
        }
        pieces.push(f.sub(&prev).unwrap());
        labels.push("residual".into());
        LevelLadder { pieces, labels }
    }

    /// Prefix sums: partial[i] = sum of pieces before index i.
    pub fn prefixes(&self) -> Vec<GridFunction> {
        let spec = self.pieces[0].spec;
        let mut out = Vec::with_capacity(self.pieces.len());
        let mut acc = GridFunction::zeros(spec);
        for p in &self.pieces {
            out.push(acc.clone());
            acc.add_assign(p).unwrap();
        }
        out
    }

    pub fn total(&self) -> GridFunction {
        let mut acc = GridFunction::zeros(self.pieces[0].spec);
        for p in &self.pieces {
            acc.add_assign(p).unwrap();
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// Zygmund expansion
// ---------------------------------------------------------------------------

/// Finite Zygmund expansion: cancellative coefficients over Zygmund
/// rectangles plus the explicit completion terms that make reconstruction
/// exact on the finite grid.
pub struct ZygmundExpansion {
    pub lat: Lattice,
    pub coeffs: BTreeMap<(ZygRect, &'static str), f64>,
    pub completion: Vec<(String, GridFunction)>,
}

/// Expand f over the lattice's Zygmund rectangles. Completion carries the
/// global axis-1 average, the per-scale tops of D^{2,3}_{l(I^1)} and the
/// bottom residuals the finite grid cannot resolve.
pub fn zygmund_expand(f: &GridFunction, lat: &Lattice) -> ZygmundExpansion {
    let spec = f.spec;
    let sums = BoxSums::new(f);
    let mut coeffs = BTreeMap::new();
    let mut completion = Vec::new();

    completion.push(("axis1-average".to_string(), avg_level_axis(f, lat, Axis::X1, 0)));

    for j1 in 0..spec.level(0) {
        let block = delta_level_axis(f, lat, Axis::X1, j1).expect("j1 < L1");
        let ladder = LevelLadder::plane23(&block, lat, j1);
        completion.push((format!("top-j1={j1}"), ladder.pieces[0].clone()));
        completion.push((
            format!("residual-j1={j1}"),
            ladder.pieces[ladder.pieces.len() - 1].clone(),
        ));
        let depth = spec.level(1).min(spec.level(2) - j1);
        for j2 in 0..depth {
            let j3 = j1 + j2;
            for p1 in 0..1u32 << j1 {
                for p2 in 0..1u32 << j2 {
                    for p3 in 0..1u32 << j3 {
                        let rect = ZygRect::from_scales([j1, j2, j3], [p1, p2, p3]).unwrap();
                        for eta in Eta::CANCELLATIVE {
                            let t = HaarTensor::zygmund(&rect, eta);
                            let c = pair(&sums, lat, &t);
                            if c != 0.0 {
                                coeffs.insert((rect, eta.label()), c);
                            }
                        }
                    }
                }
            }
        }
    }
    ZygmundExpansion { lat: *lat, coeffs, completion }
}

/// Inverse of `zygmund_expand` (exact up to rounding).
pub fn reconstruct(exp: &ZygmundExpansion) -> GridFunction {
    let lat = &exp.lat;
    let mut out = GridFunction::zeros(lat.spec);
    for (_, part) in &exp.completion {
        out.add_assign(part).unwrap();
    }
    for ((rect, eta_label), c) in &exp.coeffs {
        let eta = Eta::CANCELLATIVE
            .into_iter()
            .find(|e| e.label() == *eta_label)
            .expect("cancellative label");
        accumulate(&mut out, lat, &HaarTensor::zygmund(rect, eta), *c);
    }
    out
}

impl ZygmundExpansion {
    /// sum of squared cancellative coefficients.
    pub fn coeff_energy(&self) -> f64 {
        self.coeffs.values().map(|c| c * c).sum()
    }

    /// sum of squared L2 norms of the completion parts.
    pub fn completion_energy(&self) -> f64 {
        self.completion.iter().map(|(_, p)| p.norm_l2().powi(2)).sum()
    }
}
