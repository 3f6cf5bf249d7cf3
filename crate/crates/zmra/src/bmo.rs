//! Little BMO over Zygmund rectangles, product BMO of coefficient
//! sequences, the slice/average equivalences, H^1-type duality estimates,
//! the nine-term paraproduct expansion of a pointwise product with its
//! explicit completion operator, and commutators with Zygmund shifts.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::Serialize;

use crate::analysis::lp_norm;
use crate::error::{Error, Result};
use crate::grid::{BoxSums, GridFunction, GridSpec};
use crate::haar::{
    avg_level_23, avg_level_axis, delta_level_23, delta_level_axis, pair, Eta, HaarFactor, HaarTensor,
    LevelLadder,
};
use crate::lattice::{enum_zygmund, Axis, DyadicInterval, Lattice, Rect3, ZygRect};
use crate::shifts::{LinearShiftData, ShiftData};

// ---------------------------------------------------------------------------
// bmo_Z
// ---------------------------------------------------------------------------

/// Mean oscillation of f over the cells of a rectangle.
fn oscillation(f: &GridFunction, lat: &Lattice, r: &Rect3) -> f64 {
    let spec = f.spec;
    let spans = [lat.span(&r.i1), lat.span(&r.i2), lat.span(&r.i3)];
    let mut values = Vec::with_capacity((spans[0].1 * spans[1].1 * spans[2].1) as usize);
    for d1 in 0..spans[0].1 {
        let c1 = (spans[0].0 + d1) % spec.n(0);
        for d2 in 0..spans[1].1 {
            let c2 = (spans[1].0 + d2) % spec.n(1);
            for d3 in 0..spans[2].1 {
                let c3 = (spans[2].0 + d3) % spec.n(2);
                values.push(f.at([c1, c2, c3]));
            }
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).abs()).sum::<f64>() / values.len() as f64
}

/// Little BMO norm: max over the given lattices and their Zygmund
/// rectangles of the mean oscillation <|b - <b>_R|>_R.
pub fn bmoz_norm(b: &GridFunction, lats: &[Lattice]) -> f64 {
    let mut worst: f64 = 0.0;
    for lat in lats {
        for rect in enum_zygmund(&b.spec) {
            worst = worst.max(oscillation(b, lat, &rect.as_rect3()));
        }
    }
    worst
}

/// Canonical grid plus `extra` seeded random shifted grids.
pub fn lattice_family(spec: GridSpec, extra: usize, seed: u64) -> Vec<Lattice> {
    let mut out = vec![Lattice::canonical(spec)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..extra {
        out.push(Lattice::random(spec, &mut rng));
    }
    out
}

// ---------------------------------------------------------------------------
// product BMO of coefficient sequences
// ---------------------------------------------------------------------------

/// Scalars indexed by Zygmund rectangles.
#[derive(Debug, Clone, Default)]
pub struct BmoProdSequence {
    pub coeffs: BTreeMap<ZygRect, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BmoProdReport {
    pub norm: f64,
    pub family_size: usize,
    pub attained_by: String,
}

/// Carleson-packing norm sup_Omega (|Omega|^{-1} sum_{I in Omega}
/// |b_I|^2)^{1/2} over the budgeted open-set family: all single Zygmund
/// rectangles plus the same-scale unions of up to 4 rectangles. Same-scale
/// members have equal measure, so the greedy top-m packing searches that
/// part of the family exactly.
pub fn bmo_prod_norm(spec: &GridSpec, b: &BmoProdSequence, budget: usize) -> Result<BmoProdReport> {
    let all = enum_zygmund(spec);
    if all.len() > budget {
        return Err(Error::FamilyTooLarge(all.len()));
    }
    let lat = Lattice::canonical(*spec);
    let contains = |outer: &ZygRect, inner: &ZygRect| -> bool {
        inner.i1.j >= outer.i1.j
            && inner.i2.j >= outer.i2.j
            && inner.i3.j >= outer.i3.j
            && lat.parent_k(&inner.i1, inner.i1.j - outer.i1.j).map(|p| p == outer.i1).unwrap_or(false)
            && lat.parent_k(&inner.i2, inner.i2.j - outer.i2.j).map(|p| p == outer.i2).unwrap_or(false)
            && lat.parent_k(&inner.i3, inner.i3.j - outer.i3.j).map(|p| p == outer.i3).unwrap_or(false)
    };
    let mut packed: BTreeMap<ZygRect, f64> = BTreeMap::new();
    for r in &all {
        let mut mass = 0.0;
        for (i, v) in &b.coeffs {
            if contains(r, i) {
                mass += v * v;
            }
        }
        if mass > 0.0 {
            packed.insert(*r, mass);
        }
    }
    let mut best = 0.0f64;
    let mut attained = "empty".to_string();
    let mut family_size = 0usize;
    for (r, mass) in &packed {
        family_size += 1;
        let v = mass / r.measure();
        if v > best {
            best = v;
            attained = format!("single {}|{}|{}", r.i1, r.i2, r.i3);
        }
    }
    let mut by_scale: BTreeMap<[u32; 3], Vec<f64>> = BTreeMap::new();
    for (r, mass) in &packed {
        by_scale.entry(r.scales()).or_default().push(*mass);
    }
    for (scales, mut masses) in by_scale {
        masses.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let measure = (0.5f64).powi((scales[0] + scales[1] + scales[2]) as i32);
        let mut acc = 0.0;
        for m in 1..=masses.len().min(4) {
            acc += masses[m - 1];
            family_size += 1;
            let v = acc / (m as f64 * measure);
            if v > best {
                best = v;
                attained = format!("union of {m} at scales {scales:?}");
            }
        }
    }
    Ok(BmoProdReport { norm: best.sqrt(), family_size, attained_by: attained })
}

// ---------------------------------------------------------------------------
// slice / average equivalences
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct BmoReport {
    pub bmoz: f64,
    /// sup over I^1 of the BMO of <b>_{I^1,1} over D^{2,3}_{l(I^1)}
    pub avg_axis1: f64,
    /// esssup over (x2,x3) of the 1-D BMO of the x1 slices
    pub slice_axis1: f64,
    /// the symmetric pair with axes 1 and 2 exchanged
    pub avg_axis2: f64,
    pub slice_axis2: f64,
    pub slice1_le_2bmoz: bool,
    pub slice2_le_2bmoz: bool,
    pub bmoz_le_sum1: bool,
    pub bmoz_le_sum2: bool,
}

fn interval_cells(lat: &Lattice, iv: &DyadicInterval) -> Vec<u32> {
    let (start, width) = lat.span(iv);
    let n = lat.spec.n(iv.axis.index());
    (0..width).map(|d| (start + d) % n).collect()
}

/// esssup over complementary columns of the slice BMO along `axis`.
fn slice_bmo(b: &GridFunction, lat: &Lattice, axis: Axis) -> f64 {
    let spec = b.spec;
    let ai = axis.index();
    let (oa, ob) = match ai {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut worst: f64 = 0.0;
    for ca in 0..spec.n(oa) {
        for cb in 0..spec.n(ob) {
            for j in 0..=spec.level(ai) {
                for pos in 0..1u32 << j {
                    let iv = DyadicInterval { axis, j, pos };
                    let vals: Vec<f64> = interval_cells(lat, &iv)
                        .iter()
                        .map(|&c| {
                            let mut idx = [0u32; 3];
                            idx[ai] = c;
                            idx[oa] = ca;
                            idx[ob] = cb;
                            b.at(idx)
                        })
                        .collect();
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    let osc = vals.iter().map(|v| (v - mean).abs()).sum::<f64>() / vals.len() as f64;
                    worst = worst.max(osc);
                }
            }
        }
    }
    worst
}

/// sup over intervals I on `avg_axis` of the BMO of the I-average over the
/// paired one-parameter family (for axis 1: rectangles of axes (2,3) with
/// l(I3) = l(I) l(I2); for axis 2 the roles of axes 1 and 2 swap).
fn averaged_bmo(b: &GridFunction, lat: &Lattice, avg_axis: Axis) -> f64 {
    let spec = b.spec;
    let ai = avg_axis.index();
    let (pa, pb) = match avg_axis {
        Axis::X1 => (1usize, 2usize),
        Axis::X2 => (0usize, 2usize),
        _ => panic!("averaged_bmo supports axes 1 and 2"),
    };
    let mut worst: f64 = 0.0;
    for j in 0..=spec.level(ai) {
        for pos in 0..1u32 << j {
            let iv = DyadicInterval { axis: avg_axis, j, pos };
            let avged = crate::haar::avg_interval(b, lat, &iv).unwrap();
            for ja in 0..=spec.level(pa) {
                let jb = j + ja;
                if jb > spec.level(pb) {
                    continue;
                }
                for posa in 0..1u32 << ja {
                    for posb in 0..1u32 << jb {
                        let full = |axis: Axis| DyadicInterval { axis, j: 0, pos: 0 };
                        let mut r = Rect3 { i1: full(Axis::X1), i2: full(Axis::X2), i3: full(Axis::X3) };
                        match avg_axis {
                            Axis::X1 => {
                                r.i1 = iv;
                                r.i2 = DyadicInterval { axis: Axis::X2, j: ja, pos: posa };
                                r.i3 = DyadicInterval { axis: Axis::X3, j: jb, pos: posb };
                            }
                            _ => {
                                r.i2 = iv;
                                r.i1 = DyadicInterval { axis: Axis::X1, j: ja, pos: posa };
                                r.i3 = DyadicInterval { axis: Axis::X3, j: jb, pos: posb };
                            }
                        }
                        worst = worst.max(oscillation(&avged, lat, &r));
                    }
                }
            }
        }
    }
    worst
}

/// The five equivalence quantities and the computed inequalities.
pub fn equiv_check(b: &GridFunction, lat: &Lattice) -> BmoReport {
    let bmoz = bmoz_norm(b, std::slice::from_ref(lat));
    let avg1 = averaged_bmo(b, lat, Axis::X1);
    let slice1 = slice_bmo(b, lat, Axis::X1);
    let avg2 = averaged_bmo(b, lat, Axis::X2);
    let slice2 = slice_bmo(b, lat, Axis::X2);
    let tol = 1e-12 * bmoz.max(1.0);
    BmoReport {
        bmoz,
        avg_axis1: avg1,
        slice_axis1: slice1,
        avg_axis2: avg2,
        slice_axis2: slice2,
        slice1_le_2bmoz: slice1 <= 2.0 * bmoz + tol,
        slice2_le_2bmoz: slice2 <= 2.0 * bmoz + tol,
        bmoz_le_sum1: bmoz <= slice1 + avg1 + tol,
        bmoz_le_sum2: bmoz <= slice2 + avg2 + tol,
    }
}

// ---------------------------------------------------------------------------
// H^1-type duality
// ---------------------------------------------------------------------------

/// |sum_{I^{2,3}} <<b>_{I^1}, h_{I^{2,3}}> phi| divided by
/// ||b||_bmoz * || (sum |phi|^2 1_{I^{2,3}} / |I^{2,3}|)^{1/2} ||_{L^1}
/// for a fixed I^1; coefficients keyed by ((I^2, I^3), eta label).
pub fn h1_duality_axes23(
    b: &GridFunction,
    lat: &Lattice,
    i1: &DyadicInterval,
    phi: &BTreeMap<(DyadicInterval, DyadicInterval, String), f64>,
    bmoz: f64,
) -> Result<f64> {
    if bmoz <= 0.0 {
        return Err(Error::ConfigInvalid("duality check needs bmoz > 0".into()));
    }
    let spec = b.spec;
    let avged = crate::haar::avg_interval(b, lat, i1)?;
    let sums = BoxSums::new(&avged);
    let (n2, n3) = (spec.n(1) as usize, spec.n(2) as usize);
    let mut pairing = 0.0;
    let mut weight = vec![0.0f64; n2 * n3];
    for ((i2, i3, eta_label), v) in phi {
        // family constraint: l(I^3) = l(I^1) l(I^2)
        if i3.j != i1.j + i2.j {
            return Err(Error::ScaleMismatch);
        }
        let eta = Eta::CANCELLATIVE
            .into_iter()
            .find(|e| e.label() == eta_label)
            .ok_or_else(|| Error::ConfigInvalid(format!("bad eta `{eta_label}`")))?;
        let t = HaarTensor::new(
            HaarFactor::Unit,
            if eta.e2 { HaarFactor::Canc(*i2) } else { HaarFactor::NonCanc(*i2) },
            if eta.e3 { HaarFactor::Canc(*i3) } else { HaarFactor::NonCanc(*i3) },
        );
        // the Unit axis-1 factor integrates the localized average; divide
        // by |I^1| to recover the pure (2,3) pairing of <b>_{I^1}
        let coeff = pair(&sums, lat, &t) / i1.side();
        pairing += coeff * v;
        let m23 = i2.side() * i3.side();
        for c2 in interval_cells(lat, i2) {
            for c3 in interval_cells(lat, i3) {
                weight[c2 as usize * n3 + c3 as usize] += v * v / m23;
            }
        }
    }
    let plane_cell = 1.0 / (n2 as f64 * n3 as f64);
    let l1: f64 = weight.iter().map(|w| w.sqrt()).sum::<f64>() * plane_cell;
    if l1 == 0.0 {
        return Ok(0.0);
    }
    Ok(pairing.abs() / (bmoz * l1))
}

/// The axis-1 variant at a fixed (x2,x3) cell column; coefficients keyed
/// by axis-1 intervals.
pub fn h1_duality_axis1(
    b: &GridFunction,
    lat: &Lattice,
    c2: u32,
    c3: u32,
    phi: &BTreeMap<DyadicInterval, f64>,
    bmoz: f64,
) -> Result<f64> {
    if bmoz <= 0.0 {
        return Err(Error::ConfigInvalid("duality check needs bmoz > 0".into()));
    }
    let spec = b.spec;
    let n1 = spec.n(0) as usize;
    let mut pairing = 0.0;
    let mut weight = vec![0.0f64; n1];
    for (i1, v) in phi {
        let (left, right) = lat.children(i1)?;
        let mut coeff = 0.0;
        let norm = i1.side().powf(-0.5);
        for (child, sign) in [(left, 1.0), (right, -1.0)] {
            for c1 in interval_cells(lat, &child) {
                coeff += sign * norm * b.at([c1, c2, c3]);
            }
        }
        coeff /= spec.n(0) as f64;
        pairing += coeff * v;
        for c1 in interval_cells(lat, i1) {
            weight[c1 as usize] += v * v / i1.side();
        }
    }
    let l1: f64 = weight.iter().map(|w| w.sqrt()).sum::<f64>() / n1 as f64;
    if l1 == 0.0 {
        return Ok(0.0);
    }
    Ok(pairing.abs() / (bmoz * l1))
}

// ---------------------------------------------------------------------------
// paraproducts
// ---------------------------------------------------------------------------

/// Component operators of the nine-term table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Component {
    /// Delta_{I,Z}
    Zyg,
    /// Delta_{I^1} E_{I^{2,3}}
    D1E23,
    /// E_{I^1} Delta_{I^{2,3}}
    E1D23,
    /// E_{I^1} E_{I^{2,3}}
    E1E23,
}

/// (b-component, f-component) of a_{i,j}: the expansion's nine displayed
/// terms in row-major order.
fn component_table(i: usize, j: usize) -> (Component, Component) {
    match (i, j) {
        (1, 1) => (Component::Zyg, Component::Zyg),
        (1, 2) => (Component::Zyg, Component::D1E23),
        (1, 3) => (Component::D1E23, Component::Zyg),
        (2, 1) => (Component::Zyg, Component::E1D23),
        (2, 2) => (Component::Zyg, Component::E1E23),
        (2, 3) => (Component::D1E23, Component::E1D23),
        (3, 1) => (Component::E1D23, Component::Zyg),
        (3, 2) => (Component::E1D23, Component::D1E23),
        (3, 3) => (Component::E1E23, Component::Zyg),
        _ => panic!("paraproduct indices live in 1..=3"),
    }
}

fn component_level(f: &GridFunction, lat: &Lattice, c: Component, j1: u32, j2: u32) -> Result<GridFunction> {
    let j3 = j1 + j2;
    Ok(match c {
        Component::Zyg => {
            let d1 = delta_level_axis(f, lat, Axis::X1, j1)?;
            delta_level_23(&d1, lat, j2, j3)?
        }
        Component::D1E23 => {
            let d1 = delta_level_axis(f, lat, Axis::X1, j1)?;
            avg_level_23(&d1, lat, j2, j3)
        }
        Component::E1D23 => {
            let e1 = avg_level_axis(f, lat, Axis::X1, j1);
            delta_level_23(&e1, lat, j2, j3)?
        }
        Component::E1E23 => {
            let e1 = avg_level_axis(f, lat, Axis::X1, j1);
            avg_level_23(&e1, lat, j2, j3)
        }
    })
}

/// The paraproduct a_{i,j}(b, f): sum over Zygmund rectangles of the
/// (i,j)-th product pattern. Same-level localized factors have disjoint
/// supports, so the level products realize the rectangle sums exactly.
pub fn paraproduct(i: usize, j: usize, b: &GridFunction, f: &GridFunction, lat: &Lattice) -> Result<GridFunction> {
    if b.spec != f.spec {
        return Err(Error::GridMismatch);
    }
    let (bc, fc) = component_table(i, j);
    let mut out = GridFunction::zeros(b.spec);
    for (j1, j2) in crate::decompose::cancellative_scale_pairs(&b.spec) {
        let u = component_level(b, lat, bc, j1, j2)?;
        let v = component_level(f, lat, fc, j1, j2)?;
        out.add_assign(&u.pointwise_mul(&v)?)?;
    }
    Ok(out)
}

/// Evaluators for the 3x3 paraproduct grid of a fixed symbol b.
pub struct ParaproductTable<'a> {
    pub b: &'a GridFunction,
    pub lat: &'a Lattice,
}

impl ParaproductTable<'_> {
    pub fn apply(&self, i: usize, j: usize, f: &GridFunction) -> Result<GridFunction> {
        paraproduct(i, j, self.b, f, self.lat)
    }
}

/// The explicit completion operator: the axis-1 coarse product plus, per
/// axis-1 level and product pattern, the (2,3) tops and unresolved bottom
/// residuals of the finite one-parameter ladders.
pub fn paraproduct_completion(b: &GridFunction, f: &GridFunction, lat: &Lattice) -> Result<GridFunction> {
    if b.spec != f.spec {
        return Err(Error::GridMismatch);
    }
    let spec = b.spec;
    let mut out = GridFunction::zeros(spec);
    let lb = LevelLadder::axis(b, lat, Axis::X1);
    let lf = LevelLadder::axis(f, lat, Axis::X1);
    let pb = lb.prefixes();
    let pf = lf.prefixes();
    out.add_assign(&lb.pieces[0].pointwise_mul(&lf.pieces[0])?)?;
    for j1 in 0..spec.level(0) {
        let idx = (j1 + 1) as usize;
        let pairs = [
            (&lb.pieces[idx], &lf.pieces[idx]),
            (&lb.pieces[idx], &pf[idx]),
            (&pb[idx], &lf.pieces[idx]),
        ];
        for (u, v) in pairs {
            let lu = LevelLadder::plane23(u, lat, j1);
            let lv = LevelLadder::plane23(v, lat, j1);
            out.add_assign(&lu.pieces[0].pointwise_mul(&lv.pieces[0])?)?;
            let last = lu.pieces.len() - 1;
            let pu = lu.prefixes();
            let pv = lv.prefixes();
            let du = &lu.pieces[last];
            let dv = &lv.pieces[last];
            out.add_assign(&du.pointwise_mul(dv)?)?;
            out.add_assign(&du.pointwise_mul(&pv[last])?)?;
            out.add_assign(&pu[last].pointwise_mul(dv)?)?;
        }
    }
    Ok(out)
}

/// Residual of bf = sum a_{i,j}(b,f) + completion (relative sup norm).
pub fn paraproduct_identity_residual(b: &GridFunction, f: &GridFunction, lat: &Lattice) -> Result<f64> {
    let mut total = paraproduct_completion(b, f, lat)?;
    for i in 1..=3 {
        for j in 1..=3 {
            total.add_assign(&paraproduct(i, j, b, f, lat)?)?;
        }
    }
    let product = b.pointwise_mul(f)?;
    Ok(crate::grid::rel_residual(&total, &product))
}

// ---------------------------------------------------------------------------
// commutators
// ---------------------------------------------------------------------------

/// [b, Q] f = b (Q f) - Q (b f) for a linear Zygmund shift.
pub fn commutator(b: &GridFunction, q: &LinearShiftData, f: &GridFunction) -> Result<GridFunction> {
    let qf = q.apply(f)?;
    let bqf = b.pointwise_mul(&qf)?;
    let bf = b.pointwise_mul(f)?;
    let qbf = q.apply(&bf)?;
    bqf.sub(&qbf)
}

/// Bilinear commutator in one input slot:
/// [b, Q]_s(f1,f2) = b Q(f1,f2) - Q applied with b f in slot s.
pub fn commutator_bilinear(
    b: &GridFunction,
    q: &ShiftData,
    f1: &GridFunction,
    f2: &GridFunction,
    slot: usize,
) -> Result<GridFunction> {
    let direct = b.pointwise_mul(&q.apply(f1, f2)?)?;
    let perturbed = match slot {
        1 => q.apply(&b.pointwise_mul(f1)?, f2)?,
        2 => q.apply(f1, &b.pointwise_mul(f2)?)?,
        _ => return Err(Error::ConfigInvalid("bilinear commutator slot must be 1 or 2".into())),
    };
    direct.sub(&perturbed)
}

#[derive(Debug, Clone, Serialize)]
pub struct CommutatorBenchRow {
    pub k: [u32; 3],
    pub p: f64,
    pub theta_tag: f64,
    pub max_ratio: f64,
    pub trials: usize,
}

/// Empirical commutator table: max over random (b, f) of
/// ||[b,Q_k] f||_p / (max_i k^i (|k|+1)^2 ||b||_bmoz ||f||_p); for the
/// trivial complexity the factor max_i k^i is replaced by 1 and the ratio
/// is the reported base constant.
pub fn commutator_bench(
    q: &LinearShiftData,
    p_values: &[f64],
    theta_tag: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<CommutatorBenchRow>> {
    let spec = q.spec;
    let lat = Lattice::canonical(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kmax = (*q.k.iter().max().unwrap()).max(1) as f64;
    let abs_k = (q.k[0] + q.k[1] + q.k[2]) as f64;
    let denom_k = kmax * (abs_k + 1.0).powi(2);
    let mut best = vec![0.0f64; p_values.len()];
    let mut used = 0usize;
    for _ in 0..trials {
        let b = GridFunction::random(spec, &mut rng);
        let nb = bmoz_norm(&b, std::slice::from_ref(&lat));
        if nb < 1e-9 {
            continue;
        }
        let f = GridFunction::random(spec, &mut rng);
        let comm = commutator(&b, q, &f)?;
        used += 1;
        for (i, &p) in p_values.iter().enumerate() {
            let nf = lp_norm(&f, p);
            if nf == 0.0 {
                continue;
            }
            let r = lp_norm(&comm, p) / (denom_k * nb * nf);
            if r > best[i] {
                best[i] = r;
            }
        }
    }
    Ok(p_values
        .iter()
        .enumerate()
        .map(|(i, &p)| CommutatorBenchRow { k: q.k, p, theta_tag, max_ratio: best[i], trials: used })
        .collect())
}

// ---------------------------------------------------------------------------
// telescoping ladders for <b>_L - <b>_Q
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LadderRung {
    pub from: Rect3,
    pub to: Rect3,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct BLadder {
    pub rungs: Vec<LadderRung>,
    pub terminal: f64,
}

fn rect_average(b: &BoxSums, lat: &Lattice, r: &Rect3) -> f64 {
    let spans = [lat.span(&r.i1), lat.span(&r.i2), lat.span(&r.i3)];
    let cells = (spans[0].1 as f64) * (spans[1].1 as f64) * (spans[2].1 as f64);
    b.box_sum(spans) / cells
}

/// Telescoping ladder from a Zygmund rectangle L up to its Zygmund
/// ancestor R: one-parameter (2,3) parents L^{(0,r,r)} until the axis-2
/// scale of R, then entangled parents L^{(r,l2,r+l2)} until R. On the
/// first leg l(L^1) l((L^2)^{(r)}) = l((L^3)^{(r)}) stays exact, so every
/// rung is an average difference over nested dilated-family rectangles.
pub fn b_ladder(b: &GridFunction, lat: &Lattice, l: &ZygRect, r: &Rect3) -> Result<BLadder> {
    if l.i2.j < r.i2.j || l.i1.j < r.i1.j || l.i3.j < r.i3.j {
        return Err(Error::NotAncestor);
    }
    let l2 = l.i2.j - r.i2.j;
    let k1 = l.i1.j - r.i1.j;
    if l.i3.j - r.i3.j != l2 + k1 {
        return Err(Error::NotAncestor);
    }
    let sums = BoxSums::new(b);
    let mut rungs = Vec::new();
    let mut cur = l.as_rect3();
    for _ in 0..l2 {
        let next = Rect3 {
            i1: cur.i1,
            i2: lat.parent_k(&cur.i2, 1)?,
            i3: lat.parent_k(&cur.i3, 1)?,
        };
        debug_assert_eq!(cur.i1.j + next.i2.j, next.i3.j);
        let value = rect_average(&sums, lat, &cur) - rect_average(&sums, lat, &next);
        rungs.push(LadderRung { from: cur, to: next, value });
        cur = next;
    }
    for _ in 0..k1 {
        let next = Rect3 {
            i1: lat.parent_k(&cur.i1, 1)?,
            i2: cur.i2,
            i3: lat.parent_k(&cur.i3, 1)?,
        };
        let value = rect_average(&sums, lat, &cur) - rect_average(&sums, lat, &next);
        rungs.push(LadderRung { from: cur, to: next, value });
        cur = next;
    }
    if cur != *r {
        return Err(Error::NotAncestor);
    }
    let terminal = rect_average(&sums, lat, r);
    Ok(BLadder { rungs, terminal })
}
