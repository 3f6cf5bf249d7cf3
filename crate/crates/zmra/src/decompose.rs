//! Multiresolution decomposition of trilinear forms: the collapse of the
//! off-diagonal scale sums into diagonal sums, the key term, the four-term
//! average bracket, coefficient extraction against translated Haar tensors,
//! singular-kernel quadrature and the decay verification against
//! (|k|+1)^2 phi(k) |I|^{3/2} / |K|^2.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forms::TrilinearForm;
use crate::grid::{BoxSums, GridFunction, GridSpec};
use crate::haar::{pair, Eta, HaarFactor, HaarTensor, LevelLadder};
use crate::kernels::{Kernel, KernelParams};
use crate::lattice::{Axis, Lattice, ZygRect};

pub use crate::forms::{DenseForm, ProductForm};

// ---------------------------------------------------------------------------
// phi
// ---------------------------------------------------------------------------

/// Coefficient decay rate
/// phi(k) = 2^{-k1 a1 - k2 min(a23, theta) - max(k3-k1-k2, 0) theta}.
pub fn phi(k: [u32; 3], params: &KernelParams) -> f64 {
    let k1 = k[0] as f64;
    let k2 = k[1] as f64;
    let k3 = k[2] as f64;
    let exp = -k1 * params.alpha1
        - k2 * params.alpha23.min(params.theta)
        - (k3 - k1 - k2).max(0.0) * params.theta;
    (2.0f64).powf(exp)
}

// ---------------------------------------------------------------------------
// collapse identity
// ---------------------------------------------------------------------------

/// Which martingale family drives the collapse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollapseAxis {
    /// Axis-1 ladder (scales 2^{-j}).
    One,
    /// One-parameter (2,3) ladder of D^{2,3}_{2^{-j1}}.
    TwoThree { j1: u32 },
}

#[derive(Debug, Clone, Serialize)]
pub struct CollapseReport {
    pub full: f64,
    pub collapsed: f64,
    pub residual_rel: f64,
}

fn ladder_for(f: &GridFunction, lat: &Lattice, axis: CollapseAxis) -> LevelLadder {
    match axis {
        CollapseAxis::One => LevelLadder::axis(f, lat, Axis::X1),
        CollapseAxis::TwoThree { j1 } => LevelLadder::plane23(f, lat, j1),
    }
}

/// Collapse of the full scale-comparison sum into seven diagonal sums:
/// whenever a slot sits at a strictly coarser scale its difference operator
/// becomes the averaging operator. Pure algebra valid for any trilinear
/// form; the residual against the direct pairing is pure rounding.
pub fn collapse_check(
    t: &dyn TrilinearForm,
    lat: &Lattice,
    f1: &GridFunction,
    f2: &GridFunction,
    f3: &GridFunction,
    axis: CollapseAxis,
) -> Result<CollapseReport> {
    crate::forms::check_same_grid(t, &[f1, f2, f3])?;
    let l1 = ladder_for(f1, lat, axis);
    let l2 = ladder_for(f2, lat, axis);
    let l3 = ladder_for(f3, lat, axis);
    let p1 = l1.prefixes();
    let p2 = l2.prefixes();
    let p3 = l3.prefixes();
    let levels = l1.pieces.len();

    let mut collapsed = 0.0;
    if let Some(dense) = t.dense() {
        // shared first-slot contractions per level
        let vol = t.spec().cell_volume();
        let vol3 = vol * vol * vol;
        let n = dense.cells();
        let second = |p: &[f64], v: &GridFunction, w: &GridFunction| -> f64 {
            let mut acc = 0.0;
            for b in 0..n {
                let vb = v.values[b];
                if vb == 0.0 {
                    continue;
                }
                let row = &p[b * n..(b + 1) * n];
                let mut inner = 0.0;
                for (ti, wi) in row.iter().zip(&w.values) {
                    inner += ti * wi;
                }
                acc += vb * inner;
            }
            acc * vol3
        };
        for t_idx in 0..levels {
            let pe = dense.contract_first(&p1[t_idx].values);
            let pd = dense.contract_first(&l1.pieces[t_idx].values);
            let (e2, d2) = (&p2[t_idx], &l2.pieces[t_idx]);
            let (e3, d3) = (&p3[t_idx], &l3.pieces[t_idx]);
            collapsed += second(&pe, e2, d3)
                + second(&pe, d2, e3)
                + second(&pd, e2, e3)
                + second(&pe, d2, d3)
                + second(&pd, e2, d3)
                + second(&pd, d2, e3)
                + second(&pd, d2, d3);
        }
    } else {
        for t_idx in 0..levels {
            let (e1, d1) = (&p1[t_idx], &l1.pieces[t_idx]);
            let (e2, d2) = (&p2[t_idx], &l2.pieces[t_idx]);
            let (e3, d3) = (&p3[t_idx], &l3.pieces[t_idx]);
            collapsed += t.apply(e1, e2, d3)
                + t.apply(e1, d2, e3)
                + t.apply(d1, e2, e3)
                + t.apply(e1, d2, d3)
                + t.apply(d1, e2, d3)
                + t.apply(d1, d2, e3)
                + t.apply(d1, d2, d3);
        }
    }
    let full = t.apply(f1, f2, f3);
    let residual_rel = (full - collapsed).abs() / full.abs().max(1.0);
    Ok(CollapseReport { full, collapsed, residual_rel })
}

// ---------------------------------------------------------------------------
// key term and the A1 + A2 bracket
// ---------------------------------------------------------------------------

/// Evaluate <T(t1, t2), t3> for tensor test functions. Uses support-local
/// weighted sums over the dense backing when available, otherwise falls
/// back to materialized grid functions.
pub fn apply_to_tensors(
    t: &dyn TrilinearForm,
    lat: &Lattice,
    t1: &HaarTensor,
    t2: &HaarTensor,
    t3: &HaarTensor,
) -> f64 {
    if let Some(dense) = t.dense() {
        let w1 = tensor_weights(lat, t1);
        let w2 = tensor_weights(lat, t2);
        let w3 = tensor_weights(lat, t3);
        let vol = t.spec().cell_volume();
        let mut acc = 0.0;
        for (a, wa) in &w1 {
            for (b, wb) in &w2 {
                let base = wa * wb;
                for (c, wc) in &w3 {
                    acc += base * wc * dense.at(*a, *b, *c);
                }
            }
        }
        acc * vol * vol * vol
    } else {
        let g1 = crate::haar::tensor_function(lat, t1);
        let g2 = crate::haar::tensor_function(lat, t2);
        let g3 = crate::haar::tensor_function(lat, t3);
        t.apply(&g1, &g2, &g3)
    }
}

/// Support cells of a tensor with their values.
fn tensor_weights(lat: &Lattice, t: &HaarTensor) -> Vec<(usize, f64)> {
    let g = crate::haar::tensor_function(lat, t);
    g.values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

/// The key diagonal term: sum over equal-scale Zygmund triples of
/// <T(E_{I1} f1, E_{I2} f2), Delta_{I3,Z} f3>.
pub fn key_term(
    t: &dyn TrilinearForm,
    lat: &Lattice,
    f1: &GridFunction,
    f2: &GridFunction,
    f3: &GridFunction,
) -> Result<f64> {
    crate::forms::check_same_grid(t, &[f1, f2, f3])?;
    let spec = t.spec();
    let s1 = BoxSums::new(f1);
    let s2 = BoxSums::new(f2);
    let s3 = BoxSums::new(f3);
    let mut total = 0.0;
    for (j1, j2) in cancellative_scale_pairs(&spec) {
        let rects = rects_at(j1, j2);
        for i1 in &rects {
            let c1 = pair(&s1, lat, &HaarTensor::avg(i1));
            if c1 == 0.0 {
                continue;
            }
            for i2 in &rects {
                let c2 = pair(&s2, lat, &HaarTensor::avg(i2));
                if c2 == 0.0 {
                    continue;
                }
                for i3 in &rects {
                    for eta in Eta::CANCELLATIVE {
                        let t3 = HaarTensor::zygmund(i3, eta);
                        let c3 = pair(&s3, lat, &t3);
                        if c3 == 0.0 {
                            continue;
                        }
                        let tv = apply_to_tensors(t, lat, &HaarTensor::avg(i1), &HaarTensor::avg(i2), &t3);
                        total += tv * c1 * c2 * c3;
                    }
                }
            }
        }
    }
    Ok(total)
}

/// Scale pairs admitting the cancellative Zygmund tensor.
pub fn cancellative_scale_pairs(spec: &GridSpec) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for j1 in 0..spec.level(0) {
        let depth = spec.level(1).min(spec.level(2) - j1);
        for j2 in 0..depth {
            out.push((j1, j2));
        }
    }
    out
}

fn rects_at(j1: u32, j2: u32) -> Vec<ZygRect> {
    let j3 = j1 + j2;
    let mut out = Vec::new();
    for p1 in 0..1u32 << j1 {
        for p2 in 0..1u32 << j2 {
            for p3 in 0..1u32 << j3 {
                out.push(ZygRect::from_scales([j1, j2, j3], [p1, p2, p3]).unwrap());
            }
        }
    }
    out
}

/// The four-term bracket of the A1 + A2 split for equal-scale rectangles:
/// [ <f1,h0_{I1}><f2,h0_{I2}> - <f1,h0_{I3^1 x I1^{23}}><f2,h0_{I3^1 x I2^{23}}>
///   - <f1,h0_{I1^1 x I3^{23}}><f2,h0_{I2^1 x I3^{23}}> + <f1,h0_{I3}><f2,h0_{I3}> ].
pub fn a1a2_split(
    lat: &Lattice,
    f1: &BoxSums,
    f2: &BoxSums,
    i1: &ZygRect,
    i2: &ZygRect,
    i3: &ZygRect,
) -> Result<f64> {
    if i1.scales() != i2.scales() || i1.scales() != i3.scales() {
        return Err(Error::ScaleMismatch);
    }
    let mix = |a1: &ZygRect, a23: &ZygRect| -> HaarTensor {
        HaarTensor::new(
            HaarFactor::NonCanc(a1.i1),
            HaarFactor::NonCanc(a23.i2),
            HaarFactor::NonCanc(a23.i3),
        )
    };
    let p = |s: &BoxSums, t: &HaarTensor| pair(s, lat, t);
    let t1 = p(f1, &mix(i1, i1)) * p(f2, &mix(i2, i2));
    let t2 = p(f1, &mix(i3, i1)) * p(f2, &mix(i3, i2));
    let t3 = p(f1, &mix(i1, i3)) * p(f2, &mix(i2, i3));
    let t4 = p(f1, &mix(i3, i3)) * p(f2, &mix(i3, i3));
    Ok(t1 - t2 - t3 + t4)
}

// ---------------------------------------------------------------------------
// coefficient extraction
// ---------------------------------------------------------------------------

/// <T(h0_{I+.n1}, h0_{I+.n2}), h^eta_{I,Z}> for a trilinear form.
pub fn extract_coefficient(
    t: &dyn TrilinearForm,
    lat: &Lattice,
    rect: &ZygRect,
    n1: [i64; 3],
    n2: [i64; 3],
    eta: Eta,
) -> f64 {
    let r1 = rect.translate(lat, n1);
    let r2 = rect.translate(lat, n2);
    apply_to_tensors(
        t,
        lat,
        &HaarTensor::avg(&r1),
        &HaarTensor::avg(&r2),
        &HaarTensor::zygmund(rect, eta),
    )
}

/// Midpoint-rule quadrature parameters. `refine` subdivides every cell by
/// 2 per axis that many times (used for Richardson error estimates).
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    pub refine: u32,
    /// reject the result when more than this fraction of the mass is
    /// diagonal-excluded
    pub max_excluded: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { refine: 0, max_excluded: 0.5 }
    }
}

/// <T(h0_{I+.n1}, h0_{I+.n2}), h^eta_{I,Z}> by integrating the kernel with
/// the midpoint rule over cell triples; cell triples meeting the singular
/// diagonal (both gaps zero in some coordinate) are excluded.
pub fn coefficient_from_kernel(
    kernel: &dyn Kernel,
    lat: &Lattice,
    rect: &ZygRect,
    n1: [i64; 3],
    n2: [i64; 3],
    eta: Eta,
    quad: QuadratureSpec,
) -> Result<f64> {
    let spec = lat.spec;
    let r1 = rect.translate(lat, n1);
    let r2 = rect.translate(lat, n2);
    let w_x = subcell_weights(lat, &HaarTensor::avg(&r1), quad.refine);
    let w_y = subcell_weights(lat, &HaarTensor::avg(&r2), quad.refine);
    let w_z = subcell_weights(lat, &HaarTensor::zygmund(rect, eta), quad.refine);

    let sub = 1u32 << quad.refine;
    let subvol = spec.cell_volume() / (sub as f64).powi(3);
    let mut acc = 0.0;
    let mut excluded = 0usize;
    let total = w_x.len() * w_y.len() * w_z.len();
    for (px, wx) in &w_x {
        for (py, wy) in &w_y {
            let base = wx * wy;
            for (pz, wz) in &w_z {
                match kernel.eval(*px, *py, *pz) {
                    Ok(v) => acc += base * wz * v,
                    Err(_) => excluded += 1,
                }
            }
        }
    }
    if (excluded as f64) > quad.max_excluded * total as f64 {
        return Err(Error::DiagonalDominated { excluded, total });
    }
    Ok(acc * subvol * subvol * subvol)
}

/// Midpoints and weights of the (refined) cells of a tensor's support.
fn subcell_weights(lat: &Lattice, t: &HaarTensor, refine: u32) -> Vec<([f64; 3], f64)> {
    let spec = lat.spec;
    let g = crate::haar::tensor_function(lat, t);
    let sub = 1u32 << refine;
    let mut out = Vec::new();
    for c1 in 0..spec.n(0) {
        for c2 in 0..spec.n(1) {
            for c3 in 0..spec.n(2) {
                let w = g.at([c1, c2, c3]);
                if w == 0.0 {
                    continue;
                }
                for s1 in 0..sub {
                    for s2 in 0..sub {
                        for s3 in 0..sub {
                            let p = [
                                (c1 as f64 + (s1 as f64 + 0.5) / sub as f64) / spec.n(0) as f64,
                                (c2 as f64 + (s2 as f64 + 0.5) / sub as f64) / spec.n(1) as f64,
                                (c3 as f64 + (s3 as f64 + 0.5) / sub as f64) / spec.n(2) as f64,
                            ];
                            out.push((p, w));
                        }
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// separation cases and decay fit
// ---------------------------------------------------------------------------

/// Separation class of one parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SeparationCase {
    Identical,
    Adjacent,
    Separated,
}

/// Classify an axis group by the translation maxima m = max_j |n_j|.
pub fn separation_case(m: u64) -> SeparationCase {
    match m {
        0 => SeparationCase::Identical,
        1 => SeparationCase::Adjacent,
        _ => SeparationCase::Separated,
    }
}

/// Complexity index of a translation magnitude: m = 0 -> 0 (no goodness in
/// that parameter), otherwise the unique k >= 2 with m in (2^{k-3}, 2^{k-2}].
pub fn bucket_of(m: u64) -> u32 {
    if m == 0 {
        0
    } else {
        (64 - (m - 1).leading_zeros()) + 2
    }
}

/// One extracted coefficient with its case classification.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientRecord {
    pub rect_scales: [u32; 3],
    pub rect_pos: [u32; 3],
    pub n1: [i64; 3],
    pub n2: [i64; 3],
    pub eta: String,
    pub value: f64,
    pub case1: SeparationCase,
    pub case23: SeparationCase,
    pub k: [u32; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct BucketStat {
    pub k: [u32; 3],
    pub phi: f64,
    pub max_normalized: f64,
    pub samples: usize,
    pub worst: Option<CoefficientRecord>,
}

/// Normalized coefficient table across complexity buckets.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFitReport {
    pub params: KernelParams,
    pub buckets: Vec<BucketStat>,
    pub fitted_constant: f64,
    pub total_samples: usize,
}

/// Admissible probing scales for bucket k on the grid: the finest
/// cancellative Zygmund scales with j >= k componentwise.
fn probe_scales(spec: &GridSpec, k: [u32; 3]) -> Option<(u32, u32)> {
    let mut best: Option<(u32, u32)> = None;
    for (j1, j2) in cancellative_scale_pairs(spec) {
        let j3 = j1 + j2;
        if j1 >= k[0] && j2 >= k[1] && j3 >= k[2] {
            // bucket offsets |n| <= 2^{k-2} must stay within half a period
            let fits = |j: u32, kk: u32| kk == 0 || (1u64 << (kk - 2)) <= (1u64 << j) / 2;
            if fits(j1, k[0]) && fits(j2, k[1]) && fits(j3, k[2]) {
                match best {
                    Some((b1, b2)) if b1 + b2 >= j1 + j2 => {}
                    _ => best = Some((j1, j2)),
                }
            }
        }
    }
    best
}

/// Draw (n1, n2) with max_j |n_j^i| in the bucket of k^i for each axis.
fn draw_offsets(rng: &mut ChaCha8Rng, k: [u32; 3]) -> ([i64; 3], [i64; 3]) {
    let mut n1 = [0i64; 3];
    let mut n2 = [0i64; 3];
    for i in 0..3 {
        if k[i] == 0 {
            continue;
        }
        let lo = if k[i] == 2 { 1 } else { (1i64 << (k[i] - 3)) + 1 };
        let hi = 1i64 << (k[i] - 2);
        let m = rng.random_range(lo..=hi);
        let m = if rng.random::<bool>() { m } else { -m };
        let other = rng.random_range(-m.abs()..=m.abs());
        if rng.random::<bool>() {
            n1[i] = m;
            n2[i] = other;
        } else {
            n1[i] = other;
            n2[i] = m;
        }
    }
    (n1, n2)
}

/// All grid-admissible complexity triples of the coefficient summation:
/// the axis-1 offsets never both vanish (k1 >= 2) and the (2,3) offsets do
/// not all vanish ((k2,k3) != (0,0)); the index 1 is never produced by the
/// bucketing. Fully identical configurations route through the weak
/// boundedness property instead.
pub fn admissible_buckets(spec: &GridSpec) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for k1 in 2..=spec.level(0) {
        for k2 in 0..=spec.level(1) {
            for k3 in 0..=spec.level(2) {
                let k = [k1, k2, k3];
                if (k2, k3) == (0, 0) || k2 == 1 || k3 == 1 {
                    continue;
                }
                if probe_scales(spec, k).is_some() {
                    out.push(k);
                }
            }
        }
    }
    out
}

/// Empirical verification of the coefficient decay: per complexity bucket,
/// the maximum of |c| |K|^2 / ((|k|+1)^2 phi(k) |I|^{3/2}).
pub fn decay_fit(
    kernel: &dyn Kernel,
    spec: &GridSpec,
    buckets: &[[u32; 3]],
    samples_per_bucket: usize,
    seed: u64,
) -> Result<DecayFitReport> {
    let params = kernel.params();
    let lat = Lattice::canonical(*spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut fitted: f64 = 0.0;
    let mut total_samples = 0usize;

    for &k in buckets {
        let Some((j1, j2)) = probe_scales(spec, k) else {
            return Err(Error::EmptyComplexityBucket(k));
        };
        let j3 = j1 + j2;
        let phi_k = phi(k, &params);
        let abs_k = (k[0] + k[1] + k[2]) as f64;
        let norm_weight = (abs_k + 1.0).powi(2) * phi_k;
        let rect_measure = (0.5f64).powi((j1 + j2 + j3) as i32);
        let parent_measure = (0.5f64).powi((j1 - k[0] + j2 - k[1] + j3 - k[2]) as i32);
        let normalizer = rect_measure.powf(1.5) / parent_measure.powi(2);

        let mut stat = BucketStat { k, phi: phi_k, max_normalized: 0.0, samples: 0, worst: None };
        for _ in 0..samples_per_bucket {
            let pos = [
                rng.random_range(0..1u32 << j1),
                rng.random_range(0..1u32 << j2),
                rng.random_range(0..1u32 << j3),
            ];
            let rect = ZygRect::from_scales([j1, j2, j3], pos).unwrap();
            let (n1, n2) = draw_offsets(&mut rng, k);
            let eta = Eta::CANCELLATIVE[rng.random_range(0..3usize)];
            let value = match coefficient_from_kernel(kernel, &lat, &rect, n1, n2, eta, QuadratureSpec::default()) {
                Ok(v) => v,
                Err(Error::DiagonalDominated { .. }) => continue,
                Err(e) => return Err(e),
            };
            let normalized = value.abs() / (norm_weight * normalizer);
            stat.samples += 1;
            total_samples += 1;
            if normalized > stat.max_normalized {
                stat.max_normalized = normalized;
                let m1 = n1[0].unsigned_abs().max(n2[0].unsigned_abs());
                let m23 = n1[1]
                    .unsigned_abs()
                    .max(n2[1].unsigned_abs())
                    .max(n1[2].unsigned_abs())
                    .max(n2[2].unsigned_abs());
                stat.worst = Some(CoefficientRecord {
                    rect_scales: [j1, j2, j3],
                    rect_pos: pos,
                    n1,
                    n2,
                    eta: eta.label().to_string(),
                    value,
                    case1: separation_case(m1),
                    case23: separation_case(m23),
                    k,
                });
            }
        }
        fitted = fitted.max(stat.max_normalized);
        out.push(stat);
    }
    Ok(DecayFitReport { params, buckets: out, fitted_constant: fitted, total_samples })
}

// ---------------------------------------------------------------------------
// shift assembly
// ---------------------------------------------------------------------------

/// Enumerate the (n1, n2) pairs of one axis whose maximum magnitude falls
/// in the bucket of k (k = 0 gives the single pair (0,0)).
fn bucket_pairs(k: u32) -> Vec<(i64, i64)> {
    if k == 0 {
        return vec![(0, 0)];
    }
    let hi = 1i64 << (k - 2);
    let lo = if k == 2 { 1 } else { (1i64 << (k - 3)) + 1 };
    let mut out = Vec::new();
    for n1 in -hi..=hi {
        for n2 in -hi..=hi {
            let m = n1.abs().max(n2.abs());
            if m >= lo && m <= hi {
                out.push((n1, n2));
            }
        }
    }
    out
}

/// Assemble the complexity-k bucket of a trilinear form into a bilinear
/// Zygmund shift: over good rectangles (goodness per axis exactly where the
/// bucket's offsets are nonzero), the coefficient at (K; I+.n1, I+.n2, I)
/// is c_{I,n1,n2} / (C (|k|+1)^2 phi(k)).
///
/// `c_const` is the fitted decay constant reported by `decay_fit`; the
/// class bound is checked at insertion and violations surface as
/// NormalizationOverflow rather than being clipped.
pub fn assemble_shift(
    t: &dyn TrilinearForm,
    lat: &Lattice,
    k: [u32; 3],
    params: &KernelParams,
    c_const: f64,
    max_coefficients: usize,
) -> Result<crate::shifts::ShiftData> {
    let spec = t.spec();
    let mut q = crate::shifts::ShiftData::new(spec, k, (3, 3))?;
    let Some((j1, j2)) = probe_scales(&spec, k) else {
        return Err(Error::EmptyComplexityBucket(k));
    };
    let j3 = j1 + j2;
    let abs_k = (k[0] + k[1] + k[2]) as f64;
    let denom = c_const * (abs_k + 1.0).powi(2) * phi(k, params);

    let pairs1 = bucket_pairs(k[0]);
    let pairs2 = bucket_pairs(k[1]);
    let pairs3 = bucket_pairs(k[2]);

    let mut raw: std::collections::BTreeMap<crate::shifts::ShiftKey, f64> = std::collections::BTreeMap::new();
    let mut inserted = 0usize;
    'outer: for p1 in 0..1u32 << j1 {
        for p2 in 0..1u32 << j2 {
            for p3 in 0..1u32 << j3 {
                let rect = ZygRect::from_scales([j1, j2, j3], [p1, p2, p3]).unwrap();
                if !crate::lattice::is_good_rect(lat, &rect, k)? {
                    continue;
                }
                let top = rect.parent_k(lat, k)?;
                for &(a1, b1) in &pairs1 {
                    for &(a2, b2) in &pairs2 {
                        for &(a3, b3) in &pairs3 {
                            let n1 = [a1, a2, a3];
                            let n2 = [b1, b2, b3];
                            for eta in Eta::CANCELLATIVE {
                                let c = extract_coefficient(t, lat, &rect, n1, n2, eta);
                                if c == 0.0 {
                                    continue;
                                }
                                let key = crate::shifts::ShiftKey {
                                    top,
                                    rects: [rect.translate(lat, n1), rect.translate(lat, n2), rect],
                                    eta,
                                };
                                *raw.entry(key).or_insert(0.0) += c / denom;
                                inserted += 1;
                                if inserted >= max_coefficients {
                                    break 'outer;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyComplexityBucket(k));
    }
    for (key, a) in raw {
        q.insert(key, a)?;
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::DenseForm;
    use crate::kernels::SyntheticKernel;

    #[test]
    fn phi_values_and_monotonicity() {
        let p = KernelParams::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(phi([0, 0, 0], &p), 1.0);
        assert_eq!(phi([1, 0, 0], &p), 0.5);
        let p2 = KernelParams::new(0.5, 1.0, 1.0).unwrap();
        let expected = (2.0f64).powf(-(1.0 + 0.5 + 2.0 * 0.5));
        assert!((phi([1, 1, 4], &p2) - expected).abs() < 1e-15);
        // in (0,1], nonincreasing in k1 and k3
        for k1 in 0..4u32 {
            for k2 in 0..4u32 {
                for k3 in 0..6u32 {
                    let v = phi([k1, k2, k3], &p2);
                    assert!(v > 0.0 && v <= 1.0);
                    assert!(phi([k1 + 1, k2, k3], &p2) <= v + 1e-15);
                    assert!(phi([k1, k2 + 1, k3], &p2) <= v + 1e-15);
                    assert!(phi([k1, k2, k3 + 1], &p2) <= v + 1e-15);
                }
            }
        }
    }

    #[test]
    fn bucket_classification() {
        assert_eq!(bucket_of(0), 0);
        assert_eq!(bucket_of(1), 2);
        assert_eq!(bucket_of(2), 3);
        assert_eq!(bucket_of(3), 4);
        assert_eq!(bucket_of(4), 4);
        assert_eq!(bucket_of(5), 5);
        assert_eq!(bucket_of(8), 5);
        for m in 1u64..100 {
            let k = bucket_of(m);
            assert!(m > (1 << (k - 2)) / 2 && m <= (1 << (k - 2)));
        }
    }

    #[test]
    fn collapse_identity_on_random_dense_forms() {
        let spec = GridSpec::new(2, 2, 4).unwrap();
        let lat = Lattice::canonical(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut t = DenseForm::zeros(spec);
        for trial in 0..3 {
            t.randomize(&mut rng);
            let f1 = GridFunction::random(spec, &mut rng);
            let f2 = GridFunction::random(spec, &mut rng);
            let f3 = GridFunction::random(spec, &mut rng);
            let r = collapse_check(&t, &lat, &f1, &f2, &f3, CollapseAxis::One).unwrap();
            assert!(r.residual_rel < 1e-12, "trial {trial}: {}", r.residual_rel);
            let r23 = collapse_check(&t, &lat, &f1, &f2, &f3, CollapseAxis::TwoThree { j1: 1 }).unwrap();
            assert!(r23.residual_rel < 1e-12);
        }
        // zero form collapses to zero
        let z = DenseForm::zeros(spec);
        let f = GridFunction::constant(spec, 1.0);
        let r = collapse_check(&z, &lat, &f, &f, &f, CollapseAxis::One).unwrap();
        assert_eq!(r.full, 0.0);
        assert_eq!(r.collapsed, 0.0);
    }

    #[test]
    fn collapse_generic_path_matches_dense_path() {
        let spec = GridSpec::new(1, 1, 2).unwrap();
        let lat = Lattice::canonical(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let t = DenseForm::random(spec, &mut rng);
        let f1 = GridFunction::random(spec, &mut rng);
        let f2 = GridFunction::random(spec, &mut rng);
        let f3 = GridFunction::random(spec, &mut rng);
        struct Opaque<'a>(&'a DenseForm);
        impl TrilinearForm for Opaque<'_> {
            fn spec(&self) -> GridSpec {
                self.0.spec
            }
            fn apply(&self, a: &GridFunction, b: &GridFunction, c: &GridFunction) -> f64 {
                self.0.apply(a, b, c)
            }
        }
        let r1 = collapse_check(&t, &lat, &f1, &f2, &f3, CollapseAxis::One).unwrap();
        let r2 = collapse_check(&Opaque(&t), &lat, &f1, &f2, &f3, CollapseAxis::One).unwrap();
        assert!((r1.collapsed - r2.collapsed).abs() < 1e-12);
    }

    #[test]
    fn key_term_matches_brute_force_on_tiny_grid() {
        let spec = GridSpec::new(1, 1, 2).unwrap();
        let lat = Lattice::canonical(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let t = DenseForm::random(spec, &mut rng);
        let f1 = GridFunction::random(spec, &mut rng);
        let f2 = GridFunction::random(spec, &mut rng);
        let f3 = GridFunction::random(spec, &mut rng);
        let fast = key_term(&t, &lat, &f1, &f2, &f3).unwrap();
        // brute force: materialize E and Delta_Z per rectangle triple
        let mut brute = 0.0;
        for (j1, j2) in cancellative_scale_pairs(&spec) {
            let rects = rects_at(j1, j2);
            for i1 in &rects {
                let e1 = crate::haar::avg_rect(&f1, &lat, &[i1.i1, i1.i2, i1.i3]).unwrap();
                for i2 in &rects {
                    let e2 = crate::haar::avg_rect(&f2, &lat, &[i2.i1, i2.i2, i2.i3]).unwrap();
                    for i3 in &rects {
                        let d3 = crate::haar::delta_z(&f3, &lat, i3).unwrap();
                        brute += t.apply(&e1, &e2, &d3);
                    }
                }
            }
        }
        assert!((fast - brute).abs() < 1e-10 * brute.abs().max(1.0), "fast={fast} brute={brute}");
        // f3 constant kills the key term
        let c = GridFunction::constant(spec, 2.0);
        assert!(key_term(&t, &lat, &f1, &f2, &c).unwrap().abs() < 1e-12);
    }

    #[test]
    fn a1a2_bracket_vanishing() {
        let spec = GridSpec::new(2, 2, 4).unwrap();
        let lat = Lattice::canonical(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let f1 = GridFunction::random(spec, &mut rng);
        let f2 = GridFunction::random(spec, &mut rng);
        let s1 = BoxSums::new(&f1);
        let s2 = BoxSums::new(&f2);
        let base = ZygRect::from_scales([1, 1, 2], [0, 1, 2]).unwrap();
        // all equal -> 0
        let v = a1a2_split(&lat, &s1, &s2, &base, &base, &base).unwrap();
        assert!(v.abs() < 1e-15);
        // same axis-1 positions -> 0
        let i1 = base.translate(&lat, [0, 1, 2]);
        let i2 = base.translate(&lat, [0, 0, 3]);
        let v = a1a2_split(&lat, &s1, &s2, &i1, &i2, &base).unwrap();
        assert!(v.abs() < 1e-13);
        // same (2,3) positions -> 0
        let i1 = base.translate(&lat, [1, 0, 0]);
        let i2 = base.translate(&lat, [1, 0, 0]);
        let v = a1a2_split(&lat, &s1, &s2, &i1, &i2, &base).unwrap();
        assert!(v.abs() < 1e-13);
        // generic triple: nonzero
        let i1 = base.translate(&lat, [1, 1, 0]);
        let i2 = base.translate(&lat, [0, 1, 1]);
        let v = a1a2_split(&lat, &s1, &s2, &i1, &i2, &base).unwrap();
        assert!(v.abs() > 1e-8);
        // scale mismatch rejected
        let other = ZygRect::from_scales([0, 1, 1], [0, 0, 0]).unwrap();
        assert!(a1a2_split(&lat, &s1, &s2, &other, &base, &base).is_err());
    }

    #[test]
    fn extraction_is_trilinear_and_zero_for_zero_form() {
        let spec = GridSpec::new(1, 1, 2).unwrap();
        let lat = Lattice::canonical(spec);
        let z = DenseForm::zeros(spec);
        let rect = ZygRect::from_scales([0, 0, 0], [0, 0, 0]).unwrap();
        let eta = Eta { e2: true, e3: true };
        assert_eq!(extract_coefficient(&z, &lat, &rect, [0; 3], [0; 3], eta), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let t = DenseForm::random(spec, &mut rng);
        let c1 = extract_coefficient(&t, &lat, &rect, [0; 3], [0; 3], eta);
        let mut t2 = DenseForm { spec, tensor: t.tensor.clone() };
        for v in &mut t2.tensor {
            *v *= 2.5;
        }
        let c2 = extract_coefficient(&t2, &lat, &rect, [0; 3], [0; 3], eta);
        assert!((c2 - 2.5 * c1).abs() < 1e-12 * c1.abs().max(1.0));
    }

    #[test]
    fn quadrature_richardson_stable_on_separated_triple() {
        let spec = GridSpec::new(3, 3, 6).unwrap();
        let lat = Lattice::canonical(spec);
        let params = KernelParams::new(1.0, 1.0, 1.0).unwrap();
        let kernel = SyntheticKernel::plain(params);
        let rect = ZygRect::from_scales([2, 2, 4], [1, 1, 5]).unwrap();
        // same-side offsets: opposite-side configurations make the gap sums
        // z-independent and the coefficient vanishes exactly
        let n1 = [1i64, 1, 2];
        let n2 = [2i64, 2, 3];
        let eta = Eta { e2: true, e3: true };
        let c0 = coefficient_from_kernel(&kernel, &lat, &rect, n1, n2, eta, QuadratureSpec::default()).unwrap();
        let c1 = coefficient_from_kernel(
            &kernel,
            &lat,
            &rect,
            n1,
            n2,
            eta,
            QuadratureSpec { refine: 1, max_excluded: 0.5 },
        )
        .unwrap();
        assert!(c0.is_finite() && c0 != 0.0);
        // sign-stable and within a loose band under refinement
        assert_eq!(c0.signum(), c1.signum());
        assert!((c0 - c1).abs() / c0.abs() < 0.5, "c0={c0} c1={c1}");
        // zero kernel -> zero coefficient
        struct ZeroK(KernelParams);
        impl Kernel for ZeroK {
            fn params(&self) -> KernelParams {
                self.0
            }
            fn eval(&self, _: [f64; 3], _: [f64; 3], _: [f64; 3]) -> crate::error::Result<f64> {
                Ok(0.0)
            }
        }
        let zc = coefficient_from_kernel(&ZeroK(params), &lat, &rect, n1, n2, eta, QuadratureSpec::default()).unwrap();
        assert_eq!(zc, 0.0);
    }

    #[test]
    fn assemble_recovers_a_planted_shift() {
        use crate::shifts::{ShiftData, ShiftForm, ShiftKey};
        let spec = GridSpec::new(3, 2, 5).unwrap();
        let lat = Lattice::canonical(spec);
        let k = [2u32, 0, 2];
        // plant one coefficient at a good rectangle with offsets in the
        // k-bucket: axis-1 separation m=1 needs k1=2... use m in (2^{k-3},2^{k-2}]
        let rect = ZygRect::from_scales([2, 1, 3], [1, 1, 5]).unwrap();
        assert!(crate::lattice::is_good_rect(&lat, &rect, k).unwrap());
        let n1 = [1i64, 0, 1];
        let n2 = [0i64, 0, -1];
        let eta = Eta { e2: false, e3: true };
        let top = rect.parent_k(&lat, k).unwrap();
        let key = ShiftKey {
            top,
            rects: [rect.translate(&lat, n1), rect.translate(&lat, n2), rect],
            eta,
        };
        let mut q = ShiftData::new(spec, k, (3, 3)).unwrap();
        let a = 0.5 * ShiftData::coefficient_bound(&key);
        q.insert(key, a).unwrap();
        let form = ShiftForm(&q);
        // the bracket terms with mismatched translates vanish, so the
        // extracted coefficient at the planted address equals a
        let c = extract_coefficient(&form, &lat, &rect, n1, n2, eta);
        assert!((c - a).abs() < 1e-12 * a.abs(), "c={c} a={a}");
        // assembled shift holds a / (C (|k|+1)^2 phi(k)) at that address
        let params = KernelParams::new(1.0, 1.0, 1.0).unwrap();
        let c_const = 2.0;
        let assembled = assemble_shift(&form, &lat, k, &params, c_const, 2_000_000).unwrap();
        let denom = c_const * 25.0 * phi(k, &params);
        let got = assembled.coeffs.get(&key).copied().unwrap_or(0.0);
        assert!(
            (got - a / denom).abs() < 1e-12 * (a / denom).abs(),
            "got={got} want={}",
            a / denom
        );
        // a bucket the grid cannot host errors out
        let bad = assemble_shift(&form, &lat, [2, 2, 0], &params, c_const, 10);
        assert!(bad.is_err());
    }

    #[test]
    fn decay_fit_reports_bounded_buckets() {
        let spec = GridSpec::new(3, 3, 6).unwrap();
        let params = KernelParams::new(1.0, 1.0, 1.0).unwrap();
        // modulated kernel: the plain one is even in every axis and its
        // coefficients vanish wherever an axis keeps both offsets zero
        let kernel = SyntheticKernel::seeded(params, 5);
        let buckets = admissible_buckets(&spec);
        assert!(buckets.len() >= 5, "buckets: {buckets:?}");
        let rep = decay_fit(&kernel, &spec, &buckets, 6, 99).unwrap();
        assert!(rep.fitted_constant.is_finite() && rep.fitted_constant > 0.0);
        for b in &rep.buckets {
            assert!(b.max_normalized.is_finite());
        }
        // scaling the kernel doubles the fitted constant
        let kernel2 = SyntheticKernel::seeded(params, 5).scaled(2.0);
        let rep2 = decay_fit(&kernel2, &spec, &buckets, 6, 99).unwrap();
        assert!((rep2.fitted_constant - 2.0 * rep.fitted_constant).abs() < 1e-9 * rep.fitted_constant);
    }
}
