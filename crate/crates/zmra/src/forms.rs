//! Trilinear forms <T(f1,f2),f3> on a fixed grid.
//!
//! The multiresolution decomposition machinery only needs the pairing, so a
//! form is a trait; the dense tensor backing (cells^3) is available for
//! small grids and unlocks fast paths for collapse checks and the
//! paraproduct-free defect.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};

/// A trilinear pairing on a fixed grid.
pub trait TrilinearForm {
    fn spec(&self) -> GridSpec;

    /// <T(f1,f2), f3>.
    fn apply(&self, f1: &GridFunction, f2: &GridFunction, f3: &GridFunction) -> f64;

    /// Dense tensor backing, when the form carries one.
    fn dense(&self) -> Option<&DenseForm> {
        None
    }
}

/// Dense backing T[a,b,c] over cell triples with Riemann-sum semantics:
/// <T(f1,f2),f3> = sum T[a,b,c] f1[a] f2[b] f3[c] vol^3.
pub struct DenseForm {
    pub spec: GridSpec,
    pub tensor: Vec<f64>,
}

impl DenseForm {
    pub fn zeros(spec: GridSpec) -> DenseForm {
        let n = spec.cells();
        DenseForm { spec, tensor: vec![0.0; n * n * n] }
    }

    pub fn random(spec: GridSpec, rng: &mut impl Rng) -> DenseForm {
        let mut d = DenseForm::zeros(spec);
        d.randomize(rng);
        d
    }

    /// Refill in place (avoids reallocating 100+ MB per trial).
    pub fn randomize(&mut self, rng: &mut impl Rng) {
        for v in &mut self.tensor {
            *v = rng.random_range(-1.0..1.0);
        }
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.spec.cells()
    }

    #[inline]
    pub fn at(&self, a: usize, b: usize, c: usize) -> f64 {
        let n = self.cells();
        self.tensor[(a * n + b) * n + c]
    }

    #[inline]
    pub fn at_mut(&mut self, a: usize, b: usize, c: usize) -> &mut f64 {
        let n = self.cells();
        &mut self.tensor[(a * n + b) * n + c]
    }

    /// Contract the first slot: P[b,c] = sum_a T[a,b,c] u[a].
    pub fn contract_first(&self, u: &[f64]) -> Vec<f64> {
        let n = self.cells();
        let mut p = vec![0.0f64; n * n];
        for (a, &ua) in u.iter().enumerate() {
            if ua == 0.0 {
                continue;
            }
            let row = &self.tensor[a * n * n..(a + 1) * n * n];
            for (pi, ti) in p.iter_mut().zip(row) {
                *pi += ua * ti;
            }
        }
        p
    }
}

impl TrilinearForm for DenseForm {
    fn spec(&self) -> GridSpec {
        self.spec
    }

    fn apply(&self, f1: &GridFunction, f2: &GridFunction, f3: &GridFunction) -> f64 {
        let n = self.cells();
        debug_assert_eq!(f1.values.len(), n);
        let p = self.contract_first(&f1.values);
        let mut acc = 0.0;
        for b in 0..n {
            let vb = f2.values[b];
            if vb == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            let row = &p[b * n..(b + 1) * n];
            for (ti, w) in row.iter().zip(&f3.values) {
                inner += ti * w;
            }
            acc += vb * inner;
        }
        let vol = self.spec.cell_volume();
        acc * vol * vol * vol
    }

    fn dense(&self) -> Option<&DenseForm> {
        Some(self)
    }
}

/// The pointwise-product form <f1 f2, f3>. Weak boundedness holds with
/// constant exactly 1; it is the canonical non-paraproduct-free fixture.
pub struct ProductForm {
    pub spec: GridSpec,
}

impl TrilinearForm for ProductForm {
    fn spec(&self) -> GridSpec {
        self.spec
    }

    fn apply(&self, f1: &GridFunction, f2: &GridFunction, f3: &GridFunction) -> f64 {
        let mut acc = 0.0;
        for i in 0..f1.values.len() {
            acc += f1.values[i] * f2.values[i] * f3.values[i];
        }
        acc * self.spec.cell_volume()
    }
}

impl ProductForm {
    /// Dense backing of the product form (diagonal tensor scaled to match
    /// the Riemann-sum convention).
    pub fn to_dense(&self) -> DenseForm {
        let mut d = DenseForm::zeros(self.spec);
        let n = self.spec.cells();
        let inv_vol2 = (n as f64) * (n as f64);
        for a in 0..n {
            *d.at_mut(a, a, a) = inv_vol2;
        }
        d
    }
}

/// A form scaled by a constant (for homogeneity probes).
pub struct ScaledForm<'a> {
    pub inner: &'a dyn TrilinearForm,
    pub factor: f64,
}

impl TrilinearForm for ScaledForm<'_> {
    fn spec(&self) -> GridSpec {
        self.inner.spec()
    }

    fn apply(&self, f1: &GridFunction, f2: &GridFunction, f3: &GridFunction) -> f64 {
        self.factor * self.inner.apply(f1, f2, f3)
    }
}

/// Trilinearity probe: checks additivity and homogeneity in every slot at
/// randomly drawn functions; returns the worst residual relative to the
/// value scale.
pub fn trilinearity_residual(t: &dyn TrilinearForm, rng: &mut impl Rng) -> Result<f64> {
    let spec = t.spec();
    let mut worst = 0.0f64;
    for slot in 0..3 {
        let f = GridFunction::random(spec, rng);
        let g = GridFunction::random(spec, rng);
        let a = GridFunction::random(spec, rng);
        let b = GridFunction::random(spec, rng);
        let (alpha, beta) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mut combo = f.clone();
        combo.scale(alpha);
        let mut g2 = g.clone();
        g2.scale(beta);
        combo.add_assign(&g2)?;
        let args = |x: &GridFunction| -> [GridFunction; 3] {
            let mut out = [a.clone(), a.clone(), b.clone()];
            out[slot] = x.clone();
            out
        };
        let lhs = {
            let v = args(&combo);
            t.apply(&v[0], &v[1], &v[2])
        };
        let rhs = {
            let vf = args(&f);
            let vg = args(&g);
            alpha * t.apply(&vf[0], &vf[1], &vf[2]) + beta * t.apply(&vg[0], &vg[1], &vg[2])
        };
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    Ok(worst)
}

/// Guard for operations that require matching grids.
pub fn check_same_grid(t: &dyn TrilinearForm, fs: &[&GridFunction]) -> Result<()> {
    for f in fs {
        if f.spec != t.spec() {
            return Err(Error::GridMismatch);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_form_is_trilinear() {
        let spec = GridSpec::new(1, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = DenseForm::random(spec, &mut rng);
        assert!(trilinearity_residual(&t, &mut rng).unwrap() < 1e-12);
    }

    #[test]
    fn product_form_matches_its_dense_backing() {
        let spec = GridSpec::new(1, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ProductForm { spec };
        let d = p.to_dense();
        for _ in 0..5 {
            let f1 = GridFunction::random(spec, &mut rng);
            let f2 = GridFunction::random(spec, &mut rng);
            let f3 = GridFunction::random(spec, &mut rng);
            let a = p.apply(&f1, &f2, &f3);
            let b = d.apply(&f1, &f2, &f3);
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }
}
