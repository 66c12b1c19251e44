//! Uniform periodic grid on the square torus and the pseudo-spectral
//! operators defined on it.
//!
//! Storage is row-major with the y index outermost: node `(i, j)` sits at
//! `j * n + i` with coordinates `x_i = i L / n`, `y_j = j L / n`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::fields::{OneFormField, ScalarField, VectorField};

/// Square torus `[0, L)^2` sampled on an `n x n` grid.
pub struct TorusGrid {
    n: usize,
    length: f64,
    dealias_fraction: f64,
    cutoff: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch_len: usize,
    /// Derivative wavenumber per 1D index (Nyquist mapped to zero).
    deriv: Vec<f64>,
    /// Signed integer wavenumber per 1D index.
    kint: Vec<i64>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("n", &self.n)
            .field("length", &self.length)
            .field("dealias_fraction", &self.dealias_fraction)
            .field("cutoff", &self.cutoff)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.length == other.length
            && self.dealias_fraction == other.dealias_fraction
    }
}

impl TorusGrid {
    pub const DEFAULT_LENGTH: f64 = 2.0 * std::f64::consts::PI;
    pub const DEFAULT_DEALIAS: f64 = 2.0 / 3.0;

    /// Grid with the default period `2 pi` and the 2/3 dealiasing rule.
    pub fn new(n: usize) -> Result<Arc<Self>> {
        Self::with_params(n, Self::DEFAULT_LENGTH, Self::DEFAULT_DEALIAS)
    }

    pub fn with_params(n: usize, length: f64, dealias_fraction: f64) -> Result<Arc<Self>> {
        if n < 8 || n % 2 != 0 {
            return Err(Error::Config(format!("grid n must be even and >= 8, got {n}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Config(format!("grid length must be positive, got {length}")));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "dealias_fraction must lie in (0, 1], got {dealias_fraction}"
            )));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());

        // Keep |k| strictly below frac * n / 2 when that bound is an integer,
        // so the retained band never reaches the Nyquist or aliasing edge.
        let bound = dealias_fraction * n as f64 / 2.0;
        let cutoff = if (bound - bound.round()).abs() < 1e-9 {
            bound.round() as usize - 1
        } else {
            bound.floor() as usize
        };

        let base = 2.0 * std::f64::consts::PI / length;
        let kint: Vec<i64> = (0..n)
            .map(|i| if i <= n / 2 { i as i64 } else { i as i64 - n as i64 })
            .collect();
        let deriv = kint
            .iter()
            .map(|&k| if k.unsigned_abs() as usize == n / 2 { 0.0 } else { base * k as f64 })
            .collect();

        Ok(Arc::new(Self {
            n,
            length,
            dealias_fraction,
            cutoff,
            fwd,
            inv,
            scratch_len,
            deriv,
            kint,
        }))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dealias_fraction(&self) -> f64 {
        self.dealias_fraction
    }

    /// Largest integer wavenumber magnitude kept by the dealias mask.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn nodes(&self) -> usize {
        self.n * self.n
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    pub fn area(&self) -> f64 {
        self.length * self.length
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    /// Signed integer wavenumber of a 1D spectral index.
    pub fn wavenumber(&self, idx: usize) -> i64 {
        self.kint[idx]
    }

    /// Physical derivative wavenumber `2 pi k / L` (zero at Nyquist).
    pub fn deriv_wavenumber(&self, idx: usize) -> f64 {
        self.deriv[idx]
    }

    /// Physical `|k|^2` for the 2D mode at spectral position `(i, j)`.
    pub fn k_squared(&self, i: usize, j: usize) -> f64 {
        let base = 2.0 * std::f64::consts::PI / self.length;
        let kx = base * self.kint[i] as f64;
        let ky = base * self.kint[j] as f64;
        kx * kx + ky * ky
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        self.kint[i].unsigned_abs() as usize <= self.cutoff
            && self.kint[j].unsigned_abs() as usize <= self.cutoff
    }

    /// In-place 2D transform. The inverse is normalized by `1 / n^2`.
    pub fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        debug_assert_eq!(buf.len(), n * n);
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.scratch_len];
        plan.process_with_scratch(buf, &mut scratch);
        let mut t = vec![Complex64::new(0.0, 0.0); n * n];
        transpose(buf, &mut t, n);
        plan.process_with_scratch(&mut t, &mut scratch);
        transpose(&t, buf, n);
        if inverse {
            let s = 1.0 / (n * n) as f64;
            buf.iter_mut().for_each(|c| *c *= s);
        }
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut buf, false);
        buf
    }

    pub fn inverse(&self, mut coeffs: Vec<Complex64>) -> Vec<f64> {
        self.fft2(&mut coeffs, true);
        coeffs.into_iter().map(|c| c.re).collect()
    }

    /// Zero every mode outside the dealiased band.
    pub fn mask(&self, coeffs: &mut [Complex64]) {
        let n = self.n;
        for j in 0..n {
            for i in 0..n {
                if !self.in_band(i, j) {
                    coeffs[j * n + i] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// Project grid values onto the dealiased band.
    pub fn project(&self, values: &mut [f64]) {
        let mut c = self.forward(values);
        self.mask(&mut c);
        let out = self.inverse(c);
        values.copy_from_slice(&out);
    }

    /// Multiply by `i k_x` (axis 0) or `i k_y` (axis 1) in place.
    pub fn spectral_derivative(&self, coeffs: &mut [Complex64], axis: usize) {
        let n = self.n;
        for j in 0..n {
            for i in 0..n {
                let k = if axis == 0 { self.deriv[i] } else { self.deriv[j] };
                let c = &mut coeffs[j * n + i];
                *c = Complex64::new(-k * c.im, k * c.re);
            }
        }
    }

    /// Spectral derivatives of the band-projected input along x and y.
    pub fn masked_gradient(&self, values: &[f64]) -> [Vec<f64>; 2] {
        let mut c = self.forward(values);
        self.mask(&mut c);
        let mut cy = c.clone();
        self.spectral_derivative(&mut c, 0);
        self.spectral_derivative(&mut cy, 1);
        [self.inverse(c), self.inverse(cy)]
    }

    /// Plain spectral derivative (no band projection).
    pub fn derivative(&self, values: &[f64], axis: usize) -> Vec<f64> {
        let mut c = self.forward(values);
        self.spectral_derivative(&mut c, axis);
        self.inverse(c)
    }

    /// Product of two band-projected arrays, evaluated on the grid and
    /// projected back onto the band. Exact (alias-free) for band inputs.
    pub(crate) fn product_in_band(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut p: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        self.project(&mut p);
        p
    }

    /// `x` coordinate array over all nodes.
    pub fn x_field(&self) -> Vec<f64> {
        let n = self.n;
        (0..n * n).map(|idx| self.coord(idx % n)).collect()
    }

    /// Sawtooth `y` coordinate over all nodes, in `[0, L)`.
    pub fn y_field(&self) -> Vec<f64> {
        let n = self.n;
        (0..n * n).map(|idx| self.coord(idx / n)).collect()
    }

    pub fn same_as(&self, other: &TorusGrid) -> bool {
        self == other
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    for j in 0..n {
        for i in 0..n {
            dst[i * n + j] = src[j * n + i];
        }
    }
}

pub(crate) fn check_grids(a: &TorusGrid, b: &TorusGrid, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("{what}: {a:?} vs {b:?}")))
    }
}

/// Fourier coefficients of a real field, indexed like the grid values
/// (`coeffs[j * n + i]` holds wavenumber `(k(i), k(j))`). Unnormalized.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Arc<TorusGrid>,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn from_field(f: &ScalarField) -> Self {
        Self {
            grid: f.grid().clone(),
            coeffs: f.grid().forward(f.values()),
        }
    }

    pub fn from_coeffs(grid: Arc<TorusGrid>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.nodes() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                grid.nodes(),
                coeffs.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, kx: i64, ky: i64) -> Complex64 {
        let n = self.grid.n as i64;
        let i = kx.rem_euclid(n) as usize;
        let j = ky.rem_euclid(n) as usize;
        self.coeffs[j * self.grid.n + i]
    }

    /// Largest deviation from `c(-k) = conj(c(k))`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.grid.n;
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let a = self.coeffs[j * n + i];
                let b = self.coeffs[((n - j) % n) * n + (n - i) % n];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }

    pub fn to_field(&self) -> ScalarField {
        ScalarField::from_values(self.grid.clone(), self.grid.inverse(self.coeffs.clone()))
            .expect("coefficient count matches grid")
    }
}

/// `(d_x f, d_y f)` by spectral differentiation.
pub fn gradient(f: &ScalarField) -> OneFormField {
    let g = f.grid();
    let dx = g.derivative(f.values(), 0);
    let dy = g.derivative(f.values(), 1);
    OneFormField::from_components(g.clone(), dx, dy)
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid();
    let mut c = g.forward(v.component(0));
    g.spectral_derivative(&mut c, 0);
    let mut cy = g.forward(v.component(1));
    g.spectral_derivative(&mut cy, 1);
    c.iter_mut().zip(&cy).for_each(|(a, b)| *a += b);
    ScalarField::from_values(g.clone(), g.inverse(c)).expect("grid-sized")
}

/// `d_x v^2 - d_y v^1`.
pub fn curl2d(v: &VectorField) -> ScalarField {
    let g = v.grid();
    let mut c = g.forward(v.component(1));
    g.spectral_derivative(&mut c, 0);
    let mut cx = g.forward(v.component(0));
    g.spectral_derivative(&mut cx, 1);
    c.iter_mut().zip(&cx).for_each(|(a, b)| *a -= b);
    ScalarField::from_values(g.clone(), g.inverse(c)).expect("grid-sized")
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = f.grid();
    let n = g.n;
    let mut c = g.forward(f.values());
    for j in 0..n {
        for i in 0..n {
            let kx = g.deriv[i];
            let ky = g.deriv[j];
            c[j * n + i] *= -(kx * kx + ky * ky);
        }
    }
    ScalarField::from_values(g.clone(), g.inverse(c)).expect("grid-sized")
}

fn check_mean_free(f: &ScalarField) -> Result<()> {
    let mean = f.mean();
    let norm = f.l2_norm();
    if mean.abs() > 1e-10 * norm.max(f64::MIN_POSITIVE) && mean != 0.0 {
        return Err(Error::NonZeroMean { mean, norm });
    }
    Ok(())
}

/// Inverse of the 2D curl on mean-free fields: `V = perp-grad psi` with
/// `lap psi = omega`, so `curl2d(biot_savart(omega)) = omega`.
pub fn biot_savart(omega: &ScalarField) -> Result<VectorField> {
    check_mean_free(omega)?;
    let g = omega.grid();
    let n = g.n;
    let mut psi = g.forward(omega.values());
    for j in 0..n {
        for i in 0..n {
            let k2 = g.k_squared(i, j);
            let c = &mut psi[j * n + i];
            *c = if i == 0 && j == 0 { Complex64::new(0.0, 0.0) } else { -*c / k2 };
        }
    }
    let mut vx = psi.clone();
    g.spectral_derivative(&mut vx, 1);
    vx.iter_mut().for_each(|c| *c = -*c);
    g.spectral_derivative(&mut psi, 0);
    Ok(VectorField::from_components(g.clone(), g.inverse(vx), g.inverse(psi)))
}

/// Mean-free solution of `-lap p = src`.
pub fn poisson_solve(src: &ScalarField) -> Result<ScalarField> {
    check_mean_free(src)?;
    let g = src.grid();
    let n = g.n;
    let mut c = g.forward(src.values());
    for j in 0..n {
        for i in 0..n {
            let k2 = g.k_squared(i, j);
            let v = &mut c[j * n + i];
            *v = if i == 0 && j == 0 { Complex64::new(0.0, 0.0) } else { *v / k2 };
        }
    }
    Ok(ScalarField::from_values(g.clone(), g.inverse(c)).expect("grid-sized"))
}

/// Pointwise product with the 2/3-rule mask applied to the result.
///
/// The product is formed on a grid padded to `2n`, so the retained band is
/// free of aliasing for arbitrary resolved inputs.
pub fn dealias_product(f: &ScalarField, h: &ScalarField) -> Result<ScalarField> {
    check_grids(f.grid(), h.grid(), "dealias_product")?;
    let g = f.grid();
    let n = g.n;
    let m = 2 * n;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
    let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];

    let pad = |values: &[f64], scratch: &mut Vec<Complex64>| -> Vec<Complex64> {
        let c = g.forward(values);
        let norm = 1.0 / (n * n) as f64;
        let mut big = vec![Complex64::new(0.0, 0.0); m * m];
        for j in 0..n {
            for i in 0..n {
                let a = c[j * n + i] * norm;
                for (ti, wi) in pad_targets(i, n) {
                    for (tj, wj) in pad_targets(j, n) {
                        big[tj * m + ti] += a * (wi * wj);
                    }
                }
            }
        }
        fft2_with(&*inv, &mut big, m, scratch);
        big
    };

    let a = pad(f.values(), &mut scratch);
    let b = pad(h.values(), &mut scratch);
    let mut prod: Vec<Complex64> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| Complex64::new(x.re * y.re, 0.0))
        .collect();
    fft2_with(&*fwd, &mut prod, m, &mut scratch);

    let scale = (n * n) as f64 / (m * m) as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for j in 0..n {
        for i in 0..n {
            if g.in_band(i, j) {
                let bi = g.kint[i].rem_euclid(m as i64) as usize;
                let bj = g.kint[j].rem_euclid(m as i64) as usize;
                out[j * n + i] = prod[bj * m + bi] * scale;
            }
        }
    }
    ScalarField::from_values(g.clone(), g.inverse(out))
}

/// Where a coarse spectral index lands on the padded grid. The Nyquist
/// coefficient is split evenly between `+n/2` and `-n/2`.
fn pad_targets(i: usize, n: usize) -> Vec<(usize, f64)> {
    let m = 2 * n;
    if i == n / 2 {
        vec![(n / 2, 0.5), (m - n / 2, 0.5)]
    } else if i < n / 2 {
        vec![(i, 1.0)]
    } else {
        vec![(m - (n - i), 1.0)]
    }
}

fn fft2_with(plan: &dyn Fft<f64>, buf: &mut [Complex64], m: usize, scratch: &mut [Complex64]) {
    plan.process_with_scratch(buf, scratch);
    let mut t = vec![Complex64::new(0.0, 0.0); m * m];
    transpose(buf, &mut t, m);
    plan.process_with_scratch(&mut t, scratch);
    transpose(&t, buf, m);
}

/// Sobolev norm `||f||_{H^k}` computed spectrally, summed over components
/// of a multi-component field given as a list of arrays.
pub fn sobolev_norm(grid: &TorusGrid, components: &[&[f64]], k: u32) -> f64 {
    let n = grid.n;
    let mut total = 0.0;
    for comp in components {
        let c = grid.forward(comp);
        for j in 0..n {
            for i in 0..n {
                let k2 = grid.k_squared(i, j);
                let weight: f64 = (0..=k).map(|p| k2.powi(p as i32)).sum();
                total += weight * c[j * n + i].norm_sqr();
            }
        }
    }
    // Parseval: sum |f|^2 dA = L^2 / n^4 * sum |c|^2
    (total * grid.area() / ((n * n) as f64 * (n * n) as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Arc<TorusGrid> {
        TorusGrid::new(n).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(TorusGrid::new(6).is_err());
        assert!(TorusGrid::new(33).is_err());
        assert!(TorusGrid::with_params(16, -1.0, 0.5).is_err());
        assert!(TorusGrid::with_params(16, 1.0, 0.0).is_err());
    }

    #[test]
    fn cutoff_follows_two_thirds_rule() {
        assert_eq!(grid(32).cutoff(), 10);
        assert_eq!(grid(64).cutoff(), 21);
        assert_eq!(grid(48).cutoff(), 15);
        assert_eq!(TorusGrid::with_params(32, 2.0 * PI, 1.0).unwrap().cutoff(), 15);
    }

    #[test]
    fn gradient_of_sine() {
        let g = grid(32);
        let f = ScalarField::from_fn(g.clone(), |x, _| x.sin());
        let d = gradient(&f);
        let e = OneFormField::from_fn(g, |x, _| (x.cos(), 0.0));
        assert!(d.max_abs_diff(&e) < 1e-12);
    }

    #[test]
    fn constants_have_zero_gradient() {
        let g = grid(16);
        let d = gradient(&ScalarField::constant(g, 3.5));
        assert!(d.max_abs() < 1e-12);
    }

    #[test]
    fn divergence_of_cosine() {
        let g = grid(32);
        let v = VectorField::from_fn(g.clone(), |x, _| (x.cos(), 0.0));
        let e = ScalarField::from_fn(g, |x, _| -x.sin());
        assert!(divergence(&v).max_abs_diff(&e) < 1e-12);
    }

    #[test]
    fn curl_of_shear() {
        let g = grid(32);
        let v = VectorField::from_fn(g.clone(), |_, y| (-y.sin(), 0.0));
        let e = ScalarField::from_fn(g, |_, y| y.cos());
        assert!(curl2d(&v).max_abs_diff(&e) < 1e-12);
    }

    #[test]
    fn biot_savart_of_sine() {
        let g = grid(32);
        let w = ScalarField::from_fn(g.clone(), |x, _| x.sin());
        let v = biot_savart(&w).unwrap();
        let e = VectorField::from_fn(g, |x, _| (0.0, -x.cos()));
        assert!(v.max_abs_diff(&e) < 1e-12);
        assert!(curl2d(&v).max_abs_diff(&w) < 1e-12);
    }

    #[test]
    fn biot_savart_rejects_mean() {
        let g = grid(16);
        let w = ScalarField::from_fn(g, |x, _| 1.0 + x.sin());
        assert!(matches!(biot_savart(&w), Err(Error::NonZeroMean { .. })));
        let z = ScalarField::zeros(grid(16));
        assert_eq!(biot_savart(&z).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn poisson_eigenfunction() {
        let g = grid(16);
        let s = ScalarField::from_fn(g, |x, _| x.sin());
        let p = poisson_solve(&s).unwrap();
        assert!(p.max_abs_diff(&s) < 1e-13);
    }

    #[test]
    fn dealias_product_of_sines() {
        let g = grid(32);
        let f = ScalarField::from_fn(g.clone(), |x, _| x.sin());
        let p = dealias_product(&f, &f).unwrap();
        let e = ScalarField::from_fn(g, |x, _| 0.5 - 0.5 * (2.0 * x).cos());
        assert!(p.max_abs_diff(&e) < 1e-13);
    }

    #[test]
    fn dealias_product_at_band_edge() {
        // sin^2((n/2-1) x) = 1/2 - cos((n-2) x)/2; only the mean survives.
        let g = grid(32);
        let f = ScalarField::from_fn(g.clone(), |x, _| (15.0 * x).sin());
        let p = dealias_product(&f, &f).unwrap();
        assert!(p.max_abs_diff(&ScalarField::constant(g.clone(), 0.5)) < 1e-13);
        // The naive grid product aliases cos(30x) onto cos(2x).
        let naive = f.values().iter().map(|v| v * v).collect::<Vec<_>>();
        let c = g.forward(&naive);
        assert!(c[2].norm() > 1.0);
    }

    #[test]
    fn sobolev_norm_of_single_mode() {
        let g = grid(16);
        let f = ScalarField::from_fn(g.clone(), |x, y| (2.0 * x).sin() * y.cos());
        // ||f||_L2^2 = L^2 / 4, |k|^2 = 5
        let l2 = (g.area() / 4.0).sqrt();
        assert!((sobolev_norm(&g, &[f.values()], 0) - l2).abs() < 1e-12);
        assert!((sobolev_norm(&g, &[f.values()], 1) - l2 * 6f64.sqrt()).abs() < 1e-11);
    }
}
