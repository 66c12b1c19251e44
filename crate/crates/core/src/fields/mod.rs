//! Field containers on a [`TorusGrid`] and the Lie-derivative calculus.
//!
//! Every field kind shares one storage layout: the components are
//! concatenated, each an `n x n` array in grid order. Rank-2 tensors store
//! `T_xx, T_xy, T_yx, T_yy`.

mod lie;

use std::fmt;
use std::marker::PhantomData;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_grids, TorusGrid};

pub use lie::{
    double_lie, exterior_d, lie_oneform, lie_scalar, lie_tensor2, lie_vector, LieTransport,
    Transporter,
};

pub trait Kind: Copy + Default + Send + Sync + 'static {
    const COMPONENTS: usize;
    const LABEL: &'static str;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Scalar;
#[derive(Clone, Copy, Debug, Default)]
pub struct Vector;
#[derive(Clone, Copy, Debug, Default)]
pub struct OneForm;
#[derive(Clone, Copy, Debug, Default)]
pub struct Tensor2;

impl Kind for Scalar {
    const COMPONENTS: usize = 1;
    const LABEL: &'static str = "scalar";
}
impl Kind for Vector {
    const COMPONENTS: usize = 2;
    const LABEL: &'static str = "vector";
}
impl Kind for OneForm {
    const COMPONENTS: usize = 2;
    const LABEL: &'static str = "oneform";
}
impl Kind for Tensor2 {
    const COMPONENTS: usize = 4;
    const LABEL: &'static str = "tensor2";
}

/// Grid field of kind `K`.
#[derive(Clone)]
pub struct Field<K: Kind> {
    grid: Arc<TorusGrid>,
    data: Vec<f64>,
    symmetric: bool,
    _kind: PhantomData<K>,
}

pub type ScalarField = Field<Scalar>;
pub type VectorField = Field<Vector>;
pub type OneFormField = Field<OneForm>;
pub type Tensor2Field = Field<Tensor2>;

impl<K: Kind> fmt::Debug for Field<K> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("kind", &K::LABEL)
            .field("n", &self.grid.n())
            .field("l2", &self.l2_norm())
            .finish()
    }
}

impl<K: Kind> Field<K> {
    pub fn zeros(grid: Arc<TorusGrid>) -> Self {
        let len = K::COMPONENTS * grid.nodes();
        Self { grid, data: vec![0.0; len], symmetric: true, _kind: PhantomData }
    }

    /// Build from concatenated component data.
    pub fn from_data(grid: Arc<TorusGrid>, data: Vec<f64>) -> Result<Self> {
        let want = K::COMPONENTS * grid.nodes();
        if data.len() != want {
            return Err(Error::InvalidArgument(format!(
                "{} field needs {want} values, got {}",
                K::LABEL,
                data.len()
            )));
        }
        Ok(Self { grid, data, symmetric: false, _kind: PhantomData })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn components(&self) -> usize {
        K::COMPONENTS
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let m = self.grid.nodes();
        &self.data[c * m..(c + 1) * m]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let m = self.grid.nodes();
        &mut self.data[c * m..(c + 1) * m]
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn set_symmetric(&mut self, flag: bool) {
        self.symmetric = flag;
    }

    pub fn check_grid<J: Kind>(&self, other: &Field<J>) -> Result<()> {
        check_grids(&self.grid, &other.grid, "field operands")
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        assert!(*self.grid == *other.grid, "axpy on mismatched grids");
        self.data.iter_mut().zip(&other.data).for_each(|(x, y)| *x += a * y);
        self.symmetric &= other.symmetric;
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= a);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Linear combination `sum_i c_i f_i` over a non-empty list.
    pub fn combine(terms: &[(f64, &Self)]) -> Self {
        let (c0, f0) = terms[0];
        let mut out = f0.scaled(c0);
        for (c, f) in &terms[1..] {
            out.axpy(*c, f);
        }
        out
    }

    /// `(int |f|^2 dA)^(1/2)`, summed over components.
    pub fn l2_norm(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_area()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `||self - reference|| / ||reference||` in L2.
    pub fn rel_l2_error(&self, reference: &Self) -> f64 {
        let diff = self.sub(reference).l2_norm();
        let norm = reference.l2_norm();
        if norm == 0.0 {
            diff
        } else {
            diff / norm
        }
    }

    /// Project every component onto the dealiased band.
    pub fn project(&mut self) {
        let grid = self.grid.clone();
        for c in 0..K::COMPONENTS {
            grid.project(self.component_mut(c));
        }
    }
}

impl ScalarField {
    pub fn from_values(grid: Arc<TorusGrid>, values: Vec<f64>) -> Result<Self> {
        Self::from_data(grid, values)
    }

    pub fn from_fn(grid: Arc<TorusGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let data = (0..n * n).map(|idx| f(grid.coord(idx % n), grid.coord(idx / n))).collect();
        Self { grid, data, symmetric: true, _kind: PhantomData }
    }

    pub fn constant(grid: Arc<TorusGrid>, c: f64) -> Self {
        Self::from_fn(grid, |_, _| c)
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn integral(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Pointwise product without dealiasing.
    pub fn pointwise(&self, other: &ScalarField) -> ScalarField {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Self { grid: self.grid.clone(), data, symmetric: true, _kind: PhantomData }
    }
}

macro_rules! two_component {
    ($ty:ty) => {
        impl $ty {
            pub fn from_components(grid: Arc<TorusGrid>, x: Vec<f64>, y: Vec<f64>) -> Self {
                assert_eq!(x.len(), grid.nodes());
                assert_eq!(y.len(), grid.nodes());
                let mut data = x;
                data.extend_from_slice(&y);
                Self { grid, data, symmetric: false, _kind: PhantomData }
            }

            pub fn from_fn(grid: Arc<TorusGrid>, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
                let n = grid.n();
                let m = n * n;
                let mut data = vec![0.0; 2 * m];
                for idx in 0..m {
                    let (a, b) = f(grid.coord(idx % n), grid.coord(idx / n));
                    data[idx] = a;
                    data[m + idx] = b;
                }
                Self { grid, data, symmetric: false, _kind: PhantomData }
            }

            pub fn constant(grid: Arc<TorusGrid>, c: ConstantVector) -> Self {
                Self::from_fn(grid, |_, _| (c.x, c.y))
            }

            pub fn x(&self) -> &[f64] {
                self.component(0)
            }

            pub fn y(&self) -> &[f64] {
                self.component(1)
            }

            /// Spatial mean of each component.
            pub fn mean(&self) -> ConstantVector {
                let m = self.grid.nodes() as f64;
                ConstantVector {
                    x: self.x().iter().sum::<f64>() / m,
                    y: self.y().iter().sum::<f64>() / m,
                }
            }

            pub fn scalar_component(&self, c: usize) -> ScalarField {
                ScalarField::from_values(self.grid.clone(), self.component(c).to_vec())
                    .expect("grid-sized")
            }
        }
    };
}

two_component!(VectorField);
two_component!(OneFormField);

impl VectorField {
    /// Lower the index with the flat metric.
    pub fn to_one_form(&self) -> OneFormField {
        Field { grid: self.grid.clone(), data: self.data.clone(), symmetric: false, _kind: PhantomData }
    }

    pub fn add_constant(&self, c: ConstantVector) -> VectorField {
        let mut out = self.clone();
        let m = self.grid.nodes();
        out.data[..m].iter_mut().for_each(|v| *v += c.x);
        out.data[m..].iter_mut().for_each(|v| *v += c.y);
        out
    }
}

impl OneFormField {
    /// Raise the index with the flat metric.
    pub fn to_vector(&self) -> VectorField {
        Field { grid: self.grid.clone(), data: self.data.clone(), symmetric: false, _kind: PhantomData }
    }
}

impl Tensor2Field {
    /// Component index of `T_ab`.
    pub fn slot(a: usize, b: usize) -> usize {
        2 * a + b
    }

    pub fn entry(&self, a: usize, b: usize) -> &[f64] {
        self.component(Self::slot(a, b))
    }

    pub fn from_fn(grid: Arc<TorusGrid>, f: impl Fn(f64, f64) -> [f64; 4]) -> Self {
        let n = grid.n();
        let m = n * n;
        let mut data = vec![0.0; 4 * m];
        for idx in 0..m {
            let t = f(grid.coord(idx % n), grid.coord(idx / n));
            for c in 0..4 {
                data[c * m + idx] = t[c];
            }
        }
        let mut out = Self { grid, data, symmetric: false, _kind: PhantomData };
        out.symmetric = out.symmetry_defect() == 0.0;
        out
    }

    /// Pointwise `alpha ⊗ beta`, without dealiasing.
    pub fn outer(alpha: &OneFormField, beta: &OneFormField) -> Self {
        let m = alpha.grid.nodes();
        let mut data = vec![0.0; 4 * m];
        for a in 0..2 {
            for b in 0..2 {
                let s = Self::slot(a, b);
                let (pa, pb) = (alpha.component(a), beta.component(b));
                for idx in 0..m {
                    data[s * m + idx] = pa[idx] * pb[idx];
                }
            }
        }
        Self { grid: alpha.grid.clone(), data, symmetric: false, _kind: PhantomData }
    }

    /// `alpha ⊗ beta` with each product dealiased (band inputs assumed).
    pub fn outer_dealiased(alpha: &OneFormField, beta: &OneFormField) -> Self {
        let mut t = Self::outer(alpha, beta);
        t.project();
        t
    }

    pub fn transpose(&self) -> Self {
        let mut out = self.clone();
        let m = self.grid.nodes();
        out.data[m..2 * m].copy_from_slice(self.component(2));
        out.data[2 * m..3 * m].copy_from_slice(self.component(1));
        out
    }

    /// `max |T_xy - T_yx|`.
    pub fn symmetry_defect(&self) -> f64 {
        self.component(1)
            .iter()
            .zip(self.component(2))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scalar_entry(&self, a: usize, b: usize) -> ScalarField {
        ScalarField::from_values(self.grid.clone(), self.entry(a, b).to_vec()).expect("grid-sized")
    }
}

/// Spatially constant vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantVector {
    pub x: f64,
    pub y: f64,
}

impl ConstantVector {
    pub const ZERO: ConstantVector = ConstantVector { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn axpy(self, a: f64, o: ConstantVector) -> Self {
        Self { x: self.x + a * o.x, y: self.y + a * o.y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_y_outermost() {
        let g = TorusGrid::new(8).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x, y| x + 10.0 * y);
        let h = g.spacing();
        assert_eq!(f.values()[g.index(3, 2)], 3.0 * h + 20.0 * h);
    }

    #[test]
    fn l2_norm_of_unit_constant_is_length() {
        let g = TorusGrid::new(8).unwrap();
        let f = ScalarField::constant(g.clone(), 1.0);
        assert!((f.l2_norm() - g.length()).abs() < 1e-14);
    }

    #[test]
    fn outer_and_transpose() {
        let g = TorusGrid::new(8).unwrap();
        let a = OneFormField::from_fn(g.clone(), |x, _| (1.0, x));
        let b = OneFormField::from_fn(g.clone(), |_, y| (y, 2.0));
        let t = Tensor2Field::outer(&a, &b);
        let tt = Tensor2Field::outer(&b, &a);
        assert_eq!(t.transpose().max_abs_diff(&tt), 0.0);
        assert!(Tensor2Field::outer(&a, &a).symmetry_defect() == 0.0);
    }

    #[test]
    fn vector_oneform_round_trip() {
        let g = TorusGrid::new(8).unwrap();
        let v = VectorField::from_fn(g, |x, y| (x.sin(), y.cos()));
        assert_eq!(v.to_one_form().to_vector().max_abs_diff(&v), 0.0);
    }
}
