//! Lie derivatives along a vector field for each field kind.
//!
//! Differentiated inputs are projected onto the dealiased band and every
//! output component is projected again, so products are alias-free for
//! band-limited operands.

use std::sync::Arc;

use super::{Field, Kind, OneFormField, ScalarField, Tensor2Field, VectorField};
use crate::error::Result;
use crate::grid::{gradient, TorusGrid};
use crate::noise::NoiseBasis;

/// A transporting vector field together with its band-projected gradient.
#[derive(Clone, Debug)]
pub struct Transporter {
    field: VectorField,
    /// `grad[i][j] = d_j xi^i`.
    grad: [[Vec<f64>; 2]; 2],
    constant: bool,
}

impl Transporter {
    pub fn new(field: &VectorField) -> Self {
        let g = field.grid();
        let [a, b] = g.masked_gradient(field.component(0));
        let [c, d] = g.masked_gradient(field.component(1));
        let scale = field.max_abs().max(1.0);
        let constant = [&a, &b, &c, &d]
            .iter()
            .all(|v| v.iter().all(|x| x.abs() <= 1e-14 * scale));
        Self { field: field.clone(), grad: [[a, b], [c, d]], constant }
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.field.grid()
    }

    /// True when the field is spatially constant (up to round-off).
    pub fn is_constant(&self) -> bool {
        self.constant
    }

    /// `d_j xi^i`.
    pub fn derivative(&self, i: usize, j: usize) -> &[f64] {
        &self.grad[i][j]
    }

}

/// Band-projected spectral gradient of every component of `f`.
fn component_gradients<K: Kind>(f: &Field<K>) -> Vec<[Vec<f64>; 2]> {
    (0..K::COMPONENTS).map(|c| f.grid().masked_gradient(f.component(c))).collect()
}

/// Field kinds that can be Lie-transported.
pub trait LieTransport: Sized {
    /// `sum_i w_i L_{t_i} f`, assembled on the grid and projected once.
    fn lie_combination(terms: &[(f64, &Transporter)], f: &Self) -> Self;

    fn lie_with(t: &Transporter, f: &Self) -> Self {
        Self::lie_combination(&[(1.0, t)], f)
    }
}

fn finish<K: Kind>(grid: &Arc<TorusGrid>, mut comps: Vec<Vec<f64>>, symmetric: bool) -> Field<K> {
    for c in comps.iter_mut() {
        grid.project(c);
    }
    let data = comps.concat();
    let mut out = Field::<K>::from_data(grid.clone(), data).expect("component count");
    out.set_symmetric(symmetric);
    out
}

/// Accumulate `w xi . grad f_c` into `out`.
fn add_advection(out: &mut [f64], w: f64, t: &Transporter, grad: &[Vec<f64>; 2]) {
    let (vx, vy) = (t.field.component(0), t.field.component(1));
    let (fx, fy) = (&grad[0], &grad[1]);
    for k in 0..out.len() {
        out[k] += w * (vx[k] * fx[k] + vy[k] * fy[k]);
    }
}

fn grid_of<'a>(terms: &[(f64, &'a Transporter)], fallback: &'a Arc<TorusGrid>) -> &'a Arc<TorusGrid> {
    terms.first().map_or(fallback, |(_, t)| t.grid())
}

impl LieTransport for ScalarField {
    fn lie_combination(terms: &[(f64, &Transporter)], f: &Self) -> Self {
        let grid = grid_of(terms, f.grid());
        let grads = component_gradients(f);
        let mut out = vec![0.0; grid.nodes()];
        for (w, t) in terms {
            add_advection(&mut out, *w, t, &grads[0]);
        }
        finish(grid, vec![out], true)
    }
}

impl LieTransport for OneFormField {
    fn lie_combination(terms: &[(f64, &Transporter)], a: &Self) -> Self {
        let grid = grid_of(terms, a.grid());
        let grads = component_gradients(a);
        let (a0, a1) = (a.component(0), a.component(1));
        let comps = (0..2)
            .map(|i| {
                let mut out = vec![0.0; grid.nodes()];
                for (w, t) in terms {
                    add_advection(&mut out, *w, t, &grads[i]);
                    if !t.constant {
                        let (d0, d1) = (t.derivative(0, i), t.derivative(1, i));
                        for k in 0..out.len() {
                            out[k] += w * (a0[k] * d0[k] + a1[k] * d1[k]);
                        }
                    }
                }
                out
            })
            .collect();
        finish(grid, comps, false)
    }
}

impl LieTransport for VectorField {
    fn lie_combination(terms: &[(f64, &Transporter)], v: &Self) -> Self {
        let grid = grid_of(terms, v.grid());
        let grads = component_gradients(v);
        let (v0, v1) = (v.component(0), v.component(1));
        let comps = (0..2)
            .map(|i| {
                let mut out = vec![0.0; grid.nodes()];
                for (w, t) in terms {
                    add_advection(&mut out, *w, t, &grads[i]);
                    if !t.constant {
                        let (d0, d1) = (t.derivative(i, 0), t.derivative(i, 1));
                        for k in 0..out.len() {
                            out[k] -= w * (v0[k] * d0[k] + v1[k] * d1[k]);
                        }
                    }
                }
                out
            })
            .collect();
        finish(grid, comps, false)
    }
}

impl LieTransport for Tensor2Field {
    fn lie_combination(terms: &[(f64, &Transporter)], tensor: &Self) -> Self {
        let grid = grid_of(terms, tensor.grid());
        let grads = component_gradients(tensor);
        let s = Tensor2Field::slot;
        let mut comps = Vec::with_capacity(4);
        for a in 0..2 {
            for b in 0..2 {
                let mut out = vec![0.0; grid.nodes()];
                for (w, t) in terms {
                    add_advection(&mut out, *w, t, &grads[s(a, b)]);
                    if !t.constant {
                        for k in 0..2 {
                            // T_kb d_a xi^k + T_ak d_b xi^k
                            let tkb = tensor.component(s(k, b));
                            let tak = tensor.component(s(a, k));
                            let (da, db) = (t.derivative(k, a), t.derivative(k, b));
                            for m in 0..out.len() {
                                out[m] += w * (tkb[m] * da[m] + tak[m] * db[m]);
                            }
                        }
                    }
                }
                comps.push(out);
            }
        }
        finish(grid, comps, tensor.is_symmetric())
    }
}

/// `xi . grad f`.
pub fn lie_scalar(xi: &VectorField, f: &ScalarField) -> Result<ScalarField> {
    xi.check_grid(f)?;
    Ok(ScalarField::lie_with(&Transporter::new(xi), f))
}

/// `xi . grad alpha_i + sum_j alpha_j d_i xi^j`.
pub fn lie_oneform(xi: &VectorField, alpha: &OneFormField) -> Result<OneFormField> {
    xi.check_grid(alpha)?;
    Ok(OneFormField::lie_with(&Transporter::new(xi), alpha))
}

/// The bracket `xi . grad v - v . grad xi`.
pub fn lie_vector(xi: &VectorField, v: &VectorField) -> Result<VectorField> {
    xi.check_grid(v)?;
    Ok(VectorField::lie_with(&Transporter::new(xi), v))
}

/// `xi . grad T_ij + T_kj d_i xi^k + T_ik d_j xi^k`.
pub fn lie_tensor2(xi: &VectorField, t: &Tensor2Field) -> Result<Tensor2Field> {
    xi.check_grid(t)?;
    Ok(Tensor2Field::lie_with(&Transporter::new(xi), t))
}

/// `sum_k L_{xi_k}(L_{xi_k} f)` over the basis.
pub fn double_lie<K: Kind>(basis: &NoiseBasis, f: &Field<K>) -> Result<Field<K>>
where
    Field<K>: LieTransport,
{
    basis.check_grid(f.grid())?;
    let mut out = Field::<K>::zeros(f.grid().clone());
    out.set_symmetric(f.is_symmetric());
    for t in basis.transporters() {
        let once = Field::<K>::lie_with(t, f);
        out.axpy(1.0, &Field::<K>::lie_with(t, &once));
    }
    Ok(out)
}

/// `df = (d_x f) dx + (d_y f) dy`.
pub fn exterior_d(f: &ScalarField) -> OneFormField {
    gradient(f)
}
