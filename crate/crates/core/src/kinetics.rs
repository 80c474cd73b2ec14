//! Mass-action rates, their Jacobians, and the vector field `x ↦ Γ v(x)`.
//!
//! The public functions validate that the state is strictly positive. The
//! `*_into` variants skip validation and are safe on the boundary of the
//! orthant (the integrator evaluates there when a component has been floored).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{Complex, Network};
use crate::odeint::VectorField;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KineticsError {
    #[error("concentration of species {index} must be positive, got {value}")]
    NonPositive { index: usize, value: f64 },
    #[error("state has {got} entries, network has {expected} species")]
    DimensionMismatch { expected: usize, got: usize },
}

fn check_state(net: &Network, x: &[f64]) -> Result<(), KineticsError> {
    if x.len() != net.num_species() {
        return Err(KineticsError::DimensionMismatch {
            expected: net.num_species(),
            got: x.len(),
        });
    }
    match x.iter().position(|&v| !(v > 0.0)) {
        Some(index) => Err(KineticsError::NonPositive {
            index,
            value: x[index],
        }),
        None => Ok(()),
    }
}

/// Net reaction rates. Reversible entries are forward minus backward and may
/// be negative.
pub fn rate_vector(net: &Network, x: &[f64]) -> Result<DVector<f64>, KineticsError> {
    check_state(net, x)?;
    let mut v = DVector::zeros(net.num_reactions());
    rates_into(net, x, v.as_mut_slice());
    Ok(v)
}

/// Derivative of [`rate_vector`] with respect to `x`, built from
/// `diag(w) A diag(1/x)` for the forward and backward monomials separately.
pub fn rate_jacobian(net: &Network, x: &[f64]) -> Result<DMatrix<f64>, KineticsError> {
    check_state(net, x)?;
    let mut jac = DMatrix::zeros(net.num_reactions(), net.num_species());
    for (j, r) in net.reactions().iter().enumerate() {
        let wf = r.k_forward * r.reactant.monomial(x);
        for &(i, c) in r.reactant.terms() {
            jac[(j, i)] += wf * c as f64 / x[i];
        }
        if let Some(kb) = r.k_backward {
            let wb = kb * r.product.monomial(x);
            for &(i, c) in r.product.terms() {
                jac[(j, i)] -= wb * c as f64 / x[i];
            }
        }
    }
    Ok(jac)
}

pub fn vector_field(net: &Network, x: &[f64]) -> Result<DVector<f64>, KineticsError> {
    check_state(net, x)?;
    let mut out = DVector::zeros(net.num_species());
    field_into(net, x, out.as_mut_slice());
    Ok(out)
}

pub fn field_jacobian(net: &Network, x: &[f64]) -> Result<DMatrix<f64>, KineticsError> {
    let dv = rate_jacobian(net, x)?;
    Ok(net.stoichiometric_matrix().to_f64() * dv)
}

/// Unchecked rate evaluation.
pub fn rates_into(net: &Network, x: &[f64], out: &mut [f64]) {
    for (v, r) in out.iter_mut().zip(net.reactions()) {
        *v = r.k_forward * r.reactant.monomial(x);
        if let Some(kb) = r.k_backward {
            *v -= kb * r.product.monomial(x);
        }
    }
}

/// Unchecked vector field. Scatters each rate along the sparse reaction
/// vector instead of forming Γ densely.
pub fn field_into(net: &Network, x: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for r in net.reactions() {
        let mut v = r.k_forward * r.reactant.monomial(x);
        if let Some(kb) = r.k_backward {
            v -= kb * r.product.monomial(x);
        }
        for &(i, c) in r.product.terms() {
            out[i] += c as f64 * v;
        }
        for &(i, c) in r.reactant.terms() {
            out[i] -= c as f64 * v;
        }
    }
}

/// Adds `scale * d(x^c)/dx` to `row`, using the product rule so that zero
/// concentrations are handled without dividing by them.
fn add_monomial_gradient(c: &Complex, x: &[f64], scale: f64, row: &mut [f64]) {
    let terms = c.terms();
    for (p, &(i, ci)) in terms.iter().enumerate() {
        let mut g = scale * ci as f64 * x[i].powi(ci as i32 - 1);
        for (q, &(l, cl)) in terms.iter().enumerate() {
            if q != p {
                g *= x[l].powi(cl as i32);
            }
        }
        row[i] += g;
    }
}

/// Unchecked field Jacobian written into `out` (n × n).
pub fn field_jacobian_into(net: &Network, x: &[f64], out: &mut DMatrix<f64>) {
    let n = net.num_species();
    out.fill(0.0);
    let mut dv = vec![0.0; n];
    for (j, r) in net.reactions().iter().enumerate() {
        dv.fill(0.0);
        add_monomial_gradient(&r.reactant, x, r.k_forward, &mut dv);
        if let Some(kb) = r.k_backward {
            add_monomial_gradient(&r.product, x, -kb, &mut dv);
        }
        let gamma = net.stoichiometric_matrix();
        for s in 0..n {
            let g = gamma.get(s, j);
            if g != 0 {
                for (i, d) in dv.iter().enumerate() {
                    out[(s, i)] += g as f64 * d;
                }
            }
        }
    }
}

impl VectorField for Network {
    fn dim(&self) -> usize {
        self.num_species()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        field_into(self, x, out);
    }

    fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>) {
        field_jacobian_into(self, x, out);
    }

    fn positive_components(&self) -> usize {
        self.num_species()
    }
}
