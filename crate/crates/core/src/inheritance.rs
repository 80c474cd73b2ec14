//! Extending an oscillating network by reversible reactions on new species.
//!
//! Given a base network on `n` species and `m` reversible reactions that
//! also involve `m + k` new species, the new-species net changes form an
//! `(m + k) × m` matrix `β`. When `β` has full column rank, choosing the
//! added rate constants as `ε⁻¹ η^{-σ}` (with `σ` read off the new-species
//! coefficients) keeps a stable periodic orbit of the base network for small
//! `ε` and `η`. This module builds the matrices, the rate schedule, the
//! enlarged network, and the slow-manifold diagnostics used to check the
//! construction numerically.
//!
//! New species are ordered by a permutation `π` that puts `m` linearly
//! independent rows of `β` first; these form the square block `β̂`, the
//! remaining `k` rows form `β̂̂`. Vectors over the new species passed to or
//! returned from this module are in `π` order unless noted.

use nalgebra::{Complex as C64, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    format_number, parse_reaction_list, signed_power, Complex, IntMatrix, Network, ParseError,
    RateSpec, Reaction,
};
use crate::odeint::{integrate, OdeError};
use crate::orbit::{
    curve_hausdorff_distance, eigenvalues, find_periodic_orbit, hausdorff_distance, OrbitError,
    OrbitReport, OrbitSearchConfig, PeriodicOrbit,
};
use crate::stoich::{conservation_laws, rank_and_image};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InheritanceError {
    #[error("added reactions: {0}")]
    Parse(#[from] ParseError),
    #[error("no reactions to add")]
    Empty,
    #[error("added reaction on line {line} is not reversible")]
    NotReversible { line: usize },
    #[error("added reactions introduce no new species")]
    NoNewSpecies,
    #[error(
        "the new-species net change matrix has rank {rank}, but the construction requires \
         rank equal to its number of columns ({m})\n{beta}"
    )]
    RankDeficient {
        rank: usize,
        m: usize,
        beta: IntMatrix,
    },
    #[error("{name} must be positive and finite, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("slow-manifold Newton iteration left the positive orthant")]
    PositivityLost,
    #[error("slow-manifold Newton iteration did not converge (residual {residual:e}); eta is probably too large")]
    NewtonFailed { residual: f64 },
}

/// The base network together with added reversible reactions, in matrix
/// form.
#[derive(Debug, Clone)]
pub struct Extension {
    base: Network,
    /// New species names in order of first appearance.
    new_species: Vec<String>,
    /// Added reactions indexed over base species followed by new species in
    /// appearance order.
    reactions: Vec<(Complex, Complex)>,
    pub a: IntMatrix,
    pub a_prime: IntMatrix,
    /// Rows in appearance order.
    pub b: IntMatrix,
    pub b_prime: IntMatrix,
    pub alpha: IntMatrix,
    pub beta: IntMatrix,
    /// `permutation[p]` is the appearance index of the new species placed at
    /// position `p`.
    pub permutation: Vec<usize>,
    pub rank_beta: usize,
    /// Whether the added text carried rate constants, which are superseded
    /// by the synthesized schedule.
    pub had_rates: bool,
}

fn int_to_f64_rows(m: &IntMatrix, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m.get(rows[i], j) as f64)
}

/// Greedy in-order selection of linearly independent rows.
fn independent_rows(beta: &IntMatrix, tol: f64) -> Vec<usize> {
    let m = beta.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut chosen = Vec::new();
    for i in 0..beta.nrows() {
        if chosen.len() == m {
            break;
        }
        let mut v = DVector::from_iterator(m, beta.row(i).iter().map(|&x| x as f64));
        let original = v.norm();
        if original == 0.0 {
            continue;
        }
        for q in &basis {
            let c = q.dot(&v);
            v -= q * c;
        }
        if v.norm() > tol * original {
            basis.push(v.normalize());
            chosen.push(i);
        }
    }
    chosen
}

pub fn build_extension(base: &Network, added_text: &str) -> Result<Extension, InheritanceError> {
    let known = base.species_names();
    let list = parse_reaction_list(added_text, &known)?;
    if list.reactions.is_empty() {
        return Err(InheritanceError::Empty);
    }
    if let Some(r) = list.reactions.iter().find(|r| !r.reversible) {
        return Err(InheritanceError::NotReversible { line: r.line });
    }
    let n = known.len();
    let new_species: Vec<String> = list.species[n..].to_vec();
    if new_species.is_empty() {
        return Err(InheritanceError::NoNewSpecies);
    }
    let m = list.reactions.len();
    let p = new_species.len();
    let mut a = IntMatrix::zeros(n, m);
    let mut a_prime = IntMatrix::zeros(n, m);
    let mut b = IntMatrix::zeros(p, m);
    let mut b_prime = IntMatrix::zeros(p, m);
    for (j, r) in list.reactions.iter().enumerate() {
        for i in 0..n {
            a.set(i, j, r.reactant.coefficient(i) as i64);
            a_prime.set(i, j, r.product.coefficient(i) as i64);
        }
        for i in 0..p {
            b.set(i, j, r.reactant.coefficient(n + i) as i64);
            b_prime.set(i, j, r.product.coefficient(n + i) as i64);
        }
    }
    let diff = |x: &IntMatrix, y: &IntMatrix| {
        let mut d = IntMatrix::zeros(x.nrows(), x.ncols());
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                d.set(i, j, x.get(i, j) - y.get(i, j));
            }
        }
        d
    };
    let alpha = diff(&a_prime, &a);
    let beta = diff(&b_prime, &b);
    let rank_beta = rank_and_image(&beta).rank;
    let deficient = || InheritanceError::RankDeficient {
        rank: rank_beta,
        m,
        beta: beta.clone(),
    };
    if rank_beta < m {
        return Err(deficient());
    }
    let chosen = independent_rows(&beta, 1e-10);
    if chosen.len() < m {
        return Err(deficient());
    }
    let beta_hat = int_to_f64_rows(&beta, &chosen);
    let max_row = beta_hat.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    if beta_hat.determinant().abs() < 1e-8 * max_row.powi(m as i32) {
        return Err(deficient());
    }
    let mut permutation = chosen.clone();
    permutation.extend((0..p).filter(|i| !chosen.contains(i)));

    Ok(Extension {
        base: base.clone(),
        new_species,
        reactions: list
            .reactions
            .iter()
            .map(|r| (r.reactant.clone(), r.product.clone()))
            .collect(),
        a,
        a_prime,
        b,
        b_prime,
        alpha,
        beta,
        permutation,
        rank_beta,
        had_rates: list.reactions.iter().any(|r| r.rates != RateSpec::Missing),
    })
}

impl Extension {
    pub fn base(&self) -> &Network {
        &self.base
    }

    /// Number of base species.
    pub fn n(&self) -> usize {
        self.base.num_species()
    }

    /// Number of added reactions.
    pub fn m(&self) -> usize {
        self.reactions.len()
    }

    /// Number of new species beyond the `m` pivot ones.
    pub fn k(&self) -> usize {
        self.new_species.len() - self.m()
    }

    pub fn new_species_appearance(&self) -> &[String] {
        &self.new_species
    }

    /// New species names in `π` order.
    pub fn new_species_ordered(&self) -> Vec<String> {
        self.permutation
            .iter()
            .map(|&i| self.new_species[i].clone())
            .collect()
    }

    /// Reorders a vector given in appearance order into `π` order.
    pub fn to_pi_order(&self, y: &[f64]) -> Result<Vec<f64>, InheritanceError> {
        if y.len() != self.new_species.len() {
            return Err(InheritanceError::DimensionMismatch {
                expected: self.new_species.len(),
                got: y.len(),
            });
        }
        Ok(self.permutation.iter().map(|&i| y[i]).collect())
    }

    fn pi_rows(&self, m: &IntMatrix) -> DMatrix<f64> {
        int_to_f64_rows(m, &self.permutation)
    }

    /// `β` with rows in `π` order.
    pub fn beta_pi(&self) -> DMatrix<f64> {
        self.pi_rows(&self.beta)
    }

    pub fn beta_hat(&self) -> DMatrix<f64> {
        self.beta_pi().rows(0, self.m()).into_owned()
    }

    pub fn beta_hat_hat(&self) -> DMatrix<f64> {
        self.beta_pi().rows(self.m(), self.k()).into_owned()
    }

    fn b_hat(&self) -> DMatrix<f64> {
        self.pi_rows(&self.b).rows(0, self.m()).into_owned()
    }

    fn b_hat_prime(&self) -> DMatrix<f64> {
        self.pi_rows(&self.b_prime).rows(0, self.m()).into_owned()
    }

    fn beta_hat_inv(&self) -> DMatrix<f64> {
        self.beta_hat()
            .try_inverse()
            .expect("pivot block is nonsingular by construction")
    }

    /// `αβ̂⁻¹`, n × m.
    pub fn alpha_beta_hat_inv(&self) -> DMatrix<f64> {
        self.alpha.to_f64() * self.beta_hat_inv()
    }

    /// `γ = -(αβ̂⁻¹)ᵗ`, m × n.
    pub fn gamma(&self) -> DMatrix<f64> {
        -self.alpha_beta_hat_inv().transpose()
    }

    /// `δ = -(β̂̂β̂⁻¹)ᵗ`, m × k.
    pub fn delta(&self) -> DMatrix<f64> {
        -(self.beta_hat_hat() * self.beta_hat_inv()).transpose()
    }

    /// Text of added reaction `j` with new species named.
    pub fn reaction_text(&self, j: usize) -> String {
        let mut names = self.base.species_names();
        names.extend(self.new_species.iter().cloned());
        let side = |c: &Complex| {
            if c.is_zero() {
                return "0".to_string();
            }
            c.terms()
                .iter()
                .map(|&(i, k)| {
                    if k == 1 {
                        names[i].clone()
                    } else {
                        format!("{k} {}", names[i])
                    }
                })
                .collect::<Vec<_>>()
                .join(" + ")
        };
        let (r, p) = &self.reactions[j];
        format!("{} <-> {}", side(r), side(p))
    }
}

/// Rate constants for the added reactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    pub epsilon: f64,
    pub eta: f64,
    /// Column sums of `b̂`.
    pub sigma_forward: Vec<u32>,
    /// Column sums of `b̂′`.
    pub sigma_backward: Vec<u32>,
    pub k_forward: Vec<f64>,
    pub k_backward: Vec<f64>,
}

fn symbolic(sigma: u32) -> String {
    match sigma {
        0 => "eps^-1".to_string(),
        s => format!("eps^-1 * eta^-{s}"),
    }
}

impl RateSchedule {
    pub fn symbolic_forward(&self, i: usize) -> String {
        symbolic(self.sigma_forward[i])
    }

    pub fn symbolic_backward(&self, i: usize) -> String {
        symbolic(self.sigma_backward[i])
    }
}

fn check_parameter(name: &'static str, value: f64) -> Result<(), InheritanceError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(InheritanceError::NonPositiveParameter { name, value })
    }
}

pub fn synthesize_rates(
    ext: &Extension,
    epsilon: f64,
    eta: f64,
) -> Result<RateSchedule, InheritanceError> {
    check_parameter("epsilon", epsilon)?;
    check_parameter("eta", eta)?;
    let col_sums =
        |m: DMatrix<f64>| -> Vec<u32> { m.column_iter().map(|c| c.sum().round() as u32).collect() };
    let sigma_forward = col_sums(ext.b_hat());
    let sigma_backward = col_sums(ext.b_hat_prime());
    let k = |s: &u32| signed_power(epsilon, -1) * signed_power(eta, -(*s as i32));
    Ok(RateSchedule {
        epsilon,
        eta,
        k_forward: sigma_forward.iter().map(k).collect(),
        k_backward: sigma_backward.iter().map(k).collect(),
        sigma_forward,
        sigma_backward,
    })
}

/// The enlarged network: base species, then new species in `π` order; base
/// reactions, then the added ones with the schedule's constants.
pub fn extended_network(ext: &Extension, sched: &RateSchedule) -> Network {
    let n = ext.n();
    let mut position = vec![0; ext.new_species.len()];
    for (p, &i) in ext.permutation.iter().enumerate() {
        position[i] = p;
    }
    let remap = |c: &Complex| {
        Complex::from_terms(c.terms().iter().map(|&(i, k)| {
            let j = if i < n { i } else { n + position[i - n] };
            (j, k)
        }))
        .expect("remapping preserves distinct indices")
    };
    let mut species = ext.base.species_names();
    species.extend(ext.new_species_ordered());
    let mut reactions: Vec<Reaction> = ext.base.reactions().to_vec();
    for (j, (r, p)) in ext.reactions.iter().enumerate() {
        reactions.push(Reaction::reversible(
            remap(r),
            remap(p),
            sched.k_forward[j],
            sched.k_backward[j],
        ));
    }
    Network::new(species, reactions).expect("extension of a valid network is valid")
}

/// `x^E` for a real exponent matrix `E` (rows index the result).
fn real_monomial(x: &[f64], e: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(e.nrows(), |i, _| {
        (0..e.ncols())
            .filter(|&j| e[(i, j)] != 0.0)
            .map(|j| x[j].powf(e[(i, j)]))
            .product()
    })
}

/// Integer monomial `x^{Eᵗ}` for `E` with one column per result entry.
fn int_monomial_cols(x: &[f64], e: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(e.ncols(), |j, _| {
        (0..e.nrows())
            .filter(|&i| e[(i, j)] != 0.0)
            .map(|i| x[i].powi(e[(i, j)] as i32))
            .product()
    })
}

/// `f(x, y, η)` for the added reactions, with `y` in `π` order:
/// `η^{-σ_f} x^{aᵗ} y^{bᵗ} - η^{-σ_b} x^{a′ᵗ} y^{b′ᵗ}`.
pub fn added_rate_function(
    ext: &Extension,
    x: &[f64],
    y: &[f64],
    eta: f64,
) -> Result<DVector<f64>, InheritanceError> {
    for (v, expected) in [(x.len(), ext.n()), (y.len(), ext.new_species.len())] {
        if v != expected {
            return Err(InheritanceError::DimensionMismatch { expected, got: v });
        }
    }
    let sched = synthesize_rates(ext, 1.0, eta)?;
    let b = ext.pi_rows(&ext.b);
    let bp = ext.pi_rows(&ext.b_prime);
    let fwd = int_monomial_cols(x, &ext.a.to_f64()).component_mul(&int_monomial_cols(y, &b));
    let bwd = int_monomial_cols(x, &ext.a_prime.to_f64()).component_mul(&int_monomial_cols(y, &bp));
    Ok(DVector::from_fn(ext.m(), |i, _| {
        sched.k_forward[i] * fwd[i] - sched.k_backward[i] * bwd[i]
    }))
}

/// A point `ŷ = θ(z, η)` on the slow manifold with the recovered base
/// coordinates and residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowPoint {
    pub y_hat: DVector<f64>,
    /// `x = z + αβ̂⁻¹ŷ`.
    pub x: DVector<f64>,
    /// `ŷ̂ = c - δᵗŷ`.
    pub y_hat_hat: DVector<f64>,
    pub g_residual: f64,
    /// Largest `|fᵢ|` relative to the size of its forward term.
    pub f_residual: f64,
    pub iterations: usize,
}

/// Solves `ŷ = η (z + αβ̂⁻¹ŷ)^γ ∘ (1 - δᵗŷ)^δ` by Newton from `η z^γ`.
pub fn slow_manifold_point(
    ext: &Extension,
    z: &[f64],
    eta: f64,
) -> Result<SlowPoint, InheritanceError> {
    slow_manifold_point_with(ext, z, eta, &vec![1.0; ext.k()])
}

/// As [`slow_manifold_point`] with the conserved combination `δᵗŷ + ŷ̂`
/// fixed at `conserved` instead of `1`.
pub fn slow_manifold_point_with(
    ext: &Extension,
    z: &[f64],
    eta: f64,
    conserved: &[f64],
) -> Result<SlowPoint, InheritanceError> {
    check_parameter("eta", eta)?;
    let (n, m, k) = (ext.n(), ext.m(), ext.k());
    for (v, expected) in [(z.len(), n), (conserved.len(), k)] {
        if v != expected {
            return Err(InheritanceError::DimensionMismatch { expected, got: v });
        }
    }
    if z.iter().chain(conserved).any(|&v| !(v > 0.0)) {
        return Err(InheritanceError::PositivityLost);
    }
    let p = ext.alpha_beta_hat_inv();
    let gamma = ext.gamma();
    let delta = ext.delta();
    let zv = DVector::from_column_slice(z);
    let cv = DVector::from_column_slice(conserved);

    let parts = |y: &DVector<f64>| {
        let x = &zv + &p * y;
        let u = &cv - delta.transpose() * y;
        (x, u)
    };
    let w_of = |x: &DVector<f64>, u: &DVector<f64>| {
        real_monomial(x.as_slice(), &gamma).component_mul(&real_monomial(u.as_slice(), &delta))
            * eta
    };

    let mut y = w_of(&zv, &cv);
    let mut iterations = 0;
    loop {
        let (x, u) = parts(&y);
        if x.iter()
            .chain(u.iter())
            .chain(y.iter())
            .any(|&v| !(v > 0.0))
        {
            return Err(InheritanceError::PositivityLost);
        }
        let w = w_of(&x, &u);
        let g = &y - &w;
        if iterations >= 60 {
            return Err(InheritanceError::NewtonFailed { residual: g.amax() });
        }
        let inv_x = x.map(|v| 1.0 / v);
        let inv_u = u.map(|v| 1.0 / v);
        let dw = DMatrix::from_diagonal(&w)
            * (&gamma * DMatrix::from_diagonal(&inv_x) * &p
                - &delta * DMatrix::from_diagonal(&inv_u) * delta.transpose());
        let jac = DMatrix::identity(m, m) - dw;
        let step = jac
            .lu()
            .solve(&(-&g))
            .ok_or(InheritanceError::NewtonFailed { residual: g.amax() })?;
        y += &step;
        iterations += 1;
        if step.amax() <= 1e-12 * y.amax().max(1e-300) {
            break;
        }
    }
    let (x, u) = parts(&y);
    if x.iter()
        .chain(u.iter())
        .chain(y.iter())
        .any(|&v| !(v > 0.0))
    {
        return Err(InheritanceError::PositivityLost);
    }
    let g_residual = (&y - w_of(&x, &u)).amax() / y.amax().max(f64::MIN_POSITIVE);
    let mut full_y = y.as_slice().to_vec();
    full_y.extend(u.iter());
    let f = added_rate_function(ext, x.as_slice(), &full_y, eta)?;
    let sched = synthesize_rates(ext, 1.0, eta)?;
    let b = ext.pi_rows(&ext.b);
    let fwd = int_monomial_cols(x.as_slice(), &ext.a.to_f64())
        .component_mul(&int_monomial_cols(&full_y, &b));
    let f_residual = (0..m)
        .map(|i| f[i].abs() / (sched.k_forward[i] * fwd[i]).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(SlowPoint {
        y_hat: y,
        x,
        y_hat_hat: u,
        g_residual,
        f_residual,
        iterations,
    })
}

/// `W̄(z, 0) = -β̂ diag(T) β̂ᵗ diag(1/z^γ)` with `T = z^{aᵗ} ∘ z^{b̂ᵗγ}`, and
/// its eigenvalues.
pub fn reduced_jacobian_limit(
    ext: &Extension,
    z: &[f64],
) -> Result<(DMatrix<f64>, Vec<C64<f64>>), InheritanceError> {
    if z.len() != ext.n() {
        return Err(InheritanceError::DimensionMismatch {
            expected: ext.n(),
            got: z.len(),
        });
    }
    if z.iter().any(|&v| !(v > 0.0)) {
        return Err(InheritanceError::PositivityLost);
    }
    let gamma = ext.gamma();
    let beta_hat = ext.beta_hat();
    let t = int_monomial_cols(z, &ext.a.to_f64())
        .component_mul(&real_monomial(z, &(ext.b_hat().transpose() * &gamma)));
    let z_gamma = real_monomial(z, &gamma);
    let w = -(&beta_hat * DMatrix::from_diagonal(&t) * beta_hat.transpose())
        * DMatrix::from_diagonal(&z_gamma.map(|v| 1.0 / v));
    let eig = eigenvalues(&w);
    Ok((w, eig))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZyCoordinates {
    pub z: DVector<f64>,
    pub y_hat: DVector<f64>,
    /// `δᵗŷ + ŷ̂`, constant along trajectories of the enlarged network.
    pub conserved: DVector<f64>,
}

/// `z = x - αβ̂⁻¹ŷ` and the conserved combination, for `y` in `π` order.
pub fn to_zy_coordinates(
    ext: &Extension,
    x: &[f64],
    y: &[f64],
) -> Result<ZyCoordinates, InheritanceError> {
    let (n, m) = (ext.n(), ext.m());
    for (v, expected) in [(x.len(), n), (y.len(), ext.new_species.len())] {
        if v != expected {
            return Err(InheritanceError::DimensionMismatch { expected, got: v });
        }
    }
    let y_hat = DVector::from_column_slice(&y[..m]);
    let y_hh = DVector::from_column_slice(&y[m..]);
    let z = DVector::from_column_slice(x) - ext.alpha_beta_hat_inv() * &y_hat;
    let conserved = ext.delta().transpose() * &y_hat + y_hh;
    Ok(ZyCoordinates {
        z,
        y_hat,
        conserved,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub orbit: OrbitSearchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCheck {
    /// Rows in appearance order of the new species.
    pub beta: Vec<Vec<i64>>,
    pub beta_species: Vec<String>,
    pub rank: usize,
    pub m: usize,
    pub k: usize,
    pub passed: bool,
    pub rank_base: usize,
    pub rank_extended: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddedRate {
    pub reaction: String,
    pub k_forward: f64,
    pub k_backward: f64,
    pub symbolic_forward: String,
    pub symbolic_backward: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum OrbitOutcome {
    Found(OrbitReport),
    Failed { reason: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesRange {
    pub species: String,
    pub min: f64,
    pub max: f64,
    pub peak_to_peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservedQuantity {
    /// Coefficient per species, scaled to small integers where possible.
    pub coefficients: Vec<(String, f64)>,
    pub initial: f64,
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InheritanceReport {
    pub schema: u32,
    pub epsilon: f64,
    pub eta: f64,
    pub rank_check: RankCheck,
    /// New species in the order used by the enlarged network.
    pub permutation: Vec<String>,
    pub rates: Vec<AddedRate>,
    pub orbit: OrbitOutcome,
    pub hausdorff_old_species: Option<f64>,
    pub curve_hausdorff_old_species: Option<f64>,
    pub new_species_ranges: Vec<SpeciesRange>,
    /// Largest change of any conservation law of the enlarged network over
    /// the verification run.
    pub conservation_drift: f64,
    pub conserved_quantities: Vec<ConservedQuantity>,
    pub stable: bool,
}

/// Reason tag for an orbit failure, stable across versions.
pub fn failure_reason(e: &OrbitError) -> &'static str {
    match e {
        OrbitError::Integration(OdeError::StepSizeUnderflow { .. }) => "stiff",
        OrbitError::Integration(_) => "integration-failed",
        OrbitError::InvalidInitialState { .. } => "invalid-initial-state",
        OrbitError::ConvergedToEquilibrium { .. } => "converged-to-equilibrium",
        OrbitError::NoReturn { .. } => "no-return",
        OrbitError::MaxReturnsExceeded { .. } => "max-returns-exceeded",
        OrbitError::NoTrivialMultiplier { .. } => "no-trivial-multiplier",
        _ => "orbit-error",
    }
}

/// Scales a row so its entries are small integers when that is possible.
fn integerize(row: &[f64]) -> Vec<f64> {
    let smallest = row
        .iter()
        .map(|v| v.abs())
        .filter(|&v| v > 1e-9)
        .fold(f64::INFINITY, f64::min);
    if !smallest.is_finite() {
        return row.to_vec();
    }
    let sign = row
        .iter()
        .find(|v| v.abs() > 1e-9)
        .map_or(1.0, |v| v.signum());
    for mult in 1..=12 {
        let scaled: Vec<f64> = row
            .iter()
            .map(|v| v / smallest * mult as f64 * sign)
            .collect();
        if scaled.iter().all(|v| (v - v.round()).abs() < 1e-8) {
            return scaled.iter().map(|v| v.round()).collect();
        }
    }
    row.to_vec()
}

/// Simulates and searches for an orbit of the enlarged network started at
/// the base orbit's anchor with new species at `y0` (appearance order).
pub fn verify_inheritance(
    base_orbit: &PeriodicOrbit,
    ext: &Extension,
    epsilon: f64,
    eta: f64,
    y0: &[f64],
    cfg: &VerifyConfig,
) -> Result<InheritanceReport, InheritanceError> {
    let sched = synthesize_rates(ext, epsilon, eta)?;
    let y0_pi = ext.to_pi_order(y0)?;
    if let Some(&v) = y0.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(InheritanceError::NonPositiveParameter {
            name: "y0",
            value: v,
        });
    }
    let net = extended_network(ext, &sched);
    let n = ext.n();
    let mut x0 = base_orbit.anchor.clone();
    x0.extend(&y0_pi);

    let rank_check = RankCheck {
        beta: (0..ext.beta.nrows())
            .map(|i| ext.beta.row(i).to_vec())
            .collect(),
        beta_species: ext.new_species.clone(),
        rank: ext.rank_beta,
        m: ext.m(),
        k: ext.k(),
        passed: true,
        rank_base: rank_and_image(ext.base.stoichiometric_matrix()).rank,
        rank_extended: rank_and_image(net.stoichiometric_matrix()).rank,
    };
    let rates = (0..ext.m())
        .map(|i| AddedRate {
            reaction: ext.reaction_text(i),
            k_forward: sched.k_forward[i],
            k_backward: sched.k_backward[i],
            symbolic_forward: sched.symbolic_forward(i),
            symbolic_backward: sched.symbolic_backward(i),
        })
        .collect();

    let names = net.species_names();
    let found = find_periodic_orbit(&net, &x0, &cfg.orbit);
    let base_idx: Vec<usize> = (0..n).collect();
    let (orbit, hausdorff, curve, ranges, stable, run_time) = match &found {
        Ok(o) => {
            let h = hausdorff_distance(&o.samples, &base_orbit.samples, Some(&base_idx)).ok();
            let c = curve_hausdorff_distance(&o.samples, &base_orbit.samples, Some(&base_idx)).ok();
            let ranges = (n..names.len())
                .map(|i| {
                    let (lo, hi) = o
                        .samples
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                            (lo.min(s[i]), hi.max(s[i]))
                        });
                    SpeciesRange {
                        species: names[i].clone(),
                        min: lo,
                        max: hi,
                        peak_to_peak: hi - lo,
                    }
                })
                .collect();
            let stable = o.classification() == crate::orbit::Classification::NondegenerateStable;
            let report = o.report(&names, None);
            (
                OrbitOutcome::Found(report),
                h,
                c,
                ranges,
                stable,
                cfg.orbit.burn_in + 2.0 * o.period,
            )
        }
        Err(e) => (
            OrbitOutcome::Failed {
                reason: failure_reason(e).to_string(),
                message: e.to_string(),
            },
            None,
            None,
            Vec::new(),
            false,
            cfg.orbit.burn_in,
        ),
    };

    // Conservation check on a plain run from the same start.
    let laws = conservation_laws(net.stoichiometric_matrix());
    let (drift, conserved_quantities) = match integrate(&net, &x0, run_time, &cfg.orbit.integrator)
    {
        Ok(traj) => {
            let mut quantities = Vec::new();
            let mut worst: f64 = 0.0;
            for row in laws.l.row_iter() {
                let coeffs = integerize(row.transpose().as_slice());
                let value = |x: &[f64]| coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
                let start = value(traj.first_state());
                let d = traj
                    .states()
                    .map(|x| (value(x) - start).abs())
                    .fold(0.0, f64::max);
                let unit = d / coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
                worst = worst.max(unit);
                quantities.push(ConservedQuantity {
                    coefficients: names
                        .iter()
                        .zip(&coeffs)
                        .filter(|(_, c)| c.abs() > 1e-12)
                        .map(|(s, &c)| (s.clone(), c))
                        .collect(),
                    initial: value(&x0),
                    drift: d,
                });
            }
            (worst, quantities)
        }
        Err(_) => (f64::NAN, Vec::new()),
    };

    Ok(InheritanceReport {
        schema: 1,
        epsilon,
        eta,
        rank_check,
        permutation: ext.new_species_ordered(),
        rates,
        orbit,
        hausdorff_old_species: hausdorff,
        curve_hausdorff_old_species: curve,
        new_species_ranges: ranges,
        conservation_drift: drift,
        conserved_quantities,
        stable,
    })
}

/// Formats rate constants for display next to their symbolic form.
pub fn describe_schedule(ext: &Extension, sched: &RateSchedule) -> Vec<String> {
    (0..ext.m())
        .map(|i| {
            format!(
                "{} ; kf = {} ({}), kr = {} ({})",
                ext.reaction_text(i),
                format_number(sched.k_forward[i]),
                sched.symbolic_forward(i),
                format_number(sched.k_backward[i]),
                sched.symbolic_backward(i)
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::rate_vector;
    use crate::model::parse_network;
    use crate::odeint::IntegratorConfig;
    use crate::testing::{R1_TEXT, R2_ADDITIONS, R2_TEXT};
    use proptest::prelude::*;

    fn r1() -> Network {
        parse_network(R1_TEXT).unwrap()
    }

    fn r2_ext() -> Extension {
        build_extension(&r1(), R2_ADDITIONS).unwrap()
    }

    #[test]
    fn r2_matrices() {
        let ext = r2_ext();
        assert_eq!(ext.new_species_appearance(), ["U", "V", "W"]);
        assert_eq!(
            ext.beta,
            IntMatrix::from_rows(&[vec![1, -1], vec![1, 2], vec![0, 1]])
        );
        assert_eq!(ext.rank_beta, 2);
        assert_eq!(ext.permutation, vec![0, 1, 2]);
        assert!((ext.beta_hat().determinant() - 3.0).abs() < 1e-12);
        assert_eq!(
            ext.alpha,
            IntMatrix::from_rows(&[vec![0, -1], vec![-1, 0], vec![0, 0]])
        );
        assert_eq!(
            ext.a_prime,
            IntMatrix::from_rows(&[vec![0, 0], vec![0, 0], vec![0, 0]])
        );
        assert_eq!(
            ext.b,
            IntMatrix::from_rows(&[vec![0, 1], vec![0, 0], vec![0, 0]])
        );
        assert_eq!(
            ext.b_prime,
            IntMatrix::from_rows(&[vec![1, 0], vec![1, 2], vec![0, 1]])
        );
        assert!(!ext.had_rates);
    }

    #[test]
    fn r2_gamma_delta() {
        let ext = r2_ext();
        let gamma = DMatrix::from_row_slice(
            2,
            3,
            &[-1.0 / 3.0, 2.0 / 3.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 0.0],
        );
        assert!((ext.gamma() - gamma).amax() < 1e-15);
        let delta = DMatrix::from_column_slice(2, 1, &[1.0 / 3.0, -1.0 / 3.0]);
        assert!((ext.delta() - delta).amax() < 1e-15);
    }

    #[test]
    fn rank_gate() {
        let err = build_extension(&r1(), "X + N <-> N").unwrap_err();
        assert!(matches!(
            err,
            InheritanceError::RankDeficient { rank: 0, m: 1, .. }
        ));
        assert!(err
            .to_string()
            .contains("rank equal to its number of columns"));
        let ok = build_extension(&r1(), "X + N <-> 2 N").unwrap();
        assert_eq!(ok.beta, IntMatrix::from_rows(&[vec![1]]));
        assert!(matches!(
            build_extension(&r1(), "X -> N"),
            Err(InheritanceError::NotReversible { line: 1 })
        ));
        assert!(matches!(
            build_extension(&r1(), "X <-> Y"),
            Err(InheritanceError::NoNewSpecies)
        ));
        assert!(matches!(
            build_extension(&r1(), "# nothing"),
            Err(InheritanceError::Empty)
        ));
        assert!(matches!(
            build_extension(&r1(), "X <-> N\nY <-> N"),
            Err(InheritanceError::RankDeficient { rank: 1, m: 2, .. })
        ));
    }

    #[test]
    fn pivot_rows_skip_dependent_ones() {
        // the first new species has a zero row, so the pivot block starts
        // with the second
        let ext = build_extension(&r1(), "X + A <-> A + B").unwrap();
        assert_eq!(ext.new_species_appearance(), ["A", "B"]);
        assert_eq!(ext.permutation, vec![1, 0]);
        assert_eq!(ext.k(), 1);
        assert!(ext.delta().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn r2_schedule() {
        let ext = r2_ext();
        let s = synthesize_rates(&ext, 0.2, 0.2).unwrap();
        assert_eq!(s.sigma_forward, vec![0, 1]);
        assert_eq!(s.sigma_backward, vec![2, 2]);
        assert_eq!(s.k_forward, vec![5.0, 25.0]);
        assert_eq!(s.k_backward, vec![125.0, 125.0]);
        assert_eq!(s.symbolic_forward(0), "eps^-1");
        assert_eq!(s.symbolic_backward(0), "eps^-1 * eta^-2");
        assert_eq!(s.symbolic_forward(1), "eps^-1 * eta^-1");
        let flat = synthesize_rates(&ext, 0.25, 1.0).unwrap();
        assert!(flat
            .k_forward
            .iter()
            .chain(&flat.k_backward)
            .all(|&k| k == 4.0));
        assert!(synthesize_rates(&ext, 0.0, 0.2).is_err());
        assert!(synthesize_rates(&ext, 0.2, -1.0).is_err());
    }

    #[test]
    fn extended_network_is_r2() {
        let ext = r2_ext();
        let net = extended_network(&ext, &synthesize_rates(&ext, 0.2, 0.2).unwrap());
        let reference = parse_network(R2_TEXT).unwrap();
        assert_eq!(net, reference);
        assert_eq!(rank_and_image(net.stoichiometric_matrix()).rank, 5);
    }

    #[test]
    fn block_structure() {
        let ext = build_extension(&r1(), "X + A <-> A + B\nB + Z <-> 2 C").unwrap();
        let net = extended_network(&ext, &synthesize_rates(&ext, 0.5, 0.3).unwrap());
        let g = net.stoichiometric_matrix();
        let base = ext.base().stoichiometric_matrix();
        let (n, r0, m) = (ext.n(), base.ncols(), ext.m());
        let beta = ext.beta_pi();
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let expected = match (i < n, j < r0) {
                    (true, true) => base.get(i, j),
                    (true, false) => ext.alpha.get(i, j - r0),
                    (false, true) => 0,
                    (false, false) => beta[(i - n, j - r0)] as i64,
                };
                assert_eq!(g.get(i, j), expected, "({i},{j})");
            }
        }
        assert_eq!(rank_and_image(g).rank, rank_and_image(base).rank + m);
    }

    #[test]
    fn reduced_jacobian_at_ones() {
        let ext = r2_ext();
        let (w, eig) = reduced_jacobian_limit(&ext, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(w, DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -5.0]));
        for l in eig {
            assert!(l.re < 0.0 && l.im.abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_reduced_jacobian() {
        let ext = build_extension(
            &parse_network("0 <-> X ; kf = 1, kr = 1").unwrap(),
            "0 <-> N",
        )
        .unwrap();
        let (w, _) = reduced_jacobian_limit(&ext, &[2.5]).unwrap();
        assert_eq!(w[(0, 0)], -1.0);
    }

    #[test]
    fn zy_coordinates() {
        let ext = r2_ext();
        let c = to_zy_coordinates(&ext, &[0.3, 0.7, 2.0], &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(c.z.as_slice(), &[0.3, 0.7, 2.0]);
        assert!((c.conserved[0] - 1.0).abs() < 1e-15);
        let c = to_zy_coordinates(&ext, &[0.3, 0.7, 2.0], &[0.3, 0.6, 1.0]).unwrap();
        assert!((c.conserved[0] - (0.1 - 0.2 + 1.0)).abs() < 1e-15);
        assert!(to_zy_coordinates(&ext, &[1.0], &[0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn conserved_combination_along_trajectory() {
        let ext = r2_ext();
        let net = extended_network(&ext, &synthesize_rates(&ext, 0.2, 0.2).unwrap());
        let cfg = IntegratorConfig::default();
        let traj = integrate(&net, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0], 100.0, &cfg).unwrap();
        let value = |s: &[f64]| to_zy_coordinates(&ext, &s[..3], &s[3..]).unwrap().conserved[0];
        let c0 = value(traj.first_state());
        let drift = traj
            .states()
            .map(|s| (value(s) - c0).abs())
            .fold(0.0, f64::max);
        assert!(drift < 100.0 * cfg.rtol, "{drift:e}");
    }

    #[test]
    fn slow_manifold_residuals() {
        let ext = r2_ext();
        let z = [0.3, 0.9, 2.0];
        let p = slow_manifold_point(&ext, &z, 0.05).unwrap();
        assert!(p.y_hat.iter().all(|&v| v > 0.0));
        assert!(p.g_residual < 1e-8 && p.f_residual < 1e-8, "{p:?}");
        let z_gamma = real_monomial(&z, &ext.gamma());
        assert!((&p.y_hat - &z_gamma * 0.05).amax() < 0.05 * 0.05 * 10.0);
    }

    #[test]
    fn slow_manifold_first_order() {
        let ext = r2_ext();
        let z = [0.3, 0.9, 2.0];
        let z_gamma = real_monomial(&z, &ext.gamma());
        let dev = |eta: f64| {
            (slow_manifold_point(&ext, &z, eta).unwrap().y_hat - &z_gamma * eta).norm() / eta
        };
        let ratio = dev(1e-3) / dev(1e-4);
        assert!((ratio - 10.0).abs() < 1.0, "{ratio}");
    }

    #[test]
    fn slow_manifold_without_extra_species() {
        let ext = build_extension(&r1(), "X + N <-> 2 N").unwrap();
        assert_eq!(ext.k(), 0);
        let p = slow_manifold_point(&ext, &[0.5, 1.0, 1.0], 0.1).unwrap();
        assert!(p.f_residual < 1e-8);
        assert_eq!(p.y_hat_hat.len(), 0);
    }

    #[test]
    fn failure_reasons_are_tagged() {
        assert_eq!(
            failure_reason(&OrbitError::ConvergedToEquilibrium { field_norm: 0.0 }),
            "converged-to-equilibrium"
        );
        assert_eq!(
            failure_reason(&OrbitError::Integration(OdeError::StepSizeUnderflow {
                t: 0.0,
                h: 0.0
            })),
            "stiff"
        );
    }

    #[test]
    fn integer_scaling() {
        let s = 11f64.sqrt();
        assert_eq!(
            integerize(&[0.0, 1.0 / s, -1.0 / s, 3.0 / s]),
            vec![0.0, 1.0, -1.0, 3.0]
        );
        assert_eq!(
            integerize(&[0.0, -1.0 / s, 1.0 / s, -3.0 / s]),
            vec![0.0, 1.0, -1.0, 3.0]
        );
        assert_eq!(integerize(&[0.5, 0.75]), vec![2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn added_rates_match_scaled_function(
            x in prop::collection::vec(0.05f64..3.0, 3),
            y in prop::collection::vec(0.01f64..2.0, 3),
            eps in 0.05f64..1.0,
            eta in 0.05f64..1.0,
        ) {
            let ext = r2_ext();
            let net = extended_network(&ext, &synthesize_rates(&ext, eps, eta).unwrap());
            let mut state = x.clone();
            state.extend(&y);
            let v = rate_vector(&net, &state).unwrap();
            let f = added_rate_function(&ext, &x, &y, eta).unwrap();
            let sched = synthesize_rates(&ext, 1.0, eta).unwrap();
            for i in 0..2 {
                let got = v[5 + i];
                let want = f[i] / eps;
                let scale = (sched.k_forward[i].max(sched.k_backward[i]) / eps) * 100.0;
                prop_assert!((got - want).abs() <= 1e-12 * scale.max(want.abs()));
            }
        }

        #[test]
        fn reduced_jacobian_is_hurwitz(z in prop::collection::vec(0.01f64..10.0, 3)) {
            let ext = r2_ext();
            let (_, eig) = reduced_jacobian_limit(&ext, &z).unwrap();
            let rho = eig.iter().map(|l| l.norm()).fold(0.0, f64::max);
            for l in eig {
                prop_assert!(l.re < 0.0);
                prop_assert!(l.im.abs() < 1e-9 * rho);
            }
        }

        #[test]
        fn slow_manifold_is_positive(z in prop::collection::vec(0.1f64..5.0, 3), eta in 1e-4f64..0.02) {
            let ext = r2_ext();
            let p = slow_manifold_point(&ext, &z, eta).unwrap();
            prop_assert!(p.y_hat.iter().all(|&v| v > 0.0));
            prop_assert!(p.g_residual <= 1e-8);
            prop_assert!(p.f_residual <= 1e-8);
        }
    }
}
