//! Periodic-orbit search by shooting on a section normal to the flow,
//! Floquet multipliers relative to a stoichiometric subspace, and Hausdorff
//! distances between sampled orbits.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Network;
use crate::odeint::{
    find_crossings, integrate, integrate_with_variational, Direction, IntegratorConfig, OdeError,
    Trajectory, VectorField,
};
use crate::stoich::{rank_and_image, ImageBasis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSearchConfig {
    /// Transient integrated before the section is anchored.
    pub burn_in: f64,
    /// Cap on Newton and fixed-point return iterations.
    pub max_returns: usize,
    /// Relative residual at which Newton stops early.
    pub newton_tol: f64,
    /// Band around 1 that identifies the trivial multiplier.
    pub trivial_tol: f64,
    /// Band around the unit circle in which a multiplier is undecided.
    pub unit_circle_tol: f64,
    /// Closing error accepted for the orbit, relative to `‖anchor‖`.
    pub return_tol_rel: f64,
    /// Length of the probe run used to locate the first return.
    pub probe_time: f64,
    /// Points sampled at equal time spacing over one period.
    pub samples: usize,
    /// `‖F(x)‖ / max(1, ‖x‖)` below which the state counts as an equilibrium.
    pub equilibrium_tol: f64,
    pub integrator: IntegratorConfig,
}

impl Default for OrbitSearchConfig {
    fn default() -> Self {
        Self {
            burn_in: 150.0,
            max_returns: 50,
            newton_tol: 1e-10,
            trivial_tol: 1e-4,
            unit_circle_tol: 1e-3,
            return_tol_rel: 1e-7,
            probe_time: 100.0,
            samples: 512,
            equilibrium_tol: 1e-8,
            integrator: IntegratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrbitError {
    #[error("integration failed: {0}")]
    Integration(#[from] OdeError),
    #[error("initial state must be finite and nonnegative (component {index} is {value})")]
    InvalidInitialState { index: usize, value: f64 },
    #[error("trajectory settles at an equilibrium (|F| = {field_norm:e})")]
    ConvergedToEquilibrium { field_norm: f64 },
    #[error("trajectory does not return to the section within {probe_time} time units")]
    NoReturn { probe_time: f64 },
    #[error(
        "return map did not converge within {iterations} iterations (closing error {residual:e})"
    )]
    MaxReturnsExceeded { iterations: usize, residual: f64 },
    #[error("no multiplier within {tol:e} of 1 (closest at distance {closest:e}); monodromy is inaccurate")]
    NoTrivialMultiplier { tol: f64, closest: f64 },
    #[error("monodromy is {monodromy}x{monodromy} but basis has {basis} rows")]
    DimensionMismatch { monodromy: usize, basis: usize },
    #[error("transformation matrix is singular")]
    SingularTransform,
    #[error("point sets must be nonempty")]
    EmptySamples,
    #[error("projection index {index} out of range for dimension {dim}")]
    ProjectionOutOfRange { index: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    NondegenerateStable,
    NondegenerateUnstable,
    Degenerate,
    Undetermined,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NondegenerateStable => "nondegenerate-stable",
            Self::NondegenerateUnstable => "nondegenerate-unstable",
            Self::Degenerate => "degenerate",
            Self::Undetermined => "undetermined",
        }
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Multipliers of `BᵗMB` with the trivial one identified.
#[derive(Debug, Clone, PartialEq)]
pub struct FloquetSpectrum {
    pub multipliers: Vec<Complex<f64>>,
    pub trivial_index: usize,
    pub classification: Classification,
}

impl FloquetSpectrum {
    pub fn trivial(&self) -> Complex<f64> {
        self.multipliers[self.trivial_index]
    }

    pub fn nontrivial(&self) -> impl Iterator<Item = Complex<f64>> + '_ {
        self.multipliers
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.trivial_index)
            .map(|(_, &m)| m)
    }
}

#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub anchor: Vec<f64>,
    pub period: f64,
    /// `samples[i]` is the state at `anchor`-time `i T / samples.len()`.
    pub samples: Vec<Vec<f64>>,
    pub monodromy: DMatrix<f64>,
    pub spectrum: FloquetSpectrum,
    /// `‖Φ_T(anchor) - anchor‖` for the final orbit.
    pub closing_error: f64,
    pub iterations: usize,
}

impl PeriodicOrbit {
    pub fn multipliers_relative(&self) -> &[Complex<f64>] {
        &self.spectrum.multipliers
    }

    pub fn classification(&self) -> Classification {
        self.spectrum.classification
    }

    pub fn report(&self, species: &[String], samples_csv_path: Option<String>) -> OrbitReport {
        OrbitReport {
            schema: 1,
            species: species.to_vec(),
            anchor: self.anchor.clone(),
            period: self.period,
            multipliers_relative: self
                .spectrum
                .multipliers
                .iter()
                .map(|m| ComplexJson { re: m.re, im: m.im })
                .collect(),
            trivial_index: self.spectrum.trivial_index,
            classification: self.spectrum.classification,
            closing_error: self.closing_error,
            samples_csv_path,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexJson {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitReport {
    pub schema: u32,
    pub species: Vec<String>,
    pub anchor: Vec<f64>,
    pub period: f64,
    pub multipliers_relative: Vec<ComplexJson>,
    pub trivial_index: usize,
    pub classification: Classification,
    pub closing_error: f64,
    pub samples_csv_path: Option<String>,
}

/// Searches for a periodic orbit of the mass-action system reachable from
/// `x0`, with multipliers taken relative to `im Γ`.
pub fn find_periodic_orbit(
    net: &Network,
    x0: &[f64],
    cfg: &OrbitSearchConfig,
) -> Result<PeriodicOrbit, OrbitError> {
    let basis = rank_and_image(net.stoichiometric_matrix());
    find_periodic_orbit_in(net, &basis, x0, cfg)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn eval(field: &dyn VectorField, x: &[f64]) -> Vec<f64> {
    let mut f = vec![0.0; x.len()];
    field.eval(x, &mut f);
    f
}

fn bounding_diameter(traj: &Trajectory) -> f64 {
    let n = traj.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for x in traj.states() {
        for i in 0..n {
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
        }
    }
    norm(&lo.iter().zip(&hi).map(|(a, b)| b - a).collect::<Vec<_>>())
}

/// State after the shooting step: the point, its period guess, and the
/// variational solution over that period.
struct Shot {
    x: Vec<f64>,
    period: f64,
    end: Vec<f64>,
    monodromy: DMatrix<f64>,
    residual: DVector<f64>,
}

impl Shot {
    fn residual_norm(&self) -> f64 {
        self.residual.norm()
    }
}

fn shoot(
    field: &dyn VectorField,
    basis: &ImageBasis,
    anchor: &[f64],
    normal: &[f64],
    x: Vec<f64>,
    period: f64,
    cfg: &OrbitSearchConfig,
) -> Result<Shot, OrbitError> {
    let (traj, path) = integrate_with_variational(field, &x, period, &cfg.integrator)?;
    let end = traj.last_state().to_vec();
    let diff = DVector::from_iterator(x.len(), end.iter().zip(&x).map(|(a, b)| a - b));
    let r = basis.rank;
    let mut residual = DVector::zeros(r + 1);
    residual.rows_mut(0, r).copy_from(&basis.coordinates(&diff));
    residual[r] = x
        .iter()
        .zip(anchor)
        .zip(normal)
        .map(|((a, b), n)| (a - b) * n)
        .sum();
    Ok(Shot {
        x,
        period,
        end,
        monodromy: path.last().clone(),
        residual,
    })
}

/// Searches for a periodic orbit of any vector field, with multipliers
/// taken relative to the span of `basis`.
pub fn find_periodic_orbit_in(
    field: &dyn VectorField,
    basis: &ImageBasis,
    x0: &[f64],
    cfg: &OrbitSearchConfig,
) -> Result<PeriodicOrbit, OrbitError> {
    if x0.len() != basis.dim() {
        return Err(OrbitError::DimensionMismatch {
            monodromy: x0.len(),
            basis: basis.dim(),
        });
    }
    let floor = field.positive_components();
    if let Some(index) = x0
        .iter()
        .enumerate()
        .position(|(i, v)| !v.is_finite() || (i < floor && *v < 0.0))
    {
        return Err(OrbitError::InvalidInitialState {
            index,
            value: x0[index],
        });
    }

    let settle = integrate(field, x0, cfg.burn_in, &cfg.integrator)?;
    let anchor = settle.last_state().to_vec();
    let scale = norm(&anchor).max(1.0);
    let f_anchor = eval(field, &anchor);
    let f_norm = norm(&f_anchor);
    if f_norm <= cfg.equilibrium_tol * scale {
        return Err(OrbitError::ConvergedToEquilibrium { field_norm: f_norm });
    }
    let normal: Vec<f64> = f_anchor.iter().map(|v| v / f_norm).collect();

    // First return to the section.
    let probe = integrate(field, &anchor, cfg.probe_time, &cfg.integrator)?;
    let reach = 0.25 * bounding_diameter(&probe);
    let returns: Vec<_> = find_crossings(&probe, &anchor, &normal, Direction::Rising)
        .into_iter()
        .filter(|c| {
            let d: Vec<f64> = c.state.iter().zip(&anchor).map(|(a, b)| a - b).collect();
            norm(&d) < reach
        })
        .collect();
    if returns.is_empty() {
        let f_end = norm(&eval(field, probe.last_state()));
        if f_end <= 1e-3 * f_norm || f_end <= cfg.equilibrium_tol * scale {
            return Err(OrbitError::ConvergedToEquilibrium { field_norm: f_end });
        }
        return Err(OrbitError::NoReturn {
            probe_time: cfg.probe_time,
        });
    }
    let mut gaps: Vec<f64> = returns
        .iter()
        .scan(0.0, |prev, c| {
            let g = c.time - *prev;
            *prev = c.time;
            Some(g)
        })
        .collect();
    gaps.sort_by(f64::total_cmp);
    let median = gaps[gaps.len() / 2];
    let first = returns
        .iter()
        .find(|c| c.time > 0.5 * median)
        .expect("the median gap itself exceeds half the median");

    let return_tol = cfg.return_tol_rel * norm(&anchor);
    let r = basis.rank;
    let mut shot = shoot(
        field,
        basis,
        &anchor,
        &normal,
        anchor.clone(),
        first.time,
        cfg,
    )?;
    let mut iterations = 0;
    loop {
        let res = shot.residual_norm();
        let closing = norm(
            &shot
                .end
                .iter()
                .zip(&shot.x)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        if res <= cfg.newton_tol * scale && closing <= return_tol {
            break;
        }
        if iterations >= cfg.max_returns {
            if closing <= return_tol {
                break;
            }
            return Err(OrbitError::MaxReturnsExceeded {
                iterations,
                residual: closing,
            });
        }
        iterations += 1;
        let f_x = eval(field, &shot.x);
        if norm(&f_x) <= cfg.equilibrium_tol * scale {
            return Err(OrbitError::ConvergedToEquilibrium {
                field_norm: norm(&f_x),
            });
        }

        // Newton system in (c, T) with x = anchor + B c.
        let bt = basis.b.transpose();
        let f_end = DVector::from_vec(eval(field, &shot.end));
        let ident = DMatrix::<f64>::identity(basis.dim(), basis.dim());
        let mut jac = DMatrix::zeros(r + 1, r + 1);
        jac.view_mut((0, 0), (r, r))
            .copy_from(&(&bt * (&shot.monodromy - ident) * &basis.b));
        jac.view_mut((0, r), (r, 1)).copy_from(&(&bt * f_end));
        let nb = DVector::from_column_slice(&normal).transpose() * &basis.b;
        jac.view_mut((r, 0), (1, r)).copy_from(&nb);
        let step = jac.lu().solve(&(-&shot.residual));

        let mut next = None;
        if let Some(step) = step {
            let dx = &basis.b * step.rows(0, r);
            let mut lambda = 1.0;
            for _ in 0..5 {
                let x: Vec<f64> = shot
                    .x
                    .iter()
                    .zip(dx.iter())
                    .map(|(a, d)| a + lambda * d)
                    .collect();
                let t = shot.period + lambda * step[r];
                let positive = x.iter().take(floor).all(|&v| v > 0.0);
                if positive && t > 0.0 {
                    if let Ok(trial) = shoot(field, basis, &anchor, &normal, x, t, cfg) {
                        if trial.residual_norm() < res {
                            next = Some(trial);
                            break;
                        }
                    }
                }
                lambda *= 0.5;
            }
        }
        match next {
            Some(trial) => shot = trial,
            None => {
                if closing <= return_tol {
                    break;
                }
                // Fixed-point fallback: follow the flow to the next return.
                let horizon = 1.5 * shot.period;
                let traj = integrate(field, &shot.x, horizon, &cfg.integrator)?;
                let next_return = find_crossings(&traj, &anchor, &normal, Direction::Rising)
                    .into_iter()
                    .find(|c| c.time > 0.5 * shot.period)
                    .ok_or(OrbitError::NoReturn {
                        probe_time: horizon,
                    })?;
                shot = shoot(
                    field,
                    basis,
                    &anchor,
                    &normal,
                    next_return.state,
                    next_return.time,
                    cfg,
                )?;
            }
        }
    }

    let closing_error = norm(
        &shot
            .end
            .iter()
            .zip(&shot.x)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    );
    let loop_traj = integrate(field, &shot.x, shot.period, &cfg.integrator)?;
    let samples = loop_traj.sample_uniform(shot.period, cfg.samples);
    let spectrum = relative_floquet(&shot.monodromy, basis, cfg)?;
    Ok(PeriodicOrbit {
        anchor: shot.x,
        period: shot.period,
        samples,
        monodromy: shot.monodromy,
        spectrum,
        closing_error,
        iterations,
    })
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Multipliers of the monodromy restricted to the span of `basis`, with
/// the trivial one removed and the rest classified against the unit circle.
pub fn relative_floquet(
    monodromy: &DMatrix<f64>,
    basis: &ImageBasis,
    cfg: &OrbitSearchConfig,
) -> Result<FloquetSpectrum, OrbitError> {
    let n = monodromy.nrows();
    if monodromy.ncols() != n || basis.dim() != n {
        return Err(OrbitError::DimensionMismatch {
            monodromy: n,
            basis: basis.dim(),
        });
    }
    let m_rel = basis.b.transpose() * monodromy * &basis.b;
    let multipliers = eigenvalues(&m_rel);
    let one = Complex::new(1.0, 0.0);
    let (trivial_index, closest) = multipliers
        .iter()
        .map(|m| (m - one).norm())
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, f64::INFINITY));
    if closest > cfg.trivial_tol {
        return Err(OrbitError::NoTrivialMultiplier {
            tol: cfg.trivial_tol,
            closest,
        });
    }
    let rest: Vec<f64> = multipliers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != trivial_index)
        .map(|(_, m)| m.norm())
        .collect();
    let classification = if rest.iter().any(|m| (m - 1.0).abs() <= cfg.trivial_tol) {
        Classification::Degenerate
    } else if rest.iter().any(|m| (m - 1.0).abs() <= cfg.unit_circle_tol) {
        Classification::Undetermined
    } else if rest.iter().all(|&m| m < 1.0) {
        Classification::NondegenerateStable
    } else {
        Classification::NondegenerateUnstable
    };
    Ok(FloquetSpectrum {
        multipliers,
        trivial_index,
        classification,
    })
}

/// Pairs each value in `a` with its nearest unused partner in `b` and
/// reports the largest pairing distance.
pub fn spectral_mismatch(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("lengths match");
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

/// Whether `A M A⁻¹` has the same spectrum as `M` to within `1e-7`.
pub fn floquet_invariance_check(
    monodromy: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> Result<bool, OrbitError> {
    let inv = a
        .clone()
        .try_inverse()
        .ok_or(OrbitError::SingularTransform)?;
    let conj = a * monodromy * inv;
    let mismatch = spectral_mismatch(&eigenvalues(monodromy), &eigenvalues(&conj));
    Ok(mismatch < 1e-7)
}

/// Symmetric discrete Hausdorff distance, optionally on a subset of
/// coordinates.
pub fn hausdorff_distance(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    projection: Option<&[usize]>,
) -> Result<f64, OrbitError> {
    if a.is_empty() || b.is_empty() {
        return Err(OrbitError::EmptySamples);
    }
    let dim = a[0].len().min(b[0].len());
    let all: Vec<usize> = (0..dim).collect();
    let idx = projection.unwrap_or(&all);
    if let Some(&index) = idx.iter().find(|&&i| i >= dim) {
        return Err(OrbitError::ProjectionOutOfRange { index, dim });
    }
    let dist2 = |p: &[f64], q: &[f64]| idx.iter().map(|&i| (p[i] - q[i]).powi(2)).sum::<f64>();
    let directed = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.iter()
            .map(|p| to.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)).sqrt())
}

fn projected(points: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| idx.iter().map(|&i| p[i]).collect())
        .collect()
}

fn point_segment_dist2(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for i in 0..p.len() {
        let d = b[i] - a[i];
        ab2 += d * d;
        ap_ab += (p[i] - a[i]) * d;
    }
    let s = if ab2 > 0.0 {
        (ap_ab / ab2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (0..p.len())
        .map(|i| (p[i] - a[i] - s * (b[i] - a[i])).powi(2))
        .sum()
}

/// Hausdorff distance between closed polygonal curves through the samples,
/// measured from each vertex to the nearest edge of the other curve. Less
/// sensitive to sampling density than [`hausdorff_distance`].
pub fn curve_hausdorff_distance(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    projection: Option<&[usize]>,
) -> Result<f64, OrbitError> {
    if a.is_empty() || b.is_empty() {
        return Err(OrbitError::EmptySamples);
    }
    let dim = a[0].len().min(b[0].len());
    let all: Vec<usize> = (0..dim).collect();
    let idx = projection.unwrap_or(&all);
    if let Some(&index) = idx.iter().find(|&&i| i >= dim) {
        return Err(OrbitError::ProjectionOutOfRange { index, dim });
    }
    let (pa, pb) = (projected(a, idx), projected(b, idx));
    let directed = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.iter()
            .map(|p| {
                (0..to.len())
                    .map(|k| point_segment_dist2(p, &to[k], &to[(k + 1) % to.len()]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Ok(directed(&pa, &pb).max(directed(&pb, &pa)).sqrt())
}
