//! Adaptive explicit Runge–Kutta integration with dense output, joint
//! integration of the variational equation, and section-crossing location.

pub mod schemes;

use std::io::{self, Write};

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use schemes::StepWork;
pub use schemes::{Scheme, SchemeRegistry, DEFAULT_SCHEME};

/// An autonomous vector field `ẋ = F(x)` with an analytic Jacobian.
pub trait VectorField {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Writes `DF(x)` into the `dim × dim` matrix `out`.
    fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>);

    /// Number of leading components that are concentrations and therefore
    /// subject to the positivity floor. Zero for unconstrained fields.
    fn positive_components(&self) -> usize {
        0
    }
}

/// A vector field assembled from closures; mostly useful for tests and
/// normal-form examples.
pub struct FnField<F, J> {
    pub dim: usize,
    pub f: F,
    pub jac: J,
}

impl<F, J> VectorField for FnField<F, J>
where
    F: Fn(&[f64], &mut [f64]),
    J: Fn(&[f64], &mut DMatrix<f64>),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }

    fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>) {
        (self.jac)(x, out)
    }
}

/// `ẋ = A x`.
pub struct LinearField(pub DMatrix<f64>);

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..x.len()).map(|j| self.0[(i, j)] * x[j]).sum();
        }
    }

    fn jacobian(&self, _x: &[f64], out: &mut DMatrix<f64>) {
        out.copy_from(&self.0);
    }
}

/// State plus fundamental matrix, `(x, Φ)` with `Φ` stored column-major.
struct Variational<'a> {
    inner: &'a dyn VectorField,
}

impl VectorField for Variational<'_> {
    fn dim(&self) -> usize {
        let n = self.inner.dim();
        n + n * n
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        let n = self.inner.dim();
        self.inner.eval(&y[..n], &mut out[..n]);
        let mut jac = DMatrix::zeros(n, n);
        self.inner.jacobian(&y[..n], &mut jac);
        let phi = DMatrixView::from_slice(&y[n..], n, n);
        let prod = jac * phi;
        out[n..].copy_from_slice(prod.as_slice());
    }

    fn jacobian(&self, _y: &[f64], _out: &mut DMatrix<f64>) {
        unimplemented!("second variations are not needed")
    }

    fn positive_components(&self) -> usize {
        self.inner.positive_components()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// Registry name of the Runge–Kutta pair.
    pub scheme: String,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-11,
            max_step: f64::INFINITY,
            max_steps: 5_000_000,
            scheme: DEFAULT_SCHEME.to_string(),
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), OdeError> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(OdeError::InvalidConfig(
                "rtol and atol must be positive".into(),
            ));
        }
        if !(self.max_step > 0.0) {
            return Err(OdeError::InvalidConfig("max_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step limit of {steps} reached at t = {t}")]
    StepLimit { steps: usize, t: f64 },
    #[error("step size underflow (h = {h:e}) at t = {t}; the problem is probably stiff")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("component {index} left the positive orthant ({value:e}) at t = {t}")]
    PositivityLost { index: usize, value: f64, t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("unknown integration scheme `{0}`")]
    UnknownScheme(String),
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("initial state has {got} entries, field has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("t_end must be finite and nonnegative, got {0}")]
    InvalidSpan(f64),
}

/// Continuous extension over one accepted step: `y(t0 + s h) = Σ_p c_p s^p`.
#[derive(Debug, Clone)]
pub struct Segment {
    pub t0: f64,
    pub h: f64,
    coeffs: Vec<f64>,
}

impl Segment {
    fn degree(&self, dim: usize) -> usize {
        self.coeffs.len() / dim - 1
    }

    /// Evaluates the interpolant at step fraction `s` into `out`.
    pub fn eval_fraction(&self, s: f64, out: &mut [f64]) {
        let dim = out.len();
        let deg = self.degree(dim);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.coeffs[deg * dim + i];
            for p in (0..deg).rev() {
                acc = acc * s + self.coeffs[p * dim + i];
            }
            *o = acc;
        }
    }

    /// Scalar polynomial `⟨y(s) - p, n⟩` as coefficients in `s`.
    fn project(&self, point: &[f64], normal: &[f64]) -> Vec<f64> {
        let dim = normal.len();
        let deg = self.degree(dim);
        let mut g: Vec<f64> = (0..=deg)
            .map(|p| (0..dim).map(|i| self.coeffs[p * dim + i] * normal[i]).sum())
            .collect();
        g[0] -= point.iter().zip(normal).map(|(a, b)| a * b).sum::<f64>();
        g
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Accepted steps of one run together with their dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    segments: Vec<Segment>,
    pub stats: RunStats,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.states
            .chunks_exact(self.dim.max(1))
            .take(self.times.len())
    }

    pub fn first_state(&self) -> &[f64] {
        self.state(0)
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory has at least one sample")
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Dense-output state at time `t`, clamped to the integrated span.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if self.segments.is_empty() || t <= self.t_start() {
            out.copy_from_slice(self.first_state());
            return out;
        }
        if t >= self.t_end() {
            out.copy_from_slice(self.last_state());
            return out;
        }
        let k = self
            .segments
            .partition_point(|s| s.t0 <= t)
            .saturating_sub(1);
        let seg = &self.segments[k];
        seg.eval_fraction((t - seg.t0) / seg.h, &mut out);
        out
    }

    /// `n` states at equal spacing over `[t_start, t_start + span)`.
    pub fn sample_uniform(&self, span: f64, n: usize) -> Vec<Vec<f64>> {
        let t0 = self.t_start();
        (0..n)
            .map(|i| self.interpolate(t0 + span * i as f64 / n as f64))
            .collect()
    }

    /// Writes `t,<names…>` followed by one row per accepted step, with 17
    /// significant digits.
    pub fn write_csv<W: Write>(&self, names: &[String], mut w: W) -> io::Result<()> {
        writeln!(w, "t,{}", names.join(","))?;
        for (t, x) in self.times.iter().zip(self.states()) {
            write!(w, "{t:.16e}")?;
            for v in x {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Fundamental matrices `Φ(t)` of the variational equation at each accepted
/// step, with `Φ(0) = I`.
#[derive(Debug, Clone)]
pub struct FundamentalPath {
    pub times: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
}

impl FundamentalPath {
    pub fn last(&self) -> &DMatrix<f64> {
        self.matrices.last().expect("path has at least one sample")
    }
}

fn lookup(cfg: &IntegratorConfig) -> Result<&'static dyn Scheme, OdeError> {
    schemes::builtin()
        .get(&cfg.scheme)
        .ok_or_else(|| OdeError::UnknownScheme(cfg.scheme.clone()))
}

/// Integrates `field` from `x0` over `[0, t_end]`.
pub fn integrate(
    field: &dyn VectorField,
    x0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, OdeError> {
    integrate_with(lookup(cfg)?, field, x0, t_end, cfg)
}

/// As [`integrate`], with an explicitly supplied scheme.
pub fn integrate_with(
    scheme: &dyn Scheme,
    field: &dyn VectorField,
    x0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, OdeError> {
    if x0.len() != field.dim() {
        return Err(OdeError::DimensionMismatch {
            expected: field.dim(),
            got: x0.len(),
        });
    }
    run(
        scheme,
        field,
        x0.to_vec(),
        t_end,
        cfg,
        field.dim(),
        |_, _| {},
    )
}

/// Integrates the state jointly with `Φ̇ = DF(x(t)) Φ`, `Φ(0) = I`, under a
/// single error control.
pub fn integrate_with_variational(
    field: &dyn VectorField,
    x0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, FundamentalPath), OdeError> {
    let n = field.dim();
    if x0.len() != n {
        return Err(OdeError::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    let mut y0 = x0.to_vec();
    y0.extend(DMatrix::<f64>::identity(n, n).as_slice());
    let aug = Variational { inner: field };
    let mut path = FundamentalPath {
        times: Vec::new(),
        matrices: Vec::new(),
    };
    let traj = run(lookup(cfg)?, &aug, y0, t_end, cfg, n, |t, y| {
        path.times.push(t);
        path.matrices
            .push(DMatrix::from_column_slice(n, n, &y[n..]));
    })?;
    Ok((traj, path))
}

/// Applies the positivity floor in place; errors if a component is below
/// `-atol`.
fn apply_floor(y: &mut [f64], count: usize, atol: f64, t: f64) -> Result<(), OdeError> {
    for (index, v) in y.iter_mut().take(count).enumerate() {
        if *v <= 0.0 {
            if *v < -atol {
                return Err(OdeError::PositivityLost {
                    index,
                    value: *v,
                    t,
                });
            }
            *v = atol / 10.0;
        }
    }
    Ok(())
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], cfg: &IntegratorConfig) -> f64 {
    if err.is_empty() {
        return 0.0;
    }
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sk = cfg.atol + cfg.rtol * a.abs().max(b.abs());
            (e / sk).powi(2)
        })
        .sum();
    (sum / err.len() as f64).sqrt()
}

fn scaled_norm(v: &[f64], y: &[f64], cfg: &IntegratorConfig) -> f64 {
    error_norm(v, y, y, cfg)
}

fn initial_step(
    scheme: &dyn Scheme,
    field: &dyn VectorField,
    y0: &[f64],
    f0: &[f64],
    span: f64,
    cfg: &IntegratorConfig,
) -> f64 {
    let d0 = scaled_norm(y0, y0, cfg);
    let d1 = scaled_norm(f0, y0, cfg);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    field.eval(&y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = scaled_norm(&diff, y0, cfg) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(1.0 / scheme.order() as f64)
    };
    (100.0 * h0).min(h1).min(cfg.max_step).min(span)
}

fn run(
    scheme: &dyn Scheme,
    field: &dyn VectorField,
    mut y: Vec<f64>,
    t_end: f64,
    cfg: &IntegratorConfig,
    dense_dims: usize,
    mut on_accept: impl FnMut(f64, &[f64]),
) -> Result<Trajectory, OdeError> {
    cfg.validate()?;
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(OdeError::InvalidSpan(t_end));
    }
    let dim = y.len();
    let floor_count = field.positive_components();
    apply_floor(&mut y, floor_count, cfg.atol, 0.0)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFinite { t: 0.0 });
    }

    let mut traj = Trajectory {
        dim: dense_dims,
        times: vec![0.0],
        states: y[..dense_dims].to_vec(),
        segments: Vec::new(),
        stats: RunStats::default(),
    };
    on_accept(0.0, &y);
    if t_end == 0.0 {
        return Ok(traj);
    }

    let mut k0 = vec![0.0; dim];
    field.eval(&y, &mut k0);
    traj.stats.evaluations += 1;
    let mut work = StepWork::new(dim, scheme.stage_count());

    const SAFETY: f64 = 0.9;
    const FAC_MIN: f64 = 0.2;
    const FAC_MAX: f64 = 10.0;
    const BETA: f64 = 0.04;
    let expo = 1.0 / (scheme.estimator_order() as f64 + 1.0) - 0.75 * BETA;

    let mut t = 0.0;
    let mut h = initial_step(scheme, field, &y, &k0, t_end, cfg);
    traj.stats.evaluations += 1;
    let mut err_old: f64 = 1e-4;
    let mut last_rejected = false;

    while t < t_end {
        if traj.stats.accepted >= cfg.max_steps {
            return Err(OdeError::StepLimit {
                steps: cfg.max_steps,
                t,
            });
        }
        if h < 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(OdeError::StepSizeUnderflow { t, h });
        }
        let last = t + h >= t_end - 16.0 * f64::EPSILON * t_end.abs().max(1.0);
        if last {
            h = t_end - t;
        }

        scheme.attempt(field, &y, &k0, h, &mut work);
        traj.stats.evaluations += scheme.stage_count() - 1;
        let mut err = error_norm(&work.err, &y, &work.y_new, cfg);
        if !err.is_finite() || work.y_new.iter().any(|v| !v.is_finite()) {
            err = f64::INFINITY;
        }

        if err <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            scheme.finish(field, &mut work);
            let coeffs = scheme.dense_coefficients(&y, &k0, h, &work, dense_dims);
            traj.segments.push(Segment { t0: t, h, coeffs });

            let before: Vec<f64> = work.y_new[..floor_count].to_vec();
            apply_floor(&mut work.y_new, floor_count, cfg.atol, t_new)?;
            std::mem::swap(&mut y, &mut work.y_new);
            if before != y[..floor_count] {
                field.eval(&y, &mut k0);
                traj.stats.evaluations += 1;
            } else {
                k0.copy_from_slice(&work.k_new);
            }
            t = t_new;
            traj.times.push(t);
            traj.states.extend_from_slice(&y[..dense_dims]);
            traj.stats.accepted += 1;
            on_accept(t, &y);

            let err_c = err.max(1e-10);
            let mut fac = SAFETY * err_c.powf(-expo) * err_old.powf(BETA);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            err_old = err.max(1e-4);
            h = (h * fac).min(cfg.max_step);
            last_rejected = false;
        } else {
            traj.stats.rejected += 1;
            let fac = if err.is_finite() {
                (SAFETY * err.powf(-1.0 / (scheme.estimator_order() as f64 + 1.0))).max(FAC_MIN)
            } else {
                FAC_MIN
            };
            h *= fac.min(1.0);
            last_rejected = true;
        }
    }
    Ok(traj)
}

/// Which sign change of `⟨x - p, n⟩` counts as a crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// From negative to nonnegative.
    Rising,
    /// From positive to nonpositive.
    Falling,
    Either,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub time: f64,
    pub state: Vec<f64>,
}

fn poly_eval(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * s + v)
}

/// Locates the roots of `g(s)` in `[a, b]`, given opposite signs at the ends,
/// by Illinois-modified regula falsi with bisection fallback.
fn refine_root(g: &[f64], mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut ga = poly_eval(g, a);
    let mut gb = poly_eval(g, b);
    if gb == 0.0 {
        return b;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let mut s = (a * gb - b * ga) / (gb - ga);
        if !(s > a && s < b) {
            s = 0.5 * (a + b);
        }
        let gs = poly_eval(g, s);
        if gs.abs() < tol || (b - a) < 4.0 * f64::EPSILON {
            return s;
        }
        if (gs < 0.0) == (ga < 0.0) {
            a = s;
            ga = gs;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = s;
            gb = gs;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (a + b)
}

/// Times and states at which the trajectory crosses the hyperplane through
/// `plane_point` with normal `normal`, refined on the dense output.
pub fn find_crossings(
    traj: &Trajectory,
    plane_point: &[f64],
    normal: &[f64],
    direction: Direction,
) -> Vec<Crossing> {
    let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm > 0.0, "plane normal must be nonzero");
    let pnorm = plane_point.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-12 * norm * pnorm.max(1.0);
    const SUBDIVISIONS: usize = 4;

    let mut out = Vec::new();
    for seg in traj.segments() {
        let g = seg.project(plane_point, normal);
        for q in 0..SUBDIVISIONS {
            let a = q as f64 / SUBDIVISIONS as f64;
            let b = (q + 1) as f64 / SUBDIVISIONS as f64;
            let (ga, gb) = (poly_eval(&g, a), poly_eval(&g, b));
            let rising = ga < 0.0 && gb >= 0.0;
            let falling = ga > 0.0 && gb <= 0.0;
            let hit = match direction {
                Direction::Rising => rising,
                Direction::Falling => falling,
                Direction::Either => rising || falling,
            };
            if hit {
                let s = refine_root(&g, a, b, tol);
                let mut state = vec![0.0; traj.dim()];
                seg.eval_fraction(s, &mut state);
                out.push(Crossing {
                    time: seg.t0 + s * seg.h,
                    state,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn decay() -> LinearField {
        LinearField(DMatrix::from_element(1, 1, -1.0))
    }

    fn rotation() -> LinearField {
        LinearField(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]))
    }

    #[test]
    fn exponential_decay_all_schemes() {
        for name in schemes::builtin().names() {
            let cfg = IntegratorConfig {
                scheme: name.to_string(),
                ..IntegratorConfig::default()
            };
            let traj = integrate(&decay(), &[1.0], 1.0, &cfg).unwrap();
            assert_eq!(traj.t_end(), 1.0);
            let err = (traj.last_state()[0] - (-1.0f64).exp()).abs();
            assert!(err < 1e-8, "{name}: {err:e}");
        }
    }

    #[test]
    fn zero_field_is_constant() {
        let zero = LinearField(DMatrix::zeros(2, 2));
        let traj = integrate(&zero, &[1.5, 2.5], 10.0, &IntegratorConfig::default()).unwrap();
        for x in traj.states() {
            assert_eq!(x, &[1.5, 2.5]);
        }
        let (_, path) =
            integrate_with_variational(&zero, &[1.5, 2.5], 3.0, &IntegratorConfig::default())
                .unwrap();
        assert_eq!(path.last(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn zero_span_gives_single_sample() {
        let traj = integrate(&decay(), &[2.0], 0.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.interpolate(0.0), vec![2.0]);
        let mut buf = Vec::new();
        traj.write_csv(&["X".to_string()], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,X\n0.0000000000000000e0,2.0000000000000000e0\n"
        );
    }

    #[test]
    fn unknown_scheme_is_reported() {
        let cfg = IntegratorConfig {
            scheme: "leapfrog".into(),
            ..IntegratorConfig::default()
        };
        assert_eq!(
            integrate(&decay(), &[1.0], 1.0, &cfg).unwrap_err(),
            OdeError::UnknownScheme("leapfrog".into())
        );
    }

    #[test]
    fn step_limit_guard() {
        let cfg = IntegratorConfig {
            max_steps: 3,
            ..IntegratorConfig::default()
        };
        assert!(matches!(
            integrate(&rotation(), &[1.0, 0.0], 100.0, &cfg),
            Err(OdeError::StepLimit { steps: 3, .. })
        ));
    }

    #[test]
    fn stiff_problem_underflows_or_hits_limit() {
        // ẋ = -1e9 (x - cos t) would need tiny steps; an autonomous stand-in
        let stiff = FnField {
            dim: 1,
            f: |x: &[f64], out: &mut [f64]| out[0] = 1e12 * x[0] * x[0],
            jac: |x: &[f64], out: &mut DMatrix<f64>| out[(0, 0)] = 2e12 * x[0],
        };
        let err = integrate(&stiff, &[1.0], 1.0, &IntegratorConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            OdeError::StepSizeUnderflow { .. }
                | OdeError::NonFinite { .. }
                | OdeError::StepLimit { .. }
        ));
    }

    #[test]
    fn positivity_floor() {
        struct Sink;
        impl VectorField for Sink {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, _x: &[f64], out: &mut [f64]) {
                out[0] = -1.0;
            }
            fn jacobian(&self, _x: &[f64], out: &mut DMatrix<f64>) {
                out[(0, 0)] = 0.0;
            }
            fn positive_components(&self) -> usize {
                1
            }
        }
        let err = integrate(&Sink, &[1.0], 5.0, &IntegratorConfig::default()).unwrap_err();
        assert!(matches!(err, OdeError::PositivityLost { index: 0, .. }));
        // boundary initial data is lifted to atol/10
        let traj = integrate(&decay(), &[0.0], 0.5, &IntegratorConfig::default()).unwrap();
        assert_eq!(traj.first_state(), &[0.0]);
        let cfg = IntegratorConfig::default();
        let mut y = vec![0.0, -1e-12, 3.0];
        apply_floor(&mut y, 2, cfg.atol, 0.0).unwrap();
        assert_eq!(y, vec![1e-12, 1e-12, 3.0]);
    }

    #[test]
    fn circle_crossings() {
        let traj = integrate(&rotation(), &[1.0, 0.0], 21.0, &IntegratorConfig::default()).unwrap();
        // x = cos t falls through zero at π/2 + 2πk
        let up = find_crossings(&traj, &[0.0, 0.0], &[-1.0, 0.0], Direction::Rising);
        let expected: Vec<f64> = (0..4).map(|k| PI / 2.0 + 2.0 * PI * k as f64).collect();
        let got: Vec<f64> = up.iter().map(|c| c.time).collect();
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-8, "{g} vs {e}");
        }
        for c in &up {
            assert!(c.state[0].abs() < 1e-10);
        }
        let both = find_crossings(&traj, &[0.0, 0.0], &[1.0, 0.0], Direction::Either);
        assert_eq!(both.len(), 7);
        let never = find_crossings(&traj, &[5.0, 0.0], &[1.0, 0.0], Direction::Either);
        assert!(never.is_empty());
    }

    #[test]
    fn variational_matches_matrix_exponential() {
        let a = DMatrix::from_row_slice(3, 3, &[-0.5, 1.0, 0.2, -1.0, -0.3, 0.0, 0.4, 0.1, -0.8]);
        let field = LinearField(a.clone());
        let cfg = IntegratorConfig::with_tolerances(1e-11, 1e-13);
        let (_, path) = integrate_with_variational(&field, &[1.0, 2.0, 3.0], 1.0, &cfg).unwrap();
        let exact = crate::testing::expm(&a);
        assert!((path.last() - exact).amax() < 1e-7);
        assert_eq!(path.matrices[0], DMatrix::identity(3, 3));
    }

    #[test]
    fn dense_output_midpoints() {
        // Hopf-type oscillator; compare dense output at step midpoints with
        // a much tighter re-integration.
        let field = crate::testing::hopf_field();
        let cfg = IntegratorConfig::default();
        let traj = integrate(&field, &[1.5, 0.2], 10.0, &cfg).unwrap();
        let fine_cfg = IntegratorConfig::with_tolerances(cfg.rtol / 100.0, cfg.atol / 100.0);
        let fine = integrate(&field, &[1.5, 0.2], 10.0, &fine_cfg).unwrap();
        let mut worst: f64 = 0.0;
        for seg in traj.segments().iter().step_by(5) {
            let t = seg.t0 + 0.5 * seg.h;
            let a = traj.interpolate(t);
            // exact reference by integrating the fine solution to t directly
            let b = integrate(&field, &[1.5, 0.2], t, &fine_cfg).unwrap();
            let b = b.last_state();
            for i in 0..2 {
                let tol = cfg.rtol * a[i].abs() + cfg.atol;
                worst = worst.max((a[i] - b[i]).abs() / tol);
            }
        }
        let _ = fine;
        assert!(worst < 10.0 * 100.0, "dense error ratio {worst}");
    }
    #[test]
    fn fundamental_matrix_matches_flow_differences() {
        let net = crate::model::parse_network(crate::testing::R1_TEXT).unwrap();
        let cfg = IntegratorConfig::with_tolerances(1e-11, 1e-13);
        let x0 = [1.0, 1.0, 1.0];
        let t = 2.0;
        let (_, path) = integrate_with_variational(&net, &x0, t, &cfg).unwrap();
        let phi = path.last();
        for j in 0..3 {
            let mut xp = x0;
            let mut xm = x0;
            xp[j] += 1e-7;
            xm[j] -= 1e-7;
            let fp = integrate(&net, &xp, t, &cfg).unwrap();
            let fm = integrate(&net, &xm, t, &cfg).unwrap();
            for i in 0..3 {
                let fd = (fp.last_state()[i] - fm.last_state()[i]) / 2e-7;
                assert!((fd - phi[(i, j)]).abs() < 1e-4, "Φ[{i},{j}]");
            }
        }
        assert!(path.matrices.iter().all(|m| m.determinant() > 0.0));
    }

    #[test]
    fn tolerance_halving_converges() {
        let net = crate::model::parse_network(crate::testing::R1_TEXT).unwrap();
        let coarse = IntegratorConfig::with_tolerances(1e-8, 1e-10);
        let fine = IntegratorConfig::with_tolerances(5e-9, 5e-11);
        let a = integrate(&net, &[1.0, 1.0, 1.0], 20.0, &coarse).unwrap();
        let b = integrate(&net, &[1.0, 1.0, 1.0], 20.0, &fine).unwrap();
        for (u, v) in a.last_state().iter().zip(b.last_state()) {
            assert!((u - v).abs() < 10.0 * (coarse.rtol * u.abs() + coarse.atol) * 20.0);
        }
    }

    #[test]
    fn conserved_quantity_drift() {
        let net = crate::model::parse_network(crate::testing::R2_TEXT).unwrap();
        let laws = crate::stoich::conservation_laws(net.stoichiometric_matrix());
        let cfg = IntegratorConfig::default();
        let traj = integrate(&net, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0], 200.0, &cfg).unwrap();
        let c0 = laws.evaluate(traj.first_state());
        let drift = traj
            .states()
            .map(|x| (laws.evaluate(x) - &c0).amax())
            .fold(0.0, f64::max);
        assert!(drift < 100.0 * cfg.rtol, "drift {drift:e}");
    }
}
