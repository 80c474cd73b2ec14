use nalgebra::DMatrix;

use crate::odeint::FnField;

pub const R1_TEXT: &str = "species: X, Y, Z
X + Z -> 2 Y ; k = 4
2 Y -> X + Y ; k = 3
0 <-> X ; kf = 0.2, kr = 2
0 <-> Y ; kf = 0.3, kr = 2.5
0 <-> Z ; kf = 2.5, kr = 0.2";

pub const R2_TEXT: &str = "species: X, Y, Z, U, V, W
X + Z -> 2 Y ; k = 4
2 Y -> X + Y ; k = 3
0 <-> X ; kf = 0.2, kr = 2
0 <-> Y ; kf = 0.3, kr = 2.5
0 <-> Z ; kf = 2.5, kr = 0.2
Y <-> U + V ; kf = 5, kr = 125
U + X <-> 2 V + W ; kf = 25, kr = 125";

pub const R2_ADDITIONS: &str = "Y <-> U + V
U + X <-> 2 V + W";

/// Central differences with step `1e-6 * x_i`; returns the `m × n` Jacobian.
pub fn central_difference(x: &[f64], m: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut out = DMatrix::zeros(m, n);
    let mut p = x.to_vec();
    for j in 0..n {
        let h = 1e-6 * x[j];
        p[j] = x[j] + h;
        let fp = f(&p);
        p[j] = x[j] - h;
        let fm = f(&p);
        p[j] = x[j];
        for i in 0..m {
            out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    out
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

type PlaneFn = fn(&[f64], &mut [f64]);
type PlaneJac = fn(&[f64], &mut DMatrix<f64>);

/// `ṙ = r(1 - r²)`, `θ̇ = 1` in Cartesian form.
pub fn hopf_field() -> FnField<PlaneFn, PlaneJac> {
    fn f(x: &[f64], out: &mut [f64]) {
        let r2 = x[0] * x[0] + x[1] * x[1];
        out[0] = x[0] - x[1] - x[0] * r2;
        out[1] = x[0] + x[1] - x[1] * r2;
    }
    fn jac(x: &[f64], out: &mut DMatrix<f64>) {
        let (a, b) = (x[0], x[1]);
        let r2 = a * a + b * b;
        out[(0, 0)] = 1.0 - r2 - 2.0 * a * a;
        out[(0, 1)] = -1.0 - 2.0 * a * b;
        out[(1, 0)] = 1.0 - 2.0 * a * b;
        out[(1, 1)] = 1.0 - r2 - 2.0 * b * b;
    }
    FnField { dim: 2, f, jac }
}
