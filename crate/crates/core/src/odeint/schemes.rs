//! Embedded explicit Runge–Kutta pairs, looked up by name.
//!
//! Every scheme advances the higher-order solution and estimates the local
//! error from the embedded lower-order one. Dense output is returned as a
//! polynomial in the normalised step fraction `s ∈ [0, 1]` so that callers
//! (interpolation, event location) never depend on the concrete scheme.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use super::VectorField;

/// Scratch space reused across steps.
#[derive(Debug, Default)]
pub struct StepWork {
    pub stages: Vec<Vec<f64>>,
    pub tmp: Vec<f64>,
    pub y_new: Vec<f64>,
    pub err: Vec<f64>,
    /// `f(y_new)`, valid after [`Scheme::attempt`] for FSAL schemes and after
    /// [`Scheme::finish`] for all schemes.
    pub k_new: Vec<f64>,
}

impl StepWork {
    pub fn new(dim: usize, stages: usize) -> Self {
        Self {
            stages: vec![vec![0.0; dim]; stages],
            tmp: vec![0.0; dim],
            y_new: vec![0.0; dim],
            err: vec![0.0; dim],
            k_new: vec![0.0; dim],
        }
    }
}

/// One member of the integration-scheme family.
pub trait Scheme: Send + Sync {
    fn name(&self) -> &'static str;

    /// Order of the propagated solution.
    fn order(&self) -> u32;

    /// Order of the embedded error estimator; drives step-size control.
    fn estimator_order(&self) -> u32;

    fn stage_count(&self) -> usize;

    /// Computes a trial step of size `h` from `y` with `k0 = f(y)`, filling
    /// `work.y_new` and the error vector `work.err`.
    fn attempt(&self, field: &dyn VectorField, y: &[f64], k0: &[f64], h: f64, work: &mut StepWork);

    /// Called once a step is accepted; ensures `work.k_new = f(y_new)`.
    fn finish(&self, field: &dyn VectorField, work: &mut StepWork);

    /// Polynomial coefficients `c_p` (flattened, `c[p * dims + i]`) such that
    /// `y(t0 + s h) ≈ Σ_p c_p s^p` for the first `dims` components.
    fn dense_coefficients(
        &self,
        y: &[f64],
        k0: &[f64],
        h: f64,
        work: &StepWork,
        dims: usize,
    ) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DenseForm {
    /// Dormand–Prince continuous extension of order 4.
    Dopri5,
    /// Cubic Hermite through both endpoints and slopes.
    Hermite,
}

/// Butcher tableau of an embedded pair.
#[derive(Debug, Clone)]
pub struct EmbeddedRk {
    name: &'static str,
    order: u32,
    estimator_order: u32,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    /// Weights of `b - b_hat`.
    e: Vec<f64>,
    fsal: bool,
    dense: DenseForm,
}

impl EmbeddedRk {
    pub fn dormand_prince() -> Self {
        let a = vec![
            vec![],
            vec![1.0 / 5.0],
            vec![3.0 / 40.0, 9.0 / 40.0],
            vec![44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
            vec![
                19372.0 / 6561.0,
                -25360.0 / 2187.0,
                64448.0 / 6561.0,
                -212.0 / 729.0,
            ],
            vec![
                9017.0 / 3168.0,
                -355.0 / 33.0,
                46732.0 / 5247.0,
                49.0 / 176.0,
                -5103.0 / 18656.0,
            ],
            vec![
                35.0 / 384.0,
                0.0,
                500.0 / 1113.0,
                125.0 / 192.0,
                -2187.0 / 6784.0,
                11.0 / 84.0,
            ],
        ];
        let b = vec![
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
            0.0,
        ];
        let e = vec![
            71.0 / 57600.0,
            0.0,
            -71.0 / 16695.0,
            71.0 / 1920.0,
            -17253.0 / 339200.0,
            22.0 / 525.0,
            -1.0 / 40.0,
        ];
        Self {
            name: "dopri5",
            order: 5,
            estimator_order: 4,
            a,
            b,
            e,
            fsal: true,
            dense: DenseForm::Dopri5,
        }
    }

    pub fn fehlberg() -> Self {
        let a = vec![
            vec![],
            vec![1.0 / 4.0],
            vec![3.0 / 32.0, 9.0 / 32.0],
            vec![1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0],
            vec![439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0],
            vec![
                -8.0 / 27.0,
                2.0,
                -3544.0 / 2565.0,
                1859.0 / 4104.0,
                -11.0 / 40.0,
            ],
        ];
        let b = vec![
            16.0 / 135.0,
            0.0,
            6656.0 / 12825.0,
            28561.0 / 56430.0,
            -9.0 / 50.0,
            2.0 / 55.0,
        ];
        let b_hat = [
            25.0 / 216.0,
            0.0,
            1408.0 / 2565.0,
            2197.0 / 4104.0,
            -1.0 / 5.0,
            0.0,
        ];
        let e = b.iter().zip(b_hat).map(|(x, y)| x - y).collect();
        Self {
            name: "rkf45",
            order: 5,
            estimator_order: 4,
            a,
            b,
            e,
            fsal: false,
            dense: DenseForm::Hermite,
        }
    }

    pub fn cash_karp() -> Self {
        let a = vec![
            vec![],
            vec![1.0 / 5.0],
            vec![3.0 / 40.0, 9.0 / 40.0],
            vec![3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0],
            vec![-11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0],
            vec![
                1631.0 / 55296.0,
                175.0 / 512.0,
                575.0 / 13824.0,
                44275.0 / 110592.0,
                253.0 / 4096.0,
            ],
        ];
        let b = vec![
            37.0 / 378.0,
            0.0,
            250.0 / 621.0,
            125.0 / 594.0,
            0.0,
            512.0 / 1771.0,
        ];
        let b_hat = [
            2825.0 / 27648.0,
            0.0,
            18575.0 / 48384.0,
            13525.0 / 55296.0,
            277.0 / 14336.0,
            1.0 / 4.0,
        ];
        let e = b.iter().zip(b_hat).map(|(x, y)| x - y).collect();
        Self {
            name: "cash-karp",
            order: 5,
            estimator_order: 4,
            a,
            b,
            e,
            fsal: false,
            dense: DenseForm::Hermite,
        }
    }
}

impl Scheme for EmbeddedRk {
    fn name(&self) -> &'static str {
        self.name
    }

    fn order(&self) -> u32 {
        self.order
    }

    fn estimator_order(&self) -> u32 {
        self.estimator_order
    }

    fn stage_count(&self) -> usize {
        self.a.len()
    }

    fn attempt(&self, field: &dyn VectorField, y: &[f64], k0: &[f64], h: f64, work: &mut StepWork) {
        let dim = y.len();
        work.stages[0].copy_from_slice(k0);
        for s in 1..self.a.len() {
            let row = &self.a[s];
            for i in 0..dim {
                let mut acc = 0.0;
                for (q, &aq) in row.iter().enumerate() {
                    if aq != 0.0 {
                        acc += aq * work.stages[q][i];
                    }
                }
                work.tmp[i] = y[i] + h * acc;
            }
            field.eval(&work.tmp, &mut work.stages[s]);
        }
        if self.fsal {
            // last stage was evaluated at the propagated solution
            work.y_new.copy_from_slice(&work.tmp);
            let last = work.stages.len() - 1;
            work.k_new.copy_from_slice(&work.stages[last]);
        } else {
            for i in 0..dim {
                let acc: f64 = self
                    .b
                    .iter()
                    .zip(&work.stages)
                    .map(|(&bq, k)| bq * k[i])
                    .sum();
                work.y_new[i] = y[i] + h * acc;
            }
        }
        for i in 0..dim {
            let acc: f64 = self
                .e
                .iter()
                .zip(&work.stages)
                .map(|(&eq, k)| eq * k[i])
                .sum();
            work.err[i] = h * acc;
        }
    }

    fn finish(&self, field: &dyn VectorField, work: &mut StepWork) {
        if !self.fsal {
            field.eval(&work.y_new, &mut work.k_new);
        }
    }

    fn dense_coefficients(
        &self,
        y: &[f64],
        k0: &[f64],
        h: f64,
        work: &StepWork,
        dims: usize,
    ) -> Vec<f64> {
        match self.dense {
            DenseForm::Dopri5 => {
                const D: [f64; 7] = [
                    -12715105075.0 / 11282082432.0,
                    0.0,
                    87487479700.0 / 32700410799.0,
                    -10690763975.0 / 1880347072.0,
                    701980252875.0 / 199316789632.0,
                    -1453857185.0 / 822651844.0,
                    69997945.0 / 29380423.0,
                ];
                let mut c = vec![0.0; 5 * dims];
                for i in 0..dims {
                    let r1 = y[i];
                    let r2 = work.y_new[i] - y[i];
                    let r3 = h * k0[i] - r2;
                    let r4 = r2 - h * work.k_new[i] - r3;
                    let r5 = h * D
                        .iter()
                        .zip(&work.stages)
                        .map(|(&d, k)| d * k[i])
                        .sum::<f64>();
                    // y(s) = r1 + s(r2 + (1-s)(r3 + s(r4 + (1-s) r5))) expanded
                    c[i] = r1;
                    c[dims + i] = r2 + r3;
                    c[2 * dims + i] = r4 + r5 - r3;
                    c[3 * dims + i] = -r4 - 2.0 * r5;
                    c[4 * dims + i] = r5;
                }
                c
            }
            DenseForm::Hermite => {
                let mut c = vec![0.0; 4 * dims];
                for i in 0..dims {
                    let (y0, y1) = (y[i], work.y_new[i]);
                    let (f0, f1) = (h * k0[i], h * work.k_new[i]);
                    c[i] = y0;
                    c[dims + i] = f0;
                    c[2 * dims + i] = -3.0 * y0 - 2.0 * f0 + 3.0 * y1 - f1;
                    c[3 * dims + i] = 2.0 * y0 + f0 - 2.0 * y1 + f1;
                }
                c
            }
        }
    }
}

/// Name-keyed collection of schemes.
pub struct SchemeRegistry {
    schemes: BTreeMap<&'static str, Box<dyn Scheme>>,
}

impl SchemeRegistry {
    pub fn empty() -> Self {
        Self {
            schemes: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(EmbeddedRk::dormand_prince()));
        reg.register(Box::new(EmbeddedRk::fehlberg()));
        reg.register(Box::new(EmbeddedRk::cash_karp()));
        reg
    }

    /// Adds a scheme, replacing any previous one with the same name.
    pub fn register(&mut self, scheme: Box<dyn Scheme>) {
        self.schemes.insert(scheme.name(), scheme);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Scheme> {
        self.schemes.get(name).map(|s| s.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.schemes.keys().copied().collect()
    }
}

/// The process-wide registry of built-in schemes.
pub fn builtin() -> &'static SchemeRegistry {
    static REGISTRY: OnceLock<SchemeRegistry> = OnceLock::new();
    REGISTRY.get_or_init(SchemeRegistry::with_builtins)
}

pub const DEFAULT_SCHEME: &str = "dopri5";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names() {
        assert_eq!(builtin().names(), ["cash-karp", "dopri5", "rkf45"]);
        assert!(builtin().get("euler").is_none());
    }

    #[test]
    fn tableaus_are_consistent() {
        for name in builtin().names() {
            let rk = match name {
                "dopri5" => EmbeddedRk::dormand_prince(),
                "rkf45" => EmbeddedRk::fehlberg(),
                _ => EmbeddedRk::cash_karp(),
            };
            let bsum: f64 = rk.b.iter().sum();
            let esum: f64 = rk.e.iter().sum();
            assert!((bsum - 1.0).abs() < 1e-14, "{name}");
            assert!(esum.abs() < 1e-14, "{name}");
            for row in &rk.a {
                assert!(row.len() < rk.a.len());
            }
        }
    }
}
