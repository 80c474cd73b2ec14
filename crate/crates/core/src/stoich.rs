//! Rank, orthonormal image basis and conservation laws of a stoichiometric
//! matrix, from one singular value decomposition.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::IntMatrix;

/// Singular values below `RANK_TOL * σ_max` count as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoichError {
    #[error("expected vectors of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Orthonormal basis `B` (n × r) of the image of Γ.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBasis {
    pub b: DMatrix<f64>,
    pub rank: usize,
}

impl ImageBasis {
    /// Ambient dimension n.
    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    /// Coordinates `Bᵗv` of a vector in the basis.
    pub fn coordinates(&self, v: &DVector<f64>) -> DVector<f64> {
        self.b.transpose() * v
    }

    /// Orthogonal projection `BBᵗv`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.b * self.coordinates(v)
    }

    /// Basis of the whole space, for fields without conserved quantities.
    pub fn full(n: usize) -> Self {
        Self {
            b: DMatrix::identity(n, n),
            rank: n,
        }
    }
}

/// Rows spanning the left nullspace of Γ, orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservationLaws {
    pub l: DMatrix<f64>,
}

impl ConservationLaws {
    pub fn count(&self) -> usize {
        self.l.nrows()
    }

    /// `L x` for a state.
    pub fn evaluate(&self, x: &[f64]) -> DVector<f64> {
        &self.l * DVector::from_column_slice(x)
    }
}

/// Left singular vectors of Γ sorted by decreasing singular value, plus the
/// numerical rank.
fn left_singular(gamma: &IntMatrix) -> (DMatrix<f64>, usize) {
    let n = gamma.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    // Zero columns leave the spectrum unchanged but make U square.
    let cols = gamma.ncols().max(n);
    let mut g = DMatrix::zeros(n, cols);
    g.view_mut((0, 0), (n, gamma.ncols()))
        .copy_from(&gamma.to_f64());
    let svd = g.svd(true, false);
    let u = svd.u.expect("U requested");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    let rank = if sigma_max > 0.0 {
        sv.iter().filter(|&&s| s > RANK_TOL * sigma_max).count()
    } else {
        0
    };
    let sorted = DMatrix::from_fn(n, n, |i, j| u[(i, order[j])]);
    (sorted, rank)
}

pub fn rank_and_image(gamma: &IntMatrix) -> ImageBasis {
    let (u, rank) = left_singular(gamma);
    ImageBasis {
        b: u.columns(0, rank).into_owned(),
        rank,
    }
}

pub fn conservation_laws(gamma: &IntMatrix) -> ConservationLaws {
    let (u, rank) = left_singular(gamma);
    let n = u.nrows();
    ConservationLaws {
        l: u.columns(rank, n - rank).transpose(),
    }
}

/// Distance from `x` to the coset `x0 + im Γ`.
pub fn class_residual(x: &[f64], x0: &[f64], basis: &ImageBasis) -> Result<f64, StoichError> {
    for v in [x, x0] {
        if v.len() != basis.dim() {
            return Err(StoichError::DimensionMismatch {
                expected: basis.dim(),
                got: v.len(),
            });
        }
    }
    let d = DVector::from_iterator(x.len(), x.iter().zip(x0).map(|(a, b)| a - b));
    Ok((&d - basis.project(&d)).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_network;
    use crate::testing::{R1_TEXT, R2_TEXT};
    use proptest::prelude::*;

    #[test]
    fn r1_is_full_rank() {
        let net = parse_network(R1_TEXT).unwrap();
        let basis = rank_and_image(net.stoichiometric_matrix());
        assert_eq!(basis.rank, 3);
        assert!((basis.b.transpose() * &basis.b - DMatrix::identity(3, 3)).amax() < 1e-12);
        assert_eq!(conservation_laws(net.stoichiometric_matrix()).count(), 0);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let g = IntMatrix::zeros(3, 2);
        let basis = rank_and_image(&g);
        assert_eq!(basis.rank, 0);
        assert_eq!(basis.b.shape(), (3, 0));
        assert_eq!(conservation_laws(&g).count(), 3);
        let empty = IntMatrix::zeros(0, 0);
        assert_eq!(rank_and_image(&empty).rank, 0);
        assert_eq!(conservation_laws(&empty).count(), 0);
    }

    #[test]
    fn r2_conservation_law() {
        let net = parse_network(R2_TEXT).unwrap();
        let g = net.stoichiometric_matrix();
        assert_eq!(rank_and_image(g).rank, 5);
        let laws = conservation_laws(g);
        assert_eq!(laws.count(), 1);
        let row = laws.l.row(0).transpose();
        let expected = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, -1.0, 3.0]) / 11f64.sqrt();
        let aligned = if row.dot(&expected) < 0.0 { -row } else { row };
        assert!((aligned - expected).amax() < 1e-12);
    }

    #[test]
    fn single_column_complement() {
        let g = IntMatrix::from_rows(&[vec![1], vec![0]]);
        let l = conservation_laws(&g).l;
        assert_eq!(l.shape(), (1, 2));
        assert!(l[(0, 0)].abs() < 1e-15);
        assert!((l[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn residual_along_conservation_direction() {
        let net = parse_network(R2_TEXT).unwrap();
        let basis = rank_and_image(net.stoichiometric_matrix());
        let x0 = [1.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let x = [1.0, 1.0, 1.0, 0.0, 0.0, 2.0];
        let r = class_residual(&x, &x0, &basis).unwrap();
        assert!((r - 3.0 / 11f64.sqrt()).abs() < 1e-12);
        assert_eq!(class_residual(&x0, &x0, &basis).unwrap(), 0.0);
        assert!(class_residual(&x[..2], &x0, &basis).is_err());
    }

    fn int_matrix() -> impl Strategy<Value = IntMatrix> {
        (1usize..6, 1usize..7).prop_flat_map(|(n, c)| {
            prop::collection::vec(prop::collection::vec(-3i64..=3, c), n)
                .prop_map(|rows| IntMatrix::from_rows(&rows))
        })
    }

    proptest! {
        #[test]
        fn bases_are_complementary(g in int_matrix()) {
            let basis = rank_and_image(&g);
            let laws = conservation_laws(&g);
            let gf = g.to_f64();
            prop_assert_eq!(basis.rank + laws.count(), g.nrows());
            prop_assert!((&laws.l * &gf).amax() < 1e-10);
            prop_assert!((basis.b.transpose() * laws.l.transpose()).amax() < 1e-10);
            let recon = &basis.b * (basis.b.transpose() * &gf);
            prop_assert!((&gf - recon).norm() <= 1e-10 * gf.norm().max(1.0));
            let gram = &laws.l * laws.l.transpose();
            prop_assert!((gram - DMatrix::identity(laws.count(), laws.count())).amax() < 1e-12);
        }

        #[test]
        fn moving_along_image_keeps_class(
            g in int_matrix(),
            seed in prop::collection::vec(-5i64..=5, 7),
        ) {
            let basis = rank_and_image(&g);
            let x0: Vec<f64> = (0..g.nrows()).map(|i| 1.0 + i as f64).collect();
            let t = DVector::from_iterator(g.ncols(), seed.iter().take(g.ncols()).map(|&v| v as f64));
            let step = g.to_f64() * t;
            let x: Vec<f64> = x0.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            prop_assert!(class_residual(&x, &x0, &basis).unwrap() < 1e-10);
        }
    }
}
