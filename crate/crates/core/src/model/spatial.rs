//! Neighbourhood matrices and the spatial lag covariate.

use alloc::vec::Vec;

use crate::linalg::SymMatrix;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SpatialError {
    #[error("neighbourhood matrix has {rows} rows but {len} rates")]
    LengthMismatch { rows: usize, len: usize },
    #[error("region {0} has no neighbours")]
    Island(usize),
    #[error("neighbourhood matrix has a nonzero diagonal at region {0}")]
    SelfNeighbour(usize),
    #[error("neighbourhood matrix has a negative entry in row {0}")]
    Negative(usize),
    #[error("row {row} of the neighbourhood matrix sums to {sum}, not 1")]
    NotStandardized { row: usize, sum: f64 },
}

fn check_structure(w: &SymMatrix) -> Result<(), SpatialError> {
    let n = w.dim();
    for i in 0..n {
        if w.get(i, i) != 0.0 {
            return Err(SpatialError::SelfNeighbour(i));
        }
        if (0..n).any(|j| w.get(i, j) < 0.0) {
            return Err(SpatialError::Negative(i));
        }
        if (0..n).all(|j| w.get(i, j) == 0.0) {
            return Err(SpatialError::Island(i));
        }
    }
    Ok(())
}

/// Divides every row of a 0/1 (or weighted) adjacency matrix by its sum.
///
/// The result is generally not symmetric; it is stored in the same square
/// container.
pub fn row_standardize(adjacency: &SymMatrix) -> Result<SymMatrix, SpatialError> {
    check_structure(adjacency)?;
    let n = adjacency.dim();
    let mut w = adjacency.clone();
    for i in 0..n {
        let s: f64 = (0..n).map(|j| adjacency.get(i, j)).sum();
        for j in 0..n {
            w.set(i, j, adjacency.get(i, j) / s);
        }
    }
    Ok(w)
}

/// `W · rates` for a row-standardized `W`: the neighbour mean of each region.
pub fn spatial_lag(w: &SymMatrix, rates: &[f64]) -> Result<Vec<f64>, SpatialError> {
    let n = w.dim();
    if rates.len() != n {
        return Err(SpatialError::LengthMismatch { rows: n, len: rates.len() });
    }
    check_structure(w)?;
    for i in 0..n {
        let sum: f64 = (0..n).map(|j| w.get(i, j)).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SpatialError::NotStandardized { row: i, sum });
        }
    }
    Ok(w.mul_vec(rates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn line3() -> SymMatrix {
        SymMatrix::from_row_major(3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn three_regions_in_a_line() {
        let w = row_standardize(&line3()).unwrap();
        assert_eq!(w.get(1, 0), 0.5);
        assert_eq!(spatial_lag(&w, &[1.0, 2.0, 3.0]).unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn identity_adjacency_rejected() {
        assert_eq!(row_standardize(&SymMatrix::identity(3)), Err(SpatialError::SelfNeighbour(0)));
        assert_eq!(spatial_lag(&SymMatrix::identity(3), &[1.0; 3]), Err(SpatialError::SelfNeighbour(0)));
    }

    #[test]
    fn island_rejected() {
        let a = SymMatrix::from_row_major(3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(row_standardize(&a), Err(SpatialError::Island(2)));
    }

    #[test]
    fn length_mismatch_rejected() {
        let w = row_standardize(&line3()).unwrap();
        assert!(matches!(spatial_lag(&w, &[1.0]), Err(SpatialError::LengthMismatch { .. })));
    }

    proptest! {
        #[test]
        fn standardized_rows_sum_to_one_and_constants_are_fixed(
            bits in proptest::collection::vec(any::<bool>(), 36),
            c in -50.0f64..50.0,
        ) {
            let n = 6;
            let mut a = SymMatrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    if i != j && (bits[i * n + j] || j == (i + 1) % n) {
                        a.set(i, j, 1.0);
                    }
                }
            }
            let w = row_standardize(&a).unwrap();
            for i in 0..n {
                let s: f64 = (0..n).map(|j| w.get(i, j)).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
            for v in spatial_lag(&w, &vec![c; n]).unwrap() {
                prop_assert!((v - c).abs() < 1e-12 * (1.0 + c.abs()));
            }
        }
    }
}
