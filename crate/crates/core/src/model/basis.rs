use nalgebra::{DMatrix, DVector};

use super::SphereFaceModel;
use crate::error::{Result, SfmError};
use crate::mesh::Mesh;

/// Columns whose QR diagonal falls below this fraction of the largest one are
/// considered linearly dependent.
const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of the column span, via Householder QR.
///
/// Each output column is signed so that its largest-magnitude entry (first one
/// on ties) is positive, which makes the result independent of the sign
/// choices made inside the factorization.
pub fn orthonormalize(basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = basis.shape();
    if cols == 0 || cols > rows {
        return Err(SfmError::InvalidConfig(format!(
            "cannot orthonormalize a {rows}x{cols} matrix"
        )));
    }
    if basis.iter().any(|v| !v.is_finite()) {
        return Err(SfmError::NonFinite("basis entries".into()));
    }
    let qr = basis.clone().qr();
    let r = qr.r();
    let max_diag = (0..cols).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    for j in 0..cols {
        let ratio = if max_diag > 0.0 {
            r[(j, j)].abs() / max_diag
        } else {
            0.0
        };
        if ratio < RANK_TOL {
            return Err(SfmError::RankDeficient { column: j, ratio });
        }
    }
    let mut q = qr.q();
    apply_sign_convention(&mut q);
    Ok(q)
}

fn apply_sign_convention(q: &mut DMatrix<f64>) {
    for mut col in q.column_iter_mut() {
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Frobenius norm of `A^T A - I`.
pub fn orthonormality_error(basis: &DMatrix<f64>) -> f64 {
    let d = basis.ncols();
    (basis.tr_mul(basis) - DMatrix::<f64>::identity(d, d)).norm()
}

/// PCA model: the sample mean plus the top-`d` principal directions,
/// ordered by decreasing variance.
pub fn fit_pca(meshes: &[Mesh], d: usize) -> Result<SphereFaceModel> {
    let first = meshes
        .first()
        .ok_or_else(|| SfmError::InvalidConfig("PCA needs at least one mesh".into()))?;
    let dim = 3 * first.vertex_count();
    for (i, m) in meshes.iter().enumerate() {
        if m.vertex_count() != first.vertex_count() {
            return Err(SfmError::Corpus(vec![format!(
                "mesh {i} has {} vertices, expected {}",
                m.vertex_count(),
                first.vertex_count()
            )]));
        }
    }
    let limit = dim.min(meshes.len().saturating_sub(1));
    if d == 0 || d > limit {
        return Err(SfmError::InvalidConfig(format!(
            "PCA dimension {d} must be in 1..={limit} ({} samples, {dim} coordinates)",
            meshes.len()
        )));
    }

    let data = DMatrix::from_fn(dim, meshes.len(), |r, c| meshes[c].vertices()[r]);
    let mut mean = DVector::zeros(dim);
    for col in data.column_iter() {
        mean += col;
    }
    mean /= meshes.len() as f64;
    let mut centered = data;
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }

    let svd = centered.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| SfmError::Degenerate("SVD did not produce left vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let top = DMatrix::from_fn(dim, d, |r, c| u[(r, order[c])]);
    let basis = orthonormalize(&top)?;
    SphereFaceModel::new(mean, basis, first.faces().map(<[_]>::to_vec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::rmse_point_to_point;
    use crate::model::{project, reconstruct};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn orthonormal_input_is_kept_up_to_sign() {
        let q0 = orthonormalize(&random_matrix(9, 3, 1)).unwrap();
        let mut flipped = q0.clone();
        flipped.column_mut(1).neg_mut();
        let q1 = orthonormalize(&flipped).unwrap();
        assert!((q1 - &q0).amax() < 1e-12);
    }

    #[test]
    fn duplicate_columns_are_rank_deficient() {
        let mut m = random_matrix(6, 2, 2);
        let c0 = m.column(0).clone_owned();
        m.set_column(1, &c0);
        assert!(matches!(
            orthonormalize(&m),
            Err(SfmError::RankDeficient { column: 1, .. })
        ));
    }

    #[test]
    fn random_tall_matrix_span_is_preserved() {
        let a = random_matrix(12, 3, 3);
        let q = orthonormalize(&a).unwrap();
        assert!(orthonormality_error(&q) <= 1e-10);
        // Each original column must lie in span(Q).
        let residual = &a - &q * q.tr_mul(&a);
        assert!(residual.amax() <= 1e-9, "{}", residual.amax());
        for col in q.column_iter() {
            let best = col
                .iter()
                .cloned()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(best > 0.0);
        }
    }

    fn subspace_corpus(n_vertices: usize, k: usize, samples: usize, seed: u64) -> (Vec<Mesh>, DMatrix<f64>) {
        let gen = orthonormalize(&random_matrix(3 * n_vertices, k, seed)).unwrap();
        let offset = DVector::from_fn(3 * n_vertices, |i, _| i as f64 * 0.1);
        let coeffs = random_matrix(k, samples, seed + 100) * 5.0;
        let meshes = (0..samples)
            .map(|i| {
                let v = &offset + &gen * coeffs.column(i);
                Mesh::new(v.as_slice().to_vec(), None).unwrap()
            })
            .collect();
        (meshes, gen)
    }

    #[test]
    fn pca_recovers_exact_subspace() {
        let (meshes, gen) = subspace_corpus(10, 4, 25, 11);
        let model = fit_pca(&meshes, 4).unwrap();
        for m in &meshes {
            let rec = reconstruct(&model, &project(&model, m).unwrap()).unwrap();
            assert!(rmse_point_to_point(&rec, m).unwrap() < 1e-9);
        }
        // Principal angles via singular values of Q_gen^T Q_pca: all cosines 1.
        let cosines = gen.tr_mul(model.basis()).singular_values();
        for c in cosines.iter() {
            let angle = c.min(1.0).acos();
            assert!(angle < 1e-6, "principal angle {angle}");
        }
    }

    #[test]
    fn pca_rejects_bad_dimensions() {
        let (meshes, _) = subspace_corpus(5, 2, 6, 5);
        assert!(fit_pca(&meshes, 0).is_err());
        assert!(fit_pca(&meshes, 6).is_err());
        assert!(fit_pca(&meshes, 5).is_ok());
        let mut mixed = meshes.clone();
        mixed.push(Mesh::new(vec![0.0; 3], None).unwrap());
        assert!(matches!(fit_pca(&mixed, 2), Err(SfmError::Corpus(_))));
    }

    #[test]
    fn pca_rmse_non_increasing_in_dim() {
        let a = random_matrix(24, 15, 21) * 3.0;
        let meshes: Vec<Mesh> = a
            .column_iter()
            .map(|c| Mesh::new(c.iter().copied().collect(), None).unwrap())
            .collect();
        let mut prev = f64::INFINITY;
        for d in 1..=14 {
            let model = fit_pca(&meshes, d).unwrap();
            let total: f64 = meshes
                .iter()
                .map(|m| {
                    let r = reconstruct(&model, &project(&model, m).unwrap()).unwrap();
                    rmse_point_to_point(&r, m).unwrap().powi(2)
                })
                .sum();
            assert!(total <= prev + 1e-9, "d={d}: {total} > {prev}");
            prev = total;
        }
    }
}
