use nalgebra::DMatrix;

use super::KernelMatrix;
use crate::error::{Error, Result};

/// `K − 1K/N − K1/N + 1K1/N²`
pub fn double_center(k: &DMatrix<f64>) -> DMatrix<f64> {
    // nalgebra: column_mean() holds per-row means, row_mean() per-column means
    let mean_of_row = k.column_mean();
    let mean_of_col = k.row_mean();
    let total = k.mean();
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| {
        k[(i, j)] - mean_of_row[i] - mean_of_col[j] + total
    })
}

/// Projections of the training sets onto the top `r` kernel principal
/// components, as an `N × r` matrix.
///
/// Column `k` is `K̃ v_k / √λ_k` where `K̃` is the double-centered kernel and
/// `(λ_k, v_k)` its k-th largest eigenpair. Eigenvectors are oriented so their
/// largest-magnitude entry is positive; components with non-positive
/// eigenvalue project to zero.
pub fn kernel_pca_init(k: &KernelMatrix, r: usize) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::invalid("kernel PCA needs a square kernel matrix"));
    }
    if r == 0 || r > n {
        return Err(Error::invalid(format!(
            "cannot extract {r} components from {n} sets"
        )));
    }
    let dense = k.to_dmatrix();
    let asym = (&dense - dense.transpose()).amax();
    if asym > 1e-9 {
        return Err(Error::invalid(format!(
            "kernel PCA needs a symmetric kernel (max asymmetry {asym:e})"
        )));
    }
    let centered = double_center(&dense);
    let eig = centered.clone().symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);

    let mut out = DMatrix::zeros(n, r);
    for (c, &idx) in order.iter().take(r).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if lambda <= top * 1e-12 {
            continue;
        }
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v = -v;
        }
        let proj = &centered * v / lambda.sqrt();
        out.set_column(c, &proj);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SetId;
    use crate::kernels::KernelId;

    fn km(n: usize, f: impl Fn(usize, usize) -> f64) -> KernelMatrix {
        let ids: Vec<SetId> = (0..n as u64).map(SetId).collect();
        let values = (0..n * n).map(|x| f(x / n, x % n)).collect();
        KernelMatrix::from_parts(KernelId::Statistical, ids.clone(), ids, values).unwrap()
    }

    #[test]
    fn centering_zeroes_row_and_column_sums() {
        let m = DMatrix::from_fn(4, 4, |i, j| ((i + 1) * (j + 2)) as f64 + (i == j) as u8 as f64);
        let c = double_center(&m);
        for i in 0..4 {
            assert!(c.row(i).sum().abs() < 1e-12);
            assert!(c.column(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn identity_kernel_gives_orthogonal_projections() {
        let k = km(6, |i, j| (i == j) as u8 as f64);
        let p = kernel_pca_init(&k, 3).unwrap();
        let gram = p.transpose() * &p;
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    assert!(gram[(a, b)].abs() < 1e-10, "{gram}");
                }
            }
            assert!(gram[(a, a)] > 0.5);
        }
    }

    #[test]
    fn two_block_kernel_separates_groups() {
        let k = km(8, |i, j| {
            if i == j {
                1.0
            } else if (i < 4) == (j < 4) {
                0.9
            } else {
                0.1
            }
        });
        let p = kernel_pca_init(&k, 1).unwrap();
        let first: Vec<bool> = p.column(0).iter().map(|&v| v >= 0.0).collect();
        assert!(first[..4].iter().all(|&b| b == first[0]));
        assert!(first[4..].iter().all(|&b| b != first[0]));
    }

    #[test]
    fn single_component_is_scaled_top_eigenvector() {
        let k = km(5, |i, j| (-((i as f64 - j as f64).powi(2)) / 4.0).exp());
        let p = kernel_pca_init(&k, 1).unwrap();
        let centered = double_center(&k.to_dmatrix());
        let eig = centered.clone().symmetric_eigen();
        let top = eig.eigenvalues.imax();
        let v = eig.eigenvectors.column(top);
        let expected = v * eig.eigenvalues[top].sqrt();
        let got = p.column(0);
        let agree = (got - &expected).norm().min((got + &expected).norm());
        assert!(agree < 1e-10);
    }

    #[test]
    fn too_many_components_rejected() {
        let k = km(3, |i, j| (i == j) as u8 as f64);
        assert!(kernel_pca_init(&k, 4).is_err());
        assert!(kernel_pca_init(&k, 0).is_err());
    }
}
