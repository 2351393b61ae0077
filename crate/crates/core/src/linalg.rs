//! Small dense symmetric positive-definite solves for the regression fits.
//!
//! Matrices are row-major `n x n` slices. Sizes here are a few dozen at most,
//! so a plain Cholesky factorisation is all that is needed.

/// Cholesky factor `L` (lower triangle, row-major) of an SPD matrix.
///
/// Returns the index of the first pivot that is not sufficiently positive.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>, usize> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        // relative tolerance against the original diagonal
        if !(d > 1e-12 * a[j * n + j].abs().max(1e-300)) {
            return Err(j);
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Ok(l)
}

/// Solve `L L^T x = b` given the factor from [`cholesky`].
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Inverse of an SPD matrix from its Cholesky factor.
pub fn cholesky_inverse(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = cholesky_solve(l, n, &e);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    inv
}

/// Columns (by index) that are numerically linear combinations of earlier
/// columns, judged on the Gram matrix `X^T X`.
pub fn dependent_columns(gram: &[f64], n: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..n {
        let mut trial = kept.clone();
        trial.push(j);
        let m = trial.len();
        let sub: Vec<f64> = trial
            .iter()
            .flat_map(|&r| trial.iter().map(move |&c| gram[r * n + c]))
            .collect();
        match cholesky_with_tol(&sub, m, 1e-9) {
            Ok(_) => kept.push(j),
            Err(_) => dependent.push(j),
        }
    }
    dependent
}

fn cholesky_with_tol(a: &[f64], n: usize, tol: f64) -> Result<(), usize> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > tol * a[j * n + j].abs()) {
            return Err(j);
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Ok(())
}

/// Ordinary least squares via the normal equations. `rows` excludes the
/// intercept; the returned vector is `[intercept, coef...]`.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64], ridge: f64) -> Result<Vec<f64>, usize> {
    let p = rows.first().map_or(0, |r| r.len()) + 1;
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    let mut x = vec![0.0; p];
    for (row, &target) in rows.iter().zip(y) {
        x[0] = 1.0;
        x[1..].copy_from_slice(row);
        for i in 0..p {
            xty[i] += x[i] * target;
            for j in 0..=i {
                xtx[i * p + j] += x[i] * x[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[j * p + i] = xtx[i * p + j];
        }
        if i > 0 {
            xtx[i * p + i] += ridge;
        }
    }
    let l = cholesky(&xtx, p)?;
    Ok(cholesky_solve(&l, p, &xty))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        let x = cholesky_solve(&l, 2, &[2.0, 1.0]);
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-12);
        let inv = cholesky_inverse(&l, 2);
        assert!((inv[0] - 0.375).abs() < 1e-12);
        assert!((inv[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn flags_dependent_column() {
        // columns: a, b, a + b
        let cols = [[1.0, 2.0, 3.0, 5.0], [0.0, 1.0, 0.0, 2.0]];
        let third: Vec<f64> = (0..4).map(|i| cols[0][i] + cols[1][i]).collect();
        let all = [cols[0].to_vec(), cols[1].to_vec(), third];
        let mut gram = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                gram[i * 3 + j] = all[i].iter().zip(&all[j]).map(|(a, b)| a * b).sum();
            }
        }
        assert_eq!(dependent_columns(&gram, 3), vec![2]);
    }

    #[test]
    fn least_squares_recovers_exact_line() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..5).map(|i| 3.0 + 2.0 * i as f64).collect();
        let b = least_squares(&rows, &y, 0.0).unwrap();
        assert!((b[0] - 3.0).abs() < 1e-10 && (b[1] - 2.0).abs() < 1e-10);
    }
}
