//! Pointwise linear algebra for the symbol: full-rank factorization,
//! MacDuffee pseudoinverse, the projection onto `ker A(w)` and the
//! generalized inverse satisfying `Q(w) A(w) = I - P(w)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::operator::{OperatorError, OperatorSpec};

#[derive(Debug, Error)]
pub enum PinvError {
    #[error("numerical rank {got} does not match requested rank {expected}")]
    RankMismatch { expected: usize, got: usize },
    #[error("B B^T is not positive definite; B is rank deficient")]
    RankDeficient,
    #[error("direction is not a unit vector (|w| = {norm})")]
    NotUnit { norm: f64 },
    #[error("rank changed from {from} to {to} along the path between steps {index} and {}", index + 1)]
    RankChange {
        index: usize,
        from: usize,
        to: usize,
    },
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

fn numerical_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    let sv = a.singular_values();
    let cutoff = tol * sv.max();
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Factorizes `A = U B` with `U` having `r` orthonormal columns spanning
/// `im(A)` and `B = U^T A` of full row rank.
///
/// Columns of `A` are selected by greedy largest-residual pivoting with
/// lowest-index tie-break, then orthonormalized by (twice-iterated)
/// Gram-Schmidt.
pub fn full_rank_factorize(
    a: &DMatrix<f64>,
    r: usize,
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), PinvError> {
    assert!(r >= 1, "use the r = 0 short-circuit upstream");
    let got = numerical_rank(a, tol);
    if got != r {
        return Err(PinvError::RankMismatch {
            expected: r,
            got,
        });
    }
    let d = a.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(r);
    let mut residuals: Vec<DVector<f64>> = (0..a.ncols()).map(|j| a.column(j).into_owned()).collect();
    for _ in 0..r {
        let (mut pick, mut best) = (0usize, -1.0f64);
        for (j, c) in residuals.iter().enumerate() {
            let nrm = c.norm();
            if nrm > best {
                best = nrm;
                pick = j;
            }
        }
        let mut q = residuals[pick].clone();
        for u in &basis {
            let c = u.dot(&q);
            q -= u * c;
        }
        q /= q.norm();
        basis.push(q.clone());
        for c in residuals.iter_mut() {
            let coef = q.dot(c);
            *c -= &q * coef;
        }
    }
    let mut u = DMatrix::zeros(d, r);
    for (j, q) in basis.iter().enumerate() {
        u.set_column(j, q);
    }
    let b = u.transpose() * a;
    Ok((u, b))
}

/// MacDuffee's formula `A+ = B^T (B B^T)^{-1} U^T`, with the Gram matrix
/// inverted through its Cholesky factor.
pub fn pseudoinverse(u: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, PinvError> {
    let gram = b * b.transpose();
    let chol = gram.cholesky().ok_or(PinvError::RankDeficient)?;
    let inv = chol.inverse();
    Ok(b.transpose() * inv * u.transpose())
}

/// The symbol at a single unit direction together with its factorization,
/// pseudoinverse, kernel projection and generalized inverse.
#[derive(Debug, Clone)]
pub struct SymbolDecomposition {
    pub w: DVector<f64>,
    pub a: DMatrix<f64>,
    pub rank: usize,
    pub u: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub aplus: DMatrix<f64>,
    /// Orthogonal projection of R^n onto ker A(w).
    pub p: DMatrix<f64>,
    /// Generalized inverse with Q A = I - P.
    pub q: DMatrix<f64>,
}

pub fn decompose_symbol(
    op: &OperatorSpec,
    w: &[f64],
    r: usize,
    tol: f64,
) -> Result<SymbolDecomposition, PinvError> {
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(PinvError::NotUnit { norm });
    }
    let a = op.symbol(w)?;
    let n = op.dim_field;
    let d = op.dim_eq;
    if r == 0 {
        let got = numerical_rank(&a, tol);
        if got != 0 {
            return Err(PinvError::RankMismatch { expected: 0, got });
        }
        return Ok(SymbolDecomposition {
            w: DVector::from_column_slice(w),
            a,
            rank: 0,
            u: DMatrix::zeros(d, 0),
            b: DMatrix::zeros(0, n),
            aplus: DMatrix::zeros(n, d),
            p: DMatrix::identity(n, n),
            q: DMatrix::zeros(n, d),
        });
    }
    let (u, b) = full_rank_factorize(&a, r, tol)?;
    let aplus = pseudoinverse(&u, &b)?;
    // A+ A is the orthogonal projection onto the row space, so I - A+ A
    // projects onto the kernel
    let p = DMatrix::identity(n, n) - &aplus * &a;
    Ok(SymbolDecomposition {
        w: DVector::from_column_slice(w),
        a,
        rank: r,
        q: aplus.clone(),
        u,
        b,
        aplus,
        p,
    })
}

/// One step of a continuity probe along a sphere path.
#[derive(Debug, Clone)]
pub struct ProbeStep {
    pub w: Vec<f64>,
    pub delta_p: f64,
    pub delta_q: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuityReport {
    pub max_p_rate: f64,
    pub max_q_rate: f64,
    pub steps: Vec<ProbeStep>,
}

impl ContinuityReport {
    /// CSV rows: direction components, then the per-step difference
    /// quotients of P and Q.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.steps.first() {
            let dims: Vec<String> = (1..=first.w.len()).map(|i| format!("w{i}")).collect();
            out.push_str(&dims.join(","));
            out.push_str(",deltaP,deltaQ\n");
        }
        for s in &self.steps {
            let w: Vec<String> = s.w.iter().map(|x| format!("{x}")).collect();
            out.push_str(&format!("{},{},{}\n", w.join(","), s.delta_p, s.delta_q));
        }
        out
    }
}

/// Max adjacent difference quotients of `P` and `Q` along a path of unit
/// directions. Finite for constant-rank operators; a rank change along the
/// path is reported as an error naming the offending pair.
pub fn continuity_probe(
    op: &OperatorSpec,
    path: &[DVector<f64>],
    tol: f64,
) -> Result<ContinuityReport, PinvError> {
    assert!(path.len() >= 2, "need at least two path points");
    let rank_at = |w: &DVector<f64>| -> Result<usize, PinvError> {
        Ok(numerical_rank(&op.symbol(w.as_slice())?, tol))
    };
    let r = rank_at(&path[0])?;
    let mut prev = decompose_symbol(op, path[0].as_slice(), r, tol)?;
    let mut steps = Vec::with_capacity(path.len() - 1);
    let (mut max_p, mut max_q) = (0.0f64, 0.0f64);
    for (k, w) in path.iter().enumerate().skip(1) {
        let rk = rank_at(w)?;
        if rk != r {
            return Err(PinvError::RankChange {
                index: k - 1,
                from: r,
                to: rk,
            });
        }
        let cur = decompose_symbol(op, w.as_slice(), r, tol)?;
        let h = (&cur.w - &prev.w).norm();
        let (dp, dq) = if h == 0.0 {
            (0.0, 0.0)
        } else {
            (
                (&cur.p - &prev.p).norm() / h,
                (&cur.q - &prev.q).norm() / h,
            )
        };
        max_p = max_p.max(dp);
        max_q = max_q.max(dq);
        steps.push(ProbeStep {
            w: w.as_slice().to_vec(),
            delta_p: dp,
            delta_q: dq,
        });
        prev = cur;
    }
    Ok(ContinuityReport {
        max_p_rate: max_p,
        max_q_rate: max_q,
        steps,
    })
}

/// Great-circle path through e1, e2 (or the two endpoints for N = 1).
pub fn great_circle_path(dim: usize, points: usize) -> Vec<DVector<f64>> {
    assert!(points >= 2);
    if dim == 1 {
        return vec![DVector::from_vec(vec![1.0]); points];
    }
    (0..points)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
            let mut w = DVector::zeros(dim);
            w[0] = t.cos();
            w[1] = t.sin();
            w
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::sphere_directions;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check_penrose(a: &DMatrix<f64>, aplus: &DMatrix<f64>, tol: f64) {
        let scale = a.norm().max(1.0);
        assert!((a * aplus * a - a).norm() / scale < tol, "A A+ A = A");
        let ps = aplus.norm().max(1.0);
        assert!((aplus * a * aplus - aplus).norm() / ps < tol, "A+ A A+ = A+");
        let aa = a * aplus;
        assert!((&aa - aa.transpose()).norm() < tol * scale, "(A A+)^T = A A+");
        let pa = aplus * a;
        assert!((&pa - pa.transpose()).norm() < tol * scale, "(A+ A)^T = A+ A");
    }

    #[test]
    fn single_nonzero_column() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let (u, b) = full_rank_factorize(&a, 1, 1e-12).unwrap();
        assert_relative_eq!(u[(0, 0)].abs(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(b[(0, 0)].abs(), 2.0, epsilon = 1e-14);
        assert!((u * b - a).norm() < 1e-14);
    }

    #[test]
    fn div_symbol_factorization() {
        let op = OperatorSpec::preset("div2").unwrap();
        let a = op.symbol(&[0.6, 0.8]).unwrap();
        let (u, b) = full_rank_factorize(&a, 1, 1e-12).unwrap();
        assert!((u.transpose() * &u - DMatrix::identity(1, 1)).norm() < 1e-12);
        assert!((u * b - &a).norm() / a.norm() < 1e-12);
    }

    #[test]
    fn rank_mismatch_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            full_rank_factorize(&a, 1, 1e-12),
            Err(PinvError::RankMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn random_rank_r_matrices_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
        for _ in 0..100 {
            let d = rng.gen_range(1..=5);
            let n = rng.gen_range(1..=5);
            let r = rng.gen_range(1..=d.min(n));
            let x = DMatrix::from_fn(d, r, |_, _| rng.gen_range(-1.0..1.0));
            let y = DMatrix::from_fn(r, n, |_, _| rng.gen_range(-1.0..1.0));
            let a = x * y;
            if numerical_rank(&a, 1e-9) != r {
                continue; // degenerate draw
            }
            let (u, b) = full_rank_factorize(&a, r, 1e-9).unwrap();
            assert!((&u * &b - &a).norm() / a.norm() <= 1e-12);
            let aplus = pseudoinverse(&u, &b).unwrap();
            check_penrose(&a, &aplus, 1e-10);
        }
    }

    #[test]
    fn scalar_pseudoinverse() {
        let u = DMatrix::from_row_slice(1, 1, &[1.0]);
        let b = DMatrix::from_row_slice(1, 1, &[2.0]);
        let aplus = pseudoinverse(&u, &b).unwrap();
        assert_relative_eq!(aplus[(0, 0)], 0.5);
    }

    #[test]
    fn div_pseudoinverse_is_transposed_direction() {
        let op = OperatorSpec::preset("div2").unwrap();
        let dec = decompose_symbol(&op, &[0.6, 0.8], 1, 1e-12).unwrap();
        assert_relative_eq!(dec.aplus[(0, 0)], 0.6, epsilon = 1e-12);
        assert_relative_eq!(dec.aplus[(1, 0)], 0.8, epsilon = 1e-12);
        check_penrose(&dec.a, &dec.aplus, 1e-10);
    }

    #[test]
    fn zero_rank_short_circuit() {
        let op = OperatorSpec::new(
            "zero",
            vec![DMatrix::zeros(1, 2)],
        )
        .unwrap();
        let dec = decompose_symbol(&op, &[1.0], 0, 1e-12).unwrap();
        assert_eq!(dec.aplus, DMatrix::zeros(2, 1));
        assert_eq!(dec.p, DMatrix::identity(2, 2));
        assert_eq!(dec.q, DMatrix::zeros(2, 1));
    }

    #[test]
    fn div_projection_at_e1() {
        let op = OperatorSpec::preset("div2").unwrap();
        let dec = decompose_symbol(&op, &[1.0, 0.0], 1, 1e-12).unwrap();
        let p_ref = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!((&dec.p - p_ref).norm() < 1e-12);
        assert_relative_eq!(dec.q[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(dec.q[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn curl_projection_at_e2() {
        let op = OperatorSpec::preset("curl2").unwrap();
        let dec = decompose_symbol(&op, &[0.0, 1.0], 1, 1e-12).unwrap();
        // A = [-1 0]
        assert_relative_eq!(dec.a[(0, 0)], -1.0);
        let p_ref = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!((&dec.p - p_ref).norm() < 1e-10);
        let qa = &dec.q * &dec.a;
        let imp = DMatrix::identity(2, 2) - &dec.p;
        assert!((qa - imp).norm() < 1e-10);
        assert!((&dec.p * &dec.p - &dec.p).norm() < 1e-10);
    }

    #[test]
    fn line1d_kernel_is_first_axis() {
        let op = OperatorSpec::preset("line1d").unwrap();
        let dec = decompose_symbol(&op, &[1.0], 1, 1e-12).unwrap();
        let p_ref = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((&dec.p - p_ref).norm() < 1e-12);
    }

    #[test]
    fn decomposition_identities_on_sampled_directions() {
        for name in ["div2", "curl2", "line1d"] {
            let op = OperatorSpec::preset(name).unwrap();
            for w in sphere_directions(op.dim_domain, 100) {
                let dec = decompose_symbol(&op, w.as_slice(), 1, 1e-12).unwrap();
                let scale = dec.a.norm();
                assert!((dec.u.transpose() * &dec.u - DMatrix::identity(1, 1)).norm() < 1e-12);
                assert!((&dec.u * &dec.b - &dec.a).norm() / scale < 1e-12);
                check_penrose(&dec.a, &dec.aplus, 1e-10);
                assert!((&dec.p * &dec.p - &dec.p).norm() < 1e-10, "{name}: P^2 = P");
                assert!((&dec.p - dec.p.transpose()).norm() < 1e-10, "{name}: P^T = P");
                assert!((&dec.a * &dec.p).norm() < 1e-10 * scale, "{name}: A P = 0");
                let n = op.dim_field;
                let qa = &dec.q * &dec.a;
                assert!(
                    (qa - (DMatrix::identity(n, n) - &dec.p)).norm() < 1e-10,
                    "{name}: Q A = I - P"
                );
            }
        }
    }

    #[test]
    fn parity_under_direction_flip() {
        for name in ["div2", "curl2"] {
            let op = OperatorSpec::preset(name).unwrap();
            for w in sphere_directions(2, 64) {
                let neg: Vec<f64> = w.iter().map(|x| -x).collect();
                let d1 = decompose_symbol(&op, w.as_slice(), 1, 1e-12).unwrap();
                let d2 = decompose_symbol(&op, &neg, 1, 1e-12).unwrap();
                assert!((&d1.p - &d2.p).norm() < 1e-10, "{name}: P(w) = P(-w)");
                assert!((&d1.q + &d2.q).norm() < 1e-10, "{name}: Q(-w) = -Q(w)");
            }
        }
    }

    #[test]
    fn projection_matches_svd_oracle() {
        for name in ["div2", "curl2", "line1d"] {
            let op = OperatorSpec::preset(name).unwrap();
            for w in sphere_directions(op.dim_domain, 100) {
                let dec = decompose_symbol(&op, w.as_slice(), 1, 1e-12).unwrap();
                let svd = dec.a.clone().svd(false, true);
                let v_t = svd.v_t.unwrap();
                // row-space projection from the right singular vectors of
                // the nonzero singular values
                let n = op.dim_field;
                let mut proj = DMatrix::zeros(n, n);
                for i in 0..v_t.nrows() {
                    if svd.singular_values[i] > 1e-12 {
                        let v: DVector<f64> = v_t.row(i).transpose();
                        proj += &v * v.transpose();
                    }
                }
                let p_ref = DMatrix::identity(n, n) - proj;
                assert!((&dec.p - p_ref).norm() < 1e-9, "{name}");
            }
        }
    }

    #[test]
    fn continuity_probe_is_stable_under_refinement() {
        let op = OperatorSpec::preset("div2").unwrap();
        let coarse = continuity_probe(&op, &great_circle_path(2, 1000), 1e-9).unwrap();
        let fine = continuity_probe(&op, &great_circle_path(2, 2000), 1e-9).unwrap();
        assert!(coarse.max_p_rate.is_finite());
        assert!(fine.max_p_rate <= coarse.max_p_rate * 1.5 + 1e-9);
        assert!(fine.max_q_rate <= coarse.max_q_rate * 1.5 + 1e-9);
    }

    #[test]
    fn continuity_probe_detects_rank_change() {
        let op = OperatorSpec::preset("diag").unwrap();
        let err = continuity_probe(&op, &great_circle_path(2, 256), 1e-9);
        assert!(matches!(err, Err(PinvError::RankChange { .. })));
    }

    #[test]
    fn constant_symbol_has_zero_deltas() {
        let op = OperatorSpec::new(
            "const1d",
            vec![DMatrix::from_row_slice(1, 2, &[1.0, 1.0])],
        )
        .unwrap();
        let rep = continuity_probe(&op, &great_circle_path(1, 10), 1e-9).unwrap();
        assert_eq!(rep.max_p_rate, 0.0);
        assert_eq!(rep.max_q_rate, 0.0);
    }

    #[test]
    fn rejects_non_unit_direction() {
        let op = OperatorSpec::preset("div2").unwrap();
        assert!(matches!(
            decompose_symbol(&op, &[1.0, 1.0], 1, 1e-12),
            Err(PinvError::NotUnit { .. })
        ));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let op = OperatorSpec::preset("div2").unwrap();
        let rep = continuity_probe(&op, &great_circle_path(2, 8), 1e-9).unwrap();
        let csv = rep.to_csv();
        assert!(csv.starts_with("w1,w2,deltaP,deltaQ\n"));
        assert_eq!(csv.lines().count(), 8);
    }
}
