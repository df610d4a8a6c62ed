//! First-order constant-coefficient differential operators, their symbols,
//! constant-rank certificates and the characteristic cone.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid operator spec: {0}")]
    Invalid(String),
    #[error("unknown operator preset '{0}'")]
    UnknownPreset(String),
    #[error(
        "operator does not have constant rank (ranks {rank_lo}..={rank_hi} over {samples} samples)"
    )]
    NonConstantRank {
        rank_lo: usize,
        rank_hi: usize,
        samples: usize,
    },
}

/// A first-order operator `sum_i A^i d/dx_i` acting on fields `R^N -> R^n`
/// with values in `R^d`.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    pub name: String,
    /// Source dimension N (the domain is the N-torus / R^N).
    pub dim_domain: usize,
    /// Field dimension n.
    pub dim_field: usize,
    /// Equation count d.
    pub dim_eq: usize,
    /// The coefficient matrices A^1..A^N, each d x n.
    pub matrices: Vec<DMatrix<f64>>,
}

/// Serialized form of an operator spec file.
#[derive(Serialize, Deserialize)]
struct RawSpec {
    name: String,
    #[serde(rename = "N")]
    dim_domain: usize,
    n: usize,
    d: usize,
    /// N matrices, each d rows of n numbers (row-major).
    matrices: Vec<Vec<Vec<f64>>>,
}

impl OperatorSpec {
    pub fn new(
        name: impl Into<String>,
        matrices: Vec<DMatrix<f64>>,
    ) -> Result<Self, OperatorError> {
        if matrices.is_empty() {
            return Err(OperatorError::Invalid("no coefficient matrices".into()));
        }
        let (d, n) = (matrices[0].nrows(), matrices[0].ncols());
        if d == 0 || n == 0 {
            return Err(OperatorError::Invalid("empty coefficient matrix".into()));
        }
        for m in &matrices {
            if m.nrows() != d || m.ncols() != n {
                return Err(OperatorError::Invalid(format!(
                    "coefficient matrices disagree in shape: {}x{} vs {}x{}",
                    m.nrows(),
                    m.ncols(),
                    d,
                    n
                )));
            }
        }
        Ok(OperatorSpec {
            name: name.into(),
            dim_domain: matrices.len(),
            dim_field: n,
            dim_eq: d,
            matrices,
        })
    }

    pub fn from_json(src: &str) -> Result<Self, OperatorError> {
        let raw: RawSpec = serde_json::from_str(src)
            .map_err(|e| OperatorError::Invalid(format!("spec file: {e}")))?;
        if raw.matrices.len() != raw.dim_domain {
            return Err(OperatorError::Dimension {
                what: "matrix count vs N",
                expected: raw.dim_domain,
                got: raw.matrices.len(),
            });
        }
        let mut matrices = Vec::with_capacity(raw.dim_domain);
        for rows in &raw.matrices {
            if rows.len() != raw.d {
                return Err(OperatorError::Dimension {
                    what: "matrix rows vs d",
                    expected: raw.d,
                    got: rows.len(),
                });
            }
            let mut m = DMatrix::zeros(raw.d, raw.n);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != raw.n {
                    return Err(OperatorError::Dimension {
                        what: "matrix columns vs n",
                        expected: raw.n,
                        got: row.len(),
                    });
                }
                for (j, &x) in row.iter().enumerate() {
                    m[(i, j)] = x;
                }
            }
            matrices.push(m);
        }
        OperatorSpec::new(raw.name, matrices)
    }

    pub fn to_json(&self) -> String {
        let raw = RawSpec {
            name: self.name.clone(),
            dim_domain: self.dim_domain,
            n: self.dim_field,
            d: self.dim_eq,
            matrices: self
                .matrices
                .iter()
                .map(|m| {
                    (0..m.nrows())
                        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("spec serialization")
    }

    /// Built-in operators used throughout the tests and the CLI.
    pub fn preset(name: &str) -> Result<Self, OperatorError> {
        match name {
            // A v = div v on R^2
            "div2" => OperatorSpec::new(
                "div2",
                vec![
                    DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                    DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
                ],
            ),
            // A v = curl of a planar field; ker A = gradients of scalars
            "curl2" | "grad-scalar-2d" => OperatorSpec::new(
                "curl2",
                vec![
                    DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
                    DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
                ],
            ),
            // 1-D fields (v1, v2) with A v = v2'
            "line1d" => OperatorSpec::new("line1d", vec![DMatrix::from_row_slice(1, 2, &[0.0, 1.0])]),
            // non-constant-rank example: A^1 = diag(1,0), A^2 = diag(0,1)
            "diag" => OperatorSpec::new(
                "diag",
                vec![
                    DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
                    DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
                ],
            ),
            other => Err(OperatorError::UnknownPreset(other.into())),
        }
    }

    /// The symbol `A(w) = sum_i w_i A^i`. No normalization of `w` is applied.
    pub fn symbol(&self, w: &[f64]) -> Result<DMatrix<f64>, OperatorError> {
        if w.len() != self.dim_domain {
            return Err(OperatorError::Dimension {
                what: "direction length vs N",
                expected: self.dim_domain,
                got: w.len(),
            });
        }
        let mut out = DMatrix::zeros(self.dim_eq, self.dim_field);
        for (wi, a) in w.iter().zip(&self.matrices) {
            out += a * *wi;
        }
        Ok(out)
    }
}

pub fn assemble_symbol(op: &OperatorSpec, w: &[f64]) -> Result<DMatrix<f64>, OperatorError> {
    op.symbol(w)
}

/// Deterministic quasi-uniform directions on S^{N-1}.
///
/// N=1 alternates the two endpoints, N=2 uses equispaced angles, N=3 a
/// Fibonacci sphere, and N>=4 a Kronecker lattice pushed through Box-Muller.
pub fn sphere_directions(dim: usize, samples: usize) -> Vec<DVector<f64>> {
    assert!(dim >= 1 && samples >= 1);
    match dim {
        1 => (0..samples)
            .map(|k| DVector::from_vec(vec![if k % 2 == 0 { 1.0 } else { -1.0 }]))
            .collect(),
        // equispaced angles starting at 0, so coordinate axes are hit
        // whenever 4 | samples
        2 => (0..samples)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / samples as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect(),
        3 => {
            let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
            (0..samples)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / samples as f64;
                    let rho = (1.0 - z * z).max(0.0).sqrt();
                    let phi = 2.0 * std::f64::consts::PI * (k as f64 / golden).fract();
                    DVector::from_vec(vec![rho * phi.cos(), rho * phi.sin(), z])
                })
                .collect()
        }
        _ => {
            // R-sequence in the unit cube, one pair of coordinates per Box-Muller draw.
            let m = if dim % 2 == 0 { dim } else { dim + 1 };
            let mut gamma = 1.5_f64;
            for _ in 0..64 {
                gamma = (1.0 + gamma).powf(1.0 / (m as f64 + 1.0));
            }
            let alphas: Vec<f64> = (1..=m).map(|i| gamma.powi(-(i as i32)).fract()).collect();
            (0..samples)
                .map(|k| {
                    let u: Vec<f64> = alphas
                        .iter()
                        .map(|a| (0.5 + (k as f64 + 1.0) * a).fract())
                        .collect();
                    let mut g = Vec::with_capacity(m);
                    for pair in u.chunks(2) {
                        let (u1, u2) = (pair[0].max(1e-12), pair[1]);
                        let r = (-2.0 * u1.ln()).sqrt();
                        let t = 2.0 * std::f64::consts::PI * u2;
                        g.push(r * t.cos());
                        g.push(r * t.sin());
                    }
                    g.truncate(dim);
                    let mut v = DVector::from_vec(g);
                    let nrm = v.norm();
                    if nrm > 0.0 {
                        v /= nrm;
                    } else {
                        v[0] = 1.0;
                    }
                    v
                })
                .collect()
        }
    }
}

/// Result of sampling `rank A(w)` over the unit sphere.
#[derive(Debug, Clone, Serialize)]
pub struct RankCertificate {
    pub rank: usize,
    pub samples: usize,
    pub tolerance: f64,
    pub constant: bool,
    /// Up to two directions where the rank differs (empty when constant).
    pub witnesses: Vec<Vec<f64>>,
    #[serde(skip)]
    pub witness_ranks: Vec<usize>,
}

/// Samples `rank A(w)` at quasi-uniform sphere directions. The cutoff is
/// relative to the largest singular value seen over all samples.
pub fn verify_constant_rank(
    op: &OperatorSpec,
    samples: usize,
    tol: f64,
) -> Result<RankCertificate, OperatorError> {
    if samples == 0 {
        return Err(OperatorError::Invalid("samples must be >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(OperatorError::Invalid("tolerance must be positive".into()));
    }
    let dirs = sphere_directions(op.dim_domain, samples);
    let mut spectra = Vec::with_capacity(dirs.len());
    let mut sigma_max = 0.0_f64;
    for w in &dirs {
        let a = op.symbol(w.as_slice())?;
        let sv = a.singular_values();
        sigma_max = sigma_max.max(sv.max());
        spectra.push(sv);
    }
    let cutoff = tol * sigma_max;
    let ranks: Vec<usize> = spectra
        .iter()
        .map(|sv| sv.iter().filter(|&&s| s > cutoff).count())
        .collect();
    let rank_lo = *ranks.iter().min().unwrap();
    let rank_hi = *ranks.iter().max().unwrap();
    let constant = rank_lo == rank_hi;
    let (witnesses, witness_ranks) = if constant {
        (Vec::new(), Vec::new())
    } else {
        let lo = ranks.iter().position(|&r| r == rank_lo).unwrap();
        let hi = ranks.iter().position(|&r| r == rank_hi).unwrap();
        (
            vec![
                dirs[lo].as_slice().to_vec(),
                dirs[hi].as_slice().to_vec(),
            ],
            vec![rank_lo, rank_hi],
        )
    };
    Ok(RankCertificate {
        rank: rank_hi,
        samples,
        tolerance: tol,
        constant,
        witnesses,
        witness_ranks,
    })
}

/// Orthonormal basis of `ker A` for a matrix of known rank `r`.
///
/// The row space basis comes from the thin SVD of `A^T`; the kernel is the
/// orthogonal complement, built by greedy Gram-Schmidt over the standard
/// basis (largest residual first, lowest index on ties).
pub fn kernel_basis(a: &DMatrix<f64>, rank: usize) -> Vec<DVector<f64>> {
    let n = a.ncols();
    let kdim = n - rank;
    if kdim == 0 {
        return Vec::new();
    }
    let svd = a.transpose().svd(true, false);
    let u = svd.u.as_ref().expect("svd U");
    let mut frame: Vec<DVector<f64>> = (0..rank).map(|j| u.column(j).into_owned()).collect();
    let mut basis = Vec::with_capacity(kdim);
    for _ in 0..kdim {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for i in 0..n {
            let mut v = DVector::zeros(n);
            v[i] = 1.0;
            for q in &frame {
                let c = q.dot(&v);
                v -= q * c;
            }
            let nrm = v.norm();
            if best.as_ref().map_or(true, |(b, _)| nrm > *b) {
                best = Some((nrm, v));
            }
        }
        let (nrm, mut v) = best.expect("n > 0");
        v /= nrm;
        // second orthogonalization pass for accuracy
        for q in &frame {
            let c = q.dot(&v);
            v -= q * c;
        }
        v /= v.norm();
        frame.push(v.clone());
        basis.push(v);
    }
    basis
}

/// A sampled view of the characteristic cone: per direction, an orthonormal
/// basis of `ker A(w)`.
#[derive(Debug, Clone)]
pub struct ConeSample {
    pub directions: Vec<(DVector<f64>, Vec<DVector<f64>>)>,
    pub span_dimension: usize,
    pub spans_full_space: bool,
}

pub fn sample_characteristic_cone(
    op: &OperatorSpec,
    samples: usize,
    tol: f64,
) -> Result<ConeSample, OperatorError> {
    let cert = verify_constant_rank(op, samples, tol)?;
    if !cert.constant {
        return Err(OperatorError::NonConstantRank {
            rank_lo: *cert.witness_ranks.iter().min().unwrap(),
            rank_hi: cert.rank,
            samples,
        });
    }
    let r = cert.rank;
    let n = op.dim_field;
    let dirs = sphere_directions(op.dim_domain, samples);
    let mut directions = Vec::with_capacity(dirs.len());
    let mut stacked: Vec<f64> = Vec::new();
    let mut kernel_count = 0usize;
    for w in dirs {
        let a = op.symbol(w.as_slice())?;
        let basis = kernel_basis(&a, r);
        for u in &basis {
            stacked.extend_from_slice(u.as_slice());
            kernel_count += 1;
        }
        directions.push((w, basis));
    }
    let span_dimension = if kernel_count == 0 {
        0
    } else {
        let stack = DMatrix::from_row_slice(kernel_count, n, &stacked);
        let sv = stack.singular_values();
        let cutoff = tol * sv.max();
        sv.iter().filter(|&&s| s > cutoff).count()
    };
    Ok(ConeSample {
        directions,
        span_dimension,
        spans_full_space: span_dimension == n,
    })
}
