//! Discrete periodic vector fields on the N-torus, FFT-based multiplier
//! operators, the spectral A-free projection and the p = 2 negative-Sobolev
//! surrogate norm.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::operator::{OperatorError, OperatorSpec};
use crate::pinv::{decompose_symbol, PinvError};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("operator does not have constant rank; projection multiplier undefined")]
    NonConstantRank,
    #[error("bad AFLD data: {0}")]
    Format(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Pinv(#[from] PinvError),
}

/// Grid-sampled vector field `v: T_N -> R^n`.
///
/// Samples live at lattice points `x_k = (k_1/G_1, ..., k_N/G_N)`.
/// Layout is component-major, then lattice row-major with the last index
/// fastest — identical to the AFLD file layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    pub dims: Vec<usize>,
    pub ncomp: usize,
    pub values: Vec<f64>,
}

/// Fourier coefficients of a field, same layout as `PeriodicField`.
/// Coefficient index `k` along an axis of size `G` carries the lattice
/// frequency `k` for `k <= G/2` and `k - G` otherwise.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub dims: Vec<usize>,
    pub ncomp: usize,
    pub coeffs: Vec<Complex64>,
}

pub fn lattice_size(dims: &[usize]) -> usize {
    dims.iter().product()
}

/// Signed lattice frequency of coefficient index `k` on an axis of size `g`.
pub fn freq_of_index(k: usize, g: usize) -> i64 {
    if k <= g / 2 {
        k as i64
    } else {
        k as i64 - g as i64
    }
}

impl PeriodicField {
    pub fn zeros(dims: &[usize], ncomp: usize) -> Self {
        PeriodicField {
            dims: dims.to_vec(),
            ncomp,
            values: vec![0.0; ncomp * lattice_size(dims)],
        }
    }

    /// Samples `f(x, component)` at the lattice points, `x` in `[0,1)^N`.
    pub fn from_fn(dims: &[usize], ncomp: usize, f: impl Fn(&[f64], usize) -> f64) -> Self {
        let m = lattice_size(dims);
        let n_dim = dims.len();
        let mut values = vec![0.0; ncomp * m];
        let mut idx = vec![0usize; n_dim];
        let mut x = vec![0.0f64; n_dim];
        for flat in 0..m {
            let mut rem = flat;
            for (a, &g) in dims.iter().enumerate().rev() {
                idx[a] = rem % g;
                rem /= g;
            }
            for a in 0..n_dim {
                x[a] = idx[a] as f64 / dims[a] as f64;
            }
            for c in 0..ncomp {
                values[c * m + flat] = f(&x, c);
            }
        }
        PeriodicField {
            dims: dims.to_vec(),
            ncomp,
            values,
        }
    }

    pub fn lattice_len(&self) -> usize {
        lattice_size(&self.dims)
    }

    pub fn mean(&self) -> Vec<f64> {
        let m = self.lattice_len() as f64;
        (0..self.ncomp)
            .map(|c| self.component(c).iter().sum::<f64>() / m)
            .collect()
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let m = self.lattice_len();
        &self.values[c * m..(c + 1) * m]
    }

    /// Mean-square L2 norm on the torus, `(avg |v(x)|^2)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        let m = self.lattice_len() as f64;
        (self.values.iter().map(|v| v * v).sum::<f64>() / m).sqrt()
    }

    /// Forward transform with the Fourier-coefficient normalization:
    /// a constant field has all its mass in the zero mode.
    pub fn fft(&self) -> Spectrum {
        let m = self.lattice_len();
        let mut coeffs: Vec<Complex64> = self
            .values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        let mut planner = FftPlanner::new();
        for c in 0..self.ncomp {
            fft_nd(
                &mut planner,
                &mut coeffs[c * m..(c + 1) * m],
                &self.dims,
                true,
            );
        }
        let scale = 1.0 / m as f64;
        for z in coeffs.iter_mut() {
            *z *= scale;
        }
        Spectrum {
            dims: self.dims.clone(),
            ncomp: self.ncomp,
            coeffs,
        }
    }
}

impl Spectrum {
    pub fn lattice_len(&self) -> usize {
        lattice_size(&self.dims)
    }

    /// Inverse transform; the imaginary residue is discarded.
    pub fn ifft(&self) -> PeriodicField {
        let m = self.lattice_len();
        let mut work = self.coeffs.clone();
        let mut planner = FftPlanner::new();
        for c in 0..self.ncomp {
            fft_nd(&mut planner, &mut work[c * m..(c + 1) * m], &self.dims, false);
        }
        PeriodicField {
            dims: self.dims.clone(),
            ncomp: self.ncomp,
            values: work.iter().map(|z| z.re).collect(),
        }
    }

    /// Largest imaginary part left by the inverse transform; near zero for
    /// Hermitian spectra.
    pub fn ifft_imag_residue(&self) -> f64 {
        let m = self.lattice_len();
        let mut work = self.coeffs.clone();
        let mut planner = FftPlanner::new();
        let mut worst = 0.0f64;
        for c in 0..self.ncomp {
            fft_nd(&mut planner, &mut work[c * m..(c + 1) * m], &self.dims, false);
            for z in &work[c * m..(c + 1) * m] {
                worst = worst.max(z.im.abs());
            }
        }
        worst
    }

    /// Plain l2 norm of the coefficients; Parseval pairs this with the
    /// grid mean-square norm.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Spectral surrogate for the W^{-1,2} norm:
    /// `(sum |u^(lambda)|^2 / (1 + |2 pi lambda|^2))^{1/2}`.
    pub fn neg_sobolev_norm(&self) -> f64 {
        let m = self.lattice_len();
        let mut total = 0.0;
        for c in 0..self.ncomp {
            for (flat, z) in self.coeffs[c * m..(c + 1) * m].iter().enumerate() {
                let lam = self.freq_at(flat);
                let two_pi_sq: f64 = lam
                    .iter()
                    .map(|&l| {
                        let t = 2.0 * std::f64::consts::PI * l as f64;
                        t * t
                    })
                    .sum();
                total += z.norm_sqr() / (1.0 + two_pi_sq);
            }
        }
        total.sqrt()
    }

    /// Signed frequency vector of a flat lattice index.
    pub fn freq_at(&self, flat: usize) -> Vec<i64> {
        let mut rem = flat;
        let mut out = vec![0i64; self.dims.len()];
        for (a, &g) in self.dims.iter().enumerate().rev() {
            out[a] = freq_of_index(rem % g, g);
            rem /= g;
        }
        out
    }
}

/// In-place N-dimensional FFT over a row-major (last index fastest) block.
fn fft_nd(planner: &mut FftPlanner<f64>, data: &mut [Complex64], dims: &[usize], forward: bool) {
    let m: usize = dims.iter().product();
    debug_assert_eq!(data.len(), m);
    let mut stride = 1usize;
    for &g in dims.iter().rev() {
        let fft = if forward {
            planner.plan_fft_forward(g)
        } else {
            planner.plan_fft_inverse(g)
        };
        let mut line = vec![Complex64::default(); g];
        let block = stride * g;
        for base in (0..m).step_by(block) {
            for off in 0..stride {
                for i in 0..g {
                    line[i] = data[base + off + i * stride];
                }
                fft.process(&mut line);
                for i in 0..g {
                    data[base + off + i * stride] = line[i];
                }
            }
        }
        stride *= g;
    }
}

/// True when the mode carries the self-aliased Nyquist frequency `G/2` on
/// some even axis. Such a mode has no conjugate partner, and a
/// direction-dependent multiplier applied to it would break the Hermitian
/// symmetry that keeps fields real — so every spectral operator here zeroes
/// these modes.
pub fn has_nyquist(lam: &[i64], dims: &[usize]) -> bool {
    lam.iter()
        .zip(dims)
        .any(|(&l, &g)| g % 2 == 0 && l == (g / 2) as i64)
}

/// What a multiplier does to the zero mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroModeRule {
    PreserveMean,
    ZeroMean,
}

/// A Fourier multiplier `T_Theta`: a matrix per nonzero frequency
/// direction, degree-0 homogeneous by construction since it only ever sees
/// the unit vector `lambda/|lambda|`.
pub struct MultiplierOp {
    pub theta: Box<dyn Fn(&[f64]) -> DMatrix<f64> + Sync + Send>,
    pub out_dim: usize,
    pub zero_mode: ZeroModeRule,
}

impl MultiplierOp {
    pub fn identity(n: usize, zero_mode: ZeroModeRule) -> Self {
        MultiplierOp {
            theta: Box::new(move |_| DMatrix::identity(n, n)),
            out_dim: n,
            zero_mode,
        }
    }
}

pub fn apply_multiplier(op: &MultiplierOp, v: &PeriodicField) -> Result<PeriodicField, FieldError> {
    let spec = v.fft();
    let out = apply_multiplier_spectral(op, &spec)?;
    Ok(out.ifft())
}

pub fn apply_multiplier_spectral(op: &MultiplierOp, spec: &Spectrum) -> Result<Spectrum, FieldError> {
    let m = spec.lattice_len();
    let n = spec.ncomp;
    let mut out = Spectrum {
        dims: spec.dims.clone(),
        ncomp: op.out_dim,
        coeffs: vec![Complex64::default(); op.out_dim * m],
    };
    let mut vin = vec![Complex64::default(); n];
    for flat in 0..m {
        let lam = spec.freq_at(flat);
        if lam.iter().all(|&l| l == 0) {
            if op.zero_mode == ZeroModeRule::PreserveMean {
                if op.out_dim != n {
                    return Err(FieldError::Dimension(
                        "preserve-mean requires a square multiplier".into(),
                    ));
                }
                for c in 0..n {
                    out.coeffs[c * m + flat] = spec.coeffs[c * m + flat];
                }
            }
            continue;
        }
        if has_nyquist(&lam, &spec.dims) {
            continue;
        }
        let norm = (lam.iter().map(|&l| (l * l) as f64).sum::<f64>()).sqrt();
        let dir: Vec<f64> = lam.iter().map(|&l| l as f64 / norm).collect();
        let theta = (op.theta)(&dir);
        if theta.ncols() != n || theta.nrows() != op.out_dim {
            return Err(FieldError::Dimension(format!(
                "multiplier is {}x{}, field has {} components",
                theta.nrows(),
                theta.ncols(),
                n
            )));
        }
        for c in 0..n {
            vin[c] = spec.coeffs[c * m + flat];
        }
        for i in 0..op.out_dim {
            let mut acc = Complex64::default();
            for c in 0..n {
                acc += theta[(i, c)] * vin[c];
            }
            out.coeffs[i * m + flat] = acc;
        }
    }
    Ok(out)
}

/// Projection of a field onto the A-free subspace: the kernel projection
/// `P(lambda/|lambda|)` mode by mode, mean preserved.
pub fn project_afree(op: &OperatorSpec, v: &PeriodicField) -> Result<PeriodicField, FieldError> {
    let proj = afree_projector(op)?;
    apply_multiplier(&proj, v)
}

/// Builds the A-free projection multiplier once so repeated applications
/// skip the constant-rank check.
pub fn afree_projector(op: &OperatorSpec) -> Result<MultiplierOp, FieldError> {
    let cert = crate::operator::verify_constant_rank(op, 256, 1e-9)?;
    if !cert.constant {
        return Err(FieldError::NonConstantRank);
    }
    let r = cert.rank;
    let n = op.dim_field;
    let op = op.clone();
    Ok(MultiplierOp {
        theta: Box::new(move |w| {
            decompose_symbol(&op, w, r, 1e-12)
                .map(|dec| dec.p)
                .unwrap_or_else(|_| DMatrix::identity(n, n))
        }),
        out_dim: n,
        zero_mode: ZeroModeRule::PreserveMean,
    })
}

/// A-free projection with the per-mode kernel matrices precomputed for one
/// fixed grid, so repeated projections inside an optimizer cost one FFT
/// round trip plus small dense mat-vecs.
pub struct ProjectionKernel {
    dims: Vec<usize>,
    ncomp: usize,
    /// One matrix per flat lattice index; `None` marks the zero mode,
    /// which is passed through unchanged (mean preserved).
    mats: Vec<Option<DMatrix<f64>>>,
}

impl ProjectionKernel {
    pub fn new(op: &OperatorSpec, dims: &[usize]) -> Result<Self, FieldError> {
        if dims.len() != op.dim_domain {
            return Err(FieldError::Dimension(format!(
                "grid is {}-dimensional, operator wants N = {}",
                dims.len(),
                op.dim_domain
            )));
        }
        let cert = crate::operator::verify_constant_rank(op, 256, 1e-9)?;
        if !cert.constant {
            return Err(FieldError::NonConstantRank);
        }
        let r = cert.rank;
        let m = lattice_size(dims);
        let probe = Spectrum {
            dims: dims.to_vec(),
            ncomp: 1,
            coeffs: vec![Complex64::default(); m],
        };
        let mut mats = Vec::with_capacity(m);
        for flat in 0..m {
            let lam = probe.freq_at(flat);
            if lam.iter().all(|&l| l == 0) {
                mats.push(None);
                continue;
            }
            if has_nyquist(&lam, dims) {
                mats.push(Some(DMatrix::zeros(op.dim_field, op.dim_field)));
                continue;
            }
            let norm = (lam.iter().map(|&l| (l * l) as f64).sum::<f64>()).sqrt();
            let dir: Vec<f64> = lam.iter().map(|&l| l as f64 / norm).collect();
            let dec = decompose_symbol(op, &dir, r, 1e-12)?;
            mats.push(Some(dec.p));
        }
        Ok(ProjectionKernel {
            dims: dims.to_vec(),
            ncomp: op.dim_field,
            mats,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn project(&self, v: &PeriodicField) -> Result<PeriodicField, FieldError> {
        if v.dims != self.dims || v.ncomp != self.ncomp {
            return Err(FieldError::Dimension(
                "field does not match the kernel's grid".into(),
            ));
        }
        let mut spec = v.fft();
        let m = spec.lattice_len();
        let n = self.ncomp;
        let mut vin = vec![Complex64::default(); n];
        for flat in 0..m {
            let Some(p) = &self.mats[flat] else { continue };
            for c in 0..n {
                vin[c] = spec.coeffs[c * m + flat];
            }
            for i in 0..n {
                let mut acc = Complex64::default();
                for c in 0..n {
                    acc += p[(i, c)] * vin[c];
                }
                spec.coeffs[i * m + flat] = acc;
            }
        }
        Ok(spec.ifft())
    }
}

/// Exact spectral differentiation: `(A v)^(lambda) = 2 pi i A(lambda) v^(lambda)`.
/// Nyquist modes on even axes are zeroed so the output stays real.
pub fn apply_operator_spectral(
    op: &OperatorSpec,
    v: &PeriodicField,
) -> Result<PeriodicField, FieldError> {
    if v.ncomp != op.dim_field {
        return Err(FieldError::Dimension(format!(
            "field has {} components, operator wants {}",
            v.ncomp, op.dim_field
        )));
    }
    if v.dims.len() != op.dim_domain {
        return Err(FieldError::Dimension(format!(
            "field is {}-dimensional, operator wants N = {}",
            v.dims.len(),
            op.dim_domain
        )));
    }
    let spec = v.fft();
    let m = spec.lattice_len();
    let d = op.dim_eq;
    let mut out = Spectrum {
        dims: spec.dims.clone(),
        ncomp: d,
        coeffs: vec![Complex64::default(); d * m],
    };
    let two_pi_i = Complex64::new(0.0, 2.0 * std::f64::consts::PI);
    for flat in 0..m {
        let lam = spec.freq_at(flat);
        if has_nyquist(&lam, &spec.dims) {
            continue;
        }
        let lam_f: Vec<f64> = lam.iter().map(|&l| l as f64).collect();
        let symbol = op.symbol(&lam_f)?;
        for i in 0..d {
            let mut acc = Complex64::default();
            for c in 0..v.ncomp {
                acc += symbol[(i, c)] * spec.coeffs[c * m + flat];
            }
            out.coeffs[i * m + flat] = two_pi_i * acc;
        }
    }
    Ok(out.ifft())
}

pub fn neg_sobolev_norm(v: &PeriodicField) -> f64 {
    v.fft().neg_sobolev_norm()
}

/// Largest spectral A-residual `|A(lambda) v^(lambda)|` over nonzero modes.
pub fn spectral_afree_residual(op: &OperatorSpec, v: &PeriodicField) -> Result<f64, FieldError> {
    let spec = v.fft();
    let m = spec.lattice_len();
    let mut worst = 0.0f64;
    for flat in 0..m {
        let lam = spec.freq_at(flat);
        if lam.iter().all(|&l| l == 0) {
            continue;
        }
        let norm = (lam.iter().map(|&l| (l * l) as f64).sum::<f64>()).sqrt();
        let dir: Vec<f64> = lam.iter().map(|&l| l as f64 / norm).collect();
        let symbol = op.symbol(&dir)?;
        let mut res = 0.0;
        for i in 0..op.dim_eq {
            let mut acc = Complex64::default();
            for c in 0..v.ncomp.min(op.dim_field) {
                acc += symbol[(i, c)] * spec.coeffs[c * m + flat];
            }
            res += acc.norm_sqr();
        }
        worst = worst.max(res.sqrt());
    }
    Ok(worst)
}

const AFLD_MAGIC: &[u8; 8] = b"AFLD0001";

/// Serializes a field in the AFLD format: magic, LE u32 N, u32 n,
/// u32 dims[N], then f64 samples in the in-memory layout.
pub fn to_afld_bytes(v: &PeriodicField) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * (2 + v.dims.len()) + 8 * v.values.len());
    out.extend_from_slice(AFLD_MAGIC);
    out.extend_from_slice(&(v.dims.len() as u32).to_le_bytes());
    out.extend_from_slice(&(v.ncomp as u32).to_le_bytes());
    for &g in &v.dims {
        out.extend_from_slice(&(g as u32).to_le_bytes());
    }
    for &x in &v.values {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn from_afld_bytes(bytes: &[u8]) -> Result<PeriodicField, FieldError> {
    let err = |m: &str| FieldError::Format(m.into());
    if bytes.len() < 16 || &bytes[..8] != AFLD_MAGIC {
        return Err(err("missing AFLD0001 magic"));
    }
    let read_u32 = |off: usize| -> Result<u32, FieldError> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| err("truncated header"))
    };
    let n_dim = read_u32(8)? as usize;
    let ncomp = read_u32(12)? as usize;
    if n_dim == 0 || ncomp == 0 {
        return Err(err("zero dimensions"));
    }
    let mut dims = Vec::with_capacity(n_dim);
    for a in 0..n_dim {
        dims.push(read_u32(16 + 4 * a)? as usize);
    }
    let m = lattice_size(&dims);
    let data_off = 16 + 4 * n_dim;
    let expected = ncomp
        .checked_mul(m)
        .ok_or_else(|| err("size overflow"))?;
    let data = &bytes[data_off..];
    if data.len() != expected * 8 {
        return Err(err("sample payload has the wrong length"));
    }
    let values = data
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(PeriodicField {
        dims,
        ncomp,
        values,
    })
}

/// Text export: one row per lattice point, index tuple then components.
pub fn to_csv(v: &PeriodicField) -> String {
    let n_dim = v.dims.len();
    let m = v.lattice_len();
    let mut out = String::new();
    let idx_hdr: Vec<String> = (1..=n_dim).map(|a| format!("k{a}")).collect();
    let comp_hdr: Vec<String> = (1..=v.ncomp).map(|c| format!("v{c}")).collect();
    out.push_str(&format!("{},{}\n", idx_hdr.join(","), comp_hdr.join(",")));
    let mut idx = vec![0usize; n_dim];
    for flat in 0..m {
        let mut rem = flat;
        for (a, &g) in v.dims.iter().enumerate().rev() {
            idx[a] = rem % g;
            rem /= g;
        }
        let ix: Vec<String> = idx.iter().map(|k| k.to_string()).collect();
        let vals: Vec<String> = (0..v.ncomp).map(|c| format!("{}", v.values[c * m + flat])).collect();
        out.push_str(&format!("{},{}\n", ix.join(","), vals.join(",")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(dims: &[usize], ncomp: usize, seed: u64) -> PeriodicField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = PeriodicField::zeros(dims, ncomp);
        for v in f.values.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        f
    }

    #[test]
    fn constant_field_spectrum_is_zero_mode() {
        let f = PeriodicField::from_fn(&[16, 16], 2, |_, c| if c == 0 { 3.5 } else { -1.25 });
        let spec = f.fft();
        let m = spec.lattice_len();
        assert_relative_eq!(spec.coeffs[0].re, 3.5, epsilon = 1e-12);
        assert_relative_eq!(spec.coeffs[m].re, -1.25, epsilon = 1e-12);
        for (flat, z) in spec.coeffs.iter().enumerate() {
            if flat % m != 0 {
                assert!(z.norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn pure_tone_has_two_modes() {
        let f = PeriodicField::from_fn(&[16, 16], 1, |x, _| (2.0 * std::f64::consts::PI * x[0]).sin());
        let spec = f.fft();
        let mut nonzero = 0;
        for (flat, z) in spec.coeffs.iter().enumerate() {
            if z.norm() > 1e-12 {
                nonzero += 1;
                let lam = spec.freq_at(flat);
                assert_eq!(lam[0].abs(), 1);
                assert_eq!(lam[1], 0);
                assert_relative_eq!(z.norm(), 0.5, epsilon = 1e-12);
            }
        }
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn fft_round_trip() {
        for dims in [vec![16, 16], vec![8, 4], vec![12]] {
            let f = random_field(&dims, 2, 7);
            let back = f.fft().ifft();
            let err: f64 = f
                .values
                .iter()
                .zip(&back.values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err / f.l2_norm().max(1e-300) < 1e-12);
        }
    }

    #[test]
    fn hermitian_symmetry_of_real_fields() {
        let f = random_field(&[8, 8], 1, 3);
        let spec = f.fft();
        let g = 8;
        for k1 in 0..g {
            for k2 in 0..g {
                let flat = k1 * g + k2;
                let conj_flat = ((g - k1) % g) * g + (g - k2) % g;
                let a = spec.coeffs[flat];
                let b = spec.coeffs[conj_flat].conj();
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn parseval_identity() {
        let f = random_field(&[32, 32], 2, 11);
        assert_relative_eq!(f.l2_norm(), f.fft().l2_norm(), epsilon = 1e-12);
    }

    #[test]
    fn identity_multiplier_preserve_mean_is_identity() {
        // odd grid: no Nyquist modes, so the identity multiplier is exact
        let f = random_field(&[15, 15], 2, 5);
        let id = MultiplierOp::identity(2, ZeroModeRule::PreserveMean);
        let g = apply_multiplier(&id, &f).unwrap();
        for (a, b) in f.values.iter().zip(&g.values) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_multiplier_zero_mean_subtracts_mean() {
        let f = random_field(&[15, 15], 2, 5);
        let id = MultiplierOp::identity(2, ZeroModeRule::ZeroMean);
        let g = apply_multiplier(&id, &f).unwrap();
        let mean = f.mean();
        let m = f.lattice_len();
        for c in 0..2 {
            for k in 0..m {
                assert_relative_eq!(g.values[c * m + k], f.values[c * m + k] - mean[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gradient_field_is_fixed_by_curl_projection() {
        // v = grad u for u = sin(2 pi x1) sin(2 pi x2), built spectrally
        let op = OperatorSpec::preset("curl2").unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        let v = PeriodicField::from_fn(&[32, 32], 2, |x, c| match c {
            0 => tau * (tau * x[0]).cos() * (tau * x[1]).sin(),
            _ => tau * (tau * x[0]).sin() * (tau * x[1]).cos(),
        });
        let p = project_afree(&op, &v).unwrap();
        let diff: f64 = v
            .values
            .iter()
            .zip(&p.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff / v.l2_norm() < 1e-10);
    }

    #[test]
    fn projection_is_idempotent_orthogonal_and_afree() {
        for name in ["div2", "curl2"] {
            let op = OperatorSpec::preset(name).unwrap();
            let v = random_field(&[32, 32], 2, 23);
            let pv = project_afree(&op, &v).unwrap();
            let ppv = project_afree(&op, &pv).unwrap();
            let nv = v.l2_norm();
            let m = v.lattice_len() as f64;
            let idem: f64 = (ppv
                .values
                .iter()
                .zip(&pv.values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / m)
                .sqrt();
            assert!(idem <= 1e-11 * nv, "{name}: idempotence");
            // orthogonality <Pv, v - Pv> (torus average inner product)
            let dot: f64 = pv
                .values
                .iter()
                .zip(v.values.iter().zip(&pv.values))
                .map(|(p, (v, p2))| p * (v - p2))
                .sum::<f64>()
                / m;
            assert!(dot.abs() <= 1e-10 * nv * nv, "{name}: orthogonality");
            assert!(pv.l2_norm() <= nv + 1e-12, "{name}: non-expansive");
            let res = spectral_afree_residual(&op, &pv).unwrap();
            assert!(res <= 1e-10 * nv, "{name}: spectral A-freeness {res}");
            // mean preserved
            for (a, b) in v.mean().iter().zip(pv.mean()) {
                assert_relative_eq!(*a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn projection_rejects_non_constant_rank() {
        let op = OperatorSpec::preset("diag").unwrap();
        let v = random_field(&[8, 8], 2, 1);
        assert!(matches!(
            project_afree(&op, &v),
            Err(FieldError::NonConstantRank)
        ));
    }

    #[test]
    fn operator_of_constant_field_is_zero() {
        let op = OperatorSpec::preset("div2").unwrap();
        let f = PeriodicField::from_fn(&[16, 16], 2, |_, c| c as f64 + 1.0);
        let a = apply_operator_spectral(&op, &f).unwrap();
        assert!(a.l2_norm() < 1e-12);
    }

    #[test]
    fn curl_of_gradient_vanishes() {
        let op = OperatorSpec::preset("curl2").unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        let v = PeriodicField::from_fn(&[32, 32], 2, |x, c| match c {
            0 => tau * (tau * x[0]).cos() * (tau * x[1]).sin(),
            _ => tau * (tau * x[0]).sin() * (tau * x[1]).cos(),
        });
        let a = apply_operator_spectral(&op, &v).unwrap();
        assert!(a.l2_norm() < 1e-10 * v.l2_norm());
    }

    #[test]
    fn divergence_of_tone_matches_analytic_derivative() {
        let op = OperatorSpec::preset("div2").unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        let v = PeriodicField::from_fn(&[32, 32], 2, |x, c| if c == 0 { (tau * x[0]).sin() } else { 0.0 });
        let a = apply_operator_spectral(&op, &v).unwrap();
        let expected = PeriodicField::from_fn(&[32, 32], 1, |x, _| tau * (tau * x[0]).cos());
        let diff: f64 = a
            .values
            .iter()
            .zip(&expected.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-9);
    }

    #[test]
    fn neg_sobolev_of_zero_field() {
        let f = PeriodicField::zeros(&[8, 8], 2);
        assert_eq!(neg_sobolev_norm(&f), 0.0);
    }

    #[test]
    fn neg_sobolev_of_single_mode() {
        // a single-term sum, built directly in frequency space
        let mut spec = Spectrum {
            dims: vec![16, 16],
            ncomp: 1,
            coeffs: vec![Complex64::default(); 256],
        };
        let a = 0.7;
        spec.coeffs[3 * 16 + 2] = Complex64::new(a, 0.0); // lambda = (3, 2)
        let lam2 = 13.0;
        let expected = a / (1.0 + 4.0 * std::f64::consts::PI.powi(2) * lam2).sqrt();
        assert_relative_eq!(spec.neg_sobolev_norm(), expected, epsilon = 1e-12);
    }

    #[test]
    fn neg_sobolev_decays_linearly_under_oscillation() {
        // u_j(x) = u(jx) for mean-zero u; slope -1 on log-log
        let tau = 2.0 * std::f64::consts::PI;
        let mut logs = Vec::new();
        for j in [1usize, 2, 4, 8, 16] {
            let f = PeriodicField::from_fn(&[256], 1, |x, _| (tau * j as f64 * x[0]).sin());
            logs.push(((j as f64).ln(), neg_sobolev_norm(&f).ln()));
        }
        let slope = {
            let n = logs.len() as f64;
            let sx: f64 = logs.iter().map(|p| p.0).sum();
            let sy: f64 = logs.iter().map(|p| p.1).sum();
            let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
            (n * sxy - sx * sy) / (n * sxx - sx * sx)
        };
        assert!((slope + 1.0).abs() <= 0.1, "slope {slope}");
    }

    #[test]
    fn multiplier_is_degree_zero_homogeneous() {
        let op = OperatorSpec::preset("div2").unwrap();
        let proj = afree_projector(&op).unwrap();
        let d = [0.6, -0.8];
        let t1 = (proj.theta)(&d);
        let t2 = (proj.theta)(&d); // same direction, e.g. from lambda and 2 lambda
        assert!((t1 - t2).norm() < 1e-14);
    }

    #[test]
    fn afld_round_trip_and_errors() {
        let f = random_field(&[4, 6], 3, 99);
        let bytes = to_afld_bytes(&f);
        let back = from_afld_bytes(&bytes).unwrap();
        assert_eq!(f, back);
        assert!(from_afld_bytes(b"BOGUS123").is_err());
        assert!(from_afld_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn csv_export_shape() {
        let f = random_field(&[2, 3], 2, 4);
        let csv = to_csv(&f);
        assert!(csv.starts_with("k1,k2,v1,v2\n"));
        assert_eq!(csv.lines().count(), 1 + 6);
    }

    #[test]
    fn projection_kernel_matches_multiplier_path() {
        for preset in ["div2", "curl2"] {
            let op = OperatorSpec::preset(preset).unwrap();
            let kernel = ProjectionKernel::new(&op, &[12, 10]).unwrap();
            let f = random_field(&[12, 10], 2, 31);
            let a = kernel.project(&f).unwrap();
            let b = project_afree(&op, &f).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
            // idempotent and grid-checked
            let aa = kernel.project(&a).unwrap();
            for (x, y) in aa.values.iter().zip(&a.values) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-11);
            }
            assert!(kernel.project(&random_field(&[8, 8], 2, 1)).is_err());
        }
    }
}
