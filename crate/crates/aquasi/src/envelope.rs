//! Quasiconvex envelope machinery: projected-gradient minimization of the
//! cell average `avg g(xi + w(x))` over mean-zero A-free periodic fields,
//! a convex-envelope lower-bound oracle (discrete Legendre-Fenchel
//! biconjugate), laminate upper bounds along the characteristic cone, and
//! the associated consistency checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::atomic::{AtomicBool, Ordering};
use thiserror::Error;

use crate::field::{lattice_size, FieldError, PeriodicField, ProjectionKernel};
use crate::integrand::Integrand;
use crate::operator::{sample_characteristic_cone, OperatorError, OperatorSpec};

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("cell average {value} fell below the convex lower bound minus 1; integrand looks non-coercive")]
    NonCoercive { value: f64 },
    #[error("interpolation domain exceeded again after one enlargement")]
    DomainExceeded,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Multilinear interpolant on a rectangular grid, usable wherever an
/// integrand is expected. Evaluations outside the box are clamped to the
/// boundary and remembered via `was_clamped`.
#[derive(Debug)]
pub struct TabulatedIntegrand {
    lo: Vec<f64>,
    hi: Vec<f64>,
    pts: Vec<usize>,
    values: Vec<f64>,
    clamped: AtomicBool,
}

impl Clone for TabulatedIntegrand {
    fn clone(&self) -> Self {
        TabulatedIntegrand {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            pts: self.pts.clone(),
            values: self.values.clone(),
            clamped: AtomicBool::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl TabulatedIntegrand {
    pub fn new(lo: &[f64], hi: &[f64], pts: &[usize], values: Vec<f64>) -> Self {
        let n = lo.len();
        assert_eq!(hi.len(), n);
        assert_eq!(pts.len(), n);
        assert!(pts.iter().all(|&p| p >= 2), "need at least 2 points per axis");
        assert!(lo.iter().zip(hi).all(|(a, b)| b > a), "box must be nondegenerate");
        assert_eq!(values.len(), pts.iter().product::<usize>());
        TabulatedIntegrand {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            pts: pts.to_vec(),
            values,
            clamped: AtomicBool::new(false),
        }
    }

    pub fn from_fn(lo: &[f64], hi: &[f64], pts: &[usize], f: impl Fn(&[f64]) -> f64) -> Self {
        let total: usize = pts.iter().product();
        let n = lo.len();
        let mut values = vec![0.0; total];
        let mut coords = vec![0.0; n];
        for (flat, slot) in values.iter_mut().enumerate() {
            decode_node(flat, pts, lo, hi, &mut coords);
            *slot = f(&coords);
        }
        TabulatedIntegrand::new(lo, hi, pts, values)
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn pts(&self) -> &[usize] {
        &self.pts
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Coordinates of the node with flat index `flat` (last axis fastest).
    pub fn node_coords(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.lo.len()];
        decode_node(flat, &self.pts, &self.lo, &self.hi, &mut out);
        out
    }

    pub fn was_clamped(&self) -> bool {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn reset_clamped(&self) {
        self.clamped.store(false, Ordering::Relaxed);
    }

    /// Cell base index and in-cell fractions for a query point, clamped to
    /// the box.
    fn locate(&self, v: &[f64], base: &mut [usize], frac: &mut [f64]) {
        for a in 0..self.lo.len() {
            let p = self.pts[a];
            let h = (self.hi[a] - self.lo[a]) / (p - 1) as f64;
            let mut t = (v[a] - self.lo[a]) / h;
            let slack = 1e-9;
            if t < -slack || t > (p - 1) as f64 + slack {
                self.clamped.store(true, Ordering::Relaxed);
            }
            t = t.clamp(0.0, (p - 1) as f64);
            let i = (t.floor() as usize).min(p - 2);
            base[a] = i;
            frac[a] = t - i as f64;
        }
    }

    fn flat_of(&self, idx: &[usize]) -> usize {
        let mut flat = 0usize;
        for (a, &i) in idx.iter().enumerate() {
            flat = flat * self.pts[a] + i;
        }
        flat
    }
}

fn decode_node(flat: usize, pts: &[usize], lo: &[f64], hi: &[f64], out: &mut [f64]) {
    let mut rem = flat;
    for a in (0..pts.len()).rev() {
        let i = rem % pts[a];
        rem /= pts[a];
        let h = (hi[a] - lo[a]) / (pts[a] - 1) as f64;
        out[a] = lo[a] + i as f64 * h;
    }
}

impl Integrand for TabulatedIntegrand {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn value(&self, v: &[f64]) -> f64 {
        let n = self.lo.len();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        let mut idx = vec![0usize; n];
        self.locate(v, &mut base, &mut frac);
        let mut acc = 0.0;
        for mask in 0..(1usize << n) {
            let mut w = 1.0;
            for a in 0..n {
                let hi_corner = mask >> a & 1 == 1;
                w *= if hi_corner { frac[a] } else { 1.0 - frac[a] };
                idx[a] = base[a] + usize::from(hi_corner);
            }
            if w != 0.0 {
                acc += w * self.values[self.flat_of(&idx)];
            }
        }
        acc
    }

    fn gradient(&self, v: &[f64], out: &mut [f64]) {
        let n = self.lo.len();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        let mut idx = vec![0usize; n];
        self.locate(v, &mut base, &mut frac);
        out.fill(0.0);
        for mask in 0..(1usize << n) {
            for a in 0..n {
                let hi_corner = mask >> a & 1 == 1;
                idx[a] = base[a] + usize::from(hi_corner);
            }
            let val = self.values[self.flat_of(&idx)];
            for g in 0..n {
                let mut w = 1.0;
                for a in 0..n {
                    if a == g {
                        continue;
                    }
                    let hi_corner = mask >> a & 1 == 1;
                    w *= if hi_corner { frac[a] } else { 1.0 - frac[a] };
                }
                let h = (self.hi[g] - self.lo[g]) / (self.pts[g] - 1) as f64;
                let sign = if mask >> g & 1 == 1 { 1.0 } else { -1.0 };
                out[g] += sign * w * val / h;
            }
        }
    }
}

/// One axis of the iterated max-plus transform
/// `out[j] = max_i (cout[j] * cin[i] + data[i])` applied along `axis`;
/// `dims` is updated to the output shape.
fn max_plus_axis(data: &[f64], dims: &mut Vec<usize>, axis: usize, cin: &[f64], cout: &[f64]) -> Vec<f64> {
    let p = cin.len();
    debug_assert_eq!(dims[axis], p);
    let s = cout.len();
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out = vec![0.0; outer * s * stride];
    for o in 0..outer {
        for q in 0..stride {
            let base_in = o * p * stride + q;
            let base_out = o * s * stride + q;
            for (j, &cj) in cout.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for (i, &ci) in cin.iter().enumerate() {
                    let cand = cj * ci + data[base_in + i * stride];
                    if cand > best {
                        best = cand;
                    }
                }
                out[base_out + j * stride] = best;
            }
        }
    }
    dims[axis] = s;
    out
}

fn linspace(a: f64, b: f64, p: usize) -> Vec<f64> {
    let h = (b - a) / (p - 1) as f64;
    (0..p).map(|i| a + i as f64 * h).collect()
}

/// Discrete convex envelope with its conjugate kept around, so the
/// envelope can also be evaluated off-grid as an exact max of affine
/// minorants.
pub struct ConvexEnvelope {
    /// Biconjugate tabulated back on the value grid.
    pub table: TabulatedIntegrand,
    sgrids: Vec<Vec<f64>>,
    /// Conjugate `f*` on the slope grid, row-major, last axis fastest.
    conj: Vec<f64>,
}

impl ConvexEnvelope {
    /// `f**(x) = max_s <x, s> - f*(s)` over the slope grid: a max of affine
    /// functions, hence convex and a certified lower bound for the sampled
    /// data at any query point (unlike interpolating `table`, which can
    /// overshoot between nodes).
    pub fn lower_bound(&self, x: &[f64]) -> f64 {
        let n = self.sgrids.len();
        let total: usize = self.sgrids.iter().map(|s| s.len()).product();
        let mut best = f64::NEG_INFINITY;
        let mut idx = vec![0usize; n];
        for flat in 0..total {
            let mut rem = flat;
            for a in (0..n).rev() {
                idx[a] = rem % self.sgrids[a].len();
                rem /= self.sgrids[a].len();
            }
            let mut dot = 0.0;
            for a in 0..n {
                dot += x[a] * self.sgrids[a][idx[a]];
            }
            let cand = dot - self.conj[flat];
            if cand > best {
                best = cand;
            }
        }
        best
    }
}

/// Convex envelope via the discrete Legendre-Fenchel biconjugate. The
/// slope grid per axis spans the largest difference quotient seen in the
/// data at six times the value-grid resolution, so the tabulated output is
/// convex along grid lines and a pointwise lower bound up to slope-grid
/// resolution.
pub fn convex_envelope_full(
    g: &dyn Integrand,
    lo: &[f64],
    hi: &[f64],
    grid_pts: usize,
) -> ConvexEnvelope {
    let n = g.dim();
    assert!(n >= 1 && n <= 3, "tabulation supports 1 <= n <= 3");
    assert!(grid_pts >= 3);
    assert_eq!(lo.len(), n);
    assert_eq!(hi.len(), n);
    let pts = vec![grid_pts; n];
    let xgrids: Vec<Vec<f64>> = (0..n).map(|a| linspace(lo[a], hi[a], grid_pts)).collect();
    let table = TabulatedIntegrand::from_fn(lo, hi, &pts, |v| g.value(v));
    let values = table.values().to_vec();

    // largest difference quotient per axis bounds the useful slope range
    let mut sgrids = Vec::with_capacity(n);
    for a in 0..n {
        let p = pts[a];
        let h = (hi[a] - lo[a]) / (p - 1) as f64;
        let stride: usize = pts[a + 1..].iter().product();
        let outer: usize = pts[..a].iter().product();
        let mut smax = 0.0f64;
        for o in 0..outer {
            for q in 0..stride {
                let base = o * p * stride + q;
                for i in 0..p - 1 {
                    let d = (values[base + (i + 1) * stride] - values[base + i * stride]).abs() / h;
                    smax = smax.max(d);
                }
            }
        }
        smax = smax.max(1e-9);
        sgrids.push(linspace(-smax, smax, 6 * grid_pts + 1));
    }

    // conjugate: f*(s) = max_x <s,x> - f(x), built one axis at a time
    let mut data: Vec<f64> = values.iter().map(|v| -v).collect();
    let mut dims = pts.clone();
    for a in 0..n {
        data = max_plus_axis(&data, &mut dims, a, &xgrids[a], &sgrids[a]);
    }
    let conj = data.clone();
    // biconjugate: f**(x) = max_s <x,s> - f*(s)
    for v in data.iter_mut() {
        *v = -*v;
    }
    for a in 0..n {
        data = max_plus_axis(&data, &mut dims, a, &sgrids[a], &xgrids[a]);
    }
    ConvexEnvelope {
        table: TabulatedIntegrand::new(lo, hi, &pts, data),
        sgrids,
        conj,
    }
}

/// Tabulated convex envelope (see [`convex_envelope_full`]).
pub fn convex_envelope_oracle(
    g: &dyn Integrand,
    lo: &[f64],
    hi: &[f64],
    grid_pts: usize,
) -> TabulatedIntegrand {
    convex_envelope_full(g, lo, hi, grid_pts).table
}

#[derive(Debug, Clone)]
pub struct EnvelopeParams {
    /// Lattice points per torus axis.
    pub grid: usize,
    /// Total starts: the zero field plus `restarts - 1` random
    /// low-frequency fields.
    pub restarts: usize,
    pub max_iters: usize,
    /// Gradient-norm convergence threshold.
    pub tol: f64,
    pub seed: u64,
}

impl Default for EnvelopeParams {
    fn default() -> Self {
        EnvelopeParams {
            grid: 32,
            restarts: 4,
            max_iters: 2000,
            tol: 1e-6,
            seed: 0x5EED,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub xi: Vec<f64>,
    #[serde(rename = "qcaValue")]
    pub qca_value: f64,
    #[serde(rename = "convexLB")]
    pub convex_lb: f64,
    #[serde(rename = "laminateUB")]
    pub laminate_ub: f64,
    pub restarts: usize,
    #[serde(rename = "gridDims")]
    pub grid_dims: Vec<usize>,
    pub converged: bool,
    #[serde(rename = "minimizerNorm")]
    pub minimizer_norm: f64,
}

pub(crate) struct MinimizeOutcome {
    pub value: f64,
    pub field: PeriodicField,
    pub converged: bool,
}

fn cell_average(g: &dyn Integrand, xi: &[f64], w: &PeriodicField, cap: Option<f64>) -> Option<f64> {
    let m = w.lattice_len();
    let n = w.ncomp;
    let mut v = vec![0.0; n];
    let mut acc = 0.0;
    for flat in 0..m {
        for c in 0..n {
            v[c] = xi[c] + w.values[c * m + flat];
        }
        let val = g.value(&v);
        if !val.is_finite() {
            return None;
        }
        if let Some(cm) = cap {
            if val >= cm {
                return None;
            }
        }
        acc += val;
    }
    Some(acc / m as f64)
}

fn gradient_field(g: &dyn Integrand, xi: &[f64], w: &PeriodicField) -> PeriodicField {
    let m = w.lattice_len();
    let n = w.ncomp;
    let mut out = PeriodicField::zeros(&w.dims, n);
    let mut v = vec![0.0; n];
    let mut dv = vec![0.0; n];
    for flat in 0..m {
        for c in 0..n {
            v[c] = xi[c] + w.values[c * m + flat];
        }
        g.gradient(&v, &mut dv);
        for c in 0..n {
            out.values[c * m + flat] = dv[c];
        }
    }
    out
}

fn subtract_mean(w: &mut PeriodicField) {
    let m = w.lattice_len();
    let means = w.mean();
    for c in 0..w.ncomp {
        for k in 0..m {
            w.values[c * m + k] -= means[c];
        }
    }
}

/// Random field with Gaussian coefficients supported on modes
/// `|lambda|_inf <= 2`, projected and scaled to the requested amplitude.
fn low_frequency_start(
    kernel: &ProjectionKernel,
    dims: &[usize],
    ncomp: usize,
    rng: &mut ChaCha8Rng,
    amplitude: f64,
) -> Result<PeriodicField, FieldError> {
    let m = lattice_size(dims);
    let mut raw = PeriodicField::zeros(dims, ncomp);
    for v in raw.values.iter_mut() {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        *v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
    let mut spec = raw.fft();
    for flat in 0..m {
        let lam = spec.freq_at(flat);
        let keep = lam.iter().any(|&l| l != 0) && lam.iter().all(|&l| l.abs() <= 2);
        if !keep {
            for c in 0..ncomp {
                spec.coeffs[c * m + flat] = Default::default();
            }
        }
    }
    let mut w = kernel.project(&spec.ifft())?;
    subtract_mean(&mut w);
    let nrm = w.l2_norm();
    if nrm > 1e-14 {
        let s = amplitude / nrm;
        for v in w.values.iter_mut() {
            *v *= s;
        }
    }
    Ok(w)
}

/// Projected gradient descent with Armijo backtracking; best outcome over
/// all starts, `None` if the integrand's cap makes every start infeasible.
pub(crate) fn minimize(
    kernel: &ProjectionKernel,
    g: &dyn Integrand,
    xi: &[f64],
    params: &EnvelopeParams,
    lower_abort: f64,
) -> Result<Option<MinimizeOutcome>, EnvelopeError> {
    const ARMIJO_C: f64 = 1e-4;
    let dims = kernel.dims().to_vec();
    let ncomp = g.dim();
    let cap = g.cap();
    let amplitudes = [0.5, 1.0, 2.0];
    let mut best: Option<MinimizeOutcome> = None;

    for restart in 0..params.restarts.max(1) {
        let mut w = if restart == 0 {
            PeriodicField::zeros(&dims, ncomp)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(restart as u64));
            low_frequency_start(kernel, &dims, ncomp, &mut rng, amplitudes[(restart - 1) % 3])?
        };
        let Some(mut energy) = cell_average(g, xi, &w, cap) else {
            continue;
        };
        let mut step = 1.0f64;
        let mut converged = false;
        for _ in 0..params.max_iters {
            if energy < lower_abort {
                return Err(EnvelopeError::NonCoercive { value: energy });
            }
            let mut d = kernel.project(&gradient_field(g, xi, &w))?;
            subtract_mean(&mut d);
            let gsq = {
                let n = d.l2_norm();
                n * n
            };
            if gsq.sqrt() <= params.tol {
                converged = true;
                break;
            }
            step = (step * 2.0).min(1e3);
            let mut accepted = false;
            while step >= 1e-16 {
                let mut cand = w.clone();
                for (c, dv) in cand.values.iter_mut().zip(&d.values) {
                    *c -= step * dv;
                }
                let mut cand = kernel.project(&cand)?;
                subtract_mean(&mut cand);
                if let Some(ec) = cell_average(g, xi, &cand, cap) {
                    if ec <= energy - ARMIJO_C * step * gsq {
                        w = cand;
                        energy = ec;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if best.as_ref().map_or(true, |b| energy < b.value) {
            best = Some(MinimizeOutcome {
                value: energy,
                field: w,
                converged,
            });
        }
    }
    Ok(best)
}

fn check_shapes(op: &OperatorSpec, g: &dyn Integrand, xi: &[f64]) -> Result<(), EnvelopeError> {
    if g.dim() != op.dim_field {
        return Err(EnvelopeError::Invalid(format!(
            "integrand takes {} variables, operator fields have {} components",
            g.dim(),
            op.dim_field
        )));
    }
    if xi.len() != op.dim_field {
        return Err(EnvelopeError::Invalid(format!(
            "base point has {} components, expected {}",
            xi.len(),
            op.dim_field
        )));
    }
    Ok(())
}

fn inf_norm(xi: &[f64]) -> f64 {
    xi.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn quasiconvexify(
    op: &OperatorSpec,
    g: &dyn Integrand,
    xi: &[f64],
    params: &EnvelopeParams,
) -> Result<EnvelopeReport, EnvelopeError> {
    check_shapes(op, g, xi)?;
    let n = op.dim_field;
    let dims = vec![params.grid; op.dim_domain];
    let kernel = ProjectionKernel::new(op, &dims)?;

    let r = 3.0 + 2.0 * inf_norm(xi);
    let cpts = if n <= 2 { 129 } else { 33 };
    let conv = convex_envelope_full(g, &vec![-r; n], &vec![r; n], cpts);
    let convex_lb = conv.lower_bound(xi);

    let outcome = minimize(&kernel, g, xi, params, convex_lb - 1.0)?
        .ok_or_else(|| EnvelopeError::Invalid("integrand cap rejects every start".into()))?;

    let lam = laminate_upper_bound(
        op,
        g,
        xi,
        &LaminateParams {
            depth: 2,
            dir_samples: 16,
            half_width: 3.0 + inf_norm(xi),
            pts: 49,
        },
    )?;

    Ok(EnvelopeReport {
        xi: xi.to_vec(),
        qca_value: outcome.value,
        convex_lb,
        laminate_ub: lam.value,
        restarts: params.restarts.max(1),
        grid_dims: dims,
        converged: outcome.converged,
        minimizer_norm: outcome.field.l2_norm(),
    })
}

#[derive(Debug)]
pub struct IdempotenceReport {
    /// max over the base grid of (second pass - first pass)
    pub max_violation_up: f64,
    /// max over the base grid of (first pass - second pass)
    pub max_violation_down: f64,
    /// whether the padded table had to be enlarged once
    pub enlarged: bool,
    /// first-pass table on the padded box
    pub table: TabulatedIntegrand,
}

/// Two-pass self-consistency check of `Q_A(Q_A g) = Q_A g` on a grid of
/// base points. The first pass tabulates the envelope on a padded box
/// (same spacing, half the box width added per side) so second-pass
/// minimizer excursions stay in range; if they still leave it the padding
/// is doubled once.
pub fn idempotence_check(
    op: &OperatorSpec,
    g: &dyn Integrand,
    lo: &[f64],
    hi: &[f64],
    pts: usize,
    params: &EnvelopeParams,
) -> Result<IdempotenceReport, EnvelopeError> {
    check_shapes(op, g, lo)?;
    if hi.len() != lo.len() || pts < 3 {
        return Err(EnvelopeError::Invalid("need matching box bounds and pts >= 3".into()));
    }
    let n = lo.len();
    let dims = vec![params.grid; op.dim_domain];
    let kernel = ProjectionKernel::new(op, &dims)?;

    for attempt in 0..2 {
        let pad = (pts - 1) / 2 * (attempt + 1);
        let mut lo_p = vec![0.0; n];
        let mut hi_p = vec![0.0; n];
        let mut pts_p = vec![0usize; n];
        for a in 0..n {
            let h = (hi[a] - lo[a]) / (pts - 1) as f64;
            lo_p[a] = lo[a] - pad as f64 * h;
            hi_p[a] = hi[a] + pad as f64 * h;
            pts_p[a] = pts + 2 * pad;
        }

        let conv = convex_envelope_oracle(g, &lo_p, &hi_p, 65);
        let abort = conv.values().iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;

        let total: usize = pts_p.iter().product();
        let shell = TabulatedIntegrand::new(&lo_p, &hi_p, &pts_p, vec![0.0; total]);
        let pass1: Vec<f64> = (0..total)
            .into_par_iter()
            .map(|flat| {
                let node = shell.node_coords(flat);
                minimize(&kernel, g, &node, params, abort)?
                    .map(|o| o.value)
                    .ok_or_else(|| EnvelopeError::Invalid("integrand cap rejects every start".into()))
            })
            .collect::<Result<_, _>>()?;
        let table = TabulatedIntegrand::new(&lo_p, &hi_p, &pts_p, pass1);

        let table_abort = table.values().iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
        table.reset_clamped();

        // flat indices of the base-grid nodes inside the padded table
        let base_nodes: Vec<usize> = {
            let mut nodes = vec![0usize];
            for a in 0..n {
                let mut next = Vec::with_capacity(nodes.len() * pts);
                for &prefix in &nodes {
                    for i in 0..pts {
                        next.push(prefix * pts_p[a] + pad + i);
                    }
                }
                nodes = next;
            }
            nodes
        };

        // A pass-2 value is only trustworthy when the minimizer it came from
        // evaluates the table strictly inside the padded box; line-search
        // probes may leave it (and get clamped) without affecting the
        // accepted answer, so the flag on the table itself is not consulted.
        let pass2: Vec<(f64, bool)> = base_nodes
            .par_iter()
            .map(|&flat| {
                let node = table.node_coords(flat);
                let outcome = minimize(&kernel, &table, &node, params, table_abort)?
                    .ok_or_else(|| EnvelopeError::Invalid("tabulated pass rejected every start".into()));
                let outcome = outcome?;
                let m = outcome.field.lattice_len();
                let mut outside = false;
                for a in 0..n {
                    let slack = 1e-9 * (hi_p[a] - lo_p[a]);
                    for k in 0..m {
                        let v = node[a] + outcome.field.values[a * m + k];
                        if v < lo_p[a] - slack || v > hi_p[a] + slack {
                            outside = true;
                        }
                    }
                }
                Ok::<_, EnvelopeError>((outcome.value, outside))
            })
            .collect::<Result<_, _>>()?;

        if pass2.iter().any(|&(_, outside)| outside) {
            if attempt == 0 {
                continue;
            }
            return Err(EnvelopeError::DomainExceeded);
        }

        let mut up = 0.0f64;
        let mut down = 0.0f64;
        for (k, &flat) in base_nodes.iter().enumerate() {
            let diff = pass2[k].0 - table.values()[flat];
            up = up.max(diff);
            down = down.max(-diff);
        }
        return Ok(IdempotenceReport {
            max_violation_up: up,
            max_violation_down: down,
            enlarged: attempt > 0,
            table,
        });
    }
    unreachable!("loop returns on the second attempt")
}

#[derive(Debug, Clone)]
pub struct LaminateParams {
    /// Rounds of the lamination map.
    pub depth: usize,
    /// Sphere directions used to sample the characteristic cone.
    pub dir_samples: usize,
    /// Half-width of the tabulation box around the base point.
    pub half_width: f64,
    /// Table points per axis.
    pub pts: usize,
}

impl Default for LaminateParams {
    fn default() -> Self {
        LaminateParams {
            depth: 3,
            dir_samples: 64,
            half_width: 4.0,
            pts: 65,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LaminateBound {
    pub value: f64,
    /// Set when some split had to be skipped because a probe point left
    /// the table box.
    pub clamped: bool,
}

const THETA_GRID: [f64; 15] = [
    1.0 / 16.0,
    2.0 / 16.0,
    3.0 / 16.0,
    4.0 / 16.0,
    5.0 / 16.0,
    6.0 / 16.0,
    7.0 / 16.0,
    8.0 / 16.0,
    9.0 / 16.0,
    10.0 / 16.0,
    11.0 / 16.0,
    12.0 / 16.0,
    13.0 / 16.0,
    14.0 / 16.0,
    15.0 / 16.0,
];

fn step_grid() -> Vec<f64> {
    (0..10).map(|k| (2.0f64).powi(k - 6)).collect()
}

/// Upper bound for the closed envelope by iterated two-point splits along
/// sampled characteristic-cone directions: each round replaces the table
/// with `min over u, theta, t of theta F(xi + (1-theta) t u) + (1-theta)
/// F(xi - theta t u)`, realized by an explicit laminate.
pub fn laminate_upper_bound(
    op: &OperatorSpec,
    f: &dyn Integrand,
    xi: &[f64],
    params: &LaminateParams,
) -> Result<LaminateBound, EnvelopeError> {
    check_shapes(op, f, xi)?;
    let n = op.dim_field;
    let cone = sample_characteristic_cone(op, params.dir_samples, 1e-9)?;
    let dirs: Vec<Vec<f64>> = cone
        .directions
        .iter()
        .flat_map(|(_, basis)| basis.iter().map(|u| u.as_slice().to_vec()))
        .collect();

    let lo: Vec<f64> = xi.iter().map(|x| x - params.half_width).collect();
    let hi: Vec<f64> = xi.iter().map(|x| x + params.half_width).collect();
    let pts = vec![params.pts; n];
    let mut table = TabulatedIntegrand::from_fn(&lo, &hi, &pts, |v| f.value(v));
    let steps = step_grid();
    let mut clamped = false;
    let inside = |p: &[f64]| {
        p.iter()
            .enumerate()
            .all(|(a, &x)| x >= lo[a] - 1e-12 && x <= hi[a] + 1e-12)
    };

    for _ in 0..params.depth {
        let total: usize = pts.iter().product();
        // Splits probing outside the box are skipped, not clamped: a
        // clamped far point aliases to a nearer, cheaper value and fakes a
        // descent. Skipping keeps the min a valid laminate bound; the
        // second tuple slot records that the box was exhausted.
        let results: Vec<(f64, bool)> = (0..total)
            .into_par_iter()
            .map(|flat| {
                let node = table.node_coords(flat);
                let mut best = table.values()[flat];
                let mut skipped = false;
                let mut p1 = vec![0.0; n];
                let mut p2 = vec![0.0; n];
                for u in &dirs {
                    for &t in &steps {
                        for &theta in &THETA_GRID {
                            for c in 0..n {
                                p1[c] = node[c] + (1.0 - theta) * t * u[c];
                                p2[c] = node[c] - theta * t * u[c];
                            }
                            if !inside(&p1) || !inside(&p2) {
                                skipped = true;
                                continue;
                            }
                            let split = theta * table.value(&p1) + (1.0 - theta) * table.value(&p2);
                            if split < best {
                                best = split;
                            }
                        }
                    }
                }
                (best, skipped)
            })
            .collect();
        clamped |= results.iter().any(|&(_, c)| c);
        let values = results.into_iter().map(|(v, _)| v).collect();
        table = TabulatedIntegrand::new(&lo, &hi, &pts, values);
    }

    let value = table.value(xi);
    Ok(LaminateBound { value, clamped })
}

/// Max clipped midpoint violation `g(xi) - (g(xi+tu)+g(xi-tu))/2` over base
/// points in the box, sampled cone directions and a geometric step grid.
/// Split points outside the box are skipped.
pub fn lambda_convexity_check(
    op: &OperatorSpec,
    g: &dyn Integrand,
    lo: &[f64],
    hi: &[f64],
    grid_pts: usize,
    dir_samples: usize,
) -> Result<f64, EnvelopeError> {
    check_shapes(op, g, lo)?;
    let n = op.dim_field;
    let cone = sample_characteristic_cone(op, dir_samples, 1e-9)?;
    let dirs: Vec<Vec<f64>> = cone
        .directions
        .iter()
        .flat_map(|(_, basis)| basis.iter().map(|u| u.as_slice().to_vec()))
        .collect();
    let pts = vec![grid_pts; n];
    let shell = TabulatedIntegrand::new(lo, hi, &pts, vec![0.0; pts.iter().product()]);
    let steps = step_grid();
    let total: usize = pts.iter().product();
    let inside = |p: &[f64]| {
        p.iter()
            .enumerate()
            .all(|(a, &x)| x >= lo[a] - 1e-12 && x <= hi[a] + 1e-12)
    };
    let mut worst = 0.0f64;
    let mut p1 = vec![0.0; n];
    let mut p2 = vec![0.0; n];
    for flat in 0..total {
        let node = shell.node_coords(flat);
        let center = g.value(&node);
        for u in &dirs {
            for &t in &steps {
                for c in 0..n {
                    p1[c] = node[c] + t * u[c];
                    p2[c] = node[c] - t * u[c];
                }
                if !inside(&p1) || !inside(&p2) {
                    continue;
                }
                let violation = center - 0.5 * (g.value(&p1) + g.value(&p2));
                if violation > worst {
                    worst = violation;
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct RemarkDemo {
    #[serde(rename = "lhsBranch")]
    pub lhs_branch: f64,
    #[serde(rename = "rhsBranch")]
    pub rhs_branch: f64,
    #[serde(rename = "relaxedValue")]
    pub relaxed_value: f64,
}

/// Relaxed energy of a 1-D two-component profile: trapezoid integrals of
/// `(v1 - 1)^2 + v2^2` and `(v1 + 1)^2 + v2^2` over `(a, b)` and their
/// minimum.
pub fn remark_relaxation_demo(samples: &[(f64, f64)], a: f64, b: f64) -> Result<RemarkDemo, EnvelopeError> {
    if samples.len() < 2 {
        return Err(EnvelopeError::Invalid("need at least two samples".into()));
    }
    if !(b > a) {
        return Err(EnvelopeError::Invalid("need b > a".into()));
    }
    let h = (b - a) / (samples.len() - 1) as f64;
    let integrate = |shift: f64| {
        let mut acc = 0.0;
        for (k, &(v1, v2)) in samples.iter().enumerate() {
            let val = (v1 - shift) * (v1 - shift) + v2 * v2;
            let w = if k == 0 || k == samples.len() - 1 { 0.5 } else { 1.0 };
            acc += w * val;
        }
        acc * h
    };
    let lhs = integrate(1.0);
    let rhs = integrate(-1.0);
    Ok(RemarkDemo {
        lhs_branch: lhs,
        rhs_branch: rhs,
        relaxed_value: lhs.min(rhs),
    })
}
