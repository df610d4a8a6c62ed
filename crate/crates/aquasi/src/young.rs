//! A-free oscillating sequences and the empirical Young measures they
//! generate: layered two-atom constructions along the characteristic cone,
//! atom clustering, translations, Jensen-gap tests and weak-convergence
//! diagnostics.

use serde_json::json;
use thiserror::Error;

use crate::field::{apply_operator_spectral, FieldError, PeriodicField, ProjectionKernel};
use crate::integrand::Integrand;
use crate::operator::{OperatorError, OperatorSpec};

#[derive(Debug, Error)]
pub enum YoungError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("direction {0:?} has no rational approximation with |q|_inf <= {1}; use a larger grid")]
    DirectionNotApproximable(Vec<f64>, usize),
    #[error("y - z is not in ker A(w): |A(w)(y-z)| = {0:.3e} exceeds 1e-9")]
    KernelMembership(f64),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Finitely supported probability measure on R^n with its generating
/// history. Moments are always taken from the raw samples, before any
/// atom clustering.
#[derive(Debug, Clone)]
pub struct EmpiricalYoungMeasure {
    /// (point, weight) pairs; weights are nonnegative and sum to 1.
    pub atoms: Vec<(Vec<f64>, f64)>,
    pub mean: Vec<f64>,
    /// Second moment `avg |v|^2` (p = 2).
    pub p_moment: f64,
    pub provenance: String,
}

impl EmpiricalYoungMeasure {
    /// Pairing `<m, g> = sum_i w_i g(p_i)`.
    pub fn pair(&self, g: &dyn Integrand) -> f64 {
        self.atoms.iter().map(|(p, w)| w * g.value(p)).sum()
    }

    /// JSON export: `{atoms: [[p_1..p_n, w]...], mean, pMoment, provenance}`.
    pub fn to_json(&self) -> serde_json::Value {
        let atoms: Vec<Vec<f64>> = self
            .atoms
            .iter()
            .map(|(p, w)| {
                let mut row = p.clone();
                row.push(*w);
                row
            })
            .collect();
        json!({
            "atoms": atoms,
            "mean": self.mean,
            "pMoment": self.p_moment,
            "provenance": self.provenance,
        })
    }
}

/// A generator of oscillating fields `w(j x)`.
#[derive(Debug, Clone)]
pub enum OscillationProfile {
    /// Layered two-point oscillation: value `y` on a `theta`-fraction of
    /// layers orthogonal to `w`, value `z` on the rest; `y - z` must lie in
    /// `ker A(w)`.
    TwoAtom {
        y: Vec<f64>,
        z: Vec<f64>,
        theta: f64,
        w: Vec<f64>,
    },
    /// An arbitrary periodic field, rescaled by lattice dilation.
    Field(PeriodicField),
}

/// Best rational direction `q` (integer vector, `|q|_inf <= budget`)
/// approximating the unit vector `what`; returns the direction and its
/// deviation `|q/|q| - what|`.
fn rational_direction(what: &[f64], budget: usize) -> Option<(Vec<i64>, f64)> {
    let mut best: Option<(Vec<i64>, f64)> = None;
    for k in 1..=budget {
        let q: Vec<i64> = what.iter().map(|&c| (k as f64 * c).round() as i64).collect();
        if q.iter().all(|&c| c == 0) {
            continue;
        }
        let norm = (q.iter().map(|&c| (c * c) as f64).sum::<f64>()).sqrt();
        let dev = q
            .iter()
            .zip(what)
            .map(|(&c, &w)| (c as f64 / norm - w).powi(2))
            .sum::<f64>()
            .sqrt();
        if best.as_ref().map_or(true, |(_, d)| dev < *d - 1e-15) {
            best = Some((q, dev));
        }
    }
    best
}

fn subtract_mean(f: &mut PeriodicField) {
    let m = f.lattice_len();
    let means = f.mean();
    for c in 0..f.ncomp {
        for k in 0..m {
            f.values[c * m + k] -= means[c];
        }
    }
}

/// Samples the profile at scale `j` on the lattice, then applies one
/// cleanup projection and removes the mean, so the output is an exactly
/// discrete-A-free mean-zero oscillation.
pub fn oscillate(
    op: &OperatorSpec,
    profile: &OscillationProfile,
    j: usize,
    dims: &[usize],
) -> Result<PeriodicField, YoungError> {
    if j == 0 {
        return Err(YoungError::Invalid("scale j must be >= 1".into()));
    }
    match profile {
        OscillationProfile::TwoAtom { y, z, theta, w } => {
            let n = op.dim_field;
            if y.len() != n || z.len() != n || w.len() != op.dim_domain {
                return Err(YoungError::Invalid(
                    "profile dimensions do not match the operator".into(),
                ));
            }
            if !(*theta > 0.0 && *theta < 1.0) {
                return Err(YoungError::Invalid("theta must lie in (0, 1)".into()));
            }
            let wn = (w.iter().map(|c| c * c).sum::<f64>()).sqrt();
            if wn <= 1e-14 {
                return Err(YoungError::Invalid("direction w must be nonzero".into()));
            }
            let what: Vec<f64> = w.iter().map(|c| c / wn).collect();
            let budget = dims.iter().copied().min().unwrap_or(0) / 4;
            let Some((q, dev)) = rational_direction(&what, budget.max(0)) else {
                return Err(YoungError::DirectionNotApproximable(what, budget));
            };
            let qn = (q.iter().map(|&c| (c * c) as f64).sum::<f64>()).sqrt();
            let qhat: Vec<f64> = q.iter().map(|&c| c as f64 / qn).collect();

            // kernel membership against the direction actually used
            let a = op.symbol(&qhat)?;
            let diff: Vec<f64> = y.iter().zip(z).map(|(a, b)| a - b).collect();
            let mut residual = 0.0f64;
            for i in 0..a.nrows() {
                let mut acc = 0.0;
                for c in 0..n {
                    acc += a[(i, c)] * diff[c];
                }
                residual += acc * acc;
            }
            let residual = residual.sqrt();
            if residual > 1e-9 {
                return Err(YoungError::KernelMembership(residual));
            }

            let theta = *theta;
            let (yv, zv) = (y.clone(), z.clone());
            let qf: Vec<f64> = q.iter().map(|&c| c as f64).collect();
            let mut field = PeriodicField::from_fn(dims, n, |x, c| {
                let t = j as f64 * x.iter().zip(&qf).map(|(a, b)| a * b).sum::<f64>();
                let s = t - t.floor();
                if s < theta {
                    yv[c]
                } else {
                    zv[c]
                }
            });
            let kernel = ProjectionKernel::new(op, dims)?;
            subtract_mean(&mut field);
            let mut field = kernel.project(&field)?;
            subtract_mean(&mut field);
            let _ = dev;
            Ok(field)
        }
        OscillationProfile::Field(base) => {
            if base.ncomp != op.dim_field || base.dims.len() != op.dim_domain {
                return Err(YoungError::Invalid(
                    "profile field does not match the operator".into(),
                ));
            }
            if base.dims != dims {
                return Err(YoungError::Invalid(
                    "field profiles are resampled on their own grid; dims must match".into(),
                ));
            }
            // exact lattice dilation: index k picks up value at j*k mod G
            let m = base.lattice_len();
            let nd = base.dims.len();
            let mut out = PeriodicField::zeros(dims, base.ncomp);
            let mut idx = vec![0usize; nd];
            for flat in 0..m {
                let mut rem = flat;
                for a in (0..nd).rev() {
                    idx[a] = rem % dims[a];
                    rem /= dims[a];
                }
                let mut src = 0usize;
                for a in 0..nd {
                    src = src * dims[a] + (j * idx[a]) % dims[a];
                }
                for c in 0..base.ncomp {
                    out.values[c * m + flat] = base.values[c * m + src];
                }
            }
            let kernel = ProjectionKernel::new(op, dims)?;
            subtract_mean(&mut out);
            let mut out = kernel.project(&out)?;
            subtract_mean(&mut out);
            Ok(out)
        }
    }
}

/// Human-readable generating history for a profile at a given scale.
pub fn profile_provenance(profile: &OscillationProfile, j: usize, dims: &[usize]) -> String {
    match profile {
        OscillationProfile::TwoAtom { y, z, theta, w } => {
            let wn = (w.iter().map(|c| c * c).sum::<f64>()).sqrt();
            let what: Vec<f64> = w.iter().map(|c| c / wn.max(1e-300)).collect();
            let budget = dims.iter().copied().min().unwrap_or(0) / 4;
            let rounding = rational_direction(&what, budget)
                .map(|(q, dev)| format!("q={q:?}, rounding deviation {dev:.3e}"))
                .unwrap_or_else(|| "no rational direction".into());
            format!(
                "two-atom layered oscillation y={y:?} z={z:?} theta={theta} along w={w:?} ({rounding}), scale j={j}, grid {dims:?}"
            )
        }
        OscillationProfile::Field(_) => {
            format!("field profile dilated by j={j}, grid {dims:?}")
        }
    }
}

/// Empirical measure of the lattice values of a field, clustered to at
/// most `k_max` atoms. Mean and second moment come from the raw samples.
pub fn empirical_measure(field: &PeriodicField, k_max: usize, provenance: &str) -> EmpiricalYoungMeasure {
    let m = field.lattice_len();
    let n = field.ncomp;
    let mean = field.mean();
    let p_moment = field.values.iter().map(|v| v * v).sum::<f64>() / m as f64;

    let points: Vec<Vec<f64>> = (0..m)
        .map(|flat| (0..n).map(|c| field.values[c * m + flat]).collect())
        .collect();

    // bounding-box diagonal sets the clustering scale
    let mut lo = points[0].clone();
    let mut hi = points[0].clone();
    for p in &points {
        for a in 0..n {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let diag = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();

    let mut radius = diag / 1024.0;
    let atoms = loop {
        // running-average centroids: each sample joins the nearest centroid
        // within `radius` or opens a new one, in lattice order
        let mut centroids: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut overflow = false;
        for p in &points {
            let mut best: Option<(usize, f64)> = None;
            for (i, (c, _)) in centroids.iter().enumerate() {
                let d = c
                    .iter()
                    .zip(p)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            match best {
                Some((i, d)) if d <= radius => {
                    let (c, w) = &mut centroids[i];
                    let wn = *w + 1.0;
                    for a in 0..n {
                        c[a] += (p[a] - c[a]) / wn;
                    }
                    *w = wn;
                }
                _ => {
                    if centroids.len() == k_max {
                        overflow = true;
                        break;
                    }
                    centroids.push((p.clone(), 1.0));
                }
            }
        }
        if !overflow {
            break centroids;
        }
        radius = if radius > 0.0 { radius * 2.0 } else { diag / 1024.0 + 1e-12 };
    };

    let total = m as f64;
    let atoms = atoms
        .into_iter()
        .map(|(c, count)| (c, count / total))
        .collect();
    EmpiricalYoungMeasure {
        atoms,
        mean,
        p_moment,
        provenance: provenance.to_string(),
    }
}

/// Shift every atom (and the mean) by `a`.
pub fn translate_measure(m: &EmpiricalYoungMeasure, a: &[f64]) -> EmpiricalYoungMeasure {
    let atoms = m
        .atoms
        .iter()
        .map(|(p, w)| (p.iter().zip(a).map(|(x, s)| x + s).collect(), *w))
        .collect();
    let mean = m.mean.iter().zip(a).map(|(x, s)| x + s).collect();
    EmpiricalYoungMeasure {
        atoms,
        mean,
        p_moment: m.p_moment,
        provenance: format!("{}; translated by {a:?}", m.provenance),
    }
}

/// Jensen gap `<m, g> - g(mean m)`. Negative values certify that `g` is
/// not quasiconvex at this measure.
pub fn jensen_gap(m: &EmpiricalYoungMeasure, g: &dyn Integrand) -> f64 {
    m.pair(g) - g.value(&m.mean)
}

/// Upper bound on the Wasserstein-1 distance via the monotone coupling of
/// the lexicographically sorted atom lists (exact for measures supported
/// on a line, a valid coupling cost in general).
pub fn wasserstein1_upper(a: &EmpiricalYoungMeasure, b: &EmpiricalYoungMeasure) -> f64 {
    let sorted = |m: &EmpiricalYoungMeasure| {
        let mut v = m.atoms.clone();
        v.sort_by(|(p, _), (q, _)| {
            p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal)
        });
        v
    };
    let xs = sorted(a);
    let ys = sorted(b);
    let mut cost = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    let (mut wi, mut wj) = (0.0f64, 0.0f64);
    while i < xs.len() && j < ys.len() {
        let avail_i = xs[i].1 - wi;
        let avail_j = ys[j].1 - wj;
        let mass = avail_i.min(avail_j);
        let dist = xs[i]
            .0
            .iter()
            .zip(&ys[j].0)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        cost += mass * dist;
        wi += mass;
        wj += mass;
        if xs[i].1 - wi <= 1e-15 {
            i += 1;
            wi = 0.0;
        }
        if j < ys.len() && ys[j].1 - wj <= 1e-15 {
            j += 1;
            wj = 0.0;
        }
    }
    cost
}

/// Kolmogorov-Smirnov distance of scalar samples to a reference CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = s.len() as f64;
    let mut worst = 0.0f64;
    for (k, &x) in s.iter().enumerate() {
        let f = cdf(x);
        worst = worst.max((f - k as f64 / n).abs());
        worst = worst.max((f - (k + 1) as f64 / n).abs());
    }
    worst
}

/// CDF of the arcsine law, the value distribution of `sin(2 pi x)` under
/// uniform `x`.
pub fn arcsine_cdf(t: f64) -> f64 {
    if t <= -1.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        0.5 + t.asin() / std::f64::consts::PI
    }
}

#[derive(Debug, Clone)]
pub struct SequenceDiag {
    pub j: usize,
    /// Max over a 4^N coarse-cell partition of |cell mean - global mean|.
    pub weak_mean_drift: f64,
    /// Negative-Sobolev surrogate norm of `A` applied to the oscillation.
    pub neg_sobolev_of_a: f64,
    /// Second moment of the field values.
    pub p_moment: f64,
}

/// Weak-convergence diagnostics of `oscillate(profile, j)` across scales.
pub fn sequence_diagnostics(
    op: &OperatorSpec,
    profile: &OscillationProfile,
    j_list: &[usize],
    dims: &[usize],
) -> Result<Vec<SequenceDiag>, YoungError> {
    if j_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(YoungError::Invalid("jList must be strictly increasing".into()));
    }
    let mut out = Vec::with_capacity(j_list.len());
    for &j in j_list {
        let f = oscillate(op, profile, j, dims)?;
        out.push(SequenceDiag {
            j,
            weak_mean_drift: weak_mean_drift(&f),
            neg_sobolev_of_a: apply_operator_spectral(op, &f)?.fft().neg_sobolev_norm(),
            p_moment: f.values.iter().map(|v| v * v).sum::<f64>() / f.lattice_len() as f64,
        });
    }
    Ok(out)
}

/// Max over the 4-per-axis cell partition of the Euclidean distance
/// between the cell mean and the global mean.
pub fn weak_mean_drift(f: &PeriodicField) -> f64 {
    let nd = f.dims.len();
    let n = f.ncomp;
    let m = f.lattice_len();
    let cells = 4usize.pow(nd as u32);
    let mut sums = vec![0.0f64; cells * n];
    let mut counts = vec![0usize; cells];
    let mut idx = vec![0usize; nd];
    for flat in 0..m {
        let mut rem = flat;
        for a in (0..nd).rev() {
            idx[a] = rem % f.dims[a];
            rem /= f.dims[a];
        }
        let mut cell = 0usize;
        for a in 0..nd {
            cell = cell * 4 + (idx[a] * 4) / f.dims[a];
        }
        counts[cell] += 1;
        for c in 0..n {
            sums[cell * n + c] += f.values[c * m + flat];
        }
    }
    let mean = f.mean();
    let mut worst = 0.0f64;
    for cell in 0..cells {
        if counts[cell] == 0 {
            continue;
        }
        let mut d2 = 0.0;
        for c in 0..n {
            let cm = sums[cell * n + c] / counts[cell] as f64;
            d2 += (cm - mean[c]) * (cm - mean[c]);
        }
        worst = worst.max(d2.sqrt());
    }
    worst
}
