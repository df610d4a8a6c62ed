//! Command-line front end: constant-rank certificates, characteristic-cone
//! sampling, spectral kernel projection, quasiconvex envelopes with sandwich
//! bounds, idempotence checks, laminates, Young-measure generation and the
//! two-branch relaxation demo.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use aquasi::envelope::{
    idempotence_check, lambda_convexity_check, laminate_upper_bound, quasiconvexify,
    remark_relaxation_demo, EnvelopeError, EnvelopeParams, LaminateParams,
};
use aquasi::field::{
    from_afld_bytes, spectral_afree_residual, to_afld_bytes, to_csv as field_to_csv,
    apply_operator_spectral, FieldError, PeriodicField, ProjectionKernel,
};
use aquasi::integrand::{parse_integrand, preset_integrand, Integrand, IntegrandExpr};
use aquasi::operator::{
    sample_characteristic_cone, verify_constant_rank, OperatorError, OperatorSpec,
};
use aquasi::young::{
    empirical_measure, oscillate, profile_provenance, sequence_diagnostics, wasserstein1_upper,
    OscillationProfile, YoungError,
};

#[derive(Parser)]
#[command(
    name = "aquasi",
    about = "Numerical toolkit for A-quasiconvexity: constant-rank operators, \
             spectral A-free projection, quasiconvex envelopes and A-free Young measures",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OpArg {
    /// Operator: `preset:NAME` (div2, curl2, line1d, grad-scalar-2d, diag) or a JSON spec file
    #[arg(long = "op")]
    op: String,
}

#[derive(Args)]
struct IntegrandArg {
    /// Integrand: preset name (doublewell2, remark-min, remark-rational-branch) or inline expression in v1..vn
    #[arg(long, conflicts_with = "integrand_file")]
    integrand: Option<String>,
    /// Read the integrand expression from a file
    #[arg(long)]
    integrand_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Verify that rank A(w) is constant over sphere directions and emit a certificate
    Rank {
        #[command(flatten)]
        op: OpArg,
        /// Sphere directions sampled
        #[arg(long, default_value_t = 4096)]
        samples: usize,
        /// Relative singular-value cutoff
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Report path (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the characteristic cone (kernel directions of the symbol) and its span
    Cone {
        #[command(flatten)]
        op: OpArg,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project a periodic field onto the mean + kernel of the operator (spectral multiplier)
    Project {
        #[command(flatten)]
        op: OpArg,
        /// Input field (AFLD format)
        #[arg(long)]
        field: PathBuf,
        /// Output field (AFLD format)
        #[arg(long)]
        out: PathBuf,
        /// Also write the projected field as CSV here
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write a JSON residual report here
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Apply the operator A to a periodic field spectrally
    Apply {
        #[command(flatten)]
        op: OpArg,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quasiconvex envelope value at a point with convex lower and laminate upper bounds
    Envelope {
        #[command(flatten)]
        op: OpArg,
        #[command(flatten)]
        integrand: IntegrandArg,
        /// Base point, comma-separated
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "xi_grid")]
        xi: Option<Vec<f64>>,
        /// Tabulate on a grid instead: `lo,hi:pts` per-axis box (CSV output)
        #[arg(long, allow_hyphen_values = true)]
        xi_grid: Option<String>,
        /// Torus lattice points per axis
        #[arg(long, default_value_t = 32)]
        grid: usize,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
        #[arg(long, default_value_t = 2000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 0x5EED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-pass self-consistency check of the envelope on a grid of base points
    Idempotence {
        #[command(flatten)]
        op: OpArg,
        #[command(flatten)]
        integrand: IntegrandArg,
        /// Box lower corner, comma-separated
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lo: Vec<f64>,
        /// Box upper corner, comma-separated
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        hi: Vec<f64>,
        /// Base-grid points per axis
        #[arg(long, default_value_t = 9)]
        pts: usize,
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, default_value_t = 2)]
        restarts: usize,
        #[arg(long, default_value_t = 600)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 0x5EED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Laminate upper bound by iterated two-point splits along cone directions;
    /// optionally check midpoint convexity along the cone on a box
    Laminate {
        #[command(flatten)]
        op: OpArg,
        #[command(flatten)]
        integrand: IntegrandArg,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        xi: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 64)]
        dir_samples: usize,
        #[arg(long, default_value_t = 4.0)]
        half_width: f64,
        #[arg(long, default_value_t = 65)]
        pts: usize,
        /// Also report the max midpoint-convexity violation on `lo,hi:pts`
        #[arg(long, allow_hyphen_values = true)]
        check_box: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate A-free oscillations and their empirical Young measures across scales
    Ym {
        #[command(flatten)]
        op: OpArg,
        /// `two-atom:y=..;z=..;theta=..;w=..` (vectors comma-separated) or `field:PATH.afld`
        #[arg(long)]
        profile: String,
        /// Scales, comma-separated strictly increasing
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        j: Vec<usize>,
        /// Lattice points per axis
        #[arg(long, default_value_t = 256)]
        grid: usize,
        /// Atom budget for clustering
        #[arg(long, default_value_t = 256)]
        atoms: usize,
        /// Measure + diagnostics JSON
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-component histogram CSV of the largest-scale measure
        #[arg(long)]
        hist_csv: Option<PathBuf>,
    },
    /// Two-branch relaxation of a 1-D double-branch energy: both branch
    /// integrals over the interval and their minimum
    DemoRemark {
        /// Constant profile (v1, v2)
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v: Vec<f64>,
        /// Integration interval `a,b`
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        interval: Vec<f64>,
        /// Trapezoid sample count (>= 2)
        #[arg(long, default_value_t = 2)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    fn emit(&self) -> ExitCode {
        let (kind, msg, code) = match self {
            CliError::Validation(m) => ("validation", m, 2),
            CliError::Numerical(m) => ("numerical", m, 3),
        };
        eprintln!("{}", json!({"error": {"kind": kind, "message": msg}}));
        ExitCode::from(code)
    }
}

impl From<OperatorError> for CliError {
    fn from(e: OperatorError) -> Self {
        match e {
            OperatorError::NonConstantRank { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::NonConstantRank => CliError::Numerical(e.to_string()),
            FieldError::Operator(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EnvelopeError> for CliError {
    fn from(e: EnvelopeError) -> Self {
        match e {
            EnvelopeError::NonCoercive { .. } | EnvelopeError::DomainExceeded => {
                CliError::Numerical(e.to_string())
            }
            EnvelopeError::Field(inner) => inner.into(),
            EnvelopeError::Operator(inner) => inner.into(),
            EnvelopeError::Invalid(m) => CliError::Validation(m),
        }
    }
}

impl From<YoungError> for CliError {
    fn from(e: YoungError) -> Self {
        match e {
            YoungError::Field(inner) => inner.into(),
            YoungError::Operator(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn load_operator(src: &str) -> Result<OperatorSpec, CliError> {
    if let Some(name) = src.strip_prefix("preset:") {
        return Ok(OperatorSpec::preset(name)?);
    }
    let text = fs::read_to_string(src)
        .map_err(|e| CliError::Validation(format!("cannot read operator spec '{src}': {e}")))?;
    Ok(OperatorSpec::from_json(&text)?)
}

fn load_integrand(arg: &IntegrandArg, dim: usize) -> Result<IntegrandExpr, CliError> {
    let src = match (&arg.integrand, &arg.integrand_file) {
        (Some(s), None) => s.clone(),
        (None, Some(path)) => fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read integrand file '{}': {e}", path.display()))
        })?,
        _ => {
            return Err(CliError::Validation(
                "exactly one of --integrand / --integrand-file is required".into(),
            ))
        }
    };
    let src = src.trim();
    if let Some(expr) = preset_integrand(src) {
        if expr.dim() != dim {
            return Err(CliError::Validation(format!(
                "preset '{src}' has {} components, operator expects {dim}",
                expr.dim()
            )));
        }
        return Ok(expr);
    }
    parse_integrand(src, dim).map_err(|e| CliError::Validation(e.to_string()))
}

/// Write via a temp file in the target directory, then rename into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp-{}",
            path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default(),
            std::process::id()
        )),
        None => PathBuf::from(format!(".aquasi.tmp-{}", std::process::id())),
    };
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| CliError::Validation(format!("cannot write '{}': {e}", path.display())))
}

/// Reports carry a deterministic `report` object; volatile facts live in
/// `metadata` so identical configs reproduce the report bytes exactly.
fn emit_report(out: Option<&PathBuf>, report: serde_json::Value) -> Result<(), CliError> {
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let doc = json!({
        "metadata": {"generatedAtUnix": ts},
        "report": report,
    });
    let text = serde_json::to_string_pretty(&doc).expect("report serialization") + "\n";
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_field(path: &Path) -> Result<PeriodicField, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read field '{}': {e}", path.display())))?;
    Ok(from_afld_bytes(&bytes)?)
}

fn parse_box(spec: &str) -> Result<(f64, f64, usize), CliError> {
    let err = || CliError::Validation(format!("expected 'lo,hi:pts', got '{spec}'"));
    let (range, pts) = spec.split_once(':').ok_or_else(err)?;
    let (lo, hi) = range.split_once(',').ok_or_else(err)?;
    let lo: f64 = lo.trim().parse().map_err(|_| err())?;
    let hi: f64 = hi.trim().parse().map_err(|_| err())?;
    let pts: usize = pts.trim().parse().map_err(|_| err())?;
    if !(hi > lo) || pts < 2 {
        return Err(CliError::Validation(
            "box needs hi > lo and at least 2 points".into(),
        ));
    }
    Ok((lo, hi, pts))
}

fn parse_vector(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse()
                .map_err(|_| CliError::Validation(format!("bad number '{c}'")))
        })
        .collect()
}

fn parse_profile(spec: &str) -> Result<OscillationProfile, CliError> {
    if let Some(rest) = spec.strip_prefix("two-atom:") {
        let (mut y, mut z, mut theta, mut w) = (None, None, None, None);
        for part in rest.split(';') {
            let (key, val) = part.split_once('=').ok_or_else(|| {
                CliError::Validation(format!("profile part '{part}' is not key=value"))
            })?;
            match key.trim() {
                "y" => y = Some(parse_vector(val)?),
                "z" => z = Some(parse_vector(val)?),
                "theta" => {
                    theta = Some(val.trim().parse().map_err(|_| {
                        CliError::Validation(format!("bad theta '{val}'"))
                    })?)
                }
                "w" => w = Some(parse_vector(val)?),
                other => {
                    return Err(CliError::Validation(format!(
                        "unknown two-atom key '{other}' (expected y, z, theta, w)"
                    )))
                }
            }
        }
        let missing = |what: &str| CliError::Validation(format!("two-atom profile needs {what}"));
        Ok(OscillationProfile::TwoAtom {
            y: y.ok_or_else(|| missing("y"))?,
            z: z.ok_or_else(|| missing("z"))?,
            theta: theta.ok_or_else(|| missing("theta"))?,
            w: w.ok_or_else(|| missing("w"))?,
        })
    } else if let Some(path) = spec.strip_prefix("field:") {
        Ok(OscillationProfile::Field(read_field(Path::new(path))?))
    } else {
        Err(CliError::Validation(
            "profile must start with 'two-atom:' or 'field:'".into(),
        ))
    }
}

fn histogram_csv(m: &aquasi::young::EmpiricalYoungMeasure, bins: usize) -> String {
    let n = m.mean.len();
    let mut out = String::from("component,binLo,binHi,weight\n");
    for c in 0..n {
        let lo = m
            .atoms
            .iter()
            .map(|(p, _)| p[c])
            .fold(f64::INFINITY, f64::min);
        let hi = m
            .atoms
            .iter()
            .map(|(p, _)| p[c])
            .fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        let mut weights = vec![0.0f64; bins];
        for (p, w) in &m.atoms {
            let b = (((p[c] - lo) / span * bins as f64) as usize).min(bins - 1);
            weights[b] += w;
        }
        for (b, w) in weights.iter().enumerate() {
            let blo = lo + span * b as f64 / bins as f64;
            let bhi = lo + span * (b + 1) as f64 / bins as f64;
            out.push_str(&format!("{},{:.17e},{:.17e},{:.17e}\n", c + 1, blo, bhi, w));
        }
    }
    out
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Rank { op, samples, tol, out } => {
            let op = load_operator(&op.op)?;
            let cert = verify_constant_rank(&op, samples, tol)?;
            emit_report(
                out.as_ref(),
                serde_json::to_value(&cert).expect("certificate serialization"),
            )
        }
        Command::Cone { op, samples, tol, out } => {
            let op = load_operator(&op.op)?;
            let cone = sample_characteristic_cone(&op, samples, tol)?;
            let dirs: Vec<serde_json::Value> = cone
                .directions
                .iter()
                .map(|(w, basis)| {
                    json!({
                        "direction": w.as_slice(),
                        "kernelBasis": basis.iter().map(|u| u.as_slice().to_vec()).collect::<Vec<_>>(),
                    })
                })
                .collect();
            emit_report(
                out.as_ref(),
                json!({
                    "spanDimension": cone.span_dimension,
                    "spansFullSpace": cone.spans_full_space,
                    "directions": dirs,
                }),
            )
        }
        Command::Project { op, field, out, csv, report } => {
            let op = load_operator(&op.op)?;
            let input = read_field(&field)?;
            let kernel = ProjectionKernel::new(&op, &input.dims)?;
            let projected = kernel.project(&input)?;
            write_atomic(&out, &to_afld_bytes(&projected))?;
            if let Some(path) = csv {
                write_atomic(&path, field_to_csv(&projected).as_bytes())?;
            }
            if let Some(path) = report {
                let residual = spectral_afree_residual(&op, &projected)?;
                let twice = kernel.project(&projected)?;
                let idem = projected
                    .values
                    .iter()
                    .zip(&twice.values)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                emit_report(
                    Some(&path),
                    json!({
                        "afreeResidual": residual,
                        "idempotenceDefect": idem,
                        "meanBefore": input.mean(),
                        "meanAfter": projected.mean(),
                    }),
                )?;
            }
            Ok(())
        }
        Command::Apply { op, field, out } => {
            let op = load_operator(&op.op)?;
            let input = read_field(&field)?;
            let image = apply_operator_spectral(&op, &input)?;
            write_atomic(&out, &to_afld_bytes(&image))
        }
        Command::Envelope {
            op,
            integrand,
            xi,
            xi_grid,
            grid,
            restarts,
            max_iters,
            tol,
            seed,
            out,
        } => {
            let op = load_operator(&op.op)?;
            let g = load_integrand(&integrand, op.dim_field)?;
            let params = EnvelopeParams { grid, restarts, max_iters, tol, seed };
            match (xi, xi_grid) {
                (Some(xi), None) => {
                    let rep = quasiconvexify(&op, &g, &xi, &params)?;
                    emit_report(
                        out.as_ref(),
                        serde_json::to_value(&rep).expect("report serialization"),
                    )
                }
                (None, Some(spec)) => {
                    let (lo, hi, pts) = parse_box(&spec)?;
                    let n = op.dim_field;
                    let total = pts.pow(n as u32);
                    let mut csv = String::new();
                    for c in 0..n {
                        csv.push_str(&format!("xi{},", c + 1));
                    }
                    csv.push_str("qcaValue,convexLB,laminateUB,converged\n");
                    let h = (hi - lo) / (pts - 1) as f64;
                    for flat in 0..total {
                        let mut rem = flat;
                        let mut xi = vec![0.0; n];
                        for a in (0..n).rev() {
                            xi[a] = lo + h * (rem % pts) as f64;
                            rem /= pts;
                        }
                        let rep = quasiconvexify(&op, &g, &xi, &params)?;
                        for c in 0..n {
                            csv.push_str(&format!("{:.17e},", xi[c]));
                        }
                        csv.push_str(&format!(
                            "{:.17e},{:.17e},{:.17e},{}\n",
                            rep.qca_value, rep.convex_lb, rep.laminate_ub, rep.converged
                        ));
                    }
                    match out {
                        Some(path) => write_atomic(&path, csv.as_bytes()),
                        None => {
                            print!("{csv}");
                            Ok(())
                        }
                    }
                }
                _ => Err(CliError::Validation(
                    "exactly one of --xi / --xi-grid is required".into(),
                )),
            }
        }
        Command::Idempotence {
            op,
            integrand,
            lo,
            hi,
            pts,
            grid,
            restarts,
            max_iters,
            tol,
            seed,
            out,
        } => {
            let op = load_operator(&op.op)?;
            let g = load_integrand(&integrand, op.dim_field)?;
            let params = EnvelopeParams { grid, restarts, max_iters, tol, seed };
            let rep = idempotence_check(&op, &g, &lo, &hi, pts, &params)?;
            emit_report(
                out.as_ref(),
                json!({
                    "maxViolationUp": rep.max_violation_up,
                    "maxViolationDown": rep.max_violation_down,
                    "enlarged": rep.enlarged,
                    "basePts": pts,
                    "box": {"lo": lo, "hi": hi},
                }),
            )
        }
        Command::Laminate {
            op,
            integrand,
            xi,
            depth,
            dir_samples,
            half_width,
            pts,
            check_box,
            out,
        } => {
            let op = load_operator(&op.op)?;
            let g = load_integrand(&integrand, op.dim_field)?;
            let params = LaminateParams { depth, dir_samples, half_width, pts };
            let bound = laminate_upper_bound(&op, &g, &xi, &params)?;
            let mut report = json!({
                "value": bound.value,
                "clamped": bound.clamped,
                "xi": xi,
            });
            if let Some(spec) = check_box {
                let (lo, hi, bpts) = parse_box(&spec)?;
                let n = op.dim_field;
                let violation =
                    lambda_convexity_check(&op, &g, &vec![lo; n], &vec![hi; n], bpts, dir_samples)?;
                report["coneConvexityViolation"] = json!(violation);
            }
            emit_report(out.as_ref(), report)
        }
        Command::Ym { op, profile, j, grid, atoms, out, hist_csv } => {
            let op = load_operator(&op.op)?;
            let profile = parse_profile(&profile)?;
            if j.is_empty() {
                return Err(CliError::Validation("need at least one scale in --j".into()));
            }
            let dims = vec![grid; op.dim_domain];
            let diags = sequence_diagnostics(&op, &profile, &j, &dims)?;
            let mut measures = Vec::with_capacity(j.len());
            for &jj in &j {
                let f = oscillate(&op, &profile, jj, &dims)?;
                measures.push(empirical_measure(
                    &f,
                    atoms,
                    &profile_provenance(&profile, jj, &dims),
                ));
            }
            let scales: Vec<serde_json::Value> = j
                .iter()
                .zip(&diags)
                .zip(&measures)
                .enumerate()
                .map(|(k, ((jj, d), m))| {
                    let w1_next = (k + 1 < measures.len())
                        .then(|| wasserstein1_upper(m, &measures[k + 1]));
                    json!({
                        "j": jj,
                        "measure": m.to_json(),
                        "weakMeanDrift": d.weak_mean_drift,
                        "negSobolevOfA": d.neg_sobolev_of_a,
                        "pMoment": d.p_moment,
                        "w1ToNextScale": w1_next,
                    })
                })
                .collect();
            if let Some(path) = hist_csv {
                let last = measures.last().expect("nonempty scale list");
                write_atomic(&path, histogram_csv(last, 32).as_bytes())?;
            }
            emit_report(out.as_ref(), json!({"grid": dims, "scales": scales}))
        }
        Command::DemoRemark { v, interval, samples, out } => {
            if v.len() != 2 {
                return Err(CliError::Validation("--v needs exactly two components".into()));
            }
            if interval.len() != 2 {
                return Err(CliError::Validation("--interval needs 'a,b'".into()));
            }
            let points = vec![(v[0], v[1]); samples.max(2)];
            let demo = remark_relaxation_demo(&points, interval[0], interval[1])?;
            emit_report(
                out.as_ref(),
                json!({
                    "lhs": demo.lhs_branch,
                    "rhs": demo.rhs_branch,
                    "relaxed": demo.relaxed_value,
                }),
            )
        }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("AQUASI_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version itself with exit 0
            if e.use_stderr() {
                eprintln!(
                    "{}",
                    json!({"error": {"kind": "validation", "message": e.to_string()}})
                );
                return ExitCode::from(2);
            }
            e.print().expect("help output");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.emit(),
    }
}
