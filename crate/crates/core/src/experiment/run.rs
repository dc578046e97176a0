//! Subcommand runners. Each run writes into `<out>/<config hash prefix>/`;
//! every file is written atomically and every report embeds [`ReportMeta`].

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::audit::{self, SuiteResult};
use crate::error::Error;
use crate::experiment::config::{ConfigError, ExperimentConfig};
use crate::fwt::{regularized_fwt_quadrature, theorem3_integral, FwtMode, QuadratureReport};
use crate::grid::GridContext;
use crate::operator::{build_operator, OperatorMatrix, OperatorSpec, Profile};
use crate::process::{covariance, sample_paths, write_paths_csv, RNG_ALGORITHM};
use crate::silt::{cauchy_diagnostic, mean_and_stderr, MomentTable};
use crate::simplex::snap_gap;

/// Length of the hash prefix naming a run directory.
pub const RUN_DIR_HASH_LEN: usize = 16;

/// Why a run stopped.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Numerical { context: String, source: Error },
    #[error("cannot write {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl RunError {
    /// Process exit code: 1 configuration, 2 numerical suite, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Numerical {
                source:
                    Error::ConditionsViolated(_) | Error::SingularOperator { .. } | Error::FactorizationFailure { .. },
                ..
            } => 2,
            RunError::Numerical { .. } | RunError::Io { .. } => 3,
        }
    }
}

fn ctx_err(context: &str) -> impl FnOnce(Error) -> RunError + '_ {
    move |source| RunError::Numerical {
        context: context.into(),
        source,
    }
}

/// Overrides from the command line.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_root: Option<PathBuf>,
    pub seed_override: Option<u64>,
}

/// Provenance embedded in every report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportMeta {
    pub subcommand: String,
    pub config_hash: String,
    pub grid_n: usize,
    pub seed: u64,
    pub rng_algorithm: String,
    pub library_version: String,
    pub scalar: String,
}

/// Files written by a run and its verdict.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// All numerical checks of the run held.
    pub passed: bool,
    pub summary: Vec<String>,
}

struct Run {
    config: ExperimentConfig,
    meta: ReportMeta,
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Run {
    fn start(config: &ExperimentConfig, opts: &RunOptions, subcommand: &str) -> Result<Self, RunError> {
        let mut config = config.clone();
        if let Some(seed) = opts.seed_override {
            config.seed = seed;
        }
        config.validate()?;
        let hash = config.hash();
        let root = opts.out_root.clone().unwrap_or_else(|| config.output_dir.clone());
        let dir = root.join(&hash[..RUN_DIR_HASH_LEN]);
        std::fs::create_dir_all(&dir).map_err(|e| RunError::Io {
            path: dir.clone(),
            message: e.to_string(),
        })?;
        let meta = ReportMeta {
            subcommand: subcommand.into(),
            config_hash: hash,
            grid_n: config.grid_n,
            seed: config.seed,
            rng_algorithm: RNG_ALGORITHM.into(),
            library_version: crate::VERSION.into(),
            scalar: "f64".into(),
        };
        let mut run = Self {
            config,
            meta,
            dir,
            files: Vec::new(),
        };
        let toml = run.config.to_toml_string();
        run.write("config.toml", toml.as_bytes())?;
        Ok(run)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        if !self.files.contains(&path) {
            self.files.push(path);
        }
        Ok(())
    }

    fn write_json<S: Serialize>(&mut self, name: &str, body: &S) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(body).map_err(|e| RunError::Io {
            path: self.dir.join(name),
            message: e.to_string(),
        })?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn ctx(&self, n: usize) -> Result<GridContext, RunError> {
        GridContext::new(n).map_err(ctx_err("grid"))
    }

    fn operator(&self, n: usize) -> Result<OperatorMatrix<f64>, RunError> {
        build_operator(&self.config.operator, self.ctx(n)?).map_err(ctx_err("building the operator"))
    }

    fn finish(self, passed: bool, summary: Vec<String>) -> RunOutcome {
        RunOutcome {
            dir: self.dir,
            files: self.files,
            passed,
            summary,
        }
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let io = |e: std::io::Error| RunError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv output is utf-8")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    meta: &'a ReportMeta,
    passed: bool,
    suites: &'a [SuiteResult],
}

/// Grid-space property suites and kernel audits of the configured operator.
pub fn run_verify(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let mut run = Run::start(config, opts, "verify")?;
    let cfg = run.config.clone();
    let ctx = run.ctx(cfg.grid_n)?;
    let op = run.operator(cfg.grid_n)?;
    let gap = snap_gap(cfg.delta, cfg.grid_n);
    let tuples = cfg.verify.audit_tuples;
    let suites = vec![
        audit::gram_property_suite(cfg.seed, cfg.verify.instances).map_err(ctx_err("gram properties"))?,
        audit::complement_identity_suite(cfg.seed, cfg.verify.instances),
        audit::gram_lower_bound_suite(cfg.seed, cfg.verify.instances, Some(&op))
            .map_err(ctx_err("gram lower bound"))?,
        audit::smooth_kernel_distance_audit(&cfg.operator, ctx, cfg.k, gap, cfg.seed, tuples)
            .map_err(ctx_err("smooth kernel distances"))?,
        audit::step_kernel_ratio_audit(&cfg.operator, ctx, cfg.k, gap, cfg.seed, tuples)
            .map_err(ctx_err("step kernel ratios"))?,
        audit::kernel_complement_witness(&op, cfg.seed, 100),
    ];
    let passed = suites.iter().all(|s| s.passed);
    let rows: Vec<Vec<String>> = suites
        .iter()
        .map(|s| {
            vec![
                s.name.clone(),
                s.applicable.to_string(),
                s.passed.to_string(),
                s.instances.to_string(),
                s.failures.to_string(),
                s.statistic.clone(),
                s.worst.to_string(),
                s.threshold.to_string(),
            ]
        })
        .collect();
    let header = [
        "suite",
        "applicable",
        "passed",
        "instances",
        "failures",
        "statistic",
        "worst",
        "threshold",
    ];
    run.write("verify.csv", csv_text(&header, &rows).as_bytes())?;
    let meta = run.meta.clone();
    run.write_json(
        "verify.json",
        &VerifyReport {
            meta: &meta,
            passed,
            suites: &suites,
        },
    )?;
    let summary = suites
        .iter()
        .map(|s| {
            let verdict = match (s.applicable, s.passed) {
                (false, _) => "n/a ",
                (true, true) => "PASS",
                (true, false) => "FAIL",
            };
            format!("{verdict} {} ({} = {:e})", s.name, s.statistic, s.worst)
        })
        .collect();
    Ok(run.finish(passed, summary))
}

#[derive(Serialize)]
struct ConvergenceChecks {
    /// Relative error against `-ln delta - (1 - delta)` (identity, `k = 2`).
    closed_form_relative_error: Option<f64>,
    refinement_relative_change: f64,
    cauchy_nonnegative_decreasing: bool,
    passed: bool,
}

#[derive(Serialize)]
struct ConvergenceReport<'a> {
    meta: &'a ReportMeta,
    inverse_gram: &'a QuadratureReport,
    moments: &'a MomentTable,
    moment_grid_n: usize,
    checks: ConvergenceChecks,
}

/// Closed form of `int_{Delta_2^delta} 1/(t2 - t1)` for the Wiener process.
pub fn wiener_inverse_gram_integral(delta: f64) -> f64 {
    -delta.ln() - (1.0 - delta)
}

/// Refinement tables of the inverse-Gram integral and the L2-Cauchy moment
/// table along the epsilon ladder.
pub fn run_convergence(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let mut run = Run::start(config, opts, "convergence")?;
    let cfg = run.config.clone();
    let op = run.operator(cfg.grid_n)?;
    let t3 = theorem3_integral(&op, cfg.k, cfg.delta).map_err(ctx_err("inverse Gram integral"))?;
    let closed = (matches!(cfg.operator, OperatorSpec::Identity) && cfg.k == 2)
        .then(|| wiener_inverse_gram_integral(t3.delta_effective));
    let rows: Vec<Vec<String>> = t3
        .levels
        .iter()
        .map(|l| {
            vec![
                l.n.to_string(),
                l.value.to_string(),
                l.singular_hits.to_string(),
                l.points.to_string(),
                opt(closed),
                opt(closed.map(|c| (l.value - c) / c)),
            ]
        })
        .collect();
    let header = [
        "level_n",
        "value",
        "singular_hits",
        "points",
        "closed_form",
        "relative_error",
    ];
    run.write("convergence_inverse_gram.csv", csv_text(&header, &rows).as_bytes())?;

    let mop = run.operator(cfg.moment_grid())?;
    let table =
        cauchy_diagnostic(&mop, &cfg.eps_ladder, cfg.k, cfg.delta, cfg.expensive).map_err(ctx_err("moment table"))?;
    let moments_csv = table.to_csv().map_err(ctx_err("moment table"))?;
    run.write("convergence_moments.csv", moments_csv.as_bytes())?;

    let scale = table.cross_moments.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let closed_err = closed.map(|c| (t3.value - c).abs() / c);
    let change = t3.relative_change();
    let convergent = table.is_convergent(1e-12 * scale);
    let checks = ConvergenceChecks {
        closed_form_relative_error: closed_err,
        refinement_relative_change: change,
        cauchy_nonnegative_decreasing: convergent,
        passed: closed_err.is_none_or(|e| e < 1e-3) && change < 0.01 && convergent,
    };
    let passed = checks.passed;
    let mut summary = vec![format!(
        "inverse Gram integral {:.6} (levels {}; last change {:.3e} relative)",
        t3.value,
        t3.levels.iter().map(|l| l.n.to_string()).collect::<Vec<_>>().join("/"),
        change
    )];
    if let Some(e) = closed_err {
        summary.push(format!("closed form relative error {e:.3e}"));
    }
    summary.push(format!(
        "Cauchy increments {:?} ({})",
        table.cauchy_increments,
        if convergent {
            "nonnegative, decreasing"
        } else {
            "NOT decreasing"
        }
    ));
    let meta = run.meta.clone();
    run.write_json(
        "convergence.json",
        &ConvergenceReport {
            meta: &meta,
            inverse_gram: &t3,
            moments: &table,
            moment_grid_n: cfg.moment_grid(),
            checks,
        },
    )?;
    Ok(run.finish(passed, summary))
}

#[derive(Serialize)]
struct FwtEntry {
    probe: String,
    mode: FwtMode,
    report: QuadratureReport,
}

#[derive(Serialize)]
struct FwtCheck {
    name: String,
    passed: bool,
    detail: String,
}

#[derive(Serialize)]
struct FwtReportFile<'a> {
    meta: &'a ReportMeta,
    passed: bool,
    entries: &'a [FwtEntry],
    checks: &'a [FwtCheck],
}

/// Quadrature reports per probe and mode, with the zero-probe and dual-path
/// consistency checks.
pub fn run_fwt(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let mut run = Run::start(config, opts, "fwt")?;
    let cfg = run.config.clone();
    let ctx = run.ctx(cfg.grid_n)?;
    let op = run.operator(cfg.grid_n)?;
    let probes = if cfg.probes.is_empty() {
        vec![Profile::Zero]
    } else {
        cfg.probes.clone()
    };
    let mut modes = vec![FwtMode::Thm1FullSimplex];
    if cfg.k == 2 && cfg.operator.is_identity_plus_compact() {
        modes.push(FwtMode::Thm2K2);
    }
    modes.push(FwtMode::Eq3Delta { delta: cfg.delta });

    let mut entries = Vec::new();
    for p in &probes {
        let h = p.grid_function::<f64>(ctx).map_err(ctx_err("probe"))?;
        for &mode in &modes {
            let report = regularized_fwt_quadrature(&op, cfg.k, &h, mode).map_err(ctx_err(&format!(
                "{} / {}",
                p.label(),
                mode.name()
            )))?;
            entries.push(FwtEntry {
                probe: p.label(),
                mode,
                report,
            });
        }
    }

    let mut checks = Vec::new();
    let find = |probe: &str, name: &str| entries.iter().find(|e| e.probe == probe && e.mode.name() == name);
    for p in &probes {
        let label = p.label();
        if matches!(p, Profile::Zero) {
            for e in entries
                .iter()
                .filter(|e| e.probe == label && e.mode != (FwtMode::Eq3Delta { delta: cfg.delta }))
            {
                checks.push(FwtCheck {
                    name: format!("zero probe vanishes ({})", e.mode.name()),
                    passed: e.report.value == 0.0,
                    detail: format!("value {:e}, singular hits {}", e.report.value, e.report.singular_hits),
                });
            }
            if op.satisfies_conditions() {
                let t3 = theorem3_integral(&op, cfg.k, cfg.delta).map_err(ctx_err("inverse Gram integral"))?;
                if let Some(e3) = find(&label, "eq3_delta") {
                    let expect = t3.value / (2.0 * PI).powi(cfg.k as i32 - 1);
                    let rel = (e3.report.value - expect).abs() / expect.abs();
                    checks.push(FwtCheck {
                        name: "zero probe matches inverse Gram integral".into(),
                        passed: rel < 1e-6,
                        detail: format!("relative difference {rel:e}"),
                    });
                }
            }
        }
        if let (Some(a), Some(b)) = (find(&label, "thm1_full_simplex"), find(&label, "thm2_k2")) {
            let gap = (a.report.value + b.report.value).abs();
            let tol = a.report.error_estimate.max(b.report.error_estimate) + 1e-12 * a.report.value.abs();
            checks.push(FwtCheck {
                name: format!("dual path agreement up to sign ({label})"),
                passed: gap <= tol,
                detail: format!("|thm1 + thm2| = {gap:e}, tolerance {tol:e}"),
            });
        }
    }
    let passed = checks.iter().all(|c| c.passed);

    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            let finest = e.report.levels.last();
            vec![
                e.probe.clone(),
                e.mode.name().into(),
                e.report.value.to_string(),
                e.report.error_estimate.to_string(),
                e.report.singular_hits.to_string(),
                finest.map_or(0, |l| l.n).to_string(),
                e.report.delta_effective.to_string(),
                e.report.two_pi_factor.to_string(),
                e.report.sign_convention.clone(),
            ]
        })
        .collect();
    let header = [
        "probe",
        "mode",
        "value",
        "error_estimate",
        "singular_hits",
        "finest_n",
        "delta_effective",
        "two_pi_factor",
        "sign_convention",
    ];
    run.write("fwt.csv", csv_text(&header, &rows).as_bytes())?;
    let meta = run.meta.clone();
    run.write_json(
        "fwt.json",
        &FwtReportFile {
            meta: &meta,
            passed,
            entries: &entries,
            checks: &checks,
        },
    )?;
    let summary = checks
        .iter()
        .map(|c| format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail))
        .collect();
    Ok(run.finish(passed, summary))
}

#[derive(Serialize)]
struct CoordinateStats {
    mean: f64,
    variance: f64,
    variance_stderr: f64,
}

#[derive(Serialize)]
struct SampleReport<'a> {
    meta: &'a ReportMeta,
    paths: usize,
    /// `|A 1_[0,1]|^2`, the per-coordinate variance at `t = 1`.
    covariance_at_one: f64,
    coord1_at_one: CoordinateStats,
    coord2_at_one: CoordinateStats,
    correlation_at_one: f64,
}

fn stats(xs: &[f64]) -> CoordinateStats {
    let (mean, _) = mean_and_stderr(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let (var, var_se) = mean_and_stderr(&sq);
    let c = xs.len() as f64 / (xs.len() as f64 - 1.0);
    CoordinateStats {
        mean,
        variance: var * c,
        variance_stderr: var_se * c,
    }
}

/// Path export with end-point statistics.
pub fn run_sample(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let mut run = Run::start(config, opts, "sample")?;
    let cfg = run.config.clone();
    let op = run.operator(cfg.grid_n)?;
    let paths = sample_paths(&op, cfg.seed, cfg.paths).map_err(ctx_err("sampling paths"))?;
    let mut csv = Vec::new();
    write_paths_csv(&paths, &mut csv).map_err(ctx_err("path csv"))?;
    run.write("sample_paths.csv", &csv)?;
    let n = cfg.grid_n;
    let x1: Vec<f64> = paths.iter().map(|p| p.coord1[n]).collect();
    let x2: Vec<f64> = paths.iter().map(|p| p.coord2[n]).collect();
    let (s1, s2) = (stats(&x1), stats(&x2));
    let cross: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| (a - s1.mean) * (b - s2.mean)).collect();
    let (cov12, _) = mean_and_stderr(&cross);
    let denom = (s1.variance * s2.variance).sqrt();
    let correlation = if denom > 0.0 { cov12 / denom } else { 0.0 };
    let var = covariance(&op, 1.0, 1.0);
    let summary = vec![format!(
        "{} paths; variance at t=1: {:.5} / {:.5} (exact {:.5}); correlation {:.4}",
        cfg.paths, s1.variance, s2.variance, var, correlation
    )];
    let meta = run.meta.clone();
    run.write_json(
        "sample.json",
        &SampleReport {
            meta: &meta,
            paths: cfg.paths,
            covariance_at_one: var,
            coord1_at_one: s1,
            coord2_at_one: s2,
            correlation_at_one: correlation,
        },
    )?;
    Ok(run.finish(true, summary))
}
