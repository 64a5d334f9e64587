//! Executes a [`Scenario`]: runs its analyses in order, writes one artifact
//! set per analysis plus `summary.json`, and maps the outcome to an exit
//! code.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use crate::audit;
use crate::dichotomy::{self, DichotomyConfig, EquivalenceConfig};
use crate::error::Error;
use crate::family::EvolutionFamily;
use crate::green::{self, GreenKernel};
use crate::growth_rate::GrowthRate;
use crate::measure::{MuQuadratureSpec, QuadratureMethod};
use crate::scenario::{Analysis, ParseError, Scenario};
use crate::semigroup::{FunctionDomain, MuGrid, SampledFunction};

pub const OUTPUT_ENV: &str = "HDLAB_OUTPUT";

pub const ALGEBRA_AUDIT_CHECKS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Parse = 1,
    Violation = 2,
    Runtime = 3,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("cannot read scenario {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("cannot write to {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("analysis {analysis} failed: {source}")]
    Analysis { analysis: Analysis, source: Error },
}

impl RunError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            RunError::Read { .. } | RunError::Parse { .. } => ExitCode::Parse,
            RunError::Write { .. } | RunError::Analysis { .. } => ExitCode::Runtime,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub code: ExitCode,
    pub output_dir: PathBuf,
    pub summary: Value,
    pub error: Option<RunError>,
}

/// `--output-dir` beats `HDLAB_OUTPUT`, which beats the scenario's
/// `output_dir`; the fallback is `hdlab-out/<name>`.
pub fn resolve_output_dir(scenario: &Scenario, flag: Option<&Path>, env: Option<&str>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    scenario
        .output_dir
        .clone()
        .unwrap_or_else(|| Path::new("hdlab-out").join(&scenario.name))
}

pub fn load_scenario(path: &Path) -> Result<Scenario, RunError> {
    let text = fs::read_to_string(path).map_err(|source| RunError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::parse(&text).map_err(|source| RunError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

struct Context<'a> {
    scenario: &'a Scenario,
    rate: GrowthRate,
    family: EvolutionFamily,
    out: &'a Path,
}

impl Context<'_> {
    fn dichotomy_config(&self) -> DichotomyConfig {
        DichotomyConfig {
            window_mu: self.scenario.window_mu,
            center_mu: 0.0,
            samples: self.scenario.samples,
            seed: self.scenario.seed,
        }
    }

    fn write(
        &self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
    ) -> Result<(), RunError> {
        let path = self.out.join(name);
        let wrap = |source| RunError::Write {
            path: path.clone(),
            source,
        };
        let file = fs::File::create(&path).map_err(wrap)?;
        let mut w = BufWriter::new(file);
        body(&mut w).map_err(wrap)?;
        w.flush().map_err(wrap)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), RunError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::other)?;
            writeln!(w)
        })
    }
}

/// Result of one analysis for the summary: a JSON object and whether an
/// invariant was violated.
struct Finding {
    summary: Value,
    violation: bool,
}

fn analysis_error(analysis: Analysis) -> impl Fn(Error) -> RunError {
    move |source| RunError::Analysis { analysis, source }
}

fn run_algebra_audit(cx: &Context) -> Result<Finding, RunError> {
    let report = audit::algebra_audit(&cx.rate, ALGEBRA_AUDIT_CHECKS, cx.scenario.seed)
        .map_err(analysis_error(Analysis::AlgebraAudit))?;
    cx.write_json("algebra_audit.json", &report)?;
    Ok(Finding {
        summary: json!({ "passed": report.passed, "checks": report.checks, "max_residual": report.max_residual }),
        violation: !report.passed,
    })
}

fn run_semigroup_audit(cx: &Context) -> Result<Finding, RunError> {
    let report = audit::semigroup_audit(&cx.family, cx.scenario.grid_delta, cx.scenario.seed)
        .map_err(analysis_error(Analysis::SemigroupAudit))?;
    cx.write_json("semigroup_audit.json", &report)?;
    Ok(Finding {
        summary: json!({
            "passed": report.passed,
            "law_order_ratio": report.law_order_ratio,
            "conjugacy_residual": report.conjugacy_residual,
            "K": report.h_bound_k,
            "alpha": report.h_bound_alpha,
        }),
        violation: !report.passed,
    })
}

fn write_cloud(
    cx: &Context,
    name: &str,
    cloud: &[(f64, f64)],
    line: Option<(f64, f64)>,
) -> Result<(), RunError> {
    cx.write(name, |w| {
        writeln!(w, "delta_mu,log_norm,envelope")?;
        for (d, y) in cloud {
            let env = line.map_or(f64::NAN, |(ln_n, nu)| ln_n - nu * d);
            writeln!(w, "{d},{y},{env}")?;
        }
        Ok(())
    })
}

fn run_dichotomy(cx: &Context) -> Result<Finding, RunError> {
    let err = analysis_error(Analysis::Dichotomy);
    let cfg = cx.dichotomy_config();
    let mut notes = Vec::new();
    let (p, detected) = match dichotomy::detect_projection(&cx.family, cfg.window_mu) {
        Ok(p) => (p, true),
        Err(e @ Error::UndetectableSplitting { .. }) => {
            notes.push(e.to_string());
            (
                dichotomy::contracting_projection(&cx.family, cfg.window_mu).map_err(&err)?,
                false,
            )
        }
        Err(e) => return Err(err(e)),
    };
    let clouds = dichotomy::decay_clouds(&cx.family, &p, &cfg).map_err(&err)?;
    let constants = match dichotomy::fit_constants(&clouds) {
        Ok(c) => Some(c),
        Err(Error::NoDichotomy(m)) => {
            notes.push(m);
            None
        }
        Err(e) => return Err(err(e)),
    };
    let line = constants.map(|c| (c.n.ln(), c.nu));
    write_cloud(cx, "decay_cloud.csv", &clouds.stable, line)?;
    write_cloud(cx, "decay_cloud_unstable.csv", &clouds.unstable, line)?;

    let mut violation = false;
    let mut certificate = None;
    let mut audit = None;
    let mut lifted = None;
    if detected {
        let a = p
            .audit(
                &cx.family,
                (-0.25 * cfg.window_mu, 0.25 * cfg.window_mu),
                3.0,
                50,
                cfg.seed,
            )
            .map_err(&err)?;
        if a.idempotency > 1e-9 || a.intertwining > 1e-6 {
            notes.push(format!("projection invariants violated: {a:?}"));
            violation = true;
        }
        audit = Some(a);
    }
    if let Some(c) = constants {
        let cert = dichotomy::verify_h_dichotomy(&cx.family, &p, c.n, c.nu, &cfg).map_err(&err)?;
        if cert.verdict {
            // a verified dichotomy must lift to the semigroup with the same constants
            let grid = EquivalenceConfig::default().probe_grid;
            let probes = dichotomy::default_probes(&cx.family, grid).map_err(&err)?;
            let t0: Vec<_> = [0.0, 0.5, 1.0, 2.0, 4.0]
                .iter()
                .map(|&x| cx.rate.from_mu(x))
                .collect::<Result<_, _>>()
                .map_err(&err)?;
            let h = dichotomy::hyperbolicity_test(&cx.family, &p, &probes, &t0, c.n, c.nu)
                .map_err(&err)?;
            if !h.passed {
                notes.push("verified dichotomy does not lift to the semigroup".into());
                violation = true;
            }
            lifted = Some(h.passed);
        }
        certificate = Some(cert);
    }
    let verdict = certificate.is_some_and(|c| c.verdict);
    let report = json!({
        "detected": detected,
        "verdict": verdict,
        "constants": constants,
        "certificate": certificate,
        "projection_audit": audit,
        "semigroup_lift": lifted,
        "notes": notes,
    });
    cx.write_json("dichotomy.json", &report)?;
    Ok(Finding {
        summary: json!({
            "verdict": verdict,
            "N": constants.map(|c| c.n),
            "nu": constants.map(|c| c.nu),
        }),
        violation,
    })
}

fn run_spectrum(cx: &Context) -> Result<Finding, RunError> {
    let s = cx.scenario.spectrum;
    let scan = dichotomy::dichotomy_spectrum(
        &cx.family,
        s.lambda_lo,
        s.lambda_hi,
        s.n_lambda,
        &cx.dichotomy_config(),
    )
    .map_err(analysis_error(Analysis::Spectrum))?;
    cx.write("spectrum.csv", |w| {
        writeln!(w, "lambda,in_spectrum")?;
        for (l, inside) in scan.in_spectrum() {
            writeln!(w, "{l},{}", u8::from(inside))?;
        }
        Ok(())
    })?;
    cx.write_json("spectrum.json", &scan)?;
    let in_spectrum: Vec<f64> = scan
        .in_spectrum()
        .filter(|(_, i)| *i)
        .map(|(l, _)| l)
        .collect();
    Ok(Finding {
        summary: json!({ "gap_around_zero": scan.gap_around_zero, "in_spectrum": in_spectrum }),
        violation: false,
    })
}

fn run_resolvent(cx: &Context) -> Result<Finding, RunError> {
    let err = analysis_error(Analysis::Resolvent);
    let r = cx.scenario.resolvent;
    let delta = cx.scenario.grid_delta;
    let kernel = GreenKernel::detect(&cx.family, &cx.dichotomy_config()).map_err(&err)?;
    let grid = MuGrid::spanning(-r.half_width, r.half_width, delta).map_err(&err)?;
    let n = cx.family.dim();
    let dir = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let g = SampledFunction::scalar_profile(grid, &dir, FunctionDomain::HLine(cx.rate.id()), |x| {
        (1.0 - (x / r.hat_radius).abs()).max(0.0)
    })
    .map_err(&err)?;
    let spec = MuQuadratureSpec::new(QuadratureMethod::Adaptive, r.tol, 1 << 22).map_err(&err)?;
    let w = green::apply_resolvent_inverse(&kernel, &g, &spec).map_err(&err)?;
    let residual = green::resolvent_residual(&cx.family, &w, &g, delta).map_err(&err)?;
    cx.write("resolvent_profile.csv", |out| {
        writeln!(out, "mu,norm")?;
        for (i, v) in w.values().iter().enumerate() {
            writeln!(out, "{},{}", grid.x(i), v.norm())?;
        }
        Ok(())
    })?;
    cx.write("resolvent.csv", |out| w.write_csv(Some(&cx.rate), out))?;
    let sup = w.sup_norm().map_err(&err)?;
    let report = json!({
        "N": kernel.n(),
        "nu": kernel.nu(),
        "grid_delta": delta,
        "grid_len": grid.len(),
        "sup_norm": sup,
        "generator_residual": residual,
    });
    cx.write_json("resolvent.json", &report)?;
    Ok(Finding {
        summary: report,
        violation: false,
    })
}

fn run_equivalence(cx: &Context) -> Result<Finding, RunError> {
    let s = cx.scenario.spectrum;
    let cfg = EquivalenceConfig {
        dichotomy: cx.dichotomy_config(),
        lambda_lo: s.lambda_lo,
        lambda_hi: s.lambda_hi,
        n_lambda: s.n_lambda,
        ..Default::default()
    };
    let report = dichotomy::equivalence_report(&cx.family, &cfg)
        .map_err(analysis_error(Analysis::Equivalence))?;
    cx.write_json("equivalence.json", &report)?;
    Ok(Finding {
        summary: json!({ "verdicts": report.verdicts, "constants": report.constants, "agree": report.agree }),
        violation: !report.agree,
    })
}

/// Runs every analysis and writes `summary.json`; the first analysis error
/// stops the run and is recorded in the summary.
pub fn run_scenario(scenario: &Scenario, out: &Path) -> RunOutcome {
    let mut results = serde_json::Map::new();
    let mut code = ExitCode::Success;
    let mut error = None;
    let base = json!({
        "name": scenario.name,
        "seed": scenario.seed,
        "rate": scenario.rate,
        "family": scenario.family,
        "window_mu": scenario.window_mu,
        "grid_delta": scenario.grid_delta,
        "analyses": scenario.analyses,
    });

    let setup = (|| -> Result<Context, RunError> {
        fs::create_dir_all(out).map_err(|source| RunError::Write {
            path: out.to_path_buf(),
            source,
        })?;
        let first = scenario
            .analyses
            .first()
            .copied()
            .unwrap_or(Analysis::AlgebraAudit);
        let rate = scenario.rate.build().map_err(analysis_error(first))?;
        let family = scenario
            .family
            .build(&rate)
            .map_err(analysis_error(first))?;
        Ok(Context {
            scenario,
            rate,
            family,
            out,
        })
    })();

    match setup {
        Err(e) => {
            code = e.exit_code();
            error = Some(e);
        }
        Ok(cx) => {
            for &analysis in &scenario.analyses {
                let started = Instant::now();
                log::info!("running {analysis}");
                let finding = match analysis {
                    Analysis::AlgebraAudit => run_algebra_audit(&cx),
                    Analysis::SemigroupAudit => run_semigroup_audit(&cx),
                    Analysis::Dichotomy => run_dichotomy(&cx),
                    Analysis::Spectrum => run_spectrum(&cx),
                    Analysis::Resolvent => run_resolvent(&cx),
                    Analysis::Equivalence => run_equivalence(&cx),
                };
                log::info!("{analysis} finished in {:.2?}", started.elapsed());
                match finding {
                    Ok(f) => {
                        if f.violation {
                            log::warn!("{analysis} reported a violation or disagreement");
                            code = ExitCode::Violation;
                        }
                        results.insert(analysis.name().to_string(), f.summary);
                    }
                    Err(e) => {
                        code = e.exit_code();
                        error = Some(e);
                        break;
                    }
                }
            }
        }
    }

    let mut summary = base;
    summary["results"] = Value::Object(results);
    summary["exit_code"] = json!(code as i32);
    summary["error"] = json!(error.as_ref().map(|e| e.to_string()));
    let path = out.join("summary.json");
    let written = fs::File::create(&path)
        .and_then(|f| {
            let mut w = BufWriter::new(f);
            serde_json::to_writer_pretty(&mut w, &summary).map_err(io::Error::other)?;
            writeln!(w)?;
            w.flush()
        })
        .map_err(|source| RunError::Write { path, source });
    if let (Err(e), None) = (written, &error) {
        code = ExitCode::Runtime;
        error = Some(e);
    }
    RunOutcome {
        code,
        output_dir: out.to_path_buf(),
        summary,
        error,
    }
}
