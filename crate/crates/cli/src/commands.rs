use crate::config::{Format, RunConfig};
use crate::{Estimate, EXIT_FAIL, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use phnls::estlab::{
    verify_almost_orthogonality, verify_bernstein, verify_bilinear_bourgain, verify_bilinear_h1, verify_bilinear_l2,
    verify_strichartz, verify_trilinear, EstimateReport, Verdict,
};
use phnls::evolve::{simulate as run_simulation, SimConfig};
use phnls::growth::{track_growth, GrowthReport};
use phnls::io::{csv_preamble, observables_csv, to_json, write_trajectory, VERSION};
use phnls::selftest::{run_selftest, SelftestOptions};
use phnls::spectral::BasisSpec;
use phnls::Error;
use rayon::prelude::*;
use serde_json::{json, Value};
use std::fmt;
use std::path::{Path, PathBuf};

/// Slack above the growth bound accepted by `growth`.
const GROWTH_SLACK: f64 = 0.1;

pub struct Outcome {
    pub code: u8,
    pub lines: Vec<String>,
    pub summary: Value,
}

#[derive(Debug)]
pub struct CmdError {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::Resolution(_) | Error::Unsupported(_) => EXIT_USAGE,
            Error::AssumptionViolated(_) => EXIT_FAIL,
            _ => EXIT_RUNTIME,
        };
        CmdError { code, kind: e.kind().into(), message: e.to_string() }
    }
}

type CmdResult = Result<Outcome, CmdError>;

fn write(path: &Path, contents: &[u8]) -> Result<(), CmdError> {
    std::fs::write(path, contents)
        .map_err(|e| CmdError { code: EXIT_RUNTIME, kind: "IoError".into(), message: format!("{}: {e}", path.display()) })
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CmdError> {
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir)
        .map_err(|e| CmdError { code: EXIT_RUNTIME, kind: "IoError".into(), message: format!("{}: {e}", dir.display()) })?;
    Ok(dir)
}

fn echo(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn selftest(corrupt_quadrature: bool) -> CmdResult {
    let s = run_selftest(&SelftestOptions { corrupt_quadrature });
    let mut lines: Vec<String> = s
        .checks
        .iter()
        .map(|c| {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            format!("{tag} {} value={:e} tolerance={:e} ({:.2}s)", c.name, c.value, c.tolerance, c.seconds)
        })
        .collect();
    if !s.passed {
        lines.push(format!("failed: {}", s.failures.join(", ")));
    }
    let code = if s.passed { EXIT_OK } else { EXIT_FAIL };
    Ok(Outcome { code, lines, summary: serde_json::to_value(&s).expect("summary serializes") })
}

pub fn simulate(cfg: &RunConfig) -> CmdResult {
    let sim = &cfg.simulation;
    sim.validate()?;
    let out = run_simulation(sim)?;
    let dir = out_dir(cfg)?;
    let echo = echo(cfg);
    let mut outputs = Vec::new();
    if cfg.output.trajectory {
        let tdir = dir.join("trajectory");
        write_trajectory(&tdir, &out.trajectory, &echo)?;
        outputs.push(display(&tdir));
    }
    if cfg.output.wants(Format::Csv) {
        let p = dir.join("observables.csv");
        write(&p, observables_csv(&out.observables, &echo).as_bytes())?;
        outputs.push(display(&p));
    }
    let first = out.observables[0];
    let last = *out.observables.last().expect("at least one frame");
    let drift = |f: fn(&phnls::evolve::Observables) -> f64| {
        out.observables.iter().map(|o| (f(o) / f(&first) - 1.0).abs()).fold(0.0, f64::max)
    };
    let (mass_drift, energy_drift) = (drift(|o| o.mass), drift(|o| o.energy));
    if cfg.output.wants(Format::Json) {
        let p = dir.join("simulate.json");
        let report = json!({
            "version": VERSION,
            "config": echo,
            "frames": out.observables.len(),
            "final": last,
            "mass_drift": mass_drift,
            "energy_drift": energy_drift,
        });
        write(&p, to_json(&report)?.as_bytes())?;
        outputs.push(display(&p));
    }
    let mut lines = vec![format!(
        "simulate: {} frames to t = {}, mass drift {mass_drift:e}, energy drift {energy_drift:e}",
        out.observables.len(),
        last.t
    )];
    lines.extend(outputs.iter().map(|o| format!("wrote {o}")));
    let summary = json!({
        "command": "simulate",
        "status": "ok",
        "frames": out.observables.len(),
        "mass_drift": mass_drift,
        "energy_drift": energy_drift,
        "outputs": outputs,
    });
    Ok(Outcome { code: EXIT_OK, lines, summary })
}

fn estimate_name(e: Estimate) -> &'static str {
    match e {
        Estimate::Strichartz => "strichartz",
        Estimate::Bernstein => "bernstein",
        Estimate::BilinearH1 => "bilinear-h1",
        Estimate::BilinearL2 => "bilinear-l2",
        Estimate::BilinearBourgain => "bilinear-bourgain",
        Estimate::AlmostOrth => "almost-orth",
        Estimate::Trilinear => "trilinear",
    }
}

fn run_estimate(e: Estimate, cfg: &RunConfig) -> Result<EstimateReport, Error> {
    let plan = &cfg.sweep;
    let est = &cfg.estimates;
    match e {
        Estimate::Strichartz => {
            let spec = BasisSpec::from_params(&est.strichartz.spec)?;
            verify_strichartz(&spec, est.strichartz.q, est.strichartz.r, plan)
        }
        Estimate::Bernstein => verify_bernstein(est.bernstein.p, est.bernstein.q, est.bernstein.s, plan),
        Estimate::BilinearH1 => verify_bilinear_h1(plan),
        Estimate::BilinearL2 => verify_bilinear_l2(plan),
        Estimate::BilinearBourgain => verify_bilinear_bourgain(plan),
        Estimate::AlmostOrth => verify_almost_orthogonality(plan),
        Estimate::Trilinear => verify_trilinear(&BasisSpec::from_params(&est.trilinear.spec)?, plan),
    }
}

fn report_csv(report: &EstimateReport, echo: &Value) -> Result<Vec<u8>, CmdError> {
    let mut w = csv::Writer::from_writer(csv_preamble(echo).into_bytes());
    let fail = |e: csv::Error| CmdError { code: EXIT_RUNTIME, kind: "IoError".into(), message: e.to_string() };
    w.write_record(EstimateReport::CSV_HEADER).map_err(fail)?;
    for row in report.csv_rows() {
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| CmdError { code: EXIT_RUNTIME, kind: "IoError".into(), message: e.to_string() })
}

pub fn verify(e: Estimate, cfg: &RunConfig) -> CmdResult {
    let name = estimate_name(e);
    let report = run_estimate(e, cfg)?;
    let dir = out_dir(cfg)?;
    let echo = echo(cfg);
    let mut outputs = Vec::new();
    if cfg.output.wants(Format::Json) {
        let p = dir.join(format!("{name}.json"));
        write(&p, to_json(&report)?.as_bytes())?;
        outputs.push(display(&p));
    }
    if cfg.output.wants(Format::Csv) {
        let p = dir.join(format!("{name}.csv"));
        write(&p, &report_csv(&report, &echo)?)?;
        outputs.push(display(&p));
    }
    let code = match report.verdict {
        Verdict::Pass | Verdict::Recorded => EXIT_OK,
        Verdict::Inconclusive if cfg.estimates.allow_inconclusive => EXIT_OK,
        Verdict::Inconclusive | Verdict::Fail => EXIT_FAIL,
    };
    let verdict = serde_json::to_value(report.verdict).expect("verdict serializes");
    let verdict = verdict.as_str().unwrap_or_default().to_string();
    let mut lines = vec![format!(
        "verify {name}: {verdict}, observed {}, expectation {}",
        report.observed.map(|v| format!("{v:.4}")).unwrap_or_else(|| "none".into()),
        serde_json::to_string(&report.expectation).expect("expectation serializes"),
    )];
    lines.extend(report.notes.iter().map(|n| format!("note: {n}")));
    lines.extend(outputs.iter().map(|o| format!("wrote {o}")));
    let summary = json!({
        "command": "verify",
        "estimate": name,
        "status": if code == EXIT_OK { "ok" } else { "fail" },
        "verdict": verdict,
        "observed": report.observed,
        "fit": report.fit,
        "outputs": outputs,
    });
    Ok(Outcome { code, lines, summary })
}

pub fn growth(cfg: &RunConfig) -> CmdResult {
    let g = &cfg.growth;
    let signs = if g.signs.is_empty() { vec![cfg.simulation.sign] } else { g.signs.clone() };
    let runs: Vec<SimConfig> = signs.iter().map(|&sign| SimConfig { sign, ..cfg.simulation.clone() }).collect();
    let jobs: Vec<(u32, &SimConfig)> = g.k.iter().flat_map(|&k| runs.iter().map(move |r| (k, r))).collect();
    if jobs.is_empty() {
        return Err(CmdError { code: EXIT_USAGE, kind: "InvalidArgument".into(), message: "growth.k is empty".into() });
    }
    let reports: Vec<GrowthReport> = jobs
        .par_iter()
        .map(|(k, sim)| track_growth(sim, *k, g.horizon, g.stride))
        .collect::<Result<_, Error>>()?;
    let dir = out_dir(cfg)?;
    let echo = echo(cfg);
    let mut outputs = Vec::new();
    let mut lines = Vec::new();
    let mut failed = false;
    let mut runs_json = Vec::new();
    for r in &reports {
        let stem = r.file_stem();
        if cfg.output.wants(Format::Json) {
            let p = dir.join(format!("{stem}.json"));
            write(&p, to_json(r)?.as_bytes())?;
            outputs.push(display(&p));
        }
        if cfg.output.wants(Format::Csv) {
            let p = dir.join(format!("{stem}.csv"));
            let mut text = csv_preamble(&echo);
            text.push_str(&r.series_csv());
            write(&p, text.as_bytes())?;
            outputs.push(display(&p));
        }
        let ok = r.alpha <= r.bound + GROWTH_SLACK;
        failed |= !ok;
        lines.push(format!(
            "growth {stem}: alpha {:.4} [{:.4}, {:.4}], bound {:.4}, H1 max/min {:.4} {}",
            r.alpha,
            r.alpha_ci[0],
            r.alpha_ci[1],
            r.bound,
            r.h1_ratio,
            if ok { "ok" } else { "above bound" }
        ));
        runs_json.push(json!({
            "k": r.k,
            "sign": r.config.sign,
            "alpha": r.alpha,
            "alpha_ci": r.alpha_ci,
            "bound": r.bound,
            "h1_ratio": r.h1_ratio,
            "within_bound": ok,
        }));
    }
    lines.extend(outputs.iter().map(|o| format!("wrote {o}")));
    let code = if failed { EXIT_FAIL } else { EXIT_OK };
    let summary = json!({
        "command": "growth",
        "status": if failed { "fail" } else { "ok" },
        "runs": runs_json,
        "outputs": outputs,
    });
    Ok(Outcome { code, lines, summary })
}
