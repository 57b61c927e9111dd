//! Command-line orchestration: configuration, the `run`, `verify` and
//! `landmarks` subcommands, and the on-disk artifact formats.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::continuation::{
    continue_natural, energy_slope_cross, tangent, trace_branch, Branch, ContinuationControls, CriticalPoint,
    DomainKind, StepKind, Termination,
};
use crate::error::{Error, Result};
use crate::meanfield::{jacobian_fd_check, newton_solve, JacobianVariant, Solution};
use crate::mesh::{build_mesh, DomainSpec, Mesh};
use crate::spectral::{
    constrained_spectrum, default_margin, dense_constrained_spectrum, nondegeneracy_check,
    nonpositive_count, proportionality_check, QuadraticFormReport,
};
use crate::thermo::{energy_parametrize, verify_entropy_identities, ThermoCurve};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "MFCONT_OUT_DIR";

pub const BRANCH_HEADER: &str = "s,lambda,E,S,beta,sigma1,sigma2,mean_psi,max_u,dlambda_ds,fold_flag";
pub const THERMO_HEADER: &str = "E,lambda,S,beta,d2S_dE2,sigma1,sigma2";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verbosity {
    Quiet,
    #[default]
    Normal,
}

/// Settings for the `verify` suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Resolution of the small mesh used for the dense-oracle comparison.
    pub oracle_resolution: usize,
    /// Branch points sampled for the pointwise identities.
    pub sample_points: usize,
    /// `λ` offset of the centered difference in the tangent check.
    pub fd_delta: f64,
    /// Test hook: evaluate the Jacobian without its mean projection.
    pub break_jacobian: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            oracle_resolution: 6,
            sample_points: 10,
            fd_delta: 1e-3,
            break_jacobian: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub resolution: usize,
    #[serde(default)]
    pub controls: ContinuationControls,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub verbosity: Verbosity,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn new(domain: DomainSpec, resolution: usize) -> Self {
        RunConfig {
            domain,
            resolution,
            controls: ContinuationControls::default(),
            output_dir: default_out(),
            verbosity: Verbosity::Normal,
            verify: VerifyConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.resolution < 4 {
            return Err(Error::Config(format!(
                "resolution must be at least 4, got {}",
                self.resolution
            )));
        }
        self.controls.validate()?;
        if self.verify.oracle_resolution < 4 || self.verify.sample_points == 0 {
            return Err(Error::Config("verify settings must be positive".into()));
        }
        if !(self.verify.fd_delta > 0.0) {
            return Err(Error::Config("fd_delta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(name = "mfcont", version, about = "Mean field equation continuation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Trace the branch and write branch.csv, thermo.csv, landmarks.json, report.txt.
    Run(CommonArgs),
    /// Run the identity and property checks and print one line per check.
    Verify(VerifyArgs),
    /// Trace the branch and write only landmarks.json.
    Landmarks(CommonArgs),
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Negative control: use a Jacobian without the mean projection.
    #[arg(long, hide = true)]
    pub break_jacobian: bool,
}

fn fmt_f(x: f64) -> String {
    // adding 0.0 turns -0.0 into 0.0
    format!("{:.16e}", x + 0.0)
}

/// `branch.csv` contents.
pub fn branch_csv(branch: &Branch) -> String {
    let mut out = String::new();
    out.push_str(BRANCH_HEADER);
    out.push('\n');
    for p in &branch.points {
        let sol = &p.solution;
        let fields = [
            fmt_f(p.s),
            fmt_f(sol.lambda),
            fmt_f(sol.energy),
            fmt_f(sol.entropy),
            fmt_f(-sol.lambda),
            fmt_f(p.sigma1()),
            fmt_f(p.sigma2()),
            fmt_f(sol.mean_psi),
            fmt_f(p.max_u),
            fmt_f(p.dlambda_ds),
            p.fold_flag.as_str().to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// `thermo.csv` contents.
pub fn thermo_csv(curve: &ThermoCurve) -> String {
    let mut out = String::new();
    out.push_str(THERMO_HEADER);
    out.push('\n');
    for r in &curve.rows {
        let fields = [
            r.energy, r.lambda, r.entropy, r.beta, r.d2s_de2, r.sigma1, r.sigma2,
        ]
        .map(fmt_f);
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct LandmarksFile<'a> {
    kind: DomainKind,
    termination: Termination,
    #[serde(rename = "E0")]
    e0: Option<f64>,
    #[serde(rename = "E_8pi")]
    e_8pi: Option<f64>,
    lambda_star: Option<f64>,
    #[serde(rename = "E_star")]
    e_star: Option<f64>,
    #[serde(rename = "E_m")]
    e_m: Option<f64>,
    #[serde(rename = "E_d")]
    e_d: Option<f64>,
    critical_points: &'a [CriticalPoint],
    notes: &'a [String],
}

/// `landmarks.json` contents.
pub fn landmarks_json(branch: &Branch) -> Result<String> {
    let lm = &branch.landmarks;
    let file = LandmarksFile {
        kind: branch.kind,
        termination: branch.termination,
        e0: lm.e0,
        e_8pi: if branch.kind == DomainKind::FirstKind {
            None
        } else {
            lm.e_8pi
        },
        lambda_star: lm.lambda_star,
        e_star: lm.e_star,
        e_m: lm.e_m,
        e_d: lm.e_d,
        critical_points: &branch.critical_points,
        notes: &lm.notes,
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

/// Indices of at most `count` points spread evenly over `candidates`.
fn spread(candidates: &[usize], count: usize) -> Vec<usize> {
    if candidates.len() <= count {
        return candidates.to_vec();
    }
    let mut out: Vec<usize> = (0..count)
        .map(|i| candidates[i * (candidates.len() - 1) / (count - 1).max(1)])
        .collect();
    out.dedup();
    out
}

fn hypothesis_reports(branch: &Branch, count: usize) -> Vec<(usize, Result<QuadraticFormReport>)> {
    let all: Vec<usize> = (0..branch.points.len()).collect();
    let mut idx = spread(&all, count);
    for cp in &branch.critical_points {
        idx.extend([cp.index.saturating_sub(1), cp.index, cp.index + 1]);
    }
    idx.retain(|i| *i < branch.points.len());
    idx.sort_unstable();
    idx.dedup();
    idx.into_iter()
        .map(|i| {
            let p = &branch.points[i];
            let rep = nondegeneracy_check(&p.solution, &p.spectrum, default_margin(p.lambda()));
            (i, rep)
        })
        .collect()
}

/// Human-readable summary of a traced branch.
pub fn report_text(cfg: &RunConfig, mesh: &Mesh, branch: &Branch) -> String {
    let mut r = String::new();
    let _ = writeln!(r, "domain: {:?}", cfg.domain);
    let _ = writeln!(
        r,
        "mesh: {} unknowns, h = {:.6e}, quadrature area {:.12} (relative error {:.3e})",
        mesh.len(),
        mesh.h(),
        mesh.quadrature_area(),
        mesh.area_error()
    );
    let _ = writeln!(r, "points: {}", branch.points.len());
    let _ = writeln!(r, "kind: {:?}", branch.kind);
    let _ = writeln!(r, "termination: {:?}", branch.termination);
    if let Some(m) = &branch.message {
        let _ = writeln!(r, "termination detail: {m}");
    }
    match branch.handoff {
        Some(h) => {
            let p = &branch.points[h.min(branch.points.len() - 1)];
            let _ = writeln!(r, "arclength from point {h} (lambda = {:.10})", p.lambda());
        }
        None => {
            let _ = writeln!(r, "natural continuation only");
        }
    }
    for cp in &branch.critical_points {
        let _ = writeln!(
            r,
            "critical point: {:?} at index {} lambda = {:.10} E = {:.10} a* = {:.6e}",
            cp.flag, cp.index, cp.lambda, cp.energy, cp.a_star
        );
    }
    let _ = writeln!(r, "sign mismatches between sigma1 and dlambda/ds: {}", branch.sign_mismatches.len());

    let mut energy_id = 0.0f64;
    let mut dirichlet_id = 0.0f64;
    let mut prop = 0.0f64;
    let mut cross = 0.0f64;
    let mut min_tau = f64::INFINITY;
    let mut max_res = 0.0f64;
    for p in &branch.points {
        let sol = &p.solution;
        energy_id = energy_id.max((2.0 * sol.energy - sol.mean_psi).abs() / sol.mean_psi);
        dirichlet_id = dirichlet_id.max((sol.dirichlet_energy() - sol.mean_psi).abs() / sol.mean_psi);
        if let Ok(v) = proportionality_check(sol, &p.spectrum) {
            prop = v.iter().take(4).fold(prop, |m, e| m.max(*e));
        }
        if let Some(t) = &p.tangent {
            if let Ok(c) = energy_slope_cross(sol, t) {
                cross = cross.max((c - t.de_dlambda).abs() / t.de_dlambda.abs());
            }
        }
        min_tau = p.spectrum.taus.iter().fold(min_tau, |m, t| m.min(*t));
        max_res = p.spectrum.residuals.iter().fold(max_res, |m, t| m.max(*t));
    }
    let _ = writeln!(r, "energy identity 2E = <psi>: max relative error {energy_id:.3e}");
    let _ = writeln!(r, "Dirichlet identity |grad psi|^2 = <psi>: max relative error {dirichlet_id:.3e}");
    let _ = writeln!(r, "proportionality (k <= 4): max relative error {prop:.3e}");
    let _ = writeln!(r, "tangent cross identity: max relative error {cross:.3e}");
    let _ = writeln!(r, "min tau: {min_tau:.6e}");
    let _ = writeln!(r, "max eigen residual: {max_res:.3e}");
    match energy_parametrize(branch).and_then(|c| verify_entropy_identities(&c)) {
        Ok(e) => {
            let _ = writeln!(r, "dS/dE = -lambda: max relative error {:.3e}", e.max_slope_error);
        }
        Err(e) => {
            let _ = writeln!(r, "entropy identity not evaluated: {e}");
        }
    }
    let _ = writeln!(r, "hypotheses at sampled points:");
    let _ = writeln!(
        r,
        "  index lambda sigma1 sigma2 nonpositive mu_max nondegenerate h1 h2 sufficient_stability"
    );
    for (i, rep) in hypothesis_reports(branch, 12) {
        let p = &branch.points[i];
        match rep {
            Ok(q) => {
                let _ = writeln!(
                    r,
                    "  {i} {:.8} {:.6e} {:.6e} {} {:.6e} {} {} {} {}",
                    p.lambda(),
                    p.sigma1(),
                    p.sigma2(),
                    nonpositive_count(&p.spectrum),
                    q.mu_max,
                    q.nondegenerate,
                    q.h1_holds,
                    q.h2_holds,
                    q.sufficient_stability_holds
                );
            }
            Err(e) => {
                let _ = writeln!(r, "  {i} {:.8} check failed: {e}", p.lambda());
            }
        }
    }
    let lm = &branch.landmarks;
    let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| format!("{x:.10e}"));
    let _ = writeln!(
        r,
        "landmarks: E0 = {}, E_8pi = {}, lambda* = {}, E* = {}, E_m = {}, E_d = {}",
        opt(lm.e0),
        opt(lm.e_8pi),
        opt(lm.lambda_star),
        opt(lm.e_star),
        opt(lm.e_m),
        opt(lm.e_d)
    );
    for n in &lm.notes {
        let _ = writeln!(r, "  note: {n}");
    }
    r
}

fn resolve_out(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.output_dir.clone(),
    }
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = fs::File::create(dir.join(name))?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

fn is_failure(t: Termination) -> bool {
    matches!(
        t,
        Termination::StepFailure | Termination::NonMonotoneEnergy | Termination::DegenerateFold
    )
}

/// Traces the configured branch and writes every artifact. Returns the
/// branch so callers can inspect it.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Branch> {
    let mesh = Arc::new(build_mesh(cfg.domain, cfg.resolution)?);
    let branch = match trace_branch(&mesh, &cfg.controls) {
        Ok(b) => b,
        Err(e) => {
            write_file(out, "report.txt", &format!("failure: {e}\n"))?;
            return Err(e);
        }
    };
    write_file(out, "branch.csv", &branch_csv(&branch))?;
    match energy_parametrize(&branch) {
        Ok(curve) => write_file(out, "thermo.csv", &thermo_csv(&curve))?,
        Err(e) => write_file(out, "thermo.csv", &format!("{THERMO_HEADER}\n# {e}\n"))?,
    }
    write_file(out, "landmarks.json", &landmarks_json(&branch)?)?;
    write_file(out, "report.txt", &report_text(cfg, &mesh, &branch))?;
    Ok(branch)
}

/// `λ` step of the natural sweep behind the entropy check.
const ENTROPY_STEP: f64 = 0.5;
/// Difference checks use only points where `σ₁` stays this far from zero.
const TANGENT_SIGMA_FLOOR: f64 = 1.0;

/// One named pass/fail outcome of the verify suite.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, value: f64, limit: f64) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: value <= limit,
        detail: format!("{value:.3e} (limit {limit:.1e})"),
    }
}

fn failed(name: &str, e: &Error) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: false,
        detail: format!("error: {e}"),
    }
}

fn natural_samples(branch: &Branch, count: usize) -> Vec<usize> {
    let idx: Vec<usize> = branch
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            p.kind == StepKind::Natural && p.tangent.is_some() && p.sigma1() >= TANGENT_SIGMA_FLOOR
        })
        .map(|(i, _)| i)
        .collect();
    spread(&idx, count)
}

/// Centered difference of `E(λ)` along re-solved neighbors of `sol`.
pub fn energy_slope_fd(mesh: &Arc<Mesh>, sol: &Solution, delta: f64) -> Result<f64> {
    let t = tangent(sol)?;
    let lo = (sol.lambda - delta).max(0.0);
    let hi = sol.lambda + delta;
    let solve = |l: f64| {
        let guess = sol.psi.add_scaled(l - sol.lambda, &t.v)?;
        newton_solve(mesh, l, &guess, 1e-12, 30)
    };
    let a = solve(lo)?;
    let b = solve(hi)?;
    Ok((b.energy - a.energy) / (hi - lo))
}

/// Runs the identity suite on a traced branch and a coarse companion mesh.
pub fn verify_checks(cfg: &RunConfig) -> Result<Vec<CheckResult>> {
    let mesh = Arc::new(build_mesh(cfg.domain, cfg.resolution)?);
    let branch = trace_branch(&mesh, &cfg.controls)?;
    let samples = natural_samples(&branch, cfg.verify.sample_points);
    let mut out = Vec::new();

    let energy = branch
        .points
        .iter()
        .map(|p| {
            let s = &p.solution;
            let a = (2.0 * s.energy - s.mean_psi).abs() / s.mean_psi;
            let b = (s.dirichlet_energy() - s.mean_psi).abs() / s.mean_psi;
            a.max(b)
        })
        .fold(0.0, f64::max);
    out.push(check("energy identity", energy, 1e-8));

    let mut prop = 0.0f64;
    for &i in &spread(&(0..branch.points.len()).collect::<Vec<_>>(), cfg.verify.sample_points) {
        let p = &branch.points[i];
        if p.lambda() == 0.0 {
            continue;
        }
        match proportionality_check(&p.solution, &p.spectrum) {
            Ok(v) => prop = v.iter().take(4).fold(prop, |m, e| m.max(*e)),
            Err(e) => out.push(failed("proportionality", &e)),
        }
    }
    out.push(check("proportionality", prop, 1e-6));

    let mut slope = 0.0f64;
    let mut cross = 0.0f64;
    for &i in &samples {
        let p = &branch.points[i];
        let t = p.tangent.as_ref().expect("sampled points carry tangents");
        match energy_slope_fd(&mesh, &p.solution, cfg.verify.fd_delta) {
            Ok(fd) => slope = slope.max((fd - t.de_dlambda).abs() / t.de_dlambda.abs()),
            Err(e) => out.push(failed("tangent finite difference", &e)),
        }
        if let Ok(c) = energy_slope_cross(&p.solution, t) {
            cross = cross.max((c - t.de_dlambda).abs() / t.de_dlambda.abs());
        }
    }
    out.push(check("tangent finite difference", slope, 1e-4));
    out.push(check("tangent cross identity", cross, 1e-8));

    let mut fine = cfg.controls.clone();
    fine.max_step = fine.max_step.min(ENTROPY_STEP);
    fine.initial_step = fine.initial_step.min(ENTROPY_STEP);
    // the last natural points crowd the fold, where λ(E) is poorly resolved
    let sweep = continue_natural(&mesh, 0.0, fine.lambda_cap, ENTROPY_STEP, &fine).map(|mut b| {
        b.points.retain(|p| p.sigma1() >= TANGENT_SIGMA_FLOOR);
        b
    });
    match sweep
        .and_then(|b| energy_parametrize(&b))
        .and_then(|c| verify_entropy_identities(&c))
    {
        Ok(e) => out.push(check("entropy slope", e.max_slope_error, 1e-3)),
        Err(e) => out.push(failed("entropy slope", &e)),
    }

    let min_tau = branch
        .points
        .iter()
        .flat_map(|p| p.spectrum.taus.iter().copied())
        .fold(f64::INFINITY, f64::min);
    out.push(CheckResult {
        name: "tau positivity".into(),
        passed: min_tau > 0.0,
        detail: format!("min tau {min_tau:.6e}"),
    });

    let eig_res = branch
        .points
        .iter()
        .flat_map(|p| p.spectrum.residuals.iter().copied())
        .fold(0.0, f64::max);
    out.push(check("eigen residual", eig_res, 1e-8));

    let coarse = Arc::new(build_mesh(cfg.domain, cfg.verify.oracle_resolution)?);
    let mut oracle = 0.0f64;
    let mut oracle_err = None;
    for lambda in [0.0, 5.0, 15.0] {
        let r = crate::meanfield::solve_from_zero(&coarse, lambda).and_then(|sol| {
            let a = constrained_spectrum(&sol, 4)?;
            let b = dense_constrained_spectrum(&sol, 4)?;
            Ok(a.sigmas
                .iter()
                .zip(&b.sigmas)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max))
        });
        match r {
            Ok(d) => oracle = oracle.max(d),
            Err(e) => oracle_err = Some(e),
        }
    }
    match oracle_err {
        Some(e) => out.push(failed("dense oracle equivalence", &e)),
        None => out.push(check("dense oracle equivalence", oracle, 1e-8)),
    }

    let variant = if cfg.verify.break_jacobian {
        JacobianVariant::WithoutMeanProjection
    } else {
        JacobianVariant::Exact
    };
    let mut jac = 0.0f64;
    for &i in &samples {
        let p = &branch.points[i];
        if p.lambda() == 0.0 {
            continue;
        }
        let dir = mesh.field_from_fn(|x, y| (2.0 * x + 0.3).sin() * (1.0 + y * y) + 0.5);
        match jacobian_fd_check(&mesh, p.lambda(), &p.solution.psi, &dir, variant) {
            Ok(e) => jac = jac.max(e),
            Err(e) => out.push(failed("jacobian finite difference", &e)),
        }
    }
    out.push(check("jacobian finite difference", jac, 1e-6));
    Ok(out)
}

fn print_line(quiet: bool, line: &str) {
    if !quiet {
        println!("{line}");
    }
}

/// Entry point shared by the binary and the tests. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    faer::set_global_parallelism(faer::Par::Seq);
    let (common, break_jacobian) = match &cli.command {
        Command::Run(c) | Command::Landmarks(c) => (c, false),
        Command::Verify(v) => (&v.common, v.break_jacobian),
    };
    let mut cfg = match RunConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    cfg.verify.break_jacobian |= break_jacobian;
    let quiet = common.quiet || cfg.verbosity == Verbosity::Quiet;
    let out = resolve_out(&cfg, common.out.as_deref());

    match &cli.command {
        Command::Run(_) => match run(&cfg, &out) {
            Ok(branch) => {
                print_line(
                    quiet,
                    &format!(
                        "{} points, kind {:?}, termination {:?}, artifacts in {}",
                        branch.points.len(),
                        branch.kind,
                        branch.termination,
                        out.display()
                    ),
                );
                if is_failure(branch.termination) {
                    eprintln!(
                        "numerical failure: {:?} {}",
                        branch.termination,
                        branch.message.as_deref().unwrap_or("")
                    );
                    1
                } else {
                    0
                }
            }
            Err(e) => {
                eprintln!("numerical failure: {e}");
                1
            }
        },
        Command::Landmarks(_) => {
            let mesh = match build_mesh(cfg.domain, cfg.resolution) {
                Ok(m) => Arc::new(m),
                Err(e) => {
                    eprintln!("{e}");
                    return 2;
                }
            };
            match trace_branch(&mesh, &cfg.controls)
                .and_then(|b| landmarks_json(&b).map(|j| (b, j)))
            {
                Ok((_, json)) => {
                    if let Err(e) = write_file(&out, "landmarks.json", &json) {
                        eprintln!("{e}");
                        return 1;
                    }
                    print_line(quiet, json.trim_end());
                    0
                }
                Err(e) => {
                    eprintln!("numerical failure: {e}");
                    1
                }
            }
        }
        Command::Verify(_) => match verify_checks(&cfg) {
            Ok(results) => {
                let mut ok = true;
                for r in &results {
                    ok &= r.passed;
                    print_line(
                        quiet,
                        &format!(
                            "{} {}: {}",
                            if r.passed { "PASS" } else { "FAIL" },
                            r.name,
                            r.detail
                        ),
                    );
                }
                if ok {
                    0
                } else {
                    1
                }
            }
            Err(e) => {
                eprintln!("numerical failure: {e}");
                1
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::new(DomainSpec::rectangle(4.0, 1.0), 8);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"domain": {"shape": "unit_disk", "radius": 1.0}, "resolution": 8}"#,
        )
        .unwrap();
        assert_eq!(cfg.controls, ContinuationControls::default());
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let neg = r#"{"domain": {"shape": "unit_disk", "radius": 1.0}, "resolution": 8,
                      "controls": {"newton_tol": -1e-10}}"#;
        assert!(matches!(RunConfig::from_json(neg), Err(Error::Config(_))));
        let unknown = r#"{"domain": {"shape": "unit_disk", "radius": 1.0}, "resolution": 8, "x": 1}"#;
        assert!(RunConfig::from_json(unknown).is_err());
        let cap = r#"{"domain": {"shape": "unit_disk", "radius": 1.0}, "resolution": 8,
                      "controls": {"lambda_cap": 10.0}}"#;
        assert!(RunConfig::from_json(cap).is_err());
    }

    #[test]
    fn spread_picks_endpoints() {
        let v: Vec<usize> = (0..100).collect();
        let s = spread(&v, 5);
        assert_eq!(s.first(), Some(&0));
        assert_eq!(s.last(), Some(&99));
        assert_eq!(s.len(), 5);
    }
}
