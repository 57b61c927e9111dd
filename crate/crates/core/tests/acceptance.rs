//! Acceptance suite: one PASS/FAIL line per criterion, written straight to
//! stderr so it shows up without `--nocapture`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::process::Command;
use std::sync::Arc;

use mfcont::cli::energy_slope_fd;
use mfcont::continuation::{
    continue_natural, tangent, trace_branch, Branch, ContinuationControls, DomainKind, FoldFlag,
    StepKind, Termination, EIGHT_PI,
};
use mfcont::meanfield::solve_from_zero;
use mfcont::mesh::{build_mesh, DomainSpec, Mesh};
use mfcont::spectral::{constrained_spectrum, nonpositive_count, proportionality_check, quadratic_form};
use mfcont::thermo::{energy_parametrize, verify_entropy_identities};

mod common;
use common::{oracle_sigmas, radial_oracles};

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Outcome { name, passed, detail }
    }
}

fn mesh(spec: DomainSpec, res: usize) -> Arc<Mesh> {
    Arc::new(build_mesh(spec, res).unwrap())
}

fn spread<T: Copy>(items: &[T], count: usize) -> Vec<T> {
    if items.len() <= count {
        return items.to_vec();
    }
    (0..count)
        .map(|i| items[i * (items.len() - 1) / (count - 1)])
        .collect()
}

fn liouville_family() -> Outcome {
    let mut detail = String::new();
    let mut passed = true;
    for a2 in [0.5, 1.0, 3.0] {
        let lambda = EIGHT_PI * a2 / (1.0 + a2);
        let exact = |r: f64| 2.0 * ((1.0 + a2) / (1.0 + a2 * r * r)).ln();
        let errors: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&rings| {
                let m = mesh(DomainSpec::disk(1.0), rings);
                let sol = solve_from_zero(&m, lambda).unwrap();
                m.nodes()
                    .iter()
                    .zip(sol.psi.values())
                    .map(|(p, psi)| (lambda * psi - exact(p[0].hypot(p[1]))).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let orders = [(errors[0] / errors[1]).log2(), (errors[1] / errors[2]).log2()];
        let ok = errors[2] <= 5e-3 && orders.iter().all(|o| *o >= 1.8);
        passed &= ok;
        detail += &format!(
            "a²={a2}: sup error {:.2e} at 128 rings, orders {:.2}/{:.2}; ",
            errors[2], orders[0], orders[1]
        );
    }
    Outcome::new("disk analytic family", passed, detail)
}

fn disk_energy_at_zero() -> Outcome {
    let m = mesh(DomainSpec::disk(1.0), 128);
    let sol = solve_from_zero(&m, 0.0).unwrap();
    let slope = tangent(&sol).unwrap().de_dlambda;
    let (e0_quad, slope_quad) = radial_oracles();
    let e0_exact = 1.0 / (16.0 * PI);
    let slope_exact = 1.0 / (192.0 * PI * PI);
    let e_err = (sol.energy - e0_exact).abs() / e0_exact;
    let s_err = (slope - slope_exact).abs() / slope_exact;
    let oracle_ok = (e0_quad - e0_exact).abs() < 1e-12 && (slope_quad - slope_exact).abs() < 1e-12;
    Outcome::new(
        "disk E0 and dE/dlambda at 0",
        e_err <= 1e-4 && s_err <= 1e-3 && oracle_ok,
        format!("E0 rel error {e_err:.2e}, slope rel error {s_err:.2e}"),
    )
}

fn sigma_positive_below_eight_pi() -> Outcome {
    let cap = 0.99 * EIGHT_PI;
    let mut controls = ContinuationControls::default();
    // keep going on σ₁ alone: no hand-off and no concentration stop
    controls.sigma_switch = 1e-12;
    controls.concentration.max_u_threshold = 1e6;
    let mut detail = String::new();
    let mut passed = true;
    for (label, spec, res) in [
        ("disk", DomainSpec::disk(1.0), 80),
        ("square", DomainSpec::rectangle(1.0, 1.0), 128),
    ] {
        let m = mesh(spec, res);
        let b = continue_natural(&m, 0.0, cap, controls.initial_step, &controls).unwrap();
        let min_sigma = b.points.iter().map(|p| p.sigma1()).fold(f64::INFINITY, f64::min);
        let reached = b.points.last().unwrap().lambda();
        let ok = b.termination == Termination::LambdaCap && min_sigma > 0.0 && reached >= cap;
        passed &= ok;
        detail += &format!(
            "{label} ({} nodes): reached λ={reached:.4}, min σ₁={min_sigma:.3e}; ",
            m.len()
        );
    }
    Outcome::new("sigma1 positive on [0, 0.99*8pi]", passed, detail)
}

fn disk_branch() -> (Arc<Mesh>, Branch) {
    let m = mesh(DomainSpec::disk(1.0), 24);
    let b = trace_branch(&m, &ContinuationControls::default()).unwrap();
    (m, b)
}

fn tangent_identity(m: &Arc<Mesh>, b: &Branch) -> Outcome {
    let idx: Vec<usize> = (0..b.points.len())
        .filter(|&i| b.points[i].kind == StepKind::Natural && b.points[i].sigma1() >= 1.0)
        .collect();
    let samples = spread(&idx, 10);
    let worst = samples
        .iter()
        .map(|&i| {
            let p = &b.points[i];
            let t = p.tangent.as_ref().unwrap();
            let fd = energy_slope_fd(m, &p.solution, 1e-3).unwrap();
            (fd - t.de_dlambda).abs() / t.de_dlambda.abs()
        })
        .fold(0.0, f64::max);
    Outcome::new(
        "tangent identity",
        samples.len() == 10 && worst <= 1e-4,
        format!("{} points, max rel error {worst:.2e}", samples.len()),
    )
}

fn sampled(b: &Branch) -> Vec<usize> {
    let idx: Vec<usize> = (0..b.points.len()).filter(|&i| b.points[i].lambda() > 0.0).collect();
    spread(&idx, 10)
}

fn proportionality_identity(b: &Branch) -> Outcome {
    let samples = sampled(b);
    let worst = samples
        .iter()
        .flat_map(|&i| {
            let p = &b.points[i];
            proportionality_check(&p.solution, &p.spectrum).unwrap()
        })
        .fold(0.0, f64::max);
    let past_fold = samples.iter().filter(|&&i| b.points[i].sigma1() < 0.0).count();
    Outcome::new(
        "proportionality identity",
        samples.len() == 10 && worst <= 1e-6,
        format!("{} points ({past_fold} past the fold), max rel error {worst:.2e}", samples.len()),
    )
}

fn quadratic_form_identity(b: &Branch) -> Outcome {
    let mut worst = 0.0f64;
    for &i in &sampled(b) {
        let p = &b.points[i];
        let g = p.solution.geometry().unwrap();
        for k in 0..4 {
            let proj = g.project_zero_mean(&p.spectrum.phis[k]);
            let got = quadratic_form(&p.solution, &proj).unwrap();
            let norm2 = g.inner(&proj, &proj);
            let expect = -p.spectrum.sigmas[k] / p.spectrum.taus[k] * norm2;
            worst = worst.max((got - expect).abs() / expect.abs().max(1e-3 * norm2));
        }
    }
    Outcome::new(
        "eigenfunction quadratic form identity",
        worst <= 1e-6,
        format!("max rel error {worst:.2e}"),
    )
}

fn dense_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    let mut nodes = 0;
    for (spec, res) in [
        (DomainSpec::disk(1.0), 6),
        (DomainSpec::rectangle(1.0, 1.0), 12),
        (DomainSpec::rectangle(4.0, 1.0), 6),
    ] {
        let m = mesh(spec, res);
        nodes = nodes.max(m.len());
        let b = trace_branch(&m, &ContinuationControls::default()).unwrap();
        for i in spread(&(0..b.points.len()).collect::<Vec<_>>(), 6) {
            let sol = &b.points[i].solution;
            let ours = constrained_spectrum(sol, 4).unwrap();
            let oracle = oracle_sigmas(sol, 4);
            for (a, o) in ours.sigmas.iter().zip(&oracle) {
                worst = worst.max((a - o).abs());
            }
            cases += 1;
        }
    }
    Outcome::new(
        "dense oracle equivalence",
        nodes <= 200 && worst <= 1e-8,
        format!("{cases} states on meshes of at most {nodes} nodes, max |Δσ| {worst:.2e}"),
    )
}

fn entropy_identity() -> Outcome {
    let m = mesh(DomainSpec::disk(1.0), 32);
    let mut controls = ContinuationControls::default();
    controls.max_step = 0.5;
    controls.initial_step = 0.5;
    let mut b = continue_natural(&m, 0.0, controls.lambda_cap, 0.5, &controls).unwrap();
    // the last natural steps crowd the discrete fold
    b.points.retain(|p| p.sigma1() >= 1.0);
    let top = b.points.last().unwrap().lambda();
    let rep = energy_parametrize(&b).and_then(|c| verify_entropy_identities(&c)).unwrap();
    Outcome::new(
        "entropy identity",
        rep.max_slope_error <= 1e-3,
        format!(
            "{} points up to λ={top:.3}, max rel error {:.2e}",
            b.points.len(),
            rep.max_slope_error
        ),
    )
}

fn second_kind_rectangle() -> Outcome {
    let m = mesh(DomainSpec::rectangle(4.0, 1.0), 16);
    let controls = ContinuationControls::default();
    let b = trace_branch(&m, &controls).unwrap();
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let crossing = b
        .points
        .iter()
        .find(|p| p.lambda() >= EIGHT_PI)
        .map(|p| p.max_u);
    checks.push(("bounded at 8π", crossing.is_some_and(|u| u <= controls.kind_max_u_threshold)));
    checks.push(("second kind", b.kind == DomainKind::SecondKind));

    let fold = b.critical_points.first();
    checks.push((
        "fold past 8π",
        fold.is_some_and(|c| c.flag == FoldFlag::Fold && c.lambda > EIGHT_PI),
    ));
    let Some(fold) = fold else {
        return Outcome::new("second-kind rectangle", false, "no critical point".into());
    };
    checks.push(("a* > 0", fold.a_star > 0.0));

    // neighborhood of the fold on which σ₁ is the only candidate crossing
    let i0 = fold.index;
    let lo = b.handoff.unwrap_or(0);
    let hi = (i0..b.points.len())
        .find(|&i| b.points[i].sigma2() <= 0.0)
        .unwrap_or(b.points.len());
    let before = &b.points[lo..i0];
    let after = &b.points[i0 + 1..hi];
    checks.push((
        "σ₁ changes sign",
        before.iter().all(|p| p.sigma1() > 0.0) && after.iter().all(|p| p.sigma1() < 0.0),
    ));
    let agree = |p: &mfcont::continuation::BranchPoint| {
        p.sigma1().signum() == p.dlambda_ds.signum() || p.sigma1().abs() < 1e-6
    };
    checks.push((
        "sign(σ₁) = sign(λ')",
        before.iter().chain(after).all(agree) && b.sign_mismatches.is_empty(),
    ));
    checks.push((
        "one nonpositive eigenvalue past the fold",
        after.len() >= 5 && after.iter().all(|p| nonpositive_count(&p.spectrum) == 1),
    ));

    let curve = energy_parametrize(&b);
    checks.push(("energy increasing", curve.is_ok()));
    let flip = curve.as_ref().is_ok_and(|c| {
        let r = &c.rows;
        let e_star = c.landmarks.e_star.unwrap_or(f64::NAN);
        let below: Vec<_> = r[lo..i0].iter().filter(|x| x.energy < e_star).collect();
        let above: Vec<_> = r[i0 + 2..hi].iter().filter(|x| x.energy > e_star).collect();
        !below.is_empty()
            && !above.is_empty()
            && below.iter().all(|x| x.d2s_de2 < 0.0)
            && above.iter().all(|x| x.d2s_de2 > 0.0)
    });
    checks.push(("d²S/dE² flips at E*", flip));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let after_lambda = after.last().map_or(f64::NAN, |p| p.lambda());
    Outcome::new(
        "second-kind rectangle",
        failed.is_empty(),
        format!(
            "aspect 4, λ*={:.4}, a*={:.3e}, one-negative stretch down to λ={after_lambda:.3}, failed: {failed:?}",
            fold.lambda, fold.a_star
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    fs::write(
        &cfg,
        r#"{"domain": {"shape": "rectangle", "width": 4.0, "height": 1.0}, "resolution": 12}"#,
    )
    .unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_mfcont"))
            .args(["run", "--quiet", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        (status.code(), fs::read(out.join("branch.csv")).unwrap_or_default())
    };
    let (c1, a) = run("a");
    let (c2, b) = run("b");
    Outcome::new(
        "determinism",
        c1 == Some(0) && c2 == Some(0) && !a.is_empty() && a == b,
        format!("{} bytes, identical: {}", a.len(), a == b),
    )
}

#[test]
fn acceptance() {
    faer::set_global_parallelism(faer::Par::Seq);
    let outcomes: Vec<Outcome> = std::thread::scope(|s| {
        let jobs: Vec<Box<dyn FnOnce() -> Vec<Outcome> + Send>> = vec![
            Box::new(|| vec![liouville_family()]),
            Box::new(|| vec![disk_energy_at_zero()]),
            Box::new(|| vec![sigma_positive_below_eight_pi()]),
            Box::new(|| {
                let (m, b) = disk_branch();
                vec![tangent_identity(&m, &b)]
            }),
            Box::new(|| {
                let m = mesh(DomainSpec::rectangle(4.0, 1.0), 12);
                let b = trace_branch(&m, &ContinuationControls::default()).unwrap();
                vec![proportionality_identity(&b), quadratic_form_identity(&b)]
            }),
            Box::new(|| vec![dense_oracle()]),
            Box::new(|| vec![entropy_identity()]),
            Box::new(|| vec![second_kind_rectangle()]),
            Box::new(|| vec![determinism()]),
        ];
        let handles: Vec<_> = jobs.into_iter().map(|j| s.spawn(j)).collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err);
    for o in &outcomes {
        let _ = writeln!(
            err,
            "{} {}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
