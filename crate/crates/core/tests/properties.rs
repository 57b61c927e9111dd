use std::sync::{Arc, OnceLock};

use mfcont::meanfield::{density, entropy, solve_from_zero};
use mfcont::mesh::{build_mesh, DomainSpec, Mesh};
use mfcont::spectral::{constrained_spectrum, proportionality_check, quadratic_form};
use proptest::prelude::*;

fn disk() -> &'static Arc<Mesh> {
    static M: OnceLock<Arc<Mesh>> = OnceLock::new();
    M.get_or_init(|| Arc::new(build_mesh(DomainSpec::disk(1.0), 8).unwrap()))
}

fn rectangle() -> &'static Arc<Mesh> {
    static M: OnceLock<Arc<Mesh>> = OnceLock::new();
    M.get_or_init(|| Arc::new(build_mesh(DomainSpec::rectangle(3.0, 1.0), 6).unwrap()))
}

fn mesh_for(which: bool) -> &'static Arc<Mesh> {
    if which {
        disk()
    } else {
        rectangle()
    }
}

/// A smooth field from a handful of random Fourier-like coefficients.
fn smooth_field(mesh: &Mesh, c: &[f64]) -> mfcont::Field {
    mesh.field_from_fn(|x, y| {
        c[0] + c[1] * x + c[2] * y + c[3] * (3.0 * x).sin() * (2.0 * y).cos() + c[4] * x * y
    })
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn green_operator_is_self_adjoint(which: bool, a in coeffs(), b in coeffs()) {
        let m = mesh_for(which);
        let (f, g) = (smooth_field(m, &a), smooth_field(m, &b));
        let lhs = m.inner(&f, &m.green_apply(&g).unwrap());
        let rhs = m.inner(&g, &m.green_apply(&f).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (lhs.abs() + rhs.abs() + 1.0));
    }

    #[test]
    fn green_operator_is_positive(which: bool, a in coeffs()) {
        let m = mesh_for(which);
        let f = smooth_field(m, &a);
        prop_assume!(m.inner(&f, &f) > 1e-8);
        prop_assert!(m.inner(&f, &m.green_apply(&f).unwrap()) > 0.0);
        let pos = f.map(f64::abs);
        prop_assert!(m.green_apply(&pos).unwrap().min() >= 0.0);
    }

    #[test]
    fn density_has_unit_mass(which: bool, a in coeffs(), lambda in -10.0..40.0f64) {
        let m = mesh_for(which);
        let rho = density(m, lambda, &smooth_field(m, &a)).unwrap();
        prop_assert!((m.integrate(&rho) - 1.0).abs() < 1e-12);
        prop_assert!(rho.min() > 0.0);
    }

    #[test]
    fn entropy_is_bounded_by_log_area(which: bool, a in coeffs(), lambda in -10.0..40.0f64) {
        // Jensen: −∫ρ ln ρ ≤ ln |Ω| for any probability density
        let m = mesh_for(which);
        let rho = density(m, lambda, &smooth_field(m, &a)).unwrap();
        let s = entropy(m, &rho).unwrap();
        prop_assert!(s <= m.quadrature_area().ln() + 1e-12);
    }

    #[test]
    fn quadratic_form_is_quadratic(which: bool, a in coeffs(), b in coeffs(), t in -3.0..3.0f64) {
        let m = mesh_for(which);
        let sol = solve_from_zero(m, 10.0).unwrap();
        let (f, g) = (smooth_field(m, &a), smooth_field(m, &b));
        let q = |h: &mfcont::Field| quadratic_form(&sol, h).unwrap();
        let scale = q(&f).abs() + q(&g).abs() + 1e-9;
        prop_assert!((q(&f.scaled(t)) - t * t * q(&f)).abs() <= 1e-10 * scale * (1.0 + t * t));
        // parallelogram law
        let sum = f.add_scaled(1.0, &g).unwrap();
        let diff = f.add_scaled(-1.0, &g).unwrap();
        let lhs = q(&sum) + q(&diff);
        let rhs = 2.0 * (q(&f) + q(&g));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (lhs.abs() + rhs.abs() + 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn constrained_spectrum_invariants(which: bool, lambda in 0.5..20.0f64) {
        let m = mesh_for(which);
        let sol = solve_from_zero(m, lambda).unwrap();
        let spec = constrained_spectrum(&sol, 4).unwrap();
        prop_assert!(spec.taus.iter().all(|t| *t > 0.0));
        prop_assert!(spec.sigmas.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        // dropping the mean constraint enlarges the Rayleigh denominator
        prop_assert!(spec.sigma_hat_1 <= spec.sigmas[0] + 1e-9);
        for e in proportionality_check(&sol, &spec).unwrap() {
            prop_assert!(e < 1e-6);
        }
    }
}
