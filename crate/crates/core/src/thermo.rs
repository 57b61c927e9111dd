//! Energy parametrization of a branch and the microcanonical curve `S(E)`.

use serde::Serialize;

use crate::continuation::{Branch, DomainKind, EIGHT_PI};
use crate::error::{Error, Result};

/// Dead band on `|dλ/dE|` inside which curvature is reported as flat.
pub const FLAT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThermoRow {
    pub energy: f64,
    pub lambda: f64,
    pub entropy: f64,
    pub beta: f64,
    pub d2s_de2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Landmarks {
    pub e0: Option<f64>,
    /// `None` when the branch never reaches `8π` with bounded solutions.
    pub e_8pi: Option<f64>,
    pub lambda_star: Option<f64>,
    pub e_star: Option<f64>,
    pub e_m: Option<f64>,
    pub e_d: Option<f64>,
    /// Why absent landmarks are absent.
    pub notes: Vec<String>,
}

/// A maximal run of rows with one curvature sign (`-1`, `0` or `1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConcavityInterval {
    pub e_lo: f64,
    pub e_hi: f64,
    pub sign: i8,
}

#[derive(Clone, Debug)]
pub struct ThermoCurve {
    pub rows: Vec<ThermoRow>,
    pub kind: DomainKind,
    pub landmarks: Landmarks,
    pub concavity_intervals: Vec<ConcavityInterval>,
}

/// Derivative of `y(x)` at every sample: three-point central differences on
/// the nonuniform grid, one-sided three-point stencils at the ends.
pub fn nonuniform_derivative(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    match n {
        0 => return vec![],
        1 => return vec![0.0],
        2 => {
            let d = (y[1] - y[0]) / (x[1] - x[0]);
            return vec![d, d];
        }
        _ => {}
    }
    // derivative at x[i] of the quadratic through points a, b, c
    let quad = |i: usize, a: usize, b: usize, c: usize| {
        let (xa, xb, xc) = (x[a], x[b], x[c]);
        let t = x[i];
        y[a] * ((t - xb) + (t - xc)) / ((xa - xb) * (xa - xc))
            + y[b] * ((t - xa) + (t - xc)) / ((xb - xa) * (xb - xc))
            + y[c] * ((t - xa) + (t - xb)) / ((xc - xa) * (xc - xb))
    };
    (0..n)
        .map(|i| {
            if i == 0 {
                quad(0, 0, 1, 2)
            } else if i == n - 1 {
                quad(i, n - 3, n - 2, n - 1)
            } else {
                quad(i, i - 1, i, i + 1)
            }
        })
        .collect()
}

/// Derivative of `y(x)` at every sample from the Lagrange polynomial through
/// `stencil` consecutive samples, centered where the ends allow.
pub fn lagrange_derivative(x: &[f64], y: &[f64], stencil: usize) -> Vec<f64> {
    let n = x.len();
    let m = stencil.min(n);
    if m < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(m / 2).min(n - m);
            let idx = lo..lo + m;
            let t = x[i];
            idx.clone()
                .map(|j| {
                    let dl: f64 = idx
                        .clone()
                        .filter(|&k| k != j)
                        .map(|k| {
                            idx.clone()
                                .filter(|&q| q != j && q != k)
                                .map(|q| (t - x[q]) / (x[j] - x[q]))
                                .product::<f64>()
                                / (x[j] - x[k])
                        })
                        .sum();
                    y[j] * dl
                })
                .sum()
        })
        .collect()
}

fn curvature_sign(d2: f64) -> i8 {
    // d2 = −dλ/dE
    if d2.abs() < FLAT_TOL {
        0
    } else if d2 > 0.0 {
        1
    } else {
        -1
    }
}

/// Rows keyed by energy. Fails with the offending row indices when the
/// energy is not strictly increasing.
pub fn energy_parametrize(branch: &Branch) -> Result<ThermoCurve> {
    let bad: Vec<usize> = branch
        .points
        .windows(2)
        .enumerate()
        .filter(|(_, w)| !(w[1].energy() > w[0].energy()))
        .map(|(i, _)| i + 1)
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonMonotoneEnergy(bad));
    }
    let energy: Vec<f64> = branch.points.iter().map(|p| p.energy()).collect();
    let lambda: Vec<f64> = branch.points.iter().map(|p| p.lambda()).collect();
    let dl = nonuniform_derivative(&energy, &lambda);
    let rows: Vec<ThermoRow> = branch
        .points
        .iter()
        .zip(dl)
        .map(|(p, d)| ThermoRow {
            energy: p.energy(),
            lambda: p.lambda(),
            entropy: p.solution.entropy,
            beta: -p.lambda(),
            d2s_de2: -d,
            sigma1: p.sigma1(),
            sigma2: p.sigma2(),
        })
        .collect();
    let mut curve = ThermoCurve {
        concavity_intervals: concavity_intervals(&rows),
        rows,
        kind: branch.kind,
        landmarks: Landmarks::default(),
    };
    curve.landmarks = extract_landmarks(&curve);
    Ok(curve)
}

pub fn concavity_intervals(rows: &[ThermoRow]) -> Vec<ConcavityInterval> {
    let mut out: Vec<ConcavityInterval> = Vec::new();
    for r in rows {
        let s = curvature_sign(r.d2s_de2);
        match out.last_mut() {
            Some(iv) if iv.sign == s => iv.e_hi = r.energy,
            _ => out.push(ConcavityInterval {
                e_lo: r.energy,
                e_hi: r.energy,
                sign: s,
            }),
        }
    }
    out
}

/// Finite-difference checks of `dS/dE = −λ` and `d²S/dE² = −dλ/dE`.
#[derive(Clone, Debug, Serialize)]
pub struct EntropyReport {
    /// Per row `|dS/dE + λ| / max(|λ|, 1)`.
    pub slope_errors: Vec<f64>,
    pub max_slope_error: f64,
    /// Largest mismatch between the second difference of `S` and `−dλ/dE`,
    /// relative to `max |dλ/dE|`.
    pub max_curvature_error: f64,
}

pub fn verify_entropy_identities(curve: &ThermoCurve) -> Result<EntropyReport> {
    if curve.rows.len() < 5 {
        return Err(Error::Config(format!(
            "entropy identities need at least 5 rows, got {}",
            curve.rows.len()
        )));
    }
    let e: Vec<f64> = curve.rows.iter().map(|r| r.energy).collect();
    let s: Vec<f64> = curve.rows.iter().map(|r| r.entropy).collect();
    let ds = lagrange_derivative(&e, &s, 5);
    let slope_errors: Vec<f64> = ds
        .iter()
        .zip(&curve.rows)
        .map(|(d, r)| (d + r.lambda).abs() / r.lambda.abs().max(1.0))
        .collect();
    let d2 = nonuniform_derivative(&e, &ds);
    let scale = curve
        .rows
        .iter()
        .fold(0.0f64, |m, r| m.max(r.d2s_de2.abs()))
        .max(f64::MIN_POSITIVE);
    // the outermost rows carry one-sided errors twice over
    let n = d2.len();
    let max_curvature_error = (2..n.saturating_sub(2))
        .map(|i| (d2[i] - curve.rows[i].d2s_de2).abs() / scale)
        .fold(0.0, f64::max);
    Ok(EntropyReport {
        max_slope_error: slope_errors.iter().copied().fold(0.0, f64::max),
        slope_errors,
        max_curvature_error,
    })
}

fn interpolate(x0: f64, y0: f64, x1: f64, y1: f64, x: f64) -> f64 {
    if x1 == x0 {
        y0
    } else {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// `E₀`, `E_{8π}`, the first critical energy `E*` with `λ*`, the energy `E_m`
/// of the interior maximum of `λ(E)`, and `E_d` where the first convex
/// stretch past `E*` ends.
pub fn extract_landmarks(curve: &ThermoCurve) -> Landmarks {
    let rows = &curve.rows;
    let mut lm = Landmarks::default();
    let Some(first) = rows.first() else {
        lm.notes.push("empty curve".into());
        return lm;
    };
    if first.lambda.abs() < 1e-12 {
        lm.e0 = Some(first.energy);
    } else {
        lm.notes.push(format!("curve starts at lambda = {}", first.lambda));
    }

    if curve.kind == DomainKind::FirstKind {
        lm.notes.push("first kind: E_8pi is infinite".into());
    } else {
        lm.e_8pi = rows.windows(2).find_map(|w| {
            (w[0].lambda < EIGHT_PI && w[1].lambda >= EIGHT_PI)
                .then(|| interpolate(w[0].lambda, w[0].energy, w[1].lambda, w[1].energy, EIGHT_PI))
        });
        if lm.e_8pi.is_none() {
            lm.notes.push("branch never reaches 8pi".into());
        }
    }

    let star = rows.windows(2).position(|w| w[0].sigma1 > 0.0 && w[1].sigma1 <= 0.0);
    match star {
        Some(i) => {
            let (a, b) = (&rows[i], &rows[i + 1]);
            lm.e_star = Some(interpolate(a.sigma1, a.energy, b.sigma1, b.energy, 0.0));
            lm.lambda_star = Some(interpolate(a.sigma1, a.lambda, b.sigma1, b.lambda, 0.0));
        }
        None => lm.notes.push("sigma1 stays positive".into()),
    }

    let imax = rows
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.lambda > rows[b].lambda { i } else { b });
    if imax > 0 && imax + 1 < rows.len() {
        // vertex of the parabola through the three rows around the maximum
        let (a, b, c) = (&rows[imax - 1], &rows[imax], &rows[imax + 1]);
        let d1 = (b.lambda - a.lambda) / (b.energy - a.energy);
        let d2 = (c.lambda - b.lambda) / (c.energy - b.energy);
        let curv = (d2 - d1) / (0.5 * (c.energy - a.energy));
        let e_m = if curv < 0.0 {
            0.5 * (a.energy + b.energy) - d1 / curv
        } else {
            b.energy
        };
        lm.e_m = Some(e_m.clamp(a.energy, c.energy));
    } else {
        lm.notes.push("lambda(E) has no interior maximum".into());
    }

    if let Some(es) = lm.e_star {
        let after: Vec<&ConcavityInterval> = curve
            .concavity_intervals
            .iter()
            .filter(|iv| iv.e_hi >= es)
            .collect();
        let convex = after.iter().position(|iv| iv.sign > 0);
        match convex {
            Some(k) if k + 1 < after.len() => lm.e_d = Some(after[k + 1].e_lo),
            Some(_) => lm.notes.push("convex stretch reaches the end of the branch".into()),
            None => lm.notes.push("no convex stretch past E_star".into()),
        }
    }
    lm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_is_exact_for_quadratics() {
        let x = [0.0, 0.1, 0.35, 0.4, 0.9, 1.5];
        let y: Vec<f64> = x.iter().map(|t| 3.0 * t * t - t + 2.0).collect();
        let d = nonuniform_derivative(&x, &y);
        for (t, v) in x.iter().zip(d) {
            assert!((v - (6.0 * t - 1.0)).abs() < 1e-12);
        }
    }

    fn row(e: f64, l: f64, s1: f64) -> ThermoRow {
        ThermoRow {
            energy: e,
            lambda: l,
            entropy: 0.0,
            beta: -l,
            d2s_de2: 0.0,
            sigma1: s1,
            sigma2: 1.0,
        }
    }

    #[test]
    fn monotone_curve_has_no_interior_maximum() {
        let rows: Vec<ThermoRow> = (0..6).map(|i| row(i as f64, 2.0 * i as f64, 1.0)).collect();
        let curve = ThermoCurve {
            concavity_intervals: concavity_intervals(&rows),
            rows,
            kind: DomainKind::FirstKind,
            landmarks: Landmarks::default(),
        };
        let lm = extract_landmarks(&curve);
        assert_eq!(lm.e0, Some(0.0));
        assert!(lm.e_m.is_none() && lm.e_star.is_none() && lm.e_8pi.is_none());
    }

    #[test]
    fn fold_landmarks_are_ordered() {
        let lam = [0.0, 20.0, 26.0, 27.0, 26.5, 26.0, 25.8];
        let s1 = [5.0, 2.0, 0.8, 0.1, -0.3, -0.5, -0.6];
        let mut rows: Vec<ThermoRow> =
            (0..7).map(|i| row(i as f64, lam[i], s1[i])).collect();
        let e: Vec<f64> = rows.iter().map(|r| r.energy).collect();
        let d = nonuniform_derivative(&e, &lam);
        for (r, v) in rows.iter_mut().zip(d) {
            r.d2s_de2 = -v;
        }
        let curve = ThermoCurve {
            concavity_intervals: concavity_intervals(&rows),
            rows,
            kind: DomainKind::SecondKind,
            landmarks: Landmarks::default(),
        };
        let lm = extract_landmarks(&curve);
        let (e8, es, em) = (lm.e_8pi.unwrap(), lm.e_star.unwrap(), lm.e_m.unwrap());
        assert!(lm.e0.unwrap() < e8 && e8 <= es && (es - em).abs() < 1.0);
        assert!(lm.lambda_star.unwrap() > EIGHT_PI);
    }
}
