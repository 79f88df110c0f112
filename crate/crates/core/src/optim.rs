//! One-dimensional golden-section search and a small Nelder–Mead simplex.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarOptimum {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Maximizes `f` on `[lo, hi]` by golden-section search, stopping when the
/// bracket is shorter than `tolerance`. `f` is assumed unimodal on the bracket.
pub fn golden_section_max<F>(mut f: F, mut lo: f64, mut hi: f64, tolerance: f64) -> ScalarOptimum
where
    F: FnMut(f64) -> f64,
{
    debug_assert!(lo <= hi);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut evaluations = 2;
    while hi - lo > tolerance {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
        evaluations += 1;
    }
    let x = 0.5 * (lo + hi);
    let value = f(x);
    evaluations += 1;
    // the midpoint can lose to the last interior probe on a flat top
    let (x, value) = [(x, value), (x1, f1), (x2, f2)]
        .into_iter()
        .fold((x, value), |best, cand| if cand.1 > best.1 { cand } else { best });
    ScalarOptimum { x, value, evaluations }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOptimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Stop when the spread of simplex values drops below this.
    pub value_tolerance: f64,
    /// ...and the simplex diameter (in each coordinate) below this.
    pub step_tolerance: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            value_tolerance: 1e-12,
            step_tolerance: 1e-10,
        }
    }
}

/// Minimizes `f` with the Nelder–Mead simplex (standard coefficients
/// 1, 2, 1/2, 1/2), starting from `start` with per-coordinate initial steps.
///
/// Bounds are handled by the caller's parameterization; returning
/// `f64::INFINITY` marks a point as infeasible.
pub fn nelder_mead<F>(mut f: F, start: &[f64], steps: &[f64], options: SimplexOptions) -> SimplexOptimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = start.len();
    assert_eq!(steps.len(), n);
    let mut evaluations = 0;
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(start, &mut evaluations);
    simplex.push((start.to_vec(), v0));
    for i in 0..n {
        let mut x = start.to_vec();
        x[i] += steps[i];
        let v = eval(&x, &mut evaluations);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = (worst - best).abs();
        let diameter = (0..n)
            .map(|i| {
                simplex
                    .iter()
                    .map(|p| (p.0[i] - simplex[0].0[i]).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= options.value_tolerance * (1.0 + best.abs()) && diameter <= options.step_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for p in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(&p.0) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let reflected = along(-1.0);
        let fr = eval(&reflected, &mut evaluations);
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = eval(&expanded, &mut evaluations);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < simplex[n].1 {
            let x = along(-0.5);
            let v = eval(&x, &mut evaluations);
            (x, v)
        } else {
            let x = along(0.5);
            let v = eval(&x, &mut evaluations);
            (x, v)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (contracted, fc);
            continue;
        }
        // shrink towards the best vertex
        let anchor = simplex[0].0.clone();
        for p in simplex.iter_mut().skip(1) {
            for (x, a) in p.0.iter_mut().zip(&anchor) {
                *x = a + 0.5 * (*x - a);
            }
            p.1 = eval(&p.0, &mut evaluations);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    SimplexOptimum {
        x,
        value,
        iterations,
        evaluations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_parabola_peak() {
        let opt = golden_section_max(|x| -(x - 0.3).powi(2), -1.0, 1.0, 1e-9);
        assert!((opt.x - 0.3).abs() < 1e-9);
        // log_φ(2 / 1e-9) ≈ 44.6 shrink steps
        assert!(opt.evaluations <= 50, "{}", opt.evaluations);
    }

    #[test]
    fn golden_section_handles_edge_maximum() {
        let opt = golden_section_max(|x| x, 0.0, 1.0, 1e-8);
        assert!((opt.x - 1.0).abs() < 1e-8);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opt = nelder_mead(rosen, &[-1.2, 1.0], &[0.1, 0.1], SimplexOptions::default());
        assert!(opt.converged);
        assert!((opt.x[0] - 1.0).abs() < 1e-6 && (opt.x[1] - 1.0).abs() < 1e-6, "{:?}", opt.x);
    }

    #[test]
    fn nelder_mead_reports_budget_exhaustion() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opt = nelder_mead(
            rosen,
            &[-1.2, 1.0],
            &[0.1, 0.1],
            SimplexOptions {
                max_iterations: 5,
                ..SimplexOptions::default()
            },
        );
        assert!(!opt.converged);
        assert_eq!(opt.iterations, 5);
    }

    #[test]
    fn nelder_mead_respects_infeasible_region() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 0.0).powi(2) + (x[1] - 2.0).powi(2) };
        let opt = nelder_mead(f, &[1.0, 0.0], &[0.5, 0.5], SimplexOptions::default());
        assert!(opt.x[0] >= 0.0 && opt.x[0] < 1e-5 && (opt.x[1] - 2.0).abs() < 1e-5);
    }
}
