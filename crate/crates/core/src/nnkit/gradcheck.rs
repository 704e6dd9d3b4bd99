//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that gradients that are zero
/// up to rounding are compared absolutely.
pub const REL_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradReport {
    pub probes: Vec<Probe>,
    /// Probes dropped because the perturbation crossed a kink.
    pub skipped: usize,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64, min_probes: usize) -> bool {
        self.probes.len() >= min_probes && self.max_rel_err() <= tol
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// `count` distinct indices below `n` (all of them when `n <= count`).
pub fn probe_indices<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    let mut v = sample(rng, n, count).into_vec();
    v.sort_unstable();
    v
}

/// Compares `analytic[i]` with `(f(x + h e_i) - f(x - h e_i)) / 2h` for
/// every probe index. `eval` returns the objective together with a
/// signature of its non-smooth decisions; a probe whose two perturbed
/// signatures differ from the unperturbed one is skipped.
pub fn check_gradient<F>(values: &[f64], analytic: &[f64], indices: &[usize], mut eval: F) -> Result<GradReport>
where
    F: FnMut(&[f64]) -> Result<(f64, u64)>,
{
    let (_, base_sig) = eval(values)?;
    let mut x = values.to_vec();
    let mut report = GradReport::default();
    for &i in indices {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let (fp, sp) = eval(&x)?;
        x[i] = orig - FD_STEP;
        let (fm, sm) = eval(&x)?;
        x[i] = orig;
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        report.probes.push(Probe { index: i, analytic: analytic[i], numeric, rel_err: relative_error(analytic[i], numeric) });
    }
    Ok(report)
}

/// Like [`check_gradient`] but visits indices in random order until
/// `count` probes have been accepted (or all indices are exhausted), so that
/// skipped probes are replaced.
pub fn check_random_probes<R, F>(values: &[f64], analytic: &[f64], count: usize, rng: &mut R, mut eval: F) -> Result<GradReport>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<(f64, u64)>,
{
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.shuffle(rng);
    let mut report = GradReport::default();
    let mut pos = 0;
    while report.probes.len() < count && pos < order.len() {
        let take = (count - report.probes.len()).min(order.len() - pos);
        let part = check_gradient(values, analytic, &order[pos..pos + take], &mut eval)?;
        report.probes.extend(part.probes);
        report.skipped += part.skipped;
        pos += take;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_a_cubic() {
        let x = [0.3, -1.2, 2.0];
        let grad: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        let r = check_gradient(&x, &grad, &[0, 1, 2], |v| Ok((v.iter().map(|a| a * a * a).sum(), 0))).unwrap();
        assert!(r.passes(1e-8, 3), "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let r = check_gradient(&[1.0], &[3.0], &[0], |v| Ok((v[0] * v[0], 0))).unwrap();
        assert!(!r.passes(1e-5, 1));
    }

    #[test]
    fn skips_probes_across_kinks() {
        let x = [1e-7];
        let r = check_gradient(&x, &[1.0], &[0], |v| Ok((v[0].max(0.0), (v[0] > 0.0) as u64))).unwrap();
        assert_eq!(r.skipped, 1);
        assert!(r.probes.is_empty());
    }
}
