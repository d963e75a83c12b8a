use serde::{Deserialize, Serialize};

use super::fit::fit_points;
use super::{ExpFit, WindowPolicy};
use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 10_000;
const POT_EXCESSES: usize = 100;
const BOUNDED_RATIO: f64 = 10.0;
const TAIL_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfPoint {
    pub theta: f64,
    pub value: f64,
    pub first_half: f64,
    pub second_half: f64,
    /// Halves agree to within 5% of the full estimate.
    pub stable: bool,
}

/// Tail rate and moment-generating function checks for a positive sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubexpDiagnostic {
    pub samples: usize,
    /// `+∞` when the sample looks bounded.
    pub q_hat: f64,
    pub c_hat: f64,
    pub fit: Option<ExpFit>,
    /// Rate implied by the mean of the largest excesses.
    pub pot_rate: f64,
    pub mgf: Vec<MgfPoint>,
    pub stable: bool,
}

impl SubexpDiagnostic {
    pub fn bounded(&self) -> bool {
        self.q_hat == f64::INFINITY
    }
}

/// Fits `P{X ≥ x} ≈ C e^{−q x}` on the window where the empirical tail lies
/// in `[10^{-3}, 0.5]` and evaluates the empirical MGF at `θ ∈ {¼, ½, ¾}·q̂`.
pub fn subexp_diagnostics(samples: &[f64]) -> Result<SubexpDiagnostic> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_SAMPLES,
            found: samples.len(),
            window: None,
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("samples", "must be finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let quantile = |p: f64| sorted[((p * n as f64) as usize).min(n - 1)];
    let (lo, hi) = (quantile(0.5), quantile(0.999));
    let policy = WindowPolicy::default();

    let threshold = sorted[n - POT_EXCESSES - 1];
    let mean_excess = sorted[n - POT_EXCESSES..].iter().map(|x| x - threshold).sum::<f64>() / POT_EXCESSES as f64;
    let pot_rate = if mean_excess > 0.0 { 1.0 / mean_excess } else { f64::INFINITY };

    let fit = if hi > lo {
        let grid: Vec<f64> = (0..TAIL_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (TAIL_POINTS - 1) as f64)
            .collect();
        let tail: Vec<f64> = grid
            .iter()
            .map(|&x| (n - sorted.partition_point(|&v| v < x)) as f64 / n as f64)
            .collect();
        fit_points(&grid, &tail, &policy).ok()
    } else {
        None
    };
    let (q_hat, c_hat) = match fit {
        Some(f) if f.q_hat > 0.0 && pot_rate <= BOUNDED_RATIO * f.q_hat => (f.q_hat, f.c_hat),
        Some(f) if f.q_hat > 0.0 => (f64::INFINITY, f.c_hat),
        // no decay across the window, or a degenerate sample
        _ if pot_rate == f64::INFINITY => (f64::INFINITY, 1.0),
        Some(f) => (f.q_hat, f.c_hat),
        None => (f64::INFINITY, 1.0),
    };

    let mut mgf = Vec::new();
    if q_hat.is_finite() && q_hat > 0.0 {
        let half = n / 2;
        for frac in [0.25, 0.5, 0.75] {
            let theta = frac * q_hat;
            let m = |xs: &[f64]| xs.iter().map(|x| (theta * x).exp()).sum::<f64>() / xs.len() as f64;
            let value = m(samples);
            let (a, b) = (m(&samples[..half]), m(&samples[half..]));
            mgf.push(MgfPoint {
                theta,
                value,
                first_half: a,
                second_half: b,
                stable: (a - b).abs() < 0.05 * value,
            });
        }
    }
    let stable = mgf.iter().all(|p| p.stable);
    Ok(SubexpDiagnostic {
        samples: n,
        q_hat,
        c_hat,
        fit,
        pot_rate,
        mgf,
        stable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumLemmaRow {
    pub z: f64,
    /// `P̂{X + Y ≥ 2z}`
    pub lhs: f64,
    /// `P̂{X ≥ z} + P̂{Y ≥ z}`
    pub rhs: f64,
    pub se: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumLemmaReport {
    pub rows: Vec<SumLemmaRow>,
    pub holds: bool,
}

/// Checks `P{X + Y ≥ 2z} ≤ P{X ≥ z} + P{Y ≥ z}` on paired samples, allowing
/// three standard errors of the difference.
pub fn check_sum_lemma(x: &[f64], y: &[f64], z_grid: &[f64]) -> Result<SumLemmaReport> {
    if x.len() != y.len() {
        return Err(Error::invalid("samples", "x and y must be paired"));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("no sample pairs"));
    }
    let n = x.len() as f64;
    let rows: Vec<SumLemmaRow> = z_grid
        .iter()
        .map(|&z| {
            let frac = |pred: &dyn Fn(usize) -> bool| (0..x.len()).filter(|&i| pred(i)).count() as f64 / n;
            let s = frac(&|i| x[i] + y[i] >= 2.0 * z);
            let px = frac(&|i| x[i] >= z);
            let py = frac(&|i| y[i] >= z);
            let se = ((s * (1.0 - s) + px * (1.0 - px) + py * (1.0 - py)) / n).sqrt();
            SumLemmaRow {
                z,
                lhs: s,
                rhs: px + py,
                se,
                holds: s <= px + py + 3.0 * se,
            }
        })
        .collect();
    let holds = rows.iter().all(|r| r.holds);
    Ok(SumLemmaReport { rows, holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Lane, RandomStream};

    fn exp_samples(n: usize, rate: f64, seed: u64) -> Vec<f64> {
        let mut rng = RandomStream::new(seed, Lane::Custom(2));
        (0..n).map(|_| rng.exponential(rate)).collect()
    }

    #[test]
    fn exponential_rate_recovered() {
        let d = subexp_diagnostics(&exp_samples(100_000, 1.0, 1)).unwrap();
        assert!((d.q_hat - 1.0).abs() < 0.05, "{}", d.q_hat);
        assert_eq!(d.mgf.len(), 3);
        assert!((d.mgf[0].value - 1.0 / (1.0 - d.mgf[0].theta)).abs() < 0.02);
    }

    #[test]
    fn bounded_sample_gives_infinite_rate() {
        let mut rng = RandomStream::new(2, Lane::Custom(2));
        let u: Vec<f64> = (0..20_000).map(|_| rng.uniform()).collect();
        let d = subexp_diagnostics(&u).unwrap();
        assert!(d.bounded(), "{d:?}");
        assert!(d.mgf.is_empty());
        let constant = vec![0.0; 10_000];
        assert!(subexp_diagnostics(&constant).unwrap().bounded());
    }

    #[test]
    fn geometric_sum_has_exponential_tail() {
        let mut rng = RandomStream::new(3, Lane::Custom(2));
        let s: Vec<f64> = (0..50_000)
            .map(|_| {
                let mut total = rng.exponential(1.0);
                while rng.uniform() >= 0.5 {
                    total += rng.exponential(1.0);
                }
                total
            })
            .collect();
        let d = subexp_diagnostics(&s).unwrap();
        assert!(d.q_hat > 0.0 && d.q_hat.is_finite());
        assert!((d.q_hat - 0.5).abs() < 0.05, "{}", d.q_hat);
    }

    #[test]
    fn small_sample_rejected() {
        assert!(matches!(subexp_diagnostics(&[1.0; 10]), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn sum_lemma_trivial_cases() {
        let zero = vec![0.0; 100];
        let r = check_sum_lemma(&zero, &zero, &[0.5, 1.0]).unwrap();
        assert!(r.holds);
        assert!(r.rows.iter().all(|row| row.lhs == 0.0 && row.rhs == 0.0));
        let x = exp_samples(10_000, 1.0, 4);
        let r = check_sum_lemma(&x, &vec![0.0; x.len()], &[0.5, 1.0, 2.0]).unwrap();
        assert!(r.rows.iter().all(|row| row.lhs <= row.rhs));
    }
}
