//! Estimators, goodness-of-fit tests and closed-form oracles.

mod fit;
mod oracle;
mod probe;
mod subexp;
mod tail;
mod tests_gof;

pub use fit::{fit_exponential, fit_line, ExpFit, LineFit, WindowPolicy};
pub use oracle::{extinction_cdf, extinction_probability, master_equation_cdf, MasterEquation};
pub use probe::{survival_probe, ProbeRow, SurvivalProbe};
pub use subexp::{check_sum_lemma, subexp_diagnostics, MgfPoint, SubexpDiagnostic, SumLemmaReport, SumLemmaRow};
pub use tail::{linear_grid, tail_estimate, tail_from_values, TailEstimate};
pub use tests_gof::{chi_square_geometric, ks_exponential, ks_p_value, ks_statistic, ChiSquareReport};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval at 95%.
pub fn wilson(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lower = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let upper = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lower, upper)
}

/// Standard error of a binomial proportion.
pub fn binomial_se(p: f64, trials: u64) -> f64 {
    if trials == 0 {
        return f64::INFINITY;
    }
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// A proportion with its Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        let (lower, upper) = wilson(successes, trials);
        let estimate = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        Self {
            successes,
            trials,
            estimate,
            lower,
            upper,
        }
    }

    pub fn se(&self) -> f64 {
        binomial_se(self.estimate, self.trials)
    }

    pub fn half_width(&self) -> f64 {
        (self.upper - self.lower) / 2.0
    }
}
