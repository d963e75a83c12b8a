use serde::{Deserialize, Serialize};

use super::TailEstimate;
use crate::error::{Error, Result};

/// Ordinary least squares `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; 0 when `y` has no variance.
    pub r2: f64,
    pub max_residual: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut sse = 0.0;
    let mut max_residual: f64 = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let r = yi - (intercept + slope * xi);
        sse += r * r;
        max_residual = max_residual.max(r.abs());
    }
    let r2 = if syy <= f64::EPSILON * nf * my.abs().max(1.0) { 0.0 } else { 1.0 - sse / syy };
    Some(LineFit {
        slope,
        intercept,
        r2,
        max_residual,
    })
}

/// Which tail points enter the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPolicy {
    pub tail_floor: f64,
    pub tail_ceil: f64,
    /// Largest admissible `s`, typically `3·T_max/4`.
    pub s_max: f64,
    pub min_points: usize,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        Self {
            tail_floor: 1e-3,
            tail_ceil: 0.5,
            s_max: f64::INFINITY,
            min_points: 5,
        }
    }
}

impl WindowPolicy {
    pub fn for_horizon(horizon: f64) -> Self {
        Self {
            s_max: 0.75 * horizon,
            ..Self::default()
        }
    }
}

/// `tail(s) ≈ C·exp(−q·s)` on the fit window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub q_hat: f64,
    pub c_hat: f64,
    pub r2: f64,
    pub window: (f64, f64),
    pub points: usize,
    /// Largest |log residual| inside the window.
    pub max_log_residual: f64,
    /// Set when the window shows no decay, so `q_hat` carries no information.
    pub flat: bool,
}

impl ExpFit {
    /// One-line summary `q_hat=…, C_hat=…, r2=…, window=[a,b]`.
    pub fn summary_line(&self) -> String {
        format!(
            "q_hat={}, C_hat={}, r2={}, window=[{},{}]",
            self.q_hat, self.c_hat, self.r2, self.window.0, self.window.1
        )
    }
}

pub fn fit_exponential(tail: &TailEstimate, policy: &WindowPolicy) -> Result<ExpFit> {
    fit_points(&tail.grid, &tail.tail, policy)
}

pub(crate) fn fit_points(grid: &[f64], tail: &[f64], policy: &WindowPolicy) -> Result<ExpFit> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (&s, &t) in grid.iter().zip(tail) {
        if t > 0.0 && t >= policy.tail_floor && t <= policy.tail_ceil && s <= policy.s_max {
            xs.push(s);
            ys.push(t.ln());
        }
    }
    let window = match (xs.first(), xs.last()) {
        (Some(&a), Some(&b)) => Some((a, b)),
        _ => None,
    };
    if xs.len() < policy.min_points.max(2) {
        return Err(Error::InsufficientData {
            needed: policy.min_points.max(2),
            found: xs.len(),
            window,
        });
    }
    let line = fit_line(&xs, &ys).ok_or(Error::InsufficientData {
        needed: 2,
        found: 1,
        window,
    })?;
    let flat = line.r2 == 0.0;
    Ok(ExpFit {
        q_hat: if flat { 0.0 } else { -line.slope },
        c_hat: line.intercept.exp(),
        r2: line.r2,
        window: window.unwrap_or((0.0, 0.0)),
        points: xs.len(),
        max_log_residual: line.max_residual,
        flat,
    })
}
