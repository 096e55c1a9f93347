//! Integrated bath effect, relative error and power-law fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative grid mismatch tolerated by [`check_aligned`].
pub const GRID_TOL: f64 = 1e-9;

/// Population traces of the three evolutions on one common time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedSeries {
    pub times: Vec<f64>,
    pub p_h: Vec<f64>,
    pub p_exact: Vec<f64>,
    pub p_me: Vec<f64>,
}

impl AlignedSeries {
    pub fn new(times: Vec<f64>, p_h: Vec<f64>, p_exact: Vec<f64>, p_me: Vec<f64>) -> Result<Self> {
        let n = times.len();
        for (name, s) in [("p_h", &p_h), ("p_exact", &p_exact), ("p_me", &p_me)] {
            if s.len() != n {
                return Err(Error::ShapeMismatch { expected: format!("{n} samples"), got: format!("{} in {name}", s.len()) });
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} has non-finite values")));
            }
        }
        check_grid(&times)?;
        Ok(Self { times, p_h, p_exact, p_me })
    }

    pub fn delta0(&self) -> Result<f64> {
        effect_integral(&self.p_h, &self.p_exact, &self.times)
    }

    pub fn delta1(&self) -> Result<f64> {
        effect_integral(&self.p_h, &self.p_me, &self.times)
    }

    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("time grid has non-finite values".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Grids agree node by node to [`GRID_TOL`] relative to their span.
pub fn check_aligned(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} nodes", a.len()), got: format!("{} nodes", b.len()) });
    }
    let span = match (a.first(), a.last()) {
        (Some(x), Some(y)) => (y - x).abs().max(1.0),
        _ => 1.0,
    };
    if let Some((i, (x, y))) = a.iter().zip(b).enumerate().find(|(_, (x, y))| (*x - *y).abs() > GRID_TOL * span) {
        return Err(Error::InvalidInput(format!("grids differ at node {i}: {x} vs {y}")));
    }
    Ok(())
}

/// Composite trapezoid of `|a - b|` over `grid`.
pub fn effect_integral(a: &[f64], b: &[f64], grid: &[f64]) -> Result<f64> {
    if a.len() != grid.len() || b.len() != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} samples", grid.len()),
            got: format!("{} and {}", a.len(), b.len()),
        });
    }
    check_grid(grid)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    Ok(trapezoid(&d, grid))
}

pub fn trapezoid(values: &[f64], grid: &[f64]) -> f64 {
    values.windows(2).zip(grid.windows(2)).map(|(v, t)| 0.5 * (v[0] + v[1]) * (t[1] - t[0])).sum()
}

/// `|Δ1 - Δ0| / Δ0`, or [`RelativeError::Undefined`] when the reference effect vanishes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum RelativeError {
    Value(f64),
    Undefined,
}

impl RelativeError {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Value(v) => Some(*v),
            Self::Undefined => None,
        }
    }

    pub fn is_defined(&self) -> bool {
        matches!(self, Self::Value(_))
    }
}

impl std::fmt::Display for RelativeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Value(v) => write!(f, "{v:e}"),
            Self::Undefined => f.write_str("undefined"),
        }
    }
}

pub fn relative_error(delta1: f64, delta0: f64) -> RelativeError {
    if !(delta0 > 0.0) || !delta1.is_finite() {
        return RelativeError::Undefined;
    }
    RelativeError::Value((delta1 - delta0).abs() / delta0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS of the log-space residuals.
    pub residual: f64,
}

/// Least-squares fit of `ln y = slope ln x + intercept`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} values", xs.len()), got: format!("{}", ys.len()) });
    }
    if xs.len() < 3 {
        return Err(Error::InvalidInput("a slope fit needs at least 3 points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("log-log fit needs distinct abscissae".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual =
        (lx.iter().zip(&ly).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / n).sqrt();
    Ok(PowerLawFit { slope, intercept, residual })
}

/// Linear interpolation of `(times, values)` onto `target`.
pub fn resample(times: &[f64], values: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if times.len() != values.len() || times.is_empty() {
        return Err(Error::ShapeMismatch { expected: format!("{} values", times.len()), got: format!("{}", values.len()) });
    }
    check_grid(times)?;
    let (t0, t1) = (times[0], times[times.len() - 1]);
    let slack = GRID_TOL * (t1 - t0).abs().max(1.0);
    let mut out = Vec::with_capacity(target.len());
    let mut k = 0;
    for &t in target {
        if t < t0 - slack || t > t1 + slack {
            return Err(Error::InvalidInput(format!("cannot extrapolate to {t} outside [{t0}, {t1}]")));
        }
        if times.len() == 1 {
            out.push(values[0]);
            continue;
        }
        // target grids are usually sorted; restart the scan when they are not
        if k > 0 && t < times[k] {
            k = 0;
        }
        while k + 2 < times.len() && times[k + 1] <= t {
            k += 1;
        }
        let (ta, tb) = (times[k], times[k + 1]);
        let s = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        out.push(if s == 0.0 {
            values[k]
        } else if s == 1.0 {
            values[k + 1]
        } else {
            values[k] + s * (values[k + 1] - values[k])
        });
    }
    Ok(out)
}

/// Sample mean and standard deviation (`n - 1` normalisation; 0 for one sample).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
