//! Closed-form kernels: correlation loss, bias-free RMS normalization,
//! SwishRN and its directional derivative, feature clipping and binary
//! label smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Small positive guard added inside divisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Epsilon(f64);

impl Epsilon {
    pub const DEFAULT: Epsilon = Epsilon(1e-6);

    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::usage(format!("epsilon must be positive, got {value}")));
        }
        Ok(Self(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Epsilon {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<f64> for Epsilon {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Epsilon> for f64 {
    fn from(e: Epsilon) -> f64 {
        e.0
    }
}

/// Gate used inside SwishRN.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    /// Exact logistic sigmoid.
    #[default]
    Sigmoid,
    /// Piecewise-linear `relu6(x + 3) / 6`. The resulting hard swish differs
    /// from exact swish by at most 0.1423 on [-6, 6], attained at |x| = 3.
    HardSigmoid,
}

impl Gate {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Gate::Sigmoid => sigmoid(x),
            Gate::HardSigmoid => ((x + 3.0).clamp(0.0, 6.0)) / 6.0,
        }
    }
}

/// Largest |hard_swish(x) - swish(x)| over [-6, 6].
pub const HARD_SWISH_MAX_DEVIATION: f64 = 0.1423;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::data(format!("{what}[{i}] is not finite"))),
        None => Ok(()),
    }
}

/// `1 - Cov(x, y) / (σx σy + eps)` with population moments, clamped to
/// `[0, 2]`. A constant input has no defined correlation and yields 1.
pub fn correlation_loss(x: &[f64], y: &[f64], eps: Epsilon) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::usage(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::usage("correlation needs at least two samples"));
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;

    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Ok(1.0);
    }
    let (cov, sx, sy) = (cov / n, (vx / n).sqrt(), (vy / n).sqrt());
    Ok((1.0 - cov / (sx * sy + eps.get())).clamp(0.0, 2.0))
}

/// `x / sqrt(mean(x²) + eps)`; no gain, no bias.
pub fn rms_norm(x: &[f64], eps: Epsilon) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::usage("rms_norm of an empty vector"));
    }
    check_finite(x, "x")?;
    let scale = rms_scale(x, eps);
    Ok(x.iter().map(|v| v / scale).collect())
}

fn rms_scale(x: &[f64], eps: Epsilon) -> f64 {
    // Factor out the max magnitude so squaring 1e200 entries cannot overflow.
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return eps.get().sqrt();
    }
    let mean_sq = x.iter().map(|v| (v / peak).powi(2)).sum::<f64>() / x.len() as f64;
    peak * (mean_sq + eps.get() / (peak * peak)).sqrt()
}

/// `r ⊙ sigmoid(r)` with `r = rms_norm(x)`.
pub fn swish_rn(x: &[f64], eps: Epsilon) -> Result<Vec<f64>> {
    swish_rn_gated(x, eps, Gate::Sigmoid)
}

pub fn swish_rn_gated(x: &[f64], eps: Epsilon, gate: Gate) -> Result<Vec<f64>> {
    Ok(rms_norm(x, eps)?.into_iter().map(|r| r * gate.apply(r)).collect())
}

/// Directional derivative of [`swish_rn`] at `x` along `tangent`.
pub fn swish_rn_jvp(x: &[f64], tangent: &[f64], eps: Epsilon) -> Result<Vec<f64>> {
    if x.len() != tangent.len() {
        return Err(Error::usage(format!(
            "length mismatch: {} vs {}",
            x.len(),
            tangent.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::usage("swish_rn_jvp of an empty vector"));
    }
    check_finite(x, "x")?;
    check_finite(tangent, "tangent")?;

    let n = x.len() as f64;
    let s = rms_scale(x, eps);
    // d/dt of s = sqrt(mean(x²) + eps) is mean(x·t) / s.
    let mean_xt = x.iter().zip(tangent).map(|(a, b)| a * b).sum::<f64>() / n;
    let ds = mean_xt / s;
    Ok(x
        .iter()
        .zip(tangent)
        .map(|(&xi, &ti)| {
            let r = xi / s;
            let dr = ti / s - r * ds / s;
            let g = sigmoid(r);
            g * (1.0 + r * (1.0 - g)) * dr
        })
        .collect())
}

/// Elementwise clamp to `[-c, c]`.
pub fn clip_features(x: &[f64], c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(Error::usage(format!("clip bound must be positive, got {c}")));
    }
    Ok(x.iter().map(|v| v.clamp(-c, c)).collect())
}

/// Binary label smoothing `y(1 - eps) + eps/2`.
pub fn smooth_labels(y: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::usage(format!("smoothing must lie in [0, 1), got {eps}")));
    }
    if let Some(bad) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::usage(format!("labels must be 0 or 1, got {bad}")));
    }
    Ok(y.iter().map(|v| smooth_probability(*v, eps)).collect())
}

/// The smoothing map applied to a soft target in `[0, 1]`.
pub fn smooth_probability(p: f64, eps: f64) -> f64 {
    p * (1.0 - eps) + eps / 2.0
}
