//! Time-dependent control functions: band-limited Fourier series,
//! piecewise-linear switching protocols and transition-frequency modulation.
//!
//! Every signal is an immutable value that serialises to JSON with a type tag,
//! its coefficients, and (when it was sampled) the seed that produced it.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of quadrature points per base period when computing RMS
/// values of Fourier signals.
pub const RMS_POINTS_PER_PERIOD: f64 = 1000.0;

/// `f(t) = c0 + Σ_k c_k cos(kνt) + s_k sin(kνt)`, `k = 1..K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierSignal {
    pub c0: f64,
    /// `(c_k, s_k)` for `k = 1..=K`.
    pub coefficients: Vec<(f64, f64)>,
    pub base_freq: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl FourierSignal {
    pub fn new(c0: f64, coefficients: Vec<(f64, f64)>, base_freq: f64) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::InvalidSignal("Fourier signal needs K >= 1".into()));
        }
        if !(base_freq > 0.0) || !base_freq.is_finite() {
            return Err(Error::InvalidSignal(format!("base frequency {base_freq} must be positive")));
        }
        Ok(Self { c0, coefficients, base_freq, seed: None })
    }

    pub fn terms(&self) -> usize {
        self.coefficients.len()
    }

    /// Highest frequency present, `K ν`.
    pub fn bandwidth(&self) -> f64 {
        self.terms() as f64 * self.base_freq
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.base_freq
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = self.c0;
        for (k, &(c, s)) in self.coefficients.iter().enumerate() {
            let phase = (k + 1) as f64 * self.base_freq * t;
            let (sin, cos) = phase.sin_cos();
            acc += c * cos + s * sin;
        }
        acc
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            c0: self.c0 * factor,
            coefficients: self.coefficients.iter().map(|&(c, s)| (c * factor, s * factor)).collect(),
            base_freq: self.base_freq,
            seed: self.seed,
        }
    }
}

/// Draw `c_k, s_k ~ N(0, 1)` independently for `k = 1..=K`; `c0 = 0`.
pub fn sample_gaussian_fourier(seed: u64, terms: usize, base_freq: f64) -> Result<FourierSignal> {
    if terms == 0 {
        return Err(Error::InvalidSignal("Fourier signal needs K >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coefficients = (0..terms)
        .map(|_| {
            let c: f64 = rng.sample(StandardNormal);
            let s: f64 = rng.sample(StandardNormal);
            (c, s)
        })
        .collect();
    let mut sig = FourierSignal::new(0.0, coefficients, base_freq)?;
    sig.seed = Some(seed);
    Ok(sig)
}

/// Constant plateaus joined by linear ramps of uniform width `ramp`.
///
/// Plateau `i` occupies `[start_i, start_i + durations[i])`, and is followed by
/// a ramp of width `ramp` to plateau `i + 1`. With `ramp == 0` the signal is
/// piecewise constant and takes the right limit at each switching instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearSignal {
    pub values: Vec<f64>,
    pub durations: Vec<f64>,
    pub ramp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PiecewiseLinearSignal {
    pub fn new(values: Vec<f64>, durations: Vec<f64>, ramp: f64) -> Result<Self> {
        if values.is_empty() || values.len() != durations.len() {
            return Err(Error::InvalidSignal(format!(
                "{} plateau values but {} durations",
                values.len(),
                durations.len()
            )));
        }
        if durations.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidSignal("plateau durations must be positive".into()));
        }
        if !(ramp >= 0.0) || !ramp.is_finite() {
            return Err(Error::InvalidSignal(format!("ramp {ramp} must be non-negative")));
        }
        Ok(Self { values, durations, ramp, seed: None })
    }

    pub fn total_duration(&self) -> f64 {
        self.durations.iter().sum::<f64>() + (self.values.len() - 1) as f64 * self.ramp
    }

    /// Start time of each plateau.
    pub fn plateau_starts(&self) -> Vec<f64> {
        let mut starts = Vec::with_capacity(self.values.len());
        let mut t = 0.0;
        for d in &self.durations {
            starts.push(t);
            t += d + self.ramp;
        }
        starts
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let end = self.total_duration();
        if !(t >= 0.0) || t > end {
            return Err(Error::OutsideDomain { t, end });
        }
        Ok(self.eval_clamped(t))
    }

    fn eval_clamped(&self, t: f64) -> f64 {
        let mut start = 0.0;
        let n = self.values.len();
        for i in 0..n {
            let plateau_end = start + self.durations[i];
            if t < plateau_end || i == n - 1 {
                return self.values[i];
            }
            let ramp_end = plateau_end + self.ramp;
            if t < ramp_end {
                let frac = (t - plateau_end) / self.ramp;
                return self.values[i] + frac * (self.values[i + 1] - self.values[i]);
            }
            start = ramp_end;
        }
        self.values[n - 1]
    }

    /// Largest slope magnitude, `max |Δvalue| / τ`; infinite for `τ = 0`
    /// when any neighbouring plateaus differ.
    pub fn max_slope(&self) -> f64 {
        let jump = self.values.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        if jump == 0.0 {
            0.0
        } else {
            jump / self.ramp
        }
    }

    /// Number of plateaus per unit time.
    pub fn switching_rate(&self) -> f64 {
        self.values.len() as f64 / self.total_duration()
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            durations: self.durations.clone(),
            ramp: self.ramp,
            seed: self.seed,
        }
    }

    /// Same plateaus and durations with a different ramp width.
    pub fn with_ramp(&self, ramp: f64) -> Result<Self> {
        let mut out = Self::new(self.values.clone(), self.durations.clone(), ramp)?;
        out.seed = self.seed;
        Ok(out)
    }
}

/// `ω(t) = ω_c + Σ_{k=-N}^{N} c_k cos((ω_m + kν)t) + s_k sin((ω_m + kν)t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationSignal {
    pub center: f64,
    pub mod_center: f64,
    pub base_freq: f64,
    pub half_terms: usize,
    /// `(c_k, s_k)` for `k = -N..=N`, stored in increasing `k`.
    pub coefficients: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ModulationSignal {
    pub fn new(
        center: f64,
        mod_center: f64,
        base_freq: f64,
        half_terms: usize,
        coefficients: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if coefficients.len() != 2 * half_terms + 1 {
            return Err(Error::InvalidSignal(format!(
                "modulation with N = {half_terms} needs {} coefficient pairs, got {}",
                2 * half_terms + 1,
                coefficients.len()
            )));
        }
        Ok(Self { center, mod_center, base_freq, half_terms, coefficients, seed: None })
    }

    /// Single tone `ω_c + δ cos(ω_m t)`.
    pub fn single_tone(center: f64, mod_freq: f64, amplitude: f64) -> Self {
        Self {
            center,
            mod_center: mod_freq,
            base_freq: 0.0,
            half_terms: 0,
            coefficients: vec![(amplitude, 0.0)],
            seed: None,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.half_terms as i64;
        let mut acc = self.center;
        for (idx, &(c, s)) in self.coefficients.iter().enumerate() {
            let k = idx as i64 - n;
            let (sin, cos) = ((self.mod_center + k as f64 * self.base_freq) * t).sin_cos();
            acc += c * cos + s * sin;
        }
        acc
    }

    /// `sqrt(½ Σ (c_k² + s_k²))`.
    pub fn rms_amplitude(&self) -> f64 {
        (0.5 * self.coefficients.iter().map(|&(c, s)| c * c + s * s).sum::<f64>()).sqrt()
    }

    /// Frequency interval covered by the modulation terms,
    /// `[ω_m - Nν, ω_m + Nν]`.
    pub fn spectral_span(&self) -> (f64, f64) {
        let w = self.half_terms as f64 * self.base_freq;
        (self.mod_center - w, self.mod_center + w)
    }
}

/// Gaussian coefficients for `k = -N..=N`, rescaled so the modulation has
/// RMS amplitude `rms`.
pub fn sample_modulation(
    seed: u64,
    center: f64,
    mod_center: f64,
    base_freq: f64,
    half_terms: usize,
    rms: f64,
) -> Result<ModulationSignal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<(f64, f64)> = (0..2 * half_terms + 1)
        .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let mut sig = ModulationSignal::new(center, mod_center, base_freq, half_terms, raw)?;
    let current = sig.rms_amplitude();
    if current == 0.0 {
        return Err(Error::InvalidSignal("sampled modulation has zero amplitude".into()));
    }
    let f = rms / current;
    for pair in &mut sig.coefficients {
        pair.0 *= f;
        pair.1 *= f;
    }
    sig.seed = Some(seed);
    Ok(sig)
}

/// Any control function the Hamiltonian builders accept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlSignal {
    Constant { value: f64 },
    Fourier(FourierSignal),
    Piecewise(PiecewiseLinearSignal),
    Modulation(ModulationSignal),
}

impl ControlSignal {
    pub fn constant(value: f64) -> Self {
        ControlSignal::Constant { value }
    }

    /// Evaluate the signal. Piecewise signals hold their last value past the
    /// end of their domain; use [`ControlSignal::domain_end`] to validate
    /// durations up front.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            ControlSignal::Constant { value } => *value,
            ControlSignal::Fourier(f) => f.eval(t),
            ControlSignal::Piecewise(p) => p.eval_clamped(t.max(0.0)),
            ControlSignal::Modulation(m) => m.eval(t),
        }
    }

    pub fn domain_end(&self) -> Option<f64> {
        match self {
            ControlSignal::Piecewise(p) => Some(p.total_duration()),
            _ => None,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            ControlSignal::Constant { value } => ControlSignal::Constant { value: value * factor },
            ControlSignal::Fourier(f) => ControlSignal::Fourier(f.scaled(factor)),
            ControlSignal::Piecewise(p) => ControlSignal::Piecewise(p.scaled(factor)),
            ControlSignal::Modulation(m) => {
                let mut m = m.clone();
                m.center *= factor;
                for pair in &mut m.coefficients {
                    pair.0 *= factor;
                    pair.1 *= factor;
                }
                ControlSignal::Modulation(m)
            }
        }
    }

    /// Quadrature step used for RMS and mean statistics when none is given:
    /// a thousandth of the base period for Fourier-type signals.
    pub fn default_quadrature_step(&self, duration: f64) -> f64 {
        match self {
            ControlSignal::Fourier(f) => f.period() / RMS_POINTS_PER_PERIOD,
            ControlSignal::Modulation(m) => {
                let fastest = m.mod_center.abs() + m.half_terms as f64 * m.base_freq;
                if fastest > 0.0 {
                    2.0 * PI / fastest / RMS_POINTS_PER_PERIOD
                } else {
                    duration / RMS_POINTS_PER_PERIOD
                }
            }
            _ => duration / RMS_POINTS_PER_PERIOD,
        }
    }
}

fn trapezoid_average(f: impl Fn(f64) -> f64, duration: f64, step: f64) -> Result<f64> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::InvalidInput(format!("duration {duration} must be positive")));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!("quadrature step {step} must be positive")));
    }
    let n = (duration / step).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    let mut acc = 0.5 * (f(0.0) + f(duration));
    for i in 1..n {
        acc += f(i as f64 * h);
    }
    Ok(acc * h / duration)
}

/// `sqrt((1/T) ∫_0^T f(t)² dt)` by the composite trapezoid rule.
pub fn rms_over(sig: &ControlSignal, duration: f64, step: f64) -> Result<f64> {
    Ok(trapezoid_average(|t| sig.eval(t).powi(2), duration, step)?.sqrt())
}

/// `(1/T) ∫_0^T |f(t)| dt`.
pub fn mean_abs_over(sig: &ControlSignal, duration: f64, step: f64) -> Result<f64> {
    trapezoid_average(|t| sig.eval(t).abs(), duration, step)
}

/// Rescale `sig` so that its RMS over `[0, duration]` equals `target`.
pub fn scale_to_rms(sig: &ControlSignal, target: f64, duration: f64, step: f64) -> Result<ControlSignal> {
    let current = rms_over(sig, duration, step)?;
    if current == 0.0 {
        return Err(Error::InvalidSignal("cannot rescale a signal with zero RMS".into()));
    }
    Ok(sig.scaled(target / current))
}

/// Random piecewise switching protocol: Rabi-frequency plateaus and matching
/// Rabi-angle plateaus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchingProtocol {
    pub rabi: PiecewiseLinearSignal,
    pub phase: PiecewiseLinearSignal,
    pub seed: u64,
}

impl SwitchingProtocol {
    /// Generate `segments` plateaus whose time-averaged `|Ω|` equals
    /// `mean_rabi` and whose plateau count per unit time equals
    /// `switching_rate`. Durations are uniform in `[0.5, 1.5]` times the
    /// mean before normalisation, Rabi values are uniform in `[0, 1]` before
    /// normalisation, and angles uniform in `[0, 2π)`.
    pub fn random(seed: u64, segments: usize, mean_rabi: f64, switching_rate: f64, ramp: f64) -> Result<Self> {
        if segments == 0 {
            return Err(Error::InvalidSignal("protocol needs at least one segment".into()));
        }
        let total = segments as f64 / switching_rate;
        let plateau_time = total - (segments - 1) as f64 * ramp;
        if !(plateau_time > 0.0) {
            return Err(Error::InvalidSignal(format!(
                "ramp {ramp} too long for {segments} segments at rate {switching_rate}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw_durations: Vec<f64> = (0..segments).map(|_| rng.random_range(0.5..1.5)).collect();
        let raw_values: Vec<f64> = (0..segments).map(|_| rng.random_range(0.0..1.0)).collect();
        let angles: Vec<f64> = (0..segments).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let norm: f64 = raw_durations.iter().sum();
        let durations: Vec<f64> = raw_durations.iter().map(|d| d * plateau_time / norm).collect();

        let mut rabi = PiecewiseLinearSignal::new(raw_values, durations.clone(), ramp)?;
        let sig = ControlSignal::Piecewise(rabi.clone());
        let mean = mean_abs_over(&sig, total, total / 200_000.0)?;
        rabi = rabi.scaled(mean_rabi / mean);
        rabi.seed = Some(seed);
        let mut phase = PiecewiseLinearSignal::new(angles, durations, ramp)?;
        phase.seed = Some(seed);
        Ok(Self { rabi, phase, seed })
    }

    pub fn with_ramp(&self, ramp: f64) -> Result<Self> {
        Ok(Self { rabi: self.rabi.with_ramp(ramp)?, phase: self.phase.with_ramp(ramp)?, seed: self.seed })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { rabi: self.rabi.scaled(factor), phase: self.phase.clone(), seed: self.seed }
    }

    pub fn total_duration(&self) -> f64 {
        self.rabi.total_duration()
    }
}
