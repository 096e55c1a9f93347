//! Few-level open systems: levels, damped transitions, the flat oscillator
//! bath, drives, and the Hamiltonians built from them.
//!
//! Units: `ħ = 1` and every frequency is angular.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::control::{ControlSignal, ModulationSignal};
use crate::error::{Error, Result};
use crate::linalg::{ket_bra, zeros, CMat, C64, I, ONE};

/// Default factor by which transition-frequency separations must exceed the
/// largest damping rate.
pub const NONDEGENERACY_FACTOR: f64 = 10.0;

/// A damped transition `|lower⟩ ↔ |upper⟩` with bath coupling `g`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Transition {
    pub lower: usize,
    pub upper: usize,
    pub g: f64,
    #[serde(skip)]
    frequency: f64,
}

impl Transition {
    pub fn frequency(&self) -> f64 {
        self.frequency
    }
}

#[derive(Deserialize)]
struct TransitionSpec {
    lower: usize,
    upper: usize,
    g: f64,
}

#[derive(Deserialize)]
struct LevelSystemSpec {
    energies: Vec<f64>,
    transitions: Vec<TransitionSpec>,
}

/// Level energies (strictly increasing) and the transitions that couple to
/// the bath.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LevelSystemSpec")]
pub struct LevelSystem {
    energies: Vec<f64>,
    transitions: Vec<Transition>,
}

impl TryFrom<LevelSystemSpec> for LevelSystem {
    type Error = Error;

    fn try_from(spec: LevelSystemSpec) -> Result<Self> {
        let transitions = spec.transitions.into_iter().map(|t| (t.lower, t.upper, t.g)).collect();
        LevelSystem::new(spec.energies, transitions)
    }
}

impl LevelSystem {
    /// `transitions` holds `(lower, upper, g)` triples.
    pub fn new(energies: Vec<f64>, transitions: Vec<(usize, usize, f64)>) -> Result<Self> {
        if energies.len() < 2 {
            return Err(Error::InvalidSystem(format!("need at least two levels, got {}", energies.len())));
        }
        if energies.iter().any(|e| !e.is_finite()) || energies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSystem("energies must be finite and strictly increasing".into()));
        }
        let dim = energies.len();
        let transitions = transitions
            .into_iter()
            .map(|(lower, upper, g)| {
                for index in [lower, upper] {
                    if index >= dim {
                        return Err(Error::IndexOutOfRange { index, dim });
                    }
                }
                if lower >= upper {
                    return Err(Error::InvalidSystem(format!("transition ({lower}, {upper}) must have lower < upper")));
                }
                if !g.is_finite() {
                    return Err(Error::InvalidSystem("coupling must be finite".into()));
                }
                Ok(Transition { lower, upper, g, frequency: energies[upper] - energies[lower] })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { energies, transitions })
    }

    /// Two-level system with energies `∓ω/2`.
    pub fn qubit(omega: f64, g: f64) -> Result<Self> {
        Self::new(vec![-omega / 2.0, omega / 2.0], vec![(0, 1, g)])
    }

    /// V system with ground `0`, intermediate level at `omega2` and top level
    /// at `omega`. Transition 0 is `0 ↔ 2` (the driven one), transition 1 is
    /// `0 ↔ 1`.
    pub fn v_system(omega: f64, omega2: f64, g: f64, g2: f64) -> Result<Self> {
        Self::new(vec![0.0, omega2, omega], vec![(0, 2, g), (0, 1, g2)])
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn transition(&self, n: usize) -> Result<&Transition> {
        self.transitions.get(n).ok_or(Error::IndexOutOfRange { index: n, dim: self.transitions.len() })
    }

    /// Same levels and transitions with every coupling replaced.
    pub fn with_couplings(&self, couplings: &[f64]) -> Result<Self> {
        if couplings.len() != self.transitions.len() {
            return Err(Error::InvalidSystem("one coupling per transition required".into()));
        }
        let trs = self.transitions.iter().zip(couplings).map(|(t, &g)| (t.lower, t.upper, g)).collect();
        Self::new(self.energies.clone(), trs)
    }

    /// `Σ_n g_n (σ_n + σ_n†)`, the system side of the bath coupling.
    pub fn coupling_operator(&self) -> CMat {
        let mut x = zeros(self.dim());
        for t in &self.transitions {
            x[(t.lower, t.upper)] += C64::from(t.g);
            x[(t.upper, t.lower)] += C64::from(t.g);
        }
        x
    }

    /// Warnings for transition pairs closer than `factor` times the largest
    /// damping rate.
    pub fn nondegeneracy_warnings(&self, bath: &BathSpec, factor: f64) -> Vec<String> {
        let max_gamma = self
            .transitions
            .iter()
            .filter_map(|t| damping_rate(t.g, bath, t.frequency).ok())
            .fold(0.0, f64::max);
        let mut out = Vec::new();
        for (a, ta) in self.transitions.iter().enumerate() {
            for (b, tb) in self.transitions.iter().enumerate().skip(a + 1) {
                let sep = (ta.frequency - tb.frequency).abs();
                if sep <= factor * max_gamma {
                    out.push(format!(
                        "transitions {a} and {b} separated by {sep:e}, not above {factor} x max damping {max_gamma:e}"
                    ));
                }
            }
        }
        out
    }
}

/// Spectral density of the oscillator bath.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralDensity {
    /// `J(ω) = 1/Ω_c` on `[0, Ω_c]`.
    Flat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    pub cutoff: f64,
    pub density: SpectralDensity,
}

impl BathSpec {
    pub fn flat(cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0) || !cutoff.is_finite() {
            return Err(Error::InvalidInput(format!("cutoff {cutoff} must be positive")));
        }
        Ok(Self { cutoff, density: SpectralDensity::Flat })
    }

    pub fn density_at(&self, omega: f64) -> f64 {
        match self.density {
            SpectralDensity::Flat => {
                if (0.0..=self.cutoff).contains(&omega) {
                    1.0 / self.cutoff
                } else {
                    0.0
                }
            }
        }
    }

    /// Coupling that produces damping rate `gamma` at frequency `omega`.
    pub fn coupling_for_rate(&self, gamma: f64, omega: f64) -> f64 {
        (gamma / (2.0 * PI * self.density_at(omega))).sqrt()
    }
}

/// `γ = 2π g² J(ω)`.
pub fn damping_rate(g: f64, bath: &BathSpec, omega: f64) -> Result<f64> {
    if !(omega > 0.0 && omega < bath.cutoff) {
        return Err(Error::OutsideBand { omega, cutoff: bath.cutoff });
    }
    Ok(2.0 * PI * g * g * bath.density_at(omega))
}

/// `Δ = (γ/2π) ln(Ω_c/ω - 1)`, the shift of the upper level.
pub fn lamb_shift(gamma: f64, omega: f64, bath: &BathSpec) -> Result<f64> {
    if !(omega > 0.0 && omega < bath.cutoff) {
        return Err(Error::OutsideBand { omega, cutoff: bath.cutoff });
    }
    Ok(gamma / (2.0 * PI) * (bath.cutoff / omega - 1.0).ln())
}

/// `σ = |lower⟩⟨upper|`.
pub fn lowering_operator(sys: &LevelSystem, tr: &Transition) -> Result<CMat> {
    let dim = sys.dim();
    for index in [tr.lower, tr.upper] {
        if index >= dim {
            return Err(Error::IndexOutOfRange { index, dim });
        }
    }
    Ok(ket_bra(dim, tr.lower, tr.upper))
}

pub fn bare_hamiltonian(sys: &LevelSystem) -> CMat {
    CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        sys.dim(),
        sys.energies.iter().map(|&e| C64::from(e)),
    ))
}

/// A drive on one transition,
/// `Ω(t) cos(ω_d t) [cos θ(t) σ_x + sin θ(t) σ_y]` with `σ_x = σ + σ†` and
/// `σ_y = i(σ - σ†)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    pub transition: usize,
    pub omega_d: f64,
    pub rabi: ControlSignal,
    pub phase: ControlSignal,
}

impl DriveSpec {
    pub fn constant(transition: usize, omega_d: f64, rabi: f64) -> Self {
        Self { transition, omega_d, rabi: ControlSignal::constant(rabi), phase: ControlSignal::constant(0.0) }
    }

    pub fn domain_end(&self) -> Option<f64> {
        match (self.rabi.domain_end(), self.phase.domain_end()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

pub fn drive_hamiltonian(t: f64, d: &DriveSpec, sys: &LevelSystem) -> Result<CMat> {
    let tr = sys.transition(d.transition)?;
    let amp = d.rabi.eval(t) * (d.omega_d * t).cos();
    let theta = d.phase.eval(t);
    // coefficient of |l⟩⟨k|; the |k⟩⟨l| entry is its conjugate
    let upper_right = C64::from(amp) * (C64::from(theta.cos()) + I * theta.sin());
    let mut h = zeros(sys.dim());
    h[(tr.lower, tr.upper)] = upper_right;
    h[(tr.upper, tr.lower)] = upper_right.conj();
    Ok(h)
}

/// Time-dependent frequency of one transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyModulation {
    pub transition: usize,
    pub signal: ModulationSignal,
}

/// The system with its controls: everything needed to build `H(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivenSystem {
    pub system: LevelSystem,
    #[serde(default)]
    pub drives: Vec<DriveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_modulation: Option<FrequencyModulation>,
}

impl DrivenSystem {
    pub fn new(system: LevelSystem, drives: Vec<DriveSpec>, frequency_modulation: Option<FrequencyModulation>) -> Result<Self> {
        let out = Self { system, drives, frequency_modulation };
        out.validate()?;
        Ok(out)
    }

    pub fn undriven(system: LevelSystem) -> Self {
        Self { system, drives: Vec::new(), frequency_modulation: None }
    }

    /// Indices must be valid and no two drives may share a level.
    pub fn validate(&self) -> Result<()> {
        let mut used = vec![false; self.system.dim()];
        for d in &self.drives {
            let tr = self.system.transition(d.transition)?;
            for level in [tr.lower, tr.upper] {
                if used[level] {
                    return Err(Error::OverlappingDrives { level });
                }
                used[level] = true;
            }
        }
        if let Some(fm) = &self.frequency_modulation {
            self.system.transition(fm.transition)?;
        }
        Ok(())
    }

    pub fn hamiltonian(&self, t: f64) -> Result<CMat> {
        full_hamiltonian(t, &self.system, &self.drives, self.frequency_modulation.as_ref())
    }

    /// Earliest end among the drives' signal domains.
    pub fn domain_end(&self) -> Option<f64> {
        self.drives.iter().filter_map(|d| d.domain_end()).reduce(f64::min)
    }
}

/// `H(t) = H_0(t) + Σ H_d(t)`.
///
/// A frequency modulation replaces `ω_n` by `ω(t)` by moving the lower and
/// upper level each by half the deviation, which keeps the qubit in its
/// symmetric `∓ω(t)/2` form.
pub fn full_hamiltonian(
    t: f64,
    sys: &LevelSystem,
    drives: &[DriveSpec],
    freq_mod: Option<&FrequencyModulation>,
) -> Result<CMat> {
    let mut h = bare_hamiltonian(sys);
    if let Some(fm) = freq_mod {
        let tr = sys.transition(fm.transition)?;
        let shift = fm.signal.eval(t) - tr.frequency;
        h[(tr.lower, tr.lower)] -= C64::from(0.5 * shift);
        h[(tr.upper, tr.upper)] += C64::from(0.5 * shift);
    }
    let mut used = vec![false; sys.dim()];
    for d in drives {
        let tr = sys.transition(d.transition)?;
        for level in [tr.lower, tr.upper] {
            if used[level] {
                return Err(Error::OverlappingDrives { level });
            }
            used[level] = true;
        }
        h += drive_hamiltonian(t, d, sys)?;
    }
    Ok(h)
}

/// `|k⟩⟨k|` for the upper level of a transition.
pub fn upper_projector(sys: &LevelSystem, tr: &Transition) -> CMat {
    let mut p = zeros(sys.dim());
    p[(tr.upper, tr.upper)] = ONE;
    p
}
