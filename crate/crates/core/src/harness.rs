//! Declarative experiments: JSON configs, figure presets, sweeps,
//! convergence studies and result files.
//!
//! A config describes one system, bath and control family plus an optional
//! sweep axis. Every `(axis value, sample)` pair is a point; each point runs
//! the requested evolution modes on a shared time grid and yields an
//! [`ErrorReport`].

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{analytic_flat_coefficients, chain_for, light_cone_length};
use crate::control::{
    mean_abs_over, rms_over, sample_gaussian_fourier, sample_modulation, scale_to_rms, ControlSignal,
    ModulationSignal, SwitchingProtocol,
};
use crate::error::{Error, Result, ResultExt};
use crate::linalg::{fro, C64, ONE, ZERO};
use crate::master::{integrate, step_count, Ame, DensityMatrix, EvolutionResult, MasterOptions, Mme, Unitary};
use crate::metrics::{check_aligned, effect_integral, mean_std, relative_error, RelativeError};
use crate::mps::{evolve, init_state, ChainModel, EvolveOptions, MpsEvolution, Stepper, TruncationPolicy};
use crate::system::{lamb_shift, BathSpec, DriveSpec, DrivenSystem, FrequencyModulation, LevelSystem};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "H")]
    H,
    #[serde(rename = "MME")]
    Mme,
    #[serde(rename = "AME")]
    Ame,
    #[serde(rename = "EXACT")]
    Exact,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::H, Mode::Mme, Mode::Ame, Mode::Exact];

    pub fn label(self) -> &'static str {
        match self {
            Mode::H => "H",
            Mode::Mme => "MME",
            Mode::Ame => "AME",
            Mode::Exact => "EXACT",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}'")))
    }

    /// Comma-separated list such as `H,MME`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let mut modes = s.split(',').filter(|p| !p.trim().is_empty()).map(Mode::parse).collect::<Result<Vec<_>>>()?;
        modes.sort();
        modes.dedup();
        Ok(modes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemConfig {
    Qubit { omega: f64 },
    /// Ground state shared by the driven transition (at `omega`) and a
    /// second transition at `omega2`.
    VSystem { omega: f64, omega2: f64 },
}

impl SystemConfig {
    pub fn omega(&self) -> f64 {
        match self {
            SystemConfig::Qubit { omega } | SystemConfig::VSystem { omega, .. } => *omega,
        }
    }
}

fn default_cutoff_ratio() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathConfig {
    /// `Ω_c / ω` when no absolute cutoff is given.
    #[serde(default = "default_cutoff_ratio")]
    pub cutoff_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    /// Damping rate of every transition.
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlConfig {
    Constant {
        rabi: f64,
    },
    /// Gaussian random Fourier series for `Ω(t)`, one per sample seed,
    /// scaled to RMS `rms` (or to the axis value).
    Fourier {
        terms: usize,
        base_freq: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rms: Option<f64>,
    },
    /// Random plateaus of `Ω` and `θ`, one protocol per sample seed.
    Switching {
        segments: usize,
        mean_rabi: f64,
        switching_rate: f64,
        #[serde(default)]
        ramp: f64,
    },
    Explicit {
        rabi: ControlSignal,
        phase: ControlSignal,
    },
}

fn default_transition() -> usize {
    0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    #[serde(default = "default_transition")]
    pub transition: usize,
    /// Carrier frequency; resonant with the transition when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_d: Option<f64>,
    pub control: ControlConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FreqModConfig {
    /// `ω(t) = ω + amplitude cos(mod_freq t)`.
    SingleTone { transition: usize, mod_freq: f64, amplitude: f64 },
    /// Random band of `2N+1` tones around `mod_center` with bandwidth
    /// `ω_w = Nν/2`, scaled to RMS amplitude `rms`.
    Band { transition: usize, mod_center: f64, bandwidth: f64, half_terms: usize, rms: f64 },
}

/// Quantity varied along a sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    #[default]
    None,
    /// Constant Rabi frequency of the first drive.
    Rabi,
    /// RMS Rabi frequency of a Fourier control.
    RmsRabi,
    /// Frequency of the driven transition.
    SystemFrequency,
    /// Carrier frequency of the first drive.
    DriveFrequency,
    /// Tone of a single-frequency modulation.
    ModulationFrequency,
    /// Ramp time between switching plateaus.
    SwitchTime,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::None => "none",
            Axis::Rabi => "rabi",
            Axis::RmsRabi => "rms_rabi",
            Axis::SystemFrequency => "system_frequency",
            Axis::DriveFrequency => "drive_frequency",
            Axis::ModulationFrequency => "modulation_frequency",
            Axis::SwitchTime => "switch_time",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DurationPolicy {
    Fixed { duration: f64 },
    /// `T = 2π/Ω` for a constant drive.
    InverseRabi,
    /// `T = 2π/Ω_rms`.
    InverseRms,
    /// Length of the switching protocol.
    Protocol,
    /// `count` periods of the driven transition.
    Periods { count: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Time steps per period `2π/ω` of the fastest transition (upper bound;
    /// the step is shrunk to divide the duration).
    pub steps_per_period: f64,
    pub chi_max: usize,
    pub svd_cutoff: f64,
    pub abort_weight: f64,
    pub fock_dim: usize,
    /// Chain length; the light-cone rule is used when absent.
    pub chain_len: Option<usize>,
    pub light_cone_factor: f64,
    /// Approximate number of recorded samples per run.
    pub records: usize,
    pub stepper: Stepper,
    pub reflection_threshold: f64,
    pub include_lamb_shift: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            steps_per_period: 2000.0,
            chi_max: 64,
            svd_cutoff: 1e-10,
            abort_weight: 1e-3,
            fock_dim: 3,
            chain_len: None,
            light_cone_factor: 1.5,
            records: 400,
            stepper: Stepper::Heun,
            reflection_threshold: 1e-6,
            include_lamb_shift: true,
        }
    }
}

impl SolverSettings {
    pub fn policy(&self) -> TruncationPolicy {
        TruncationPolicy { chi_max: self.chi_max, svd_cutoff: self.svd_cutoff, abort_weight: self.abort_weight }
    }

    /// First 16 hex digits of the SHA-256 of the JSON encoding.
    pub fn hash(&self) -> String {
        sha_hex(&serde_json::to_vec(self).expect("settings serialise"))[..16].to_string()
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn default_samples() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub system: SystemConfig,
    pub bath: BathConfig,
    #[serde(default)]
    pub drives: Vec<DriveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_modulation: Option<FreqModConfig>,
    /// Initial level; the upper level of transition 0 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_level: Option<usize>,
    /// Level whose population is compared; the upper level of transition 0
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracked_level: Option<usize>,
    pub duration: DurationPolicy,
    #[serde(default)]
    pub axis: Axis,
    #[serde(default)]
    pub axis_values: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverSettings,
    pub modes: Vec<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::from).context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        sha_hex(&serde_json::to_vec(self).expect("config serialises"))
    }

    /// `name-xxxxxxxx`, unique per config (and so per solver setting).
    pub fn experiment_id(&self) -> String {
        format!("{}-{}", self.name, &self.hash()[..8])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema version {} unsupported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.name.is_empty() || self.name.contains(|c: char| c == ',' || c.is_whitespace()) {
            return bad("name must be non-empty without commas or whitespace".into());
        }
        if self.modes.is_empty() {
            return bad("at least one mode is required".into());
        }
        if !(self.bath.gamma >= 0.0) {
            return bad("gamma must be non-negative".into());
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        match (self.axis, self.axis_values.is_empty()) {
            (Axis::None, false) => return bad("axis values given without an axis".into()),
            (a, true) if a != Axis::None => return bad(format!("axis {} needs values", a.label())),
            _ => {}
        }
        if self.axis_values.iter().any(|v| !v.is_finite()) {
            return bad("axis values must be finite".into());
        }
        let s = &self.solver;
        if !(s.steps_per_period >= 1.0) || s.records == 0 || s.fock_dim < 2 || !(s.light_cone_factor >= 1.0) {
            return bad("solver settings out of range".into());
        }
        self.solver.policy().validate().map_err(|e| Error::Config(e.to_string()))?;
        let values: Vec<Option<f64>> =
            if self.axis_values.is_empty() { vec![None] } else { self.axis_values.iter().map(|&v| Some(v)).collect() };
        for v in values {
            let omega = self.point_omega(v);
            let cutoff = self.bath.cutoff.unwrap_or(self.bath.cutoff_ratio * omega);
            if !(cutoff > omega) {
                return bad(format!("cutoff {cutoff} must exceed the transition frequency {omega}"));
            }
        }
        Ok(())
    }

    fn point_omega(&self, axis_value: Option<f64>) -> f64 {
        match (self.axis, axis_value) {
            (Axis::SystemFrequency, Some(v)) => v,
            _ => self.system.omega(),
        }
    }

    /// `(axis value, sample seed)` for every point, in output order.
    pub fn points(&self) -> Vec<(Option<f64>, u64)> {
        let values: Vec<Option<f64>> =
            if self.axis_values.is_empty() { vec![None] } else { self.axis_values.iter().map(|&v| Some(v)).collect() };
        let mut out = Vec::new();
        for v in values {
            for k in 0..self.samples {
                out.push((v, self.seed.wrapping_add(k as u64)));
            }
        }
        out
    }

    fn needs(&self, m: Mode) -> bool {
        self.modes.contains(&m)
    }
}

/// Everything a single point needs, resolved from the config.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointSpec {
    pub axis_value: Option<f64>,
    pub sample_seed: u64,
    pub model: DrivenSystem,
    pub bath: BathSpec,
    pub gamma: f64,
    pub omega: f64,
    pub duration: f64,
    pub dt: f64,
    pub steps: usize,
    pub record_every: usize,
    pub initial_level: usize,
    pub tracked_level: usize,
    pub rabi_mean_abs: f64,
    pub rabi_rms: f64,
}

pub fn resolve_point(cfg: &ExperimentConfig, axis_value: Option<f64>, sample_seed: u64) -> Result<PointSpec> {
    let av = |axis: Axis| if cfg.axis == axis { axis_value } else { None };
    let omega = cfg.point_omega(axis_value);
    let cutoff = cfg.bath.cutoff.unwrap_or(cfg.bath.cutoff_ratio * omega);
    let bath = BathSpec::flat(cutoff)?;
    let gamma = cfg.bath.gamma;
    let system = match &cfg.system {
        SystemConfig::Qubit { .. } => LevelSystem::qubit(omega, bath.coupling_for_rate(gamma, omega))?,
        SystemConfig::VSystem { omega2, .. } => LevelSystem::v_system(
            omega,
            *omega2,
            bath.coupling_for_rate(gamma, omega),
            bath.coupling_for_rate(gamma, *omega2),
        )?,
    };
    let tr0 = system.transition(0)?.clone();

    // nominal Rabi scale of the first drive, used by the duration policies
    let mut protocols = Vec::new();
    let mut nominal = None;
    for (i, d) in cfg.drives.iter().enumerate() {
        let value = match &d.control {
            ControlConfig::Constant { rabi } => av(Axis::Rabi).unwrap_or(*rabi),
            ControlConfig::Fourier { rms, .. } => av(Axis::RmsRabi)
                .or(*rms)
                .ok_or_else(|| Error::Config("Fourier control needs an rms or an rms_rabi axis".into()))?,
            ControlConfig::Switching { mean_rabi, .. } => *mean_rabi,
            ControlConfig::Explicit { rabi, .. } => match rabi {
                ControlSignal::Constant { value } => *value,
                _ => f64::NAN,
            },
        };
        let protocol = match &d.control {
            ControlConfig::Switching { segments, mean_rabi, switching_rate, ramp } => Some(SwitchingProtocol::random(
                sample_seed,
                *segments,
                *mean_rabi,
                *switching_rate,
                av(Axis::SwitchTime).unwrap_or(*ramp),
            )?),
            _ => None,
        };
        if i == 0 {
            nominal = Some(value);
        }
        protocols.push(protocol);
    }
    let duration = match &cfg.duration {
        DurationPolicy::Fixed { duration } => *duration,
        DurationPolicy::InverseRabi | DurationPolicy::InverseRms => {
            let v = nominal.ok_or_else(|| Error::Config("duration policy needs a drive".into()))?;
            2.0 * PI / v
        }
        DurationPolicy::Protocol => protocols
            .first()
            .and_then(|p| p.as_ref())
            .map(|p| p.total_duration())
            .ok_or_else(|| Error::Config("protocol duration needs a switching drive first".into()))?,
        DurationPolicy::Periods { count } => count * 2.0 * PI / tr0.frequency(),
    };
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::Config(format!("duration {duration} must be positive and finite")));
    }

    let mut drives = Vec::new();
    for (d, protocol) in cfg.drives.iter().zip(protocols) {
        let tr = system.transition(d.transition)?;
        let omega_d = av(Axis::DriveFrequency).or(d.omega_d).unwrap_or(tr.frequency());
        let (rabi, phase) = match (&d.control, protocol) {
            (ControlConfig::Constant { rabi }, _) => {
                (ControlSignal::constant(av(Axis::Rabi).unwrap_or(*rabi)), ControlSignal::constant(0.0))
            }
            (ControlConfig::Fourier { terms, base_freq, rms }, _) => {
                let target = av(Axis::RmsRabi).or(*rms).unwrap_or(f64::NAN);
                let raw = ControlSignal::Fourier(sample_gaussian_fourier(sample_seed, *terms, *base_freq)?);
                let step = raw.default_quadrature_step(duration);
                (scale_to_rms(&raw, target, duration, step)?, ControlSignal::constant(0.0))
            }
            (ControlConfig::Switching { .. }, Some(p)) => {
                (ControlSignal::Piecewise(p.rabi), ControlSignal::Piecewise(p.phase))
            }
            (ControlConfig::Switching { .. }, None) => unreachable!("protocol generated above"),
            (ControlConfig::Explicit { rabi, phase }, _) => (rabi.clone(), phase.clone()),
        };
        drives.push(DriveSpec { transition: d.transition, omega_d, rabi, phase });
    }

    let frequency_modulation = match &cfg.frequency_modulation {
        None => None,
        Some(FreqModConfig::SingleTone { transition, mod_freq, amplitude }) => {
            let tr = system.transition(*transition)?;
            let f = av(Axis::ModulationFrequency).unwrap_or(*mod_freq);
            Some(FrequencyModulation {
                transition: *transition,
                signal: ModulationSignal::single_tone(tr.frequency(), f, *amplitude),
            })
        }
        Some(FreqModConfig::Band { transition, mod_center, bandwidth, half_terms, rms }) => {
            let tr = system.transition(*transition)?;
            if *half_terms == 0 {
                return Err(Error::Config("band modulation needs half_terms >= 1".into()));
            }
            let nu = 2.0 * bandwidth / *half_terms as f64;
            let signal = sample_modulation(sample_seed, tr.frequency(), *mod_center, nu, *half_terms, *rms)?;
            Some(FrequencyModulation { transition: *transition, signal })
        }
    };
    let model = DrivenSystem::new(system, drives, frequency_modulation)?;

    let fastest = model.system.transitions().iter().map(|t| t.frequency()).fold(0.0, f64::max);
    let dt_max = 2.0 * PI / fastest / cfg.solver.steps_per_period;
    let steps = (duration / dt_max - 1e-9).ceil().max(1.0) as usize;
    let dt = duration / steps as f64;
    let record_every = (steps / cfg.solver.records).max(1);
    let level = cfg.initial_level.unwrap_or(tr0.upper);
    let tracked = cfg.tracked_level.unwrap_or(tr0.upper);
    for l in [level, tracked] {
        if l >= model.system.dim() {
            return Err(Error::Config(format!("level {l} outside the {}-level system", model.system.dim())));
        }
    }
    let (rabi_mean_abs, rabi_rms) = match model.drives.first() {
        Some(d) => {
            let step = d.rabi.default_quadrature_step(duration);
            (mean_abs_over(&d.rabi, duration, step)?, rms_over(&d.rabi, duration, step)?)
        }
        None => (0.0, 0.0),
    };
    Ok(PointSpec {
        axis_value,
        sample_seed,
        model,
        bath,
        gamma,
        omega,
        duration,
        dt,
        steps,
        record_every,
        initial_level: level,
        tracked_level: tracked,
        rabi_mean_abs,
        rabi_rms,
    })
}

/// Master-equation result for one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeReport {
    pub delta1: f64,
    pub epsilon: RelativeError,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointMeta {
    pub omega: f64,
    pub gamma: f64,
    pub cutoff: f64,
    pub lamb_shift: f64,
    pub rabi_mean_abs: f64,
    pub rabi_rms: f64,
    pub dt: f64,
    pub steps: usize,
    pub chain_len: Option<usize>,
    pub max_bond_dim: Option<usize>,
    pub discarded_weight: Option<f64>,
    pub max_tail_occupation: Option<f64>,
    pub max_top_fock: Option<f64>,
    pub max_norm_correction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub axis_value: Option<f64>,
    pub sample_seed: u64,
    pub duration: f64,
    pub delta0: Option<f64>,
    pub mme: Option<MeReport>,
    pub ame: Option<MeReport>,
    pub flags: Vec<String>,
    pub meta: PointMeta,
}

impl ErrorReport {
    pub fn me(&self, mode: Mode) -> Option<&MeReport> {
        match mode {
            Mode::Mme => self.mme.as_ref(),
            Mode::Ame => self.ame.as_ref(),
            _ => None,
        }
    }
}

/// Tracked-level populations on the common grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointSeries {
    pub times: Vec<f64>,
    pub p_h: Option<Vec<f64>>,
    pub p_exact: Option<Vec<f64>>,
    pub p_mme: Option<Vec<f64>>,
    pub p_ame: Option<Vec<f64>>,
}

impl PointSeries {
    pub fn to_csv(&self) -> String {
        let cols: Vec<(&str, &Vec<f64>)> = [("p_H", &self.p_h), ("p_EXACT", &self.p_exact), ("p_MME", &self.p_mme), ("p_AME", &self.p_ame)]
            .into_iter()
            .filter_map(|(n, v)| v.as_ref().map(|v| (n, v)))
            .collect();
        let mut out = String::from("t");
        for (n, _) in &cols {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t:.12e}");
            for (_, v) in &cols {
                let _ = write!(out, ",{:.15e}", v[i]);
            }
            out.push('\n');
        }
        out
    }
}

fn tracked(result: &EvolutionResult, level: usize) -> Vec<f64> {
    result.populations[level].clone()
}

/// Exact-bath run and its decoupled reference on the same grid.
pub struct ExactRun {
    pub coupled: MpsEvolution,
    pub reference: MpsEvolution,
    pub chain_len: usize,
}

/// Run the system + chain and the same stepper with the system alone.
/// Differencing the two cancels the integrator's own error in the bath
/// effect.
pub fn run_exact(point: &PointSpec, solver: &SolverSettings) -> Result<ExactRun> {
    let m = solver
        .chain_len
        .unwrap_or_else(|| light_cone_length(point.bath.cutoff, point.duration, solver.light_cone_factor));
    let chain = chain_for(&point.bath, 1.0, m).context(|| format!("mapping a chain of {m} sites"))?;
    let mut opts = EvolveOptions::new(point.dt);
    opts.record_every = point.record_every;
    opts.policy = solver.policy();
    opts.stepper = solver.stepper;
    opts.reflection_threshold = solver.reflection_threshold;
    let dim = point.model.system.dim();
    let mut psi = vec![ZERO; dim];
    psi[point.initial_level] = ONE;
    let d = solver.fock_dim;
    let coupled = {
        let model = ChainModel::new(&point.model, chain, d)?;
        let mut state = init_state(&psi, m, d)?;
        evolve(&mut state, &model, 0.0, point.duration, &opts)?
    };
    let reference = {
        let model = ChainModel::new(&point.model, analytic_flat_coefficients(1, point.bath.cutoff, 0.0)?, d)?;
        let mut state = init_state(&psi, 1, d)?;
        evolve(&mut state, &model, 0.0, point.duration, &opts)?
    };
    Ok(ExactRun { coupled, reference, chain_len: m })
}

/// Run every requested mode for one point.
pub fn run_point(cfg: &ExperimentConfig, point: &PointSpec) -> Result<(ErrorReport, PointSeries)> {
    let opts = MasterOptions { include_lamb_shift: cfg.solver.include_lamb_shift, ..Default::default() };
    let level = point.tracked_level;
    let rho0 = DensityMatrix::level(point.model.system.dim(), point.initial_level)?;
    let want_me = cfg.needs(Mode::Mme) || cfg.needs(Mode::Ame);
    let want_h = cfg.needs(Mode::H) || want_me || cfg.needs(Mode::Exact);
    let (t0, t1, dt, every) = (0.0, point.duration, point.dt, point.record_every);
    step_count(t0, t1, dt)?;

    let mut series = PointSeries::default();
    let mut grid: Option<Vec<f64>> = None;
    let mut align = |times: &[f64]| -> Result<()> {
        match &grid {
            Some(g) => check_aligned(g, times),
            None => {
                grid = Some(times.to_vec());
                Ok(())
            }
        }
    };
    if want_h {
        let r = integrate(&Unitary::new(&point.model), &rho0, t0, t1, dt, every).context(|| "H mode".into())?;
        align(&r.times)?;
        series.p_h = Some(tracked(&r, level));
    }
    if cfg.needs(Mode::Mme) {
        let gen = Mme::new(&point.model, &point.bath, &opts)?;
        let r = integrate(&gen, &rho0, t0, t1, dt, every).context(|| "MME mode".into())?;
        align(&r.times)?;
        series.p_mme = Some(tracked(&r, level));
    }
    if cfg.needs(Mode::Ame) {
        let gen = Ame::new(&point.model, &point.bath, &opts)?;
        let r = integrate(&gen, &rho0, t0, t1, dt, every).context(|| "AME mode".into())?;
        align(&r.times)?;
        series.p_ame = Some(tracked(&r, level));
    }
    let mut meta = PointMeta {
        omega: point.omega,
        gamma: point.gamma,
        cutoff: point.bath.cutoff,
        lamb_shift: if point.gamma > 0.0 { lamb_shift(point.gamma, point.omega, &point.bath)? } else { 0.0 },
        rabi_mean_abs: point.rabi_mean_abs,
        rabi_rms: point.rabi_rms,
        dt,
        steps: point.steps,
        ..Default::default()
    };
    let mut flags = Vec::new();
    let mut delta0 = None;
    if cfg.needs(Mode::Exact) {
        let run = run_exact(point, &cfg.solver).context(|| "EXACT mode".into())?;
        align(&run.coupled.times)?;
        align(&run.reference.times)?;
        let p_exact = &run.coupled.populations[level];
        let p_ref = &run.reference.populations[level];
        delta0 = Some(effect_integral(p_ref, p_exact, &run.coupled.times)?);
        let p_h = series.p_h.as_ref().expect("H runs alongside EXACT");
        series.p_exact = Some(p_h.iter().zip(p_exact).zip(p_ref).map(|((h, e), r)| h + (e - r)).collect());
        meta.chain_len = Some(run.chain_len);
        meta.max_bond_dim = Some(run.coupled.max_bond_dim);
        meta.discarded_weight = Some(run.coupled.discarded_weight);
        meta.max_tail_occupation = Some(run.coupled.max_tail_occupation);
        meta.max_top_fock = Some(run.coupled.max_top_fock);
        meta.max_norm_correction = Some(run.coupled.max_norm_correction.max(run.reference.max_norm_correction));
        flags.extend(run.coupled.flags.iter().cloned());
    } else if point.gamma == 0.0 {
        // without coupling the exact evolution is the Hamiltonian one
        delta0 = Some(0.0);
    }
    series.times = grid.unwrap_or_default();
    let me = |p: &Option<Vec<f64>>| -> Result<Option<MeReport>> {
        match (p, &series.p_h) {
            (Some(p), Some(h)) => {
                let delta1 = effect_integral(h, p, &series.times)?;
                let epsilon = delta0.map_or(RelativeError::Undefined, |d0| relative_error(delta1, d0));
                Ok(Some(MeReport { delta1, epsilon }))
            }
            _ => Ok(None),
        }
    };
    let mme = me(&series.p_mme)?;
    let ame = me(&series.p_ame)?;
    if [&mme, &ame].iter().any(|r| r.as_ref().is_some_and(|r| !r.epsilon.is_defined())) {
        flags.push("epsilon_undefined".into());
    }
    let report = ErrorReport {
        axis_value: point.axis_value,
        sample_seed: point.sample_seed,
        duration: point.duration,
        delta0,
        mme,
        ame,
        flags,
        meta,
    };
    Ok((report, series))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub axis_value: Option<f64>,
    pub mode: Mode,
    /// Samples with a defined relative error.
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub mean_plus_2sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub experiment_id: String,
    pub config_hash: String,
    pub settings_hash: String,
    pub config: ExperimentConfig,
    pub reports: Vec<ErrorReport>,
    pub stats: Vec<EnsembleStats>,
}

impl SweepResult {
    pub fn flags(&self) -> Vec<String> {
        let mut all: Vec<String> = self.reports.iter().flat_map(|r| r.flags.iter().cloned()).collect();
        all.sort();
        all.dedup();
        all
    }
}

/// Mean and `mean + 2σ` of ε over samples, per axis value and mode.
pub fn ensemble_stats(reports: &[ErrorReport]) -> Vec<EnsembleStats> {
    let mut values: Vec<Option<f64>> = Vec::new();
    for r in reports {
        if !values.iter().any(|v| v.map(f64::to_bits) == r.axis_value.map(f64::to_bits)) {
            values.push(r.axis_value);
        }
    }
    let mut out = Vec::new();
    for v in values {
        for mode in [Mode::Mme, Mode::Ame] {
            let eps: Vec<f64> = reports
                .iter()
                .filter(|r| r.axis_value.map(f64::to_bits) == v.map(f64::to_bits))
                .filter_map(|r| r.me(mode).and_then(|m| m.epsilon.value()))
                .collect();
            let present = reports.iter().any(|r| r.me(mode).is_some());
            if !present {
                continue;
            }
            let (mean, std) = if eps.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&eps) };
            out.push(EnsembleStats { axis_value: v, mode, n: eps.len(), mean, std, mean_plus_2sd: mean + 2.0 * std });
        }
    }
    out
}

/// Run every point of `cfg` (in parallel) and collect results in order.
pub fn run(cfg: &ExperimentConfig) -> Result<(SweepResult, Vec<PointSeries>)> {
    cfg.validate()?;
    let points = cfg.points();
    let results: Vec<Result<(ErrorReport, PointSeries)>> = points
        .par_iter()
        .map(|&(v, seed)| {
            let label = || format!("point axis={} seed={seed}", v.map_or("-".to_string(), |v| format!("{v}")));
            let p = resolve_point(cfg, v, seed).context(label)?;
            run_point(cfg, &p).context(label)
        })
        .collect();
    let mut reports = Vec::with_capacity(points.len());
    let mut series = Vec::with_capacity(points.len());
    for r in results {
        let (rep, s) = r?;
        reports.push(rep);
        series.push(s);
    }
    let stats = ensemble_stats(&reports);
    Ok((
        SweepResult {
            experiment_id: cfg.experiment_id(),
            config_hash: cfg.hash(),
            settings_hash: cfg.solver.hash(),
            config: cfg.clone(),
            reports,
            stats,
        },
        series,
    ))
}

pub const LEDGER_HEADER: &str = "experiment_id,axis,sample_seed,mode,epsilon,delta0,delta1,settings_hash,flags";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.12e}"))
}

/// Ledger rows: one per master-equation mode and point (one row with mode
/// `-` for points without a master equation).
pub fn ledger_rows(result: &SweepResult) -> Vec<String> {
    let mut rows = Vec::new();
    for r in &result.reports {
        let modes: Vec<Mode> = [Mode::Mme, Mode::Ame].into_iter().filter(|m| r.me(*m).is_some()).collect();
        let base = |mode: &str, eps: String, d1: Option<f64>| {
            format!(
                "{},{},{},{mode},{eps},{},{},{},{}",
                result.experiment_id,
                fmt_opt(r.axis_value),
                r.sample_seed,
                fmt_opt(r.delta0),
                fmt_opt(d1),
                result.settings_hash,
                r.flags.join(";")
            )
        };
        if modes.is_empty() {
            rows.push(base("-", "undefined".into(), None));
        }
        for m in modes {
            let me = r.me(m).expect("filtered above");
            let eps = me.epsilon.value().map_or("undefined".to_string(), |e| format!("{e:.12e}"));
            rows.push(base(m.label(), eps, Some(me.delta1)));
        }
    }
    rows
}

pub fn ledger_csv(result: &SweepResult) -> String {
    let mut out = String::from(LEDGER_HEADER);
    out.push('\n');
    for row in ledger_rows(result) {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Append rows to the ledger, creating it with a header; the new file
/// replaces the old one by rename so readers never see a partial write.
pub fn append_ledger(path: &Path, rows: &[String]) -> Result<()> {
    let mut text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => format!("{LEDGER_HEADER}\n"),
        Err(e) => return Err(e.into()),
    };
    if !text.starts_with(LEDGER_HEADER) {
        return Err(Error::InvalidInput(format!("{} is not a ledger", path.display())));
    }
    if !text.ends_with('\n') {
        text.push('\n');
    }
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    let tmp = path.with_extension("csv.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Write the ledger rows, the JSON result and per-point series into `dir`.
pub fn emit(result: &SweepResult, series: &[PointSeries], dir: &Path, formats: &[OutputFormat]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if formats.contains(&OutputFormat::Csv) {
        let ledger = dir.join("ledger.csv");
        append_ledger(&ledger, &ledger_rows(result))?;
        written.push(ledger);
        let sdir = dir.join("series");
        std::fs::create_dir_all(&sdir)?;
        for (i, s) in series.iter().enumerate() {
            let p = sdir.join(format!("{}_{i:03}.csv", result.experiment_id));
            std::fs::write(&p, s.to_csv())?;
            written.push(p);
        }
    }
    if formats.contains(&OutputFormat::Json) {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or_default();
        let doc = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "created_unix": stamp,
            "result": result,
        });
        let p = dir.join(format!("{}.json", result.experiment_id));
        std::fs::write(&p, serde_json::to_string_pretty(&doc)?)?;
        written.push(p);
    }
    Ok(written)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `ω = 8π`, `Δ = (2π/ω)/2000`, light-cone chain.
    #[default]
    Desk,
    /// `Δ = (2π/ω)/32000`; long running.
    Paper,
    /// Tiny sweep for plumbing checks: short chain, coarse steps.
    Smoke,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            "smoke" => Ok(Profile::Smoke),
            _ => Err(Error::Config(format!("unknown profile '{s}'"))),
        }
    }

    pub fn base_omega(self) -> f64 {
        8.0 * PI
    }

    pub fn solver(self) -> SolverSettings {
        match self {
            Profile::Desk => SolverSettings::default(),
            Profile::Paper => SolverSettings { steps_per_period: 32000.0, ..Default::default() },
            Profile::Smoke => SolverSettings {
                steps_per_period: 200.0,
                chi_max: 16,
                chain_len: Some(40),
                records: 100,
                ..Default::default()
            },
        }
    }
}

fn base_config(name: &str, profile: Profile, omega: f64, duration: DurationPolicy) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        system: SystemConfig::Qubit { omega },
        bath: BathConfig { cutoff_ratio: 10.0, cutoff: None, gamma: 1e-3 },
        drives: Vec::new(),
        frequency_modulation: None,
        initial_level: None,
        tracked_level: None,
        duration,
        axis: Axis::None,
        axis_values: Vec::new(),
        samples: 1,
        seed: 0,
        solver: profile.solver(),
        modes: Mode::ALL.to_vec(),
        output_dir: None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fig3Duration {
    /// `T = 2π/Ω_min` for every point.
    Fixed,
    /// `T = 2π/Ω`.
    InverseRabi,
}

/// Constant resonant drive swept over `Ω/ω`.
pub fn preset_fig3(profile: Profile, ratios: &[f64], duration: Fig3Duration) -> Result<ExperimentConfig> {
    let omega = profile.base_omega();
    if ratios.is_empty() || ratios.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Config("fig3 needs positive Rabi ratios".into()));
    }
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let policy = match duration {
        Fig3Duration::Fixed => DurationPolicy::Fixed { duration: 2.0 * PI / (min * omega) },
        Fig3Duration::InverseRabi => DurationPolicy::InverseRabi,
    };
    let mut cfg = base_config("fig3", profile, omega, policy);
    cfg.drives = vec![DriveConfig { transition: 0, omega_d: None, control: ControlConfig::Constant { rabi: min * omega } }];
    cfg.axis = Axis::Rabi;
    cfg.axis_values = ratios.iter().map(|r| r * omega).collect();
    Ok(cfg)
}

pub fn fig3_default_ratios(profile: Profile) -> Vec<f64> {
    match profile {
        Profile::Smoke => vec![1.0 / 8.0],
        _ => vec![1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0],
    }
}

/// `K = 20` Fourier samples of bandwidth `ω_w`, scaled over RMS ratios.
pub fn preset_fig4(profile: Profile, bandwidth_ratio: f64, samples: usize, seed: u64) -> Result<ExperimentConfig> {
    let omega = profile.base_omega();
    let terms = 20;
    let mut cfg = base_config("fig4", profile, omega, DurationPolicy::InverseRms);
    cfg.drives = vec![DriveConfig {
        transition: 0,
        omega_d: None,
        control: ControlConfig::Fourier { terms, base_freq: bandwidth_ratio * omega / terms as f64, rms: None },
    }];
    cfg.axis = Axis::RmsRabi;
    cfg.axis_values = match profile {
        Profile::Smoke => vec![omega / 4.0],
        _ => [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0].iter().map(|r| r * omega).collect(),
    };
    cfg.samples = samples;
    cfg.seed = seed;
    Ok(cfg)
}

/// Fixed seeded switching protocol, swept over the transition frequency
/// `ω ∈ [ω0, 4ω0]`; optionally with a second transition at `ω0/2`.
pub fn preset_fig6(profile: Profile, v_system: bool, seed: u64) -> Result<ExperimentConfig> {
    let omega0 = profile.base_omega() / 4.0;
    let mut cfg = base_config("fig6", profile, omega0, DurationPolicy::Protocol);
    if v_system {
        cfg.name = "fig6v".into();
        cfg.system = SystemConfig::VSystem { omega: omega0, omega2: omega0 / 2.0 };
    }
    cfg.drives = vec![DriveConfig {
        transition: 0,
        omega_d: None,
        control: ControlConfig::Switching {
            segments: 6,
            mean_rabi: omega0 / 2.3,
            switching_rate: 0.75 * omega0 / (2.0 * PI),
            ramp: 0.0,
        },
    }];
    cfg.axis = Axis::SystemFrequency;
    cfg.axis_values = match profile {
        Profile::Smoke => vec![omega0],
        _ => vec![omega0, 2.0 * omega0, 4.0 * omega0],
    };
    cfg.seed = seed;
    Ok(cfg)
}

/// Switching-time scan `τ = 2π/(2ⁿ ω0)` for the fig6 inset.
pub fn preset_fig6_inset(profile: Profile, v_system: bool, seed: u64) -> Result<ExperimentConfig> {
    let mut cfg = preset_fig6(profile, v_system, seed)?;
    let omega0 = cfg.system.omega();
    cfg.name = format!("{}-tau", cfg.name);
    cfg.axis = Axis::SwitchTime;
    cfg.axis_values = (1..=8).map(|n| 2.0 * PI / (f64::powi(2.0, n) * omega0)).collect();
    Ok(cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fig7Variant {
    /// Band-modulated transition frequency, swept over its centre.
    CenterSweep,
    /// Single-tone modulation, swept over the tone.
    SingleFreqMod,
    /// Constant `Ω = ω0/4`, swept over the drive frequency.
    DriveDetuning,
}

pub fn preset_fig7(profile: Profile, variant: Fig7Variant, seed: u64) -> Result<ExperimentConfig> {
    let omega0 = profile.base_omega();
    let smoke = profile == Profile::Smoke;
    let mut cfg = base_config("fig7", profile, omega0, DurationPolicy::InverseRabi);
    cfg.bath.cutoff = Some(10.0 * omega0);
    cfg.seed = seed;
    let weak = ControlConfig::Constant { rabi: omega0 / 32.0 };
    match variant {
        Fig7Variant::CenterSweep => {
            cfg.name = "fig7a".into();
            cfg.drives = vec![DriveConfig { transition: 0, omega_d: Some(omega0), control: weak }];
            cfg.frequency_modulation = Some(FreqModConfig::Band {
                transition: 0,
                mod_center: omega0 / 2.0,
                bandwidth: omega0 / 2.0,
                half_terms: 10,
                rms: omega0 / 60.0,
            });
            cfg.axis = Axis::SystemFrequency;
            cfg.axis_values = if smoke { vec![omega0] } else { [0.9, 0.95, 1.0, 1.05, 1.1].iter().map(|r| r * omega0).collect() };
        }
        Fig7Variant::SingleFreqMod => {
            cfg.name = "fig7b".into();
            cfg.drives = vec![DriveConfig { transition: 0, omega_d: Some(omega0), control: weak }];
            cfg.frequency_modulation =
                Some(FreqModConfig::SingleTone { transition: 0, mod_freq: omega0, amplitude: omega0 / 32.0 });
            cfg.axis = Axis::ModulationFrequency;
            cfg.axis_values = if smoke { vec![omega0] } else { (-8..=1).map(|k| f64::powi(2.0, k) * omega0).collect() };
        }
        Fig7Variant::DriveDetuning => {
            cfg.name = "fig7c".into();
            cfg.drives =
                vec![DriveConfig { transition: 0, omega_d: None, control: ControlConfig::Constant { rabi: omega0 / 4.0 } }];
            cfg.axis = Axis::DriveFrequency;
            cfg.axis_values = if smoke { vec![omega0] } else { [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|r| r * omega0).collect() };
        }
    }
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub dts: Vec<f64>,
    /// `|ρ(Δ_k) - ρ(Δ_{k+1})|_F` at the end of the window, indexed by the
    /// coarser step.
    pub differences: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub window: f64,
}

fn final_system_density(run: &MpsEvolution) -> Result<crate::CMat> {
    let state = run.final_state.as_ref().ok_or_else(|| Error::Mps("run kept no final state".into()))?;
    Ok(crate::mps::reduced_system_density(state)?.into_matrix())
}

/// Exact-mode runs over `window_steps` coarse steps at `Δ, Δ/2, ...`; the
/// successive differences of the final system state are fitted against `Δ`.
pub fn convergence_study(cfg: &ExperimentConfig, n_halvings: usize, window_steps: usize) -> Result<ConvergenceReport> {
    if n_halvings < 3 {
        return Err(Error::Config("a slope fit needs at least 3 halvings".into()));
    }
    let (v, seed) = cfg.points()[0];
    let point = resolve_point(cfg, v, seed)?;
    let window = point.dt * window_steps as f64;
    let mut dts = Vec::new();
    let mut states = Vec::new();
    for k in 0..=n_halvings {
        let mut p = point.clone();
        p.dt = point.dt / f64::powi(2.0, k as i32);
        p.duration = window;
        p.record_every = usize::MAX / 2;
        let mut solver = cfg.solver.clone();
        solver.chain_len = Some(solver.chain_len.unwrap_or_else(|| {
            light_cone_length(point.bath.cutoff, point.duration, solver.light_cone_factor)
        }));
        let run = run_exact(&p, &solver)?;
        dts.push(p.dt);
        states.push(final_system_density(&run.coupled)?);
    }
    let differences: Vec<f64> = states.windows(2).map(|w| fro(&(&w[0] - &w[1]))).collect();
    let fit = crate::metrics::loglog_slope(&dts[..n_halvings], &differences)?;
    Ok(ConvergenceReport {
        dts,
        differences,
        slope: fit.slope,
        intercept: fit.intercept,
        residual: fit.residual,
        window,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FockReport {
    pub max_top_fock: f64,
    /// Largest change of the tracked population between `d` and `d + 1`.
    pub shift: f64,
}

/// Compare the exact run of the first point at `fock_dim` and `fock_dim + 1`.
pub fn fock_truncation_check(cfg: &ExperimentConfig) -> Result<FockReport> {
    let (v, seed) = cfg.points()[0];
    let point = resolve_point(cfg, v, seed)?;
    let lo = run_exact(&point, &cfg.solver)?;
    let mut solver = cfg.solver.clone();
    solver.fock_dim += 1;
    let hi = run_exact(&point, &solver)?;
    let level = point.tracked_level;
    let shift = lo.coupled.populations[level]
        .iter()
        .zip(&hi.coupled.populations[level])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(FockReport { max_top_fock: lo.coupled.max_top_fock, shift })
}

/// Excited-state amplitude helper for tests and tools: `|k⟩` in `dim` levels.
pub fn basis_state(dim: usize, k: usize) -> Vec<C64> {
    let mut v = vec![ZERO; dim];
    v[k] = ONE;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = preset_fig3(Profile::Smoke, &[0.25], Fig3Duration::InverseRabi).unwrap();
        cfg.solver.chain_len = Some(6);
        cfg.solver.steps_per_period = 100.0;
        cfg
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(Mode::parse_list("mme,H,EXACT,H").unwrap(), vec![Mode::H, Mode::Mme, Mode::Exact]);
        assert!(Mode::parse("RWA").is_err());
        assert_eq!(serde_json::to_string(&Mode::Mme).unwrap(), "\"MME\"");
    }

    #[test]
    fn config_json_roundtrip_is_idempotent() {
        for cfg in [
            preset_fig3(Profile::Desk, &fig3_default_ratios(Profile::Desk), Fig3Duration::Fixed).unwrap(),
            preset_fig4(Profile::Desk, 1.0 / 8.0, 28, 7).unwrap(),
            preset_fig6(Profile::Desk, true, 3).unwrap(),
            preset_fig7(Profile::Desk, Fig7Variant::CenterSweep, 1).unwrap(),
        ] {
            cfg.validate().unwrap();
            let json = cfg.to_json();
            let back = ExperimentConfig::from_json(&json).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_json(), json);
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = tiny();
        cfg.bath.cutoff = Some(cfg.system.omega() / 2.0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = tiny();
        cfg.modes.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny();
        cfg.schema_version = 99;
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_json("{\"name\": 3}").is_err());
    }

    #[test]
    fn settings_change_the_experiment_id() {
        let a = tiny();
        let mut b = tiny();
        b.solver.chi_max = 8;
        assert_ne!(a.experiment_id(), b.experiment_id());
        assert_ne!(a.solver.hash(), b.solver.hash());
    }

    #[test]
    fn point_resolution() {
        let cfg = preset_fig4(Profile::Desk, 1.0 / 8.0, 2, 5).unwrap();
        let omega = cfg.system.omega();
        let p = resolve_point(&cfg, Some(omega / 8.0), 5).unwrap();
        assert!((p.duration - 2.0 * PI / (omega / 8.0)).abs() < 1e-12);
        assert!((p.rabi_rms / (omega / 8.0) - 1.0).abs() < 1e-6);
        assert_eq!(step_count(0.0, p.duration, p.dt).unwrap(), p.steps);
        assert!(p.dt <= 2.0 * PI / omega / 2000.0 + 1e-15);
        assert_eq!(p.tracked_level, 1);
        let q = resolve_point(&cfg, Some(omega / 4.0), 5).unwrap();
        // same sample, rescaled
        let (a, b) = (&p.model.drives[0].rabi, &q.model.drives[0].rabi);
        let r1 = b.eval(0.123) / a.eval(0.123);
        let r2 = b.eval(0.456) / a.eval(0.456);
        assert!((r1 - r2).abs() < 1e-9 * r1.abs(), "{r1} {r2}");
    }

    #[test]
    fn zero_damping_gives_undefined_epsilon() {
        let mut cfg = tiny();
        cfg.bath.gamma = 0.0;
        cfg.modes = vec![Mode::H, Mode::Mme];
        let (res, _) = run(&cfg).unwrap();
        let r = &res.reports[0];
        assert_eq!(r.delta0, Some(0.0));
        assert_eq!(r.mme.as_ref().unwrap().epsilon, RelativeError::Undefined);
        assert!(ledger_csv(&res).lines().nth(1).unwrap().contains(",MME,undefined,"));
    }

    #[test]
    fn smoke_point_runs_all_modes() {
        let cfg = tiny();
        let (res, series) = run(&cfg).unwrap();
        let r = &res.reports[0];
        assert!(r.delta0.unwrap() > 0.0);
        assert!(r.mme.as_ref().unwrap().epsilon.is_defined());
        assert!(r.ame.as_ref().unwrap().epsilon.is_defined());
        assert!(r.flags.contains(&"light_cone_short".to_string()));
        let s = &series[0];
        assert_eq!(s.times.len(), s.p_exact.as_ref().unwrap().len());
        assert_eq!(res.stats.len(), 2);
        assert!(s.to_csv().starts_with("t,p_H,p_EXACT,p_MME,p_AME\n"));
    }

    #[test]
    fn empty_sweep_ledger_is_header_only() {
        let res = SweepResult {
            experiment_id: "x-00000000".into(),
            config_hash: String::new(),
            settings_hash: String::new(),
            config: tiny(),
            reports: Vec::new(),
            stats: Vec::new(),
        };
        assert_eq!(ledger_csv(&res), format!("{LEDGER_HEADER}\n"));
    }

    #[test]
    fn ledger_append_keeps_single_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.csv");
        append_ledger(&path, &["a".into()]).unwrap();
        append_ledger(&path, &["b".into(), "c".into()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{LEDGER_HEADER}\na\nb\nc\n"));
        assert!(!path.with_extension("csv.tmp").exists());
        std::fs::write(&path, "junk\n").unwrap();
        assert!(append_ledger(&path, &["d".into()]).is_err());
    }

    #[test]
    fn ensemble_stats_recompute_from_rows() {
        let mk = |v: f64, eps: f64| ErrorReport {
            axis_value: Some(v),
            sample_seed: 0,
            duration: 1.0,
            delta0: Some(1.0),
            mme: Some(MeReport { delta1: 1.0 + eps, epsilon: RelativeError::Value(eps) }),
            ame: None,
            flags: Vec::new(),
            meta: PointMeta::default(),
        };
        let stats = ensemble_stats(&[mk(1.0, 0.1), mk(1.0, 0.3), mk(2.0, 0.5)]);
        assert_eq!(stats.len(), 2);
        assert!((stats[0].mean - 0.2).abs() < 1e-15);
        assert!((stats[0].mean_plus_2sd - (0.2 + 2.0 * 0.02f64.sqrt())).abs() < 1e-12);
        assert_eq!(stats[1].n, 1);
    }
}
