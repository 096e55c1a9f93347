//! Lindblad generators for the driven system and a fixed-step RK4 integrator.
//!
//! Three generators share one [`Generator`] interface:
//! [`Unitary`] (no bath), [`Mme`] (dissipators built from the bare
//! eigenbasis) and [`Ame`] (dissipators rebuilt from the instantaneous
//! eigenbasis of `H(t)` at every evaluation).

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    commutator, eigh, hermitian_part, hermiticity_defect, ket_bra, min_eigenvalue, trace, zeros, CMat, CVec, C64, I,
};
use crate::system::{damping_rate, lamb_shift, lowering_operator, upper_projector, BathSpec, DrivenSystem};

/// Trace tolerance for a valid density matrix.
pub const TRACE_TOL: f64 = 1e-10;
/// Most negative eigenvalue accepted for a valid density matrix.
pub const POSITIVITY_TOL: f64 = 1e-9;
/// Tilded transitions with smaller matrix elements are dropped.
pub const AME_COUPLING_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(CMat);

impl DensityMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::ShapeMismatch { expected: "square matrix".into(), got: format!("{}x{}", m.nrows(), m.ncols()) });
        }
        if hermiticity_defect(&m) > 1e-10 {
            return Err(Error::InvalidInput("density matrix is not Hermitian".into()));
        }
        let tr = trace(&m);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidInput(format!("density matrix trace {tr} is not 1")));
        }
        if min_eigenvalue(&m) < -POSITIVITY_TOL {
            return Err(Error::InvalidInput("density matrix has a negative eigenvalue".into()));
        }
        Ok(Self(m))
    }

    /// `|k⟩⟨k|`.
    pub fn level(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::IndexOutOfRange { index: k, dim });
        }
        Ok(Self(ket_bra(dim, k, k)))
    }

    pub fn pure(psi: &[C64]) -> Result<Self> {
        let v = CVec::from_column_slice(psi);
        let n = v.norm();
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!("state vector has norm {n}")));
        }
        Ok(Self(&v * v.adjoint()))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(CMat::identity(dim, dim).scale(1.0 / dim as f64))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub fn population(&self, level: usize) -> f64 {
        self.0[(level, level)].re
    }
}

/// A single `γ D[c]` term.
#[derive(Clone, Debug, PartialEq)]
pub struct LindbladTerm {
    pub rate: f64,
    pub operator: CMat,
}

impl LindbladTerm {
    pub fn new(rate: f64, operator: CMat) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::InvalidInput(format!("Lindblad rate {rate} must be finite and non-negative")));
        }
        Ok(Self { rate, operator })
    }
}

/// `D[c]ρ = cρc† - (c†cρ + ρc†c)/2`.
pub fn dissipator(c: &CMat, rho: &CMat) -> Result<CMat> {
    if c.shape() != rho.shape() || !c.is_square() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", rho.shape()),
            got: format!("{:?}", c.shape()),
        });
    }
    Ok(dissipator_unchecked(c, rho))
}

fn dissipator_unchecked(c: &CMat, rho: &CMat) -> CMat {
    let cd = c.adjoint();
    let cdc = &cd * c;
    c * rho * &cd - (&cdc * rho + rho * &cdc).scale(0.5)
}

fn lindblad_rhs(h: &CMat, terms: &[LindbladTerm], rho: &CMat) -> CMat {
    let mut out = commutator(h, rho) * (-I);
    for term in terms {
        if term.rate != 0.0 {
            out += dissipator_unchecked(&term.operator, rho).scale(term.rate);
        }
    }
    out
}

/// A (possibly time-dependent) Lindblad generator `ρ ↦ dρ/dt`.
pub trait Generator: Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, rho: &CMat) -> Result<CMat>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasterOptions {
    pub include_lamb_shift: bool,
    /// Minimum instantaneous level spacing for the AME, relative to the
    /// smallest bare transition frequency.
    pub degeneracy_tol: f64,
    /// Debug mode: multiply every AME eigenvector by a random phase drawn
    /// from this seed and the evaluation time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauge_seed: Option<u64>,
}

impl Default for MasterOptions {
    fn default() -> Self {
        Self { include_lamb_shift: true, degeneracy_tol: 1e-6, gauge_seed: None }
    }
}

/// Von Neumann evolution under `H(t)` alone.
pub struct Unitary<'a> {
    model: &'a DrivenSystem,
}

impl<'a> Unitary<'a> {
    pub fn new(model: &'a DrivenSystem) -> Self {
        Self { model }
    }
}

impl Generator for Unitary<'_> {
    fn dim(&self) -> usize {
        self.model.system.dim()
    }

    fn rhs(&self, t: f64, rho: &CMat) -> Result<CMat> {
        Ok(commutator(&self.model.hamiltonian(t)?, rho) * (-I))
    }
}

/// Markovian master equation with bare-basis dissipators and Lamb shifts.
pub struct Mme<'a> {
    model: &'a DrivenSystem,
    terms: Vec<LindbladTerm>,
    lamb: CMat,
}

impl<'a> Mme<'a> {
    pub fn new(model: &'a DrivenSystem, bath: &BathSpec, opts: &MasterOptions) -> Result<Self> {
        let sys = &model.system;
        let mut terms = Vec::with_capacity(sys.transitions().len());
        let mut lamb = zeros(sys.dim());
        for tr in sys.transitions() {
            let gamma = damping_rate(tr.g, bath, tr.frequency())?;
            terms.push(LindbladTerm::new(gamma, lowering_operator(sys, tr)?)?);
            if opts.include_lamb_shift {
                let shift = lamb_shift(gamma, tr.frequency(), bath)?;
                lamb += upper_projector(sys, tr).scale(shift);
            }
        }
        Ok(Self { model, terms, lamb })
    }

    pub fn terms(&self) -> &[LindbladTerm] {
        &self.terms
    }

    pub fn lamb_hamiltonian(&self) -> &CMat {
        &self.lamb
    }
}

impl Generator for Mme<'_> {
    fn dim(&self) -> usize {
        self.model.system.dim()
    }

    fn rhs(&self, t: f64, rho: &CMat) -> Result<CMat> {
        let h = self.model.hamiltonian(t)? + &self.lamb;
        Ok(lindblad_rhs(&h, &self.terms, rho))
    }
}

/// One-shot MME right-hand side.
pub fn mme_rhs(t: f64, rho: &CMat, model: &DrivenSystem, bath: &BathSpec, opts: &MasterOptions) -> Result<CMat> {
    if rho.shape() != (model.system.dim(), model.system.dim()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{0}x{0}", model.system.dim()),
            got: format!("{}x{}", rho.nrows(), rho.ncols()),
        });
    }
    Mme::new(model, bath, opts)?.rhs(t, rho)
}

/// A transition between two instantaneous eigenstates of `H(t)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TildedTransition {
    pub lower: usize,
    pub upper: usize,
    pub frequency: f64,
    pub g: C64,
    pub gamma: f64,
    pub lamb: f64,
}

/// Instantaneous eigenbasis of `H(t)` and the transitions built on it.
#[derive(Clone, Debug, PartialEq)]
pub struct AmeFrame {
    pub t: f64,
    pub energies: Vec<f64>,
    /// Eigenvectors as columns, in ascending energy order.
    pub vectors: CMat,
    pub transitions: Vec<TildedTransition>,
}

impl AmeFrame {
    fn eigvec(&self, j: usize) -> CVec {
        self.vectors.column(j).into_owned()
    }

    /// `|l̃⟩⟨k̃|` for tilded transition `n`.
    pub fn lowering(&self, n: usize) -> CMat {
        let tr = &self.transitions[n];
        self.eigvec(tr.lower) * self.eigvec(tr.upper).adjoint()
    }

    pub fn lindblad_terms(&self) -> Vec<LindbladTerm> {
        (0..self.transitions.len())
            .map(|n| LindbladTerm { rate: self.transitions[n].gamma, operator: self.lowering(n) })
            .collect()
    }

    /// `Σ Δ̃_n |k̃_n⟩⟨k̃_n|`.
    pub fn lamb_hamiltonian(&self) -> CMat {
        let dim = self.vectors.nrows();
        let mut out = zeros(dim);
        for tr in &self.transitions {
            if tr.lamb != 0.0 {
                let k = self.eigvec(tr.upper);
                out += (&k * k.adjoint()).scale(tr.lamb);
            }
        }
        out
    }

    /// Multiply eigenvector `j` by `phases[j]` and update the matrix elements.
    fn rephase(&mut self, phases: &[C64]) {
        for (j, &ph) in phases.iter().enumerate() {
            let mut col = self.vectors.column_mut(j);
            col *= ph;
        }
        for tr in &mut self.transitions {
            tr.g *= phases[tr.lower].conj() * phases[tr.upper];
        }
    }

    /// Largest component of every eigenvector made real and positive.
    pub fn canonical_gauge(&mut self) {
        let phases: Vec<C64> = (0..self.vectors.ncols())
            .map(|j| {
                let col = self.vectors.column(j);
                let big = col.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(C64::from(1.0));
                if big.norm() > 0.0 {
                    big.conj() / big.norm()
                } else {
                    C64::from(1.0)
                }
            })
            .collect();
        self.rephase(&phases);
    }

    /// Phases chosen so every eigenvector has a real, positive overlap with
    /// the corresponding eigenvector of `prev`.
    pub fn continuous_gauge(&mut self, prev: &AmeFrame) {
        let phases: Vec<C64> = (0..self.vectors.ncols())
            .map(|j| {
                let overlap = prev.vectors.column(j).dotc(&self.vectors.column(j));
                if overlap.norm() > 1e-8 {
                    overlap.conj() / overlap.norm()
                } else {
                    C64::from(1.0)
                }
            })
            .collect();
        self.rephase(&phases);
    }
}

fn reference_frequency(model: &DrivenSystem) -> f64 {
    let trs = model.system.transitions();
    if trs.is_empty() {
        let e = model.system.energies();
        e.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    } else {
        trs.iter().map(|t| t.frequency()).fold(f64::INFINITY, f64::min)
    }
}

/// Diagonalise `H(t)` and build the tilded transitions, in the canonical
/// gauge.
pub fn ame_frame(t: f64, model: &DrivenSystem, bath: &BathSpec, opts: &MasterOptions) -> Result<AmeFrame> {
    let h = model.hamiltonian(t)?;
    let (energies, vectors) = eigh(&h);
    let tol = opts.degeneracy_tol * reference_frequency(model);
    let gap = energies.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if gap <= tol {
        return Err(Error::DegenerateFrame { t, gap, tol });
    }
    let x = model.system.coupling_operator();
    let xv = &x * &vectors;
    let dim = energies.len();
    let mut transitions = Vec::new();
    for upper in 0..dim {
        for lower in 0..upper {
            let g = vectors.column(lower).dotc(&xv.column(upper));
            if g.norm() <= AME_COUPLING_FLOOR {
                continue;
            }
            let frequency = energies[upper] - energies[lower];
            let (gamma, lamb) = if frequency < bath.cutoff {
                let gamma = damping_rate(g.norm(), bath, frequency)?;
                let lamb = if opts.include_lamb_shift { lamb_shift(gamma, frequency, bath)? } else { 0.0 };
                (gamma, lamb)
            } else {
                (0.0, 0.0)
            };
            transitions.push(TildedTransition { lower, upper, frequency, g, gamma, lamb });
        }
    }
    let mut frame = AmeFrame { t, energies, vectors, transitions };
    frame.canonical_gauge();
    Ok(frame)
}

/// Produces a sequence of frames in the continuity gauge.
#[derive(Default)]
pub struct FrameTracker {
    prev: Option<AmeFrame>,
}

impl FrameTracker {
    pub fn next(&mut self, t: f64, model: &DrivenSystem, bath: &BathSpec, opts: &MasterOptions) -> Result<AmeFrame> {
        let mut frame = ame_frame(t, model, bath, opts)?;
        if let Some(prev) = &self.prev {
            frame.continuous_gauge(prev);
        }
        self.prev = Some(frame.clone());
        Ok(frame)
    }
}

/// Adiabatic master equation.
pub struct Ame<'a> {
    model: &'a DrivenSystem,
    bath: BathSpec,
    opts: MasterOptions,
}

impl<'a> Ame<'a> {
    pub fn new(model: &'a DrivenSystem, bath: &BathSpec, opts: &MasterOptions) -> Result<Self> {
        model.validate()?;
        Ok(Self { model, bath: bath.clone(), opts: opts.clone() })
    }
}

impl Generator for Ame<'_> {
    fn dim(&self) -> usize {
        self.model.system.dim()
    }

    fn rhs(&self, t: f64, rho: &CMat) -> Result<CMat> {
        let mut frame = ame_frame(t, self.model, &self.bath, &self.opts)?;
        if let Some(seed) = self.opts.gauge_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t.to_bits());
            let phases: Vec<C64> =
                (0..frame.energies.len()).map(|_| C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))).collect();
            frame.rephase(&phases);
        }
        let h = self.model.hamiltonian(t)? + frame.lamb_hamiltonian();
        Ok(lindblad_rhs(&h, &frame.lindblad_terms(), rho))
    }
}

/// One-shot AME right-hand side.
pub fn ame_rhs(t: f64, rho: &CMat, model: &DrivenSystem, bath: &BathSpec, opts: &MasterOptions) -> Result<CMat> {
    Ame::new(model, bath, opts)?.rhs(t, rho)
}

/// Sampled trajectory of an integration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    /// `populations[k][i]` is `⟨k|ρ(t_i)|k⟩`.
    pub populations: Vec<Vec<f64>>,
    pub traces: Vec<f64>,
    pub min_eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub final_state: CMat,
    /// Largest Hermiticity defect removed by the per-step symmetrisation.
    pub hermiticity_drift: f64,
}

impl EvolutionResult {
    /// Columns: `t`, `p_0 .. p_{d-1}`, `trace`, `min_eigenvalue`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for k in 0..self.populations.len() {
            let _ = write!(out, ",p_{k}");
        }
        out.push_str(",trace,min_eigenvalue\n");
        for (i, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t:.12e}");
            for p in &self.populations {
                let _ = write!(out, ",{:.15e}", p[i]);
            }
            let _ = writeln!(out, ",{:.15e},{:.6e}", self.traces[i], self.min_eigenvalues[i]);
        }
        out
    }
}

/// `⟨level|ρ(t)|level⟩` over the recorded grid.
pub fn excited_population(result: &EvolutionResult, level: usize) -> Result<Vec<f64>> {
    result
        .populations
        .get(level)
        .cloned()
        .ok_or(Error::IndexOutOfRange { index: level, dim: result.populations.len() })
}

/// Number of `dt` steps spanning `[t0, t1]`, or an error when `dt` does not
/// divide the span.
pub fn step_count(t0: f64, t1: f64, dt: f64) -> Result<usize> {
    let span = t1 - t0;
    if !(dt > 0.0) || !(span > 0.0) {
        return Err(Error::StepMismatch { dt, span });
    }
    let n = (span / dt).round();
    if n < 1.0 || (n * dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::StepMismatch { dt, span });
    }
    Ok(n as usize)
}

/// Classical fixed-step RK4 from `t0` to `t1`, recording every
/// `record_every` steps (and always the first and last point).
pub fn integrate<G: Generator + ?Sized>(
    generator: &G,
    rho0: &DensityMatrix,
    t0: f64,
    t1: f64,
    dt: f64,
    record_every: usize,
) -> Result<EvolutionResult> {
    let dim = generator.dim();
    if rho0.dim() != dim {
        return Err(Error::ShapeMismatch { expected: format!("{dim}x{dim}"), got: format!("{0}x{0}", rho0.dim()) });
    }
    let steps = step_count(t0, t1, dt)?;
    let record_every = record_every.max(1);
    let mut rho = rho0.matrix().clone();
    let mut out = EvolutionResult {
        times: Vec::new(),
        populations: vec![Vec::new(); dim],
        traces: Vec::new(),
        min_eigenvalues: Vec::new(),
        final_state: rho.clone(),
        hermiticity_drift: 0.0,
    };
    let record = |out: &mut EvolutionResult, t: f64, rho: &CMat| {
        out.times.push(t);
        for k in 0..dim {
            out.populations[k].push(rho[(k, k)].re);
        }
        out.traces.push(trace(rho).re);
        out.min_eigenvalues.push(min_eigenvalue(rho));
    };
    record(&mut out, t0, &rho);
    for step in 0..steps {
        let t = t0 + step as f64 * dt;
        let k1 = generator.rhs(t, &rho)?;
        let k2 = generator.rhs(t + 0.5 * dt, &(&rho + k1.scale(0.5 * dt)))?;
        let k3 = generator.rhs(t + 0.5 * dt, &(&rho + k2.scale(0.5 * dt)))?;
        let k4 = generator.rhs(t + dt, &(&rho + k3.scale(dt)))?;
        rho += (k1 + (k2 + k3).scale(2.0) + k4).scale(dt / 6.0);
        out.hermiticity_drift = out.hermiticity_drift.max(hermiticity_defect(&rho));
        rho = hermitian_part(&rho);
        let tr = trace(&rho).re;
        if !rho.iter().all(|z| z.re.is_finite() && z.im.is_finite()) || (tr - 1.0).abs() > 1e-3 {
            return Err(Error::Divergence { t: t + dt, reason: format!("trace {tr}") });
        }
        let done = step + 1;
        if done % record_every == 0 || done == steps {
            record(&mut out, t0 + done as f64 * dt, &rho);
        }
    }
    out.final_state = rho;
    Ok(out)
}
