//! Matrix product state of the system plus its oscillator chain.
//!
//! Site 0 carries the system, sites `1..=M` the chain oscillators truncated
//! to `d` Fock levels. Nearest-neighbour bonds are split into part A
//! (`(0,1), (2,3), ...`) and part B (`(1,2), (3,4), ...`). Only the
//! system bond `(0,1)` is time dependent; every other bond gate is a fixed
//! exponential. One step is
//!
//! ```text
//! x(t+Δ) = P2 · e^{ΔB} · P1,
//! P1 = 1 + ΔA1/2 + Δ²A2A1/8,   P2 = 1 + ΔA2/2 + Δ²A2A1/8,
//! ```
//!
//! with `A1 = A(t)`, `A2 = A(t+Δ)` the system-bond generators; constant
//! A bonds get `e^{ΔA/2}` on both sides of `e^{ΔB}`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chain::ChainCoefficients;
use crate::error::{Error, Result};
use crate::linalg::{annihilation, dagger, expm_hermitian, identity, kron, number_op, zeros, CMat, C64, I, ONE, ZERO};
use crate::master::{step_count, DensityMatrix};
use crate::system::DrivenSystem;

pub const DEFAULT_FOCK_DIM: usize = 3;
pub const DEFAULT_REFLECTION_THRESHOLD: f64 = 1e-6;
pub const REFLECTION_SITES: usize = 5;

/// Rank-3 tensor `(left bond, physical, right bond)`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    pub l: usize,
    pub p: usize,
    pub r: usize,
    pub data: Vec<C64>,
}

impl Tensor3 {
    pub fn zeros(l: usize, p: usize, r: usize) -> Self {
        Self { l, p, r, data: vec![ZERO; l * p * r] }
    }

    #[inline]
    pub fn idx(&self, a: usize, s: usize, b: usize) -> usize {
        (a * self.p + s) * self.r + b
    }

    pub fn get(&self, a: usize, s: usize, b: usize) -> C64 {
        self.data[self.idx(a, s, b)]
    }

    /// `(l p) x r` matrix.
    fn left_matrix(&self) -> CMat {
        DMatrix::from_row_slice(self.l * self.p, self.r, &self.data)
    }

    /// `l x (p r)` matrix.
    fn right_matrix(&self) -> CMat {
        DMatrix::from_row_slice(self.l, self.p * self.r, &self.data)
    }

    fn from_matrix(m: &CMat, l: usize, p: usize, r: usize) -> Self {
        debug_assert_eq!(m.nrows() * m.ncols(), l * p * r);
        let cols = m.ncols();
        let mut data = Vec::with_capacity(l * p * r);
        for i in 0..m.nrows() {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self { l, p, r, data }
    }

    /// Physical slice `s` as an `l x r` matrix.
    fn slice(&self, s: usize) -> CMat {
        DMatrix::from_fn(self.l, self.r, |a, b| self.get(a, s, b))
    }

    fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    fn scale(&mut self, f: f64) {
        for z in &mut self.data {
            *z *= f;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub chi_max: usize,
    /// Singular values below `svd_cutoff * s_max` are dropped.
    pub svd_cutoff: f64,
    /// Accumulated discarded weight that aborts a run.
    pub abort_weight: f64,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self { chi_max: 64, svd_cutoff: 1e-10, abort_weight: 1e-3 }
    }
}

impl TruncationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.chi_max < 1 {
            return Err(Error::InvalidInput("chi_max must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.svd_cutoff) {
            return Err(Error::InvalidInput(format!("svd cutoff {} outside [0, 1)", self.svd_cutoff)));
        }
        if !(self.abort_weight > 0.0) {
            return Err(Error::InvalidInput("abort weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpsState {
    pub tensors: Vec<Tensor3>,
    pub center: usize,
    /// Sum of relative discarded weights over all truncations.
    pub discarded_weight: f64,
}

/// Product state `|ψ_sys⟩ ⊗ |0⟩^M`.
pub fn init_state(sys_state: &[C64], chain_len: usize, d: usize) -> Result<MpsState> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("oscillator truncation d = {d} must be at least 2")));
    }
    if sys_state.is_empty() {
        return Err(Error::InvalidInput("empty system state".into()));
    }
    let norm: f64 = sys_state.iter().map(|z| z.norm_sqr()).sum::<f64>();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!("system state has norm² {norm}")));
    }
    let mut tensors = Vec::with_capacity(chain_len + 1);
    tensors.push(Tensor3 { l: 1, p: sys_state.len(), r: 1, data: sys_state.to_vec() });
    for _ in 0..chain_len {
        let mut t = Tensor3::zeros(1, d, 1);
        t.data[0] = ONE;
        tensors.push(t);
    }
    Ok(MpsState { tensors, center: 0, discarded_weight: 0.0 })
}

/// Reconstruction tolerance of [`checked_svd`], relative to `|M|_F`.
const SVD_TOL: f64 = 1e-10;

/// Thin SVD `M = U diag(s) V†` with `s` sorted descending, verified by
/// reconstruction. nalgebra's complex SVD returns wrong factors for some
/// small wide matrices, so faer is used here.
pub fn checked_svd(m: &CMat) -> Result<(CMat, Vec<f64>, CMat)> {
    let fm = faer::Mat::<faer::c64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = fm.thin_svd().map_err(|e| Error::Mps(format!("SVD failed: {e:?}")))?;
    let (fu, fv, fs) = (svd.U(), svd.V(), svd.S().column_vector());
    let k = fs.nrows();
    let s: Vec<f64> = (0..k).map(|i| fs[i].re).collect();
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::Mps("non-finite singular values".into()));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let u = DMatrix::from_fn(m.nrows(), k, |i, c| fu[(i, order[c])]);
    let vt = DMatrix::from_fn(k, m.ncols(), |c, j| fv[(j, order[c])].conj());
    let sv: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let mut rec = u.clone();
    for (c, x) in sv.iter().enumerate() {
        rec.column_mut(c).scale_mut(*x);
    }
    let err = (rec * &vt - m).norm() / m.norm().max(f64::MIN_POSITIVE);
    if err > SVD_TOL {
        return Err(Error::Mps(format!("SVD of {}x{} matrix inaccurate ({err:e})", m.nrows(), m.ncols())));
    }
    Ok((u, sv, vt))
}

/// Relative weight discarded by one SVD truncation, and the kept rank.
fn truncation_rank(sv: &[f64], policy: &TruncationPolicy) -> (usize, f64) {
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let smax = sv.first().copied().unwrap_or(0.0);
    if total == 0.0 {
        return (1, 0.0);
    }
    let mut keep = sv.iter().take_while(|&&s| s > policy.svd_cutoff * smax).count();
    keep = keep.clamp(1, policy.chi_max);
    let dropped: f64 = sv[keep..].iter().map(|s| s * s).sum();
    (keep, dropped / total)
}

impl MpsState {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn phys_dims(&self) -> Vec<usize> {
        self.tensors.iter().map(|t| t.p).collect()
    }

    /// Dimensions of the `len - 1` internal bonds.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors.iter().skip(1).map(|t| t.l).collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Norm from the orthogonality centre (all other tensors are isometries).
    pub fn norm(&self) -> f64 {
        self.tensors[self.center].norm_sqr().sqrt()
    }

    /// Norm by full contraction, independent of gauge.
    pub fn contracted_norm(&self) -> f64 {
        let mut env = DMatrix::from_element(1, 1, ONE);
        for t in &self.tensors {
            env = transfer_left(&env, t);
        }
        env[(0, 0)].re.sqrt()
    }

    pub fn normalize(&mut self) -> f64 {
        let n = self.norm();
        if n > 0.0 {
            let c = self.center;
            self.tensors[c].scale(1.0 / n);
        }
        n
    }

    pub fn move_center(&mut self, target: usize) -> Result<()> {
        if target >= self.len() {
            return Err(Error::IndexOutOfRange { index: target, dim: self.len() });
        }
        while self.center < target {
            let j = self.center;
            let t = &self.tensors[j];
            let (l, p) = (t.l, t.p);
            let qr = t.left_matrix().qr();
            let q = qr.q();
            let r = qr.r();
            let k = q.ncols();
            self.tensors[j] = Tensor3::from_matrix(&q, l, p, k);
            let next = &self.tensors[j + 1];
            let (np, nr) = (next.p, next.r);
            let merged = r * next.right_matrix();
            self.tensors[j + 1] = Tensor3::from_matrix(&merged, k, np, nr);
            self.center += 1;
        }
        while self.center > target {
            let j = self.center;
            let t = &self.tensors[j];
            let (p, r) = (t.p, t.r);
            let qr = dagger(&t.right_matrix()).qr();
            let q = dagger(&qr.q());
            let lf = dagger(&qr.r());
            let k = q.nrows();
            self.tensors[j] = Tensor3::from_matrix(&q, k, p, r);
            let prev = &self.tensors[j - 1];
            let (pl, pp) = (prev.l, prev.p);
            let merged = prev.left_matrix() * lf;
            self.tensors[j - 1] = Tensor3::from_matrix(&merged, pl, pp, k);
            self.center -= 1;
        }
        Ok(())
    }

    /// Apply `gate` (acting on `s_b * p_{b+1} + s_{b+1}`) to bond `(b, b+1)`.
    /// The singular values are absorbed to the right when `absorb_right`,
    /// leaving the centre at `b + 1`, otherwise at `b`. Returns the relative
    /// weight discarded by the truncation.
    pub fn apply_two_site_gate(
        &mut self,
        bond: usize,
        gate: &CMat,
        policy: &TruncationPolicy,
        absorb_right: bool,
    ) -> Result<f64> {
        if bond + 1 >= self.len() {
            return Err(Error::IndexOutOfRange { index: bond, dim: self.len().saturating_sub(1) });
        }
        let (p1, p2) = (self.tensors[bond].p, self.tensors[bond + 1].p);
        let dim = p1 * p2;
        if gate.nrows() != dim || gate.ncols() != dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{dim}x{dim} gate"),
                got: format!("{}x{}", gate.nrows(), gate.ncols()),
            });
        }
        if self.center < bond {
            self.move_center(bond)?;
        } else if self.center > bond + 1 {
            self.move_center(bond + 1)?;
        }
        let l = self.tensors[bond].l;
        let r = self.tensors[bond + 1].r;
        let mut theta = self.tensors[bond].left_matrix() * self.tensors[bond + 1].right_matrix();
        let mut v = vec![ZERO; dim];
        for a in 0..l {
            for b in 0..r {
                for s1 in 0..p1 {
                    for s2 in 0..p2 {
                        v[s1 * p2 + s2] = theta[(a * p1 + s1, s2 * r + b)];
                    }
                }
                for s1 in 0..p1 {
                    for s2 in 0..p2 {
                        let row = s1 * p2 + s2;
                        let mut acc = ZERO;
                        for (c, vc) in v.iter().enumerate() {
                            acc += gate[(row, c)] * vc;
                        }
                        theta[(a * p1 + s1, s2 * r + b)] = acc;
                    }
                }
            }
        }
        let (u, sv, vt) = checked_svd(&theta).map_err(|e| Error::Mps(format!("bond {bond}: {e}")))?;
        let (keep, discarded) = truncation_rank(&sv, policy);
        let mut left = u.columns(0, keep).into_owned();
        let mut right = vt.rows(0, keep).into_owned();
        if absorb_right {
            for c in 0..keep {
                right.row_mut(c).scale_mut(sv[c]);
            }
        } else {
            for c in 0..keep {
                left.column_mut(c).scale_mut(sv[c]);
            }
        }
        self.tensors[bond] = Tensor3::from_matrix(&left, l, p1, keep);
        self.tensors[bond + 1] = Tensor3::from_matrix(&right, keep, p2, r);
        self.center = if absorb_right { bond + 1 } else { bond };
        self.discarded_weight += discarded;
        if self.discarded_weight > policy.abort_weight {
            return Err(Error::TruncationBlowup { weight: self.discarded_weight, threshold: policy.abort_weight });
        }
        Ok(discarded)
    }

    /// Site `j` is a bond-dimension-1 Fock vacuum.
    fn is_vacuum(&self, j: usize) -> bool {
        let t = &self.tensors[j];
        t.l == 1 && t.r == 1 && t.data[1..].iter().map(|z| z.norm_sqr()).sum::<f64>() <= 1e-28 * t.data[0].norm_sqr()
    }

    /// Apply gates on pairwise disjoint bonds, sweeping away from the
    /// current centre. Gates that fix the vacuum are skipped on bonds whose
    /// two sites are both still in the vacuum.
    pub fn apply_layer(&mut self, gates: &[(usize, &CMat)], policy: &TruncationPolicy) -> Result<()> {
        let active: Vec<(usize, &CMat)> = gates
            .iter()
            .copied()
            .filter(|&(b, g)| !(b + 1 < self.len() && self.is_vacuum(b) && self.is_vacuum(b + 1) && fixes_vacuum(g)))
            .collect();
        let (Some(first), Some(last)) = (active.first(), active.last()) else {
            return Ok(());
        };
        let ascending = self.center.abs_diff(first.0) <= self.center.abs_diff(last.0 + 1);
        if ascending {
            for &(b, g) in &active {
                self.apply_two_site_gate(b, g, policy, true)?;
            }
        } else {
            for &(b, g) in active.iter().rev() {
                self.apply_two_site_gate(b, g, policy, false)?;
            }
        }
        Ok(())
    }

    /// Right environments `R_j` for `j = 0..=len` (`R_len = 1`).
    fn right_environments(&self) -> Vec<CMat> {
        let n = self.len();
        let mut envs = vec![DMatrix::from_element(1, 1, ONE); n + 1];
        for j in (0..n).rev() {
            envs[j] = transfer_right(&envs[j + 1], &self.tensors[j]);
        }
        envs
    }

    /// Normalised reduced density matrix of every site.
    pub fn site_densities(&self) -> Vec<CMat> {
        let rights = self.right_environments();
        let norm = rights[0][(0, 0)].re;
        let mut left = DMatrix::from_element(1, 1, ONE);
        let mut out = Vec::with_capacity(self.len());
        for (j, t) in self.tensors.iter().enumerate() {
            let r = &rights[j + 1];
            let slices: Vec<CMat> = (0..t.p).map(|s| t.slice(s)).collect();
            let mut rho = zeros(t.p);
            for s in 0..t.p {
                let ar = &slices[s] * r;
                for sp in 0..t.p {
                    let m = &ar * dagger(&slices[sp]);
                    rho[(s, sp)] = left.iter().zip(m.iter()).map(|(x, y)| x * y).sum::<C64>() / norm;
                }
            }
            out.push(rho);
            left = transfer_left(&left, t);
        }
        out
    }

    /// Dense state vector, site 0 most significant. Only for small chains.
    pub fn to_dense(&self) -> Vec<C64> {
        let mut acc: Vec<C64> = vec![ONE];
        let mut bond = 1;
        for t in &self.tensors {
            let prev_states = acc.len() / bond;
            let mut next = vec![ZERO; prev_states * t.p * t.r];
            for x in 0..prev_states {
                for a in 0..t.l {
                    let c = acc[x * bond + a];
                    if c == ZERO {
                        continue;
                    }
                    for s in 0..t.p {
                        for b in 0..t.r {
                            next[(x * t.p + s) * t.r + b] += c * t.get(a, s, b);
                        }
                    }
                }
            }
            acc = next;
            bond = t.r;
        }
        acc
    }
}

fn fixes_vacuum(gate: &CMat) -> bool {
    (gate[(0, 0)] - ONE).norm() < 1e-14 && gate.column(0).iter().skip(1).all(|z| z.norm() < 1e-14)
}

/// `L' = Σ_s A_sᵀ L conj(A_s)`.
fn transfer_left(env: &CMat, t: &Tensor3) -> CMat {
    let mut out = DMatrix::zeros(t.r, t.r);
    for s in 0..t.p {
        let a = t.slice(s);
        out += a.transpose() * env * a.map(|z| z.conj());
    }
    out
}

/// `R' = Σ_s A_s R A_s†`.
fn transfer_right(env: &CMat, t: &Tensor3) -> CMat {
    let mut out = DMatrix::zeros(t.l, t.l);
    for s in 0..t.p {
        let a = t.slice(s);
        out += &a * env * a.adjoint();
    }
    out
}

/// Hermitian part and trace normalised to 1.
pub fn reduced_system_density(state: &MpsState) -> Result<DensityMatrix> {
    let rho = state.site_densities().swap_remove(0);
    let h = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    DensityMatrix::new(h)
}

/// Largest population of the top Fock level over the chain sites.
pub fn fock_occupancy_check(state: &MpsState) -> f64 {
    state.site_densities().iter().skip(1).map(|rho| rho[(rho.nrows() - 1, rho.ncols() - 1)].re).fold(0.0, f64::max)
}

/// Total `⟨n⟩` on the last `sites` chain sites.
pub fn tail_occupation(densities: &[CMat], sites: usize) -> f64 {
    let chain = &densities[1.min(densities.len())..];
    let start = chain.len().saturating_sub(sites);
    chain[start..].iter().map(|rho| (0..rho.nrows()).map(|n| n as f64 * rho[(n, n)].re).sum::<f64>()).sum()
}

/// Which bonds belong to which half-step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSchedule {
    /// Bonds `(0,1), (2,3), ...`, identified by their left site.
    pub part_a: Vec<usize>,
    /// Bonds `(1,2), (3,4), ...`.
    pub part_b: Vec<usize>,
    pub time_dependent: Vec<usize>,
}

impl GateSchedule {
    pub fn for_sites(sites: usize) -> Result<Self> {
        if sites < 2 {
            return Err(Error::InvalidInput("need the system and at least one chain site".into()));
        }
        Ok(Self {
            part_a: (0..sites - 1).step_by(2).collect(),
            part_b: (1..sites - 1).step_by(2).collect(),
            time_dependent: vec![0],
        })
    }

    pub fn validate(&self, sites: usize) -> Result<()> {
        let mut seen = vec![false; sites.saturating_sub(1)];
        for &b in self.part_a.iter().chain(&self.part_b) {
            if b + 1 >= sites || seen[b] {
                return Err(Error::InvalidInput(format!("bond {b} missing or repeated")));
            }
            seen[b] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidInput("schedule does not cover every bond".into()));
        }
        for part in [&self.part_a, &self.part_b] {
            if part.windows(2).any(|w| w[1] < w[0] + 2) {
                return Err(Error::InvalidInput("bonds within a part must be disjoint and ordered".into()));
            }
        }
        if !self.time_dependent.iter().all(|b| self.part_a.contains(b)) {
            return Err(Error::InvalidInput("time-dependent bonds must be in part A".into()));
        }
        Ok(())
    }
}

/// System coupled to a truncated oscillator chain.
#[derive(Clone, Debug)]
pub struct ChainModel<'a> {
    pub model: &'a DrivenSystem,
    pub chain: ChainCoefficients,
    pub d: usize,
    coupling: CMat,
}

impl<'a> ChainModel<'a> {
    pub fn new(model: &'a DrivenSystem, chain: ChainCoefficients, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidInput(format!("oscillator truncation d = {d} must be at least 2")));
        }
        chain.validate()?;
        let coupling = model.system.coupling_operator();
        Ok(Self { model, chain, d, coupling })
    }

    pub fn sites(&self) -> usize {
        self.chain.len() + 1
    }

    pub fn chain_len(&self) -> usize {
        self.chain.len()
    }

    pub fn schedule(&self) -> GateSchedule {
        GateSchedule::for_sites(self.sites()).expect("chain has at least one site")
    }

    /// Bond that carries the on-site term of MPS site `j >= 1`.
    pub fn onsite_bond(&self, j: usize) -> usize {
        let m = self.chain_len();
        if j == 1 {
            if m >= 2 {
                1
            } else {
                0
            }
        } else if j % 2 == 1 {
            j - 1
        } else if j < m {
            j
        } else {
            j - 1
        }
    }

    fn onsite_terms(&self, bond: usize) -> (f64, f64) {
        let mut left = 0.0;
        let mut right = 0.0;
        for j in [bond, bond + 1] {
            if j >= 1 && j <= self.chain_len() && self.onsite_bond(j) == bond {
                if j == bond {
                    left = self.chain.onsite[j - 1];
                } else {
                    right = self.chain.onsite[j - 1];
                }
            }
        }
        (left, right)
    }

    /// Hamiltonian of the system bond at time `t`.
    pub fn system_bond_hamiltonian(&self, t: f64) -> Result<CMat> {
        let d = self.d;
        let hs = self.model.hamiltonian(t)?;
        let a = annihilation(d);
        let x = &a + dagger(&a);
        let mut h = kron(&hs, &identity(d)) + kron(&self.coupling, &x) * C64::new(self.chain.sys_coupling, 0.0);
        let (_, right) = self.onsite_terms(0);
        if right != 0.0 {
            h += kron(&identity(hs.nrows()), &number_op(d)) * C64::new(right, 0.0);
        }
        Ok(h)
    }

    /// Hamiltonian of a constant chain bond `(b, b+1)`, `b >= 1`.
    pub fn chain_bond_hamiltonian(&self, bond: usize) -> Result<CMat> {
        if bond == 0 || bond + 1 >= self.sites() {
            return Err(Error::IndexOutOfRange { index: bond, dim: self.sites() - 1 });
        }
        let d = self.d;
        let a = annihilation(d);
        let ad = dagger(&a);
        let n = number_op(d);
        let id = identity(d);
        let beta = self.chain.hopping[bond - 1];
        let mut h = (kron(&ad, &a) + kron(&a, &ad)) * C64::new(beta, 0.0);
        let (left, right) = self.onsite_terms(bond);
        if left != 0.0 {
            h += kron(&n, &id) * C64::new(left, 0.0);
        }
        if right != 0.0 {
            h += kron(&id, &n) * C64::new(right, 0.0);
        }
        Ok(h)
    }

    fn site_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.model.system.dim()];
        dims.extend(std::iter::repeat(self.d).take(self.chain_len()));
        dims
    }

    /// Full Hamiltonian on the dense product space (site 0 most significant).
    pub fn dense_hamiltonian(&self, t: f64) -> Result<CMat> {
        let dims = self.site_dims();
        let total: usize = dims.iter().product();
        let mut h = zeros(total);
        h += embed(&self.system_bond_hamiltonian(t)?, 0, &dims);
        for b in 1..self.sites() - 1 {
            h += embed(&self.chain_bond_hamiltonian(b)?, b, &dims);
        }
        Ok(h)
    }

    /// `2 max β`: fastest group velocity on the chain, sites per unit time.
    pub fn chain_speed(&self) -> f64 {
        2.0 * self.chain.hopping.iter().copied().fold(0.0, f64::max)
    }
}

/// `1 ⊗ op ⊗ 1` with `op` on sites `bond, bond+1`.
pub fn embed(op: &CMat, bond: usize, dims: &[usize]) -> CMat {
    let left: usize = dims[..bond].iter().product();
    let right: usize = dims[bond + 2..].iter().product();
    kron(&kron(&identity(left), op), &identity(right))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    /// Polynomial factors on the system bond.
    #[default]
    Heun,
    /// `e^{(Δ/2)A(t+Δ/2)}` on each side of `e^{ΔB}`.
    Midpoint,
}

/// `P1 = 1 + ΔA1/2 + Δ²A2A1/8` and `P2 = 1 + ΔA2/2 + Δ²A2A1/8`.
pub fn heun_factors(a1: &CMat, a2: &CMat, dt: f64) -> (CMat, CMat) {
    let n = a1.nrows();
    let id = identity(n);
    let second = a2 * a1 * C64::new(dt * dt / 8.0, 0.0);
    let p1 = &id + a1 * C64::new(dt / 2.0, 0.0) + &second;
    let p2 = &id + a2 * C64::new(dt / 2.0, 0.0) + &second;
    (p1, p2)
}

/// Generators and constant gates for one step size.
#[derive(Clone, Debug)]
pub struct StepOperators {
    pub dt: f64,
    /// `e^{-iΔH/2}` on constant A bonds.
    pub a_half: Vec<(usize, CMat)>,
    /// `e^{-iΔH}` on constant A bonds (two folded halves).
    pub a_full: Vec<(usize, CMat)>,
    pub b_gates: Vec<(usize, CMat)>,
}

impl StepOperators {
    pub fn new(model: &ChainModel<'_>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("time step {dt} must be positive")));
        }
        let schedule = model.schedule();
        let mut a_half = Vec::new();
        let mut a_full = Vec::new();
        for &b in schedule.part_a.iter().filter(|&&b| b != 0) {
            let h = model.chain_bond_hamiltonian(b)?;
            a_half.push((b, expm_hermitian(&h, dt / 2.0)));
            a_full.push((b, expm_hermitian(&h, dt)));
        }
        let mut b_gates = Vec::new();
        for &b in &schedule.part_b {
            b_gates.push((b, expm_hermitian(&model.chain_bond_hamiltonian(b)?, dt)));
        }
        Ok(Self { dt, a_half, a_full, b_gates })
    }

    /// Generator `A(t) = -i H_01(t)`.
    pub fn generator(model: &ChainModel<'_>, t: f64) -> Result<CMat> {
        Ok(model.system_bond_hamiltonian(t)? * (-I))
    }
}

fn apply_a_layer(
    state: &mut MpsState,
    system_gate: &CMat,
    constant: &[(usize, CMat)],
    policy: &TruncationPolicy,
) -> Result<()> {
    let mut gates: Vec<(usize, &CMat)> = Vec::with_capacity(constant.len() + 1);
    gates.push((0, system_gate));
    gates.extend(constant.iter().map(|(b, g)| (*b, g)));
    state.apply_layer(&gates, policy)
}

fn apply_b_layer(state: &mut MpsState, ops: &StepOperators, policy: &TruncationPolicy) -> Result<()> {
    let gates: Vec<(usize, &CMat)> = ops.b_gates.iter().map(|(b, g)| (*b, g)).collect();
    state.apply_layer(&gates, policy)
}

/// One unfolded step from `t` to `t + Δ`; returns `|norm - 1|` before
/// renormalisation.
pub fn heun_step(
    state: &mut MpsState,
    model: &ChainModel<'_>,
    t: f64,
    ops: &StepOperators,
    policy: &TruncationPolicy,
) -> Result<f64> {
    let dt = ops.dt;
    let a1 = StepOperators::generator(model, t)?;
    let a2 = StepOperators::generator(model, t + dt)?;
    let (p1, p2) = heun_factors(&a1, &a2, dt);
    apply_a_layer(state, &p1, &ops.a_half, policy)?;
    apply_b_layer(state, ops, policy)?;
    apply_a_layer(state, &p2, &ops.a_half, policy)?;
    Ok((state.normalize() - 1.0).abs())
}

/// One step of the midpoint-exponential cross-check stepper.
pub fn midpoint_step(
    state: &mut MpsState,
    model: &ChainModel<'_>,
    t: f64,
    ops: &StepOperators,
    policy: &TruncationPolicy,
) -> Result<f64> {
    let g = expm_hermitian(&model.system_bond_hamiltonian(t + ops.dt / 2.0)?, ops.dt / 2.0);
    apply_a_layer(state, &g, &ops.a_half, policy)?;
    apply_b_layer(state, ops, policy)?;
    apply_a_layer(state, &g, &ops.a_half, policy)?;
    Ok((state.normalize() - 1.0).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub dt: f64,
    pub record_every: usize,
    pub policy: TruncationPolicy,
    pub stepper: Stepper,
    /// Merge adjacent A half-steps between recorded times.
    pub fold: bool,
    pub reflection_threshold: f64,
    pub reflection_sites: usize,
    /// Top-Fock population above which a warning flag is raised.
    pub fock_threshold: f64,
}

impl EvolveOptions {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            record_every: 1,
            policy: TruncationPolicy::default(),
            stepper: Stepper::Heun,
            fold: true,
            reflection_threshold: DEFAULT_REFLECTION_THRESHOLD,
            reflection_sites: REFLECTION_SITES,
            fock_threshold: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MpsEvolution {
    pub times: Vec<f64>,
    /// `populations[level][i]` of the reduced system state.
    pub populations: Vec<Vec<f64>>,
    pub max_tail_occupation: f64,
    pub max_top_fock: f64,
    pub discarded_weight: f64,
    pub max_norm_correction: f64,
    pub total_norm_correction: f64,
    pub max_bond_dim: usize,
    pub flags: Vec<String>,
    #[serde(skip)]
    pub final_state: Option<MpsState>,
}

impl MpsEvolution {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for k in 0..self.populations.len() {
            out.push_str(&format!(",p_{k}"));
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:.12e}"));
            for p in &self.populations {
                out.push_str(&format!(",{:.15e}", p[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Evolve `state` from `t0` to `t1`, recording system populations every
/// `record_every` steps and at the end.
pub fn evolve(
    state: &mut MpsState,
    model: &ChainModel<'_>,
    t0: f64,
    t1: f64,
    opts: &EvolveOptions,
) -> Result<MpsEvolution> {
    opts.policy.validate()?;
    if opts.record_every == 0 {
        return Err(Error::InvalidInput("record_every must be at least 1".into()));
    }
    if state.len() != model.sites() {
        return Err(Error::ShapeMismatch { expected: format!("{} sites", model.sites()), got: format!("{}", state.len()) });
    }
    let steps = step_count(t0, t1, opts.dt)?;
    let dt = opts.dt;
    let ops = StepOperators::new(model, dt)?;
    let mut out = MpsEvolution {
        times: Vec::new(),
        populations: vec![Vec::new(); model.model.system.dim()],
        max_tail_occupation: 0.0,
        max_top_fock: 0.0,
        discarded_weight: 0.0,
        max_norm_correction: 0.0,
        total_norm_correction: 0.0,
        max_bond_dim: state.max_bond_dim(),
        flags: Vec::new(),
        final_state: None,
    };
    let reach = model.chain_speed() * (t1 - t0);
    if reach > model.chain_len() as f64 {
        log::warn!("chain of {} sites shorter than light cone {reach:.1}", model.chain_len());
        out.flags.push("light_cone_short".into());
    }
    let start_weight = state.discarded_weight;
    record(state, t0, opts, &mut out)?;
    // P2 of the previous step, not yet applied
    let mut pending: Option<CMat> = None;
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let recording = (k + 1) % opts.record_every == 0 || k + 1 == steps;
        let (first, last) = match opts.stepper {
            Stepper::Heun => {
                let a1 = StepOperators::generator(model, t)?;
                let a2 = StepOperators::generator(model, t + dt)?;
                heun_factors(&a1, &a2, dt)
            }
            Stepper::Midpoint => {
                let g = expm_hermitian(&model.system_bond_hamiltonian(t + dt / 2.0)?, dt / 2.0);
                (g.clone(), g)
            }
        };
        match pending.take() {
            Some(prev) => apply_a_layer(state, &(first * prev), &ops.a_full, &opts.policy)?,
            None => apply_a_layer(state, &first, &ops.a_half, &opts.policy)?,
        }
        apply_b_layer(state, &ops, &opts.policy)?;
        if opts.fold && !recording {
            pending = Some(last);
        } else {
            apply_a_layer(state, &last, &ops.a_half, &opts.policy)?;
        }
        let correction = (state.normalize() - 1.0).abs();
        if !correction.is_finite() {
            return Err(Error::Divergence { t: t + dt, reason: "MPS norm is not finite".into() });
        }
        out.max_norm_correction = out.max_norm_correction.max(correction);
        out.total_norm_correction += correction;
        out.max_bond_dim = out.max_bond_dim.max(state.max_bond_dim());
        if recording {
            record(state, t0 + (k + 1) as f64 * dt, opts, &mut out)?;
        }
    }
    out.discarded_weight = state.discarded_weight - start_weight;
    if out.max_tail_occupation > opts.reflection_threshold {
        log::warn!("chain end occupation {:e} exceeds {:e}", out.max_tail_occupation, opts.reflection_threshold);
        out.flags.push("reflection".into());
    }
    if out.max_top_fock > opts.fock_threshold {
        out.flags.push("fock_truncation".into());
    }
    log::debug!(
        "evolved {steps} steps, max bond {}, discarded {:e}, max norm correction {:e}",
        out.max_bond_dim,
        out.discarded_weight,
        out.max_norm_correction
    );
    out.final_state = Some(state.clone());
    Ok(out)
}

fn record(state: &MpsState, t: f64, opts: &EvolveOptions, out: &mut MpsEvolution) -> Result<()> {
    let dens = state.site_densities();
    let sys = &dens[0];
    for (k, pops) in out.populations.iter_mut().enumerate() {
        pops.push(sys[(k, k)].re);
    }
    out.times.push(t);
    out.max_tail_occupation = out.max_tail_occupation.max(tail_occupation(&dens, opts.reflection_sites));
    let top = dens.iter().skip(1).map(|r| r[(r.nrows() - 1, r.ncols() - 1)].re).fold(0.0, f64::max);
    out.max_top_fock = out.max_top_fock.max(top);
    Ok(())
}

/// Tensor dump with the settings needed to resume a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub dt: f64,
    pub policy: TruncationPolicy,
    pub stepper: Stepper,
    pub chain_hash: String,
    pub state: MpsState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Loaded state, if it was produced for the same chain.
    pub fn resume(self, chain: &ChainCoefficients) -> Result<MpsState> {
        if self.chain_hash != chain.hash() {
            return Err(Error::InvalidInput("checkpoint belongs to a different chain".into()));
        }
        Ok(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::analytic_flat_coefficients;
    use crate::system::LevelSystem;

    fn random_unitary(n: usize, seed: u64) -> CMat {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        expm_hermitian(&h, 1.3)
    }

    fn random_state(len: usize, d: usize, seed: u64) -> MpsState {
        let mut s = init_state(&[ONE, ZERO], len, d).unwrap();
        let policy = TruncationPolicy { chi_max: 100, svd_cutoff: 0.0, abort_weight: 1.0 };
        for (k, b) in (0..len).chain((0..len).rev()).enumerate() {
            let u = random_unitary(s.tensors[b].p * s.tensors[b + 1].p, seed + k as u64);
            s.apply_two_site_gate(b, &u, &policy, true).unwrap();
        }
        s
    }

    fn overlap(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>().norm()
    }

    #[test]
    fn product_state_basics() {
        let s = init_state(&[ZERO, ONE], 4, 3).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.bond_dims(), vec![1; 4]);
        assert!((s.norm() - 1.0).abs() < 1e-15);
        let rho = reduced_system_density(&s).unwrap();
        assert!((rho.population(1) - 1.0).abs() < 1e-15);
        assert_eq!(fock_occupancy_check(&s), 0.0);
        assert!(init_state(&[ONE], 2, 1).is_err());
        assert!(init_state(&[ONE, ONE], 2, 3).is_err());
    }

    #[test]
    fn center_moves_preserve_state() {
        let mut s = random_state(4, 3, 7);
        let before = s.to_dense();
        s.move_center(0).unwrap();
        s.move_center(4).unwrap();
        s.move_center(2).unwrap();
        assert!((overlap(&before, &s.to_dense()) - 1.0).abs() < 1e-12);
        assert!((s.norm() - s.contracted_norm()).abs() < 1e-12);
        assert!(s.move_center(5).is_err());
    }

    #[test]
    fn identity_gate_is_inert() {
        let mut s = random_state(3, 3, 11);
        let dims = s.bond_dims();
        let before = s.to_dense();
        let w = s.apply_two_site_gate(1, &identity(9), &TruncationPolicy::default(), false).unwrap();
        assert!(w < 1e-13);
        let after = s.to_dense();
        let diff: f64 = before.iter().zip(&after).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        assert!(diff < 1e-13);
        assert!(s.bond_dims().iter().zip(&dims).all(|(a, b)| a <= b));
        assert!(s.apply_two_site_gate(3, &identity(9), &TruncationPolicy::default(), true).is_err());
        assert!(s.apply_two_site_gate(1, &identity(4), &TruncationPolicy::default(), true).is_err());
    }

    #[test]
    fn swap_on_product_state_keeps_unit_bond() {
        let mut s = init_state(&[ZERO, ONE], 1, 2).unwrap();
        let mut swap = zeros(4);
        for a in 0..2 {
            for b in 0..2 {
                swap[(b * 2 + a, a * 2 + b)] = ONE;
            }
        }
        s.apply_two_site_gate(0, &swap, &TruncationPolicy { chi_max: 1, ..Default::default() }, true).unwrap();
        assert_eq!(s.bond_dims(), vec![1]);
        let v = s.to_dense();
        assert!((v[1].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gate_matches_dense_two_site_oracle() {
        let mut s = init_state(&[ONE, ZERO], 1, 3).unwrap();
        // second site as a d=3 oscillator; rebuild the first as d=3 too
        s.tensors[0] = Tensor3 { l: 1, p: 3, r: 1, data: vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8), ZERO] };
        let u = random_unitary(9, 3);
        let mut dense = s.to_dense();
        dense = (&u * nalgebra::DVector::from_vec(dense)).iter().copied().collect();
        let policy = TruncationPolicy { chi_max: 9, svd_cutoff: 0.0, abort_weight: 1.0 };
        s.apply_two_site_gate(0, &u, &policy, true).unwrap();
        assert!((overlap(&dense, &s.to_dense()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_accounting() {
        let sv = [1.0, 0.1, 1e-12];
        let (keep, w) = truncation_rank(&sv, &TruncationPolicy::default());
        assert_eq!(keep, 2);
        assert!((w - 1e-24 / 1.01).abs() < 1e-30);
        let (keep, w) = truncation_rank(&sv, &TruncationPolicy { chi_max: 1, ..Default::default() });
        assert_eq!(keep, 1);
        assert!((w - 0.01 / 1.01).abs() < 1e-15);
        let mut s = random_state(3, 3, 5);
        let policy = TruncationPolicy { chi_max: 1, svd_cutoff: 0.0, abort_weight: 1e-9 };
        let u = random_unitary(9, 99);
        assert!(matches!(s.apply_two_site_gate(1, &u, &policy, true), Err(Error::TruncationBlowup { .. })));
    }

    #[test]
    fn schedule_partitions_bonds() {
        for sites in 2..9 {
            let s = GateSchedule::for_sites(sites).unwrap();
            s.validate(sites).unwrap();
            assert_eq!(s.part_a.len() + s.part_b.len(), sites - 1);
        }
        let bad = GateSchedule { part_a: vec![0, 1], part_b: vec![], time_dependent: vec![0] };
        assert!(bad.validate(3).is_err());
    }

    #[test]
    fn onsite_terms_assigned_once() {
        let sys = DrivenSystem::undriven(LevelSystem::qubit(1.0, 1.0).unwrap());
        for m in 1..8 {
            let chain = analytic_flat_coefficients(m, 10.0, 1.0).unwrap();
            let model = ChainModel::new(&sys, chain, 2).unwrap();
            let mut counts = vec![0; m + 1];
            for j in 1..=m {
                let b = model.onsite_bond(j);
                assert!(b == j || b + 1 == j, "site {j} on bond {b}");
                assert!(b + 1 <= m);
                counts[j] += 1;
            }
            if m >= 2 {
                assert_eq!(model.onsite_bond(1), 1);
            }
        }
    }

    #[test]
    fn heun_factors_scalar_reduction() {
        let a = C64::new(0.3, -1.1);
        let b = C64::new(-0.2, 0.7);
        let mut errs = Vec::new();
        for dt in [0.1, 0.05, 0.025] {
            let am = DMatrix::from_element(1, 1, a);
            let (p1, p2) = heun_factors(&am, &am, dt);
            let scheme = p2[(0, 0)] * (b * dt).exp() * p1[(0, 0)];
            errs.push((scheme - ((a + b) * dt).exp()).norm());
        }
        // local error O(Δ³)
        assert!((errs[0] / errs[1]).log2() > 2.8);
        assert!((errs[1] / errs[2]).log2() > 2.8);
    }

    #[test]
    fn zero_system_bond_gives_exact_b_layer() {
        // negligible system splitting and no coupling: the only A bond vanishes
        let sys = DrivenSystem::undriven(LevelSystem::qubit(1e-300, 0.0).unwrap());
        let chain = analytic_flat_coefficients(2, 4.0, 0.0).unwrap();
        let model = ChainModel::new(&sys, chain, 3).unwrap();
        assert_eq!(model.schedule().part_a, vec![0]);
        let a0 = StepOperators::generator(&model, 0.0).unwrap();
        assert!(crate::linalg::fro(&a0) < 1e-200);
        let mut s = random_state(2, 3, 21);
        let before = s.to_dense();
        let ops = StepOperators::new(&model, 0.05).unwrap();
        let policy = TruncationPolicy { chi_max: 64, svd_cutoff: 0.0, abort_weight: 1.0 };
        let corr = heun_step(&mut s, &model, 0.0, &ops, &policy).unwrap();
        assert!(corr < 1e-12);
        let dims = model.site_dims();
        let hb = embed(&model.chain_bond_hamiltonian(1).unwrap(), 1, &dims);
        let u = expm_hermitian(&hb, 0.05);
        let expect: Vec<C64> = (&u * nalgebra::DVector::from_vec(before)).iter().copied().collect();
        assert!((overlap(&expect, &s.to_dense()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let s = random_state(2, 3, 4);
        let chain = analytic_flat_coefficients(2, 4.0, 1.0).unwrap();
        let cp = Checkpoint {
            t: 0.5,
            dt: 0.01,
            policy: TruncationPolicy::default(),
            stepper: Stepper::Heun,
            chain_hash: chain.hash(),
            state: s.clone(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.json");
        cp.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, cp);
        assert_eq!(back.resume(&chain).unwrap(), s);
        let other = analytic_flat_coefficients(3, 4.0, 1.0).unwrap();
        assert!(cp.resume(&other).is_err());
    }
}
