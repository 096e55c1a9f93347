//! Bath discretisation and the star-to-chain mapping.
//!
//! The continuum of bath oscillators is first replaced by `M` discrete modes
//! (a "star": every mode couples directly to the system). An orthogonal
//! change of mode basis, obtained by Lanczos tridiagonalisation of
//! `diag(ω_i)` with start vector `∝ κ`, turns the star into a
//! nearest-neighbour chain whose first site alone couples to the system.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::system::{BathSpec, SpectralDensity};

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi's initial guess for the i-th largest root
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    #[default]
    GaussLegendre,
    Midpoint,
}

/// Discrete bath modes coupling directly to the system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarBath {
    pub mode_freqs: Vec<f64>,
    pub couplings: Vec<f64>,
}

impl StarBath {
    pub fn len(&self) -> usize {
        self.mode_freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mode_freqs.is_empty()
    }

    pub fn total_coupling(&self) -> f64 {
        self.couplings.iter().map(|k| k * k).sum::<f64>().sqrt()
    }
}

/// `M` modes with `κ_i = g sqrt(J(ω_i) w_i)`, normalised so that
/// `Σ κ_i² = g² ∫ J dω = g²`.
pub fn discretize(bath: &BathSpec, g: f64, modes: usize, scheme: Discretization) -> Result<StarBath> {
    if modes < 1 {
        return Err(Error::InvalidInput("bath discretisation needs at least one mode".into()));
    }
    let cutoff = bath.cutoff;
    let (mode_freqs, weights): (Vec<f64>, Vec<f64>) = match scheme {
        Discretization::GaussLegendre => {
            let (x, w) = gauss_legendre(modes);
            let half = 0.5 * cutoff;
            (x.iter().map(|x| half * (x + 1.0)).collect(), w.iter().map(|w| half * w).collect())
        }
        Discretization::Midpoint => {
            let h = cutoff / modes as f64;
            ((0..modes).map(|i| (i as f64 + 0.5) * h).collect(), vec![h; modes])
        }
    };
    let mut couplings: Vec<f64> =
        mode_freqs.iter().zip(&weights).map(|(&w_i, &wt)| (bath.density_at(w_i) * wt).sqrt()).collect();
    let norm = couplings.iter().map(|k| k * k).sum::<f64>().sqrt();
    let integral: f64 = match bath.density {
        SpectralDensity::Flat => 1.0,
    };
    let scale = g.abs() * integral.sqrt() / norm;
    for k in &mut couplings {
        *k *= scale;
    }
    Ok(StarBath { mode_freqs, couplings })
}

/// Nearest-neighbour chain: `Σ α_n a_n†a_n + Σ β_n (a_{n-1}†a_n + h.c.)`,
/// with the system coupled to site 0 through `κ_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainCoefficients {
    pub onsite: Vec<f64>,
    /// `hopping[n-1]` couples sites `n-1` and `n`.
    pub hopping: Vec<f64>,
    pub sys_coupling: f64,
}

impl ChainCoefficients {
    pub fn new(onsite: Vec<f64>, hopping: Vec<f64>, sys_coupling: f64) -> Result<Self> {
        let out = Self { onsite, hopping, sys_coupling };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.onsite.is_empty() {
            return Err(Error::ChainMapping("chain has no sites".into()));
        }
        if self.hopping.len() + 1 != self.onsite.len() {
            return Err(Error::ChainMapping(format!(
                "{} sites need {} hoppings, got {}",
                self.onsite.len(),
                self.onsite.len() - 1,
                self.hopping.len()
            )));
        }
        if self.hopping.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::ChainMapping("hoppings must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.onsite.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onsite.is_empty()
    }

    /// First `sites` sites of the chain.
    pub fn truncated(&self, sites: usize) -> Result<Self> {
        if sites == 0 || sites > self.len() {
            return Err(Error::ChainMapping(format!("cannot truncate {} sites to {sites}", self.len())));
        }
        Ok(Self {
            onsite: self.onsite[..sites].to_vec(),
            hopping: self.hopping[..sites - 1].to_vec(),
            sys_coupling: self.sys_coupling,
        })
    }

    /// Dense symmetric tridiagonal matrix of the chain.
    pub fn jacobi_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.onsite[i];
        }
        for (i, &b) in self.hopping.iter().enumerate() {
            m[(i, i + 1)] = b;
            m[(i + 1, i)] = b;
        }
        m
    }

    /// SHA-256 of the JSON encoding, hex.
    pub fn hash(&self) -> String {
        let text = serde_json::to_vec(self).expect("chain coefficients serialise");
        hex::encode(Sha256::digest(&text))
    }
}

/// Full star-to-chain mapping: one chain site per star mode.
pub fn star_to_chain(star: &StarBath) -> Result<ChainCoefficients> {
    star_to_chain_sites(star, star.len())
}

/// Lanczos tridiagonalisation of `diag(ω_i)` from `κ/|κ|`, with full
/// reorthogonalisation, stopped after `sites` chain sites.
pub fn star_to_chain_sites(star: &StarBath, sites: usize) -> Result<ChainCoefficients> {
    let m = star.len();
    if m == 0 {
        return Err(Error::ChainMapping("empty star bath".into()));
    }
    if sites == 0 || sites > m {
        return Err(Error::ChainMapping(format!("requested {sites} sites from {m} modes")));
    }
    if star.couplings.len() != m {
        return Err(Error::ChainMapping("one coupling per mode required".into()));
    }
    let kappa = star.total_coupling();
    if kappa == 0.0 {
        return Err(Error::ChainMapping("all couplings are zero".into()));
    }
    let scale = star.mode_freqs.iter().fold(0.0f64, |a, w| a.max(w.abs())).max(f64::MIN_POSITIVE);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(sites);
    basis.push(star.couplings.iter().map(|k| k / kappa).collect());
    let mut onsite = Vec::with_capacity(sites);
    let mut hopping: Vec<f64> = Vec::with_capacity(sites.saturating_sub(1));
    for j in 0..sites {
        let v = &basis[j];
        let mut w: Vec<f64> = v.iter().zip(&star.mode_freqs).map(|(x, w)| x * w).collect();
        let alpha = dot(v, &w);
        onsite.push(alpha);
        if j + 1 == sites {
            break;
        }
        axpy(-alpha, v, &mut w);
        if j > 0 {
            axpy(-hopping[j - 1], &basis[j - 1], &mut w);
        }
        // two passes of classical Gram-Schmidt against every Lanczos vector
        for _ in 0..2 {
            for u in &basis {
                let c = dot(u, &w);
                axpy(-c, u, &mut w);
            }
        }
        let beta = dot(&w, &w).sqrt();
        if beta <= 1e-13 * scale {
            return Err(Error::ChainMapping(format!(
                "Krylov space exhausted after {} sites (beta = {beta:e})",
                j + 1
            )));
        }
        for x in &mut w {
            *x /= beta;
        }
        let loss = basis.iter().map(|u| dot(u, &w).abs()).fold(0.0, f64::max);
        if loss > 1e-8 {
            return Err(Error::ChainMapping(format!("loss of orthogonality {loss:e} at site {}", j + 1)));
        }
        hopping.push(beta);
        basis.push(w);
    }
    ChainCoefficients::new(onsite, hopping, kappa)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Recurrence coefficients of the flat density on `[0, Ω_c]` (shifted
/// Legendre): `α_n = Ω_c/2` and, for `n >= 1`, `β_n = Ω_c n / (2 sqrt(4n² - 1))`.
/// `β_0` is returned as `0`.
pub fn analytic_flat_chain(n: usize, cutoff: f64) -> (f64, f64) {
    let alpha = 0.5 * cutoff;
    if n == 0 {
        return (alpha, 0.0);
    }
    let nf = n as f64;
    (alpha, cutoff * nf / (2.0 * (4.0 * nf * nf - 1.0).sqrt()))
}

/// Chain of `sites` sites with the analytic flat-density coefficients.
pub fn analytic_flat_coefficients(sites: usize, cutoff: f64, g: f64) -> Result<ChainCoefficients> {
    let onsite = (0..sites).map(|n| analytic_flat_chain(n, cutoff).0).collect();
    let hopping = (1..sites).map(|n| analytic_flat_chain(n, cutoff).1).collect();
    ChainCoefficients::new(onsite, hopping, g.abs())
}

/// Fastest excitation speed on the chain, in sites per unit time.
pub fn chain_speed(cutoff: f64) -> f64 {
    0.5 * cutoff
}

/// Chain length such that the fastest excitation covers at most
/// `1/factor` of the chain within `duration`.
pub fn light_cone_length(cutoff: f64, duration: f64, factor: f64) -> usize {
    (factor * chain_speed(cutoff) * duration).ceil().max(1.0) as usize
}

/// Build the chain used for a simulation: Gauss–Legendre star with
/// `sites` modes, fully mapped.
pub fn chain_for(bath: &BathSpec, g: f64, sites: usize) -> Result<ChainCoefficients> {
    let star = discretize(bath, g, sites, Discretization::GaussLegendre)?;
    star_to_chain(&star)
}
