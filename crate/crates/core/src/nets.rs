//! Grid ε-nets over the codebook class `((−ρ, ρ)^d)^k` and the entropy check
//! `log N ≤ 𝒞 log(K/ε)`.
//!
//! A net is the set of cell centers of an axis-aligned grid with spacing δ in
//! the flattened parameter space `ℝ^{dk}`. Members are never materialized:
//! member `i` is decoded from its index in lexicographic order, the first
//! flattened coordinate being the most significant digit.

use std::path::Path;

use serde::Serialize;

use crate::distributions::Sample;
use crate::error::{Error, Result};
use crate::io::{write_points, Sidecar};
use crate::numeric::block_sum;
use crate::quantization::{estimate_lipschitz, Codebook};

/// Largest net [`build_net`] agrees to describe.
pub const MAX_MEMBERS: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonNet {
    rho: f64,
    dim: usize,
    k: usize,
    mesh: f64,
    per_axis: u64,
    members: u64,
    epsilon: f64,
    lipschitz_l: f64,
}

/// Net whose certified radius is `epsilon`, i.e. mesh
/// `δ = 2ε / (√L √(dk))`.
pub fn build_net(rho: f64, d: usize, k: usize, epsilon: f64, lipschitz_l: f64) -> Result<EpsilonNet> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::param(format!("epsilon must be finite and > 0, got {epsilon}")));
    }
    if !(lipschitz_l > 0.0) || !lipschitz_l.is_finite() {
        return Err(Error::param(format!("Lipschitz constant must be finite and > 0, got {lipschitz_l}")));
    }
    let p = (d * k) as f64;
    EpsilonNet::with_mesh(rho, d, k, 2.0 * epsilon / (lipschitz_l.sqrt() * p.sqrt()), lipschitz_l)
}

impl EpsilonNet {
    pub fn with_mesh(rho: f64, d: usize, k: usize, mesh: f64, lipschitz_l: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::param(format!("rho must be finite and > 0, got {rho}")));
        }
        if d == 0 || k == 0 {
            return Err(Error::param("d and k must be >= 1"));
        }
        if !(mesh > 0.0) || !mesh.is_finite() {
            return Err(Error::param(format!("mesh must be finite and > 0, got {mesh}")));
        }
        if !(lipschitz_l > 0.0) {
            return Err(Error::param("Lipschitz constant must be > 0"));
        }
        let axis = (2.0 * rho / mesh).ceil().max(1.0);
        let count = axis.powi((d * k) as i32);
        if !(count <= MAX_MEMBERS as f64) {
            return Err(Error::NetTooLarge {
                members: count,
                limit: MAX_MEMBERS,
            });
        }
        let per_axis = axis as u64;
        let members = per_axis.pow((d * k) as u32);
        let epsilon = lipschitz_l.sqrt() * mesh * ((d * k) as f64).sqrt() / 2.0;
        Ok(Self {
            rho,
            dim: d,
            k,
            mesh,
            per_axis,
            members,
            epsilon,
            lipschitz_l,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn per_axis(&self) -> u64 {
        self.per_axis
    }

    pub fn len(&self) -> u64 {
        self.members
    }

    pub fn is_empty(&self) -> bool {
        self.members == 0
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lipschitz_l(&self) -> f64 {
        self.lipschitz_l
    }

    /// Worst-case parameter distance from a codebook to its projection.
    pub fn projection_radius(&self) -> f64 {
        self.mesh * ((self.dim * self.k) as f64).sqrt() / 2.0
    }

    fn grid_value(&self, i: u64) -> f64 {
        (i as f64 - (self.per_axis as f64 - 1.0) / 2.0) * self.mesh
    }

    /// Grid values along one axis, in increasing order.
    pub fn axis_values(&self) -> Vec<f64> {
        (0..self.per_axis).map(|i| self.grid_value(i)).collect()
    }

    pub fn member(&self, index: u64) -> Result<Codebook> {
        if index >= self.members {
            return Err(Error::param(format!(
                "member index {index} out of range for a net of {}",
                self.members
            )));
        }
        let p = self.dim * self.k;
        let mut flat = vec![0.0; p];
        let mut rest = index;
        for slot in flat.iter_mut().rev() {
            *slot = self.grid_value(rest % self.per_axis);
            rest /= self.per_axis;
        }
        Codebook::clipped_flat(flat, self.dim, self.rho)
    }

    pub fn members(&self) -> impl Iterator<Item = Codebook> + '_ {
        (0..self.members).map(|i| self.member(i).expect("index in range"))
    }

    fn axis_index(&self, x: f64) -> u64 {
        let last = self.per_axis - 1;
        let t = x / self.mesh + last as f64 / 2.0;
        let lo = (t.floor().max(0.0) as u64).min(last);
        let hi = (lo + 1).min(last);
        if (x - self.grid_value(hi)).abs() < (x - self.grid_value(lo)).abs() {
            hi
        } else {
            lo
        }
    }

    /// Index of the nearest member in parameter space, lowest index on ties.
    pub fn project_index(&self, codebook: &Codebook) -> Result<u64> {
        self.check_shape(codebook)?;
        Ok(codebook
            .as_flat()
            .iter()
            .fold(0u64, |acc, &x| acc * self.per_axis + self.axis_index(x)))
    }

    /// The projection `π(C)`.
    pub fn project(&self, codebook: &Codebook) -> Result<Codebook> {
        self.member(self.project_index(codebook)?)
    }

    fn check_shape(&self, codebook: &Codebook) -> Result<()> {
        if codebook.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: codebook.dim(),
            });
        }
        if codebook.k() != self.k {
            return Err(Error::Dimension {
                expected: self.k,
                got: codebook.k(),
            });
        }
        Ok(())
    }

    /// Writes the members as rows of dimension `dk` in the point-file format.
    pub fn write(&self, path: &Path) -> Result<()> {
        let p = self.dim * self.k;
        let mut flat = Vec::with_capacity(self.members as usize * p);
        for m in self.members() {
            flat.extend_from_slice(m.as_flat());
        }
        let meta = Sidecar {
            n: self.members as usize,
            d: p,
            seed: 0,
            spec: None,
        };
        write_points(path, &flat, &meta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyCheck {
    pub log_count: f64,
    /// `𝒞 log(K/ε)`.
    pub bound: f64,
    pub holds: bool,
    /// Smallest `K` for which the check holds at `𝒞 = k(d+1)`.
    pub min_k_entropy: f64,
}

pub fn entropy_check(net: &EpsilonNet, c_entropy: f64, k_entropy: f64) -> Result<EntropyCheck> {
    if !(c_entropy > 0.0 && k_entropy > 0.0) {
        return Err(Error::param("entropy constants must be > 0"));
    }
    if net.epsilon > k_entropy {
        return Err(Error::param(format!(
            "epsilon = {} exceeds K = {k_entropy}",
            net.epsilon
        )));
    }
    let log_count = (net.members as f64).ln();
    let bound = c_entropy * (k_entropy / net.epsilon).ln();
    let c_kmeans = (net.k * (net.dim + 1)) as f64;
    Ok(EntropyCheck {
        log_count,
        bound,
        holds: log_count <= bound,
        min_k_entropy: net.epsilon * (log_count / c_kmeans).exp(),
    })
}

/// Default Lipschitz constant: twice the largest ratio `E[Δℓ²]/‖ΔC‖²`
/// observed over 200 codebook pairs on `sample`.
///
/// The least-squares slope is not used: `E[Δℓ²]` saturates for distant
/// pairs, so a fit through the origin lands well below the short-range
/// ratio that governs projection onto the grid.
pub fn default_lipschitz(sample: &Sample, k: usize, rho: f64, seed: u64) -> Result<f64> {
    Ok(2.0 * estimate_lipschitz(sample, k, rho, 200, seed)?.max_ratio)
}

/// Monte Carlo estimate of `‖ℓ(C) − ℓ(π(C))‖_{L2(P)}` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certification {
    pub distance: f64,
    pub se: f64,
    pub parameter_distance: f64,
}

pub fn certify(net: &EpsilonNet, codebook: &Codebook, sample: &Sample) -> Result<Certification> {
    let pi = net.project(codebook)?;
    if sample.dim() != net.dim {
        return Err(Error::Dimension {
            expected: net.dim,
            got: sample.dim(),
        });
    }
    let n = sample.len();
    if n < 2 {
        return Err(Error::Insufficient("certification needs at least two points".into()));
    }
    let sq = |i: usize| {
        let x = sample.point(i);
        let d = codebook.nearest(x).1 - pi.nearest(x).1;
        d * d
    };
    let nf = n as f64;
    let m = block_sum(n, sq) / nf;
    let var = block_sum(n, |i| (sq(i) - m).powi(2)) / (nf - 1.0);
    let distance = m.sqrt();
    let se = if distance > 0.0 {
        (var / nf).sqrt() / (2.0 * distance)
    } else {
        0.0
    };
    Ok(Certification {
        distance,
        se,
        parameter_distance: codebook.param_distance(&pi),
    })
}
