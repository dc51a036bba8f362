//! AGNI-style atomic-environment fingerprint of a periodic cell.
//!
//! For each Gaussian width `sigma_k` the fingerprint holds a scalar component
//! `S_k = sum_i sum_j G(r_ij, sigma_k) fc(r_ij)` and a vectorial component
//! `V_k = sum_i |sum_j (r_ij / |r_ij|) G(r_ij, sigma_k) fc(r_ij)|`, where the
//! inner sums run over all periodic neighbors of atom `i` inside the cutoff.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::crystal::{frac_to_cart, norm, CrystalConfiguration, Vec3};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgniParams {
    pub sigmas: Vec<f64>,
    pub cutoff: f64,
}

impl Default for AgniParams {
    fn default() -> Self {
        Self {
            sigmas: geometric_sigmas(0.25, 8.0, 16),
            cutoff: 8.0,
        }
    }
}

/// `n` widths spaced geometrically from `lo` to `hi` inclusive.
pub fn geometric_sigmas(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (n - 1) as f64;
    (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                lo * (ratio * k as f64).exp()
            }
        })
        .collect()
}

impl AgniParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one Gaussian width is required".into(),
            ));
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(
                "Gaussian widths must be positive".into(),
            ));
        }
        if self.sigmas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "Gaussian widths must be strictly increasing".into(),
            ));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::InvalidArgument(
                "cutoff radius must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Fingerprint length, `2n`.
    pub fn dim(&self) -> usize {
        2 * self.sigmas.len()
    }
}

/// Smooth cutoff `(cos(pi r / rc) + 1) / 2`.
pub fn cutoff(r: f64, rc: f64) -> f64 {
    0.5 * ((std::f64::consts::PI * r / rc).cos() + 1.0)
}

/// Normalized Gaussian `exp(-r^2 / 2 sigma^2) / (sqrt(2 pi) sigma)`.
pub fn gaussian(r: f64, sigma: f64) -> f64 {
    (-0.5 * (r / sigma).powi(2)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Index of the neighbor atom inside the cell.
    pub j: usize,
    pub r: f64,
    /// Unit vector from the central atom to the neighbor.
    pub unit: Vec3,
}

/// Neighbors of each atom, including periodic images, with `0 < r < rc`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub cutoff: f64,
    pub neighbors: Vec<Vec<Neighbor>>,
}

impl NeighborList {
    pub fn total(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }
}

/// Enumerates every image within `rc` of each atom. The image block extent
/// along each lattice vector comes from the perpendicular cell width, so the
/// search is complete for any cell shape.
pub fn build_neighbor_list(cfg: &CrystalConfiguration, rc: f64) -> Result<NeighborList> {
    let widths = cfg.perpendicular_widths();
    // fractional differences lie in (-1, 1), hence the extra cell
    let ext = widths.map(|w| (rc / w).ceil() as i32 + 1);
    let lattice = cfg.lattice();
    let n = cfg.n_atoms();
    let pos = cfg.positions();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            let delta = [0, 1, 2].map(|k| pos[j][k] - pos[i][k]);
            for na in -ext[0]..=ext[0] {
                for nb in -ext[1]..=ext[1] {
                    for nc in -ext[2]..=ext[2] {
                        if i == j && na == 0 && nb == 0 && nc == 0 {
                            continue;
                        }
                        let f = [
                            delta[0] + na as f64,
                            delta[1] + nb as f64,
                            delta[2] + nc as f64,
                        ];
                        let d = frac_to_cart(&f, lattice);
                        let r = norm(&d);
                        if r >= rc {
                            continue;
                        }
                        if r == 0.0 {
                            return Err(Error::Overlap {
                                i,
                                j,
                                distance: 0.0,
                            });
                        }
                        neighbors[i].push(Neighbor {
                            j,
                            r,
                            unit: d.map(|x| x / r),
                        });
                    }
                }
            }
        }
    }
    Ok(NeighborList {
        cutoff: rc,
        neighbors,
    })
}

/// The `2n` fingerprint `(S_1..S_n, V_1..V_n)`.
pub fn fingerprint(cfg: &CrystalConfiguration, params: &AgniParams) -> Result<Fingerprint> {
    params.validate()?;
    let nl = build_neighbor_list(cfg, params.cutoff)?;
    Ok(fingerprint_from_neighbors(&nl, params))
}

pub fn fingerprint_from_neighbors(nl: &NeighborList, params: &AgniParams) -> Fingerprint {
    let n = params.sigmas.len();
    let mut out = vec![0.0; 2 * n];
    if nl.total() == 0 {
        warn!(
            "no neighbors within {} Å; fingerprint is all zeros",
            nl.cutoff
        );
    }
    for atom in &nl.neighbors {
        for (k, &sigma) in params.sigmas.iter().enumerate() {
            let mut s = 0.0;
            let mut v = [0.0; 3];
            for nb in atom {
                let w = gaussian(nb.r, sigma) * cutoff(nb.r, nl.cutoff);
                s += w;
                for a in 0..3 {
                    v[a] += nb.unit[a] * w;
                }
            }
            out[k] += s;
            out[n + k] += norm(&v);
        }
    }
    Fingerprint::new(out).expect("fingerprint sums are finite")
}

/// CSV with header `id,S1..Sn,V1..Vn` and 12 significant digits.
pub fn write_fingerprint_csv<W: Write>(mut w: W, fps: &[Fingerprint]) -> Result<()> {
    let n = fps.first().map_or(0, |f| f.dim() / 2);
    let mut header = vec!["id".to_string()];
    header.extend((1..=n).map(|k| format!("S{k}")));
    header.extend((1..=n).map(|k| format!("V{k}")));
    writeln!(w, "{}", header.join(","))?;
    for (id, fp) in fps.iter().enumerate() {
        if fp.dim() != 2 * n {
            return Err(Error::DimensionMismatch {
                expected: 2 * n,
                got: fp.dim(),
            });
        }
        let vals: Vec<String> = fp.coords().iter().map(|x| format!("{x:.11e}")).collect();
        writeln!(w, "{id},{}", vals.join(","))?;
    }
    Ok(())
}
