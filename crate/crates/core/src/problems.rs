//! Benchmark objectives, the Gaussian vector perturber and a periodic
//! Lennard-Jones energy used as a cheap stand-in for an expensive oracle.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agni::build_neighbor_list;
use crate::crystal::CrystalConfiguration;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::oracle::EnergyOracle;
use crate::rng::Rng;

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn schwefel(x: &[f64]) -> f64 {
    418.9829 * x.len() as f64 - x.iter().map(|v| v * v.abs().sqrt().sin()).sum::<f64>()
}

pub fn branin(x: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let (x1, x2) = (x[0], x[1]);
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    Sphere,
    Schwefel,
    Branin,
}

impl TestFunction {
    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Sphere => "sphere",
            TestFunction::Schwefel => "schwefel",
            TestFunction::Branin => "branin",
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Sphere => sphere(x),
            TestFunction::Schwefel => schwefel(x),
            TestFunction::Branin => branin(x),
        }
    }

    /// Full reporting domain `[lo, hi]` per coordinate.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            TestFunction::Sphere => (-5.12, 5.12),
            TestFunction::Schwefel => (-500.0, 500.0),
            TestFunction::Branin => (-5.0, 15.0),
        }
    }

    /// Sub-box the initial design is drawn from.
    pub fn initial_box(&self) -> (f64, f64) {
        match self {
            TestFunction::Sphere => (1.5, 4.0),
            TestFunction::Schwefel => (250.0, 400.0),
            TestFunction::Branin => (-5.0, 15.0),
        }
    }

    pub fn global_minimum(&self) -> f64 {
        match self {
            TestFunction::Sphere => 0.0,
            TestFunction::Schwefel => 0.0,
            TestFunction::Branin => 0.397_887_357_729_738,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorProblem {
    pub function: TestFunction,
    pub dim: usize,
    pub initial_box: (f64, f64),
}

impl VectorProblem {
    pub fn new(function: TestFunction, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "problem dimension must be positive".into(),
            ));
        }
        if function == TestFunction::Branin && dim != 2 {
            return Err(Error::InvalidArgument(format!(
                "branin is defined for p = 2, got p = {dim}"
            )));
        }
        Ok(Self {
            function,
            dim,
            initial_box: function.initial_box(),
        })
    }
}

impl<C> EnergyOracle<C> for VectorProblem {
    fn energy(&self, fingerprint: &Fingerprint, _: Option<&C>) -> Result<f64> {
        if fingerprint.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: fingerprint.dim(),
            });
        }
        Ok(self.function.eval(fingerprint.coords()))
    }
}

/// `x + sd * z` with independent standard normal `z`. The caller passes the
/// standard deviations, i.e. the square root of the covariance diagonal.
pub fn mvn_perturb(x: &[f64], diag_sd: &[f64], rng: &mut Rng) -> Vec<f64> {
    x.iter()
        .zip(diag_sd)
        .map(|(xi, sd)| {
            let z: f64 = StandardNormal.sample(rng);
            xi + sd * z
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LjParams {
    pub epsilon: f64,
    pub sigma: f64,
    pub cutoff: f64,
}

impl Default for LjParams {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            sigma: 2.5,
            cutoff: 8.0,
        }
    }
}

impl LjParams {
    pub fn validate(&self) -> Result<()> {
        if [self.epsilon, self.sigma, self.cutoff]
            .iter()
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "Lennard-Jones parameters must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn pair(&self, r: f64) -> f64 {
        let s6 = (self.sigma / r).powi(6);
        4.0 * self.epsilon * (s6 * s6 - s6)
    }

    /// The pair potential at the cutoff, subtracted from every pair term.
    pub fn cutoff_shift(&self) -> f64 {
        self.pair(self.cutoff)
    }

    /// Lattice constant of the FCC conventional cell minimizing the energy.
    pub fn optimal_fcc_edge(&self) -> f64 {
        golden_min(
            |a| lj_energy(&crate::crystal::fcc(a, "X"), self).unwrap_or(f64::INFINITY),
            1.2 * self.sigma,
            2.2 * self.sigma,
        )
    }
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Cell energy `1/2 sum_i sum_j [phi(r_ij) - phi(rc)]` over periodic
/// neighbors inside the cutoff.
pub fn lj_energy(cfg: &CrystalConfiguration, params: &LjParams) -> Result<f64> {
    params.validate()?;
    let nl = build_neighbor_list(cfg, params.cutoff)?;
    let shift = params.cutoff_shift();
    let mut e = 0.0;
    for (i, atom) in nl.neighbors.iter().enumerate() {
        for nb in atom {
            if nb.r < 0.1 * params.sigma {
                return Err(Error::Overlap {
                    i,
                    j: nb.j,
                    distance: nb.r,
                });
            }
            e += params.pair(nb.r) - shift;
        }
    }
    Ok(0.5 * e)
}

/// Lennard-Jones oracle over crystal configurations. Requires the source
/// configuration; the fingerprint alone cannot be inverted.
#[derive(Debug, Clone, Copy, Default)]
pub struct LjOracle {
    pub params: LjParams,
}

impl EnergyOracle<CrystalConfiguration> for LjOracle {
    fn energy(&self, _: &Fingerprint, source: Option<&CrystalConfiguration>) -> Result<f64> {
        let cfg = source
            .ok_or_else(|| Error::Oracle("crystal oracle needs a source configuration".into()))?;
        lj_energy(cfg, &self.params)
    }
}
