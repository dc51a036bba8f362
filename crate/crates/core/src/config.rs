//! Run configuration: one JSON document drives every pipeline stage.

use serde::{Deserialize, Serialize};

use crate::acquisition::BoOptions;
use crate::agni::AgniParams;
use crate::crystal::RandomStructureOptions;
use crate::designs::LhdOptions;
use crate::error::{Error, Result};
use crate::expansion::ExpansionOptions;
use crate::problems::{LjParams, TestFunction, VectorProblem};
use crate::rng::{Stream, Streams};
use crate::surrogate::GpFitter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Sphere,
    Schwefel,
    Branin,
    LjCrystal,
}

impl ProblemKind {
    pub fn test_function(&self) -> Option<TestFunction> {
        match self {
            ProblemKind::Sphere => Some(TestFunction::Sphere),
            ProblemKind::Schwefel => Some(TestFunction::Schwefel),
            ProblemKind::Branin => Some(TestFunction::Branin),
            ProblemKind::LjCrystal => None,
        }
    }
}

/// Settings for the vector test problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct VectorSettings {
    /// Per-coordinate `[lo, hi]` of the initial design; defaults to the
    /// problem's sub-space box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_box: Option<Vec<(f64, f64)>>,
    /// Explicit initial set; replaces the maximin LHD.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_points: Option<Vec<Vec<f64>>>,
    pub initial_lhd: LhdOptions,
}

/// Settings for the Lennard-Jones crystal problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrystalSettings {
    pub n_atoms: usize,
    /// Reference volume per atom, Å³.
    pub v_ref: f64,
    /// Minimum interatomic separation of random structures, Å.
    pub min_sep: f64,
    /// Relative volume jitter of random structures.
    pub vol_jitter: f64,
    /// Maximum Cartesian displacement per atom when perturbing, Å.
    pub max_disp: f64,
    pub structures: RandomStructureOptions,
    pub agni: AgniParams,
    pub lj: LjParams,
    /// Set-size spacing of the nearest-neighbour distance curve.
    pub checkpoint_step: usize,
}

impl Default for CrystalSettings {
    fn default() -> Self {
        Self {
            n_atoms: 8,
            v_ref: 16.6,
            min_sep: 2.0,
            vol_jitter: 0.05,
            max_disp: 0.1,
            structures: RandomStructureOptions::default(),
            agni: AgniParams::default(),
            lj: LjParams::default(),
            checkpoint_step: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub replications: usize,
    /// `N1 = factor * p` for each listed factor.
    pub n1_factors: Vec<usize>,
    pub baseline_lhd: LhdOptions,
    /// Fraction of replications that must complete.
    pub min_completion: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            replications: 30,
            n1_factors: vec![50, 100],
            baseline_lhd: LhdOptions {
                restarts: 20,
                swaps: 2000,
            },
            min_completion: 0.9,
        }
    }
}

fn d_cadence() -> usize {
    10
}
fn d_stall() -> usize {
    10
}
fn d_cap() -> usize {
    50
}
fn d_initial() -> usize {
    10
}
fn d_rejections() -> usize {
    100_000
}
fn d_pcs() -> usize {
    3
}
fn d_t_ei() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    /// Fingerprint dimension. Required for sphere and schwefel; fixed for
    /// branin (2) and derived from the AGNI widths for crystals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default)]
    pub rng_seed: u64,
    /// Candidate-set size after non-adaptive expansion; default `100 p`.
    #[serde(default, rename = "N1_budget", skip_serializing_if = "Option::is_none")]
    pub n1_budget: Option<usize>,
    /// Initial set size; default `10 p` for vector problems, 30 for crystals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<usize>,
    #[serde(default = "d_cadence")]
    pub dft_cadence: usize,
    #[serde(default = "d_stall")]
    pub stall_limit: usize,
    #[serde(default = "d_cap")]
    pub cap_factor: usize,
    #[serde(default = "d_initial")]
    pub initial_factor: usize,
    #[serde(default = "d_rejections")]
    pub max_rejections: usize,
    #[serde(default = "d_pcs")]
    pub boundary_pcs: usize,
    #[serde(default = "d_t_ei", rename = "t_EI_factor")]
    pub t_ei_factor: f64,
    #[serde(default)]
    pub gp: GpFitter,
    #[serde(default)]
    pub vector: VectorSettings,
    #[serde(default)]
    pub lj_crystal: CrystalSettings,
    #[serde(default)]
    pub bench: BenchSettings,
}

impl RunConfig {
    /// A config with every default for `problem`.
    pub fn new(problem: ProblemKind, p: Option<usize>) -> Self {
        serde_json::from_value(serde_json::json!({ "problem": problem, "p": p }))
            .expect("defaults deserialize")
    }

    pub fn p(&self) -> usize {
        self.p.expect("resolved config")
    }

    pub fn n1(&self) -> usize {
        self.n1_budget.expect("resolved config")
    }

    pub fn initial_size(&self) -> usize {
        self.n0.expect("resolved config")
    }

    /// Fills derived defaults and validates. Idempotent.
    pub fn resolve(&self) -> Result<RunConfig> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let mut c = self.clone();
        let p = match self.problem {
            ProblemKind::Branin => match self.p {
                None | Some(2) => 2,
                Some(p) => return bad(format!("p: branin is defined for p = 2, got {p}")),
            },
            ProblemKind::LjCrystal => {
                self.lj_crystal.agni.validate()?;
                self.lj_crystal.lj.validate()?;
                let dim = self.lj_crystal.agni.dim();
                match self.p {
                    Some(p) if p != dim => {
                        return bad(format!(
                            "p: the AGNI widths give p = {dim}, config says {p}"
                        ))
                    }
                    _ => dim,
                }
            }
            _ => match (self.p, &self.vector.initial_points) {
                (Some(p), _) => p,
                (None, Some(pts)) if !pts.is_empty() => pts[0].len(),
                _ => return bad("p: required for sphere and schwefel".into()),
            },
        };
        if p == 0 {
            return bad("p: must be positive".into());
        }
        c.p = Some(p);
        let n0 = match (self.n0, &self.vector.initial_points) {
            (Some(n), _) => n,
            (None, Some(pts)) if self.problem != ProblemKind::LjCrystal => pts.len(),
            (None, _) if self.problem == ProblemKind::LjCrystal => 30,
            (None, _) => self.initial_factor * p,
        };
        if n0 < 2 {
            return bad(format!("n0: need at least 2 initial entries, got {n0}"));
        }
        if let Some(pts) = &self.vector.initial_points {
            if pts.len() != n0 {
                return bad(format!(
                    "n0: {n0} does not match {} initial_points",
                    pts.len()
                ));
            }
            if let Some(row) = pts.iter().position(|r| r.len() != p) {
                return bad(format!(
                    "vector.initial_points[{row}]: expected {p} coordinates"
                ));
            }
        }
        if let Some(b) = &self.vector.initial_box {
            if b.len() != p {
                return bad(format!(
                    "vector.initial_box: expected {p} intervals, got {}",
                    b.len()
                ));
            }
            if let Some(k) = b.iter().position(|(lo, hi)| !(lo < hi)) {
                return bad(format!("vector.initial_box[{k}]: empty interval"));
            }
        }
        c.n0 = Some(n0);
        let n1 = self.n1_budget.unwrap_or(100 * p);
        if n1 < n0 {
            return bad(format!(
                "N1_budget: {n1} is below the initial set size {n0}"
            ));
        }
        c.n1_budget = Some(n1);
        for (name, v) in [
            ("dft_cadence", self.dft_cadence),
            ("stall_limit", self.stall_limit),
            ("initial_factor", self.initial_factor),
            ("max_rejections", self.max_rejections),
            ("boundary_pcs", self.boundary_pcs),
        ] {
            if v == 0 {
                return bad(format!("{name}: must be positive"));
            }
        }
        if !(self.t_ei_factor > 0.0) {
            return bad("t_EI_factor: must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bench.min_completion) {
            return bad("bench.min_completion: must lie in [0, 1]".into());
        }
        Ok(c)
    }

    pub fn expansion_options(&self) -> ExpansionOptions {
        ExpansionOptions {
            max_rejections: self.max_rejections,
            oracle_cadence: self.dft_cadence,
            stall_window: self.stall_limit,
            cap_factor: self.cap_factor,
            initial_factor: self.initial_factor,
            boundary_pcs: self.boundary_pcs,
        }
    }

    pub fn bo_options(&self) -> BoOptions {
        BoOptions {
            t_ei_factor: self.t_ei_factor,
            max_iters: None,
            initial_factor: self.initial_factor,
        }
    }

    /// The surrogate fitter with its start seed drawn from the run's streams.
    pub fn gp_fitter(&self, streams: &Streams) -> GpFitter {
        let mut f = self.gp.clone();
        f.options.seed ^= streams.derived_seed(Stream::GpStarts);
        f
    }

    pub fn vector_problem(&self) -> Result<VectorProblem> {
        let f = self.problem.test_function().ok_or_else(|| {
            Error::InvalidArgument("problem: lj_crystal is not a vector problem".into())
        })?;
        VectorProblem::new(f, self.p())
    }

    /// Initial-design bounds for vector problems.
    pub fn initial_bounds(&self) -> Result<Vec<(f64, f64)>> {
        let prob = self.vector_problem()?;
        Ok(self
            .vector
            .initial_box
            .clone()
            .unwrap_or_else(|| vec![prob.initial_box; prob.dim]))
    }
}
