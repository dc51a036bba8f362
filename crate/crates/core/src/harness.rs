//! End-to-end runs: the vector and crystal pipelines, the benchmark study
//! with its baseline, and the crystal demo.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{bo_run, write_bo_trace_csv, BoState, BoStop};
use crate::agni::fingerprint;
use crate::candidates::CandidateSet;
use crate::config::{ProblemKind, RunConfig};
use crate::crystal::{
    min_pair_distance, perturb_structure, random_structure, CrystalConfiguration,
};
use crate::designs::{maximin_lhd, LhdOptions};
use crate::error::{Error, Result};
use crate::expansion::{
    initial_threshold, write_trace_csv, AdaptiveOutcome, AdaptiveStop, ExpansionOptions,
    ExpansionState, MvnPerturber, Perturber,
};
use crate::fingerprint::Fingerprint;
use crate::ledger::EnergyLedger;
use crate::oracle::EnergyOracle;
use crate::problems::{LjOracle, TestFunction, VectorProblem};
use crate::rng::{Rng, Stream, Streams};
use crate::setgeom::{pca_fit, write_pca_csv, PcaProjection};
use crate::surrogate::{GpFitter, GpModel};
use crate::xyz::write_xyz;

/// Perturbs the source structure's atoms and fingerprints the result.
/// Draws that bring two atoms closer than `min_sep` are redrawn, at most
/// `max_redraws` times.
#[derive(Debug, Clone)]
pub struct CrystalPerturber {
    pub max_disp: f64,
    pub min_sep: f64,
    pub max_redraws: usize,
    pub agni: crate::agni::AgniParams,
}

impl Perturber<CrystalConfiguration> for CrystalPerturber {
    fn perturb(
        &self,
        _: &Fingerprint,
        source: Option<&CrystalConfiguration>,
        rng: &mut Rng,
    ) -> Result<(Fingerprint, Option<CrystalConfiguration>)> {
        let src = source.ok_or_else(|| {
            Error::InvalidArgument("crystal entries need a source structure".into())
        })?;
        for _ in 0..=self.max_redraws {
            let cfg = perturb_structure(src, self.max_disp, rng);
            if min_pair_distance(&cfg) >= self.min_sep {
                return Ok((fingerprint(&cfg, &self.agni)?, Some(cfg)));
            }
        }
        Err(Error::InvalidArgument(format!(
            "no perturbation kept atoms {} apart after {} draws",
            self.min_sep, self.max_redraws
        )))
    }
}

/// Everything an expansion run leaves behind.
#[derive(Debug, Clone)]
pub struct ExpansionRun<C> {
    pub state: ExpansionState<C>,
    pub adaptive: Option<AdaptiveOutcome<GpModel>>,
    pub ledger: EnergyLedger,
}

impl<C> ExpansionRun<C> {
    /// A projection for the PCA export: the adaptive phase's when it has
    /// one, else a fresh fit on the final set.
    pub fn projection(&self) -> Result<PcaProjection> {
        if let Some(p) = self.adaptive.as_ref().and_then(|a| a.pca.clone()) {
            return Ok(p);
        }
        let k = self.state.set.dim().min(3);
        match pca_fit(&self.state.set, k) {
            Err(Error::RankDeficient { rank, .. }) if rank >= 1 => pca_fit(&self.state.set, rank),
            r => r,
        }
    }
}

/// Runs the geometry-only phase and, if asked, the adaptive phase.
pub fn expand<C, P, O>(
    set: CandidateSet<C>,
    perturber: &P,
    oracle: &O,
    cfg: &RunConfig,
    streams: &Streams,
    adaptive: bool,
) -> Result<ExpansionRun<C>>
where
    C: Clone + Sync,
    P: Perturber<C>,
    O: EnergyOracle<C>,
{
    let opts = cfg.expansion_options();
    let mut state = ExpansionState::new(set)?;
    let mut rng = streams.rng(Stream::Perturbation);
    state.expand_nonadaptive(perturber, cfg.n1(), &opts, &mut rng)?;
    let mut ledger = EnergyLedger::new();
    let adaptive = if adaptive {
        let fitter = cfg.gp_fitter(streams);
        Some(state.expand_adaptive(perturber, oracle, &fitter, &mut ledger, &opts, &mut rng)?)
    } else {
        None
    };
    Ok(ExpansionRun {
        state,
        adaptive,
        ledger,
    })
}

pub fn vector_set(points: &[Vec<f64>]) -> Result<CandidateSet<()>> {
    let dim = points.first().map_or(0, Vec::len);
    let mut set = CandidateSet::new(dim);
    for p in points {
        set.add(Fingerprint::new(p.clone())?, None)?;
    }
    Ok(set)
}

/// The initial vector set: explicit points or a maximin LHD in the
/// initial box.
pub fn initial_vector_set(cfg: &RunConfig, streams: &Streams) -> Result<CandidateSet<()>> {
    if let Some(pts) = &cfg.vector.initial_points {
        return vector_set(pts);
    }
    let bounds = cfg.initial_bounds()?;
    let mut rng = streams.rng(Stream::Initial);
    let design = maximin_lhd(
        cfg.initial_size(),
        &bounds,
        &cfg.vector.initial_lhd,
        &mut rng,
    )?;
    vector_set(&design.points)
}

/// Gaussian perturber whose covariance diagonal is the initial mean
/// nearest-neighbour distance.
pub fn vector_perturber(set: &CandidateSet<()>) -> MvnPerturber {
    MvnPerturber::isotropic(set.dim(), initial_threshold(set))
}

pub fn run_vector_expansion(cfg: &RunConfig, adaptive: bool) -> Result<ExpansionRun<()>> {
    let streams = Streams::new(cfg.rng_seed);
    let problem = cfg.vector_problem()?;
    let set = initial_vector_set(cfg, &streams)?;
    let pert = vector_perturber(&set);
    expand(set, &pert, &problem, cfg, &streams, adaptive)
}

/// `n` random structures with their fingerprints.
pub fn random_crystal_entries(
    cfg: &RunConfig,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<(Fingerprint, CrystalConfiguration)>> {
    let s = &cfg.lj_crystal;
    let structures = (0..n)
        .map(|_| {
            random_structure(
                s.v_ref,
                s.n_atoms,
                s.min_sep,
                s.vol_jitter,
                &s.structures,
                rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    structures
        .into_par_iter()
        .map(|c| Ok((fingerprint(&c, &s.agni)?, c)))
        .collect()
}

pub fn initial_crystal_set(
    cfg: &RunConfig,
    streams: &Streams,
) -> Result<CandidateSet<CrystalConfiguration>> {
    let mut rng = streams.rng(Stream::Initial);
    let mut set = CandidateSet::new(cfg.p());
    for (fp, c) in random_crystal_entries(cfg, cfg.initial_size(), &mut rng)? {
        set.add(fp, Some(c))?;
    }
    Ok(set)
}

pub fn run_crystal_expansion(
    cfg: &RunConfig,
    adaptive: bool,
) -> Result<ExpansionRun<CrystalConfiguration>> {
    let streams = Streams::new(cfg.rng_seed);
    let set = initial_crystal_set(cfg, &streams)?;
    let oracle = LjOracle {
        params: cfg.lj_crystal.lj,
    };
    expand(
        set,
        &crystal_perturber(cfg),
        &oracle,
        cfg,
        &streams,
        adaptive,
    )
}

pub fn crystal_perturber(cfg: &RunConfig) -> CrystalPerturber {
    CrystalPerturber {
        max_disp: cfg.lj_crystal.max_disp,
        min_sep: cfg.lj_crystal.min_sep,
        max_redraws: 10_000,
        agni: cfg.lj_crystal.agni.clone(),
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

// ---------------------------------------------------------------- benchmark

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub function: TestFunction,
    pub p: usize,
    pub n1: usize,
    pub replications: usize,
    pub seed: u64,
    pub initial_lhd: LhdOptions,
    pub baseline_lhd: LhdOptions,
    pub expansion: ExpansionOptions,
    pub gp: GpFitter,
}

impl BenchmarkSpec {
    /// Benchmark settings for one `N1` factor of a resolved config.
    pub fn from_config(cfg: &RunConfig, n1_factor: usize) -> Result<Self> {
        let function = cfg.problem.test_function().ok_or_else(|| {
            Error::InvalidArgument("problem: the benchmark needs a vector problem".into())
        })?;
        Ok(Self {
            function,
            p: cfg.p(),
            n1: n1_factor * cfg.p(),
            replications: cfg.bench.replications,
            seed: cfg.rng_seed,
            initial_lhd: cfg.vector.initial_lhd,
            baseline_lhd: cfg.bench.baseline_lhd,
            expansion: cfg.expansion_options(),
            gp: cfg.gp.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initial,
    NonAdaptive,
    Adaptive,
    Baseline,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Initial,
        Stage::NonAdaptive,
        Stage::Adaptive,
        Stage::Baseline,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Initial => "initial",
            Stage::NonAdaptive => "nonadaptive",
            Stage::Adaptive => "adaptive",
            Stage::Baseline => "baseline",
        }
    }
}

/// True-function minima over each stage's set. These reporting evaluations
/// are not oracle calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageMinima {
    pub initial: f64,
    pub nonadaptive: f64,
    pub adaptive: f64,
    pub baseline: f64,
}

impl StageMinima {
    pub fn get(&self, s: Stage) -> f64 {
        match s {
            Stage::Initial => self.initial,
            Stage::NonAdaptive => self.nonadaptive,
            Stage::Adaptive => self.adaptive,
            Stage::Baseline => self.baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub n2: usize,
    pub stop: AdaptiveStop,
    pub minima: StageMinima,
    /// Ledger-counted oracle calls of the pipeline.
    pub oracle_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<ReplicationOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub spec: BenchmarkSpec,
    pub records: Vec<ReplicationRecord>,
}

fn set_minimum<C>(set: &CandidateSet<C>, range: std::ops::Range<usize>, f: TestFunction) -> f64 {
    range
        .map(|i| f.eval(set.coords(i)))
        .fold(f64::INFINITY, f64::min)
}

pub fn run_replication(spec: &BenchmarkSpec, r: usize) -> Result<ReplicationOutcome> {
    let streams = Streams::new(spec.seed).replication(r as u64);
    let problem = VectorProblem::new(spec.function, spec.p)?;
    let bounds = vec![problem.initial_box; spec.p];
    let n0 = spec.expansion.initial_factor * spec.p;
    let design = maximin_lhd(
        n0,
        &bounds,
        &spec.initial_lhd,
        &mut streams.rng(Stream::Initial),
    )?;
    let set = vector_set(&design.points)?;
    let pert = vector_perturber(&set);
    let mut state = ExpansionState::new(set)?;
    let mut rng = streams.rng(Stream::Perturbation);
    state.expand_nonadaptive(&pert, spec.n1, &spec.expansion, &mut rng)?;
    let mut fitter = spec.gp.clone();
    fitter.options.seed ^= streams.derived_seed(Stream::GpStarts);
    let mut ledger = EnergyLedger::new();
    let out = state.expand_adaptive(
        &pert,
        &problem,
        &fitter,
        &mut ledger,
        &spec.expansion,
        &mut rng,
    )?;
    let n2 = state.set.len();
    let baseline = maximin_lhd(
        n2,
        &bounds,
        &spec.baseline_lhd,
        &mut streams.rng(Stream::Baseline),
    )?;
    let f = spec.function;
    let minima = StageMinima {
        initial: set_minimum(&state.set, 0..n0, f),
        nonadaptive: set_minimum(&state.set, 0..spec.n1, f),
        adaptive: set_minimum(&state.set, 0..n2, f),
        baseline: baseline
            .points
            .iter()
            .map(|x| f.eval(x))
            .fold(f64::INFINITY, f64::min),
    };
    Ok(ReplicationOutcome {
        n2,
        stop: out.stop,
        minima,
        oracle_calls: ledger.len(),
    })
}

/// Runs every replication in parallel; failures are recorded, not fatal.
pub fn run_benchmark(spec: &BenchmarkSpec) -> BenchmarkResult {
    let records = (0..spec.replications)
        .into_par_iter()
        .map(|r| match run_replication(spec, r) {
            Ok(o) => ReplicationRecord {
                replication: r,
                outcome: Some(o),
                error: None,
            },
            Err(e) => {
                warn!(
                    "{} p={} N1={} replication {r} failed: {e}",
                    spec.function.name(),
                    spec.p,
                    spec.n1
                );
                ReplicationRecord {
                    replication: r,
                    outcome: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    BenchmarkResult {
        spec: spec.clone(),
        records,
    }
}

impl BenchmarkResult {
    pub fn completed(&self) -> Vec<&ReplicationOutcome> {
        self.records
            .iter()
            .filter_map(|r| r.outcome.as_ref())
            .collect()
    }

    pub fn median(&self, s: Stage) -> f64 {
        median(
            &self
                .completed()
                .iter()
                .map(|o| o.minima.get(s))
                .collect::<Vec<_>>(),
        )
    }

    pub fn summary(&self, min_completion: f64) -> BenchSummary {
        let done = self.completed();
        let n = self.records.len();
        let escape_reference = if self.spec.p == 2 {
            let b = self.spec.function.initial_box();
            Some(grid_minimum_2d(self.spec.function, b, b, 1000))
        } else {
            None
        };
        BenchSummary {
            problem: self.spec.function.name().to_string(),
            p: self.spec.p,
            n1: self.spec.n1,
            replications: n,
            completed: done.len(),
            cap_reached: done
                .iter()
                .filter(|o| o.stop == AdaptiveStop::CapReached)
                .count(),
            valid: done.len() as f64 >= min_completion * n as f64,
            median_initial: self.median(Stage::Initial),
            median_nonadaptive: self.median(Stage::NonAdaptive),
            median_adaptive: self.median(Stage::Adaptive),
            median_baseline: self.median(Stage::Baseline),
            median_n2: median(&done.iter().map(|o| o.n2 as f64).collect::<Vec<_>>()),
            adaptive_beats_baseline: self.median(Stage::Adaptive) < self.median(Stage::Baseline),
            stages_monotone: done.iter().all(|o| {
                o.minima.initial >= o.minima.nonadaptive
                    && o.minima.nonadaptive >= o.minima.adaptive
            }),
            box_minimum: escape_reference,
            escaped_box: escape_reference
                .map(|m| done.iter().filter(|o| o.minima.adaptive < m).count()),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "problem,p,N1,replication,stage,min_value,oracle_calls")?;
        }
        for r in &self.records {
            let Some(o) = &r.outcome else { continue };
            for s in Stage::ALL {
                let calls = if s == Stage::Adaptive {
                    o.oracle_calls
                } else {
                    0
                };
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    self.spec.function.name(),
                    self.spec.p,
                    self.spec.n1,
                    r.replication,
                    s.name(),
                    o.minima.get(s),
                    calls
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub problem: String,
    pub p: usize,
    #[serde(rename = "N1")]
    pub n1: usize,
    pub replications: usize,
    pub completed: usize,
    pub cap_reached: usize,
    /// Enough replications completed for the medians to count.
    pub valid: bool,
    pub median_initial: f64,
    pub median_nonadaptive: f64,
    pub median_adaptive: f64,
    pub median_baseline: f64,
    pub median_n2: f64,
    pub adaptive_beats_baseline: bool,
    pub stages_monotone: bool,
    /// Grid minimum of the function over the initial box (p = 2 only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_minimum: Option<f64>,
    /// Replications whose adaptive-stage minimum is below `box_minimum`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub escaped_box: Option<usize>,
}

/// Paired replications where the larger budget's adaptive minimum is no
/// worse: `(wins, pairs)`.
pub fn paired_budget_wins(small: &BenchmarkResult, large: &BenchmarkResult) -> (usize, usize) {
    let mut wins = 0;
    let mut pairs = 0;
    for (a, b) in small.records.iter().zip(&large.records) {
        if let (Some(a), Some(b)) = (&a.outcome, &b.outcome) {
            pairs += 1;
            wins += (b.minima.adaptive <= a.minima.adaptive) as usize;
        }
    }
    (wins, pairs)
}

/// Minimum of `f` on an `n x n` grid spanning the box, endpoints included.
pub fn grid_minimum_2d(f: TestFunction, xb: (f64, f64), yb: (f64, f64), n: usize) -> f64 {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let x = xb.0 + (xb.1 - xb.0) * i as f64 / (n - 1) as f64;
            (0..n)
                .map(|j| f.eval(&[x, yb.0 + (yb.1 - yb.0) * j as f64 / (n - 1) as f64]))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min)
}

// --------------------------------------------------------------- crystal demo

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub expansion: f64,
    pub random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub p: usize,
    pub n0: usize,
    #[serde(rename = "N1")]
    pub n1: usize,
    #[serde(rename = "N2")]
    pub n2: usize,
    pub adaptive_stop: AdaptiveStop,
    pub bo_stop: BoStop,
    pub n3: usize,
    pub oracle_calls: usize,
    /// `max(n0, 10p) + floor(n2 / 10) + n3`.
    pub expected_oracle_calls: usize,
    pub best_index: usize,
    pub best_energy: f64,
    pub initial_min_energy: f64,
    pub curve: Vec<CurvePoint>,
    /// Expansion median nn distance exceeds the random baseline at every
    /// checkpoint from `N1 / 2` on.
    pub curve_dominates: bool,
}

#[derive(Debug, Clone)]
pub struct DemoRun {
    pub run: ExpansionRun<CrystalConfiguration>,
    pub bo: BoState<GpModel>,
    pub report: DemoReport,
}

/// Median nearest-neighbour distance of each prefix of `fps` whose size is
/// listed in `sizes` (ascending).
pub fn median_nn_curve<'a, I>(fps: I, dim: usize, sizes: &[usize]) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a Fingerprint>,
{
    let mut set: CandidateSet<()> = CandidateSet::new(dim);
    let mut out = Vec::with_capacity(sizes.len());
    let mut next = sizes.iter().peekable();
    for fp in fps {
        set.add(fp.clone(), None)?;
        while next.peek().is_some_and(|&&s| s == set.len()) {
            out.push(median(set.nn_dist()));
            next.next();
        }
    }
    Ok(out)
}

fn checkpoints(n0: usize, n1: usize, step: usize) -> Vec<usize> {
    let step = step.max(1);
    let mut v: Vec<usize> = (1..)
        .map(|k| k * step)
        .skip_while(|&s| s < n0.max(2))
        .take_while(|&s| s < n1)
        .collect();
    v.push(n1);
    v
}

/// Random structures, expansion, adaptive phase and optimization on the
/// Lennard-Jones crystal problem.
pub fn run_crystal_demo(cfg: &RunConfig) -> Result<DemoRun> {
    if cfg.problem != ProblemKind::LjCrystal {
        return Err(Error::InvalidArgument(
            "problem: the demo needs lj_crystal".into(),
        ));
    }
    let streams = Streams::new(cfg.rng_seed);
    let n0 = cfg.initial_size();
    let oracle = LjOracle {
        params: cfg.lj_crystal.lj,
    };
    let mut run = run_crystal_expansion(cfg, true)?;
    let fitter = cfg.gp_fitter(&streams);
    let adaptive = run.adaptive.as_ref().expect("adaptive phase ran");
    let mut bo = BoState::seeded(adaptive.surrogate.clone());
    let bo_stop = bo_run(
        &run.state.set,
        &mut bo,
        &oracle,
        &fitter,
        &mut run.ledger,
        &cfg.bo_options(),
    )?;
    let adaptive = run.adaptive.as_ref().expect("adaptive phase ran");

    let n1 = cfg.n1();
    let sizes = checkpoints(n0, n1, cfg.lj_crystal.checkpoint_step);
    let ours = median_nn_curve(run.state.set.fingerprints().take(n1), cfg.p(), &sizes)?;
    let mut rng = streams.rng(Stream::RandomSearch);
    let extra = random_crystal_entries(cfg, n1 - n0, &mut rng)?;
    let random_fps = run
        .state
        .set
        .fingerprints()
        .take(n0)
        .chain(extra.iter().map(|e| &e.0));
    let random = median_nn_curve(random_fps, cfg.p(), &sizes)?;
    let curve: Vec<CurvePoint> = sizes
        .iter()
        .zip(ours.iter().zip(&random))
        .map(|(&size, (&expansion, &random))| CurvePoint {
            size,
            expansion,
            random,
        })
        .collect();
    let curve_dominates = curve
        .iter()
        .filter(|c| 2 * c.size >= n1)
        .all(|c| c.expansion > c.random);

    let (best_index, best_energy) = bo.best();
    let n2 = run.state.set.len();
    let initial_min_energy = adaptive.surrogate.energies[..n0]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let n_init = n0.max(cfg.initial_factor * cfg.p()).min(n1);
    let report = DemoReport {
        p: cfg.p(),
        n0,
        n1,
        n2,
        adaptive_stop: adaptive.stop,
        bo_stop,
        n3: bo.iterations,
        oracle_calls: run.ledger.len(),
        expected_oracle_calls: n_init + (n2 - n1) / cfg.dft_cadence + bo.iterations,
        best_index,
        best_energy,
        initial_min_energy,
        curve,
        curve_dominates,
    };
    info!(
        "demo: best entry {best_index} at {best_energy:.6} eV (initial best {initial_min_energy:.6}), {} oracle calls",
        report.oracle_calls
    );
    Ok(DemoRun { run, bo, report })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Candidate, trace, ledger and PCA CSVs of an expansion run.
pub fn write_expansion_artifacts<C>(
    dir: &Path,
    run: &ExpansionRun<C>,
    estimates: &[f64],
) -> Result<()> {
    run.state.set.write_csv(create(dir, "candidates.csv")?)?;
    write_trace_csv(create(dir, "trace.csv")?, &run.state.trace)?;
    run.ledger.write_csv(create(dir, "ledger.csv")?)?;
    write_pca_csv(
        create(dir, "pca.csv")?,
        &run.state.set,
        &run.projection()?,
        estimates,
    )?;
    Ok(())
}

pub fn write_demo_artifacts(dir: &Path, demo: &DemoRun) -> Result<()> {
    write_expansion_artifacts(dir, &demo.run, &demo.bo.surrogate.estimates)?;
    write_bo_trace_csv(create(dir, "bo_trace.csv")?, &demo.bo.trace)?;
    let best = demo.run.state.set.entry(demo.report.best_index);
    write_xyz(
        create(dir, "best.xyz")?,
        best.source
            .as_ref()
            .expect("crystal entries carry structures"),
    )?;
    let mut w = create(dir, "nn_curve.csv")?;
    writeln!(w, "size,expansion_median_nn,random_median_nn")?;
    for c in &demo.report.curve {
        writeln!(w, "{},{},{}", c.size, c.expansion, c.random)?;
    }
    let mut w = create(dir, "report.json")?;
    serde_json::to_writer_pretty(&mut w, &demo.report).map_err(std::io::Error::from)?;
    writeln!(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn checkpoint_sizes() {
        assert_eq!(checkpoints(30, 200, 50), vec![50, 100, 150, 200]);
        assert_eq!(checkpoints(30, 100, 50), vec![50, 100]);
        assert_eq!(checkpoints(60, 100, 50), vec![100]);
    }

    #[test]
    fn nn_curve_prefixes() {
        let fps: Vec<Fingerprint> = [0.0, 1.0, 3.0, 7.0]
            .iter()
            .map(|&x| Fingerprint::new(vec![x]).unwrap())
            .collect();
        // prefixes: {0,1} -> [1,1]; {0,1,3} -> [1,1,2]; all -> [1,1,2,4]
        let c = median_nn_curve(&fps, 1, &[2, 3, 4]).unwrap();
        assert_eq!(c, vec![1.0, 1.0, 1.5]);
    }

    #[test]
    fn grid_minimum_of_sphere_box() {
        let m = grid_minimum_2d(TestFunction::Sphere, (1.5, 4.0), (1.5, 4.0), 101);
        assert!((m - 4.5).abs() < 1e-12);
    }

    #[test]
    fn small_benchmark_is_monotone_and_reproducible() {
        let mut cfg = RunConfig::new(ProblemKind::Sphere, Some(2))
            .resolve()
            .unwrap();
        cfg.bench.replications = 3;
        let spec = BenchmarkSpec::from_config(&cfg, 50).unwrap();
        let a = run_benchmark(&spec);
        let b = run_benchmark(&spec);
        assert_eq!(a, b);
        let s = a.summary(0.9);
        assert_eq!(s.completed, 3);
        assert!(s.stages_monotone);
        for o in a.completed() {
            assert_eq!(o.oracle_calls, 20 + (o.n2 - 100) / 10);
        }
        let mut buf = Vec::new();
        a.write_csv(&mut buf, true).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 4);
    }
}
