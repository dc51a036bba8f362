use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use expanse::acquisition::{bo_run, write_bo_trace_csv, BoState, BoStop};
use expanse::agni::{fingerprint, write_fingerprint_csv};
use expanse::config::{ProblemKind, RunConfig};
use expanse::crystal::CrystalConfiguration;
use expanse::expansion::AdaptiveStop;
use expanse::harness::{
    run_benchmark, run_crystal_demo, run_crystal_expansion, run_vector_expansion,
    write_demo_artifacts, write_expansion_artifacts, BenchmarkSpec, ExpansionRun,
};
use expanse::problems::LjOracle;
use expanse::xyz::{read_xyz_frames, write_xyz, write_xyz_frames};
use expanse::{CandidateSet, EnergyLedger, EnergyOracle, Stream, Streams};

const SCHEMAS: &str = "\
Config: one JSON object; unknown keys are rejected. Keys and defaults:
  problem          sphere | schwefel | branin | lj_crystal (required)
  p                dimension; required for sphere/schwefel, 2 for branin, 32 for lj_crystal
  rng_seed         0 (overridden by --seed)
  N1_budget        100 p
  n0               10 p (vector), 30 (lj_crystal), 0 for `optimize` on a plain candidate CSV
  dft_cadence 10, stall_limit 10, cap_factor 50, initial_factor 10,
  max_rejections 100000, boundary_pcs 3, t_EI_factor 1e-5
  gp               {options {starts, max_iters, seed, nugget_ratio 1e-8, isotropic, lengthscale_bounds, ...},
                    refit_starts 1, refit_max_iters 50}
  vector           {initial_box, initial_points, initial_lhd {restarts, swaps}}
  lj_crystal       {n_atoms 8, v_ref 16.6, min_sep 2.0, vol_jitter 0.05, max_disp 0.1,
                    structures {attempt_cap 10000, aspect_cap, angle_range, min_orthogonality, species},
                    agni {sigmas, cutoff 8.0}, lj {epsilon 1.0, sigma 2.5, cutoff}, checkpoint_step 50}
  bench            {replications 30, n1_factors [50, 100], baseline_lhd {restarts 20, swaps 2000},
                    min_completion 0.9}

Artifacts (CSV):
  candidates.csv   id,x1,...,xp
  trace.csv        attempt,accepted,t_before,d_min,set_size,phase,min_est_idx,oracle_calls
  ledger.csv       ordinal,phase,fingerprint_id,energy,best_so_far
  pca.csv          id,pc1,...,pck,energy_estimate
  bo_trace.csv     iter,chosen_id,max_ei,rel_ei,oracle_energy,best_so_far
  bench_result.csv problem,p,N1,replication,stage,min_value,oracle_calls
  nn_curve.csv     size,expansion_median_nn,random_median_nn
  fingerprints.csv id,S1,...,Sn,V1,...,Vn
Other: run_meta.json, best.json, bench_summary.json, report.json, structures.xyz, best.xyz

Exit codes: 0 success, 1 usage or config error, 2 algorithmic non-convergence.";

#[derive(Debug, Parser)]
#[command(name = "expanse", version, about = "Candidate-set expansion and discrete Bayesian optimization", after_help = SCHEMAS)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides `rng_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel regions (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Non-adaptive then adaptive expansion of the initial set.
    Expand {
        /// Stop after the geometry-only phase; no oracle calls.
        #[arg(long)]
        non_adaptive_only: bool,
    },
    /// Expected-improvement search over a candidate CSV.
    Optimize {
        candidates: PathBuf,
        /// Structures behind the candidates (lj_crystal); defaults to
        /// structures.xyz next to the candidate file.
        #[arg(long)]
        structures: Option<PathBuf>,
    },
    /// Replicated benchmark against a maximin LHD of matched size.
    Bench,
    /// AGNI fingerprints of every frame in an extended-XYZ file.
    Fingerprint { xyz: PathBuf },
    /// Full Lennard-Jones crystal pipeline.
    Demo,
}

enum Outcome {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("--threads")?;
    }
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::Expand { non_adaptive_only } => cmd_expand(cli, !non_adaptive_only),
        Command::Optimize {
            candidates,
            structures,
        } => cmd_optimize(cli, candidates, structures.as_deref()),
        Command::Bench => cmd_bench(cli),
        Command::Fingerprint { xyz } => cmd_fingerprint(cli, xyz),
        Command::Demo => cmd_demo(cli),
    }
}

fn parse_config(text: &str) -> anyhow::Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("at `{path}`: {}", e.into_inner())
    })
}

/// The parsed config with the `--seed` override, before derived defaults.
fn load_raw_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config is required"))?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg =
        parse_config(&text).with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    Ok(cfg)
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    Ok(load_raw_config(cli)?.resolve()?)
}

#[derive(Serialize)]
struct RunMeta<'a> {
    version: &'a str,
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_meta(cli: &Cli, command: &str, cfg: &RunConfig) -> anyhow::Result<()> {
    let meta = RunMeta {
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.rng_seed,
        config: cfg,
    };
    write_json(&cli.out, "run_meta.json", &meta)
}

fn write_structures(dir: &Path, set: &CandidateSet<CrystalConfiguration>) -> anyhow::Result<()> {
    let cfgs: Vec<&CrystalConfiguration> = set
        .entries()
        .iter()
        .map(|e| e.source.as_ref().expect("crystal entries carry structures"))
        .collect();
    let mut w = create(dir, "structures.xyz")?;
    write_xyz_frames(&mut w, &cfgs)?;
    w.flush()?;
    Ok(())
}

fn expansion_outcome<C>(cli: &Cli, run: &ExpansionRun<C>) -> anyhow::Result<Outcome> {
    let estimates = run
        .adaptive
        .as_ref()
        .map_or(&[][..], |a| &a.surrogate.estimates[..]);
    write_expansion_artifacts(&cli.out, run, estimates)?;
    info!(
        "expanded to {} entries with {} oracle calls",
        run.state.set.len(),
        run.ledger.len()
    );
    Ok(match run.adaptive.as_ref().map(|a| a.stop) {
        Some(AdaptiveStop::CapReached) => Outcome::NotConverged,
        _ => Outcome::Done,
    })
}

fn cmd_expand(cli: &Cli, adaptive: bool) -> anyhow::Result<Outcome> {
    let cfg = load_config(cli)?;
    write_meta(cli, "expand", &cfg)?;
    if cfg.problem == ProblemKind::LjCrystal {
        let run = run_crystal_expansion(&cfg, adaptive)?;
        write_structures(&cli.out, &run.state.set)?;
        expansion_outcome(cli, &run)
    } else {
        let run = run_vector_expansion(&cfg, adaptive)?;
        expansion_outcome(cli, &run)
    }
}

#[derive(Serialize)]
struct BestRecord<'a> {
    id: usize,
    coordinates: &'a [f64],
    energy: f64,
    stop: BoStop,
    iterations: usize,
    oracle_calls: usize,
}

fn optimize_set<C, O>(
    cli: &Cli,
    cfg: &RunConfig,
    set: &CandidateSet<C>,
    oracle: &O,
) -> anyhow::Result<(usize, BoStop)>
where
    C: Sync,
    O: EnergyOracle<C>,
{
    let streams = Streams::new(cfg.rng_seed);
    let fitter = cfg.gp_fitter(&streams);
    let opts = cfg.bo_options();
    let mut ledger = EnergyLedger::new();
    let mut rng = streams.rng(Stream::Acquisition);
    let n0 = cfg.n0.unwrap_or(0).min(set.len());
    let mut state = BoState::fresh(set, n0, oracle, &fitter, &mut ledger, &opts, &mut rng)?;
    let result = bo_run(set, &mut state, oracle, &fitter, &mut ledger, &opts);
    write_bo_trace_csv(create(&cli.out, "bo_trace.csv")?, &state.trace)?;
    ledger.write_csv(create(&cli.out, "ledger.csv")?)?;
    let stop = result?;
    let (id, energy) = state.best();
    let best = BestRecord {
        id,
        coordinates: set.coords(id),
        energy,
        stop,
        iterations: state.iterations,
        oracle_calls: ledger.len(),
    };
    write_json(&cli.out, "best.json", &best)?;
    info!(
        "best candidate {id} at {energy} after {} oracle calls",
        ledger.len()
    );
    Ok((id, stop))
}

fn cmd_optimize(
    cli: &Cli,
    candidates: &Path,
    structures: Option<&Path>,
) -> anyhow::Result<Outcome> {
    let raw = load_raw_config(cli)?;
    let mut cfg = raw.resolve()?;
    // Without an explicit n0 the candidate file has no designated initial entries.
    cfg.n0 = raw.n0;
    write_meta(cli, "optimize", &cfg)?;
    let file =
        File::open(candidates).with_context(|| format!("opening {}", candidates.display()))?;
    let set = CandidateSet::read_csv(BufReader::new(file))
        .with_context(|| format!("reading {}", candidates.display()))?;
    if set.is_empty() {
        bail!("{}: no candidate rows", candidates.display());
    }
    if set.dim() != cfg.p() {
        bail!(
            "{}: {} coordinate columns, the config has p = {}",
            candidates.display(),
            set.dim(),
            cfg.p()
        );
    }
    let stop = if cfg.problem == ProblemKind::LjCrystal {
        let path = structures.map(Path::to_path_buf).unwrap_or_else(|| {
            candidates
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("structures.xyz")
        });
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let frames = read_xyz_frames(BufReader::new(file))
            .with_context(|| format!("reading {}", path.display()))?;
        if frames.len() != set.len() {
            bail!(
                "{}: {} structures for {} candidates",
                path.display(),
                frames.len(),
                set.len()
            );
        }
        let mut crystals = CandidateSet::new(set.dim());
        for (e, c) in set.entries().iter().zip(frames) {
            crystals.add(e.fingerprint.clone(), Some(c))?;
        }
        let oracle = LjOracle {
            params: cfg.lj_crystal.lj,
        };
        let (id, stop) = optimize_set(cli, &cfg, &crystals, &oracle)?;
        let best = crystals
            .entry(id)
            .source
            .as_ref()
            .expect("structures attached");
        let mut w = create(&cli.out, "best.xyz")?;
        write_xyz(&mut w, best)?;
        w.flush()?;
        stop
    } else {
        let oracle = cfg.vector_problem()?;
        optimize_set(cli, &cfg, &set, &oracle)?.1
    };
    Ok(match stop {
        BoStop::Converged => Outcome::Done,
        BoStop::Exhausted => Outcome::NotConverged,
    })
}

fn cmd_bench(cli: &Cli) -> anyhow::Result<Outcome> {
    let cfg = load_config(cli)?;
    write_meta(cli, "bench", &cfg)?;
    let mut csv = create(&cli.out, "bench_result.csv")?;
    let mut summaries = Vec::new();
    for (k, &factor) in cfg.bench.n1_factors.iter().enumerate() {
        let spec = BenchmarkSpec::from_config(&cfg, factor)?;
        let result = run_benchmark(&spec);
        for r in &result.records {
            if let Some(e) = &r.error {
                log::warn!("N1={} replication {}: {e}", spec.n1, r.replication);
            }
        }
        result.write_csv(&mut csv, k == 0)?;
        summaries.push(result.summary(cfg.bench.min_completion));
    }
    csv.flush()?;
    write_json(&cli.out, "bench_summary.json", &summaries)?;
    Ok(if summaries.iter().all(|s| s.valid) {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn cmd_fingerprint(cli: &Cli, xyz: &Path) -> anyhow::Result<Outcome> {
    let cfg = match cli.config {
        Some(_) => load_config(cli)?,
        None => RunConfig::new(ProblemKind::LjCrystal, None).resolve()?,
    };
    write_meta(cli, "fingerprint", &cfg)?;
    let file = File::open(xyz).with_context(|| format!("opening {}", xyz.display()))?;
    let frames = read_xyz_frames(BufReader::new(file))
        .with_context(|| format!("reading {}", xyz.display()))?;
    let fps = frames
        .iter()
        .enumerate()
        .map(|(i, c)| fingerprint(c, &cfg.lj_crystal.agni).with_context(|| format!("frame {i}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut w = create(&cli.out, "fingerprints.csv")?;
    write_fingerprint_csv(&mut w, &fps)?;
    w.flush()?;
    Ok(Outcome::Done)
}

fn cmd_demo(cli: &Cli) -> anyhow::Result<Outcome> {
    let cfg = load_config(cli)?;
    write_meta(cli, "demo", &cfg)?;
    let demo = run_crystal_demo(&cfg)?;
    write_demo_artifacts(&cli.out, &demo)?;
    write_structures(&cli.out, &demo.run.state.set)?;
    let r = &demo.report;
    Ok(
        if r.adaptive_stop == AdaptiveStop::CapReached || r.bo_stop == BoStop::Exhausted {
            Outcome::NotConverged
        } else {
            Outcome::Done
        },
    )
}
