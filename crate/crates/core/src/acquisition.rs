//! Expected improvement over a finite candidate set and the discrete
//! Bayesian-optimization loop.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::Write;

use log::{debug, info};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::candidates::CandidateSet;
use crate::error::{Error, Result};
use crate::expansion::{evaluate_entries, fit_on, initial_design, EvaluatedSet};
use crate::ledger::{EnergyLedger, Phase};
use crate::oracle::EnergyOracle;
use crate::rng::Rng;
use crate::surrogate::{Surrogate, SurrogateFitter};

/// Floor on |e_min| in the relative stopping rule.
pub const REL_EI_FLOOR: f64 = 1e-12;

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `z Φ(z) + φ(z)`, the expected improvement per unit sd.
fn ei_unit(z: f64) -> f64 {
    if z > -5.0 {
        return (z * normal_cdf(z) + normal_pdf(z)).max(0.0);
    }
    // Lower tail: with x = -z, 1 - x R(x) = T / (x + T) where R is the Mills
    // ratio and T = 1/(x + 2/(x + 3/(x + ...))). Avoids the cancellation.
    let x = -z;
    let mut t = 0.0;
    for k in (2..=60).rev() {
        t = k as f64 / (x + t);
    }
    let t = 1.0 / (x + t);
    normal_pdf(z) * t / (x + t)
}

/// Expected improvement of a normal prediction below `e_min`.
pub fn expected_improvement(mean: f64, sd: f64, e_min: f64) -> f64 {
    let gain = e_min - mean;
    if sd <= 0.0 {
        return gain.max(0.0);
    }
    sd * ei_unit(gain / sd)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EiChoice {
    pub index: usize,
    pub max_ei: f64,
    /// Every candidate scored exactly zero; `index` is then the lowest
    /// unevaluated entry.
    pub zero_ei: bool,
}

/// EI for every entry of the set.
pub fn ei_scan<C: Sync, M: Surrogate>(
    set: &CandidateSet<C>,
    model: &M,
    e_min: f64,
) -> Vec<(f64, f64)> {
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let (m, s) = model.predict(set.coords(i));
            (expected_improvement(m, s, e_min), m)
        })
        .collect()
}

fn choose(ei: &[f64], evaluated: &[bool]) -> Result<EiChoice> {
    let Some(first_open) = evaluated.iter().position(|&e| !e) else {
        return Err(Error::InvalidArgument(
            "every candidate has been evaluated".into(),
        ));
    };
    let mut best = 0;
    for (i, &v) in ei.iter().enumerate() {
        if v > ei[best] {
            best = i;
        }
    }
    if ei[best] == 0.0 {
        return Ok(EiChoice {
            index: first_open,
            max_ei: 0.0,
            zero_ei: true,
        });
    }
    Ok(EiChoice {
        index: best,
        max_ei: ei[best],
        zero_ei: false,
    })
}

/// The oracle is deterministic, so an evaluated entry's energy is known
/// exactly and its improvement over `e_min` is zero.
fn measured_ei(scan: &[(f64, f64)], evaluated: &[bool]) -> Vec<f64> {
    scan.iter()
        .zip(evaluated)
        .map(|(s, &done)| if done { 0.0 } else { s.0 })
        .collect()
}

/// Index of the largest EI over the whole set, lowest index on ties.
pub fn argmax_ei<C: Sync, M: Surrogate>(
    model: &M,
    set: &CandidateSet<C>,
    evaluated: &[usize],
    e_min: f64,
) -> Result<EiChoice> {
    let mut mask = vec![false; set.len()];
    for &i in evaluated {
        *mask.get_mut(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: set.len(),
        })? = true;
    }
    choose(&measured_ei(&ei_scan(set, model, e_min), &mask), &mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoOptions {
    /// Stop once max EI / max(|e_min|, 1e-12) drops to this.
    pub t_ei_factor: f64,
    /// Iteration cap; defaults to the candidate-set size.
    pub max_iters: Option<usize>,
    /// Fresh runs evaluate `initial_factor * p` entries first.
    pub initial_factor: usize,
}

impl Default for BoOptions {
    fn default() -> Self {
        Self {
            t_ei_factor: 1e-5,
            max_iters: None,
            initial_factor: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoStop {
    /// Relative EI fell to the threshold.
    Converged,
    /// Iteration cap hit or nothing left to evaluate.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoTraceRow {
    pub iter: usize,
    /// `None` on the final row, where no evaluation followed.
    pub chosen_id: Option<usize>,
    pub max_ei: f64,
    pub rel_ei: f64,
    pub oracle_energy: Option<f64>,
    pub best_so_far: f64,
}

pub fn write_bo_trace_csv<W: Write>(mut w: W, rows: &[BoTraceRow]) -> Result<()> {
    writeln!(w, "iter,chosen_id,max_ei,rel_ei,oracle_energy,best_so_far")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:e},{:e},{},{}",
            r.iter,
            r.chosen_id.map(|i| i.to_string()).unwrap_or_default(),
            r.max_ei,
            r.rel_ei,
            r.oracle_energy.map(|e| e.to_string()).unwrap_or_default(),
            r.best_so_far
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BoState<M> {
    pub surrogate: EvaluatedSet<M>,
    pub iterations: usize,
    /// Max EI seen at each scan, including the final one.
    pub ei_trace: Vec<f64>,
    pub trace: Vec<BoTraceRow>,
    pub stop: Option<BoStop>,
}

impl<M> BoState<M> {
    /// Continues from the adaptive phase's evaluations and model.
    pub fn seeded(surrogate: EvaluatedSet<M>) -> Self {
        Self {
            surrogate,
            iterations: 0,
            ei_trace: Vec::new(),
            trace: Vec::new(),
            stop: None,
        }
    }

    /// Lowest measured energy and its entry.
    pub fn best(&self) -> (usize, f64) {
        self.surrogate
            .best()
            .expect("a BO state always holds evaluations")
    }

    pub fn new_evaluations(&self) -> usize {
        self.trace
            .iter()
            .filter(|r| r.oracle_energy.is_some())
            .count()
    }
}

impl<M: Surrogate> BoState<M> {
    /// Starts without an adaptive phase: evaluates the first `n0` entries
    /// MaxPro-augmented to `initial_factor * p`, then fits. With `n0 = 0`
    /// the design is anchored at an entry drawn from `rng`.
    pub fn fresh<C, O, F>(
        set: &CandidateSet<C>,
        n0: usize,
        oracle: &O,
        fitter: &F,
        ledger: &mut EnergyLedger,
        opts: &BoOptions,
        rng: &mut Rng,
    ) -> Result<Self>
    where
        C: Sync,
        O: EnergyOracle<C>,
        F: SurrogateFitter<Model = M>,
    {
        if set.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "optimization needs at least 2 candidates, got {}",
                set.len()
            )));
        }
        let target = (opts.initial_factor * set.dim()).clamp(2, set.len());
        let ids = if n0 == 0 {
            let anchor = rng.random_range(0..set.len());
            let rest: Vec<usize> = (0..set.len()).filter(|&i| i != anchor).collect();
            let pool: Vec<Vec<f64>> = rest.iter().map(|&i| set.coords(i).to_vec()).collect();
            let picked =
                crate::designs::maxpro_augment(&[set.coords(anchor).to_vec()], &pool, target - 1)?;
            std::iter::once(anchor)
                .chain(picked.into_iter().map(|j| rest[j]))
                .collect()
        } else {
            initial_design(set, n0, target)?
        };
        let energies = evaluate_entries(set, &ids, oracle, ledger, Phase::Initial)?;
        let model = fit_on(set, &ids, &energies, fitter, None)?;
        Ok(Self::seeded(EvaluatedSet {
            model,
            evaluated: ids,
            energies,
            estimates: Vec::new(),
        }))
    }
}

/// Runs EI iterations until the relative EI is negligible. On an oracle or
/// fitting error the state keeps everything done so far.
pub fn bo_run<C, O, F>(
    set: &CandidateSet<C>,
    state: &mut BoState<F::Model>,
    oracle: &O,
    fitter: &F,
    ledger: &mut EnergyLedger,
    opts: &BoOptions,
) -> Result<BoStop>
where
    C: Sync,
    O: EnergyOracle<C>,
    F: SurrogateFitter,
{
    let cap = opts.max_iters.unwrap_or(set.len());
    let mut evaluated = vec![false; set.len()];
    for &i in &state.surrogate.evaluated {
        *evaluated.get_mut(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: set.len(),
        })? = true;
    }
    let stop = loop {
        let (_, e_min) = state.best();
        let scan = ei_scan(set, &state.surrogate.model, e_min);
        let ei = measured_ei(&scan, &evaluated);
        state.surrogate.estimates = scan.iter().map(|s| s.1).collect();
        let choice = choose(&ei, &evaluated).ok();
        let max_ei = choice.map_or(0.0, |c| c.max_ei);
        let rel_ei = max_ei / e_min.abs().max(REL_EI_FLOOR);
        state.ei_trace.push(max_ei);
        let stop = match choice {
            None => Some(BoStop::Exhausted),
            Some(_) if rel_ei <= opts.t_ei_factor => Some(BoStop::Converged),
            Some(_) if state.iterations >= cap => Some(BoStop::Exhausted),
            Some(_) => None,
        };
        if let Some(stop) = stop {
            state.trace.push(BoTraceRow {
                iter: state.iterations + 1,
                chosen_id: None,
                max_ei,
                rel_ei,
                oracle_energy: None,
                best_so_far: e_min,
            });
            break stop;
        }
        let pick = choice.expect("checked above").index;
        let e = evaluate_entries(set, &[pick], oracle, ledger, Phase::Bo)?[0];
        evaluated[pick] = true;
        state.iterations += 1;
        state.surrogate.evaluated.push(pick);
        state.surrogate.energies.push(e);
        state.trace.push(BoTraceRow {
            iter: state.iterations,
            chosen_id: Some(pick),
            max_ei,
            rel_ei,
            oracle_energy: Some(e),
            best_so_far: e_min.min(e),
        });
        debug!(
            "bo iteration {}: entry {pick}, EI {max_ei:.3e}, energy {e}",
            state.iterations
        );
        state.surrogate.model = fit_on(
            set,
            &state.surrogate.evaluated,
            &state.surrogate.energies,
            fitter,
            Some(&state.surrogate.model),
        )?;
    };
    state.stop = Some(stop);
    let (best, e) = state.best();
    info!(
        "optimization stopped ({stop:?}) after {} iterations; best entry {best} at {e}",
        state.iterations
    );
    Ok(stop)
}
