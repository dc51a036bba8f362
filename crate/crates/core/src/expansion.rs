//! Candidate-set expansion: geometry-only growth toward sparse regions, then
//! surrogate-guided growth from the low-energy boundary.

use std::fmt;
use std::io::Write;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::designs::maxpro_augment;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::ledger::{EnergyLedger, Phase};
use crate::oracle::EnergyOracle;
use crate::problems::mvn_perturb;
use crate::rng::Rng;
use crate::setgeom::{
    max_nn_distance, pca_fit, BoundaryClassifier, DirectionalCache, PcaProjection,
};
use crate::surrogate::{Surrogate, SurrogateFitter};

/// Produces a new fingerprint (and configuration, if any) near an existing
/// entry by perturbing in input space.
pub trait Perturber<C>: Sync {
    fn perturb(
        &self,
        fingerprint: &Fingerprint,
        source: Option<&C>,
        rng: &mut Rng,
    ) -> Result<(Fingerprint, Option<C>)>;
}

/// Gaussian perturbation directly in fingerprint space.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnPerturber {
    pub sd: Vec<f64>,
}

impl MvnPerturber {
    /// Standard deviations `sqrt(variance)` for every coordinate.
    pub fn isotropic(dim: usize, variance: f64) -> Self {
        Self {
            sd: vec![variance.sqrt(); dim],
        }
    }
}

impl<C> Perturber<C> for MvnPerturber {
    fn perturb(
        &self,
        fingerprint: &Fingerprint,
        _: Option<&C>,
        rng: &mut Rng,
    ) -> Result<(Fingerprint, Option<C>)> {
        let x = mvn_perturb(fingerprint.coords(), &self.sd, rng);
        Ok((Fingerprint::new(x)?, None))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpansionPhase {
    NonAdaptive,
    Adaptive,
}

impl fmt::Display for ExpansionPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpansionPhase::NonAdaptive => "nonadaptive",
            ExpansionPhase::Adaptive => "adaptive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub attempt: usize,
    pub accepted: bool,
    pub t_before: f64,
    pub d_min: f64,
    pub set_size: usize,
    pub phase: ExpansionPhase,
    pub min_est_idx: Option<usize>,
    pub oracle_calls: usize,
}

pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> Result<()> {
    writeln!(
        w,
        "attempt,accepted,t_before,d_min,set_size,phase,min_est_idx,oracle_calls"
    )?;
    for r in rows {
        let idx = r.min_est_idx.map_or(String::new(), |i| i.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.attempt,
            r.accepted as u8,
            r.t_before,
            r.d_min,
            r.set_size,
            r.phase,
            idx,
            r.oracle_calls
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionOptions {
    /// Consecutive rejections before giving up.
    pub max_rejections: usize,
    /// Accepted additions between oracle calls in the adaptive phase.
    pub oracle_cadence: usize,
    /// Oracle calls over which the minimum-estimate entry must not change.
    pub stall_window: usize,
    /// Adaptive additions are capped at `cap_factor * p`.
    pub cap_factor: usize,
    /// Initial oracle design size is `initial_factor * p`.
    pub initial_factor: usize,
    /// Principal components used by the boundary test when `p` exceeds it.
    pub boundary_pcs: usize,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        Self {
            max_rejections: 100_000,
            oracle_cadence: 10,
            stall_window: 10,
            cap_factor: 50,
            initial_factor: 10,
            boundary_pcs: 3,
        }
    }
}

/// Mean nearest-neighbor distance of the set.
pub fn initial_threshold<C>(set: &CandidateSet<C>) -> f64 {
    let d = set.nn_dist();
    d.iter().sum::<f64>() / d.len() as f64
}

pub fn threshold_update(t: f64, d_min: f64) -> f64 {
    0.5 * (t + d_min)
}

#[derive(Debug, Clone)]
pub struct ExpansionState<C> {
    pub set: CandidateSet<C>,
    pub threshold: f64,
    pub cache: DirectionalCache,
    pub trace: Vec<TraceRow>,
    /// Number of entries in the set before any expansion.
    pub initial_len: usize,
    /// Size after the geometry-only phase.
    pub nonadaptive_len: Option<usize>,
}

impl<C: Clone> ExpansionState<C> {
    pub fn new(set: CandidateSet<C>) -> Result<Self> {
        if set.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "expansion needs at least 2 initial entries, got {}",
                set.len()
            )));
        }
        let threshold = initial_threshold(&set);
        let cache = DirectionalCache::build(&set);
        let initial_len = set.len();
        Ok(Self {
            set,
            threshold,
            cache,
            trace: Vec::new(),
            initial_len,
            nonadaptive_len: None,
        })
    }

    /// One perturbation attempt from `from`. Returns the new index when the
    /// candidate clears the threshold. The threshold is updated either way.
    fn attempt<P: Perturber<C>>(
        &mut self,
        from: usize,
        perturber: &P,
        rng: &mut Rng,
        phase: ExpansionPhase,
    ) -> Result<Option<usize>> {
        let entry = self.set.entry(from);
        let (fp, src) = perturber.perturb(&entry.fingerprint, entry.source.as_ref(), rng)?;
        let (_, d_min) = self.set.nearest_to(fp.coords()).expect("set is non-empty");
        let t_before = self.threshold;
        let accepted = d_min > t_before;
        let added = if accepted {
            let id = self.set.add(fp, src)?;
            self.cache.push_last(&self.set);
            Some(id)
        } else {
            None
        };
        self.trace.push(TraceRow {
            attempt: self.trace.len() + 1,
            accepted,
            t_before,
            d_min,
            set_size: self.set.len(),
            phase,
            min_est_idx: None,
            oracle_calls: 0,
        });
        self.threshold = threshold_update(t_before, d_min);
        Ok(added)
    }

    /// Grows the set to `n1` entries by perturbing the sparsest entry. No
    /// oracle calls.
    pub fn expand_nonadaptive<P: Perturber<C>>(
        &mut self,
        perturber: &P,
        n1: usize,
        opts: &ExpansionOptions,
        rng: &mut Rng,
    ) -> Result<()> {
        let mut rejections = 0;
        while self.set.len() < n1 {
            let from = self.cache.sparsest();
            match self.attempt(from, perturber, rng, ExpansionPhase::NonAdaptive)? {
                Some(_) => rejections = 0,
                None => {
                    rejections += 1;
                    if rejections >= opts.max_rejections {
                        return Err(Error::ExpansionStalled {
                            rejections,
                            threshold: self.threshold,
                        });
                    }
                }
            }
        }
        self.nonadaptive_len = Some(self.set.len());
        info!(
            "non-adaptive expansion: {} entries after {} attempts, t = {:.4e}",
            self.set.len(),
            self.trace.len(),
            self.threshold
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveStop {
    /// The minimum-estimate entry held for the whole stall window.
    Converged,
    /// No entry is on the boundary.
    NoBoundary,
    /// The addition cap was reached first.
    CapReached,
}

/// Surrogate state shared by the adaptive phase and the optimizer.
#[derive(Debug, Clone)]
pub struct EvaluatedSet<M> {
    pub model: M,
    /// Evaluated entry indices in oracle order.
    pub evaluated: Vec<usize>,
    pub energies: Vec<f64>,
    /// Posterior mean for every entry of the candidate set.
    pub estimates: Vec<f64>,
}

impl<M> EvaluatedSet<M> {
    pub fn best(&self) -> Option<(usize, f64)> {
        self.evaluated.iter().zip(&self.energies).fold(
            None,
            |acc: Option<(usize, f64)>, (&i, &e)| match acc {
                Some((_, b)) if b <= e => acc,
                _ => Some((i, e)),
            },
        )
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome<M> {
    pub stop: AdaptiveStop,
    pub surrogate: EvaluatedSet<M>,
    pub additions: usize,
    pub boundary_radius: f64,
    /// Minimum-estimate entry after the initial fit and after every call.
    pub min_est_history: Vec<usize>,
    pub pca: Option<PcaProjection>,
}

fn argmin_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Evaluates the oracle on `ids`, appending to the ledger.
pub fn evaluate_entries<C, O: EnergyOracle<C>>(
    set: &CandidateSet<C>,
    ids: &[usize],
    oracle: &O,
    ledger: &mut EnergyLedger,
    phase: Phase,
) -> Result<Vec<f64>> {
    ids.iter()
        .map(|&i| {
            let e = set.entry(i);
            let energy = oracle.energy(&e.fingerprint, e.source.as_ref())?;
            ledger.record(i, energy, phase)?;
            Ok(energy)
        })
        .collect()
}

/// The initial oracle design: the first `n0` entries plus a MaxPro
/// augmentation from the rest of the set up to `target` entries.
pub fn initial_design<C>(set: &CandidateSet<C>, n0: usize, target: usize) -> Result<Vec<usize>> {
    let mut ids: Vec<usize> = (0..n0.min(set.len())).collect();
    if target > ids.len() {
        let existing: Vec<Vec<f64>> = ids.iter().map(|&i| set.coords(i).to_vec()).collect();
        let pool_ids: Vec<usize> = (ids.len()..set.len()).collect();
        let pool: Vec<Vec<f64>> = pool_ids.iter().map(|&i| set.coords(i).to_vec()).collect();
        let k = (target - ids.len()).min(pool.len());
        ids.extend(
            maxpro_augment(&existing, &pool, k)?
                .into_iter()
                .map(|j| pool_ids[j]),
        );
    }
    Ok(ids)
}

pub fn fit_on<C, F: SurrogateFitter>(
    set: &CandidateSet<C>,
    evaluated: &[usize],
    energies: &[f64],
    fitter: &F,
    previous: Option<&F::Model>,
) -> Result<F::Model> {
    let x: Vec<Vec<f64>> = evaluated.iter().map(|&i| set.coords(i).to_vec()).collect();
    fitter.fit(&x, energies, previous)
}

pub fn estimate_all<C: Sync, M: Surrogate>(set: &CandidateSet<C>, model: &M) -> Vec<f64> {
    use rayon::prelude::*;
    (0..set.len())
        .into_par_iter()
        .map(|i| model.predict(set.coords(i)).0)
        .collect()
}

struct BoundaryView {
    pca: Option<PcaProjection>,
    classifier: BoundaryClassifier,
}

impl BoundaryView {
    fn build<C>(set: &CandidateSet<C>, pcs: usize) -> Self {
        let pca = if set.dim() > pcs {
            match pca_fit(set, pcs) {
                Ok(p) => Some(p),
                Err(Error::RankDeficient { rank, .. }) if rank >= 1 => pca_fit(set, rank).ok(),
                Err(_) => None,
            }
        } else {
            None
        };
        let classifier = BoundaryClassifier::new(set, pca.as_ref());
        Self { pca, classifier }
    }

    fn push(&mut self, x: &[f64]) {
        self.classifier.push(x, self.pca.as_ref());
    }
}

impl<C: Clone + Sync> ExpansionState<C> {
    /// Grows the set from the lowest-estimate boundary entry, calling the
    /// oracle every `oracle_cadence` accepted additions and refitting the
    /// surrogate, until the lowest-estimate entry stops changing.
    #[allow(clippy::too_many_arguments)]
    pub fn expand_adaptive<P, O, F>(
        &mut self,
        perturber: &P,
        oracle: &O,
        fitter: &F,
        ledger: &mut EnergyLedger,
        opts: &ExpansionOptions,
        rng: &mut Rng,
    ) -> Result<AdaptiveOutcome<F::Model>>
    where
        P: Perturber<C>,
        O: EnergyOracle<C>,
        F: SurrogateFitter,
    {
        let p = self.set.dim();
        let n1 = self.set.len();
        let cap = n1 + opts.cap_factor * p;
        let radius = max_nn_distance(&self.set);

        let ids = initial_design(&self.set, self.initial_len, opts.initial_factor * p)?;
        let energies = evaluate_entries(&self.set, &ids, oracle, ledger, Phase::Initial)?;
        let model = fit_on(&self.set, &ids, &energies, fitter, None)?;
        let estimates = estimate_all(&self.set, &model);
        let mut sur = EvaluatedSet {
            model,
            evaluated: ids,
            energies,
            estimates,
        };
        let mut is_evaluated = vec![false; self.set.len()];
        for &i in &sur.evaluated {
            is_evaluated[i] = true;
        }
        let mut view = BoundaryView::build(&self.set, opts.boundary_pcs);
        let mut history = vec![argmin_lowest(&sur.estimates)];
        let mut order = sorted_by_estimate(&sur.estimates);
        let mut additions = 0usize;
        let mut rejections = 0usize;

        let stop = loop {
            if self.set.len() >= cap {
                break AdaptiveStop::CapReached;
            }
            let Some(from) = order
                .iter()
                .copied()
                .find(|&i| view.classifier.is_boundary(i, radius))
            else {
                break AdaptiveStop::NoBoundary;
            };
            let Some(new) = self.attempt(from, perturber, rng, ExpansionPhase::Adaptive)? else {
                rejections += 1;
                if rejections >= opts.max_rejections {
                    return Err(Error::ExpansionStalled {
                        rejections,
                        threshold: self.threshold,
                    });
                }
                continue;
            };
            rejections = 0;
            additions += 1;
            let x = self.set.coords(new).to_vec();
            let est = sur.model.predict(&x).0;
            sur.estimates.push(est);
            is_evaluated.push(false);
            let pos = order.partition_point(|&i| sur.estimates[i] <= est);
            order.insert(pos, new);
            view.push(&x);

            if additions.is_multiple_of(opts.oracle_cadence) {
                let target = order
                    .iter()
                    .copied()
                    .find(|&i| !is_evaluated[i])
                    .expect("the new entry is unevaluated");
                let e = evaluate_entries(&self.set, &[target], oracle, ledger, Phase::Adaptive)?[0];
                is_evaluated[target] = true;
                sur.evaluated.push(target);
                sur.energies.push(e);
                sur.model = fit_on(
                    &self.set,
                    &sur.evaluated,
                    &sur.energies,
                    fitter,
                    Some(&sur.model),
                )?;
                sur.estimates = estimate_all(&self.set, &sur.model);
                order = sorted_by_estimate(&sur.estimates);
                view = BoundaryView::build(&self.set, opts.boundary_pcs);
                let argmin = argmin_lowest(&sur.estimates);
                history.push(argmin);
                if let Some(row) = self.trace.last_mut() {
                    row.min_est_idx = Some(argmin);
                    row.oracle_calls = ledger.len();
                }
                debug!(
                    "adaptive: {} entries, {} calls, min estimate at {argmin} ({:.6e})",
                    self.set.len(),
                    ledger.len(),
                    sur.estimates[argmin]
                );
                let w = opts.stall_window;
                if history.len() > w
                    && history[history.len() - w - 1..]
                        .iter()
                        .all(|&h| h == argmin)
                {
                    break AdaptiveStop::Converged;
                }
            }
        };
        info!(
            "adaptive expansion stopped ({stop:?}): {} entries, {additions} additions, {} oracle calls",
            self.set.len(),
            ledger.len()
        );
        Ok(AdaptiveOutcome {
            stop,
            surrogate: sur,
            additions,
            boundary_radius: radius,
            min_est_history: history,
            pca: view.pca,
        })
    }
}

fn sorted_by_estimate(est: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..est.len()).collect();
    order.sort_by(|&a, &b| est[a].total_cmp(&est[b]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{sphere, TestFunction, VectorProblem};
    use crate::setgeom::TOY_POINTS;
    use crate::surrogate::{GpFitter, GpModel};
    use rand::{Rng as _, SeedableRng};

    fn set_of(points: &[Vec<f64>]) -> CandidateSet<()> {
        let mut s = CandidateSet::new(points[0].len());
        for p in points {
            s.add(Fingerprint::new(p.clone()).unwrap(), None).unwrap();
        }
        s
    }

    fn toy() -> CandidateSet<()> {
        set_of(&TOY_POINTS.iter().map(|p| p.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn thresholds() {
        assert!((initial_threshold(&toy()) - 0.75).abs() < 1e-12);
        assert_eq!(initial_threshold(&set_of(&[vec![0.0], vec![1.0]])), 1.0);
        assert!(
            (initial_threshold(&set_of(&[vec![0.0], vec![1.0], vec![3.0]])) - 4.0 / 3.0).abs()
                < 1e-15
        );
        assert_eq!(threshold_update(0.75, 0.75), 0.75);
        assert_eq!(threshold_update(0.75, 1.25), 1.0);
        let mut t = 1.0;
        for _ in 0..5 {
            let next = threshold_update(t, 0.0);
            assert_eq!(next, t / 2.0);
            t = next;
        }
    }

    #[test]
    fn toy_expansion_to_200() {
        let mut state = ExpansionState::new(toy()).unwrap();
        let pert = MvnPerturber::isotropic(2, 0.75);
        let mut rng = Rng::seed_from_u64(1);
        state
            .expand_nonadaptive(&pert, 200, &ExpansionOptions::default(), &mut rng)
            .unwrap();
        assert_eq!(state.set.len(), 200);
        assert!(state
            .trace
            .iter()
            .filter(|r| r.accepted)
            .all(|r| r.d_min > r.t_before));
        assert_eq!(state.trace.iter().filter(|r| r.accepted).count(), 195);
        // threshold follows the update rule on every attempt
        for w in state.trace.windows(2) {
            assert_eq!(w[1].t_before, threshold_update(w[0].t_before, w[0].d_min));
        }
    }

    #[test]
    fn noop_when_already_at_budget() {
        let mut state = ExpansionState::new(toy()).unwrap();
        let before = state.set.clone();
        let t = state.threshold;
        state
            .expand_nonadaptive(
                &MvnPerturber::isotropic(2, 0.75),
                5,
                &ExpansionOptions::default(),
                &mut Rng::seed_from_u64(0),
            )
            .unwrap();
        assert_eq!(state.set.len(), before.len());
        assert_eq!(state.threshold, t);
        assert!(state.trace.is_empty());
    }

    #[test]
    fn bounding_box_grows() {
        let mut strict = 0;
        for seed in 0..30 {
            let mut state = ExpansionState::new(toy()).unwrap();
            let initial = state.set.bounding_box();
            let pert = MvnPerturber::isotropic(2, 0.75);
            let mut rng = Rng::seed_from_u64(seed);
            let mut last_volume = 0.0;
            let mut n = 5;
            while n < 200 {
                n += 5;
                state
                    .expand_nonadaptive(&pert, n, &ExpansionOptions::default(), &mut rng)
                    .unwrap();
                let v: f64 = state
                    .set
                    .bounding_box()
                    .iter()
                    .map(|(lo, hi)| hi - lo)
                    .product();
                assert!(v >= last_volume);
                last_volume = v;
            }
            let fin = state.set.bounding_box();
            if fin
                .iter()
                .zip(&initial)
                .all(|(f, i)| f.0 < i.0 && f.1 > i.1)
            {
                strict += 1;
            }
        }
        assert!(strict >= 28, "{strict}/30");
    }

    #[test]
    fn stall_is_reported() {
        struct Frozen;
        impl Perturber<()> for Frozen {
            fn perturb(
                &self,
                fp: &Fingerprint,
                _: Option<&()>,
                _: &mut Rng,
            ) -> Result<(Fingerprint, Option<()>)> {
                Ok((fp.clone(), None))
            }
        }
        let mut state = ExpansionState::new(toy()).unwrap();
        let opts = ExpansionOptions {
            max_rejections: 50,
            ..Default::default()
        };
        let err = state
            .expand_nonadaptive(&Frozen, 10, &opts, &mut Rng::seed_from_u64(0))
            .unwrap_err();
        assert!(matches!(
            err,
            Error::ExpansionStalled { rejections: 50, .. }
        ));
    }

    /// A surrogate that knows the true function exactly.
    struct Exact;
    struct ExactModel;
    impl Surrogate for ExactModel {
        fn predict(&self, x: &[f64]) -> (f64, f64) {
            (sphere(x), 0.0)
        }
    }
    impl SurrogateFitter for Exact {
        type Model = ExactModel;
        fn fit(&self, _: &[Vec<f64>], _: &[f64], _: Option<&ExactModel>) -> Result<ExactModel> {
            Ok(ExactModel)
        }
    }

    fn sphere_state(seed: u64, n1: usize) -> (ExpansionState<()>, Rng) {
        sphere_state_in(seed, n1, (1.5, 4.0))
    }

    fn sphere_state_in(seed: u64, n1: usize, (lo, hi): (f64, f64)) -> (ExpansionState<()>, Rng) {
        let mut rng = Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.random_range(lo..hi), rng.random_range(lo..hi)])
            .collect();
        let mut state = ExpansionState::new(set_of(&pts)).unwrap();
        let pert = MvnPerturber::isotropic(2, state.threshold);
        state
            .expand_nonadaptive(&pert, n1, &ExpansionOptions::default(), &mut rng)
            .unwrap();
        (state, rng)
    }

    #[test]
    fn exact_surrogate_wiring() {
        let (mut state, mut rng) = sphere_state(3, 200);
        let problem = VectorProblem::new(TestFunction::Sphere, 2).unwrap();
        let pert = MvnPerturber::isotropic(2, initial_threshold(&state.set));
        let mut ledger = EnergyLedger::new();
        let out = state
            .expand_adaptive(
                &pert,
                &problem,
                &Exact,
                &mut ledger,
                &ExpansionOptions::default(),
                &mut rng,
            )
            .unwrap();
        // each adaptive call targets the true argmin among unevaluated entries
        let mut calls = ledger
            .records()
            .iter()
            .filter(|r| r.phase == Phase::Adaptive);
        let mut evaluated: Vec<usize> = ledger
            .records()
            .iter()
            .filter(|r| r.phase == Phase::Initial)
            .map(|r| r.fingerprint_id)
            .collect();
        let adaptive_rows: Vec<_> = state
            .trace
            .iter()
            .filter(|r| r.min_est_idx.is_some())
            .collect();
        for row in adaptive_rows {
            let rec = calls.next().unwrap();
            let visible = row.set_size;
            let want = (0..visible)
                .filter(|i| !evaluated.contains(i))
                .min_by(|&a, &b| {
                    sphere(state.set.coords(a)).total_cmp(&sphere(state.set.coords(b)))
                })
                .unwrap();
            assert_eq!(rec.fingerprint_id, want);
            evaluated.push(want);
        }
        assert_eq!(ledger.len(), 20 + out.additions / 10);
        if out.stop == AdaptiveStop::Converged {
            let h = &out.min_est_history;
            assert!(h[h.len() - 11..].iter().all(|&x| x == h[h.len() - 1]));
        }
    }

    #[test]
    fn ledger_identity_and_monotone_best_with_gp() {
        let (mut state, mut rng) = sphere_state(4, 200);
        let problem = VectorProblem::new(TestFunction::Sphere, 2).unwrap();
        let pert = MvnPerturber::isotropic(2, initial_threshold(&state.set));
        let mut ledger = EnergyLedger::new();
        let out = state
            .expand_adaptive(
                &pert,
                &problem,
                &GpFitter::default(),
                &mut ledger,
                &ExpansionOptions::default(),
                &mut rng,
            )
            .unwrap();
        assert_eq!(ledger.len(), 20 + out.additions / 10);
        assert_eq!(ledger.count(Phase::Initial), 20);
        let adaptive: Vec<f64> = ledger
            .records()
            .iter()
            .filter(|r| r.phase == Phase::Adaptive)
            .map(|r| r.best_so_far)
            .collect();
        assert!(adaptive.windows(2).all(|w| w[1] <= w[0]));
        assert!(state
            .trace
            .iter()
            .filter(|r| r.accepted)
            .all(|r| r.d_min > r.t_before));
        assert!(state.set.len() <= 200 + 50 * 2);
    }

    #[test]
    fn closed_loop_stalls_quickly() {
        // A symmetric grid puts the minimum of the fitted mean on the centre
        // entry, so no later addition can undercut it.
        let grid: Vec<Vec<f64>> = (0..25)
            .map(|k| vec![(k % 5) as f64 - 2.0, (k / 5) as f64 - 2.0])
            .collect();
        let mut state = ExpansionState::new(set_of(&grid)).unwrap();
        let mut rng = Rng::seed_from_u64(5);
        let pert = MvnPerturber::isotropic(2, state.threshold);
        state
            .expand_nonadaptive(&pert, 200, &ExpansionOptions::default(), &mut rng)
            .unwrap();
        let y: Vec<f64> = grid.iter().map(|v| sphere(v)).collect();
        let frozen: GpModel =
            crate::surrogate::gp_fit(grid.clone(), y, &Default::default()).unwrap();
        let oracle = |fp: &Fingerprint, _: Option<&()>| Ok(frozen.predict(fp.coords()).0);
        let mut ledger = EnergyLedger::new();
        let out = state
            .expand_adaptive(
                &pert,
                &oracle,
                &GpFitter::default(),
                &mut ledger,
                &ExpansionOptions::default(),
                &mut rng,
            )
            .unwrap();
        assert_eq!(out.stop, AdaptiveStop::Converged);
        assert_eq!(ledger.count(Phase::Adaptive), 10);
        assert!(out.min_est_history.iter().all(|&i| i == 12));
    }

    #[test]
    fn trace_csv_schema() {
        let mut state = ExpansionState::new(toy()).unwrap();
        state
            .expand_nonadaptive(
                &MvnPerturber::isotropic(2, 0.75),
                8,
                &ExpansionOptions::default(),
                &mut Rng::seed_from_u64(2),
            )
            .unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &state.trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "attempt,accepted,t_before,d_min,set_size,phase,min_est_idx,oracle_calls\n1,"
        ));
        assert!(text.lines().nth(1).unwrap().contains(",nonadaptive,,0"));
    }
}
