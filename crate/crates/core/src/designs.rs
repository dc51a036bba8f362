//! Maximin Latin hypercube designs and greedy MaxPro augmentation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::write_coords_header;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxDesign {
    pub points: Vec<Vec<f64>>,
    pub bounds: Vec<(f64, f64)>,
}

impl BoxDesign {
    pub fn min_distance(&self) -> f64 {
        min_pairwise_distance(&self.points)
    }

    /// CSV with the candidate-set schema `id,x1..xp`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write_coords_header(&mut w, "id", "x", self.bounds.len())?;
        for (i, p) in self.points.iter().enumerate() {
            write!(w, "{i}")?;
            for v in p {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LhdOptions {
    pub restarts: usize,
    /// Swap proposals per restart.
    pub swaps: usize,
}

impl Default for LhdOptions {
    fn default() -> Self {
        Self {
            restarts: 200,
            swaps: 1000,
        }
    }
}

pub fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in 0..i {
            best = best.min(sq_dist(&points[i], &points[j]));
        }
    }
    best.sqrt()
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A random Latin hypercube on `[0,1]^p`: each column is a permutation of
/// the strata with a uniform jitter inside each stratum.
pub fn random_lhd(n: usize, p: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; p]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..p {
        perm.shuffle(rng);
        for (i, &s) in perm.iter().enumerate() {
            pts[i][k] = (s as f64 + rng.random_range(0.0..1.0)) / n as f64;
        }
    }
    pts
}

/// Coordinate-swap hill climber on the minimum pairwise distance, with
/// per-row minima so that each proposal costs O(np).
struct Climber {
    n: usize,
    x: Vec<Vec<f64>>,
    d2: Vec<f64>,
    row_min: Vec<f64>,
    row_arg: Vec<usize>,
}

impl Climber {
    fn new(x: Vec<Vec<f64>>) -> Self {
        let n = x.len();
        let mut d2 = vec![f64::INFINITY; n * n];
        for i in 0..n {
            for j in 0..i {
                let d = sq_dist(&x[i], &x[j]);
                d2[i * n + j] = d;
                d2[j * n + i] = d;
            }
        }
        let mut c = Self {
            n,
            x,
            d2,
            row_min: vec![f64::INFINITY; n],
            row_arg: vec![0; n],
        };
        for i in 0..n {
            c.refresh_row(i);
        }
        c
    }

    fn refresh_row(&mut self, i: usize) {
        let row = &self.d2[i * self.n..(i + 1) * self.n];
        let (mut m, mut a) = (f64::INFINITY, i);
        for (j, &v) in row.iter().enumerate() {
            if v < m {
                (m, a) = (v, j);
            }
        }
        self.row_min[i] = m;
        self.row_arg[i] = a;
    }

    fn objective(&self) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (i, &m) in self.row_min.iter().enumerate() {
            if m < best.0 {
                best = (m, i);
            }
        }
        best
    }

    /// Swaps column `k` between rows `a` and `b` if the minimum distance
    /// does not decrease.
    fn try_swap(&mut self, a: usize, b: usize, k: usize) -> bool {
        let n = self.n;
        let (current, _) = self.objective();
        let mut xa = self.x[a].clone();
        let mut xb = self.x[b].clone();
        std::mem::swap(&mut xa[k], &mut xb[k]);
        let mut new_a = vec![f64::INFINITY; n];
        let mut new_b = vec![f64::INFINITY; n];
        for j in 0..n {
            if j != a && j != b {
                new_a[j] = sq_dist(&xa, &self.x[j]);
                new_b[j] = sq_dist(&xb, &self.x[j]);
            }
        }
        let dab = self.d2[a * n + b];
        new_a[b] = dab;
        new_b[a] = dab;
        let mut proposed = new_a
            .iter()
            .chain(&new_b)
            .fold(f64::INFINITY, |m, v| m.min(*v));
        let mut other = vec![(f64::INFINITY, 0usize); n];
        for j in 0..n {
            if j == a || j == b {
                continue;
            }
            let (mut m, mut arg) = if self.row_arg[j] != a && self.row_arg[j] != b {
                (self.row_min[j], self.row_arg[j])
            } else {
                let row = &self.d2[j * n..(j + 1) * n];
                let mut best = (f64::INFINITY, j);
                for (c, &v) in row.iter().enumerate() {
                    if c != a && c != b && v < best.0 {
                        best = (v, c);
                    }
                }
                best
            };
            if new_a[j] < m {
                (m, arg) = (new_a[j], a);
            }
            if new_b[j] < m {
                (m, arg) = (new_b[j], b);
            }
            other[j] = (m, arg);
            proposed = proposed.min(m);
            if proposed < current {
                return false;
            }
        }
        if proposed < current {
            return false;
        }
        self.x[a] = xa;
        self.x[b] = xb;
        for j in 0..n {
            if j != a && j != b {
                self.d2[a * n + j] = new_a[j];
                self.d2[j * n + a] = new_a[j];
                self.d2[b * n + j] = new_b[j];
                self.d2[j * n + b] = new_b[j];
                (self.row_min[j], self.row_arg[j]) = other[j];
            }
        }
        self.refresh_row(a);
        self.refresh_row(b);
        true
    }
}

/// Best of `restarts` random LHDs, each improved by coordinate-swap hill
/// climbing on the minimum pairwise distance (computed in the unit cube).
pub fn maximin_lhd(
    n: usize,
    bounds: &[(f64, f64)],
    opts: &LhdOptions,
    rng: &mut Rng,
) -> Result<BoxDesign> {
    if n < 2 || opts.restarts == 0 || bounds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "maximin_lhd needs n >= 2, restarts >= 1 and p >= 1 (got n={n}, restarts={}, p={})",
            opts.restarts,
            bounds.len()
        )));
    }
    if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidArgument(format!(
            "empty design interval [{lo}, {hi}]"
        )));
    }
    let p = bounds.len();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..opts.restarts {
        let (_, unit) = climb(random_lhd(n, p, rng), opts.swaps, rng);
        let score = min_pairwise_distance(&unit);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, unit));
        }
    }
    let (_, unit) = best.expect("at least one restart");
    let points = unit
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(bounds)
                .map(|(u, (lo, hi))| lo + u * (hi - lo))
                .collect()
        })
        .collect();
    Ok(BoxDesign {
        points,
        bounds: bounds.to_vec(),
    })
}

/// Returns the objective trace (one value per accepted swap, starting with
/// the initial design) and the improved design.
fn climb(x: Vec<Vec<f64>>, swaps: usize, rng: &mut Rng) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = x.len();
    let p = x[0].len();
    let mut c = Climber::new(x);
    let mut trace = vec![c.objective().0];
    if n < 3 {
        return (trace, c.x);
    }
    for _ in 0..swaps {
        let (_, i) = c.objective();
        // move one end of the closest pair
        let a = if rng.random_bool(0.5) {
            i
        } else {
            c.row_arg[i]
        };
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let k = rng.random_range(0..p);
        if c.try_swap(a, b, k) {
            trace.push(c.objective().0);
        }
    }
    (trace, c.x)
}

/// Per-dimension min-max scaling over the given point sets (constant
/// dimensions keep unit scale).
fn unit_scaler(sets: &[&[Vec<f64>]]) -> Vec<(f64, f64)> {
    let p = sets.iter().find_map(|s| s.first()).map_or(0, Vec::len);
    let mut lo = vec![f64::INFINITY; p];
    let mut hi = vec![f64::NEG_INFINITY; p];
    for s in sets {
        for x in *s {
            for k in 0..p {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
    }
    lo.into_iter()
        .zip(hi)
        .map(|(l, h)| if h > l { (l, h - l) } else { (l, 1.0) })
        .collect()
}

/// `-2 sum_k ln|a_k - b_k|` in scaled coordinates; `+inf` on a shared
/// coordinate.
fn log_pair_term(a: &[f64], b: &[f64], scale: &[(f64, f64)]) -> f64 {
    let mut s = 0.0;
    for ((x, y), (_, w)) in a.iter().zip(b).zip(scale) {
        let d = (x - y).abs() / w;
        if d == 0.0 {
            return f64::INFINITY;
        }
        s -= 2.0 * d.ln();
    }
    s
}

/// Scaled separation below which a coordinate counts as shared. Candidates
/// on a lattice all share some coordinate with the design; the floor keeps
/// their terms finite so fewer and wider-spaced coincidences still win.
const COINCIDENT_FLOOR: f64 = 1e-6;

fn log_pair_term_floored(a: &[f64], b: &[f64], scale: &[(f64, f64)]) -> f64 {
    let mut s = 0.0;
    for ((x, y), (_, w)) in a.iter().zip(b).zip(scale) {
        s -= 2.0 * ((x - y).abs() / w).max(COINCIDENT_FLOOR).ln();
    }
    s
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::INFINITY || b == f64::INFINITY {
        return f64::INFINITY;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// MaxPro criterion `[2/(n(n-1)) sum_{i<j} prod_k (x_ik - x_jk)^-2]^(1/p)`
/// on raw coordinates; `+inf` when two points share a coordinate.
pub fn maxpro_criterion(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    assert!(n >= 2, "MaxPro criterion needs at least two points");
    let p = points[0].len();
    let unit = vec![(0.0, 1.0); p];
    let mut acc = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..i {
            acc = log_add_exp(acc, log_pair_term(&points[i], &points[j], &unit));
        }
    }
    if acc == f64::INFINITY {
        return f64::INFINITY;
    }
    let log_norm = (2.0 / (n as f64 * (n as f64 - 1.0))).ln();
    ((log_norm + acc) / p as f64).exp()
}

/// Greedily picks `k` pool indices, each minimizing the MaxPro criterion of
/// the existing points plus everything chosen so far. Coordinates are
/// min-max scaled over existing and pool; ties go to the lowest index.
pub fn maxpro_augment(existing: &[Vec<f64>], pool: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    if k > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {k} points from a pool of {}",
            pool.len()
        )));
    }
    let scale = unit_scaler(&[existing, pool]);
    // log of sum over chosen/existing s of the pair term with each candidate
    let mut acc: Vec<f64> = pool
        .par_iter()
        .map(|c| {
            existing.iter().fold(f64::NEG_INFINITY, |a, s| {
                log_add_exp(a, log_pair_term_floored(c, s, &scale))
            })
        })
        .collect();
    let mut taken = vec![false; pool.len()];
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in acc.iter().enumerate() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
        let (pick, _) = best.expect("k <= pool size");
        taken[pick] = true;
        chosen.push(pick);
        let new = &pool[pick];
        acc.par_iter_mut().enumerate().for_each(|(i, a)| {
            if !taken[i] {
                *a = log_add_exp(*a, log_pair_term_floored(&pool[i], new, &scale));
            }
        });
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn is_latin(d: &BoxDesign) -> bool {
        let n = d.points.len();
        (0..d.bounds.len()).all(|k| {
            let (lo, hi) = d.bounds[k];
            let mut seen = vec![false; n];
            for p in &d.points {
                let s = (((p[k] - lo) / (hi - lo)) * n as f64).floor() as usize;
                if s >= n || seen[s] {
                    return false;
                }
                seen[s] = true;
            }
            true
        })
    }

    #[test]
    fn two_point_strata() {
        let d = maximin_lhd(2, &[(0.0, 1.0)], &LhdOptions::default(), &mut rng(0)).unwrap();
        let mut v: Vec<f64> = d.points.iter().map(|p| p[0]).collect();
        v.sort_by(f64::total_cmp);
        assert!(v[0] < 0.5 && v[1] >= 0.5);
    }

    #[test]
    fn latin_property_and_bounds() {
        let bounds = vec![(1.5, 4.0); 5];
        let d = maximin_lhd(
            50,
            &bounds,
            &LhdOptions {
                restarts: 3,
                swaps: 500,
            },
            &mut rng(1),
        )
        .unwrap();
        assert!(is_latin(&d));
        assert!(d.points.iter().flatten().all(|v| (1.5..=4.0).contains(v)));
    }

    #[test]
    fn beats_median_random_lhd() {
        let d = maximin_lhd(4, &[(0.0, 1.0); 2], &LhdOptions::default(), &mut rng(2)).unwrap();
        let mut r = rng(3);
        let mut random: Vec<f64> = (0..200)
            .map(|_| min_pairwise_distance(&random_lhd(4, 2, &mut r)))
            .collect();
        random.sort_by(f64::total_cmp);
        assert!(d.min_distance() >= random[100]);
    }

    #[test]
    fn deterministic_for_seed() {
        let o = LhdOptions {
            restarts: 4,
            swaps: 200,
        };
        let a = maximin_lhd(12, &[(0.0, 1.0); 3], &o, &mut rng(5)).unwrap();
        let b = maximin_lhd(12, &[(0.0, 1.0); 3], &o, &mut rng(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hill_climb_objective_never_decreases() {
        let mut r = rng(6);
        for _ in 0..5 {
            let start = random_lhd(30, 4, &mut r);
            let (trace, end) = climb(start.clone(), 2000, &mut r);
            assert!(trace.windows(2).all(|w| w[1] >= w[0]));
            assert!((trace.last().unwrap().sqrt() - min_pairwise_distance(&end)).abs() < 1e-12);
            assert!(min_pairwise_distance(&end) >= min_pairwise_distance(&start));
        }
    }

    #[test]
    fn criterion_values() {
        assert!(
            (maxpro_criterion(&[vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]]) - 1.0).abs() < 1e-15
        );
        assert_eq!(
            maxpro_criterion(&[vec![0.0, 0.5], vec![1.0, 0.5]]),
            f64::INFINITY
        );
        let pts = vec![vec![0.1, 0.7], vec![0.4, 0.2], vec![0.9, 0.5]];
        let mut sum = 0.0;
        for i in 0..3 {
            for j in 0..i {
                let mut prod = 1.0;
                for k in 0..2 {
                    prod *= (pts[i][k] - pts[j][k] as f64).powi(-2);
                }
                sum += prod;
            }
        }
        let want = (sum / 3.0f64).powf(0.5);
        assert!((maxpro_criterion(&pts) - want).abs() < 1e-12 * want);
    }

    #[test]
    fn augment_one_dimension() {
        let existing = vec![vec![0.0], vec![1.0]];
        let pool = vec![vec![0.1], vec![0.5], vec![0.9]];
        assert_eq!(maxpro_augment(&existing, &pool, 1).unwrap(), vec![1]);
        let all = maxpro_augment(&existing, &pool, 3).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
        assert_eq!(all[0], 1);
    }

    #[test]
    fn augment_avoids_collapsed_projections() {
        let existing = vec![vec![0.2, 0.3], vec![0.7, 0.9]];
        let pool = vec![
            vec![0.2, 0.3],
            vec![0.7, 0.1],
            vec![0.45, 0.55],
            vec![0.9, 0.6],
        ];
        let picks = maxpro_augment(&existing, &pool, 2).unwrap();
        assert!(!picks.contains(&0) && !picks.contains(&1));
        assert!(maxpro_augment(&existing, &pool, 5).is_err());
    }

    #[test]
    fn augment_spreads_over_a_lattice() {
        let grid: Vec<Vec<f64>> = (0..100)
            .map(|k| vec![(k / 10) as f64, (k % 10) as f64])
            .collect();
        let picks = maxpro_augment(&[vec![0.0, 0.0]], &grid[1..], 9).unwrap();
        let mut xs: Vec<f64> = picks.iter().map(|&i| grid[i + 1][0]).collect();
        let mut ys: Vec<f64> = picks.iter().map(|&i| grid[i + 1][1]).collect();
        xs.push(0.0);
        ys.push(0.0);
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        xs.dedup();
        ys.dedup();
        // Ten points on a 10x10 lattice: a Latin arrangement exists and wins.
        assert_eq!((xs.len(), ys.len()), (10, 10));
    }

    #[test]
    fn augment_matches_brute_force_criterion() {
        let mut r = rng(7);
        let existing: Vec<Vec<f64>> = (0..4)
            .map(|_| vec![r.random_range(0.0..1.0), r.random_range(0.0..1.0)])
            .collect();
        let pool: Vec<Vec<f64>> = (0..15)
            .map(|_| vec![r.random_range(0.0..1.0), r.random_range(0.0..1.0)])
            .collect();
        let picks = maxpro_augment(&existing, &pool, 3).unwrap();
        let mut current = existing.clone();
        for &pick in &picks {
            let best = (0..pool.len())
                .filter(|i| !current.contains(&pool[*i]))
                .min_by(|&a, &b| {
                    let mut ca = current.clone();
                    ca.push(pool[a].clone());
                    let mut cb = current.clone();
                    cb.push(pool[b].clone());
                    maxpro_criterion(&ca).total_cmp(&maxpro_criterion(&cb))
                })
                .unwrap();
            assert_eq!(pick, best);
            current.push(pool[pick].clone());
        }
    }
}
