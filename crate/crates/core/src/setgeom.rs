//! Geometry of a candidate set: per-direction nearest neighbors, the
//! sparsest-point rule, principal-component projection, and the
//! boundary/interior classifier.

use std::collections::HashSet;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::candidates::CandidateSet;
use crate::error::{Error, Result};
use crate::fingerprint::euclidean;

/// Five-point worked example in the plane. The coordinates are chosen so that
/// the nearest neighbors of the third point sit at 0.96 (above), 0.75 (below
/// and left) and 1.22 (right), the mean nearest-neighbor distance is 0.75, and
/// the first point is the sparsest.
pub const TOY_POINTS: [[f64; 2]; 5] = [
    [1.607, -0.516],
    [1.22, 0.0],
    [0.0, 0.0],
    [-0.45, -0.6],
    [0.0, 0.96],
];

/// Nearest-neighbor distance of one point inside each of its `2p` axis
/// half-spaces. Empty half-spaces hold `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalRow {
    /// `plus[j]`: nearest member with `x_j > c_j`.
    pub plus: Vec<f64>,
    /// `minus[j]`: nearest member with `x_j < c_j`.
    pub minus: Vec<f64>,
}

impl DirectionalRow {
    fn empty(p: usize) -> Self {
        Self {
            plus: vec![f64::INFINITY; p],
            minus: vec![f64::INFINITY; p],
        }
    }

    /// Offers a neighbor at `x` (distance `d`) to a row anchored at `c`.
    /// Returns true if any entry shrank.
    fn offer(&mut self, c: &[f64], x: &[f64], d: f64) -> bool {
        let mut changed = false;
        for (j, (&cj, &xj)) in c.iter().zip(x).enumerate() {
            if xj > cj {
                if d < self.plus[j] {
                    self.plus[j] = d;
                    changed = true;
                }
            } else if xj < cj && d < self.minus[j] {
                self.minus[j] = d;
                changed = true;
            }
        }
        changed
    }

    /// Farthest nearest neighbor over the non-empty half-spaces; 0 when all
    /// are empty.
    pub fn farthest_nearest(&self) -> f64 {
        self.plus
            .iter()
            .chain(&self.minus)
            .copied()
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max)
    }

    pub fn nearest(&self) -> f64 {
        self.plus
            .iter()
            .chain(&self.minus)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn directional_nn<C>(set: &CandidateSet<C>, i: usize) -> DirectionalRow {
    let c = set.coords(i);
    let mut row = DirectionalRow::empty(set.dim());
    for j in (0..set.len()).filter(|&j| j != i) {
        let x = set.coords(j);
        row.offer(c, x, euclidean(c, x));
    }
    row
}

/// Directional rows for every entry, maintained incrementally as the set
/// grows. Each append costs `O(n p)`.
#[derive(Debug, Clone)]
pub struct DirectionalCache {
    rows: Vec<DirectionalRow>,
    radius: Vec<f64>,
}

impl DirectionalCache {
    pub fn build<C>(set: &CandidateSet<C>) -> Self {
        let rows: Vec<_> = (0..set.len()).map(|i| directional_nn(set, i)).collect();
        let radius = rows.iter().map(DirectionalRow::farthest_nearest).collect();
        Self { rows, radius }
    }

    /// Folds in the last entry of `set`, which must be the only one not yet seen.
    pub fn push_last<C>(&mut self, set: &CandidateSet<C>) {
        let new = set.len() - 1;
        assert_eq!(self.rows.len(), new, "directional cache out of sync");
        let x = set.coords(new);
        let mut row = DirectionalRow::empty(set.dim());
        for i in 0..new {
            let c = set.coords(i);
            let d = euclidean(c, x);
            if self.rows[i].offer(c, x, d) {
                self.radius[i] = self.rows[i].farthest_nearest();
            }
            row.offer(x, c, d);
        }
        self.radius.push(row.farthest_nearest());
        self.rows.push(row);
    }

    pub fn row(&self, i: usize) -> &DirectionalRow {
        &self.rows[i]
    }

    /// `r_i`: farthest nearest neighbor among the non-empty half-spaces.
    pub fn radii(&self) -> &[f64] {
        &self.radius
    }

    pub fn sparsest(&self) -> usize {
        argmax_lowest(&self.radius)
    }
}

/// Index with the largest farthest-nearest-neighbor distance; lowest index
/// wins ties.
pub fn sparsest_index<C>(set: &CandidateSet<C>) -> usize {
    let radii: Vec<f64> = (0..set.len())
        .map(|i| directional_nn(set, i).farthest_nearest())
        .collect();
    argmax_lowest(&radii)
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Largest cached nearest-neighbor distance.
pub fn max_nn_distance<C>(set: &CandidateSet<C>) -> f64 {
    set.nn_dist()
        .iter()
        .copied()
        .filter(|d| d.is_finite())
        .fold(0.0, f64::max)
}

/// Principal-component basis fitted to a candidate set.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// `p x k`, orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// Fraction of total variance carried by each kept component.
    pub explained: Vec<f64>,
}

impl PcaProjection {
    pub fn k(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|c| {
                self.loadings
                    .column(c)
                    .iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(l, (xi, m))| l * (xi - m))
                    .sum()
            })
            .collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, zc) in z.iter().enumerate() {
            for (xi, l) in x.iter_mut().zip(self.loadings.column(c).iter()) {
                *xi += l * zc;
            }
        }
        x
    }
}

pub fn pca_fit<C>(set: &CandidateSet<C>, k: usize) -> Result<PcaProjection> {
    let n = set.len();
    let p = set.dim();
    if k == 0 || n <= k {
        return Err(Error::InvalidArgument(format!(
            "pca needs 1 <= k < n (k = {k}, n = {n})"
        )));
    }
    let mut mean = vec![0.0; p];
    for fp in set.fingerprints() {
        for (m, v) in mean.iter_mut().zip(fp.coords()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, p, |i, j| set.coords(i)[j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > 1e-12 * top.max(f64::MIN_POSITIVE))
        .count();
    if k > rank {
        return Err(Error::RankDeficient { requested: k, rank });
    }

    let mut loadings = DMatrix::zeros(p, k);
    let mut explained = Vec::with_capacity(k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
        loadings.set_column(c, &col);
        explained.push(eig.eigenvalues[i].max(0.0) / total);
    }
    Ok(PcaProjection {
        mean,
        loadings,
        explained,
    })
}

/// Boundary/interior classification over a fixed snapshot of the set,
/// optionally in principal-component coordinates.
#[derive(Debug, Clone)]
pub struct BoundaryClassifier {
    points: Vec<Vec<f64>>,
}

impl BoundaryClassifier {
    pub fn new<C>(set: &CandidateSet<C>, proj: Option<&PcaProjection>) -> Self {
        let points = set
            .fingerprints()
            .map(|fp| match proj {
                Some(pr) => pr.project(fp.coords()),
                None => fp.coords().to_vec(),
            })
            .collect();
        Self { points }
    }

    /// Appends the projection of a newly added fingerprint.
    pub fn push(&mut self, x: &[f64], proj: Option<&PcaProjection>) {
        self.points.push(match proj {
            Some(pr) => pr.project(x),
            None => x.to_vec(),
        });
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Interior iff every orthant anchored at point `i` holds another member
    /// within distance `r`. A neighbor sharing any coordinate with the anchor
    /// lies in no orthant.
    pub fn is_boundary(&self, i: usize, r: f64) -> bool {
        let c = &self.points[i];
        let k = c.len();
        assert!(k < 64, "orthant count 2^{k} not representable");
        let needed: u64 = 1 << k;
        let mut seen: HashSet<u64> = HashSet::new();
        for (j, x) in self.points.iter().enumerate() {
            if j == i || euclidean(c, x) > r {
                continue;
            }
            let mut key = 0u64;
            let mut strict = true;
            for (d, (&cd, &xd)) in c.iter().zip(x).enumerate() {
                if xd > cd {
                    key |= 1 << d;
                } else if xd == cd {
                    strict = false;
                    break;
                }
            }
            if strict && seen.insert(key) && seen.len() as u64 == needed {
                return false;
            }
        }
        true
    }
}

pub fn is_boundary<C>(
    i: usize,
    set: &CandidateSet<C>,
    r: f64,
    proj: Option<&PcaProjection>,
) -> bool {
    BoundaryClassifier::new(set, proj).is_boundary(i, r)
}

/// Writes `id,pc1,pc2,pc3,energy_estimate` (only as many `pc` columns as the
/// projection keeps).
pub fn write_pca_csv<C, W: Write>(
    mut w: W,
    set: &CandidateSet<C>,
    proj: &PcaProjection,
    estimates: &[f64],
) -> Result<()> {
    write!(w, "id")?;
    for c in 1..=proj.k() {
        write!(w, ",pc{c}")?;
    }
    writeln!(w, ",energy_estimate")?;
    for (i, fp) in set.fingerprints().enumerate() {
        write!(w, "{i}")?;
        for z in proj.project(fp.coords()) {
            write!(w, ",{z}")?;
        }
        match estimates.get(i) {
            Some(e) => writeln!(w, ",{e}")?,
            None => writeln!(w, ",")?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::Fingerprint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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

    /// Direct O(n^2 p) evaluation of r_i straight from the definition.
    fn brute_radii(pts: &[Vec<f64>]) -> Vec<f64> {
        let p = pts[0].len();
        (0..pts.len())
            .map(|i| {
                let mut r: f64 = 0.0;
                for dim in 0..p {
                    for side in [1.0, -1.0] {
                        let nearest = (0..pts.len())
                            .filter(|&j| j != i && side * (pts[j][dim] - pts[i][dim]) > 0.0)
                            .map(|j| euclidean(&pts[i], &pts[j]))
                            .fold(f64::INFINITY, f64::min);
                        if nearest.is_finite() {
                            r = r.max(nearest);
                        }
                    }
                }
                r
            })
            .collect()
    }

    #[test]
    fn toy_directional_distances_of_third_point() {
        let row = directional_nn(&toy(), 2);
        // plus = [right, above], minus = [left, below]
        assert!((row.plus[1] - 0.96).abs() < 1e-12);
        assert!((row.minus[1] - 0.75).abs() < 1e-12);
        assert!((row.minus[0] - 0.75).abs() < 1e-12);
        assert!((row.plus[0] - 1.22).abs() < 1e-12);
        assert!((row.farthest_nearest() - 1.22).abs() < 1e-12);
    }

    #[test]
    fn toy_sparsest_is_first_point() {
        let s = toy();
        assert_eq!(sparsest_index(&s), 0);
        assert_eq!(DirectionalCache::build(&s).sparsest(), 0);
    }

    #[test]
    fn axis_aligned_pair_has_one_occupied_half_space() {
        let s = set_of(&[vec![0.0, 1.0], vec![2.0, 1.0]]);
        for i in 0..2 {
            let row = directional_nn(&s, i);
            let finite = row
                .plus
                .iter()
                .chain(&row.minus)
                .filter(|d| d.is_finite())
                .count();
            assert_eq!(finite, 1);
        }
    }

    #[test]
    fn equilateral_triangle_ties_to_lowest_index() {
        let h = 3f64.sqrt() / 2.0;
        let s = set_of(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]]);
        assert_eq!(sparsest_index(&s), 0);
    }

    #[test]
    fn outlier_radii_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts: Vec<Vec<f64>> = (0..9)
            .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        pts.push(vec![6.0, -4.0]);
        let s = set_of(&pts);
        let brute = brute_radii(&pts);
        assert_eq!(sparsest_index(&s), argmax_lowest(&brute));
    }

    #[test]
    fn min_directional_equals_nn_random_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let s = set_of(&pts);
        for i in 0..s.len() {
            assert_eq!(directional_nn(&s, i).nearest(), s.nn_dist()[i]);
        }
        let cache = DirectionalCache::build(&s);
        assert_eq!(cache.radii(), brute_radii(&pts).as_slice());
    }

    #[test]
    fn incremental_cache_matches_rebuild() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = CandidateSet::<()>::new(2);
        s.add(Fingerprint::new(vec![0.0, 0.0]).unwrap(), None)
            .unwrap();
        s.add(Fingerprint::new(vec![1.0, 0.5]).unwrap(), None)
            .unwrap();
        let mut cache = DirectionalCache::build(&s);
        for _ in 0..40 {
            let x = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            s.add(Fingerprint::new(x).unwrap(), None).unwrap();
            cache.push_last(&s);
        }
        let fresh = DirectionalCache::build(&s);
        assert_eq!(cache.radii(), fresh.radii());
        for i in 0..s.len() {
            assert_eq!(cache.row(i), fresh.row(i));
        }
    }

    #[test]
    fn max_nn_examples() {
        let grid: Vec<Vec<f64>> = (0..3)
            .flat_map(|i| (0..3).map(move |j| vec![i as f64, j as f64]))
            .collect();
        assert_eq!(max_nn_distance(&set_of(&grid)), 1.0);
        let line = set_of(&[vec![0.0], vec![1.0], vec![5.0]]);
        assert_eq!(max_nn_distance(&line), 4.0);
        let t = toy();
        let brute = (0..5)
            .map(|i| {
                (0..5)
                    .filter(|&j| j != i)
                    .map(|j| euclidean(t.coords(i), t.coords(j)))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        assert_eq!(max_nn_distance(&t), brute);
    }

    #[test]
    fn grid_boundary_and_interior() {
        let grid: Vec<Vec<f64>> = (0..3)
            .flat_map(|i| (0..3).map(move |j| vec![i as f64, j as f64]))
            .collect();
        let s = set_of(&grid);
        assert!(!is_boundary(4, &s, 2.0, None));
        assert!(is_boundary(0, &s, 2.0, None));
    }

    #[test]
    fn radius_excludes_neighbors() {
        let s = set_of(&[
            vec![0.0, 0.0],
            vec![0.3, 0.4],
            vec![-0.3, 0.4],
            vec![-0.3, -0.4],
        ]);
        assert!(is_boundary(0, &s, 0.4, None));
        // even with all four quadrants filled, r below the neighbor distance
        let s4 = set_of(&[
            vec![0.0, 0.0],
            vec![0.3, 0.4],
            vec![-0.3, 0.4],
            vec![-0.3, -0.4],
            vec![0.3, -0.4],
        ]);
        assert!(is_boundary(0, &s4, 0.4, None));
        assert!(!is_boundary(0, &s4, 0.5, None));
    }

    #[test]
    fn hull_vertices_are_boundary_at_infinite_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let s = set_of(&pts);
        // extreme points along a few directions are hull vertices
        for (ax, ay) in [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.3), (0.7, -0.7)] {
            let v = (0..pts.len())
                .max_by(|&a, &b| {
                    (ax * pts[a][0] + ay * pts[a][1]).total_cmp(&(ax * pts[b][0] + ay * pts[b][1]))
                })
                .unwrap();
            assert!(is_boundary(v, &s, f64::INFINITY, None));
        }
    }

    #[test]
    fn pca_rank_one_line() {
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|t| {
                let t = t as f64;
                vec![1.0 + 2.0 * t, -0.5 * t, 3.0 + t]
            })
            .collect();
        let pca = pca_fit(&set_of(&pts), 1).unwrap();
        assert!((pca.explained[0] - 1.0).abs() < 1e-12);
        assert!(matches!(
            pca_fit(&set_of(&pts), 2),
            Err(Error::RankDeficient {
                requested: 2,
                rank: 1
            })
        ));
    }

    #[test]
    fn pca_reconstructs_low_rank_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis = [[1.0, 0.5, -0.2, 0.3], [0.0, 1.0, 0.7, -1.1]];
        let pts: Vec<Vec<f64>> = (0..25)
            .map(|_| {
                let a: f64 = rng.random_range(-2.0..2.0);
                let b: f64 = rng.random_range(-2.0..2.0);
                (0..4)
                    .map(|j| 0.4 + a * basis[0][j] + b * basis[1][j])
                    .collect()
            })
            .collect();
        let pca = pca_fit(&set_of(&pts), 2).unwrap();
        for x in &pts {
            let back = pca.reconstruct(&pca.project(x));
            for (u, v) in back.iter().zip(x) {
                assert!((u - v).abs() < 1e-8);
            }
        }
        let gram = pca.loadings.transpose() * &pca.loadings;
        assert!((gram - DMatrix::identity(2, 2)).abs().max() < 1e-10);
        assert!(pca.explained[0] >= pca.explained[1]);
    }

    #[test]
    fn pca_isotropic_sample_matches_independent_covariance() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = 4;
        let pts: Vec<Vec<f64>> = (0..4000)
            .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let pca = pca_fit(&set_of(&pts), 2).unwrap();
        // independent route: explicit double loop covariance + power iteration
        let n = pts.len() as f64;
        let mean: Vec<f64> = (0..p)
            .map(|j| pts.iter().map(|x| x[j]).sum::<f64>() / n)
            .collect();
        let mut cov = vec![vec![0.0; p]; p];
        for x in &pts {
            for a in 0..p {
                for b in 0..p {
                    cov[a][b] += (x[a] - mean[a]) * (x[b] - mean[b]) / (n - 1.0);
                }
            }
        }
        let trace: f64 = (0..p).map(|a| cov[a][a]).sum();
        let mut v = vec![1.0; p];
        for _ in 0..500 {
            let w: Vec<f64> = (0..p)
                .map(|a| (0..p).map(|b| cov[a][b] * v[b]).sum())
                .collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.into_iter().map(|x| x / norm).collect();
        }
        let lambda: f64 = (0..p)
            .map(|a| v[a] * (0..p).map(|b| cov[a][b] * v[b]).sum::<f64>())
            .sum();
        assert!((pca.explained[0] - lambda / trace).abs() < 1e-6);
        for f in &pca.explained {
            assert!((f - 1.0 / p as f64).abs() < 0.05, "{f}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sparsest_invariant_under_translation_and_scaling(
                pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 3..25),
                shift in prop::collection::vec(-10.0f64..10.0, 2),
                scale in prop::sample::select(vec![0.5f64, 2.0, 4.0, 8.0]),
            ) {
                let mut s = CandidateSet::<()>::new(2);
                let mut t = CandidateSet::<()>::new(2);
                let mut u = CandidateSet::<()>::new(2);
                for p in &pts {
                    if s.add(Fingerprint::new(p.clone()).unwrap(), None).is_ok() {
                        let moved: Vec<f64> = p.iter().zip(&shift).map(|(a, b)| a + b).collect();
                        let scaled: Vec<f64> = p.iter().map(|a| a * scale).collect();
                        t.add(Fingerprint::new(moved).unwrap(), None).unwrap();
                        u.add(Fingerprint::new(scaled).unwrap(), None).unwrap();
                    }
                }
                prop_assume!(s.len() >= 2);
                let radii = DirectionalCache::build(&s);
                let rt = DirectionalCache::build(&t);
                // Translation perturbs radii by rounding only; require a clear
                // winner before comparing argmaxes.
                let mut sorted = radii.radii().to_vec();
                sorted.sort_by(|a, b| b.total_cmp(a));
                prop_assume!(sorted[0] - sorted[1] > 1e-9);
                prop_assert_eq!(rt.sparsest(), radii.sparsest());
                prop_assert_eq!(sparsest_index(&u), sparsest_index(&s));
            }

            #[test]
            fn min_directional_is_nn(
                pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..25),
            ) {
                let mut s = CandidateSet::<()>::new(3);
                for p in &pts {
                    let _ = s.add(Fingerprint::new(p.clone()).unwrap(), None);
                }
                prop_assume!(s.len() >= 2);
                for i in 0..s.len() {
                    prop_assert_eq!(directional_nn(&s, i).nearest(), s.nn_dist()[i]);
                }
            }
        }
    }
}
