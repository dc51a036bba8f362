//! Periodic unit cells: geometry, random generation and perturbation.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub type Vec3 = [f64; 3];
pub type Lattice = [Vec3; 3];

/// Image block half-width used by [`min_pair_distance`].
pub const MIN_IMAGE_BLOCK: i32 = 2;

#[inline]
pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Scalar triple product `a . (b x c)`; negative for a left-handed cell.
pub fn signed_volume(lattice: &Lattice) -> f64 {
    dot(&lattice[0], &cross(&lattice[1], &lattice[2]))
}

fn check_lattice(lattice: &Lattice) -> Result<f64> {
    let v = signed_volume(lattice);
    let scale = norm(&lattice[0]) * norm(&lattice[1]) * norm(&lattice[2]);
    if !v.is_finite() || v.abs() <= 1e-10 * scale || scale == 0.0 {
        return Err(Error::DegenerateLattice {
            a: lattice[0],
            b: lattice[1],
            c: lattice[2],
        });
    }
    Ok(v)
}

/// Wraps a fractional coordinate into `[0, 1)`.
#[inline]
pub fn wrap_unit(f: f64) -> f64 {
    let w = f.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalConfiguration {
    lattice: Lattice,
    positions: Vec<Vec3>,
    species: Vec<String>,
}

impl CrystalConfiguration {
    /// Builds a configuration from fractional coordinates. A left-handed
    /// lattice is inverted (which maps each fractional coordinate to its
    /// negative), and all coordinates are wrapped into `[0, 1)`.
    pub fn new(lattice: Lattice, positions: Vec<Vec3>, species: Vec<String>) -> Result<Self> {
        if positions.len() != species.len() {
            return Err(Error::DimensionMismatch {
                expected: positions.len(),
                got: species.len(),
            });
        }
        if positions.iter().flatten().any(|f| !f.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite fractional coordinate".into(),
            ));
        }
        let v = check_lattice(&lattice)?;
        let (lattice, sign) = if v < 0.0 {
            (lattice.map(|row| row.map(|x| -x)), -1.0)
        } else {
            (lattice, 1.0)
        };
        let positions = positions
            .into_iter()
            .map(|p| p.map(|f| wrap_unit(sign * f)))
            .collect();
        Ok(Self {
            lattice,
            positions,
            species,
        })
    }

    /// Single-species convenience constructor.
    pub fn single_species(lattice: Lattice, positions: Vec<Vec3>, label: &str) -> Result<Self> {
        let species = vec![label.to_string(); positions.len()];
        Self::new(lattice, positions, species)
    }

    pub fn from_cartesian(
        lattice: Lattice,
        cartesian: &[Vec3],
        species: Vec<String>,
    ) -> Result<Self> {
        check_lattice(&lattice)?;
        let inv = inverse(&lattice);
        let positions = cartesian.iter().map(|c| mat_vec_row(c, &inv)).collect();
        Self::new(lattice, positions, species)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    /// Cartesian position of atom `i` in Å.
    pub fn cartesian(&self, i: usize) -> Vec3 {
        frac_to_cart(&self.positions[i], &self.lattice)
    }

    pub fn cartesian_positions(&self) -> Vec<Vec3> {
        (0..self.n_atoms()).map(|i| self.cartesian(i)).collect()
    }

    /// Distance from each lattice plane pair: `V / |b x c|`, etc.
    pub fn perpendicular_widths(&self) -> Vec3 {
        let v = signed_volume(&self.lattice);
        let l = &self.lattice;
        [
            v / norm(&cross(&l[1], &l[2])),
            v / norm(&cross(&l[2], &l[0])),
            v / norm(&cross(&l[0], &l[1])),
        ]
    }

    /// An `na x nb x nc` supercell with atoms in image order.
    pub fn supercell(&self, na: usize, nb: usize, nc: usize) -> Result<Self> {
        let reps = [na, nb, nc];
        if reps.contains(&0) {
            return Err(Error::InvalidArgument(
                "supercell repeats must be positive".into(),
            ));
        }
        let lattice = [0, 1, 2].map(|k| self.lattice[k].map(|x| x * reps[k] as f64));
        let mut positions = Vec::new();
        let mut species = Vec::new();
        for ia in 0..na {
            for ib in 0..nb {
                for ic in 0..nc {
                    let shift = [ia as f64, ib as f64, ic as f64];
                    for (p, s) in self.positions.iter().zip(&self.species) {
                        positions.push([0, 1, 2].map(|k| (p[k] + shift[k]) / reps[k] as f64));
                        species.push(s.clone());
                    }
                }
            }
        }
        Self::new(lattice, positions, species)
    }
}

#[inline]
pub(crate) fn frac_to_cart(f: &Vec3, lattice: &Lattice) -> Vec3 {
    let mut c = [0.0; 3];
    for k in 0..3 {
        for (a, fa) in f.iter().enumerate() {
            c[k] += fa * lattice[a][k];
        }
    }
    c
}

/// Row vector times matrix.
fn mat_vec_row(v: &Vec3, m: &Lattice) -> Vec3 {
    frac_to_cart(v, m)
}

fn inverse(m: &Lattice) -> Lattice {
    let det = signed_volume(m);
    let c0 = cross(&m[1], &m[2]);
    let c1 = cross(&m[2], &m[0]);
    let c2 = cross(&m[0], &m[1]);
    // columns of the inverse are the reciprocal vectors
    let mut inv = [[0.0; 3]; 3];
    for k in 0..3 {
        inv[k][0] = c0[k] / det;
        inv[k][1] = c1[k] / det;
        inv[k][2] = c2[k] / det;
    }
    inv
}

pub fn cell_volume(cfg: &CrystalConfiguration) -> f64 {
    signed_volume(&cfg.lattice)
}

/// Minimum separation over all atom pairs and periodic images, including an
/// atom's distance to its own images. Searches a block of
/// `±MIN_IMAGE_BLOCK` cells.
pub fn min_pair_distance(cfg: &CrystalConfiguration) -> f64 {
    let n = cfg.n_atoms();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i..n {
            best = best.min(pair_image_distance(cfg, i, &cfg.positions[j], i == j));
        }
    }
    best
}

fn pair_image_distance(cfg: &CrystalConfiguration, i: usize, fj: &Vec3, same: bool) -> f64 {
    let fi = &cfg.positions[i];
    let delta = [fj[0] - fi[0], fj[1] - fi[1], fj[2] - fi[2]];
    let mut best = f64::INFINITY;
    let b = MIN_IMAGE_BLOCK;
    for na in -b..=b {
        for nb in -b..=b {
            for nc in -b..=b {
                if same && na == 0 && nb == 0 && nc == 0 {
                    continue;
                }
                let f = [
                    delta[0] + na as f64,
                    delta[1] + nb as f64,
                    delta[2] + nc as f64,
                ];
                best = best.min(norm(&frac_to_cart(&f, &cfg.lattice)));
            }
        }
    }
    best
}

fn shortest_lattice_vector(lattice: &Lattice) -> f64 {
    let probe = CrystalConfiguration {
        lattice: *lattice,
        positions: vec![[0.0; 3]],
        species: vec![String::new()],
    };
    min_pair_distance(&probe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomStructureOptions {
    /// Total placement attempts (lattice redraws count as attempts).
    pub attempt_cap: usize,
    /// Longest-to-shortest lattice vector ratio.
    pub aspect_cap: f64,
    /// Allowed inter-vector angle range in degrees.
    pub angle_range: (f64, f64),
    /// Lower bound on `V / (|a||b||c|)`; rejects nearly coplanar triples
    /// whose pairwise angles are all acceptable.
    pub min_orthogonality: f64,
    pub species: String,
}

impl Default for RandomStructureOptions {
    fn default() -> Self {
        Self {
            attempt_cap: 10_000,
            aspect_cap: 3.0,
            angle_range: (30.0, 150.0),
            min_orthogonality: 0.3,
            species: "Al".into(),
        }
    }
}

fn random_direction(rng: &mut Rng) -> Vec3 {
    loop {
        let v: Vec3 = [0; 3].map(|_| StandardNormal.sample(rng));
        let n = norm(&v);
        if n > 1e-12 {
            return v.map(|x| x / n);
        }
    }
}

fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    (dot(a, b) / (norm(a) * norm(b)))
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees()
}

fn random_lattice(volume: f64, opts: &RandomStructureOptions, rng: &mut Rng) -> Option<Lattice> {
    let ln_cap = opts.aspect_cap.ln();
    let mut lattice = [[0.0; 3]; 3];
    for row in &mut lattice {
        let len = rng.random_range(0.0..=ln_cap).exp();
        *row = random_direction(rng).map(|x| x * len);
    }
    let (lo, hi) = opts.angle_range;
    for (i, j) in [(0, 1), (1, 2), (0, 2)] {
        let a = angle_deg(&lattice[i], &lattice[j]);
        if a < lo || a > hi {
            return None;
        }
    }
    let v = signed_volume(&lattice);
    let lengths = norm(&lattice[0]) * norm(&lattice[1]) * norm(&lattice[2]);
    if v.abs() < opts.min_orthogonality * lengths {
        return None;
    }
    let scale = (volume / v.abs()).cbrt() * v.signum();
    Some(lattice.map(|row| row.map(|x| x * scale)))
}

/// Random cell with volume `n_atoms * v`, `v` drawn uniformly within
/// `±vol_jitter` of `v_ref`, and atoms placed by rejection so that every
/// periodic separation exceeds `min_sep`.
pub fn random_structure(
    v_ref: f64,
    n_atoms: usize,
    min_sep: f64,
    vol_jitter: f64,
    opts: &RandomStructureOptions,
    rng: &mut Rng,
) -> Result<CrystalConfiguration> {
    if !(v_ref > 0.0 && min_sep > 0.0 && vol_jitter > 0.0 && vol_jitter < 1.0 && n_atoms >= 1) {
        return Err(Error::InvalidArgument(format!(
            "random_structure needs v_ref > 0, min_sep > 0, vol_jitter in (0,1) and n_atoms >= 1 \
             (got {v_ref}, {min_sep}, {vol_jitter}, {n_atoms})"
        )));
    }
    let v = rng.random_range(v_ref * (1.0 - vol_jitter)..=v_ref * (1.0 + vol_jitter));
    let volume = v * n_atoms as f64;
    let mut attempts = 0usize;
    'lattice: while attempts < opts.attempt_cap {
        attempts += 1;
        let Some(lattice) = random_lattice(volume, opts, rng) else {
            continue;
        };
        if shortest_lattice_vector(&lattice) <= min_sep {
            continue;
        }
        let mut cfg = CrystalConfiguration::new(lattice, Vec::new(), Vec::new())?;
        while cfg.n_atoms() < n_atoms {
            if attempts >= opts.attempt_cap {
                break 'lattice;
            }
            attempts += 1;
            let f: Vec3 = [0; 3].map(|_| rng.random_range(0.0..1.0));
            let clear =
                (0..cfg.n_atoms()).all(|i| pair_image_distance(&cfg, i, &f, false) > min_sep);
            if clear {
                cfg.positions.push(f);
                cfg.species.push(opts.species.clone());
            }
        }
        return Ok(cfg);
    }
    Err(Error::PlacementFailed {
        n_atoms,
        min_sep,
        attempts: opts.attempt_cap,
    })
}

/// Displaces every atom by an independent uniform draw in the ball of radius
/// `max_disp` (Cartesian Å). The lattice is unchanged.
pub fn perturb_structure(
    cfg: &CrystalConfiguration,
    max_disp: f64,
    rng: &mut Rng,
) -> CrystalConfiguration {
    let cart: Vec<Vec3> = (0..cfg.n_atoms())
        .map(|i| {
            let c = cfg.cartesian(i);
            let d = loop {
                let d: Vec3 = [0; 3].map(|_| rng.random_range(-1.0..=1.0));
                if dot(&d, &d) <= 1.0 {
                    break d;
                }
            };
            [0, 1, 2].map(|k| c[k] + max_disp * d[k])
        })
        .collect();
    CrystalConfiguration::from_cartesian(cfg.lattice, &cart, cfg.species.clone())
        .expect("lattice already validated")
}

/// Conventional 4-atom FCC cell with edge `a`.
pub fn fcc(a: f64, label: &str) -> CrystalConfiguration {
    let lattice = [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]];
    let positions = vec![
        [0.0, 0.0, 0.0],
        [0.5, 0.5, 0.0],
        [0.5, 0.0, 0.5],
        [0.0, 0.5, 0.5],
    ];
    CrystalConfiguration::single_species(lattice, positions, label).expect("cubic lattice is valid")
}

pub fn cubic(a: f64, positions: Vec<Vec3>) -> CrystalConfiguration {
    let lattice = [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]];
    CrystalConfiguration::single_species(lattice, positions, "Al").expect("cubic lattice is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    /// Brute force over a wider image block than the implementation uses.
    fn brute_min_distance(cfg: &CrystalConfiguration, block: i32) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..cfg.n_atoms() {
            for j in 0..cfg.n_atoms() {
                for na in -block..=block {
                    for nb in -block..=block {
                        for nc in -block..=block {
                            if i == j && (na, nb, nc) == (0, 0, 0) {
                                continue;
                            }
                            let f = [0, 1, 2].map(|k| {
                                cfg.positions()[j][k] - cfg.positions()[i][k]
                                    + [na, nb, nc][k] as f64
                            });
                            best = best.min(norm(&frac_to_cart(&f, cfg.lattice())));
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn volumes() {
        assert!((cell_volume(&cubic(4.05, vec![])) - 4.05f64.powi(3)).abs() < 1e-12);
        assert!((cell_volume(&cubic(2.0, vec![])) - 8.0).abs() < 1e-12);
        let tri = [[3.0, 0.0, 0.0], [1.0, 3.0, 0.0], [1.0, 1.0, 3.0]];
        assert!((signed_volume(&tri) - 27.0).abs() < 1e-12);
        let cyc = [tri[1], tri[2], tri[0]];
        assert!((signed_volume(&cyc) - 27.0).abs() < 1e-12);
        let swapped = [tri[1], tri[0], tri[2]];
        assert!((signed_volume(&swapped) + 27.0).abs() < 1e-12);
        let fixed =
            CrystalConfiguration::single_species(swapped, vec![[0.25, 0.5, 0.0]], "Al").unwrap();
        assert!((cell_volume(&fixed) - 27.0).abs() < 1e-12);
        // same physical point after orientation fix
        let want = frac_to_cart(&[0.25, 0.5, 0.0], &swapped);
        let got = fixed.cartesian(0);
        let diff = [0, 1, 2].map(|k| want[k] - got[k]);
        let back = mat_vec_row(&diff, &inverse(fixed.lattice()));
        assert!(back.iter().all(|v| (v - v.round()).abs() < 1e-12));
    }

    #[test]
    fn degenerate_lattice_is_rejected() {
        let flat = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        let err = CrystalConfiguration::single_species(flat, vec![], "Al").unwrap_err();
        assert!(matches!(err, Error::DegenerateLattice { .. }), "{err}");
        assert!(err.to_string().contains("[1.0, 1.0, 0.0]"));
    }

    #[test]
    fn pair_distances() {
        assert!((min_pair_distance(&cubic(4.0, vec![[0.0; 3]])) - 4.0).abs() < 1e-12);
        let two = cubic(4.0, vec![[0.0; 3], [0.5, 0.0, 0.0]]);
        assert!((min_pair_distance(&two) - 2.0).abs() < 1e-12);
        let al = fcc(4.05, "Al").supercell(2, 1, 1).unwrap();
        assert_eq!(al.n_atoms(), 8);
        let want = brute_min_distance(&al, 1);
        assert!((want - 4.05 / 2f64.sqrt()).abs() < 1e-12);
        assert!((min_pair_distance(&al) - want).abs() < 1e-12);
    }

    #[test]
    fn min_distance_invariant_under_translation() {
        let mut r = rng(5);
        let cfg = random_structure(16.6, 8, 2.0, 0.05, &Default::default(), &mut r).unwrap();
        let base = min_pair_distance(&cfg);
        for _ in 0..20 {
            let t: Vec3 = [0; 3].map(|_| r.random_range(-3.0..3.0));
            let moved: Vec<Vec3> = cfg
                .positions()
                .iter()
                .map(|p| [0, 1, 2].map(|k| p[k] + t[k]))
                .collect();
            let m =
                CrystalConfiguration::new(*cfg.lattice(), moved, cfg.species().to_vec()).unwrap();
            assert!((min_pair_distance(&m) - base).abs() < 1e-10);
        }
    }

    #[test]
    fn random_structures_meet_constraints() {
        let mut r = rng(1);
        let opts = RandomStructureOptions::default();
        for _ in 0..1000 {
            let cfg = random_structure(16.6, 8, 2.0, 0.05, &opts, &mut r).unwrap();
            let v = cell_volume(&cfg);
            assert!((126.16 - 1e-9..=139.44 + 1e-9).contains(&v), "{v}");
            assert!(min_pair_distance(&cfg) > 2.0);
            assert_eq!(cfg.n_atoms(), 8);
            assert!(cfg
                .positions()
                .iter()
                .flatten()
                .all(|f| (0.0..1.0).contains(f)));
        }
    }

    #[test]
    fn random_structure_agrees_with_wide_brute_force() {
        let mut r = rng(2);
        for _ in 0..20 {
            let cfg = random_structure(16.6, 8, 2.0, 0.05, &Default::default(), &mut r).unwrap();
            assert!((min_pair_distance(&cfg) - brute_min_distance(&cfg, 3)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_atom_always_places() {
        let mut r = rng(3);
        for _ in 0..50 {
            let cfg = random_structure(30.0, 1, 1.0, 0.05, &Default::default(), &mut r).unwrap();
            assert_eq!(cfg.n_atoms(), 1);
        }
    }

    #[test]
    fn impossible_packing_hits_attempt_cap() {
        let mut r = rng(4);
        let opts = RandomStructureOptions {
            attempt_cap: 500,
            ..Default::default()
        };
        let err = random_structure(16.6, 8, 6.0, 0.05, &opts, &mut r).unwrap_err();
        assert!(matches!(err, Error::PlacementFailed { attempts: 500, .. }));
        assert!(err.to_string().contains("smaller min_sep"));
    }

    #[test]
    fn perturbation_bounds_and_reproducibility() {
        let base = fcc(4.05, "Al").supercell(2, 1, 1).unwrap();
        let d0 = min_pair_distance(&base);
        for seed in 0..100 {
            let a = perturb_structure(&base, 0.1, &mut rng(seed));
            let b = perturb_structure(&base, 0.1, &mut rng(seed));
            assert_eq!(a, b);
            assert_eq!(a.lattice(), base.lattice());
            for i in 0..base.n_atoms() {
                let f = [0, 1, 2].map(|k| a.positions()[i][k] - base.positions()[i][k]);
                let f = f.map(|x| x - x.round());
                assert!(norm(&frac_to_cart(&f, base.lattice())) <= 0.1 + 1e-12);
            }
            assert!((min_pair_distance(&a) - d0).abs() <= 0.2 + 1e-12);
        }
        let same = perturb_structure(&base, 0.0, &mut rng(0));
        for i in 0..base.n_atoms() {
            for k in 0..3 {
                assert!((same.positions()[i][k] - base.positions()[i][k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn supercell_doubles_volume() {
        let c = fcc(4.0, "Al");
        let s = c.supercell(2, 1, 1).unwrap();
        assert!((cell_volume(&s) - 2.0 * cell_volume(&c)).abs() < 1e-9);
        assert!((min_pair_distance(&s) - min_pair_distance(&c)).abs() < 1e-12);
    }

    #[test]
    fn wrap_edges() {
        assert_eq!(wrap_unit(-1e-20), 0.0);
        assert_eq!(wrap_unit(1.0), 0.0);
        assert!((wrap_unit(-0.25) - 0.75).abs() < 1e-15);
        assert!((wrap_unit(2.5) - 0.5).abs() < 1e-15);
    }
}
