//! The candidate set: an append-only list of fingerprints, each optionally
//! tied to the input-space configuration it was computed from, with a cached
//! nearest-neighbor distance per entry.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::fingerprint::{euclidean, Fingerprint};

#[derive(Debug, Clone)]
pub struct Entry<C> {
    pub fingerprint: Fingerprint,
    /// The configuration this fingerprint came from. Fingerprints cannot be
    /// inverted, so this link is the only way back to input space.
    pub source: Option<C>,
}

#[derive(Debug, Clone)]
pub struct CandidateSet<C> {
    dim: usize,
    entries: Vec<Entry<C>>,
    nn_dist: Vec<f64>,
    nn_index: Vec<Option<usize>>,
}

impl<C> CandidateSet<C> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            nn_dist: Vec::new(),
            nn_index: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> &Entry<C> {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[Entry<C>] {
        &self.entries
    }

    pub fn coords(&self, i: usize) -> &[f64] {
        self.entries[i].fingerprint.coords()
    }

    pub fn fingerprints(&self) -> impl Iterator<Item = &Fingerprint> {
        self.entries.iter().map(|e| &e.fingerprint)
    }

    /// Cached distance from each entry to its closest other entry
    /// (`+inf` while the set holds a single point).
    pub fn nn_dist(&self) -> &[f64] {
        &self.nn_dist
    }

    pub fn nn_index(&self) -> &[Option<usize>] {
        &self.nn_index
    }

    /// Nearest member to an arbitrary point: `(index, distance)`, or `None`
    /// for an empty set.
    pub fn nearest_to(&self, x: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let d = euclidean(x, e.fingerprint.coords());
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }

    /// Appends an entry and updates the nearest-neighbor cache. Returns the
    /// new entry's index.
    pub fn add(&mut self, fingerprint: Fingerprint, source: Option<C>) -> Result<usize> {
        if fingerprint.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: fingerprint.dim(),
            });
        }
        let x = fingerprint.coords();
        let new_idx = self.entries.len();
        let mut best = f64::INFINITY;
        let mut best_idx = None;
        let mut dists = Vec::with_capacity(new_idx);
        for (i, e) in self.entries.iter().enumerate() {
            if e.fingerprint.coords() == x {
                return Err(Error::DuplicateFingerprint { existing: i });
            }
            let d = euclidean(e.fingerprint.coords(), x);
            if d < best {
                best = d;
                best_idx = Some(i);
            }
            dists.push(d);
        }
        for (i, d) in dists.into_iter().enumerate() {
            if d < self.nn_dist[i] {
                self.nn_dist[i] = d;
                self.nn_index[i] = Some(new_idx);
            }
        }
        self.entries.push(Entry {
            fingerprint,
            source,
        });
        self.nn_dist.push(best);
        self.nn_index.push(best_idx);
        Ok(new_idx)
    }

    /// Bounding box of all entries as `(low, high)` per dimension.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        let mut bbox = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim];
        for e in &self.entries {
            for (b, &v) in bbox.iter_mut().zip(e.fingerprint.coords()) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        bbox
    }

    /// Writes `id,x1,...,xp` rows with round-trip precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write_coords_header(&mut w, "id", "x", self.dim)?;
        for (i, e) in self.entries.iter().enumerate() {
            write!(w, "{i}")?;
            for v in e.fingerprint.coords() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

impl CandidateSet<()> {
    /// Reads the `id,x1,...,xp` schema written by [`CandidateSet::write_csv`].
    /// Ids must be `0..n` in order.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let rows = read_numeric_csv(r, "id", "x")?;
        let dim = rows.dim;
        let mut set = CandidateSet::new(dim);
        for (row, (id, coords)) in rows.rows.into_iter().enumerate() {
            if id != row {
                return Err(Error::Parse {
                    line: row + 2,
                    message: format!("column 1: expected id {row}, found {id}"),
                });
            }
            let fp = Fingerprint::new(coords).map_err(|e| Error::Parse {
                line: row + 2,
                message: e.to_string(),
            })?;
            set.add(fp, None).map_err(|e| Error::Parse {
                line: row + 2,
                message: e.to_string(),
            })?;
        }
        Ok(set)
    }
}

pub(crate) fn write_coords_header<W: Write>(
    w: &mut W,
    first: &str,
    prefix: &str,
    dim: usize,
) -> std::io::Result<()> {
    write!(w, "{first}")?;
    for k in 1..=dim {
        write!(w, ",{prefix}{k}")?;
    }
    writeln!(w)
}

pub(crate) struct NumericRows {
    pub dim: usize,
    pub rows: Vec<(usize, Vec<f64>)>,
}

/// Parses `<first>,<prefix>1,...,<prefix>p` CSV with an integer first column.
pub(crate) fn read_numeric_csv<R: BufRead>(r: R, first: &str, prefix: &str) -> Result<NumericRows> {
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty file: missing header".into(),
            })
        }
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 2 || cols[0] != first {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must start with `{first},{prefix}1`"),
        });
    }
    for (k, c) in cols.iter().enumerate().skip(1) {
        if *c != format!("{prefix}{k}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("column {}: expected `{prefix}{k}`, found `{c}`", k + 1),
            });
        }
    }
    let dim = cols.len() - 1;
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let lineno = n + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} columns, found {}", dim + 1, fields.len()),
            });
        }
        let id = fields[0].parse::<usize>().map_err(|e| Error::Parse {
            line: lineno,
            message: format!("column 1: {e}"),
        })?;
        let coords = fields[1..]
            .iter()
            .enumerate()
            .map(|(k, f)| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("column {}: {e}", k + 2),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((id, coords));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    Ok(NumericRows { dim, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(v: &[f64]) -> Fingerprint {
        Fingerprint::new(v.to_vec()).unwrap()
    }

    fn brute_nn(set: &CandidateSet<()>) -> Vec<f64> {
        (0..set.len())
            .map(|i| {
                (0..set.len())
                    .filter(|&j| j != i)
                    .map(|j| euclidean(set.coords(i), set.coords(j)))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn origin_plus_three_four() {
        let mut s = CandidateSet::<()>::new(2);
        s.add(fp(&[0.0, 0.0]), None).unwrap();
        assert_eq!(s.nn_dist(), &[f64::INFINITY]);
        s.add(fp(&[3.0, 4.0]), None).unwrap();
        assert_eq!(s.nn_dist(), &[5.0, 5.0]);
    }

    #[test]
    fn insertion_between_updates_neighbors() {
        let mut s = CandidateSet::<()>::new(2);
        s.add(fp(&[0.0, 0.0]), None).unwrap();
        s.add(fp(&[10.0, 0.0]), None).unwrap();
        s.add(fp(&[1.0, 0.0]), None).unwrap();
        assert_eq!(s.nn_dist(), &[1.0, 9.0, 1.0]);
        assert_eq!(s.nn_index(), &[Some(2), Some(2), Some(0)]);
    }

    #[test]
    fn toy_set_plus_point_matches_brute_force() {
        let mut s = CandidateSet::<()>::new(2);
        for p in crate::setgeom::TOY_POINTS {
            s.add(fp(&p), None).unwrap();
        }
        s.add(fp(&[-1.4, 1.9]), None).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.nn_dist(), brute_nn(&s).as_slice());
    }

    #[test]
    fn rejects_duplicates_and_wrong_dimension() {
        let mut s = CandidateSet::<()>::new(2);
        s.add(fp(&[1.0, 2.0]), None).unwrap();
        assert!(matches!(
            s.add(fp(&[1.0, 2.0]), None),
            Err(Error::DuplicateFingerprint { existing: 0 })
        ));
        assert!(matches!(
            s.add(fp(&[1.0]), None),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn csv_round_trip_and_diagnostics() {
        let mut s = CandidateSet::<()>::new(3);
        s.add(fp(&[0.1, 1e-17, -3.0]), None).unwrap();
        s.add(fp(&[2.0 / 3.0, 5.0, 6.5]), None).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,x1,x2,x3\n"));
        let back = CandidateSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.coords(1), s.coords(1));

        let bad = "id,x1,x2\n0,1.0,2.0\n1,abc,3\n";
        let err = CandidateSet::read_csv(bad.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("column 2"));
        assert!(CandidateSet::read_csv("".as_bytes()).is_err());
        assert!(CandidateSet::read_csv("id,x1\n".as_bytes()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cache_matches_brute_force(pts in prop::collection::vec(
                prop::collection::vec(-10.0f64..10.0, 3), 1..40)) {
                let mut s = CandidateSet::<()>::new(3);
                for p in pts {
                    let _ = s.add(Fingerprint::new(p).unwrap(), None);
                }
                let brute = brute_nn(&s);
                prop_assert_eq!(s.nn_dist(), brute.as_slice());
            }
        }
    }
}
