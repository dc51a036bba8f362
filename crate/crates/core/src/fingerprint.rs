use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the feature space the optimizer works in.
///
/// For crystal problems this is the AGNI vector of a configuration; for vector
/// test problems the configuration and the fingerprint coincide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(Vec<f64>);

impl Fingerprint {
    /// Wraps `coords`, rejecting NaN and infinite components.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(component) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFingerprint { component });
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn distance(&self, other: &Fingerprint) -> f64 {
        euclidean(&self.0, &other.0)
    }
}

impl AsRef<[f64]> for Fingerprint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Plain Euclidean distance. Symmetric bit-for-bit in its arguments.
#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Fingerprint::new(vec![0.0, f64::NAN]),
            Err(Error::NonFiniteFingerprint { component: 1 })
        ));
        assert!(Fingerprint::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn distance_is_symmetric_bitwise() {
        let a = Fingerprint::new(vec![0.1, -2.3, 7.0]).unwrap();
        let b = Fingerprint::new(vec![1.7, 0.2, -3.3]).unwrap();
        assert_eq!(a.distance(&b).to_bits(), b.distance(&a).to_bits());
        let c = Fingerprint::new(vec![3.0, 4.0, 0.0]).unwrap();
        let o = Fingerprint::new(vec![0.0; 3]).unwrap();
        assert_eq!(c.distance(&o), 5.0);
    }
}
