use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::Result;
use crate::fingerprint::Fingerprint;

/// The expensive ground-truth energy evaluator.
///
/// Implementations must be deterministic. `source` is the configuration behind
/// the fingerprint when one exists (crystal problems need it; vector problems
/// evaluate the fingerprint directly).
pub trait EnergyOracle<C>: Sync {
    fn energy(&self, fingerprint: &Fingerprint, source: Option<&C>) -> Result<f64>;
}

impl<C, F> EnergyOracle<C> for F
where
    F: Fn(&Fingerprint, Option<&C>) -> Result<f64> + Sync,
{
    fn energy(&self, fingerprint: &Fingerprint, source: Option<&C>) -> Result<f64> {
        self(fingerprint, source)
    }
}

/// Wraps an oracle and counts every call.
#[derive(Debug)]
pub struct CountingOracle<O> {
    inner: O,
    calls: AtomicU64,
}

impl<O> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<C, O: EnergyOracle<C>> EnergyOracle<C> for CountingOracle<O> {
    fn energy(&self, fingerprint: &Fingerprint, source: Option<&C>) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.energy(fingerprint, source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_each_call_once() {
        let f = |x: &Fingerprint, _: Option<&()>| Ok(x.coords().iter().sum::<f64>());
        let o = CountingOracle::new(f);
        let x = Fingerprint::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(o.energy(&x, None).unwrap(), 3.0);
        assert_eq!(o.energy(&x, None).unwrap(), 3.0);
        assert_eq!(o.calls(), 2);
    }
}
