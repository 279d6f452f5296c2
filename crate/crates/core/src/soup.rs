//! Weighted parameter averaging of adapters that share an initialization.

use crate::error::{Error, Result};
use crate::model::AdapterWeights;
use crate::scalar::Scalar;
use crate::tensor::{NamedTensorStore, Tensor};

/// Adapters with non-negative mixing weights. Weights are normalized when
/// the soup is cooked, so only their ratios matter.
#[derive(Debug, Clone)]
pub struct SoupSpec<'a, T> {
    entries: Vec<(&'a AdapterWeights<T>, f64)>,
}

impl<'a, T: Scalar> SoupSpec<'a, T> {
    pub fn new(entries: Vec<(&'a AdapterWeights<T>, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Contract("a soup needs at least one adapter".into()));
        }
        if let Some((_, w)) = entries.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Contract(format!("soup weight {w} is not a non-negative number")));
        }
        if entries.iter().all(|(_, w)| *w == 0.0) {
            return Err(Error::Contract("soup weights are all zero".into()));
        }
        Ok(Self { entries })
    }

    /// Equal weights.
    pub fn uniform(adapters: &[&'a AdapterWeights<T>]) -> Result<Self> {
        Self::new(adapters.iter().map(|a| (*a, 1.0)).collect())
    }

    pub fn entries(&self) -> &[(&'a AdapterWeights<T>, f64)] {
        &self.entries
    }
}

/// Elementwise `sum_i w_i theta_i / sum_i w_i`, accumulated in f64.
pub fn soup<T: Scalar>(spec: &SoupSpec<'_, T>) -> Result<AdapterWeights<T>> {
    let (first, _) = spec.entries[0];
    for (a, _) in &spec.entries[1..] {
        if a.fingerprint() != first.fingerprint() {
            return Err(Error::Lineage {
                expected: first.fingerprint(),
                found: a.fingerprint(),
            });
        }
        if !a.store().same_layout(first.store()) {
            return Err(Error::Shape("soup inputs differ in tensor names or shapes".into()));
        }
    }
    let total: f64 = spec.entries.iter().map(|(_, w)| w).sum();
    let mut out = NamedTensorStore::new();
    for (name, t) in first.store().iter() {
        let mut acc = vec![0.0f64; t.numel()];
        for (a, w) in &spec.entries {
            let coeff = w / total;
            let src = a.store().require(name)?;
            for (x, &v) in acc.iter_mut().zip(src.values()) {
                *x += coeff * v.to_f64_lossy();
            }
        }
        out.insert(name, Tensor::from_f64(t.shape().to_vec(), &acc)?);
    }
    AdapterWeights::from_store(out, first.fingerprint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AdapterConfig;

    fn cfg() -> AdapterConfig {
        AdapterConfig {
            n_layers: 1,
            d_model: 4,
            bottleneck: 2,
        }
    }

    fn adapter(seed: u64) -> AdapterWeights<f64> {
        AdapterWeights::untrained(cfg(), seed).unwrap()
    }

    #[test]
    fn idempotent_on_copies() {
        let a = adapter(1);
        let s = soup(&SoupSpec::uniform(&[&a, &a, &a]).unwrap()).unwrap();
        for (name, t) in s.store().iter() {
            for (x, y) in t.values().iter().zip(a.store().get(name).unwrap().values()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn opposite_adapters_cancel() {
        let a = adapter(1);
        let mut neg = a.clone();
        neg.map_values(|_, v| *v = -*v);
        let s = soup(&SoupSpec::uniform(&[&a, &neg]).unwrap()).unwrap();
        assert!(s.store().iter().all(|(_, t)| t.values().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn one_to_three_weighting() {
        let mut a = adapter(1);
        let mut b = adapter(1);
        a.map_values(|_, v| *v = 4.0);
        b.map_values(|_, v| *v = 0.0);
        let s = soup(&SoupSpec::new(vec![(&a, 1.0), (&b, 3.0)]).unwrap()).unwrap();
        assert!(s.store().iter().all(|(_, t)| t.values().iter().all(|v| *v == 1.0)));
    }

    #[test]
    fn weight_zero_partner_returns_adapter() {
        let init = adapter(1);
        let mut trained = init.clone();
        trained.map_values(|_, v| *v += 0.5);
        let s = soup(&SoupSpec::new(vec![(&trained, 1.0), (&init, 0.0)]).unwrap()).unwrap();
        assert_eq!(s, trained);
    }

    #[test]
    fn lineage_mismatch_rejected() {
        let a = adapter(1);
        let b = adapter(2);
        assert!(matches!(
            soup(&SoupSpec::uniform(&[&a, &b]).unwrap()),
            Err(Error::Lineage { .. })
        ));
    }

    #[test]
    fn bad_weights_rejected() {
        let a = adapter(1);
        assert!(SoupSpec::new(vec![(&a, 0.0)]).is_err());
        assert!(SoupSpec::new(vec![(&a, -1.0)]).is_err());
        assert!(SoupSpec::<f64>::new(vec![]).is_err());
    }
}
