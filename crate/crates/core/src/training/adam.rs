use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::NamedTensorStore;

/// Mutable access to parameter values by name.
pub trait ParamAccess<T> {
    fn values_mut(&mut self, name: &str) -> Option<&mut [T]>;
}

impl<T: Scalar> ParamAccess<T> for Model<T> {
    fn values_mut(&mut self, name: &str) -> Option<&mut [T]> {
        self.param_mut(name).map(|t| t.values_mut())
    }
}

impl<T: Scalar> ParamAccess<T> for NamedTensorStore<T> {
    fn values_mut(&mut self, name: &str) -> Option<&mut [T]> {
        self.get_mut(name).map(|t| t.values_mut())
    }
}

/// Adam with bias correction. Moments are created lazily per parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One update of every parameter named in `grads`. Rejects non-finite
    /// gradients before touching any parameter.
    pub fn step<P: ParamAccess<T> + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &[(String, Vec<T>)],
        lr: f64,
    ) -> Result<()> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::Training(format!("non-finite gradient for `{name}`")));
        }
        for (name, g) in grads {
            let p = params
                .values_mut(name)
                .ok_or_else(|| Error::Contract(format!("no parameter `{name}` to update")))?;
            if p.len() != g.len() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has {} entries, parameter {}",
                    g.len(),
                    p.len()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (name, g) in grads {
            let p = params.values_mut(name).expect("checked above");
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
            for i in 0..g.len() {
                let gi = g[i].to_f64_lossy();
                let mi = b1 * m[i].to_f64_lossy() + (1.0 - b1) * gi;
                let vi = b2 * v[i].to_f64_lossy() + (1.0 - b2) * gi * gi;
                m[i] = T::from_f64_lossy(mi);
                v[i] = T::from_f64_lossy(vi);
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                p[i] = T::from_f64_lossy(p[i].to_f64_lossy() - update);
            }
        }
        Ok(())
    }
}
