use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub mask_ratio: f64,
    pub span_lambda: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.35,
            span_lambda: 3.5,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask_ratio {} not in [0,1]", self.mask_ratio)));
        }
        if !(self.span_lambda > 0.0 && self.span_lambda.is_finite()) {
            return Err(Error::Config(format!(
                "span_lambda {} must be positive",
                self.span_lambda
            )));
        }
        Ok(())
    }
}

/// Positions covered by span masking: Poisson-length spans at uniform
/// offsets until `round(mask_ratio * n)` positions are covered. The last
/// span is shortened so coverage hits the target exactly.
pub fn mask_positions<R: Rng>(n: usize, mask_ratio: f64, span_lambda: f64, rng: &mut R) -> Result<Vec<bool>> {
    let poisson = Poisson::new(span_lambda).map_err(|e| Error::Config(format!("span_lambda: {e}")))?;
    let target = ((mask_ratio * n as f64).round() as usize).min(n);
    let mut masked = vec![false; n];
    let mut covered = 0;
    while covered < target {
        let len = (poisson.sample(rng) as usize).clamp(1, n);
        let start = rng.random_range(0..=n - len);
        let mut budget = target - covered;
        for m in &mut masked[start..start + len] {
            if budget == 0 {
                break;
            }
            if !*m {
                *m = true;
                covered += 1;
                budget -= 1;
            }
        }
    }
    Ok(masked)
}

/// Replaces each maximal run of masked positions with one `mask_id`.
pub fn collapse_masked(ids: &[usize], masked: &[bool], mask_id: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(ids.len());
    for (i, (&id, &m)) in ids.iter().zip(masked).enumerate() {
        if !m {
            out.push(id);
        } else if i == 0 || !masked[i - 1] {
            out.push(mask_id);
        }
    }
    out
}

/// Span-masking noise drawn from `rng`. Returns `(noised, original)`.
pub fn apply_noise_with<R: Rng>(
    ids: &[usize],
    mask_ratio: f64,
    span_lambda: f64,
    mask_id: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let masked = mask_positions(ids.len(), mask_ratio, span_lambda, rng)?;
    Ok((collapse_masked(ids, &masked, mask_id), ids.to_vec()))
}

/// Span-masking noise seeded from `cfg.seed`.
pub fn apply_noise(ids: &[usize], cfg: &NoiseConfig, mask_id: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    apply_noise_with(ids, cfg.mask_ratio, cfg.span_lambda, mask_id, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MASK: usize = 3;

    #[test]
    fn zero_ratio_is_identity() {
        let ids: Vec<usize> = (10..40).collect();
        let cfg = NoiseConfig {
            mask_ratio: 0.0,
            ..NoiseConfig::default()
        };
        let (noised, orig) = apply_noise(&ids, &cfg, MASK).unwrap();
        assert_eq!(noised, ids);
        assert_eq!(orig, ids);
    }

    #[test]
    fn full_ratio_large_spans_is_single_mask() {
        let ids: Vec<usize> = (10..40).collect();
        let cfg = NoiseConfig {
            mask_ratio: 1.0,
            span_lambda: 1e4,
            seed: 5,
        };
        assert_eq!(apply_noise(&ids, &cfg, MASK).unwrap().0, vec![MASK]);
    }

    #[test]
    fn coverage_on_hundred_tokens() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let covered = mask_positions(100, 0.35, 3.5, &mut rng)
                .unwrap()
                .iter()
                .filter(|m| **m)
                .count();
            assert!((33..=37).contains(&covered), "seed {seed}: {covered}");
        }
    }

    #[test]
    fn runs_collapse() {
        let ids = [5, 6, 7, 8, 9];
        let masked = [false, true, true, false, true];
        assert_eq!(collapse_masked(&ids, &masked, MASK), [5, MASK, 8, MASK]);
    }

    #[test]
    fn invalid_config() {
        let cfg = NoiseConfig {
            span_lambda: 0.0,
            ..NoiseConfig::default()
        };
        assert!(apply_noise(&[1, 2], &cfg, MASK).is_err());
    }
}
