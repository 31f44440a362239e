//! Reference distributions for the scaled statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::numeric::normal_sf;
use crate::variance::EigenWeights;

/// Upper tail of χ²₁: `2(1 − Φ(√s))`.
pub fn chi1_pvalue(stat: f64) -> f64 {
    if !(stat > 0.0) {
        return 1.0;
    }
    (2.0 * normal_sf(stat.sqrt())).min(1.0)
}

/// Upper tail of χ² with `df` degrees of freedom.
pub fn chisq_pvalue(stat: f64, df: usize) -> f64 {
    if !(stat > 0.0) {
        return 1.0;
    }
    ChiSquared::new(df as f64)
        .expect("positive degrees of freedom")
        .sf(stat)
}

pub const DEFAULT_MIXTURE_DRAWS: u64 = 200_000;
pub const DEFAULT_SEED: u64 = 20_130_601;
pub const MIN_MIXTURE_DRAWS: u64 = 10_000;

/// Monte-Carlo settings for the weighted χ² mixture tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightedChisqSettings {
    pub draws: u64,
    pub seed: u64,
}

impl Default for WeightedChisqSettings {
    fn default() -> Self {
        Self {
            draws: DEFAULT_MIXTURE_DRAWS,
            seed: DEFAULT_SEED,
        }
    }
}

impl WeightedChisqSettings {
    pub fn validate(&self) -> Result<()> {
        if self.draws < MIN_MIXTURE_DRAWS {
            return Err(Error::invalid(format!(
                "mixture p-values need at least {MIN_MIXTURE_DRAWS} draws, got {}",
                self.draws
            )));
        }
        Ok(())
    }
}

const CHUNK: u64 = 8_192;

/// `P(Σ c_k Z_k² > stat)` estimated from `draws` seeded samples, clamped to
/// `[1/(draws+1), 1]`.
///
/// Draws are generated in fixed-size chunks, each from its own ChaCha stream
/// keyed by the chunk index, and the exceedances are counted as integers, so
/// the result does not depend on how the chunks are scheduled.
pub fn weighted_chisq_pvalue(stat: f64, weights: &EigenWeights, settings: &WeightedChisqSettings) -> Result<f64> {
    settings.validate()?;
    let c: Vec<f64> = weights.as_slice().iter().copied().filter(|&w| w > 0.0).collect();
    if c.is_empty() {
        return Err(Error::AllZeroWeights);
    }
    if !(stat > 0.0) {
        return Ok(1.0);
    }
    let chunks = settings.draws.div_ceil(CHUNK);
    let exceed: u64 = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(chunk);
            let count = CHUNK.min(settings.draws - chunk * CHUNK);
            (0..count)
                .filter(|_| {
                    let draw: f64 = c
                        .iter()
                        .map(|w| {
                            let z: f64 = rng.sample(StandardNormal);
                            w * z * z
                        })
                        .sum();
                    draw > stat
                })
                .count() as u64
        })
        .sum();
    let p = exceed as f64 / settings.draws as f64;
    Ok(p.max(1.0 / (settings.draws as f64 + 1.0)).min(1.0))
}
