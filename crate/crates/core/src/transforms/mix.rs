use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TransformError;
use crate::data::MtRecord;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseMixConfig {
    /// Probability that an MT draw comes from the noisy corpus.
    pub k: f64,
}

impl Default for NoiseMixConfig {
    fn default() -> Self {
        Self { k: 0.3 }
    }
}

impl NoiseMixConfig {
    pub fn validate(&self) -> Result<(), TransformError> {
        if !(0.0..=1.0).contains(&self.k) {
            return Err(TransformError::MixRate(self.k));
        }
        Ok(())
    }
}

/// Draws MT pairs from a clean and a noisy corpus.
#[derive(Clone, Copy, Debug)]
pub struct MixSampler<'a> {
    clean: &'a [MtRecord],
    noisy: &'a [MtRecord],
    k: f64,
}

pub fn mix_corpora<'a>(
    clean: &'a [MtRecord],
    noisy: &'a [MtRecord],
    cfg: NoiseMixConfig,
) -> Result<MixSampler<'a>, TransformError> {
    cfg.validate()?;
    if cfg.k > 0.0 && noisy.is_empty() {
        return Err(TransformError::EmptyCorpus("noisy MT"));
    }
    if cfg.k < 1.0 && clean.is_empty() {
        return Err(TransformError::EmptyCorpus("clean MT"));
    }
    Ok(MixSampler { clean, noisy, k: cfg.k })
}

impl<'a> MixSampler<'a> {
    /// One pair and whether it came from the noisy corpus. Always consumes
    /// two random draws so the stream does not depend on `k`.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> (&'a MtRecord, bool) {
        let noisy = rng.random::<f64>() < self.k;
        let pool = if noisy { self.noisy } else { self.clean };
        (&pool[rng.random_range(0..pool.len())], noisy)
    }

    pub fn k(&self) -> f64 {
        self.k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn recs(n: usize, tag: usize) -> Vec<MtRecord> {
        (0..n)
            .map(|i| MtRecord {
                source: vec![tag, i],
                target: vec![3],
            })
            .collect()
    }

    #[test]
    fn extreme_rates() {
        let (clean, noisy) = (recs(5, 0), recs(5, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let never = mix_corpora(&clean, &noisy, NoiseMixConfig { k: 0.0 }).unwrap();
        let always = mix_corpora(&clean, &noisy, NoiseMixConfig { k: 1.0 }).unwrap();
        for _ in 0..1000 {
            assert!(!never.draw(&mut rng).1);
            let (r, n) = always.draw(&mut rng);
            assert!(n && r.source[0] == 1);
        }
    }

    #[test]
    fn empty_noisy_corpus_rejected() {
        let clean = recs(3, 0);
        assert!(mix_corpora(&clean, &[], NoiseMixConfig { k: 0.3 }).is_err());
        assert!(mix_corpora(&clean, &[], NoiseMixConfig { k: 0.0 }).is_ok());
        assert!(mix_corpora(&clean, &clean, NoiseMixConfig { k: 1.5 }).is_err());
    }
}
