use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AsrRecord, DataError, Frames, MtRecord, StRecord, Vocabs, Vocabulary};

/// Parameters of the synthetic speech-translation task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub vocab_size_src: usize,
    pub vocab_size_trg: usize,
    pub feature_dim: usize,
    /// Inclusive range of frames per source token.
    pub frames_per_token: (usize, usize),
    /// Inclusive range of sentence lengths in tokens.
    pub sentence_len: (usize, usize),
    pub noise_sigma: f64,
    /// Swap adjacent token pairs when mapping source to target.
    pub reorder: bool,
    pub asr_size: usize,
    pub mt_size: usize,
    pub st_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab_size_src: 30,
            vocab_size_trg: 30,
            feature_dim: 8,
            frames_per_token: (6, 10),
            sentence_len: (3, 6),
            noise_sigma: 0.5,
            reorder: true,
            asr_size: 2000,
            mt_size: 5000,
            st_size: 500,
            dev_size: 100,
            test_size: 100,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let positive = [
            ("vocab_size_src", self.vocab_size_src),
            ("vocab_size_trg", self.vocab_size_trg),
            ("feature_dim", self.feature_dim),
            ("frames_per_token.0", self.frames_per_token.0),
            ("sentence_len.0", self.sentence_len.0),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(DataError::Spec(format!("`{name}` must be positive")));
        }
        if self.frames_per_token.0 > self.frames_per_token.1 || self.sentence_len.0 > self.sentence_len.1 {
            return Err(DataError::Spec("ranges must be ordered (min, max)".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DataError::Spec("`noise_sigma` must be a non-negative number".into()));
        }
        if self.mt_size < self.st_size {
            return Err(DataError::Spec("`mt_size` must be at least `st_size`".into()));
        }
        if self.vocab_size_trg < self.vocab_size_src {
            return Err(DataError::Spec(format!(
                "target vocabulary of {} words cannot hold a one-to-one map of {} source words",
                self.vocab_size_trg, self.vocab_size_src
            )));
        }
        if self.sentence_len.1 * self.frames_per_token.1 > super::MAX_FRAMES {
            return Err(DataError::Spec("longest utterance would exceed the frame limit".into()));
        }
        Ok(())
    }
}

/// Everything produced by [`gen_synthetic`].
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub asr: Vec<AsrRecord>,
    pub mt: Vec<MtRecord>,
    pub st: Vec<StRecord>,
    pub dev: Vec<StRecord>,
    pub test: Vec<StRecord>,
    pub vocabs: Vocabs,
    /// Pronunciation of each source token: frames x feature_dim.
    pub codebook: Vec<Frames>,
    /// Target word id (in the target vocabulary) of each source token.
    pub dictionary: Vec<usize>,
}

impl SyntheticCorpus {
    pub fn translate(&self, source: &[usize], reorder: bool) -> Vec<usize> {
        translate(&self.dictionary, source, reorder)
    }
}

fn translate(dictionary: &[usize], source: &[usize], reorder: bool) -> Vec<usize> {
    let mut out: Vec<usize> = source.iter().map(|&s| dictionary[s]).collect();
    if reorder {
        for pair in out.chunks_mut(2) {
            pair.reverse();
        }
    }
    out
}

fn pronounce<R: Rng>(codebook: &[Frames], sentence: &[usize], sigma: f64, rng: &mut R) -> Frames {
    let dim = codebook[0].dim();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = Vec::new();
    for &tok in sentence {
        data.extend_from_slice(codebook[tok].data());
    }
    if sigma > 0.0 {
        for v in &mut data {
            *v += sigma * noise.sample(rng);
        }
    }
    Frames::new(dim, data).expect("codebook frames share a dimension")
}

/// Draws a seeded synthetic corpus. Sentences are unique across all splits, so
/// the ASR, MT, ST, dev and test pools are disjoint.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let codebook: Vec<Frames> = (0..spec.vocab_size_src)
        .map(|_| {
            let n = rng.random_range(spec.frames_per_token.0..=spec.frames_per_token.1);
            let data = (0..n * spec.feature_dim).map(|_| normal.sample(&mut rng)).collect();
            Frames::new(spec.feature_dim, data).expect("dim is positive")
        })
        .collect();

    let mut targets: Vec<usize> = (0..spec.vocab_size_trg).collect();
    targets.shuffle(&mut rng);
    let dictionary: Vec<usize> = targets[..spec.vocab_size_src].iter().map(|t| t + 3).collect();

    let src_words: Vec<String> = (0..spec.vocab_size_src).map(|i| format!("s{i}")).collect();
    let trg_words: Vec<String> = (0..spec.vocab_size_trg).map(|i| format!("t{i}")).collect();
    let vocabs = Vocabs {
        src: Vocabulary::source(&src_words)?,
        trg: Vocabulary::target(&trg_words)?,
    };

    let total = spec.asr_size + spec.mt_size + spec.st_size + spec.dev_size + spec.test_size;
    let mut seen = HashSet::new();
    let mut sentences = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while sentences.len() < total {
        attempts += 1;
        if attempts > 100 * total + 1000 {
            return Err(DataError::Spec(format!(
                "could not draw {total} distinct sentences from the configured vocabulary and lengths"
            )));
        }
        let len = rng.random_range(spec.sentence_len.0..=spec.sentence_len.1);
        let s: Vec<usize> = (0..len).map(|_| rng.random_range(0..spec.vocab_size_src)).collect();
        if seen.insert(s.clone()) {
            sentences.push(s);
        }
    }

    let mut pools = sentences.into_iter();
    let mut take = |n: usize| pools.by_ref().take(n).collect::<Vec<_>>();
    let asr_s = take(spec.asr_size);
    let mt_s = take(spec.mt_size);
    let st_s = take(spec.st_size);
    let dev_s = take(spec.dev_size);
    let test_s = take(spec.test_size);

    let asr = asr_s
        .into_iter()
        .map(|s| AsrRecord {
            frames: pronounce(&codebook, &s, spec.noise_sigma, &mut rng),
            transcript: s,
        })
        .collect();
    let mt = mt_s
        .into_iter()
        .map(|s| MtRecord {
            target: translate(&dictionary, &s, spec.reorder),
            source: s,
        })
        .collect();
    let speech = |pool: Vec<Vec<usize>>, rng: &mut ChaCha8Rng| -> Vec<StRecord> {
        pool.into_iter()
            .map(|s| StRecord {
                frames: pronounce(&codebook, &s, spec.noise_sigma, rng),
                target: translate(&dictionary, &s, spec.reorder),
            })
            .collect()
    };
    let st = speech(st_s, &mut rng);
    let dev = speech(dev_s, &mut rng);
    let test = speech(test_s, &mut rng);

    Ok(SyntheticCorpus {
        asr,
        mt,
        st,
        dev,
        test,
        vocabs,
        codebook,
        dictionary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            asr_size: 20,
            mt_size: 30,
            st_size: 10,
            dev_size: 5,
            test_size: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn noiseless_single_token_is_the_codebook_entry() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            sentence_len: (1, 1),
            vocab_size_src: 30,
            asr_size: 10,
            mt_size: 5,
            st_size: 5,
            dev_size: 0,
            test_size: 0,
            ..SyntheticSpec::default()
        };
        let c = gen_synthetic(&spec).unwrap();
        for r in &c.asr {
            assert_eq!(r.frames, c.codebook[r.transcript[0]]);
        }
    }

    #[test]
    fn unordered_map_keeps_length() {
        let spec = SyntheticSpec {
            reorder: false,
            ..small()
        };
        let c = gen_synthetic(&spec).unwrap();
        for r in &c.mt {
            assert_eq!(r.source.len(), r.target.len());
            assert_eq!(r.target, c.translate(&r.source, false));
        }
    }

    #[test]
    fn reorder_swaps_pairs() {
        assert_eq!(translate(&[10, 11, 12], &[0, 1, 2], true), vec![11, 10, 12]);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(gen_synthetic(&small()).unwrap(), gen_synthetic(&small()).unwrap());
        let other = SyntheticSpec { seed: 2, ..small() };
        assert_ne!(gen_synthetic(&small()).unwrap().asr, gen_synthetic(&other).unwrap().asr);
    }

    #[test]
    fn splits_are_disjoint() {
        let c = gen_synthetic(&small()).unwrap();
        let mut seen = HashSet::new();
        for s in c.asr.iter().map(|r| r.transcript.clone()).chain(c.mt.iter().map(|r| r.source.clone())) {
            assert!(seen.insert(s));
        }
        // ST/dev/test sentences are recovered through the invertible dictionary map.
        let inverse: std::collections::HashMap<usize, usize> =
            c.dictionary.iter().enumerate().map(|(s, &t)| (t, s)).collect();
        for r in c.st.iter().chain(&c.dev).chain(&c.test) {
            let mut src: Vec<usize> = r.target.iter().map(|t| inverse[t]).collect();
            for pair in src.chunks_mut(2) {
                pair.reverse();
            }
            assert!(seen.insert(src));
        }
    }

    #[test]
    fn small_target_vocab_rejected() {
        let spec = SyntheticSpec {
            vocab_size_trg: 10,
            ..small()
        };
        assert!(matches!(gen_synthetic(&spec), Err(DataError::Spec(_))));
    }
}
