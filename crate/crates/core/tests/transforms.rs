mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcen::ctc::{collapse, CtcPath};
use tcen::data::MtRecord;
use tcen::model::Mode;
use tcen::numerics::Tape;
use tcen::transforms::{
    mix_corpora, noise_corpus, rle_decode, rle_encode, train_noiser, NoiseMixConfig, NoiserConfig, NoiserDecode,
    NoiserModel, PathDataset, PathRecord, RleSequence,
};
use tcen::training::ScheduleConfig;

const BLANK: usize = 4;

fn path() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..=BLANK, 1..40)
}

/// Runs with no two equal neighbours and positive counts.
fn runs() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    prop::collection::vec((0..BLANK, 1usize..6), 1..12).prop_map(|raw| {
        let mut u: Vec<usize> = Vec::new();
        let mut l = Vec::new();
        for (tok, count) in raw {
            let tok = if u.last() == Some(&tok) { (tok + 1) % (BLANK + 1) } else { tok };
            u.push(tok);
            l.push(count);
        }
        (u, l)
    })
}

proptest! {
    #[test]
    fn decode_inverts_encode(p in path()) {
        let path = CtcPath(p);
        prop_assert_eq!(rle_decode(&rle_encode(&path).unwrap()), path);
    }

    #[test]
    fn encode_inverts_decode((u, l) in runs()) {
        let r = RleSequence::new(u, l).unwrap();
        prop_assert_eq!(rle_encode(&rle_decode(&r)).unwrap(), r);
    }

    #[test]
    fn collapse_ignores_counts((u, l) in runs(), bump in prop::collection::vec(0usize..4, 12)) {
        let other: Vec<usize> = l.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let a = collapse(&rle_decode(&RleSequence::new(u.clone(), l).unwrap()).0, BLANK);
        let b = collapse(&rle_decode(&RleSequence::new(u.clone(), other).unwrap()).0, BLANK);
        let expected: Vec<usize> = u.into_iter().filter(|&t| t != BLANK).collect();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a, expected);
    }
}

fn mt(n: usize, offset: usize) -> Vec<MtRecord> {
    (0..n)
        .map(|i| MtRecord {
            source: vec![(i + offset) % 5],
            target: vec![3 + i % 4],
        })
        .collect()
}

#[test]
fn mixing_is_seed_deterministic() {
    let clean = mt(50, 0);
    let noisy = mt(30, 1);
    let sampler = mix_corpora(&clean, &noisy, NoiseMixConfig { k: 0.3 }).unwrap();
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..500).map(|_| sampler.draw(&mut rng)).map(|(r, n)| (r.clone(), n)).collect::<Vec<_>>()
    };
    assert_eq!(draw(4), draw(4));
    assert_ne!(draw(4), draw(5));
}

fn toy_paths(rng: &mut ChaCha8Rng, n: usize, words: usize) -> PathDataset {
    let records = (0..n)
        .map(|_| {
            let labels: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(0..words)).collect();
            let mut u = Vec::new();
            let mut l = Vec::new();
            for &w in &labels {
                if u.last() == Some(&w) {
                    u.push(words);
                    l.push(1);
                }
                u.push(w);
                l.push(1 + w % 3);
                u.push(words);
                l.push(2);
            }
            PathRecord {
                labels,
                path: RleSequence::new(u, l).unwrap(),
            }
        })
        .collect();
    PathDataset { records }
}

fn noiser_config(steps: usize) -> NoiserConfig {
    NoiserConfig {
        d_model: 16,
        att_dim: 16,
        steps,
        batch_size: 8,
        dropout: 0.0,
        schedule: ScheduleConfig {
            scale_k: 2.0,
            d_model: 16,
            warmup_n: 50,
        },
        ..NoiserConfig::desk()
    }
}

#[test]
fn noiser_loss_at_init_is_near_uniform() {
    let words = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = toy_paths(&mut rng, 32, words);
    let cfg = noiser_config(0);
    let model = NoiserModel::new(cfg.clone(), words).unwrap();
    let batch: Vec<&PathRecord> = data.records.iter().collect();
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, &batch, &mut Mode::eval()).unwrap();
    let uniform = ((words + 2) as f64).ln() + (cfg.max_count as f64).ln();
    let got = tape.value(loss).item();
    assert!((got - uniform).abs() < 0.1 * uniform, "{got} vs {uniform}");
}

#[test]
fn noiser_fits_a_deterministic_mapping() {
    let words = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = toy_paths(&mut rng, 16, words);
    let (model, losses) = train_noiser(&data, words, &noiser_config(600)).unwrap();
    let tail: f64 = losses[losses.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.1, "final loss {tail}");
    let mut exact = 0;
    for r in &data.records {
        let out = model.decode(&[&r.labels], &mut rng).unwrap().remove(0);
        exact += usize::from(out.runs == r.path);
    }
    assert!(exact >= 14, "{exact}/16 reproduced");
}

#[test]
fn noiser_snapshot_round_trips() {
    let words = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = toy_paths(&mut rng, 8, words);
    let (model, _) = train_noiser(&data, words, &noiser_config(20)).unwrap();
    let json = serde_json::to_string(&model.snapshot()).unwrap();
    let back = NoiserModel::from_snapshot(&serde_json::from_str(&json).unwrap()).unwrap();
    assert_eq!(back.snapshot(), model.snapshot());
    let corpus = mt(10, 0);
    assert_eq!(noise_corpus(&model, &corpus, 7, 4).unwrap(), noise_corpus(&back, &corpus, 7, 4).unwrap());
}

#[test]
fn noising_does_not_depend_on_batching() {
    let words = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = toy_paths(&mut rng, 8, words);
    let corpus = mt(11, 2);
    for decode in [NoiserDecode::Greedy, NoiserDecode::Sample] {
        let cfg = NoiserConfig {
            decode,
            ..noiser_config(10)
        };
        let (model, _) = train_noiser(&data, words, &cfg).unwrap();
        let a = noise_corpus(&model, &corpus, 9, 1).unwrap();
        let b = noise_corpus(&model, &corpus, 9, 4).unwrap();
        assert_eq!(a, b, "{decode:?}");
        for (noisy, clean) in a.iter().zip(&corpus) {
            assert_eq!(noisy.target, clean.target);
            assert!(noisy.source.iter().all(|&t| t <= words));
        }
    }
}
