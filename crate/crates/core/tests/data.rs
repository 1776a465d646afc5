mod common;

use common::{tiny_corpus, tiny_model, tiny_spec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tcen::data::{batchify, gen_synthetic, read_corpus, write_corpus, AsrRecord, Batch, MtRecord, StRecord};
use tcen::model::{Architecture, Mode, TcenModel};
use tcen::numerics::Tape;

proptest! {
    #[test]
    fn batchify_is_a_partition(
        lengths in prop::collection::vec(1usize..40, 0..200),
        batch_size in 1usize..17,
        seed in any::<u64>(),
    ) {
        let batches = batchify(&lengths, batch_size, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch_size));
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..lengths.len()).collect::<Vec<_>>());
        prop_assert_eq!(batches, batchify(&lengths, batch_size, &mut ChaCha8Rng::seed_from_u64(seed)));
    }
}

fn loss(model: &TcenModel, batch: &Batch) -> f64 {
    model.task_loss(&mut Tape::new(), batch, &mut Mode::eval()).unwrap().value
}

#[test]
fn padding_does_not_change_the_loss() {
    let c = tiny_corpus(3);
    let model = TcenModel::new(tiny_model(&tiny_spec(3), Architecture::Tcen, true), 2).unwrap();

    let st: Vec<&StRecord> = c.st.iter().take(6).collect();
    let joint = loss(&model, &Batch::st(&st)) * Batch::st(&st).target.unwrap().num_tokens() as f64;
    let alone: f64 = st
        .iter()
        .map(|r| {
            let b = Batch::st(&[*r]);
            loss(&model, &b) * b.target.as_ref().unwrap().num_tokens() as f64
        })
        .sum();
    assert!((joint - alone).abs() < 1e-9 * alone.abs(), "{joint} vs {alone}");

    let mt: Vec<&MtRecord> = c.mt.iter().take(6).collect();
    let joint = loss(&model, &Batch::mt(&mt)) * Batch::mt(&mt).target.unwrap().num_tokens() as f64;
    let alone: f64 = mt
        .iter()
        .map(|r| {
            let b = Batch::mt(&[*r]);
            loss(&model, &b) * b.target.as_ref().unwrap().num_tokens() as f64
        })
        .sum();
    assert!((joint - alone).abs() < 1e-9 * alone.abs(), "{joint} vs {alone}");

    let asr: Vec<&AsrRecord> = c.asr.iter().take(6).collect();
    let joint = loss(&model, &Batch::asr(&asr)) * asr.len() as f64;
    let alone: f64 = asr.iter().map(|r| loss(&model, &Batch::asr(&[*r]))).sum();
    assert!((joint - alone).abs() < 1e-9 * alone.abs(), "{joint} vs {alone}");
}

#[test]
fn corpora_round_trip_through_files() {
    let c = tiny_corpus(4);
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    write_corpus(&c.asr, &c.vocabs, &p("asr.jsonl")).unwrap();
    write_corpus(&c.mt, &c.vocabs, &p("mt.jsonl")).unwrap();
    write_corpus(&c.st, &c.vocabs, &p("st.jsonl")).unwrap();
    assert_eq!(read_corpus::<AsrRecord>(&p("asr.jsonl"), &c.vocabs).unwrap(), c.asr);
    assert_eq!(read_corpus::<MtRecord>(&p("mt.jsonl"), &c.vocabs).unwrap(), c.mt);
    assert_eq!(read_corpus::<StRecord>(&p("st.jsonl"), &c.vocabs).unwrap(), c.st);
}

#[test]
fn generation_is_seeded() {
    assert_eq!(tiny_corpus(5), tiny_corpus(5));
    assert_ne!(tiny_corpus(5).mt, tiny_corpus(6).mt);
    let mut spec = tiny_spec(1);
    spec.frames_per_token = (9, 3);
    assert!(gen_synthetic(&spec).is_err());
}

#[test]
fn translations_follow_the_dictionary() {
    let c = tiny_corpus(7);
    for r in &c.mt {
        let mut expected: Vec<usize> = r.source.iter().map(|&s| c.dictionary[s]).collect();
        let mut got = r.target.clone();
        expected.sort_unstable();
        got.sort_unstable();
        assert_eq!(got, expected);
    }
}
