#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcen::data::{gen_synthetic, SyntheticCorpus, SyntheticSpec};
use tcen::model::{Architecture, ModelConfig};
use tcen::numerics::{HasParams, ParamId, Tape, Tensor, Var};
use tcen::training::{Corpora, ScheduleConfig, Stage, StageConfig};

pub fn tiny_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        vocab_size_src: 6,
        vocab_size_trg: 6,
        feature_dim: 4,
        frames_per_token: (6, 8),
        sentence_len: (1, 3),
        noise_sigma: 0.3,
        reorder: true,
        asr_size: 40,
        mt_size: 60,
        st_size: 24,
        dev_size: 8,
        test_size: 8,
        seed,
    }
}

pub fn tiny_corpus(seed: u64) -> SyntheticCorpus {
    gen_synthetic(&tiny_spec(seed)).unwrap()
}

pub fn tiny_model(spec: &SyntheticSpec, architecture: Architecture, tie_weights: bool) -> ModelConfig {
    ModelConfig {
        architecture,
        tie_weights,
        feature_dim: spec.feature_dim,
        src_words: spec.vocab_size_src,
        trg_vocab: spec.vocab_size_trg + 3,
        d_model: 8,
        att_dim: 6,
        enc_s_layers: 1,
        enc_t_layers: 1,
        dec_layers: 1,
    }
}

pub fn corpora(c: &SyntheticCorpus) -> Corpora {
    Corpora {
        asr: c.asr.clone(),
        mt: c.mt.clone(),
        mt_noisy: Vec::new(),
        st: c.st.clone(),
        dev: c.dev.clone(),
    }
}

pub fn stage(stage: Stage, steps: usize, seed: u64) -> StageConfig {
    let mut cfg = StageConfig::desk(stage, 8);
    cfg.steps = steps;
    cfg.batch_size = 4;
    cfg.seed = seed;
    cfg.eval_every = 5;
    cfg.schedule = ScheduleConfig {
        scale_k: 1.0,
        d_model: 8,
        warmup_n: 10,
    };
    cfg
}

/// Central-difference gradient check that tolerates the round-off floor of the
/// difference quotient: relative error `|a - cd| / max(|a|, |cd|, floor)` over
/// at most `per_param` randomly chosen entries of every parameter.
pub fn resolved_grad_check<M, E, F>(model: &mut M, step: f64, floor: f64, per_param: usize, seed: u64, mut f: F) -> (f64, String)
where
    M: HasParams,
    E: std::fmt::Debug,
    F: FnMut(&mut Tape, &M) -> Result<Var, E>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.params_mut().zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, model).unwrap();
    tape.backward(loss, model.params_mut()).unwrap();
    let analytic: Vec<Tensor> = model.params().iter().map(|(_, p)| p.grad.clone()).collect();
    model.params_mut().zero_grads();
    let value = |model: &M, f: &mut F| {
        let mut tape = Tape::new();
        let l = f(&mut tape, model).unwrap();
        tape.value(l).item()
    };
    let mut worst = (0.0, String::new());
    let ids: Vec<ParamId> = model.params().ids().collect();
    for id in ids {
        let n = analytic[id.index()].numel();
        let entries: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| rng.random_range(0..n)).collect()
        };
        for i in entries {
            let original = model.params().value(id).data()[i];
            model.params_mut().get_mut(id).value.data_mut()[i] = original + step;
            let plus = value(model, &mut f);
            model.params_mut().get_mut(id).value.data_mut()[i] = original - step;
            let minus = value(model, &mut f);
            model.params_mut().get_mut(id).value.data_mut()[i] = original;
            let cd = (plus - minus) / (2.0 * step);
            let a = analytic[id.index()].data()[i];
            let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(floor);
            if rel > worst.0 {
                worst = (rel, format!("{}[{i}]", model.params().get(id).name));
            }
        }
    }
    worst
}
