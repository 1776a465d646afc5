//! End-to-end experiment: synthetic data, the path model and noiser, and the
//! system variants compared in the ablations.

use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, AsrRecord, MtRecord, StRecord, SyntheticCorpus, SyntheticSpec, Task};
use crate::eval::{beam_search, bleu, BeamConfig, BeamInput, BleuReport, EvalError};
use crate::model::{Architecture, ModelConfig, ModelError, TcenModel};
use crate::training::{train_stage, Corpora, Stage, StageConfig, TaskRatios, TrainError, TrainingLog};
use crate::transforms::{build_path_dataset, noise_corpus, train_noiser, NoiseMixConfig, NoiserConfig, NoiserModel, PathDataset, TransformError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Systems compared against each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Full system: tandem encoders, tied CTC/embedding matrix, noisy MT sources.
    Tcen,
    /// MT sources are always clean text.
    MtNoiseOff,
    /// Separate CTC classification matrix.
    WeightSharingOff,
    /// Fine-tuning from random initialization.
    PretrainOff,
    /// Multi-task baseline with ASR/MT pre-training and a direct speech-to-decoder ST path.
    PretrainMtl,
    /// ST-only training.
    Vanilla,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Tcen,
        Variant::MtNoiseOff,
        Variant::WeightSharingOff,
        Variant::PretrainOff,
        Variant::PretrainMtl,
        Variant::Vanilla,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tcen => "tcen",
            Variant::MtNoiseOff => "mt-noise-off",
            Variant::WeightSharingOff => "weight-sharing-off",
            Variant::PretrainOff => "pretrain-off",
            Variant::PretrainMtl => "pretrain-mtl",
            Variant::Vanilla => "vanilla",
        }
    }

    pub fn pretrains(self) -> bool {
        !matches!(self, Variant::PretrainOff | Variant::Vanilla)
    }

    pub fn uses_noise(self) -> bool {
        matches!(self, Variant::Tcen | Variant::WeightSharingOff | Variant::PretrainOff)
    }

    pub fn model_config(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Variant::Tcen | Variant::MtNoiseOff | Variant::PretrainOff => {
                c.architecture = Architecture::Tcen;
                c.tie_weights = true;
            }
            Variant::WeightSharingOff => {
                c.architecture = Architecture::Tcen;
                c.tie_weights = false;
            }
            Variant::PretrainMtl => {
                c.architecture = Architecture::ManyToMany;
                c.tie_weights = false;
            }
            Variant::Vanilla => {
                c.architecture = Architecture::Vanilla;
                c.tie_weights = false;
            }
        }
        c
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                format!("unknown variant `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: SyntheticSpec,
    pub model: ModelConfig,
    /// CTC-only training of the model whose greedy paths teach the noiser.
    pub path_model: StageConfig,
    pub noiser: NoiserConfig,
    pub pretrain: StageConfig,
    pub finetune: StageConfig,
    /// Share of MT draws taken from the noisy corpus, in both stages.
    pub noise_k: f64,
    pub beam: BeamConfig,
}

impl ExperimentConfig {
    /// Small single-layer models sized for CPU runs of 3000 + 3000 steps.
    pub fn desk() -> Self {
        let data = SyntheticSpec::default();
        let d = 32;
        let model = ModelConfig {
            d_model: d,
            att_dim: d,
            enc_s_layers: 1,
            enc_t_layers: 1,
            dec_layers: 1,
            ..ModelConfig::desk(data.feature_dim, data.vocab_size_src, data.vocab_size_trg + 3)
        };
        let mut path_model = StageConfig::desk(Stage::Pretrain, d);
        path_model.ratios = TaskRatios::only(Task::Asr);
        path_model.steps = 1500;
        path_model.eval_every = 0;
        let mut pretrain = StageConfig::desk(Stage::Pretrain, d);
        pretrain.eval_every = 0;
        Self {
            data,
            model,
            path_model,
            noiser: NoiserConfig::desk(),
            pretrain,
            finetune: StageConfig::desk(Stage::Finetune, d),
            noise_k: 0.3,
            beam: BeamConfig::default(),
        }
    }

    /// Reseeds data generation, initialization and every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.noiser.seed = seed.wrapping_add(1);
        self.path_model.seed = seed.wrapping_add(2);
        self.pretrain.seed = seed.wrapping_add(3);
        self.finetune.seed = seed.wrapping_add(4);
        self
    }

    pub fn model_seed(&self) -> u64 {
        self.data.seed.wrapping_add(5)
    }
}

/// Data shared by every variant of one seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub corpus: SyntheticCorpus,
    pub paths: PathDataset,
    pub noisy_mt: Vec<MtRecord>,
    pub path_model_log: TrainingLog,
    pub noiser_losses: Vec<f64>,
}

/// Path model and noiser fitted to one ASR corpus.
#[derive(Clone, Debug)]
pub struct NoiserRun {
    pub path_model: TcenModel,
    pub path_model_log: TrainingLog,
    pub paths: PathDataset,
    pub noiser: NoiserModel,
    pub noiser_losses: Vec<f64>,
}

/// Trains a CTC-only model on `asr`, collects its greedy paths and fits the noiser to them.
pub fn fit_noiser(cfg: &ExperimentConfig, asr: &[AsrRecord]) -> Result<NoiserRun, PipelineError> {
    let asr_corpora = Corpora {
        asr: asr.to_vec(),
        ..Corpora::default()
    };
    let path_cfg = ModelConfig {
        architecture: Architecture::Tcen,
        tie_weights: true,
        ..cfg.model.clone()
    };
    let model = TcenModel::new(path_cfg, cfg.model_seed().wrapping_add(100))?;
    let (path_model, path_model_log) = train_stage(model, &asr_corpora, &cfg.path_model)?;
    let paths = build_path_dataset(&path_model, asr, cfg.path_model.batch_size)?;
    let (noiser, noiser_losses) = train_noiser(&paths, cfg.model.src_words, &cfg.noiser)?;
    Ok(NoiserRun {
        path_model,
        path_model_log,
        paths,
        noiser,
        noiser_losses,
    })
}

/// Source side of `mt` replaced by noiser output, seeded from the noiser config.
pub fn noisy_mt(cfg: &ExperimentConfig, noiser: &NoiserModel, mt: &[MtRecord]) -> Result<Vec<MtRecord>, PipelineError> {
    Ok(noise_corpus(noiser, mt, cfg.noiser.seed, 64)?)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, PipelineError> {
    let corpus = gen_synthetic(&cfg.data)?;
    let run = fit_noiser(cfg, &corpus.asr)?;
    let noisy_mt = noisy_mt(cfg, &run.noiser, &corpus.mt)?;
    Ok(Prepared {
        corpus,
        paths: run.paths,
        noisy_mt,
        path_model_log: run.path_model_log,
        noiser_losses: run.noiser_losses,
    })
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub variant: Variant,
    pub pretrain_log: Option<TrainingLog>,
    pub finetune_log: TrainingLog,
    pub final_dev_accuracy: f64,
    pub bleu: BleuReport,
    pub hypotheses: Vec<Vec<usize>>,
    pub model: TcenModel,
}

/// Stage configs a variant actually runs with.
pub fn variant_stages(cfg: &ExperimentConfig, variant: Variant) -> (Option<StageConfig>, StageConfig) {
    let noise = NoiseMixConfig {
        k: if variant.uses_noise() { cfg.noise_k } else { 0.0 },
    };
    let pretrain = variant.pretrains().then(|| StageConfig {
        noise,
        ..cfg.pretrain.clone()
    });
    let mut finetune = StageConfig {
        noise,
        ..cfg.finetune.clone()
    };
    if variant == Variant::Vanilla {
        finetune.ratios = TaskRatios::only(Task::St);
    }
    (pretrain, finetune)
}

pub fn run_variant(cfg: &ExperimentConfig, prepared: &Prepared, variant: Variant) -> Result<VariantRun, PipelineError> {
    let c = &prepared.corpus;
    let corpora = Corpora {
        asr: c.asr.clone(),
        mt: c.mt.clone(),
        mt_noisy: prepared.noisy_mt.clone(),
        st: c.st.clone(),
        dev: c.dev.clone(),
    };
    let (pretrain, finetune) = variant_stages(cfg, variant);
    let mut model = TcenModel::new(variant.model_config(&cfg.model), cfg.model_seed())?;
    let mut pretrain_log = None;
    if let Some(stage) = &pretrain {
        let (m, log) = train_stage(model, &corpora, stage)?;
        model = m;
        pretrain_log = Some(log);
    }
    let (model, finetune_log) = train_stage(model, &corpora, &finetune)?;
    let final_dev_accuracy = match finetune_log.evals.last() {
        Some(e) => e.dev_token_accuracy,
        None => crate::eval::token_accuracy(&model, &c.dev, finetune.batch_size)?,
    };
    let (hypotheses, bleu) = translate_and_score(&model, &c.test, &cfg.beam)?;
    Ok(VariantRun {
        variant,
        pretrain_log,
        finetune_log,
        final_dev_accuracy,
        bleu,
        hypotheses,
        model,
    })
}

/// Beam-decodes every utterance and scores the outputs against the references.
pub fn translate_and_score(
    model: &TcenModel,
    set: &[StRecord],
    beam: &BeamConfig,
) -> Result<(Vec<Vec<usize>>, BleuReport), PipelineError> {
    let hyps = set
        .iter()
        .map(|r| beam_search(model, BeamInput::Speech(&r.frames), beam).map(|h| h.tokens))
        .collect::<Result<Vec<_>, _>>()?;
    let words = |s: &[usize]| s.iter().map(|t| t.to_string()).collect::<Vec<_>>();
    let h: Vec<Vec<String>> = hyps.iter().map(|s| words(s)).collect();
    let r: Vec<Vec<String>> = set.iter().map(|s| words(&s.target)).collect();
    let report = bleu(&h, &r)?;
    Ok((hyps, report))
}
