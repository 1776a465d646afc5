use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tcen::data::{
    gen_synthetic, read_corpus, write_corpus, AsrRecord, CorpusRecord, MtRecord, StRecord, VocabKind, Vocabs,
    Vocabulary,
};
use tcen::eval::{beam_search, bleu, emit_curves, token_accuracy, BeamInput, BleuReport, Curve};
use tcen::model::TcenModel;
use tcen::pipeline::{fit_noiser, noisy_mt, prepare, run_variant, variant_stages, Variant};
use tcen::training::{load_checkpoint, save_checkpoint, Checkpoint, Corpora, Stage, Trainer, TrainingLog};
use tcen::transforms::{NoiserModel, NoiserSnapshot};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{Common, StageArgs};

const SRC_VOCAB: &str = "src.vocab";
const TRG_VOCAB: &str = "trg.vocab";
const MODEL_FILE: &str = "model.ckpt";
const NOISER_FILE: &str = "noiser.json";
const HYPS_FILE: &str = "hypotheses.txt";

/// Corpus directory as written by `gen-data`.
struct CorpusDir {
    root: PathBuf,
    vocabs: Vocabs,
}

impl CorpusDir {
    fn open(root: &Path) -> Result<Self, CliError> {
        let src = Vocabulary::read(&root.join(SRC_VOCAB), VocabKind::Source)?;
        let trg = Vocabulary::read(&root.join(TRG_VOCAB), VocabKind::Target)?;
        Ok(Self {
            root: root.to_path_buf(),
            vocabs: Vocabs { src, trg },
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}.jsonl"))
    }

    fn read<R: CorpusRecord>(&self, path: &Path) -> Result<Vec<R>, CliError> {
        Ok(read_corpus(path, &self.vocabs)?)
    }

    fn corpora(&self, noisy: Option<&Path>) -> Result<Corpora, CliError> {
        Ok(Corpora {
            asr: self.read(&self.path("asr"))?,
            mt: self.read(&self.path("mt"))?,
            mt_noisy: match noisy {
                Some(p) => self.read(p)?,
                None => Vec::new(),
            },
            st: self.read(&self.path("st"))?,
            dev: self.read(&self.path("dev"))?,
        })
    }

    fn check_model(&self, model: &TcenModel, path: &Path) -> Result<(), CliError> {
        let c = model.config();
        if c.src_words != self.vocabs.src.num_words() || c.trg_vocab != self.vocabs.trg.len() {
            return Err(CliError::Data(format!(
                "{}: model vocabularies ({} source words, {} target ids) do not match {}",
                path.display(),
                c.src_words,
                c.trg_vocab,
                self.root.display()
            )));
        }
        Ok(())
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes to JSON");
    write_file(path, text + "\n")
}

fn load_model(path: &Path) -> Result<(Checkpoint, TcenModel), CliError> {
    let ckpt = load_checkpoint(path).map_err(|e| CliError::from(e).at(path))?;
    let model = ckpt.restore_model().map_err(|e| CliError::from(e).at(path))?;
    Ok((ckpt, model))
}

fn write_log(log: &TrainingLog, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(log.write(dir)?)
}

pub fn gen_data(common: &Common) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(common.config.as_deref(), common.seed)?;
    cfg.echo(&common.out)?;
    let corpus = gen_synthetic(&cfg.experiment().data)?;
    let out = &common.out;
    let v = &corpus.vocabs;
    v.src.write(&out.join(SRC_VOCAB))?;
    v.trg.write(&out.join(TRG_VOCAB))?;
    write_corpus(&corpus.asr, v, &out.join("asr.jsonl"))?;
    write_corpus(&corpus.mt, v, &out.join("mt.jsonl"))?;
    write_corpus(&corpus.st, v, &out.join("st.jsonl"))?;
    write_corpus(&corpus.dev, v, &out.join("dev.jsonl"))?;
    write_corpus(&corpus.test, v, &out.join("test.jsonl"))?;
    println!(
        "wrote {} asr, {} mt, {} st, {} dev, {} test records to {}",
        corpus.asr.len(),
        corpus.mt.len(),
        corpus.st.len(),
        corpus.dev.len(),
        corpus.test.len(),
        out.display()
    );
    Ok(())
}

pub fn train(args: &StageArgs, stage: Stage) -> Result<(), CliError> {
    let common = &args.common;
    let cfg = RunConfig::resolve(common.config.as_deref(), common.seed)?;
    cfg.echo(&common.out)?;
    let exp = cfg.experiment();
    let (pre, fine) = variant_stages(&exp, args.variant);
    let stage_cfg = match stage {
        Stage::Pretrain => pre.ok_or_else(|| {
            CliError::Usage(format!("variant `{}` has no pre-training stage", args.variant))
        })?,
        Stage::Finetune => fine,
    };
    if stage_cfg.noise.k > 0.0 && args.noisy.is_none() {
        return Err(CliError::Usage(format!(
            "noise_k = {} for variant `{}`: pass --noisy or set noise_k = 0",
            stage_cfg.noise.k, args.variant
        )));
    }
    let dir = CorpusDir::open(&args.data)?;
    let corpora = dir.corpora(args.noisy.as_deref())?;

    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path).map_err(|e| CliError::from(e).at(path))?;
            Trainer::resume(&ckpt, &corpora).map_err(|e| CliError::from(e).at(path))?
        }
        None => {
            let model = match &args.init {
                Some(path) => load_model(path)?.1,
                None => TcenModel::new(args.variant.model_config(&exp.model), exp.model_seed())?,
            };
            let path = args.init.as_deref().unwrap_or(Path::new("<fresh model>"));
            dir.check_model(&model, path)?;
            Trainer::new(model, &corpora, stage_cfg)?
        }
    };
    let ckpt_path = common.out.join(MODEL_FILE);
    let total = args.until.map_or(trainer.config().steps, |u| u.min(trainer.config().steps));
    if args.checkpoint_every > 0 {
        while trainer.step_count() < total {
            let next = (trainer.step_count() / args.checkpoint_every + 1) * args.checkpoint_every;
            trainer.run_until(next.min(total))?;
            save_checkpoint(&trainer.checkpoint(), &ckpt_path)?;
        }
    } else {
        trainer.run_until(total)?;
    }
    save_checkpoint(&trainer.checkpoint(), &ckpt_path)?;
    write_log(trainer.log(), &common.out)?;
    let last = trainer.log().steps.last().map_or(f64::NAN, |s| s.loss);
    match trainer.log().evals.last() {
        Some(e) => println!("{stage:?}: {} steps, last loss {last:.4}, dev accuracy {:.4}", trainer.step_count(), e.dev_token_accuracy),
        None => println!("{stage:?}: {} steps, last loss {last:.4}", trainer.step_count()),
    }
    Ok(())
}

pub fn train_noiser(common: &Common, data: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(common.config.as_deref(), common.seed)?;
    cfg.echo(&common.out)?;
    let dir = CorpusDir::open(data)?;
    let asr: Vec<AsrRecord> = dir.read(&dir.path("asr"))?;
    let run = fit_noiser(&cfg.experiment(), &asr)?;
    save_checkpoint(&Checkpoint::from_model(&run.path_model), &common.out.join("path_model.ckpt"))?;
    write_log(&run.path_model_log, &common.out.join("path_model"))?;
    write_json(&common.out.join(NOISER_FILE), &run.noiser.snapshot())?;
    let mut losses = String::from("step,loss\n");
    for (i, l) in run.noiser_losses.iter().enumerate() {
        losses.push_str(&format!("{},{l}\n", i + 1));
    }
    write_file(&common.out.join("noiser_loss.csv"), losses)?;
    println!(
        "noiser fitted to {} paths, final loss {:.4}",
        run.paths.len(),
        run.noiser_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_noiser(path: &Path) -> Result<NoiserModel, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let snap: NoiserSnapshot =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    NoiserModel::from_snapshot(&snap).map_err(|e| CliError::from(e).at(path))
}

pub fn noise_corpus(common: &Common, data: &Path, noiser: &Path, input: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(common.config.as_deref(), common.seed)?;
    cfg.echo(&common.out)?;
    let dir = CorpusDir::open(data)?;
    let model = load_noiser(noiser)?;
    if model.blank() != dir.vocabs.src.blank() {
        return Err(CliError::Data(format!(
            "{}: noiser has {} source words, {} has {}",
            noiser.display(),
            model.blank(),
            data.display(),
            dir.vocabs.src.num_words()
        )));
    }
    let input = input.map_or_else(|| dir.path("mt"), Path::to_path_buf);
    let mt: Vec<MtRecord> = dir.read(&input)?;
    let noisy = noisy_mt(&cfg.experiment(), &model, &mt)?;
    let out = common.out.join("mt_noisy.jsonl");
    write_corpus(&noisy, &dir.vocabs, &out)?;
    println!("wrote {} noisy records to {}", noisy.len(), out.display());
    Ok(())
}

pub fn decode(common: &Common, data: &Path, model_path: &Path, input: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(common.config.as_deref(), common.seed)?;
    cfg.echo(&common.out)?;
    let dir = CorpusDir::open(data)?;
    let (_, model) = load_model(model_path)?;
    dir.check_model(&model, model_path)?;
    let input = input.map_or_else(|| dir.path("test"), Path::to_path_buf);
    let set: Vec<StRecord> = dir.read(&input)?;
    let mut text = String::new();
    let mut truncated = 0;
    for r in &set {
        let h = beam_search(&model, BeamInput::Speech(&r.frames), &cfg.beam)?;
        truncated += usize::from(h.truncated);
        text.push_str(&dir.vocabs.trg.decode(&h.tokens).join(" "));
        text.push('\n');
    }
    write_file(&common.out.join(HYPS_FILE), text)?;
    println!("translated {} utterances ({truncated} hit max_len)", set.len());
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    bleu: BleuReport,
    token_accuracy: Option<f64>,
}

pub fn evaluate(
    common: &Common,
    data: &Path,
    hyps: &Path,
    refs: Option<&Path>,
    model_path: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(common.config.as_deref(), common.seed)?;
    cfg.echo(&common.out)?;
    let dir = CorpusDir::open(data)?;
    let refs_path = refs.map_or_else(|| dir.path("test"), Path::to_path_buf);
    let set: Vec<StRecord> = dir.read(&refs_path)?;
    let text = fs::read_to_string(hyps).map_err(|e| CliError::io(hyps, e))?;
    let h: Vec<Vec<String>> = text.lines().map(|l| l.split_whitespace().map(str::to_string).collect()).collect();
    let r: Vec<Vec<String>> = set.iter().map(|s| dir.vocabs.trg.decode(&s.target)).collect();
    let report = bleu(&h, &r).map_err(|e| CliError::from(e).at(hyps))?;
    let token_accuracy = match model_path {
        Some(p) => {
            let (_, model) = load_model(p)?;
            dir.check_model(&model, p)?;
            Some(token_accuracy(&model, &set, cfg.finetune.batch_size)?)
        }
        None => None,
    };
    println!("BLEU {:.2} (BP {:.4})", report.score, report.brevity_penalty);
    if let Some(a) = token_accuracy {
        println!("token accuracy {a:.4}");
    }
    write_json(
        &common.out.join("evaluation.json"),
        &Evaluation {
            bleu: report,
            token_accuracy,
        },
    )
}

pub fn curves(common: &Common, logs: &[String]) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(common.config.as_deref(), common.seed)?;
    cfg.echo(&common.out)?;
    let mut curves = Vec::with_capacity(logs.len());
    for spec in logs {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--log expects label=path, got `{spec}`")))?;
        let path = Path::new(path);
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let points = TrainingLog::parse_evals(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        curves.push(Curve {
            label: label.to_string(),
            points,
        });
    }
    emit_curves(&curves, &common.out.join("curves.csv"))?;
    Ok(())
}

#[derive(Serialize)]
struct VariantSummary {
    variant: Variant,
    final_dev_accuracy: f64,
    bleu: f64,
}

pub fn ablate(common: &Common, variants: &[Variant]) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(common.config.as_deref(), common.seed)?;
    cfg.echo(&common.out)?;
    let variants = if variants.is_empty() {
        vec![Variant::Tcen, Variant::MtNoiseOff, Variant::WeightSharingOff, Variant::PretrainOff]
    } else {
        variants.to_vec()
    };
    let exp = cfg.experiment();
    let prepared = prepare(&exp)?;
    let vocabs = &prepared.corpus.vocabs;
    let mut summary = Vec::new();
    let mut curves = Vec::new();
    for &variant in &variants {
        let run = run_variant(&exp, &prepared, variant)?;
        let dir = common.out.join(variant.name());
        if let Some(log) = &run.pretrain_log {
            write_log(log, &dir.join("pretrain"))?;
        }
        write_log(&run.finetune_log, &dir.join("finetune"))?;
        save_checkpoint(&Checkpoint::from_model(&run.model), &dir.join(MODEL_FILE))?;
        let text: String = run.hypotheses.iter().map(|h| vocabs.trg.decode(h).join(" ") + "\n").collect();
        write_file(&dir.join(HYPS_FILE), text)?;
        write_json(&dir.join("bleu.json"), &run.bleu)?;
        println!(
            "{variant}: dev accuracy {:.4}, BLEU {:.2}",
            run.final_dev_accuracy, run.bleu.score
        );
        summary.push(VariantSummary {
            variant,
            final_dev_accuracy: run.final_dev_accuracy,
            bleu: run.bleu.score,
        });
        curves.push(Curve {
            label: variant.name().to_string(),
            points: run.finetune_log.evals.clone(),
        });
    }
    write_json(&common.out.join("summary.json"), &summary)?;
    emit_curves(&curves, &common.out.join("curves.csv"))?;
    Ok(())
}
