//! VQA training with best-validation checkpointing, contrastive
//! pretraining runs, and model checkpoints with JSON sidecars.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::RunConfig;
use super::evaluate::{answer_share, evaluate_encoded, majority_answer, EvalOptions, EvalReport};
use super::loader::{prepare, render_canonical, run_ordered, BatchSpec, ViewPick, Vocabs};
use super::metrics::MetricsRow;
use crate::autodiff::{checkpoint, Module, Tape, Tensor};
use crate::contrastive::{pretrain, PretrainConfig, PretrainEpoch};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, ImagePath, ModelConfig, VolumeEncoder, VqaModel, VOLUME_ENCODER_NAME};
use crate::scene::{load_dataset, Dataset, GenConfig, Split};
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Outcome of one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Measured once, on the best-validation checkpoint.
    pub test_acc: f64,
    pub test_loss: f64,
    pub majority_answer: String,
    pub majority_val_acc: f64,
    pub majority_test_acc: f64,
    pub wall_clock_s: f64,
}

/// Equality ignores wall-clock time.
impl PartialEq for RunRecord {
    fn eq(&self, o: &Self) -> bool {
        self.run_id == o.run_id
            && self.config_hash == o.config_hash
            && self.seed == o.seed
            && self.epochs == o.epochs
            && self.best_epoch == o.best_epoch
            && self.best_val_acc == o.best_val_acc
            && self.test_acc == o.test_acc
            && self.test_loss == o.test_loss
            && self.majority_answer == o.majority_answer
            && self.majority_val_acc == o.majority_val_acc
            && self.majority_test_acc == o.majority_test_acc
    }
}

impl RunRecord {
    /// Relative drop of the training loss from epoch 1 to the best epoch.
    pub fn loss_drop(&self) -> f64 {
        let first = self.epochs[0].train_loss;
        let best = self.epochs[self.best_epoch - 1].train_loss;
        (first - best) / first
    }

    pub fn metrics_rows(&self, test: bool) -> Vec<MetricsRow> {
        let row = |epoch, split: &str, loss, acc| MetricsRow {
            run_id: self.run_id.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            epoch,
            split: split.to_string(),
            loss,
            acc: Some(acc),
        };
        let mut rows = Vec::new();
        for e in &self.epochs {
            rows.push(row(e.epoch, "train", e.train_loss, e.train_acc));
            rows.push(row(e.epoch, "val", e.val_loss, e.val_acc));
        }
        if test {
            rows.push(row(self.best_epoch, "test", self.test_loss, self.test_acc));
        }
        rows
    }
}

/// JSON sidecar written next to a VQA checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub vocabs: Vocabs,
    pub canonical_only: bool,
    pub config_hash: String,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn save_model(path: impl AsRef<Path>, model: &VqaModel<f32>, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    checkpoint::save(path, &model.state())?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Rebuilds a model from a checkpoint and its sidecar.
pub fn load_model(path: impl AsRef<Path>) -> Result<(VqaModel<f32>, CheckpointMeta)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side)
        .map_err(|e| Error::Data(format!("cannot read checkpoint sidecar {}: {e}", side.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let mut rng = seeds::stream(0, "load");
    let model = VqaModel::new(
        &meta.model,
        meta.vocabs.question.len(),
        meta.vocabs.pad_id(),
        meta.vocabs.answer.len(),
        &mut rng,
    )?;
    let entries = checkpoint::load(path)
        .map_err(|e| if let Error::Io(io) = e { Error::Data(format!("cannot read {}: {io}", path.display())) } else { e })?;
    checkpoint::restore(&model.state(), &entries)?;
    Ok((model, meta))
}

/// JSON sidecar written next to a pretrained volume-encoder checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderMeta {
    pub enc_channels: usize,
    pub volume: [usize; 4],
    pub pretrain: PretrainConfig,
    pub history: Vec<PretrainEpoch>,
}

/// Copies a pretrained volume encoder into `model`.
pub fn load_pretrained_encoder(model: &VqaModel<f32>, path: &Path) -> Result<()> {
    let ImagePath::Pretrained(enc) = &model.image else {
        return Err(Error::Config("model does not use a pretrained encoder".into()));
    };
    if !path.exists() {
        return Err(Error::Data(format!("pretrained encoder {} not found", path.display())));
    }
    checkpoint::restore(&enc.state(), &checkpoint::load(path)?)
}

/// Loads the dataset named by `cfg.data`, checking its view mode.
pub fn load_configured_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = &cfg.data.dir;
    if !dir.is_dir() {
        return Err(Error::Data(format!("dataset directory {} not found", dir.display())));
    }
    if let Some(mode) = cfg.data.mode {
        let gen = GenConfig::load(dir.join("genconfig"))?;
        if gen.mode != mode {
            return Err(Error::Config(format!(
                "config expects a {mode} dataset but {} holds {}",
                dir.display(),
                gen.mode
            )));
        }
    }
    load_dataset(dir)
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub model: VqaModel<f32>,
    pub vocabs: Vocabs,
    pub test_report: EvalReport,
}

fn snapshot(model: &VqaModel<f32>) -> Vec<Tensor<f32>> {
    model.state().iter().map(|p| p.value().clone()).collect()
}

fn check_images(split: &Split, size: usize) -> Result<()> {
    match split.records.first().and_then(|r| r.images.first()) {
        None => Err(Error::Data(format!("split {} has no scenes", split.name))),
        Some(i) if i.height != size || i.width != size => Err(Error::Config(format!(
            "model expects {size}x{size} images, dataset has {}x{}",
            i.width, i.height
        ))),
        Some(_) => Ok(()),
    }
}

/// Trains a VQA model for a fixed number of epochs, keeping the parameters
/// with the best validation accuracy, then measures test accuracy once on
/// them. Each training example shows a view drawn uniformly from its scene
/// every epoch. When `out` is given, `checkpoint.mrtc` and its sidecar are
/// written there. `on_row` receives metrics rows as they are produced.
pub fn train_vqa(
    cfg: &RunConfig,
    data: &Dataset,
    run_id: &str,
    out: Option<&Path>,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    cfg.validate_for_training()?;
    let started = Instant::now();
    let t = &cfg.train;
    let seed = t.seed;
    for s in [&data.train, &data.val, &data.test] {
        check_images(s, cfg.model.image_size)?;
    }
    let vocabs = Vocabs::for_dataset(data)?;
    let enc_train = vocabs.encode(&data.train)?;
    let enc_val = vocabs.encode(&data.val)?;
    let enc_test = vocabs.encode(&data.test)?;
    if enc_train.len() < 2 || enc_val.is_empty() || enc_test.is_empty() {
        return Err(Error::Data("every split needs questions and train needs at least two".into()));
    }
    let (canon_train, canon_val, canon_test) = if t.canonical_only {
        (render_canonical(&data.train), render_canonical(&data.val), render_canonical(&data.test))
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };

    let mut init_rng = seeds::stream(seed, "init");
    let model = VqaModel::new(&cfg.model, vocabs.question.len(), vocabs.pad_id(), vocabs.answer.len(), &mut init_rng)?;
    if cfg.model.contrastive_encoder {
        let path = t.pretrained.as_ref().expect("validated");
        load_pretrained_encoder(&model, path)?;
    }
    let params = model.parameters();
    let mut adam = Adam::new(&params, t.adam.clone());
    let mut shuffle_rng = seeds::stream(seed, "shuffle");
    let mut view_rng = seeds::stream(seed, "views");
    let opts = EvalOptions {
        batch_size: t.batch_size,
        workers: t.workers,
    };
    let config_hash = cfg.hash();
    let row = |epoch, split: &str, loss, acc| MetricsRow {
        run_id: run_id.to_string(),
        config_hash: config_hash.clone(),
        seed,
        epoch,
        split: split.to_string(),
        loss,
        acc: Some(acc),
    };

    let mut order: Vec<usize> = (0..enc_train.len()).collect();
    let mut epochs = Vec::with_capacity(t.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor<f32>>)> = None;
    for epoch in 1..=t.epochs {
        order.shuffle(&mut shuffle_rng);
        let jobs: Vec<BatchSpec> = order
            .chunks(t.batch_size)
            // a single-example batch has no batch-norm statistics
            .filter(|c| c.len() >= 2)
            .map(|chunk| BatchSpec {
                items: chunk.to_vec(),
                views: chunk
                    .iter()
                    .map(|&i| {
                        if t.canonical_only {
                            ViewPick::Canonical
                        } else {
                            let n = data.train.records[enc_train.index[i].0].images.len();
                            ViewPick::Index(view_rng.random_range(0..n))
                        }
                    })
                    .collect(),
            })
            .collect();
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        run_ordered(&jobs, t.workers, |spec| prepare(&data.train, &enc_train, &canon_train, spec), |p| {
            let tape = Tape::new();
            let logits = model.forward(&tape, &p.batch, true)?;
            let loss = tape.softmax_cross_entropy(logits, &p.targets)?;
            let l = loss.item()? as f64;
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss in epoch {epoch}")));
            }
            let preds = argmax_rows(&logits.value());
            correct += preds.iter().zip(&p.targets).filter(|(a, b)| a == b).count();
            seen += p.targets.len();
            loss_sum += l * p.targets.len() as f64;
            model.zero_grad();
            tape.backward(loss)?;
            adam.step()
        })?;
        let val = evaluate_encoded(&model, &data.val, &enc_val, &canon_val, opts)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
        };
        on_row(&row(epoch, "train", rec.train_loss, rec.train_acc));
        on_row(&row(epoch, "val", rec.val_loss, rec.val_acc));
        if best.as_ref().is_none_or(|(_, acc, _)| rec.val_acc > *acc) {
            best = Some((epoch, rec.val_acc, snapshot(&model)));
        }
        epochs.push(rec);
    }

    let (best_epoch, best_val_acc, state) = best.expect("at least one epoch");
    for (p, v) in model.state().iter().zip(state) {
        p.set_value(v);
    }
    let test = evaluate_encoded(&model, &data.test, &enc_test, &canon_test, opts)?;
    on_row(&row(best_epoch, "test", test.loss, test.accuracy));

    let majority = majority_answer(&data.train).unwrap_or_default();
    let record = RunRecord {
        run_id: run_id.to_string(),
        config_hash: config_hash.clone(),
        seed,
        epochs,
        best_epoch,
        best_val_acc,
        test_acc: test.accuracy,
        test_loss: test.loss,
        majority_val_acc: answer_share(&data.val, &majority),
        majority_test_acc: answer_share(&data.test, &majority),
        majority_answer: majority,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let meta = CheckpointMeta {
            model: cfg.model.clone(),
            vocabs: vocabs.clone(),
            canonical_only: t.canonical_only,
            config_hash,
        };
        save_model(dir.join("checkpoint.mrtc"), &model, &meta)?;
        std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&record)?)?;
    }
    Ok(TrainOutcome {
        record,
        model,
        vocabs,
        test_report: test,
    })
}

pub struct PretrainOutcome {
    pub encoder: VolumeEncoder<f32>,
    pub history: Vec<PretrainEpoch>,
}

/// Contrastive pretraining of the volume encoder on the training split,
/// validated on the validation split. Writes `encoder.mrtc` and
/// `encoder.json` to `out` when given.
pub fn run_pretrain(
    cfg: &RunConfig,
    data: &Dataset,
    run_id: &str,
    out: Option<&Path>,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let m = &cfg.model;
    check_images(&data.train, m.image_size)?;
    let seed = cfg.train.seed;
    let mut init_rng = seeds::stream(seed, "pretrain/init");
    let encoder = VolumeEncoder::new(VOLUME_ENCODER_NAME, m.enc_channels, m.volume[0], m.volume[1], &mut init_rng)?;
    let mut rng = seeds::stream(seed, "pretrain/pairs");
    let hash = cfg.hash();
    let history = pretrain(&encoder, &data.train, &data.val, &cfg.train.pretrain, &mut rng, |e| {
        let row = |split: &str, loss, acc| MetricsRow {
            run_id: run_id.to_string(),
            config_hash: hash.clone(),
            seed,
            epoch: e.epoch,
            split: split.to_string(),
            loss,
            acc,
        };
        on_row(&row("pretrain_train", e.train_loss, None));
        on_row(&row("pretrain_val", e.val_loss, Some(e.val_nce_accuracy)));
    })?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        checkpoint::save(dir.join("encoder.mrtc"), &encoder.state())?;
        let meta = EncoderMeta {
            enc_channels: m.enc_channels,
            volume: m.volume,
            pretrain: cfg.train.pretrain.clone(),
            history: history.clone(),
        };
        std::fs::write(dir.join("encoder.json"), serde_json::to_string_pretty(&meta)?)?;
    }
    Ok(PretrainOutcome { encoder, history })
}
