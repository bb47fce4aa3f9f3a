use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, RngState};
use super::manifest::RunManifest;
use super::metrics::EpochMetrics;
use super::optim::{adam_step, clip_grad_norm, AdamConfig, AdamState};
use super::schedule::LinearSchedule;
use crate::autodiff::{Tape, Tensor};
use crate::config::{BackboneMode, ModelConfig};
use crate::corpus::{EmbeddingFile, Example, NUM_OPTIONS};
use crate::encoders::Vocab;
use crate::error::{Error, Result};
use crate::model::{argmax, FocalModel, PreparedExample};
use crate::nn::Dropout;

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Stop after the first epoch whose train accuracy reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
    /// Where the best checkpoint is written, and the last good one on a numeric abort.
    pub checkpoint_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best dev-accuracy checkpoint, or the final one without dev data.
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub manifest: RunManifest,
    pub epochs_run: usize,
    /// Train accuracy after the last epoch, when tracked.
    pub train_accuracy: Option<f64>,
}

/// Mean loss terms and summed gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub l_ans: f64,
    pub l_lfr: f64,
    /// Gradients of the mean loss, one per parameter.
    pub grads: Vec<Tensor>,
}

/// Fills in `embedding_dim` from the file, or checks that it agrees.
pub fn resolve_embedding_dim(
    config: &mut ModelConfig,
    embeddings: Option<&EmbeddingFile>,
) -> Result<()> {
    if config.backbone != BackboneMode::Precomputed {
        return Ok(());
    }
    let file = embeddings
        .ok_or_else(|| Error::Config("precomputed backbone needs an embedding file".into()))?;
    match config.embedding_dim {
        None => config.embedding_dim = Some(file.d()),
        Some(d) if d != file.d() => {
            return Err(Error::Dimension {
                expected: d,
                found: file.d(),
            })
        }
        Some(_) => {}
    }
    Ok(())
}

pub fn prepare_all(
    model: &FocalModel,
    examples: &[Example],
    embeddings: Option<&EmbeddingFile>,
) -> Result<Vec<PreparedExample>> {
    examples
        .iter()
        .map(|e| model.prepare(e, embeddings))
        .collect()
}

/// Forward and backward over a batch on one tape. Examples are visited in
/// order, so the reduction is deterministic.
pub fn batch_gradients(
    model: &FocalModel,
    batch: &[&PreparedExample],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut drop = match rng {
        Some(r) => Dropout::new(model.config.dropout, r),
        None => Dropout::off(),
    };
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let mut losses = Vec::with_capacity(batch.len());
    let (mut l_ans, mut l_lfr) = (0.0, 0.0);
    for ex in batch {
        let out = model.forward(&mut tape, &vars, ex, &mut drop)?;
        let loss = out
            .loss
            .ok_or_else(|| Error::validation(&ex.example_id, "training example has no label"))?;
        l_ans += tape.value(out.l_ans.expect("labelled")).item();
        l_lfr += tape.value(out.l_lfr).item();
        losses.push(loss);
    }
    let n = batch.len() as f64;
    let mut total = losses[0];
    for l in &losses[1..] {
        total = tape.add(total, *l);
    }
    let mean = tape.scale(total, 1.0 / n);
    let loss = tape.value(mean).item();
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss became {loss}")));
    }
    let mut g = tape.backward(mean);
    let grads = model
        .params
        .iter()
        .zip(&vars)
        .map(|((_, p), v)| {
            g.take(*v)
                .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
        })
        .collect();
    Ok(BatchResult {
        loss,
        l_ans: l_ans / n,
        l_lfr: l_lfr / n,
        grads,
    })
}

fn accuracy_of(model: &FocalModel, data: &[PreparedExample]) -> Result<f64> {
    let mut correct = 0;
    for ex in data {
        if argmax(&model.logits(ex)?) == ex.label.expect("labelled") {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

fn require_labels(examples: &[Example], what: &str) -> Result<()> {
    match examples.iter().find(|e| e.label.is_none()) {
        Some(e) => Err(Error::validation(
            &e.example_id,
            format!("{what} examples must be labelled; use predict for unlabelled data"),
        )),
        None => Ok(()),
    }
}

/// Trains from freshly initialised parameters.
pub fn train(
    config: &ModelConfig,
    train_set: &[Example],
    dev_set: Option<&[Example]>,
    embeddings: Option<&EmbeddingFile>,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    require_labels(train_set, "training")?;
    if let Some(dev) = dev_set {
        require_labels(dev, "dev")?;
    }
    let mut config = config.clone();
    resolve_embedding_dim(&mut config, embeddings)?;
    config.validate()?;

    let mut model = FocalModel::new(config.clone(), Vocab::build(train_set))?;
    let train_data = prepare_all(&model, train_set, embeddings)?;
    let dev_data = dev_set
        .map(|d| prepare_all(&model, d, embeddings))
        .transpose()?;
    let manifest = RunManifest::new(&config, model.params.num_scalars(), train_set.len());
    log::info!(
        "training {} examples, {} parameters, config {}",
        train_data.len(),
        manifest.num_parameters,
        &manifest.config_hash[..12]
    );

    let batches_per_epoch = train_data.len().div_ceil(config.batch_size) as u64;
    let schedule = LinearSchedule::new(
        config.learning_rate,
        config.warmup_proportion,
        batches_per_epoch * config.epochs as u64,
    );
    let adam_cfg = AdamConfig::default();
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut train_accuracy = None;
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut l_ans, mut l_lfr) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedExample> = chunk.iter().map(|&i| &train_data[i]).collect();
            let result = batch_gradients(&model, &batch, Some(&mut rng)).and_then(|mut r| {
                if let Some(clip) = config.grad_clip {
                    clip_grad_norm(&mut r.grads, clip);
                }
                let lr = schedule.lr(adam.step);
                adam_step(
                    &mut model.params,
                    &r.grads,
                    &mut adam,
                    lr,
                    config.weight_decay,
                    &adam_cfg,
                )?;
                Ok(r)
            });
            let r = match result {
                Ok(r) => r,
                Err(e @ Error::Numeric(_)) => {
                    if let Some(path) = &opts.checkpoint_path {
                        let ck = Checkpoint::capture(
                            &model,
                            &adam,
                            epoch - 1,
                            RngState::capture(config.seed, &rng),
                            None,
                        );
                        ck.save(path)?;
                        log::error!(
                            "numeric failure; last good checkpoint written to {}",
                            path.display()
                        );
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let w = batch.len() as f64;
            loss += r.loss * w;
            l_ans += r.l_ans * w;
            l_lfr += r.l_lfr * w;
        }
        let n = train_data.len() as f64;
        let dev_acc = dev_data
            .as_deref()
            .map(|d| accuracy_of(&model, d))
            .transpose()?;
        let record = EpochMetrics {
            epoch,
            step: adam.step,
            loss: loss / n,
            l_ans: l_ans / n,
            l_lfr: l_lfr / n,
            dev_acc,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} l_ans {:.5} l_lfr {:.5} dev_acc {:?}",
            record.loss,
            record.l_ans,
            record.l_lfr,
            record.dev_acc
        );
        metrics.push(record);
        epochs_run = epoch;

        let score = dev_acc.unwrap_or(f64::NEG_INFINITY);
        if dev_acc.is_none() || best.as_ref().is_none_or(|(b, _)| score > *b) {
            let ck = Checkpoint::capture(
                &model,
                &adam,
                epoch,
                RngState::capture(config.seed, &rng),
                dev_acc,
            );
            best = Some((score, ck));
        }
        if let Some(target) = opts.stop_at_train_accuracy {
            let acc = accuracy_of(&model, &train_data)?;
            train_accuracy = Some(acc);
            if acc >= target {
                log::info!("train accuracy {acc} reached target after epoch {epoch}");
                break;
            }
        }
    }

    let (_, checkpoint) = best.expect("at least one epoch");
    if let Some(path) = &opts.checkpoint_path {
        checkpoint.save(path)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        manifest,
        epochs_run,
        train_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Accuracy per question type, for examples that carry a type tag.
    pub per_type: BTreeMap<String, TypeAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub logits: [f64; NUM_OPTIONS],
    pub prediction: usize,
}

/// Overall and per-type accuracy on a labelled dataset.
pub fn evaluate(
    model: &FocalModel,
    examples: &[Example],
    embeddings: Option<&EmbeddingFile>,
) -> Result<EvalReport> {
    require_labels(examples, "evaluation")?;
    let preds = predict(model, examples, embeddings)?;
    let mut correct = 0;
    let mut per_type: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (ex, p) in examples.iter().zip(&preds) {
        let hit = ex.label == Some(p.prediction);
        correct += usize::from(hit);
        if let Some(t) = &ex.qtype {
            let e = per_type.entry(t.clone()).or_default();
            e.0 += usize::from(hit);
            e.1 += 1;
        }
    }
    let total = examples.len();
    Ok(EvalReport {
        accuracy: if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        },
        correct,
        total,
        per_type: per_type
            .into_iter()
            .map(|(k, (c, t))| {
                (
                    k,
                    TypeAccuracy {
                        correct: c,
                        total: t,
                        accuracy: c as f64 / t as f64,
                    },
                )
            })
            .collect(),
    })
}

/// Logits and arg-max option for every example.
pub fn predict(
    model: &FocalModel,
    examples: &[Example],
    embeddings: Option<&EmbeddingFile>,
) -> Result<Vec<Prediction>> {
    if model.config.backbone == BackboneMode::Precomputed {
        let mut c = model.config.clone();
        resolve_embedding_dim(&mut c, embeddings)?;
    }
    examples
        .iter()
        .map(|e| {
            let ex = model.prepare(e, embeddings)?;
            let logits = model.logits(&ex)?;
            Ok(Prediction {
                example_id: e.example_id.clone(),
                prediction: argmax(&logits),
                logits,
            })
        })
        .collect()
}
