//! Training: Adam over all trainable parameters with per-epoch learning-rate
//! decay, deterministic batch order, ordered gradient reduction (bit-stable
//! regardless of worker count), non-finite step skipping.

use dcg_tensor::{Adam, Bindings, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{derive_seed, ModelConfig, TrainConfig};
use crate::data::ndjson::LabeledSketch;
use crate::data::stroke::Stroke5;
use crate::data::{StrokeSequence, CANVAS_FILL};
use crate::error::{CoreError, Result};
use crate::model::{BnMode, LatentNoise, SketchModel, StatUpdate};
use crate::pipeline;

const MAX_CONSECUTIVE_BAD_STEPS: usize = 10;

/// Normalized, length-filtered training corpus.
pub struct Dataset {
    pub sketches: Vec<LabeledSketch>,
    /// Sorted unique category names present in the data.
    pub categories: Vec<String>,
    pub skipped_too_long: usize,
    pub delta_std: f64,
}

impl Dataset {
    /// Normalize every sketch onto the canvas and drop the ones whose
    /// stroke-5 form would exceed the configured maximum length.
    pub fn prepare(raw: Vec<LabeledSketch>, cfg: &ModelConfig) -> Result<Self> {
        if raw.is_empty() {
            return Err(CoreError::Data("dataset is empty".into()));
        }
        let mut sketches = Vec::with_capacity(raw.len());
        let mut skipped = 0usize;
        for s in raw {
            if s.seq.is_empty() {
                skipped += 1;
                continue;
            }
            if s.seq.len() + 1 > cfg.max_seq_len {
                skipped += 1;
                continue;
            }
            sketches.push(LabeledSketch {
                seq: s.seq.normalized(CANVAS_FILL),
                category: s.category,
            });
        }
        if sketches.is_empty() {
            return Err(CoreError::Data(
                "every sketch was dropped by the length filter".into(),
            ));
        }
        let mut categories: Vec<String> = sketches
            .iter()
            .filter_map(|s| s.category.clone())
            .collect();
        categories.sort();
        categories.dedup();
        let seqs: Vec<StrokeSequence> = sketches.iter().map(|s| s.seq.clone()).collect();
        let delta_std = StrokeSequence::delta_std(&seqs) as f64;
        Ok(Dataset {
            sketches,
            categories,
            skipped_too_long: skipped,
            delta_std,
        })
    }

    pub fn len(&self) -> usize {
        self.sketches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sketches.is_empty()
    }
}

/// One row of the loss curve CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub nll: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub loss_curve: Vec<LossPoint>,
    pub skipped_steps: usize,
}

pub fn loss_curve_csv(points: &[LossPoint]) -> String {
    let mut s = String::from("step,epoch,lr,nll\n");
    for p in points {
        s.push_str(&format!("{},{},{},{}\n", p.step, p.epoch, p.lr, p.nll));
    }
    s
}

struct SketchGrads {
    grads: Vec<Option<Tensor<f32>>>,
    loss: f64,
    stats: Vec<StatUpdate<f32>>,
}

/// Forward + backward for one sketch; pure with respect to the model.
fn sketch_step(
    model: &SketchModel<f32>,
    images: &Tensor<f32>,
    target: &[Stroke5],
    noise_seed: u64,
) -> Result<SketchGrads> {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = LatentNoise::sampled(model.config().latent_dim, &mut rng);
    let binds = Bindings::bind_all(&tape, model.params(), None);
    let out = forward_with_binds(model, &tape, &binds, images, target, &noise)?;
    let loss = tape.value(out.0).item() as f64;
    if !loss.is_finite() {
        return Ok(SketchGrads {
            grads: Vec::new(),
            loss,
            stats: out.1,
        });
    }
    let store = tape.backward(out.0)?;
    let mut grads: Vec<Option<Tensor<f32>>> = vec![None; model.params().len()];
    for id in model.params().trainable_ids() {
        grads[id.0] = Some(binds.grad_of(&store, model.params(), id));
    }
    Ok(SketchGrads {
        grads,
        loss,
        stats: out.1,
    })
}

/// The model's forward_loss rebinds parameters itself; training needs the
/// bindings to read gradients back, so the forward is restated here against
/// caller-owned bindings.
fn forward_with_binds(
    model: &SketchModel<f32>,
    tape: &Tape<f32>,
    binds: &Bindings,
    images: &Tensor<f32>,
    target: &[Stroke5],
    noise: &LatentNoise<f32>,
) -> Result<(dcg_tensor::Var, Vec<StatUpdate<f32>>)> {
    model.forward_loss_bound(tape, binds, images, target, noise, BnMode::Train)
}

pub fn train(
    model: &mut SketchModel<f32>,
    dataset: &Dataset,
    tc: &TrainConfig,
) -> Result<TrainOutput> {
    if dataset.is_empty() {
        return Err(CoreError::Data("dataset is empty".into()));
    }
    model.set_delta_scale(dataset.delta_std);

    // Patch tensors and decoder targets are fixed across epochs (no masking
    // during training), so build them once.
    let mut inputs = Vec::with_capacity(dataset.len());
    for s in &dataset.sketches {
        let prepared = pipeline::prepare_input::<f32>(&s.seq, model.config(), None);
        let target = model.stroke5_target(&s.seq)?;
        inputs.push((prepared.images, target));
    }

    let mut opt = Adam::<f32>::new();
    let mut out = TrainOutput::default();
    let mut consecutive_bad = 0usize;
    let mut step = 0usize;
    let threads = tc.threads.max(1);

    for epoch in 0..tc.epochs {
        let lr = tc.lr_at_epoch(epoch);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, "shuffle", epoch as u64));
        fisher_yates(&mut order, &mut shuffle_rng);

        for batch in order.chunks(tc.batch_size.max(1)) {
            step += 1;
            let noise_base = derive_seed(tc.seed, "eps", step as u64);
            let results = run_batch(model, &inputs, batch, noise_base, threads)?;

            // Ordered reduction in batch position order.
            let mut batch_loss = 0.0f64;
            let mut any_bad = false;
            let mut grad_acc: Vec<Option<Tensor<f32>>> = vec![None; model.params().len()];
            let mut stat_updates = Vec::new();
            for r in results {
                if !r.loss.is_finite() {
                    any_bad = true;
                    break;
                }
                batch_loss += r.loss;
                for (slot, g) in grad_acc.iter_mut().zip(r.grads.into_iter()) {
                    match (slot.as_mut(), g) {
                        (Some(acc), Some(g)) => acc.add_in_place(&g),
                        (None, Some(g)) => *slot = Some(g),
                        _ => {}
                    }
                }
                stat_updates.extend(r.stats);
            }

            if any_bad {
                out.skipped_steps += 1;
                consecutive_bad += 1;
                if consecutive_bad > MAX_CONSECUTIVE_BAD_STEPS {
                    return Err(CoreError::Diverged(consecutive_bad));
                }
                continue;
            }
            consecutive_bad = 0;

            let scale = 1.0 / batch.len() as f32;
            for slot in grad_acc.iter_mut().flatten() {
                slot.scale_in_place(scale);
            }
            opt.step(model.params_mut(), &grad_acc, lr as f32);
            model.commit_stats(stat_updates);
            out.loss_curve.push(LossPoint {
                step,
                epoch,
                lr,
                nll: batch_loss / batch.len() as f64,
            });
        }
    }
    Ok(out)
}

/// Evaluate the batch's per-sketch gradients, optionally across worker
/// threads. Results come back in batch position order either way, so the
/// subsequent reduction is deterministic.
fn run_batch(
    model: &SketchModel<f32>,
    inputs: &[(Tensor<f32>, Vec<Stroke5>)],
    batch: &[usize],
    noise_base: u64,
    threads: usize,
) -> Result<Vec<SketchGrads>> {
    if threads <= 1 || batch.len() <= 1 {
        let mut results = Vec::with_capacity(batch.len());
        for (pos, &idx) in batch.iter().enumerate() {
            let (images, target) = &inputs[idx];
            results.push(sketch_step(
                model,
                images,
                target,
                noise_base.wrapping_add(pos as u64),
            )?);
        }
        return Ok(results);
    }
    let chunk = batch.len().div_ceil(threads);
    let mut slots: Vec<Option<Result<SketchGrads>>> = Vec::new();
    slots.resize_with(batch.len(), || None);
    std::thread::scope(|scope| {
        let mut offset = 0usize;
        let mut pending = Vec::new();
        for piece in batch.chunks(chunk) {
            let start = offset;
            offset += piece.len();
            pending.push(scope.spawn(move || {
                let mut local = Vec::with_capacity(piece.len());
                for (k, &idx) in piece.iter().enumerate() {
                    let (images, target) = &inputs[idx];
                    local.push(sketch_step(
                        model,
                        images,
                        target,
                        noise_base.wrapping_add((start + k) as u64),
                    ));
                }
                (start, local)
            }));
        }
        for handle in pending {
            let (start, local) = handle.join().expect("worker panicked");
            for (k, r) in local.into_iter().enumerate() {
                slots[start + k] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}

fn fisher_yates(order: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::RngExt;
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}
