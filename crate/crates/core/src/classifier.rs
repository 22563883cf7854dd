//! Small bundled CNN classifier behind the category-recognition metric.
//!
//! Four conv stages on 32x32 area-downsampled canvases. Trained on the same
//! data it evaluates; its numbers are not comparable to classifiers trained
//! at full dataset scale, and reports say so.

use dcg_tensor::{Adam, Bindings, ParamSet, Tape, Tensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{derive_seed, ModelConfig, PeFlags};
use crate::data::raster::{area_resize, Image};
use crate::error::{CoreError, Result};
use crate::model::{commit_stats, BnMode, CnnEncoder, Linear};
use crate::train::Dataset;

const CLASSIFIER_INPUT: usize = 32;
const CLASSIFIER_STEPS: usize = 200;
const CLASSIFIER_BATCH: usize = 16;

fn classifier_cnn_config() -> ModelConfig {
    ModelConfig {
        patch_count: 1, // unused by the encoder
        embed_dim: 16,
        input_size: CLASSIFIER_INPUT,
        conv_channels: vec![8, 16, 32, 64],
        latent_dim: 1,
        mlp_hidden: 1,
        decoder_hidden: 1,
        mixture_count: 1,
        max_seq_len: 1,
        pen_thickness: 1,
        flags: PeFlags::default(),
    }
}

pub struct Classifier {
    params: ParamSet<f32>,
    cnn: CnnEncoder,
    head: Linear,
    categories: Vec<String>,
}

impl Classifier {
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Untrained classifier with the given label set; test fixture for
    /// category-compatibility checks.
    #[cfg(test)]
    pub(crate) fn untrained_for_tests(categories: Vec<String>) -> Classifier {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let cfg = classifier_cnn_config();
        let cnn = CnnEncoder::init(&mut params, &cfg, &mut rng);
        let head = Linear::init(&mut params, "head", cfg.embed_dim, categories.len(), &mut rng);
        Classifier {
            params,
            cnn,
            head,
            categories,
        }
    }

    fn logits(
        &self,
        tape: &Tape<f32>,
        binds: &Bindings,
        images: dcg_tensor::Var,
        mode: BnMode,
    ) -> Result<(dcg_tensor::Var, Vec<crate::model::StatUpdate<f32>>)> {
        let (features, stats) = self.cnn.forward(tape, binds, &self.params, images, mode)?;
        let logits = self.head.forward(tape, binds, features)?;
        Ok((logits, stats))
    }

    /// Predicted category index for one canvas.
    pub fn classify(&self, canvas: &Image) -> Result<usize> {
        let tape = Tape::new();
        let binds = Bindings::bind_frozen(&tape, &self.params);
        let images = tape.constant(canvas_input(canvas));
        let (logits, _) = self.logits(&tape, &binds, images, BnMode::Eval)?;
        let row = tape.value(logits);
        let mut best = 0usize;
        for i in 0..row.cols() {
            if row.at2(0, i) > row.at2(0, best) {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }
}

fn canvas_input(canvas: &Image) -> Tensor<f32> {
    let small = area_resize(canvas, CLASSIFIER_INPUT, CLASSIFIER_INPUT);
    let mut out = Tensor::zeros(&[1, 1, CLASSIFIER_INPUT, CLASSIFIER_INPUT]);
    out.data_mut().copy_from_slice(small.data());
    out
}

/// Train the bundled classifier on the dataset's rasterized canvases.
pub fn train_classifier(dataset: &Dataset, seed: u64, pen_thickness: usize) -> Result<Classifier> {
    if dataset.categories.len() < 2 {
        return Err(CoreError::Data(format!(
            "classifier needs >= 2 categories, dataset has {:?}",
            dataset.categories
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let cfg = classifier_cnn_config();
    let cnn = CnnEncoder::init(&mut params, &cfg, &mut rng);
    let head = Linear::init(
        &mut params,
        "head",
        cfg.embed_dim,
        dataset.categories.len(),
        &mut rng,
    );
    let mut clf = Classifier {
        params,
        cnn,
        head,
        categories: dataset.categories.clone(),
    };

    // Rasterize once.
    let mut examples = Vec::with_capacity(dataset.len());
    for s in &dataset.sketches {
        let canvas = crate::data::rasterize(&s.seq, pen_thickness);
        let label = s
            .category
            .as_deref()
            .and_then(|c| clf.category_index(c))
            .ok_or_else(|| CoreError::Data("unlabeled sketch in classifier training".into()))?;
        examples.push((canvas_input(&canvas), label));
    }

    let mut opt = Adam::<f32>::new();
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "clf_order", 0));
    let side = CLASSIFIER_INPUT;
    for _step in 0..CLASSIFIER_STEPS {
        // One stacked forward per step: batchnorm needs a real batch extent
        // (a single 1x1-spatial sample has zero variance at the last stage).
        let mut batch = Tensor::<f32>::zeros(&[CLASSIFIER_BATCH, 1, side, side]);
        let mut labels = Vec::with_capacity(CLASSIFIER_BATCH);
        for b in 0..CLASSIFIER_BATCH {
            let pick = order_rng.random_range(0..examples.len());
            let (input, label) = &examples[pick];
            batch.data_mut()[b * side * side..(b + 1) * side * side]
                .copy_from_slice(input.data());
            labels.push(*label);
        }
        let tape = Tape::new();
        let binds = Bindings::bind_all(&tape, &clf.params, None);
        let images = tape.constant(batch);
        let (logits, stats) = clf.logits(&tape, &binds, images, BnMode::Train)?;
        let logp = tape.log_softmax(logits)?;
        let mut picks = Vec::with_capacity(CLASSIFIER_BATCH);
        for (b, &label) in labels.iter().enumerate() {
            let row = tape.row(logp, b)?;
            picks.push(tape.narrow_cols(row, label, 1)?);
        }
        let stacked = tape.concat_rows(&picks)?;
        let loss = tape.mul_scalar(tape.neg(tape.sum_all(stacked)), 1.0 / CLASSIFIER_BATCH as f32);
        let store = tape.backward(loss)?;
        let mut grads: Vec<Option<Tensor<f32>>> = vec![None; clf.params.len()];
        for id in clf.params.trainable_ids() {
            grads[id.0] = Some(binds.grad_of(&store, &clf.params, id));
        }
        opt.step(&mut clf.params, &grads, 1e-3);
        commit_stats(&mut clf.params, stats);
    }
    Ok(clf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ndjson::LabeledSketch;
    use crate::data::toy_dataset;

    #[test]
    fn classifier_memorizes_the_toy_corpus() {
        let cfg = ModelConfig::toy();
        let raw: Vec<LabeledSketch> = toy_dataset(16, 0)
            .into_iter()
            .map(|(seq, category)| LabeledSketch {
                seq,
                category: Some(category),
            })
            .collect();
        let dataset = Dataset::prepare(raw, &cfg).unwrap();
        let clf = train_classifier(&dataset, 0, cfg.pen_thickness).unwrap();
        let mut correct = 0usize;
        for s in &dataset.sketches {
            let canvas = crate::data::rasterize(&s.seq, cfg.pen_thickness);
            let predicted = clf.classify(&canvas).unwrap();
            let truth = clf.category_index(s.category.as_deref().unwrap()).unwrap();
            if predicted == truth {
                correct += 1;
            }
        }
        let acc = correct as f64 / dataset.len() as f64;
        assert!(acc >= 0.9, "classifier accuracy {acc} below 0.9");
    }
}
