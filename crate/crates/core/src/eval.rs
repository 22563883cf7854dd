//! Evaluation protocols: latent-code retrieval (Ret@k), category recognition
//! (Rec), latent interpolation, and the sketch-healing pipeline.
//!
//! Retrieval: the gallery holds the deterministic code (y = mu) of every
//! uncorrupted test sketch. Each sketch is (optionally) corrupted with its
//! per-id mask, re-encoded, regenerated, and the generated sketch's code
//! queries the gallery; Ret@k is the fraction of sketches whose own entry
//! ranks in the top k. Mask patterns depend only on (sketch id, seed,
//! probability), never on the model, so galleries are comparable across
//! models.

use dcg_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classifier::Classifier;
use crate::config::{derive_seed, fingerprint_config, Distance, EvalConfig, ModelConfig};
use crate::data::raster::Image;
use crate::data::{MaskSpec, StrokeSequence, CANVAS_FILL};
use crate::error::{CoreError, Result};
use crate::graph::GraphMatrices;
use crate::model::SketchModel;
use crate::pipeline;
use crate::train::Dataset;
use crate::util::ordered_parallel_map;

/// Deterministic latent codes of the uncorrupted test set.
pub struct Gallery {
    pub codes: Vec<Tensor<f32>>,
}

impl Gallery {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

pub fn build_gallery(
    model: &SketchModel<f32>,
    dataset: &Dataset,
    threads: usize,
) -> Result<Gallery> {
    let codes: Vec<Result<Tensor<f32>>> =
        ordered_parallel_map(&dataset.sketches, threads, |_, s| {
            let input = pipeline::prepare_input::<f32>(&s.seq, model.config(), None);
            Ok(model.encode(&input.images)?.0)
        });
    let codes = codes.into_iter().collect::<Result<Vec<_>>>()?;
    if codes.is_empty() {
        return Err(CoreError::EmptyGallery);
    }
    Ok(Gallery { codes })
}

fn distance(a: &Tensor<f32>, b: &Tensor<f32>, metric: Distance) -> f64 {
    match metric {
        Distance::Euclidean => {
            let mut acc = 0.0f64;
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                let d = (*x - *y) as f64;
                acc += d * d;
            }
            acc.sqrt()
        }
        Distance::Cosine => {
            1.0 - crate::graph::cosine_similarity(a.data(), b.data()) as f64
        }
    }
}

/// Rank of entry `own` in the gallery by distance to `query` (1-based).
/// Ties break toward the smaller id, so ranking is deterministic.
fn rank_of(gallery: &Gallery, query: &Tensor<f32>, own: usize, metric: Distance) -> usize {
    let d_own = distance(query, &gallery.codes[own], metric);
    let mut rank = 1usize;
    for (t, code) in gallery.codes.iter().enumerate() {
        if t == own {
            continue;
        }
        let d = distance(query, code, metric);
        if d < d_own || (d == d_own && t < own) {
            rank += 1;
        }
    }
    rank
}

#[derive(Debug, Clone, Serialize)]
pub struct RetReport {
    pub ret_at: Vec<(usize, f64)>,
    pub gallery_size: usize,
}

/// The regeneration pipeline for one sketch: corrupt per its id-derived mask,
/// encode, generate, and re-encode the generated sketch. Returns the query
/// code, or None when generation produced an empty sketch (counted as a miss).
fn regenerate_code(
    model: &SketchModel<f32>,
    seq: &StrokeSequence,
    id: usize,
    ec: &EvalConfig,
) -> Result<Option<Tensor<f32>>> {
    let corrupted_code = {
        let mut spec = MaskSpec::new(ec.mask_prob, derive_seed(ec.seed, "mask", id as u64));
        let input = if ec.mask_prob > 0.0 {
            pipeline::prepare_input::<f32>(seq, model.config(), Some(&mut spec))
        } else {
            pipeline::prepare_input::<f32>(seq, model.config(), None)
        };
        model.encode(&input.images)?.0
    };
    let mut gen_rng = ChaCha8Rng::seed_from_u64(derive_seed(ec.seed, "gen", id as u64));
    let generated = model.generate(&corrupted_code, ec.temperature, &mut gen_rng)?;
    if generated.is_empty() {
        return Ok(None);
    }
    // Generated sequences live in the canvas frame already (the first delta
    // carries the absolute start). They are recentered, matching the
    // dataset invariant that every encoded sketch is bbox-centered, but not
    // rescaled: a bounding-box refit would rescale the whole sketch around
    // any single overshot point and needlessly perturb the code.
    let input = pipeline::prepare_input::<f32>(&generated.centered(), model.config(), None);
    Ok(Some(model.encode(&input.images)?.0))
}

pub fn evaluate_ret(
    model: &SketchModel<f32>,
    dataset: &Dataset,
    ec: &EvalConfig,
) -> Result<RetReport> {
    let gallery = build_gallery(model, dataset, ec.threads)?;
    let ranks: Vec<Result<Option<usize>>> =
        ordered_parallel_map(&dataset.sketches, ec.threads, |id, s| {
            match regenerate_code(model, &s.seq, id, ec)? {
                Some(code) => Ok(Some(rank_of(&gallery, &code, id, ec.distance))),
                None => Ok(None),
            }
        });
    let mut resolved = Vec::with_capacity(ranks.len());
    for r in ranks {
        resolved.push(r?);
    }
    let n = resolved.len() as f64;
    let mut ret_at = Vec::with_capacity(ec.ks.len());
    for &k in &ec.ks {
        let k_eff = k.min(gallery.len());
        let hits = resolved
            .iter()
            .filter(|r| matches!(r, Some(rank) if *rank <= k_eff))
            .count();
        ret_at.push((k, 100.0 * hits as f64 / n));
    }
    Ok(RetReport {
        ret_at,
        gallery_size: gallery.len(),
    })
}

/// Rec: fraction of regenerated sketches the bundled classifier assigns to
/// the input's category, as a percentage.
pub fn evaluate_rec(
    model: &SketchModel<f32>,
    dataset: &Dataset,
    classifier: &Classifier,
    ec: &EvalConfig,
) -> Result<f64> {
    if dataset
        .categories
        .iter()
        .any(|c| classifier.category_index(c).is_none())
    {
        return Err(CoreError::CategoryMismatch {
            classifier: classifier.categories().to_vec(),
            dataset: dataset.categories.clone(),
        });
    }
    let outcomes: Vec<Result<bool>> = ordered_parallel_map(&dataset.sketches, ec.threads, |id, s| {
        let truth = match s.category.as_deref().and_then(|c| classifier.category_index(c)) {
            Some(t) => t,
            None => return Ok(false),
        };
        let mut spec = MaskSpec::new(ec.mask_prob, derive_seed(ec.seed, "mask", id as u64));
        let input = if ec.mask_prob > 0.0 {
            pipeline::prepare_input::<f32>(&s.seq, model.config(), Some(&mut spec))
        } else {
            pipeline::prepare_input::<f32>(&s.seq, model.config(), None)
        };
        let code = model.encode(&input.images)?.0;
        let mut gen_rng = ChaCha8Rng::seed_from_u64(derive_seed(ec.seed, "gen", id as u64));
        let generated = model.generate(&code, ec.temperature, &mut gen_rng)?;
        if generated.is_empty() {
            return Ok(false);
        }
        let canvas = crate::data::rasterize(&generated.centered(), model.config().pen_thickness);
        Ok(classifier.classify(&canvas)? == truth)
    });
    let mut correct = 0usize;
    for o in &outcomes {
        match o {
            Ok(true) => correct += 1,
            Ok(false) => {}
            Err(e) => return Err(CoreError::Eval(e.to_string())),
        }
    }
    Ok(100.0 * correct as f64 / dataset.len() as f64)
}

/// Linear interpolation between two codes, each decoded with the same seed.
pub fn interpolate_latents(
    model: &SketchModel<f32>,
    y_a: &Tensor<f32>,
    y_b: &Tensor<f32>,
    steps: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<(f64, StrokeSequence)>> {
    if steps < 2 {
        return Err(CoreError::Eval("interpolation needs >= 2 steps".into()));
    }
    let mut out = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = i as f64 / (steps - 1) as f64;
        let code = y_a.zip_map(y_b, |a, b| a * (1.0 - t as f32) + b * t as f32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        out.push((t, model.generate(&code, temperature, &mut rng)?));
    }
    Ok(out)
}

/// Sketch healing for one sequence: rasterize, pick centers, mask, crop from
/// the corrupted canvas, encode, regenerate.
pub struct HealOutput {
    pub masked_canvas: Image,
    pub healed: StrokeSequence,
    pub code: Tensor<f32>,
    pub graph: GraphMatrices<f32>,
}

pub fn heal(
    model: &SketchModel<f32>,
    seq: &StrokeSequence,
    mask_prob: f64,
    seed: u64,
    temperature: f64,
) -> Result<HealOutput> {
    let normalized = seq.normalized(CANVAS_FILL);
    let mut spec = MaskSpec::new(mask_prob, derive_seed(seed, "mask", 0));
    let input = pipeline::prepare_input::<f32>(&normalized, model.config(), Some(&mut spec));
    let (code, graph) = model.encode(&input.images)?;
    let mut gen_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gen", 0));
    let healed = model.generate(&code, temperature, &mut gen_rng)?;
    Ok(HealOutput {
        masked_canvas: input
            .masked_canvas
            .unwrap_or_else(|| input.canvas.clone()),
        healed,
        code,
        graph,
    })
}

/// The metrics JSON payload. Field order is fixed by this struct, so two
/// identical runs serialize byte-identically.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub fingerprint: u64,
    pub mask_prob: f64,
    pub seed: u64,
    pub gallery_size: usize,
    /// Percentage, absent when no classifier was available.
    pub rec_percent: Option<f64>,
    pub ret_at: Vec<(usize, f64)>,
    pub note: String,
}

impl MetricsReport {
    pub fn build(
        model_config: &ModelConfig,
        ec: &EvalConfig,
        ret: &RetReport,
        rec_percent: Option<f64>,
    ) -> Result<MetricsReport> {
        Ok(MetricsReport {
            fingerprint: fingerprint_config(&(model_config, ec))?,
            mask_prob: ec.mask_prob,
            seed: ec.seed,
            gallery_size: ret.gallery_size,
            rec_percent,
            ret_at: ret.ret_at.clone(),
            note: "rec uses the bundled small classifier trained on the same data".into(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
