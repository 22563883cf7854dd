//! End-to-end finite-difference validation of the full model gradient,
//! parameter group by parameter group, at f64.
//!
//! Per coordinate, the comparison is
//! |analytic - central| / max(|analytic|, |central|, floor), where the floor
//! is the larger of 1e-8 and the central difference's own resolution,
//! RESOLUTION_FACTOR * eps * max(1, |loss|) / h. The resolution term matters
//! for structurally-zero gradients: a conv-stage bias whose relu channel is
//! fully active is cancelled exactly by the batchnorm mean subtraction, so
//! its true gradient is 0 while the central difference still returns float
//! cancellation noise of order eps * |loss| / h. Comparing that noise against
//! a fixed 1e-8 would flag a correct gradient as wrong.

use std::time::Instant;

use dcg_tensor::{Bindings, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{derive_seed, ModelConfig};
use crate::data::{generate_synthetic, Shape, CANVAS_FILL};
use crate::error::{CoreError, Result};
use crate::model::{BnMode, LatentNoise, SketchModel};
use crate::pipeline;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
const RESOLUTION_FACTOR: f64 = 3e4;

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub group: String,
    pub tensor_count: usize,
    pub coordinate_count: usize,
    pub max_rel_err: f64,
    pub worst_tensor: String,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_err: f64,
    pub loss_at_point: f64,
    pub elapsed_secs: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < FD_TOLERANCE
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for g in &self.groups {
            s.push_str(&format!(
                "{:<8} tensors={:<3} coords={:<6} max_rel_err={:.3e}  (worst: {})\n",
                g.group, g.tensor_count, g.coordinate_count, g.max_rel_err, g.worst_tensor
            ));
        }
        s.push_str(&format!(
            "overall max_rel_err={:.3e} tolerance={:.0e} elapsed={:.1}s => {}\n",
            self.max_rel_err,
            FD_TOLERANCE,
            self.elapsed_secs,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        s
    }
}

fn group_of(name: &str) -> String {
    name.split('/').next().unwrap_or(name).to_string()
}

/// Check every trainable parameter of an f64 micro-scale model against
/// central finite differences through the complete loss: CNN encoder, edge
/// coefficients, PE-equipped aggregation, latent head with a frozen noise
/// draw, GRU decoder and the mixture NLL.
pub fn run_gradcheck(seed: u64) -> Result<GradcheckReport> {
    let start = Instant::now();
    let config = ModelConfig::gradcheck_micro();
    let mut model = SketchModel::<f64>::init(config.clone(), seed)?;

    // Fixture: one synthetic sketch, truncated so the stroke-5 target has
    // exactly max_seq_len steps.
    let seq = generate_synthetic(
        Shape::Circle,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "fixture", 0)),
    )
    .normalized(CANVAS_FILL);
    let mut short = seq.clone();
    short.points.truncate(config.max_seq_len - 1);
    let seqs = [short.clone()];
    model.set_delta_scale(crate::data::StrokeSequence::delta_std(&seqs) as f64);
    let target = model.stroke5_target(&short)?;

    let mut input = pipeline::prepare_input::<f64>(&seq, &config, None).images;
    // Dither the images so no conv window is exactly zero: a blank window
    // would put the stage bias exactly on the ReLU kink, where central
    // differences and the subgradient convention legitimately disagree.
    for (i, v) in input.data_mut().iter_mut().enumerate() {
        *v += 0.02 * ((i as f64) * 0.7).sin();
    }

    // Frozen reparameterization noise so the loss is a fixed function.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "eps", 0));
    let noise = LatentNoise::Fixed(Tensor::randn(&[1, config.latent_dim], 1.0, &mut noise_rng));

    // No-grad loss evaluation with one parameter tensor substituted.
    let eval = |override_tensor: Option<(dcg_tensor::ParamId, &Tensor<f64>)>| -> Result<f64> {
        let tape = Tape::new();
        let binds = Bindings::bind_frozen_override(&tape, model.params(), override_tensor);
        let out = model.forward_bound(&tape, &binds, &input, &target, &noise, BnMode::Train)?;
        Ok(tape.value(out.loss).item())
    };

    // Determinism gate.
    let loss_at_point = eval(None)?;
    if loss_at_point.to_bits() != eval(None)?.to_bits() {
        return Err(CoreError::Eval(
            "loss is not deterministic across repeated evaluations".into(),
        ));
    }

    // One reverse pass yields every analytic gradient at once.
    let tape = Tape::new();
    let binds = Bindings::bind_all(&tape, model.params(), None);
    let out = model.forward_bound(&tape, &binds, &input, &target, &noise, BnMode::Train)?;
    let store = tape.backward(out.loss)?;

    let floor = (RESOLUTION_FACTOR * f64::EPSILON * loss_at_point.abs().max(1.0) / FD_STEP)
        .max(1e-8);

    let ids: Vec<_> = model.params().trainable_ids().collect();
    let mut groups: Vec<GroupReport> = Vec::new();
    let mut overall = 0.0f64;
    for id in ids {
        let name = model.params().name(id).to_string();
        let analytic = binds.grad_of(&store, model.params(), id);
        let mut perturbed = model.params().get(id).clone();
        let mut tensor_worst = 0.0f64;
        for i in 0..perturbed.numel() {
            let orig = perturbed.data()[i];
            perturbed.data_mut()[i] = orig + FD_STEP;
            let plus = eval(Some((id, &perturbed)))?;
            perturbed.data_mut()[i] = orig - FD_STEP;
            let minus = eval(Some((id, &perturbed)))?;
            perturbed.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            tensor_worst = tensor_worst.max(err);
        }
        overall = overall.max(tensor_worst);
        let group_name = group_of(&name);
        match groups.iter_mut().find(|g| g.group == group_name) {
            Some(g) => {
                g.tensor_count += 1;
                g.coordinate_count += perturbed.numel();
                if tensor_worst > g.max_rel_err {
                    g.max_rel_err = tensor_worst;
                    g.worst_tensor = name;
                }
            }
            None => groups.push(GroupReport {
                group: group_name,
                tensor_count: 1,
                coordinate_count: perturbed.numel(),
                max_rel_err: tensor_worst,
                worst_tensor: name,
            }),
        }
    }
    Ok(GradcheckReport {
        groups,
        max_rel_err: overall,
        loss_at_point,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
