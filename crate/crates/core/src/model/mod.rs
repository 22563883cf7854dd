//! The end-to-end network: CNN patch encoder, PE-equipped graph aggregation,
//! latent head with reparameterization, and the GMM sequence decoder.

pub mod decoder;
pub mod encoder;
pub mod gcn;

use dcg_tensor::{Bindings, ParamId, ParamSet, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, PeFlags};
use crate::data::stroke::Stroke5;
use crate::data::StrokeSequence;
use crate::error::{CoreError, Result};
use crate::graph::GraphMatrices;
use crate::pe::{pe_rows_for_graph, RelativePeBank};

pub use decoder::{GruDecoder, MixtureParams, StepEmission};
pub use encoder::CnnEncoder;
pub use gcn::LatentHead;

/// Batch-normalization mode for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// A pending batch statistic produced by a train-mode forward; committing
/// folds it into the running value with momentum [`BN_MOMENTUM`].
pub struct StatUpdate<T: Scalar> {
    pub id: ParamId,
    pub value: Tensor<T>,
}

/// Momentum of the batchnorm running statistics.
pub const BN_MOMENTUM: f64 = 0.9;

/// Fully-connected layer with bias.
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub(crate) fn init<T: Scalar, R: Rng>(
        params: &mut ParamSet<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Linear {
            w: params.insert(
                &format!("{name}/w"),
                Tensor::rand_uniform(&[fan_in, fan_out], -limit, limit, rng),
                true,
            ),
            b: params.insert(&format!("{name}/b"), Tensor::zeros(&[1, fan_out]), true),
        }
    }

    pub(crate) fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        binds: &Bindings,
        x: Var,
    ) -> dcg_tensor::Result<Var> {
        tape.add_row(tape.matmul(x, binds.var(self.w))?, binds.var(self.b))
    }

    pub(crate) fn bias_id(&self) -> ParamId {
        self.b
    }
}

/// Noise source for the reparameterized latent sample.
pub enum LatentNoise<T: Scalar> {
    /// Deterministic evaluation: y = mu.
    Zero,
    /// Fixed epsilon, e.g. frozen for a finite-difference run.
    Fixed(Tensor<T>),
}

impl<T: Scalar> LatentNoise<T> {
    pub fn sampled(latent_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        LatentNoise::Fixed(Tensor::randn(&[1, latent_dim], 1.0, rng))
    }
}

/// Everything a training step needs from one forward pass.
pub struct ForwardOutput<T: Scalar> {
    pub loss: Var,
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
    pub y: Tensor<T>,
    pub graph: GraphMatrices<T>,
    pub stat_updates: Vec<StatUpdate<T>>,
}

/// Var-level forward output, for callers that own the bindings.
pub struct BoundForward<T: Scalar> {
    pub loss: Var,
    pub mu: Var,
    pub logvar: Var,
    pub y: Var,
    pub graph: GraphMatrices<T>,
    pub stat_updates: Vec<StatUpdate<T>>,
}

pub struct SketchModel<T: Scalar> {
    config: ModelConfig,
    params: ParamSet<T>,
    encoder: CnnEncoder,
    rel_bank: RelativePeBank,
    latent: LatentHead,
    decoder: GruDecoder,
    /// Fixed absolute-PE rows, (M+1) x dim, zero placeholder in row 0.
    pe_rows: Tensor<T>,
    /// Rows 1..=M only (fed to the PE-in-edges ablation scores).
    pe_patch_rows: Tensor<T>,
    /// Std of training deltas; decoder targets are divided by this.
    delta_scale: f64,
}

impl<T: Scalar> SketchModel<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = CnnEncoder::init(&mut params, &config, &mut rng);
        let rel_bank =
            RelativePeBank::init(&mut params, config.patch_count, config.embed_dim, &mut rng);
        let latent = LatentHead::init(
            &mut params,
            (config.patch_count + 1) * config.embed_dim,
            config.mlp_hidden,
            config.latent_dim,
            &mut rng,
        );
        let decoder = GruDecoder::init(
            &mut params,
            config.latent_dim,
            config.decoder_hidden,
            config.mixture_count,
            &mut rng,
        );
        let pe_rows = pe_rows_for_graph::<T>(config.patch_count, config.embed_dim)?;
        let mut patch_data = Vec::with_capacity(config.patch_count * config.embed_dim);
        for pos in 1..=config.patch_count {
            patch_data.extend_from_slice(pe_rows.row_slice(pos));
        }
        let pe_patch_rows =
            Tensor::from_vec(&[config.patch_count, config.embed_dim], patch_data)?;
        Ok(SketchModel {
            config,
            params,
            encoder,
            rel_bank,
            latent,
            decoder,
            pe_rows,
            pe_patch_rows,
            delta_scale: 1.0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn rel_bank(&self) -> &RelativePeBank {
        &self.rel_bank
    }

    pub fn decoder_ref(&self) -> &GruDecoder {
        &self.decoder
    }

    /// The fixed absolute-PE rows (row 0 is the global-node placeholder).
    pub fn absolute_pe_rows(&self) -> &Tensor<T> {
        &self.pe_rows
    }

    /// Replace the fixed absolute-PE rows. Exists for isolation experiments
    /// that probe whether the tables can influence edge construction; the
    /// table is never trained and normal paths never call this.
    pub fn override_absolute_pe_rows(&mut self, rows: Tensor<T>) {
        assert_eq!(rows.shape(), self.pe_rows.shape());
        let mut patch_data =
            Vec::with_capacity(self.config.patch_count * self.config.embed_dim);
        for pos in 1..=self.config.patch_count {
            patch_data.extend_from_slice(rows.row_slice(pos));
        }
        self.pe_patch_rows =
            Tensor::from_vec(&[self.config.patch_count, self.config.embed_dim], patch_data)
                .expect("shape checked above");
        self.pe_rows = rows;
    }

    pub fn delta_scale(&self) -> f64 {
        self.delta_scale
    }

    pub fn set_delta_scale(&mut self, scale: f64) {
        self.delta_scale = if scale > 1e-6 { scale } else { 1.0 };
    }

    /// Scale a normalized sequence's deltas down for the decoder.
    pub fn stroke5_target(&self, seq: &StrokeSequence) -> Result<Vec<Stroke5>> {
        crate::data::to_stroke5_target(seq, self.delta_scale as f32, self.config.max_seq_len)
    }

    /// Full forward pass to the loss against caller-owned bindings, so the
    /// caller can read gradients back after `tape.backward`. Pure: running
    /// statistics come back as pending updates, nothing is touched in place.
    pub fn forward_bound(
        &self,
        tape: &Tape<T>,
        binds: &Bindings,
        input_images: &Tensor<T>,
        target: &[Stroke5],
        noise: &LatentNoise<T>,
        mode: BnMode,
    ) -> Result<BoundForward<T>> {
        let images = tape.constant(input_images.clone());
        let (rows, stat_updates) = self
            .encoder
            .forward(tape, binds, &self.params, images, mode)?;
        let m = self.config.patch_count;
        let mut node_rows = Vec::with_capacity(m + 1);
        for i in 0..=m {
            node_rows.push(tape.row(rows, i)?);
        }
        let agg = gcn::aggregate_nodes(
            tape,
            binds,
            &node_rows,
            &self.rel_bank,
            &self.pe_rows,
            &self.pe_patch_rows,
            self.config.flags,
        )?;
        let (mu, logvar) = self.latent.forward(tape, binds, agg.h_concat)?;
        let y = match noise {
            LatentNoise::Zero => mu,
            LatentNoise::Fixed(eps) => {
                if eps.shape() != [1, self.config.latent_dim] {
                    return Err(CoreError::Config(format!(
                        "noise shape {:?} does not match latent dim {}",
                        eps.shape(),
                        self.config.latent_dim
                    )));
                }
                let half_logvar = tape.mul_scalar(logvar, T::of(0.5));
                let sigma = tape.exp(half_logvar);
                let eps_var = tape.constant(eps.clone());
                tape.add(mu, tape.mul(sigma, eps_var)?)?
            }
        };
        let emissions = self.decoder.decode_sequence(tape, binds, y, target)?;
        let loss = self.decoder.reconstruction_nll(tape, &emissions, target)?;
        Ok(BoundForward {
            loss,
            mu,
            logvar,
            y,
            graph: agg.matrices,
            stat_updates,
        })
    }

    /// Convenience wrapper used by the training helpers.
    pub fn forward_loss_bound(
        &self,
        tape: &Tape<T>,
        binds: &Bindings,
        input_images: &Tensor<T>,
        target: &[Stroke5],
        noise: &LatentNoise<T>,
        mode: BnMode,
    ) -> Result<(Var, Vec<StatUpdate<T>>)> {
        let out = self.forward_bound(tape, binds, input_images, target, noise, mode)?;
        Ok((out.loss, out.stat_updates))
    }

    /// Full forward pass to the loss, binding parameters internally. The
    /// optional override substitutes a var for one parameter (used by the
    /// finite-difference harness).
    pub fn forward_loss(
        &self,
        tape: &Tape<T>,
        input_images: &Tensor<T>,
        target: &[Stroke5],
        noise: &LatentNoise<T>,
        mode: BnMode,
        override_var: Option<(ParamId, Var)>,
    ) -> Result<ForwardOutput<T>> {
        let binds = Bindings::bind_all(tape, &self.params, override_var);
        let out = self.forward_bound(tape, &binds, input_images, target, noise, mode)?;
        Ok(ForwardOutput {
            loss: out.loss,
            mu: tape.value(out.mu),
            logvar: tape.value(out.logvar),
            y: tape.value(out.y),
            graph: out.graph,
            stat_updates: out.stat_updates,
        })
    }

    /// Deterministic encoding: eval-mode batchnorm, y = mu. Returns the code
    /// and the graph matrices (for dumps).
    pub fn encode(&self, input_images: &Tensor<T>) -> Result<(Tensor<T>, GraphMatrices<T>)> {
        let tape = Tape::new();
        let binds = bind_frozen(&tape, &self.params);
        let images = tape.constant(input_images.clone());
        let (rows, _) = self
            .encoder
            .forward(&tape, &binds, &self.params, images, BnMode::Eval)?;
        let m = self.config.patch_count;
        let mut node_rows = Vec::with_capacity(m + 1);
        for i in 0..=m {
            node_rows.push(tape.row(rows, i)?);
        }
        let agg = gcn::aggregate_nodes(
            &tape,
            &binds,
            &node_rows,
            &self.rel_bank,
            &self.pe_rows,
            &self.pe_patch_rows,
            self.config.flags,
        )?;
        let (mu, _logvar) = self.latent.forward(&tape, &binds, agg.h_concat)?;
        Ok((tape.value(mu), agg.matrices))
    }

    /// Sample a sequence from a latent code.
    pub fn generate(
        &self,
        y: &Tensor<T>,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<StrokeSequence> {
        let tape = Tape::new();
        let binds = bind_frozen(&tape, &self.params);
        let y_var = tape.constant(y.clone());
        self.decoder.generate(
            &tape,
            &binds,
            y_var,
            temperature,
            self.delta_scale,
            self.config.max_seq_len,
            rng,
        )
    }

    /// Fold pending batch statistics into the running values, in order.
    pub fn commit_stats(&mut self, updates: Vec<StatUpdate<T>>) {
        commit_stats(&mut self.params, updates);
    }

    /// Overwrite the ablation flags (used when loading checkpoints).
    pub fn set_flags(&mut self, flags: PeFlags) {
        self.config.flags = flags;
    }
}

/// Bind every parameter as a non-differentiable constant (evaluation paths).
pub fn bind_frozen<T: Scalar>(tape: &Tape<T>, params: &ParamSet<T>) -> Bindings {
    Bindings::bind_frozen(tape, params)
}

/// Fold pending batch statistics into running values, in order.
pub fn commit_stats<T: Scalar>(params: &mut ParamSet<T>, updates: Vec<StatUpdate<T>>) {
    for u in updates {
        let running = params.get_mut(u.id);
        dcg_tensor::update_running_stats(running, &u.value, T::of(BN_MOMENTUM))
            .expect("stat shapes agree by construction");
    }
}
