//! Autoregressive sequence decoder: a GRU over stroke-5 steps conditioned on
//! the sketch code, emitting a bivariate Gaussian mixture over pen offsets
//! plus three pen-state logits per step. The objective is the plain negative
//! log-likelihood; there is no KL term anywhere.

use dcg_tensor::{standard_normal, Bindings, ParamSet, Scalar, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::stroke::{Pen, Stroke5, StrokePoint, StrokeSequence, STROKE5_START};
use crate::error::{CoreError, Result};
use crate::model::Linear;

const LOG_SIGMA_CLAMP: f64 = 10.0;
const RHO_RAW_CLAMP: f64 = 5.0;

/// Per-step emission vars, all [1, K] except the pen logits [1, 3].
pub struct StepEmission {
    pub pi_logits: Var,
    pub mu_x: Var,
    pub mu_y: Var,
    pub log_sx: Var,
    pub log_sy: Var,
    pub rho_raw: Var,
    pub pen_logits: Var,
}

/// Value-side mixture parameters extracted from one emission step.
#[derive(Debug, Clone)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub rho: Vec<f64>,
    pub pen_probs: [f64; 3],
}

/// The emission projection reads the recurrent state concatenated with the
/// sketch code: the direct path lets the head memorize code-conditioned
/// emissions much faster than routing everything through the recurrence.
pub struct GruDecoder {
    init: Linear,
    wx_zr: dcg_tensor::ParamId,
    wh_zr: dcg_tensor::ParamId,
    b_zr: dcg_tensor::ParamId,
    wx_n: dcg_tensor::ParamId,
    wh_n: dcg_tensor::ParamId,
    b_xn: dcg_tensor::ParamId,
    b_hn: dcg_tensor::ParamId,
    out: Linear,
    hidden: usize,
    mixtures: usize,
    latent_dim: usize,
}

impl GruDecoder {
    pub fn init<T: Scalar, R: Rng>(
        params: &mut ParamSet<T>,
        latent_dim: usize,
        hidden: usize,
        mixtures: usize,
        rng: &mut R,
    ) -> Self {
        let input = 5 + latent_dim;
        let xavier = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let lim_x = xavier(input, hidden);
        let lim_h = xavier(hidden, hidden);
        let init = Linear::init(params, "dec/init", latent_dim, hidden, rng);
        let wx_zr = params.insert(
            "dec/wx_zr",
            Tensor::rand_uniform(&[input, 2 * hidden], -lim_x, lim_x, rng),
            true,
        );
        let wh_zr = params.insert(
            "dec/wh_zr",
            Tensor::rand_uniform(&[hidden, 2 * hidden], -lim_h, lim_h, rng),
            true,
        );
        let b_zr = params.insert("dec/b_zr", Tensor::zeros(&[1, 2 * hidden]), true);
        let wx_n = params.insert(
            "dec/wx_n",
            Tensor::rand_uniform(&[input, hidden], -lim_x, lim_x, rng),
            true,
        );
        let wh_n = params.insert(
            "dec/wh_n",
            Tensor::rand_uniform(&[hidden, hidden], -lim_h, lim_h, rng),
            true,
        );
        let b_xn = params.insert("dec/b_xn", Tensor::zeros(&[1, hidden]), true);
        let b_hn = params.insert("dec/b_hn", Tensor::zeros(&[1, hidden]), true);
        let out = Linear::init(params, "dec/out", hidden + latent_dim, 6 * mixtures + 3, rng);
        // Start the offset sigmas around exp(-1.4) instead of 1: the means
        // then see sharp gradients immediately, which matters at small step
        // budgets (sigma and the means otherwise chase each other down).
        let bias = params.get_mut(out.bias_id());
        for k in 3 * mixtures..5 * mixtures {
            bias.data_mut()[k] = T::of(-1.4);
        }
        GruDecoder {
            init,
            wx_zr,
            wh_zr,
            b_zr,
            wx_n,
            wh_n,
            b_xn,
            b_hn,
            out,
            hidden,
            mixtures,
            latent_dim,
        }
    }

    /// Initial hidden state tanh(affine(y)).
    fn initial_state<T: Scalar>(&self, tape: &Tape<T>, binds: &Bindings, y: Var) -> Result<Var> {
        Ok(tape.tanh(self.init.forward(tape, binds, y)?))
    }

    fn cell<T: Scalar>(&self, tape: &Tape<T>, binds: &Bindings, x: Var, h: Var) -> Result<Var> {
        let zr_pre = tape.add_row(
            tape.add(
                tape.matmul(x, binds.var(self.wx_zr))?,
                tape.matmul(h, binds.var(self.wh_zr))?,
            )?,
            binds.var(self.b_zr),
        )?;
        let zr = tape.sigmoid(zr_pre);
        let z = tape.narrow_cols(zr, 0, self.hidden)?;
        let r = tape.narrow_cols(zr, self.hidden, self.hidden)?;
        let hn = tape.add_row(tape.matmul(h, binds.var(self.wh_n))?, binds.var(self.b_hn))?;
        let n_pre = tape.add_row(
            tape.add(tape.matmul(x, binds.var(self.wx_n))?, tape.mul(r, hn)?)?,
            binds.var(self.b_xn),
        )?;
        let n = tape.tanh(n_pre);
        // h' = (1 - z) * n + z * h
        let one = tape.constant(Tensor::ones(&[1, self.hidden]));
        let keep = tape.sub(one, z)?;
        Ok(tape.add(tape.mul(keep, n)?, tape.mul(z, h)?)?)
    }

    fn split_emission<T: Scalar>(&self, tape: &Tape<T>, raw: Var) -> Result<StepEmission> {
        let k = self.mixtures;
        Ok(StepEmission {
            pi_logits: tape.narrow_cols(raw, 0, k)?,
            mu_x: tape.narrow_cols(raw, k, k)?,
            mu_y: tape.narrow_cols(raw, 2 * k, k)?,
            log_sx: tape.clamp(
                tape.narrow_cols(raw, 3 * k, k)?,
                T::of(-LOG_SIGMA_CLAMP),
                T::of(LOG_SIGMA_CLAMP),
            ),
            log_sy: tape.clamp(
                tape.narrow_cols(raw, 4 * k, k)?,
                T::of(-LOG_SIGMA_CLAMP),
                T::of(LOG_SIGMA_CLAMP),
            ),
            rho_raw: tape.clamp(
                tape.narrow_cols(raw, 5 * k, k)?,
                T::of(-RHO_RAW_CLAMP),
                T::of(RHO_RAW_CLAMP),
            ),
            pen_logits: tape.narrow_cols(raw, 6 * k, 3)?,
        })
    }

    /// Teacher-forced decode: one emission per target step. The input at step
    /// t concatenates the previous ground-truth point (start token at t=0)
    /// with the sketch code.
    pub fn decode_sequence<T: Scalar>(
        &self,
        tape: &Tape<T>,
        binds: &Bindings,
        y: Var,
        target: &[Stroke5],
    ) -> Result<Vec<StepEmission>> {
        let y_shape = tape.shape_of(y);
        if y_shape != [1, self.latent_dim] {
            return Err(CoreError::Config(format!(
                "decoder expects y of shape [1, {}], got {y_shape:?}",
                self.latent_dim
            )));
        }
        let mut h = self.initial_state(tape, binds, y)?;
        let mut emissions = Vec::with_capacity(target.len());
        let mut prev = STROKE5_START;
        for step in target {
            let prev_var = tape.constant(Tensor::from_vec(
                &[1, 5],
                prev.iter().map(|&v| T::of(v as f64)).collect(),
            )?);
            let x = tape.concat_cols(&[prev_var, y])?;
            h = self.cell(tape, binds, x, h)?;
            let readout = tape.concat_cols(&[h, y])?;
            let raw = self.out.forward(tape, binds, readout)?;
            emissions.push(self.split_emission(tape, raw)?);
            prev = *step;
        }
        Ok(emissions)
    }

    /// Negative log-likelihood of the target under the emissions: per step,
    /// the mixture log-density of the (dx, dy) offset plus the pen-state
    /// log-probability, summed over steps and negated.
    pub fn reconstruction_nll<T: Scalar>(
        &self,
        tape: &Tape<T>,
        emissions: &[StepEmission],
        target: &[Stroke5],
    ) -> Result<Var> {
        if emissions.len() != target.len() {
            return Err(CoreError::Config(format!(
                "{} emissions vs {} target steps",
                emissions.len(),
                target.len()
            )));
        }
        let k = self.mixtures;
        let mut total: Option<Var> = None;
        for (em, step) in emissions.iter().zip(target.iter()) {
            let dx = tape.constant(Tensor::full(&[1, k], T::of(step[0] as f64)));
            let dy = tape.constant(Tensor::full(&[1, k], T::of(step[1] as f64)));
            let log_n = bivariate_log_density(tape, em, dx, dy)?;
            let comp = tape.add(tape.log_softmax(em.pi_logits)?, log_n)?;
            let offset_ll = logsumexp_row(tape, comp)?;

            let pen_idx = pen_state_index(step);
            let pen_logp = tape.log_softmax(em.pen_logits)?;
            let pen_ll = tape.reshape(tape.narrow_cols(pen_logp, pen_idx, 1)?, &[1])?;

            let step_ll = tape.add(offset_ll, pen_ll)?;
            total = Some(match total {
                Some(t) => tape.add(t, step_ll)?,
                None => step_ll,
            });
        }
        let total = total.unwrap_or_else(|| tape.constant_scalar(T::zero()));
        Ok(tape.neg(total))
    }

    /// Sample a sequence autoregressively. `temperature` scales the mixture
    /// and pen logits and the Gaussian variances; 0 is the exact greedy mode
    /// (argmax component, mean offsets, argmax pen). Deltas are multiplied by
    /// `delta_scale` to return to canvas units. Stops at the pen-end state or
    /// after `max_len` steps.
    #[allow(clippy::too_many_arguments)]
    pub fn generate<T: Scalar>(
        &self,
        tape: &Tape<T>,
        binds: &Bindings,
        y: Var,
        temperature: f64,
        delta_scale: f64,
        max_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<StrokeSequence> {
        let mut h = self.initial_state(tape, binds, y)?;
        let mut prev = STROKE5_START;
        let mut points = Vec::new();
        for _ in 0..max_len {
            let prev_var = tape.constant(Tensor::from_vec(
                &[1, 5],
                prev.iter().map(|&v| T::of(v as f64)).collect(),
            )?);
            let x = tape.concat_cols(&[prev_var, y])?;
            h = self.cell(tape, binds, x, h)?;
            let readout = tape.concat_cols(&[h, y])?;
            let raw = self.out.forward(tape, binds, readout)?;
            let em = self.split_emission(tape, raw)?;
            let params = extract_mixture(tape, &em);
            let (dx_n, dy_n, pen) = sample_step(&params, temperature, rng);
            let (dx, dy) = (dx_n * delta_scale, dy_n * delta_scale);
            if pen == 2 {
                break;
            }
            let pen_state = if pen == 0 { Pen::Down } else { Pen::Lift };
            points.push(StrokePoint {
                dx: dx as f32,
                dy: dy as f32,
                pen: pen_state,
            });
            prev = [
                dx_n as f32,
                dy_n as f32,
                if pen == 0 { 1.0 } else { 0.0 },
                if pen == 1 { 1.0 } else { 0.0 },
                0.0,
            ];
        }
        if let Some(last) = points.last_mut() {
            last.pen = Pen::Lift;
        }
        Ok(StrokeSequence::new(points))
    }
}

/// Index of the active pen state in a stroke-5 step.
pub fn pen_state_index(step: &Stroke5) -> usize {
    let pens = [step[2], step[3], step[4]];
    let mut best = 0;
    for (i, &p) in pens.iter().enumerate() {
        if p > pens[best] {
            best = i;
        }
    }
    best
}

/// Per-component bivariate Gaussian log density of (dx, dy), shape [1, K].
fn bivariate_log_density<T: Scalar>(
    tape: &Tape<T>,
    em: &StepEmission,
    dx: Var,
    dy: Var,
) -> Result<Var> {
    let sx = tape.exp(em.log_sx);
    let sy = tape.exp(em.log_sy);
    let rho = tape.tanh(em.rho_raw);
    let zx = tape.div(tape.sub(dx, em.mu_x)?, sx)?;
    let zy = tape.div(tape.sub(dy, em.mu_y)?, sy)?;
    let one = tape.constant(Tensor::full(&[1, tape.shape_of(rho)[1]], T::one()));
    let one_minus_rho2 = tape.sub(one, tape.square(rho))?;
    // z = zx^2 + zy^2 - 2*rho*zx*zy
    let cross = tape.mul_scalar(tape.mul(rho, tape.mul(zx, zy)?)?, T::of(2.0));
    let z = tape.sub(tape.add(tape.square(zx), tape.square(zy))?, cross)?;
    // log N = -log(2 pi) - log sx - log sy - 0.5 log(1 - rho^2) - z / (2 (1 - rho^2))
    let log_det = tape.add(
        tape.add(em.log_sx, em.log_sy)?,
        tape.mul_scalar(tape.log(one_minus_rho2), T::of(0.5)),
    )?;
    let denom = tape.mul_scalar(one_minus_rho2, T::of(2.0));
    let quad = tape.div(z, denom)?;
    let neg_log2pi = tape.constant(Tensor::full(
        &[1, tape.shape_of(rho)[1]],
        T::of(-(2.0 * std::f64::consts::PI).ln()),
    ));
    Ok(tape.sub(tape.sub(neg_log2pi, log_det)?, quad)?)
}

/// log(sum(exp(row))) of a [1, n] var, max-subtracted for stability. The max
/// is treated as a constant; its gradient contribution cancels exactly.
fn logsumexp_row<T: Scalar>(tape: &Tape<T>, row: Var) -> Result<Var> {
    let mx = {
        let v = tape.value_ref(row);
        let mut best = T::neg_infinity();
        for &x in v.data() {
            if x > best {
                best = x;
            }
        }
        best
    };
    let shifted = tape.add_scalar(row, -mx);
    let sum = tape.sum_all(tape.exp(shifted));
    Ok(tape.add_scalar(tape.log(sum), mx))
}

/// Read the mixture parameters out of an emission's values.
pub fn extract_mixture<T: Scalar>(tape: &Tape<T>, em: &StepEmission) -> MixtureParams {
    let read = |v: Var| -> Vec<f64> {
        tape.value_ref(v).data().iter().map(|x| x.as_f64()).collect()
    };
    let pi_logits = read(em.pi_logits);
    let weights = softmax_f64(&pi_logits, 1.0);
    let pen_logits = read(em.pen_logits);
    let pen = softmax_f64(&pen_logits, 1.0);
    MixtureParams {
        weights,
        mu_x: read(em.mu_x),
        mu_y: read(em.mu_y),
        sigma_x: read(em.log_sx).iter().map(|v| v.exp()).collect(),
        sigma_y: read(em.log_sy).iter().map(|v| v.exp()).collect(),
        rho: read(em.rho_raw).iter().map(|v| v.tanh()).collect(),
        pen_probs: [pen[0], pen[1], pen[2]],
    }
}

fn softmax_f64(logits: &[f64], temperature: f64) -> Vec<f64> {
    let t = temperature.max(1e-12);
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - mx) / t).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|e| e / denom).collect()
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    use rand::RngExt;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Sample one step: (dx, dy) in normalized units plus the pen state index.
pub fn sample_step(
    params: &MixtureParams,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> (f64, f64, usize) {
    if temperature <= 0.0 {
        let k = argmax(&params.weights);
        let pen = argmax(&params.pen_probs);
        return (params.mu_x[k], params.mu_y[k], pen);
    }
    // Temperature reshapes the categorical distributions via logits / tau and
    // scales the Gaussian variances by tau.
    let pi_logits: Vec<f64> = params.weights.iter().map(|p| p.max(1e-300).ln()).collect();
    let pi = softmax_f64(&pi_logits, temperature);
    let k = sample_categorical(&pi, rng);
    let pen_logits: Vec<f64> = params.pen_probs.iter().map(|p| p.max(1e-300).ln()).collect();
    let pen_probs = softmax_f64(&pen_logits, temperature);
    let sqrt_t = temperature.sqrt();
    let z1 = standard_normal(rng);
    let z2 = standard_normal(rng);
    let rho = params.rho[k];
    let dx = params.mu_x[k] + params.sigma_x[k] * sqrt_t * z1;
    let dy = params.mu_y[k]
        + params.sigma_y[k] * sqrt_t * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
    let pen = sample_categorical(&pen_probs, rng);
    (dx, dy, pen)
}
