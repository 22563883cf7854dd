//! Convolution, pooling and batch normalization on the tape.
//!
//! Layout is NCHW throughout. Kernels are plain loops; the model sizes here
//! never justify anything fancier.

use crate::error::{invalid_shape, shape_mismatch, Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{BackFn, Tape, Var};
use crate::tensor::Tensor;

#[inline]
fn idx4(c1: usize, c2: usize, c3: usize, i0: usize, i1: usize, i2: usize, i3: usize) -> usize {
    ((i0 * c1 + i1) * c2 + i2) * c3 + i3
}

impl<T: Scalar> Tape<T> {
    /// 2D convolution: x [n, ci, h, w] * w [co, ci, kh, kw] (+ bias [co]).
    /// Valid padding by default (`pad` = 0); stride >= 1.
    pub fn conv2d(
        &self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(weight));
        if xv.rank() != 4 || wv.rank() != 4 {
            return Err(invalid_shape("conv2d", xv.shape(), "input and kernel must be rank 4"));
        }
        let (n, ci, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (co, kci, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        if ci != kci {
            return Err(shape_mismatch("conv2d", xv.shape(), wv.shape()));
        }
        if stride == 0 {
            return Err(invalid_shape("conv2d", xv.shape(), "stride must be >= 1"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(invalid_shape(
                "conv2d",
                xv.shape(),
                format!("kernel {kh}x{kw} larger than padded input"),
            ));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let bv = match bias {
            Some(b) => {
                let bt = self.value(b);
                if bt.shape() != [co] {
                    return Err(shape_mismatch("conv2d bias", &[co], bt.shape()));
                }
                Some(bt)
            }
            None => None,
        };

        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        {
            let xd = xv.data();
            let wd = wv.data();
            let od = out.data_mut();
            for in_ in 0..n {
                for oc in 0..co {
                    let b0 = bv.as_ref().map_or(T::zero(), |b| b.data()[oc]);
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b0;
                            for ic in 0..ci {
                                for ky in 0..kh {
                                    let iy = oy * stride + ky;
                                    if iy < pad || iy - pad >= h {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = ox * stride + kx;
                                        if ix < pad || ix - pad >= w {
                                            continue;
                                        }
                                        acc += xd[idx4(ci, h, w, in_, ic, iy - pad, ix - pad)]
                                            * wd[idx4(ci, kh, kw, oc, ic, ky, kx)];
                                    }
                                }
                            }
                            od[idx4(co, oh, ow, in_, oc, oy, ox)] = acc;
                        }
                    }
                }
            }
        }

        let xn = self.needs(x);
        let wn = self.needs(weight);
        let bn = bias.map(|b| self.needs(b)).unwrap_or(false);
        let any = xn || wn || bn;
        let back: Option<BackFn<T>> = if any {
            let (xi, wi) = (x.idx, weight.idx);
            let bi = bias.map(|b| b.idx);
            Some(Box::new(move |g, buf| {
                let gd = g.data();
                let mut dx = Tensor::zeros(&[n, ci, h, w]);
                let mut dw = Tensor::zeros(&[co, ci, kh, kw]);
                let mut db = Tensor::zeros(&[co]);
                for in_ in 0..n {
                    for oc in 0..co {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let go = gd[idx4(co, oh, ow, in_, oc, oy, ox)];
                                if bn {
                                    db.data_mut()[oc] += go;
                                }
                                for ic in 0..ci {
                                    for ky in 0..kh {
                                        let iy = oy * stride + ky;
                                        if iy < pad || iy - pad >= h {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = ox * stride + kx;
                                            if ix < pad || ix - pad >= w {
                                                continue;
                                            }
                                            let xi_flat =
                                                idx4(ci, h, w, in_, ic, iy - pad, ix - pad);
                                            let wi_flat = idx4(ci, kh, kw, oc, ic, ky, kx);
                                            if wn {
                                                dw.data_mut()[wi_flat] += go * xv.data()[xi_flat];
                                            }
                                            if xn {
                                                dx.data_mut()[xi_flat] += go * wv.data()[wi_flat];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if xn {
                    buf.accumulate(xi, dx);
                }
                if wn {
                    buf.accumulate(wi, dw);
                }
                if let (true, Some(bi)) = (bn, bi) {
                    buf.accumulate(bi, db);
                }
            }))
        } else {
            None
        };
        Ok(self.push(out, any, back))
    }

    /// Max pooling over k x k windows. Ties resolve to the first element in
    /// scan order, which keeps backward deterministic.
    pub fn maxpool2d(&self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(invalid_shape("maxpool2d", xv.shape(), "expects rank 4"));
        }
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        if k == 0 || stride == 0 || h < k || w < k {
            return Err(invalid_shape("maxpool2d", xv.shape(), "window larger than input"));
        }
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        {
            let xd = xv.data();
            let od = out.data_mut();
            for in_ in 0..n {
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = T::neg_infinity();
                            let mut best_idx = 0usize;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let flat =
                                        idx4(c, h, w, in_, ch, oy * stride + ky, ox * stride + kx);
                                    if xd[flat] > best {
                                        best = xd[flat];
                                        best_idx = flat;
                                    }
                                }
                            }
                            let oflat = idx4(c, oh, ow, in_, ch, oy, ox);
                            od[oflat] = best;
                            argmax[oflat] = best_idx;
                        }
                    }
                }
            }
        }
        let xn = self.needs(x);
        let back: Option<BackFn<T>> = if xn {
            let xi = x.idx;
            let in_shape = vec![n, c, h, w];
            Some(Box::new(move |g, buf| {
                let mut dx = Tensor::zeros(&in_shape);
                for (oflat, &src) in argmax.iter().enumerate() {
                    dx.data_mut()[src] += g.data()[oflat];
                }
                buf.accumulate(xi, dx);
            }))
        } else {
            None
        };
        Ok(self.push(out, xn, back))
    }

    /// Batch normalization in training mode: per-channel statistics over the
    /// (n, h, w) extent, biased variance. Returns the output along with the
    /// batch mean/var so the caller can fold them into running statistics;
    /// nothing is mutated here, keeping the forward pure.
    pub fn batchnorm_train(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, Tensor<T>, Tensor<T>)> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(invalid_shape("batchnorm", xv.shape(), "expects rank 4"));
        }
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        if n == 0 {
            return Err(invalid_shape("batchnorm", xv.shape(), "batch extent must be >= 1"));
        }
        let gv = self.value(gamma);
        let bv = self.value(beta);
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(shape_mismatch("batchnorm", &[c], gv.shape()));
        }

        let m = n * h * w;
        let m_t = T::of(m as f64);
        let mut mean = Tensor::zeros(&[c]);
        let mut var = Tensor::zeros(&[c]);
        for ch in 0..c {
            let mut acc = T::zero();
            for in_ in 0..n {
                for y in 0..h {
                    for xq in 0..w {
                        acc += xv.data()[idx4(c, h, w, in_, ch, y, xq)];
                    }
                }
            }
            mean.data_mut()[ch] = acc / m_t;
        }
        for ch in 0..c {
            let mu = mean.data()[ch];
            let mut acc = T::zero();
            for in_ in 0..n {
                for y in 0..h {
                    for xq in 0..w {
                        let d = xv.data()[idx4(c, h, w, in_, ch, y, xq)] - mu;
                        acc += d * d;
                    }
                }
            }
            var.data_mut()[ch] = acc / m_t;
        }

        let mut inv_std = Tensor::zeros(&[c]);
        for ch in 0..c {
            inv_std.data_mut()[ch] = T::one() / (var.data()[ch] + eps).sqrt();
        }

        let mut xhat = Tensor::zeros(&[n, c, h, w]);
        let mut out = Tensor::zeros(&[n, c, h, w]);
        for in_ in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for xq in 0..w {
                        let flat = idx4(c, h, w, in_, ch, y, xq);
                        let xh = (xv.data()[flat] - mean.data()[ch]) * inv_std.data()[ch];
                        xhat.data_mut()[flat] = xh;
                        out.data_mut()[flat] = gv.data()[ch] * xh + bv.data()[ch];
                    }
                }
            }
        }

        let (xn_, gn, bn) = (self.needs(x), self.needs(gamma), self.needs(beta));
        let any = xn_ || gn || bn;
        let back: Option<BackFn<T>> = if any {
            let (xi, gi, bi) = (x.idx, gamma.idx, beta.idx);
            let xhat_c = xhat;
            let inv_std_c = inv_std;
            let gv_c = gv;
            Some(Box::new(move |g, buf| {
                let mut dgamma = Tensor::zeros(&[c]);
                let mut dbeta = Tensor::zeros(&[c]);
                // Per-channel sums of g and g*xhat.
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for in_ in 0..n {
                    for ch in 0..c {
                        for y in 0..h {
                            for xq in 0..w {
                                let flat = idx4(c, h, w, in_, ch, y, xq);
                                sum_g[ch] += g.data()[flat];
                                sum_gx[ch] += g.data()[flat] * xhat_c.data()[flat];
                            }
                        }
                    }
                }
                for ch in 0..c {
                    dgamma.data_mut()[ch] = sum_gx[ch];
                    dbeta.data_mut()[ch] = sum_g[ch];
                }
                if gn {
                    buf.accumulate(gi, dgamma);
                }
                if bn {
                    buf.accumulate(bi, dbeta);
                }
                if xn_ {
                    let m_t = T::of(m as f64);
                    let mut dx = Tensor::zeros(&[n, c, h, w]);
                    for in_ in 0..n {
                        for ch in 0..c {
                            let coeff = gv_c.data()[ch] * inv_std_c.data()[ch];
                            let mg = sum_g[ch] / m_t;
                            let mgx = sum_gx[ch] / m_t;
                            for y in 0..h {
                                for xq in 0..w {
                                    let flat = idx4(c, h, w, in_, ch, y, xq);
                                    dx.data_mut()[flat] = coeff
                                        * (g.data()[flat] - mg - xhat_c.data()[flat] * mgx);
                                }
                            }
                        }
                    }
                    buf.accumulate(xi, dx);
                }
            }))
        } else {
            None
        };
        Ok((self.push(out, any, back), mean, var))
    }

    /// Batch normalization in eval mode: running statistics are constants, so
    /// each sample is normalized independently.
    pub fn batchnorm_eval(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: T,
    ) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(invalid_shape("batchnorm", xv.shape(), "expects rank 4"));
        }
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        if n == 0 {
            return Err(invalid_shape("batchnorm", xv.shape(), "batch extent must be >= 1"));
        }
        let gv = self.value(gamma);
        let bv = self.value(beta);
        if gv.shape() != [c]
            || bv.shape() != [c]
            || running_mean.shape() != [c]
            || running_var.shape() != [c]
        {
            return Err(shape_mismatch("batchnorm", &[c], gv.shape()));
        }
        let mut inv_std = Tensor::zeros(&[c]);
        for ch in 0..c {
            inv_std.data_mut()[ch] = T::one() / (running_var.data()[ch] + eps).sqrt();
        }
        let mut xhat = Tensor::zeros(&[n, c, h, w]);
        let mut out = Tensor::zeros(&[n, c, h, w]);
        for in_ in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for xq in 0..w {
                        let flat = idx4(c, h, w, in_, ch, y, xq);
                        let xh = (xv.data()[flat] - running_mean.data()[ch]) * inv_std.data()[ch];
                        xhat.data_mut()[flat] = xh;
                        out.data_mut()[flat] = gv.data()[ch] * xh + bv.data()[ch];
                    }
                }
            }
        }
        let (xn_, gn, bn) = (self.needs(x), self.needs(gamma), self.needs(beta));
        let any = xn_ || gn || bn;
        let back: Option<BackFn<T>> = if any {
            let (xi, gi, bi) = (x.idx, gamma.idx, beta.idx);
            let inv_std_c = inv_std;
            let gv_c = gv;
            let xhat_c = xhat;
            Some(Box::new(move |g, buf| {
                if xn_ {
                    let mut dx = Tensor::zeros(&[n, c, h, w]);
                    for in_ in 0..n {
                        for ch in 0..c {
                            let coeff = gv_c.data()[ch] * inv_std_c.data()[ch];
                            for y in 0..h {
                                for xq in 0..w {
                                    let flat = idx4(c, h, w, in_, ch, y, xq);
                                    dx.data_mut()[flat] = g.data()[flat] * coeff;
                                }
                            }
                        }
                    }
                    buf.accumulate(xi, dx);
                }
                if gn || bn {
                    let mut dgamma = Tensor::zeros(&[c]);
                    let mut dbeta = Tensor::zeros(&[c]);
                    for in_ in 0..n {
                        for ch in 0..c {
                            for y in 0..h {
                                for xq in 0..w {
                                    let flat = idx4(c, h, w, in_, ch, y, xq);
                                    dgamma.data_mut()[ch] += g.data()[flat] * xhat_c.data()[flat];
                                    dbeta.data_mut()[ch] += g.data()[flat];
                                }
                            }
                        }
                    }
                    if gn {
                        buf.accumulate(gi, dgamma);
                    }
                    if bn {
                        buf.accumulate(bi, dbeta);
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(out, any, back))
    }
}

/// Fold fresh batch statistics into running statistics with the given momentum.
pub fn update_running_stats<T: Scalar>(
    running: &mut Tensor<T>,
    batch: &Tensor<T>,
    momentum: T,
) -> Result<()> {
    if running.shape() != batch.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "update_running_stats",
            lhs: running.shape().to_vec(),
            rhs: batch.shape().to_vec(),
        });
    }
    let one_minus = T::one() - momentum;
    for (r, b) in running.data_mut().iter_mut().zip(batch.data().iter()) {
        *r = momentum * *r + one_minus * *b;
    }
    Ok(())
}
