//! Parameterized layers and stateless ops, with explicit backward passes.
//!
//! Convolutions carry no bias; a normalization layer always follows and its
//! shift absorbs it. All backward functions accumulate into caller buffers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, conv_out};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

// ─── Convolution ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    /// [out_ch x in_ch x k x k], row-major.
    pub weight: Vec<F>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl<F: Scalar> Conv2d<F> {
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }

    pub fn out_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out(h, self.kernel, self.stride, self.padding),
            conv_out(w, self.kernel, self.stride, self.padding),
        )
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_ch {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {c}",
                self.in_ch
            )));
        }
        let (oh, ow) = self.out_shape(h, w);
        let patch = self.in_ch * self.kernel * self.kernel;
        let mut col = vec![F::zero(); patch * oh * ow];
        let mut y = Tensor::zeros(&[n, self.out_ch, oh, ow]);
        for i in 0..n {
            linalg::im2col(
                &mut col,
                x.item(i),
                c,
                h,
                w,
                self.kernel,
                self.stride,
                self.padding,
            );
            linalg::matmul_acc(y.item_mut(i), &self.weight, &col, self.out_ch, patch, oh * ow);
        }
        Ok(y)
    }

    /// Accumulates dW into `dw`; when `dx` is given, accumulates the input
    /// gradient as well (skipped below the lowest trainable layer).
    pub fn backward(
        &self,
        x: &Tensor<F>,
        dy: &Tensor<F>,
        dw: &mut [F],
        mut dx: Option<&mut Tensor<F>>,
    ) -> Result<()> {
        let (n, c, h, w) = x.dims4()?;
        let (_, oc, oh, ow) = dy.dims4()?;
        debug_assert_eq!(oc, self.out_ch);
        let patch = self.in_ch * self.kernel * self.kernel;
        let mut col = vec![F::zero(); patch * oh * ow];
        let mut dcol = vec![F::zero(); patch * oh * ow];
        for i in 0..n {
            linalg::im2col(
                &mut col,
                x.item(i),
                c,
                h,
                w,
                self.kernel,
                self.stride,
                self.padding,
            );
            linalg::matmul_abt_acc(dw, dy.item(i), &col, self.out_ch, oh * ow, patch);
            if let Some(dx) = dx.as_deref_mut() {
                dcol.iter_mut().for_each(|v| *v = F::zero());
                linalg::matmul_atb_acc(&mut dcol, &self.weight, dy.item(i), patch, self.out_ch, oh * ow);
                linalg::col2im_acc(
                    dx.item_mut(i),
                    &dcol,
                    c,
                    h,
                    w,
                    self.kernel,
                    self.stride,
                    self.padding,
                );
            }
        }
        Ok(())
    }
}

// ─── Batch normalization ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub channels: usize,
    pub eps: F,
    pub momentum: F,
}

/// Per-channel statistics used by the forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct NormAux<F> {
    pub mean: Vec<F>,
    pub invstd: Vec<F>,
    /// True when `mean`/`invstd` came from the batch (backward then needs the
    /// full correction terms; running statistics backstop as constants).
    pub batch_stats: bool,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![F::one(); channels],
            beta: vec![F::zero(); channels],
            running_mean: vec![F::zero(); channels],
            running_var: vec![F::one(); channels],
            channels,
            eps: F::from_f64(1e-5),
            momentum: F::from_f64(0.1),
        }
    }

    fn normalize(&self, x: &Tensor<F>, mean: &[F], invstd: &[F]) -> Result<Tensor<F>> {
        let (n, c, h, w) = x.dims4()?;
        let mut y = Tensor::zeros(&[n, c, h, w]);
        let plane = h * w;
        for i in 0..n {
            let xi = x.item(i);
            let yi = y.item_mut(i);
            for ch in 0..c {
                let g = self.gamma[ch] * invstd[ch];
                let b = self.beta[ch] - mean[ch] * g;
                let src = &xi[ch * plane..(ch + 1) * plane];
                let dst = &mut yi[ch * plane..(ch + 1) * plane];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s * g + b;
                }
            }
        }
        Ok(y)
    }

    /// Per-channel batch mean and biased variance over N, H, W.
    pub fn batch_stats(&self, x: &Tensor<F>) -> Result<(Vec<F>, Vec<F>)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "norm expects {} channels, got {c}",
                self.channels
            )));
        }
        let plane = h * w;
        let count = F::from_f64((n * plane) as f64);
        let mut mean = vec![F::zero(); c];
        let mut var = vec![F::zero(); c];
        for i in 0..n {
            let xi = x.item(i);
            for ch in 0..c {
                let mut s = F::zero();
                for &v in &xi[ch * plane..(ch + 1) * plane] {
                    s += v;
                }
                mean[ch] += s;
            }
        }
        for m in mean.iter_mut() {
            *m /= count;
        }
        for i in 0..n {
            let xi = x.item(i);
            for ch in 0..c {
                let mu = mean[ch];
                let mut s = F::zero();
                for &v in &xi[ch * plane..(ch + 1) * plane] {
                    let d = v - mu;
                    s += d * d;
                }
                var[ch] += s;
            }
        }
        for v in var.iter_mut() {
            *v /= count;
        }
        Ok((mean, var))
    }

    /// Normalize with batch statistics. Never mutates; the caller decides
    /// whether to fold the returned biased variance into the running
    /// estimates (training does, capture passes do not).
    pub fn forward_batch(&self, x: &Tensor<F>) -> Result<(Tensor<F>, NormAux<F>, Vec<F>)> {
        let (mean, var) = self.batch_stats(x)?;
        let invstd: Vec<F> = var.iter().map(|&v| (v + self.eps).sqrt().recip()).collect();
        let y = self.normalize(x, &mean, &invstd)?;
        Ok((
            y,
            NormAux {
                mean: mean.clone(),
                invstd,
                batch_stats: true,
            },
            var,
        ))
    }

    /// Exponential-moving-average update of the running statistics.
    pub fn fold_running(&mut self, mean: &[F], var: &[F]) {
        let m = self.momentum;
        for ch in 0..self.channels {
            self.running_mean[ch] = self.running_mean[ch] * (F::one() - m) + mean[ch] * m;
            self.running_var[ch] = self.running_var[ch] * (F::one() - m) + var[ch] * m;
        }
    }

    /// Normalize with stored running statistics; never mutates.
    pub fn forward_running(&self, x: &Tensor<F>) -> Result<(Tensor<F>, NormAux<F>)> {
        let mean = self.running_mean.clone();
        let invstd: Vec<F> = self
            .running_var
            .iter()
            .map(|&v| (v + self.eps).sqrt().recip())
            .collect();
        let y = self.normalize(x, &mean, &invstd)?;
        Ok((
            y,
            NormAux {
                mean,
                invstd,
                batch_stats: false,
            },
        ))
    }

    /// Accumulates dgamma/dbeta; when `dx` is given, accumulates the input
    /// gradient. `x_pre` is the pre-normalization input stored at forward.
    pub fn backward(
        &self,
        x_pre: &Tensor<F>,
        dy: &Tensor<F>,
        aux: &NormAux<F>,
        dgamma: &mut [F],
        dbeta: &mut [F],
        mut dx: Option<&mut Tensor<F>>,
    ) -> Result<()> {
        let (n, c, h, w) = x_pre.dims4()?;
        let plane = h * w;
        let count = F::from_f64((n * plane) as f64);
        // Channel sums of dy and dy * x_hat.
        let mut sum_dy = vec![F::zero(); c];
        let mut sum_dy_xhat = vec![F::zero(); c];
        for i in 0..n {
            let xi = x_pre.item(i);
            let gi = dy.item(i);
            for ch in 0..c {
                let mu = aux.mean[ch];
                let is = aux.invstd[ch];
                let mut sd = F::zero();
                let mut sx = F::zero();
                let xs = &xi[ch * plane..(ch + 1) * plane];
                let gs = &gi[ch * plane..(ch + 1) * plane];
                for (&xv, &gv) in xs.iter().zip(gs) {
                    sd += gv;
                    sx += gv * (xv - mu) * is;
                }
                sum_dy[ch] += sd;
                sum_dy_xhat[ch] += sx;
            }
        }
        for ch in 0..c {
            dbeta[ch] += sum_dy[ch];
            dgamma[ch] += sum_dy_xhat[ch];
        }
        if let Some(dx) = dx.as_deref_mut() {
            for i in 0..n {
                let xi = x_pre.item(i);
                let gi = dy.item(i);
                let di = dx.item_mut(i);
                for ch in 0..c {
                    let mu = aux.mean[ch];
                    let is = aux.invstd[ch];
                    let g = self.gamma[ch] * is;
                    let xs = &xi[ch * plane..(ch + 1) * plane];
                    let gs = &gi[ch * plane..(ch + 1) * plane];
                    let ds = &mut di[ch * plane..(ch + 1) * plane];
                    if aux.batch_stats {
                        let mean_dy = sum_dy[ch] / count;
                        let mean_dy_xhat = sum_dy_xhat[ch] / count;
                        for ((&xv, &gv), dv) in xs.iter().zip(gs).zip(ds.iter_mut()) {
                            let xhat = (xv - mu) * is;
                            *dv += g * (gv - mean_dy - xhat * mean_dy_xhat);
                        }
                    } else {
                        for (&gv, dv) in gs.iter().zip(ds.iter_mut()) {
                            *dv += g * gv;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

// ─── Dense ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    /// [out_features x in_features], row-major.
    pub weight: Vec<F>,
    pub bias: Vec<F>,
    pub in_features: usize,
    pub out_features: usize,
}

impl<F: Scalar> Linear<F> {
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (n, d) = x.dims2()?;
        if d != self.in_features {
            return Err(Error::ShapeMismatch(format!(
                "linear expects {} input features, got {d}",
                self.in_features
            )));
        }
        let mut y = Tensor::zeros(&[n, self.out_features]);
        linalg::matmul_abt_acc(
            y.data_mut(),
            x.data(),
            &self.weight,
            n,
            self.in_features,
            self.out_features,
        );
        for i in 0..n {
            for (v, &b) in y.item_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    pub fn backward(
        &self,
        x: &Tensor<F>,
        dy: &Tensor<F>,
        dw: &mut [F],
        db: &mut [F],
        dx: Option<&mut Tensor<F>>,
    ) -> Result<()> {
        let (n, _) = x.dims2()?;
        linalg::matmul_atb_acc(dw, dy.data(), x.data(), self.out_features, n, self.in_features);
        for i in 0..n {
            for (b, &g) in db.iter_mut().zip(dy.item(i)) {
                *b += g;
            }
        }
        if let Some(dx) = dx {
            linalg::matmul_acc(
                dx.data_mut(),
                dy.data(),
                &self.weight,
                n,
                self.out_features,
                self.in_features,
            );
        }
        Ok(())
    }
}

// ─── Stateless ops ──────────────────────────────────────────────────────────

pub fn relu_forward<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
    y
}

/// Gradient through ReLU using the stored output (`y > 0` iff the input was
/// positive; gradient at exactly zero is zero).
pub fn relu_backward_acc<F: Scalar>(y: &Tensor<F>, dy: &Tensor<F>, dx: &mut Tensor<F>) {
    for ((&yv, &gv), dv) in y.iter().zip(dy.iter()).zip(dx.data_mut()) {
        if yv > F::zero() {
            *dv += gv;
        }
    }
}

/// 2x2 max pooling with stride 2. Returns pooled output and, per output
/// element, the flat input index of its maximum (first occurrence on ties).
pub fn maxpool2_forward<F: Scalar>(x: &Tensor<F>) -> Result<(Tensor<F>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "maxpool2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut idx = vec![0u32; n * c * oh * ow];
    let mut flat = 0usize;
    for i in 0..n {
        let xi = x.item(i);
        let yi = y.item_mut(i);
        for ch in 0..c {
            let plane = &xi[ch * h * w..(ch + 1) * h * w];
            let out = &mut yi[ch * oh * ow..(ch + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (oy * 2) * w + ox * 2;
                    let cand = [base, base + 1, base + w, base + w + 1];
                    let mut best = cand[0];
                    for &p in &cand[1..] {
                        if plane[p] > plane[best] {
                            best = p;
                        }
                    }
                    out[oy * ow + ox] = plane[best];
                    idx[flat] = ((i * c + ch) * h * w + best) as u32;
                    flat += 1;
                }
            }
        }
    }
    Ok((y, idx))
}

pub fn maxpool2_backward_acc<F: Scalar>(dy: &Tensor<F>, idx: &[u32], dx: &mut Tensor<F>) {
    let dst = dx.data_mut();
    for (&g, &p) in dy.iter().zip(idx) {
        dst[p as usize] += g;
    }
}

/// NCHW -> NC channel means.
pub fn global_avg_pool_forward<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let scale = F::from_f64(1.0 / plane as f64);
    let mut y = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let xi = x.item(i);
        let yi = y.item_mut(i);
        for ch in 0..c {
            let mut s = F::zero();
            for &v in &xi[ch * plane..(ch + 1) * plane] {
                s += v;
            }
            yi[ch] = s * scale;
        }
    }
    Ok(y)
}

pub fn global_avg_pool_backward_acc<F: Scalar>(dy: &Tensor<F>, dx: &mut Tensor<F>) -> Result<()> {
    let (n, c, h, w) = dx.dims4()?;
    let plane = h * w;
    let scale = F::from_f64(1.0 / plane as f64);
    for i in 0..n {
        let gi = dy.item(i);
        let di = dx.item_mut(i);
        for ch in 0..c {
            let g = gi[ch] * scale;
            for v in &mut di[ch * plane..(ch + 1) * plane] {
                *v += g;
            }
        }
    }
    Ok(())
}

/// Mean cross-entropy over the batch via a numerically stable log-softmax,
/// plus the gradient with respect to the logits.
pub fn cross_entropy<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> Result<(f64, Tensor<F>)> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    let mut dlogits = Tensor::zeros(&[n, k]);
    let inv_n = F::from_f64(1.0 / n as f64);
    let mut loss = 0.0f64;
    for i in 0..n {
        let row = logits.item(i);
        let label = labels[i];
        if label >= k {
            return Err(Error::ShapeMismatch(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let mut max = row[0];
        for &v in &row[1..] {
            if v > max {
                max = v;
            }
        }
        let mut sum = F::zero();
        for &v in row {
            sum += (v - max).exp();
        }
        let log_z = sum.ln() + max;
        loss += (log_z - row[label]).to_f64();
        let drow = dlogits.item_mut(i);
        for (j, dv) in drow.iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            let t = if j == label { F::one() } else { F::zero() };
            *dv = (p - t) * inv_n;
        }
    }
    Ok((loss / n as f64, dlogits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv1() -> Conv2d<f64> {
        Conv2d {
            // 1 out, 1 in, 2x2 kernel.
            weight: vec![1.0, 0.0, 0.0, -1.0],
            in_ch: 1,
            out_ch: 1,
            kernel: 2,
            stride: 1,
            padding: 0,
        }
    }

    #[test]
    fn conv_forward_hand_computed() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let y = conv1().forward(&x).unwrap();
        // Each output = top-left - bottom-right of the 2x2 window.
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0 - 5.0, 2.0 - 6.0, 4.0 - 8.0, 5.0 - 9.0]);
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let mut conv = conv1();
        let x = Tensor::from_vec(&[1, 1, 3, 3], vec![0.2, -0.4, 0.5, 1.0, -0.1, 0.3, 0.7, 0.0, -0.6]).unwrap();
        // Scalar objective: sum of outputs.
        let y = conv.forward(&x).unwrap();
        let dy = Tensor::from_vec(y.shape(), vec![1.0; y.len()]).unwrap();
        let mut dw = vec![0.0; 4];
        let mut dx = Tensor::zeros(&[1, 1, 3, 3]);
        conv.backward(&x, &dy, &mut dw, Some(&mut dx)).unwrap();
        let eps = 1e-6;
        for p in 0..4 {
            let orig = conv.weight[p];
            conv.weight[p] = orig + eps;
            let plus: f64 = conv.forward(&x).unwrap().iter().sum();
            conv.weight[p] = orig - eps;
            let minus: f64 = conv.forward(&x).unwrap().iter().sum();
            conv.weight[p] = orig;
            assert!((dw[p] - (plus - minus) / (2.0 * eps)).abs() < 1e-6);
        }
        let mut xp = x.clone();
        for p in 0..9 {
            let orig = xp.data()[p];
            xp.data_mut()[p] = orig + eps;
            let plus: f64 = conv.forward(&xp).unwrap().iter().sum();
            xp.data_mut()[p] = orig - eps;
            let minus: f64 = conv.forward(&xp).unwrap().iter().sum();
            xp.data_mut()[p] = orig;
            assert!((dx.data()[p] - (plus - minus) / (2.0 * eps)).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_batch_mode_normalizes() {
        let bn = BatchNorm::<f64>::identity(2);
        let x = Tensor::from_vec(&[2, 2, 1, 2], vec![1.0, 3.0, 10.0, 20.0, 5.0, 7.0, 30.0, 40.0]).unwrap();
        let (y, aux, _) = bn.forward_batch(&x).unwrap();
        assert!(aux.batch_stats);
        // Per channel: mean 0, variance ~1 after normalization.
        for ch in 0..2 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|i| y.item(i)[ch * 2..(ch + 1) * 2].to_vec())
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / 4.0;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        // Running stats untouched when update_running is false.
        assert_eq!(bn.running_mean, vec![0.0, 0.0]);
        assert_eq!(bn.running_var, vec![1.0, 1.0]);
    }

    #[test]
    fn batchnorm_running_update_blends() {
        let mut bn = BatchNorm::<f64>::identity(1);
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![2.0, 4.0]).unwrap();
        let (_, aux, var) = bn.forward_batch(&x).unwrap();
        bn.fold_running(&aux.mean, &var);
        // mean 3, biased var 1; momentum 0.1.
        assert!((bn.running_mean[0] - 0.3).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_backward_matches_finite_difference() {
        let mut bn = BatchNorm::<f64>::identity(2);
        bn.gamma = vec![1.3, 0.7];
        bn.beta = vec![0.2, -0.1];
        let x = Tensor::from_vec(
            &[2, 2, 2, 1],
            vec![0.5, -1.0, 2.0, 0.3, -0.2, 0.8, 1.5, -0.7],
        )
        .unwrap();
        // Objective: weighted sum of outputs to give non-uniform dy.
        let wts: Vec<f64> = (0..8).map(|i| 0.1 * (i as f64) - 0.35).collect();
        let eval = |bn: &mut BatchNorm<f64>, x: &Tensor<f64>| -> f64 {
            let (y, _, _) = bn.forward_batch(x).unwrap();
            y.iter().zip(&wts).map(|(a, b)| a * b).sum()
        };
        let (y, aux, _) = bn.forward_batch(&x).unwrap();
        let dy = Tensor::from_vec(y.shape(), wts.clone()).unwrap();
        let mut dgamma = vec![0.0; 2];
        let mut dbeta = vec![0.0; 2];
        let mut dx = Tensor::zeros(x.shape());
        bn.backward(&x, &dy, &aux, &mut dgamma, &mut dbeta, Some(&mut dx))
            .unwrap();
        let eps = 1e-6;
        for ch in 0..2 {
            let orig = bn.gamma[ch];
            bn.gamma[ch] = orig + eps;
            let plus = eval(&mut bn, &x);
            bn.gamma[ch] = orig - eps;
            let minus = eval(&mut bn, &x);
            bn.gamma[ch] = orig;
            assert!((dgamma[ch] - (plus - minus) / (2.0 * eps)).abs() < 1e-6);
        }
        let mut xp = x.clone();
        for p in 0..8 {
            let orig = xp.data()[p];
            xp.data_mut()[p] = orig + eps;
            let plus = eval(&mut bn, &xp);
            xp.data_mut()[p] = orig - eps;
            let minus = eval(&mut bn, &xp);
            xp.data_mut()[p] = orig;
            assert!(
                (dx.data()[p] - (plus - minus) / (2.0 * eps)).abs() < 1e-5,
                "dx[{p}]"
            );
        }
    }

    #[test]
    fn linear_forward_backward() {
        let lin = Linear {
            weight: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], // 2x3
            bias: vec![0.5, -0.5],
            in_features: 3,
            out_features: 2,
        };
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 0.0, -1.0]).unwrap();
        let y = lin.forward(&x).unwrap();
        assert_eq!(y.data(), &[1.0 - 3.0 + 0.5, 4.0 - 6.0 - 0.5]);
        let dy = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let mut dw = vec![0.0; 6];
        let mut db = vec![0.0; 2];
        let mut dx = Tensor::zeros(&[1, 3]);
        lin.backward(&x, &dy, &mut dw, &mut db, Some(&mut dx)).unwrap();
        assert_eq!(dw, vec![1.0, 0.0, -1.0, 1.0, 0.0, -1.0]);
        assert_eq!(db, vec![1.0, 1.0]);
        assert_eq!(dx.data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn maxpool_tracks_argmax_and_routes_gradient() {
        let x = Tensor::from_vec(
            &[1, 1, 2, 4],
            vec![1.0, 5.0, 2.0, 2.0, 3.0, 0.0, 2.0, 9.0],
        )
        .unwrap();
        let (y, idx) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 9.0]);
        assert_eq!(idx, vec![1, 7]);
        let dy = Tensor::from_vec(&[1, 1, 1, 2], vec![10.0, 20.0]).unwrap();
        let mut dx = Tensor::zeros(x.shape());
        maxpool2_backward_acc(&dy, &idx, &mut dx);
        assert_eq!(
            dx.data(),
            &[0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 20.0]
        );
    }

    #[test]
    fn maxpool_tie_takes_first() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![7.0, 7.0, 7.0, 7.0]).unwrap();
        let (_, idx) = maxpool2_forward(&x).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Tensor::from_vec(&[2, 4], vec![0.0; 8]).unwrap();
        let (loss, dl) = cross_entropy(&logits, &[1, 3]).unwrap();
        assert!((loss - (4.0f64).ln()).abs() < 1e-12);
        // Gradient rows: (0.25 - onehot) / batch.
        assert!(f64::abs(dl.data()[0] - 0.125) < 1e-12);
        assert!(f64::abs(dl.data()[1] + 0.375) < 1e-12);
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let a = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[1, 3], vec![1001.0, 1002.0, 1003.0]).unwrap();
        let (la, _) = cross_entropy(&a, &[2]).unwrap();
        let (lb, _) = cross_entropy(&b, &[2]).unwrap();
        assert!((la - lb).abs() < 1e-9);
    }
}
