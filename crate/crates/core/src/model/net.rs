//! The patch classifier network and its gradients.
//!
//! Topology: conv (valid, stride 1) -> ReLU -> 2x2 max-pool -> conv ->
//! ReLU -> global average pool -> affine -> softmax. Parameters are stored
//! as f32; all training and inference arithmetic runs in f64.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::RealImage;
use crate::rng::RngStream;

/// Layer shapes. The default is the 32x32 patch classifier; smaller
/// configurations exist for exhaustive gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub patch_size: u32,
    pub input_channels: u32,
    pub conv1_filters: u32,
    pub conv1_kernel: u32,
    pub conv2_filters: u32,
    pub conv2_kernel: u32,
    pub num_classes: u32,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            patch_size: 32,
            input_channels: 3,
            conv1_filters: 16,
            conv1_kernel: 7,
            conv2_filters: 32,
            conv2_kernel: 3,
            num_classes: 9,
        }
    }
}

impl Architecture {
    /// Spatial size after the first convolution (valid padding).
    pub fn conv1_out(&self) -> u32 {
        self.patch_size - self.conv1_kernel + 1
    }

    /// Spatial size after 2x2 max pooling (floor).
    pub fn pool_out(&self) -> u32 {
        self.conv1_out() / 2
    }

    /// Spatial size after the second convolution.
    pub fn conv2_out(&self) -> u32 {
        self.pool_out() - self.conv2_kernel + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0
            || self.input_channels == 0
            || self.conv1_filters == 0
            || self.conv2_filters == 0
            || self.num_classes == 0
            || self.conv1_kernel == 0
            || self.conv2_kernel == 0
        {
            return Err(Error::Param("architecture has a zero dimension".into()));
        }
        if self.conv1_kernel > self.patch_size {
            return Err(Error::Param("conv1 kernel larger than patch".into()));
        }
        if self.pool_out() == 0 || self.conv2_kernel > self.pool_out() {
            return Err(Error::Param("conv2 kernel larger than pooled map".into()));
        }
        Ok(())
    }

    pub fn conv1_w_len(&self) -> usize {
        (self.conv1_filters * self.input_channels * self.conv1_kernel * self.conv1_kernel)
            as usize
    }

    pub fn conv2_w_len(&self) -> usize {
        (self.conv2_filters * self.conv1_filters * self.conv2_kernel * self.conv2_kernel) as usize
    }

    pub fn fc_w_len(&self) -> usize {
        (self.num_classes * self.conv2_filters) as usize
    }

    /// Shape table in storage order, matching [`PatchClassifierModel::tensors`].
    pub fn tensor_shapes(&self) -> [(&'static str, Vec<u32>); 6] {
        [
            (
                "conv1_w",
                vec![
                    self.conv1_filters,
                    self.input_channels,
                    self.conv1_kernel,
                    self.conv1_kernel,
                ],
            ),
            ("conv1_b", vec![self.conv1_filters]),
            (
                "conv2_w",
                vec![
                    self.conv2_filters,
                    self.conv1_filters,
                    self.conv2_kernel,
                    self.conv2_kernel,
                ],
            ),
            ("conv2_b", vec![self.conv2_filters]),
            ("fc_w", vec![self.num_classes, self.conv2_filters]),
            ("fc_b", vec![self.num_classes]),
        ]
    }
}

/// Weights and biases of the patch classifier, plus training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchClassifierModel {
    pub arch: Architecture,
    pub conv1_w: Vec<f32>,
    pub conv1_b: Vec<f32>,
    pub conv2_w: Vec<f32>,
    pub conv2_b: Vec<f32>,
    pub fc_w: Vec<f32>,
    pub fc_b: Vec<f32>,
    pub train_seed: u64,
    pub epochs_trained: u32,
}

impl PatchClassifierModel {
    /// All-zero parameters; the forward pass is exactly uniform.
    pub fn zeroed(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(PatchClassifierModel {
            arch,
            conv1_w: vec![0.0; arch.conv1_w_len()],
            conv1_b: vec![0.0; arch.conv1_filters as usize],
            conv2_w: vec![0.0; arch.conv2_w_len()],
            conv2_b: vec![0.0; arch.conv2_filters as usize],
            fc_w: vec![0.0; arch.fc_w_len()],
            fc_b: vec![0.0; arch.num_classes as usize],
            train_seed: 0,
            epochs_trained: 0,
        })
    }

    /// He-style initialization: weights from N(0, 2 / fan_in), zero biases.
    pub fn init(arch: Architecture, rng: &RngStream) -> Result<Self> {
        let mut model = Self::zeroed(arch)?;
        let mut r = rng.rng();
        let mut fill = |buf: &mut [f32], fan_in: usize| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            for v in buf {
                *v = normal.sample(&mut r) as f32;
            }
        };
        let k1 = (arch.input_channels * arch.conv1_kernel * arch.conv1_kernel) as usize;
        fill(&mut model.conv1_w, k1);
        let k2 = (arch.conv1_filters * arch.conv2_kernel * arch.conv2_kernel) as usize;
        fill(&mut model.conv2_w, k2);
        fill(&mut model.fc_w, arch.conv2_filters as usize);
        Ok(model)
    }

    /// Parameter tensors in storage order.
    pub fn tensors(&self) -> [(&'static str, &[f32]); 6] {
        [
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("fc_w", &self.fc_w),
            ("fc_b", &self.fc_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f32]); 6] {
        [
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("fc_w", &mut self.fc_w),
            ("fc_b", &mut self.fc_b),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Gradients (or any per-parameter accumulator) in f64.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

impl Gradients {
    pub fn zeros(arch: &Architecture) -> Gradients {
        Gradients {
            conv1_w: vec![0.0; arch.conv1_w_len()],
            conv1_b: vec![0.0; arch.conv1_filters as usize],
            conv2_w: vec![0.0; arch.conv2_w_len()],
            conv2_b: vec![0.0; arch.conv2_filters as usize],
            fc_w: vec![0.0; arch.fc_w_len()],
            fc_b: vec![0.0; arch.num_classes as usize],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc_w,
            &self.fc_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for dst in self.tensors_mut() {
            for d in dst.iter_mut() {
                *d *= factor;
            }
        }
    }
}

/// Valid-padding convolution, weights `[c_out][c_in][k][k]`, input and
/// output `[c][y][x]`; input may be rectangular. The accumulation order per
/// output position is fixed (c, ky, kx), so windowed and whole-image
/// evaluations agree bit for bit.
pub(crate) fn conv_forward(
    input: &[f64],
    c_in: usize,
    in_h: usize,
    in_w: usize,
    weights: &[f32],
    bias: &[f32],
    c_out: usize,
    k: usize,
    out: &mut [f64],
) {
    let oh = in_h - k + 1;
    let ow = in_w - k + 1;
    debug_assert_eq!(out.len(), c_out * oh * ow);
    for f in 0..c_out {
        let plane = &mut out[f * oh * ow..(f + 1) * oh * ow];
        plane.fill(bias[f] as f64);
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let w = weights[((f * c_in + c) * k + ky) * k + kx] as f64;
                    for oy in 0..oh {
                        let in_row = &input[(c * in_h + oy + ky) * in_w + kx..][..ow];
                        let out_row = &mut plane[oy * ow..oy * ow + ow];
                        for (ov, iv) in out_row.iter_mut().zip(in_row) {
                            *ov += w * iv;
                        }
                    }
                }
            }
        }
    }
}

fn relu_inplace(buf: &mut [f64]) {
    for v in buf {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// 2x2 max pool with stride 2 (floor); returns pooled values and the flat
/// input index of each winner for backward routing. Ties go to the first
/// cell in scan order.
fn maxpool_forward(input: &[f64], channels: usize, in_size: usize) -> (Vec<f64>, Vec<u32>) {
    let o = in_size / 2;
    let mut out = vec![0.0f64; channels * o * o];
    let mut argmax = vec![0u32; channels * o * o];
    for c in 0..channels {
        for py in 0..o {
            for px in 0..o {
                let mut best_idx = (c * in_size + 2 * py) * in_size + 2 * px;
                let mut best = input[best_idx];
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = (c * in_size + 2 * py + dy) * in_size + 2 * px + dx;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                let at = (c * o + py) * o + px;
                out[at] = best;
                argmax[at] = best_idx as u32;
            }
        }
    }
    (out, argmax)
}

/// Everything the backward pass needs from one forward evaluation.
pub(crate) struct ForwardTrace {
    pub pre1: Vec<f64>,
    pub pool: Vec<f64>,
    pub argmax: Vec<u32>,
    pub pre2: Vec<f64>,
    pub gap: Vec<f64>,
    pub probs: Vec<f64>,
    pub loss: Option<f64>,
}

/// Forward pass over one patch (channels-first f32 samples). When `label`
/// is given, the cross-entropy loss is recorded in the trace.
pub(crate) fn forward_trace(
    model: &PatchClassifierModel,
    patch: &[f32],
    label: Option<u32>,
) -> ForwardTrace {
    let arch = &model.arch;
    let (c0, s) = (arch.input_channels as usize, arch.patch_size as usize);
    let (f1, k1, o1) = (
        arch.conv1_filters as usize,
        arch.conv1_kernel as usize,
        arch.conv1_out() as usize,
    );
    let (f2, k2, o2) = (
        arch.conv2_filters as usize,
        arch.conv2_kernel as usize,
        arch.conv2_out() as usize,
    );
    let p = arch.pool_out() as usize;
    debug_assert_eq!(patch.len(), c0 * s * s);

    let input: Vec<f64> = patch.iter().map(|&v| v as f64).collect();
    let mut pre1 = vec![0.0f64; f1 * o1 * o1];
    conv_forward(
        &input, c0, s, s, &model.conv1_w, &model.conv1_b, f1, k1, &mut pre1,
    );
    let mut a1 = pre1.clone();
    relu_inplace(&mut a1);
    let (pool, argmax) = maxpool_forward(&a1, f1, o1);
    let mut pre2 = vec![0.0f64; f2 * o2 * o2];
    conv_forward(
        &pool, f1, p, p, &model.conv2_w, &model.conv2_b, f2, k2, &mut pre2,
    );

    // Global average pool over the ReLU'd second feature map.
    let inv_area = 1.0 / (o2 * o2) as f64;
    let mut gap = vec![0.0f64; f2];
    for f in 0..f2 {
        let mut acc = 0.0;
        for &v in &pre2[f * o2 * o2..(f + 1) * o2 * o2] {
            if v > 0.0 {
                acc += v;
            }
        }
        gap[f] = acc * inv_area;
    }

    let classes = arch.num_classes as usize;
    let mut logits = vec![0.0f64; classes];
    for (o, logit) in logits.iter_mut().enumerate() {
        let mut acc = model.fc_b[o] as f64;
        for (i, g) in gap.iter().enumerate() {
            acc += model.fc_w[o * f2 + i] as f64 * g;
        }
        *logit = acc;
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    let loss = label.map(|l| -(logits[l as usize] - max - sum.ln()));

    ForwardTrace {
        pre1,
        pool,
        argmax,
        pre2,
        gap,
        probs,
        loss,
    }
}

/// Probability vector over the classes for one exact-shape patch.
pub fn forward(model: &PatchClassifierModel, patch: &RealImage) -> Result<Vec<f64>> {
    let arch = &model.arch;
    if patch.width() != arch.patch_size
        || patch.height() != arch.patch_size
        || patch.channels() != arch.input_channels
    {
        return Err(Error::Param(format!(
            "patch {}x{}x{} does not match the {}x{}x{} input layer",
            patch.width(),
            patch.height(),
            patch.channels(),
            arch.patch_size,
            arch.patch_size,
            arch.input_channels
        )));
    }
    // Interleaved image samples to channels-first.
    let buf = patch_from_image(patch, arch);
    Ok(forward_trace(model, &buf, None).probs)
}

/// Channels-first f32 patch from an interleaved real image (already the
/// right spatial size). Grayscale broadcasts across the input channels.
pub(crate) fn patch_from_image(img: &RealImage, arch: &Architecture) -> Vec<f32> {
    let s = arch.patch_size as usize;
    let c_in = arch.input_channels as usize;
    let img_ch = img.channels() as usize;
    let mut buf = vec![0.0f32; c_in * s * s];
    for c in 0..c_in {
        let src_c = if img_ch == c_in { c } else { 0 };
        for y in 0..s {
            for x in 0..s {
                buf[(c * s + y) * s + x] = img.data()[(y * s + x) * img_ch + src_c] as f32;
            }
        }
    }
    buf
}

/// Per-batch statistics from a backward pass.
#[derive(Debug, Clone, Copy)]
pub struct BatchStats {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

/// Gradient of one sample, accumulated into `grads` (sum, not mean).
fn backward_sample(
    model: &PatchClassifierModel,
    patch: &[f32],
    label: u32,
    grads: &mut Gradients,
) -> (f64, bool) {
    let arch = &model.arch;
    let (c0, s) = (arch.input_channels as usize, arch.patch_size as usize);
    let (f1, k1, o1) = (
        arch.conv1_filters as usize,
        arch.conv1_kernel as usize,
        arch.conv1_out() as usize,
    );
    let (f2, k2, o2) = (
        arch.conv2_filters as usize,
        arch.conv2_kernel as usize,
        arch.conv2_out() as usize,
    );
    let p = arch.pool_out() as usize;
    let classes = arch.num_classes as usize;

    let trace = forward_trace(model, patch, Some(label));
    let predicted = argmax(&trace.probs);

    // d loss / d logits = softmax - onehot.
    let mut dlogits = trace.probs.clone();
    dlogits[label as usize] -= 1.0;

    // Affine layer.
    let mut dgap = vec![0.0f64; f2];
    for o in 0..classes {
        grads.fc_b[o] += dlogits[o];
        for i in 0..f2 {
            grads.fc_w[o * f2 + i] += dlogits[o] * trace.gap[i];
            dgap[i] += dlogits[o] * model.fc_w[o * f2 + i] as f64;
        }
    }

    // GAP spread + ReLU mask on the second feature map.
    let inv_area = 1.0 / (o2 * o2) as f64;
    let mut da2 = vec![0.0f64; f2 * o2 * o2];
    for f in 0..f2 {
        let g = dgap[f] * inv_area;
        let plane = &trace.pre2[f * o2 * o2..(f + 1) * o2 * o2];
        let dplane = &mut da2[f * o2 * o2..(f + 1) * o2 * o2];
        for (d, &pre) in dplane.iter_mut().zip(plane) {
            if pre > 0.0 {
                *d = g;
            }
        }
    }

    // conv2: weight/bias gradients and input gradient.
    let mut dpool = vec![0.0f64; f1 * p * p];
    for f in 0..f2 {
        let dplane = &da2[f * o2 * o2..(f + 1) * o2 * o2];
        grads.conv2_b[f] += dplane.iter().sum::<f64>();
        for c in 0..f1 {
            for ky in 0..k2 {
                for kx in 0..k2 {
                    let mut acc = 0.0;
                    for oy in 0..o2 {
                        let in_row = &trace.pool[(c * p + oy + ky) * p + kx..][..o2];
                        let d_row = &dplane[oy * o2..oy * o2 + o2];
                        for (dv, iv) in d_row.iter().zip(in_row) {
                            acc += dv * iv;
                        }
                    }
                    grads.conv2_w[((f * f1 + c) * k2 + ky) * k2 + kx] += acc;
                    let w = model.conv2_w[((f * f1 + c) * k2 + ky) * k2 + kx] as f64;
                    for oy in 0..o2 {
                        let dst = &mut dpool[(c * p + oy + ky) * p + kx..][..o2];
                        let d_row = &dplane[oy * o2..oy * o2 + o2];
                        for (dd, dv) in dst.iter_mut().zip(d_row) {
                            *dd += w * dv;
                        }
                    }
                }
            }
        }
    }

    // Max-pool routing and ReLU mask back to the first feature map.
    let mut da1 = vec![0.0f64; f1 * o1 * o1];
    for (i, &winner) in trace.argmax.iter().enumerate() {
        if trace.pre1[winner as usize] > 0.0 {
            da1[winner as usize] += dpool[i];
        }
    }

    // conv1 weight/bias gradients (no input gradient needed).
    for f in 0..f1 {
        let dplane = &da1[f * o1 * o1..(f + 1) * o1 * o1];
        grads.conv1_b[f] += dplane.iter().sum::<f64>();
        for c in 0..c0 {
            for ky in 0..k1 {
                for kx in 0..k1 {
                    let mut acc = 0.0;
                    for oy in 0..o1 {
                        let base = (c * s + oy + ky) * s + kx;
                        let d_row = &dplane[oy * o1..oy * o1 + o1];
                        for (i, dv) in d_row.iter().enumerate() {
                            acc += dv * patch[base + i] as f64;
                        }
                    }
                    grads.conv1_w[((f * c0 + c) * k1 + ky) * k1 + kx] += acc;
                }
            }
        }
    }

    (trace.loss.unwrap(), predicted == label as usize)
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

// Fixed batch chunking so parallel gradient reduction is deterministic
// regardless of worker count.
const GRAD_CHUNK: usize = 16;

/// Mean cross-entropy gradients over a batch. Chunks are evaluated in
/// parallel and reduced in fixed order.
pub fn backward(
    model: &PatchClassifierModel,
    patches: &[&[f32]],
    labels: &[u32],
) -> Result<(Gradients, BatchStats)> {
    use rayon::prelude::*;
    if patches.is_empty() || patches.len() != labels.len() {
        return Err(Error::Param(format!(
            "batch of {} patches with {} labels",
            patches.len(),
            labels.len()
        )));
    }
    let expected = (model.arch.input_channels * model.arch.patch_size * model.arch.patch_size)
        as usize;
    if patches.iter().any(|p| p.len() != expected) {
        return Err(Error::Param("patch shape mismatch in batch".into()));
    }
    if labels.iter().any(|&l| l >= model.arch.num_classes) {
        return Err(Error::Param("label outside class range".into()));
    }

    let indices: Vec<usize> = (0..patches.len()).collect();
    let partials: Vec<(Gradients, f64, usize)> = indices
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = Gradients::zeros(&model.arch);
            let mut loss = 0.0;
            let mut correct = 0;
            for &i in chunk {
                let (l, ok) = backward_sample(model, patches[i], labels[i], &mut grads);
                loss += l;
                correct += ok as usize;
            }
            (grads, loss, correct)
        })
        .collect();

    let mut grads = Gradients::zeros(&model.arch);
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for (g, l, c) in partials {
        grads.add_assign(&g);
        loss_sum += l;
        correct += c;
    }
    let n = patches.len() as f64;
    grads.scale(1.0 / n);
    let loss = loss_sum / n;
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("non-finite batch loss {loss}")));
    }
    Ok((
        grads,
        BatchStats {
            loss,
            correct,
            count: patches.len(),
        },
    ))
}

/// Classical-momentum SGD state.
pub struct SgdMomentum {
    velocity: Gradients,
}

impl SgdMomentum {
    pub fn new(arch: &Architecture) -> SgdMomentum {
        SgdMomentum {
            velocity: Gradients::zeros(arch),
        }
    }

    /// `v <- momentum * v + g; p <- p - lr * v`, evaluated in f64 and
    /// stored back to f32.
    pub fn step(
        &mut self,
        model: &mut PatchClassifierModel,
        grads: &Gradients,
        learning_rate: f64,
        momentum: f64,
    ) {
        let vel = self.velocity.tensors_mut();
        let g = grads.tensors();
        let params = model.tensors_mut();
        for ((v_t, g_t), (_, p_t)) in vel.into_iter().zip(g).zip(params) {
            for ((v, &gi), p) in v_t.iter_mut().zip(g_t).zip(p_t.iter_mut()) {
                *v = momentum * *v + gi;
                *p = (*p as f64 - learning_rate * *v) as f32;
            }
        }
    }
}

/// One SGD-with-momentum update against fresh state. Training keeps a
/// persistent [`SgdMomentum`]; this form exists for single-step use.
pub fn sgd_step(
    model: &mut PatchClassifierModel,
    optimizer: &mut SgdMomentum,
    grads: &Gradients,
    learning_rate: f64,
    momentum: f64,
) {
    optimizer.step(model, grads, learning_rate, momentum);
}
