//! U-Net encoder-decoder built from the kernels in [`super::layers`].
//!
//! With the default configuration (depth 2, 16 base filters, 28×28 input):
//!
//! ```text
//! enc0  conv16 relu conv16 relu ──────────────────────────────┐ skip0
//!   pool                                                      │
//! enc1  conv32 relu conv32 relu ─────────────────┐ skip1      │
//!   pool                                         │            │
//! bottleneck conv64 relu conv64 relu             │            │
//! dec1  upsample conv32 relu ++ skip1 conv32 relu┘            │
//! dec0  upsample conv16 relu ++ skip0 conv16 relu ────────────┘
//! head  1×1 conv → n_classes, sigmoid
//! ```

use serde::{Deserialize, Serialize};

use super::layers::{
    concat_channels, conv2d_backward_opt, conv2d_forward, maxpool2_backward, maxpool2_forward, relu_backward,
    relu_forward, sigmoid_backward, sigmoid_forward, split_channels, upsample2_backward, upsample2_forward,
    PoolIndices,
};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng::Xoshiro256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub n_classes: usize,
    pub base_filters: usize,
    pub depth: usize,
    pub kernel_size: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { in_channels: 1, n_classes: 5, base_filters: 16, depth: 2, kernel_size: 3, height: 28, width: 28 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.n_classes == 0 || self.base_filters == 0 {
            return Err(Error::arg("in_channels, n_classes and base_filters must be positive"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::arg(format!("kernel_size {} must be odd", self.kernel_size)));
        }
        if self.depth > 8 {
            return Err(Error::arg("depth above 8 is not supported"));
        }
        let step = 1usize << self.depth;
        if self.height == 0 || self.width == 0 || self.height % step != 0 || self.width % step != 0 {
            return Err(Error::arg(format!(
                "input {}x{} must be divisible by 2^depth = {step}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    fn filters(&self, stage: usize) -> usize {
        self.base_filters << stage
    }

    /// Every convolution in forward order.
    pub fn conv_layers(&self) -> Vec<ConvLayer> {
        let k = self.kernel_size;
        let mut layers = Vec::new();
        let mut prev = self.in_channels;
        for s in 0..self.depth {
            let f = self.filters(s);
            layers.push(ConvLayer::new(format!("enc{s}.conv0"), prev, f, k));
            layers.push(ConvLayer::new(format!("enc{s}.conv1"), f, f, k));
            prev = f;
        }
        let f = self.filters(self.depth);
        layers.push(ConvLayer::new("bottleneck.conv0".into(), prev, f, k));
        layers.push(ConvLayer::new("bottleneck.conv1".into(), f, f, k));
        for s in (0..self.depth).rev() {
            let f = self.filters(s);
            layers.push(ConvLayer::new(format!("dec{s}.up_conv"), self.filters(s + 1), f, k));
            layers.push(ConvLayer::new(format!("dec{s}.merge_conv"), 2 * f, f, k));
        }
        layers.push(ConvLayer::new("head".into(), self.filters(0), self.n_classes, 1));
        layers
    }

    /// Total scalar parameter count.
    pub fn parameter_count(&self) -> usize {
        self.conv_layers().iter().map(|l| l.out_ch * l.in_ch * l.k * l.k + l.out_ch).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
}

impl ConvLayer {
    fn new(name: String, in_ch: usize, out_ch: usize, k: usize) -> Self {
        Self { name, in_ch, out_ch, k }
    }
}

/// Named parameter tensors in a fixed order: for each convolution its
/// `.weight` `[out, in, k, k]` then its `.bias` `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetParams<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> UNetParams<T> {
    pub fn zeros(config: &UNetConfig) -> Self {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for l in config.conv_layers() {
            names.push(format!("{}.weight", l.name));
            tensors.push(Tensor::zeros(&[l.out_ch, l.in_ch, l.k, l.k]));
            names.push(format!("{}.bias", l.name));
            tensors.push(Tensor::zeros(&[l.out_ch]));
        }
        Self { names, tensors }
    }

    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        Self { names, tensors }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> UNetParams<U> {
        UNetParams { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Checks names and shapes against what `config` prescribes.
    pub fn check_against(&self, config: &UNetConfig) -> Result<()> {
        let expect = UNetParams::<T>::zeros(config);
        if self.names != expect.names {
            return Err(Error::arg("parameter names do not match the network configuration"));
        }
        for ((name, a), b) in self.names.iter().zip(&self.tensors).zip(&expect.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::arg(format!("parameter {name} has shape {:?}, expected {:?}", a.shape(), b.shape())));
            }
        }
        Ok(())
    }

    fn weight(&self, layer: usize) -> &Tensor<T> {
        &self.tensors[2 * layer]
    }

    fn bias(&self, layer: usize) -> &Tensor<T> {
        &self.tensors[2 * layer + 1]
    }
}

/// He-normal weights (std `sqrt(2 / (in_ch·k²))`), zero biases.
pub fn init_params(config: &UNetConfig, seed: u64) -> Result<UNetParams<f32>> {
    config.validate()?;
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let mut params = UNetParams::zeros(config);
    for (i, l) in config.conv_layers().iter().enumerate() {
        let std = (2.0 / (l.in_ch * l.k * l.k) as f64).sqrt();
        for w in params.tensors[2 * i].data_mut() {
            *w = (std * rng.next_normal()) as f32;
        }
    }
    Ok(params)
}

struct EncoderStage<T: Scalar> {
    input: Tensor<T>,
    a0: Tensor<T>,
    skip: Tensor<T>,
    pool: PoolIndices,
}

struct DecoderStage<T: Scalar> {
    upsampled: Tensor<T>,
    a0: Tensor<T>,
    merged: Tensor<T>,
    a1: Tensor<T>,
}

/// Activations retained by [`unet_forward_batch`] for the backward pass.
pub struct ForwardCache<T: Scalar> {
    encoders: Vec<EncoderStage<T>>,
    /// Input and the two activations of the bottleneck block.
    bottleneck: [Tensor<T>; 3],
    /// Deepest stage first, the order they run in.
    decoders: Vec<DecoderStage<T>>,
    probabilities: Tensor<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn probabilities(&self) -> &Tensor<T> {
        &self.probabilities
    }

    pub fn into_probabilities(self) -> Tensor<T> {
        self.probabilities
    }

    /// Which ReLU units are active and which element won every pooling
    /// window. Two forward passes with equal patterns lie in the same
    /// piecewise-smooth region of the network.
    pub fn activation_pattern(&self) -> (Vec<bool>, Vec<u32>) {
        let mut relu: Vec<&Tensor<T>> = Vec::new();
        for e in &self.encoders {
            relu.extend([&e.a0, &e.skip]);
        }
        relu.extend([&self.bottleneck[1], &self.bottleneck[2]]);
        for d in &self.decoders {
            relu.extend([&d.a0, &d.a1]);
        }
        let active = relu.iter().flat_map(|t| t.data().iter().map(|&v| v > T::zero())).collect();
        let argmax = self.encoders.iter().flat_map(|e| e.pool.argmax().iter().copied()).collect();
        (active, argmax)
    }
}

fn checked<T: Scalar>(t: Tensor<T>, layer: &str) -> Result<Tensor<T>> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::numeric(layer, "non-finite activation"))
    }
}

/// Stacks single-channel images into a `[1, N, H, W]` batch.
pub fn batch_from_images<'a, T: Scalar>(
    images: impl IntoIterator<Item = &'a GrayImage>,
    config: &UNetConfig,
) -> Result<Tensor<T>> {
    if config.in_channels != 1 {
        return Err(Error::arg("image batches need a single-channel network"));
    }
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        if img.height() != config.height || img.width() != config.width {
            return Err(Error::arg(format!(
                "image is {}x{}, network expects {}x{}",
                img.height(),
                img.width(),
                config.height,
                config.width
            )));
        }
        data.extend(img.pixels().iter().map(|&p| T::from_f64(p as f64)));
        n += 1;
    }
    Tensor::from_vec(&[1, n, config.height, config.width], data)
}

/// Runs the network on an `[in_channels, N, H, W]` batch (or a single
/// `[in_channels, H, W]` input). The cache holds the probabilities, shaped
/// `[n_classes, N, H, W]` (resp. `[n_classes, H, W]`).
pub fn unet_forward_batch<T: Scalar>(
    params: &UNetParams<T>,
    config: &UNetConfig,
    input: &Tensor<T>,
) -> Result<ForwardCache<T>> {
    let layers = config.conv_layers();
    if params.tensors.len() != 2 * layers.len() {
        return Err(Error::arg("parameter set does not match the network configuration"));
    }
    let ok = match *input.shape() {
        [c, _, h, w] | [c, h, w] => c == config.in_channels && h == config.height && w == config.width,
        _ => false,
    };
    if !ok {
        return Err(Error::arg(format!(
            "network input has shape {:?}, expected [{}, N, {}, {}]",
            input.shape(),
            config.in_channels,
            config.height,
            config.width
        )));
    }
    let conv_relu = |x: &Tensor<T>, l: usize| -> Result<Tensor<T>> {
        let y = conv2d_forward(x, params.weight(l), params.bias(l))?;
        checked(relu_forward(&y), &layers[l].name)
    };

    let mut l = 0;
    let mut x = input.clone();
    let mut encoders = Vec::with_capacity(config.depth);
    for _ in 0..config.depth {
        let a0 = conv_relu(&x, l)?;
        let skip = conv_relu(&a0, l + 1)?;
        l += 2;
        let (pooled, pool) = maxpool2_forward(&skip)?;
        let input = std::mem::replace(&mut x, pooled);
        encoders.push(EncoderStage { input, a0, skip, pool });
    }

    let b_in = x;
    let b0 = conv_relu(&b_in, l)?;
    let b1 = conv_relu(&b0, l + 1)?;
    l += 2;
    let mut x = b1.clone();
    let bottleneck = [b_in, b0, b1];

    let mut decoders = Vec::with_capacity(config.depth);
    for stage in encoders.iter().rev() {
        let upsampled = upsample2_forward(&x)?;
        let a0 = conv_relu(&upsampled, l)?;
        let merged = concat_channels(&stage.skip, &a0)?;
        let a1 = conv_relu(&merged, l + 1)?;
        l += 2;
        x = a1.clone();
        decoders.push(DecoderStage { upsampled, a0, merged, a1 });
    }

    let logits = conv2d_forward(&x, params.weight(l), params.bias(l))?;
    let probabilities = checked(sigmoid_forward(&logits), "head")?;
    Ok(ForwardCache { encoders, bottleneck, decoders, probabilities })
}

/// Single-image forward: probabilities shaped `[n_classes, H, W]`.
pub fn unet_forward<T: Scalar>(
    params: &UNetParams<T>,
    config: &UNetConfig,
    image: &GrayImage,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    let input = batch_from_images(std::iter::once(image), config)?;
    let input = input.reshape(&[1, config.height, config.width])?;
    let cache = unet_forward_batch(params, config, &input)?;
    Ok((cache.probabilities.clone(), cache))
}

/// Parameter gradients given `∂L/∂probabilities`.
pub fn unet_backward<T: Scalar>(
    params: &UNetParams<T>,
    config: &UNetConfig,
    cache: &ForwardCache<T>,
    grad_probabilities: &Tensor<T>,
) -> Result<UNetParams<T>> {
    if grad_probabilities.shape() != cache.probabilities.shape() {
        return Err(Error::arg(format!(
            "gradient shape {:?} does not match output shape {:?}",
            grad_probabilities.shape(),
            cache.probabilities.shape()
        )));
    }
    let grad_logits = sigmoid_backward(&cache.probabilities, grad_probabilities)?;
    unet_backward_logits(params, config, cache, &grad_logits)
}

/// Parameter gradients given `∂L/∂logits` (the head output before the sigmoid).
pub fn unet_backward_logits<T: Scalar>(
    params: &UNetParams<T>,
    config: &UNetConfig,
    cache: &ForwardCache<T>,
    grad_logits: &Tensor<T>,
) -> Result<UNetParams<T>> {
    if grad_logits.shape() != cache.probabilities.shape() {
        return Err(Error::arg("logit gradient shape does not match the cached forward pass"));
    }
    if cache.encoders.len() != config.depth || cache.decoders.len() != config.depth {
        return Err(Error::arg("forward cache does not match the network depth"));
    }
    let depth = config.depth;
    let n_layers = 4 * depth + 3;
    let mut grads = UNetParams::<T>::zeros(config);
    if grads.tensors.len() != 2 * n_layers || params.tensors.len() != grads.tensors.len() {
        return Err(Error::arg("parameter set does not match the network configuration"));
    }
    let mut store = |l: usize, kernel: Tensor<T>, bias: Tensor<T>| {
        grads.tensors[2 * l] = kernel;
        grads.tensors[2 * l + 1] = bias;
    };
    let mut conv_back = |l: usize, input: &Tensor<T>, g: &Tensor<T>, want_input: bool| -> Result<Option<Tensor<T>>> {
        let cg = conv2d_backward_opt(input, params.weight(l), g, want_input)?;
        store(l, cg.kernel, cg.bias);
        Ok(cg.input)
    };

    let head_input = cache.decoders.last().map_or(&cache.bottleneck[2], |d| &d.a1);
    let mut g = conv_back(n_layers - 1, head_input, grad_logits, true)?.expect("input grad");

    let mut skip_grads: Vec<Option<Tensor<T>>> = (0..depth).map(|_| None).collect();
    for (d, stage) in cache.decoders.iter().enumerate().rev() {
        let s = depth - 1 - d;
        let l_up = 2 * depth + 2 + 2 * d;
        g = relu_backward(&stage.a1, &g)?;
        let g_merged = conv_back(l_up + 1, &stage.merged, &g, true)?.expect("input grad");
        let (g_skip, g_a0) = split_channels(&g_merged, cache.encoders[s].skip.shape()[0])?;
        skip_grads[s] = Some(g_skip);
        g = relu_backward(&stage.a0, &g_a0)?;
        let g_up = conv_back(l_up, &stage.upsampled, &g, true)?.expect("input grad");
        g = upsample2_backward(&g_up)?;
    }

    let [b_in, b0, b1] = &cache.bottleneck;
    let l_b = 2 * depth;
    g = relu_backward(b1, &g)?;
    g = conv_back(l_b + 1, b0, &g, true)?.expect("input grad");
    g = relu_backward(b0, &g)?;
    let mut g_next = conv_back(l_b, b_in, &g, depth > 0)?;

    for (s, stage) in cache.encoders.iter().enumerate().rev() {
        let mut g_skip = maxpool2_backward(&stage.pool, &g_next.take().expect("input grad"))?;
        if let Some(extra) = skip_grads[s].take() {
            g_skip.add_assign(&extra);
        }
        g = relu_backward(&stage.skip, &g_skip)?;
        g = conv_back(2 * s + 1, &stage.a0, &g, true)?.expect("input grad");
        g = relu_backward(&stage.a0, &g)?;
        g_next = conv_back(2 * s, &stage.input, &g, s > 0)?;
    }
    Ok(grads)
}
