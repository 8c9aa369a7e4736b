//! Layered-network description and the three profiling functions: cumulative
//! client-side FLOPs `L_k`, activation size `N_k` and cumulative client-side
//! parameter count `N_c`.
//!
//! Layer index 0 is the input and is never a cut candidate. All profile
//! quantities are exact integers (per sample, in scalars); the conversion to
//! bits happens in the delay model.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Kind of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// 1-D convolution.
    Conv1d,
    /// 1-D max/average pooling over a window.
    Pool1d,
    /// Global average pooling over the temporal axis.
    GlobalAvgPool,
    /// Dropout (masking only).
    Dropout,
    /// Dense layer over the flattened input.
    FullyConnected,
}

impl LayerKind {
    /// Name as written in architecture documents and CSV exports.
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv1d => "conv1d",
            LayerKind::Pool1d => "pool1d",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Dropout => "dropout",
            LayerKind::FullyConnected => "fully_connected",
        }
    }
}

impl core::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Element-wise activation applied to a layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Identity.
    #[default]
    None,
    /// Rectified linear unit.
    Relu,
    /// Softmax over the output vector.
    Softmax,
}

/// How many FLOPs each output of a layer costs.
///
/// The defaults count a multiply-accumulate as two FLOPs, ignore bias adds
/// and activations, charge pooling one FLOP per window element and global
/// average pooling one FLOP per input element along the pooled axis.
/// Dropout is always free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct FlopConvention {
    /// FLOPs per multiply-accumulate in conv / dense layers.
    pub multiply_add: u64,
    /// FLOPs per output for the bias add, when the layer has a bias.
    pub bias_add: u64,
    /// FLOPs per output for a non-identity activation.
    pub activation: u64,
    /// FLOPs per window element in `pool1d`.
    pub pool_per_element: u64,
    /// FLOPs per pooled input element in `global_avg_pool`.
    pub global_pool_per_element: u64,
}

impl Default for FlopConvention {
    fn default() -> Self {
        Self {
            multiply_add: 2,
            bias_add: 0,
            activation: 0,
            pool_per_element: 1,
            global_pool_per_element: 1,
        }
    }
}

/// A layer as declared by the user, before shapes are chained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDecl {
    /// Layer kind.
    pub kind: LayerKind,
    /// Window length (conv1d, pool1d).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    /// Stride; conv1d defaults to 1, pool1d to the kernel size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    /// Output channels (conv1d) or output features (fully_connected).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    /// Whether the layer carries a bias vector.
    #[serde(default)]
    pub bias: bool,
    /// Declared output length; checked against the chained shape when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_len: Option<usize>,
    /// Activation applied after the layer.
    #[serde(default)]
    pub activation: Activation,
}

impl LayerDecl {
    /// A declaration of the given kind with every optional field unset.
    pub fn new(kind: LayerKind) -> Self {
        Self {
            kind,
            kernel: None,
            stride: None,
            out_channels: None,
            bias: false,
            output_len: None,
            activation: Activation::None,
        }
    }

    /// `conv1d` with stride 1.
    pub fn conv1d(kernel: usize, out_channels: usize, bias: bool) -> Self {
        Self {
            kernel: Some(kernel),
            out_channels: Some(out_channels),
            bias,
            ..Self::new(LayerKind::Conv1d)
        }
    }

    /// `pool1d` with the given window and stride.
    pub fn pool1d(kernel: usize, stride: usize) -> Self {
        Self {
            kernel: Some(kernel),
            stride: Some(stride),
            ..Self::new(LayerKind::Pool1d)
        }
    }

    /// `fully_connected` with the given output width.
    pub fn fully_connected(out_features: usize, bias: bool) -> Self {
        Self {
            out_channels: Some(out_features),
            bias,
            ..Self::new(LayerKind::FullyConnected)
        }
    }

    /// Sets the activation.
    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }
}

/// A fully shaped layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// 1-based position in the network.
    pub index: usize,
    /// Layer kind.
    pub kind: LayerKind,
    /// Temporal length of the input.
    pub input_len: usize,
    /// Channels of the input.
    pub in_channels: usize,
    /// Temporal length of the output.
    pub output_len: usize,
    /// Channels (or features) of the output.
    pub output_channels: usize,
    /// Window length; 1 for kinds without a window.
    pub kernel_size: usize,
    /// Stride; 1 for kinds without a window.
    pub stride: usize,
    /// Whether the layer carries a bias vector.
    pub has_bias: bool,
    /// Activation applied after the layer.
    pub activation: Activation,
}

impl LayerSpec {
    /// Number of output scalars per sample.
    pub fn output_size(&self) -> usize {
        self.output_len * self.output_channels
    }
}

/// A validated layered network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    /// Temporal length of the input.
    pub input_len: usize,
    /// Channels of the input.
    pub input_channels: usize,
    /// Layers `1..=M` in order.
    pub layers: Vec<LayerSpec>,
}

fn shape_err(layer: usize, message: alloc::string::String) -> Error {
    Error::Shape { layer, message }
}

impl ArchitectureSpec {
    /// Chains shapes through `decls` starting from an `input_len × input_channels`
    /// input, validating every declared parameter.
    pub fn new(input_len: usize, input_channels: usize, decls: &[LayerDecl]) -> Result<Self> {
        if input_len == 0 || input_channels == 0 {
            return Err(Error::Architecture(format!(
                "input shape {input_len}x{input_channels} must be positive"
            )));
        }
        if decls.is_empty() {
            return Err(Error::Architecture("network has no layers".into()));
        }
        let mut len = input_len;
        let mut channels = input_channels;
        let mut layers = Vec::with_capacity(decls.len());
        for (pos, decl) in decls.iter().enumerate() {
            let index = pos + 1;
            let spec = shape_layer(index, decl, len, channels)?;
            len = spec.output_len;
            channels = spec.output_channels;
            layers.push(spec);
        }
        Ok(Self {
            input_len,
            input_channels,
            layers,
        })
    }

    /// Number of layers `M`.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Layer at 1-based `index`.
    pub fn layer(&self, index: usize) -> Option<&LayerSpec> {
        index.checked_sub(1).and_then(|i| self.layers.get(i))
    }
}

fn require(index: usize, value: Option<usize>, what: &str, kind: LayerKind) -> Result<usize> {
    match value {
        Some(0) => Err(shape_err(index, format!("{kind} {what} must be at least 1"))),
        Some(v) => Ok(v),
        None => Err(shape_err(index, format!("{kind} requires `{what}`"))),
    }
}

fn forbid(index: usize, value: Option<usize>, what: &str, kind: LayerKind) -> Result<()> {
    match value {
        Some(_) => Err(shape_err(index, format!("{kind} does not take `{what}`"))),
        None => Ok(()),
    }
}

fn windowed_len(index: usize, input_len: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel > input_len {
        return Err(shape_err(
            index,
            format!("kernel {kernel} exceeds input length {input_len}"),
        ));
    }
    Ok((input_len - kernel) / stride + 1)
}

fn shape_layer(index: usize, decl: &LayerDecl, len: usize, channels: usize) -> Result<LayerSpec> {
    let kind = decl.kind;
    let (output_len, output_channels, kernel_size, stride) = match kind {
        LayerKind::Conv1d => {
            let kernel = require(index, decl.kernel, "kernel", kind)?;
            let out = require(index, decl.out_channels, "out_channels", kind)?;
            let stride = decl.stride.unwrap_or(1);
            if stride == 0 {
                return Err(shape_err(index, "stride must be at least 1".into()));
            }
            (windowed_len(index, len, kernel, stride)?, out, kernel, stride)
        }
        LayerKind::Pool1d => {
            let kernel = require(index, decl.kernel, "kernel", kind)?;
            forbid(index, decl.out_channels, "out_channels", kind)?;
            let stride = decl.stride.unwrap_or(kernel);
            if stride == 0 {
                return Err(shape_err(index, "stride must be at least 1".into()));
            }
            (windowed_len(index, len, kernel, stride)?, channels, kernel, stride)
        }
        LayerKind::GlobalAvgPool | LayerKind::Dropout => {
            forbid(index, decl.kernel, "kernel", kind)?;
            forbid(index, decl.stride, "stride", kind)?;
            forbid(index, decl.out_channels, "out_channels", kind)?;
            let out_len = if kind == LayerKind::GlobalAvgPool { 1 } else { len };
            (out_len, channels, 1, 1)
        }
        LayerKind::FullyConnected => {
            forbid(index, decl.kernel, "kernel", kind)?;
            forbid(index, decl.stride, "stride", kind)?;
            let out = require(index, decl.out_channels, "out_channels", kind)?;
            (1, out, 1, 1)
        }
    };
    if decl.bias && !matches!(kind, LayerKind::Conv1d | LayerKind::FullyConnected) {
        return Err(shape_err(index, format!("{kind} cannot carry a bias")));
    }
    if let Some(declared) = decl.output_len {
        if declared != output_len {
            return Err(shape_err(
                index,
                format!(
                    "declared output length {declared} but input length {len} gives {output_len}"
                ),
            ));
        }
    }
    if output_len.checked_mul(output_channels).is_none() {
        return Err(Error::Overflow { layer: index });
    }
    Ok(LayerSpec {
        index,
        kind,
        input_len: len,
        in_channels: channels,
        output_len,
        output_channels,
        kernel_size,
        stride,
        has_bias: decl.bias,
        activation: decl.activation,
    })
}

fn to_u64(v: usize) -> u64 {
    v as u64
}

/// Per-sample FLOPs and parameter count of one layer, or `None` on overflow.
fn try_layer_cost(layer: &LayerSpec, convention: &FlopConvention) -> Option<(u64, u64)> {
    let outputs = to_u64(layer.output_len).checked_mul(to_u64(layer.output_channels))?;
    let bias = if layer.has_bias { convention.bias_add } else { 0 };
    let activation = if layer.activation == Activation::None {
        0
    } else {
        convention.activation
    };
    let (per_output, params) = match layer.kind {
        LayerKind::Conv1d => {
            let fan_in = to_u64(layer.kernel_size).checked_mul(to_u64(layer.in_channels))?;
            let weights = fan_in.checked_mul(to_u64(layer.output_channels))?;
            let biases = if layer.has_bias { to_u64(layer.output_channels) } else { 0 };
            (
                convention.multiply_add.checked_mul(fan_in)?.checked_add(bias)?,
                weights.checked_add(biases)?,
            )
        }
        LayerKind::FullyConnected => {
            let fan_in = to_u64(layer.input_len).checked_mul(to_u64(layer.in_channels))?;
            let weights = fan_in.checked_mul(to_u64(layer.output_channels))?;
            let biases = if layer.has_bias { to_u64(layer.output_channels) } else { 0 };
            (
                convention.multiply_add.checked_mul(fan_in)?.checked_add(bias)?,
                weights.checked_add(biases)?,
            )
        }
        LayerKind::Pool1d => (
            convention
                .pool_per_element
                .checked_mul(to_u64(layer.kernel_size))?,
            0,
        ),
        LayerKind::GlobalAvgPool => (
            convention
                .global_pool_per_element
                .checked_mul(to_u64(layer.input_len))?,
            0,
        ),
        LayerKind::Dropout => return Some((0, 0)),
    };
    let flops = outputs.checked_mul(per_output.checked_add(activation)?)?;
    Some((flops, params))
}

/// FLOPs per sample `l` and parameter count `N_p` of a single layer.
///
/// `l` is the number of outputs times the FLOPs needed per output under
/// `convention`. Parameters follow the usual formulas: `kernel·in·out + out`
/// for a biased conv1d, `in·out + out` for a biased dense layer, zero for
/// pooling and dropout.
pub fn layer_cost(layer: &LayerSpec, convention: &FlopConvention) -> Result<(u64, u64)> {
    try_layer_cost(layer, convention).ok_or(Error::Overflow { layer: layer.index })
}

/// Per-layer profile of a network.
///
/// Vectors are indexed by `layer - 1`. The accessor methods take 1-based
/// layer indices and return 0 for the input (index 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    /// Layer kinds, for export.
    pub kinds: Vec<LayerKind>,
    /// FLOPs per sample of each layer, `l(j)`.
    pub layer_flops: Vec<u64>,
    /// Parameters of each layer, `N_p(j)`.
    pub layer_params: Vec<u64>,
    /// Cumulative client-side FLOPs per sample, `L_k(i)`.
    pub cumulative_flops: Vec<u64>,
    /// Output scalars of each layer, `N_k(i)`.
    pub activations: Vec<u64>,
    /// Cumulative client-side parameters, `N_c(i)`.
    pub cumulative_params: Vec<u64>,
    /// FLOPs per sample of the whole network, `L_total`.
    pub total_flops: u64,
    /// Bits per transmitted scalar.
    pub scalar_bits: u32,
}

impl NetworkProfile {
    /// Number of layers `M`.
    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    /// `L_k(i)`; `L_k(0) = 0`.
    pub fn client_flops(&self, layer: usize) -> u64 {
        cumulative_at(&self.cumulative_flops, layer)
    }

    /// `L_s(i) = L_total - L_k(i)`.
    pub fn server_flops(&self, layer: usize) -> u64 {
        self.total_flops - self.client_flops(layer)
    }

    /// `N_k(i)`; `N_k(0)` is undefined and reported as 0.
    pub fn activation_size(&self, layer: usize) -> u64 {
        cumulative_at(&self.activations, layer)
    }

    /// `N_c(i)`; `N_c(0) = 0`.
    pub fn client_params(&self, layer: usize) -> u64 {
        cumulative_at(&self.cumulative_params, layer)
    }

    /// Valid cut layers `1..=M-1`.
    pub fn cut_range(&self) -> core::ops::RangeInclusive<usize> {
        1..=self.num_layers().saturating_sub(1)
    }

    /// Checks that `cut` lies in `1..=M-1`.
    pub fn check_cut(&self, cut: usize) -> Result<()> {
        if cut >= 1 && cut < self.num_layers() {
            Ok(())
        } else {
            Err(Error::InvalidCut {
                cut,
                layers: self.num_layers(),
            })
        }
    }
}

fn cumulative_at(values: &[u64], layer: usize) -> u64 {
    match layer {
        0 => 0,
        i => values[i - 1],
    }
}

/// Computes `L_k`, `N_k` and `N_c` for every layer of `arch`.
pub fn build_profile(
    arch: &ArchitectureSpec,
    convention: &FlopConvention,
    scalar_bits: u32,
) -> Result<NetworkProfile> {
    if scalar_bits == 0 {
        return Err(Error::Config("scalar_bits must be at least 1".into()));
    }
    let m = arch.num_layers();
    let mut profile = NetworkProfile {
        kinds: Vec::with_capacity(m),
        layer_flops: Vec::with_capacity(m),
        layer_params: Vec::with_capacity(m),
        cumulative_flops: Vec::with_capacity(m),
        activations: Vec::with_capacity(m),
        cumulative_params: Vec::with_capacity(m),
        total_flops: 0,
        scalar_bits,
    };
    let (mut flops, mut params) = (0u64, 0u64);
    for layer in &arch.layers {
        let overflow = Error::Overflow { layer: layer.index };
        let (l, np) = layer_cost(layer, convention)?;
        flops = flops.checked_add(l).ok_or_else(|| overflow.clone())?;
        params = params.checked_add(np).ok_or_else(|| overflow.clone())?;
        let nk = to_u64(layer.output_len)
            .checked_mul(to_u64(layer.output_channels))
            .ok_or(overflow)?;
        profile.kinds.push(layer.kind);
        profile.layer_flops.push(l);
        profile.layer_params.push(np);
        profile.cumulative_flops.push(flops);
        profile.activations.push(nk);
        profile.cumulative_params.push(params);
    }
    profile.total_flops = flops;
    Ok(profile)
}

/// The 1-D CNN used for EMG gesture recognition in the reference evaluation:
/// an 800×2 input, four kernel-8 convolutions, a window-8 pooling, global
/// average pooling, dropout and a 10-way dense head.
///
/// Kernel sizes, strides and biases are inferred from the published output
/// sizes (800→793 forces kernel 8 at stride 1; 786→98 forces window 8 at
/// stride 8).
pub fn reference_emg_cnn() -> ArchitectureSpec {
    use Activation::{Relu, Softmax};
    let conv = |out_len| LayerDecl {
        output_len: Some(out_len),
        ..LayerDecl::conv1d(8, 200, true).with_activation(Relu)
    };
    let decls = [
        conv(793),
        conv(786),
        LayerDecl {
            output_len: Some(98),
            ..LayerDecl::pool1d(8, 8)
        },
        conv(91),
        conv(84),
        LayerDecl::new(LayerKind::GlobalAvgPool),
        LayerDecl::new(LayerKind::Dropout),
        LayerDecl::fully_connected(10, true).with_activation(Softmax),
    ];
    ArchitectureSpec::new(800, 2, &decls).expect("reference architecture is well-formed")
}

/// A random, well-formed network of `num_layers` layers built from the
/// supported kinds. Used for sensitivity studies and property tests.
pub fn synthetic_architecture<R: rand::Rng + ?Sized>(
    rng: &mut R,
    num_layers: usize,
) -> ArchitectureSpec {
    let input_len = rng.random_range(16..=1024);
    let input_channels = rng.random_range(1..=8);
    let mut len: usize = input_len;
    let mut decls = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let decl = match rng.random_range(0..10u8) {
            0..=3 if len >= 2 => {
                let kernel = rng.random_range(1..=len.min(9));
                LayerDecl::conv1d(kernel, rng.random_range(1..=256), rng.random_bool(0.7))
                    .with_activation(Activation::Relu)
            }
            4..=5 if len >= 2 => {
                let kernel = rng.random_range(2..=len.min(8));
                LayerDecl::pool1d(kernel, kernel)
            }
            6 => LayerDecl::new(LayerKind::GlobalAvgPool),
            7 => LayerDecl::new(LayerKind::Dropout),
            _ => LayerDecl::fully_connected(rng.random_range(1..=512), rng.random_bool(0.8)),
        };
        len = match decl.kind {
            LayerKind::Conv1d => len - decl.kernel.unwrap_or(1) + 1,
            LayerKind::Pool1d => {
                let k = decl.kernel.unwrap_or(1);
                (len - k) / k + 1
            }
            LayerKind::Dropout => len,
            LayerKind::GlobalAvgPool | LayerKind::FullyConnected => 1,
        };
        decls.push(decl);
    }
    ArchitectureSpec::new(input_len, input_channels, &decls)
        .expect("generated layers chain by construction")
}
