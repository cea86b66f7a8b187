//! Encoder descriptions, weight storage, and the floating-point reference
//! executor.
//!
//! The reference executor is the correctness oracle for the shader compiler:
//! it runs each layer as a direct (naive loop) convolution with zero "same"
//! padding, so every other execution path in the crate is checked against it.

use crate::tensor::Tensor3;
use rand::Rng;
use thiserror::Error;

/// Magic bytes of the weights file format.
pub const WEIGHTS_MAGIC: [u8; 4] = *b"MCW1";

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("kernel side {0} unsupported (supported: 1, 3, 5)")]
    BadKernel(usize),
    #[error("stride {0} unsupported (supported: 1, 2)")]
    BadStride(usize),
    #[error("layer {index}: in_channels {found} does not match previous out_channels {expected}")]
    ChannelChain {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {0}: channel counts must be >= 1")]
    ZeroChannels(usize),
    #[error("input side {side} is not divisible by 2^{stride_two} (stride-two layers)")]
    SideNotDivisible { side: usize, stride_two: u32 },
    #[error("input shape ({0}, {1}, {2}) does not match the encoder spec")]
    InputShape(usize, usize, usize),
    #[error("weight set does not match the encoder spec at layer {0}")]
    WeightShape(usize),
    #[error("weights contain non-finite values")]
    NonFiniteWeights,
    #[error("weights file magic mismatch")]
    BadMagic,
    #[error("weights file truncated")]
    Truncated,
    #[error("weights file field out of range: {0}")]
    BadField(&'static str),
}

/// Per-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self, EncoderError> {
        match code {
            0 => Ok(Activation::None),
            1 => Ok(Activation::Relu),
            _ => Err(EncoderError::BadField("activation")),
        }
    }
}

/// One convolution layer: odd square kernel, zero "same" padding, stride 1
/// or 2 (stride-2 layers perform the downsampling).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn validate(&self, index: usize) -> Result<(), EncoderError> {
        if !matches!(self.kernel, 1 | 3 | 5) {
            return Err(EncoderError::BadKernel(self.kernel));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(EncoderError::BadStride(self.stride));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(EncoderError::ZeroChannels(index));
        }
        Ok(())
    }

    /// Number of weight values in the kernel tensor
    /// (out_channels × in_channels × kernel²).
    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }
}

/// An ordered stack of convolution layers applied to a square input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub input_side: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl EncoderSpec {
    pub fn new(
        input_side: usize,
        input_channels: usize,
        layers: Vec<LayerSpec>,
    ) -> Result<Self, EncoderError> {
        let spec = Self {
            input_side,
            input_channels,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let mut prev = self.input_channels;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
            if layer.in_channels != prev {
                return Err(EncoderError::ChannelChain {
                    index: i,
                    expected: prev,
                    found: layer.in_channels,
                });
            }
            prev = layer.out_channels;
        }
        let n = self.stride_two_layers();
        if n > 0 && self.input_side % (1usize << n) != 0 {
            return Err(EncoderError::SideNotDivisible {
                side: self.input_side,
                stride_two: n,
            });
        }
        Ok(())
    }

    /// Number of stride-2 layers (the downsampling exponent).
    pub fn stride_two_layers(&self) -> u32 {
        self.layers.iter().filter(|l| l.stride == 2).count() as u32
    }

    /// Output channel count of the final layer.
    pub fn feature_channels(&self) -> usize {
        self.layers
            .last()
            .map_or(self.input_channels, |l| l.out_channels)
    }

    /// Final feature shape: `(feature_channels, input_side / 2^n)`.
    pub fn output_shape(&self) -> Result<(usize, usize), EncoderError> {
        self.validate()?;
        let n = self.stride_two_layers();
        Ok((self.feature_channels(), self.input_side >> n))
    }

    /// A single 1×1 pass-through layer over RGBA input; with identity
    /// weights the encoder is the identity map.
    pub fn identity(input_side: usize) -> Self {
        Self {
            input_side,
            input_channels: 4,
            layers: vec![LayerSpec {
                kernel: 1,
                in_channels: 4,
                out_channels: 4,
                stride: 1,
                activation: Activation::None,
            }],
        }
    }

    /// Default 4-feature encoder: three stride-2 layers over an RGBA frame.
    ///
    /// The layer composition is a reconstruction chosen to fit the default
    /// device profile in a single pass per channel group.
    pub fn default_k4(input_side: usize) -> Self {
        Self {
            input_side,
            input_channels: 4,
            layers: vec![
                LayerSpec {
                    kernel: 5,
                    in_channels: 4,
                    out_channels: 8,
                    stride: 2,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    kernel: 3,
                    in_channels: 8,
                    out_channels: 8,
                    stride: 2,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    kernel: 3,
                    in_channels: 8,
                    out_channels: 4,
                    stride: 2,
                    activation: Activation::Relu,
                },
            ],
        }
    }

    /// Default 16-feature encoder; the final layer spans four channel groups
    /// and therefore plans to four shader passes.
    pub fn default_k16(input_side: usize) -> Self {
        Self {
            input_side,
            input_channels: 4,
            layers: vec![
                LayerSpec {
                    kernel: 5,
                    in_channels: 4,
                    out_channels: 8,
                    stride: 2,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    kernel: 3,
                    in_channels: 8,
                    out_channels: 16,
                    stride: 2,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    kernel: 3,
                    in_channels: 16,
                    out_channels: 16,
                    stride: 2,
                    activation: Activation::Relu,
                },
            ],
        }
    }
}

/// Kernel tensor and bias for one layer, together with the layer shape it
/// was built for (the weights file embeds the shape, so a loaded set can be
/// checked against a spec).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub spec: LayerSpec,
    /// out_channels × in_channels × kernel × kernel, row-major.
    pub kernel: Vec<f32>,
    /// out_channels values.
    pub bias: Vec<f32>,
}

impl LayerParams {
    /// Kernel weight at (out_channel, in_channel, ky, kx).
    pub fn weight(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f32 {
        let k = self.spec.kernel;
        self.kernel[((oc * self.spec.in_channels + ic) * k + ky) * k + kx]
    }
}

/// All layer parameters of an encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub layers: Vec<LayerParams>,
}

impl WeightSet {
    /// Checks every layer's stored shape against `spec` and that all values
    /// are finite.
    pub fn validate_against(&self, spec: &EncoderSpec) -> Result<(), EncoderError> {
        if self.layers.len() != spec.layers.len() {
            return Err(EncoderError::WeightShape(self.layers.len().min(spec.layers.len())));
        }
        for (i, (params, layer)) in self.layers.iter().zip(&spec.layers).enumerate() {
            if params.spec != *layer
                || params.kernel.len() != layer.kernel_len()
                || params.bias.len() != layer.out_channels
            {
                return Err(EncoderError::WeightShape(i));
            }
            if params.kernel.iter().chain(&params.bias).any(|v| !v.is_finite()) {
                return Err(EncoderError::NonFiniteWeights);
            }
        }
        Ok(())
    }

    /// Identity weights for [`EncoderSpec::identity`]-shaped specs: 1×1
    /// kernels carrying the unit matrix, zero bias.
    pub fn identity(spec: &EncoderSpec) -> Result<Self, EncoderError> {
        spec.validate()?;
        let mut layers = Vec::new();
        for layer in &spec.layers {
            if layer.kernel != 1 || layer.in_channels != layer.out_channels {
                return Err(EncoderError::WeightShape(layers.len()));
            }
            let mut kernel = vec![0.0; layer.kernel_len()];
            for c in 0..layer.out_channels {
                kernel[c * layer.in_channels + c] = 1.0;
            }
            layers.push(LayerParams {
                spec: *layer,
                kernel,
                bias: vec![0.0; layer.out_channels],
            });
        }
        Ok(Self { layers })
    }

    /// Serializes to the `MCW1` byte format: magic, layer count, then per
    /// layer the shape fields followed by kernel and bias values, all
    /// little-endian.
    pub fn store(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&WEIGHTS_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for params in &self.layers {
            for field in [
                params.spec.kernel as u32,
                params.spec.in_channels as u32,
                params.spec.out_channels as u32,
                params.spec.stride as u32,
                params.spec.activation.code(),
            ] {
                out.extend_from_slice(&field.to_le_bytes());
            }
            for v in params.kernel.iter().chain(&params.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses the `MCW1` byte format.
    pub fn load(bytes: &[u8]) -> Result<Self, EncoderError> {
        let mut cursor = Cursor { bytes, pos: 0 };
        if cursor.take(4)? != WEIGHTS_MAGIC {
            return Err(EncoderError::BadMagic);
        }
        let count = cursor.u32()? as usize;
        let mut layers = Vec::new();
        for _ in 0..count {
            let kernel_side = cursor.u32()? as usize;
            let in_channels = cursor.u32()? as usize;
            let out_channels = cursor.u32()? as usize;
            let stride = cursor.u32()? as usize;
            let activation = Activation::from_code(cursor.u32()?)?;
            let spec = LayerSpec {
                kernel: kernel_side,
                in_channels,
                out_channels,
                stride,
                activation,
            };
            spec.validate(layers.len())?;
            let mut kernel = Vec::with_capacity(spec.kernel_len());
            for _ in 0..spec.kernel_len() {
                kernel.push(cursor.f32()?);
            }
            let mut bias = Vec::with_capacity(out_channels);
            for _ in 0..out_channels {
                bias.push(cursor.f32()?);
            }
            layers.push(LayerParams { spec, kernel, bias });
        }
        Ok(Self { layers })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], EncoderError> {
        if self.pos + len > self.bytes.len() {
            return Err(EncoderError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, EncoderError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, EncoderError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Fan-in-scaled uniform initialization: every kernel and bias value is
/// drawn from `[-b, b]` with `b = 1 / sqrt(in_channels * kernel^2)`.
pub fn init_weights<R: Rng>(spec: &EncoderSpec, rng: &mut R) -> Result<WeightSet, EncoderError> {
    spec.validate()?;
    let mut layers = Vec::new();
    for layer in &spec.layers {
        let bound = 1.0 / ((layer.in_channels * layer.kernel * layer.kernel) as f32).sqrt();
        let kernel = (0..layer.kernel_len())
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let bias = (0..layer.out_channels)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        layers.push(LayerParams {
            spec: *layer,
            kernel,
            bias,
        });
    }
    Ok(WeightSet { layers })
}

/// Runs the encoder as direct convolutions: zero "same" padding, per-layer
/// stride, ReLU where specified. Output shape equals
/// [`EncoderSpec::output_shape`].
pub fn encode_reference(
    spec: &EncoderSpec,
    weights: &WeightSet,
    input: &Tensor3,
) -> Result<Tensor3, EncoderError> {
    spec.validate()?;
    weights.validate_against(spec)?;
    if input.channels() != spec.input_channels
        || input.height() != spec.input_side
        || input.width() != spec.input_side
    {
        return Err(EncoderError::InputShape(
            input.channels(),
            input.height(),
            input.width(),
        ));
    }

    let mut current = input.clone();
    for params in &weights.layers {
        current = conv_layer(params, &current);
    }
    Ok(current)
}

/// One direct convolution with zero same-padding.
///
/// `out(oy, ox) = bias + sum over (ic, ky, kx) of w * in(oy*s - r + ky, ...)`
/// with `r = (k - 1) / 2`; out-of-range input samples contribute zero.
fn conv_layer(params: &LayerParams, input: &Tensor3) -> Tensor3 {
    let layer = &params.spec;
    let k = layer.kernel;
    let r = (k - 1) / 2;
    let s = layer.stride;
    let in_h = input.height();
    let in_w = input.width();
    let out_h = in_h.div_ceil(s);
    let out_w = in_w.div_ceil(s);

    let mut out = Tensor3::zeros(layer.out_channels, out_h, out_w);
    for oc in 0..layer.out_channels {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = params.bias[oc];
                for ic in 0..layer.in_channels {
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - r as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - r as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            acc += params.weight(oc, ic, ky, kx)
                                * input.at(ic, iy as usize, ix as usize);
                        }
                    }
                }
                if layer.activation == Activation::Relu {
                    acc = acc.max(0.0);
                }
                *out.at_mut(oc, oy, ox) = acc;
            }
        }
    }
    out
}
