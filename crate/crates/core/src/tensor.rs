//! Image frames, feature tensors, and the observation preprocessing pipeline.
//!
//! All types here are immutable after construction and every operation is a
//! pure function, so values can be shared freely across threads.

use rand::Rng;
use thiserror::Error;

/// Errors from frame and tensor operations.
#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("crop side {requested} exceeds input dimensions {width}x{height}")]
    CropTooLarge {
        requested: usize,
        width: usize,
        height: usize,
    },
    #[error("frames must share dimensions and channel count")]
    ShapeMismatch,
    #[error("expected {expected} channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("frame is already RGBA")]
    AlreadyRgba,
    #[error("unsupported channel count {0} (supported: 3, 4)")]
    BadChannelCount(usize),
    #[error("data length {found} does not match dimensions (expected {expected})")]
    DataLength { expected: usize, found: usize },
    #[error("values must be finite")]
    NonFinite,
    #[error("quantization scale must be positive, got {0}")]
    BadScale(f32),
}

/// An 8-bit RGB or RGBA image, row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Frame {
    /// Builds a frame, validating channel count (3 or 4) and data length.
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self, TensorError> {
        if channels != 3 && channels != 4 {
            return Err(TensorError::BadChannelCount(channels));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// An all-zero frame.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self, TensorError> {
        Self::new(width, height, channels, vec![0; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Sample at (row, col, channel). Panics out of range.
    pub fn at(&self, row: usize, col: usize, channel: usize) -> u8 {
        assert!(row < self.height && col < self.width && channel < self.channels);
        self.data[(row * self.width + col) * self.channels + channel]
    }

    fn crop(&self, top: usize, left: usize, out_side: usize) -> Frame {
        let mut data = Vec::with_capacity(out_side * out_side * self.channels);
        for row in 0..out_side {
            let src = ((top + row) * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[src..src + out_side * self.channels]);
        }
        Frame {
            width: out_side,
            height: out_side,
            channels: self.channels,
            data,
        }
    }

    /// Centered `out_side`×`out_side` window, no interpolation.
    ///
    /// Offsets are `floor((dim - out_side) / 2)` per axis.
    pub fn center_crop(&self, out_side: usize) -> Result<Frame, TensorError> {
        if out_side > self.width || out_side > self.height {
            return Err(TensorError::CropTooLarge {
                requested: out_side,
                width: self.width,
                height: self.height,
            });
        }
        let top = (self.height - out_side) / 2;
        let left = (self.width - out_side) / 2;
        Ok(self.crop(top, left, out_side))
    }

    /// Random `out_side`×`out_side` window with offsets drawn uniformly from
    /// `[0, dim - out_side]` per axis (row offset first, then column).
    pub fn random_crop<R: Rng>(&self, out_side: usize, rng: &mut R) -> Result<Frame, TensorError> {
        if out_side > self.width || out_side > self.height {
            return Err(TensorError::CropTooLarge {
                requested: out_side,
                width: self.width,
                height: self.height,
            });
        }
        let top = rng.gen_range(0..=self.height - out_side);
        let left = rng.gen_range(0..=self.width - out_side);
        Ok(self.crop(top, left, out_side))
    }

    /// Appends an opaque alpha channel (255) to an RGB frame.
    ///
    /// A frame that is already RGBA is rejected rather than passed through,
    /// so payload accounting stays explicit at the upload boundary.
    pub fn to_rgba(&self) -> Result<Frame, TensorError> {
        if self.channels == 4 {
            return Err(TensorError::AlreadyRgba);
        }
        let mut data = Vec::with_capacity(self.width * self.height * 4);
        for px in self.data.chunks_exact(3) {
            data.extend_from_slice(px);
            data.push(255);
        }
        Ok(Frame {
            width: self.width,
            height: self.height,
            channels: 4,
            data,
        })
    }

    /// Drops the alpha channel of an RGBA frame, leaving RGB bytes untouched.
    pub fn strip_alpha(&self) -> Result<Frame, TensorError> {
        if self.channels != 4 {
            return Err(TensorError::ChannelMismatch {
                expected: 4,
                found: self.channels,
            });
        }
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for px in self.data.chunks_exact(4) {
            data.extend_from_slice(&px[..3]);
        }
        Ok(Frame {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        })
    }

    /// Converts to a channel-first float tensor normalized to [0, 1].
    pub fn to_tensor(&self) -> Tensor3 {
        let mut data = vec![0.0f32; self.channels * self.height * self.width];
        for c in 0..self.channels {
            for row in 0..self.height {
                for col in 0..self.width {
                    data[(c * self.height + row) * self.width + col] =
                        f32::from(self.at(row, col, c)) / 255.0;
                }
            }
        }
        Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// A channel-first float tensor (channels × height × width).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self, TensorError> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, channel: usize, row: usize, col: usize) -> f32 {
        assert!(channel < self.channels && row < self.height && col < self.width);
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub(crate) fn at_mut(&mut self, channel: usize, row: usize, col: usize) -> &mut f32 {
        &mut self.data[(channel * self.height + row) * self.width + col]
    }

    /// Affine per-tensor uint8 quantization.
    ///
    /// `scale = (max - min) / 255` (1 when the tensor is constant),
    /// `offset = min`, `byte = round((v - offset) / scale)` clamped to
    /// [0, 255], rounding half away from zero.
    pub fn quantize(&self) -> Result<FeatureMap, TensorError> {
        if self.height != self.width {
            return Err(TensorError::ShapeMismatch);
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        let min = self.data.iter().copied().fold(f32::INFINITY, f32::min);
        let max = self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let (scale, offset) = if self.data.is_empty() || max == min {
            (1.0f32, if self.data.is_empty() { 0.0 } else { min })
        } else {
            ((max - min) / 255.0, min)
        };
        let data = self
            .data
            .iter()
            .map(|&v| {
                let q = (f64::from(v) - f64::from(offset)) / f64::from(scale);
                q.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Ok(FeatureMap {
            channels: self.channels,
            side: self.width,
            data,
            quant_scale: scale,
            quant_offset: offset,
        })
    }
}

/// A quantized feature map: `channels` × `side` × `side` uint8 samples plus
/// the affine parameters mapping byte `b` back to `offset + scale * b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    side: usize,
    data: Vec<u8>,
    quant_scale: f32,
    quant_offset: f32,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        side: usize,
        data: Vec<u8>,
        quant_scale: f32,
        quant_offset: f32,
    ) -> Result<Self, TensorError> {
        let expected = channels * side * side;
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                found: data.len(),
            });
        }
        if !(quant_scale > 0.0) || !quant_scale.is_finite() || !quant_offset.is_finite() {
            return Err(TensorError::BadScale(quant_scale));
        }
        Ok(Self {
            channels,
            side,
            data,
            quant_scale,
            quant_offset,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn quant_scale(&self) -> f32 {
        self.quant_scale
    }

    pub fn quant_offset(&self) -> f32 {
        self.quant_offset
    }

    /// Reconstructs the float tensor; error vs the original is bounded by
    /// `quant_scale / 2` element-wise.
    pub fn dequantize(&self) -> Tensor3 {
        let data = self
            .data
            .iter()
            .map(|&b| self.quant_offset + self.quant_scale * f32::from(b))
            .collect();
        Tensor3 {
            channels: self.channels,
            height: self.side,
            width: self.side,
            data,
        }
    }
}

/// Stacks three same-sized RGB frames (oldest first) into a 9-channel
/// channel-first tensor normalized to [0, 1].
pub fn stack_frames(frames: &[Frame; 3]) -> Result<Tensor3, TensorError> {
    let (w, h) = (frames[0].width, frames[0].height);
    for f in frames.iter() {
        if f.channels != 3 {
            return Err(TensorError::ChannelMismatch {
                expected: 3,
                found: f.channels,
            });
        }
        if f.width != w || f.height != h {
            return Err(TensorError::ShapeMismatch);
        }
    }
    let mut data = Vec::with_capacity(9 * h * w);
    for f in frames.iter() {
        data.extend_from_slice(&f.to_tensor().data);
    }
    Ok(Tensor3 {
        channels: 9,
        height: h,
        width: w,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gradient_frame(side: usize, channels: usize) -> Frame {
        let mut data = Vec::new();
        for row in 0..side {
            for col in 0..side {
                for c in 0..channels {
                    data.push((row * side + col + c) as u8);
                }
            }
        }
        Frame::new(side, side, channels, data).unwrap()
    }

    #[test]
    fn center_crop_100_to_84_uses_offset_8() {
        let frame = Frame::zeros(100, 100, 3).unwrap();
        let out = frame.center_crop(84).unwrap();
        assert_eq!((out.width(), out.height()), (84, 84));

        // Verify offsets by marking (8, 8) in the source.
        let mut data = vec![0u8; 100 * 100 * 3];
        data[(8 * 100 + 8) * 3] = 7;
        let frame = Frame::new(100, 100, 3, data).unwrap();
        let out = frame.center_crop(84).unwrap();
        assert_eq!(out.at(0, 0, 0), 7);
    }

    #[test]
    fn center_crop_identity_when_sides_match() {
        let frame = gradient_frame(84, 3);
        assert_eq!(frame.center_crop(84).unwrap(), frame);
    }

    #[test]
    fn center_crop_matches_index_enumeration() {
        // 5x5 gradient, out_side 3: expect rows/cols 1..=3, checked by direct
        // indexing against the source frame.
        let frame = gradient_frame(5, 3);
        let out = frame.center_crop(3).unwrap();
        for row in 0..3 {
            for col in 0..3 {
                for c in 0..3 {
                    assert_eq!(out.at(row, col, c), frame.at(row + 1, col + 1, c));
                }
            }
        }
    }

    #[test]
    fn center_crop_too_large_errors() {
        let frame = Frame::zeros(10, 10, 3).unwrap();
        assert!(matches!(
            frame.center_crop(11),
            Err(TensorError::CropTooLarge { .. })
        ));
    }

    #[test]
    fn random_crop_offsets_within_range() {
        let mut data = vec![0u8; 100 * 100 * 3];
        // Tag each pixel with its row so the crop origin is recoverable.
        for row in 0..100 {
            for col in 0..100 {
                data[(row * 100 + col) * 3] = row as u8;
                data[(row * 100 + col) * 3 + 1] = col as u8;
            }
        }
        let frame = Frame::new(100, 100, 3, data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let out = frame.random_crop(84, &mut rng).unwrap();
            let top = out.at(0, 0, 0) as usize;
            let left = out.at(0, 0, 1) as usize;
            assert!(top <= 16 && left <= 16);
        }
    }

    #[test]
    fn random_crop_degenerate_range_is_identity() {
        let frame = gradient_frame(16, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(frame.random_crop(16, &mut rng).unwrap(), frame);
    }

    #[test]
    fn random_crop_replays_identically_for_same_seed() {
        let frame = gradient_frame(32, 3);
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        let out_a = frame.random_crop(20, &mut a).unwrap();
        let out_b = frame.random_crop(20, &mut b).unwrap();
        assert_eq!(out_a, out_b);
    }

    #[test]
    fn stack_frames_shape_and_order() {
        let mut frames = Vec::new();
        for i in 0..3u8 {
            let data = vec![i * 100; 84 * 84 * 3];
            frames.push(Frame::new(84, 84, 3, data).unwrap());
        }
        let frames: [Frame; 3] = frames.try_into().unwrap();
        let t = stack_frames(&frames).unwrap();
        assert_eq!((t.channels(), t.height(), t.width()), (9, 84, 84));
        // Oldest frame first: channels 0..3 come from frame 0.
        assert_eq!(t.at(0, 0, 0), 0.0);
        assert!((t.at(3, 0, 0) - 100.0 / 255.0).abs() < 1e-6);
        assert!((t.at(6, 0, 0) - 200.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn stack_frames_zero_and_saturated() {
        let zero = Frame::zeros(8, 8, 3).unwrap();
        let t = stack_frames(&[zero.clone(), zero.clone(), zero]).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));

        let ones = Frame::new(8, 8, 3, vec![255; 8 * 8 * 3]).unwrap();
        let t = stack_frames(&[ones.clone(), ones.clone(), ones]).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn stack_frames_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut frames = Vec::new();
        for _ in 0..3 {
            let data: Vec<u8> = (0..4 * 4 * 3).map(|_| rng.gen()).collect();
            frames.push(Frame::new(4, 4, 3, data).unwrap());
        }
        let frames: [Frame; 3] = frames.try_into().unwrap();
        let t = stack_frames(&frames).unwrap();
        for (fi, f) in frames.iter().enumerate() {
            for c in 0..3 {
                for row in 0..4 {
                    for col in 0..4 {
                        let expected = f32::from(f.at(row, col, c)) / 255.0;
                        assert_eq!(t.at(fi * 3 + c, row, col), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn stack_frames_rejects_mismatched_shapes() {
        let a = Frame::zeros(8, 8, 3).unwrap();
        let b = Frame::zeros(9, 8, 3).unwrap();
        assert_eq!(
            stack_frames(&[a.clone(), b, a.clone()]).unwrap_err(),
            TensorError::ShapeMismatch
        );
        let rgba = Frame::zeros(8, 8, 4).unwrap();
        assert!(matches!(
            stack_frames(&[a.clone(), rgba, a]).unwrap_err(),
            TensorError::ChannelMismatch { .. }
        ));
    }

    #[test]
    fn to_rgba_appends_opaque_alpha() {
        let frame = Frame::new(2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let rgba = frame.to_rgba().unwrap();
        assert_eq!(rgba.data(), &[1, 2, 3, 255, 4, 5, 6, 255]);
    }

    #[test]
    fn to_rgba_payload_ratio_is_4_to_3() {
        let frame = gradient_frame(17, 3);
        let rgba = frame.to_rgba().unwrap();
        assert_eq!(rgba.data().len() * 3, frame.data().len() * 4);
    }

    #[test]
    fn to_rgba_rejects_rgba_input() {
        let rgba = Frame::zeros(4, 4, 4).unwrap();
        assert_eq!(rgba.to_rgba().unwrap_err(), TensorError::AlreadyRgba);
    }

    #[test]
    fn rgba_roundtrip_is_byte_exact() {
        let frame = gradient_frame(13, 3);
        assert_eq!(frame.to_rgba().unwrap().strip_alpha().unwrap(), frame);
    }

    #[test]
    fn quantize_constant_tensor_is_exact() {
        let t = Tensor3::new(2, 3, 3, vec![0.5; 18]).unwrap();
        let f = t.quantize().unwrap();
        assert!(f.data().iter().all(|&b| b == 0));
        assert_eq!(f.quant_scale(), 1.0);
        assert_eq!(f.quant_offset(), 0.5);
        assert!(f.dequantize().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn quantize_endpoints_map_to_0_and_255() {
        let t = Tensor3::new(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let f = t.quantize().unwrap();
        assert_eq!(f.data(), &[0, 255, 255, 0]);
    }

    #[test]
    fn quantize_roundtrip_error_within_half_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let data: Vec<f32> = (0..4 * 6 * 6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let t = Tensor3::new(4, 6, 6, data).unwrap();
            let f = t.quantize().unwrap();
            let back = f.dequantize();
            let bound = f.quant_scale() / 2.0 * 1.0001 + 1e-9;
            for (a, b) in t.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= bound, "{a} vs {b}, bound {bound}");
            }
        }
    }

    #[test]
    fn quantize_rejects_non_finite() {
        let t = Tensor3::new(1, 2, 2, vec![0.0, f32::NAN, 1.0, 2.0]).unwrap();
        assert_eq!(t.quantize().unwrap_err(), TensorError::NonFinite);
    }
}
