//! Software execution of a shader plan.
//!
//! Textures are four-component float arrays. Each pass is evaluated per
//! output pixel with the same sampling offsets and the same accumulation
//! order as the emitted GLSL (kernel row, kernel column, bound texture,
//! then the four components of each dot product), so agreement between this
//! simulator and the reference executor carries over to the emitted source.

use super::{PassRole, ShaderError, ShaderPass, ShaderPlan, TexturePacking};
use crate::encoder::{Activation, EncoderSpec, LayerSpec, WeightSet};
use crate::tensor::Tensor3;

/// Storage precision of intermediate textures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// 32-bit float textures between layers.
    Float32,
    /// Every layer output is stored through the affine uint8 quantizer,
    /// modeling 8-bit normalized textures. Partial sums within a layer stay
    /// in float; quantizing them between passes would make the error grow
    /// with the number of splits.
    Quantized8,
}

struct Texture {
    side: usize,
    texels: Vec<[f32; 4]>,
}

impl Texture {
    fn zeros(side: usize) -> Self {
        Self {
            side,
            texels: vec![[0.0; 4]; side * side],
        }
    }

    fn fetch(&self, x: isize, y: isize) -> [f32; 4] {
        if x < 0 || y < 0 || x >= self.side as isize || y >= self.side as isize {
            return [0.0; 4];
        }
        self.texels[y as usize * self.side + x as usize]
    }
}

fn pack(tensor: &Tensor3, packing: &TexturePacking) -> Vec<Texture> {
    let side = tensor.width();
    let mut textures: Vec<Texture> = (0..packing.textures()).map(|_| Texture::zeros(side)).collect();
    for c in 0..tensor.channels() {
        let (t, comp) = packing.slot(c);
        for y in 0..side {
            for x in 0..side {
                textures[t].texels[y * side + x][comp] = tensor.at(c, y, x);
            }
        }
    }
    textures
}

fn unpack(textures: &[Texture], channels: usize, side: usize) -> Tensor3 {
    let packing = TexturePacking::new(channels);
    let mut data = vec![0.0f32; channels * side * side];
    for c in 0..channels {
        let (t, comp) = packing.slot(c);
        for y in 0..side {
            for x in 0..side {
                data[(c * side + y) * side + x] = textures[t].texels[y * side + x][comp];
            }
        }
    }
    Tensor3::new(channels, side, side, data).expect("texture unpack shape")
}

fn run_pass(
    pass: &ShaderPass,
    layer: &LayerSpec,
    params: &crate::encoder::LayerParams,
    packing: &TexturePacking,
    inputs: &[Texture],
    group: &mut Texture,
    out_side: usize,
) {
    let k = layer.kernel;
    let r = (k - 1) as isize / 2;
    let s = layer.stride as isize;
    let final_pass = matches!(pass.role, PassRole::Complete | PassRole::Combine);
    let chunk: Vec<usize> = pass.input_textures().collect();

    // Per-sample weight vectors in emission order:
    // index = (ky * k + kx) * chunk_len + chunk_position, one vec4 per
    // output slot.
    let mut weight_table = vec![[[0.0f32; 4]; 4]; k * k * chunk.len()];
    for ky in 0..k {
        for kx in 0..k {
            for (ti, &t) in chunk.iter().enumerate() {
                let entry = &mut weight_table[(ky * k + kx) * chunk.len() + ti];
                for slot in 0..pass.group_len {
                    let oc = pass.group_start + slot;
                    for comp in 0..4 {
                        if let Some(ic) = packing.channel(t, comp) {
                            entry[slot][comp] = params.weight(oc, ic, ky, kx);
                        }
                    }
                }
            }
        }
    }

    for oy in 0..out_side {
        for ox in 0..out_side {
            let mut acc = if pass.reads_partial() {
                group.texels[oy * out_side + ox]
            } else {
                [0.0f32; 4]
            };
            let base_x = ox as isize * s - r;
            let base_y = oy as isize * s - r;
            let mut sample = 0usize;
            for ky in 0..k {
                for kx in 0..k {
                    let px = base_x + kx as isize;
                    let py = base_y + ky as isize;
                    for &t in &chunk {
                        let sv = inputs[t].fetch(px, py);
                        let entry = &weight_table[sample];
                        for slot in 0..pass.group_len {
                            let w = &entry[slot];
                            acc[slot] +=
                                w[0] * sv[0] + w[1] * sv[1] + w[2] * sv[2] + w[3] * sv[3];
                        }
                        sample += 1;
                    }
                }
            }
            if final_pass {
                for slot in 0..pass.group_len {
                    acc[slot] += params.bias[pass.group_start + slot];
                    if layer.activation == Activation::Relu {
                        acc[slot] = acc[slot].max(0.0);
                    }
                }
            }
            for slot in pass.group_len..4 {
                acc[slot] = 0.0;
            }
            group.texels[oy * out_side + ox] = acc;
        }
    }
}

/// Executes the pass pipeline over packed textures.
///
/// In [`Precision::Float32`] mode the result matches the reference executor
/// up to float reassociation; in [`Precision::Quantized8`] mode every layer
/// boundary round-trips through the uint8 quantizer.
pub fn execute_plan(
    plan: &ShaderPlan,
    spec: &EncoderSpec,
    weights: &WeightSet,
    input: &Tensor3,
    precision: Precision,
) -> Result<Tensor3, ShaderError> {
    spec.validate()?;
    weights.validate_against(spec)?;
    plan.validate_for(spec)?;
    if input.channels() != spec.input_channels
        || input.height() != spec.input_side
        || input.width() != spec.input_side
    {
        return Err(ShaderError::Encoder(crate::encoder::EncoderError::InputShape(
            input.channels(),
            input.height(),
            input.width(),
        )));
    }

    let mut side = spec.input_side;
    let mut textures = pack(input, &TexturePacking::new(spec.input_channels));

    for (li, layer) in spec.layers.iter().enumerate() {
        let packing = TexturePacking::new(layer.in_channels);
        let out_side = side.div_ceil(layer.stride);
        let groups = layer.out_channels.div_ceil(4);
        let mut out_textures: Vec<Texture> =
            (0..groups).map(|_| Texture::zeros(out_side)).collect();

        for pass in plan.layer_passes(li) {
            let group = pass.group_start / 4;
            run_pass(
                pass,
                layer,
                &weights.layers[li],
                &packing,
                &textures,
                &mut out_textures[group],
                out_side,
            );
        }

        let mut tensor = unpack(&out_textures, layer.out_channels, out_side);
        if precision == Precision::Quantized8 {
            tensor = tensor.quantize()?.dequantize();
        }
        textures = pack(&tensor, &TexturePacking::new(layer.out_channels));
        side = out_side;
    }

    Ok(unpack(&textures, spec.feature_channels(), side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_reference, init_weights, EncoderSpec};
    use crate::shader::{plan_passes, DeviceProfile};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(spec: &EncoderSpec, rng: &mut ChaCha8Rng) -> Tensor3 {
        let len = spec.input_channels * spec.input_side * spec.input_side;
        let data = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor3::new(spec.input_channels, spec.input_side, spec.input_side, data).unwrap()
    }

    #[test]
    fn identity_plan_passes_input_through() {
        let spec = EncoderSpec::identity(8);
        let weights = crate::encoder::WeightSet::identity(&spec).unwrap();
        let plan = plan_passes(&spec, &DeviceProfile::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_input(&spec, &mut rng);
        let out = execute_plan(&plan, &spec, &weights, &input, Precision::Float32).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn float32_matches_reference_on_default_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for spec in [EncoderSpec::default_k4(16), EncoderSpec::default_k16(16)] {
            let weights = init_weights(&spec, &mut rng).unwrap();
            let input = random_input(&spec, &mut rng);
            let plan = plan_passes(&spec, &DeviceProfile::default()).unwrap();
            let simulated =
                execute_plan(&plan, &spec, &weights, &input, Precision::Float32).unwrap();
            let reference = encode_reference(&spec, &weights, &input).unwrap();
            let max_diff = simulated
                .data()
                .iter()
                .zip(reference.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(max_diff <= 1e-4, "max diff {max_diff}");
        }
    }

    #[test]
    fn quantized8_mode_stays_near_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = EncoderSpec::new(
            8,
            4,
            vec![
                crate::encoder::LayerSpec {
                    kernel: 3,
                    in_channels: 4,
                    out_channels: 8,
                    stride: 1,
                    activation: crate::encoder::Activation::Relu,
                },
                crate::encoder::LayerSpec {
                    kernel: 3,
                    in_channels: 8,
                    out_channels: 4,
                    stride: 2,
                    activation: crate::encoder::Activation::Relu,
                },
            ],
        )
        .unwrap();
        let weights = init_weights(&spec, &mut rng).unwrap();
        let input = random_input(&spec, &mut rng);
        let plan = plan_passes(&spec, &DeviceProfile::default()).unwrap();
        let quantized =
            execute_plan(&plan, &spec, &weights, &input, Precision::Quantized8).unwrap();
        let reference = encode_reference(&spec, &weights, &input).unwrap();
        let max_diff = quantized
            .data()
            .iter()
            .zip(reference.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        // Accumulated quantization error: loose sanity bound, reported for
        // inspection rather than asserted tight.
        println!("quantized8 max abs diff vs reference: {max_diff}");
        assert!(max_diff < 0.05, "max diff {max_diff}");
    }

    #[test]
    fn plan_from_other_spec_is_rejected() {
        let spec_a = EncoderSpec::default_k4(16);
        let spec_b = EncoderSpec::default_k16(16);
        let plan_b = plan_passes(&spec_b, &DeviceProfile::default()).unwrap();
        let weights = init_weights(&spec_a, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let input = Tensor3::zeros(4, 16, 16);
        assert!(matches!(
            execute_plan(&plan_b, &spec_a, &weights, &input, Precision::Float32),
            Err(ShaderError::PlanMismatch(_) | ShaderError::Encoder(_))
        ));
    }
}
