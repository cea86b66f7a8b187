//! GLSL fragment-shader source emission.
//!
//! One source file per pass. Weights are baked into the source as literal
//! constant arrays, so a pass is fully determined by (pass, spec, weights,
//! packing) and emission is byte-stable across runs. Out-of-range samples
//! contribute zero, matching the reference executor's zero padding; the
//! source therefore guards every fetch instead of relying on any sampler
//! wrap mode.

use super::{Binding, PassRole, ShaderError, ShaderPass, TexturePacking};
use crate::encoder::{Activation, EncoderSpec, WeightSet};
use std::fmt::Write;

/// GLSL float literal with round-trip precision.
fn lit(v: f32) -> String {
    let s = format!("{v:?}");
    // `{:?}` keeps a decimal point or exponent for every finite f32, both of
    // which are valid GLSL float literals.
    debug_assert!(s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN"));
    s
}

/// Emits the fragment shader implementing `pass`.
///
/// The shader samples the kernel neighborhood of each bound input texture at
/// the pass's stride (one `texelFetch` per sample, guarded against the
/// texture bounds), accumulates per-output-channel dot products against the
/// baked weight constants, and writes a four-component output with unused
/// components left at zero. Partial-sum passes initialize the accumulator
/// from the `u_partial` sampler with exactly one fetch; bias and ReLU are
/// applied only by complete and combine passes.
pub fn emit_shader(
    pass: &ShaderPass,
    spec: &EncoderSpec,
    weights: &WeightSet,
    packing: &TexturePacking,
) -> Result<String, ShaderError> {
    let layer = spec
        .layers
        .get(pass.layer)
        .ok_or(ShaderError::PlanMismatch(pass.layer))?;
    let params = weights
        .layers
        .get(pass.layer)
        .ok_or(ShaderError::WeightsMissing(pass.layer))?;
    if params.spec != *layer || packing.tensor_channels() != layer.in_channels {
        return Err(ShaderError::PlanMismatch(pass.layer));
    }

    let k = layer.kernel;
    let r = (k - 1) / 2;
    let stride = layer.stride;
    let textures: Vec<usize> = pass.input_textures().collect();
    let final_pass = matches!(pass.role, PassRole::Complete | PassRole::Combine);

    let mut src = String::new();
    let w = &mut src;

    writeln!(w, "#version 300 es").unwrap();
    writeln!(
        w,
        "// layer {} pass {}: group {}..{}, role {}, kernel {}, stride {}",
        pass.layer,
        pass.index_in_layer,
        pass.group_start,
        pass.group_start + pass.group_len,
        pass.role.label(),
        k,
        stride,
    )
    .unwrap();
    writeln!(w, "precision highp float;").unwrap();
    writeln!(w, "precision highp int;").unwrap();
    writeln!(w).unwrap();
    for b in &pass.bindings {
        match b {
            Binding::Input(t) => writeln!(w, "uniform highp sampler2D u_in{t};").unwrap(),
            Binding::Partial => writeln!(w, "uniform highp sampler2D u_partial;").unwrap(),
        }
    }
    writeln!(w).unwrap();
    writeln!(w, "out vec4 o_color;").unwrap();
    writeln!(w).unwrap();

    // One constant array per output slot: k^2 * chunk_len vec4 entries,
    // sample-indexed as (ky * k + kx) * chunk_len + chunk_position.
    let entries = k * k * textures.len();
    for slot in 0..pass.group_len {
        let oc = pass.group_start + slot;
        write!(w, "const vec4 W{slot}[{entries}] = vec4[](").unwrap();
        let mut first = true;
        for ky in 0..k {
            for kx in 0..k {
                for &t in &textures {
                    if !first {
                        write!(w, ", ").unwrap();
                    }
                    first = false;
                    let mut comps = [0.0f32; 4];
                    for (ci, comp) in comps.iter_mut().enumerate() {
                        if let Some(ic) = packing.channel(t, ci) {
                            *comp = params.weight(oc, ic, ky, kx);
                        }
                    }
                    write!(
                        w,
                        "vec4({}, {}, {}, {})",
                        lit(comps[0]),
                        lit(comps[1]),
                        lit(comps[2]),
                        lit(comps[3])
                    )
                    .unwrap();
                }
            }
        }
        writeln!(w, ");").unwrap();
    }
    if final_pass {
        let mut bias = [0.0f32; 4];
        for (slot, b) in bias.iter_mut().enumerate().take(pass.group_len) {
            *b = params.bias[pass.group_start + slot];
        }
        writeln!(
            w,
            "const vec4 BIAS = vec4({}, {}, {}, {});",
            lit(bias[0]),
            lit(bias[1]),
            lit(bias[2]),
            lit(bias[3])
        )
        .unwrap();
    }
    writeln!(w).unwrap();

    writeln!(w, "void main() {{").unwrap();
    writeln!(w, "    ivec2 op = ivec2(gl_FragCoord.xy);").unwrap();
    if r == 0 && stride == 1 {
        writeln!(w, "    ivec2 base = op;").unwrap();
    } else {
        writeln!(w, "    ivec2 base = op * {stride} - ivec2({r});").unwrap();
    }
    let size_ref = textures.first().copied().unwrap_or(0);
    writeln!(w, "    ivec2 in_sz = textureSize(u_in{size_ref}, 0);").unwrap();
    if pass.reads_partial() {
        writeln!(w, "    vec4 acc = texelFetch(u_partial, op, 0);").unwrap();
    } else {
        writeln!(w, "    vec4 acc = vec4(0.0);").unwrap();
    }

    let mut sample = 0usize;
    for ky in 0..k {
        for kx in 0..k {
            writeln!(w, "    {{").unwrap();
            writeln!(w, "        ivec2 p = base + ivec2({kx}, {ky});").unwrap();
            writeln!(
                w,
                "        bool inb = p.x >= 0 && p.y >= 0 && p.x < in_sz.x && p.y < in_sz.y;"
            )
            .unwrap();
            for &t in &textures {
                writeln!(
                    w,
                    "        vec4 s{t} = inb ? texelFetch(u_in{t}, p, 0) : vec4(0.0);"
                )
                .unwrap();
                for slot in 0..pass.group_len {
                    let comp = ["x", "y", "z", "w"][slot];
                    writeln!(w, "        acc.{comp} += dot(W{slot}[{sample}], s{t});").unwrap();
                }
                sample += 1;
            }
            writeln!(w, "    }}").unwrap();
        }
    }

    if final_pass {
        writeln!(w, "    acc += BIAS;").unwrap();
        if layer.activation == Activation::Relu {
            writeln!(w, "    acc = max(acc, vec4(0.0));").unwrap();
        }
    }
    if pass.group_len < 4 {
        // Zero the components this pass does not own.
        let mask = ["0.0", "0.0", "0.0", "0.0"]
            .iter()
            .enumerate()
            .map(|(i, z)| {
                if i < pass.group_len {
                    format!("acc.{}", ["x", "y", "z", "w"][i])
                } else {
                    (*z).to_owned()
                }
            })
            .collect::<Vec<_>>()
            .join(", ");
        writeln!(w, "    o_color = vec4({mask});").unwrap();
    } else {
        writeln!(w, "    o_color = acc;").unwrap();
    }
    writeln!(w, "}}").unwrap();

    Ok(src)
}
