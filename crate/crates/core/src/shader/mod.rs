//! Decomposition of an encoder into fragment-shader passes under embedded-GL
//! constraints, GLSL emission, and a software pass simulator.
//!
//! A fragment shader writes at most four channels (RGBA), may bind a limited
//! number of input textures, and may perform a limited number of texture
//! fetches per fragment. The planner turns each convolution layer into one
//! pass per four-channel output group when the whole layer fits those
//! budgets, and otherwise splits the layer's input textures across a chain
//! of partial-sum passes followed by a combine pass.

mod emit;
mod sim;

pub use emit::emit_shader;
pub use sim::{execute_plan, Precision};

use crate::encoder::EncoderSpec;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ShaderError {
    #[error("layer {layer}: kernel^2 = {samples} samples exceed the budget of {budget} even with a single input texture")]
    Unplannable {
        layer: usize,
        samples: usize,
        budget: usize,
    },
    #[error("device profile must allow at least one texture and one sample")]
    BadProfile,
    #[error("profile must allow two bindings to accumulate partial sums (layer {0})")]
    NoPartialBinding(usize),
    #[error("plan does not match the encoder spec (layer {0})")]
    PlanMismatch(usize),
    #[error("weights missing for layer {0}")]
    WeightsMissing(usize),
    #[error(transparent)]
    Encoder(#[from] crate::encoder::EncoderError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

/// Texture and sampling limits of a target device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceProfile {
    pub name: String,
    pub max_textures: usize,
    pub sample_budget: usize,
}

impl Default for DeviceProfile {
    /// The defaults observed on low-cost embedded GPUs: eight bound textures
    /// and 64 texture samples per fragment.
    fn default() -> Self {
        Self {
            name: "embedded-default".to_owned(),
            max_textures: 8,
            sample_budget: 64,
        }
    }
}

impl DeviceProfile {
    pub fn new(name: &str, max_textures: usize, sample_budget: usize) -> Self {
        Self {
            name: name.to_owned(),
            max_textures,
            sample_budget,
        }
    }
}

/// Maps tensor channels onto four-component textures in lexicographic
/// (texture, component) order; trailing components are zero-filled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TexturePacking {
    tensor_channels: usize,
    textures: usize,
}

impl TexturePacking {
    pub fn new(tensor_channels: usize) -> Self {
        Self {
            tensor_channels,
            textures: tensor_channels.div_ceil(4),
        }
    }

    pub fn tensor_channels(&self) -> usize {
        self.tensor_channels
    }

    pub fn textures(&self) -> usize {
        self.textures
    }

    /// (texture index, component index) of a tensor channel.
    pub fn slot(&self, channel: usize) -> (usize, usize) {
        assert!(channel < self.tensor_channels);
        (channel / 4, channel % 4)
    }

    /// Tensor channel stored at (texture, component), if any.
    pub fn channel(&self, texture: usize, component: usize) -> Option<usize> {
        let c = texture * 4 + component;
        (component < 4 && c < self.tensor_channels).then_some(c)
    }
}

/// Accumulation role of a pass within its output channel group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassRole {
    /// The only pass of the group: full convolution, bias and activation.
    Complete,
    /// Accumulates a subset of input textures into a partial-sum texture;
    /// no bias, no activation.
    Partial,
    /// Final pass of a split group: consumes the partial sum, adds its own
    /// input subset, then applies bias and activation.
    Combine,
}

impl PassRole {
    pub fn label(self) -> &'static str {
        match self {
            PassRole::Complete => "complete",
            PassRole::Partial => "partial",
            PassRole::Combine => "combine",
        }
    }
}

/// One sampler binding of a pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    /// Input texture of the layer, by texture index of the packed input.
    Input(usize),
    /// The running partial-sum texture of this pass's output group.
    Partial,
}

/// One fragment-shader pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShaderPass {
    pub layer: usize,
    /// Pass number within the layer; names the emitted file
    /// `layer{layer}_pass{index_in_layer}.frag`.
    pub index_in_layer: usize,
    /// First output channel written by this pass.
    pub group_start: usize,
    /// Number of output channels written (1..=4).
    pub group_len: usize,
    pub bindings: Vec<Binding>,
    pub samples_per_fragment: usize,
    pub role: PassRole,
}

impl ShaderPass {
    /// Input texture indices bound by this pass, in binding order.
    pub fn input_textures(&self) -> impl Iterator<Item = usize> + '_ {
        self.bindings.iter().filter_map(|b| match b {
            Binding::Input(t) => Some(*t),
            Binding::Partial => None,
        })
    }

    pub fn reads_partial(&self) -> bool {
        self.bindings.contains(&Binding::Partial)
    }
}

/// The full pass decomposition of an encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShaderPlan {
    pub passes: Vec<ShaderPass>,
    /// Input textures per layer (`ceil(in_channels / 4)`).
    pub layer_input_textures: Vec<usize>,
    /// Maximum simultaneous sampler bindings over all passes.
    pub peak_textures: usize,
}

impl ShaderPlan {
    pub fn pass_count(&self) -> usize {
        self.passes.len()
    }

    /// Passes of one layer, in execution order.
    pub fn layer_passes(&self, layer: usize) -> impl Iterator<Item = &ShaderPass> {
        self.passes.iter().filter(move |p| p.layer == layer)
    }

    /// Structural consistency against a spec: one complete pass or a
    /// partial chain ending in a combine pass per output group, covering
    /// every output channel exactly once.
    pub fn validate_for(&self, spec: &EncoderSpec) -> Result<(), ShaderError> {
        if self.layer_input_textures.len() != spec.layers.len() {
            return Err(ShaderError::PlanMismatch(self.layer_input_textures.len()));
        }
        for (li, layer) in spec.layers.iter().enumerate() {
            if self.layer_input_textures[li] != layer.in_channels.div_ceil(4) {
                return Err(ShaderError::PlanMismatch(li));
            }
            let groups = layer.out_channels.div_ceil(4);
            for g in 0..groups {
                let start = g * 4;
                let len = (layer.out_channels - start).min(4);
                let chain: Vec<&ShaderPass> = self
                    .layer_passes(li)
                    .filter(|p| p.group_start == start)
                    .collect();
                let ok = match chain.as_slice() {
                    [only] => only.role == PassRole::Complete && !only.reads_partial(),
                    [first, mid @ .., last] => {
                        first.role == PassRole::Partial
                            && !first.reads_partial()
                            && mid.iter().all(|p| p.role == PassRole::Partial && p.reads_partial())
                            && last.role == PassRole::Combine
                            && last.reads_partial()
                    }
                    [] => false,
                };
                if !ok || chain.iter().any(|p| p.group_len != len) {
                    return Err(ShaderError::PlanMismatch(li));
                }
            }
            // No pass may write channels outside a declared group.
            for p in self.layer_passes(li) {
                if p.group_start % 4 != 0 || p.group_start + p.group_len > layer.out_channels {
                    return Err(ShaderError::PlanMismatch(li));
                }
            }
        }
        Ok(())
    }

    /// Plan manifest: one line per pass.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for p in &self.passes {
            let bindings: Vec<String> = p
                .bindings
                .iter()
                .map(|b| match b {
                    Binding::Input(t) => format!("in{t}"),
                    Binding::Partial => "partial".to_owned(),
                })
                .collect();
            out.push_str(&format!(
                "layer={} pass={} group={}..{} role={} bindings={} samples={}\n",
                p.layer,
                p.index_in_layer,
                p.group_start,
                p.group_start + p.group_len,
                p.role.label(),
                bindings.join(","),
                p.samples_per_fragment,
            ));
        }
        out
    }
}

/// Summary counts for reporting and the CLI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanReport {
    pub pass_count: usize,
    pub peak_textures: usize,
    pub samples_per_pass: Vec<usize>,
}

pub fn plan_report(plan: &ShaderPlan) -> PlanReport {
    PlanReport {
        pass_count: plan.pass_count(),
        peak_textures: plan.peak_textures,
        samples_per_pass: plan.passes.iter().map(|p| p.samples_per_fragment).collect(),
    }
}

impl std::fmt::Display for PlanReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "passes: {}", self.pass_count)?;
        writeln!(f, "peak textures: {}", self.peak_textures)?;
        write!(f, "samples per pass:")?;
        for s in &self.samples_per_pass {
            write!(f, " {s}")?;
        }
        Ok(())
    }
}

/// Decomposes `spec` into passes that respect `profile`.
///
/// Per layer with `T_in = ceil(in_channels / 4)` input textures and kernel
/// side `k`: a full pass needs `k^2 * T_in` samples. When that fits the
/// budget (and `T_in` fits the binding limit) each output group gets one
/// complete pass. Otherwise the input textures are split into chunks of at
/// most `min(max_textures - 1, sample_budget / k^2)` (one binding reserved
/// for the running partial sum), chained as partial passes and closed by a
/// combine pass that applies bias and activation.
pub fn plan_passes(spec: &EncoderSpec, profile: &DeviceProfile) -> Result<ShaderPlan, ShaderError> {
    spec.validate()?;
    if profile.max_textures == 0 || profile.sample_budget == 0 {
        return Err(ShaderError::BadProfile);
    }

    let mut passes = Vec::new();
    let mut layer_input_textures = Vec::new();

    for (li, layer) in spec.layers.iter().enumerate() {
        let t_in = layer.in_channels.div_ceil(4);
        layer_input_textures.push(t_in);
        let k2 = layer.kernel * layer.kernel;
        let groups = layer.out_channels.div_ceil(4);
        let mut index_in_layer = 0;

        let fits_single = k2 * t_in <= profile.sample_budget && t_in <= profile.max_textures;
        if fits_single {
            for g in 0..groups {
                let group_start = g * 4;
                passes.push(ShaderPass {
                    layer: li,
                    index_in_layer,
                    group_start,
                    group_len: (layer.out_channels - group_start).min(4),
                    bindings: (0..t_in).map(Binding::Input).collect(),
                    samples_per_fragment: k2 * t_in,
                    role: PassRole::Complete,
                });
                index_in_layer += 1;
            }
            continue;
        }

        // Split path. One binding is reserved for the partial-sum texture;
        // non-first chunks also spend one sample on reading it.
        if profile.max_textures < 2 {
            return Err(ShaderError::NoPartialBinding(li));
        }
        let chunk_first = (profile.max_textures - 1).min(profile.sample_budget / k2);
        let chunk_rest = (profile.max_textures - 1).min((profile.sample_budget - 1) / k2);
        if chunk_first == 0 || chunk_rest == 0 {
            return Err(ShaderError::Unplannable {
                layer: li,
                samples: k2,
                budget: profile.sample_budget,
            });
        }

        for g in 0..groups {
            let group_start = g * 4;
            let group_len = (layer.out_channels - group_start).min(4);
            let mut next_texture = 0;
            let mut first = true;
            while next_texture < t_in {
                let cap = if first { chunk_first } else { chunk_rest };
                let len = cap.min(t_in - next_texture);
                let last = next_texture + len == t_in;
                let mut bindings: Vec<Binding> =
                    (next_texture..next_texture + len).map(Binding::Input).collect();
                let mut samples = k2 * len;
                if !first {
                    bindings.push(Binding::Partial);
                    samples += 1;
                }
                let role = match (first, last) {
                    (true, true) => PassRole::Complete,
                    (_, false) => PassRole::Partial,
                    (false, true) => PassRole::Combine,
                };
                debug_assert!(samples <= profile.sample_budget);
                debug_assert!(bindings.len() <= profile.max_textures);
                passes.push(ShaderPass {
                    layer: li,
                    index_in_layer,
                    group_start,
                    group_len,
                    bindings,
                    samples_per_fragment: samples,
                    role,
                });
                index_in_layer += 1;
                next_texture += len;
                first = false;
            }
        }
    }

    let peak_textures = passes.iter().map(|p| p.bindings.len()).max().unwrap_or(0);
    Ok(ShaderPlan {
        passes,
        layer_input_textures,
        peak_textures,
    })
}
