//! Split-inference toolkit.
//!
//! A policy is partitioned so that a small convolutional encoder runs on the
//! client device and a policy head runs on a server. This crate provides the
//! pieces needed to build, verify, and benchmark that split at desk scale:
//!
//! - [`tensor`]: frames, feature tensors, and the observation preprocessing
//!   pipeline (crop, stack, normalize, uint8 quantization).
//! - [`encoder`]: encoder descriptions, weight storage, and a floating-point
//!   reference executor.
//! - [`shader`]: decomposition of an encoder into fragment-shader passes under
//!   embedded-GL limits, GLSL source emission, and a software simulator that
//!   proves the pass plan equivalent to the reference executor.
//! - [`wire`]: the binary request/response protocol carrying raw frames or
//!   quantized feature maps.
//! - [`netsim`]: analytic break-even/latency models and an event-driven
//!   bandwidth-shaped link simulator.
//! - [`server`]: the policy-head service plus multi-client scalability
//!   measurement.
//! - [`config`]: the line-oriented `key=value` experiment configuration
//!   format shared by the benchmark tools.

pub mod config;
pub mod encoder;
pub mod netsim;
pub mod server;
pub mod shader;
pub mod tensor;
pub mod wire;
