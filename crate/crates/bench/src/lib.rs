//! Shared fixtures for the benchmarks.

use turbrestore_core::sim::resolution_chart;
use turbrestore_core::{generate_sequence, FlowField, FrameSequence, Image, SimParams};

/// A `size`×`size` chart distorted into `frames` wave frames with the
/// default amplitude and noise.
pub fn chart_sequence(size: usize, frames: usize) -> (Image, FrameSequence, Vec<FlowField>) {
    let truth = resolution_chart(size, size);
    let params = SimParams {
        frames,
        ..SimParams::default()
    };
    let (seq, flows) = generate_sequence(&truth, &params).expect("default parameters are valid");
    (truth, seq, flows)
}
