//! Shared inputs for the pipeline benchmarks.

use fcap_core::phantom::{generate, preset};
use fcap_core::{GroundTruth, PolarFrame, Pullback};

/// A lesion frame of the speckled `tcfa_short` phantom with its truth.
pub fn lesion_frame() -> (Pullback, PolarFrame, GroundTruth) {
    let mut spec = preset("tcfa_short").expect("tcfa_short preset");
    spec.n_frames = 12;
    spec.lesions[0].frames = [4, 12];
    spec.speckle = 0.2;
    let (pb, truth) = generate(&spec).expect("phantom renders");
    let frame = pb.frames[8].clone();
    (pb, frame, truth)
}
