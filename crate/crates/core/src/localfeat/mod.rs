//! SIFT keypoints and descriptors, keypoint removal by local smoothing,
//! keypoint injection, and color recovery after grayscale edits.

mod color;
mod forensics;
mod jsonl;
mod scalespace;
mod sift;

pub use color::{recover_color, ColorRecovery};
pub use forensics::{inject_keypoints, remove_keypoints_smoothing, Injection, INJECT_AMPLITUDE, INJECT_SIGMA};
pub use jsonl::{read_jsonl, write_jsonl, FeatureRecord};
pub use scalespace::gaussian_blur;
pub use sift::{describe, detect_and_describe, detect_sift, Described, Keypoint, SiftDescriptor, SiftParams};
