//! Retrieval quality (AP/mAP under the good/ok/junk protocol) and image
//! quality (SSIM).

mod ap;
mod ssim;

pub use ap::{
    average_precision, format_percent, mean_average_precision, Judgments, RankedList, Ranked,
    RelevanceJudgments,
};
pub use ssim::{gaussian_window, ssim, ssim_gray, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
