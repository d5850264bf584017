//! Saliency engine: local-entropy filter, MedGrad E-CLIP, Grad E-CLIP and
//! Grad-CAM baselines, overlay rendering.
//!
//! MedGrad E-CLIP scores patch `i` as `ReLU(w_e(i) · Σ_c w_c v_ic)`, where
//! `w_c` is the gradient of the image-caption cosine with respect to the
//! image embedding, `v_i` are the final block's value vectors mapped into the
//! embedding space, and `w_e` is the patch-pooled local entropy. The Grad
//! E-CLIP baseline swaps `w_e` for a ReLU-cosine between the class query and
//! each patch key; this is a reconstruction of its relaxed attention weight.

pub mod entropy;
pub mod render;
pub mod saliency;

pub use entropy::{
    entropy_weights, local_entropy_fast, local_entropy_ref, pool_entropy, to_gray, EntropyMap, EntropyNormalization,
    Gray,
};
pub use render::{colormap, overlay, render_compare_grid, render_panel, upsample, upsample_map};
pub use saliency::{
    explain, grad_cam, grad_eclip, medgrad_eclip, medgrad_eclip_with_weights, patch_entropy_weights,
    similarity_gradient, unweighted_channel_map, ExplainConfig, Method, Normalization, SaliencyMap, Sidecar,
};
