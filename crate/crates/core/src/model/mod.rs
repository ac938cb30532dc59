//! The classifier `f = Wᵀ g_φ`: a rectifier MLP feature extractor, a bias-free
//! linear head, softmax cross-entropy and the momentum SGD step.

mod extractor;
mod head;
mod state;

pub use extractor::{extract_features, DenseLayer, ExtractorParams, ForwardCache};
pub use head::{ce_loss, CeLoss, HeadMatrix};
pub use state::{ModelGrads, ModelState, SgdConfig};
