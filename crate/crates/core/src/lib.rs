//! Semantic feature decomposition for low-rate image transmission.
//!
//! An image is split into three human-interpretable features: a text
//! caption, a heavily downsampled color mosaic, and a downsampled local
//! binary pattern (LBP) texture map. The features are serialized with exact
//! bit accounting ([`codec`]), pushed through a simulated AWGN channel either
//! digitally (QAM + LDPC + CRC) or as analog symbols ([`phy`]), and composed
//! back into an image at the receiver ([`restore`]).
//!
//! [`harness`] wires the stages into reproducible experiments.

pub mod codec;
pub mod error;
pub mod features;
pub mod harness;
pub mod imaging;
pub mod metrics;
pub mod phy;
pub mod restore;
pub mod seed;

pub use codec::{Bitstream, QuantizationSpec};
pub use error::{Error, Result};
pub use features::{
    ColorMosaic, EditCommand, ExtractionProfile, LbpConfig, SemanticPayload, TextureMap,
};
pub use imaging::{BlockGrid, GrayImage, RgbImage};
pub use metrics::TransmissionReport;
pub use phy::{ChannelConfig, FecScheme, ModulationScheme, SymbolFrame};
pub use restore::{RestorationRequest, RestorerBackend};
