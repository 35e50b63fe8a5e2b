//! The motion-aware segmentation model: temporal point embedding, a small point backbone,
//! BEV motion-difference features, fusion, dual heads and gated inference.

mod config;
mod manifest;
mod model;
mod report;
mod sample;

pub use config::{MarsConfig, UnetWidths};
pub use manifest::{load_manifest, load_model, manifest_path, save_model, ModelManifest, MODEL_FORMAT_VERSION};
pub use model::{
    cffe_embed, fuse, gated_inference, mafl, motion_features, param_specs, predict, toy_backbone_forward,
    unet_forward, BackboneLayers, ForwardOutput, HeadLayers, Layer, MaflOutput, MarsModel, ParamSpec, UnetLayers,
};
pub use report::ParamReport;
pub use sample::{bev_tensor, PreparedSample, TargetLabels};
