use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bev::BevConfig;
use crate::error::{Error, Result};

/// Channel widths of the shared BEV encoder f_u.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnetWidths {
    pub enc1: usize,
    pub enc2: usize,
    pub bottleneck: usize,
    /// Output channels D_u.
    pub out: usize,
}

impl Default for UnetWidths {
    fn default() -> Self {
        UnetWidths {
            enc1: 8,
            enc2: 16,
            bottleneck: 32,
            out: 16,
        }
    }
}

/// Everything that fixes the model's architecture. Serialized into the model manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarsConfig {
    /// Frames per sample, k.
    pub frames: usize,
    /// Point descriptor width D_in (x, y, z, intensity).
    pub input_dim: usize,
    /// Embedded feature width D_e.
    pub embed_dim: usize,
    pub backbone_hidden: usize,
    /// Backbone output width D_p.
    pub point_dim: usize,
    /// Voxel edge for the backbone's aggregation round, meters.
    pub voxel: f64,
    pub unet: UnetWidths,
    /// Kernel sizes of the f_m branches, in concatenation order.
    pub kernels: Vec<usize>,
    pub branch_channels: usize,
    pub head_hidden: usize,
    pub bev: BevConfig,
    pub num_classes: usize,
    pub use_cffe: bool,
    pub use_bev: bool,
    pub use_mafl: bool,
}

impl MarsConfig {
    /// Default widths for a `num_classes` taxonomy on the given grid.
    pub fn new(num_classes: usize, frames: usize, bev: BevConfig) -> Self {
        MarsConfig {
            frames,
            input_dim: 4,
            embed_dim: 18,
            backbone_hidden: 32,
            point_dim: 32,
            voxel: 0.5,
            unet: UnetWidths::default(),
            kernels: vec![1, 3, 5],
            branch_channels: 8,
            head_hidden: 64,
            bev,
            num_classes,
            use_cffe: true,
            use_bev: true,
            use_mafl: true,
        }
    }

    pub fn with_flags(mut self, use_cffe: bool, use_bev: bool, use_mafl: bool) -> Self {
        self.use_cffe = use_cffe;
        self.use_bev = use_bev;
        self.use_mafl = use_mafl;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.bev.validate()?;
        if self.frames == 0 {
            return Err(Error::Config("need at least one frame".into()));
        }
        if self.use_mafl && !self.use_bev {
            return Err(Error::Config("MAFL requires the BEV branch".into()));
        }
        if self.use_bev && (self.bev.height % 4 != 0 || self.bev.width % 4 != 0) {
            return Err(Error::Config(format!(
                "BEV size {}x{} must be divisible by 4 for the two pooling levels",
                self.bev.height, self.bev.width
            )));
        }
        if self.kernels.is_empty() || self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!("kernel sizes must be odd, got {:?}", self.kernels)));
        }
        let widths = [
            self.input_dim,
            self.embed_dim,
            self.backbone_hidden,
            self.point_dim,
            self.branch_channels,
            self.head_hidden,
            self.unet.enc1,
            self.unet.enc2,
            self.unet.bottleneck,
            self.unet.out,
        ];
        if widths.contains(&0) || self.num_classes < 2 {
            return Err(Error::Config("layer widths must be positive and classes >= 2".into()));
        }
        if !(self.voxel > 0.0) {
            return Err(Error::Config(format!("voxel size must be > 0, got {}", self.voxel)));
        }
        Ok(())
    }

    /// True when the BEV branch actually runs (MAFL is skipped for single-frame input).
    pub fn bev_active(&self) -> bool {
        self.use_bev && !(self.use_mafl && self.frames < 2)
    }

    /// Motion feature width D_z appended to each point, or 0 without the BEV branch.
    pub fn motion_dim(&self) -> usize {
        if self.use_bev {
            self.kernels.len() * self.branch_channels
        } else {
            0
        }
    }

    /// Input channels of f_m: stacked differences with MAFL, a single encoded map without.
    pub fn fm_in_channels(&self) -> usize {
        if self.use_mafl {
            self.unet.out * (self.frames - 1)
        } else {
            self.unet.out
        }
    }

    pub fn fused_dim(&self) -> usize {
        self.point_dim + self.motion_dim()
    }

    /// Divides x, y, z before they enter the point embedder: half the grid's larger side.
    pub fn descriptor_scale(&self) -> f64 {
        self.bev.height.max(self.bev.width) as f64 * self.bev.cell / 2.0
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_widths() {
        let bev = BevConfig::centered(160, 160, 0.5).unwrap();
        let c = MarsConfig::new(7, 3, bev);
        c.validate().unwrap();
        assert_eq!((c.motion_dim(), c.fm_in_channels(), c.fused_dim()), (24, 32, 56));
        let vanilla = c.clone().with_flags(true, true, false);
        assert_eq!(vanilla.fm_in_channels(), 16);
        assert!(c.clone().with_flags(true, false, true).validate().is_err());
        assert_eq!(c.clone().with_flags(false, false, false).fused_dim(), 32);
        assert_ne!(c.hash(), vanilla.hash());
    }

    #[test]
    fn single_frame_bypasses_mafl() {
        let bev = BevConfig::centered(8, 8, 1.0).unwrap();
        let c = MarsConfig::new(7, 1, bev);
        assert!(!c.bev_active());
        assert_eq!(c.fused_dim(), 56);
    }
}
