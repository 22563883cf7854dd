//! Model and training configuration, scale presets, config fingerprinting.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Which positional encodings participate, and where.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeFlags {
    /// Inject the sinusoidal absolute PE into node aggregation.
    pub absolute_pe: bool,
    /// Inject the learnable relative PE into node aggregation.
    pub relative_pe: bool,
    /// Ablation: let absolute PEs enter the edge coefficients and softmax
    /// the masked adjacency rows over their support.
    pub pe_in_edges: bool,
}

impl Default for PeFlags {
    fn default() -> Self {
        PeFlags {
            absolute_pe: true,
            relative_pe: true,
            pe_in_edges: false,
        }
    }
}

/// Architecture of the end-to-end network. Serialized into checkpoints;
/// loading refuses a checkpoint whose config disagrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of sketch patches M (graph has M+1 nodes with the global view).
    pub patch_count: usize,
    /// Node embedding / PE length.
    pub embed_dim: usize,
    /// Side of the square images the CNN encoder consumes. Patches are
    /// cropped at 256x256 and area-resized down to this when smaller.
    pub input_size: usize,
    /// Output channels of the successive conv stages (2x2 kernels, each
    /// followed by ReLU, 2x2 max-pool and batchnorm).
    pub conv_channels: Vec<usize>,
    /// Latent code length N_z.
    pub latent_dim: usize,
    /// Hidden width of the two-layer MLP behind the latent head.
    pub mlp_hidden: usize,
    /// Decoder GRU hidden size.
    pub decoder_hidden: usize,
    /// Mixture components K in the offset GMM.
    pub mixture_count: usize,
    /// Maximum decoded sequence length (in stroke-5 steps).
    pub max_seq_len: usize,
    /// Pen thickness in canvas pixels when rasterizing.
    pub pen_thickness: usize,
    pub flags: PeFlags,
}

impl ModelConfig {
    /// Full-scale configuration: 256x256 patches through seven conv stages.
    pub fn paper() -> Self {
        ModelConfig {
            patch_count: 20,
            embed_dim: 512,
            input_size: 256,
            conv_channels: vec![8, 32, 64, 128, 256, 512, 512],
            latent_dim: 128,
            mlp_hidden: 512,
            decoder_hidden: 512,
            mixture_count: 20,
            max_seq_len: 200,
            pen_thickness: 1,
            flags: PeFlags::default(),
        }
    }

    /// Desk-scale configuration used by the CI acceptance runs. Sized by
    /// measurement: the overfit-and-retrieve protocol was swept over input
    /// resolution, conv depth, latent width, decoder width and mixture
    /// count, and this configuration gave the best retrieval at the fixed
    /// 500-step budget.
    pub fn toy() -> Self {
        ModelConfig {
            patch_count: 3,
            embed_dim: 32,
            input_size: 16,
            conv_channels: vec![8, 16, 32],
            latent_dim: 32,
            mlp_hidden: 128,
            decoder_hidden: 128,
            mixture_count: 3,
            max_seq_len: 20,
            pen_thickness: 8,
            flags: PeFlags::default(),
        }
    }

    /// Minimal config for the finite-difference suite: two conv stages on
    /// 8x8 inputs, M=3, dim 16, sequences truncated to 5 steps.
    pub fn gradcheck_micro() -> Self {
        ModelConfig {
            patch_count: 3,
            embed_dim: 16,
            input_size: 8,
            conv_channels: vec![4, 8],
            latent_dim: 8,
            mlp_hidden: 16,
            decoder_hidden: 16,
            mixture_count: 3,
            max_seq_len: 5,
            pen_thickness: 8,
            flags: PeFlags::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % 2 != 0 {
            return Err(CoreError::Config(format!(
                "embed_dim must be even for the sinusoidal PE, got {}",
                self.embed_dim
            )));
        }
        if self.patch_count == 0 {
            return Err(CoreError::Config("patch_count must be >= 1".into()));
        }
        if self.conv_channels.is_empty() {
            return Err(CoreError::Config("need at least one conv stage".into()));
        }
        // Each stage: valid 2x2 conv (side-1) then 2x2/2 pool (floor halve).
        let mut side = self.input_size;
        for (i, _) in self.conv_channels.iter().enumerate() {
            if side < 2 {
                return Err(CoreError::Config(format!(
                    "input_size {} too small for {} conv stages (collapses at stage {})",
                    self.input_size,
                    self.conv_channels.len(),
                    i
                )));
            }
            side = (side - 1) / 2;
        }
        if side == 0 {
            return Err(CoreError::Config(
                "conv stack consumed the whole spatial extent".into(),
            ));
        }
        Ok(())
    }

    /// Spatial side after the full conv stack.
    pub fn final_spatial(&self) -> usize {
        let mut side = self.input_size;
        for _ in &self.conv_channels {
            side = (side - 1) / 2;
        }
        side
    }
}

/// Scale preset names used on the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePreset {
    Paper,
    Toy,
}

impl ScalePreset {
    pub fn model_config(self) -> ModelConfig {
        match self {
            ScalePreset::Paper => ModelConfig::paper(),
            ScalePreset::Toy => ModelConfig::toy(),
        }
    }

    pub fn default_batch(self) -> usize {
        match self {
            ScalePreset::Paper => 256,
            ScalePreset::Toy => 32,
        }
    }
}

impl std::str::FromStr for ScalePreset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "paper" => Ok(ScalePreset::Paper),
            "toy" => Ok(ScalePreset::Toy),
            other => Err(format!("unknown scale preset {other:?} (expected paper|toy)")),
        }
    }
}

/// Training hyper-parameters. The learning rate at epoch e is
/// lr0 * decay^e, recorded per step in the loss curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub threads: usize,
}

impl TrainConfig {
    pub fn new(scale: ScalePreset) -> Self {
        TrainConfig {
            lr0: 1e-3,
            lr_decay: 0.95,
            epochs: 1,
            batch_size: scale.default_batch(),
            seed: 0,
            threads: 1,
        }
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(epoch as i32)
    }
}

/// Distance used for gallery retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Euclidean,
    Cosine,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mask_prob: f64,
    pub seed: u64,
    pub ks: Vec<usize>,
    pub distance: Distance,
    /// Sampling temperature for the generation step of Rec/Ret.
    pub temperature: f64,
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mask_prob: 0.0,
            seed: 0,
            ks: vec![1, 10, 50],
            distance: Distance::Euclidean,
            temperature: 0.1,
            threads: 1,
        }
    }
}

/// FNV-1a over a canonical serialization; stable across runs and platforms.
pub fn fingerprint_bytes(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn fingerprint_config<S: Serialize>(value: &S) -> Result<u64> {
    let json = serde_json::to_string(value)?;
    Ok(fingerprint_bytes(json.as_bytes()))
}

/// Stable per-item seed derivation for masks, noise and generation.
pub fn derive_seed(global: u64, tag: &str, item: u64) -> u64 {
    let mut bytes = Vec::with_capacity(tag.len() + 16);
    bytes.extend_from_slice(&global.to_le_bytes());
    bytes.extend_from_slice(tag.as_bytes());
    bytes.extend_from_slice(&item.to_le_bytes());
    fingerprint_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_formula() {
        let tc = TrainConfig::new(ScalePreset::Toy);
        assert!((tc.lr_at_epoch(3) - 1e-3 * 0.95f64.powi(3)).abs() < 1e-18);
        assert!((tc.lr_at_epoch(3) - 8.573749999999999e-4).abs() < 1e-12);
    }

    #[test]
    fn presets_validate() {
        ModelConfig::paper().validate().unwrap();
        ModelConfig::toy().validate().unwrap();
        ModelConfig::gradcheck_micro().validate().unwrap();
    }

    #[test]
    fn paper_cnn_collapses_to_one_pixel() {
        assert_eq!(ModelConfig::paper().final_spatial(), 1);
        assert_eq!(ModelConfig::toy().final_spatial(), 1);
        assert_eq!(ModelConfig::gradcheck_micro().final_spatial(), 1);
    }

    #[test]
    fn odd_embed_dim_rejected() {
        let mut cfg = ModelConfig::toy();
        cfg.embed_dim = 15;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprint_stable() {
        let a = fingerprint_config(&ModelConfig::toy()).unwrap();
        let b = fingerprint_config(&ModelConfig::toy()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, fingerprint_config(&ModelConfig::paper()).unwrap());
    }

    #[test]
    fn derive_seed_depends_on_all_inputs() {
        let s = derive_seed(1, "mask", 7);
        assert_ne!(s, derive_seed(2, "mask", 7));
        assert_ne!(s, derive_seed(1, "mask", 8));
        assert_ne!(s, derive_seed(1, "eps", 7));
    }
}
