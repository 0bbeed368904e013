//! Experiment specifications: what to simulate or load, which solvers to run
//! and where to write the results.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lensless_core::forward::ShutterMode;
use lensless_core::solvers::FistaConfig;
use lensless_core::udn::{UdnArchitecture, UdnConfig};

use crate::error::{HarnessError, Result};
use crate::psf::DEFAULT_CONTRAST;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "2d-erasures")]
    Erasures2d,
    #[serde(rename = "video")]
    Video,
    #[serde(rename = "hyperspectral")]
    Hyperspectral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SceneSource {
    /// The bundled 64x64 photograph.
    Camera,
    DeadLeaves { height: usize, width: usize },
    /// Frame count comes from the shutter geometry.
    MovingSquare { height: usize, width: usize },
    /// Band count comes from the filter layout.
    SpectralCube { height: usize, width: usize },
    /// PNG (grayscale) or UDNT tensor; cubes are `[K, H, W]`.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PsfSource {
    Caustic {
        seed: u64,
        #[serde(default = "default_contrast")]
        contrast: f64,
    },
    /// Centred delta; turns the model into pure masking.
    Delta,
    File { path: PathBuf },
}

fn default_contrast() -> f64 {
    DEFAULT_CONTRAST
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FilterResponses {
    Ideal,
    Gaussian { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MaskSpec {
    /// One run per listed fraction.
    Erasure { fractions: Vec<f64> },
    Shutter { lines_per_frame: usize, mode: ShutterMode },
    Filter {
        channels: usize,
        superpixel: [usize; 2],
        responses: FilterResponses,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BestBy {
    #[default]
    Mse,
    Psnr,
    Ssim,
    MsSsim,
    SpectralCosine,
}

impl BestBy {
    /// Whether larger values are better.
    pub fn maximize(self) -> bool {
        matches!(self, BestBy::Psnr | BestBy::Ssim | BestBy::MsSsim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FistaSpec {
    pub taus: Vec<f64>,
    #[serde(default)]
    pub config: FistaConfig,
    #[serde(default)]
    pub best_by: BestBy,
}

/// Network constants that do not depend on the scene; extents and output
/// channels are filled in from the simulated cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub depth: usize,
    pub channels: usize,
    pub skip_channels: usize,
    pub kernel_size: usize,
    pub input_channels: usize,
    pub leaky_slope: f64,
    pub input_scale: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        let a = UdnArchitecture::default();
        Self {
            depth: a.depth,
            channels: a.channels,
            skip_channels: a.skip_channels,
            kernel_size: a.kernel_size,
            input_channels: a.input_channels,
            leaky_slope: a.leaky_slope,
            input_scale: a.input_scale,
        }
    }
}

impl NetworkSpec {
    pub fn architecture(&self, k: usize, h: usize, w: usize) -> UdnArchitecture {
        UdnArchitecture {
            height: h,
            width: w,
            depth: self.depth,
            channels: self.channels,
            skip_channels: self.skip_channels,
            kernel_size: self.kernel_size,
            input_channels: self.input_channels,
            output_channels: k,
            leaky_slope: self.leaky_slope,
            input_scale: self.input_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UdnSpec {
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub config: UdnConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub modality: Modality,
    pub scene: SceneSource,
    pub psf: PsfSource,
    pub masks: MaskSpec,
    #[serde(default = "one")]
    pub downsample: usize,
    /// Standard deviation of additive Gaussian sensor noise.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub fista: Option<FistaSpec>,
    #[serde(default)]
    pub udn: Option<UdnSpec>,
    #[serde(default = "yes")]
    pub metrics: bool,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Spec(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Spec(m));
        match (self.modality, &self.masks) {
            (Modality::Erasures2d, MaskSpec::Erasure { fractions }) => {
                if fractions.is_empty() {
                    return bad("erasure sweep lists no fractions".into());
                }
                if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
                    return bad(format!("erasure fraction {f} outside [0, 1]"));
                }
            }
            (Modality::Video, MaskSpec::Shutter { lines_per_frame, .. }) => {
                if *lines_per_frame == 0 {
                    return bad("lines_per_frame must be positive".into());
                }
            }
            (Modality::Hyperspectral, MaskSpec::Filter { channels, superpixel, responses }) => {
                if *channels == 0 || superpixel[0] * superpixel[1] < *channels {
                    return bad(format!(
                        "{}x{} superpixel cannot hold {channels} channels",
                        superpixel[0], superpixel[1]
                    ));
                }
                if let FilterResponses::Gaussian { sigma } = responses {
                    if !(*sigma > 0.0) {
                        return bad("gaussian filter sigma must be positive".into());
                    }
                }
            }
            (m, k) => return bad(format!("{m:?} modality cannot use {k:?} masks")),
        }
        match (&self.modality, &self.scene) {
            (Modality::Erasures2d, SceneSource::MovingSquare { .. } | SceneSource::SpectralCube { .. })
            | (Modality::Video, SceneSource::Camera | SceneSource::DeadLeaves { .. } | SceneSource::SpectralCube { .. })
            | (Modality::Hyperspectral, SceneSource::Camera | SceneSource::DeadLeaves { .. } | SceneSource::MovingSquare { .. }) => {
                return bad(format!("{:?} modality cannot use {:?} scenes", self.modality, self.scene));
            }
            _ => {}
        }
        if self.downsample == 0 {
            return bad("downsample factor must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if let PsfSource::Caustic { contrast, .. } = self.psf {
            if !(contrast > 0.0) {
                return bad(format!("caustic contrast {contrast} must be positive"));
            }
        }
        if let Some(f) = &self.fista {
            if f.taus.is_empty() {
                return bad("fista lists no tau values".into());
            }
            for &tau in &f.taus {
                FistaConfig { tau, ..f.config.clone() }
                    .validate()
                    .map_err(|e| HarnessError::Spec(format!("fista: {e}")))?;
            }
        }
        if let Some(u) = &self.udn {
            u.config.validate().map_err(|e| HarnessError::Spec(format!("udn: {e}")))?;
            // Extents are checked against the scene once it is known.
            u.network
                .architecture(1, 1 << u.network.depth.min(16), 1 << u.network.depth.min(16))
                .validate()
                .map_err(|e| HarnessError::Spec(format!("udn: {e}")))?;
        }
        Ok(())
    }

    /// Erasure fraction per run; `None` for modalities without a sweep.
    pub fn sweep_points(&self) -> Vec<Option<f64>> {
        match &self.masks {
            MaskSpec::Erasure { fractions } => fractions.iter().map(|&f| Some(f)).collect(),
            _ => vec![None],
        }
    }

    /// The same spec restricted to one sweep point.
    pub fn at_point(&self, fraction: Option<f64>) -> Self {
        let mut s = self.clone();
        if let (Some(f), MaskSpec::Erasure { fractions }) = (fraction, &mut s.masks) {
            *fractions = vec![f];
        }
        s
    }

    /// SHA-256 of the canonical JSON form without `output_dir`. Defaults are
    /// materialized before hashing, so spelling a default out does not
    /// change the hash.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("spec serializes");
        v.as_object_mut().expect("spec is an object").remove("output_dir");
        let canonical = serde_json::to_string(&v).expect("value serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
