//! Image preprocessing and the vision branch producing the 512-d feature F1.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use ndarray::{Array1, Array3};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{relu, Linear};
use crate::FEATURE_DIM;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PreprocessConfig {
    pub height: usize,
    pub width: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        // 299x299 is the conventional input size for the Inception family.
        PreprocessConfig {
            height: 299,
            width: 299,
            mean: [0.5, 0.5, 0.5],
            std: [0.5, 0.5, 0.5],
        }
    }
}

/// Normalized image, shape (3, H, W).
#[derive(Debug, Clone)]
pub struct ImageTensor {
    pub data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Result<ImageTensor, VisionError> {
        if data.shape()[0] != 3 {
            return Err(VisionError::ShapeMismatch {
                expected: "(3, H, W)".into(),
                got: format!("{:?}", data.shape()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(VisionError::NonFiniteValues);
        }
        Ok(ImageTensor { data })
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }
}

/// 512-d visual feature from the vision branch.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionFeature {
    pub vector: Array1<f64>,
}

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("image tensor contains non-finite values")]
    NonFiniteValues,
    #[error("backbone weights missing at {0}")]
    MissingWeights(PathBuf),
    #[error("backbone weights at {path} failed to load: {reason}")]
    BadWeights { path: PathBuf, reason: String },
}

/// Decode, resize to H x W, scale to [0,1], normalize per channel.
/// Grayscale inputs are replicated across the three channels.
pub fn preprocess_image(
    image_path: &Path,
    config: &PreprocessConfig,
) -> Result<ImageTensor, VisionError> {
    let img = image::open(image_path).map_err(|e| VisionError::UnreadableImage {
        path: image_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img
        .resize_exact(
            config.width as u32,
            config.height as u32,
            FilterType::Triangle,
        )
        .to_rgb8();
    let mut data = Array3::zeros((3, config.height, config.width));
    for (x, y, pixel) in rgb.enumerate_pixels() {
        for c in 0..3 {
            let v = pixel.0[c] as f64 / 255.0;
            data[[c, y as usize, x as usize]] = (v - config.mean[c]) / config.std[c];
        }
    }
    ImageTensor::new(data)
}

/// Deterministic stand-in for a pretrained convolutional trunk: average-pool
/// the image down to `pool` x `pool`, then apply a fixed seeded affine map to
/// `native_dim`. The map is generated once from the seed and never trained.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StubVisionBody {
    pub seed: u64,
    pub native_dim: usize,
    pub pool: usize,
    weight: ndarray::Array2<f64>,
    bias: Array1<f64>,
}

impl StubVisionBody {
    pub fn new(seed: u64, native_dim: usize, pool: usize) -> StubVisionBody {
        let in_dim = 3 * pool * pool;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let bound = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let weight =
            ndarray::Array2::from_shape_fn((native_dim, in_dim), |_| dist.sample(&mut rng));
        let bias = Array1::from_shape_fn(native_dim, |_| dist.sample(&mut rng));
        StubVisionBody {
            seed,
            native_dim,
            pool,
            weight,
            bias,
        }
    }

    pub fn forward(&self, tensor: &ImageTensor) -> Array1<f64> {
        let pooled = pool_to(tensor, self.pool);
        self.weight.dot(&pooled) + &self.bias
    }
}

/// Average-pool a (3, H, W) tensor to a flat 3*p*p vector.
fn pool_to(tensor: &ImageTensor, p: usize) -> Array1<f64> {
    let (h, w) = (tensor.height(), tensor.width());
    let mut out = Array1::zeros(3 * p * p);
    for c in 0..3 {
        for by in 0..p {
            for bx in 0..p {
                let y0 = by * h / p;
                let y1 = ((by + 1) * h / p).max(y0 + 1).min(h);
                let x0 = bx * w / p;
                let x1 = ((bx + 1) * w / p).max(x0 + 1).min(w);
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += tensor.data[[c, y, x]];
                    }
                }
                out[c * p * p + by * p + bx] = sum / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

/// The frozen trunk of the vision branch.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum VisionBody {
    Stub(StubVisionBody),
    /// Weights loaded from a file instead of seeded; same affine shape as the
    /// stub so exported trunk features from a real backbone can slot in.
    Pretrained {
        source: PathBuf,
        body: StubVisionBody,
    },
}

impl VisionBody {
    pub fn native_dim(&self) -> usize {
        match self {
            VisionBody::Stub(b) => b.native_dim,
            VisionBody::Pretrained { body, .. } => body.native_dim,
        }
    }

    pub fn forward(&self, tensor: &ImageTensor) -> Array1<f64> {
        match self {
            VisionBody::Stub(b) => b.forward(tensor),
            VisionBody::Pretrained { body, .. } => body.forward(tensor),
        }
    }
}

/// Vision branch: frozen trunk plus a trainable projection native_dim -> 512
/// with a rectifier after the projection.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VisionBackbone {
    pub identity: String,
    pub preprocess: PreprocessConfig,
    pub body: VisionBody,
    pub projection: Linear,
}

impl VisionBackbone {
    pub fn stub(seed: u64, native_dim: usize, preprocess: PreprocessConfig) -> VisionBackbone {
        let body = StubVisionBody::new(seed, native_dim, 8);
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
        VisionBackbone {
            identity: format!("stub-vision-{seed}"),
            preprocess,
            body: VisionBody::Stub(body),
            projection: Linear::seeded(FEATURE_DIM, native_dim, &mut rng),
        }
    }

    /// Load trunk weights from `<dir>/vision_body.bin`.
    pub fn pretrained(
        dir: &Path,
        seed: u64,
        preprocess: PreprocessConfig,
    ) -> Result<VisionBackbone, VisionError> {
        let path = dir.join("vision_body.bin");
        if !path.is_file() {
            return Err(VisionError::MissingWeights(path));
        }
        let bytes = std::fs::read(&path).map_err(|e| VisionError::BadWeights {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let body: StubVisionBody =
            bincode::deserialize(&bytes).map_err(|e| VisionError::BadWeights {
                path: path.clone(),
                reason: e.to_string(),
            })?;
        let native_dim = body.native_dim;
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
        Ok(VisionBackbone {
            identity: format!("pretrained-vision:{}", path.display()),
            preprocess,
            body: VisionBody::Pretrained { source: path, body },
            projection: Linear::seeded(FEATURE_DIM, native_dim, &mut rng),
        })
    }

    pub fn native_dim(&self) -> usize {
        self.body.native_dim()
    }

    /// Frozen trunk output; the input to the trainable projection.
    pub fn trunk_features(&self, tensor: &ImageTensor) -> Result<Array1<f64>, VisionError> {
        if tensor.height() != self.preprocess.height || tensor.width() != self.preprocess.width {
            return Err(VisionError::ShapeMismatch {
                expected: format!("(3, {}, {})", self.preprocess.height, self.preprocess.width),
                got: format!("{:?}", tensor.data.shape()),
            });
        }
        Ok(self.body.forward(tensor))
    }

    /// Projection + ReLU over a trunk feature: (pre-activation, feature).
    pub fn project(&self, trunk: &Array1<f64>) -> (Array1<f64>, VisionFeature) {
        let pre = self.projection.forward(trunk);
        let vector = relu(&pre);
        (pre, VisionFeature { vector })
    }
}

/// Full branch forward: trunk then projection.
pub fn encode_image(
    tensor: &ImageTensor,
    backbone: &VisionBackbone,
) -> Result<VisionFeature, VisionError> {
    let trunk = backbone.trunk_features(tensor)?;
    Ok(backbone.project(&trunk).1)
}
