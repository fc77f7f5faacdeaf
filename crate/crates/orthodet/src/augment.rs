//! Training-time augmentation with label-consistent horizontal flip.
//!
//! Flipping a panoramic image swaps the patient's left and right sides, so
//! the quadrant digit of every label changes (1↔2, 3↔4) while the position
//! digit and the disease attributes stay put. The remaining transforms are
//! ordinary geometric/photometric jitter applied identically to pixels and
//! boxes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::AnnotationTier;
use crate::error::{Error, Result};
use crate::fdi::flip_quadrant;
use crate::geometry::BoundingBox;
use crate::imagebuf::Image;
use crate::records::ToothRecord;
use crate::Scalar;

/// One training example: grayscale image plus its records and tier.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image: Image<T>,
    pub records: Vec<ToothRecord<T>>,
    pub tier: AnnotationTier,
}

/// Augmentation ranges. All keys live under `augment.*` in the run config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Scale drawn from `[1 - scale, 1 + scale]`.
    pub scale: f64,
    /// Rotation drawn from `[-rotate_deg, +rotate_deg]` degrees.
    pub rotate_deg: f64,
    /// Translation drawn from `[-translate, +translate]` as a fraction of
    /// each image dimension.
    pub translate: f64,
    /// Probability of a horizontal flip.
    pub flip_prob: f64,
    /// Gaussian blur sigmas to draw from; 0 means no blur.
    pub blur_sigmas: Vec<f64>,
    /// Boxes whose clipped area falls below this fraction of their
    /// transformed area are dropped.
    pub min_visibility: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale: 0.2,
            rotate_deg: 10.0,
            translate: 0.1,
            flip_prob: 0.5,
            blur_sigmas: vec![0.0, 0.5, 1.0],
            min_visibility: 0.25,
        }
    }
}

impl AugmentConfig {
    /// No-op configuration; `apply_augmentations` returns the sample unchanged.
    pub fn identity() -> Self {
        Self {
            scale: 0.0,
            rotate_deg: 0.0,
            translate: 0.0,
            flip_prob: 0.0,
            blur_sigmas: vec![0.0],
            min_visibility: 0.25,
        }
    }

    /// Ranges must keep every drawable affine map orientation-preserving.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.scale) {
            return Err(Error::DegenerateTransform(format!(
                "scale range {} admits a non-positive determinant",
                self.scale
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidConfig(format!(
                "flip_prob {} outside [0, 1]",
                self.flip_prob
            )));
        }
        if self.blur_sigmas.is_empty() || self.blur_sigmas.iter().any(|s| *s < 0.0) {
            return Err(Error::InvalidConfig("blur_sigmas must be non-empty and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.min_visibility) {
            return Err(Error::InvalidConfig(format!(
                "min_visibility {} outside [0, 1]",
                self.min_visibility
            )));
        }
        Ok(())
    }
}

/// Mirror a sample about the vertical axis: pixels, boxes and quadrant
/// labels all flip together; positions and attributes are untouched.
pub fn horizontal_flip<T: Scalar>(sample: &Sample<T>) -> Sample<T> {
    let w = T::from_f64_lossy(sample.image.width() as f64);
    let records = sample
        .records
        .iter()
        .map(|rec| ToothRecord {
            bbox: BoundingBox {
                x_min: w - rec.bbox.x_max,
                y_min: rec.bbox.y_min,
                x_max: w - rec.bbox.x_min,
                y_max: rec.bbox.y_max,
            },
            quadrant: flip_quadrant(rec.quadrant),
            fdi: rec.fdi.map(|f| f.flipped()),
            attributes: rec.attributes,
            source: rec.source,
        })
        .collect();
    Sample {
        image: sample.image.flipped_horizontal(),
        records,
        tier: sample.tier,
    }
}

/// Row-major 2x3 affine matrix mapping source pixel coordinates to
/// destination coordinates.
#[derive(Debug, Clone, Copy)]
struct Affine {
    m: [f64; 6],
}

impl Affine {
    fn identity() -> Self {
        Self {
            m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    fn is_identity(&self) -> bool {
        self.m == Affine::identity().m
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0] * x + self.m[1] * y + self.m[2],
            self.m[3] * x + self.m[4] * y + self.m[5],
        )
    }

    fn det(&self) -> f64 {
        self.m[0] * self.m[4] - self.m[1] * self.m[3]
    }

    fn inverse(&self) -> Self {
        let d = self.det();
        let [a, b, c, e, f, g] = self.m;
        Self {
            m: [
                f / d,
                -b / d,
                (b * g - c * f) / d,
                -e / d,
                a / d,
                (c * e - a * g) / d,
            ],
        }
    }

    /// Rotation by `theta` and uniform scale about the image center, then
    /// translation.
    fn from_params(theta: f64, scale: f64, tx: f64, ty: f64, cx: f64, cy: f64) -> Self {
        let (sin, cos) = theta.sin_cos();
        let a = scale * cos;
        let b = -scale * sin;
        let e = scale * sin;
        let f = scale * cos;
        Self {
            m: [
                a,
                b,
                cx - a * cx - b * cy + tx,
                e,
                f,
                cy - e * cx - f * cy + ty,
            ],
        }
    }
}

/// Apply the configured augmentations. Deterministic given
/// `(sample, cfg, seed)`; an identity configuration returns the sample
/// bit-for-bit unchanged.
pub fn apply_augmentations<T: Scalar>(
    sample: &Sample<T>,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Sample<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Draw all parameters up front so the draw sequence is stable.
    let scale = 1.0 + draw_range(&mut rng, cfg.scale);
    let theta = draw_range(&mut rng, cfg.rotate_deg).to_radians();
    let tx_frac = draw_range(&mut rng, cfg.translate);
    let ty_frac = draw_range(&mut rng, cfg.translate);
    let do_flip = cfg.flip_prob > 0.0 && rng.gen::<f64>() < cfg.flip_prob;
    let sigma = cfg.blur_sigmas[rng.gen_range(0..cfg.blur_sigmas.len())];

    let w = sample.image.width();
    let h = sample.image.height();
    let affine = Affine::from_params(
        theta,
        scale,
        tx_frac * w as f64,
        ty_frac * h as f64,
        w as f64 / 2.0,
        h as f64 / 2.0,
    );
    if affine.det() <= 0.0 {
        return Err(Error::DegenerateTransform(format!(
            "determinant {}",
            affine.det()
        )));
    }

    let mut out = if affine.is_identity() {
        sample.clone()
    } else {
        warp_sample(sample, &affine, cfg.min_visibility)
    };
    if do_flip {
        out = horizontal_flip(&out);
    }
    if sigma > 0.0 {
        out.image = gaussian_blur(&out.image, sigma);
    }
    Ok(out)
}

/// Symmetric draw from `[-half_width, +half_width]`. Always consumes one RNG
/// draw so parameter positions in the stream stay fixed, and collapses to an
/// exact 0.0 when the half-width is zero (keeps the identity configuration
/// bit-exact).
fn draw_range(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    let u = rng.gen::<f64>();
    if half_width == 0.0 {
        0.0
    } else {
        (2.0 * u - 1.0) * half_width
    }
}

fn warp_sample<T: Scalar>(sample: &Sample<T>, affine: &Affine, min_visibility: f64) -> Sample<T> {
    let w = sample.image.width();
    let h = sample.image.height();
    let inv = affine.inverse();

    let mut image = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            image.set(x, y, sample.image.sample_bilinear(sx, sy));
        }
    }

    let records = sample
        .records
        .iter()
        .filter_map(|rec| {
            let hull = transform_box_hull(&rec.bbox, affine);
            let clipped = hull.clipped(T::from_f64_lossy(w as f64), T::from_f64_lossy(h as f64))?;
            let visibility = clipped.area() / hull.area();
            if visibility < T::from_f64_lossy(min_visibility) {
                return None;
            }
            Some(ToothRecord {
                bbox: clipped,
                ..*rec
            })
        })
        .collect();

    Sample {
        image,
        records,
        tier: sample.tier,
    }
}

/// Axis-aligned hull of the four transformed corners.
fn transform_box_hull<T: Scalar>(bbox: &BoundingBox<T>, affine: &Affine) -> BoundingBox<T> {
    let corners = [
        (bbox.x_min, bbox.y_min),
        (bbox.x_max, bbox.y_min),
        (bbox.x_min, bbox.y_max),
        (bbox.x_max, bbox.y_max),
    ];
    let mut x_min = f64::INFINITY;
    let mut y_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (x, y) in corners {
        let (tx, ty) = affine.apply(x.to_f64_lossy(), y.to_f64_lossy());
        x_min = x_min.min(tx);
        y_min = y_min.min(ty);
        x_max = x_max.max(tx);
        y_max = y_max.max(ty);
    }
    BoundingBox {
        x_min: T::from_f64_lossy(x_min),
        y_min: T::from_f64_lossy(y_min),
        x_max: T::from_f64_lossy(x_max),
        y_max: T::from_f64_lossy(y_max),
    }
}

/// Separable Gaussian blur with replicated borders.
fn gaussian_blur<T: Scalar>(image: &Image<T>, sigma: f64) -> Image<T> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let v = (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    let kernel: Vec<T> = kernel
        .into_iter()
        .map(|v| T::from_f64_lossy(v / sum))
        .collect();

    let w = image.width();
    let h = image.height();
    let clamp = |v: i64, max: usize| v.clamp(0, max as i64 - 1) as usize;

    let mut horizontal = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (k, coeff) in kernel.iter().enumerate() {
                let sx = clamp(x as i64 + k as i64 - radius, w);
                acc += *coeff * image.get(sx, y);
            }
            horizontal.set(x, y, acc);
        }
    }
    let mut out = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (k, coeff) in kernel.iter().enumerate() {
                let sy = clamp(y as i64 + k as i64 - radius, h);
                acc += *coeff * horizontal.get(x, sy);
            }
            out.set(x, y, acc);
        }
    }
    out
}
