use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::GrayImage;
use super::labels::GroundTruth;
use crate::detector::BBox;
use crate::error::{Error, Result};

/// Attempts per target before placement gives up.
pub const PLACEMENT_ATTEMPTS: usize = 100;

/// Parameters of a synthetic infrared scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub size: usize,
    /// Inclusive range of target counts.
    pub targets: (usize, usize),
    /// Peak target amplitude above the background.
    pub intensity: (f64, f64),
    pub sigma: (f64, f64),
    /// Label half-extent in units of σ.
    pub box_sigmas: f64,
    /// Minimum distance between target centers, in pixels.
    pub min_separation: f64,
    pub background_level: f64,
    /// Peak-to-peak amplitude of the linear background gradient.
    pub gradient_amplitude: f64,
    /// Clutter blobs per 1000 pixels.
    pub clutter_density: f64,
    pub clutter_amplitude: (f64, f64),
    pub clutter_sigma: (f64, f64),
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            size: 96,
            targets: (1, 3),
            intensity: (0.35, 0.6),
            sigma: (1.0, 2.0),
            box_sigmas: 2.0,
            min_separation: 12.0,
            background_level: 0.25,
            gradient_amplitude: 0.15,
            clutter_density: 0.5,
            clutter_amplitude: (0.03, 0.1),
            clutter_sigma: (3.0, 8.0),
            noise_std: 0.01,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scene spec: {m}")));
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if self.size < 8 {
            return bad("image size must be at least 8");
        }
        if self.targets.0 > self.targets.1 {
            return bad("target count range is reversed");
        }
        if !ordered(self.sigma) || self.sigma.0 <= 0.0 || !ordered(self.clutter_sigma) || self.clutter_sigma.0 <= 0.0 {
            return bad("σ ranges must be positive and ordered");
        }
        if !ordered(self.intensity) || !ordered(self.clutter_amplitude) {
            return bad("amplitude ranges must be ordered");
        }
        let peak = self.background_level + self.gradient_amplitude + self.intensity.1;
        if self.intensity.0 < 0.0 || self.background_level < 0.0 || peak > 1.0 {
            return bad("intensities must stay within [0, 1]");
        }
        if !(self.box_sigmas > 0.0 && self.noise_std >= 0.0 && self.clutter_density >= 0.0) {
            return bad("box extent must be positive, noise and clutter non-negative");
        }
        Ok(())
    }
}

/// A generated image with its labels and the exact target centers.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: GrayImage,
    pub labels: Vec<GroundTruth>,
    pub centers: Vec<(f64, f64)>,
}

/// Derived seed of item `index` in a seeded collection.
pub fn item_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

fn add_gaussian(img: &mut GrayImage, cx: f64, cy: f64, sigma: f64, amp: f64) {
    let reach = (4.0 * sigma).ceil() as isize;
    let (x0, y0) = (cx.floor() as isize, cy.floor() as isize);
    for y in (y0 - reach).max(0)..=(y0 + reach).min(img.height as isize - 1) {
        for x in (x0 - reach).max(0)..=(x0 + reach).min(img.width as isize - 1) {
            // pixel (x, y) covers [x, x+1), sampled at its center
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            img.data[y as usize * img.width + x as usize] += amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
}

/// Smooth background with clutter and noise plus Gaussian targets labelled
/// by their `±box_sigmas·σ` extent.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.size;
    let mut img = GrayImage::new(n, n);

    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    for y in 0..n {
        for x in 0..n {
            let t = ((x as f64 / n as f64 - 0.5) * gx + (y as f64 / n as f64 - 0.5) * gy) / std::f64::consts::SQRT_2;
            img.data[y * n + x] = spec.background_level + spec.gradient_amplitude * (t + 0.5);
        }
    }
    let blobs = (spec.clutter_density * (n * n) as f64 / 1000.0).round() as usize;
    for _ in 0..blobs {
        let cx = rng.random_range(0.0..n as f64);
        let cy = rng.random_range(0.0..n as f64);
        let s = uniform(&mut rng, spec.clutter_sigma);
        let a = uniform(&mut rng, spec.clutter_amplitude);
        add_gaussian(&mut img, cx, cy, s, a);
    }

    let count = rng.random_range(spec.targets.0..=spec.targets.1);
    let mut placed: Vec<(f64, f64, f64)> = Vec::with_capacity(count);
    for ti in 0..count {
        let sigma = uniform(&mut rng, spec.sigma);
        let half = spec.box_sigmas * sigma;
        let margin = half + 1.0;
        if 2.0 * margin >= n as f64 {
            return Err(Error::Generation(format!("target {ti} with σ {sigma:.2} does not fit the image")));
        }
        let mut spot = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let cx = rng.random_range(margin..n as f64 - margin);
            let cy = rng.random_range(margin..n as f64 - margin);
            if placed
                .iter()
                .all(|&(px, py, _)| (px - cx).hypot(py - cy) >= spec.min_separation)
            {
                spot = Some((cx, cy));
                break;
            }
        }
        let (cx, cy) = spot.ok_or_else(|| {
            Error::Generation(format!(
                "could not place target {ti} after {PLACEMENT_ATTEMPTS} attempts"
            ))
        })?;
        placed.push((cx, cy, sigma));
    }
    let mut labels = Vec::with_capacity(count);
    for &(cx, cy, sigma) in &placed {
        let amp = uniform(&mut rng, spec.intensity);
        add_gaussian(&mut img, cx, cy, sigma, amp);
        let half = spec.box_sigmas * sigma;
        let b = BBox::new(cx - half, cy - half, cx + half, cy + half);
        labels.push(GroundTruth::from_pixels(&b, 0, n, n));
    }

    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        for v in &mut img.data {
            *v += normal.sample(&mut rng);
        }
    }
    img.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(Scene {
        image: img,
        labels,
        centers: placed.iter().map(|&(x, y, _)| (x, y)).collect(),
    })
}
