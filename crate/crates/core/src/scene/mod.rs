//! Synthetic crowd scenes: Gaussian "heads" on a noisy background, with
//! part of the crowd packed into dense clusters so density varies inside
//! one image.

mod annotations;
mod image_io;

pub use annotations::{format_annotations, parse_annotations, read_annotations, write_annotations};
pub use image_io::{load_png, save_png};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist2(self, other: Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }
}

/// Head box extent, used for the box-derived localization threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSize {
    pub w: f64,
    pub h: f64,
}

/// Ground-truth head coordinates of one image, in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub points: Vec<Point>,
    /// Either empty or one entry per point.
    #[serde(default)]
    pub boxes: Vec<BoxSize>,
}

impl PointSet {
    pub fn new(image_id: impl Into<String>, width: usize, height: usize, points: Vec<Point>) -> Self {
        Self {
            image_id: image_id.into(),
            width,
            height,
            points,
            boxes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !self.boxes.is_empty() && self.boxes.len() != self.points.len() {
            return Err(Error::Shape(format!(
                "{}: {} boxes for {} points",
                self.image_id,
                self.boxes.len(),
                self.points.len()
            )));
        }
        match self.points.iter().position(|&p| !self.contains(p)) {
            Some(i) => Err(Error::Domain {
                x: self.points[i].x,
                y: self.points[i].y,
                width: self.width as f64,
                height: self.height as f64,
            }),
            None => Ok(()),
        }
    }
}

/// Intensity image in `[0, 1]`, stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneGenConfig {
    pub image_size: usize,
    pub channels: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub cluster_fraction: f64,
    /// Standard deviation of the cluster spread around its center, pixels.
    pub cluster_spread: f64,
    pub min_spacing: f64,
    pub noise_std: f64,
    pub background: f64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            channels: 1,
            n_min: 1,
            n_max: 30,
            sigma_min: 1.5,
            sigma_max: 4.0,
            cluster_fraction: 0.5,
            cluster_spread: 6.0,
            min_spacing: 2.0,
            noise_std: 0.02,
            background: 0.1,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.image_size < 8 {
            return fail("scene.image_size must be at least 8");
        }
        if self.channels == 0 {
            return fail("scene.channels must be positive");
        }
        if self.n_max < self.n_min {
            return fail("scene.n_max must be >= scene.n_min");
        }
        if !(self.sigma_min > 0.0 && self.sigma_max >= self.sigma_min) {
            return fail("blob sigmas must be positive with sigma_max >= sigma_min");
        }
        if !(0.0..=1.0).contains(&self.cluster_fraction) {
            return fail("scene.cluster_fraction must lie in [0, 1]");
        }
        if self.noise_std < 0.0 || self.cluster_spread <= 0.0 || self.min_spacing < 0.0 {
            return fail("noise_std, cluster_spread and min_spacing must be non-negative");
        }
        // Rough packing bound so rejection sampling always terminates.
        let area = (self.image_size * self.image_size) as f64;
        let needed = self.n_max as f64 * (self.min_spacing + 1.0).powi(2);
        if needed > 0.5 * area {
            return fail("scene.n_max too large for the image at this min_spacing");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: Image,
    pub annotations: PointSet,
    pub seed: u64,
}

pub fn scene_id(seed: u64) -> String {
    format!("scene_{seed:06}")
}

/// Renders one scene. Pure function of `(config, seed)`.
pub fn generate_scene(config: &SceneGenConfig, seed: u64) -> Result<SyntheticScene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = config.image_size as f64;
    let n = rng.gen_range(config.n_min..=config.n_max);
    let n_cluster = (config.cluster_fraction * n as f64).round() as usize;

    let mut points: Vec<Point> = Vec::with_capacity(n);
    let far_enough = |pts: &[Point], p: Point| {
        pts.iter().all(|q| q.dist(p) >= config.min_spacing)
    };
    // Heads sit on pixel centers' hull [0, size - 1] so flips stay in range.
    let in_bounds = |p: Point| p.x >= 0.0 && p.y >= 0.0 && p.x <= size - 1.0 && p.y <= size - 1.0;

    if n_cluster > 0 {
        let n_centers = 1 + n_cluster / 12;
        let margin = (2.0 * config.cluster_spread).min(size / 4.0);
        let centers: Vec<Point> = (0..n_centers)
            .map(|_| {
                Point::new(
                    rng.gen_range(margin..size - margin),
                    rng.gen_range(margin..size - margin),
                )
            })
            .collect();
        let spread = Normal::new(0.0, config.cluster_spread).expect("positive spread");
        let mut attempts = 0;
        while points.len() < n_cluster && attempts < 200 * n_cluster {
            attempts += 1;
            let c = centers[points.len() % n_centers];
            let p = Point::new(c.x + spread.sample(&mut rng), c.y + spread.sample(&mut rng));
            if in_bounds(p) && far_enough(&points, p) {
                points.push(p);
            }
        }
    }
    while points.len() < n {
        let p = Point::new(rng.gen_range(0.0..size - 1.0), rng.gen_range(0.0..size - 1.0));
        if far_enough(&points, p) {
            points.push(p);
        }
    }

    let mut image = Image::zeros(config.image_size, config.image_size, config.channels);
    let blobs: Vec<(Point, f64, f64)> = points
        .iter()
        .map(|&p| {
            let sigma = rng.gen_range(config.sigma_min..=config.sigma_max);
            let amp = rng.gen_range(0.55..0.85);
            (p, sigma, amp)
        })
        .collect();
    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE)).expect("noise std");
    for y in 0..config.image_size {
        for x in 0..config.image_size {
            let q = Point::new(x as f64, y as f64);
            let signal: f64 = blobs
                .iter()
                .map(|&(p, s, a)| {
                    let d2 = p.dist2(q);
                    if d2 > 25.0 * s * s {
                        0.0
                    } else {
                        a * (-d2 / (2.0 * s * s)).exp()
                    }
                })
                .sum();
            for c in 0..config.channels {
                let eps = if config.noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                image.set(y, x, c, (config.background + signal + eps).clamp(0.0, 1.0));
            }
        }
    }

    Ok(SyntheticScene {
        image,
        annotations: PointSet::new(scene_id(seed), config.image_size, config.image_size, points),
        seed,
    })
}
