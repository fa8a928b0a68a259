use rand::Rng;

use crate::scene::{Image, Point, PointSet};

/// One image with its annotations, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub points: PointSet,
}

/// Concrete choice of scale, crop window and flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    pub crop_x: usize,
    pub crop_y: usize,
    pub flip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub crop: usize,
    pub scale_range: [f64; 2],
    pub flip_prob: f64,
}

/// Smallest scale that keeps the shorter side at least `crop`.
pub fn min_scale(height: usize, width: usize, crop: usize) -> f64 {
    crop as f64 / height.min(width) as f64
}

/// Resampled size for a given scale, never below `crop`.
pub fn scaled_size(height: usize, width: usize, scale: f64, crop: usize) -> (usize, usize) {
    let h = ((height as f64 * scale).round() as usize).max(crop);
    let w = ((width as f64 * scale).round() as usize).max(crop);
    (h, w)
}

pub fn sample_params<R: Rng>(rng: &mut R, height: usize, width: usize, config: &AugmentConfig) -> AugmentParams {
    let [lo, hi] = config.scale_range;
    let drawn = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let scale = drawn.max(min_scale(height, width, config.crop));
    let (h, w) = scaled_size(height, width, scale, config.crop);
    let crop_x = rng.gen_range(0..=w - config.crop);
    let crop_y = rng.gen_range(0..=h - config.crop);
    let flip = rng.gen_bool(config.flip_prob.clamp(0.0, 1.0));
    AugmentParams {
        scale,
        crop_x,
        crop_y,
        flip,
    }
}

/// Bilinear resize with pixel centers at integer coordinates, so that a
/// point `x` maps to `x * (new_width / width)`.
pub fn resize(image: &Image, height: usize, width: usize) -> Image {
    let sy = height as f64 / image.height as f64;
    let sx = width as f64 / image.width as f64;
    let mut out = Image::zeros(height, width, image.channels);
    let max_y = (image.height - 1) as f64;
    let max_x = (image.width - 1) as f64;
    for y in 0..height {
        let fy = (y as f64 / sy).clamp(0.0, max_y);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(image.height - 1);
        let ty = fy - y0 as f64;
        for x in 0..width {
            let fx = (x as f64 / sx).clamp(0.0, max_x);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(image.width - 1);
            let tx = fx - x0 as f64;
            for c in 0..image.channels {
                let top = image.get(y0, x0, c) * (1.0 - tx) + image.get(y0, x1, c) * tx;
                let bottom = image.get(y1, x0, c) * (1.0 - tx) + image.get(y1, x1, c) * tx;
                out.set(y, x, c, top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    out
}

/// Scale, crop to `crop x crop` at the given window, then optionally flip
/// horizontally. Points are transformed the same way; those landing outside
/// `[0, crop - 1]` on either axis are dropped so the flip stays closed.
pub fn augment_with(sample: &Sample, params: &AugmentParams, crop: usize) -> Sample {
    let src = &sample.image;
    let (h, w) = scaled_size(src.height, src.width, params.scale, crop);
    let scaled = if (h, w) == (src.height, src.width) {
        src.clone()
    } else {
        resize(src, h, w)
    };
    let (sx, sy) = (w as f64 / src.width as f64, h as f64 / src.height as f64);
    let mut image = Image::zeros(crop, crop, src.channels);
    for y in 0..crop {
        for x in 0..crop {
            let tx = if params.flip { crop - 1 - x } else { x };
            for c in 0..src.channels {
                image.set(y, tx, c, scaled.get(y + params.crop_y, x + params.crop_x, c));
            }
        }
    }
    let limit = (crop - 1) as f64;
    let mut points = Vec::new();
    let mut boxes = Vec::new();
    for (i, p) in sample.points.points.iter().enumerate() {
        let x = p.x * sx - params.crop_x as f64;
        let y = p.y * sy - params.crop_y as f64;
        if !(0.0..=limit).contains(&x) || !(0.0..=limit).contains(&y) {
            continue;
        }
        let x = if params.flip { limit - x } else { x };
        points.push(Point::new(x, y));
        if let Some(b) = sample.points.boxes.get(i) {
            boxes.push(crate::scene::BoxSize {
                w: b.w * sx,
                h: b.h * sy,
            });
        }
    }
    let mut set = PointSet::new(sample.points.image_id.clone(), crop, crop, points);
    set.boxes = boxes;
    Sample { image, points: set }
}

/// Deterministic view for probing and evaluation: upscale only if the
/// shorter side is below `crop`, then take the centered `crop x crop`
/// window, no flip.
pub fn center_crop(sample: &Sample, crop: usize) -> Sample {
    let (h, w) = (sample.image.height, sample.image.width);
    let scale = min_scale(h, w, crop).max(1.0);
    let (sh, sw) = scaled_size(h, w, scale, crop);
    let params = AugmentParams {
        scale,
        crop_x: (sw - crop) / 2,
        crop_y: (sh - crop) / 2,
        flip: false,
    };
    augment_with(sample, &params, crop)
}
