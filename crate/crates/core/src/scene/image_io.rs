use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use super::Image;
use crate::error::{Error, Result};

/// Writes a 16-bit PNG (grayscale for one channel, RGB for three).
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    let (w, h) = (img.width as u32, img.height as u32);
    match img.channels {
        1 => {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(w, h, img.data.iter().map(|&v| q(v)).collect())
                    .expect("buffer size");
            buf.save(path)?;
        }
        3 => {
            let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
                ImageBuffer::from_raw(w, h, img.data.iter().map(|&v| q(v)).collect())
                    .expect("buffer size");
            buf.save(path)?;
        }
        c => return Err(Error::Shape(format!("cannot encode a {c}-channel image as PNG"))),
    }
    Ok(())
}

pub fn load_png(path: &Path, channels: usize) -> Result<Image> {
    let dynamic = image::open(path)?;
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let data: Vec<f64> = match channels {
        1 => dynamic
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        3 => dynamic
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        c => return Err(Error::Shape(format!("cannot decode PNG into {c} channels"))),
    };
    Ok(Image {
        height,
        width,
        channels,
        data,
    })
}
