//! Plain-text annotation files.
//!
//! ```text
//! scene_000001 128 128
//! 12.5 40.25
//! 99 3.75 6 7
//!
//! scene_000002 128 128
//! ```
//!
//! Each record starts with `image_id width height`, followed by one head per
//! line as `x y` (optionally `x y w h` with the head box size). Records are
//! separated by a blank line. Coordinates are written with the shortest
//! representation that round-trips exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::{BoxSize, Point, PointSet};
use crate::error::{Error, Result};

pub fn format_annotations<'a>(sets: impl IntoIterator<Item = &'a PointSet>) -> String {
    let mut out = String::new();
    for (i, set) in sets.into_iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        writeln!(out, "{} {} {}", set.image_id, set.width, set.height).unwrap();
        for (k, p) in set.points.iter().enumerate() {
            match set.boxes.get(k) {
                Some(b) => writeln!(out, "{} {} {} {}", p.x, p.y, b.w, b.h).unwrap(),
                None => writeln!(out, "{} {}", p.x, p.y).unwrap(),
            }
        }
    }
    out
}

pub fn write_annotations<'a>(
    path: &Path,
    sets: impl IntoIterator<Item = &'a PointSet>,
) -> Result<()> {
    std::fs::write(path, format_annotations(sets)).map_err(|e| Error::io(path, e))
}

pub fn read_annotations(path: &Path) -> Result<Vec<PointSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

/// `origin` only labels errors.
pub fn parse_annotations(text: &str, origin: &Path) -> Result<Vec<PointSet>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let num = |tok: &str, line: usize| -> Result<f64> {
        tok.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(line, format!("expected a finite number, found `{tok}`")))
    };

    let mut sets = Vec::new();
    let mut current: Option<PointSet> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            if let Some(set) = current.take() {
                sets.push(set);
            }
            continue;
        }
        let Some(set) = current.as_mut() else {
            let [id, w, h] = tokens[..] else {
                return Err(err(line, "record header must be `image_id width height`".into()));
            };
            let dim = |t: &str| {
                t.parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| err(line, format!("invalid image dimension `{t}`")))
            };
            current = Some(PointSet::new(id, dim(w)?, dim(h)?, Vec::new()));
            continue;
        };
        let p = match tokens.len() {
            2 | 4 => Point::new(num(tokens[0], line)?, num(tokens[1], line)?),
            n => return Err(err(line, format!("expected `x y` or `x y w h`, found {n} fields"))),
        };
        if !set.contains(p) {
            return Err(err(
                line,
                format!(
                    "point ({}, {}) outside image {}x{} of `{}`",
                    p.x, p.y, set.width, set.height, set.image_id
                ),
            ));
        }
        if tokens.len() == 4 {
            if set.boxes.len() != set.points.len() {
                return Err(err(line, "box sizes must be given for every point or none".into()));
            }
            set.boxes.push(BoxSize {
                w: num(tokens[2], line)?,
                h: num(tokens[3], line)?,
            });
        } else if !set.boxes.is_empty() {
            return Err(err(line, "box sizes must be given for every point or none".into()));
        }
        set.points.push(p);
    }
    if let Some(set) = current {
        sets.push(set);
    }
    Ok(sets)
}
