use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Point;

/// `K` anchor positions inside every stride-`s` cell, laid out as a regular
/// sub-grid (2x2 quarter points for `K = 4`, 2x4 for `K = 8`).
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGrid {
    pub stride: usize,
    pub layout: Vec<Point>,
}

/// Identity of one proposal within an image. Stable across epochs for a
/// fixed image size and grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProposalId {
    pub row: u32,
    pub col: u32,
    pub k: u32,
}

impl std::fmt::Display for ProposalId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "r{}c{}k{}", self.row, self.col, self.k)
    }
}

impl std::str::FromStr for ProposalId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed proposal id `{s}`"));
        let rest = s.strip_prefix('r').ok_or_else(bad)?;
        let (row, rest) = rest.split_once('c').ok_or_else(bad)?;
        let (col, k) = rest.split_once('k').ok_or_else(bad)?;
        Ok(Self {
            row: row.parse().map_err(|_| bad())?,
            col: col.parse().map_err(|_| bad())?,
            k: k.parse().map_err(|_| bad())?,
        })
    }
}

impl ReferenceGrid {
    pub fn new(stride: usize, k: usize) -> Result<Self> {
        if k == 0 || stride == 0 {
            return Err(Error::Config("reference grid needs K >= 1 and stride >= 1".into()));
        }
        // Most square factorization with cols >= rows.
        let rows = (1..=k)
            .filter(|r| k % r == 0 && r * r <= k)
            .max()
            .unwrap_or(1);
        let cols = k / rows;
        let s = stride as f64;
        let layout = (0..rows)
            .flat_map(|r| {
                (0..cols).map(move |c| {
                    Point::new(
                        (c as f64 + 0.5) / cols as f64 * s,
                        (r as f64 + 0.5) / rows as f64 * s,
                    )
                })
            })
            .collect();
        Ok(Self { stride, layout })
    }

    pub fn k(&self) -> usize {
        self.layout.len()
    }

    /// Number of proposals for an image, `ceil(H/s) * ceil(W/s) * K`.
    pub fn count(&self, height: usize, width: usize) -> usize {
        height.div_ceil(self.stride) * width.div_ceil(self.stride) * self.k()
    }

    /// All anchors in cell-major order (row, col, then k).
    pub fn anchors(&self, height: usize, width: usize) -> Vec<(ProposalId, Point)> {
        let (rows, cols) = (height.div_ceil(self.stride), width.div_ceil(self.stride));
        let s = self.stride as f64;
        let mut out = Vec::with_capacity(rows * cols * self.k());
        for row in 0..rows {
            for col in 0..cols {
                for (k, off) in self.layout.iter().enumerate() {
                    out.push((
                        ProposalId {
                            row: row as u32,
                            col: col as u32,
                            k: k as u32,
                        },
                        Point::new(col as f64 * s + off.x, row as f64 * s + off.y),
                    ));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_references_sit_on_quarter_points() {
        let g = ReferenceGrid::new(8, 4).unwrap();
        let xy: Vec<(f64, f64)> = g.layout.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(xy, vec![(2.0, 2.0), (6.0, 2.0), (2.0, 6.0), (6.0, 6.0)]);
    }

    #[test]
    fn eight_references_are_two_by_four() {
        let g = ReferenceGrid::new(8, 8).unwrap();
        assert_eq!(g.k(), 8);
        assert!(g.layout.iter().all(|p| p.x > 0.0 && p.x < 8.0 && p.y > 0.0 && p.y < 8.0));
        let mut ys: Vec<f64> = g.layout.iter().map(|p| p.y).collect();
        ys.dedup();
        assert_eq!(ys.len(), 2);
    }

    #[test]
    fn proposal_count_for_128_image() {
        let g = ReferenceGrid::new(8, 4).unwrap();
        assert_eq!(g.count(128, 128), 1024);
        assert_eq!(g.anchors(128, 128).len(), 1024);
    }

    #[test]
    fn ids_round_trip_through_text() {
        let id = ProposalId { row: 3, col: 15, k: 2 };
        assert_eq!(id.to_string().parse::<ProposalId>().unwrap(), id);
        assert!("x1c2k3".parse::<ProposalId>().is_err());
    }
}
