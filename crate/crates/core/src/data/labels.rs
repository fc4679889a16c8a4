use std::fmt::Write as _;

use crate::detector::{BBox, LabeledBox};
use crate::error::{Error, Result};

/// Slack allowed outside `[0, 1]` before a value is rejected; values inside
/// the slack are clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-6;

/// One annotation in normalized center form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruth {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl GroundTruth {
    /// Box in pixels for a square image of side `size`.
    pub fn to_pixels(&self, size: usize) -> LabeledBox {
        let s = size as f64;
        LabeledBox {
            bbox: BBox::from_center(self.cx * s, self.cy * s, self.w * s, self.h * s),
            class: self.class_id,
        }
    }

    /// Normalized annotation from a pixel box, clipped to the image.
    pub fn from_pixels(b: &BBox, class_id: usize, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let x1 = b.x1.clamp(0.0, w) / w;
        let x2 = b.x2.clamp(0.0, w) / w;
        let y1 = b.y1.clamp(0.0, h) / h;
        let y2 = b.y2.clamp(0.0, h) / h;
        GroundTruth {
            class_id,
            cx: 0.5 * (x1 + x2),
            cy: 0.5 * (y1 + y2),
            w: x2 - x1,
            h: y2 - y1,
        }
    }
}

fn unit(v: f64, what: &str, line: usize) -> Result<f64> {
    if !(-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&v) {
        return Err(Error::Range {
            line,
            msg: format!("{what} = {v} outside [0, 1]"),
        });
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Parses `class cx cy w h` records, one per non-blank line.
pub fn parse_yolo_labels(text: &str) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let class_id = fields[0].parse::<usize>().map_err(|_| Error::Parse {
            line,
            msg: format!("class id `{}` is not a non-negative integer", fields[0]),
        })?;
        let mut v = [0.0; 4];
        for (slot, tok) in v.iter_mut().zip(&fields[1..]) {
            *slot = tok.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("`{tok}` is not a number"),
            })?;
            if !slot.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("`{tok}` is not finite"),
                });
            }
        }
        let cx = unit(v[0], "cx", line)?;
        let cy = unit(v[1], "cy", line)?;
        let w = unit(v[2], "w", line)?;
        let h = unit(v[3], "h", line)?;
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::Range {
                line,
                msg: format!("box size {w}×{h} must be positive"),
            });
        }
        // the extents must stay inside the unit square, up to the tolerance
        let x1 = unit(cx - 0.5 * w, "left edge", line)?;
        let x2 = unit(cx + 0.5 * w, "right edge", line)?;
        let y1 = unit(cy - 0.5 * h, "top edge", line)?;
        let y2 = unit(cy + 0.5 * h, "bottom edge", line)?;
        let inside = cx - 0.5 * w >= 0.0 && cx + 0.5 * w <= 1.0 && cy - 0.5 * h >= 0.0 && cy + 0.5 * h <= 1.0;
        out.push(if inside {
            GroundTruth { class_id, cx, cy, w, h }
        } else {
            GroundTruth {
                class_id,
                cx: 0.5 * (x1 + x2),
                cy: 0.5 * (y1 + y2),
                w: x2 - x1,
                h: y2 - y1,
            }
        });
    }
    Ok(out)
}

/// Six-decimal text form read back by [`parse_yolo_labels`].
pub fn serialize_yolo_labels(gts: &[GroundTruth]) -> String {
    let mut s = String::new();
    for g in gts {
        writeln!(s, "{} {:.6} {:.6} {:.6} {:.6}", g.class_id, g.cx, g.cy, g.w, g.h).expect("string write");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_record() {
        let g = parse_yolo_labels("0 0.5 0.5 0.1 0.1\n").unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].class_id, 0);
        assert!((g[0].cx - 0.5).abs() < 1e-12 && (g[0].w - 0.1).abs() < 1e-12);
    }

    #[test]
    fn tolerance_clamps_then_rejects() {
        let g = parse_yolo_labels("0 0.5 0.5 1.0000005 0.2").unwrap();
        assert!(g[0].w <= 1.0);
        assert!(matches!(
            parse_yolo_labels("\n0 0.5 0.5 1.01 0.2"),
            Err(Error::Range { line: 2, .. })
        ));
    }

    #[test]
    fn pixel_round_trip() {
        let b = BBox::new(10.0, 20.0, 16.0, 30.0);
        let g = GroundTruth::from_pixels(&b, 0, 96, 96);
        let back = g.to_pixels(96).bbox;
        for (p, q) in b.as_array().iter().zip(back.as_array()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
