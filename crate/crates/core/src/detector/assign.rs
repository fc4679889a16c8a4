use super::boxes::BBox;
use super::model::ModelConfig;
use crate::error::{Error, Result};

/// A ground-truth box in pixels with its class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledBox {
    pub bbox: BBox,
    pub class: usize,
}

/// One positive head cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Target {
    pub scale: usize,
    pub row: usize,
    pub col: usize,
    /// Index into the ground-truth list.
    pub gt: usize,
    pub class: usize,
    pub bbox: BBox,
}

/// Positive cells of one image; every other cell is background.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    pub targets: Vec<Target>,
}

impl Assignment {
    pub fn at(&self, scale: usize, row: usize, col: usize) -> Option<&Target> {
        self.targets
            .iter()
            .find(|t| t.scale == scale && t.row == row && t.col == col)
    }
}

/// Scale whose size range `[2·stride, 8·stride)` holds `size`. Below every
/// range picks the finest scale, above every range the coarsest; in the
/// (overlapping) default ranges the finest matching scale wins.
pub fn scale_for_size(size: f64, strides: &[usize]) -> usize {
    if let Some(i) = strides
        .iter()
        .position(|&s| size >= 2.0 * s as f64 && size < 8.0 * s as f64)
    {
        return i;
    }
    strides
        .iter()
        .rposition(|&s| size >= 2.0 * s as f64)
        .unwrap_or(0)
}

/// Maps every box to one cell: the cell containing its center on the scale
/// chosen by size. When two boxes share a cell, the larger area keeps it.
pub fn assign_targets(gts: &[LabeledBox], cfg: &ModelConfig) -> Result<Assignment> {
    let mut targets: Vec<Target> = Vec::with_capacity(gts.len());
    for (gi, gt) in gts.iter().enumerate() {
        let b = gt.bbox;
        if !b.is_valid() || b.area() <= 0.0 {
            return Err(Error::DegenerateBox(format!("ground truth {gi} has zero area: {b:?}")));
        }
        if gt.class >= cfg.num_classes {
            return Err(Error::Data(format!("ground truth {gi} has class {} of {}", gt.class, cfg.num_classes)));
        }
        let scale = scale_for_size(b.width().max(b.height()), &cfg.strides);
        let stride = cfg.strides[scale] as f64;
        let g = cfg.grid(scale);
        let cell = |v: f64| ((v / stride).floor().max(0.0) as usize).min(g - 1);
        let t = Target {
            scale,
            row: cell(b.cy()),
            col: cell(b.cx()),
            gt: gi,
            class: gt.class,
            bbox: b,
        };
        match targets
            .iter_mut()
            .find(|o| o.scale == t.scale && o.row == t.row && o.col == t.col)
        {
            Some(o) if t.bbox.area() > o.bbox.area() => *o = t,
            Some(_) => {}
            None => targets.push(t),
        }
    }
    Ok(Assignment { targets })
}
