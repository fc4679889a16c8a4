//! Static parameter and operation accounting.
//!
//! A multiply-accumulate counts as two operations. Normalization layers
//! contribute `2c` parameters and no operations; global pooling contributes
//! one operation per input element; activations are free.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// One primitive layer as seen by the accountant.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv {
        c_in: usize,
        c_out: usize,
        k: usize,
        groups: usize,
        bias: bool,
        h_out: usize,
        w_out: usize,
    },
    BatchNorm {
        c: usize,
    },
    /// Global or channel-wise reduction over `numel` input elements.
    Pool {
        numel: usize,
    },
    /// Elementwise add or multiply producing `numel` values.
    Elementwise {
        numel: usize,
    },
    /// Multiply by one learned scalar.
    Scale {
        numel: usize,
    },
    /// Four-corner interpolation gathering `k` points per channel and location.
    Bilinear {
        c: usize,
        k: usize,
        h_out: usize,
        w_out: usize,
    },
    /// Data movement only (activation, concat, shuffle, dropout, upsample).
    Free,
    /// A layer with no accounting rule.
    Opaque,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    pub note: Option<String>,
}

impl LayerDesc {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerDesc {
            name: name.into(),
            kind,
            note: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// `(params, flops)` of a 2-D convolution.
pub fn count_conv(
    c_in: usize,
    c_out: usize,
    k: usize,
    h_out: usize,
    w_out: usize,
    groups: usize,
    bias: bool,
) -> (u64, u64) {
    let weights = (k * k * c_in * c_out / groups) as u64;
    let plane = (h_out * w_out) as u64;
    let mut params = weights;
    let mut flops = 2 * weights * plane;
    if bias {
        params += c_out as u64;
        flops += c_out as u64 * plane;
    }
    (params, flops)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PConvCost {
    pub params: u64,
    pub flops: u64,
    pub std_flops: u64,
    pub ratio_vs_std: f64,
}

/// Number of convolved channels of a partial convolution.
pub fn partial_channels(c: usize, r: f64) -> usize {
    (r * c as f64).ceil() as usize
}

/// A `k×k` convolution over the first `⌈r·c⌉` channels compared with the
/// same convolution over all `c` channels.
pub fn count_pconv(c: usize, r: f64, k: usize, h: usize, w: usize) -> Result<PConvCost> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Config(format!("partial ratio {r} outside (0, 1]")));
    }
    let cp = partial_channels(c, r);
    let (params, flops) = count_conv(cp, cp, k, h, w, 1, false);
    let (_, std_flops) = count_conv(c, c, k, h, w, 1, false);
    Ok(PConvCost {
        params,
        flops,
        std_flops,
        ratio_vs_std: flops as f64 / std_flops as f64,
    })
}

/// `(params, flops)` of a single layer.
/// Per-image parameter and operation totals of a whole detector.
pub fn count_model(model: &crate::detector::Model) -> Result<CostReport> {
    CostReport::tally(&model.describe()?)
}

pub fn layer_cost(kind: &LayerKind) -> Result<(u64, u64)> {
    Ok(match *kind {
        LayerKind::Conv {
            c_in,
            c_out,
            k,
            groups,
            bias,
            h_out,
            w_out,
        } => count_conv(c_in, c_out, k, h_out, w_out, groups, bias),
        LayerKind::BatchNorm { c } => (2 * c as u64, 0),
        LayerKind::Pool { numel } | LayerKind::Elementwise { numel } => (0, numel as u64),
        LayerKind::Scale { numel } => (1, numel as u64),
        LayerKind::Bilinear { c, k, h_out, w_out } => (0, 8 * (c * k * h_out * w_out) as u64),
        LayerKind::Free => (0, 0),
        LayerKind::Opaque => {
            return Err(Error::Accounting("layer has no accounting rule".into()));
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostRow {
    pub name: String,
    pub params: u64,
    pub flops: u64,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_flops: u64,
}

impl CostReport {
    /// Costs every layer; free layers are dropped from the rows.
    pub fn tally(layers: &[LayerDesc]) -> Result<Self> {
        let mut report = CostReport::default();
        for l in layers {
            let (params, flops) = layer_cost(&l.kind)
                .map_err(|_| Error::Accounting(format!("layer {} has no accounting rule", l.name)))?;
            if params == 0 && flops == 0 && l.note.is_none() {
                continue;
            }
            report.total_params += params;
            report.total_flops += flops;
            report.rows.push(CostRow {
                name: l.name.clone(),
                params,
                flops,
                note: l.note.clone(),
            });
        }
        Ok(report)
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>12}  {:>16}  note", "layer", "params", "flops");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>12}  {:>16}  {}",
                r.name,
                r.params,
                r.flops,
                r.note.as_deref().unwrap_or("")
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>12}  {:>16}",
            "total", self.total_params, self.total_flops
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,params,flops,note\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.name,
                r.params,
                r.flops,
                r.note.as_deref().unwrap_or("")
            );
        }
        let _ = writeln!(s, "total,{},{},", self.total_params, self.total_flops);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_counts() {
        assert_eq!(count_conv(16, 32, 3, 1, 1, 1, false).0, 4608);
        assert_eq!(count_conv(8, 8, 1, 5, 5, 8, false).0, 8);
        let (_, f1) = count_conv(4, 6, 3, 2, 3, 1, true);
        let (_, f2) = count_conv(4, 6, 3, 4, 3, 1, true);
        assert_eq!(2 * f1, f2);
        // bias adds c_out params and one add per output element
        assert_eq!(count_conv(2, 3, 1, 2, 2, 1, true), (9, 2 * 6 * 4 + 12));
    }

    #[test]
    fn pconv_ratio() {
        let c = count_pconv(8, 0.25, 3, 10, 10).unwrap();
        assert_eq!(c.params, 36);
        assert_eq!(count_conv(8, 8, 3, 1, 1, 1, false).0, 576);
        assert_eq!(c.ratio_vs_std, 1.0 / 16.0);
        assert_eq!(count_pconv(12, 1.0, 3, 4, 4).unwrap().ratio_vs_std, 1.0);
        assert!(count_pconv(8, 0.0, 3, 4, 4).is_err());
    }

    #[test]
    fn opaque_layers_fail_and_totals_sum() {
        let layers = vec![
            LayerDesc::new("a", LayerKind::BatchNorm { c: 4 }),
            LayerDesc::new("b", LayerKind::Opaque),
        ];
        assert!(matches!(CostReport::tally(&layers), Err(Error::Accounting(_))));
        let layers = vec![
            LayerDesc::new("a", LayerKind::BatchNorm { c: 4 }),
            LayerDesc::new("act", LayerKind::Free),
            LayerDesc::new("g", LayerKind::Elementwise { numel: 10 }),
        ];
        let r = CostReport::tally(&layers).unwrap();
        assert_eq!((r.total_params, r.total_flops), (8, 10));
        assert_eq!(r.rows.len(), 2);
        assert!(CostReport::tally(&[]).unwrap().rows.is_empty());
        assert!(r.to_csv().ends_with("total,8,10,\n"));
    }
}
