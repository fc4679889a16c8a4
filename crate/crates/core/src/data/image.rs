use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// 8-bit quantised copy, as stored on disk.
    pub fn quantized(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.to_bytes().into_iter().map(|b| b as f64 / 255.0).collect(),
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Binary 8-bit PGM (`P5`).
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("PGM: {m}"));
        let mut pos = 0;
        let mut token = || -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token()? != "P5" {
            return Err(bad("not a binary graymap"));
        }
        let num = |t: String| t.parse::<usize>().map_err(|_| bad("bad header number"));
        let width = num(token()?)?;
        let height = num(token()?)?;
        let maxval = num(token()?)?;
        if maxval == 0 || maxval > 255 {
            return Err(bad("only 8-bit maxval supported"));
        }
        // exactly one whitespace byte separates the header from the raster
        let start = pos + 1;
        let raster = bytes
            .get(start..start + width * height)
            .ok_or_else(|| bad("truncated raster"))?;
        Ok(GrayImage {
            width,
            height,
            data: raster.iter().map(|&b| b as f64 / maxval as f64).collect(),
        })
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_pgm(&bytes)
    }
}

/// Stacks equally sized images into `(n, 1, h, w)`.
pub fn images_to_tensor(images: &[&GrayImage]) -> Result<Tensor4> {
    let first = images.first().ok_or_else(|| Error::Data("no images to batch".into()))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * w * h);
    for im in images {
        if im.width != w || im.height != h {
            return Err(Error::Dimension(format!(
                "image {}×{} in a batch of {w}×{h}",
                im.width, im.height
            )));
        }
        data.extend_from_slice(&im.data);
    }
    Tensor4::from_vec(Shape4::new(images.len(), 1, h, w), data)
}
