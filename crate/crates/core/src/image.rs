//! Row-major raster types and PGM/PPM encoding.

use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("bad PGM data: {0}")]
    BadPgm(String),
    #[error("size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Binary foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

/// Inclusive pixel bounds of a mask's foreground.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskBounds {
    /// Upper (smallest row).
    pub u: usize,
    /// Lower (largest row).
    pub d: usize,
    pub l: usize,
    pub r: usize,
}

impl MaskImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|b| *b)
    }

    /// Tightest inclusive bounds of the foreground.
    pub fn bounds(&self) -> Result<MaskBounds, ImageError> {
        mask_bounds(self)
    }

    /// Mean pixel-center coordinate `(x, y)` of foreground pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            for (x, _) in row.iter().enumerate().filter(|(_, b)| **b) {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1;
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn iou(&self, other: &MaskImage) -> f64 {
        let (mut inter, mut uni) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += (*a && *b) as usize;
            uni += (*a || *b) as usize;
        }
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    pub fn union(&self, other: &MaskImage) -> MaskImage {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a || *b)
            .collect();
        MaskImage { data, ..*self }
    }

    pub fn is_superset_of(&self, other: &MaskImage) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| *a || !*b)
    }

    /// Single-channel image with 1.0 for foreground.
    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self
                .data
                .iter()
                .map(|b| if *b { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Foreground where channel 0 of `img` is at least `threshold`.
    pub fn from_image(img: &Image, threshold: f64) -> MaskImage {
        let data = (0..img.width * img.height)
            .map(|i| img.data[i * img.channels] >= threshold)
            .collect();
        MaskImage {
            width: img.width,
            height: img.height,
            data,
        }
    }

    /// P5, 8-bit, foreground 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|b| if *b { 255u8 } else { 0 }));
        out
    }

    /// Reads an 8- or 16-bit P5 file; any nonzero sample is foreground.
    pub fn from_pgm(bytes: &[u8]) -> Result<MaskImage, ImageError> {
        let (w, h, maxval, body) = parse_pgm_header(bytes)?;
        let bpp = if maxval > 255 { 2 } else { 1 };
        if body.len() < w * h * bpp {
            return Err(ImageError::BadPgm("truncated pixel data".into()));
        }
        let data = (0..w * h)
            .map(|i| body[i * bpp..(i + 1) * bpp].iter().any(|b| *b != 0))
            .collect();
        Ok(MaskImage {
            width: w,
            height: h,
            data,
        })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), ImageError> {
        write_file(path, &self.to_pgm())
    }

    pub fn read_pgm(path: &Path) -> Result<MaskImage, ImageError> {
        Self::from_pgm(&std::fs::read(path)?)
    }
}

/// Inclusive foreground bounds, `EmptyMask` when there is no foreground.
pub fn mask_bounds(mask: &MaskImage) -> Result<MaskBounds, ImageError> {
    let mut b: Option<MaskBounds> = None;
    for y in 0..mask.height {
        let row = &mask.data[y * mask.width..(y + 1) * mask.width];
        let Some(first) = row.iter().position(|v| *v) else {
            continue;
        };
        let last = row.iter().rposition(|v| *v).unwrap_or(first);
        b = Some(match b {
            None => MaskBounds {
                u: y,
                d: y,
                l: first,
                r: last,
            },
            Some(m) => MaskBounds {
                u: m.u,
                d: y,
                l: m.l.min(first),
                r: m.r.max(last),
            },
        });
    }
    b.ok_or(ImageError::EmptyMask)
}

/// Depth map in meters; 0 marks background.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn to_mask(&self) -> MaskImage {
        MaskImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|d| *d > 0.0).collect(),
        }
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.clone(),
        }
    }

    /// P5, 16-bit big-endian millimeters (rounded, saturating at 65535).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for d in &self.data {
            let mm = (d * 1000.0).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&mm.to_be_bytes());
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), ImageError> {
        write_file(path, &self.to_pgm())
    }
}

/// Interleaved multi-channel floating-point image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn channel(&self, c: usize) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self
                .data
                .iter()
                .skip(c)
                .step_by(self.channels)
                .copied()
                .collect(),
        }
    }

    /// Concatenates channels of same-sized images.
    pub fn stack(images: &[&Image]) -> Result<Image, ImageError> {
        let first = images
            .first()
            .ok_or_else(|| ImageError::BadPgm("nothing to stack".into()))?;
        for im in images {
            if im.width != first.width || im.height != first.height {
                return Err(ImageError::SizeMismatch(
                    first.width,
                    first.height,
                    im.width,
                    im.height,
                ));
            }
        }
        let channels = images.iter().map(|i| i.channels).sum();
        let mut data = Vec::with_capacity(first.width * first.height * channels);
        for p in 0..first.width * first.height {
            for im in images {
                data.extend_from_slice(&im.data[p * im.channels..(p + 1) * im.channels]);
            }
        }
        Ok(Image {
            width: first.width,
            height: first.height,
            channels,
            data,
        })
    }

    /// Debug dump: 1 channel as P5, 3 channels as P6; values clamped to [0, 1].
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let ch = if self.channels == 3 { 3 } else { 1 };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in 0..self.width * self.height {
            for c in 0..ch {
                let v = self.data[p * self.channels + c];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ImageError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn parse_pgm_header(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8]), ImageError> {
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(ImageError::BadPgm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(ImageError::BadPgm(format!(
            "unsupported magic {}",
            fields[0]
        )));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| ImageError::BadPgm(format!("bad header field `{s}`")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(ImageError::BadPgm(format!("bad maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((w, h, maxval, bytes.get(i + 1..).unwrap_or(&[])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_examples() {
        let mut m = MaskImage::new(64, 32);
        m.set(10, 20, true);
        assert_eq!(
            mask_bounds(&m).unwrap(),
            MaskBounds {
                u: 20,
                d: 20,
                l: 10,
                r: 10
            }
        );
        let full = MaskImage {
            width: 640,
            height: 480,
            data: vec![true; 640 * 480],
        };
        assert_eq!(
            mask_bounds(&full).unwrap(),
            MaskBounds {
                u: 0,
                d: 479,
                l: 0,
                r: 639
            }
        );
        assert!(matches!(
            mask_bounds(&MaskImage::new(4, 4)),
            Err(ImageError::EmptyMask)
        ));
    }

    #[test]
    fn mask_pgm_golden() {
        let mut m = MaskImage::new(3, 2);
        m.set(0, 0, true);
        m.set(2, 1, true);
        let expected: &[u8] = b"P5\n3 2\n255\n\xff\x00\x00\x00\x00\xff";
        assert_eq!(m.to_pgm(), expected);
        assert_eq!(MaskImage::from_pgm(expected).unwrap(), m);
    }

    #[test]
    fn depth_pgm_golden() {
        let d = DepthImage {
            width: 2,
            height: 1,
            data: vec![0.0, 1.5],
        };
        let expected: &[u8] = b"P5\n2 1\n65535\n\x00\x00\x05\xdc";
        assert_eq!(d.to_pgm(), expected);
        let m = MaskImage::from_pgm(expected).unwrap();
        assert_eq!(m.data, vec![false, true]);
    }

    #[test]
    fn pgm_header_with_comment() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x00\x07";
        assert_eq!(MaskImage::from_pgm(bytes).unwrap().data, vec![false, true]);
        assert!(MaskImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(MaskImage::from_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn stack_and_channel() {
        let a = Image::from_fn(3, 2, 1, |x, y, _| (x + 10 * y) as f64);
        let b = Image::from_fn(3, 2, 2, |x, y, c| (x * y + c) as f64);
        let s = Image::stack(&[&a, &b]).unwrap();
        assert_eq!(s.channels, 3);
        assert_eq!(s.channel(0), a);
        assert_eq!(s.channel(2), b.channel(1));
    }
}
