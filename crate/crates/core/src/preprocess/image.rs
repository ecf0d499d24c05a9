//! 8-bit RGB images, PNG I/O, rotation and Sobel edge maps.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side length of the square edge images fed to the networks.
pub const CROP: usize = 200;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Rotation by `quarter_turns` × 90° counter-clockwise.
    pub fn rotate(&self, quarter_turns: usize) -> RawImage {
        let (w, h) = (self.width, self.height);
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => RawImage::from_fn(h, w, |x, y| self.pixel(w - 1 - y, x)),
            2 => RawImage::from_fn(w, h, |x, y| self.pixel(w - 1 - x, h - 1 - y)),
            _ => RawImage::from_fn(h, w, |x, y| self.pixel(y, h - 1 - x)),
        }
    }

    /// Luma with weights 0.299 / 0.587 / 0.114, in [0, 255].
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::format(path, "image too large"))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::format(path, e.to_string()))?;
        buf.truncate(info.buffer_size());
        let (w, h) = (info.width as usize, info.height as usize);
        let data = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => buf
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&v| [v, v, v]).collect(),
            png::ColorType::GrayscaleAlpha => buf
                .chunks_exact(2)
                .flat_map(|p| [p[0], p[0], p[0]])
                .collect(),
            png::ColorType::Indexed => {
                return Err(Error::format(path, "unexpanded palette image"));
            }
        };
        RawImage::new(w, h, data).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::format(path, e.to_string()))?;
        writer
            .write_image_data(&self.data)
            .map_err(|e| Error::format(path, e.to_string()))?;
        writer.finish().map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Sobel gradient magnitude of a crop, rescaled per image to [-1, 1].
///
/// The 3×3 stencil reads neighbouring pixels outside the crop when the
/// image has them and replicates the image border otherwise. A crop with no
/// gradient maps to -1 everywhere. Returns a `[1, 200, 200]` tensor.
pub fn edge_extract(img: &RawImage, left: usize, top: usize) -> Result<Tensor> {
    if left + CROP > img.width || top + CROP > img.height {
        return Err(Error::InvalidArgument(format!(
            "crop at ({left}, {top}) exceeds {}x{} image",
            img.width, img.height
        )));
    }
    // Luma of the crop plus a one-pixel frame.
    let side = CROP + 2;
    let mut luma = vec![0.0; side * side];
    for fy in 0..side {
        let y = (top + fy).saturating_sub(1).min(img.height - 1);
        for fx in 0..side {
            let x = (left + fx).saturating_sub(1).min(img.width - 1);
            let [r, g, b] = img.pixel(x, y);
            luma[fy * side + fx] = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
        }
    }
    let at = |x: usize, y: usize| luma[y * side + x];
    let mut mag = vec![0.0; CROP * CROP];
    for y in 0..CROP {
        for x in 0..CROP {
            let (cx, cy) = (x + 1, y + 1);
            let gx = (at(cx + 1, cy - 1) + 2.0 * at(cx + 1, cy) + at(cx + 1, cy + 1))
                - (at(cx - 1, cy - 1) + 2.0 * at(cx - 1, cy) + at(cx - 1, cy + 1));
            let gy = (at(cx - 1, cy + 1) + 2.0 * at(cx, cy + 1) + at(cx + 1, cy + 1))
                - (at(cx - 1, cy - 1) + 2.0 * at(cx, cy - 1) + at(cx + 1, cy - 1));
            mag[y * CROP + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    let lo = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in &mut mag {
        *v = if span > 0.0 { 2.0 * (*v - lo) / span - 1.0 } else { -1.0 };
    }
    Tensor::new(vec![1, CROP, CROP], mag)
}

/// Evenly spaced crop offsets `⌊i·(extent − 200)/3⌋`, i = 0..4.
pub fn crop_offsets(extent: usize) -> Result<[usize; 4]> {
    let room = extent.checked_sub(CROP).ok_or_else(|| {
        Error::InvalidArgument(format!("image side {extent} is smaller than {CROP}"))
    })?;
    Ok([0, room / 3, 2 * room / 3, room])
}

/// Number of variants produced by [`augment`].
pub const AUGMENTATIONS: usize = 64;

/// `(quarter_turns, left, top)` of augmentation `id` for a `width × height`
/// source. Ids are rotation-major, then row-major over crop corners.
pub fn augmentation_geometry(width: usize, height: usize, id: usize) -> Result<(usize, usize, usize)> {
    if id >= AUGMENTATIONS {
        return Err(Error::InvalidArgument(format!("augmentation id {id} >= 64")));
    }
    let rot = id / 16;
    let (w, h) = if rot.is_multiple_of(2) { (width, height) } else { (height, width) };
    let xs = crop_offsets(w)?;
    let ys = crop_offsets(h)?;
    Ok((rot, xs[id % 4], ys[(id / 4) % 4]))
}

/// Edge maps for the given augmentation ids.
pub fn augment_subset(img: &RawImage, ids: &[usize]) -> Result<Vec<Tensor>> {
    let mut rotated: [Option<RawImage>; 4] = Default::default();
    ids.iter()
        .map(|&id| {
            let (rot, left, top) = augmentation_geometry(img.width, img.height, id)?;
            let r = rotated[rot].get_or_insert_with(|| img.rotate(rot));
            edge_extract(r, left, top)
        })
        .collect()
}

/// All 64 rotation × crop edge maps in id order.
pub fn augment(img: &RawImage) -> Result<Vec<Tensor>> {
    let ids: Vec<usize> = (0..AUGMENTATIONS).collect();
    augment_subset(img, &ids)
}
