//! 8-bit PNG reading and writing for SAR (grayscale) and optical (RGB) images.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};
use s2o_core::data::{denormalize_u8, normalize_u8};
use s2o_core::Tensor;

use crate::error::{CliError, CliResult};

/// Decoded 8-bit raster with `channels` interleaved samples per pixel.
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

pub fn read_png(path: &Path) -> CliResult<Raster> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| CliError::io(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| CliError::io(path, "image too large"))?;
    let mut pixels = vec![0; size];
    let info = reader.next_frame(&mut pixels).map_err(|e| CliError::io(path, e))?;
    pixels.truncate(info.buffer_size());
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(CliError::io(path, "palette image was not expanded")),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    if info.line_size != width * channels {
        return Err(CliError::io(path, "unexpected row padding"));
    }
    Ok(Raster { width, height, channels, pixels })
}

/// `[C, H, W]` tensor in `[-1, 1]` from the first `c` channels of `r`.
fn planes(r: &Raster, c: usize) -> Tensor<f64> {
    let (h, w) = (r.height, r.width);
    Tensor::from_fn([c, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        normalize_u8(r.pixels[p * r.channels + ch])
    })
}

/// Grayscale image as `[1, H, W]`.
pub fn read_gray(path: &Path) -> CliResult<Tensor<f64>> {
    let r = read_png(path)?;
    match r.channels {
        1 | 2 => Ok(planes(&r, 1)),
        n => Err(CliError::io(path, format!("expected a grayscale image, found {n} channels"))),
    }
}

/// Color image as `[3, H, W]`; an alpha channel is ignored.
pub fn read_rgb(path: &Path) -> CliResult<Tensor<f64>> {
    let r = read_png(path)?;
    match r.channels {
        3 | 4 => Ok(planes(&r, 3)),
        n => Err(CliError::io(path, format!("expected an RGB image, found {n} channels"))),
    }
}

/// Writes a `[1, H, W]` or `[3, H, W]` tensor with values in `[-1, 1]`.
pub fn write_png(path: &Path, img: &Tensor<f64>) -> CliResult<()> {
    let (c, h, w) = match *img.shape() {
        [c @ (1 | 3), h, w] | [1, c @ (1 | 3), h, w] => (c, h, w),
        ref s => return Err(CliError::io(path, format!("cannot write tensor of shape {s:?} as an image"))),
    };
    let mut pixels = vec![0u8; c * h * w];
    for (i, &v) in img.data().iter().enumerate() {
        let (ch, p) = (i / (h * w), i % (h * w));
        pixels[p * c + ch] = denormalize_u8(v);
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 1 { ColorType::Grayscale } else { ColorType::Rgb });
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| CliError::io(path, e))?;
    writer.write_image_data(&pixels).map_err(|e| CliError::io(path, e))?;
    writer.finish().map_err(|e| CliError::io(path, e))
}

/// Quantizes to the 8-bit grid that a PNG round trip would produce.
pub fn quantize(img: &Tensor<f64>) -> Tensor<f64> {
    img.map(|v| normalize_u8(denormalize_u8(v)))
}
