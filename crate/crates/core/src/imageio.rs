//! PNG files to `(3, H, W)` arrays in `[-1, 1]` and back.

use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};

use crate::error::{shape_err, Error, Result};
use crate::patch_pipeline::Mask;
use crate::tensor::Array;

pub fn rgb_to_array(img: &RgbImage) -> Array<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = p.0[c] as f32 / 127.5 - 1.0;
        }
    }
    Array::from_vec(&[3, h, w], data).expect("consistent size")
}

/// Values are clamped to `[-1, 1]` and rounded to 8 bits.
pub fn array_to_rgb(a: &Array<f32>) -> Result<RgbImage> {
    let [c, h, w] = *a.shape() else {
        return Err(shape_err!("expected (3,H,W), got {:?}", a.shape()));
    };
    if c != 3 {
        return Err(shape_err!("expected 3 channels, got {c}"));
    }
    let d = a.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb(std::array::from_fn(|ch| to_u8(d[ch * h * w + i])))
    }))
}

fn to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let img = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?;
    Ok(img.to_rgb8())
}

pub fn read_patch(path: &Path) -> Result<Array<f32>> {
    Ok(rgb_to_array(&read_rgb(path)?))
}

/// Any pixel with luma above 127 is set.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let gray = read_rgb(path).map(|rgb| image::DynamicImage::ImageRgb8(rgb).to_luma8())?;
    Ok(Mask::from_bits(
        gray.height() as usize,
        gray.width() as usize,
        gray.pixels().map(|p| p.0[0] > 127).collect(),
    ))
}

pub fn mask_to_gray(m: &Mask) -> GrayImage {
    GrayImage::from_fn(m.width() as u32, m.height() as u32, |x, y| {
        image::Luma([if m.get(y as usize, x as usize) { 255 } else { 0 }])
    })
}

pub fn write_png<P, C>(path: &Path, img: &image::ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
}

/// Two equally sized images next to each other.
pub fn side_by_side(left: &RgbImage, right: &RgbImage) -> RgbImage {
    let (w, h) = left.dimensions();
    let mut out = RgbImage::new(w + right.width(), h.max(right.height()));
    image::imageops::replace(&mut out, left, 0, 0);
    image::imageops::replace(&mut out, right, w as i64, 0);
    out
}
