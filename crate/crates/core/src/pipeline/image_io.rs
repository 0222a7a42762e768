use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use super::{ImageRecord, Label};
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor4;

fn ingest_err(path: &Path, reason: impl ToString) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Decode a PNG/PGM/PPM file, scale values into `[0,1]`, and resize to
/// `target × target` with bilinear interpolation. Grayscale sources keep
/// one channel; everything else becomes RGB.
pub fn load_and_resize(path: &Path, target: usize) -> Result<ImageRecord> {
    let img = ImageReader::open(path)
        .map_err(|e| ingest_err(path, e))?
        .with_guessed_format()
        .map_err(|e| ingest_err(path, e))?
        .decode()
        .map_err(|e| ingest_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(ingest_err(path, "zero-sized image"));
    }
    let grayscale = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let pixels = if grayscale {
        let g = img.to_luma32f();
        Tensor4::from_vec([1, 1, h, w], g.into_raw())?
    } else {
        let rgb = img.to_rgb32f().into_raw();
        let mut data = vec![0.0f32; 3 * h * w];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = px[c];
            }
        }
        Tensor4::from_vec([1, 3, h, w], data)?
    };
    let pixels = pixels.map(|v| v.clamp(0.0, 1.0));
    let resized = resize_bilinear(&pixels, target, target)?;
    Ok(ImageRecord::new(
        path.display().to_string(),
        resized,
        Label::Unknown,
    ))
}

/// Bilinear resize with half-pixel centres and edge clamping. Same-size
/// resizes return the input unchanged.
pub fn resize_bilinear(src: &Tensor4, out_h: usize, out_w: usize) -> Result<Tensor4> {
    let [n, c, h, w] = src.dims();
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(contract("resize of zero-sized image"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(src.clone());
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let mut out = Tensor4::zeros([n, c, out_h, out_w]);
    for b in 0..n {
        for ch in 0..c {
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let p00 = src.get(b, ch, y0, x0) as f64;
                    let p01 = src.get(b, ch, y0, x1) as f64;
                    let p10 = src.get(b, ch, y1, x0) as f64;
                    let p11 = src.get(b, ch, y1, x1) as f64;
                    let top = p00 + (p01 - p00) * fx;
                    let bot = p10 + (p11 - p10) * fx;
                    out.set(b, ch, oy, ox, (top + (bot - top) * fy) as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Write a `(1, c, H, W)` image in `[0,1]` as an 8-bit PNG (or PGM/PPM by
/// extension).
pub fn save_image(pixels: &Tensor4, path: &Path) -> Result<()> {
    let [n, c, h, w] = pixels.dims();
    if n != 1 || !(c == 1 || c == 3) {
        return Err(contract(format!("cannot save image tensor of dims {:?}", pixels.dims())));
    }
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let hw = h * w;
    let data = pixels.item(0);
    let res = if c == 1 {
        GrayImage::from_raw(w as u32, h as u32, data.iter().map(|&v| q(v)).collect())
            .expect("buffer size")
            .save(path)
    } else {
        let mut raw = Vec::with_capacity(3 * hw);
        for i in 0..hw {
            for ch in 0..3 {
                raw.push(q(data[ch * hw + i]));
            }
        }
        RgbImage::from_raw(w as u32, h as u32, raw)
            .expect("buffer size")
            .save(path)
    };
    res.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => ingest_err(path, other),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_resize_is_noop() {
        let t = Tensor4::from_vec([1, 1, 3, 3], (0..9).map(|v| v as f32 / 9.0).collect()).unwrap();
        assert_eq!(resize_bilinear(&t, 3, 3).unwrap(), t);
    }

    #[test]
    fn constant_image_stays_constant() {
        let t = Tensor4::filled([1, 3, 7, 5], 0.3);
        let r = resize_bilinear(&t, 12, 4).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
    }

    #[test]
    fn checkerboard_downsample_matches_formula() {
        // 4×4 checkerboard → 2×2: each output samples source coordinate
        // (o + 0.5)·2 − 0.5 ∈ {0.5, 2.5}, i.e. the mean of a 2×2 block.
        let data = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f32).collect();
        let t = Tensor4::from_vec([1, 1, 4, 4], data).unwrap();
        let r = resize_bilinear(&t, 2, 2).unwrap();
        assert_eq!(r.data(), &[0.5; 4]);

        // Horizontal ramp 0..3 → 2 wide samples at x = 0.5 and 2.5.
        let ramp = Tensor4::from_vec([1, 1, 1, 4], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(resize_bilinear(&ramp, 1, 2).unwrap().data(), &[0.5, 2.5]);
        // Upsampling 2 → 4 samples at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
        let two = Tensor4::from_vec([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(resize_bilinear(&two, 1, 4).unwrap().data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn png_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..3 * 4 * 6).map(|i| (i % 256) as f32 / 255.0).collect();
        let t = Tensor4::from_vec([1, 3, 4, 6], data).unwrap();
        let p = dir.path().join("x.png");
        save_image(&t, &p).unwrap();
        let back = load_and_resize(&p, 6);
        // non-square source resized to square target
        let back = back.unwrap();
        assert_eq!(back.pixels.dims(), [1, 3, 6, 6]);

        let g = Tensor4::filled([1, 1, 8, 8], 128.0 / 255.0);
        let pg = dir.path().join("g.pgm");
        save_image(&g, &pg).unwrap();
        let back = load_and_resize(&pg, 8).unwrap();
        assert_eq!(back.channels(), 1);
        assert_eq!(back.pixels, g);

        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"not an image").unwrap();
        assert!(matches!(load_and_resize(&bad, 8), Err(Error::Ingestion { .. })));
        assert!(matches!(
            load_and_resize(&dir.path().join("missing.png"), 8),
            Err(Error::Ingestion { .. })
        ));
    }
}
