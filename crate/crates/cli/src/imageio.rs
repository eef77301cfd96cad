//! Image ingestion and frame rendering.
//!
//! Orientation convention: image row 0 maps to the top of the domain
//! (`x2 = +L`), image columns run along `x1`. Fields are indexed
//! `[i, j] = (x1, x2)`, so pixel `(row, col)` corresponds to
//! `grid[col][N-1-row]`.

use std::path::Path;

use anyhow::{bail, Context};
use image::{DynamicImage, GrayImage, ImageReader, Rgb, RgbImage};
use ndarray::Array2;

use phasereg::contour::extract_polylines;
use phasereg::Grid;

/// Loads an 8/16-bit grayscale PNG or PGM, resamples it to `n x n` by
/// nearest neighbor, and thresholds at 128 to `{0, 1}`. In soft mode the
/// grayscale values are kept as `[0, 1]` instead.
pub fn load_image(path: &Path, n: usize, soft: bool) -> anyhow::Result<Grid> {
    let img = ImageReader::open(path)
        .with_context(|| format!("cannot open image {}", path.display()))?
        .decode()
        .with_context(|| format!("cannot decode image {}", path.display()))?;
    let gray: GrayImage = match img {
        DynamicImage::ImageLuma8(g) => g,
        DynamicImage::ImageLuma16(g) => DynamicImage::ImageLuma16(g).into_luma8(),
        DynamicImage::ImageLumaA8(g) => DynamicImage::ImageLumaA8(g).into_luma8(),
        DynamicImage::ImageLumaA16(g) => DynamicImage::ImageLumaA16(g).into_luma8(),
        _ => bail!(
            "{} is a color image; convert to grayscale first",
            path.display()
        ),
    };
    let (w, h) = gray.dimensions();
    let sample = |dst: usize, dst_len: usize, src_len: u32| -> u32 {
        let t = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64).floor();
        (t as u32).min(src_len - 1)
    };
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        let col = sample(i, n, w);
        let row = sample(n - 1 - j, n, h);
        let v = gray.get_pixel(col, row).0[0];
        if soft {
            v as f64 / 255.0
        } else if v >= 128 {
            1.0
        } else {
            0.0
        }
    }))
}

/// Writes a field in `[0, 1]` as an 8-bit grayscale PNG. Binary fields
/// round-trip exactly through [`load_image`].
pub fn save_field_png(field: &Grid, path: &Path) -> anyhow::Result<()> {
    let n = field.dim().0;
    let mut img = GrayImage::new(n as u32, n as u32);
    for row in 0..n {
        for col in 0..n {
            let v = field[[col, n - 1 - row]].clamp(0.0, 1.0);
            img.put_pixel(col as u32, row as u32, image::Luma([(v * 255.0).round() as u8]));
        }
    }
    img.save(path)
        .with_context(|| format!("cannot write {}", path.display()))
}

/// Grayscale render of the field with the level-set polyline overlaid in
/// magenta. Deterministic pixel output.
pub fn render_frame(field: &Grid, contour_level: f64) -> RgbImage {
    let n = field.dim().0;
    let mut img = RgbImage::new(n as u32, n as u32);
    for row in 0..n {
        for col in 0..n {
            let v = field[[col, n - 1 - row]].clamp(0.0, 1.0);
            let g = (v * 255.0).round() as u8;
            img.put_pixel(col as u32, row as u32, Rgb([g, g, g]));
        }
    }
    let magenta = Rgb([255, 0, 255]);
    for line in extract_polylines(field, contour_level) {
        for pair in line.windows(2) {
            let (x0, y0) = pair[0];
            let (x1, y1) = pair[1];
            // Segments span at most a couple of cells; a few samples cover
            // every pixel they touch.
            let steps = 8;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let gi = x0 + t * (x1 - x0);
                let gj = y0 + t * (y1 - y0);
                let col = gi.round() as isize;
                let row = (n as isize - 1) - gj.round() as isize;
                if col >= 0 && row >= 0 && (col as usize) < n && (row as usize) < n {
                    img.put_pixel(col as u32, row as u32, magenta);
                }
            }
        }
    }
    img
}

/// Writes the contour render as PNG.
pub fn save_render_png(field: &Grid, contour_level: f64, path: &Path) -> anyhow::Result<()> {
    render_frame(field, contour_level)
        .save(path)
        .with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn white_image_becomes_all_ones() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("white.png");
        GrayImage::from_pixel(12, 12, image::Luma([255])).save(&path).unwrap();
        let grid = load_image(&path, 9, false).unwrap();
        assert!(grid.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn checkerboard_upsamples_by_nearest_neighbor() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("check.png");
        let mut img = GrayImage::new(2, 2);
        img.put_pixel(0, 0, image::Luma([255]));
        img.put_pixel(1, 1, image::Luma([255]));
        img.put_pixel(1, 0, image::Luma([0]));
        img.put_pixel(0, 1, image::Luma([0]));
        img.save(&path).unwrap();
        let n = 64;
        let grid = load_image(&path, n, false).unwrap();
        // Nearest-neighbor oracle: quadrant of the pixel covering the cell.
        for i in 0..n {
            for j in 0..n {
                let col = if i < n / 2 { 0 } else { 1 };
                let row = if (n - 1 - j) < n / 2 { 0 } else { 1 };
                let expected = if (row, col) == (0, 0) || (row, col) == (1, 1) {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(grid[[i, j]], expected, "at ({i},{j})");
            }
        }
    }

    #[test]
    fn color_image_is_rejected_with_hint() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        RgbImage::from_pixel(4, 4, Rgb([10, 20, 30])).save(&path).unwrap();
        let err = load_image(&path, 4, false).unwrap_err();
        assert!(err.to_string().contains("grayscale"));
    }

    #[test]
    fn binary_field_roundtrips_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("field.png");
        let n = 33;
        let field = Array2::from_shape_fn((n, n), |(i, j)| {
            if (i as f64 - 16.0).powi(2) + (j as f64 - 16.0).powi(2) < 81.0 {
                1.0
            } else {
                0.0
            }
        });
        save_field_png(&field, &path).unwrap();
        let back = load_image(&path, n, false).unwrap();
        assert_eq!(field, back);
    }

    #[test]
    fn soft_mode_keeps_grayscale() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gray.png");
        GrayImage::from_pixel(5, 5, image::Luma([51])).save(&path).unwrap();
        let grid = load_image(&path, 5, true).unwrap();
        assert!((grid[[2, 2]] - 0.2).abs() < 1e-12);
        let strict = load_image(&path, 5, false).unwrap();
        assert!(strict.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disc_render_contour_is_a_circle() {
        let n = 65;
        let c = (n - 1) as f64 / 2.0;
        let radius = 20.0;
        let field = Array2::from_shape_fn((n, n), |(i, j)| {
            if (i as f64 - c).powi(2) + (j as f64 - c).powi(2) <= radius * radius {
                1.0
            } else {
                0.0
            }
        });
        let img = render_frame(&field, 0.5);
        let mut contour_pixels = 0;
        for row in 0..n {
            for col in 0..n {
                let px = img.get_pixel(col as u32, row as u32);
                if px.0 == [255, 0, 255] {
                    contour_pixels += 1;
                    let gi = col as f64;
                    let gj = (n - 1 - row) as f64;
                    let d = ((gi - c).powi(2) + (gj - c).powi(2)).sqrt();
                    assert!((d - radius).abs() <= 1.0 + 0.71, "pixel at distance {d}");
                }
            }
        }
        // A circle of radius 20 cells touches on the order of 2*pi*r pixels.
        assert!(contour_pixels > 80, "only {contour_pixels} contour pixels");
    }

    #[test]
    fn constant_zero_field_renders_black_without_contour() {
        let field = Array2::zeros((16, 16));
        let img = render_frame(&field, 0.5);
        for px in img.pixels() {
            assert_eq!(px.0, [0, 0, 0]);
        }
    }
}
