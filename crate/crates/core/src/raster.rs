//! PNG export for facies grids and probability maps.

use std::path::Path;

use crate::error::{FaciesError, Result};
use crate::grid::{FaciesCodebook, FaciesGrid};

fn encode(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(data)?;
        writer.finish()?;
    }
    Ok(out)
}

/// RGB image of a grid using the codebook display colours.
pub fn grid_png(grid: &FaciesGrid, codebook: &FaciesCodebook) -> Result<Vec<u8>> {
    let mut rgb = Vec::with_capacity(grid.cells().len() * 3);
    for &c in grid.cells() {
        let color = codebook.color_of(c).ok_or(FaciesError::UnknownCode(c))?;
        rgb.extend_from_slice(&color);
    }
    encode(grid.width(), grid.height(), png::ColorType::Rgb, &rgb)
}

/// Grayscale image of values in `[0, 1]`: 0 is black, 1 is white.
pub fn probability_png(values: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(FaciesError::Shape(format!(
            "{} values for a {height}x{width} image",
            values.len()
        )));
    }
    let gray: Vec<u8> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    encode(width, height, png::ColorType::Grayscale, &gray)
}

/// Tile several grids into one RGB sheet with a one-pixel gutter.
pub fn grid_sheet_png(grids: &[FaciesGrid], columns: usize, codebook: &FaciesCodebook) -> Result<Vec<u8>> {
    let Some(first) = grids.first() else {
        return Err(FaciesError::Argument("no grids to tile".into()));
    };
    let (h, w) = first.dims();
    let cols = columns.clamp(1, grids.len());
    let rows = grids.len().div_ceil(cols);
    let (sh, sw) = (rows * (h + 1) + 1, cols * (w + 1) + 1);
    let mut rgb = vec![255u8; sh * sw * 3];
    for (i, g) in grids.iter().enumerate() {
        let (oy, ox) = ((i / cols) * (h + 1) + 1, (i % cols) * (w + 1) + 1);
        for r in 0..h {
            for c in 0..w {
                let code = g.get(r, c);
                let color = codebook.color_of(code).ok_or(FaciesError::UnknownCode(code))?;
                let at = ((oy + r) * sw + ox + c) * 3;
                rgb[at..at + 3].copy_from_slice(&color);
            }
        }
    }
    encode(sw, sh, png::ColorType::Rgb, &rgb)
}

pub fn write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)?;
    Ok(())
}
