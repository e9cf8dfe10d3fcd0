//! Binary PGM (P5, 8-bit) emission and image-grid tiling. Pixels are
//! `round(p·255)` of values in [0,1]; tiles separate with 1-pixel black
//! gutters.

use std::io::Write;
use std::path::Path;

pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major values in [0,1].
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn from_row(height: usize, width: usize, row: &[f64]) -> GrayImage {
        assert_eq!(row.len(), height * width);
        GrayImage {
            width,
            height,
            pixels: row.to_vec(),
        }
    }

    /// A blank canvas with one pixel column painted from a vector —
    /// renders a column condition in its true position.
    pub fn from_column(
        height: usize,
        width: usize,
        column_index: usize,
        column: &[f64],
    ) -> GrayImage {
        assert_eq!(column.len(), height);
        let mut pixels = vec![0.0; height * width];
        for (y, &v) in column.iter().enumerate() {
            pixels[y * width + column_index] = v;
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> std::io::Result<()> {
    let mut out = Vec::with_capacity(32 + image.pixels.len());
    write!(out, "P5\n{} {}\n255\n", image.width, image.height)?;
    out.extend(
        image
            .pixels
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    std::fs::write(path, out)
}

/// Tile images row-major into a grid with 1-pixel black separators. All
/// tiles must share dimensions; short final rows are padded with black.
pub fn tile_grid(tiles: &[GrayImage], cols: usize) -> GrayImage {
    assert!(!tiles.is_empty() && cols > 0);
    let (tw, th) = (tiles[0].width, tiles[0].height);
    assert!(tiles.iter().all(|t| t.width == tw && t.height == th));
    let rows = tiles.len().div_ceil(cols);
    let width = cols * tw + (cols - 1);
    let height = rows * th + (rows - 1);
    let mut pixels = vec![0.0; width * height];
    for (i, tile) in tiles.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let (y0, x0) = (r * (th + 1), c * (tw + 1));
        for y in 0..th {
            let dst = (y0 + y) * width + x0;
            pixels[dst..dst + tw].copy_from_slice(&tile.pixels[y * tw..(y + 1) * tw]);
        }
    }
    GrayImage {
        width,
        height,
        pixels,
    }
}
