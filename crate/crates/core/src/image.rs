//! Binary PGM (P5) and PPM (P6) writers, plus the traversal-grid and
//! heatmap rasterizers. Netpbm keeps the outputs free of codec
//! dependencies.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

/// Grayscale image in `[0,1]`, row-major.
pub fn write_pgm(path: &Path, pixels: &[f64], width: usize, height: usize) -> io::Result<()> {
    assert_eq!(pixels.len(), width * height);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = pixels.iter().map(|&v| to_byte(v)).collect();
    w.write_all(&bytes)?;
    w.flush()
}

/// RGB image with channels in `[0,1]`, row-major `[r,g,b]` triples.
pub fn write_ppm(path: &Path, rgb: &[(u8, u8, u8)], width: usize, height: usize) -> io::Result<()> {
    assert_eq!(rgb.len(), width * height);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{width} {height}\n255\n")?;
    let mut bytes = Vec::with_capacity(rgb.len() * 3);
    for &(r, g, b) in rgb {
        bytes.extend_from_slice(&[r, g, b]);
    }
    w.write_all(&bytes)?;
    w.flush()
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stacks a grid of same-sized grayscale tiles into one image:
/// `tiles[row][col]`, each `side x side`.
pub fn tile_grid(tiles: &[Vec<Vec<f64>>], side: usize) -> (Vec<f64>, usize, usize) {
    let rows = tiles.len();
    let cols = tiles.first().map_or(0, Vec::len);
    let width = cols * side;
    let height = rows * side;
    let mut out = vec![0.0; width * height];
    for (ti, row) in tiles.iter().enumerate() {
        for (tj, tile) in row.iter().enumerate() {
            for r in 0..side {
                for c in 0..side {
                    out[(ti * side + r) * width + tj * side + c] = tile[r * side + c];
                }
            }
        }
    }
    (out, width, height)
}

/// Three-stop colormap used for the NMI heatmap (dark violet through
/// teal to yellow), input clamped to `[0,1]`.
pub fn colormap(v: f64) -> (u8, u8, u8) {
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let (r, g, b) = if v < 0.5 {
        let t = v * 2.0;
        (lerp(68.0, 33.0, t), lerp(1.0, 145.0, t), lerp(84.0, 140.0, t))
    } else {
        let t = (v - 0.5) * 2.0;
        (lerp(33.0, 253.0, t), lerp(145.0, 231.0, t), lerp(140.0, 37.0, t))
    };
    (r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Rasterizes a heatmap matrix into cell blocks of `scale` pixels.
pub fn heatmap_pixels(m: &[Vec<f64>], scale: usize) -> (Vec<(u8, u8, u8)>, usize, usize) {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let width = cols * scale;
    let height = rows * scale;
    let mut out = vec![(0u8, 0u8, 0u8); width * height];
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let color = colormap(v);
            for r in 0..scale {
                for c in 0..scale {
                    out[(i * scale + r) * width + j * scale + c] = color;
                }
            }
        }
    }
    (out, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        write_pgm(&path, &[0.0, 0.5, 1.0, 0.25], 2, 2).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0u8, 128, 255, 64]);
    }

    #[test]
    fn grid_lays_out_tiles() {
        let tile_a = vec![1.0; 4];
        let tile_b = vec![0.0; 4];
        let (px, w, h) = tile_grid(&[vec![tile_a, tile_b]], 2);
        assert_eq!((w, h), (4, 2));
        assert_eq!(px[0], 1.0);
        assert_eq!(px[2], 0.0);
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), (68, 1, 84));
        assert_eq!(colormap(1.0), (253, 231, 37));
    }
}
