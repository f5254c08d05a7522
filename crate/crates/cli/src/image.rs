//! Binary PGM (P5) tile grids.

use std::path::Path;

use xcov::Tensor;

pub const BORDER: usize = 2;

pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `rows × cols` tiles of `side × side` pixels from consecutive rows of
/// `tiles`, separated and framed by a white border. Missing tiles stay
/// white.
pub fn pgm_grid(tiles: &Tensor, rows: usize, cols: usize, side: usize) -> Vec<u8> {
    assert_eq!(tiles.cols(), side * side, "tile width must be side²");
    assert!(tiles.rows() <= rows * cols, "more tiles than grid cells");
    let w = cols * side + (cols + 1) * BORDER;
    let h = rows * side + (rows + 1) * BORDER;
    let mut px = vec![255u8; w * h];
    for t in 0..tiles.rows() {
        let (gr, gc) = (t / cols, t % cols);
        let top = BORDER + gr * (side + BORDER);
        let left = BORDER + gc * (side + BORDER);
        for (i, &v) in tiles.row(t).iter().enumerate() {
            px[(top + i / side) * w + left + i % side] = to_byte(v);
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&px);
    out
}

pub fn write_pgm_grid(path: &Path, tiles: &Tensor, rows: usize, cols: usize, side: usize) -> std::io::Result<()> {
    std::fs::write(path, pgm_grid(tiles, rows, cols, side))
}

/// Maps each signed row to `[0, 1]` around mid-grey, scaled by its own
/// largest magnitude, so derivative images are viewable.
pub fn signed_to_unit(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for v in row.iter_mut() {
            *v = if m > 0.0 { 0.5 + 0.5 * *v / m } else { 0.5 };
        }
    }
    out
}
