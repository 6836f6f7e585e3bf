//! Binary PPM (P6) export for inspection grids: images tiled row-major with
//! 2-pixel black gutters, grayscale replicated across the three channels,
//! quantized as floor(v·255 + 0.5) clamped to [0,255].

use std::path::Path;

use watertox_core::tensor::Tensor;

use crate::{Result, ToolError};

pub const GUTTER: usize = 2;

pub fn quantize(v: f32) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Tile a batch (N,C,H,W) with C ∈ {1,3} into one RGB canvas.
pub fn render_grid(images: &Tensor, columns: usize) -> Result<(Vec<u8>, usize, usize)> {
    let s = images.shape();
    if s.len() != 4 || images.is_empty() {
        return Err(ToolError::Usage(format!("grid wants a nonempty (N,C,H,W) tensor, got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if c != 1 && c != 3 {
        return Err(ToolError::Usage(format!("grid supports 1 or 3 channels, got {c}")));
    }
    if columns == 0 {
        return Err(ToolError::Usage("grid needs at least one column".into()));
    }
    let cols = columns.min(n);
    let rows = n.div_ceil(cols);
    let canvas_w = cols * w + GUTTER * (cols - 1);
    let canvas_h = rows * h + GUTTER * (rows - 1);
    let mut canvas = vec![0u8; canvas_w * canvas_h * 3];
    for img in 0..n {
        let (gr, gc) = (img / cols, img % cols);
        let (oy, ox) = (gr * (h + GUTTER), gc * (w + GUTTER));
        for y in 0..h {
            for x in 0..w {
                let at = ((oy + y) * canvas_w + ox + x) * 3;
                for ch in 0..3 {
                    let src = if c == 1 { 0 } else { ch };
                    let v = images.data()[((img * c + src) * h + y) * w + x];
                    canvas[at + ch] = quantize(v);
                }
            }
        }
    }
    Ok((canvas, canvas_w, canvas_h))
}

pub fn write_grid(images: &Tensor, path: &Path, columns: usize) -> Result<()> {
    let (canvas, w, h) = render_grid(images, columns)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&canvas);
    std::fs::write(path, out).map_err(|e| ToolError::io(path, e))
}
