//! Heatmap overlays and panel/grid composition.

use font8x8::UnicodeFonts;
use image::{ImageBuffer, ImageFormat, Rgb, RgbImage};

use crate::raster::{quantize, Raster};
use crate::{Error, Result};

use super::saliency::SaliencyMap;

/// Panels narrower than this are enlarged by an integer factor (nearest).
pub const MIN_PANEL_SIDE: usize = 128;
const GAP: usize = 4;
const GLYPH: usize = 8;
const LABEL_HEIGHT: usize = GLYPH + 6;
const BACKGROUND: [u8; 3] = [255, 255, 255];
const INK: [u8; 3] = [0, 0, 0];

/// Colormap stops: blue, cyan, green, yellow, red at 0, ¼, ½, ¾, 1.
pub const COLORMAP_STOPS: [[f32; 3]; 5] = [
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [0.0, 1.0, 0.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
];

/// Piecewise-linear blue→red map of `t ∈ [0, 1]` (clamped).
pub fn colormap(t: f64) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0) as f32 * 4.0;
    let i = (t.floor() as usize).min(3);
    let f = t - i as f32;
    let (a, b) = (COLORMAP_STOPS[i], COLORMAP_STOPS[i + 1]);
    [
        a[0] + (b[0] - a[0]) * f,
        a[1] + (b[1] - a[1]) * f,
        a[2] + (b[2] - a[2]) * f,
    ]
}

/// Bilinear upsampling with aligned corners: output pixel `(y, x)` samples
/// the grid at `(y·(rows−1)/(H−1), x·(cols−1)/(W−1))`.
pub fn upsample(values: &[f64], rows: usize, cols: usize, height: usize, width: usize) -> Vec<f64> {
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out <= 1 || n_in <= 1 {
            return (0, 0, 0.0);
        }
        let s = (i * (n_in - 1)) as f64 / (n_out - 1) as f64;
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, height, rows);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, width, cols);
            let v = |r: usize, c: usize| values[r * cols + c];
            let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
            let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

pub fn upsample_map(map: &SaliencyMap, height: usize, width: usize) -> Vec<f64> {
    upsample(&map.values, map.rows, map.cols, height, width)
}

/// `alpha · colormap(map) + (1 − alpha) · image`, per pixel.
pub fn overlay(image: &Raster, map: &SaliencyMap, alpha: f64) -> Raster {
    let (h, w) = (image.height(), image.width());
    let up = upsample_map(map, h, w);
    let a = alpha as f32;
    let mut data = Vec::with_capacity(h * w * 3);
    for (px, &v) in image.data().chunks_exact(3).zip(&up) {
        let c = colormap(v);
        for k in 0..3 {
            data.push(a * c[k] + (1.0 - a) * px[k]);
        }
    }
    Raster::new(h, w, data).expect("same dims as source")
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            img: ImageBuffer::from_pixel(width as u32, height as u32, Rgb(BACKGROUND)),
        }
    }

    fn blit(&mut self, raster: &Raster, x0: usize, y0: usize, scale: usize) {
        for y in 0..raster.height() * scale {
            for x in 0..raster.width() * scale {
                let p = raster.get(y / scale, x / scale);
                self.img.put_pixel(
                    (x0 + x) as u32,
                    (y0 + y) as u32,
                    Rgb([quantize(p[0]), quantize(p[1]), quantize(p[2])]),
                );
            }
        }
    }

    /// Draws `text` centered in `[x0, x0 + width)`, truncated to fit.
    fn label(&mut self, text: &str, x0: usize, y0: usize, width: usize) {
        let max_chars = width / GLYPH;
        let chars: Vec<char> = text.chars().take(max_chars).collect();
        let start = x0 + (width - chars.len() * GLYPH) / 2;
        for (i, ch) in chars.iter().enumerate() {
            let glyph = font8x8::BASIC_FONTS.get(*ch).unwrap_or([0; 8]);
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..GLYPH {
                    if bits >> col & 1 == 1 {
                        self.img
                            .put_pixel((start + i * GLYPH + col) as u32, (y0 + row) as u32, Rgb(INK));
                    }
                }
            }
        }
    }

    fn png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.img
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Format(format!("png encoding failed: {e}")))?;
        Ok(out.into_inner())
    }
}

fn panel_scale(side: usize) -> usize {
    MIN_PANEL_SIDE.div_ceil(side.max(1)).max(1)
}

/// A row of panels: the original image followed by one overlay per map,
/// each labeled underneath. `labels` holds one entry per panel.
pub fn render_panel(image: &Raster, maps: &[SaliencyMap], labels: &[String], alpha: f64) -> Result<Vec<u8>> {
    if labels.len() != maps.len() + 1 {
        return Err(Error::Contract(format!(
            "{} labels for {} panels (original + {} maps)",
            labels.len(),
            maps.len() + 1,
            maps.len()
        )));
    }
    let panels: Vec<Raster> = std::iter::once(image.clone())
        .chain(maps.iter().map(|m| overlay(image, m, alpha)))
        .collect();
    compose(&[panels], &[labels.to_vec()])
}

/// Grid of labeled cells; every cell raster must share one size.
pub fn compose(cells: &[Vec<Raster>], labels: &[Vec<String>]) -> Result<Vec<u8>> {
    let rows = cells.len();
    let cols = cells.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::Contract("cannot render an empty grid".into()));
    }
    let (h, w) = (cells[0][0].height(), cells[0][0].width());
    if cells
        .iter()
        .any(|r| r.len() != cols || r.iter().any(|c| c.height() != h || c.width() != w))
    {
        return Err(Error::Contract("grid cells must all have the same size".into()));
    }
    let scale = panel_scale(h.max(w));
    let (cw, ch) = (w * scale, h * scale + LABEL_HEIGHT);
    let (width, height) = grid_pixel_size(rows, cols, cw, ch);
    let mut canvas = Canvas::new(width, height);
    for (r, row) in cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let x0 = GAP + c * (cw + GAP);
            let y0 = GAP + r * (ch + GAP);
            canvas.blit(cell, x0, y0, scale);
            if let Some(text) = labels.get(r).and_then(|l| l.get(c)) {
                canvas.label(text, x0, y0 + h * scale + 3, cw);
            }
        }
    }
    canvas.png()
}

fn grid_pixel_size(rows: usize, cols: usize, cell_w: usize, cell_h: usize) -> (usize, usize) {
    (GAP + cols * (cell_w + GAP), GAP + rows * (cell_h + GAP))
}

/// Pixel size of a composed grid of `side`×`side` cells.
pub fn grid_size(rows: usize, cols: usize, side: usize) -> (usize, usize) {
    let scale = panel_scale(side);
    grid_pixel_size(rows, cols, side * scale, side * scale + LABEL_HEIGHT)
}

/// Comparison grid: the first row shows the original image under each
/// caption; each further row holds one method's overlays, one column per
/// caption. `maps[m][c]` is method `m` on caption `c`.
pub fn render_compare_grid(
    image: &Raster,
    captions: &[String],
    maps: &[Vec<SaliencyMap>],
    alpha: f64,
) -> Result<Vec<u8>> {
    if maps.iter().any(|row| row.len() != captions.len()) {
        return Err(Error::Contract("every method needs one map per caption".into()));
    }
    let mut cells = vec![vec![image.clone(); captions.len()]];
    let mut labels = vec![captions.to_vec()];
    for row in maps {
        cells.push(row.iter().map(|m| overlay(image, m, alpha)).collect());
        labels.push(row.iter().map(|m| m.method.name().to_string()).collect());
    }
    compose(&cells, &labels)
}
