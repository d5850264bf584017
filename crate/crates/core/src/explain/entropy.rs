//! Local Shannon entropy over a disk neighborhood.
//!
//! Gray levels are quantized to `bins` equal-width bins over `[0, 1]`
//! (`bin = min(floor(g · bins), bins − 1)`). Borders use reflect padding
//! without edge repetition (`… c b | a b c d | c b …`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::raster::Raster;
use crate::{Error, Result};

/// Luminance weights for R, G, B.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Per-pixel local entropy in bits.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub radius: usize,
    pub bins: usize,
}

/// Row-major gray image.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl Gray {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Contract(format!(
                "gray image {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

pub fn to_gray(image: &Raster) -> Gray {
    let values = image
        .data()
        .chunks_exact(3)
        .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        .collect();
    Gray {
        height: image.height(),
        width: image.width(),
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyNormalization {
    /// `(w − min) / (max − min)`; a constant map gives all zeros.
    #[default]
    Minmax,
    /// `w / log2(bins)`.
    MaxEntropy,
}

fn check_params(radius: usize, bins: usize) -> Result<()> {
    if radius < 1 || bins < 2 {
        return Err(Error::Contract(format!(
            "entropy needs radius >= 1 and bins >= 2, got radius {radius}, bins {bins}"
        )));
    }
    Ok(())
}

/// Reflect index `i` (possibly out of range) into `0..n`.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn quantize(g: f32, bins: usize) -> usize {
    let b = (g.clamp(0.0, 1.0) * bins as f32).floor() as usize;
    b.min(bins - 1)
}

/// Half-width of the disk at each row offset `dy ∈ [−r, r]`:
/// the largest `w` with `w² + dy² ≤ r²`.
pub fn disk_half_widths(radius: usize) -> Vec<usize> {
    let r = radius as isize;
    (-r..=r)
        .map(|dy| {
            let rem = (r * r - dy * dy) as usize;
            let mut w = (rem as f64).sqrt() as usize;
            while (w + 1) * (w + 1) <= rem {
                w += 1;
            }
            while w * w > rem {
                w -= 1;
            }
            w
        })
        .collect()
}

pub fn disk_size(radius: usize) -> usize {
    disk_half_widths(radius).iter().map(|w| 2 * w + 1).sum()
}

/// Shannon entropy in bits of a histogram, summed over bins in order.
pub fn histogram_entropy(counts: &[u32], total: u32) -> f64 {
    let n = f64::from(total);
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let f = f64::from(c) / n;
            h -= f * f.log2();
        }
    }
    // -0.0 for a single occupied bin
    h.max(0.0)
}

fn quantized(gray: &Gray, bins: usize) -> Vec<usize> {
    gray.values.iter().map(|&g| quantize(g, bins)).collect()
}

/// Brute force: a fresh histogram over the disk at every pixel.
pub fn local_entropy_ref(gray: &Gray, radius: usize, bins: usize) -> Result<EntropyMap> {
    check_params(radius, bins)?;
    let (h, w) = (gray.height, gray.width);
    let q = quantized(gray, bins);
    let r = radius as isize;
    let mut values = Vec::with_capacity(h * w);
    let mut counts = vec![0u32; bins];
    for y in 0..h {
        for x in 0..w {
            counts.iter_mut().for_each(|c| *c = 0);
            let mut total = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy <= r * r {
                        let sy = reflect(y as isize + dy, h);
                        let sx = reflect(x as isize + dx, w);
                        counts[q[sy * w + sx]] += 1;
                        total += 1;
                    }
                }
            }
            values.push(histogram_entropy(&counts, total));
        }
    }
    Ok(EntropyMap {
        height: h,
        width: w,
        values,
        radius,
        bins,
    })
}

/// Sliding disk: per row, the histogram is built once at `x = 0` and then
/// updated by removing the disk's trailing column run and adding its leading
/// one for each step right. Rows run in parallel.
pub fn local_entropy_fast(gray: &Gray, radius: usize, bins: usize) -> Result<EntropyMap> {
    check_params(radius, bins)?;
    let (h, w) = (gray.height, gray.width);
    let q = quantized(gray, bins);
    let r = radius as isize;
    let half = disk_half_widths(radius);
    let total = half.iter().map(|&hw| 2 * hw as u32 + 1).sum::<u32>();

    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            // Source row index and half-width for each disk row.
            let spans: Vec<(usize, isize)> = (-r..=r)
                .map(|dy| (reflect(y as isize + dy, h) * w, half[(dy + r) as usize] as isize))
                .collect();
            let mut counts = vec![0u32; bins];
            for &(base, hw) in &spans {
                for dx in -hw..=hw {
                    counts[q[base + reflect(dx, w)]] += 1;
                }
            }
            let mut out = Vec::with_capacity(w);
            out.push(histogram_entropy(&counts, total));
            for x in 1..w as isize {
                for &(base, hw) in &spans {
                    counts[q[base + reflect(x - 1 - hw, w)]] -= 1;
                    counts[q[base + reflect(x + hw, w)]] += 1;
                }
                out.push(histogram_entropy(&counts, total));
            }
            out
        })
        .collect();

    Ok(EntropyMap {
        height: h,
        width: w,
        values: rows.concat(),
        radius,
        bins,
    })
}

/// Average-pools the entropy over each patch's pixel block and normalizes.
///
/// When the map is not divisible by the grid it is extended by reflection to
/// the next multiple before pooling. Weights are row-major over the grid.
pub fn entropy_weights(map: &EntropyMap, grid: (usize, usize), mode: EntropyNormalization) -> Result<Vec<f64>> {
    let pooled = pool_entropy(map, grid)?;
    Ok(match mode {
        EntropyNormalization::Minmax => minmax_or_zero(&pooled),
        EntropyNormalization::MaxEntropy => {
            let cap = (map.bins as f64).log2();
            pooled.iter().map(|&v| v / cap).collect()
        }
    })
}

/// Mean entropy per patch, before normalization.
pub fn pool_entropy(map: &EntropyMap, grid: (usize, usize)) -> Result<Vec<f64>> {
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 || map.height == 0 || map.width == 0 {
        return Err(Error::Contract(format!(
            "cannot pool a {}x{} map onto a {rows}x{cols} grid",
            map.height, map.width
        )));
    }
    let ph = map.height.div_ceil(rows);
    let pw = map.width.div_ceil(cols);
    let mut out = Vec::with_capacity(rows * cols);
    for gy in 0..rows {
        for gx in 0..cols {
            let mut sum = 0.0;
            for dy in 0..ph {
                let y = reflect((gy * ph + dy) as isize, map.height);
                for dx in 0..pw {
                    let x = reflect((gx * pw + dx) as isize, map.width);
                    sum += map.values[y * map.width + x];
                }
            }
            out.push(sum / (ph * pw) as f64);
        }
    }
    Ok(out)
}

/// `(v − min)/(max − min)`, or all zeros when the values are constant.
pub fn minmax_or_zero(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = bounds(values);
    if hi > lo {
        values.iter().map(|&v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

pub(crate) fn bounds(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_from(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f32) -> Gray {
        let mut v = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                v.push(f(y, x));
            }
        }
        Gray::new(h, w, v).unwrap()
    }

    #[test]
    fn luminance_coefficients() {
        let white = Raster::filled(2, 2, [1.0, 1.0, 1.0]);
        assert!(to_gray(&white).values.iter().all(|&g| (g - 1.0).abs() < 1e-6));
        let green = Raster::filled(1, 1, [0.0, 1.0, 0.0]);
        assert_eq!(to_gray(&green).values[0], 0.587);
        let gray = Raster::filled(1, 1, [0.25, 0.25, 0.25]);
        assert!((to_gray(&gray).values[0] - 0.25).abs() < 1e-7);
    }

    #[test]
    fn reflect_mirrors_without_edge_repeat() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn disk_sizes() {
        assert_eq!(disk_size(1), 5);
        assert_eq!(disk_size(2), 13);
        assert_eq!(disk_size(5), 81);
    }

    #[test]
    fn constant_image_has_zero_entropy() {
        let g = gray_from(9, 7, |_, _| 0.4);
        for m in [
            local_entropy_ref(&g, 2, 16).unwrap(),
            local_entropy_fast(&g, 2, 16).unwrap(),
        ] {
            assert!(m.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn checkerboard_interior_matches_direct_count() {
        let g = gray_from(12, 12, |y, x| if (x + y) % 2 == 0 { 0.1 } else { 0.9 });
        let m = local_entropy_ref(&g, 2, 8).unwrap();
        // Radius-2 disk around a "dark" pixel: 13 pixels, those with even
        // |dx|+|dy| are dark.
        let mut dark = 0.0f64;
        let mut n = 0.0f64;
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                if dx * dx + dy * dy <= 4 {
                    n += 1.0;
                    if (dx + dy).rem_euclid(2) == 0 {
                        dark += 1.0;
                    }
                }
            }
        }
        let (p, q) = (dark / n, (n - dark) / n);
        let expected = -(p * p.log2() + q * q.log2());
        assert!((m.values[6 * 12 + 6] - expected).abs() < 1e-12);
        // 9 dark, 4 light
        assert!((expected - 0.890).abs() < 1e-3);
    }

    #[test]
    fn fast_equals_reference_on_small_inputs() {
        let mut rng = crate::numerics::Rng::new(9);
        for (h, w, r) in [(5, 7, 1), (6, 3, 2), (10, 10, 4), (4, 4, 6)] {
            let g = gray_from(h, w, |_, _| rng.uniform() as f32);
            let a = local_entropy_ref(&g, r, 16).unwrap();
            let b = local_entropy_fast(&g, r, 16).unwrap();
            assert_eq!(a, b, "{h}x{w} r={r}");
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let g = gray_from(3, 3, |_, _| 0.0);
        assert!(local_entropy_ref(&g, 0, 16).is_err());
        assert!(local_entropy_fast(&g, 1, 1).is_err());
    }

    #[test]
    fn uniform_map_weights() {
        let map = EntropyMap {
            height: 4,
            width: 4,
            values: vec![2.0; 16],
            radius: 1,
            bins: 16,
        };
        assert_eq!(
            entropy_weights(&map, (2, 2), EntropyNormalization::Minmax).unwrap(),
            vec![0.0; 4]
        );
        assert_eq!(
            entropy_weights(&map, (2, 2), EntropyNormalization::MaxEntropy).unwrap(),
            vec![0.5; 4]
        );
    }

    #[test]
    fn single_hot_patch_gets_weight_one() {
        let mut values = vec![0.0; 16];
        for (y, x) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
            values[y * 4 + x] = 1.5;
        }
        let map = EntropyMap {
            height: 4,
            width: 4,
            values,
            radius: 1,
            bins: 16,
        };
        assert_eq!(
            entropy_weights(&map, (2, 2), EntropyNormalization::Minmax).unwrap(),
            vec![0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn pooled_weight_is_block_mean() {
        let values: Vec<f64> = (0..36).map(|i| f64::from(i) * 0.1).collect();
        let map = EntropyMap {
            height: 6,
            width: 6,
            values: values.clone(),
            radius: 1,
            bins: 16,
        };
        let pooled = pool_entropy(&map, (2, 3)).unwrap();
        let mut block = Vec::new();
        for y in 3..6 {
            for x in 2..4 {
                block.push(values[y * 6 + x]);
            }
        }
        let mean = block.iter().sum::<f64>() / block.len() as f64;
        assert!((pooled[4] - mean).abs() < 1e-12);
    }
}
