//! Procedural dermoscopy-like lesion images.
//!
//! A lesion is a centred superellipse whose radius is modulated by a cosine
//! series (amplitude grows with border irregularity). Interior colour comes
//! from concentric bands of the template colours; asymmetric templates skew
//! the bands and shading along one direction. Structures are simple
//! primitives drawn inside the lesion:
//!
//! | structure          | primitive                                   |
//! |--------------------|---------------------------------------------|
//! | streaks            | dark radial strokes near the rim            |
//! | dots               | small dark discs                            |
//! | pigment network    | dark square lattice                         |
//! | blue-whitish veil  | translucent blue-gray disc overlay          |
//! | regression         | desaturated, lightened disc                 |
//!
//! Every pixel then gets multiplicative brightness noise (same factor on all
//! three channels, so saturation is unchanged) and is quantized to 8 bits.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;
use crate::raster::{Mask, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LesionColor {
    LightBrown,
    DarkBrown,
    BlueGray,
    Black,
    Red,
    White,
}

impl LesionColor {
    pub const ALL: [LesionColor; 6] = [
        LesionColor::LightBrown,
        LesionColor::DarkBrown,
        LesionColor::BlueGray,
        LesionColor::Black,
        LesionColor::Red,
        LesionColor::White,
    ];

    pub fn term(self) -> &'static str {
        match self {
            LesionColor::LightBrown => "light-brown",
            LesionColor::DarkBrown => "dark-brown",
            LesionColor::BlueGray => "blue-gray",
            LesionColor::Black => "black",
            LesionColor::Red => "red",
            LesionColor::White => "white",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            LesionColor::LightBrown => [0.70, 0.47, 0.30],
            LesionColor::DarkBrown => [0.42, 0.25, 0.14],
            LesionColor::BlueGray => [0.40, 0.48, 0.64],
            LesionColor::Black => [0.12, 0.11, 0.11],
            LesionColor::Red => [0.80, 0.22, 0.25],
            LesionColor::White => [0.95, 0.94, 0.92],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    Streaks,
    Dots,
    PigmentNetwork,
    BlueWhitishVeil,
    Regression,
}

impl Structure {
    pub const ALL: [Structure; 5] = [
        Structure::Streaks,
        Structure::Dots,
        Structure::PigmentNetwork,
        Structure::BlueWhitishVeil,
        Structure::Regression,
    ];

    pub fn term(self) -> &'static str {
        match self {
            Structure::Streaks => "streaks",
            Structure::Dots => "dots",
            Structure::PigmentNetwork => "pigment network",
            Structure::BlueWhitishVeil => "blue-whitish veil",
            Structure::Regression => "regression",
        }
    }
}

/// Parameters of one lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub class_id: usize,
    pub class_name: String,
    /// Number of mirror axes the lesion respects: 0, 1 or 2.
    pub symmetry_axes: u8,
    pub border_irregularity: f64,
    pub colors: Vec<LesionColor>,
    pub structures: Vec<Structure>,
    pub lesion_radius_fraction: f64,
}

/// Border irregularity at or above this is captioned "irregular border".
pub const IRREGULAR_BORDER: f64 = 0.35;

/// Largest supported class count.
pub const MAX_CLASSES: usize = 17;

/// Background skin tone before per-image jitter.
pub const SKIN: [f64; 3] = [0.93, 0.84, 0.78];

const NOISE_STD: f64 = 0.03;

impl LesionSpec {
    /// Criteria terms in caption order: symmetry, border, colours, structures.
    pub fn criteria(&self) -> Vec<String> {
        let symmetry = match self.symmetry_axes {
            2 => "symmetric",
            1 => "partially symmetric",
            _ => "asymmetric",
        };
        let border = if self.border_irregularity >= IRREGULAR_BORDER {
            "irregular border"
        } else {
            "regular border"
        };
        let mut terms = vec![symmetry.to_string(), border.to_string()];
        terms.extend(self.colors.iter().map(|c| c.term().to_string()));
        terms.extend(self.structures.iter().map(|s| s.term().to_string()));
        terms
    }

    /// `"class name, criterion, criterion, …"`.
    pub fn caption(&self) -> String {
        let mut parts = vec![self.class_name.clone()];
        parts.extend(self.criteria());
        parts.join(", ")
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.symmetry_axes <= 2
            && (0.0..=1.0).contains(&self.border_irregularity)
            && self.lesion_radius_fraction > 0.1
            && self.lesion_radius_fraction < 0.45
            && !self.colors.is_empty()
            && !self.class_name.trim().is_empty();
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Contract(format!("invalid lesion spec {self:?}")))
        }
    }
}

/// Template table. The first eight are hand-designed; indices 8..17 are
/// combinatorial fills over symmetry, border, colour pairs and structures.
pub fn class_template(class_id: usize) -> LesionSpec {
    use LesionColor::*;
    use Structure::*;
    let (name, sym, border, colors, structures): (String, u8, f64, Vec<LesionColor>, Vec<Structure>) = match class_id {
        0 => ("common nevus".into(), 2, 0.05, vec![LightBrown], vec![PigmentNetwork]),
        1 => (
            "atypical nevus".into(),
            1,
            0.40,
            vec![LightBrown, DarkBrown],
            vec![Dots],
        ),
        2 => (
            "melanoma".into(),
            0,
            0.75,
            vec![DarkBrown, Black, BlueGray],
            vec![Streaks, BlueWhitishVeil],
        ),
        3 => ("blue nevus".into(), 2, 0.10, vec![BlueGray], vec![]),
        4 => (
            "seborrheic keratosis".into(),
            1,
            0.50,
            vec![DarkBrown, Black],
            vec![PigmentNetwork],
        ),
        5 => ("vascular lesion".into(), 2, 0.15, vec![Red], vec![Dots]),
        6 => (
            "regressing melanoma".into(),
            0,
            0.55,
            vec![DarkBrown, White, BlueGray],
            vec![Regression],
        ),
        7 => ("dermatofibroma".into(), 2, 0.20, vec![LightBrown, White], vec![]),
        k => {
            let j = k - 8;
            // Outer band always a saturated colour so the lesion stands out
            // from skin in saturation.
            let outer = [LightBrown, DarkBrown, Red][j % 3];
            let inner = LesionColor::ALL[(j * 5 + 2) % 6];
            let mut colors = vec![outer];
            if inner != outer {
                colors.push(inner);
            }
            (
                format!("lesion type {}", k + 1),
                (j % 3) as u8,
                [0.1, 0.4, 0.7][(j / 3) % 3],
                colors,
                vec![Structure::ALL[j % 5]],
            )
        }
    };
    LesionSpec {
        class_id,
        class_name: name,
        symmetry_axes: sym,
        border_irregularity: border,
        colors,
        structures,
        lesion_radius_fraction: 0.3,
    }
}

/// Generated image with its ground truth.
#[derive(Debug, Clone)]
pub struct LesionImage {
    pub image: Raster,
    pub mask: Mask,
}

/// Lesion geometry shared by the rasterizer.
struct Shape {
    center: f64,
    radius: f64,
    aspect: f64,
    exponent: f64,
    harmonics: Vec<(f64, f64, f64)>,
    amplitude: f64,
}

impl Shape {
    fn boundary(&self, theta: f64) -> f64 {
        let h: f64 = self
            .harmonics
            .iter()
            .map(|&(k, c, phi)| c * (k * theta + phi).cos())
            .sum();
        self.radius * (1.0 + self.amplitude * h)
    }

    /// Normalized radial position: < 1 inside the lesion.
    fn level(&self, y: f64, x: f64) -> f64 {
        let dx = x - self.center;
        let dy = (y - self.center) / self.aspect;
        let rho = (dx.abs().powf(self.exponent) + dy.abs().powf(self.exponent)).powf(1.0 / self.exponent);
        let theta = (y - self.center).atan2(dx);
        rho / self.boundary(theta)
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn luma(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Render one lesion.
pub fn render_lesion(spec: &LesionSpec, rng: &mut Rng, size: usize) -> LesionImage {
    let s = size as f64;
    let center = (s - 1.0) / 2.0;
    let radius = spec.lesion_radius_fraction * s;

    let harmonic_ks: Vec<u32> = match spec.symmetry_axes {
        2 => vec![2, 4, 6, 8],
        _ => vec![2, 3, 4, 5, 6, 7, 8],
    };
    let raw: Vec<f64> = harmonic_ks.iter().map(|_| rng.range(0.2, 1.0)).collect();
    let total: f64 = raw.iter().sum();
    let harmonics = harmonic_ks
        .iter()
        .zip(&raw)
        .map(|(&k, &c)| {
            let phase = if spec.symmetry_axes == 0 {
                rng.range(0.0, 2.0 * PI)
            } else {
                0.0
            };
            (f64::from(k), c / total, phase)
        })
        .collect();
    let shape = Shape {
        center,
        radius,
        aspect: rng.range(0.85, 1.0),
        exponent: 2.4,
        harmonics,
        amplitude: 0.35 * spec.border_irregularity,
    };

    // Direction of colour skew and shading for asymmetric lesions.
    let skew_dir = match spec.symmetry_axes {
        2 => None,
        1 => Some(0.0),
        _ => Some(rng.range(0.0, 2.0 * PI)),
    };

    let jitter: Vec<f64> = (0..3).map(|_| rng.range(-0.03, 0.03)).collect();
    let skin = [SKIN[0] + jitter[0], SKIN[1] + jitter[1], SKIN[2] + jitter[2]];
    let n_colors = spec.colors.len() as f64;

    let mut mask = Mask::empty(size, size);
    let mut pixels = vec![[0.0f64; 3]; size * size];
    let mut level = vec![0.0f64; size * size];
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64, x as f64);
            let z = shape.level(fy, fx);
            level[y * size + x] = z;
            let idx = y * size + x;
            if z >= 1.0 {
                pixels[idx] = skin;
                continue;
            }
            mask.set(y, x, true);
            let mut band_pos = z;
            let mut shade = 1.0;
            if let Some(dir) = skew_dir {
                let along = ((fx - center) * f64::cos(dir) + (fy - center) * f64::sin(dir)) / radius;
                band_pos = (z + 0.35 * along).clamp(0.0, 0.999);
                shade = 1.0 - 0.2 * along;
            }
            // colors[0] is the outermost band.
            let band = ((1.0 - band_pos) * n_colors).floor().clamp(0.0, n_colors - 1.0) as usize;
            let c = spec.colors[band].rgb();
            // Feather the rim into the skin.
            let rim = ((1.0 - z) / 0.08).clamp(0.0, 1.0);
            let c = mix(skin, c, 0.6 + 0.4 * rim);
            pixels[idx] = [c[0] * shade, c[1] * shade, c[2] * shade];
        }
    }

    let inside = |y: usize, x: usize| mask.get(y, x);
    let random_inside = |rng: &mut Rng, max_level: f64| -> (f64, f64) {
        for _ in 0..64 {
            let y = rng.range(center - radius, center + radius);
            let x = rng.range(center - radius, center + radius);
            if shape.level(y, x) < max_level {
                return (y, x);
            }
        }
        (center, center)
    };
    let disc = |cy: f64, cx: f64, r: f64| {
        let mut pts = Vec::new();
        let (y0, y1) = (
            (cy - r).floor().max(0.0) as usize,
            ((cy + r).ceil() as usize).min(size - 1),
        );
        let (x0, x1) = (
            (cx - r).floor().max(0.0) as usize,
            ((cx + r).ceil() as usize).min(size - 1),
        );
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                if d <= r {
                    pts.push((y, x));
                }
            }
        }
        pts
    };

    for structure in &spec.structures {
        match structure {
            Structure::PigmentNetwork => {
                let period = (size / 10).max(3);
                let offset = rng.below(period);
                for y in 0..size {
                    for x in 0..size {
                        let on_line = (y + offset).is_multiple_of(period) || (x + offset).is_multiple_of(period);
                        if on_line && inside(y, x) && level[y * size + x] < 0.92 {
                            let p = &mut pixels[y * size + x];
                            *p = [p[0] * 0.55, p[1] * 0.5, p[2] * 0.5];
                        }
                    }
                }
            }
            Structure::Dots => {
                let count = 6 + rng.below(7);
                let r = (s / 40.0).max(1.0);
                for _ in 0..count {
                    let (cy, cx) = random_inside(rng, 0.8);
                    for (y, x) in disc(cy, cx, r) {
                        if inside(y, x) {
                            pixels[y * size + x] = [0.25, 0.15, 0.10];
                        }
                    }
                }
            }
            Structure::Streaks => {
                let count = 8 + rng.below(5);
                for _ in 0..count {
                    let theta = rng.range(0.0, 2.0 * PI);
                    let rb = shape.boundary(theta);
                    let steps = (rb * 2.0).ceil() as usize;
                    for i in 0..=steps {
                        let t = 0.55 + 0.43 * i as f64 / steps as f64;
                        let x = center + t * rb * theta.cos();
                        let y = center + t * rb * theta.sin() * shape.aspect;
                        let (yi, xi) = (y.round() as isize, x.round() as isize);
                        if yi >= 0 && xi >= 0 && (yi as usize) < size && (xi as usize) < size {
                            let (yi, xi) = (yi as usize, xi as usize);
                            if inside(yi, xi) {
                                pixels[yi * size + xi] = [0.20, 0.12, 0.08];
                            }
                        }
                    }
                }
            }
            Structure::BlueWhitishVeil => {
                let (cy, cx) = random_inside(rng, 0.4);
                for (y, x) in disc(cy, cx, 0.45 * radius) {
                    if inside(y, x) {
                        let p = &mut pixels[y * size + x];
                        *p = mix(*p, [0.55, 0.65, 0.80], 0.55);
                    }
                }
            }
            Structure::Regression => {
                let (cy, cx) = random_inside(rng, 0.5);
                for (y, x) in disc(cy, cx, 0.35 * radius) {
                    if inside(y, x) {
                        let p = &mut pixels[y * size + x];
                        let g = (luma(*p) * 1.1 + 0.1).min(1.0);
                        *p = mix(*p, [g, g, g], 0.7);
                    }
                }
            }
        }
    }

    let mut data = Vec::with_capacity(size * size * 3);
    for p in &pixels {
        let noise = 1.0 + NOISE_STD * rng.normal();
        for &c in p {
            let v = (c * noise).clamp(0.0, 1.0);
            // 8-bit quantization keeps PNG round trips lossless.
            data.push(f32::from((v * 255.0).round() as u8) / 255.0);
        }
    }
    LesionImage {
        image: Raster::new(size, size, data).expect("dims"),
        mask,
    }
}

/// HSV saturation `(max - min) / max`.
pub fn saturation(rgb: [f32; 3]) -> f32 {
    let max = rgb[0].max(rgb[1]).max(rgb[2]);
    let min = rgb[0].min(rgb[1]).min(rgb[2]);
    if max <= 0.0 {
        0.0
    } else {
        (max - min) / max
    }
}

/// Mean saturation inside minus outside the mask.
pub fn saturation_contrast(image: &Raster, mask: &Mask) -> f64 {
    let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..image.height() {
        for x in 0..image.width() {
            let s = f64::from(saturation(image.get(y, x)));
            if mask.get(y, x) {
                sin += s;
                nin += 1;
            } else {
                sout += s;
                nout += 1;
            }
        }
    }
    sin / nin.max(1) as f64 - sout / nout.max(1) as f64
}
