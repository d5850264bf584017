//! Exact pixel-permutation augmentations and caption reordering.

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;
use crate::raster::{Mask, Raster};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentOp {
    FlipH,
    FlipV,
    /// Clockwise quarter turn.
    Rot90,
    Rot180,
    Rot270,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 5] = [
        AugmentOp::FlipH,
        AugmentOp::FlipV,
        AugmentOp::Rot90,
        AugmentOp::Rot180,
        AugmentOp::Rot270,
    ];

    fn is_rotation(self) -> bool {
        matches!(self, AugmentOp::Rot90 | AugmentOp::Rot180 | AugmentOp::Rot270)
    }

    /// Source coordinate for destination `(y, x)` in an `h`×`w` image.
    fn source(self, h: usize, w: usize) -> impl Fn(usize, usize) -> (usize, usize) {
        move |y, x| match self {
            AugmentOp::FlipH => (y, w - 1 - x),
            AugmentOp::FlipV => (h - 1 - y, x),
            AugmentOp::Rot90 => (h - 1 - x, y),
            AugmentOp::Rot180 => (h - 1 - y, w - 1 - x),
            AugmentOp::Rot270 => (x, w - 1 - y),
        }
    }
}

fn check_square(op: AugmentOp, h: usize, w: usize) -> Result<()> {
    if op.is_rotation() && h != w {
        return Err(crate::numerics::NumericsError::Shape {
            op: "augment_image",
            lhs: vec![h, w],
            rhs: vec![w, h],
        }
        .into());
    }
    Ok(())
}

pub fn augment_image(image: &Raster, op: AugmentOp) -> Result<Raster> {
    let (h, w) = (image.height(), image.width());
    check_square(op, h, w)?;
    Ok(image.remap(h, w, op.source(h, w)))
}

pub fn augment_mask(mask: &Mask, op: AugmentOp) -> Result<Mask> {
    let (h, w) = (mask.height(), mask.width());
    check_square(op, h, w)?;
    Ok(mask.remap(h, w, op.source(h, w)))
}

/// Splits `"class, c1, c2, …"` into its comma-separated parts.
pub fn parse_caption(caption: &str) -> Result<Vec<String>> {
    let parts: Vec<String> = caption.split(',').map(|p| p.trim().to_string()).collect();
    if parts.iter().any(String::is_empty) {
        return Err(Error::Parse(format!("malformed caption '{caption}'")));
    }
    Ok(parts)
}

/// Shuffles the criteria while keeping the class name first.
pub fn augment_caption(caption: &str, rng: &mut Rng) -> Result<String> {
    let mut parts = parse_caption(caption)?;
    rng.shuffle(&mut parts[1..]);
    Ok(parts.join(", "))
}
