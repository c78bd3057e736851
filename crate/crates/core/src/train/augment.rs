use rand::Rng;

use super::TrainError;
use crate::lf::{LfShape, LightField};

/// Geometry-preserving augmentations: every spatial flip or rotation is
/// mirrored on the angular axes so EPI lines stay straight. Angular `v`
/// moves along rows `x` and `u` along columns `y`, the pairing EPIs use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentOp {
    None,
    /// Mirror columns (`y`) and reverse `u`.
    HFlip,
    /// Mirror rows (`x`) and reverse `v`.
    VFlip,
    /// Rotate `(x, y)` and `(u, v)` together by a quarter turn.
    Rot90,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 4] = [Self::None, Self::HFlip, Self::VFlip, Self::Rot90];

    /// Uniform choice among the ops valid for `shape`.
    pub fn sample<R: Rng>(rng: &mut R, shape: LfShape) -> Self {
        let square = shape.x == shape.y && shape.u == shape.v;
        let n = if square { 4 } else { 3 };
        Self::ALL[rng.gen_range(0..n)]
    }
}

pub fn augment(lf: &LightField, op: AugmentOp) -> Result<LightField, TrainError> {
    let s = lf.shape();
    let out = match op {
        AugmentOp::None => lf.clone(),
        AugmentOp::HFlip => lf.remap(s, |[u, v, x, y, c]| [s.u - 1 - u, v, x, s.y - 1 - y, c]),
        AugmentOp::VFlip => lf.remap(s, |[u, v, x, y, c]| [u, s.v - 1 - v, s.x - 1 - x, y, c]),
        AugmentOp::Rot90 => {
            if s.x != s.y || s.u != s.v {
                return Err(TrainError::Unsupported(format!(
                    "rot90 needs square views and a square view grid, got {s}"
                )));
            }
            lf.remap(s, |[u, v, x, y, c]| [v, s.v - 1 - u, s.x - 1 - y, x, c])
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lf(shape: LfShape) -> LightField {
        LightField::from_fn(shape, |(u, v, x, y, c)| {
            ((u * 31 + v * 17 + x * 7 + y * 3 + c) % 23) as f64 / 22.0
        })
        .unwrap()
    }

    #[test]
    fn flips_are_involutions() {
        let a = lf(LfShape::new(3, 4, 5, 6, 2));
        assert_eq!(augment(&a, AugmentOp::None).unwrap(), a);
        for op in [AugmentOp::HFlip, AugmentOp::VFlip] {
            assert_eq!(augment(&augment(&a, op).unwrap(), op).unwrap(), a);
        }
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let a = lf(LfShape::new(3, 3, 5, 5, 1));
        let mut b = a.clone();
        for _ in 0..4 {
            b = augment(&b, AugmentOp::Rot90).unwrap();
        }
        assert_eq!(b, a);
        let rect = lf(LfShape::new(3, 3, 5, 6, 1));
        assert!(augment(&rect, AugmentOp::Rot90).is_err());
    }
}
