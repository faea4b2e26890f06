use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};
use crate::seed::rng_for;

/// Quarter-turn rotation, counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub fn quarter_turns(self) -> usize {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 1,
            Rotation::R180 => 2,
            Rotation::R270 => 3,
        }
    }
}

/// On-the-fly augmentation policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub rotations: Vec<Rotation>,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn none() -> Self {
        Self {
            horizontal_flip: false,
            vertical_flip: false,
            rotations: Vec::new(),
            seed: 0,
        }
    }

    /// Flips plus all four quarter turns.
    pub fn full(seed: u64) -> Self {
        Self {
            horizontal_flip: true,
            vertical_flip: true,
            rotations: vec![Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270],
            seed,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.horizontal_flip
            && !self.vertical_flip
            && self.rotations.iter().all(|r| *r == Rotation::R0)
    }
}

/// The concrete transform drawn for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transform {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub rotation: Rotation,
}

impl AugmentSpec {
    pub fn draw(&self, draw: u64) -> Transform {
        let mut rng = rng_for(self.seed, &format!("augment.{draw}"));
        let horizontal_flip = self.horizontal_flip && rng.random::<bool>();
        let vertical_flip = self.vertical_flip && rng.random::<bool>();
        let rotation = if self.rotations.is_empty() {
            Rotation::R0
        } else {
            self.rotations[rng.random_range(0..self.rotations.len())]
        };
        Transform {
            horizontal_flip,
            vertical_flip,
            rotation,
        }
    }
}

/// `(planes, height, width)` of a 2D or channel-first 3D image.
fn planes(image: &Tensor) -> Result<(usize, usize, usize), NnError> {
    match *image.shape() {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        _ => Err(NnError::ShapeMismatch {
            expected: vec![0, 0, 0],
            actual: image.shape().to_vec(),
        }),
    }
}

fn with_hw(image: &Tensor, h: usize, w: usize) -> Vec<usize> {
    match image.shape().len() {
        2 => vec![h, w],
        _ => vec![image.shape()[0], h, w],
    }
}

fn remap(
    image: &Tensor,
    out_h: usize,
    out_w: usize,
    source: impl Fn(usize, usize) -> (usize, usize),
) -> Result<Tensor, NnError> {
    let (c, h, w) = planes(image)?;
    let src = image.data();
    let mut data = vec![0.0; c * out_h * out_w];
    for p in 0..c {
        for y in 0..out_h {
            for x in 0..out_w {
                let (sy, sx) = source(y, x);
                data[(p * out_h + y) * out_w + x] = src[(p * h + sy) * w + sx];
            }
        }
    }
    Tensor::new(with_hw(image, out_h, out_w), data)
}

/// Mirror left-right.
pub fn flip_horizontal(image: &Tensor) -> Result<Tensor, NnError> {
    let (_, h, w) = planes(image)?;
    remap(image, h, w, |y, x| (y, w - 1 - x))
}

/// Mirror top-bottom.
pub fn flip_vertical(image: &Tensor) -> Result<Tensor, NnError> {
    let (_, h, w) = planes(image)?;
    remap(image, h, w, |y, x| (h - 1 - y, x))
}

/// One counter-clockwise quarter turn.
pub fn rotate90(image: &Tensor) -> Result<Tensor, NnError> {
    let (_, h, w) = planes(image)?;
    remap(image, w, h, |y, x| (x, w - 1 - y))
}

pub fn apply(image: &Tensor, t: Transform) -> Result<Tensor, NnError> {
    let mut out = image.clone();
    if t.horizontal_flip {
        out = flip_horizontal(&out)?;
    }
    if t.vertical_flip {
        out = flip_vertical(&out)?;
    }
    for _ in 0..t.rotation.quarter_turns() {
        out = rotate90(&out)?;
    }
    Ok(out)
}

/// Apply the transform drawn for `(spec.seed, draw)`.
pub fn augment(image: &Tensor, spec: &AugmentSpec, draw: u64) -> Result<Tensor, NnError> {
    apply(image, spec.draw(draw))
}
