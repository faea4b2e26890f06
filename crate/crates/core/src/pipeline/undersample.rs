use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{skewness, PipelineError};
use crate::seed::rng_for;

pub const MAX_INTENSITY: u8 = 63;

/// A quantized night-light observation linked to a daytime image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NightCell {
    pub cell_id: String,
    pub intensity: u8,
    pub image: String,
}

impl NightCell {
    pub fn new(cell_id: impl Into<String>, intensity: u8, image: impl Into<String>) -> Self {
        Self {
            cell_id: cell_id.into(),
            intensity: intensity.min(MAX_INTENSITY),
            image: image.into(),
        }
    }
}

fn moments_skew(n: f64, s1: f64, s2: f64, s3: f64) -> Option<f64> {
    let mean = s1 / n;
    let m2 = s2 / n - mean * mean;
    let m3 = s3 / n - 3.0 * mean * s2 / n + 2.0 * mean.powi(3);
    (m2 > 1e-12).then(|| m3 / m2.powf(1.5))
}

/// Drop cells from the currently most populated intensity level (ties to the lower
/// intensity), picking uniformly at random within the level, until the skewness of
/// the remainder is at most `target`. Surviving cells keep their input order.
pub fn undersample_skew(
    cells: &[NightCell],
    target: f64,
    seed: u64,
) -> Result<Vec<NightCell>, PipelineError> {
    let values: Vec<f64> = cells.iter().map(|c| c.intensity as f64).collect();
    let initial = skewness(&values)?;
    if initial <= target {
        return Ok(cells.to_vec());
    }
    let levels = MAX_INTENSITY as usize + 1;
    let mut queues: Vec<Vec<usize>> = vec![Vec::new(); levels];
    for (i, c) in cells.iter().enumerate() {
        queues[c.intensity.min(MAX_INTENSITY) as usize].push(i);
    }
    for (level, q) in queues.iter_mut().enumerate() {
        q.shuffle(&mut rng_for(seed, &format!("undersample.{level}")));
        // Pop from the back; reverse so the shuffled order is consumed front to back.
        q.reverse();
    }
    let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
    for v in &values {
        s1 += v;
        s2 += v * v;
        s3 += v * v * v;
    }
    let mut removed = vec![false; cells.len()];
    let mut remaining = cells.len();
    let mut best = initial;
    while remaining > 3 {
        let level = (0..levels)
            .max_by(|&a, &b| queues[a].len().cmp(&queues[b].len()).then(b.cmp(&a)))
            .unwrap();
        let idx = queues[level].pop().unwrap();
        removed[idx] = true;
        remaining -= 1;
        let v = level as f64;
        s1 -= v;
        s2 -= v * v;
        s3 -= v * v * v;
        let Some(skew) = moments_skew(remaining as f64, s1, s2, s3) else {
            break;
        };
        best = best.min(skew);
        if skew <= target {
            let out: Vec<NightCell> = cells
                .iter()
                .zip(&removed)
                .filter(|(_, r)| !**r)
                .map(|(c, _)| c.clone())
                .collect();
            // Guard the incremental moments against drift with an exact recomputation.
            let exact = skewness(&out.iter().map(|c| c.intensity as f64).collect::<Vec<_>>())?;
            if exact <= target {
                return Ok(out);
            }
        }
    }
    Err(PipelineError::SkewUnreachable {
        target,
        achieved: best,
    })
}
