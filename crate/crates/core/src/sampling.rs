//! Subset selection used to build self-supervised `(x_down, x)` pairs.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist2, PointCloud};

/// Distinct indices into a source cloud, in selection order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleIndexSet {
    indices: Vec<usize>,
    source_count: usize,
}

impl SampleIndexSet {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMethod {
    #[default]
    Farthest,
    Random,
}

/// Greedy max-min selection of `k` points.
///
/// Starts from the point farthest from the centroid, then repeatedly adds the
/// point whose distance to the chosen set is largest. Exact ties go to the
/// lowest index.
pub fn farthest_point_sample(pc: &PointCloud, k: usize) -> Result<SampleIndexSet> {
    let n = pc.len();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("cannot select {k} of {n} points")));
    }
    let pts = pc.points();
    let c = pc.centroid();
    let mut min_d: Vec<f64> = pts.iter().map(|p| dist2(p, &c)).collect();
    let mut chosen = vec![false; n];
    let mut indices = Vec::with_capacity(k);
    let mut next = argmax(&min_d, &chosen);
    for step in 0..k {
        indices.push(next);
        chosen[next] = true;
        if step + 1 == k {
            break;
        }
        let anchor = pts[next];
        for (i, p) in pts.iter().enumerate() {
            let d = dist2(p, &anchor);
            // The first round still holds centroid distances.
            if step == 0 || d < min_d[i] {
                min_d[i] = d;
            }
        }
        next = argmax(&min_d, &chosen);
    }
    Ok(SampleIndexSet {
        indices,
        source_count: n,
    })
}

fn argmax(values: &[f64], skip: &[bool]) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if !skip[i] && (best == usize::MAX || v > best_v) {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Uniform random subset of size `k`, sorted ascending.
pub fn random_sample(pc: &PointCloud, k: usize, seed: u64) -> Result<SampleIndexSet> {
    let n = pc.len();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("cannot select {k} of {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = index::sample(&mut rng, n, k).into_vec();
    indices.sort_unstable();
    Ok(SampleIndexSet {
        indices,
        source_count: n,
    })
}

/// Reduces `pc` to `floor(len / ratio)` of its own points.
pub fn downsample(pc: &PointCloud, ratio: usize) -> Result<PointCloud> {
    downsample_with(pc, ratio, SamplingMethod::Farthest, 0)
}

pub fn downsample_with(
    pc: &PointCloud,
    ratio: usize,
    method: SamplingMethod,
    seed: u64,
) -> Result<PointCloud> {
    if ratio < 2 {
        return Err(Error::Parameter(format!(
            "downsampling ratio must be >= 2, got {ratio}"
        )));
    }
    let k = pc.len() / ratio;
    if k < 4 {
        return Err(Error::DegenerateInput(format!(
            "downsampling {} points by {ratio} leaves {k} (< 4)",
            pc.len()
        )));
    }
    let set = match method {
        SamplingMethod::Farthest => farthest_point_sample(pc, k)?,
        SamplingMethod::Random => random_sample(pc, k, seed)?,
    };
    pc.select(set.indices())
}
