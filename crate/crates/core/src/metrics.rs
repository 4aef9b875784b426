//! Chamfer distance, point-cloud PSNR and the Chamfer training loss.

use serde::{Deserialize, Serialize};

use crate::geometry::{bounding_box, dist2, Point3, PointCloud};
use crate::kdtree::SpatialIndex;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

/// Sum of squared nearest-neighbor distances from every point of `from` into `to`.
fn directed_sum(from: &PointCloud, to: &SpatialIndex) -> f64 {
    from.points().iter().map(|p| to.nearest(p).1).sum()
}

pub fn nearest(index: &SpatialIndex, q: &Point3) -> (usize, f64) {
    index.nearest(q)
}

/// Symmetric Chamfer distance with squared Euclidean terms.
pub fn chamfer_distance(y: &PointCloud, g: &PointCloud, reduction: Reduction) -> f64 {
    let yg = directed_sum(y, &SpatialIndex::new(g));
    let gy = directed_sum(g, &SpatialIndex::new(y));
    match reduction {
        Reduction::Sum => yg + gy,
        Reduction::Mean => yg / y.len() as f64 + gy / g.len() as f64,
    }
}

/// `10 log10(p_s^2 / d_mse)` taken in the worse of both directions, with
/// `p_s` the ground-truth bounding-box diagonal. Identical sets give `+inf`.
pub fn psnr(y: &PointCloud, g: &PointCloud) -> f64 {
    let ps = bounding_box(g).diagonal;
    let mse_yg = directed_sum(y, &SpatialIndex::new(g)) / y.len() as f64;
    let mse_gy = directed_sum(g, &SpatialIndex::new(y)) / g.len() as f64;
    let one = |mse: f64| {
        if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (ps * ps / mse).log10()
        }
    };
    one(mse_yg).min(one(mse_gy))
}

/// Nearest-neighbor assignments in both directions between a prediction and a target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChamferMatches {
    /// For every predicted point, the index of its nearest target point.
    pub forward: Vec<usize>,
    /// For every target point, the index of its nearest predicted point.
    pub backward: Vec<usize>,
}

pub fn chamfer_matches(y: &PointCloud, g: &PointCloud) -> ChamferMatches {
    let gi = SpatialIndex::new(g);
    let yi = SpatialIndex::new(y);
    ChamferMatches {
        forward: y.points().iter().map(|p| gi.nearest(p).0).collect(),
        backward: g.points().iter().map(|b| yi.nearest(b).0).collect(),
    }
}

/// Mean-reduced Chamfer loss under fixed correspondences, with its gradient
/// with respect to `y`. The loss is a smooth quadratic in `y`.
///
/// # Panics
///
/// If `m` was not computed for clouds of the same sizes.
pub fn matched_loss_grad(y: &[Point3], g: &[Point3], m: &ChamferMatches) -> (f64, Vec<Point3>) {
    assert_eq!(
        m.forward.len(),
        y.len(),
        "forward matches do not fit the prediction"
    );
    assert_eq!(
        m.backward.len(),
        g.len(),
        "backward matches do not fit the target"
    );
    let ny = y.len() as f64;
    let ng = g.len() as f64;
    let mut grad = vec![[0.0; 3]; y.len()];
    let mut yg = 0.0;
    for (a, (p, &j)) in y.iter().zip(&m.forward).enumerate() {
        let b = g[j];
        yg += dist2(p, &b);
        for k in 0..3 {
            grad[a][k] += 2.0 * (p[k] - b[k]) / ny;
        }
    }
    let mut gy = 0.0;
    for (b, &a) in g.iter().zip(&m.backward) {
        let p = y[a];
        gy += dist2(&p, b);
        for k in 0..3 {
            grad[a][k] += 2.0 * (p[k] - b[k]) / ng;
        }
    }
    (yg / ny + gy / ng, grad)
}

/// Mean-reduced Chamfer loss and its gradient with respect to `y`.
///
/// Nearest-neighbor correspondences are treated as constants, so the
/// gradient is exact wherever they do not switch.
pub fn chamfer_loss_grad(y: &PointCloud, g: &PointCloud) -> (f64, Vec<Point3>) {
    matched_loss_grad(y.points(), g.points(), &chamfer_matches(y, g))
}

/// Evaluation record for one prediction against its ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cd_sum: f64,
    pub cd_mean: f64,
    pub psnr_db: f64,
    pub wall_time_ms: f64,
}

impl MetricReport {
    pub fn evaluate(y: &PointCloud, g: &PointCloud, wall_time_ms: f64) -> Self {
        let yg = directed_sum(y, &SpatialIndex::new(g));
        let gy = directed_sum(g, &SpatialIndex::new(y));
        let ps = bounding_box(g).diagonal;
        let db = |mse: f64| {
            if mse == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (ps * ps / mse).log10()
            }
        };
        let (my, mg) = (yg / y.len() as f64, gy / g.len() as f64);
        Self {
            cd_sum: yg + gy,
            cd_mean: my + mg,
            psnr_db: db(my).min(db(mg)),
            wall_time_ms,
        }
    }

    pub const TSV_HEADER: &'static str = "cd_sum_e2\tcd_mean_e2\tpsnr_db\twall_time_ms";

    /// One tab-separated line; Chamfer values are scaled by 100.
    pub fn to_tsv(&self) -> String {
        format!(
            "{:.6}\t{:.6}\t{}\t{:.3}",
            self.cd_sum * 100.0,
            self.cd_mean * 100.0,
            format_db(self.psnr_db),
            self.wall_time_ms
        )
    }
}

pub fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:.4}")
    }
}
