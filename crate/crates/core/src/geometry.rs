//! Point clouds, bounding boxes, synthetic shape families and noise.
//!
//! Every cloud produced here lives in model units. Shape generators sample
//! directly on surfaces whose parameter ranges keep them inside the unit
//! cube centered at the origin, so no rescaling is applied after sampling
//! and the implicit-surface residuals stay at round-off level.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::SpatialIndex;

pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// An ordered, nonempty set of finite 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    label: Option<String>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Parameter(
                "point cloud must contain at least one point".into(),
            ));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Parameter(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self {
            points,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    /// Sub-cloud made of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        let pts = indices
            .iter()
            .map(|&i| {
                self.points.get(i).copied().ok_or_else(|| {
                    Error::Parameter(format!("index {i} out of range for {} points", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = PointCloud::new(pts)?;
        out.label = self.label.clone();
        Ok(out)
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Applies `f` to every point; the result must stay finite.
    pub fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> Result<PointCloud> {
        let mut out = PointCloud::new(self.points.iter().map(f).collect())?;
        out.label = self.label.clone();
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub min_corner: Point3,
    pub max_corner: Point3,
    pub diagonal: f64,
}

impl BoundingBox {
    pub fn extents(&self) -> Point3 {
        [
            self.max_corner[0] - self.min_corner[0],
            self.max_corner[1] - self.min_corner[1],
            self.max_corner[2] - self.min_corner[2],
        ]
    }

    pub fn center(&self) -> Point3 {
        [
            0.5 * (self.min_corner[0] + self.max_corner[0]),
            0.5 * (self.min_corner[1] + self.max_corner[1]),
            0.5 * (self.min_corner[2] + self.max_corner[2]),
        ]
    }
}

pub fn bounding_box(pc: &PointCloud) -> BoundingBox {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pc.points() {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    BoundingBox {
        min_corner: lo,
        max_corner: hi,
        diagonal: dist2(&lo, &hi).sqrt(),
    }
}

/// Adds zero-mean Gaussian noise with sigma = `level` times the bounding-box diagonal.
pub fn add_gaussian_noise(pc: &PointCloud, level: f64, seed: u64) -> Result<PointCloud> {
    if !(0.0..=0.1).contains(&level) {
        return Err(Error::Parameter(format!(
            "noise level must lie in [0, 0.1], got {level}"
        )));
    }
    if level == 0.0 {
        return Ok(pc.clone());
    }
    let sigma = level * bounding_box(pc).diagonal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = pc.clone();
    for p in out.points.iter_mut() {
        for c in p.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *c += sigma * z;
        }
    }
    Ok(out)
}

/// Affine map into `[-0.5, 0.5]^3`: `q = (p - offset) / scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub scale: f64,
    pub offset: Point3,
}

impl Normalization {
    pub fn apply(&self, p: &Point3) -> Point3 {
        [
            (p[0] - self.offset[0]) / self.scale,
            (p[1] - self.offset[1]) / self.scale,
            (p[2] - self.offset[2]) / self.scale,
        ]
    }

    pub fn invert(&self, q: &Point3) -> Point3 {
        [
            q[0] * self.scale + self.offset[0],
            q[1] * self.scale + self.offset[1],
            q[2] * self.scale + self.offset[2],
        ]
    }

    pub fn invert_cloud(&self, pc: &PointCloud) -> Result<PointCloud> {
        pc.map_points(|q| self.invert(q))
    }
}

pub fn normalize_to_unit(pc: &PointCloud) -> Result<(PointCloud, Normalization)> {
    let bb = bounding_box(pc);
    if bb.diagonal == 0.0 {
        return Err(Error::DegenerateInput(
            "cannot normalize a cloud whose points all coincide".into(),
        ));
    }
    let e = bb.extents();
    let norm = Normalization {
        scale: e[0].max(e[1]).max(e[2]),
        offset: bb.center(),
    };
    Ok((pc.map_points(|p| norm.apply(p))?, norm))
}

/// Parametric surface families used as synthetic training and test data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    Sphere,
    Torus,
    Superellipsoid,
    BumpPlane,
    Cylinder,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 5] = [
        ShapeFamily::Sphere,
        ShapeFamily::Torus,
        ShapeFamily::Superellipsoid,
        ShapeFamily::BumpPlane,
        ShapeFamily::Cylinder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Torus => "torus",
            ShapeFamily::Superellipsoid => "superellipsoid",
            ShapeFamily::BumpPlane => "bump-plane",
            ShapeFamily::Cylinder => "cylinder",
        }
    }

    /// Draws a random valid shape of this family.
    pub fn random_shape<R: Rng>(self, rng: &mut R) -> Shape {
        match self {
            ShapeFamily::Sphere => Shape::Sphere {
                radius: rng.random_range(0.3..=0.5),
            },
            ShapeFamily::Torus => {
                let major: f64 = rng.random_range(0.25..=0.35);
                let minor = rng.random_range(0.08..=(0.5 - major).min(0.15));
                Shape::Torus { major, minor }
            }
            ShapeFamily::Superellipsoid => Shape::Superellipsoid {
                axes: [
                    rng.random_range(0.25..=0.5),
                    rng.random_range(0.25..=0.5),
                    rng.random_range(0.25..=0.5),
                ],
                e1: rng.random_range(0.3..=1.8),
                e2: rng.random_range(0.3..=1.8),
            },
            ShapeFamily::BumpPlane => {
                let h: f64 = rng.random_range(0.2..=0.5);
                Shape::BumpPlane {
                    height: if rng.random_bool(0.5) { h } else { -h },
                    width: rng.random_range(0.1..=0.25),
                }
            }
            ShapeFamily::Cylinder => Shape::Cylinder {
                radius: rng.random_range(0.2..=0.5),
                height: rng.random_range(0.4..=1.0),
            },
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown shape family `{s}`")))
    }
}

/// A concrete surface with family-specific parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    /// Ring around the z axis.
    Torus {
        major: f64,
        minor: f64,
    },
    /// `(|x/a|^(2/e2) + |y/b|^(2/e2))^(e2/e1) + |z/c|^(2/e1) = 1`.
    Superellipsoid {
        axes: [f64; 3],
        e1: f64,
        e2: f64,
    },
    /// `z = height * exp(-(x^2+y^2) / (2 width^2)) - height/2` over `[-0.5, 0.5]^2`.
    BumpPlane {
        height: f64,
        width: f64,
    },
    /// Open lateral surface around the z axis.
    Cylinder {
        radius: f64,
        height: f64,
    },
}

impl Shape {
    pub fn family(&self) -> ShapeFamily {
        match self {
            Shape::Sphere { .. } => ShapeFamily::Sphere,
            Shape::Torus { .. } => ShapeFamily::Torus,
            Shape::Superellipsoid { .. } => ShapeFamily::Superellipsoid,
            Shape::BumpPlane { .. } => ShapeFamily::BumpPlane,
            Shape::Cylinder { .. } => ShapeFamily::Cylinder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        let in_range = |v: f64, lo: f64, hi: f64| v.is_finite() && v > lo && v <= hi;
        match *self {
            Shape::Sphere { radius } => {
                if !in_range(radius, 0.0, 0.5) {
                    return bad(format!("sphere radius must be in (0, 0.5], got {radius}"));
                }
            }
            Shape::Torus { major, minor } => {
                if !(minor.is_finite() && major.is_finite() && minor > 0.0 && minor < major) {
                    return bad(format!(
                        "torus needs 0 < minor < major, got major={major} minor={minor}"
                    ));
                }
                if major + minor > 0.5 {
                    return bad(format!(
                        "torus major+minor must be <= 0.5, got {}",
                        major + minor
                    ));
                }
            }
            Shape::Superellipsoid { axes, e1, e2 } => {
                if let Some(a) = axes.iter().find(|&&a| !in_range(a, 0.0, 0.5)) {
                    return bad(format!(
                        "superellipsoid semi-axes must be in (0, 0.5], got {a}"
                    ));
                }
                for e in [e1, e2] {
                    if !(e.is_finite() && (0.1..=4.0).contains(&e)) {
                        return bad(format!(
                            "superellipsoid exponents must be in [0.1, 4], got {e}"
                        ));
                    }
                }
            }
            Shape::BumpPlane { height, width } => {
                if !(height.is_finite() && height.abs() <= 1.0) {
                    return bad(format!("bump height must satisfy |h| <= 1, got {height}"));
                }
                if !in_range(width, 0.0, 1.0) {
                    return bad(format!("bump width must be in (0, 1], got {width}"));
                }
            }
            Shape::Cylinder { radius, height } => {
                if !in_range(radius, 0.0, 0.5) {
                    return bad(format!("cylinder radius must be in (0, 0.5], got {radius}"));
                }
                if !in_range(height, 0.0, 1.0) {
                    return bad(format!("cylinder height must be in (0, 1], got {height}"));
                }
            }
        }
        Ok(())
    }

    /// Implicit-surface residual; zero on the surface.
    pub fn residual(&self, p: &Point3) -> f64 {
        let [x, y, z] = *p;
        match *self {
            Shape::Sphere { radius } => (x * x + y * y + z * z).sqrt() - radius,
            Shape::Torus { major, minor } => {
                let q = (x * x + y * y).sqrt() - major;
                q * q + z * z - minor * minor
            }
            Shape::Superellipsoid {
                axes: [a, b, c],
                e1,
                e2,
            } => {
                let xy = (x / a).abs().powf(2.0 / e2) + (y / b).abs().powf(2.0 / e2);
                xy.powf(e2 / e1) + (z / c).abs().powf(2.0 / e1) - 1.0
            }
            Shape::BumpPlane { height, width } => {
                z - (height * (-(x * x + y * y) / (2.0 * width * width)).exp() - 0.5 * height)
            }
            Shape::Cylinder { radius, .. } => (x * x + y * y).sqrt() - radius,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Point3 {
        match *self {
            Shape::Sphere { radius } => loop {
                let v: [f64; 3] = [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-12 {
                    break [radius * v[0] / n, radius * v[1] / n, radius * v[2] / n];
                }
            },
            Shape::Torus { major, minor } => loop {
                // Rejection on the tube angle gives an area-uniform sample.
                let u = rng.random_range(0.0..2.0 * PI);
                let v = rng.random_range(0.0..2.0 * PI);
                let w: f64 = rng.random();
                if w * (major + minor) <= major + minor * v.cos() {
                    let ring = major + minor * v.cos();
                    break [ring * u.cos(), ring * u.sin(), minor * v.sin()];
                }
            },
            Shape::Superellipsoid {
                axes: [a, b, c],
                e1,
                e2,
            } => {
                let eta = rng.random_range(-1.0f64..=1.0).asin();
                let omega = rng.random_range(-PI..PI);
                let ce = signed_pow(eta.cos(), e1);
                [
                    a * ce * signed_pow(omega.cos(), e2),
                    b * ce * signed_pow(omega.sin(), e2),
                    c * signed_pow(eta.sin(), e1),
                ]
            }
            Shape::BumpPlane { height, width } => {
                let x = rng.random_range(-0.5..=0.5);
                let y = rng.random_range(-0.5..=0.5);
                let z = height * (-(x * x + y * y) / (2.0 * width * width)).exp() - 0.5 * height;
                [x, y, z]
            }
            Shape::Cylinder { radius, height } => {
                let t = rng.random_range(0.0..2.0 * PI);
                let z = rng.random_range(-0.5 * height..=0.5 * height);
                [radius * t.cos(), radius * t.sin(), z]
            }
        }
    }
}

fn signed_pow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeSpec {
    pub shape: Shape,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn new(shape: Shape, seed: u64) -> Self {
        Self { shape, seed }
    }
}

/// Samples `n` points on the surface described by `spec`.
pub fn generate_shape(spec: &ShapeSpec, n: usize) -> Result<PointCloud> {
    if n < 8 {
        return Err(Error::Parameter(format!("need at least 8 points, got {n}")));
    }
    spec.shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points = (0..n).map(|_| spec.shape.sample(&mut rng)).collect();
    Ok(PointCloud::new(points)?.with_label(spec.shape.family().name()))
}

/// Uniformly distributed rotation matrix (row-major).
pub fn random_rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let u1: f64 = rng.random();
    let u2 = rng.random_range(0.0..2.0 * PI);
    let u3 = rng.random_range(0.0..2.0 * PI);
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos());
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

pub fn rotate(pc: &PointCloud, m: &[[f64; 3]; 3]) -> Result<PointCloud> {
    pc.map_points(|p| {
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    })
}

/// Mean distance from each point to its nearest other point; `0` for a
/// single point.
pub fn mean_spacing(pc: &PointCloud) -> f64 {
    if pc.len() < 2 {
        return 0.0;
    }
    let index = SpatialIndex::new(pc);
    let total: f64 = (0..pc.len())
        .map(|i| index.nearest_other(i).map_or(0.0, |(_, d)| d.sqrt()))
        .sum();
    total / pc.len() as f64
}
