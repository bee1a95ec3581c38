//! Closed-form ray intersections with the analytic scene surfaces, and the
//! matching point-to-surface distances used to verify rendered geometry.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::transforms::{RigidTransform, Transform3};

/// Hits closer than this along the ray are ignored.
const T_MIN: f64 = 1e-9;

/// `origin + t · dir`; `dir` need not be unit length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.dir * t
    }
}

/// Both solutions of `|w + t u|² = r²`, smaller first.
///
/// Solved about the point of closest approach, where the residual `w₀` is
/// formed directly instead of as a difference of large squares, then
/// polished by one Newton step on the implicit equation.
fn radial_roots(w: &Vector3<f64>, u: &Vector3<f64>, r: f64) -> Option<(f64, f64)> {
    let uu = u.norm_squared();
    if uu == 0.0 {
        return None;
    }
    let t0 = -w.dot(u) / uu;
    let w0 = (w + u * t0).norm();
    if w0 > r {
        return None;
    }
    let half = ((r - w0) * (r + w0)).sqrt() / uu.sqrt();
    let polish = |t: f64| {
        let p = w + u * t;
        let slope = 2.0 * u.dot(&p);
        let step = (p.norm_squared() - r * r) / slope;
        if step.is_finite() && step.abs() < half {
            t - step
        } else {
            t
        }
    };
    Some((polish(t0 - half), polish(t0 + half)))
}

fn nearest(candidates: impl IntoIterator<Item = f64>) -> Option<f64> {
    candidates
        .into_iter()
        .filter(|t| *t > T_MIN && t.is_finite())
        .min_by(f64::total_cmp)
}

pub fn ray_sphere(ray: &Ray, center: &Vector3<f64>, radius: f64) -> Option<f64> {
    let (t1, t2) = radial_roots(&(ray.origin - center), &ray.dir, radius)?;
    nearest([t1, t2])
}

/// Horizontal plane `z = height`, optionally limited to `[x0, x1] × [y0, y1]`.
pub fn ray_plane(ray: &Ray, height: f64, bounds: Option<[f64; 4]>) -> Option<f64> {
    if ray.dir.z == 0.0 {
        return None;
    }
    let t = (height - ray.origin.z) / ray.dir.z;
    let t = nearest([t])?;
    if let Some([x0, y0, x1, y1]) = bounds {
        let p = ray.at(t);
        if p.x < x0 || p.x > x1 || p.y < y0 || p.y > y1 {
            return None;
        }
    }
    Some(t)
}

/// Oriented box with `pose` mapping box coordinates to the world.
pub fn ray_box(ray: &Ray, pose: &RigidTransform, half: &Vector3<f64>) -> Option<f64> {
    let inv = pose.inverse();
    let o = inv.apply(&ray.origin);
    let d = inv.rotation.apply(&ray.dir);
    let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        if d[i] == 0.0 {
            if o[i].abs() > half[i] {
                return None;
            }
            continue;
        }
        let (a, b) = ((-half[i] - o[i]) / d[i], (half[i] - o[i]) / d[i]);
        t_near = t_near.max(a.min(b));
        t_far = t_far.min(a.max(b));
    }
    if t_near > t_far {
        return None;
    }
    nearest([t_near, t_far])
}

/// Capsule of `radius` around segment `a`-`b`: a cylinder body plus two
/// hemispherical caps.
pub fn ray_capsule(ray: &Ray, a: &Vector3<f64>, b: &Vector3<f64>, radius: f64) -> Option<f64> {
    let ba = b - a;
    let baba = ba.norm_squared();
    if baba == 0.0 {
        return ray_sphere(ray, a, radius);
    }
    let oa = ray.origin - a;
    let (bard, baoa) = (ba.dot(&ray.dir), ba.dot(&oa));
    let mut hits = Vec::with_capacity(6);
    // infinite cylinder, kept where the hit projects inside the segment
    let axis = ba / baba.sqrt();
    let across = |v: &Vector3<f64>| v - axis * axis.dot(v);
    if let Some((t1, t2)) = radial_roots(&across(&oa), &across(&ray.dir), radius) {
        for t in [t1, t2] {
            let y = baoa + t * bard;
            if y > 0.0 && y < baba {
                hits.push(t);
            }
        }
    }
    for (center, cap_a) in [(a, true), (b, false)] {
        if let Some((t1, t2)) = radial_roots(&(ray.origin - center), &ray.dir, radius) {
            for t in [t1, t2] {
                let y = baoa + t * bard;
                if (cap_a && y <= 0.0) || (!cap_a && y >= baba) {
                    hits.push(t);
                }
            }
        }
    }
    nearest(hits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Surface {
    Plane {
        height: f64,
        bounds: Option<[f64; 4]>,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    Box {
        pose: RigidTransform,
        half_extents: Vector3<f64>,
    },
    Capsule {
        a: Vector3<f64>,
        b: Vector3<f64>,
        radius: f64,
    },
}

impl Surface {
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        match self {
            Surface::Plane { height, bounds } => ray_plane(ray, *height, *bounds),
            Surface::Sphere { center, radius } => ray_sphere(ray, center, *radius),
            Surface::Box { pose, half_extents } => ray_box(ray, pose, half_extents),
            Surface::Capsule { a, b, radius } => ray_capsule(ray, a, b, *radius),
        }
    }

    /// Unsigned distance from `p` to the surface.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Surface::Plane { height, bounds } => {
                let dz = p.z - height;
                match bounds {
                    Some([x0, y0, x1, y1]) => {
                        let dx = (x0 - p.x).max(p.x - x1).max(0.0);
                        let dy = (y0 - p.y).max(p.y - y1).max(0.0);
                        (dx * dx + dy * dy + dz * dz).sqrt()
                    }
                    None => dz.abs(),
                }
            }
            Surface::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
            Surface::Box { pose, half_extents } => {
                let q = pose.inverse().apply(p).abs() - half_extents;
                let outside = q.map(|v| v.max(0.0)).norm();
                let inside = q.max().min(0.0);
                (outside + inside).abs()
            }
            Surface::Capsule { a, b, radius } => {
                let ba = b - a;
                let baba = ba.norm_squared();
                let h = if baba == 0.0 {
                    0.0
                } else {
                    ((p - a).dot(&ba) / baba).clamp(0.0, 1.0)
                };
                ((p - a - ba * h).norm() - radius).abs()
            }
        }
    }
}
