//! Orthographic silhouette rendering. Cameras sit on an azimuth circuit
//! at fixed elevation looking at the origin; each pixel casts a line
//! along the view direction and an analytic inside test per solid decides
//! foreground. A one-pixel box blur softens the binary image to [0,1].

use crate::error::{DataError, Result};
use crate::geom::{Quat, Vec3};
use crate::shapes::{ShapeSize, ShapeSpec};

/// Half width of the square view window in world units. Every sampled
/// shape's circumradius stays below this, so silhouettes never clip.
pub const VIEW_HALF_EXTENT: f64 = 1.4;

/// Camera elevation above the xy plane, 30 degrees.
pub const ELEVATION_RAD: f64 = std::f64::consts::PI / 6.0;

/// Largest foreground fraction accepted per view before a shape counts
/// as degenerate.
pub const MAX_FOREGROUND_FRACTION: f64 = 0.9;

/// Orthonormal camera frame; rays run along `forward`.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

/// Camera k of l on the circuit: azimuth 2 pi k / l, elevation 30 deg,
/// looking at the origin with world +z as the up reference.
pub fn camera_for_view(k: usize, l: usize) -> Camera {
    let phi = 2.0 * std::f64::consts::PI * (k as f64) / (l as f64);
    let (sin_a, cos_a) = ELEVATION_RAD.sin_cos();
    let (sin_p, cos_p) = phi.sin_cos();
    let to_camera = Vec3::new(cos_a * cos_p, cos_a * sin_p, sin_a);
    let forward = -to_camera;
    let right = Vec3::new(-sin_p, cos_p, 0.0);
    let up = Vec3::new(-sin_a * cos_p, -sin_a * sin_p, cos_a);
    Camera { right, up, forward }
}

fn hit_sphere(o: Vec3, d: Vec3, radius: f64) -> bool {
    let a = d.dot(d);
    let b = o.dot(d);
    let c = o.dot(o) - radius * radius;
    b * b - a * c >= 0.0
}

fn hit_box(o: Vec3, d: Vec3, half: [f64; 3]) -> bool {
    let os = [o.x, o.y, o.z];
    let ds = [d.x, d.y, d.z];
    let mut tmin = f64::NEG_INFINITY;
    let mut tmax = f64::INFINITY;
    for i in 0..3 {
        if ds[i].abs() < 1e-12 {
            if os[i].abs() > half[i] {
                return false;
            }
        } else {
            let mut lo = (-half[i] - os[i]) / ds[i];
            let mut hi = (half[i] - os[i]) / ds[i];
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            tmin = tmin.max(lo);
            tmax = tmax.min(hi);
            if tmin > tmax {
                return false;
            }
        }
    }
    true
}

fn hit_cylinder(o: Vec3, d: Vec3, radius: f64, half_height: f64) -> bool {
    let a = d.x * d.x + d.y * d.y;
    let b = 2.0 * (o.x * d.x + o.y * d.y);
    let c = o.x * o.x + o.y * o.y - radius * radius;
    if a > 1e-12 {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                if (o.z + t * d.z).abs() <= half_height {
                    return true;
                }
            }
        }
    }
    if d.z.abs() > 1e-12 {
        for zc in [half_height, -half_height] {
            let t = (zc - o.z) / d.z;
            let (x, y) = (o.x + t * d.x, o.y + t * d.y);
            if x * x + y * y <= radius * radius {
                return true;
            }
        }
    }
    false
}

fn hit_cone(o: Vec3, d: Vec3, base_radius: f64, half_height: f64) -> bool {
    // Lateral surface x^2 + y^2 = k^2 (h - z)^2 restricted to |z| <= h,
    // which excludes the mirror nappe above the apex.
    let k = base_radius / (2.0 * half_height);
    let q = half_height - o.z;
    let a = d.x * d.x + d.y * d.y - k * k * d.z * d.z;
    let b = 2.0 * (o.x * d.x + o.y * d.y + k * k * d.z * q);
    let c = o.x * o.x + o.y * o.y - k * k * q * q;
    let z_ok = |t: f64| (o.z + t * d.z).abs() <= half_height;
    if a.abs() > 1e-12 {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                if z_ok(t) {
                    return true;
                }
            }
        }
    } else if b.abs() > 1e-12 && z_ok(-c / b) {
        return true;
    }
    if d.z.abs() > 1e-12 {
        let t = (-half_height - o.z) / d.z;
        let (x, y) = (o.x + t * d.x, o.y + t * d.y);
        if x * x + y * y <= base_radius * base_radius {
            return true;
        }
    }
    false
}

fn hit_torus(o: Vec3, d: Vec3, major: f64, minor: f64) -> bool {
    // The solid torus is the set within `minor` of the center circle, so
    // the line hits iff the minimum over t of the squared tube distance
    // dips below minor^2. The minimum is found by a dense scan over the
    // bounding-sphere interval plus a local ternary refinement.
    let bound = major + minor;
    let a = d.dot(d);
    let b = o.dot(d);
    let c = o.dot(o) - bound * bound;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return false;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq) / a;
    let t1 = (-b + sq) / a;
    let tube_dist2 = |t: f64| {
        let p = o + d * t;
        let rho = (p.x * p.x + p.y * p.y).sqrt();
        let dr = rho - major;
        dr * dr + p.z * p.z
    };
    const STEPS: usize = 96;
    let step = (t1 - t0) / STEPS as f64;
    let mut best_t = t0;
    let mut best = f64::INFINITY;
    for i in 0..=STEPS {
        let t = t0 + step * i as f64;
        let v = tube_dist2(t);
        if v < best {
            best = v;
            best_t = t;
        }
    }
    let m2 = minor * minor;
    if best <= m2 {
        return true;
    }
    let mut lo = best_t - step;
    let mut hi = best_t + step;
    for _ in 0..48 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2t = hi - (hi - lo) / 3.0;
        if tube_dist2(m1) < tube_dist2(m2t) {
            hi = m2t;
        } else {
            lo = m1;
        }
    }
    tube_dist2(0.5 * (lo + hi)) <= m2
}

fn hit_cross(o: Vec3, d: Vec3, w: f64, l: f64) -> bool {
    hit_box(o, d, [l, w, w]) || hit_box(o, d, [w, l, w]) || hit_box(o, d, [w, w, l])
}

fn hits(size: &ShapeSize, o: Vec3, d: Vec3) -> bool {
    match *size {
        ShapeSize::Sphere { radius } => hit_sphere(o, d, radius),
        ShapeSize::Box { half } => hit_box(o, d, half),
        ShapeSize::Cylinder {
            radius,
            half_height,
        } => hit_cylinder(o, d, radius, half_height),
        ShapeSize::Cone {
            base_radius,
            half_height,
        } => hit_cone(o, d, base_radius, half_height),
        ShapeSize::Torus { major, minor } => hit_torus(o, d, major, minor),
        ShapeSize::Cross {
            arm_half_width,
            arm_half_length,
        } => hit_cross(o, d, arm_half_width, arm_half_length),
    }
}

/// Binary silhouette of one view, row-major [h, w], 0.0 or 1.0.
pub fn render_binary(spec: &ShapeSpec, view: usize, l: usize, w: usize, h: usize) -> Vec<f32> {
    let cam = camera_for_view(view, l);
    let rot_inv: Quat = spec.rotation.conjugate();
    let inv_scale = 1.0 / spec.scale;
    // Orthographic: one shared direction, per-pixel origins on the plane
    // through the origin.
    let d_obj = rot_inv.rotate(cam.forward) * inv_scale;
    let mut img = vec![0f32; w * h];
    for py in 0..h {
        let v = 1.0 - 2.0 * ((py as f64 + 0.5) / h as f64);
        for px in 0..w {
            let u = 2.0 * ((px as f64 + 0.5) / w as f64) - 1.0;
            let p0 = cam.right * (u * VIEW_HALF_EXTENT) + cam.up * (v * VIEW_HALF_EXTENT);
            let o_obj = rot_inv.rotate(p0) * inv_scale;
            if hits(&spec.size, o_obj, d_obj) {
                img[py * w + px] = 1.0;
            }
        }
    }
    img
}

/// 3x3 box blur normalized by the in-bounds neighbor count; preserves
/// the [0,1] range.
pub fn box_blur(img: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0f32;
            let mut n = 0f32;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                        sum += img[yy as usize * w + xx as usize];
                        n += 1.0;
                    }
                }
            }
            out[y * w + x] = sum / n;
        }
    }
    out
}

fn check_coverage(binary: &[f32], spec: &ShapeSpec, attempts: usize) -> Result<()> {
    let fg = binary.iter().filter(|&&v| v > 0.5).count();
    let frac = fg as f64 / binary.len() as f64;
    if fg == 0 || frac >= MAX_FOREGROUND_FRACTION {
        return Err(DataError::Degenerate {
            category: spec.category.name(),
            attempts,
        });
    }
    Ok(())
}

/// All l views of one shape, blurred to [0,1]; errors if any view is
/// empty or nearly solid foreground.
pub fn render_views(spec: &ShapeSpec, l: usize, w: usize, h: usize) -> Result<Vec<Vec<f32>>> {
    if l == 0 || w == 0 || h == 0 {
        return Err(DataError::Config(format!(
            "render geometry must be positive, got l={l} w={w} h={h}"
        )));
    }
    spec.validate()?;
    let mut out = Vec::with_capacity(l);
    for k in 0..l {
        let binary = render_binary(spec, k, l, w, h);
        check_coverage(&binary, spec, 1)?;
        out.push(box_blur(&binary, w, h));
    }
    Ok(out)
}

/// Antialiasing reference: binary render at `factor` times the target
/// resolution, block-averaged down. Used as the independent oracle for
/// the pixel-sum golden tests.
pub fn render_views_supersampled(
    spec: &ShapeSpec,
    l: usize,
    w: usize,
    h: usize,
    factor: usize,
) -> Result<Vec<Vec<f32>>> {
    if factor == 0 {
        return Err(DataError::Config("supersampling factor must be >= 1".into()));
    }
    spec.validate()?;
    let (hw, hh) = (w * factor, h * factor);
    let norm = (factor * factor) as f32;
    let mut out = Vec::with_capacity(l);
    for k in 0..l {
        let fine = render_binary(spec, k, l, hw, hh);
        let mut img = vec![0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0f32;
                for sy in 0..factor {
                    for sx in 0..factor {
                        sum += fine[(y * factor + sy) * hw + x * factor + sx];
                    }
                }
                img[y * w + x] = sum / norm;
            }
        }
        out.push(img);
    }
    Ok(out)
}
