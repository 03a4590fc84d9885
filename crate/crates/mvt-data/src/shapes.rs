//! Parametric solids and their sampling ranges. Sizes are chosen so that
//! any sampled shape, at the largest scale, fits inside the rendered
//! window (circumscribed radius below `render::VIEW_HALF_EXTENT`) while
//! the smallest features still span multiple pixels at 32x32.

use crate::error::{DataError, Result};
use crate::geom::Quat;
use rand::Rng;

pub const CLASS_NAMES: [&str; 6] = ["sphere", "box", "cylinder", "cone", "torus", "cross"];

pub const SPHERE_RADIUS: (f64, f64) = (0.5, 0.9);
pub const BOX_HALF_EXTENT: (f64, f64) = (0.35, 0.7);
pub const CYLINDER_RADIUS: (f64, f64) = (0.35, 0.6);
pub const CYLINDER_HALF_HEIGHT: (f64, f64) = (0.5, 0.9);
pub const CONE_BASE_RADIUS: (f64, f64) = (0.4, 0.75);
pub const CONE_HALF_HEIGHT: (f64, f64) = (0.5, 0.9);
pub const TORUS_MAJOR_RADIUS: (f64, f64) = (0.55, 0.8);
pub const TORUS_MINOR_RADIUS: (f64, f64) = (0.12, 0.3);
pub const CROSS_ARM_HALF_WIDTH: (f64, f64) = (0.15, 0.3);
pub const CROSS_ARM_HALF_LENGTH: (f64, f64) = (0.65, 0.95);
pub const SCALE_RANGE: (f64, f64) = (0.85, 1.15);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeCategory {
    Sphere,
    Box,
    Cylinder,
    Cone,
    Torus,
    Cross,
}

impl ShapeCategory {
    pub const ALL: [ShapeCategory; 6] = [
        ShapeCategory::Sphere,
        ShapeCategory::Box,
        ShapeCategory::Cylinder,
        ShapeCategory::Cone,
        ShapeCategory::Torus,
        ShapeCategory::Cross,
    ];

    pub fn label(self) -> usize {
        match self {
            ShapeCategory::Sphere => 0,
            ShapeCategory::Box => 1,
            ShapeCategory::Cylinder => 2,
            ShapeCategory::Cone => 3,
            ShapeCategory::Torus => 4,
            ShapeCategory::Cross => 5,
        }
    }

    pub fn from_label(label: usize) -> Result<Self> {
        Self::ALL
            .get(label)
            .copied()
            .ok_or_else(|| DataError::Config(format!("label {label} out of range 0..6")))
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.label()]
    }
}

/// Per-category size parameters, all in object units before pose scale.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeSize {
    Sphere {
        radius: f64,
    },
    /// Axis-aligned half extents before rotation.
    Box {
        half: [f64; 3],
    },
    /// Axis along z.
    Cylinder {
        radius: f64,
        half_height: f64,
    },
    /// Apex at +z, base disc at -z.
    Cone {
        base_radius: f64,
        half_height: f64,
    },
    /// Tube around a circle of `major` radius in the xy plane.
    Torus {
        major: f64,
        minor: f64,
    },
    /// Union of three axis-aligned bars through the origin.
    Cross {
        arm_half_width: f64,
        arm_half_length: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub category: ShapeCategory,
    pub size: ShapeSize,
    pub rotation: Quat,
    pub scale: f64,
}

/// Uniform random rotation (Shoemake's subgroup algorithm).
pub fn uniform_quat<R: Rng>(rng: &mut R) -> Quat {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let two_pi = 2.0 * std::f64::consts::PI;
    Quat::new(
        b * (two_pi * u3).cos(),
        a * (two_pi * u2).sin(),
        a * (two_pi * u2).cos(),
        b * (two_pi * u3).sin(),
    )
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&v)
}

impl ShapeSpec {
    pub fn sample<R: Rng>(category: ShapeCategory, rng: &mut R) -> ShapeSpec {
        let range = |r: &mut R, (lo, hi): (f64, f64)| r.gen_range(lo..hi);
        let size = match category {
            ShapeCategory::Sphere => ShapeSize::Sphere {
                radius: range(rng, SPHERE_RADIUS),
            },
            ShapeCategory::Box => ShapeSize::Box {
                half: [
                    range(rng, BOX_HALF_EXTENT),
                    range(rng, BOX_HALF_EXTENT),
                    range(rng, BOX_HALF_EXTENT),
                ],
            },
            ShapeCategory::Cylinder => ShapeSize::Cylinder {
                radius: range(rng, CYLINDER_RADIUS),
                half_height: range(rng, CYLINDER_HALF_HEIGHT),
            },
            ShapeCategory::Cone => ShapeSize::Cone {
                base_radius: range(rng, CONE_BASE_RADIUS),
                half_height: range(rng, CONE_HALF_HEIGHT),
            },
            ShapeCategory::Torus => ShapeSize::Torus {
                major: range(rng, TORUS_MAJOR_RADIUS),
                minor: range(rng, TORUS_MINOR_RADIUS),
            },
            ShapeCategory::Cross => ShapeSize::Cross {
                arm_half_width: range(rng, CROSS_ARM_HALF_WIDTH),
                arm_half_length: range(rng, CROSS_ARM_HALF_LENGTH),
            },
        };
        ShapeSpec {
            category,
            size,
            rotation: uniform_quat(rng),
            scale: range(rng, SCALE_RANGE),
        }
    }

    /// Radius of the circumscribed sphere in world units (after scale).
    pub fn circumradius(&self) -> f64 {
        let object = match self.size {
            ShapeSize::Sphere { radius } => radius,
            ShapeSize::Box { half } => {
                (half[0] * half[0] + half[1] * half[1] + half[2] * half[2]).sqrt()
            }
            ShapeSize::Cylinder {
                radius,
                half_height,
            } => (radius * radius + half_height * half_height).sqrt(),
            ShapeSize::Cone {
                base_radius,
                half_height,
            } => (base_radius * base_radius + half_height * half_height).sqrt(),
            ShapeSize::Torus { major, minor } => major + minor,
            ShapeSize::Cross {
                arm_half_width,
                arm_half_length,
            } => (arm_half_length * arm_half_length + 2.0 * arm_half_width * arm_half_width)
                .sqrt(),
        };
        object * self.scale
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DataError::Config(msg));
        let size_ok = match self.size {
            ShapeSize::Sphere { radius } => in_range(radius, SPHERE_RADIUS),
            ShapeSize::Box { half } => half.iter().all(|&h| in_range(h, BOX_HALF_EXTENT)),
            ShapeSize::Cylinder {
                radius,
                half_height,
            } => in_range(radius, CYLINDER_RADIUS) && in_range(half_height, CYLINDER_HALF_HEIGHT),
            ShapeSize::Cone {
                base_radius,
                half_height,
            } => in_range(base_radius, CONE_BASE_RADIUS) && in_range(half_height, CONE_HALF_HEIGHT),
            ShapeSize::Torus { major, minor } => {
                in_range(major, TORUS_MAJOR_RADIUS) && in_range(minor, TORUS_MINOR_RADIUS)
            }
            ShapeSize::Cross {
                arm_half_width,
                arm_half_length,
            } => {
                in_range(arm_half_width, CROSS_ARM_HALF_WIDTH)
                    && in_range(arm_half_length, CROSS_ARM_HALF_LENGTH)
            }
        };
        if !size_ok {
            return fail(format!("size out of documented range: {:?}", self.size));
        }
        let matches_category = matches!(
            (&self.size, self.category),
            (ShapeSize::Sphere { .. }, ShapeCategory::Sphere)
                | (ShapeSize::Box { .. }, ShapeCategory::Box)
                | (ShapeSize::Cylinder { .. }, ShapeCategory::Cylinder)
                | (ShapeSize::Cone { .. }, ShapeCategory::Cone)
                | (ShapeSize::Torus { .. }, ShapeCategory::Torus)
                | (ShapeSize::Cross { .. }, ShapeCategory::Cross)
        );
        if !matches_category {
            return fail(format!(
                "size variant {:?} does not match category {:?}",
                self.size, self.category
            ));
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-9 {
            return fail(format!(
                "rotation quaternion norm {} is not 1",
                self.rotation.norm()
            ));
        }
        if !in_range(self.scale, SCALE_RANGE) {
            return fail(format!("scale {} out of range", self.scale));
        }
        Ok(())
    }
}
