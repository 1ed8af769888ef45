//! Arm forward kinematics, end-effector/object contact, quasi-static planar
//! pushing under an ellipsoidal limit-surface law, tip-versus-slide checking,
//! and physical-parameter randomization.

use crate::world::{normalize_angle, MovableObject, Pose6, Shape};
use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use serde::Deserialize;

/// One revolute joint: fixed link offset applied before the rotation.
#[derive(Debug, Clone, Deserialize)]
pub struct Joint {
    pub axis: [f64; 3],
    pub offset: [f64; 3],
    pub limits: [f64; 2],
}

/// Six-joint kinematic arm with a spherical pusher at the wrist.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmModel {
    pub joints: [Joint; 6],
    pub ee_radius: f64,
}

impl Default for ArmModel {
    fn default() -> Self {
        // Roughly 0.75 m reach; axes z-y-y-y-z-x resemble a small 6-DOF arm.
        let j = |axis: [f64; 3], offset: [f64; 3], limits: [f64; 2]| Joint { axis, offset, limits };
        ArmModel {
            joints: [
                j([0.0, 0.0, 1.0], [0.0, 0.0, 0.10], [-2.9, 2.9]),
                j([0.0, 1.0, 0.0], [0.0, 0.0, 0.05], [-1.6, 1.6]),
                j([0.0, 1.0, 0.0], [0.32, 0.0, 0.0], [-2.6, 2.6]),
                j([0.0, 1.0, 0.0], [0.28, 0.0, 0.0], [-2.6, 2.6]),
                j([0.0, 0.0, 1.0], [0.10, 0.0, 0.0], [-2.9, 2.9]),
                j([1.0, 0.0, 0.0], [0.05, 0.0, 0.0], [-3.0, 3.0]),
            ],
            ee_radius: 0.05,
        }
    }
}

impl ArmModel {
    /// Joint configuration the arm retracts to on episode reset: end effector
    /// raised above the tallest object spawn.
    pub fn home_q(&self) -> [f64; 6] {
        [0.0, -0.6, -0.6, 0.0, 0.0, 0.0]
    }

    pub fn clamp_q(&self, q: &[f64; 6]) -> ([f64; 6], bool) {
        let mut out = *q;
        let mut clamped = false;
        for (i, joint) in self.joints.iter().enumerate() {
            let c = out[i].clamp(joint.limits[0], joint.limits[1]);
            if c != out[i] {
                clamped = true;
                out[i] = c;
            }
        }
        (out, clamped)
    }
}

/// End-effector pose in the arm base frame. Joint values outside their limits
/// are clamped; the flag reports whether clamping occurred.
pub fn forward_kinematics(arm: &ArmModel, q: &[f64; 6]) -> (Pose6, bool) {
    let (q, clamped) = arm.clamp_q(q);
    let mut t = Isometry3::identity();
    for (joint, &angle) in arm.joints.iter().zip(q.iter()) {
        let axis = Unit::new_normalize(Vector3::from(joint.axis));
        t *= Isometry3::from_parts(
            Translation3::new(joint.offset[0], joint.offset[1], joint.offset[2]),
            UnitQuaternion::from_axis_angle(&axis, angle),
        );
    }
    let (roll, pitch, yaw) = t.rotation.euler_angles();
    (
        Pose6::new(t.translation.vector, Vector3::new(yaw, pitch, roll)),
        clamped,
    )
}

/// End-effector position only; convenience wrapper.
pub fn ee_position(arm: &ArmModel, q: &[f64; 6]) -> Vector3<f64> {
    forward_kinematics(arm, q).0.position
}

/// Contact between the spherical pusher and an object.
#[derive(Debug, Clone, Copy)]
pub struct ContactState {
    pub active: bool,
    /// Closest point on the object surface, world frame.
    pub point: Vector3<f64>,
    /// Unit normal pointing into the object.
    pub normal: Vector3<f64>,
    pub penetration: f64,
}

impl ContactState {
    pub fn inactive() -> Self {
        ContactState {
            active: false,
            point: Vector3::zeros(),
            normal: Vector3::zeros(),
            penetration: 0.0,
        }
    }
}

/// Sphere-versus-object closest-point contact test.
pub fn detect_contact(ee_center: Vector3<f64>, ee_radius: f64, obj: &MovableObject) -> ContactState {
    let center = obj.pose.position;
    match obj.shape {
        Shape::Box { lx, ly, lz } => {
            let yaw = obj.pose.yaw();
            let (s, c) = yaw.sin_cos();
            let d_world = ee_center - center;
            // Object frame: yaw-only rotation.
            let d = Vector3::new(
                c * d_world.x + s * d_world.y,
                -s * d_world.x + c * d_world.y,
                d_world.z,
            );
            let h = Vector3::new(lx / 2.0, ly / 2.0, lz / 2.0);
            let clamped = Vector3::new(
                d.x.clamp(-h.x, h.x),
                d.y.clamp(-h.y, h.y),
                d.z.clamp(-h.z, h.z),
            );
            let inside = d.x.abs() < h.x && d.y.abs() < h.y && d.z.abs() < h.z;
            let (closest_local, normal_local) = if inside {
                // Snap to the nearest face; normal into the object.
                let gaps = [h.x - d.x.abs(), h.y - d.y.abs(), h.z - d.z.abs()];
                let axis = gaps
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                let mut p = d;
                let mut n = Vector3::zeros();
                match axis {
                    0 => {
                        p.x = h.x * d.x.signum();
                        n.x = -d.x.signum();
                    }
                    1 => {
                        p.y = h.y * d.y.signum();
                        n.y = -d.y.signum();
                    }
                    _ => {
                        p.z = h.z * d.z.signum();
                        n.z = -d.z.signum();
                    }
                }
                (p, n)
            } else {
                let diff = d - clamped;
                let dist = diff.norm();
                let n = if dist > 1e-12 {
                    -diff / dist
                } else {
                    // Center exactly on the surface: use the face normal of
                    // the tightest axis.
                    let gaps = [h.x - d.x.abs(), h.y - d.y.abs(), h.z - d.z.abs()];
                    let axis = gaps
                        .iter()
                        .enumerate()
                        .min_by(|a, b| a.1.total_cmp(b.1))
                        .unwrap()
                        .0;
                    let mut n = Vector3::zeros();
                    n[axis] = -d[axis].signum();
                    n
                };
                (clamped, n)
            };
            let world_of = |v: Vector3<f64>| {
                Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
            };
            let closest = center + world_of(closest_local);
            let distance = if inside { 0.0 } else { (ee_center - closest).norm() };
            let active = distance < ee_radius;
            ContactState {
                active,
                point: closest,
                normal: world_of(normal_local),
                penetration: if active { ee_radius - distance } else { 0.0 },
            }
        }
        Shape::Cylinder { diameter, height } => {
            let r = diameter / 2.0;
            let radial = Vector2::new(ee_center.x - center.x, ee_center.y - center.y);
            let radial_norm = radial.norm();
            let dir = if radial_norm > 1e-12 {
                radial / radial_norm
            } else {
                Vector2::new(1.0, 0.0)
            };
            // Lateral surface contact through the axis.
            let z = ee_center
                .z
                .clamp(center.z - height / 2.0, center.z + height / 2.0);
            let closest = Vector3::new(center.x + dir.x * r, center.y + dir.y * r, z);
            let distance = (ee_center - closest).norm();
            let inside = radial_norm < r
                && ee_center.z > center.z - height / 2.0
                && ee_center.z < center.z + height / 2.0;
            let active = inside || distance < ee_radius;
            ContactState {
                active,
                point: closest,
                normal: Vector3::new(-dir.x, -dir.y, 0.0),
                penetration: if inside {
                    ee_radius + (r - radial_norm)
                } else if active {
                    ee_radius - distance
                } else {
                    0.0
                },
            }
        }
    }
}

/// Pushing parameters. `mu_contact` is the pusher-object friction bounding
/// the contact force cone.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PushParams {
    pub mu_ground: f64,
    pub limit_surface_c: f64,
    pub max_tilt: f64,
    pub mu_contact: f64,
}

impl Default for PushParams {
    fn default() -> Self {
        PushParams {
            mu_ground: 0.7,
            limit_surface_c: 0.05,
            max_tilt: 0.52,
            mu_contact: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TipOutcome {
    Slide,
    Tip,
}

/// Quasi-static moment balance about the leading base edge: the object tips
/// when the friction moment arm exceeds the support half-width.
pub fn tip_check(contact_height: f64, base_half_width: f64, mu_ground: f64) -> TipOutcome {
    if mu_ground * contact_height > base_half_width {
        TipOutcome::Tip
    } else {
        TipOutcome::Slide
    }
}

/// Result of one pushing step.
#[derive(Debug, Clone)]
pub enum PushStep {
    /// Object slid; new pose and its planar velocity.
    Slide {
        obj: MovableObject,
        v_obj: Vector3<f64>,
    },
    /// Object tipped over; tilt exceeds the failure threshold.
    Tip { obj: MovableObject },
}

/// Advances the object under one pusher displacement. The planar twist is the
/// ellipsoidal limit-surface response: sticking contact tracks the pusher
/// exactly; pushes outside the friction cone slide along its boundary.
pub fn push_step(
    obj: &MovableObject,
    contact: &ContactState,
    ee_displacement: Vector3<f64>,
    params: &PushParams,
    dt: f64,
) -> PushStep {
    assert!(dt > 0.0, "push_step requires dt > 0");
    let unchanged = || PushStep::Slide {
        obj: obj.clone(),
        v_obj: Vector3::zeros(),
    };
    if !contact.active {
        return unchanged();
    }
    let n = Vector2::new(contact.normal.x, contact.normal.y);
    let n_norm = n.norm();
    if n_norm < 1e-9 {
        // Top/bottom contact: no planar pushing.
        return unchanged();
    }
    let n_hat = n / n_norm;
    let u = Vector2::new(ee_displacement.x, ee_displacement.y);
    let u_n = u.dot(&n_hat);
    if u_n <= 1e-12 {
        // Separating or purely tangential motion: contact cannot push.
        return unchanged();
    }

    let r = Vector2::new(
        contact.point.x - obj.pose.position.x,
        contact.point.y - obj.pose.position.y,
    );
    let c2 = params.limit_surface_c * params.limit_surface_c;
    let cross = |a: Vector2<f64>, b: Vector2<f64>| a.x * b.y - a.y * b.x;
    let perp = |a: Vector2<f64>| Vector2::new(-a.y, a.x);

    // Sticking twist: contact point tracks the pusher displacement.
    let omega_stick = cross(r, u) / (c2 + r.norm_squared());
    let v_stick = u - omega_stick * perp(r);

    // Force direction is parallel to the translation under the isotropic
    // ellipsoidal limit surface; check it against the friction cone.
    let v_n = v_stick.dot(&n_hat);
    let v_t = v_stick - v_n * n_hat;
    let inside_cone = v_n > 0.0 && v_t.norm() <= params.mu_contact * v_n + 1e-12;

    let (dp, dyaw) = if inside_cone {
        (v_stick, omega_stick)
    } else {
        // Slide along the cone boundary: force on the edge nearest the
        // sticking direction, magnitude set so the contact point keeps pace
        // with the pusher along the normal.
        let t_hat = {
            let t = perp(n_hat);
            if v_t.dot(&t) >= 0.0 { t } else { -t }
        };
        let f_hat = (n_hat + params.mu_contact * t_hat).normalize();
        let tau = cross(r, f_hat);
        // Twist direction from the limit-surface gradient.
        let v_dir = f_hat;
        let w_dir = tau / c2;
        let denom = (v_dir + w_dir * perp(r)).dot(&n_hat);
        if denom <= 1e-12 {
            return unchanged();
        }
        let k = u_n / denom;
        (v_dir * k, w_dir * k)
    };

    // Tip-versus-slide along the actual motion direction.
    let dp_norm = dp.norm();
    if dp_norm > 1e-12 {
        let half_width = obj.support_half_extent(dp);
        if tip_check(contact.point.z, half_width, params.mu_ground) == TipOutcome::Tip {
            let mut tipped = obj.clone();
            tipped.tilt = params.max_tilt + 0.1;
            return PushStep::Tip { obj: tipped };
        }
    }

    let mut moved = obj.clone();
    moved.pose.position.x += dp.x;
    moved.pose.position.y += dp.y;
    let orientation = Vector3::new(
        normalize_angle(obj.pose.orientation.x + dyaw),
        obj.pose.orientation.y,
        obj.pose.orientation.z,
    );
    moved.pose = Pose6::new(moved.pose.position, orientation);
    PushStep::Slide {
        obj: moved,
        v_obj: Vector3::new(dp.x / dt, dp.y / dt, 0.0),
    }
}

/// Domain-randomization ranges for episode resets.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizationRanges {
    pub mass_kg: [f64; 2],
    pub mu_ground: [f64; 2],
    pub arm_added_mass_kg: [f64; 2],
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        RandomizationRanges {
            mass_kg: [0.5, 3.0],
            mu_ground: [0.5, 1.0],
            arm_added_mass_kg: [-1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsSample {
    pub mass_kg: f64,
    pub mu_ground: f64,
    pub arm_added_mass_kg: f64,
    /// Per-joint action-effectiveness scale realizing the added-mass
    /// randomization on a kinematic arm; heavier arm moves less.
    pub effectiveness: f64,
}

pub fn randomize_physics(rng: &mut impl Rng, ranges: &RandomizationRanges) -> PhysicsSample {
    let draw = |rng: &mut dyn rand::RngCore, range: [f64; 2]| {
        if range[0] == range[1] {
            range[0]
        } else {
            rng.gen_range(range[0]..range[1])
        }
    };
    let mass_kg = draw(rng, ranges.mass_kg);
    let mu_ground = draw(rng, ranges.mu_ground);
    let arm_added_mass_kg = draw(rng, ranges.arm_added_mass_kg);
    PhysicsSample {
        mass_kg,
        mu_ground,
        arm_added_mass_kg,
        effectiveness: 1.0 - 0.1 * arm_added_mass_kg,
    }
}
