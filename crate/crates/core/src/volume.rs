//! Bounding volumes used to restrict iteration and queries.
//!
//! All cell tests treat cells as closed boxes. Box and sphere tests are exact.
//! The frustum is an angular sector (azimuth/elevation limits plus a range
//! shell) and is tested through the cell's bounding sphere, which keeps the
//! test conservative and monotone: a child never passes when its parent fails.

use crate::scalar::{Real, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Self {
        Self { min, max }
    }

    /// Smallest box holding both points.
    pub fn from_corners(a: Vec3<T>, b: Vec3<T>) -> Self {
        Self::new(a.min(b), a.max(b))
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite()
            && self.max.is_finite()
            && self.min.x <= self.max.x
            && self.min.y <= self.max.y
            && self.min.z <= self.max.z
    }

    /// Valid and with positive volume.
    pub fn is_solid(&self) -> bool {
        self.is_valid()
            && self.min.x < self.max.x
            && self.min.y < self.max.y
            && self.min.z < self.max.z
    }

    pub fn contains_point(&self, p: Vec3<T>) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    pub fn intersects_box(&self, lo: Vec3<T>, hi: Vec3<T>) -> bool {
        (0..3).all(|a| self.min[a] <= hi[a] && lo[a] <= self.max[a])
    }

    pub fn contains_box(&self, lo: Vec3<T>, hi: Vec3<T>) -> bool {
        (0..3).all(|a| self.min[a] <= lo[a] && hi[a] <= self.max[a])
    }

    pub fn intersection(&self, other: &Aabb<T>) -> Option<Aabb<T>> {
        let b = Aabb::new(self.min.max(other.min), self.max.min(other.max));
        b.is_valid().then_some(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere<T> {
    pub center: Vec3<T>,
    pub radius: T,
}

impl<T: Real> Sphere<T> {
    pub fn new(center: Vec3<T>, radius: T) -> Self {
        Self { center, radius }
    }

    pub fn is_valid(&self) -> bool {
        self.center.is_finite() && self.radius.is_finite() && self.radius > T::zero()
    }

    pub fn contains_point(&self, p: Vec3<T>) -> bool {
        let d = p - self.center;
        d.dot(d) <= self.radius * self.radius
    }

    pub fn intersects_box(&self, lo: Vec3<T>, hi: Vec3<T>) -> bool {
        let closest = self.center.max(lo).min(hi);
        let d = closest - self.center;
        d.dot(d) <= self.radius * self.radius
    }

    pub fn contains_box(&self, lo: Vec3<T>, hi: Vec3<T>) -> bool {
        let far = Vec3::new(
            far_side(self.center.x, lo.x, hi.x),
            far_side(self.center.y, lo.y, hi.y),
            far_side(self.center.z, lo.z, hi.z),
        );
        self.contains_point(far)
    }

    pub fn aabb(&self) -> Aabb<T> {
        let r = Vec3::splat(self.radius);
        Aabb::new(self.center - r, self.center + r)
    }
}

#[inline]
fn far_side<T: Real>(c: T, lo: T, hi: T) -> T {
    if (c - lo).abs() > (hi - c).abs() {
        lo
    } else {
        hi
    }
}

/// Position and orientation; the sensor looks along its local +x axis with
/// +z up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T> {
    pub position: Vec3<T>,
    /// Rows of the local-to-world rotation matrix.
    pub rotation: [[T; 3]; 3],
}

impl<T: Real> Pose<T> {
    pub fn identity_at(position: Vec3<T>) -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            position,
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    /// Rotation `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_yaw_pitch_roll(position: Vec3<T>, yaw: T, pitch: T, roll: T) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sr, cr) = roll.sin_cos();
        Self {
            position,
            rotation: [
                [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
                [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
                [-sp, cp * sr, cp * cr],
            ],
        }
    }

    /// World point expressed in the local frame.
    pub fn to_local(&self, p: Vec3<T>) -> Vec3<T> {
        let d = p - self.position;
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * d.x + r[1][0] * d.y + r[2][0] * d.z,
            r[0][1] * d.x + r[1][1] * d.y + r[2][1] * d.z,
            r[0][2] * d.x + r[1][2] * d.y + r[2][2] * d.z,
        )
    }

    pub fn to_world(&self, l: Vec3<T>) -> Vec3<T> {
        let r = &self.rotation;
        self.position
            + Vec3::new(
                r[0][0] * l.x + r[0][1] * l.y + r[0][2] * l.z,
                r[1][0] * l.x + r[1][1] * l.y + r[1][2] * l.z,
                r[2][0] * l.x + r[2][1] * l.y + r[2][2] * l.z,
            )
    }
}

/// Angular sensor footprint: `|azimuth| <= h_fov/2`, `|elevation| <= v_fov/2`
/// and `r_min <= range <= r_max`, all in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel<T> {
    pub pose: Pose<T>,
    pub h_fov: T,
    pub v_fov: T,
    pub r_min: T,
    pub r_max: T,
}

impl<T: Real> SensorModel<T> {
    pub fn new(pose: Pose<T>, h_fov: T, v_fov: T, r_min: T, r_max: T) -> Self {
        Self {
            pose,
            h_fov,
            v_fov,
            r_min,
            r_max,
        }
    }

    /// 115 by 60 degree field of view with a 0 to 6.5 m range.
    pub fn exploration_default(pose: Pose<T>) -> Self {
        Self::new(
            pose,
            T::lit(115f64.to_radians()),
            T::lit(60f64.to_radians()),
            T::zero(),
            T::lit(6.5),
        )
    }

    pub fn is_valid(&self) -> bool {
        let pi = T::PI();
        self.pose.position.is_finite()
            && self.h_fov > T::zero()
            && self.h_fov < pi
            && self.v_fov > T::zero()
            && self.v_fov < pi
            && self.r_min >= T::zero()
            && self.r_min < self.r_max
            && self.r_max.is_finite()
    }

    pub fn position(&self) -> Vec3<T> {
        self.pose.position
    }

    pub fn contains_point(&self, p: Vec3<T>) -> bool {
        let l = self.pose.to_local(p);
        let range = l.norm();
        if range < self.r_min || range > self.r_max {
            return false;
        }
        let half = T::lit(0.5);
        let az = l.y.atan2(l.x);
        let el = l.z.atan2(l.x.hypot(l.y));
        az.abs() <= self.h_fov * half && el.abs() <= self.v_fov * half
    }

    /// Conservative: false only if no point of the ball can be inside.
    pub fn may_intersect_ball(&self, center: Vec3<T>, radius: T) -> bool {
        let eps = T::lit(1e-9);
        let l = self.pose.to_local(center);
        let rho = l.norm();
        if rho - radius > self.r_max + eps || rho + radius < self.r_min - eps {
            return false;
        }
        if rho <= radius {
            return true;
        }
        let half = T::lit(0.5);
        let delta = (radius / rho).asin();
        let el = l.z.atan2(l.x.hypot(l.y));
        if el.abs() - delta > self.v_fov * half + eps {
            return false;
        }
        if el.abs() + delta >= T::FRAC_PI_2() {
            return true;
        }
        let daz = (delta.sin() / el.abs().cos()).min(T::one()).asin();
        let az = l.y.atan2(l.x);
        az.abs() - daz <= self.h_fov * half + eps
    }

    /// Conservative: true only if every point of the ball is inside.
    pub fn contains_ball(&self, center: Vec3<T>, radius: T) -> bool {
        let eps = T::lit(1e-9);
        let l = self.pose.to_local(center);
        let rho = l.norm();
        if rho <= radius || rho - radius < self.r_min + eps || rho + radius > self.r_max - eps {
            return false;
        }
        let half = T::lit(0.5);
        let delta = (radius / rho).asin();
        let el = l.z.atan2(l.x.hypot(l.y));
        if el.abs() + delta > self.v_fov * half - eps {
            return false;
        }
        let s = delta.sin() / el.abs().cos();
        if s >= T::one() {
            return false;
        }
        let az = l.y.atan2(l.x);
        az.abs() + s.asin() <= self.h_fov * half - eps
    }

    pub fn may_intersect_box(&self, lo: Vec3<T>, hi: Vec3<T>) -> bool {
        let (c, r) = ball_of(lo, hi);
        self.may_intersect_ball(c, r)
    }

    pub fn contains_box(&self, lo: Vec3<T>, hi: Vec3<T>) -> bool {
        let (c, r) = ball_of(lo, hi);
        self.contains_ball(c, r)
    }

    /// Box around the range ball.
    pub fn aabb(&self) -> Aabb<T> {
        Sphere::new(self.pose.position, self.r_max).aabb()
    }
}

#[inline]
fn ball_of<T: Real>(lo: Vec3<T>, hi: Vec3<T>) -> (Vec3<T>, T) {
    let half = T::lit(0.5);
    ((lo + hi) * half, (hi - lo).norm() * half)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundingVolume<T> {
    Box(Aabb<T>),
    Sphere(Sphere<T>),
    Frustum(SensorModel<T>),
}

impl<T: Real> BoundingVolume<T> {
    pub fn is_valid(&self) -> bool {
        match self {
            BoundingVolume::Box(b) => b.is_valid(),
            BoundingVolume::Sphere(s) => s.is_valid(),
            BoundingVolume::Frustum(f) => f.is_valid(),
        }
    }

    /// Cell test used by iterators; see the module docs for the frustum.
    pub fn intersects_box(&self, lo: Vec3<T>, hi: Vec3<T>) -> bool {
        match self {
            BoundingVolume::Box(b) => b.intersects_box(lo, hi),
            BoundingVolume::Sphere(s) => s.intersects_box(lo, hi),
            BoundingVolume::Frustum(f) => f.may_intersect_box(lo, hi),
        }
    }

    pub fn contains_point(&self, p: Vec3<T>) -> bool {
        match self {
            BoundingVolume::Box(b) => b.contains_point(p),
            BoundingVolume::Sphere(s) => s.contains_point(p),
            BoundingVolume::Frustum(f) => f.contains_point(p),
        }
    }

    pub fn aabb(&self) -> Aabb<T> {
        match self {
            BoundingVolume::Box(b) => *b,
            BoundingVolume::Sphere(s) => s.aabb(),
            BoundingVolume::Frustum(f) => f.aabb(),
        }
    }
}

impl<T> From<Aabb<T>> for BoundingVolume<T> {
    fn from(b: Aabb<T>) -> Self {
        BoundingVolume::Box(b)
    }
}

impl<T> From<Sphere<T>> for BoundingVolume<T> {
    fn from(s: Sphere<T>) -> Self {
        BoundingVolume::Sphere(s)
    }
}

impl<T> From<SensorModel<T>> for BoundingVolume<T> {
    fn from(f: SensorModel<T>) -> Self {
        BoundingVolume::Frustum(f)
    }
}
