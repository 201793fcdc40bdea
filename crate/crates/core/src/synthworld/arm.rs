use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manip::{HandPoint, JointState, NUM_JOINTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Y,
    Z,
}

/// Rotation axes of the chain, alternating yaw / pitch from the base.
pub const JOINT_AXES: [Axis; NUM_JOINTS] = [Axis::Z, Axis::Y, Axis::Z, Axis::Y, Axis::Z, Axis::Y, Axis::Z];

pub type Vec3 = [f64; 3];
type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

fn rotation(axis: Axis, angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::Z => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        Axis::Y => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
    }
}

/// Seven-joint serial chain; each link extends along its local x axis after
/// the joint rotation. World frame: x forward, y left, z up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimArm {
    pub link_lengths: [f64; NUM_JOINTS],
    pub joint_limits: [(f64, f64); NUM_JOINTS],
    pub base_position: Vec3,
    /// Rotation of the base about the world z axis.
    pub base_yaw: f64,
}

impl Default for SimArm {
    /// A right arm mounted 0.25 m right of the camera's vertical plane.
    fn default() -> Self {
        SimArm {
            link_lengths: [0.1, 0.25, 0.1, 0.25, 0.1, 0.15, 0.05],
            joint_limits: [(-1.7, 1.7), (-1.5, 1.5), (-1.7, 1.7), (-0.2, 2.6), (-1.7, 1.7), (-1.5, 2.0), (-1.7, 1.7)],
            base_position: [0.0, -0.25, 0.0],
            base_yaw: 0.0,
        }
    }
}

impl SimArm {
    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reach() > 0.0) || self.link_lengths.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::Config("link lengths must be non-negative with positive total".into()));
        }
        if self.joint_limits.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("joint limits must be non-degenerate".into()));
        }
        Ok(())
    }

    pub fn check_limits(&self, q: &JointState) -> Result<()> {
        for (j, (&v, &(lo, hi))) in q.angles.iter().zip(&self.joint_limits).enumerate() {
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::JointLimit { joint: j, value: v, lo, hi });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, q: &JointState) -> JointState {
        let mut out = *q;
        for (v, &(lo, hi)) in out.angles.iter_mut().zip(&self.joint_limits) {
            *v = if v.is_finite() { v.clamp(lo, hi) } else { (lo + hi) / 2.0 };
        }
        out
    }

    /// End-effector position; rejects joints outside their limits.
    pub fn fk(&self, q: &JointState) -> Result<Vec3> {
        self.check_limits(q)?;
        Ok(self.fk_unchecked(q))
    }

    pub fn fk_unchecked(&self, q: &JointState) -> Vec3 {
        let mut r = rotation(Axis::Z, self.base_yaw);
        let mut p = self.base_position;
        for ((&axis, &angle), &len) in JOINT_AXES.iter().zip(&q.angles).zip(&self.link_lengths) {
            r = mat_mul(&r, &rotation(axis, angle));
            let step = mat_vec(&r, &[len, 0.0, 0.0]);
            for k in 0..3 {
                p[k] += step[k];
            }
        }
        p
    }

    /// Joint vector mapped to [-1, 1] by the limits.
    pub fn normalize(&self, q: &JointState) -> [f64; NUM_JOINTS] {
        let mut out = [0.0; NUM_JOINTS];
        for (o, (&v, &(lo, hi))) in out.iter_mut().zip(q.angles.iter().zip(&self.joint_limits)) {
            *o = 2.0 * (v - lo) / (hi - lo) - 1.0;
        }
        out
    }

    pub fn denormalize(&self, x: &[f64]) -> JointState {
        let mut q = JointState::zeros();
        for (o, (&v, &(lo, hi))) in q.angles.iter_mut().zip(x.iter().zip(&self.joint_limits)) {
            *o = lo + (v + 1.0) * (hi - lo) / 2.0;
        }
        q
    }
}

/// Pinhole camera. `rotation` rows are the camera x (image right), y (image
/// down) and z (optical axis) directions expressed in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub resolution: (usize, usize),
    pub position: Vec3,
    pub rotation: Mat3,
}

impl Default for CameraModel {
    /// Head camera above and behind the shoulders, pitched 40° down, at
    /// 1280×720.
    fn default() -> Self {
        CameraModel::looking_forward([-0.15, 0.0, 0.35], 40f64.to_radians(), 900.0, (1280, 720))
    }
}

impl CameraModel {
    pub fn looking_forward(position: Vec3, pitch: f64, focal: f64, resolution: (usize, usize)) -> Self {
        let (s, c) = pitch.sin_cos();
        CameraModel {
            fx: focal,
            fy: focal,
            cx: resolution.0 as f64 / 2.0,
            cy: resolution.1 as f64 / 2.0,
            resolution,
            position,
            rotation: [[0.0, -1.0, 0.0], [-s, 0.0, -c], [c, 0.0, -s]],
        }
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        let d = [p[0] - self.position[0], p[1] - self.position[1], p[2] - self.position[2]];
        mat_vec(&self.rotation, &d)
    }

    pub fn project(&self, p: &Vec3) -> Result<HandPoint> {
        let [x, y, z] = self.to_camera(p);
        if !(z > 1e-9) {
            return Err(Error::BehindCamera { depth: z });
        }
        Ok(HandPoint {
            u: self.fx * x / z + self.cx,
            v: self.fy * y / z + self.cy,
        })
    }

    pub fn from_camera(&self, local: &Vec3) -> Vec3 {
        let r = &self.rotation;
        let mut p = self.position;
        for k in 0..3 {
            p[k] += r[0][k] * local[0] + r[1][k] * local[1] + r[2][k] * local[2];
        }
        p
    }

    /// World point at the given depth along the pixel's ray.
    pub fn unproject(&self, h: &HandPoint, depth: f64) -> Vec3 {
        self.from_camera(&[(h.u - self.cx) / self.fx * depth, (h.v - self.cy) / self.fy * depth, depth])
    }

    pub fn diagonal(&self) -> f64 {
        let (w, h) = self.resolution;
        ((w * w + h * h) as f64).sqrt()
    }
}

pub fn arm_fk(arm: &SimArm, joints: &JointState) -> Result<Vec3> {
    arm.fk(joints)
}

pub fn project_to_image(point: &Vec3, cam: &CameraModel) -> Result<HandPoint> {
    cam.project(point)
}

/// Image position of the end effector (joints are not limit-checked).
pub fn hand_point(arm: &SimArm, cam: &CameraModel, q: &JointState) -> Result<HandPoint> {
    cam.project(&arm.fk_unchecked(q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_joints_reach_straight_ahead() {
        let arm = SimArm::default();
        let p = arm.fk(&JointState::zeros()).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] + 0.25).abs() < 1e-12 && p[2].abs() < 1e-12);
    }

    #[test]
    fn out_of_limit_joints_rejected() {
        let arm = SimArm::default();
        let mut q = JointState::zeros();
        q.angles[3] = 3.0;
        assert!(matches!(arm.fk(&q), Err(Error::JointLimit { joint: 3, .. })));
        assert!(arm.check_limits(&arm.clamp(&q)).is_ok());
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = CameraModel::default();
        let p = cam.unproject(&HandPoint { u: 640.0, v: 360.0 }, 0.8);
        let h = cam.project(&p).unwrap();
        assert!((h.u - 640.0).abs() < 1e-9 && (h.v - 360.0).abs() < 1e-9);
        let behind = cam.unproject(&HandPoint { u: 640.0, v: 360.0 }, -0.5);
        assert!(matches!(cam.project(&behind), Err(Error::BehindCamera { .. })));
    }

    #[test]
    fn depth_doubling_halves_offset() {
        let cam = CameraModel::default();
        let a = cam.project(&cam.from_camera(&[0.1, 0.05, 1.0])).unwrap();
        let b = cam.project(&cam.from_camera(&[0.1, 0.05, 2.0])).unwrap();
        assert!((a.u - 640.0 - 90.0).abs() < 1e-9 && (a.v - 360.0 - 45.0).abs() < 1e-9);
        assert!((b.u - 640.0 - 45.0).abs() < 1e-9 && (b.v - 360.0 - 22.5).abs() < 1e-9);
    }
}
