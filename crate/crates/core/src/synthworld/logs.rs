use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::arm::{CameraModel, SimArm};
use crate::error::{Error, Result};
use crate::manip::{ArmId, HandPoint, JointState, RobotLogRecord, NUM_JOINTS};
use crate::seed;

/// Low-dimensional joint coupling used by the demonstrator: joints are
/// `home + a·lateral + b·reach` for a latent (a, b) in [-1, 1]², plus small
/// independent per-joint wobble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSynergy {
    pub home: [f64; NUM_JOINTS],
    pub lateral: [f64; NUM_JOINTS],
    pub reach: [f64; NUM_JOINTS],
}

impl Default for ArmSynergy {
    fn default() -> Self {
        ArmSynergy {
            home: [-0.12, 0.1, 0.0, 0.95, 0.0, 0.2, 0.0],
            lateral: [0.38, 0.0, 0.12, 0.0, 0.12, 0.0, 0.0],
            reach: [0.0, -0.05, 0.0, -0.32, 0.0, -0.05, 0.0],
        }
    }
}

impl ArmSynergy {
    pub fn joints(&self, a: f64, b: f64) -> JointState {
        let mut q = JointState::zeros();
        for j in 0..NUM_JOINTS {
            q.angles[j] = self.home[j] + a * self.lateral[j] + b * self.reach[j];
        }
        q
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogConfig {
    pub n_sequences: usize,
    pub records: usize,
    /// Records between random latent knots.
    pub knot_spacing: usize,
    /// Std (radians) of the per-joint wobble knots.
    pub wobble: f64,
    pub arm: ArmId,
    pub synergy: ArmSynergy,
}

impl Default for LogConfig {
    fn default() -> Self {
        LogConfig {
            n_sequences: 50,
            records: 150,
            knot_spacing: 8,
            wobble: 0.01,
            arm: ArmId::Right,
            synergy: ArmSynergy::default(),
        }
    }
}

fn catmull_rom(p: [f64; 4], s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    0.5 * (2.0 * p[1] + (-p[0] + p[2]) * s + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * s2
        + (-p[0] + 3.0 * p[1] - 3.0 * p[2] + p[3]) * s3)
}

/// Smooth curve through random knots, one value per record.
fn spline(knots: &[f64], spacing: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|t| {
            let k = t / spacing;
            let s = (t % spacing) as f64 / spacing as f64;
            let at = |i: isize| knots[i.clamp(0, knots.len() as isize - 1) as usize];
            let k = k as isize;
            catmull_rom([at(k - 1), at(k), at(k + 1), at(k + 2)], s)
        })
        .collect()
}

/// Log sequences of smooth random arm motion with the projected hand point
/// of every record.
pub fn generate_robot_logs(arm: &SimArm, cam: &CameraModel, config: &LogConfig, seed: u64) -> Result<Vec<Vec<RobotLogRecord>>> {
    arm.validate()?;
    if config.knot_spacing == 0 || config.records == 0 {
        return Err(Error::Config("log records and knot spacing must be positive".into()));
    }
    let wobble = Normal::new(0.0, config.wobble.max(f64::MIN_POSITIVE)).map_err(|e| Error::Config(e.to_string()))?;
    let knots = config.records / config.knot_spacing + 3;
    (0..config.n_sequences)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed::derive_str(seed, "robot_logs"), i as u64));
            let a: Vec<f64> = (0..knots).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..knots).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = spline(&a, config.knot_spacing, config.records);
            let b = spline(&b, config.knot_spacing, config.records);
            let noise: Vec<Vec<f64>> = (0..NUM_JOINTS)
                .map(|_| {
                    let k: Vec<f64> = (0..knots)
                        .map(|_| if config.wobble > 0.0 { wobble.sample(&mut rng) } else { 0.0 })
                        .collect();
                    spline(&k, config.knot_spacing, config.records)
                })
                .collect();
            (0..config.records)
                .map(|t| {
                    let mut q = config.synergy.joints(a[t].clamp(-1.0, 1.0), b[t].clamp(-1.0, 1.0));
                    for (j, n) in noise.iter().enumerate() {
                        q.angles[j] += n[t];
                    }
                    let q = arm.clamp(&q);
                    let h = cam.project(&arm.fk(&q)?)?;
                    Ok(RobotLogRecord {
                        t,
                        arm: config.arm,
                        u: h.u,
                        v: h.v,
                        joints: q.angles,
                    })
                })
                .collect()
        })
        .collect()
}

/// Pixel error of a joint state against a target point.
pub fn pixel_error(arm: &SimArm, cam: &CameraModel, q: &JointState, target: &HandPoint) -> f64 {
    match cam.project(&arm.fk_unchecked(q)) {
        Ok(h) => h.distance(target),
        Err(_) => f64::INFINITY,
    }
}

/// Error below which the oracle declares success (pixels).
pub const IK_TOLERANCE: f64 = 1.0;

fn solve_2x2(a: [[f64; 2]; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < 1e-300 {
        return None;
    }
    Some([(b[0] * a[1][1] - a[0][1] * b[1]) / det, (a[0][0] * b[1] - b[0] * a[1][0]) / det])
}

/// Damped least-squares descent on the pixel residual with a numeric
/// Jacobian, followed by coordinate-wise step-halving polish.
fn refine(arm: &SimArm, cam: &CameraModel, target: &HandPoint, init: &JointState) -> (JointState, f64) {
    let mut q = arm.clamp(init);
    let mut err = pixel_error(arm, cam, &q, target);
    let mut lambda = 1e-2;
    let h = 1e-6;
    for _ in 0..200 {
        if err < 1e-4 {
            break;
        }
        let Ok(p) = cam.project(&arm.fk_unchecked(&q)) else { break };
        let r = [p.u - target.u, p.v - target.v];
        let mut jac = [[0.0; NUM_JOINTS]; 2];
        for j in 0..NUM_JOINTS {
            let mut hi = q;
            let mut lo = q;
            hi.angles[j] += h;
            lo.angles[j] -= h;
            let (Ok(a), Ok(b)) = (cam.project(&arm.fk_unchecked(&hi)), cam.project(&arm.fk_unchecked(&lo))) else {
                continue;
            };
            jac[0][j] = (a.u - b.u) / (2.0 * h);
            jac[1][j] = (a.v - b.v) / (2.0 * h);
        }
        // Minimum-norm step: dq = -Jᵀ (J Jᵀ + λ I)⁻¹ r
        let mut jjt = [[0.0; 2]; 2];
        for i in 0..2 {
            for k in 0..2 {
                jjt[i][k] = (0..NUM_JOINTS).map(|j| jac[i][j] * jac[k][j]).sum();
            }
        }
        let scale = jjt[0][0] + jjt[1][1];
        let mut improved = false;
        for _ in 0..12 {
            let damped = [[jjt[0][0] + lambda * scale, jjt[0][1]], [jjt[1][0], jjt[1][1] + lambda * scale]];
            let Some(y) = solve_2x2(damped, r) else { break };
            let mut cand = q;
            for j in 0..NUM_JOINTS {
                cand.angles[j] -= jac[0][j] * y[0] + jac[1][j] * y[1];
            }
            let cand = arm.clamp(&cand);
            let e = pixel_error(arm, cam, &cand, target);
            if e < err {
                q = cand;
                err = e;
                lambda = (lambda * 0.3).max(1e-9);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let mut step = 0.05;
    while step > 1e-9 && err > 1e-4 {
        let mut moved = false;
        for j in 0..NUM_JOINTS {
            for dir in [1.0, -1.0] {
                let mut cand = q;
                cand.angles[j] += dir * step;
                let cand = arm.clamp(&cand);
                let e = pixel_error(arm, cam, &cand, target);
                if e < err {
                    q = cand;
                    err = e;
                    moved = true;
                }
            }
        }
        if !moved {
            step /= 2.0;
        }
    }
    (q, err)
}

/// Joints whose projected end effector lands within [`IK_TOLERANCE`] pixels
/// of `target`, searched from `joints_init` (then a fixed set of restarts).
pub fn ik_oracle(arm: &SimArm, cam: &CameraModel, target: &HandPoint, joints_init: &JointState) -> Result<JointState> {
    let synergy = ArmSynergy::default();
    let mut starts = vec![*joints_init];
    for a in [-1.0, 0.0, 1.0] {
        for b in [-1.0, 0.0, 1.0] {
            starts.push(synergy.joints(a, b));
        }
    }
    let mut best = (*joints_init, f64::INFINITY);
    for s in &starts {
        let (q, e) = refine(arm, cam, target, s);
        if e < best.1 {
            best = (q, e);
        }
        if best.1 < IK_TOLERANCE {
            return Ok(best.0);
        }
    }
    Err(Error::Unreachable {
        u: target.u,
        v: target.v,
        best_error: best.1,
    })
}
