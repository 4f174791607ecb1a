use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::filters::FilterKind;
use crate::fleet::{rot_z, wrap, Angle, FleetState, RobotPose};
use crate::models::OdometryInput;

/// Side length of the cubic arena the default helices live in, meters.
pub const ARENA_SIZE: f64 = 10.0;

/// Analytic helical trajectory of one robot.
///
/// Horizontal motion is a circle; altitude is a triangle wave reflecting
/// between `z_bounds`, starting at the lower bound when `vertical_rate >= 0`
/// and at the upper bound otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HelixSpec {
    pub center: Vector2<f64>,
    pub radius: f64,
    pub angular_rate: f64,
    pub vertical_rate: f64,
    pub z_bounds: [f64; 2],
    pub yaw_rate: f64,
    pub initial_phase: f64,
    pub initial_yaw: f64,
}

impl HelixSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.center.x,
            self.center.y,
            self.radius,
            self.angular_rate,
            self.vertical_rate,
            self.z_bounds[0],
            self.z_bounds[1],
            self.yaw_rate,
            self.initial_phase,
            self.initial_yaw,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("helix parameters must be finite".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidConfig(format!("helix radius {} must be > 0", self.radius)));
        }
        if self.z_bounds[0] > self.z_bounds[1] {
            return Err(Error::InvalidConfig(format!(
                "helix z_bounds {:?} must be ordered",
                self.z_bounds
            )));
        }
        Ok(())
    }

    /// Pose at time `t` seconds.
    pub fn pose_at(&self, t: f64) -> RobotPose {
        let phase = self.initial_phase + self.angular_rate * t;
        let (s, c) = phase.sin_cos();
        let [lo, hi] = self.z_bounds;
        let span = hi - lo;
        let travel = if span > 0.0 {
            let s2 = (self.vertical_rate.abs() * t).rem_euclid(2.0 * span);
            if s2 <= span {
                s2
            } else {
                2.0 * span - s2
            }
        } else {
            0.0
        };
        let z = if self.vertical_rate >= 0.0 { lo + travel } else { hi - travel };
        RobotPose {
            position: Vector3::new(self.center.x + self.radius * c, self.center.y + self.radius * s, z),
            yaw: Angle::from_finite(self.initial_yaw + self.yaw_rate * t),
        }
    }
}

/// Default helices: centers on the corners of a 4 m square (a circle of
/// radius 2*sqrt(2) for other fleet sizes) around the arena middle, 3 m
/// radius, 0.2 rad/s, z reflecting in [1, 9] m at 0.05 m/s, heading along the
/// tangent.
pub fn default_helices(n: usize) -> Vec<HelixSpec> {
    let mid = ARENA_SIZE / 2.0;
    let ring = 2.0 * 2f64.sqrt();
    (0..n)
        .map(|k| {
            let spread = 2.0 * PI * k as f64 / n as f64;
            let corner = 1.25 * PI + spread;
            let phase = spread;
            HelixSpec {
                center: Vector2::new(mid + ring * corner.cos(), mid + ring * corner.sin()),
                radius: 3.0,
                angular_rate: 0.2,
                vertical_rate: 0.05,
                z_bounds: [1.0, 9.0],
                yaw_rate: 0.2,
                initial_phase: phase,
                initial_yaw: wrap(phase + FRAC_PI_2),
            }
        })
        .collect()
}

/// Everything a Monte-Carlo run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub dt: f64,
    pub steps: usize,
    pub helices: Vec<HelixSpec>,
    pub sigma_v: f64,
    pub sigma_omega: f64,
    pub sigma_meas: f64,
    pub prior_sigma_pos: f64,
    pub prior_sigma_yaw: f64,
    pub trials: usize,
    pub filters: Vec<FilterKind>,
    pub master_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 4,
            dt: 0.1,
            steps: 3000,
            helices: default_helices(4),
            sigma_v: 0.3,
            sigma_omega: 0.08,
            sigma_meas: 0.1,
            prior_sigma_pos: 0.3,
            prior_sigma_yaw: 0.1,
            trials: 100,
            filters: FilterKind::ALL.to_vec(),
            master_seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(Error::InvalidConfig(format!("{key}: {why}")));
        if self.n < 2 {
            return bad("n", format!("{} robots, need at least 2", self.n));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", format!("{} must be > 0", self.dt));
        }
        if self.steps < 1 {
            return bad("steps", "must be >= 1".into());
        }
        if self.trials < 1 {
            return bad("trials", "must be >= 1".into());
        }
        for (key, v) in [
            ("sigma_v", self.sigma_v),
            ("sigma_omega", self.sigma_omega),
            ("sigma_meas", self.sigma_meas),
            ("prior_sigma_pos", self.prior_sigma_pos),
            ("prior_sigma_yaw", self.prior_sigma_yaw),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, format!("{v} must be > 0"));
            }
        }
        if self.helices.len() != self.n {
            return bad(
                "helix",
                format!("{} helices for {} robots", self.helices.len(), self.n),
            );
        }
        for h in &self.helices {
            h.validate()?;
        }
        if self.filters.is_empty() {
            return bad("filters", "at least one filter is required".into());
        }
        let mut seen = self.filters.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.filters.len() {
            return bad("filters", "duplicate filter kind".into());
        }
        Ok(())
    }
}

/// Sampled ground truth and the controls that reproduce it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// `steps + 1` states, index 0 at t = 0.
    pub states: Vec<FleetState>,
    /// `controls[k][i]` moves robot `i` from `states[k]` to `states[k + 1]`.
    pub controls: Vec<Vec<OdometryInput>>,
}

/// Samples the helices at `dt` and backs out body-frame controls from
/// consecutive poses.
pub fn generate_truth(config: &SimConfig) -> Result<Truth> {
    config.validate()?;
    let states = (0..=config.steps)
        .map(|k| {
            let t = k as f64 * config.dt;
            FleetState::new(config.helices.iter().map(|h| h.pose_at(t)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let controls = states
        .windows(2)
        .map(|w| {
            w[0].poses()
                .iter()
                .zip(w[1].poses())
                .map(|(a, b)| OdometryInput {
                    v: rot_z(a.yaw).transpose() * (b.position - a.position) / config.dt,
                    omega: (b.yaw - a.yaw).radians() / config.dt,
                })
                .collect()
        })
        .collect();
    Ok(Truth { states, controls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::propagate_pose;
    use nalgebra::Vector4;

    #[test]
    fn default_config_is_valid() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert!((c.helices[0].center - Vector2::new(3.0, 3.0)).amax() < 1e-12);
        assert!((c.helices[1].center - Vector2::new(7.0, 3.0)).amax() < 1e-12);
        assert!((c.helices[2].center - Vector2::new(7.0, 7.0)).amax() < 1e-12);
        assert!((c.helices[3].center - Vector2::new(3.0, 7.0)).amax() < 1e-12);
        assert!((c.helices[1].initial_phase - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn validation_names_key() {
        let c = SimConfig { trials: 0, ..SimConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("trials"));
        let c = SimConfig { sigma_meas: 0.0, ..SimConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("sigma_meas"));
        let c = SimConfig { n: 3, ..SimConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("helix"));
    }

    #[test]
    fn stationary_when_rates_are_zero() {
        let mut helices = default_helices(2);
        for h in &mut helices {
            h.angular_rate = 0.0;
            h.vertical_rate = 0.0;
            h.yaw_rate = 0.0;
        }
        let c = SimConfig { n: 2, helices, steps: 20, ..SimConfig::default() };
        let truth = generate_truth(&c).unwrap();
        let first = &truth.controls[0];
        for step in &truth.controls {
            for (u, u0) in step.iter().zip(first) {
                assert!((u.v - u0.v).amax() < 1e-12);
                assert!(u.omega.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn controls_reproduce_truth() {
        let c = SimConfig { steps: 500, ..SimConfig::default() };
        let truth = generate_truth(&c).unwrap();
        let zero = Vector4::zeros();
        for k in 0..c.steps {
            for i in 0..c.n {
                let p = propagate_pose(truth.states[k].pose(i), &truth.controls[k][i], &zero, c.dt).unwrap();
                let target = truth.states[k + 1].pose(i);
                assert!((p.position - target.position).amax() < 1e-10);
                assert!((p.yaw - target.yaw).radians().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn default_trajectory_stays_in_arena() {
        let truth = generate_truth(&SimConfig::default()).unwrap();
        let eps = 1e-9;
        for s in &truth.states {
            for p in s.poses() {
                assert!(p.position.iter().all(|c| *c >= -eps && *c <= ARENA_SIZE + eps), "{p:?}");
            }
        }
    }

    #[test]
    fn triangle_wave_reflects() {
        let h = default_helices(4)[0];
        assert!((h.pose_at(0.0).position.z - 1.0).abs() < 1e-12);
        assert!((h.pose_at(160.0).position.z - 9.0).abs() < 1e-12);
        assert!((h.pose_at(200.0).position.z - 7.0).abs() < 1e-12);
        let down = HelixSpec { vertical_rate: -0.05, ..h };
        assert!((down.pose_at(20.0).position.z - 8.0).abs() < 1e-12);
    }
}
