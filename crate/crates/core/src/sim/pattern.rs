use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::Vec3;

/// LiDAR ray layout in the sensor frame (`x` forward, `y` left, `z` up).
/// Azimuth is measured from `+x` toward `+y`, elevation from the `x-y` plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanPattern {
    /// Directions uniform over solid angle inside an azimuth/elevation window,
    /// stratified: the window is cut into equal-solid-angle cells in azimuth
    /// and sine of elevation and each ray is drawn uniformly inside its cell.
    UniformRandom {
        rays: usize,
        #[serde(default = "default_uniform_h_fov")]
        h_fov_deg: f64,
        #[serde(default = "default_uniform_v_fov")]
        v_fov_deg: f64,
    },
    /// Spinning multi-beam scanner. `sweeps > 1` accumulates scans taken at
    /// evenly spaced sub-ring pitch offsets, as when the sensor is nodded
    /// between captures.
    MechanicalRings {
        rings: usize,
        v_fov_deg: f64,
        #[serde(default = "default_h_res")]
        h_res_deg: f64,
        #[serde(default = "default_h_fov")]
        h_fov_deg: f64,
        #[serde(default = "one")]
        sweeps: usize,
    },
    /// Non-repetitive two-prism pattern: the beam offset is the sum of two
    /// equal circles traversed at `rates_hz`, sampled evenly over `duration_s`.
    Rosette {
        rays: usize,
        fov_deg: f64,
        rates_hz: [f64; 2],
        #[serde(default = "default_duration")]
        duration_s: f64,
    },
}

fn default_h_fov() -> f64 {
    48.0
}
fn default_uniform_h_fov() -> f64 {
    30.0
}
fn default_uniform_v_fov() -> f64 {
    24.0
}
fn default_h_res() -> f64 {
    0.1
}
fn default_duration() -> f64 {
    1.0
}
fn one() -> usize {
    1
}

pub fn direction(az: f64, el: f64) -> Vec3 {
    Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

pub fn az_el(d: &Vec3) -> (f64, f64) {
    (d.y.atan2(d.x), d.z.atan2(d.x.hypot(d.y)))
}

impl ScanPattern {
    pub fn uniform(rays: usize) -> Self {
        Self::UniformRandom {
            rays,
            h_fov_deg: default_uniform_h_fov(),
            v_fov_deg: default_uniform_v_fov(),
        }
    }

    pub fn mechanical(rings: usize, v_fov_deg: f64, sweeps: usize) -> Self {
        Self::MechanicalRings {
            rings,
            v_fov_deg,
            h_res_deg: default_h_res(),
            h_fov_deg: default_h_fov(),
            sweeps,
        }
    }

    pub fn rosette(rays: usize) -> Self {
        Self::Rosette {
            rays,
            fov_deg: 60.0,
            rates_hz: [1713.7, -1163.3],
            duration_s: default_duration(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let ok = match *self {
            Self::UniformRandom { rays, h_fov_deg, v_fov_deg } => {
                rays > 0 && positive(h_fov_deg) && h_fov_deg <= 360.0 && positive(v_fov_deg) && v_fov_deg < 180.0
            }
            Self::MechanicalRings {
                rings,
                v_fov_deg,
                h_res_deg,
                h_fov_deg,
                sweeps,
            } => {
                rings > 0
                    && sweeps > 0
                    && v_fov_deg >= 0.0
                    && v_fov_deg < 180.0
                    && positive(h_res_deg)
                    && positive(h_fov_deg)
                    && h_fov_deg <= 360.0
            }
            Self::Rosette {
                rays,
                fov_deg,
                rates_hz,
                duration_s,
            } => {
                rays > 0
                    && positive(fov_deg)
                    && fov_deg < 180.0
                    && rates_hz.iter().all(|r| r.is_finite() && *r != 0.0)
                    && positive(duration_s)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!("invalid scan pattern {self:?}")))
        }
    }

    /// Whether a unit direction falls inside the pattern's coverage.
    pub fn covers(&self, d: &Vec3) -> bool {
        let (az, el) = az_el(d);
        match *self {
            Self::UniformRandom { h_fov_deg, v_fov_deg, .. } => {
                az.abs() <= (h_fov_deg / 2.0).to_radians() && el.abs() <= (v_fov_deg / 2.0).to_radians()
            }
            Self::MechanicalRings { v_fov_deg, h_fov_deg, .. } => {
                az.abs() <= (h_fov_deg / 2.0).to_radians() && el.abs() <= (v_fov_deg / 2.0).to_radians()
            }
            Self::Rosette { fov_deg, .. } => d.normalize().x.clamp(-1.0, 1.0).acos() <= (fov_deg / 2.0).to_radians(),
        }
    }

    /// Unit ray directions. Only `UniformRandom` consumes randomness.
    pub fn directions<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec3> {
        match *self {
            Self::UniformRandom { rays, h_fov_deg, v_fov_deg } => {
                let ha = (h_fov_deg / 2.0).to_radians();
                let sv = (v_fov_deg / 2.0).to_radians().sin();
                let rows = ((rays as f64 * 2.0 * sv / (2.0 * ha)).sqrt().round() as usize).clamp(1, rays);
                let mut out = Vec::with_capacity(rays);
                for row in 0..rows {
                    let cols = (row + 1) * rays / rows - row * rays / rows;
                    for col in 0..cols {
                        let u: f64 = rng.random();
                        let v: f64 = rng.random();
                        let az = -ha + 2.0 * ha * (col as f64 + u) / cols as f64;
                        let el = (-sv + 2.0 * sv * (row as f64 + v) / rows as f64).asin();
                        out.push(direction(az, el));
                    }
                }
                out
            }
            Self::MechanicalRings {
                rings,
                v_fov_deg,
                h_res_deg,
                h_fov_deg,
                sweeps,
            } => {
                let v = v_fov_deg.to_radians();
                let spacing = if rings > 1 { v / (rings - 1) as f64 } else { 0.0 };
                let res = h_res_deg.to_radians();
                let ha = (h_fov_deg / 2.0).to_radians();
                let columns = (2.0 * ha / res).floor() as usize + 1;
                let mut out = Vec::with_capacity(rings * sweeps * columns);
                for s in 0..sweeps {
                    let frac = s as f64 / sweeps as f64;
                    for ring in 0..rings {
                        let el = -v / 2.0 + ring as f64 * spacing + frac * spacing;
                        if rings > 1 && el > v / 2.0 + 1e-12 {
                            continue;
                        }
                        for c in 0..columns {
                            let az = -ha + (c as f64 + frac) * res;
                            if az <= ha {
                                out.push(direction(az, el));
                            }
                        }
                    }
                }
                out
            }
            Self::Rosette {
                rays,
                fov_deg,
                rates_hz,
                duration_s,
            } => {
                let a = (fov_deg / 4.0).to_radians();
                let tau = std::f64::consts::TAU;
                (0..rays)
                    .map(|i| {
                        let t = duration_s * i as f64 / rays as f64;
                        let (p1, p2) = (tau * rates_hz[0] * t, tau * rates_hz[1] * t);
                        let u = a * (p1.cos() + p2.cos());
                        let w = a * (p1.sin() + p2.sin());
                        // (u, w) is a boresight offset: tilt by its norm toward its direction
                        let off = u.hypot(w);
                        let phi = w.atan2(u);
                        Vec3::new(off.cos(), off.sin() * phi.cos(), off.sin() * phi.sin())
                    })
                    .collect()
            }
        }
    }
}
