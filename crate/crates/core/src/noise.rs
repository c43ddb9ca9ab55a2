//! Gaussian rotation noise for camera extrinsics: each angle is offset by
//! `x * n_range` degrees with `x ~ N(0, (1/3)^2)`, not clipped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraCalib;
use crate::scene::frame_seed;

/// Standard deviation of the unit noise variable.
pub const NOISE_SIGMA: f64 = 1.0 / 3.0;

/// The sweep levels, in degrees.
pub const SWEEP_LEVELS: [f64; 7] = [0.0, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Noise range in degrees.
    pub n_range: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(n_range: f64, seed: u64) -> Result<Self> {
        let s = Self { n_range, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_range >= 0.0 && self.n_range.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise range must be finite and >= 0, got {}", self.n_range)));
        }
        Ok(())
    }

    /// Noise stream for one frame, independent of evaluation order.
    pub fn frame_rng(&self, frame_id: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(frame_seed(self.seed, frame_id))
    }
}

/// `(d_pitch, d_yaw, d_roll)` in degrees.
pub fn sample_rotation_noise<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R) -> [f64; 3] {
    let x = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let draw = [x.sample(rng), x.sample(rng), x.sample(rng)];
    draw.map(|v| v * spec.n_range)
}

/// Adds the degree offsets to the rotation angles; intrinsics and position
/// are left untouched.
pub fn perturb_calibration(calib: &CameraCalib, noise_deg: [f64; 3]) -> CameraCalib {
    CameraCalib {
        pitch: calib.pitch + noise_deg[0].to_radians(),
        yaw: calib.yaw + noise_deg[1].to_radians(),
        roll: calib.roll + noise_deg[2].to_radians(),
        ..*calib
    }
}

/// Perturbed calibration for a frame under `spec`; identity when the range is 0.
pub fn noisy_calibration(calib: &CameraCalib, spec: &NoiseSpec, frame_id: usize) -> CameraCalib {
    if spec.n_range == 0.0 {
        return *calib;
    }
    let mut rng = spec.frame_rng(frame_id);
    perturb_calibration(calib, sample_rotation_noise(spec, &mut rng))
}
