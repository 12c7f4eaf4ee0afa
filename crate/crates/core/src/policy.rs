//! Gaussian action distributions and the algebra that combines them.
//!
//! Everything here works in the raw (pre-clamp) action space. Bounds are
//! applied only when a distribution is turned into an executable command by
//! [`realize`].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Number of action dimensions: steering and throttle.
pub const ACTION_DIM: usize = 2;

/// Raw throttle values below this engage the brake.
pub const BRAKE_THRESHOLD: f64 = 0.005;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian over `(steer, throttle)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionGaussian {
    pub mean: [f64; ACTION_DIM],
    pub var: [f64; ACTION_DIM],
}

impl ActionGaussian {
    /// Builds a distribution, returning `None` when a variance is not
    /// strictly positive and finite or a mean is not finite.
    pub fn new(mean: [f64; ACTION_DIM], var: [f64; ACTION_DIM]) -> Option<Self> {
        let g = Self { mean, var };
        g.is_valid().then_some(g)
    }

    /// Same standard deviation in every dimension.
    pub fn isotropic(mean: [f64; ACTION_DIM], std: f64) -> Option<Self> {
        Self::new(mean, [std * std; ACTION_DIM])
    }

    pub fn is_valid(&self) -> bool {
        self.mean.iter().all(|m| m.is_finite()) && self.var.iter().all(|v| v.is_finite() && *v > 0.0)
    }

    pub fn std(&self) -> [f64; ACTION_DIM] {
        [self.var[0].sqrt(), self.var[1].sqrt()]
    }

    /// Sum over dimensions of the Gaussian log density at `a`.
    pub fn log_density(&self, a: [f64; ACTION_DIM]) -> f64 {
        (0..ACTION_DIM)
            .map(|i| {
                let d = a[i] - self.mean[i];
                -0.5 * (LN_2PI + self.var[i].ln() + d * d / self.var[i])
            })
            .sum()
    }

    /// Closed-form `KL(self || other)` for diagonal Gaussians.
    pub fn kl_divergence(&self, other: &ActionGaussian) -> f64 {
        (0..ACTION_DIM)
            .map(|i| {
                let d = self.mean[i] - other.mean[i];
                0.5 * ((other.var[i] / self.var[i]).ln() + (self.var[i] + d * d) / other.var[i] - 1.0)
            })
            .sum()
    }

    /// Draws one raw action.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; ACTION_DIM] {
        let std = self.std();
        let mut a = self.mean;
        for i in 0..ACTION_DIM {
            let z: f64 = rng.sample(StandardNormal);
            a[i] += std[i] * z;
        }
        a
    }
}

/// Normalized product of the learned policy and the control prior.
///
/// Per dimension the result has precision equal to the sum of the input
/// precisions and a precision-weighted mean. The operation is symmetric in
/// its arguments.
///
/// # Panics
/// If either input has a non-positive or non-finite variance.
pub fn fuse(rl: &ActionGaussian, prior: &ActionGaussian) -> ActionGaussian {
    assert!(rl.is_valid(), "fuse: invalid policy distribution {rl:?}");
    assert!(prior.is_valid(), "fuse: invalid prior distribution {prior:?}");
    let mut out = ActionGaussian {
        mean: [0.0; ACTION_DIM],
        var: [0.0; ACTION_DIM],
    };
    for i in 0..ACTION_DIM {
        let (mp, vp) = (rl.mean[i], rl.var[i]);
        let (mq, vq) = (prior.mean[i], prior.var[i]);
        let total = vq + vp;
        out.mean[i] = (mp * vq + mq * vp) / total;
        out.var[i] = vq * vp / total;
    }
    out
}

/// Moment-matched single Gaussian of a uniformly weighted mixture.
///
/// # Panics
/// If `members` is empty or contains an invalid distribution.
pub fn mixture_moments(members: &[ActionGaussian]) -> ActionGaussian {
    assert!(!members.is_empty(), "mixture_moments: empty member list");
    if let Some(bad) = members.iter().find(|m| !m.is_valid()) {
        panic!("mixture_moments: invalid member {bad:?}");
    }
    let k = members.len() as f64;
    let mut mean = [0.0; ACTION_DIM];
    let mut var = [0.0; ACTION_DIM];
    for i in 0..ACTION_DIM {
        let mu = members.iter().map(|m| m.mean[i]).sum::<f64>() / k;
        let within = members.iter().map(|m| m.var[i]).sum::<f64>() / k;
        // between-component spread, computed around the mixture mean so it
        // never goes negative through cancellation
        let between = members.iter().map(|m| (m.mean[i] - mu).powi(2)).sum::<f64>() / k;
        mean[i] = mu;
        var[i] = within + between;
    }
    ActionGaussian { mean, var }
}

/// Executable, bounded vehicle command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleAction {
    pub steer: f64,
    pub throttle: f64,
    pub brake: bool,
}

impl VehicleAction {
    pub const IDLE: VehicleAction = VehicleAction {
        steer: 0.0,
        throttle: 0.0,
        brake: true,
    };

    /// Clamps a raw `(steer, throttle)` pair and applies the brake rule.
    pub fn from_raw(raw: [f64; ACTION_DIM]) -> Self {
        let steer = raw[0].clamp(-1.0, 1.0);
        let brake = !(raw[1] >= BRAKE_THRESHOLD);
        let throttle = if brake { 0.0 } else { raw[1].min(1.0) };
        VehicleAction { steer, throttle, brake }
    }

    pub fn is_within_bounds(&self) -> bool {
        (-1.0..=1.0).contains(&self.steer)
            && (0.0..=1.0).contains(&self.throttle)
            && (!self.brake || self.throttle == 0.0)
    }
}

/// Turns a distribution into a command. Returns the command and the raw
/// (pre-clamp) action it came from.
pub fn realize<R: Rng + ?Sized>(
    dist: &ActionGaussian,
    rng: &mut R,
    deterministic: bool,
) -> (VehicleAction, [f64; ACTION_DIM]) {
    let raw = if deterministic { dist.mean } else { dist.sample(rng) };
    (VehicleAction::from_raw(raw), raw)
}
