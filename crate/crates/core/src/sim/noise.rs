use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// White noise of power `covariance * dt` sampled every `dt`, i.e. per-sample
/// variance equal to `covariance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandLimitedNoise {
    pub power: f64,
    pub dt: f64,
}

impl BandLimitedNoise {
    pub fn from_covariance(covariance: f64, dt: f64) -> Self {
        assert!(covariance >= 0.0 && dt > 0.0);
        Self {
            power: covariance * dt,
            dt,
        }
    }

    pub fn variance(&self) -> f64 {
        self.power / self.dt
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let var = self.variance();
        if var == 0.0 {
            return 0.0;
        }
        let z: f64 = rng.sample(StandardNormal);
        var.sqrt() * z
    }
}

/// One draw of `N(0, covariance)` for a channel sampled at `dt`.
pub fn noise_sample<R: Rng + ?Sized>(rng: &mut R, covariance: f64, dt: f64) -> f64 {
    BandLimitedNoise::from_covariance(covariance, dt).sample(rng)
}

/// Independent generator per sensor channel, all derived from one seed.
pub(crate) fn channel_rng(seed: u64, channel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel);
    rng
}
