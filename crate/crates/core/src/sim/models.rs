use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use super::SimError;

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("float types represent f64 constants")
}

/// Log-distance path loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RssiModel<T = f64> {
    pub p0_dbm: T,
    pub n_exponent: T,
    pub d0: T,
    pub noise_sd_db: T,
}

impl<T: Float> Default for RssiModel<T> {
    fn default() -> Self {
        RssiModel {
            p0_dbm: cast(-30.0),
            n_exponent: cast(2.2),
            d0: T::one(),
            noise_sd_db: cast(1.5),
        }
    }
}

impl<T: Float> RssiModel<T> {
    pub fn new(p0_dbm: T, n_exponent: T, d0: T, noise_sd_db: T) -> Result<Self, SimError> {
        if !(d0 > T::zero() && d0.is_finite()) {
            return Err(SimError::InvalidModel("rssi d0 must be positive"));
        }
        if !(n_exponent > T::zero() && n_exponent.is_finite()) {
            return Err(SimError::InvalidModel("rssi n_exponent must be positive"));
        }
        if !(noise_sd_db >= T::zero() && noise_sd_db.is_finite()) {
            return Err(SimError::InvalidModel("rssi noise_sd_db must be non-negative"));
        }
        if !p0_dbm.is_finite() {
            return Err(SimError::InvalidModel("rssi p0_dbm must be finite"));
        }
        Ok(RssiModel {
            p0_dbm,
            n_exponent,
            d0,
            noise_sd_db,
        })
    }

    /// Noise-free signal strength at `distance`; distances below `d0` count
    /// as `d0`.
    pub fn mean_dbm(&self, distance: T) -> T {
        let d = distance.max(self.d0);
        self.p0_dbm - cast::<T>(10.0) * self.n_exponent * (d / self.d0).log10()
    }

    pub fn sample<R: Rng + ?Sized>(&self, distance: T, rng: &mut R) -> T {
        let z: f64 = rng.sample(StandardNormal);
        self.mean_dbm(distance) + self.noise_sd_db * cast(z)
    }
}

/// Signal strength between two points.
pub fn rssi<T: Float, R: Rng + ?Sized>(model: &RssiModel<T>, router: [T; 2], robot: [T; 2], rng: &mut R) -> T {
    let d = (router[0] - robot[0]).hypot(router[1] - robot[1]);
    model.sample(d, rng)
}

/// Linear drain: `alpha + beta * cpu_load` percent per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryModel<T = f64> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Float> Default for BatteryModel<T> {
    fn default() -> Self {
        BatteryModel {
            alpha: cast(0.005),
            beta: cast(0.02),
        }
    }
}

impl<T: Float> BatteryModel<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self, SimError> {
        if !(alpha >= T::zero() && alpha.is_finite() && beta >= T::zero() && beta.is_finite()) {
            return Err(SimError::InvalidModel("battery alpha and beta must be non-negative"));
        }
        Ok(BatteryModel { alpha, beta })
    }

    /// Drain in percent per second at `cpu_load`.
    pub fn drain_rate(&self, cpu_load: T) -> T {
        self.alpha + self.beta * cpu_load
    }

    pub fn step(&self, battery_pct: T, cpu_load: T, dt: T) -> T {
        (battery_pct - self.drain_rate(cpu_load) * dt)
            .max(T::zero())
            .min(cast(100.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet(n: f64) -> RssiModel {
        RssiModel::new(-30.0, n, 1.0, 0.0).unwrap()
    }

    #[test]
    fn rssi_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = quiet(2.0);
        assert_eq!(rssi(&m, [0.0, 0.0], [1.0, 0.0], &mut rng), -30.0);
        assert!((rssi(&m, [0.0, 0.0], [10.0, 0.0], &mut rng) - -50.0).abs() < 1e-12);
        // inside the reference distance the value saturates
        assert_eq!(m.mean_dbm(0.1), -30.0);
        let mut last = m.mean_dbm(1.0);
        for k in 1..200 {
            let v = m.mean_dbm(1.0 + k as f64 * 0.05);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn rssi_noise_has_configured_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = RssiModel::<f64>::default();
        let xs: Vec<f64> = (0..20_000).map(|_| m.sample(1.0, &mut rng)).collect();
        let s = crate::features::stats(&xs).unwrap();
        assert!((s.mean - -30.0).abs() < 0.05);
        assert!((s.sd - 1.5).abs() < 0.05);
    }

    #[test]
    fn rssi_validation() {
        assert!(RssiModel::new(-30.0, 2.0, 0.0, 1.0).is_err());
        assert!(RssiModel::new(-30.0, 0.0, 1.0, 1.0).is_err());
        assert!(RssiModel::new(-30.0, 2.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn battery_examples() {
        let base = BatteryModel::new(0.01, 0.0).unwrap();
        assert!((100.0 - base.step(100.0, 0.0, 10.0) - 0.1).abs() < 1e-12);
        let coupled = BatteryModel::new(0.01, 0.02).unwrap();
        assert!((100.0 - coupled.step(100.0, 1.0, 10.0) - 0.3).abs() < 1e-12);
        assert_eq!(coupled.step(0.0, 1.0, 10.0), 0.0);
        assert!(BatteryModel::new(-0.1, 0.0).is_err());
    }

    #[test]
    fn default_cpu_step_ratio() {
        let b = BatteryModel::<f64>::default();
        let ratio = b.drain_rate(0.9) / b.drain_rate(0.2);
        assert!((ratio - 0.023 / 0.009).abs() < 1e-12);
        assert!(ratio > 2.5 && ratio < 2.6);
    }

    #[test]
    fn single_precision_models() {
        let m = RssiModel::<f32>::new(-30.0, 2.0, 1.0, 0.0).unwrap();
        assert!((m.mean_dbm(10.0) - -50.0).abs() < 1e-4);
        let b = BatteryModel::<f32>::default();
        assert!(b.step(50.0, 0.5, 1.0) < 50.0);
    }
}
