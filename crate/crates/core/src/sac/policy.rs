//! Tanh-squashed Gaussian policy mapped onto the action box.

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use super::nn::{Mlp, MlpCache};
use crate::world::Action;
use crate::Real;

pub const ACTION_DIM: usize = 2;

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh(u)^2)`, exact for large `|u|`.
#[inline]
pub fn log1m_tanh2<T: Real>(u: T) -> T {
    T::lit(2.0) * (T::LN_2() - u - softplus(T::lit(-2.0) * u))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SquashedGaussian<T> {
    /// Outputs `[mean_v, mean_omega, log_std_v, log_std_omega]`.
    pub net: Mlp<T>,
    pub log_std_min: T,
    pub log_std_max: T,
}

/// Batch of reparameterized draws, one row per state.
#[derive(Clone, Debug)]
pub struct PolicySample<T> {
    pub mean: Array2<T>,
    pub log_std: Array2<T>,
    /// True where the raw log-std was inside the clamp range.
    pub log_std_free: Array2<bool>,
    pub noise: Array2<T>,
    /// `u = mean + std * noise`.
    pub pre_squash: Array2<T>,
    /// `tanh(u)`.
    pub squashed: Array2<T>,
    /// Actions in the box.
    pub actions: Array2<T>,
    /// Log-density of `actions` in action space.
    pub log_prob: Array1<T>,
}

impl<T: Real> SquashedGaussian<T> {
    pub fn new(net: Mlp<T>, log_std_min: T, log_std_max: T) -> Self {
        assert_eq!(net.output_dim(), 2 * ACTION_DIM);
        Self { net, log_std_min, log_std_max }
    }

    pub fn half_range() -> [T; ACTION_DIM] {
        let (lo, hi) = (Action::<T>::low(), Action::<T>::high());
        [(hi[0] - lo[0]) * T::lit(0.5), (hi[1] - lo[1]) * T::lit(0.5)]
    }

    pub fn center() -> [T; ACTION_DIM] {
        let (lo, hi) = (Action::<T>::low(), Action::<T>::high());
        [(hi[0] + lo[0]) * T::lit(0.5), (hi[1] + lo[1]) * T::lit(0.5)]
    }

    /// Maps a squashed value in `(-1, 1)` onto the action box.
    pub fn to_action(squashed: [T; ACTION_DIM]) -> Action<T> {
        let (h, c) = (Self::half_range(), Self::center());
        Action::clamped(c[0] + h[0] * squashed[0], c[1] + h[1] * squashed[1])
    }

    /// Action-space log-density of pre-squash value `u` for one dimension.
    pub fn log_prob_1d(u: T, mean: T, log_std: T, half_range: T) -> T {
        let z = (u - mean) / log_std.exp();
        T::lit(-0.5) * z * z - log_std - T::lit(0.5) * (T::TAU()).ln() - log1m_tanh2(u) - half_range.ln()
    }

    fn head(&self, out: &Array2<T>) -> (Array2<T>, Array2<T>, Array2<bool>) {
        let mean = out.slice(s![.., ..ACTION_DIM]).to_owned();
        let raw = out.slice(s![.., ACTION_DIM..]);
        let (lo, hi) = (self.log_std_min, self.log_std_max);
        let free = raw.mapv(|v| v > lo && v < hi);
        let log_std = raw.mapv(|v| v.max(lo).min(hi));
        (mean, log_std, free)
    }

    pub fn standard_noise<R: Rng + ?Sized>(rows: usize, rng: &mut R) -> Array2<T> {
        Array2::from_shape_simple_fn((rows, ACTION_DIM), || T::lit(rng.sample::<f64, _>(StandardNormal)))
    }

    /// Draws with caller-provided standard normal noise.
    pub fn sample_with_noise(&self, states: &Array2<T>, noise: Array2<T>) -> (PolicySample<T>, MlpCache<T>) {
        let (out, cache) = self.net.forward_cached(states);
        (self.sample_from_output(&out, noise), cache)
    }

    pub fn sample_uncached(&self, states: &Array2<T>, noise: Array2<T>) -> PolicySample<T> {
        let out = self.net.forward(states);
        self.sample_from_output(&out, noise)
    }

    fn sample_from_output(&self, out: &Array2<T>, noise: Array2<T>) -> PolicySample<T> {
        let (mean, log_std, log_std_free) = self.head(out);
        let mut pre_squash = mean.clone();
        Zip::from(&mut pre_squash).and(&log_std).and(&noise).for_each(|u, &ls, &e| *u += ls.exp() * e);
        let squashed = pre_squash.mapv(|u| u.tanh());
        let (half, center) = (Self::half_range(), Self::center());
        let mut actions = squashed.clone();
        for (j, mut col) in actions.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|y| center[j] + half[j] * y);
        }
        let log_prob = Array1::from_shape_fn(mean.nrows(), |b| {
            (0..ACTION_DIM).map(|j| Self::log_prob_1d(pre_squash[[b, j]], mean[[b, j]], log_std[[b, j]], half[j])).sum()
        });
        PolicySample { mean, log_std, log_std_free, noise, pre_squash, squashed, actions, log_prob }
    }

    /// Action at the squashed mean; used for evaluation.
    pub fn mean_action(&self, state: &Array2<T>) -> Action<T> {
        let out = self.net.forward(state);
        Self::to_action([out[[0, 0]].tanh(), out[[0, 1]].tanh()])
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, state: &Array2<T>, rng: &mut R) -> Action<T> {
        let sample = self.sample_uncached(state, Self::standard_noise(1, rng));
        Self::to_action([sample.squashed[[0, 0]], sample.squashed[[0, 1]]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sac::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log1m_tanh2_is_accurate() {
        for &u in &[-30.0f64, -3.0, -0.2, 0.0, 0.7, 4.0, 25.0] {
            let direct = (1.0 - u.tanh().powi(2)).ln();
            let stable = log1m_tanh2(u);
            if direct.is_finite() && u.abs() < 10.0 {
                assert!((direct - stable).abs() < 1e-10, "u={u}");
            }
            assert!(stable.is_finite());
        }
    }

    #[test]
    fn sampled_actions_stay_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[5, 16, 4], Activation::Relu, 3.0, &mut rng);
        let pi = SquashedGaussian::<f32>::new(net, -20.0, 2.0);
        for _ in 0..100 {
            let states = Array2::from_shape_simple_fn((100, 5), || rng.random_range(-5.0f32..5.0));
            let noise = SquashedGaussian::standard_noise(100, &mut rng);
            let s = pi.sample_uncached(&states, noise);
            for row in s.actions.rows() {
                assert!(Action::new(row[0], row[1]).in_bounds());
            }
        }
    }

    #[test]
    fn floored_log_std_is_near_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Mlp::new(&[3, 8, 4], Activation::Relu, 1.0, &mut rng);
        // force the log-std outputs far below the floor
        let last = net.layers.last_mut().unwrap();
        last.weight.column_mut(2).fill(0.0);
        last.weight.column_mut(3).fill(0.0);
        last.bias[2] = -50.0;
        last.bias[3] = -50.0;
        let pi = SquashedGaussian::<f64>::new(net, -20.0, 2.0);
        let state = Array2::from_shape_vec((1, 3), vec![0.3, -0.2, 1.0]).unwrap();
        let mean = pi.mean_action(&state);
        for _ in 0..50 {
            let a = pi.sample_action(&state, &mut rng);
            assert!((a.v - mean.v).abs() < 1e-6 && (a.omega - mean.omega).abs() < 1e-6);
        }
    }
}
