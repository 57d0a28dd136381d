use crate::scalar::Scalar;

/// Generalized advantage estimates for one contiguous trajectory segment.
///
/// `last_value` bootstraps the step after the segment and is ignored when the final
/// step is terminal. Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn compute_gae<T: Scalar>(
    rewards: &[T],
    values: &[T],
    dones: &[bool],
    last_value: T,
    gamma: T,
    lambda: T,
) -> (Vec<T>, Vec<T>) {
    let discounts = vec![gamma; rewards.len()];
    compute_gae_with_discounts(rewards, values, dones, last_value, &discounts, lambda)
}

/// GAE with a per-step discount, for transitions that span several environment steps.
pub fn compute_gae_with_discounts<T: Scalar>(
    rewards: &[T],
    values: &[T],
    dones: &[bool],
    last_value: T,
    discounts: &[T],
    lambda: T,
) -> (Vec<T>, Vec<T>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n && discounts.len() == n);
    let mut adv = vec![T::zero(); n];
    let mut next_value = last_value;
    let mut next_adv = T::zero();
    for t in (0..n).rev() {
        let live = if dones[t] { T::zero() } else { T::one() };
        let delta = rewards[t] + discounts[t] * next_value * live - values[t];
        next_adv = delta + discounts[t] * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(&a, &v)| a + v).collect();
    (adv, returns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_terminal_step() {
        let (a, r) = compute_gae(&[3.0], &[1.25], &[true], 99.0, 0.9, 0.95);
        assert_eq!(a, vec![1.75]);
        assert_eq!(r, vec![3.0]);
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let rewards = [0.5, -1.0, 2.0, 0.0];
        let values = [0.1, 0.4, -0.3, 0.8];
        let dones = [false, true, false, false];
        let (gamma, last) = (0.9, 0.6);
        let (a, _) = compute_gae(&rewards, &values, &dones, last, gamma, 0.0);
        for t in 0..4 {
            let next = if t + 1 < 4 { values[t + 1] } else { last };
            let live = if dones[t] { 0.0 } else { 1.0 };
            let delta = rewards[t] + gamma * next * live - values[t];
            assert_eq!(a[t], delta);
        }
    }

    #[test]
    fn undiscounted_monte_carlo() {
        let (a, r) = compute_gae(&[0.0, 0.0, 10.0], &[0.0; 3], &[false, false, true], 5.0, 1.0, 1.0);
        assert_eq!(a, vec![10.0, 10.0, 10.0]);
        assert_eq!(r, a);
    }

    #[test]
    fn done_cuts_bootstrap() {
        // the second episode's values must not leak into the first
        let (a, _) = compute_gae(&[1.0, 0.0], &[0.0, 100.0], &[true, false], 0.0, 0.99, 0.95);
        assert_eq!(a[0], 1.0);
    }
}
