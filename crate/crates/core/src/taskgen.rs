//! Random task-set generation: uniform utilization vectors with a fixed sum
//! (Stafford's randfixedsum) and rate-monotonic task sets built from them.

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analysis::{utilization, TaskSet, TaskSpec};
use crate::model::{Time, TICKS_PER_MS};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum GenError {
    #[error("need 0 < total utilization <= n (got n={n}, total={total})")]
    BadParams { n: usize, total: f64 },
}

/// Default period range, 10 ms to 100 ms.
pub const DEFAULT_PERIOD_RANGE: (Time, Time) = (10 * TICKS_PER_MS, 100 * TICKS_PER_MS);

/// Draw `n` values in [0, 1] summing to `total`, uniformly over that slice of
/// the unit cube.
pub fn randfixedsum(n: usize, total: f64, seed: u64) -> Result<Vec<f64>, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    randfixedsum_with(n, total, &mut rng)
}

pub fn randfixedsum_with<R: Rng>(n: usize, total: f64, rng: &mut R) -> Result<Vec<f64>, GenError> {
    if n == 0 || !(total > 0.0 && total <= n as f64) {
        return Err(GenError::BadParams { n, total });
    }
    let nf = n as f64;
    let k = (total.floor()).clamp(0.0, nf - 1.0);
    let s = total.clamp(k, k + 1.0);
    // 1-based vectors to keep the recurrences readable.
    let s1: Vec<f64> = (0..=n).map(|i| if i == 0 { 0.0 } else { s - (k - i as f64 + 1.0) }).collect();
    let s2: Vec<f64> = (0..=n).map(|i| if i == 0 { 0.0 } else { (k + nf - i as f64 + 1.0) - s }).collect();

    // w[i][j] for i in 1..=n, j in 1..=n+1; t[i][j] for i in 1..n, j in 1..=n.
    let mut w = vec![vec![0.0f64; n + 2]; n + 1];
    let mut t = vec![vec![0.0f64; n + 1]; n + 1];
    w[1][2] = f64::MAX;
    let tiny = f64::from_bits(1);
    for i in 2..=n {
        for j in 1..=i {
            let tmp1 = w[i - 1][j + 1] * s1[j] / i as f64;
            let tmp2 = w[i - 1][j] * s2[n - i + j] / i as f64;
            w[i][j + 1] = tmp1 + tmp2;
            let tmp3 = w[i][j + 1] + tiny;
            t[i - 1][j] = if s2[n - i + j] > s1[j] { tmp2 / tmp3 } else { 1.0 - tmp1 / tmp3 };
        }
    }

    let mut x = vec![0.0f64; n + 1];
    let mut s = s;
    let mut j = k as usize + 1;
    let mut sm = 0.0;
    let mut pr = 1.0;
    for i in (1..n).rev() {
        let rt: f64 = rng.gen();
        let rs: f64 = rng.gen();
        let e = if rt <= t[i][j] { 1.0 } else { 0.0 };
        let sx = rs.powf(1.0 / i as f64);
        sm += (1.0 - sx) * pr * s / (i as f64 + 1.0);
        pr *= sx;
        x[n - i] = sm + pr * e;
        s -= e;
        j -= e as usize;
    }
    x[n] = sm + pr * s;
    let mut out: Vec<f64> = x[1..].iter().map(|v| v.clamp(0.0, 1.0)).collect();
    out.shuffle(rng);
    Ok(out)
}

/// Round half-up to an integer tick count.
fn round_half_up(v: f64) -> Time {
    (v + 0.5).floor() as Time
}

fn log_uniform<R: Rng>(rng: &mut R, lo: Time, hi: Time) -> f64 {
    if lo == hi {
        return lo as f64;
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    (a + rng.gen::<f64>() * (b - a)).exp()
}

/// Assign rate-monotonic priorities: shorter period means higher priority,
/// ties broken by position. Priorities are 1..=n.
pub fn assign_rm_priorities(tasks: &mut [TaskSpec]) {
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(tasks[i].period), std::cmp::Reverse(i)));
    for (rank, &i) in order.iter().enumerate() {
        tasks[i].priority = rank as u32 + 1;
    }
}

fn build(utils: &[f64], periods: Vec<Time>) -> TaskSet {
    let mut tasks: Vec<TaskSpec> = utils
        .iter()
        .zip(periods)
        .enumerate()
        .map(|(i, (&u, t))| {
            let b = round_half_up(u * t as f64).clamp(1, t);
            TaskSpec::new(&format!("t{i}"), t, b, 0)
        })
        .collect();
    assign_rm_priorities(&mut tasks);
    TaskSet::new(tasks)
}

/// Task set with log-uniform periods in `period_range` and budgets
/// `round(u * T)`, at least one tick.
pub fn make_taskset(utils: &[f64], period_range: (Time, Time), seed: u64) -> TaskSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = period_range;
    let periods = utils
        .iter()
        .map(|_| round_half_up(log_uniform(&mut rng, lo, hi)).clamp(lo, hi))
        .collect();
    build(utils, periods)
}

/// Like [`make_taskset`] but each log-uniform period is snapped to the
/// nearest (in log space) member of `allowed`.
pub fn make_taskset_from(utils: &[f64], allowed: &[Time], seed: u64) -> TaskSet {
    assert!(!allowed.is_empty(), "no allowed periods");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = *allowed.iter().min().unwrap();
    let hi = *allowed.iter().max().unwrap();
    let periods = utils
        .iter()
        .map(|_| {
            let p = log_uniform(&mut rng, lo, hi).ln();
            *allowed
                .iter()
                .min_by(|a, b| (((**a) as f64).ln() - p).abs().total_cmp(&(((**b) as f64).ln() - p).abs()))
                .unwrap()
        })
        .collect();
    build(utils, periods)
}

/// Divisors of `n` within `[lo, hi]`.
pub fn divisors_in(n: Time, lo: Time, hi: Time) -> Vec<Time> {
    (lo..=hi.min(n)).filter(|d| n.is_multiple_of(*d)).collect()
}

/// Lower budgets one tick at a time, largest budget first, until the exact
/// utilization no longer exceeds `total`.
pub fn trim_to_total(set: &mut TaskSet, total: Ratio<u128>) {
    while utilization(set) > total {
        let Some(t) = set.tasks.iter_mut().filter(|t| t.budget > 1).max_by_key(|t| t.budget) else {
            return;
        };
        t.budget -= 1;
    }
}

/// `sets` task sets of `n` tasks at total utilization `u`, each drawn from
/// its own stream derived from `seed`.
pub fn generate(n: usize, u: f64, sets: usize, seed: u64, period_range: (Time, Time)) -> Result<Vec<TaskSet>, GenError> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..sets)
        .map(|_| {
            let s1: u64 = master.gen();
            let s2: u64 = master.gen();
            let utils = randfixedsum(n, u, s1)?;
            Ok(make_taskset(&utils, period_range, s2))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_cases() {
        assert_eq!(randfixedsum(1, 0.5, 1).unwrap(), vec![0.5]);
        let x = randfixedsum(3, 3.0, 1).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_params() {
        assert!(randfixedsum(3, 0.0, 1).is_err());
        assert!(randfixedsum(3, 3.5, 1).is_err());
        assert!(randfixedsum(0, 0.5, 1).is_err());
    }

    #[test]
    fn component_means_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sums = [0.0f64; 10];
        let draws = 10_000;
        for _ in 0..draws {
            let x = randfixedsum_with(10, 0.7, &mut rng).unwrap();
            for (s, v) in sums.iter_mut().zip(&x) {
                *s += v;
            }
        }
        for s in sums {
            assert!((s / draws as f64 - 0.07).abs() < 0.005, "mean {}", s / draws as f64);
        }
    }

    #[test]
    fn degenerate_period_range() {
        let s = make_taskset(&[0.5], (10_000, 10_000), 3);
        assert_eq!(s.tasks[0].period, 10_000);
        assert_eq!(s.tasks[0].budget, 5_000);
    }

    #[test]
    fn rm_priorities() {
        let mut ts = vec![TaskSpec::new("a", 30, 1, 0), TaskSpec::new("b", 10, 1, 0), TaskSpec::new("c", 20, 1, 0)];
        assign_rm_priorities(&mut ts);
        assert_eq!(ts.iter().map(|t| t.priority).collect::<Vec<_>>(), vec![1, 3, 2]);
    }

    #[test]
    fn divisors() {
        assert_eq!(divisors_in(100_000, 10_000, 100_000), vec![10_000, 12_500, 20_000, 25_000, 50_000, 100_000]);
    }

    #[test]
    fn trim_keeps_total() {
        let mut s = TaskSet::new(vec![TaskSpec::new("a", 3, 2, 2), TaskSpec::new("b", 3, 2, 1)]);
        trim_to_total(&mut s, Ratio::from_integer(1));
        assert_eq!(utilization(&s), Ratio::from_integer(1));
    }
}
