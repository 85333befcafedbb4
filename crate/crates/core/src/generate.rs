//! Synthetic instances.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{TransportInstance, DEFAULT_BALANCE_TOLERANCE, MAX_DIMENSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SupplyMode {
    /// Half the points +1, half -1 (one zero point when n is odd).
    Unit,
    /// Balanced random reals.
    Random,
    /// Hierarchical clusters separated by large scale gaps, random supplies.
    Cluster,
}

impl std::str::FromStr for SupplyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(SupplyMode::Unit),
            "random" => Ok(SupplyMode::Random),
            "cluster" => Ok(SupplyMode::Cluster),
            _ => Err(Error::InvalidParameter(format!("unknown supply mode {s:?}"))),
        }
    }
}

pub fn generate(n: usize, d: usize, spread: f64, mode: SupplyMode, seed: u64) -> Result<TransportInstance> {
    if n == 0 {
        return Err(Error::EmptyInstance);
    }
    if d == 0 || d > MAX_DIMENSION {
        return Err(Error::BadDimension { got: d, max: MAX_DIMENSION });
    }
    if !(spread >= 1.0) || !spread.is_finite() {
        return Err(Error::InvalidParameter(format!("spread {spread} must be >= 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = match mode {
        SupplyMode::Cluster => cluster_points(n, d, spread, &mut rng),
        _ => grid_points(n, d, spread, &mut rng)?,
    };
    let supplies = match mode {
        SupplyMode::Unit => {
            let mut s: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { -1.0 }).collect();
            if n % 2 == 1 {
                s[n - 1] = 0.0;
            }
            s.shuffle(&mut rng);
            s
        }
        _ => balanced_random(n, &mut rng),
    };
    TransportInstance::from_flat(d, coords, supplies, DEFAULT_BALANCE_TOLERANCE)
}

/// Distinct points on the grid of step `1 / spread` in the unit cube, with
/// two points one step apart so the spread is attained.
fn grid_points(n: usize, d: usize, spread: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let cells = spread.floor() + 1.0;
    if n > 1 && cells.powi(d as i32) < 2.0 * n as f64 {
        return Err(Error::InvalidParameter(format!("spread {spread} is too small for {n} distinct points in {d}D")));
    }
    let step = 1.0 / spread;
    let mut seen = std::collections::HashSet::new();
    let mut coords = Vec::with_capacity(n * d);
    let mut push = |key: Vec<u64>, coords: &mut Vec<f64>| {
        if seen.insert(key.clone()) {
            coords.extend(key.iter().map(|&k| k as f64 * step));
            true
        } else {
            false
        }
    };
    let first: Vec<u64> = (0..d).map(|_| rng.gen_range(0..cells as u64 - 1)).collect();
    push(first.clone(), &mut coords);
    if n > 1 {
        let mut second = first;
        second[0] += 1;
        push(second, &mut coords);
    }
    while coords.len() < n * d {
        let key: Vec<u64> = (0..d).map(|_| rng.gen_range(0..cells as u64)).collect();
        push(key, &mut coords);
    }
    Ok(coords)
}

/// Clusters nested over `h = max(1, ceil(log10(spread) / 6))` levels, each
/// level shrinking by `spread^(1/h)`.
fn cluster_points(n: usize, d: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let levels = ((spread.log10() / 6.0).ceil() as u32).max(1);
    let gap = spread.powf(1.0 / levels as f64);
    let mut coords = Vec::with_capacity(n * d);
    let center = vec![0.5; d];
    fill_cluster(n, &center, 0.5, levels, gap, rng, &mut coords);
    coords
}

#[allow(clippy::too_many_arguments)]
fn fill_cluster(
    n: usize,
    center: &[f64],
    radius: f64,
    levels: u32,
    gap: f64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<f64>,
) {
    if n == 0 {
        return;
    }
    if levels == 0 || n <= 2 {
        for _ in 0..n {
            out.extend(center.iter().map(|c| c + radius * rng.gen_range(-1.0..1.0)));
        }
        return;
    }
    let k = rng.gen_range(2..=4usize).min(n);
    let inner = radius / gap;
    let mut remaining = n;
    for i in 0..k {
        let share = if i + 1 == k { remaining } else { (remaining / (k - i)).max(1) };
        remaining -= share;
        let c: Vec<f64> = center.iter().map(|c| c + (radius - inner) * rng.gen_range(-1.0..1.0)).collect();
        fill_cluster(share, &c, inner, levels - 1, gap, rng, out);
    }
}

fn balanced_random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let mut s: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean = crate::instance::compensated_sum(s.iter().copied()) / n as f64;
    s.iter_mut().for_each(|x| *x -= mean);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_pair() {
        let i = generate(2, 2, 1e3, SupplyMode::Unit, 1).unwrap();
        let mut s = i.supplies().to_vec();
        s.sort_by(f64::total_cmp);
        assert_eq!(s, vec![-1.0, 1.0]);
    }

    #[test]
    fn reproducible() {
        let a = generate(20, 3, 1e4, SupplyMode::Random, 5).unwrap();
        let b = generate(20, 3, 1e4, SupplyMode::Random, 5).unwrap();
        assert_eq!(a.coords(), b.coords());
        assert_eq!(a.supplies(), b.supplies());
    }

    #[test]
    fn cluster_spread_is_large() {
        let i = generate(32, 2, 1e12, SupplyMode::Cluster, 2).unwrap();
        let mut min = f64::INFINITY;
        let mut max: f64 = 0.0;
        for a in 0..32 {
            for b in a + 1..32 {
                let dd = i.distance(a, b);
                min = min.min(dd);
                max = max.max(dd);
            }
        }
        assert!(max / min > 1e9);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate(0, 2, 10.0, SupplyMode::Unit, 0).is_err());
        assert!(generate(4, 9, 10.0, SupplyMode::Unit, 0).is_err());
        assert!(generate(4, 2, 0.5, SupplyMode::Unit, 0).is_err());
        assert!(generate(100, 1, 10.0, SupplyMode::Unit, 0).is_err());
    }
}
