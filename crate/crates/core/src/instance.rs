//! Problem instances, transportation maps and their cost accounting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported ambient dimension. Subcell counts grow as `eps0^-d`.
pub const MAX_DIMENSION: usize = 8;

/// Default supply-balance tolerance, relative to `sum |mu|`.
pub const DEFAULT_BALANCE_TOLERANCE: f64 = 1e-9;

/// Points in `R^d` with a signed supply per point.
///
/// Coordinates are stored row-major in one flat buffer. Supplies sum to zero
/// up to a compensated-summation residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportInstance {
    dim: usize,
    coords: Vec<f64>,
    supplies: Vec<f64>,
}

impl TransportInstance {
    /// Validates and normalizes an instance given as a flat coordinate buffer.
    pub fn from_flat(dim: usize, coords: Vec<f64>, supplies: Vec<f64>, tolerance: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(Error::BadDimension { got: dim, max: MAX_DIMENSION });
        }
        if supplies.is_empty() {
            return Err(Error::EmptyInstance);
        }
        if coords.len() != dim * supplies.len() {
            if !coords.len().is_multiple_of(dim) {
                return Err(Error::DimensionMismatch {
                    index: coords.len() / dim,
                    got: coords.len() % dim,
                    expected: dim,
                });
            }
            return Err(Error::LengthMismatch {
                points: coords.len() / dim,
                supplies: supplies.len(),
            });
        }
        for (i, p) in coords.chunks_exact(dim).enumerate() {
            if p.iter().any(|c| !c.is_finite()) || !supplies[i].is_finite() {
                return Err(Error::NonFinite { index: i });
            }
        }
        let mut supplies = supplies;
        normalize_supplies(&mut supplies, tolerance)?;
        Ok(TransportInstance { dim, coords, supplies })
    }

    /// Builds an instance without balance validation. Used internally when the
    /// supplies are known to be balanced by construction.
    pub(crate) fn from_parts_unchecked(dim: usize, coords: Vec<f64>, supplies: Vec<f64>) -> Self {
        debug_assert_eq!(coords.len(), dim * supplies.len());
        TransportInstance { dim, coords, supplies }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.supplies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supplies.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn supply(&self, i: usize) -> f64 {
        self.supplies[i]
    }

    pub fn supplies(&self) -> &[f64] {
        &self.supplies
    }

    /// `sum |mu(p)|`, the natural scale of every tolerance.
    pub fn total_mass(&self) -> f64 {
        self.supplies.iter().map(|s| s.abs()).sum()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        euclidean(self.point(a), self.point(b))
    }
}

/// Checks shapes, finiteness and balance of raw input, then folds the
/// balance residual into the point of largest `|mu|`.
pub fn validate_instance(points: &[Vec<f64>], supplies: &[f64], tolerance: f64) -> Result<TransportInstance> {
    if points.len() != supplies.len() {
        return Err(Error::LengthMismatch { points: points.len(), supplies: supplies.len() });
    }
    let Some(first) = points.first() else {
        return Err(Error::EmptyInstance);
    };
    let dim = first.len();
    if dim == 0 || dim > MAX_DIMENSION {
        return Err(Error::BadDimension { got: dim, max: MAX_DIMENSION });
    }
    let mut coords = Vec::with_capacity(dim * points.len());
    for (index, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::DimensionMismatch { index, got: p.len(), expected: dim });
        }
        coords.extend_from_slice(p);
    }
    TransportInstance::from_flat(dim, coords, supplies.to_vec(), tolerance)
}

fn normalize_supplies(supplies: &mut [f64], tolerance: f64) -> Result<()> {
    if !(tolerance >= 0.0) {
        return Err(Error::InvalidParameter(format!("balance tolerance {tolerance}")));
    }
    let scale: f64 = supplies.iter().map(|s| s.abs()).sum();
    let residual = compensated_sum(supplies.iter().copied());
    let allowed = tolerance * scale;
    if residual.abs() > allowed {
        return Err(Error::Unbalanced { sum: residual, allowed });
    }
    if residual != 0.0 {
        let heaviest = supplies
            .iter()
            .enumerate()
            .fold(0, |best, (i, s)| if s.abs() > supplies[best].abs() { i } else { best });
        supplies[heaviest] -= residual;
        // A second pass absorbs the rounding of the first subtraction.
        let again = compensated_sum(supplies.iter().copied());
        supplies[heaviest] -= again;
    }
    Ok(())
}

/// Neumaier-compensated summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// One row of a transportation map: `amount` units moved from `src` to `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub src: usize,
    pub dst: usize,
    pub amount: f64,
}

/// Sparse point-to-point assignment. Indices always refer to input points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransportationMap {
    pub entries: Vec<MapEntry>,
}

impl TransportationMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, src: usize, dst: usize, amount: f64) {
        self.entries.push(MapEntry { src, dst, amount });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_indices(&self, n: usize) -> Result<()> {
        for e in &self.entries {
            for index in [e.src, e.dst] {
                if index >= n {
                    return Err(Error::IndexOutOfRange { index, len: n });
                }
            }
        }
        Ok(())
    }
}

/// `sum tau(p, q) * ||q - p||_2`.
pub fn map_cost(instance: &TransportInstance, map: &TransportationMap) -> Result<f64> {
    map.check_indices(instance.len())?;
    Ok(map
        .entries
        .iter()
        .map(|e| e.amount * instance.distance(e.src, e.dst))
        .sum())
}

/// Per-point outflow minus inflow.
pub fn map_divergence(instance: &TransportInstance, map: &TransportationMap) -> Result<Vec<f64>> {
    map.check_indices(instance.len())?;
    let mut div = vec![0.0; instance.len()];
    for e in &map.entries {
        div[e.src] += e.amount;
        div[e.dst] -= e.amount;
    }
    Ok(div)
}

/// Parses the text instance format: a `d n` header then `n` rows of `d`
/// coordinates followed by the supply.
pub fn parse_instance(text: &str, tolerance: f64) -> Result<TransportInstance> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (line, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 2 {
        return Err(Error::Parse { line, msg: "header must be `d n`".into() });
    }
    let dim: usize = parse_num(head[0], line)?;
    let n: usize = parse_num(head[1], line)?;
    let mut coords = Vec::with_capacity(dim * n);
    let mut supplies = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, row) = lines
            .next()
            .ok_or(Error::Parse { line: line + 1, msg: format!("expected {n} point rows") })?;
        let vals = row
            .split_whitespace()
            .map(|t| parse_num::<f64>(t, line))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != dim + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} values, found {}", dim + 1, vals.len()),
            });
        }
        coords.extend_from_slice(&vals[..dim]);
        supplies.push(vals[dim]);
    }
    if let Some((line, _)) = lines.next() {
        return Err(Error::Parse { line, msg: "trailing data after point rows".into() });
    }
    TransportInstance::from_flat(dim, coords, supplies, tolerance)
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::Parse { line, msg: format!("bad number `{tok}`") })
}

pub fn format_instance(instance: &TransportInstance) -> String {
    let mut out = format!("{} {}\n", instance.dim(), instance.len());
    for (i, p) in instance.points().enumerate() {
        for c in p {
            let _ = write!(out, "{c:e} ");
        }
        let _ = writeln!(out, "{:e}", instance.supply(i));
    }
    out
}

/// One `src dst amount` line per entry.
pub fn format_map(map: &TransportationMap) -> String {
    let mut out = String::new();
    for e in &map.entries {
        let _ = writeln!(out, "{} {} {:e}", e.src, e.dst, e.amount);
    }
    out
}

pub fn parse_map(text: &str) -> Result<TransportationMap> {
    let mut map = TransportationMap::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() {
            continue;
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::Parse { line: i + 1, msg: "expected `src dst amount`".into() });
        }
        map.push(parse_num(toks[0], i + 1)?, parse_num(toks[1], i + 1)?, parse_num(toks[2], i + 1)?);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(a: [f64; 2], b: [f64; 2]) -> TransportInstance {
        validate_instance(&[a.to_vec(), b.to_vec()], &[1.0, -1.0], DEFAULT_BALANCE_TOLERANCE).unwrap()
    }

    #[test]
    fn balanced_pair_is_valid() {
        let inst = pair([0.0, 0.0], [1.0, 0.0]);
        assert_eq!(inst.len(), 2);
        assert_eq!(inst.supplies(), &[1.0, -1.0]);
    }

    #[test]
    fn tiny_residual_is_folded() {
        let inst = validate_instance(&[vec![0.0], vec![1.0]], &[1.0, -1.0 + 1e-15], 1e-9).unwrap();
        assert_eq!(compensated_sum(inst.supplies().iter().copied()), 0.0);
    }

    #[test]
    fn unbalanced_is_rejected() {
        let err = validate_instance(&[vec![0.0], vec![1.0]], &[1.0, -0.5], 1e-9).unwrap_err();
        assert!(matches!(err, Error::Unbalanced { .. }));
    }

    #[test]
    fn shape_errors() {
        assert_eq!(validate_instance(&[], &[], 1e-9).unwrap_err(), Error::EmptyInstance);
        assert!(matches!(
            validate_instance(&[vec![0.0, 1.0], vec![1.0]], &[1.0, -1.0], 1e-9),
            Err(Error::DimensionMismatch { index: 1, .. })
        ));
        assert!(matches!(
            validate_instance(&[vec![0.0, f64::NAN]], &[0.0], 1e-9),
            Err(Error::NonFinite { index: 0 })
        ));
        assert!(matches!(
            validate_instance(&[vec![0.0; 9]], &[0.0], 1e-9),
            Err(Error::BadDimension { got: 9, .. })
        ));
        assert!(matches!(
            validate_instance(&[vec![0.0]], &[0.0, 1.0], 1e-9),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn cost_examples() {
        let inst = pair([0.0, 0.0], [3.0, 4.0]);
        let mut map = TransportationMap::new();
        assert_eq!(map_cost(&inst, &map).unwrap(), 0.0);
        map.push(0, 1, 1.0);
        assert_eq!(map_cost(&inst, &map).unwrap(), 5.0);

        let unit = pair([0.0, 0.0], [1.0, 0.0]);
        let mut map = TransportationMap::new();
        map.push(0, 1, 2.0);
        map.push(1, 0, 1.0);
        assert_eq!(map_cost(&unit, &map).unwrap(), 3.0);

        map.push(2, 0, 1.0);
        assert!(matches!(map_cost(&unit, &map), Err(Error::IndexOutOfRange { index: 2, .. })));
    }

    #[test]
    fn divergence_examples() {
        let inst = pair([0.0, 0.0], [3.0, 4.0]);
        let mut map = TransportationMap::new();
        assert_eq!(map_divergence(&inst, &map).unwrap(), vec![0.0, 0.0]);
        map.push(0, 1, 1.0);
        assert_eq!(map_divergence(&inst, &map).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn divergence_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let inst = validate_instance(&pts, &[0.0; 6], 1e-9).unwrap();
        let mut map = TransportationMap::new();
        for _ in 0..15 {
            let (a, b) = (rng.gen_range(0..6), rng.gen_range(0..6));
            if a != b {
                map.push(a, b, rng.gen_range(0.1..2.0));
            }
        }
        let div = map_divergence(&inst, &map).unwrap();
        for (q, d) in div.iter().enumerate() {
            let mut out = 0.0;
            let mut inn = 0.0;
            for r in 0..6 {
                for e in &map.entries {
                    if e.src == q && e.dst == r {
                        out += e.amount;
                    }
                    if e.src == r && e.dst == q {
                        inn += e.amount;
                    }
                }
            }
            assert!((d - (out - inn)).abs() < 1e-12);
        }
    }

    #[test]
    fn text_round_trip() {
        let text = "2 3\n0 0 1.5\n1 0 -0.5\n0 2 -1\n";
        let inst = parse_instance(text, 1e-9).unwrap();
        assert_eq!(inst.point(2), &[0.0, 2.0]);
        let again = parse_instance(&format_instance(&inst), 1e-9).unwrap();
        assert_eq!(inst, again);
        assert!(matches!(parse_instance("2 1\n0 0\n", 1e-9), Err(Error::Parse { line: 2, .. })));

        let mut map = TransportationMap::new();
        map.push(0, 2, 0.25);
        assert_eq!(parse_map(&format_map(&map)).unwrap(), map);
    }

    proptest! {
        #[test]
        fn map_invariants(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..8),
            raw in prop::collection::vec((0usize..8, 0usize..8, 0.0f64..3.0), 0..20),
        ) {
            let n = pts.len();
            let points: Vec<Vec<f64>> = pts.iter().map(|&(x, y)| vec![x, y]).collect();
            let inst = validate_instance(&points, &vec![0.0; n], 1e-9).unwrap();
            let mut map = TransportationMap::new();
            for &(a, b, w) in &raw {
                map.push(a % n, b % n, w);
            }
            let div = map_divergence(&inst, &map).unwrap();
            let total: f64 = div.iter().sum();
            prop_assert!(total.abs() <= 1e-12 * (1.0 + raw.len() as f64 * 3.0));
            let cost = map_cost(&inst, &map).unwrap();
            prop_assert!(cost >= 0.0);
            let mut rev = map.clone();
            rev.entries.reverse();
            let cost_rev = map_cost(&inst, &rev).unwrap();
            prop_assert!((cost - cost_rev).abs() <= 1e-9 * (1.0 + cost));
        }
    }
}
