//! Exact transportation cost on the complete bipartite graph.

use crate::error::{Error, Result};
use crate::instance::{TransportInstance, TransportationMap};

pub const DEFAULT_ORACLE_CAP: usize = 512;

#[derive(Debug, Clone)]
pub struct ExactResult {
    pub map: TransportationMap,
    pub cost: f64,
    /// Dual potential per point; zero for points without supply.
    pub potentials: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CertificateWitness {
    Infeasible { point: usize, error: f64 },
    NegativeReducedCost { source: usize, sink: usize, reduced: f64 },
    LooseSupport { source: usize, sink: usize, reduced: f64 },
    BadEntry { index: usize },
}

pub fn exact_transport(instance: &TransportInstance) -> Result<ExactResult> {
    exact_transport_capped(instance, DEFAULT_ORACLE_CAP)
}

/// Successive shortest paths with potentials; each augmentation moves the
/// bottleneck of source mass, sink mass and cancelled flow.
pub fn exact_transport_capped(instance: &TransportInstance, cap: usize) -> Result<ExactResult> {
    let n = instance.len();
    if n > cap {
        return Err(Error::TooLarge { n, cap });
    }
    let mass = instance.total_mass();
    let zero = 1e-12 * mass;
    let sources: Vec<usize> = (0..n).filter(|&i| instance.supply(i) > 0.0).collect();
    let sinks: Vec<usize> = (0..n).filter(|&i| instance.supply(i) < 0.0).collect();
    let (ns, nt) = (sources.len(), sinks.len());
    let mut potentials = vec![0.0; n];
    if ns == 0 || nt == 0 {
        return Ok(ExactResult { map: TransportationMap::new(), cost: 0.0, potentials });
    }
    let cost: Vec<f64> = sources
        .iter()
        .flat_map(|&s| sinks.iter().map(move |&t| (s, t)))
        .map(|(s, t)| instance.distance(s, t))
        .collect();
    let c = |i: usize, j: usize| cost[i * nt + j];
    let mut x = vec![0.0; ns * nt];
    let mut supply: Vec<f64> = sources.iter().map(|&s| instance.supply(s)).collect();
    let mut demand: Vec<f64> = sinks.iter().map(|&t| -instance.supply(t)).collect();
    // Vertex k < ns is a source, k >= ns a sink.
    let nv = ns + nt;
    let mut pi = vec![0.0; nv];
    let mut dist = vec![0.0; nv];
    let mut prev = vec![usize::MAX; nv];
    let mut done = vec![false; nv];

    loop {
        if supply.iter().all(|&s| s <= zero) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for i in 0..ns {
            if supply[i] > zero {
                dist[i] = 0.0;
            }
        }
        let mut target = None;
        loop {
            let mut best = usize::MAX;
            for k in 0..nv {
                if !done[k] && dist[k].is_finite() && (best == usize::MAX || dist[k] < dist[best]) {
                    best = k;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best >= ns {
                let j = best - ns;
                if demand[j] > zero {
                    target = Some(best);
                    break;
                }
                // Sink to source only along existing flow, at negative cost.
                for i in 0..ns {
                    if !done[i] && x[i * nt + j] > 0.0 {
                        let nd = dist[best] + (-c(i, j) + pi[best] - pi[i]).max(0.0);
                        if nd < dist[i] {
                            dist[i] = nd;
                            prev[i] = best;
                        }
                    }
                }
            } else {
                let i = best;
                for j in 0..nt {
                    let k = ns + j;
                    if !done[k] {
                        let nd = dist[i] + (c(i, j) + pi[i] - pi[k]).max(0.0);
                        if nd < dist[k] {
                            dist[k] = nd;
                            prev[k] = i;
                        }
                    }
                }
            }
        }
        let Some(t) = target else {
            return Err(Error::Infeasible("oracle could not route remaining supply".into()));
        };
        let dt = dist[t];
        for k in 0..nv {
            pi[k] += dist[k].min(dt);
        }
        let mut amount = demand[t - ns];
        let mut k = t;
        while prev[k] != usize::MAX {
            let p = prev[k];
            if k < ns {
                // Arc sink p -> source k cancels x[k][p].
                amount = amount.min(x[k * nt + (p - ns)]);
            }
            k = p;
        }
        amount = amount.min(supply[k]);
        let source = k;
        let mut k = t;
        while k != source {
            let p = prev[k];
            if k >= ns {
                x[p * nt + (k - ns)] += amount;
            } else {
                x[k * nt + (p - ns)] -= amount;
            }
            k = p;
        }
        supply[source] -= amount;
        demand[t - ns] -= amount;
    }

    let mut map = TransportationMap::new();
    let mut total = 0.0;
    for i in 0..ns {
        for j in 0..nt {
            let v = x[i * nt + j];
            if v > zero {
                map.push(sources[i], sinks[j], v);
                total += v * c(i, j);
            }
        }
    }
    // Reduced cost c + pi_s - pi_t >= 0 in the source/sink convention.
    for (i, &s) in sources.iter().enumerate() {
        potentials[s] = pi[i];
    }
    for (j, &t) in sinks.iter().enumerate() {
        potentials[t] = pi[ns + j];
    }
    let result = ExactResult { map, cost: total, potentials };
    if let Err(w) = certify(instance, &result) {
        return Err(Error::Internal(format!("oracle certificate failed: {w:?}")));
    }
    Ok(result)
}

/// Checks feasibility and complementary slackness of an oracle result.
pub fn certify(instance: &TransportInstance, result: &ExactResult) -> std::result::Result<(), CertificateWitness> {
    let n = instance.len();
    let mass = instance.total_mass();
    let mut div = vec![0.0; n];
    for (k, e) in result.map.entries.iter().enumerate() {
        if e.src >= n || e.dst >= n || !(e.amount >= 0.0) {
            return Err(CertificateWitness::BadEntry { index: k });
        }
        div[e.src] += e.amount;
        div[e.dst] -= e.amount;
    }
    for (p, d) in div.iter().enumerate() {
        let error = (d - instance.supply(p)).abs();
        if error > 1e-9 * mass.max(f64::MIN_POSITIVE) && error > 0.0 {
            return Err(CertificateWitness::Infeasible { point: p, error });
        }
    }
    if result.potentials.len() != n {
        return Err(CertificateWitness::BadEntry { index: usize::MAX });
    }
    let pi = &result.potentials;
    let scale = pi.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
    let tol = 1e-9 * scale;
    for s in (0..n).filter(|&i| instance.supply(i) > 0.0) {
        for t in (0..n).filter(|&i| instance.supply(i) < 0.0) {
            let reduced = instance.distance(s, t) + pi[s] - pi[t];
            if reduced < -tol {
                return Err(CertificateWitness::NegativeReducedCost { source: s, sink: t, reduced });
            }
        }
    }
    for e in &result.map.entries {
        let reduced = instance.distance(e.src, e.dst) + pi[e.src] - pi[e.dst];
        if reduced.abs() > tol {
            return Err(CertificateWitness::LooseSupport { source: e.src, sink: e.dst, reduced });
        }
    }
    Ok(())
}
