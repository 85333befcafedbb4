#![allow(clippy::needless_range_loop)]

mod common;

use geotrans::generate::{generate, SupplyMode};
use geotrans::quadtree::{build_subdivided, QuadtreeParams};
use geotrans::spanner::{build_sparse_graph, graph_distance, route_supplies, EdgeKind};

fn sorted(mut v: Vec<(usize, usize, f64)>) -> Vec<(usize, usize, f64)> {
    v.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
    v
}

#[test]
fn edge_set_matches_recount() {
    for (seed, mode) in [(1, SupplyMode::Random), (2, SupplyMode::Unit), (3, SupplyMode::Cluster)] {
        let inst = generate(60, 2, 1e5, mode, seed).unwrap();
        let params = QuadtreeParams::for_epsilon(0.5, 60, 1.0, seed).unwrap().with_exponents(4.0, 2.0);
        let tree = build_subdivided(&inst, &params).unwrap();
        let g = build_sparse_graph(&tree);
        let got = sorted(common::graph_edges(&g));
        let want = sorted(common::expected_edges(&tree));
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert_eq!((a.0, a.1), (b.0, b.1));
            assert!((a.2 - b.2).abs() <= 1e-12 * a.2.max(1e-300));
        }
        for e in 0..g.num_edges() {
            assert!(g.network.tails[e] < g.network.heads[e]);
            if let EdgeKind::Clique { cell } = g.kinds[e] {
                let r = tree.cell_subcells(cell);
                let (a, b) = (g.network.tails[e] as usize - 60, g.network.heads[e] as usize - 60);
                assert_eq!(g.clique_edge(&tree, cell, a, b), e);
                assert!(r.contains(&a) && r.contains(&b));
            }
        }
    }
}

#[test]
fn shortest_paths_match_floyd() {
    let inst = generate(24, 2, 1e3, SupplyMode::Random, 9).unwrap();
    let params = QuadtreeParams::for_epsilon(0.5, 24, 1.0, 4).unwrap();
    let tree = build_subdivided(&inst, &params).unwrap();
    let g = build_sparse_graph(&tree);
    let d = common::floyd(&g.network);
    for p in 0..24 {
        for q in 0..24 {
            let got = graph_distance(&g, p, q).unwrap();
            assert!((got - d[p][q]).abs() <= 1e-9 * d[p][q].max(1e-300));
            assert!(got >= inst.distance(p, q) * (1.0 - 1e-9));
        }
    }
    assert!(graph_distance(&g, 0, 24).is_err());
}

#[test]
fn routed_supplies_balance() {
    let inst = generate(40, 3, 1e3, SupplyMode::Random, 5).unwrap();
    let tree = build_subdivided(&inst, &QuadtreeParams::for_epsilon(0.5, 40, 1.0, 2).unwrap()).unwrap();
    let g = build_sparse_graph(&tree);
    let (f, demand) = route_supplies(&g, &inst).unwrap();
    let div = g.network.apply_incidence(&f).unwrap();
    for p in 0..40 {
        assert_eq!(div[p], inst.supply(p));
    }
    for (s, &x) in demand.iter().enumerate() {
        assert!((div[40 + s] + x).abs() < 1e-12);
    }
    assert!(demand.iter().sum::<f64>().abs() < 1e-9);
}
