mod common;

use geotrans::generate::{generate, SupplyMode};
use geotrans::precond::PreconditionerContext;
use geotrans::quadtree::{build_subdivided, QuadtreeParams, Quadtree};
use geotrans::solver::solve_exact;
use geotrans::spanner::{build_sparse_graph, SparseGraph};
use rand::Rng;

fn setup(n: usize, seed: u64, mode: SupplyMode, spread: f64) -> (Quadtree, SparseGraph) {
    let inst = generate(n, 2, spread, mode, seed).unwrap();
    let params = QuadtreeParams::for_epsilon(0.5, n, 1.0, seed).unwrap().with_exponents(4.0, 2.0);
    let tree = build_subdivided(&inst, &params).unwrap();
    let g = build_sparse_graph(&tree);
    (tree, g)
}

#[test]
fn operators_match_dense_products() {
    let mut rng = common::rng(3);
    for seed in 0..6 {
        let (tree, g) = setup(30, seed, SupplyMode::Cluster, 1e8);
        for part in 0..tree.parts.len() {
            let ctx = PreconditionerContext::new(&tree, &g, part);
            let a = common::dense_incidence(&ctx.network);
            let b = common::dense_b(&ctx);
            let ba = common::mat_mul(&b, &a);
            let f: Vec<f64> = (0..ctx.num_edges()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..ctx.num_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = ctx.apply_ba(&f).unwrap();
            assert!(common::max_rel_diff(&got, &common::mat_vec(&ba, &f)) <= 1e-10);
            let got_t = ctx.apply_ba_transpose(&y).unwrap();
            assert!(common::max_rel_diff(&got_t, &common::mat_t_vec(&ba, &y)) <= 1e-10);
            let lhs: f64 = got.iter().zip(&y).map(|(p, q)| p * q).sum();
            let rhs: f64 = f.iter().zip(&got_t).map(|(p, q)| p * q).sum();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-12));

            // |B A W^-1| row and column sums.
            let w: Vec<f64> = ctx.network.lengths.clone();
            let (rows, cols) = ctx.abs_sums(&w).unwrap();
            for (i, row) in ba.iter().enumerate() {
                let want: f64 = row.iter().zip(&w).map(|(x, we)| x.abs() / we).sum();
                assert!(common::rel_err(rows[i], want) <= 1e-10);
            }
            for e in 0..ctx.num_edges() {
                let want: f64 = ba.iter().map(|r| r[e].abs() / w[e]).sum();
                assert!(common::rel_err(cols[e], want) <= 1e-10);
            }
        }
    }
}

#[test]
fn sandwich_holds() {
    let mut rng = common::rng(11);
    for seed in 0..8 {
        let (tree, g) = setup(40, seed, SupplyMode::Random, 1e4);
        for part in 0..tree.parts.len() {
            let ctx = PreconditionerContext::new(&tree, &g, part);
            if ctx.num_vertices() < 2 {
                continue;
            }
            let b = common::balanced(ctx.num_vertices(), &mut rng);
            let (lower, _) = ctx.apply_b_norm(&b).unwrap();
            let (f, _, _) = solve_exact(&ctx.network, &b).unwrap();
            let opt = ctx.network.flow_cost(&f).unwrap();
            let greedy = ctx.greedy_flow(&b).unwrap();
            let gcost = ctx.network.flow_cost(&greedy).unwrap();
            let div = ctx.network.apply_incidence(&greedy).unwrap();
            assert!(div.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-9));
            assert!(lower <= opt * (1.0 + 1e-9));
            assert!(opt <= gcost * (1.0 + 1e-9));
            assert!(gcost <= ctx.greedy_factor() * lower * (1.0 + 1e-9));
        }
    }
}

#[test]
fn rejects_bad_vectors() {
    let (tree, g) = setup(10, 1, SupplyMode::Random, 1e3);
    let ctx = PreconditionerContext::new(&tree, &g, 0);
    assert!(ctx.apply_ba(&[1.0]).is_err() || ctx.num_edges() == 1);
    let mut b = vec![0.0; ctx.num_vertices()];
    b[0] = 1.0;
    assert!(ctx.apply_b_norm(&b).is_err());
    assert!(ctx.greedy_flow(&b).is_err());
}
