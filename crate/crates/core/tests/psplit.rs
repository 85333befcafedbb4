mod common;

use geotrans::psplit::{Forest, PrefixSplitTree};
use geotrans::Error;

#[test]
fn fuzz_matches_plain_lists() {
    for seed in 0..3 {
        let r = common::fuzz_prefix_split(20_000, seed);
        assert_eq!(r.mismatches, 0, "{:?}", r.first_mismatch);
    }
}

#[test]
fn fuzz_with_audit() {
    // Full invariant audits after every mutation on a short run.
    let mut forest: Forest<u32> = Forest::new();
    forest.set_audit(true);
    let mut a = PrefixSplitTree::new();
    for i in 0..200 {
        forest.insert(&mut a, i, 1.0 + (i % 7) as f64).unwrap();
    }
    let mut b = forest.prefix_split(&mut a, 123.5).unwrap();
    assert!((forest.total_weight(&b) - 123.5).abs() < 1e-9);
    assert!(forest.audit(&a) && forest.audit(&b));
    forest.merge(&mut b, a).unwrap();
    assert_eq!(forest.in_order(&b).len(), 201);
}

#[test]
fn split_node_is_shared_between_halves() {
    let mut forest: Forest<char> = Forest::new();
    let mut t = PrefixSplitTree::new();
    for (c, w) in [('a', 2.0), ('b', 3.0), ('c', 5.0)] {
        forest.insert(&mut t, c, w).unwrap();
    }
    let p = forest.prefix_split(&mut t, 3.5).unwrap();
    assert_eq!(forest.in_order(&p), vec![('a', 2.0), ('b', 1.5)]);
    assert_eq!(forest.in_order(&t), vec![('b', 1.5), ('c', 5.0)]);
}

#[test]
fn errors_on_misuse() {
    let mut forest: Forest<u8> = Forest::new();
    let mut t = PrefixSplitTree::new();
    let x = forest.insert(&mut t, 1, 1.0).unwrap();
    forest.insert(&mut t, 2, 1.0).unwrap();
    assert!(forest.prefix_split(&mut t, 0.0).is_err());
    assert!(forest.prefix_split(&mut t, 3.0).is_err());
    forest.delete(&mut t, x).unwrap();
    assert!(matches!(forest.label(x), Err(Error::StaleHandle)));
    assert!(matches!(forest.delete(&mut t, x), Err(Error::StaleHandle)));
    assert!(forest.insert(&mut t, 3, -1.0).is_err());
}

#[test]
fn growth_is_near_linear() {
    let a = common::time_prefix_split_ops(50_000, 1);
    let b = common::time_prefix_split_ops(100_000, 1);
    assert!(b / a <= 3.0, "doubling ops grew time by {}", b / a);
}
