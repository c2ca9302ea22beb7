use proptest::prelude::*;
use wildsphere::cantor::{ternary_interval, BinaryIndex, CantorSystem, Placement};
use wildsphere::curve::Curve;
use wildsphere::geom::{point_segment_distance, v3, Vec3};
use wildsphere::tree::*;

fn idx(s: &str) -> BinaryIndex {
    BinaryIndex::parse(s).unwrap()
}

fn far() -> CantorSystem {
    CantorSystem::ternary(Placement::default())
}

// Distance from p to the canonical ternary segment of `code`.
fn dist_to_interval(p: &Vec3, code: &BinaryIndex) -> f64 {
    let (a, b) = ternary_interval(code);
    point_segment_distance(p, &v3(a, 0.0, 0.0), &v3(b, 0.0, 0.0))
}

#[test]
fn first_anchor_sits_off_the_axis_near_its_third() {
    let s = CantorSystem::ternary_unit();
    let a = select_anchor(&s, &idx("0"), 1, &TreeConfig::default()).unwrap();
    assert!(dist_to_interval(&a.position, &idx("0")) < 0.5);
    assert!(a.position.y.hypot(a.position.z) > 0.0);
    assert!(a.clearance > 0.0);
}

#[test]
fn deep_anchor_within_its_scale() {
    let s = CantorSystem::ternary_unit();
    let i = idx("1001011010");
    let a = select_anchor(&s, &i, 5, &TreeConfig::default()).unwrap();
    let d = dist_to_interval(&a.position, &i);
    assert!(d < 0.5f64.powi(10), "{d}");
}

#[test]
fn unobstructed_branch_is_straight_and_unit_speed() {
    let s = CantorSystem::ternary_unit();
    let start = v3(0.5, 0.0, -2.0);
    let end = v3(0.5, 0.3, -1.0);
    let b = build_branch(&s, &Obstacles::empty(), &idx("0"), start, v3(0.0, 0.0, 1.0), end, &TreeConfig::default()).unwrap();
    assert!(b.straight);
    assert!(b.deviation < 1e-12);
    assert!(b.junction_angle > std::f64::consts::FRAC_PI_2 + 0.05);
    assert!(b.curve.max_speed_deviation(8) < 1e-6);
}

#[test]
fn branch_through_the_set_detours() {
    let s = CantorSystem::ternary_unit();
    // The chord passes through the point 0 of C.
    let start = v3(0.0, 0.0, -0.3);
    let end = v3(0.0, 0.0, 0.3);
    let b = build_branch(&s, &Obstacles::empty(), &idx("0"), start, v3(0.0, 0.0, 1.0), end, &TreeConfig::default()).unwrap();
    assert!(!b.straight);
    assert!(b.deviation > 0.0 && b.deviation < 1.0);
    let closest = b.samples.iter().map(|p| s.distance_lower(p, &BinaryIndex::root(), 12)).fold(f64::INFINITY, f64::min);
    assert!(closest > 0.0);
    // Speed oracle by finite differences.
    let h = 1e-5;
    let l = b.length();
    for i in 1..100 {
        let t = l * i as f64 / 100.0;
        let speed = (b.curve.point(t + h) - b.curve.point(t - h)).norm() / (2.0 * h);
        assert!((speed - 1.0).abs() < 1e-6, "{speed}");
    }
}

#[test]
fn depth_one_tree_meets_only_at_origin() {
    let s = far();
    let tree = build_tree(&s, 1, 3, &TreeConfig::default()).unwrap();
    assert_eq!(tree.branch_count(), 2);
    let b0 = tree.branch(&idx("0")).unwrap();
    let b1 = tree.branch(&idx("1")).unwrap();
    assert_eq!(b0.start(), Vec3::zeros());
    assert_eq!(b1.start(), Vec3::zeros());
    assert!((b0.end() - tree.anchor(&idx("0")).unwrap().position).norm() < 1e-9);
    for p in &b0.samples[1..] {
        for q in &b1.samples[1..] {
            assert!((p - q).norm() > 0.0);
        }
    }
}

fn adjacent(a: &BinaryIndex, b: &BinaryIndex) -> bool {
    a.parent() == b.parent() || a.parent().as_ref() == Some(b) || b.parent().as_ref() == Some(a)
}

#[test]
fn depth_three_tree_is_separated() {
    let s = far();
    let tree = build_tree(&s, 3, 7, &TreeConfig::default()).unwrap();
    assert_eq!(tree.branch_count(), 14);
    let branches: Vec<_> = tree.branches().collect();
    for (i, a) in branches.iter().enumerate() {
        for b in &branches[i + 1..] {
            if adjacent(&a.index, &b.index) {
                continue;
            }
            let d = a.samples.iter().flat_map(|p| b.samples.iter().map(move |q| (p - q).norm())).fold(f64::INFINITY, f64::min);
            let req = 1e-4 * a.length().min(b.length());
            assert!(d > req, "{} {} {d}", a.index, b.index);
        }
    }
    for b in &branches {
        assert!(b.junction_angle > std::f64::consts::FRAC_PI_2 + 0.05);
        assert!(b.deviation <= 0.5f64.powi(b.order() as i32 - 1));
    }
    let again = build_tree(&s, 3, 7, &TreeConfig::default()).unwrap();
    assert_eq!(tree.to_json(32), again.to_json(32));
}

#[test]
fn proximity_lemma_on_ternary() {
    let s = far();
    let tree = build_tree(&s, 3, 1, &TreeConfig::default()).unwrap();
    let r = verify_branch_proximity(&tree, &s, 2).unwrap();
    assert!(r.pass);
    assert_eq!(r.entries.len(), 8);
    for e in &r.entries {
        assert!((e.bound - (1.0 + 1.0 / 9.0)).abs() < 1e-12);
    }
    let r0 = verify_branch_proximity(&tree, &s, 0).unwrap();
    assert!(r0.entries.iter().all(|e| (e.bound - 5.0).abs() < 1e-12));
}

#[test]
fn offset_branch_is_flagged() {
    let s = far();
    let mut tree = build_tree(&s, 3, 1, &TreeConfig::default()).unwrap();
    let b = tree.branch(&idx("01")).unwrap().translated(v3(5.0, 0.0, 0.0)).unwrap();
    tree.replace_branch(b);
    let r = verify_branch_proximity(&tree, &s, 1).unwrap();
    assert!(!r.pass);
    let bad: Vec<_> = r.entries.iter().filter(|e| !e.pass).map(|e| e.index.as_str()).collect();
    assert_eq!(bad, ["01"]);
}

#[test]
fn tail_neighbourhood_radii() {
    let s = far();
    let e3 = tail_epsilon(&s, 3).unwrap();
    assert!((e3 - (0.5 + 1.0 / 27.0)).abs() < 1e-15);
    assert!((e3 - 0.5370).abs() < 1e-4);
    assert!((tail_epsilon(&s, 0).unwrap() - 5.0).abs() < 1e-15);
    let eps: Vec<f64> = (1..=6).map(|k| tail_epsilon(&s, k).unwrap()).collect();
    assert!(eps.windows(2).all(|w| w[1] < w[0]));
    let tree = build_tree(&s, 4, 2, &TreeConfig::default()).unwrap();
    let t = verify_tail_neighborhood(&tree, &s, 3).unwrap();
    assert!(t.report.pass && t.eps_decreasing);
    assert_eq!(t.report.entries.len(), 16);
}

#[test]
fn lemma_tables_hold_at_every_level() {
    let s = far();
    let tree = build_tree(&s, 4, 11, &TreeConfig::default()).unwrap();
    for k in 1..4 {
        assert!(verify_branch_proximity(&tree, &s, k).unwrap().pass, "l1 {k}");
    }
    for k in 1..=4 {
        assert!(verify_tail_neighborhood(&tree, &s, k).unwrap().report.pass, "c1 {k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn anchors_close_distinct_and_off_the_set(bits in 0u64..4096, len in 1usize..12, seed in 0u64..1000) {
        let s = CantorSystem::ternary_unit();
        let i = BinaryIndex::from_bits(bits & ((1 << len) - 1), len);
        let cfg = TreeConfig::default();
        let a = select_anchor(&s, &i, seed, &cfg).unwrap();
        prop_assert!(dist_to_interval(&a.position, &i) < 0.5f64.powi(len as i32));
        prop_assert!(a.clearance > 0.0);
        let sib = BinaryIndex::from_bits(i.bits() ^ 1, len);
        let b = select_anchor(&s, &sib, seed, &cfg).unwrap();
        prop_assert!(a.position != b.position);
    }
}
