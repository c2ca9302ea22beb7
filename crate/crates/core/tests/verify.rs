use std::sync::OnceLock;

use wildsphere::cantor::{BinaryIndex, CantorSystem};
use wildsphere::config::RunConfig;
use wildsphere::geom::{v3, Vec3};
use wildsphere::mesh::TriMesh;
use wildsphere::pipeline::{run_build, verify_run, Run};
use wildsphere::surface::SurfaceConfig;
use wildsphere::verify::*;

fn shared() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run_build(&RunConfig { depth: 3, ..RunConfig::default() }).unwrap())
}

#[test]
fn round_sphere_is_clean() {
    let r = self_intersection(&uv_sphere(v3(1.0, 2.0, 3.0), 0.5, 16, 32)).unwrap();
    assert!(r.pass());
    assert!(r.shared_edge_pairs > 0 && r.shared_vertex_pairs > 0);
}

#[test]
fn overlapping_tori_are_flagged() {
    let a = torus_mesh(Vec3::zeros(), Vec3::z(), 1.0, 0.3, 32, 16);
    let b = torus_mesh(v3(0.5, 0.0, 0.1), Vec3::z(), 1.0, 0.3, 32, 16);
    let merged = merge(&[&a, &b]);
    let r = self_intersection(&merged).unwrap();
    assert!(!r.pass());
    let n = a.triangles.len();
    assert!(r.pairs.iter().all(|&(i, j)| i < n && j >= n));
    let sym = r.symmetric_pairs();
    assert_eq!(sym.len(), 2 * r.pairs.len());
    assert!(sym.iter().all(|&(i, j)| sym.binary_search(&(j, i)).is_ok()));
    // Same input, same report.
    assert_eq!(self_intersection(&merged).unwrap(), r);
    // Far apart, the union is clean.
    let c = torus_mesh(v3(5.0, 0.0, 0.0), Vec3::x(), 1.0, 0.3, 32, 16);
    assert!(self_intersection(&merge(&[&a, &c])).unwrap().pass());
}

#[test]
fn degenerate_triangles_are_rejected() {
    let mut m = TriMesh::new();
    let a = m.add_vertex(v3(0.0, 0.0, 0.0));
    let b = m.add_vertex(v3(1.0, 0.0, 0.0));
    let c = m.add_vertex(v3(2.0, 0.0, 0.0));
    m.triangles.push([a, b, c]);
    assert!(matches!(self_intersection(&m), Err(VerifyError::Degenerate(v)) if v == vec![0]));
}

#[test]
fn triangle_predicates() {
    let t = [v3(0.0, 0.0, 0.0), v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0)];
    assert!(segment_meets_triangle(&v3(0.2, 0.2, -1.0), &v3(0.2, 0.2, 1.0), &t));
    assert!(!segment_meets_triangle(&v3(0.8, 0.8, -1.0), &v3(0.8, 0.8, 1.0), &t));
    // Coplanar overlap and coplanar separation.
    assert!(triangles_meet(&t, &[v3(0.1, 0.1, 0.0), v3(2.0, 0.1, 0.0), v3(0.1, 2.0, 0.0)]));
    assert!(!triangles_meet(&t, &[v3(2.0, 2.0, 0.0), v3(3.0, 2.0, 0.0), v3(2.0, 3.0, 0.0)]));
    assert!(triangles_meet(&t, &[v3(0.2, 0.2, -1.0), v3(0.3, 0.2, 1.0), v3(0.2, 0.3, 1.0)]));
}

#[test]
fn constructed_stages_are_clean() {
    let a = &shared().approx;
    for k in 1..=a.depth {
        let r = self_intersection(&a.stage_mesh(k).unwrap()).unwrap();
        assert!(r.pass(), "stage {k}: {:?}", &r.pairs[..r.pairs.len().min(4)]);
    }
}

#[test]
fn lemma_bounds_match_formulas() {
    let unit = CantorSystem::ternary_unit();
    assert!((continuity_bound(&unit, 2).unwrap() - (4.0 + 2.0 / 3.0)).abs() < 1e-12);
    assert!((continuity_bound(&unit, 1).unwrap() - 10.0).abs() < 1e-12);
    let (table, decreasing) = continuity_table(&unit, 8).unwrap();
    assert!(decreasing);
    for (i, b) in table.iter().enumerate() {
        let k = i as i32 + 1;
        assert!((b - (2f64.powi(4 - k) + 2.0 * 3f64.powi(1 - k))).abs() < 1e-12);
    }
    // Far past any threshold the bound is below every fixed ε.
    assert!(continuity_bound(&unit, 40).unwrap() < 1e-10);
}

#[test]
fn built_surface_satisfies_the_neighborhood_lemmas() {
    let run = shared();
    for k in 1..=run.approx.depth {
        let l2 = verify_image_lemma(&run.approx, &run.system, k, 256).unwrap();
        assert!(l2.pass, "{}", l2.summary());
        assert_eq!(l2.entries.len(), 1 << k);
        for e in &l2.entries {
            let diam = run.system.max_cell_diameter(k - 1).unwrap();
            assert!(e.bound <= 2f64.powi(4 - k as i32) + diam * (1.0 + 1e-12));
        }
        let c = continuity_modulus(&run.approx, &run.system, k, 256).unwrap();
        assert!(c.pass, "{}", c.summary());
        let tail = tail_disjointness(&run.approx, &run.tree, k).unwrap();
        assert!(tail.pass, "{}", tail.summary());
        assert!(tube_proximity(&run.approx, k).pass);
    }
    let margin = |k| -tail_disjointness(&run.approx, &run.tree, k).unwrap().worst().unwrap().measured;
    assert!(margin(1) > 0.0 && margin(3) > 0.0);
}

#[test]
fn offset_region_fails_the_image_lemma() {
    let mut run = run_build(&RunConfig { depth: 2, ..RunConfig::default() }).unwrap();
    let idx = BinaryIndex::parse("10").unwrap();
    for v in run.approx.subtree_vertex_ids(&idx) {
        run.approx.vertices[v] += v3(20.0, 0.0, 0.0);
    }
    let l2 = verify_image_lemma(&run.approx, &run.system, 2, 256).unwrap();
    assert!(!l2.pass);
    let bad: Vec<&str> = l2.entries.iter().filter(|e| !e.pass).map(|e| e.index.as_str()).collect();
    assert_eq!(bad, vec!["10"]);
    assert!(!continuity_modulus(&run.approx, &run.system, 2, 256).unwrap().pass);
}

#[test]
fn widened_tentacle_crosses_the_tail() {
    let run = shared();
    let (mesh, report) = widened_tentacle_control(&run.tree, &BinaryIndex::parse("0").unwrap(), &SurfaceConfig::default()).unwrap();
    assert!(!mesh.triangles.is_empty());
    assert!(!report.pass, "{}", report.summary());
}

#[test]
fn full_suite_passes_and_is_deterministic() {
    let run = shared();
    let a = verify_run(run).unwrap();
    assert!(a.pass, "{}", a.to_text());
    assert!(a.failed().is_empty());
    let b = verify_run(run).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let ledger = energy_ledger_check(&run.approx);
    assert_eq!(ledger, run.approx.ledger);
}
