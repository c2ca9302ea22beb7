//! Orchestration behind the command-line verbs: generate, grow the tree,
//! build the stages, certify them and write artifacts with a manifest.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cantor::{CantorError, CantorSystem};
use crate::config::{ConfigError, RunConfig};
use crate::geom::v3;
use crate::mesh::{MeshError, TriMesh};
use crate::report::LemmaReport;
use crate::surface::{build, BuildMode, EnergyLedger, ExceptionalSet, SurfaceApprox, SurfaceError};
use crate::tree::{build_tree, verify_branch_proximity, verify_tail_neighborhood, CantorTree, TreeError};
use crate::verify::{continuity_modulus, continuity_table, self_intersection, tail_disjointness, tube_proximity, verify_image_lemma, VerifyError};

pub const MANIFEST: &str = "manifest.json";
pub const VERIFY_REPORT: &str = "verify.json";
const TREE_SAMPLES: usize = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Cantor(#[from] CantorError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{0}")]
    Missing(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshFormat {
    Obj,
    Ply,
    Json,
}

impl MeshFormat {
    pub fn ext(self) -> &'static str {
        match self {
            MeshFormat::Obj => "obj",
            MeshFormat::Ply => "ply",
            MeshFormat::Json => "json",
        }
    }

    pub fn parse(s: &str) -> Option<MeshFormat> {
        match s {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::Ply),
            "json" => Some(MeshFormat::Json),
            _ => None,
        }
    }

    pub fn encode(self, mesh: &TriMesh, name: &str) -> Vec<u8> {
        match self {
            MeshFormat::Obj => mesh.to_obj(name).into_bytes(),
            MeshFormat::Ply => mesh.to_ply(),
            MeshFormat::Json => {
                let v: Vec<[f64; 3]> = mesh.vertices.iter().map(|p| [p.x, p.y, p.z]).collect();
                let mut s = serde_json::to_string(&json!({"name": name, "vertices": v, "triangles": mesh.triangles})).expect("mesh serializes");
                s.push('\n');
                s.into_bytes()
            }
        }
    }

    pub fn decode(self, bytes: &[u8]) -> Result<TriMesh, MeshError> {
        match self {
            MeshFormat::Obj => TriMesh::from_obj(BufReader::new(bytes)),
            MeshFormat::Ply => TriMesh::from_ply(BufReader::new(bytes)),
            MeshFormat::Json => {
                #[derive(Deserialize)]
                struct Raw {
                    vertices: Vec<[f64; 3]>,
                    triangles: Vec<[u32; 3]>,
                }
                let raw: Raw = serde_json::from_slice(bytes).map_err(|e| MeshError::Parse { format: "JSON", line: e.line(), reason: e.to_string() })?;
                let n = raw.vertices.len() as u32;
                if let Some(t) = raw.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
                    return Err(MeshError::Parse { format: "JSON", line: 0, reason: format!("triangle {t:?} indexes past {n} vertices") });
                }
                Ok(TriMesh { vertices: raw.vertices.iter().map(|p| v3(p[0], p[1], p[2])).collect(), triangles: raw.triangles })
            }
        }
    }
}

/// Everything a run produces in memory.
pub struct Run {
    pub config: RunConfig,
    pub system: CantorSystem,
    pub tree: CantorTree,
    pub approx: SurfaceApprox,
}

/// Tree depth used for a surface of depth `k`: meshed runs grow one extra
/// level so the tail past the last stage can be checked against it.
pub fn tree_depth(cfg: &RunConfig) -> usize {
    match cfg.mode {
        BuildMode::Mesh => cfg.depth + 1,
        BuildMode::Analytic => cfg.depth,
    }
}

pub fn run_build(cfg: &RunConfig) -> Result<Run, PipelineError> {
    cfg.validate()?;
    let system = cfg.generator.system()?;
    let tree = build_tree(&system, tree_depth(cfg), cfg.seed, &cfg.tree)?;
    let approx = build(&system, &tree, cfg.depth, &cfg.surface, cfg.schedule, cfg.mode)?;
    Ok(Run { config: cfg.clone(), system, tree, approx })
}

/// Stages written as mesh files: `f_1 .. f_K`.
pub fn mesh_stages(run: &Run) -> Vec<usize> {
    match run.approx.mode {
        BuildMode::Mesh => (1..=run.approx.depth).collect(),
        BuildMode::Analytic => vec![],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub format: Option<MeshFormat>,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub tree: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub level: usize,
    pub sites: usize,
    pub budget: f64,
    pub level_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub report: String,
    pub checks: usize,
    pub failed: Vec<String>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub generator: String,
    pub mode: BuildMode,
    pub depth: usize,
    pub tree_depth: usize,
    pub seeds: Seeds,
    pub schedule: String,
    pub budgets: Vec<BudgetRow>,
    pub ledger_total: f64,
    pub ledger_pass: bool,
    pub artifacts: Vec<Artifact>,
    pub verification: Option<VerificationSummary>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest, PipelineError> {
        let path = dir.join(MANIFEST);
        let text = fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&text).map_err(|source| PipelineError::Json { path: path.display().to_string(), source })
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        write_json(&dir.join(MANIFEST), &serde_json::to_value(self).expect("manifest serializes"))?;
        Ok(())
    }

    pub fn stages(&self) -> impl Iterator<Item = &Artifact> {
        self.artifacts.iter().filter(|a| a.kind == "stage")
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<u64, PipelineError> {
    fs::write(path, bytes).map_err(io_err(path))?;
    Ok(bytes.len() as u64)
}

fn write_json(path: &Path, v: &Value) -> Result<u64, PipelineError> {
    let mut s = serde_json::to_string_pretty(v).expect("json value");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn stage_file(stage: usize, format: MeshFormat) -> String {
    format!("stage_{stage}.{}", format.ext())
}

/// Writes every artifact of `run` into `out` and returns the manifest.
pub fn write_artifacts(run: &Run, out: &Path, formats: &[MeshFormat]) -> Result<Manifest, PipelineError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut artifacts = Vec::new();
    let mut push = |path: &str, kind: &str, stage: Option<usize>, format: Option<MeshFormat>, bytes: u64| {
        artifacts.push(Artifact { path: path.into(), kind: kind.into(), stage, format, bytes })
    };
    for k in mesh_stages(run) {
        let mesh = run.approx.stage_mesh(k)?;
        for &f in formats {
            let name = stage_file(k, f);
            let bytes = write_bytes(&out.join(&name), &f.encode(&mesh, &format!("f{k}")))?;
            push(&name, "stage", Some(k), Some(f), bytes);
        }
    }
    let ledger = &run.approx.ledger;
    let bytes = write_json(&out.join("ledger.json"), &serde_json::to_value(ledger).expect("ledger serializes"))?;
    push("ledger.json", "ledger", None, None, bytes);
    let bytes = write_bytes(&out.join("ledger.txt"), ledger.to_text().as_bytes())?;
    push("ledger.txt", "ledger_text", None, None, bytes);
    let bytes = write_json(&out.join("sites.json"), &run.approx.sites_json())?;
    push("sites.json", "sites", None, None, bytes);
    let bytes = write_json(&out.join("tree.json"), &run.tree.to_json(TREE_SAMPLES))?;
    push("tree.json", "tree", None, None, bytes);
    let bytes = write_bytes(&out.join("tree.obj"), run.tree.to_obj(TREE_SAMPLES).as_bytes())?;
    push("tree.obj", "tree_polylines", None, None, bytes);
    let bytes = write_json(&out.join("cells.json"), &run.system.to_json(run.tree.depth)?)?;
    push("cells.json", "cells", None, None, bytes);
    let bytes = write_bytes(&out.join("config.toml"), run.config.to_toml().as_bytes())?;
    push("config.toml", "config", None, None, bytes);

    let n = run.approx.config.n;
    let budgets = ledger
        .levels
        .iter()
        .map(|l| BudgetRow { level: l.level, sites: l.tentacles, budget: run.approx.schedule.budget(l.level, n), level_sum: l.sum })
        .collect();
    let manifest = Manifest {
        schema_version: crate::config::SCHEMA_VERSION,
        generator: run.config.generator.name().into(),
        mode: run.approx.mode,
        depth: run.approx.depth,
        tree_depth: run.tree.depth,
        seeds: Seeds { tree: run.config.seed },
        schedule: run.approx.schedule.name(),
        budgets,
        ledger_total: ledger.total,
        ledger_pass: ledger.pass,
        artifacts,
        verification: None,
    };
    manifest.save(out)?;
    Ok(manifest)
}

/// One named check of the certification suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub level: Option<usize>,
    pub pass: bool,
    pub summary: String,
    pub detail: Value,
}

impl Check {
    fn new(name: &str, level: Option<usize>, pass: bool, summary: String, detail: Value) -> Check {
        Check { name: name.into(), level, pass, summary, detail }
    }

    fn lemma(r: LemmaReport) -> Check {
        Check::new(&r.lemma, Some(r.level), r.pass, r.summary(), serde_json::to_value(&r).expect("report serializes"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub generator: String,
    pub mode: BuildMode,
    pub depth: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.pass).map(label).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("verification of {} ({:?}, K = {}, seed {})\n", self.generator, self.mode, self.depth, self.seed);
        for c in &self.checks {
            s.push_str(&format!("  [{}] {}\n", if c.pass { "pass" } else { "FAIL" }, c.summary));
        }
        s.push_str(&format!("{} of {} checks passed\n", self.checks.iter().filter(|c| c.pass).count(), self.checks.len()));
        s
    }
}

fn label(c: &Check) -> String {
    match c.level {
        Some(k) => format!("{}@{k}", c.name),
        None => c.name.clone(),
    }
}

/// The full certification suite on a built run.
pub fn verify_run(run: &Run) -> Result<VerifyReport, PipelineError> {
    let approx = &run.approx;
    let system = &run.system;
    let tree = &run.tree;
    let k_max = approx.depth;
    let samples = run.config.verify.samples;
    let mut checks = Vec::new();

    let sep = tree.branch_separation();
    checks.push(Check::new(
        "separation",
        None,
        sep.pass,
        format!("branch separation within {:.0}% of branch length: nonadjacent {}, adjacent {}", 100.0 * sep.search_radius, gap(sep.nonadjacent), gap(sep.adjacent)),
        serde_json::to_value(&sep).expect("separation serializes"),
    ));
    for k in 1..tree.depth {
        checks.push(Check::lemma(verify_branch_proximity(tree, system, k)?));
    }
    for k in 1..=k_max.min(tree.depth) {
        let t = verify_tail_neighborhood(tree, system, k)?;
        let mut c = Check::lemma(t.report.clone());
        c.detail = json!({"eps": t.eps, "eps_table": t.eps_table, "eps_decreasing": t.eps_decreasing, "report": c.detail});
        c.pass &= t.eps_decreasing;
        checks.push(c);
    }

    let ledger: EnergyLedger = crate::verify::energy_ledger_check(approx);
    checks.push(Check::new(
        "ledger",
        None,
        ledger.pass,
        format!("energy ledger: total {:.6e} <= series {:.6e}", ledger.total, ledger.series_bound),
        serde_json::to_value(&ledger).expect("ledger serializes"),
    ));
    let (contain, sibling) = approx.nesting_margins();
    let nest_ok = k_max == 0 || (contain > 0.0 && sibling > 0.0);
    checks.push(Check::new(
        "nesting",
        None,
        nest_ok,
        format!("nested balls: containment margin {contain:.4}, sibling margin {sibling:.4}"),
        json!({"containment": finite(contain), "sibling": finite(sibling)}),
    ));
    let analytic = ExceptionalSet::from_schedule(k_max, approx.config.delta_schedule);
    let estimates: Vec<String> = analytic.table.iter().map(|r| format!("{:.4}", r.estimate)).collect();
    checks.push(Check::new(
        "dimension",
        None,
        analytic.decreasing,
        format!("box-count estimates of the exceptional set [{}]", estimates.join(", ")),
        serde_json::to_value(&analytic).expect("table serializes"),
    ));

    if approx.mode == BuildMode::Mesh {
        let bad_tips: Vec<String> = approx.sites.iter().filter(|s| s.tip != Some(s.anchor)).map(|s| s.index.to_string()).collect();
        checks.push(Check::new(
            "tips",
            None,
            bad_tips.is_empty(),
            format!("tentacle heads on their anchors: {} of {}", approx.sites.len() - bad_tips.len(), approx.sites.len()),
            json!({"mismatched": bad_tips}),
        ));
        let (table, table_ok) = continuity_table(system, k_max)?;
        checks.push(Check::new(
            "continuity_table",
            None,
            table_ok,
            format!("continuity bounds decreasing over levels 1..{k_max}"),
            json!({"bounds": table}),
        ));
        for k in 0..=k_max {
            let mesh = approx.stage_mesh(k)?;
            let topo = mesh.topology();
            let ok = topo.closed() && topo.oriented() && topo.euler() == 2;
            checks.push(Check::new(
                "topology",
                Some(k),
                ok,
                format!("topology level {k}: {} vertices, {} faces, euler {}, closed {}, oriented {}", topo.vertices, topo.faces, topo.euler(), topo.closed(), topo.oriented()),
                json!({"vertices": topo.vertices, "edges": topo.edges, "faces": topo.faces, "euler": topo.euler(), "boundary_edges": topo.boundary_edges, "nonmanifold_edges": topo.nonmanifold_edges, "flipped_edges": topo.flipped_edges}),
            ));
            if run.config.verify.self_intersection {
                let si = self_intersection(&mesh)?;
                checks.push(Check::new(
                    "self_intersection",
                    Some(k),
                    si.pass(),
                    format!("self-intersection level {k}: {} offending pairs over {} candidates", si.pairs.len(), si.bvh.candidate_pairs),
                    serde_json::to_value(&si).expect("report serializes"),
                ));
            }
            checks.push(Check::lemma(tail_disjointness(approx, tree, k)?));
            if k >= 1 {
                checks.push(Check::lemma(verify_image_lemma(approx, system, k, samples)?));
                checks.push(Check::lemma(continuity_modulus(approx, system, k, samples)?));
                checks.push(Check::lemma(tube_proximity(approx, k)));
            }
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { generator: run.config.generator.name().into(), mode: approx.mode, depth: k_max, seed: run.config.seed, checks, pass })
}

fn gap(d: f64) -> String {
    if d.is_finite() {
        format!("{d:.3e}")
    } else {
        "none in reach".into()
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Runs the suite, writes the report next to the artifacts and records the
/// outcome in the manifest when one is present.
pub fn verify_dir(run: &Run, out: &Path) -> Result<VerifyReport, PipelineError> {
    let mut report = verify_run(run)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    if out.join(MANIFEST).exists() {
        let mut manifest = Manifest::load(out)?;
        let c = match_artifacts(run, out, &manifest)?;
        report.pass &= c.pass;
        report.checks.push(c);
        manifest.verification = Some(VerificationSummary { report: VERIFY_REPORT.into(), checks: report.checks.len(), failed: report.failed(), pass: report.pass });
        manifest.save(out)?;
    }
    write_json(&out.join(VERIFY_REPORT), &serde_json::to_value(&report).expect("report serializes"))?;
    write_bytes(&out.join("verify.txt"), report.to_text().as_bytes())?;
    Ok(report)
}

/// Stored stage meshes must equal the rebuilt ones exactly.
fn match_artifacts(run: &Run, out: &Path, manifest: &Manifest) -> Result<Check, PipelineError> {
    let mut mismatched = Vec::new();
    let mut missing = Vec::new();
    for a in manifest.stages() {
        let (Some(k), Some(f)) = (a.stage, a.format) else { continue };
        let path = out.join(&a.path);
        let Ok(bytes) = fs::read(&path) else {
            missing.push(a.path.clone());
            continue;
        };
        if f.decode(&bytes)? != run.approx.stage_mesh(k)? {
            mismatched.push(a.path.clone());
        }
    }
    let pass = mismatched.is_empty() && missing.is_empty();
    Ok(Check::new(
        "artifacts",
        None,
        pass,
        format!("stored stage meshes match the rebuild: {} mismatched, {} missing", mismatched.len(), missing.len()),
        json!({"mismatched": mismatched, "missing": missing}),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportEntry {
    pub source: String,
    pub target: String,
    pub vertices: usize,
    pub triangles: usize,
    pub round_trip: bool,
}

/// Re-emits every stage mesh listed in the manifest of `out` in `format`
/// under `dest`, reading each written file back to confirm it round-trips.
pub fn export(out: &Path, dest: &Path, format: MeshFormat) -> Result<Vec<ExportEntry>, PipelineError> {
    let manifest = Manifest::load(out)?;
    fs::create_dir_all(dest).map_err(io_err(dest))?;
    let mut seen = std::collections::BTreeSet::new();
    let mut entries = Vec::new();
    for a in manifest.stages() {
        let (Some(k), Some(f)) = (a.stage, a.format) else { continue };
        if !seen.insert(k) {
            continue;
        }
        let src = out.join(&a.path);
        let bytes = fs::read(&src).map_err(io_err(&src))?;
        let mesh = f.decode(&bytes)?;
        let target = stage_file(k, format);
        let tpath = dest.join(&target);
        write_bytes(&tpath, &format.encode(&mesh, &format!("f{k}")))?;
        let back = format.decode(&fs::read(&tpath).map_err(io_err(&tpath))?)?;
        entries.push(ExportEntry { source: a.path.clone(), target, vertices: mesh.vertices.len(), triangles: mesh.triangles.len(), round_trip: back == mesh });
    }
    if entries.is_empty() && manifest.mode == BuildMode::Mesh {
        return Err(PipelineError::Missing(format!("{} lists no stage meshes", out.join(MANIFEST).display())));
    }
    Ok(entries)
}

/// Ledger and lemma tables of a build directory as text.
pub fn report_text(out: &Path) -> Result<(String, Option<bool>), PipelineError> {
    let manifest = Manifest::load(out)?;
    let mut s = format!(
        "{} build, mode {:?}, K = {}, seed {}, schedule {}\n",
        manifest.generator, manifest.mode, manifest.depth, manifest.seeds.tree, manifest.schedule
    );
    let ledger_path = out.join("ledger.txt");
    s.push_str(&fs::read_to_string(&ledger_path).map_err(io_err(&ledger_path))?);
    let vpath = out.join(VERIFY_REPORT);
    let mut pass = None;
    if vpath.exists() {
        let text = fs::read(&vpath).map_err(io_err(&vpath))?;
        let report: VerifyReport = serde_json::from_slice(&text).map_err(|source| PipelineError::Json { path: vpath.display().to_string(), source })?;
        s.push_str(&report.to_text());
        pass = Some(report.pass);
    } else {
        s.push_str("not verified yet; run `wildsphere verify`\n");
    }
    Ok((s, pass))
}

/// Config saved by a previous build in `out`.
pub fn saved_config(out: &Path) -> Option<PathBuf> {
    let p = out.join("config.toml");
    p.exists().then_some(p)
}

