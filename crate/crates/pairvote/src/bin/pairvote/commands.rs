//! Subcommand implementations for the batch CLI.
//!
//! Dataset layout produced by `gen` and consumed by everything else:
//! `<category>_<view>.ply` point clouds with embedded clutter flags,
//! `<category>_<view>.pose.txt` ground-truth sidecars,
//! `<category>.model.obj` canonical model points for distance metrics,
//! and `manifest.txt` with content checksums and the full configuration.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pairvote::cloud::{estimate_normals, PointCloud};
use pairvote::config::RunConfig;
use pairvote::error::Error;
use pairvote::geom::{Mat3, OrientedBox, Pose9D, Rotation, UnitVec3, Vec3};
use pairvote::mesh::{CanonicalMesh, TriangleMesh};
use pairvote::metrics::{
    accuracy_curve, add_metrics, box_iou, pose_error, EvalReport, PoseError, SymmetryTable,
    DEFAULT_AUC_MAX, DEFAULT_IOU_SAMPLES,
};
use pairvote::pipeline::{
    estimate_from_predictions, estimate_pose, estimate_with_ensemble, PipelineConfig, PoseEstimate,
};
use pairvote::ply::{read_cloud, write_cloud};
use pairvote::predictor::{
    load_checkpoint, save_checkpoint, train_resumable, MlpDims, MlpPredictor, OraclePredictor,
    OraclePredictorConfig, Predictor, TrainState,
};
use pairvote::scene::{corrupt, random_pose, sample_view, Camera, NoiseConfig, SceneSample};
use pairvote::tuples::{
    attach_ground_truth, build_tuples, compute_descriptors, feature_dim, sample_tuples,
    TupleSample,
};
use pairvote::vote::{build_records, filter_noisy_pairs, vote_center, CenterGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Neighborhood size used when featurizing training clouds.
const TRAIN_NORMALS_K: usize = 16;

/// Pose draws attempted per view before giving up on an object that never
/// rasterizes (pathologically thin meshes seen edge-on).
const VIEW_RETRY_CAP: usize = 64;

/// Minimum cloud size for a benchmark view; smaller renders are redrawn.
const BENCH_MIN_POINTS: usize = 200;

/// A command failure carrying the process exit code.
#[derive(Debug)]
pub struct CmdError {
    pub code: u8,
    pub message: String,
}

impl CmdError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CmdError {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for CmdError {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::NonFinite(_) => 3,
            Error::DimensionMismatch { .. } => 4,
            Error::IdMismatch(_) => 5,
            _ => 1,
        };
        CmdError::new(code, err.to_string())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte slice; used for manifest checksums and seed salts.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Stage- and scene-specific seed derived from a base seed, so reordering
/// or subsetting scenes never changes any individual scene's randomness.
fn derive_seed(base: u64, salt: &str) -> u64 {
    base ^ fnv1a64(salt.as_bytes())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CmdError> {
    std::fs::write(path, contents)
        .map_err(|e| CmdError::new(1, format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CmdError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CmdError::new(1, format!("cannot create {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Pose sidecars
// ---------------------------------------------------------------------------

/// Serializes a ground-truth pose with its category. Floats use shortest
/// round-trip formatting, so read-back is bit exact.
fn pose_sidecar_text(category: &str, pose: &Pose9D) -> String {
    let m = pose.rotation.matrix();
    let t = pose.translation;
    let s = pose.scale;
    format!(
        "category {category}\n\
         r {} {} {}\n\
         r {} {} {}\n\
         r {} {} {}\n\
         t {} {} {}\n\
         s {} {} {}\n",
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
        t.x,
        t.y,
        t.z,
        s.x,
        s.y,
        s.z
    )
}

fn read_pose_sidecar(path: &Path) -> Result<(String, Pose9D), CmdError> {
    let bad = |reason: &str| {
        CmdError::new(
            2,
            format!("ground-truth sidecar {}: {reason}", path.display()),
        )
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CmdError::new(2, format!("cannot read {}: {e}", path.display())))?;
    let mut category = None;
    let mut rows: Vec<[f64; 3]> = Vec::new();
    let mut translation = None;
    let mut scale = None;
    for line in text.lines() {
        let mut tok = line.split_whitespace();
        let tag = match tok.next() {
            Some(t) => t,
            None => continue,
        };
        let mut triple = || -> Result<[f64; 3], CmdError> {
            let mut out = [0.0; 3];
            for v in &mut out {
                *v = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad("malformed number triple"))?;
            }
            Ok(out)
        };
        match tag {
            "category" => category = tok.next().map(str::to_string),
            "r" => rows.push(triple()?),
            "t" => {
                let [x, y, z] = triple()?;
                translation = Some(Vec3::new(x, y, z));
            }
            "s" => {
                let [x, y, z] = triple()?;
                scale = Some(Vec3::new(x, y, z));
            }
            _ => return Err(bad("unknown line tag")),
        }
    }
    if rows.len() != 3 {
        return Err(bad("expected exactly three rotation rows"));
    }
    let m = Mat3::from_rows(&[rows[0].into(), rows[1].into(), rows[2].into()]);
    let rotation = Rotation::from_matrix(m).map_err(|e| bad(&e.to_string()))?;
    let translation = translation.ok_or_else(|| bad("missing translation line"))?;
    let scale = scale.ok_or_else(|| bad("missing scale line"))?;
    let category = category.ok_or_else(|| bad("missing category line"))?;
    let pose = Pose9D::new(rotation, translation, scale).map_err(|e| bad(&e.to_string()))?;
    Ok((category, pose))
}

// ---------------------------------------------------------------------------
// Dataset scanning
// ---------------------------------------------------------------------------

struct SceneEntry {
    id: String,
    ply: PathBuf,
    sidecar: PathBuf,
}

/// Scene clouds in a dataset directory, sorted by id for determinism.
fn list_scenes(dir: &Path) -> Result<Vec<SceneEntry>, CmdError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CmdError::new(2, format!("cannot read {}: {e}", dir.display())))?;
    let mut scenes = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CmdError::new(2, e.to_string()))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("ply") {
            continue;
        }
        let id = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s.to_string(),
            None => continue,
        };
        let sidecar = dir.join(format!("{id}.pose.txt"));
        scenes.push(SceneEntry { id, ply: path, sidecar });
    }
    scenes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(scenes)
}

/// Rebuilds the in-memory view a loaded cloud came from: canonical
/// coordinates via the ground-truth pose, clutter flags from the file.
/// Clutter points get off-object canonical coordinates, which is fine —
/// everything reading them either drops or corrupts flagged points.
fn rebuild_sample(cloud: &PointCloud, noise: Option<Vec<bool>>, pose: &Pose9D) -> SceneSample {
    let canonical = cloud.positions.iter().map(|p| pose.to_canonical(p)).collect();
    let noise_mask = noise.unwrap_or_else(|| vec![false; cloud.len()]);
    SceneSample {
        cloud: cloud.clone(),
        canonical,
        noise_mask,
        pose: *pose,
    }
}

fn mesh_stem(path: &Path) -> Result<String, CmdError> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| CmdError::new(2, format!("mesh path {} has no stem", path.display())))
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

pub fn cmd_gen(
    cfg: RunConfig,
    meshes: Vec<PathBuf>,
    views: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CmdError> {
    let started = Instant::now();
    let mut cfg = cfg;
    if !meshes.is_empty() {
        cfg.meshes = meshes;
    }
    if let Some(v) = views {
        cfg.views = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output = o;
    }
    cfg.validate()?;
    if cfg.meshes.is_empty() {
        return Err(CmdError::new(
            1,
            "no meshes given; pass --mesh or set [run] meshes in the config",
        ));
    }

    // Load everything up front so a bad path fails before any output exists.
    let mut loaded: Vec<(String, CanonicalMesh)> = Vec::new();
    for path in &cfg.meshes {
        let stem = mesh_stem(path)?;
        if loaded.iter().any(|(s, _)| *s == stem) {
            return Err(CmdError::new(
                1,
                format!("two meshes share the file stem '{stem}'; ids would collide"),
            ));
        }
        let mesh = TriangleMesh::load(path)
            .and_then(|m| m.canonicalized())
            .map_err(|e| CmdError::new(2, format!("cannot load mesh {}: {e}", path.display())))?;
        loaded.push((stem, mesh));
    }

    create_dir(&cfg.output)?;
    let camera = Camera::standard(cfg.camera_width, cfg.camera_height);
    let mut files: Vec<PathBuf> = Vec::new();
    let mut scene_count = 0usize;
    for (stem, mesh) in &loaded {
        // Canonical model points for distance metrics at evaluation time.
        let model_path = cfg.output.join(format!("{stem}.model.obj"));
        TriangleMesh::new(mesh.vertices.clone(), mesh.triangles.clone())?.save_obj(&model_path)?;
        files.push(model_path);

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("pose:{stem}")));
        for v in 0..cfg.views {
            let id = format!("{stem}_{v:03}");
            let mut draws = 0;
            let clean = loop {
                draws += 1;
                let pose = random_pose(&mut rng, mesh.half_extents, &camera)?;
                match sample_view(mesh, &pose, &camera) {
                    Ok(view) => break view,
                    Err(Error::EmptyView) if draws < VIEW_RETRY_CAP => continue,
                    Err(e) => return Err(e.into()),
                }
            };
            let noise = NoiseConfig {
                seed: derive_seed(cfg.noise.seed, &format!("noise:{id}")),
                ..cfg.noise
            };
            let view = corrupt(&clean, &noise, &camera);
            let ply = cfg.output.join(format!("{id}.ply"));
            write_cloud(&ply, &view.cloud, Some(&view.noise_mask))?;
            let sidecar = cfg.output.join(format!("{id}.pose.txt"));
            write_file(&sidecar, &pose_sidecar_text(stem, &view.pose))?;
            files.push(ply);
            files.push(sidecar);
            scene_count += 1;
        }
    }

    let manifest = manifest_text(&cfg, scene_count, loaded.len(), started, &files)?;
    write_file(&cfg.output.join("manifest.txt"), &manifest)?;
    println!(
        "generated {scene_count} scenes from {} meshes into {}",
        loaded.len(),
        cfg.output.display()
    );
    Ok(())
}

fn manifest_text(
    cfg: &RunConfig,
    scenes: usize,
    meshes: usize,
    started: Instant,
    files: &[PathBuf],
) -> Result<String, CmdError> {
    let mut sums: Vec<(String, u64)> = Vec::with_capacity(files.len());
    for path in files {
        let bytes = std::fs::read(path)
            .map_err(|e| CmdError::new(1, format!("cannot checksum {}: {e}", path.display())))?;
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        sums.push((name, fnv1a64(&bytes)));
    }
    sums.sort();
    let mut out = String::new();
    let _ = writeln!(out, "pairvote dataset manifest");
    let _ = writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "seed = {}", cfg.seed);
    let _ = writeln!(out, "scenes = {scenes}");
    let _ = writeln!(out, "meshes = {meshes}");
    let _ = writeln!(out, "elapsed_ms = {}", started.elapsed().as_millis());
    let _ = writeln!(out, "\n[checksums]");
    for (name, sum) in &sums {
        let _ = writeln!(out, "{name} = {sum:016x}");
    }
    let _ = writeln!(out, "\n[config]");
    for line in cfg.dump().lines() {
        let _ = writeln!(out, "  {line}");
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(
    cfg: RunConfig,
    dataset: &Path,
    resume: Option<PathBuf>,
    epochs: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), CmdError> {
    let scenes = list_scenes(dataset)?;
    if scenes.is_empty() {
        return Err(CmdError::new(
            1,
            format!("no scenes (*.ply) found in {}", dataset.display()),
        ));
    }
    let descriptor = cfg.pipeline.descriptor;
    let tuple_size = cfg.pipeline.tuple_size;

    // Featurize scenes in parallel; each tuple carries its own ground
    // truth, and per-scene seeds keep the result independent of order.
    let per_scene: Vec<Vec<TupleSample>> = scenes
        .par_iter()
        .map(|scene| -> Result<Vec<TupleSample>, CmdError> {
            let file = read_cloud(&scene.ply).map_err(|e| CmdError::new(2, e.to_string()))?;
            let (_, pose) = read_pose_sidecar(&scene.sidecar)?;
            if file.cloud.len() < tuple_size.max(TRAIN_NORMALS_K) {
                return Ok(Vec::new());
            }
            let normals = estimate_normals(&file.cloud, TRAIN_NORMALS_K)?;
            let cloud = PointCloud::with_normals(file.cloud.positions.clone(), normals.normals);
            let descriptors = compute_descriptors(&cloud, &descriptor)?;
            let mut tuples = build_tuples(
                &cloud,
                Some(&descriptors),
                cfg.train_tuples,
                tuple_size,
                derive_seed(cfg.seed, &format!("train:{}", scene.id)),
            )?;
            let sample = rebuild_sample(&cloud, file.noise, &pose);
            attach_ground_truth(&mut tuples, &sample);
            // Clutter points carry off-object targets; keep only tuples
            // whose voting points are real surface.
            tuples.retain(|t| {
                !sample.noise_mask[t.indices[0] as usize]
                    && !sample.noise_mask[t.indices[1] as usize]
            });
            Ok(tuples)
        })
        .collect::<Result<_, _>>()?;
    let data: Vec<TupleSample> = per_scene.into_iter().flatten().collect();
    if data.is_empty() {
        return Err(CmdError::new(
            1,
            "no training tuples survived (clouds too small or fully cluttered)",
        ));
    }

    let input_dim = feature_dim(tuple_size, descriptor.dim());
    let (mut model, mut state) = match &resume {
        Some(path) => {
            let (model, state) = load_checkpoint(path).map_err(|e| {
                CmdError::new(2, format!("cannot load checkpoint {}: {e}", path.display()))
            })?;
            if model.dims().input_dim != input_dim {
                return Err(CmdError::new(
                    4,
                    format!(
                        "checkpoint expects {}-dim features but tuple size {} with {} descriptor bins produces {}",
                        model.dims().input_dim,
                        tuple_size,
                        descriptor.bins,
                        input_dim
                    ),
                ));
            }
            let state = state.unwrap_or_else(|| TrainState::fresh(model.params().len()));
            (model, state)
        }
        None => {
            let dims = MlpDims {
                input_dim,
                width: cfg.predictor.hidden_width,
                layers: cfg.predictor.hidden_layers,
                bins: cfg.predictor.bins,
            };
            let model = MlpPredictor::new(dims, cfg.predictor.seed)?;
            let state = TrainState::fresh(model.params().len());
            (model, state)
        }
    };

    let out_dir = out.unwrap_or_else(|| cfg.output.clone());
    create_dir(&out_dir)?;
    let ckpt_path = out_dir.join("checkpoint.bin");
    let loss_path = out_dir.join("loss.csv");
    let mut loss_log = if resume.is_some() && loss_path.exists() {
        std::fs::read_to_string(&loss_path)
            .map_err(|e| CmdError::new(2, format!("cannot read {}: {e}", loss_path.display())))?
    } else {
        String::from("epoch,total,coord,scale\n")
    };

    let run_epochs = epochs.unwrap_or(cfg.predictor.epochs);
    println!(
        "training on {} tuples from {} scenes for {run_epochs} epochs (resuming after {})",
        data.len(),
        scenes.len(),
        state.epochs_done
    );
    for _ in 0..run_epochs {
        // One epoch per call so every epoch is logged and checkpointed
        // even if a later one aborts.
        let report = train_resumable(&mut model, &data, &cfg.predictor, &mut state, 1)?;
        let epoch = state.epochs_done;
        let (total, coord, scale) = (
            report.epoch_losses[0],
            report.epoch_coord_losses[0],
            report.epoch_scale_losses[0],
        );
        println!("epoch {epoch:>4}  loss {total:.6}  coord {coord:.6}  scale {scale:.6}");
        let _ = writeln!(loss_log, "{epoch},{total},{coord},{scale}");
        write_file(&loss_path, &loss_log)?;
        save_checkpoint(&ckpt_path, &model, Some(&state))?;
    }
    println!("checkpoint written to {}", ckpt_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

enum Engine {
    Oracle,
    Single(Predictor),
    Ensemble(Vec<Predictor>),
}

pub const PREDICTIONS_HEADER: &str =
    "id,status,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz,sx,sy,sz,ambiguous,coord_loss,model";

/// Columns after `id,status`, all left empty on failure rows.
const PREDICTION_VALUE_COLUMNS: usize = 18;

pub fn cmd_infer(
    cfg: RunConfig,
    dataset: &Path,
    predictor: &str,
    ensemble: &[PathBuf],
    out: Option<PathBuf>,
) -> Result<(), CmdError> {
    let scenes = list_scenes(dataset)?;
    if scenes.is_empty() {
        return Err(CmdError::new(
            1,
            format!("no scenes (*.ply) found in {}", dataset.display()),
        ));
    }
    let load_model = |path: &Path| -> Result<Predictor, CmdError> {
        let (model, _) = load_checkpoint(path).map_err(|e| {
            CmdError::new(2, format!("cannot load checkpoint {}: {e}", path.display()))
        })?;
        Ok(Predictor::Mlp(model))
    };
    let engine = if !ensemble.is_empty() {
        Engine::Ensemble(
            ensemble
                .iter()
                .map(|p| load_model(p))
                .collect::<Result<_, _>>()?,
        )
    } else if predictor == "oracle" {
        Engine::Oracle
    } else {
        Engine::Single(load_model(Path::new(predictor))?)
    };

    // Scenes run in parallel; rows land in input (sorted-id) order.
    let rows: Vec<(String, bool)> = scenes
        .par_iter()
        .map(|scene| infer_row(&cfg, scene, &engine))
        .collect::<Result<_, _>>()?;

    let mut csv = String::from(PREDICTIONS_HEADER);
    csv.push('\n');
    let mut ok = 0usize;
    for (row, succeeded) in &rows {
        ok += usize::from(*succeeded);
        csv.push_str(row);
    }
    let out_path = out.unwrap_or_else(|| dataset.join("predictions.csv"));
    write_file(&out_path, &csv)?;
    println!(
        "{ok} estimated, {} failed -> {}",
        rows.len() - ok,
        out_path.display()
    );
    Ok(())
}

fn infer_row(cfg: &RunConfig, scene: &SceneEntry, engine: &Engine) -> Result<(String, bool), CmdError> {
    let file = read_cloud(&scene.ply).map_err(|e| CmdError::new(2, e.to_string()))?;
    let pipe = PipelineConfig {
        seed: derive_seed(cfg.seed, &format!("pipeline:{}", scene.id)),
        ..cfg.pipeline
    };
    let outcome = match engine {
        Engine::Oracle => {
            let (_, pose) = read_pose_sidecar(&scene.sidecar)?;
            let sample = rebuild_sample(&file.cloud, file.noise.clone(), &pose);
            let oracle = OraclePredictor::new(OraclePredictorConfig {
                seed: derive_seed(cfg.oracle.seed, &format!("oracle:{}", scene.id)),
                ..cfg.oracle
            })?;
            estimate_pose(&file.cloud, &Predictor::Oracle(oracle), Some(&sample), &pipe)
                .map(|est| (est, 0))
        }
        Engine::Single(model) => {
            estimate_pose(&file.cloud, model, None, &pipe).map(|est| (est, 0))
        }
        Engine::Ensemble(models) => estimate_with_ensemble(&file.cloud, models, None, &pipe),
    };
    match outcome {
        Ok((est, model)) => {
            let m = est.pose.rotation.matrix();
            let t = est.pose.translation;
            let s = est.pose.scale;
            let row = format!(
                "{},ok,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                scene.id,
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 0)],
                m[(2, 1)],
                m[(2, 2)],
                t.x,
                t.y,
                t.z,
                s.x,
                s.y,
                s.z,
                u8::from(est.azimuth_ambiguous),
                est.coord_loss,
                model
            );
            Ok((row, true))
        }
        // A feature-size mismatch would fail every scene identically, so
        // abort instead of writing a useless all-failure table.
        Err(Error::DimensionMismatch { expected, got }) => Err(CmdError::new(
            4,
            format!(
                "scene {}: model expects {expected}-dim features but the configuration produces {got}",
                scene.id
            ),
        )),
        Err(err) => {
            let reason = match &err {
                Error::EmptyView => "empty view".to_string(),
                Error::CloudTooSmall { need, got } => {
                    format!("too few points ({got} < {need})")
                }
                other => other.to_string().replace(',', ";"),
            };
            let row = format!(
                "{},failed: {reason}{}\n",
                scene.id,
                ",".repeat(PREDICTION_VALUE_COLUMNS)
            );
            Ok((row, false))
        }
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct PredRow {
    pose: Option<Pose9D>,
    status: String,
    model: String,
}

fn parse_predictions(path: &Path) -> Result<Vec<(String, PredRow)>, CmdError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CmdError::new(2, format!("cannot read {}: {e}", path.display())))?;
    let bad = |line: usize, reason: String| {
        CmdError::new(1, format!("{}:{line}: {reason}", path.display()))
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == PREDICTIONS_HEADER => {}
        _ => {
            return Err(CmdError::new(
                1,
                format!("{} is not a predictions CSV (bad header)", path.display()),
            ))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != PREDICTION_VALUE_COLUMNS + 2 {
            return Err(bad(i + 1, format!("expected 20 columns, got {}", cols.len())));
        }
        let id = cols[0].to_string();
        let status = cols[1].to_string();
        let pose = if status == "ok" {
            let mut nums = [0.0f64; 15];
            for (k, v) in nums.iter_mut().enumerate() {
                *v = cols[2 + k]
                    .parse()
                    .map_err(|e| bad(i + 1, format!("bad number {:?}: {e}", cols[2 + k])))?;
            }
            let m = Mat3::new(
                nums[0], nums[1], nums[2], nums[3], nums[4], nums[5], nums[6], nums[7], nums[8],
            );
            let rotation = Rotation::from_matrix(m).map_err(|e| bad(i + 1, e.to_string()))?;
            let translation = Vec3::new(nums[9], nums[10], nums[11]);
            let scale = Vec3::new(nums[12], nums[13], nums[14]);
            Some(
                Pose9D::new(rotation, translation, scale)
                    .map_err(|e| bad(i + 1, e.to_string()))?,
            )
        } else {
            None
        };
        rows.push((
            id,
            PredRow {
                pose,
                status,
                model: cols[19].to_string(),
            },
        ));
    }
    Ok(rows)
}

fn axis_from_name(name: &str) -> Option<UnitVec3> {
    let v = match name {
        "x" => Vec3::new(1.0, 0.0, 0.0),
        "y" => Vec3::new(0.0, 1.0, 0.0),
        "z" => Vec3::new(0.0, 0.0, 1.0),
        _ => return None,
    };
    Some(UnitVec3::new_normalize(v))
}

pub fn cmd_eval(
    cfg: RunConfig,
    predictions_path: &Path,
    dataset: &Path,
    symmetric: &[String],
    out: Option<PathBuf>,
) -> Result<(), CmdError> {
    let predictions = parse_predictions(predictions_path)?;

    // Ground truth from sidecars, sorted by id.
    let mut truth: Vec<(String, String, Pose9D)> = Vec::new();
    let entries = std::fs::read_dir(dataset)
        .map_err(|e| CmdError::new(2, format!("cannot read {}: {e}", dataset.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CmdError::new(2, e.to_string()))?;
        let path = entry.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if let Some(id) = name.strip_suffix(".pose.txt") {
            let (category, pose) = read_pose_sidecar(&path)?;
            truth.push((id.to_string(), category, pose));
        }
    }
    truth.sort_by(|a, b| a.0.cmp(&b.0));
    if truth.is_empty() {
        return Err(CmdError::new(
            2,
            format!("no ground-truth sidecars (*.pose.txt) in {}", dataset.display()),
        ));
    }

    // Both id sets must match exactly; anything else means the predictions
    // belong to a different dataset.
    let pred_ids: BTreeSet<&str> = predictions.iter().map(|(id, _)| id.as_str()).collect();
    let truth_ids: BTreeSet<&str> = truth.iter().map(|(id, _, _)| id.as_str()).collect();
    if pred_ids.len() != predictions.len() {
        return Err(CmdError::new(5, "predictions contain duplicate ids".to_string()));
    }
    let unpredicted: Vec<&str> = truth_ids.difference(&pred_ids).copied().collect();
    let unknown: Vec<&str> = pred_ids.difference(&truth_ids).copied().collect();
    if !unpredicted.is_empty() || !unknown.is_empty() {
        let mut message = String::from("prediction/ground-truth id mismatch\n");
        if !unpredicted.is_empty() {
            let _ = writeln!(message, "  ground truth without predictions: {}", unpredicted.join(" "));
        }
        if !unknown.is_empty() {
            let _ = writeln!(message, "  predictions without ground truth: {}", unknown.join(" "));
        }
        return Err(CmdError::new(5, message.trim_end().to_string()));
    }
    let pred_map: HashMap<&str, &PredRow> = predictions
        .iter()
        .map(|(id, row)| (id.as_str(), row))
        .collect();

    // Symmetry: built-in table, then config overrides, then flags.
    let mut table = SymmetryTable::default();
    for (category, axis) in &cfg.symmetry {
        table.set(category, axis_from_name(axis));
    }
    for category in symmetric {
        table.set(category, axis_from_name("y"));
    }

    // Canonical model points per category for the distance metrics.
    let mut model_points: HashMap<String, Vec<Vec3>> = HashMap::new();
    for (_, category, _) in &truth {
        if !model_points.contains_key(category) {
            let path = dataset.join(format!("{category}.model.obj"));
            let mesh = TriangleMesh::load_obj(&path).map_err(|e| {
                CmdError::new(2, format!("cannot load model points {}: {e}", path.display()))
            })?;
            model_points.insert(category.clone(), mesh.vertices);
        }
    }

    struct SampleEval {
        id: String,
        status: String,
        err: PoseError,
        iou: f64,
        add: f64,
        adds: f64,
        model: String,
    }
    let samples: Vec<SampleEval> = truth
        .par_iter()
        .map(|(id, category, gt_pose)| -> Result<SampleEval, CmdError> {
            let row = pred_map[id.as_str()];
            match &row.pose {
                Some(pose) => {
                    let err = pose_error(pose, gt_pose, table.lookup(category));
                    let iou = box_iou(
                        &OrientedBox::new(*pose),
                        &OrientedBox::new(*gt_pose),
                        DEFAULT_IOU_SAMPLES,
                    );
                    let points = &model_points[category];
                    let add = add_metrics(pose, gt_pose, points, false)?;
                    let adds = add_metrics(pose, gt_pose, points, true)?;
                    Ok(SampleEval {
                        id: id.clone(),
                        status: row.status.clone(),
                        err,
                        iou,
                        add,
                        adds,
                        model: row.model.clone(),
                    })
                }
                // A failed estimate counts against every threshold.
                None => Ok(SampleEval {
                    id: id.clone(),
                    status: row.status.clone(),
                    err: PoseError {
                        rot_deg: f64::INFINITY,
                        trans_cm: f64::INFINITY,
                        symmetry_applied: false,
                    },
                    iou: 0.0,
                    add: f64::INFINITY,
                    adds: f64::INFINITY,
                    model: row.model.clone(),
                }),
            }
        })
        .collect::<Result<_, _>>()?;

    let errors: Vec<PoseError> = samples.iter().map(|s| s.err).collect();
    let ious: Vec<f64> = samples.iter().map(|s| s.iou).collect();
    let add: Vec<f64> = samples.iter().map(|s| s.add).collect();
    let adds: Vec<f64> = samples.iter().map(|s| s.adds).collect();
    let report = EvalReport::compute(&errors, &ious, &add, &adds)?;

    let out_dir = out.unwrap_or_else(|| dataset.to_path_buf());
    create_dir(&out_dir)?;
    write_file(&out_dir.join("report.csv"), &report.to_csv())?;
    write_file(&out_dir.join("report.txt"), &report.to_string())?;

    let mut per_scene = String::from("id,status,rot_deg,trans_cm,iou,add_m,adds_m,model\n");
    for s in &samples {
        let _ = writeln!(
            per_scene,
            "{},{},{},{},{},{},{},{}",
            s.id, s.status, s.err.rot_deg, s.err.trans_cm, s.iou, s.add, s.adds, s.model
        );
    }
    write_file(&out_dir.join("per_scene.csv"), &per_scene)?;

    for (name, values) in [("curve_add.csv", &add), ("curve_adds.csv", &adds)] {
        let mut curve = String::from("threshold_m,accuracy\n");
        for (tau, acc) in accuracy_curve(values, DEFAULT_AUC_MAX, 100) {
            let _ = writeln!(curve, "{tau},{acc}");
        }
        write_file(&out_dir.join(name), &curve)?;
    }

    print!("{report}");
    println!("reports written to {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct RunStats {
    rot_on: f64,
    rot_off: f64,
    trans_on: f64,
    trans_off: f64,
    discarded: usize,
    discarded_clutter: usize,
}

pub fn cmd_bench(
    cfg: RunConfig,
    sigmas: &str,
    clutters: &str,
    runs: usize,
    out: Option<PathBuf>,
) -> Result<(), CmdError> {
    let sigmas = parse_list(sigmas)?;
    let clutters = parse_list(clutters)?;
    if sigmas.is_empty() || clutters.is_empty() || runs == 0 {
        return Err(CmdError::new(1, "bench needs sigmas, clutters, and runs >= 1"));
    }
    // Orientation medians only mean something for unambiguous shapes, so
    // the built-in set is deliberately asymmetric.
    let meshes: Vec<CanonicalMesh> = if cfg.meshes.is_empty() {
        vec![
            TriangleMesh::box_mesh(Vec3::new(0.06, 0.045, 0.075)).canonicalized()?,
            TriangleMesh::l_shape(0.1).canonicalized()?,
        ]
    } else {
        cfg.meshes
            .iter()
            .map(|path| {
                TriangleMesh::load(path)
                    .and_then(|m| m.canonicalized())
                    .map_err(|e| {
                        CmdError::new(2, format!("cannot load mesh {}: {e}", path.display()))
                    })
            })
            .collect::<Result<_, _>>()?
    };
    let camera = Camera::standard(cfg.camera_width, cfg.camera_height);

    let mut csv = String::from(
        "sigma,clutter,runs,median_rot_on_deg,median_rot_off_deg,\
         median_trans_on_cm,median_trans_off_cm,discard_clutter_fraction\n",
    );
    println!(
        "{:>7} {:>8}  {:>11} {:>12}  {:>12} {:>13}  {:>15}",
        "sigma", "clutter", "rot_on(deg)", "rot_off(deg)", "trans_on(cm)", "trans_off(cm)", "clutter_discard"
    );
    for &sigma in &sigmas {
        for &clutter in &clutters {
            let cell: Vec<RunStats> = (0..runs)
                .into_par_iter()
                .map(|r| bench_run(&cfg, &meshes, &camera, sigma, clutter, r))
                .collect::<Result<_, _>>()?;
            let rot_on = median(cell.iter().map(|s| s.rot_on));
            let rot_off = median(cell.iter().map(|s| s.rot_off));
            let trans_on = median(cell.iter().map(|s| s.trans_on));
            let trans_off = median(cell.iter().map(|s| s.trans_off));
            let discarded: usize = cell.iter().map(|s| s.discarded).sum();
            let from_clutter: usize = cell.iter().map(|s| s.discarded_clutter).sum();
            let fraction = if discarded == 0 {
                0.0
            } else {
                from_clutter as f64 / discarded as f64
            };
            let _ = writeln!(
                csv,
                "{sigma},{clutter},{runs},{rot_on},{rot_off},{trans_on},{trans_off},{fraction}"
            );
            println!(
                "{sigma:>7} {clutter:>8}  {rot_on:>11.3} {rot_off:>12.3}  {trans_on:>12.3} {trans_off:>13.3}  {fraction:>15.3}"
            );
        }
    }
    let out_path = out.unwrap_or_else(|| PathBuf::from("bench.csv"));
    write_file(&out_path, &csv)?;
    println!("grid written to {}", out_path.display());
    Ok(())
}

fn bench_run(
    cfg: &RunConfig,
    meshes: &[CanonicalMesh],
    camera: &Camera,
    sigma: f64,
    clutter: f64,
    run: usize,
) -> Result<RunStats, CmdError> {
    let mesh = &meshes[run % meshes.len()];
    let salt = format!("bench:{sigma}:{clutter}:{run}");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &salt));
    let mut draws = 0;
    let clean = loop {
        draws += 1;
        let pose = random_pose(&mut rng, mesh.half_extents, camera)?;
        match sample_view(mesh, &pose, camera) {
            Ok(view) if view.cloud.len() >= BENCH_MIN_POINTS => break view,
            Ok(_) | Err(Error::EmptyView) if draws < VIEW_RETRY_CAP => continue,
            Ok(view) => break view,
            Err(e) => return Err(e.into()),
        }
    };
    let noise = NoiseConfig {
        clutter_fraction: clutter,
        seed: derive_seed(cfg.noise.seed, &salt),
        ..cfg.noise
    };
    let view = corrupt(&clean, &noise, camera);

    let mut tuples = sample_tuples(
        &view.cloud,
        cfg.pipeline.tuple_count,
        cfg.pipeline.tuple_size,
        derive_seed(cfg.seed, &format!("{salt}:tuples")),
    )?;
    attach_ground_truth(&mut tuples, &view);
    let oracle = OraclePredictor::new(OraclePredictorConfig {
        coord_noise_sigma: sigma,
        seed: derive_seed(cfg.oracle.seed, &salt),
        ..cfg.oracle
    })?;
    let predictions = oracle.predict(&tuples, Some(&view.noise_mask))?;

    let on_cfg = PipelineConfig {
        filter_enabled: true,
        ..cfg.pipeline
    };
    let off_cfg = PipelineConfig {
        filter_enabled: false,
        ..on_cfg
    };
    let on = estimate_from_predictions(&view.cloud, &tuples, &predictions, &on_cfg)?;
    let off = estimate_from_predictions(&view.cloud, &tuples, &predictions, &off_cfg)?;

    // Re-run just the center vote and filter to attribute each discarded
    // pair to clutter or to surface noise.
    let mut batch = build_records(&view.cloud, &tuples, &predictions, on_cfg.decode)?;
    let (lo, hi) = view.cloud.aabb()?;
    let mut grid = CenterGrid::for_records(&lo, &hi, &batch.records, on_cfg.voxel)?;
    let center = vote_center(&batch.records, &mut grid, &on_cfg.filter)?;
    filter_noisy_pairs(&mut batch.records, &center, &on_cfg.filter)?;
    let mut discarded = 0;
    let mut discarded_clutter = 0;
    for record in &batch.records {
        if !record.kept {
            discarded += 1;
            if view.noise_mask[record.i1 as usize] || view.noise_mask[record.i2 as usize] {
                discarded_clutter += 1;
            }
        }
    }

    let rot = |est: &PoseEstimate| est.pose.rotation.angle_to(&view.pose.rotation).to_degrees();
    let trans =
        |est: &PoseEstimate| (est.pose.translation - view.pose.translation).norm() * 100.0;
    Ok(RunStats {
        rot_on: rot(&on),
        rot_off: rot(&off),
        trans_on: trans(&on),
        trans_off: trans(&off),
        discarded,
        discarded_clutter,
    })
}

fn parse_list(text: &str) -> Result<Vec<f64>, CmdError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| CmdError::new(1, format!("bad number {s:?}: {e}")))
        })
        .collect()
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}
