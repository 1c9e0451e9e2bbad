use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use idhand::fit::{fit_two_stage, initial_params};
use idhand::hand_model::{load_model, HandModel, HandParams, KP_WRIST, NUM_SHAPE};
use idhand::metrics::{hand_width_length, mpjpe, mpvpe, shape_errors, EvalReport, RecordMetrics};
use idhand::personalization::{calibrate_shape, BundleEntry, CalibrationMode, SubjectBundle};
use idhand::records::{
    peek_kind, CalibrationFile, EvalReportFile, FitRecordResult, FitResultsFile, FitStatus, GroundTruthFile,
    MeshFile, PredictionRecord, PredictionRecordFile, RecordFile, SubjectCalibration,
};
use idhand::synth::{synth_dataset, SynthConfig};

use crate::{CalibrateArgs, EvalArgs, FitArgs, ModelInfoArgs, Outcome, ShapeSource, SynthArgs};

fn read_model(path: &Path) -> Result<HandModel> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read model file {}", path.display()))?;
    load_model(&bytes).with_context(|| format!("invalid model file {}", path.display()))
}

fn read_file<T: RecordFile>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    T::from_json(&bytes).with_context(|| format!("invalid {} file {}", T::KIND, path.display()))
}

fn write_file<T: RecordFile>(file: &T, path: &Path) -> Result<()> {
    file.write(path).with_context(|| format!("cannot write {}", path.display()))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

/// Resolves `reference` against the directory of the file that named it.
fn resolve(base_file: &Path, reference: &str) -> PathBuf {
    let p = Path::new(reference);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_file.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn synth(a: &SynthArgs, invocation: Vec<String>) -> Result<Outcome> {
    let cfg = SynthConfig {
        seed: a.seed,
        n_subjects: a.subjects,
        records_per_subject: a.n_records,
        noise_px: a.noise_px,
        shape_noise: a.shape_noise,
        pose_noise_deg: a.pose_noise_deg,
        root_noise_m: a.root_noise_m,
        v_per_segment: a.v_per_segment,
        ..Default::default()
    };
    let data = synth_dataset(&cfg)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    if !a.no_meshes {
        std::fs::create_dir_all(a.out.join("meshes"))?;
    }

    let model_path = a.out.join("model.json");
    std::fs::write(&model_path, data.model.to_json()? + "\n")
        .with_context(|| format!("cannot write {}", model_path.display()))?;

    let mut predictions = Vec::with_capacity(data.records.len());
    let mut truths = Vec::with_capacity(data.records.len());
    for r in &data.records {
        let mesh_ref = (!a.no_meshes).then(|| format!("meshes/{}.json", r.record_id));
        if let Some(m) = &mesh_ref {
            write_file(&MeshFile::new(r.mesh.clone()), &a.out.join(m))?;
        }
        predictions.push(r.prediction(mesh_ref.clone()));
        truths.push(r.ground_truth(mesh_ref));
    }
    write_file(
        &GroundTruthFile::new(invocation.clone(), data.camera, data.subjects.clone(), truths),
        &a.out.join("ground_truth.json"),
    )?;
    write_file(
        &PredictionRecordFile::new(invocation, data.camera, predictions),
        &a.out.join("predictions.json"),
    )?;
    println!(
        "wrote {} records for {} subject(s) to {}",
        data.records.len(),
        data.subjects.len(),
        a.out.display()
    );
    Ok(Outcome::Ok)
}

fn shape_for(
    r: &PredictionRecord,
    source: ShapeSource,
    calibration: Option<&CalibrationFile>,
) -> std::result::Result<[f64; NUM_SHAPE], String> {
    match source {
        ShapeSource::Record => Ok(r.shape_hat),
        ShapeSource::Gt => r.shape_gt.ok_or_else(|| "record has no shape_gt".to_string()),
        ShapeSource::CalibratedFile => calibration
            .and_then(|c| c.subjects.get(&r.subject_id))
            .map(|s| s.shape)
            .ok_or_else(|| format!("subject `{}` missing from calibration file", r.subject_id)),
    }
}

pub fn fit(a: &FitArgs, invocation: Vec<String>) -> Result<Outcome> {
    let cfg = a.config();
    cfg.validate()?;
    let model = read_model(&a.model)?;
    let file: PredictionRecordFile = read_file(&a.records)?;
    let calibration = match (a.shape_source, &a.calibration) {
        (ShapeSource::CalibratedFile, None) => bail!("--shape-source calibrated-file requires --calibration"),
        (ShapeSource::CalibratedFile, Some(p)) => Some(read_file::<CalibrationFile>(p)?),
        _ => None,
    };
    let cam = file.camera;

    let results: Vec<FitRecordResult> = pool(a.jobs)?.install(|| {
        file.records
            .par_iter()
            .map(|r| {
                let outcome = shape_for(r, a.shape_source, calibration.as_ref()).and_then(|shape| {
                    let init = initial_params(shape, r.pose_hat, r.root_hat, &r.keypoints_2d, &model, &cam)
                        .map_err(|e| e.to_string())?;
                    fit_two_stage(&init, &r.keypoints_2d, &model, &cam, &cfg).map_err(|e| e.to_string())
                });
                match outcome {
                    Ok(res) => FitRecordResult {
                        record_id: r.record_id.clone(),
                        subject_id: r.subject_id.clone(),
                        status: FitStatus::Ok,
                        error: None,
                        params: Some(res.params),
                        energy_initial: Some(res.energy_initial),
                        energy_final: Some(res.energy_final),
                    },
                    Err(msg) => FitRecordResult {
                        record_id: r.record_id.clone(),
                        subject_id: r.subject_id.clone(),
                        status: FitStatus::Failed,
                        error: Some(msg),
                        params: None,
                        energy_initial: None,
                        energy_final: None,
                    },
                }
            })
            .collect()
    });

    let out = FitResultsFile::new(invocation, a.shape_source.name(), cfg, results);
    for r in out.records.iter().filter(|r| r.status == FitStatus::Failed) {
        eprintln!("{}: {}", r.record_id, r.error.as_deref().unwrap_or("failed"));
    }
    write_file(&out, &a.out)?;
    println!("fit {} records: {} ok, {} failed", out.records.len(), out.summary.ok, out.summary.failed);
    Ok(match out.summary.failed {
        0 => Outcome::Ok,
        n => Outcome::Partial(n),
    })
}

pub fn calibrate(a: &CalibrateArgs, invocation: Vec<String>) -> Result<Outcome> {
    let mode = if a.uniform {
        CalibrationMode::Uniform
    } else {
        if !(a.temperature > 0.0) {
            bail!("--temperature must be positive, got {}", a.temperature);
        }
        CalibrationMode::Attention {
            temperature: a.temperature,
        }
    };
    let model = read_model(&a.model)?;
    let file: PredictionRecordFile = read_file(&a.records)?;
    if !a.uniform {
        if let Some(r) = file.records.iter().find(|r| r.confidence.is_none()) {
            bail!("confidence required for attention mode (record `{}` has none)", r.record_id);
        }
    }

    let subjects = file.subjects();
    let jobs: Vec<(&str, Vec<&PredictionRecord>)> = subjects.into_iter().collect();
    let results: Vec<(String, std::result::Result<SubjectCalibration, String>)> = pool(a.jobs)?.install(|| {
        jobs.par_iter()
            .map(|(sid, records)| {
                let bundle = SubjectBundle {
                    entries: records
                        .iter()
                        .map(|r| BundleEntry {
                            shape_hat: r.shape_hat,
                            pose_hat: r.pose_hat,
                            confidence: r.confidence,
                        })
                        .collect(),
                };
                let res = calibrate_shape(&bundle, &model, &mode)
                    .map(|c| SubjectCalibration {
                        shape: c.shape,
                        weights: c.weights,
                        record_ids: records.iter().map(|r| r.record_id.clone()).collect(),
                        objective_final: c.objective_final,
                        iterations: c.iterations,
                    })
                    .map_err(|e| e.to_string());
                (sid.to_string(), res)
            })
            .collect()
    });

    let mut out = BTreeMap::new();
    let mut failed = 0;
    for (sid, res) in results {
        match res {
            Ok(c) => {
                out.insert(sid, c);
            }
            Err(e) => {
                eprintln!("subject {sid}: {e}");
                failed += 1;
            }
        }
    }
    let n = out.len();
    write_file(&CalibrationFile::new(invocation, mode, out), &a.out)?;
    println!("calibrated {n} subject(s), {failed} failed");
    Ok(match failed {
        0 => Outcome::Ok,
        n => Outcome::Partial(n),
    })
}

/// Per-record parameters from any file that carries them.
fn predicted_params(path: &Path) -> Result<Vec<(String, Option<HandParams>)>> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let kind = peek_kind(&bytes).with_context(|| format!("invalid file {}", path.display()))?;
    let ctx = || format!("invalid {kind} file {}", path.display());
    Ok(match kind.as_str() {
        PredictionRecordFile::KIND => PredictionRecordFile::from_json(&bytes)
            .with_context(ctx)?
            .records
            .into_iter()
            .map(|r| {
                let p = HandParams {
                    shape: r.shape_hat,
                    pose: r.pose_hat,
                    root: r.root_hat.unwrap_or([0.0; 3]),
                };
                (r.record_id, Some(p))
            })
            .collect(),
        FitResultsFile::KIND => FitResultsFile::from_json(&bytes)
            .with_context(ctx)?
            .records
            .into_iter()
            .map(|r| (r.record_id, r.params))
            .collect(),
        GroundTruthFile::KIND => GroundTruthFile::from_json(&bytes)
            .with_context(ctx)?
            .records
            .into_iter()
            .map(|r| (r.record_id, Some(r.params)))
            .collect(),
        other => bail!("{} has kind `{other}`, which carries no hand parameters", path.display()),
    })
}

pub fn eval(a: &EvalArgs, invocation: Vec<String>) -> Result<Outcome> {
    let model = read_model(&a.model)?;
    let gt: GroundTruthFile = read_file(&a.gt)?;
    let preds = predicted_params(&a.pred)?;
    let gt_by_id: BTreeMap<&str, _> = gt.records.iter().map(|r| (r.record_id.as_str(), r)).collect();

    let mut failed = 0;
    let mut per_record = Vec::with_capacity(preds.len());
    for (id, params) in preds {
        let mut m = RecordMetrics {
            record_id: id.clone(),
            ..Default::default()
        };
        let (Some(p), Some(g)) = (params, gt_by_id.get(id.as_str())) else {
            eprintln!("{id}: no prediction or no ground truth; metrics left null");
            failed += 1;
            per_record.push(m);
            continue;
        };
        let (mesh, kp) = model.forward(&p).with_context(|| format!("record {id}"))?;
        m.mpjpe_mm = Some(mpjpe(&kp, &g.keypoints_3d));
        if let Some(mesh_ref) = &g.mesh {
            let gt_mesh = read_file::<MeshFile>(&resolve(&a.gt, mesh_ref))?.into_mesh();
            let pr: [f64; 3] = kp.0[KP_WRIST];
            let gr: [f64; 3] = g.keypoints_3d.0[KP_WRIST];
            m.mpvpe_mm = Some(mpvpe(&mesh, &gt_mesh, &pr, &gr).with_context(|| format!("record {id}"))?);
        }
        let s = shape_errors(&p.shape, &g.params.shape, &model)?;
        m.mse_mano = Some(s.mse_mano);
        m.w_error_mm = Some(s.w_error_mm);
        m.l_error_mm = Some(s.l_error_mm);
        per_record.push(m);
    }

    let report = EvalReport::aggregate(per_record);
    let fmt = |v: Option<f64>| v.map_or("null".to_string(), |x| format!("{x:.4}"));
    println!(
        "mpjpe_mm {} mpvpe_mm {} mse_mano {} w_error_mm {} l_error_mm {}",
        fmt(report.mpjpe_mm),
        fmt(report.mpvpe_mm),
        fmt(report.mse_mano),
        fmt(report.w_error_mm),
        fmt(report.l_error_mm)
    );
    write_file(&EvalReportFile::new(invocation, report), &a.out)?;
    Ok(match failed {
        0 => Outcome::Ok,
        n => Outcome::Partial(n),
    })
}

pub fn model_info(a: &ModelInfoArgs) -> Result<Outcome> {
    let model = read_model(&a.model)?;
    let (width, length) = hand_width_length(&model, &[0.0; NUM_SHAPE])?;
    let info = serde_json::json!({
        "name": model.name(),
        "vertices": model.num_vertices(),
        "faces": model.num_faces(),
        "joints": model.num_joints(),
        "shape_coeffs": model.num_shape(),
        "pose_blendshapes": model.pose_dirs().is_some(),
        "fingertip_vertices": model.fingertip_vertices(),
        "rest_width_mm": width * 1000.0,
        "rest_length_mm": length * 1000.0,
        "provenance": model.provenance(),
    });
    let text = serde_json::to_string_pretty(&info)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(Outcome::Ok),
    }
}
