//! JSON file formats shared by the command-line tools and bindings.
//!
//! Every file carries `format_version`, a `kind` tag and the `invocation`
//! (argv) that produced it. Pixel coordinates have their origin at the
//! top-left corner, x to the right and y down. Ground-truth meshes are
//! referenced by path, resolved relative to the file that names them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Keypoints2d};
use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::hand_model::{HandParams, Keypoints3d, Mesh, NUM_JOINTS, NUM_SHAPE};
use crate::metrics::EvalReport;
use crate::personalization::CalibrationMode;
use crate::rotation::Rot6d;

pub const RECORDS_FORMAT_VERSION: u32 = 1;

/// Implemented by every top-level file type.
pub trait RecordFile: Serialize + DeserializeOwned {
    const KIND: &'static str;
    fn header(&self) -> (u32, &str);

    fn validate(&self) -> Result<()> {
        Ok(())
    }

    fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: Self = parse_json(bytes)?;
        let (version, kind) = file.header();
        if kind != Self::KIND {
            return Err(Error::Schema {
                path: "kind".into(),
                message: format!("expected `{}`, found `{kind}`", Self::KIND),
            });
        }
        if version != RECORDS_FORMAT_VERSION {
            return Err(Error::Schema {
                path: "format_version".into(),
                message: format!("unsupported version {version}, expected {RECORDS_FORMAT_VERSION}"),
            });
        }
        file.validate()?;
        Ok(file)
    }

    fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }

    fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Deserializes with the JSON path of the first offending field in the error.
pub fn parse_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Reads only the `kind` tag of a record file.
pub fn peek_kind(bytes: &[u8]) -> Result<String> {
    #[derive(Deserialize)]
    struct Kind {
        kind: String,
    }
    Ok(parse_json::<Kind>(bytes)?.kind)
}

macro_rules! record_file {
    ($ty:ty, $kind:literal) => {
        impl RecordFile for $ty {
            const KIND: &'static str = $kind;
            fn header(&self) -> (u32, &str) {
                (self.format_version, &self.kind)
            }
            fn validate(&self) -> Result<()> {
                <$ty>::check(self)
            }
        }
    };
}

fn kind_of<T: RecordFile>() -> String {
    T::KIND.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub record_id: String,
    pub subject_id: String,
    pub shape_hat: [f64; NUM_SHAPE],
    pub pose_hat: [Rot6d; NUM_JOINTS],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_hat: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub keypoints_2d: Keypoints2d,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints_3d_gt: Option<Keypoints3d>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_gt: Option<[f64; NUM_SHAPE]>,
    /// Path of a mesh file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_gt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecordFile {
    pub format_version: u32,
    pub kind: String,
    pub invocation: Vec<String>,
    pub camera: CameraIntrinsics,
    pub records: Vec<PredictionRecord>,
}
record_file!(PredictionRecordFile, "prediction_records");

fn check_unique_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for (i, id) in ids.enumerate() {
        if !seen.insert(id) {
            return Err(Error::invariant(format!("records[{i}].record_id"), format!("duplicate id `{id}`")));
        }
    }
    Ok(())
}

impl PredictionRecordFile {
    pub fn new(invocation: Vec<String>, camera: CameraIntrinsics, records: Vec<PredictionRecord>) -> Self {
        PredictionRecordFile {
            format_version: RECORDS_FORMAT_VERSION,
            kind: kind_of::<Self>(),
            invocation,
            camera,
            records,
        }
    }

    fn check(&self) -> Result<()> {
        self.camera.validate()?;
        check_unique_ids(self.records.iter().map(|r| r.record_id.as_str()))?;
        for (i, r) in self.records.iter().enumerate() {
            r.keypoints_2d
                .validate()
                .map_err(|e| Error::invariant(format!("records[{i}].keypoints_2d"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn subjects(&self) -> BTreeMap<&str, Vec<&PredictionRecord>> {
        let mut out: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.subject_id.as_str()).or_default().push(r);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub record_id: String,
    pub subject_id: String,
    pub params: HandParams,
    pub keypoints_3d: Keypoints3d,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub format_version: u32,
    pub kind: String,
    pub invocation: Vec<String>,
    pub camera: CameraIntrinsics,
    /// Subject id to true shape.
    pub subjects: BTreeMap<String, [f64; NUM_SHAPE]>,
    pub records: Vec<GroundTruthRecord>,
}
record_file!(GroundTruthFile, "ground_truth");

impl GroundTruthFile {
    pub fn new(
        invocation: Vec<String>,
        camera: CameraIntrinsics,
        subjects: BTreeMap<String, [f64; NUM_SHAPE]>,
        records: Vec<GroundTruthRecord>,
    ) -> Self {
        GroundTruthFile {
            format_version: RECORDS_FORMAT_VERSION,
            kind: kind_of::<Self>(),
            invocation,
            camera,
            subjects,
            records,
        }
    }

    fn check(&self) -> Result<()> {
        check_unique_ids(self.records.iter().map(|r| r.record_id.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRecordResult {
    pub record_id: String,
    pub subject_id: String,
    pub status: FitStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<HandParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_initial: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_final: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FitSummary {
    pub ok: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitResultsFile {
    pub format_version: u32,
    pub kind: String,
    pub invocation: Vec<String>,
    pub shape_source: String,
    pub config: FitConfig,
    pub summary: FitSummary,
    pub records: Vec<FitRecordResult>,
}
record_file!(FitResultsFile, "fit_results");

impl FitResultsFile {
    /// Sorts records by id and fills in the summary.
    pub fn new(
        invocation: Vec<String>,
        shape_source: impl Into<String>,
        config: FitConfig,
        mut records: Vec<FitRecordResult>,
    ) -> Self {
        records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        let ok = records.iter().filter(|r| r.status == FitStatus::Ok).count();
        FitResultsFile {
            format_version: RECORDS_FORMAT_VERSION,
            kind: kind_of::<Self>(),
            invocation,
            shape_source: shape_source.into(),
            config,
            summary: FitSummary {
                ok,
                failed: records.len() - ok,
            },
            records,
        }
    }

    fn check(&self) -> Result<()> {
        check_unique_ids(self.records.iter().map(|r| r.record_id.as_str()))?;
        for (i, r) in self.records.iter().enumerate() {
            if r.status == FitStatus::Ok && r.params.is_none() {
                return Err(Error::invariant(format!("records[{i}].params"), "missing for a successful fit"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectCalibration {
    pub shape: [f64; NUM_SHAPE],
    /// Parallel to `record_ids`.
    pub weights: Vec<f64>,
    pub record_ids: Vec<String>,
    pub objective_final: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub format_version: u32,
    pub kind: String,
    pub invocation: Vec<String>,
    pub mode: CalibrationMode,
    pub subjects: BTreeMap<String, SubjectCalibration>,
}
record_file!(CalibrationFile, "calibration");

impl CalibrationFile {
    pub fn new(
        invocation: Vec<String>,
        mode: CalibrationMode,
        subjects: BTreeMap<String, SubjectCalibration>,
    ) -> Self {
        CalibrationFile {
            format_version: RECORDS_FORMAT_VERSION,
            kind: kind_of::<Self>(),
            invocation,
            mode,
            subjects,
        }
    }

    fn check(&self) -> Result<()> {
        for (id, s) in &self.subjects {
            if s.weights.len() != s.record_ids.len() {
                return Err(Error::invariant(
                    format!("subjects.{id}.weights"),
                    "length differs from record_ids",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshFile {
    pub format_version: u32,
    pub kind: String,
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}
record_file!(MeshFile, "mesh");

impl MeshFile {
    pub fn new(mesh: Mesh) -> Self {
        MeshFile {
            format_version: RECORDS_FORMAT_VERSION,
            kind: kind_of::<Self>(),
            vertices: mesh.vertices,
            faces: mesh.faces,
        }
    }

    pub fn into_mesh(self) -> Mesh {
        Mesh {
            vertices: self.vertices,
            faces: self.faces,
        }
    }

    fn check(&self) -> Result<()> {
        Mesh {
            vertices: self.vertices.clone(),
            faces: self.faces.clone(),
        }
        .validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReportFile {
    pub format_version: u32,
    pub kind: String,
    pub invocation: Vec<String>,
    pub report: EvalReport,
}
record_file!(EvalReportFile, "eval_report");

impl EvalReportFile {
    pub fn new(invocation: Vec<String>, report: EvalReport) -> Self {
        EvalReportFile {
            format_version: RECORDS_FORMAT_VERSION,
            kind: kind_of::<Self>(),
            invocation,
            report,
        }
    }

    fn check(&self) -> Result<()> {
        Ok(())
    }
}
