//! Per-frame post-generation chain and a batch driver over manifests.
//!
//! For each frame: find the `m` real faces whose orientation best matches
//! the generated face and blend them in, add the residual of every body
//! part (face first enhanced, then refined), paste the parts back and fuse
//! the foreground with the background under the mask. Frames are
//! independent; the driver may run them in parallel and always reports in
//! `frame_id` order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compositing::{
    apply_residual, fuse, load_crops, paste_crop, psnr, ssim, BodyPartCrop, FrameCrops, FACE_PART,
};
use crate::error::{Error, Result};
use crate::facegeom::{
    blend_face, database_fields, load_landmark_database, load_landmarks, top_m_candidates, vector_field,
    BlendWeights, Candidate, FaceVectorField,
};
use crate::io::{load_image, load_mask, load_residual, read_text, save_image, write_bytes};
use crate::types::{Mask, RasterImage, ResidualImage};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// File references for one frame. Relative paths are resolved against the
/// directory of the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameManifest {
    pub frame_id: String,
    /// Generated foreground.
    pub foreground: PathBuf,
    pub background: PathBuf,
    pub mask: PathBuf,
    #[serde(default)]
    pub crops: Option<PathBuf>,
    /// Landmarks of the generated face.
    #[serde(default)]
    pub landmarks: Option<PathBuf>,
    /// Residual PNG per part index.
    #[serde(default)]
    pub residuals: BTreeMap<u8, PathBuf>,
    /// Landmark database of real faces.
    #[serde(default)]
    pub face_database: Option<PathBuf>,
    /// Directory of real face crops named `<frame_id>.png`.
    #[serde(default)]
    pub faces_dir: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
}

impl FrameManifest {
    fn resolve_against(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.foreground);
        fix(&mut self.background);
        fix(&mut self.mask);
        for p in [
            &mut self.crops,
            &mut self.landmarks,
            &mut self.face_database,
            &mut self.faces_dir,
            &mut self.ground_truth,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for p in self.residuals.values_mut() {
            fix(p);
        }
        self
    }
}

pub fn parse_manifest_json(text: &str) -> Result<Vec<FrameManifest>> {
    let list: Vec<FrameManifest> = serde_json::from_str(text)?;
    for m in &list {
        if let Some(bad) = m.residuals.keys().find(|k| !(1..=5).contains(*k)) {
            return Err(Error::InvalidInput(format!(
                "frame {}: residual for unknown part {bad}",
                m.frame_id
            )));
        }
    }
    Ok(list)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<FrameManifest>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parse_manifest_json(&read_text(path)?)?
        .into_iter()
        .map(|m| m.resolve_against(base))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    FaceSearch,
    FaceBlend,
    Residual,
    Paste,
    Fuse,
    Metrics,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::FaceSearch => "face_search",
            Stage::FaceBlend => "face_blend",
            Stage::Residual => "residual",
            Stage::Paste => "paste",
            Stage::Fuse => "fuse",
            Stage::Metrics => "metrics",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameFailure {
    pub frame_id: String,
    pub stage: Stage,
    pub error: String,
}

impl fmt::Display for FrameFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "frame {} failed at {}: {}", self.frame_id, self.stage, self.error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub ssim: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame_id: String,
    /// Retrieved faces, most similar first. Empty when no face was enhanced.
    pub candidates: Vec<Candidate>,
    pub fewer_candidates_than_requested: bool,
    /// Saturated channel values per part after adding its residual.
    pub clamp_counts: BTreeMap<u8, usize>,
    pub metrics: Option<FrameMetrics>,
    /// Wall-clock milliseconds per stage. Not deterministic.
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub image: RasterImage,
    pub report: FrameReport,
}

/// Everything a frame needs, already decoded.
#[derive(Debug, Clone)]
pub struct FrameAssets {
    pub frame_id: String,
    pub foreground: RasterImage,
    pub background: RasterImage,
    pub mask: Mask,
    pub crops: Option<FrameCrops>,
    pub landmarks: Option<FaceVectorField>,
    pub residuals: BTreeMap<u8, ResidualImage>,
    pub ground_truth: Option<RasterImage>,
}

/// A searchable face database with the crops of every entry.
#[derive(Debug, Clone)]
pub struct FaceLibrary {
    pub fields: Vec<(String, FaceVectorField)>,
    pub faces_dir: PathBuf,
}

impl FaceLibrary {
    pub fn load(database: &Path, faces_dir: &Path) -> Result<Self> {
        Ok(Self {
            fields: database_fields(&load_landmark_database(database)?)?,
            faces_dir: faces_dir.to_path_buf(),
        })
    }

    pub fn face(&self, frame_id: &str) -> Result<RasterImage> {
        load_image(self.faces_dir.join(format!("{frame_id}.png")))
    }
}

struct Timer {
    start: Instant,
    times: BTreeMap<String, f64>,
}

impl Timer {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            times: BTreeMap::new(),
        }
    }

    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        *self.times.entry(stage.to_string()).or_default() +=
            now.duration_since(self.start).as_secs_f64() * 1e3;
        self.start = now;
    }
}

fn at(frame_id: &str, stage: Stage) -> impl Fn(Error) -> FrameFailure + '_ {
    move |e| FrameFailure {
        frame_id: frame_id.to_string(),
        stage,
        error: e.to_string(),
    }
}

pub fn load_assets(manifest: &FrameManifest) -> Result<FrameAssets> {
    let foreground = load_image(&manifest.foreground)?;
    let background = load_image(&manifest.background)?;
    let mask = load_mask(&manifest.mask)?;
    let crops = manifest.crops.as_ref().map(load_crops).transpose()?;
    let landmarks = manifest
        .landmarks
        .as_ref()
        .map(|p| load_landmarks(p).and_then(|lm| vector_field(&lm)))
        .transpose()?;
    let residuals = manifest
        .residuals
        .iter()
        .map(|(&k, p)| Ok((k, load_residual(p)?)))
        .collect::<Result<_>>()?;
    let ground_truth = manifest.ground_truth.as_ref().map(load_image).transpose()?;
    Ok(FrameAssets {
        frame_id: manifest.frame_id.clone(),
        foreground,
        background,
        mask,
        crops,
        landmarks,
        residuals,
        ground_truth,
    })
}

/// Runs every stage on decoded assets.
pub fn compose_frame(
    assets: &FrameAssets,
    library: Option<&FaceLibrary>,
    weights: &BlendWeights,
    m: usize,
) -> std::result::Result<FrameOutput, FrameFailure> {
    let id = assets.frame_id.as_str();
    let mut timer = Timer::new();
    let mut frame = assets.foreground.clone();
    let mut candidates = Vec::new();
    let mut fewer = false;
    let mut clamp_counts = BTreeMap::new();

    if let Some(crops) = &assets.crops {
        crops.check_bounds(frame.dims()).map_err(at(id, Stage::Load))?;
        if !assets.residuals.keys().all(|k| crops.part(*k).is_some()) {
            return Err(at(id, Stage::Load)(Error::InvalidInput(
                "residual given for a part without a crop rectangle".into(),
            )));
        }
        let mut parts = Vec::new();
        for rect in &crops.parts {
            let mut crop = BodyPartCrop::cut(&assets.foreground, rect).map_err(at(id, Stage::Load))?;
            if rect.index == FACE_PART {
                if let (Some(query), Some(lib)) = (&assets.landmarks, library) {
                    let top = top_m_candidates(query, &lib.fields, m).map_err(at(id, Stage::FaceSearch))?;
                    let faces = top
                        .candidates
                        .iter()
                        .map(|c| lib.face(&c.frame_id))
                        .collect::<Result<Vec<_>>>()
                        .map_err(at(id, Stage::FaceSearch))?;
                    timer.lap(Stage::FaceSearch);
                    let w = if faces.len() == weights.lambdas.len() {
                        weights.clone()
                    } else {
                        weights.resized(faces.len())
                    };
                    crop.image = blend_face(&faces, &crop.image, &w).map_err(at(id, Stage::FaceBlend))?;
                    timer.lap(Stage::FaceBlend);
                    candidates = top.candidates;
                    fewer = top.fewer_than_requested;
                }
            }
            if let Some(res) = assets.residuals.get(&rect.index) {
                let refined = apply_residual(&crop, res).map_err(at(id, Stage::Residual))?;
                clamp_counts.insert(rect.index, refined.clamped);
                crop = refined.crop;
            }
            parts.push(crop);
        }
        timer.lap(Stage::Residual);
        let mut sorted: Vec<&BodyPartCrop> = parts.iter().collect();
        sorted.sort_by_key(|p| p.part_index);
        for part in sorted {
            frame = paste_crop(&frame, part).map_err(at(id, Stage::Paste))?;
        }
        timer.lap(Stage::Paste);
    } else if !assets.residuals.is_empty() {
        return Err(at(id, Stage::Load)(Error::InvalidInput(
            "residuals given without crop rectangles".into(),
        )));
    }

    let image = fuse(&frame, &assets.background, &assets.mask).map_err(at(id, Stage::Fuse))?;
    timer.lap(Stage::Fuse);

    let metrics = match &assets.ground_truth {
        Some(gt) => {
            let m = FrameMetrics {
                ssim: ssim(gt, &image).map_err(at(id, Stage::Metrics))?,
                psnr: psnr(gt, &image).map_err(at(id, Stage::Metrics))?,
            };
            timer.lap(Stage::Metrics);
            Some(m)
        }
        None => None,
    };

    Ok(FrameOutput {
        image,
        report: FrameReport {
            frame_id: assets.frame_id.clone(),
            candidates,
            fewer_candidates_than_requested: fewer,
            clamp_counts,
            metrics,
            timings_ms: timer.times,
        },
    })
}

/// Loads a manifest's files and runs [`compose_frame`].
pub fn process_frame(
    manifest: &FrameManifest,
    weights: &BlendWeights,
    m: usize,
) -> std::result::Result<FrameOutput, FrameFailure> {
    let library = load_library(manifest).map_err(at(&manifest.frame_id, Stage::Load))?;
    let assets = load_assets(manifest).map_err(at(&manifest.frame_id, Stage::Load))?;
    compose_frame(&assets, library.as_ref(), weights, m)
}

fn load_library(manifest: &FrameManifest) -> Result<Option<FaceLibrary>> {
    match (&manifest.face_database, &manifest.faces_dir) {
        (Some(db), Some(dir)) => FaceLibrary::load(db, dir).map(Some),
        (None, None) => Ok(None),
        _ => Err(Error::InvalidInput(
            "face_database and faces_dir must be given together".into(),
        )),
    }
}

#[derive(Debug, Clone)]
pub struct SequenceConfig {
    pub weights: BlendWeights,
    pub top_m: usize,
    pub jobs: usize,
    /// When set, frames go to `<dir>/<frame_id>.png` and the summary to
    /// `<dir>/report.json`.
    pub out_dir: Option<PathBuf>,
}

impl SequenceConfig {
    pub fn new(top_m: usize) -> Self {
        Self {
            weights: BlendWeights::uniform(top_m),
            top_m,
            jobs: 1,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub frames: usize,
    pub mean_ssim: f64,
    /// `inf` when any frame is a perfect reconstruction.
    pub mean_psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceReport {
    pub schema_version: u32,
    pub frames: Vec<FrameReport>,
    pub failures: Vec<FrameFailure>,
    pub aggregate: Option<AggregateMetrics>,
}

impl SequenceReport {
    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Copy with all timing fields cleared, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for f in &mut r.frames {
            f.timings_ms.clear();
        }
        r
    }

    /// JSON with non-finite numbers written as the strings `"inf"`, `"-inf"`, `"nan"`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self.without_nonfinite()).unwrap_or_default();
        restore_nonfinite(&mut v, self);
        v
    }

    fn without_nonfinite(&self) -> Self {
        let mut r = self.clone();
        for f in &mut r.frames {
            if let Some(m) = &mut f.metrics {
                m.psnr = finite_or_zero(m.psnr);
            }
        }
        if let Some(a) = &mut r.aggregate {
            a.mean_psnr = finite_or_zero(a.mean_psnr);
        }
        r
    }
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

pub fn nonfinite_label(v: f64) -> Option<&'static str> {
    if v.is_nan() {
        Some("nan")
    } else if v == f64::INFINITY {
        Some("inf")
    } else if v == f64::NEG_INFINITY {
        Some("-inf")
    } else {
        None
    }
}

fn restore_nonfinite(v: &mut serde_json::Value, report: &SequenceReport) {
    if let Some(frames) = v.get_mut("frames").and_then(|f| f.as_array_mut()) {
        for (fv, f) in frames.iter_mut().zip(&report.frames) {
            if let (Some(m), Some(label)) = (
                fv.get_mut("metrics"),
                f.metrics.and_then(|m| nonfinite_label(m.psnr)),
            ) {
                m["psnr"] = label.into();
            }
        }
    }
    if let (Some(a), Some(label)) = (
        v.get_mut("aggregate").filter(|a| !a.is_null()),
        report.aggregate.and_then(|a| nonfinite_label(a.mean_psnr)),
    ) {
        a["mean_psnr"] = label.into();
    }
}

/// Processes every manifest, continuing past failed frames.
pub fn process_sequence(manifests: &[FrameManifest], cfg: &SequenceConfig) -> Result<SequenceReport> {
    if manifests.is_empty() {
        return Err(Error::InvalidInput("no frames in manifest".into()));
    }
    cfg.weights.validate()?;
    if cfg.top_m == 0 {
        return Err(Error::InvalidInput("top_m must be at least 1".into()));
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    // Databases are shared read-only between frames.
    let mut libraries: HashMap<(PathBuf, PathBuf), std::result::Result<Arc<FaceLibrary>, String>> =
        HashMap::new();
    for m in manifests {
        if let (Some(db), Some(dir)) = (&m.face_database, &m.faces_dir) {
            libraries
                .entry((db.clone(), dir.clone()))
                .or_insert_with(|| FaceLibrary::load(db, dir).map(Arc::new).map_err(|e| e.to_string()));
        }
    }

    let run_one = |m: &FrameManifest| -> std::result::Result<FrameOutput, FrameFailure> {
        let fail = at(&m.frame_id, Stage::Load);
        let library = match (&m.face_database, &m.faces_dir) {
            (Some(db), Some(dir)) => match &libraries[&(db.clone(), dir.clone())] {
                Ok(lib) => Some(lib.clone()),
                Err(e) => return Err(fail(Error::InvalidInput(e.clone()))),
            },
            (None, None) => None,
            _ => {
                return Err(fail(Error::InvalidInput(
                    "face_database and faces_dir must be given together".into(),
                )))
            }
        };
        let assets = load_assets(m).map_err(&fail)?;
        let out = compose_frame(&assets, library.as_deref(), &cfg.weights, cfg.top_m)?;
        if let Some(dir) = &cfg.out_dir {
            save_image(&out.image, dir.join(format!("{}.png", m.frame_id)))
                .map_err(at(&m.frame_id, Stage::Write))?;
        }
        Ok(out)
    };

    let results: Vec<_> = if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        pool.install(|| manifests.par_iter().map(run_one).collect())
    } else {
        manifests.iter().map(run_one).collect()
    };

    let mut frames = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(out) => frames.push(out.report),
            Err(f) => failures.push(f),
        }
    }
    frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    failures.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));

    let scored: Vec<FrameMetrics> = frames.iter().filter_map(|f| f.metrics).collect();
    let aggregate = (!scored.is_empty()).then(|| {
        let n = scored.len() as f64;
        AggregateMetrics {
            frames: scored.len(),
            mean_ssim: scored.iter().map(|m| m.ssim).sum::<f64>() / n,
            mean_psnr: scored.iter().map(|m| m.psnr).sum::<f64>() / n,
        }
    });

    let report = SequenceReport {
        schema_version: REPORT_SCHEMA_VERSION,
        frames,
        failures,
        aggregate,
    };
    if let Some(dir) = &cfg.out_dir {
        let text = serde_json::to_string_pretty(&report.to_json())?;
        write_bytes(&dir.join("report.json"), text.as_bytes())?;
    }
    Ok(report)
}
