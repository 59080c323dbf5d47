//! Face orientation from five landmarks and orientation-guided retrieval of
//! real faces for blending into a generated one.
//!
//! The orientation descriptor is a closed quadrilateral of eye and mouth
//! landmarks plus the eye-center-to-nose vector, scaled by the inter-ocular
//! distance so that face size does not affect similarity. In-plane rotation
//! is kept: head tilt is part of the orientation.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_text;
use crate::types::RasterImage;

/// Guards the pole of `1 / Σ‖a_i − b_i‖` at identical fields.
pub const SIMILARITY_DELTA: f64 = 1e-8;

pub const DEFAULT_TOP_M: usize = 3;

pub type Point = [f64; 2];

/// Landmark record as stored in JSON, keyed by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceLandmarks {
    pub frame_id: String,
    pub right_eye: Point,
    pub left_eye: Point,
    pub mouth_left: Point,
    pub mouth_right: Point,
    pub nose: Point,
}

impl FaceLandmarks {
    pub fn validate(&self) -> Result<()> {
        let pts = [self.right_eye, self.left_eye, self.mouth_left, self.mouth_right, self.nose];
        if pts.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "frame {}: non-finite landmark coordinate",
                self.frame_id
            )));
        }
        if self.right_eye == self.left_eye {
            return Err(Error::CoincidentEyes);
        }
        Ok(())
    }

    /// Applies `p -> scale * p + offset` to every landmark.
    pub fn transformed(&self, scale: f64, offset: Point) -> Self {
        let t = |p: Point| [scale * p[0] + offset[0], scale * p[1] + offset[1]];
        Self {
            frame_id: self.frame_id.clone(),
            right_eye: t(self.right_eye),
            left_eye: t(self.left_eye),
            mouth_left: t(self.mouth_left),
            mouth_right: t(self.mouth_right),
            nose: t(self.nose),
        }
    }
}

/// `v1`: right eye → left eye, `v2`: left eye → mouth left,
/// `v3`: mouth left → mouth right, `v4`: mouth right → right eye,
/// `v5`: eye center → nose. All divided by the inter-ocular distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceVectorField {
    pub vectors: [Point; 5],
}

impl FaceVectorField {
    pub fn closure_residual(&self) -> f64 {
        let v = &self.vectors;
        let sx = v[0][0] + v[1][0] + v[2][0] + v[3][0];
        let sy = v[0][1] + v[1][1] + v[2][1] + v[3][1];
        sx.hypot(sy)
    }
}

pub fn vector_field(lm: &FaceLandmarks) -> Result<FaceVectorField> {
    lm.validate()?;
    let sub = |a: Point, b: Point| [b[0] - a[0], b[1] - a[1]];
    let v1 = sub(lm.right_eye, lm.left_eye);
    let scale = v1[0].hypot(v1[1]);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::CoincidentEyes);
    }
    let eye_center = [
        0.5 * (lm.right_eye[0] + lm.left_eye[0]),
        0.5 * (lm.right_eye[1] + lm.left_eye[1]),
    ];
    let raw = [
        v1,
        sub(lm.left_eye, lm.mouth_left),
        sub(lm.mouth_left, lm.mouth_right),
        sub(lm.mouth_right, lm.right_eye),
        sub(eye_center, lm.nose),
    ];
    Ok(FaceVectorField {
        vectors: raw.map(|v| [v[0] / scale, v[1] / scale]),
    })
}

/// `S = 1 / (δ + Σ_i ‖a_i − b_i‖₂)`.
pub fn orientation_similarity(a: &FaceVectorField, b: &FaceVectorField) -> f64 {
    let dist: f64 = a
        .vectors
        .iter()
        .zip(&b.vectors)
        .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
        .sum();
    1.0 / (SIMILARITY_DELTA + dist)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub frame_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopM {
    pub candidates: Vec<Candidate>,
    /// Set when the database held fewer than `m` entries.
    pub fewer_than_requested: bool,
}

/// The `m` most similar entries, by descending similarity then ascending id.
pub fn top_m_candidates(
    query: &FaceVectorField,
    database: &[(String, FaceVectorField)],
    m: usize,
) -> Result<TopM> {
    if database.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if m == 0 {
        return Err(Error::InvalidInput("m must be at least 1".into()));
    }
    let mut scored: Vec<Candidate> = database
        .iter()
        .map(|(id, field)| Candidate {
            frame_id: id.clone(),
            similarity: orientation_similarity(query, field),
        })
        .collect();
    scored.sort_by(|a, b| match b.similarity.total_cmp(&a.similarity) {
        Ordering::Equal => a.frame_id.cmp(&b.frame_id),
        o => o,
    });
    let fewer_than_requested = scored.len() < m;
    scored.truncate(m);
    Ok(TopM {
        candidates: scored,
        fewer_than_requested,
    })
}

/// Coefficients of `alpha · Σ λ_i f_i + beta · generated`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambdas: Vec<f64>,
}

impl BlendWeights {
    pub const AFFINE_TOL: f64 = 1e-9;

    /// `alpha = beta = 0.5`, `λ_i = 1/m`.
    pub fn uniform(m: usize) -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            lambdas: vec![1.0 / m.max(1) as f64; m],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.alpha)
            .chain(std::iter::once(self.beta))
            .chain(self.lambdas.iter().copied());
        for v in all {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("blend weight {v} is not finite")));
            }
        }
        if self.lambdas.iter().any(|&l| l < 0.0) {
            return Err(Error::InvalidInput("lambdas must be non-negative".into()));
        }
        let total = self.alpha * self.lambdas.iter().sum::<f64>() + self.beta;
        if (total - 1.0).abs() > Self::AFFINE_TOL {
            return Err(Error::BlendWeights(total));
        }
        Ok(())
    }

    /// Keeps `alpha` and `beta` and renormalizes lambdas uniformly over `m`
    /// entries. Used when fewer candidates are available than configured.
    pub fn resized(&self, m: usize) -> Self {
        let sum: f64 = self.lambdas.iter().sum();
        Self {
            alpha: self.alpha,
            beta: self.beta,
            lambdas: vec![sum / m.max(1) as f64; m],
        }
    }
}

/// Rounds half-up and clamps to `[0, 255]`.
pub(crate) fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn blend_face(
    candidates: &[RasterImage],
    generated: &RasterImage,
    weights: &BlendWeights,
) -> Result<RasterImage> {
    weights.validate()?;
    if candidates.len() != weights.lambdas.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} candidate faces but {} lambdas",
            candidates.len(),
            weights.lambdas.len()
        )));
    }
    if let Some(c) = candidates.iter().find(|c| c.dims() != generated.dims()) {
        return Err(Error::DimensionMismatch(format!(
            "candidate face is {:?}, generated face is {:?}",
            c.dims(),
            generated.dims()
        )));
    }
    let pixels = generated
        .pixels()
        .iter()
        .enumerate()
        .map(|(idx, &g)| {
            let mix: f64 = candidates
                .iter()
                .zip(&weights.lambdas)
                .map(|(c, l)| l * c.pixels()[idx] as f64)
                .sum();
            quantize(weights.alpha * mix + weights.beta * g as f64)
        })
        .collect();
    RasterImage::new(generated.width(), generated.height(), pixels)
}

pub fn parse_landmarks_json(text: &str) -> Result<FaceLandmarks> {
    let lm: FaceLandmarks = serde_json::from_str(text)?;
    lm.validate()?;
    Ok(lm)
}

/// A JSON array of landmark records.
pub fn parse_landmark_database(text: &str) -> Result<Vec<FaceLandmarks>> {
    let all: Vec<FaceLandmarks> = serde_json::from_str(text)?;
    for lm in &all {
        lm.validate()?;
    }
    Ok(all)
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<FaceLandmarks> {
    parse_landmarks_json(&read_text(path.as_ref())?)
}

pub fn load_landmark_database(path: impl AsRef<Path>) -> Result<Vec<FaceLandmarks>> {
    parse_landmark_database(&read_text(path.as_ref())?)
}

/// Vector fields for a landmark database, in input order.
pub fn database_fields(db: &[FaceLandmarks]) -> Result<Vec<(String, FaceVectorField)>> {
    db.iter()
        .map(|lm| Ok((lm.frame_id.clone(), vector_field(lm)?)))
        .collect()
}
