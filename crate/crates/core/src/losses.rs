//! Adversarial objectives evaluated over discriminator scores supplied from
//! outside (no networks here). Expectations are batch means.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::read_text;

/// Lower bound applied to `D` and `1 − D` before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreContext {
    Spatial,
    Temporal,
    LocalPart(u8),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRecord {
    pub real_score: f64,
    pub fake_score: f64,
    pub context: ScoreContext,
}

impl ScoreRecord {
    pub fn new(real_score: f64, fake_score: f64, context: ScoreContext) -> Result<Self> {
        for (name, v) in [("real", real_score), ("fake", fake_score)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{name} score {v} outside [0, 1]")));
            }
        }
        if let ScoreContext::LocalPart(p) = context {
            if !(1..=5).contains(&p) {
                return Err(Error::InvalidInput(format!("part index {p} outside 1..=5")));
            }
        }
        Ok(Self {
            real_score,
            fake_score,
            context,
        })
    }

    fn log_real(&self) -> f64 {
        self.real_score.max(PROBABILITY_FLOOR).ln()
    }

    fn log_one_minus_fake(&self) -> f64 {
        (1.0 - self.fake_score).max(PROBABILITY_FLOOR).ln()
    }
}

/// `mean log D(real) + mean log(1 − D(fake))`.
fn adversarial_term(records: &[&ScoreRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = records.len() as f64;
    let real: f64 = records.iter().map(|r| r.log_real()).sum::<f64>() / n;
    let fake: f64 = records.iter().map(|r| r.log_one_minus_fake()).sum::<f64>() / n;
    Ok(real + fake)
}

fn single_context(records: &[ScoreRecord], want: ScoreContext) -> Result<f64> {
    if let Some(r) = records.iter().find(|r| r.context != want) {
        return Err(Error::InvalidInput(format!(
            "expected only {want:?} scores, found {:?}",
            r.context
        )));
    }
    adversarial_term(&records.iter().collect::<Vec<_>>())
}

/// Frame-quality objective over `(pose, frame)` discriminator scores.
pub fn spatial_loss(records: &[ScoreRecord]) -> Result<f64> {
    single_context(records, ScoreContext::Spatial)
}

/// Same form as [`spatial_loss`] over three-frame context windows.
pub fn temporal_loss(records: &[ScoreRecord]) -> Result<f64> {
    single_context(records, ScoreContext::Temporal)
}

/// Sum over the part groups present of each group's adversarial term. The
/// face group (part 1) scores the enhanced face.
pub fn local_refinement_loss(records: &[ScoreRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut groups: BTreeMap<u8, Vec<&ScoreRecord>> = BTreeMap::new();
    for r in records {
        match r.context {
            ScoreContext::LocalPart(p) => groups.entry(p).or_default().push(r),
            other => {
                return Err(Error::InvalidInput(format!(
                    "expected local part scores, found {other:?}"
                )))
            }
        }
    }
    groups.values().map(|g| adversarial_term(g)).sum()
}

/// Weights for [`LossBreakdown::weighted_total`]. These are a user choice; the
/// defaults of 1.0 carry no particular meaning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossWeights {
    pub gw: f64,
    pub spatial: f64,
    pub temporal: f64,
    pub local: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gw: 1.0,
            spatial: 1.0,
            temporal: 1.0,
            local: 1.0,
        }
    }
}

/// Each term present in a score set; absent groups are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub gw: Option<f64>,
    pub spatial: Option<f64>,
    pub temporal: Option<f64>,
    pub local_refinement: Option<f64>,
}

impl LossBreakdown {
    /// Splits mixed records by context and evaluates every non-empty group.
    pub fn from_records(records: &[ScoreRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let pick = |f: fn(&ScoreContext) -> bool| -> Vec<ScoreRecord> {
            records.iter().filter(|r| f(&r.context)).copied().collect()
        };
        let spatial = pick(|c| *c == ScoreContext::Spatial);
        let temporal = pick(|c| *c == ScoreContext::Temporal);
        let local = pick(|c| matches!(c, ScoreContext::LocalPart(_)));
        let opt = |v: Vec<ScoreRecord>, f: fn(&[ScoreRecord]) -> Result<f64>| {
            if v.is_empty() {
                Ok(None)
            } else {
                f(&v).map(Some)
            }
        };
        Ok(Self {
            gw: None,
            spatial: opt(spatial, spatial_loss)?,
            temporal: opt(temporal, temporal_loss)?,
            local_refinement: opt(local, local_refinement_loss)?,
        })
    }

    /// `Σ w_k · term_k` over present terms.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        [
            (self.gw, w.gw),
            (self.spatial, w.spatial),
            (self.temporal, w.temporal),
            (self.local_refinement, w.local),
        ]
        .iter()
        .filter_map(|(v, w)| v.map(|v| v * w))
        .sum()
    }
}

/// Rows of `context,part_index,real_score,fake_score`. A header row starting
/// with `context` is skipped. Contexts are `spatial`, `temporal`, `local`;
/// `part_index` is ignored (may be empty) except for `local`.
pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(row + 1, |p| p.line() as usize),
            column: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if row == 0 && record.get(0).is_some_and(|f| f.eq_ignore_ascii_case("context")) {
            continue;
        }
        if record.len() != 4 {
            return Err(Error::RaggedRow {
                line,
                expected: 4,
                found: record.len(),
            });
        }
        let num = |col: usize| -> Result<f64> {
            record[col].parse::<f64>().map_err(|_| Error::Parse {
                line,
                column: col + 1,
                message: format!("not a number: {:?}", &record[col]),
            })
        };
        let context = match record[0].to_ascii_lowercase().as_str() {
            "spatial" => ScoreContext::Spatial,
            "temporal" => ScoreContext::Temporal,
            "local" | "local_part" => {
                let p: u8 = record[1].parse().map_err(|_| Error::Parse {
                    line,
                    column: 2,
                    message: format!("bad part index {:?}", &record[1]),
                })?;
                ScoreContext::LocalPart(p)
            }
            other => {
                return Err(Error::Parse {
                    line,
                    column: 1,
                    message: format!("unknown context {other:?}"),
                })
            }
        };
        let rec = ScoreRecord::new(num(2)?, num(3)?, context).map_err(|e| Error::Parse {
            line,
            column: 0,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(out)
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    parse_scores_csv(&read_text(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(real: f64, fake: f64, context: ScoreContext) -> ScoreRecord {
        ScoreRecord::new(real, fake, context).unwrap()
    }

    #[test]
    fn spatial_examples() {
        let half = vec![rec(0.5, 0.5, ScoreContext::Spatial); 4];
        assert!((spatial_loss(&half).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-15);
        assert!((spatial_loss(&half).unwrap() + 1.3863).abs() < 1e-4);
        assert_eq!(spatial_loss(&[rec(1.0, 0.0, ScoreContext::Spatial)]).unwrap(), 0.0);
        let saturated = spatial_loss(&[rec(0.7, 1.0, ScoreContext::Spatial)]).unwrap();
        assert!((saturated - (1e-12f64.ln() + 0.7f64.ln())).abs() < 1e-12);
        assert!((1e-12f64.ln() + 27.631).abs() < 1e-3);
    }

    #[test]
    fn temporal_examples() {
        let half = vec![rec(0.5, 0.5, ScoreContext::Temporal); 3];
        assert!((temporal_loss(&half).unwrap() + 1.3863).abs() < 1e-4);
        let v = temporal_loss(&[rec(0.9, 0.1, ScoreContext::Temporal)]).unwrap();
        assert!((v - 2.0 * 0.9f64.ln()).abs() < 1e-15);
        assert!((v + 0.2107).abs() < 1e-4);
        assert!(matches!(temporal_loss(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn context_mismatch() {
        assert!(spatial_loss(&[rec(0.5, 0.5, ScoreContext::Temporal)]).is_err());
        assert!(local_refinement_loss(&[rec(0.5, 0.5, ScoreContext::Spatial)]).is_err());
    }

    #[test]
    fn local_examples() {
        let five: Vec<_> = (1..=5).map(|p| rec(0.5, 0.5, ScoreContext::LocalPart(p))).collect();
        let v = local_refinement_loss(&five).unwrap();
        assert!((v - 10.0 * 0.5f64.ln()).abs() < 1e-14);
        assert!((v + 6.9315).abs() < 1e-4);
        assert_eq!(local_refinement_loss(&[rec(1.0, 0.0, ScoreContext::LocalPart(1))]).unwrap(), 0.0);
        let v = local_refinement_loss(&[rec(0.8, 0.2, ScoreContext::LocalPart(3))]).unwrap();
        assert!((v + 0.4463).abs() < 1e-4);
        assert!(matches!(local_refinement_loss(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn group_means_not_pooled() {
        // Part 1 has two records, part 2 one; each group is averaged separately.
        let recs = [
            rec(0.5, 0.0, ScoreContext::LocalPart(1)),
            rec(1.0, 0.0, ScoreContext::LocalPart(1)),
            rec(0.25, 0.0, ScoreContext::LocalPart(2)),
        ];
        let want = 0.5 * 0.5f64.ln() + 0.25f64.ln();
        assert!((local_refinement_loss(&recs).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn record_validation() {
        assert!(ScoreRecord::new(1.1, 0.0, ScoreContext::Spatial).is_err());
        assert!(ScoreRecord::new(f64::NAN, 0.0, ScoreContext::Spatial).is_err());
        assert!(ScoreRecord::new(0.5, 0.5, ScoreContext::LocalPart(6)).is_err());
    }

    #[test]
    fn csv_and_breakdown() {
        let text = "context,part_index,real_score,fake_score\n\
                    spatial,,0.5,0.5\n\
                    temporal,0,0.9,0.1\n\
                    local,1,0.8,0.2\n";
        let recs = parse_scores_csv(text).unwrap();
        assert_eq!(recs.len(), 3);
        let b = LossBreakdown::from_records(&recs).unwrap();
        assert!((b.spatial.unwrap() + 1.3863).abs() < 1e-4);
        assert!((b.temporal.unwrap() + 0.2107).abs() < 1e-4);
        assert!((b.local_refinement.unwrap() + 0.4463).abs() < 1e-4);
        let total = b.weighted_total(&LossWeights::default());
        assert!((total - (b.spatial.unwrap() + b.temporal.unwrap() + b.local_refinement.unwrap())).abs() < 1e-15);
        let w = LossWeights { spatial: 0.0, ..LossWeights::default() };
        assert!((b.weighted_total(&w) - total + b.spatial.unwrap()).abs() < 1e-15);

        assert!(parse_scores_csv("bogus,1,0.5,0.5\n").is_err());
        assert!(parse_scores_csv("spatial,,0.5\n").is_err());
        assert!(parse_scores_csv("local,9,0.5,0.5\n").is_err());
        assert!(parse_scores_csv("").is_err());
    }

    fn any_context() -> impl Strategy<Value = ScoreContext> {
        prop_oneof![
            Just(ScoreContext::Spatial),
            Just(ScoreContext::Temporal),
            (1u8..=5).prop_map(ScoreContext::LocalPart),
        ]
    }

    proptest! {
        #[test]
        fn losses_are_finite_and_non_positive(
            scores in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..20),
            ctx in any_context(),
        ) {
            let recs: Vec<_> = scores.iter().map(|&(r, f)| rec(r, f, ctx)).collect();
            let v = match ctx {
                ScoreContext::Spatial => spatial_loss(&recs).unwrap(),
                ScoreContext::Temporal => temporal_loss(&recs).unwrap(),
                ScoreContext::LocalPart(_) => local_refinement_loss(&recs).unwrap(),
            };
            prop_assert!(v.is_finite());
            prop_assert!(v <= 0.0);
        }

        #[test]
        fn permutation_invariant(
            scores in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 1u8..=5), 1..20),
            rot in 0usize..20,
        ) {
            let recs: Vec<_> = scores.iter().map(|&(r, f, p)| rec(r, f, ScoreContext::LocalPart(p))).collect();
            let mut shuffled = recs.clone();
            shuffled.rotate_left(rot % recs.len());
            shuffled.reverse();
            let a = local_refinement_loss(&recs).unwrap();
            let b = local_refinement_loss(&shuffled).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            let sp: Vec<_> = recs.iter().map(|r| ScoreRecord { context: ScoreContext::Spatial, ..*r }).collect();
            let mut sp2 = sp.clone();
            sp2.reverse();
            prop_assert!((spatial_loss(&sp).unwrap() - spatial_loss(&sp2).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn strictly_decreasing_away_from_optimum(r in 0.01f64..1.0, f in 0.0f64..0.99, step in 0.001f64..0.01) {
            let at = |real: f64, fake: f64| spatial_loss(&[rec(real, fake, ScoreContext::Spatial)]).unwrap();
            prop_assert!(at(r - step.min(r - 0.001).max(0.0005), f) < at(r, f));
            prop_assert!(at(r, f + step) < at(r, f));
            prop_assert!(at(r, f) < 0.0 || (r == 1.0 && f == 0.0));
        }
    }
}
