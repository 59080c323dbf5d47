mod json;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use gwkit::compositing::{apply_residual, fuse, load_crops, paste_crop, psnr, ssim, BodyPartCrop};
use gwkit::config::{load_config, Settings, CONFIG_ENV};
use gwkit::facegeom::{blend_face, load_landmark_database, load_landmarks, top_m_candidates, vector_field};
use gwkit::gromov::gw_cy_gradient;
use gwkit::io::{load_feature_batch, load_image, load_mask, load_residual, save_image};
use gwkit::losses::{load_scores, LossBreakdown, LossWeights};
use gwkit::pipeline::{load_manifest, process_sequence, SequenceConfig};
use gwkit::sinkhorn::{sinkhorn_solve, Domain};
use gwkit::types::intra_costs;
use gwkit::{gw_solve, DiscreteDistribution, FeatureBatch};
use ndarray::Array1;
use serde_json::Value;

use json::{document, matrix, normalize, num, vector};

/// Batches above this size make each GW outer step noticeably slow.
const LARGE_BATCH_WARNING: usize = 4096;

#[derive(Parser)]
#[command(name = "gwkit", version, about = "Gromov-Wasserstein alignment and frame compositing tools")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// Flat TOML file of defaults (also read from $GWKIT_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Absolute entropic regularization.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Regularization as a multiple of the mean cost.
    #[arg(long, global = true, conflicts_with = "epsilon")]
    epsilon_rel: Option<f64>,
    #[arg(long, global = true)]
    max_outer: Option<usize>,
    #[arg(long, global = true)]
    max_sinkhorn: Option<usize>,
    /// L1 marginal tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    log_domain: bool,
    #[arg(long, global = true)]
    top_m: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// Comma-separated candidate weights.
    #[arg(long, global = true, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

impl Common {
    fn settings(&self) -> anyhow::Result<Settings> {
        let path = self
            .config
            .clone()
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        let file = match path {
            Some(p) => load_config(&p).with_context(|| format!("reading config {}", p.display()))?,
            None => Settings::default(),
        };
        let flags = Settings {
            epsilon: self.epsilon,
            epsilon_rel: self.epsilon_rel,
            max_outer: self.max_outer,
            max_sinkhorn: self.max_sinkhorn,
            tol: self.tol,
            log_domain: self.log_domain.then_some(true),
            top_m: self.top_m,
            alpha: self.alpha,
            beta: self.beta,
            lambdas: self.lambdas.clone(),
            jobs: self.jobs,
        };
        Ok(file.overlay(flags))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Entropic transport between two distributions for a cost matrix.
    Sinkhorn {
        /// Cost matrix CSV (n rows, m columns).
        #[arg(long)]
        cost: PathBuf,
        /// Source weights CSV; uniform when omitted.
        #[arg(long)]
        mu: Option<PathBuf>,
        #[arg(long)]
        nu: Option<PathBuf>,
    },
    /// Gromov-Wasserstein discrepancy between two feature batches.
    Gw {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        mu: Option<PathBuf>,
        #[arg(long)]
        nu: Option<PathBuf>,
        /// Also print the derivative of the objective with respect to the
        /// target intra-cost matrix.
        #[arg(long)]
        gradient: bool,
    },
    /// Rank database faces by orientation similarity to a query face.
    FaceSearch {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        database: PathBuf,
    },
    /// Blend candidate face crops into a generated face crop.
    FaceBlend {
        #[arg(long)]
        generated: PathBuf,
        /// Candidate crops, most similar first.
        #[arg(long, value_delimiter = ',', required = true)]
        faces: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply per-part residuals to a frame and paste the parts back.
    Compose {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        crops: PathBuf,
        /// `PART=residual.png`, repeatable.
        #[arg(long = "residual", value_parser = parse_residual_arg)]
        residuals: Vec<(u8, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine foreground and background under a binary mask.
    Fuse {
        #[arg(long)]
        fg: PathBuf,
        #[arg(long)]
        bg: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// SSIM and PSNR of a test image against a reference.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Adversarial loss terms from discriminator scores.
    Loss {
        /// CSV of context,part_index,real_score,fake_score.
        #[arg(long)]
        scores: PathBuf,
        /// GW term to include in the weighted total.
        #[arg(long)]
        gw_value: Option<f64>,
        /// Weights for gw,spatial,temporal,local.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        weights: Option<Vec<f64>>,
    },
    /// Run the per-frame chain over a manifest.
    Pipeline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_residual_arg(s: &str) -> Result<(u8, PathBuf), String> {
    let (part, path) = s.split_once('=').ok_or("expected PART=PATH")?;
    let part = part.trim().parse::<u8>().map_err(|e| format!("part index: {e}"))?;
    Ok((part, PathBuf::from(path)))
}

/// Failure classes mapped to exit codes.
enum Outcome {
    Ok,
    /// Printed output is valid but a solver stopped short of its tolerance.
    NotConverged,
    PartialFailure,
}

fn weights_file(path: Option<&Path>, n: usize) -> anyhow::Result<DiscreteDistribution> {
    let Some(path) = path else {
        return Ok(DiscreteDistribution::uniform(n)?);
    };
    let batch = load_feature_batch(path)?;
    let flat: Array1<f64> = batch.vectors().iter().copied().collect();
    if flat.len() != n {
        bail!("{}: expected {n} weights, found {}", path.display(), flat.len());
    }
    Ok(DiscreteDistribution::new(flat)?)
}

fn warn_if_large(batch: &FeatureBatch, path: &Path) {
    if batch.len() > LARGE_BATCH_WARNING {
        eprintln!(
            "warning: {} has {} rows; each outer iteration costs O(n^3)",
            path.display(),
            batch.len()
        );
    }
}

fn emit(doc: Value) {
    println!("{}", serde_json::to_string_pretty(&doc).unwrap_or_default());
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let settings = cli.common.settings()?;
    match cli.command {
        Command::Sinkhorn { cost, mu, nu } => {
            let cost_m = load_feature_batch(&cost)?;
            let c = cost_m.vectors();
            let (n, m) = c.dim();
            let mu = weights_file(mu.as_deref(), n)?;
            let nu = weights_file(nu.as_deref(), m)?;
            let sol = sinkhorn_solve(c, &mu, &nu, &settings.solver_config()?)?;
            emit(document(vec![
                ("coupling", matrix(sol.coupling.plan())),
                ("transport_cost", num(sol.transport_cost(c))),
                ("converged", sol.converged.into()),
                ("iterations", sol.state.iterations.into()),
                ("marginal_error", num(sol.coupling.marginal_violation())),
                ("epsilon", num(sol.epsilon)),
                (
                    "domain",
                    match sol.domain {
                        Domain::Standard => "standard",
                        Domain::Log => "log",
                    }
                    .into(),
                ),
            ]));
            Ok(if sol.converged { Outcome::Ok } else { Outcome::NotConverged })
        }
        Command::Gw { x, y, mu, nu, gradient } => {
            let bx = load_feature_batch(&x)?;
            let by = load_feature_batch(&y)?;
            warn_if_large(&bx, &x);
            warn_if_large(&by, &y);
            let mu = weights_file(mu.as_deref(), bx.len())?;
            let nu = weights_file(nu.as_deref(), by.len())?;
            let r = gw_solve(&bx, &by, &mu, &nu, &settings.solver_config()?)?;
            let mut fields = vec![
                ("transport_cost", num(r.transport_cost)),
                ("entropic_objective", num(r.entropic_objective)),
                ("entropic_bias_bound", num(r.entropic_bias_bound)),
                ("converged", r.converged.into()),
                ("outer_iterations", r.outer_iterations.into()),
                ("epsilon", num(r.epsilon)),
                ("coupling", matrix(r.coupling.plan())),
            ];
            if gradient {
                let g = gw_cy_gradient(&intra_costs(&bx), &intra_costs(&by), r.coupling.plan())?;
                fields.push(("gradient_cy", matrix(g.view())));
            }
            emit(document(fields));
            Ok(if r.converged { Outcome::Ok } else { Outcome::NotConverged })
        }
        Command::FaceSearch { query, database } => {
            let q = vector_field(&load_landmarks(&query)?)?;
            let db = gwkit::facegeom::database_fields(&load_landmark_database(&database)?)?;
            let top = top_m_candidates(&q, &db, settings.top_m()?)?;
            let candidates = top
                .candidates
                .iter()
                .map(|c| serde_json::json!({"frame_id": c.frame_id, "similarity": num(c.similarity)}))
                .collect();
            emit(document(vec![
                ("candidates", Value::Array(candidates)),
                ("fewer_than_requested", top.fewer_than_requested.into()),
            ]));
            Ok(Outcome::Ok)
        }
        Command::FaceBlend { generated, faces, out } => {
            let g = load_image(&generated)?;
            let f = faces.iter().map(load_image).collect::<Result<Vec<_>, _>>()?;
            let weights = settings.blend_weights(f.len())?;
            save_image(&blend_face(&f, &g, &weights)?, &out)?;
            emit(document(vec![
                ("out", out.display().to_string().into()),
                ("alpha", num(weights.alpha)),
                ("beta", num(weights.beta)),
                ("lambdas", vector(Array1::from(weights.lambdas).view())),
            ]));
            Ok(Outcome::Ok)
        }
        Command::Compose { frame, crops, residuals, out } => {
            let base = load_image(&frame)?;
            let rects = load_crops(&crops)?;
            rects.check_bounds(base.dims())?;
            let mut result = base.clone();
            let mut clamped = serde_json::Map::new();
            let mut sorted = residuals;
            sorted.sort_by_key(|(p, _)| *p);
            for (part, path) in &sorted {
                let rect = rects
                    .part(*part)
                    .ok_or_else(|| anyhow!("no crop rectangle for part {part} in {}", crops.display()))?;
                let crop = BodyPartCrop::cut(&base, rect)?;
                let refined = apply_residual(&crop, &load_residual(path)?)?;
                clamped.insert(part.to_string(), refined.clamped.into());
                result = paste_crop(&result, &refined.crop)?;
            }
            save_image(&result, &out)?;
            emit(document(vec![
                ("out", out.display().to_string().into()),
                ("clamp_counts", Value::Object(clamped)),
            ]));
            Ok(Outcome::Ok)
        }
        Command::Fuse { fg, bg, mask, out } => {
            let fused = fuse(&load_image(&fg)?, &load_image(&bg)?, &load_mask(&mask)?)?;
            save_image(&fused, &out)?;
            emit(document(vec![("out", out.display().to_string().into())]));
            Ok(Outcome::Ok)
        }
        Command::Metrics { reference, test } => {
            let (a, b) = (load_image(&reference)?, load_image(&test)?);
            emit(document(vec![("ssim", num(ssim(&a, &b)?)), ("psnr", num(psnr(&a, &b)?))]));
            Ok(Outcome::Ok)
        }
        Command::Loss { scores, gw_value, weights } => {
            let mut terms = LossBreakdown::from_records(&load_scores(&scores)?)?;
            terms.gw = gw_value;
            let w = match weights.as_deref() {
                Some(&[gw, spatial, temporal, local]) => LossWeights { gw, spatial, temporal, local },
                Some(_) => bail!("--weights takes four values: gw,spatial,temporal,local"),
                None => LossWeights::default(),
            };
            let opt = |v: Option<f64>| v.map_or(Value::Null, num);
            emit(document(vec![
                ("gw", opt(terms.gw)),
                ("spatial", opt(terms.spatial)),
                ("temporal", opt(terms.temporal)),
                ("local_refinement", opt(terms.local_refinement)),
                ("weighted_total", num(terms.weighted_total(&w))),
            ]));
            Ok(Outcome::Ok)
        }
        Command::Pipeline { manifest, out } => {
            let manifests = load_manifest(&manifest)?;
            let top_m = settings.top_m()?;
            let cfg = SequenceConfig {
                weights: settings.blend_weights(top_m)?,
                top_m,
                jobs: settings.jobs(),
                out_dir: Some(out),
            };
            let report = process_sequence(&manifests, &cfg)?;
            for f in &report.failures {
                eprintln!("{f}");
            }
            emit(normalize(report.to_json()));
            Ok(if report.has_failures() { Outcome::PartialFailure } else { Outcome::Ok })
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|e| e.downcast_ref::<gwkit::Error>().is_some_and(gwkit::Error::is_numerical));
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("error: solver stopped before reaching the marginal tolerance");
            ExitCode::from(2)
        }
        Ok(Outcome::PartialFailure) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
