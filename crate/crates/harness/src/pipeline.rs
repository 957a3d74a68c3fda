//! End-to-end run: sources, splits, per-trial preparation, training,
//! prediction, smoothing and evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nailforce_core::alignment::{align_from, warp, AlignmentConfig};
use nailforce_core::calibration::{marker_angle_search, rotate_forces, torque_shift, trial_contact, ContactPoint, Predictor};
use nailforce_core::imaging::{centering_shift, segment_nail, shift_frame};
use nailforce_core::io::{list_trial_dirs, read_json, read_meta, read_trial, read_truth, write_json};
use nailforce_core::smooth::smooth_columns;
use nailforce_core::sync::{synchronize_trial, Roi, SyncConfig};
use nailforce_core::synth::{led_roi, Generator, GeneratorConfig, GraspKey, TrialTruth};
use nailforce_core::{flatten_image, ChannelPolicy, Finger, ImageFrame, SplitTag, TargetVector, Trial, TrialKey};
use nailforce_learn::gp::GpMode;
use nailforce_learn::{ImageShape, LabeledSequence, PredictorConfig, PredictorModel};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Source};
use crate::error::{Error, Result, StageExt};
use crate::report::{evaluate, predictions_csv, EvalReport, ModelSummary, ReportContext, SyncSummary, TrialPrediction};
use crate::splits::{make_splits, ModelGroup, SplitScheme};

/// Generator settings stored next to a synthetic dataset so the oracle can
/// be rebuilt from the directory alone.
pub const GENERATOR_FILE: &str = "generator.json";

/// A trial with its generator truth, when there is one.
pub struct LoadedTrial {
    pub trial: Trial,
    pub truth: Option<TrialTruth>,
}

/// Trials grouped into load units: a grasp (both fingers) for the generator,
/// a single directory for datasets.
pub enum Origin {
    Generator(Generator),
    Dataset { dirs: Vec<PathBuf>, generator: Option<Generator> },
}

impl Origin {
    pub fn open(source: &Source) -> Result<Self> {
        match source {
            Source::Synthetic { generator } => Ok(Origin::Generator(Generator::new(generator.clone()).stage("synth")?)),
            Source::Dataset { dir } => {
                let dirs = list_trial_dirs(dir).stage("io")?;
                let gen_path = dir.join(GENERATOR_FILE);
                let generator = if gen_path.exists() {
                    let c: GeneratorConfig = read_json(&gen_path).stage("io")?;
                    Some(Generator::new(c).stage("synth")?)
                } else {
                    None
                };
                Ok(Origin::Dataset { dirs, generator })
            }
        }
    }

    pub fn generator(&self) -> Option<&Generator> {
        match self {
            Origin::Generator(g) => Some(g),
            Origin::Dataset { generator, .. } => generator.as_ref(),
        }
    }

    pub fn n_units(&self) -> usize {
        match self {
            Origin::Generator(g) => g.grasps().len(),
            Origin::Dataset { dirs, .. } => dirs.len(),
        }
    }

    /// Keys of every trial with the unit each one belongs to.
    pub fn keys(&self) -> Result<Vec<(TrialKey, usize)>> {
        match self {
            Origin::Generator(g) => Ok(g
                .grasps()
                .iter()
                .enumerate()
                .flat_map(|(u, k)| Finger::BOTH.map(|f| (k.trial_key(f), u)))
                .collect()),
            Origin::Dataset { dirs, .. } => dirs
                .iter()
                .enumerate()
                .map(|(u, d)| {
                    let m = read_meta(d).stage("io")?;
                    let finger = Finger::parse(&m.finger).stage("io")?;
                    Ok((
                        TrialKey {
                            participant: m.participant,
                            finger,
                            weight_g: m.weight_g,
                            surface_id: m.surface_id,
                            repetition: m.repetition,
                            session: m.session,
                        },
                        u,
                    ))
                })
                .collect(),
        }
    }

    pub fn load(&self, unit: usize) -> Result<Vec<LoadedTrial>> {
        match self {
            Origin::Generator(g) => {
                let key = g.grasps()[unit];
                Ok(g.generate(&key)
                    .stage("synth")?
                    .into_iter()
                    .map(|s| LoadedTrial {
                        trial: s.trial,
                        truth: Some(s.truth),
                    })
                    .collect())
            }
            Origin::Dataset { dirs, .. } => {
                let d = &dirs[unit];
                Ok(vec![LoadedTrial {
                    trial: read_trial(d).stage("io")?,
                    truth: read_truth(d).stage("io")?,
                }])
            }
        }
    }

    fn load_key(&self, key: &TrialKey, unit: usize) -> Result<LoadedTrial> {
        self.load(unit)?
            .into_iter()
            .find(|t| t.trial.key == *key)
            .ok_or_else(|| Error::stage("io", format!("trial {key:?} missing from its unit")))
    }
}

pub fn grasp_of(key: &TrialKey) -> GraspKey {
    GraspKey {
        participant: key.participant,
        session: key.session,
        weight_g: key.weight_g,
        surface_id: key.surface_id,
        repetition: key.repetition,
    }
}

/// LED region of a frame canvas.
pub fn roi_for(config: &PipelineConfig, size: (usize, usize)) -> Roi {
    config.led_roi.unwrap_or_else(|| {
        let (r, c, s) = led_roi(size);
        Roi::square(r, c, s)
    })
}

/// Zeroes the LED region so it cannot leak into segmentation or features.
pub fn blank_roi(frame: &ImageFrame, roi: Roi) -> ImageFrame {
    let mut f = frame.clone();
    for r in roi.row..(roi.row + roi.height).min(f.height()) {
        for c in roi.col..(roi.col + roi.width).min(f.width()) {
            for k in 0..f.channels() {
                f.set(r, c, k, 0.0);
            }
        }
    }
    f
}

/// Training label of one synchronised frame: forces rotated into the
/// fingertip frame, torques re-referenced to the contact point.
pub fn frame_label(trial: &Trial, frame: usize, w: &nailforce_core::Wrench, contact: &ContactPoint) -> TargetVector {
    let f = rotate_forces(w.f, trial.marker_angles[frame], trial.theta_r_deg);
    let shift = torque_shift(w.f, contact);
    let tau = std::array::from_fn(|i| w.tau[i] - shift[i]);
    TargetVector::new(f, tau, trial.surface.c1, trial.surface.c2)
}

/// Summary of one trial's preparation, persisted as `trials.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub key: TrialKey,
    pub tag: SplitTag,
    pub offset_s: f64,
    pub sync_score: f64,
    pub true_offset_s: Option<f64>,
    pub contact: ContactPoint,
    pub centering: (isize, isize),
    /// Alignment energy before and after registering the first frame.
    pub align_energy: Option<(f64, f64)>,
    pub frames_used: usize,
}

struct Prepared {
    summary: TrialSummary,
    frames: Vec<usize>,
    times: Vec<f64>,
    features: Vec<Vec<f64>>,
    labels: Vec<TargetVector>,
    oracle: Option<Vec<TargetVector>>,
    static_phase: Option<Vec<bool>>,
}

/// Frames kept from one trial.
#[derive(Debug, Clone, Copy)]
enum FramePlan {
    Stride(usize),
    Random { count: usize, seed: u64 },
}

impl FramePlan {
    fn select(self, n: usize) -> Vec<usize> {
        match self {
            FramePlan::Stride(s) => (0..n).step_by(s.max(1)).collect(),
            FramePlan::Random { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx = sample(&mut rng, n, count.clamp(1, n)).into_vec();
                idx.sort_unstable();
                idx
            }
        }
    }
}

/// Centred first frame of a trial, used as a group's alignment reference.
fn reference_frame(trial: &Trial, config: &PipelineConfig) -> Result<ImageFrame> {
    let first = trial
        .frames
        .first()
        .ok_or_else(|| Error::stage("track", "trial without frames"))?;
    let size = (first.height(), first.width());
    let clean = blank_roi(first, roi_for(config, size));
    let mask = segment_nail(&clean, &config.segment).stage("track")?;
    let (dr, dc) = centering_shift(&mask, size).stage("track")?;
    Ok(shift_frame(&clean, dr, dc, size))
}

struct PrepContext<'a> {
    config: &'a PipelineConfig,
    align: Option<AlignmentConfig>,
    generator: Option<&'a Generator>,
}

fn prepare(lt: LoadedTrial, tag: SplitTag, plan: FramePlan, reference: Option<&ImageFrame>, ctx: &PrepContext) -> Result<Prepared> {
    let config = ctx.config;
    let LoadedTrial { trial, truth } = lt;
    trial.validate().stage("io")?;
    let first = trial
        .frames
        .first()
        .ok_or_else(|| Error::stage("track", "trial without frames"))?;
    let size = (first.height(), first.width());
    let roi = roi_for(config, size);

    let synced = synchronize_trial(
        &trial,
        &SyncConfig {
            max_offset_s: config.max_offset_s,
            roi,
        },
    )
    .stage("sync")?;

    let contact = trial_contact(&trial.wrenches, &trial.surface, &config.contact).stage("calibrate")?;

    let clean0 = blank_roi(first, roi);
    let mask = segment_nail(&clean0, &config.segment).stage("track")?;
    let (dr, dc) = centering_shift(&mask, size).stage("track")?;
    let center = |f: &ImageFrame| shift_frame(&blank_roi(f, roi), dr, dc, size);

    let (transform, align_energy) = match (&ctx.align, reference) {
        (Some(acfg), Some(r)) => {
            let res = align_from(r, &center(first), acfg, None).stage("align")?;
            let e = (res.trace[0], *res.trace.last().unwrap_or(&res.trace[0]));
            (Some(res.transform), Some(e))
        }
        _ => (None, None),
    };

    let frames = plan.select(trial.frames.len());
    let mut features = Vec::with_capacity(frames.len());
    for &i in &frames {
        let c = center(&trial.frames[i]);
        let aligned = match (&transform, &ctx.align, reference) {
            (Some(t), Some(acfg), Some(r)) if config.align.per_frame => {
                align_from(r, &c, acfg, Some(t)).stage("align")?.aligned
            }
            (Some(t), _, _) => warp(&c, t).stage("align")?,
            _ => c,
        };
        features.push(flatten_image(&aligned, ChannelPolicy::default()).stage("align")?);
    }
    let labels: Vec<TargetVector> = frames
        .iter()
        .map(|&i| frame_label(&trial, i, &synced.labels[i], &contact))
        .collect();
    let times: Vec<f64> = frames.iter().map(|&i| synced.trial.frames[i].timestamp).collect();

    let oracle = match (ctx.generator, &truth) {
        (Some(g), Some(t)) if config.oracle && tag == SplitTag::Test => {
            let key = trial.key;
            let maps = g.canonical_maps(key.participant, key.session);
            let grasp = grasp_of(&key);
            Some(
                frames
                    .iter()
                    .map(|&i| maps.invert_green(&g.oracle_green(&maps, &grasp, key.finger, i, &t.targets[i])))
                    .collect(),
            )
        }
        _ => None,
    };
    let static_phase = truth.as_ref().map(|t| {
        let (a, b) = t.profile.static_window();
        frames
            .iter()
            .map(|&i| t.frame_times[i] >= a && t.frame_times[i] <= b)
            .collect()
    });

    Ok(Prepared {
        summary: TrialSummary {
            key: trial.key,
            tag,
            offset_s: synced.offset,
            sync_score: synced.score,
            true_offset_s: truth.as_ref().map(|t| t.camera_offset),
            contact,
            centering: (dr, dc),
            align_energy,
            frames_used: frames.len(),
        },
        frames,
        times,
        features,
        labels,
        oracle,
        static_phase,
    })
}

/// Predictor actually trained for a scheme: the pooled single-model scheme
/// switches GPs to FITC.
pub fn effective_predictor(config: &PipelineConfig) -> PredictorConfig {
    match (&config.predictor, config.split) {
        (PredictorConfig::Gp { gp }, SplitScheme::SingleModelAll { inducing_fraction, .. }) => {
            let mut gp = *gp;
            gp.mode = GpMode::Fitc {
                inducing_frac: inducing_fraction,
            };
            gp.hyper_subset = None;
            PredictorConfig::Gp { gp }
        }
        (p, _) => p.clone(),
    }
}

/// Serves cached predictions to the marker search; the feature is the
/// frame's index into the cache.
struct Cached<'a>(&'a [TargetVector]);

impl Predictor for Cached<'_> {
    fn predict(&self, x: &[f64]) -> TargetVector {
        self.0[x[0] as usize]
    }
}

pub fn sync_summary(trials: &[TrialSummary]) -> SyncSummary {
    let scores: Vec<f64> = trials.iter().map(|t| t.sync_score).collect();
    let offset_errors: Vec<f64> = trials
        .iter()
        .filter_map(|t| t.true_offset_s.map(|o| (o - t.offset_s).abs()))
        .collect();
    SyncSummary {
        trials: trials.len(),
        mean_score: scores.iter().sum::<f64>() / scores.len().max(1) as f64,
        min_score: scores.iter().copied().fold(f64::INFINITY, f64::min),
        max_offset_error: (!offset_errors.is_empty()).then(|| offset_errors.iter().copied().fold(0.0, f64::max)),
    }
}

/// Predicts, and optionally smooths, the prepared frames of one trial.
fn predict_trial(model: &PredictorModel, p: &Prepared, config: &PipelineConfig) -> Result<TrialPrediction> {
    let pred = model.predict_sequence(&p.features).stage("predict")?;
    let smoother = &config.smooth.smoother;
    let smoothed = if config.smooth.enabled && pred.mean.len() >= smoother.degree + 2 {
        let rows: Vec<Vec<f64>> = pred.mean.iter().map(|t| t.0.to_vec()).collect();
        smooth_columns(&rows, smoother)
            .stage("smooth")?
            .into_iter()
            .map(|r| TargetVector(std::array::from_fn(|c| r[c])))
            .collect()
    } else {
        pred.mean.clone()
    };
    Ok(TrialPrediction {
        key: p.summary.key,
        frames: p.frames.clone(),
        times: p.times.clone(),
        labels: p.labels.clone(),
        raw: pred.mean,
        smoothed,
        std: pred.std,
        oracle: p.oracle.clone(),
        static_phase: p.static_phase.clone(),
    })
}

pub struct PipelineOutput {
    pub report: EvalReport,
    pub predictions: Vec<TrialPrediction>,
    pub splits: Vec<(TrialKey, SplitTag)>,
    pub trials: Vec<TrialSummary>,
}

#[derive(Serialize)]
struct SplitRecord {
    key: TrialKey,
    tag: SplitTag,
}

fn save_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::stage("io", format!("{}: {e}", path.display())))
}

/// Runs every stage and writes the artifacts under `config.output`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let out = &config.output;
    std::fs::create_dir_all(out).stage("io")?;
    save_text(&out.join("config.toml"), &config.to_toml()?)?;

    let origin = Origin::open(&config.source)?;
    let keyed = origin.keys()?;
    let keys: Vec<TrialKey> = keyed.iter().map(|(k, _)| *k).collect();
    let predictor = effective_predictor(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tags = make_splits(&keys, &config.split, predictor.uses_validation(), &mut rng)?;
    let splits: Vec<(TrialKey, SplitTag)> = keys.iter().copied().zip(tags.iter().copied()).collect();
    write_json(
        &out.join("splits.json"),
        &splits.iter().map(|&(key, tag)| SplitRecord { key, tag }).collect::<Vec<_>>(),
    )
    .stage("io")?;

    // frame budgets per model
    let scheme = config.split;
    let mut per_group: BTreeMap<ModelGroup, [usize; 3]> = BTreeMap::new();
    let mut participants: BTreeMap<ModelGroup, Vec<u32>> = BTreeMap::new();
    for (k, t) in keys.iter().zip(&tags) {
        let g = scheme.model_group(k);
        per_group.entry(g).or_default()[*t as usize] += 1;
        let ps = participants.entry(g).or_default();
        if *t == SplitTag::Train && !ps.contains(&k.participant) {
            ps.push(k.participant);
        }
    }
    let budget = |g: &ModelGroup| -> usize {
        match scheme {
            SplitScheme::SingleModelAll { data_fraction, .. } => {
                let pooled = config.features.train_frames * participants[g].len().max(1);
                ((data_fraction * pooled as f64).round() as usize).max(1)
            }
            _ => config.features.train_frames,
        }
    };
    let sequential = matches!(predictor, PredictorConfig::RnnFd { .. });
    let plan_for = |idx: usize, key: &TrialKey, tag: SplitTag, n_frames: usize| -> FramePlan {
        let g = scheme.model_group(key);
        let counts = per_group[&g];
        let (total, trials) = match tag {
            SplitTag::Test => return FramePlan::Stride(config.features.test_stride),
            SplitTag::Train => (budget(&g), counts[SplitTag::Train as usize]),
            SplitTag::Validation => (config.features.val_frames, counts[SplitTag::Validation as usize]),
        };
        let quota = total.div_ceil(trials.max(1)).clamp(1, n_frames.max(1));
        if sequential {
            FramePlan::Stride(n_frames / quota)
        } else {
            FramePlan::Random {
                count: quota,
                seed: config.seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            }
        }
    };

    // alignment references: the first training trial of every model group
    let mut references: BTreeMap<ModelGroup, ImageFrame> = BTreeMap::new();
    if config.align.enabled {
        for ((key, unit), tag) in keyed.iter().zip(&tags) {
            let g = scheme.model_group(key);
            if *tag == SplitTag::Train && !references.contains_key(&g) {
                let lt = origin.load_key(key, *unit)?;
                references.insert(g, reference_frame(&lt.trial, config)?);
            }
        }
    }
    let align = if config.align.enabled {
        let h = references.values().next().map_or(0, |f| f.height());
        Some(config.align.resolve(h))
    } else {
        None
    };
    let ctx = PrepContext {
        config,
        align,
        generator: origin.generator(),
    };

    let index_of: BTreeMap<TrialKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let prepared: Vec<Prepared> = (0..origin.n_units())
        .into_par_iter()
        .map(|u| -> Result<Vec<Prepared>> {
            origin
                .load(u)?
                .into_iter()
                .map(|lt| {
                    let key = lt.trial.key;
                    let idx = *index_of
                        .get(&key)
                        .ok_or_else(|| Error::stage("io", format!("unexpected trial {key:?}")))?;
                    let tag = tags[idx];
                    let plan = plan_for(idx, &key, tag, lt.trial.frames.len());
                    prepare(lt, tag, plan, references.get(&scheme.model_group(&key)), &ctx)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let trials: Vec<TrialSummary> = prepared.iter().map(|p| p.summary.clone()).collect();
    write_json(&out.join("trials.json"), &trials).stage("io")?;

    let shape = {
        let first = prepared
            .first()
            .ok_or_else(|| Error::stage("track", "no trials"))?;
        let n = first.features.first().map_or(0, Vec::len);
        let h = references.values().next().map(|f| f.height());
        let (height, width) = match (h, &config.source) {
            (Some(h), _) => (h, n / h),
            (None, Source::Synthetic { generator }) => (generator.image_size[0], generator.image_size[1]),
            (None, Source::Dataset { .. }) => (1, n),
        };
        ImageShape {
            height,
            width,
            channels: 1,
        }
    };

    let mut groups: BTreeMap<ModelGroup, [Vec<&Prepared>; 3]> = BTreeMap::new();
    for p in &prepared {
        groups.entry(scheme.model_group(&p.summary.key)).or_default()[p.summary.tag as usize].push(p);
    }
    if config.save_models {
        std::fs::create_dir_all(out.join("models")).stage("io")?;
    }
    let seqs = |ps: &[&Prepared]| -> Vec<LabeledSequence> {
        ps.iter()
            .map(|p| LabeledSequence {
                features: p.features.clone(),
                targets: p.labels.clone(),
            })
            .collect()
    };
    let mut predictions = Vec::new();
    let mut models = Vec::new();
    for (gi, (group, [train, val, test])) in groups.iter().enumerate() {
        if test.is_empty() {
            continue;
        }
        if train.is_empty() {
            return Err(Error::stage("train", format!("model {} has no training trials", group.label())));
        }
        let train_set = seqs(train);
        let val_set = seqs(val);
        let (model, report) =
            PredictorModel::train(&predictor, &train_set, &val_set, shape, config.seed.wrapping_add(gi as u64)).stage("train")?;
        if config.save_models {
            model.save(&out.join("models").join(format!("{}.json", group.label()))).stage("io")?;
        }
        let mut group_raw = Vec::new();
        let mut group_labels = Vec::new();
        for p in test {
            let tp = predict_trial(&model, p, config)?;
            group_raw.extend(tp.raw.iter().copied());
            group_labels.extend(tp.labels.iter().copied());
            predictions.push(tp);
        }
        let marker_offset_deg = if config.marker_search {
            let idx: Vec<Vec<f64>> = (0..group_raw.len()).map(|i| vec![i as f64]).collect();
            Some(marker_angle_search(&idx, &group_labels, &Cached(&group_raw)).stage("calibrate")?)
        } else {
            None
        };
        models.push(ModelSummary {
            group: group.label(),
            predictor: predictor.name().into(),
            train_trials: train.len(),
            train_frames: train.iter().map(|p| p.frames.len()).sum(),
            val_frames: val.iter().map(|p| p.frames.len()).sum(),
            test_trials: test.len(),
            epochs: report.as_ref().map(|r| r.train_loss.len().saturating_sub(1)),
            best_epoch: report.as_ref().and_then(|r| r.best_epoch),
            final_train_loss: report.as_ref().and_then(|r| r.train_loss.last().copied()),
            marker_offset_deg,
        });
    }

    let sync = sync_summary(&trials);
    let gravity = origin.generator().map_or(9.82, |g| g.config().gravity);
    let report = evaluate(
        &predictions,
        ReportContext {
            scheme: scheme.name().into(),
            predictor: predictor.name().into(),
            sync,
            models,
            gravity,
        },
    )?;
    save_text(&out.join("predictions.csv"), &predictions_csv(&predictions))?;
    report.write(out)?;
    Ok(PipelineOutput {
        report,
        predictions,
        splits,
        trials,
    })
}

/// A trained model with the alignment reference its features were
/// registered to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub model: PredictorModel,
    pub reference: Option<ImageFrame>,
    pub shape: ImageShape,
}

impl ModelBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self).stage("io")
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path).stage("io")
    }
}

fn prep_context<'a>(config: &'a PipelineConfig, origin: &'a Origin, reference: Option<&ImageFrame>) -> PrepContext<'a> {
    PrepContext {
        config,
        align: reference.filter(|_| config.align.enabled).map(|r| config.align.resolve(r.height())),
        generator: origin.generator(),
    }
}

fn feature_shape(reference: Option<&ImageFrame>, prepared: &[Prepared]) -> ImageShape {
    let n = prepared
        .first()
        .and_then(|p| p.features.first())
        .map_or(0, Vec::len);
    match reference {
        Some(r) => ImageShape {
            height: r.height(),
            width: r.width(),
            channels: 1,
        },
        None => ImageShape {
            height: 1,
            width: n,
            channels: 1,
        },
    }
}

/// Trains one model on every trial of a source. Neural predictors hold
/// out a quarter of the trials for early stopping.
pub fn train_bundle(config: &PipelineConfig) -> Result<(ModelBundle, Option<nailforce_learn::neural::TrainReport>)> {
    config.validate()?;
    let origin = Origin::open(&config.source)?;
    let keyed = origin.keys()?;
    let (first_key, first_unit) = *keyed.first().ok_or_else(|| Error::stage("io", "no trials"))?;
    let reference = if config.align.enabled {
        Some(reference_frame(&origin.load_key(&first_key, first_unit)?.trial, config)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = keyed.len();
    let n_val = if config.predictor.uses_validation() && n >= 4 { n / 4 } else { 0 };
    let val: Vec<usize> = sample(&mut rng, n, n_val).into_vec();
    let tags: Vec<SplitTag> = (0..n)
        .map(|i| if val.contains(&i) { SplitTag::Validation } else { SplitTag::Train })
        .collect();
    let ctx = prep_context(config, &origin, reference.as_ref());
    let sequential = matches!(config.predictor, PredictorConfig::RnnFd { .. });
    let n_train = n - n_val;
    let prepared: Vec<Prepared> = (0..origin.n_units())
        .into_par_iter()
        .map(|u| -> Result<Vec<Prepared>> {
            origin
                .load(u)?
                .into_iter()
                .map(|lt| {
                    let idx = keyed.iter().position(|(k, _)| *k == lt.trial.key).unwrap_or(0);
                    let tag = tags[idx];
                    let (total, count) = match tag {
                        SplitTag::Validation => (config.features.val_frames, n_val),
                        _ => (config.features.train_frames, n_train),
                    };
                    let frames = lt.trial.frames.len();
                    let quota = total.div_ceil(count.max(1)).clamp(1, frames.max(1));
                    let plan = if sequential {
                        FramePlan::Stride(frames / quota)
                    } else {
                        FramePlan::Random {
                            count: quota,
                            seed: config.seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                        }
                    };
                    prepare(lt, tag, plan, reference.as_ref(), &ctx)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let shape = feature_shape(reference.as_ref(), &prepared);
    let seqs = |tag: SplitTag| -> Vec<LabeledSequence> {
        prepared
            .iter()
            .filter(|p| p.summary.tag == tag)
            .map(|p| LabeledSequence {
                features: p.features.clone(),
                targets: p.labels.clone(),
            })
            .collect()
    };
    let (model, report) = PredictorModel::train(
        &config.predictor,
        &seqs(SplitTag::Train),
        &seqs(SplitTag::Validation),
        shape,
        config.seed,
    )
    .stage("train")?;
    Ok((
        ModelBundle {
            model,
            reference,
            shape,
        },
        report,
    ))
}

/// Predictions of a trained bundle for every trial of a source, at the
/// configured test stride.
pub fn predict_source(config: &PipelineConfig, bundle: &ModelBundle) -> Result<(Vec<TrialPrediction>, Vec<TrialSummary>)> {
    config.validate()?;
    let origin = Origin::open(&config.source)?;
    let ctx = prep_context(config, &origin, bundle.reference.as_ref());
    let prepared: Vec<Prepared> = (0..origin.n_units())
        .into_par_iter()
        .map(|u| -> Result<Vec<Prepared>> {
            origin
                .load(u)?
                .into_iter()
                .map(|lt| {
                    prepare(
                        lt,
                        SplitTag::Test,
                        FramePlan::Stride(config.features.test_stride),
                        bundle.reference.as_ref(),
                        &ctx,
                    )
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let preds = prepared
        .iter()
        .map(|p| predict_trial(&bundle.model, p, config))
        .collect::<Result<Vec<_>>>()?;
    Ok((preds, prepared.into_iter().map(|p| p.summary).collect()))
}

/// Report for predictions made outside the full pipeline.
pub fn evaluate_predictions(
    config: &PipelineConfig,
    preds: &[TrialPrediction],
    trials: &[TrialSummary],
    models: Vec<ModelSummary>,
) -> Result<EvalReport> {
    let gravity = match &config.source {
        Source::Synthetic { generator } => generator.gravity,
        Source::Dataset { .. } => Origin::open(&config.source)?
            .generator()
            .map_or(9.82, |g| g.config().gravity),
    };
    evaluate(
        preds,
        ReportContext {
            scheme: "external".into(),
            predictor: models.first().map_or_else(|| "unknown".into(), |m| m.predictor.clone()),
            sync: sync_summary(trials),
            models,
            gravity,
        },
    )
}
