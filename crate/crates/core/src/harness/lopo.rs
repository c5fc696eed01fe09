//! Leave-one-person-out experiment driver.

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::eval::{evaluate, midpoint_predictions, score, window_targets, LastFrameLinear};
use super::report::{FoldResult, Report};
use super::train::{train, TrainOutcome};
use crate::data::synth::derive_seed;
use crate::data::{generate_cohort, lopo_split, make_windows, Fold, SessionRecording, Standardizer, WindowPair};
use crate::error::{Error, Result};
use crate::kinematics::{Skeleton, VertexCloud};
use crate::model::Imp2Head;
use crate::rotations::smooth_ground_truth;

const STREAM_MODEL_INIT: u64 = 10;
const STREAM_TRAIN: u64 = 11;
const STREAM_BODY: u64 = 12;

/// Sessions with optional target smoothing applied, ready for windowing.
pub fn prepare_sessions(cfg: &ExperimentConfig, sessions: &[SessionRecording]) -> Result<Vec<SessionRecording>> {
    sessions
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.check_aligned()?;
            if cfg.train.smooth_targets {
                s.poses = smooth_ground_truth(&s.poses, &cfg.smoothing)?;
            }
            Ok(s)
        })
        .collect()
}

fn session(sessions: &[SessionRecording], id: u32) -> Result<&SessionRecording> {
    sessions
        .iter()
        .find(|s| s.person_id == id)
        .ok_or_else(|| Error::Data(format!("no session for person {id}")))
}

pub fn windows_for(cfg: &ExperimentConfig, sessions: &[SessionRecording], ids: &[u32]) -> Result<Vec<WindowPair>> {
    let l_out = cfg.model.l_out;
    let stride = cfg.train.stride_for(l_out);
    let mut out = Vec::new();
    for &id in ids {
        out.extend(make_windows(
            session(sessions, id)?,
            l_out,
            stride,
            cfg.train.window_mode,
        )?);
    }
    Ok(out)
}

/// Feature statistics over every impedance frame of the given persons.
pub fn fit_standardizer(sessions: &[SessionRecording], ids: &[u32]) -> Result<Standardizer> {
    let mut rows = Vec::new();
    for &id in ids {
        rows.extend(session(sessions, id)?.impedance.iter().map(|f| f.features()));
    }
    Standardizer::fit(&rows)
}

/// A trained model with the statistics its inputs were standardized with.
pub struct Trained {
    pub model: Imp2Head,
    pub norm: Standardizer,
    pub outcome: TrainOutcome,
}

/// Trains one model on `fit_ids`, early-stopping on `val_ids` when given.
pub fn train_on(
    cfg: &ExperimentConfig,
    sessions: &[SessionRecording],
    fit_ids: &[u32],
    val_ids: &[u32],
    stream_key: u32,
) -> Result<Trained> {
    let norm = fit_standardizer(sessions, fit_ids)?;
    let train_w = windows_for(cfg, sessions, fit_ids)?;
    let val_w = windows_for(cfg, sessions, val_ids)?;
    let mut model = Imp2Head::new(cfg.model.clone(), derive_seed(cfg.seed, stream_key, STREAM_MODEL_INIT))?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = derive_seed(cfg.seed, stream_key, STREAM_TRAIN);
    let outcome = train(&mut model, &train_w, &val_w, &norm, &tcfg, &cfg.limits, false)?;
    Ok(Trained { model, norm, outcome })
}

pub fn body(cfg: &ExperimentConfig) -> Result<(Skeleton, VertexCloud)> {
    cfg.body.build(derive_seed(cfg.seed, 0, STREAM_BODY))
}

fn run_fold(
    cfg: &ExperimentConfig,
    sessions: &[SessionRecording],
    fold: &Fold,
    index: usize,
    skeleton: &Skeleton,
    cloud: &VertexCloud,
) -> Result<FoldResult> {
    // Rotate the validation person through the training pool.
    let validation = (cfg.train.patience > 0 && fold.train.len() >= 2).then(|| fold.train[index % fold.train.len()]);
    let fit_ids: Vec<u32> = fold.train.iter().copied().filter(|&p| Some(p) != validation).collect();
    let val_ids: Vec<u32> = validation.into_iter().collect();
    let trained = train_on(cfg, sessions, &fit_ids, &val_ids, fold.test)?;
    let test_w = windows_for(cfg, sessions, &[fold.test])?;
    if test_w.is_empty() {
        return Err(Error::Data(format!("person {} yields no test windows", fold.test)));
    }
    let model = evaluate(&trained.model, &test_w, &trained.norm, skeleton, cloud)?;
    let gt = window_targets(&test_w);
    let midpoint = score(&gt, &midpoint_predictions(&test_w, &cfg.limits), skeleton, cloud)?;
    let baseline_norm = fit_standardizer(sessions, &fold.train)?;
    let linear = LastFrameLinear::fit(&windows_for(cfg, sessions, &fold.train)?, &baseline_norm)?;
    let last_frame_linear = score(&gt, &linear.predict(&test_w)?, skeleton, cloud)?;
    log::info!(
        "fold person {}: model {:.2} mm, midpoint {:.2} mm, linear {:.2} mm",
        fold.test,
        model.mpjpe.mean,
        midpoint.mpjpe.mean,
        last_frame_linear.mpjpe.mean
    );
    Ok(FoldResult {
        test_person: fold.test,
        validation_person: validation,
        epochs_run: trained.outcome.history.len(),
        best_epoch: trained.outcome.best_epoch,
        model,
        midpoint,
        last_frame_linear,
    })
}

/// Runs every fold over the given sessions.
pub fn run_lopo(cfg: &ExperimentConfig, sessions: &[SessionRecording]) -> Result<Report> {
    cfg.validate()?;
    let sessions = prepare_sessions(cfg, sessions)?;
    let ids: Vec<u32> = sessions.iter().map(|s| s.person_id).collect();
    let folds = lopo_split(&ids)?;
    let (skeleton, cloud) = body(cfg)?;
    let job = |(i, f): (usize, &Fold)| run_fold(cfg, &sessions, f, i, &skeleton, &cloud);
    let results: Vec<FoldResult> = if cfg.parallel_folds {
        folds.par_iter().enumerate().map(job).collect::<Result<_>>()?
    } else {
        folds.iter().enumerate().map(job).collect::<Result<_>>()?
    };
    Ok(Report {
        seed: cfg.seed,
        fingerprint: cfg.fingerprint()?,
        reference_error_mm: cfg.report.reference_error_mm,
        folds: results,
    })
}

/// Generates the configured synthetic cohort and runs LOPO on it.
pub fn run_lopo_synthetic(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let sessions = generate_cohort(&cfg.synth, &cfg.limits)?;
    run_lopo(cfg, &sessions)
}
