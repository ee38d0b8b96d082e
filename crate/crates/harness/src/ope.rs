//! One-pass evaluation: initialize on the first ground-truth box, track to
//! the end, score every frame.

use std::time::Instant;

use mfst_core::{BBox, Engine, FusionStrategy, SeMode, TrackerConfig, TrackerState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::{EvalResult, PRECISION_POINTS, RANKING_THRESHOLD, SUCCESS_POINTS};
use crate::sequence::{load_frame, SequenceRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct OpeConfig {
    pub tracker: TrackerConfig,
    /// Sequences evaluated concurrently.
    pub workers: usize,
}

impl Default for OpeConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceOutcome {
    pub name: String,
    /// Predicted boxes, `(x, y, w, h)` top-left form, one per frame.
    pub boxes: Vec<[f64; 4]>,
    #[serde(flatten)]
    pub result: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub name: String,
    pub error: String,
}

/// Frame-weighted scores over every successfully tracked sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sequences: usize,
    pub frames: usize,
    pub precision_curve: Vec<f64>,
    pub success_curve: Vec<f64>,
    pub precision_at_20: f64,
    pub auc: f64,
    #[serde(skip)]
    pub fps: f64,
}

impl Aggregate {
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a EvalResult>) -> Option<Self> {
        let mut precision = vec![0f64; PRECISION_POINTS];
        let mut success = vec![0f64; SUCCESS_POINTS];
        let (mut sequences, mut frames, mut seconds) = (0usize, 0usize, 0f64);
        for r in results {
            let n = r.frames();
            for (a, v) in precision.iter_mut().zip(&r.precision_curve) {
                *a += n as f64 * v;
            }
            for (a, v) in success.iter_mut().zip(&r.success_curve) {
                *a += n as f64 * v;
            }
            sequences += 1;
            frames += n;
            if r.fps > 0.0 {
                seconds += n as f64 / r.fps;
            }
        }
        if frames == 0 {
            return None;
        }
        for v in precision.iter_mut().chain(success.iter_mut()) {
            *v /= frames as f64;
        }
        Some(Self {
            sequences,
            frames,
            precision_at_20: precision[RANKING_THRESHOLD],
            auc: success.iter().sum::<f64>() / SUCCESS_POINTS as f64,
            precision_curve: precision,
            success_curve: success,
            fps: if seconds > 0.0 {
                frames as f64 / seconds
            } else {
                0.0
            },
        })
    }
}

/// Tracker settings recorded next to the scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub per_layer_s: String,
    pub per_layer_a: String,
    pub cross_model: String,
    pub se_mode: String,
    pub window_influence: f64,
    pub scale_damping: f64,
}

impl RunSettings {
    pub fn from_config(config: &TrackerConfig) -> Self {
        let name = |s: FusionStrategy| s.short_name().to_string();
        Self {
            per_layer_s: name(config.fusion.per_layer_s),
            per_layer_a: name(config.fusion.per_layer_a),
            cross_model: name(config.fusion.cross_model),
            se_mode: match config.se_mode {
                SeMode::ExemplarStatic => "static",
                SeMode::PerInput => "per-input",
            }
            .to_string(),
            window_influence: config.window_influence,
            scale_damping: config.scale_damping,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeReport {
    pub settings: RunSettings,
    /// In input order. Names are not required to be unique.
    pub sequences: Vec<SequenceOutcome>,
    pub aggregate: Option<Aggregate>,
    pub failures: Vec<Failure>,
}

/// Tracks one sequence from its first ground-truth box. The first frame's
/// prediction is the initialization box itself.
pub fn track_sequence(
    record: &SequenceRecord,
    engine: &Engine,
    config: &TrackerConfig,
) -> Result<SequenceOutcome> {
    let first_box = *record
        .ground_truth
        .first()
        .ok_or_else(|| HarnessError::Validation(format!("{} has no frames", record.name)))?;
    let mut predicted: Vec<BBox> = Vec::with_capacity(record.length());
    let mut busy = 0f64;

    let first = load_frame(&record.frame_paths[0])?;
    let t = Instant::now();
    let mut state = TrackerState::init(engine, &first, first_box, config.clone())?;
    busy += t.elapsed().as_secs_f64();
    predicted.push(first_box);

    for path in &record.frame_paths[1..] {
        let frame = load_frame(path)?;
        let t = Instant::now();
        let report = state.step(engine, &frame)?;
        busy += t.elapsed().as_secs_f64();
        predicted.push(report.bbox);
    }
    let fps = record.length() as f64 / busy.max(f64::MIN_POSITIVE);
    Ok(SequenceOutcome {
        name: record.name.clone(),
        boxes: predicted.iter().map(BBox::to_top_left).collect(),
        result: EvalResult::from_boxes(&predicted, &record.ground_truth, fps)?,
    })
}

pub(crate) fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(HarnessError::Argument(
            "at least one worker is required".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Argument(format!("cannot start {workers} workers: {e}")))
}

/// Evaluates already-ingested sequences.
pub fn run_ope(
    sequences: &[SequenceRecord],
    engine: &Engine,
    config: &OpeConfig,
) -> Result<OpeReport> {
    let entries: Vec<(String, Result<SequenceRecord>)> = sequences
        .iter()
        .map(|s| (s.name.clone(), Ok(s.clone())))
        .collect();
    run_ope_entries(entries, engine, config)
}

/// Evaluates a dataset listing in which some sequences may already have
/// failed ingestion. Failed sequences are reported and left out of the
/// aggregate; the others are unaffected.
pub fn run_ope_entries(
    entries: Vec<(String, Result<SequenceRecord>)>,
    engine: &Engine,
    config: &OpeConfig,
) -> Result<OpeReport> {
    config.tracker.validate()?;
    let pool = thread_pool(config.workers)?;
    let outcomes: Vec<(String, Result<SequenceOutcome>)> = pool.install(|| {
        entries
            .into_par_iter()
            .map(|(name, record)| {
                let outcome = record.and_then(|r| track_sequence(&r, engine, &config.tracker));
                (name, outcome)
            })
            .collect()
    });

    let mut sequences = Vec::new();
    let mut failures = Vec::new();
    for (name, outcome) in outcomes {
        match outcome {
            Ok(o) => sequences.push(o),
            Err(e) => failures.push(Failure {
                name,
                error: e.to_string(),
            }),
        }
    }
    Ok(OpeReport {
        settings: RunSettings::from_config(&config.tracker),
        aggregate: Aggregate::from_results(sequences.iter().map(|s| &s.result)),
        sequences,
        failures,
    })
}
