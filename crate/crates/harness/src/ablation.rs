//! The 3x3x3 grid of per-layer (S), per-layer (A) and cross-model fusion
//! strategies, ranked by AUC.
//!
//! Fusion only acts after the backbones, so every combination shares one
//! exemplar per sequence, and search responses are cached by frame and
//! exact box: combinations that agree on where to look reuse the work.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use mfst_core::tracker::ScaleResponses;
use mfst_core::{BBox, Engine, FusionConfig, FusionStrategy, Tensor3, TrackerConfig, TrackerState};
use rayon::prelude::*;

use crate::emit::write;
use crate::error::{HarnessError, Result};
use crate::metrics::EvalResult;
use crate::ope::{thread_pool, Aggregate, Failure};
use crate::sequence::{load_frame, SequenceRecord};

pub const ABLATION_FILE: &str = "ablation.csv";

/// Every `(per_layer_s, per_layer_a, cross_model)` triple, S-major.
pub fn strategy_grid() -> Vec<[FusionStrategy; 3]> {
    let mut grid = Vec::with_capacity(27);
    for s in FusionStrategy::ALL {
        for a in FusionStrategy::ALL {
            for x in FusionStrategy::ALL {
                grid.push([s, a, x]);
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub per_layer_s: FusionStrategy,
    pub per_layer_a: FusionStrategy,
    pub cross_model: FusionStrategy,
    pub frames: usize,
    pub precision_at_20: f64,
    pub auc: f64,
    /// 1 is best: higher AUC, then higher precision, then grid order.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub failures: Vec<Failure>,
}

type CacheKey = (usize, [u64; 4]);

fn box_key(frame: usize, b: &BBox) -> CacheKey {
    (
        frame,
        [b.center_x, b.center_y, b.width, b.height].map(f64::to_bits),
    )
}

/// All 27 combinations on one sequence, in grid order.
fn ablate_sequence(
    record: &SequenceRecord,
    engine: &Engine,
    base: &TrackerConfig,
    grid: &[[FusionStrategy; 3]],
) -> Result<Vec<EvalResult>> {
    let frames: Vec<Tensor3> = record
        .frame_paths
        .iter()
        .map(load_frame)
        .collect::<Result<_>>()?;
    let first_box = record.ground_truth[0];
    let initial = TrackerState::init(engine, &frames[0], first_box, base.clone())?;
    let mut cache: HashMap<CacheKey, Arc<ScaleResponses>> = HashMap::new();

    grid.iter()
        .map(|&[s, a, x]| {
            let mut state = initial.clone();
            state.config.fusion = FusionConfig::with_strategies(s, a, x);
            let mut predicted = vec![first_box];
            for (i, frame) in frames.iter().enumerate().skip(1) {
                let key = box_key(i, &state.current);
                let responses = match cache.get(&key) {
                    Some(r) => Arc::clone(r),
                    None => {
                        let r = Arc::new(state.search_responses(engine, frame)?);
                        cache.insert(key, Arc::clone(&r));
                        r
                    }
                };
                predicted.push(
                    state
                        .apply_responses(frame.width(), frame.height(), &responses)?
                        .bbox,
                );
            }
            EvalResult::from_boxes(&predicted, &record.ground_truth, 0.0)
        })
        .collect()
}

pub fn run_ablation(
    sequences: &[SequenceRecord],
    engine: &Engine,
    base: &TrackerConfig,
    workers: usize,
) -> Result<AblationReport> {
    base.validate()?;
    let grid = strategy_grid();
    let pool = thread_pool(workers)?;
    let per_sequence: Vec<Result<Vec<EvalResult>>> = pool.install(|| {
        sequences
            .par_iter()
            .map(|r| ablate_sequence(r, engine, base, &grid))
            .collect()
    });

    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (record, outcome) in sequences.iter().zip(per_sequence) {
        match outcome {
            Ok(results) => ok.push(results),
            Err(e) => failures.push(Failure {
                name: record.name.clone(),
                error: e.to_string(),
            }),
        }
    }

    let mut rows: Vec<AblationRow> = grid
        .iter()
        .enumerate()
        .map(|(g, &[s, a, x])| {
            let agg = Aggregate::from_results(ok.iter().map(|results| &results[g]));
            AblationRow {
                per_layer_s: s,
                per_layer_a: a,
                cross_model: x,
                frames: agg.as_ref().map_or(0, |a| a.frames),
                precision_at_20: agg.as_ref().map_or(0.0, |a| a.precision_at_20),
                auc: agg.as_ref().map_or(0.0, |a| a.auc),
                rank: 0,
            }
        })
        .collect();
    assign_ranks(&mut rows);
    Ok(AblationReport { rows, failures })
}

fn assign_ranks(rows: &mut [AblationRow]) {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| {
        rows[j]
            .auc
            .total_cmp(&rows[i].auc)
            .then(rows[j].precision_at_20.total_cmp(&rows[i].precision_at_20))
            .then(i.cmp(&j))
    });
    for (rank, &i) in order.iter().enumerate() {
        rows[i].rank = rank + 1;
    }
}

pub fn ablation_csv(report: &AblationReport) -> String {
    let mut out =
        String::from("per_layer_s,per_layer_a,cross_model,frames,precision_at_20,auc,rank\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{}",
            r.per_layer_s.short_name(),
            r.per_layer_a.short_name(),
            r.cross_model.short_name(),
            r.frames,
            r.precision_at_20,
            r.auc,
            r.rank
        );
    }
    out
}

pub fn emit_ablation(report: &AblationReport, out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    write(&out_dir.join(ABLATION_FILE), &ablation_csv(report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_every_triple_once() {
        let g = strategy_grid();
        assert_eq!(g.len(), 27);
        let unique: std::collections::HashSet<_> = g.iter().collect();
        assert_eq!(unique.len(), 27);
    }

    #[test]
    fn ranks_follow_auc_then_precision_then_order() {
        let row = |auc: f64, p: f64| AblationRow {
            per_layer_s: FusionStrategy::HardWeight,
            per_layer_a: FusionStrategy::HardWeight,
            cross_model: FusionStrategy::HardWeight,
            frames: 1,
            precision_at_20: p,
            auc,
            rank: 0,
        };
        let mut rows = vec![row(0.5, 0.9), row(0.7, 0.1), row(0.5, 0.95), row(0.5, 0.9)];
        assign_ranks(&mut rows);
        let ranks: Vec<usize> = rows.iter().map(|r| r.rank).collect();
        assert_eq!(ranks, vec![3, 1, 2, 4]);
    }
}
