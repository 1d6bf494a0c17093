use serde::Serialize;

use super::{ExperimentResult, TaskSchedule};
use crate::error::{Error, Result};

/// Conventional versus warm-started behaviour after one reference switch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwitchComparison {
    pub segment: usize,
    pub frequency: f64,
    /// Global index of the first iteration after the switch.
    pub iteration: usize,
    pub conventional_last_before_switch_mse: f64,
    pub conventional_first_mse: f64,
    pub nn_first_mse: f64,
    /// Smallest final segment MSE of the two modes.
    pub converged_mse: f64,
    pub threshold: f64,
    /// Iterations into the segment before the MSE first reaches the
    /// threshold; `None` when it never does within the segment.
    pub conventional_iterations_to_threshold: Option<usize>,
    pub nn_iterations_to_threshold: Option<usize>,
    pub nn_first_lower: bool,
    pub nn_fewer_iterations: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeComparison {
    pub switches_present: bool,
    pub threshold_factor: f64,
    pub switches: Vec<SwitchComparison>,
    pub nn_first_lower_at_all_switches: bool,
    pub nn_fewer_iterations_at_all_switches: bool,
}

pub fn iterations_to_threshold(mse: &[f64], threshold: f64) -> Option<usize> {
    mse.iter().position(|&m| m <= threshold)
}

fn fewer(a: Option<usize>, b: Option<usize>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        (None, _) => false,
    }
}

/// Compares two runs of the same schedule segment by segment at every switch.
pub fn compare_modes(
    schedule: &TaskSchedule,
    conventional: &ExperimentResult,
    nn: &ExperimentResult,
    threshold_factor: f64,
) -> Result<ModeComparison> {
    let total = schedule.total_iterations();
    if conventional.records.len() != total || nn.records.len() != total {
        return Err(Error::LengthMismatch { expected: total, actual: conventional.records.len().min(nn.records.len()) });
    }
    let starts = schedule.segment_starts();
    let mut switches = Vec::new();
    for (s, seg) in schedule.segments.iter().enumerate().skip(1) {
        let range = starts[s]..starts[s] + seg.iterations;
        let conv: Vec<f64> = conventional.records[range.clone()].iter().map(|r| r.mse).collect();
        let warm: Vec<f64> = nn.records[range].iter().map(|r| r.mse).collect();
        let converged_mse = conv.last().unwrap().min(*warm.last().unwrap());
        let threshold = threshold_factor * converged_mse;
        let conventional_iterations_to_threshold = iterations_to_threshold(&conv, threshold);
        let nn_iterations_to_threshold = iterations_to_threshold(&warm, threshold);
        switches.push(SwitchComparison {
            segment: s,
            frequency: seg.reference.frequency,
            iteration: starts[s],
            conventional_last_before_switch_mse: conventional.records[starts[s] - 1].mse,
            conventional_first_mse: conv[0],
            nn_first_mse: warm[0],
            converged_mse,
            threshold,
            conventional_iterations_to_threshold,
            nn_iterations_to_threshold,
            nn_first_lower: warm[0] < conv[0],
            nn_fewer_iterations: fewer(nn_iterations_to_threshold, conventional_iterations_to_threshold),
        });
    }
    Ok(ModeComparison {
        switches_present: !switches.is_empty(),
        threshold_factor,
        nn_first_lower_at_all_switches: !switches.is_empty() && switches.iter().all(|s| s.nn_first_lower),
        nn_fewer_iterations_at_all_switches: !switches.is_empty() && switches.iter().all(|s| s.nn_fewer_iterations),
        switches,
    })
}
