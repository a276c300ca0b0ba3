//! Shared inputs for the criterion benchmarks.

use chronopyr::synth::random_scene;
use chronopyr::time::NANOS_PER_MIN;
use chronopyr::{generate, schedule_for, FrameSequence, LevelSchedule, Period};

/// A seeded random scene at one frame per minute with its default schedule.
pub fn minute_scene(count: usize, edge: u32, seed: u64) -> (FrameSequence, LevelSchedule) {
    let period = Period::from_nanos(NANOS_PER_MIN).expect("one minute is a valid period");
    let spec = random_scene(seed, period, count, edge, edge);
    let input = generate(&spec).expect("random scenes are valid");
    let span = period.checked_mul(count as u64).expect("span fits in i64");
    let schedule = schedule_for(period, span).expect("schedule for a positive span");
    (input, schedule)
}
