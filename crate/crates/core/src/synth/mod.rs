//! Synthetic scenes, the reference oracle, and the timelapse baseline.

mod oracle;
mod scene;

pub use oracle::{oracle_pyramid, oracle_series, ORACLE_MAX_FRAMES, ORACLE_MAX_PIXELS};
pub use scene::{generate, random_scene, Component, Noise, Region, SceneSource, SceneSpec};

use crate::error::{Error, Result};
use crate::frame::FrameSequence;
use crate::pyramid::LevelReader;
use crate::spectrogram::frame_norm;

/// Every `m`-th frame starting at slot 0, with no filtering.
pub fn timelapse_subsample(input: &FrameSequence, m: usize) -> Result<FrameSequence> {
    if m == 0 {
        return Err(Error::InvalidArgument("timelapse stride must be at least 1".into()));
    }
    let grid = input.grid.subsampled(m, 0)?;
    let mut data = Vec::with_capacity(grid.count * input.shape().len());
    for k in 0..grid.count {
        data.extend_from_slice(input.frame(k * m));
    }
    FrameSequence::new(grid, input.kind, input.shape(), data)
}

/// Mean squared L2 norm of the Laplacian frames of each level `1..=N`
/// (index `i - 1`).
pub fn band_energy_profile(reader: &dyn LevelReader) -> Result<Vec<f64>> {
    (1..=reader.manifest().depth())
        .map(|level| {
            let l = reader.laplacian(level)?;
            if l.is_empty() {
                return Ok(0.0);
            }
            Ok(l.frames().map(|f| frame_norm(f).powi(2)).sum::<f64>() / l.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::build_pyramid;
    use crate::frame::{SequenceKind, Shape};
    use crate::schedule::LevelSchedule;
    use crate::time::{Period, TimeGrid};

    fn impulse(at: usize, n: usize) -> FrameSequence {
        let mut data = vec![0.0; n];
        data[at] = 200.0;
        FrameSequence::new(TimeGrid::new(0, Period::from_secs(1).unwrap(), n), SequenceKind::Input, Shape::gray(1, 1), data)
            .unwrap()
    }

    #[test]
    fn timelapse_phase_hit_and_miss() {
        let hit = timelapse_subsample(&impulse(150, 450), 150).unwrap();
        assert_eq!(hit.data(), &[0.0, 200.0, 0.0]);
        assert_eq!(hit.grid.period, Period::from_secs(150).unwrap());
        let miss = timelapse_subsample(&impulse(151, 450), 150).unwrap();
        assert!(miss.data().iter().all(|&v| v == 0.0));
        assert_eq!(timelapse_subsample(&impulse(0, 7), 3).unwrap().len(), 3);
        assert!(timelapse_subsample(&impulse(0, 7), 0).is_err());
    }

    #[test]
    fn constant_profile_is_zero() {
        let x = generate(&SceneSpec { base: 90.0, ..SceneSpec::new(Period::from_secs(1).unwrap(), 300, 2, 2) }).unwrap();
        let p = build_pyramid(&x, &LevelSchedule::from_strides(x.grid.period, vec![2, 3, 5]).unwrap()).unwrap();
        assert!(band_energy_profile(&p).unwrap().iter().all(|&e| e < 1e-9));
    }

    #[test]
    fn white_noise_profile_decreases() {
        let mut spec = SceneSpec::new(Period::from_secs(1).unwrap(), 6000, 4, 4);
        spec.base = 128.0;
        spec.noise = Some(Noise { amplitude: 60.0, seed: 3 });
        let x = generate(&spec).unwrap();
        let p = build_pyramid(&x, &LevelSchedule::from_strides(x.grid.period, vec![2, 3, 5, 2, 3]).unwrap()).unwrap();
        let e = band_energy_profile(&p).unwrap();
        assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
    }
}
