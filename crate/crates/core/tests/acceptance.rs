//! Acceptance criteria. Each prints one PASS/FAIL line; the run fails if any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chronopyr::builder::{build_sharded, plan_shards, sharded_grids, stream_pyramid, BuildOptions, PyramidSink};
use chronopyr::kernels::kernel_for_stride;
use chronopyr::reconstruct::{reconstruct, DetailMask};
use chronopyr::schedule::{schedule_for, LevelSchedule};
use chronopyr::spectrogram::{compute_spectrogram, SpectrogramOptions};
use chronopyr::store::{build_store, write_input, Plane, Store, StoreBuildOptions, StoreLayout};
use chronopyr::synth::{band_energy_profile, generate, oracle_pyramid, random_scene, timelapse_subsample, Component, Noise, SceneSpec};
use chronopyr::time::{midnight_ns, MissingRuns, Period, TimeGrid, NANOS_PER_DAY, NANOS_PER_MIN};
use chronopyr::{build_pyramid, FrameSequence, FrameSource, Pyramid, Result, SequenceKind, Shape};

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn minute() -> Period {
    Period::from_nanos(NANOS_PER_MIN).unwrap()
}

fn max_diff(a: &FrameSequence, b: &FrameSequence) -> f32 {
    a.max_abs_diff(b).unwrap_or(f32::INFINITY)
}

fn perfect_reconstruction() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f32;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::gray(8, 8);
        let data = (0..2700 * shape.len()).map(|_| rng.random_range(0..=255u8) as f32).collect();
        let grid = TimeGrid::new(0, Period::from_secs(1).unwrap(), 2700);
        let x = FrameSequence::new(grid, SequenceKind::Input, shape, data).unwrap();
        let schedule = LevelSchedule::from_strides(x.grid.period, vec![2, 3, 5, 5]).unwrap();
        let p = build_pyramid(&x, &schedule).unwrap();
        let r = reconstruct(&p, 0, &DetailMask::all(4)).unwrap();
        worst = worst.max(max_diff(&r, &x));
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-3 && secs < 10.0, format!("max |error| {worst:.2e}, {secs:.2} s"))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f32;
    for seed in 0..20u64 {
        let count = 1000 + (seed as usize * 397) % 4001;
        let spec = random_scene(seed, minute(), count, 16, 16);
        let x = generate(&spec).unwrap();
        let span = minute().checked_mul(count as u64).unwrap();
        let schedule = schedule_for(minute(), span).unwrap();
        let a = oracle_pyramid(&x, &schedule).unwrap();
        let b = build_pyramid(&x, &schedule).unwrap();
        for (p, q) in a.gaussian.iter().zip(&b.gaussian).chain(a.laplacian.iter().zip(&b.laplacian)) {
            if p.grid != q.grid {
                return Err(format!("seed {seed}: grids differ"));
            }
            worst = worst.max(max_diff(p, q));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-4 && secs < 60.0, format!("max |builder - oracle| {worst:.2e}, {secs:.2} s"))
}

fn band_localization() -> Outcome {
    let strides = vec![2, 3, 5, 5, 3, 2, 2];
    let period = Period::from_secs(1).unwrap();
    let schedule = LevelSchedule::from_strides(period, strides).unwrap();
    let mut found = Vec::new();
    for j in 2..=6 {
        let cycle = 2 * schedule.cumulative_stride(j).unwrap();
        let mut spec = SceneSpec::new(period, 7200, 2, 2).with(Component::Sinusoid {
            period_slots: cycle as f64,
            amplitude: 50.0,
            phase: 0.0,
            region: None,
        });
        spec.base = 128.0;
        let p = build_pyramid(&generate(&spec).unwrap(), &schedule).unwrap();
        let profile = band_energy_profile(&p).unwrap();
        let argmax = 1 + (0..profile.len()).max_by(|&a, &b| profile[a].total_cmp(&profile[b])).unwrap();
        found.push((j, argmax));
    }
    let ok = found.iter().all(|&(j, a)| a.abs_diff(j) <= 1);
    check(ok, format!("(j, argmax level) = {found:?}"))
}

fn alias_free() -> Outcome {
    let m = 150;
    let n = 3000;
    let full = 200.0f32;
    let period = Period::from_secs(1).unwrap();
    let schedule = LevelSchedule::from_strides(period, vec![2, 3, 5, 5]).unwrap();
    let level = (1..=schedule.depth())
        .min_by_key(|&l| schedule.cumulative_stride(l).unwrap().abs_diff(m as u64))
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut peaks = Vec::new();
    for _ in 0..50 {
        let at = rng.random_range(600..2400);
        let spec = SceneSpec::new(period, n, 1, 1).with(Component::Blip {
            start: at,
            duration: 1,
            amplitude: full as f64,
            region: None,
        });
        let x = generate(&spec).unwrap();
        let lapse = timelapse_subsample(&x, m).unwrap();
        let amp = lapse.data().iter().copied().fold(0.0f32, f32::max);
        if amp != 0.0 && amp != full {
            return Err(format!("timelapse amplitude {amp} at phase {at}"));
        }
        let p = build_pyramid(&x, &schedule).unwrap();
        let peak = p.gaussian(level).unwrap().data().iter().copied().fold(0.0f32, f32::max);
        if !(peak > 0.0 && peak < full) {
            return Err(format!("level-{level} peak {peak} at phase {at}"));
        }
        peaks.push(peak as f64);
    }
    let mean = peaks.iter().sum::<f64>() / peaks.len() as f64;
    let sd = (peaks.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / peaks.len() as f64).sqrt();
    let cv = sd / mean;
    check(cv < 0.5, format!("timelapse in {{0, full}}; level {level} peak mean {mean:.3}, CV {cv:.3}"))
}

fn three_day_scene() -> SceneSpec {
    let mut spec = SceneSpec::new(minute(), 3 * 1440, 4, 4)
        .with(Component::DayNight {
            day_fraction: 0.5,
            day: 120.0,
            night: 0.0,
            region: None,
        })
        .with(Component::Sinusoid {
            period_slots: 97.0,
            amplitude: 20.0,
            phase: 0.3,
            region: None,
        })
        .with(Component::Blip {
            start: 2000,
            duration: 30,
            amplitude: 60.0,
            region: Some(chronopyr::synth::Region { x: 1, y: 1, width: 2, height: 2 }),
        });
    spec.origin_ns = midnight_ns(NaiveDate::from_ymd_opt(2024, 3, 10).unwrap());
    spec.base = 60.0;
    spec.noise = Some(Noise { amplitude: 5.0, seed: 17 });
    spec
}

/// Level-0 slot span `[lo, hi]` that each Gaussian slot of levels
/// `0..=levels` depends on, following the blur/subsample conventions.
fn gaussian_supports(counts: &[usize], strides: &[u8], levels: usize) -> Vec<Vec<(usize, usize)>> {
    let mut sup = vec![(0..counts[0]).map(|k| (k, k)).collect::<Vec<_>>()];
    for l in 1..=levels {
        let k = kernel_for_stride(strides[l - 1] as u32).unwrap();
        let prev = &sup[l - 1];
        let n = counts[l - 1];
        let cur = (0..counts[l])
            .map(|i| {
                let c = (i * k.stride() + k.phase()).min(n - 1);
                let lo = c.saturating_sub(k.offset());
                let hi = (c + k.reach()).min(n - 1);
                (prev[lo].0, prev[hi].1)
            })
            .collect();
        sup.push(cur);
    }
    sup
}

fn shard_consistency() -> Outcome {
    let spec = three_day_scene();
    let x = generate(&spec).unwrap();
    let span = minute().checked_mul(x.len() as u64).unwrap();
    let schedule = schedule_for(minute(), span).unwrap();
    let plan = plan_shards(&x.grid, &schedule).unwrap();
    let sharded = build_sharded(&x, &schedule, &plan, 3).unwrap();
    let mono = build_pyramid(&x, &schedule).unwrap();
    let merge = plan.merge_level;
    let counts = schedule.level_counts(x.len());
    let sup = gaussian_supports(&counts, &schedule.strides, merge);
    let day_of = |slot: usize| plan.shards.iter().position(|s| s.slots().contains(&slot)).unwrap();
    let inside = |(lo, hi): (usize, usize)| day_of(lo) == day_of(hi);
    let (mut interior, mut divergent, mut worst) = (0usize, 0usize, 0.0f32);
    for l in 1..=merge {
        let k = kernel_for_stride(schedule.strides[l - 1] as u32).unwrap();
        let g = (mono.gaussian(l).unwrap(), sharded.gaussian(l).unwrap());
        let lap = (mono.laplacian(l).unwrap(), sharded.laplacian(l).unwrap());
        let n_prev = counts[l - 1];
        for slot in 0..counts[l] {
            let d = g.0.frame(slot).iter().zip(g.1.frame(slot)).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            if inside(sup[l][slot]) {
                interior += 1;
                worst = worst.max(d);
            } else if d > 1e-4 {
                divergent += 1;
            }
        }
        for t in 0..n_prev {
            let lo_u = t.saturating_sub(k.offset());
            let hi_u = (t + k.reach()).min(n_prev - 1);
            let last = counts[l] - 1;
            let (a, b) = (sup[l][(lo_u / k.stride()).min(last)], sup[l][(hi_u / k.stride()).min(last)]);
            let s = (sup[l - 1][t].0.min(a.0), sup[l - 1][t].1.max(b.1));
            let d = lap.0.frame(t).iter().zip(lap.1.frame(t)).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            if inside(s) {
                interior += 1;
                worst = worst.max(d);
            } else if d > 1e-4 {
                divergent += 1;
            }
        }
    }
    check(
        worst <= 1e-4,
        format!("{interior} single-day slots agree within {worst:.1e}; {divergent} divergent slots, all with support crossing midnight"),
    )
}

fn day_night_periodicity() -> Outcome {
    let mut spec = SceneSpec::new(minute(), 14 * 1440, 2, 2).with(Component::DayNight {
        day_fraction: 0.5,
        day: 200.0,
        night: 20.0,
        region: None,
    });
    spec.origin_ns = midnight_ns(NaiveDate::from_ymd_opt(2024, 6, 1).unwrap());
    let x = generate(&spec).unwrap();
    let span = minute().checked_mul(x.len() as u64).unwrap();
    let schedule = schedule_for(minute(), span).unwrap();
    let half_day = Period::from_nanos(NANOS_PER_DAY / 2).unwrap();
    let ratio = |p: &Pyramid| -> Result<(usize, f64)> {
        let s = compute_spectrogram(p, &SpectrogramOptions::default())?;
        let eps = s.options.epsilon;
        let lvl = s.levels.iter().find(|l| l.grid.period == half_day).expect("a 12-hour level");
        let v: Vec<f64> = lvl.norms.iter().map(|&n| n as f64 + eps).collect();
        // Skip the tiles touching the sequence ends.
        let inner = &v[2..v.len() - 2];
        let worst = inner
            .windows(2)
            .map(|w| w[0].max(w[1]) / w[0].min(w[1]))
            .fold(f64::INFINITY, f64::min);
        Ok((lvl.level, worst))
    };
    let mono = build_pyramid(&x, &schedule).unwrap();
    let (level, r_mono) = ratio(&mono).unwrap();
    let plan = plan_shards(&x.grid, &schedule).unwrap();
    let sharded = build_sharded(&x, &schedule, &plan, 1).unwrap();
    let (_, r_sharded) = ratio(&sharded).unwrap();
    check(
        r_mono > 10.0,
        format!("level {level} (12 h tiles) smallest adjacent high/low ratio {r_mono:.2} monolithic, {r_sharded:.2} sharded; need > 10"),
    )
}

fn missing_data() -> Outcome {
    let day = 1440;
    let mut spec = SceneSpec::new(minute(), 7 * day, 2, 2)
        .with(Component::DayNight {
            day_fraction: 0.4,
            day: 150.0,
            night: 30.0,
            region: None,
        })
        .with(Component::Sinusoid {
            period_slots: 45.0,
            amplitude: 15.0,
            phase: 0.0,
            region: None,
        })
        .with(Component::Missing {
            start: 3 * day,
            end: 4 * day,
        });
    spec.origin_ns = midnight_ns(NaiveDate::from_ymd_opt(2024, 2, 1).unwrap());
    spec.base = 40.0;
    let x = generate(&spec).unwrap();
    let span = minute().checked_mul(x.len() as u64).unwrap();
    let schedule = schedule_for(minute(), span).unwrap();
    let plan = plan_shards(&x.grid, &schedule).unwrap();
    let p = build_sharded(&x, &schedule, &plan, 2).unwrap();
    let from = spec.origin_ns + 3 * NANOS_PER_DAY as i64;
    let to = from + NANOS_PER_DAY as i64;
    let n = schedule.depth();

    let mut checked = 0;
    for k in [0, 1, 3, 5] {
        let r = reconstruct(&p, k, &DetailMask::all(n)).unwrap();
        let slots = r.grid.slots_in(from, to);
        if slots.is_empty() {
            return Err(format!("level {k} has no slots in the missing day"));
        }
        for s in slots {
            if r.frame(s).iter().any(|&v| v != 0.0) {
                return Err(format!("reconstruction at level {k} slot {s} is not black"));
            }
            checked += 1;
        }
    }
    let day_level = schedule.day_level.unwrap();
    let s = compute_spectrogram(&p, &SpectrogramOptions::default()).unwrap();
    let mut cells = 0;
    for lvl in s.levels.iter().filter(|l| l.level <= day_level) {
        let slots = lvl.grid.slots_in(from, to);
        if slots.is_empty() || !lvl.missing.covers(slots.clone()) {
            return Err(format!("level {} cells {slots:?} not all missing", lvl.level));
        }
        cells += slots.len();
    }
    Ok(format!("{checked} reconstructed slots black at levels 0/1/3/5; {cells} cells flagged on levels 1..={day_level}"))
}

fn storage_overhead() -> Outcome {
    let x = generate(&three_day_scene()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_input(&x, dir.path(), StoreLayout::default()).unwrap();
    let manifest = build_store(
        dir.path(),
        &StoreBuildOptions {
            workers: 3,
            sharded: true,
            ..Default::default()
        },
    )
    .unwrap();
    let store = Store::open(dir.path()).unwrap();
    let disk = store.disk_bytes().unwrap();
    let budget = manifest.predicted_bytes();
    let per = manifest.laplacian_encoding.bytes_per_sample() as f64;
    let pyramid = budget.gaussian as f64 + budget.laplacian as f64 / per;
    let ratio = pyramid / budget.input as f64;
    store.verify().unwrap();
    let _ = store.level_available(Plane::Laplacian, 1);
    check(
        disk == budget.total() && (1.5..=2.5).contains(&ratio),
        format!("predicted {} B, on disk {disk} B; pyramid/level-0 = {ratio:.3}", budget.total()),
    )
}

/// A cheap procedural source so the measurement is of the builder.
struct Pattern {
    shape: Shape,
    count: usize,
}

impl FrameSource for Pattern {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn len(&self) -> usize {
        self.count
    }

    fn read_frame(&self, slot: usize, out: &mut [f32]) -> Result<()> {
        let phase = (slot % 600) as f32;
        for (i, o) in out.iter_mut().enumerate() {
            *o = ((i as f32 * 0.37 + phase) % 256.0).floor();
        }
        Ok(())
    }
}

struct Checksum(f64, usize);

impl PyramidSink for Checksum {
    fn gaussian(&mut self, _: usize, _: usize, frame: &[f32]) -> Result<()> {
        self.0 += frame[0] as f64;
        self.1 += 1;
        Ok(())
    }

    fn laplacian(&mut self, _: usize, _: usize, frame: &[f32]) -> Result<()> {
        self.0 += frame[frame.len() - 1] as f64;
        self.1 += 1;
        Ok(())
    }
}

fn throughput() -> Outcome {
    let count = 100_000;
    let source = Pattern {
        shape: Shape::gray(64, 64),
        count,
    };
    let period = Period::from_secs(1).unwrap();
    let grid = TimeGrid::new(0, period, count);
    let schedule = schedule_for(period, period.checked_mul(count as u64).unwrap()).unwrap();
    let mut sink = Checksum(0.0, 0);
    let start = Instant::now();
    stream_pyramid(&source, &grid, &schedule.strides, 0, &BuildOptions::default(), &mut sink).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let fps = count as f64 / secs;
    check(
        secs < 60.0,
        format!("{count} frames of 64x64 in {secs:.2} s = {fps:.0} frames/s ({} output frames)", sink.1),
    )
}

fn drop_days() -> Outcome {
    let fps30 = Period::from_fps(30).unwrap();
    let per_day = (NANOS_PER_DAY * 30 / 1_000_000_000) as usize;
    let origin = midnight_ns(NaiveDate::from_ymd_opt(2024, 1, 1).unwrap());
    let missing = MissingRuns::from_ranges((0..366).map(|d| d * per_day..d * per_day + 90));
    let grid = TimeGrid::new(origin, fps30, 366 * per_day).with_missing(missing).unwrap();
    let schedule = schedule_for(fps30, Period::days(366).unwrap()).unwrap();
    let a = plan_shards(&grid, &schedule).unwrap();
    let b = plan_shards(&grid, &schedule).unwrap();
    let want: Vec<NaiveDate> = (1..=6).map(|d| NaiveDate::from_ymd_opt(2024, 1, d).unwrap()).collect();
    let grids = sharded_grids(&grid, &schedule, &a).unwrap();
    let year = schedule.year_level.unwrap_or(0);
    let top = grids.gaussian[year].count;

    // The same rule on real frames at a daily base period.
    let daily = SceneSpec {
        origin_ns: origin,
        base: 10.0,
        ..SceneSpec::new(Period::days(1).unwrap(), 366, 1, 1)
    };
    let x = generate(&daily).unwrap();
    let ds = schedule_for(x.grid.period, Period::days(366).unwrap()).unwrap();
    let dp = plan_shards(&x.grid, &ds).unwrap();
    let built = build_sharded(&x, &ds, &dp, 1).unwrap();
    let daily_top = built.top().map_or(0, |g| g.len());
    check(
        a == b && a.drop_days == want && year == 21 && top == 1 && dp.drop_days == want && daily_top == 1,
        format!(
            "drop days {:?}..{:?} ({}), level {year} has {top} frame; daily-base build top has {daily_top}",
            a.drop_days.first(),
            a.drop_days.last(),
            a.drop_days.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("perfect reconstruction", perfect_reconstruction),
        ("oracle equivalence", oracle_equivalence),
        ("band localization", band_localization),
        ("alias-free vs timelapse", alias_free),
        ("shard consistency", shard_consistency),
        ("day/night periodicity", day_night_periodicity),
        ("missing-data contract", missing_data),
        ("storage overhead", storage_overhead),
        ("throughput budget", throughput),
        ("drop-day rule", drop_days),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
