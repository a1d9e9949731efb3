//! Deterministic synthetic event scenes with exact dense ground truth.
//!
//! Each feature point travels a straight trajectory and emits events at
//! uniformly spaced timestamps; positions are rounded to the nearest pixel.
//! Point `j` always fires with polarity `+1` when `j` is even and `-1`
//! otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::flow::FlowField;
use crate::par::{self, Execution};
use crate::tensor::Tensor;

const MAX_PLACEMENT_RETRIES: usize = 1000;

/// Displacement over `[t0, t1]` as a function of the point's `t0` position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motion {
    Translation { vx: f64, vy: f64 },
    /// `u(p) = translation + matrix · (p - center)` with the image center.
    Affine { matrix: [[f64; 2]; 2], translation: [f64; 2] },
}

impl Motion {
    pub fn displacement(&self, x: f64, y: f64, width: usize, height: usize) -> (f64, f64) {
        match *self {
            Motion::Translation { vx, vy } => (vx, vy),
            Motion::Affine { matrix, translation } => {
                let cx = x - (width as f64 - 1.0) / 2.0;
                let cy = y - (height as f64 - 1.0) / 2.0;
                (
                    translation[0] + matrix[0][0] * cx + matrix[0][1] * cy,
                    translation[1] + matrix[1][0] * cx + matrix[1][1] * cy,
                )
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Length of `[t0, t1]` in microseconds.
    pub duration: u64,
    /// Segment count; the stream starts one segment before `t0`.
    pub segments: usize,
    pub num_points: usize,
    pub motion: Motion,
    pub events_per_point: usize,
    pub max_speed: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 64,
            height: 64,
            duration: 50_000,
            segments: 5,
            num_points: 48,
            motion: Motion::Translation { vx: 0.0, vy: 0.0 },
            events_per_point: 30,
            max_speed: 16.0,
        }
    }
}

impl SceneConfig {
    pub fn dt(&self) -> u64 {
        self.duration / self.segments as u64
    }

    /// `(t0, t1)`; `t0` equals one segment length so the stream starts at 0.
    pub fn interval(&self) -> (u64, u64) {
        let t0 = self.dt();
        (t0, t0 + self.duration)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scene(m));
        if self.num_points == 0 {
            return bad("num_points must be at least 1".into());
        }
        if self.events_per_point < 2 {
            return bad("events_per_point must be at least 2".into());
        }
        if self.segments == 0 || self.duration < self.segments as u64 {
            return bad(format!("duration {} too short for {} segments", self.duration, self.segments));
        }
        if self.width == 0 || self.height == 0 || self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return bad(format!("unsupported size {}×{}", self.width, self.height));
        }
        let corners = [
            (0.0, 0.0),
            (self.width as f64 - 1.0, 0.0),
            (0.0, self.height as f64 - 1.0),
            (self.width as f64 - 1.0, self.height as f64 - 1.0),
        ];
        for (x, y) in corners {
            let (u, v) = self.motion.displacement(x, y, self.width, self.height);
            if u.hypot(v) > self.max_speed + 1e-9 {
                return bad(format!("speed {:.3} exceeds max_speed {}", u.hypot(v), self.max_speed));
            }
        }
        Ok(())
    }
}

/// A synthetic stream over `[t0 - dt, t1]` with ground truth for `t0 → t1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub stream: EventStream,
    pub t0: u64,
    pub t1: u64,
    pub segments: usize,
    /// Valid where at least one event fired in `[t0, t1)`.
    pub gt_flow: FlowField,
    /// Each point's position at `t0`, in pixels.
    pub starts: Vec<(f64, f64)>,
}

pub fn generate_scene(config: &SceneConfig) -> Result<LabeledSample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (w, h) = (config.width, config.height);
    let (t0, t1) = config.interval();
    let t_start = t0 - config.dt();
    let n = config.events_per_point;
    let times: Vec<u64> = (0..n)
        .map(|k| t_start + ((k as u128 * (t1 - t_start) as u128) / (n as u128 - 1)) as u64)
        .collect();
    let frac = |t: u64| (t as f64 - t0 as f64) / config.duration as f64;
    let (s_first, s_last) = (frac(t_start), frac(t1));
    let inside = |x: f64, y: f64| x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64;

    let mut starts = Vec::with_capacity(config.num_points);
    for j in 0..config.num_points {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_RETRIES {
            let x = rng.random_range(0.0..=(w - 1) as f64);
            let y = rng.random_range(0.0..=(h - 1) as f64);
            let (u, v) = config.motion.displacement(x, y, w, h);
            if inside(x + u * s_first, y + v * s_first) && inside(x + u * s_last, y + v * s_last) {
                placed = Some((x, y));
                break;
            }
        }
        starts.push(placed.ok_or_else(|| {
            Error::Scene(format!("point {j}: no in-bounds trajectory after {MAX_PLACEMENT_RETRIES} tries"))
        })?);
    }

    let motions: Vec<(f64, f64)> = starts
        .iter()
        .map(|&(x, y)| config.motion.displacement(x, y, w, h))
        .collect();
    let mut events = Vec::with_capacity(n * config.num_points);
    for &t in &times {
        let s = frac(t);
        for (j, (&(x, y), &(u, v))) in starts.iter().zip(&motions).enumerate() {
            let px = (x + u * s).round().clamp(0.0, (w - 1) as f64) as u16;
            let py = (y + v * s).round().clamp(0.0, (h - 1) as f64) as u16;
            let p = if j % 2 == 0 { 1 } else { -1 };
            events.push(Event::new(px, py, t, p));
        }
    }
    let stream = EventStream::new(w as u16, h as u16, events)?;

    let mut valid = vec![false; w * h];
    for e in stream.window(t0, t1) {
        valid[e.y as usize * w + e.x as usize] = true;
    }
    let plane = w * h;
    let mut gt = vec![0.0f32; 2 * plane];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = config.motion.displacement(x as f64, y as f64, w, h);
            gt[y * w + x] = u as f32;
            gt[plane + y * w + x] = v as f32;
        }
    }
    let gt_flow = FlowField::new(Tensor::new(&[2, h, w], gt)?, valid)?;
    Ok(LabeledSample {
        stream,
        t0,
        t1,
        segments: config.segments,
        gt_flow,
        starts,
    })
}

/// Settings shared by every sample of a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub scene: SceneConfig,
}

impl DatasetConfig {
    pub fn new(seed: u64, width: usize, height: usize, speed_max: f64) -> Self {
        Self {
            seed,
            width,
            height,
            speed_min: 0.0,
            speed_max,
            scene: SceneConfig {
                width,
                height,
                max_speed: speed_max,
                ..SceneConfig::default()
            },
        }
    }

    /// Scene for sample `index`: its own seed, a uniform speed in
    /// `[speed_min, speed_max]` and a uniform direction.
    pub fn scene(&self, index: usize) -> SceneConfig {
        let seed = sample_seed(self.seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5eed);
        let speed = if self.speed_max > self.speed_min {
            rng.random_range(self.speed_min..=self.speed_max)
        } else {
            self.speed_min
        };
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        SceneConfig {
            seed,
            width: self.width,
            height: self.height,
            motion: Motion::Translation {
                vx: speed * angle.cos(),
                vy: speed * angle.sin(),
            },
            max_speed: self.speed_max.max(self.speed_min),
            ..self.scene.clone()
        }
    }
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer over (seed, index)
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn generate_dataset(n: usize, config: &DatasetConfig, exec: Execution) -> Result<Vec<LabeledSample>> {
    if n == 0 {
        return Err(Error::Scene("dataset size must be at least 1".into()));
    }
    par::map_range(exec, n, |i| generate_scene(&config.scene(i)))
        .into_iter()
        .collect()
}

/// Even indices train, odd indices are held out.
pub fn is_train_index(index: usize) -> bool {
    index % 2 == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn translating(vx: f64, vy: f64) -> SceneConfig {
        SceneConfig {
            seed: 7,
            width: 32,
            height: 32,
            num_points: 6,
            motion: Motion::Translation { vx, vy },
            ..SceneConfig::default()
        }
    }

    #[test]
    fn static_scene_points_stay_put() {
        let s = generate_scene(&translating(0.0, 0.0)).unwrap();
        for (j, &(x, y)) in s.starts.iter().enumerate() {
            let px = (x.round() as u16, y.round() as u16);
            let own = s.stream.events().iter().skip(j).step_by(s.starts.len());
            assert!(own.into_iter().all(|e| (e.x, e.y) == px));
        }
        for (i, &v) in s.gt_flow.valid.iter().enumerate() {
            if v {
                assert_eq!(s.gt_flow.at(i % 32, i / 32), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn final_event_reflects_linear_kinematics() {
        let cfg = SceneConfig {
            num_points: 1,
            ..translating(8.0, 0.0)
        };
        let s = generate_scene(&cfg).unwrap();
        let (x0, y0) = s.starts[0];
        let last = s.stream.events().last().unwrap();
        assert_eq!(last.t, s.t1);
        assert_eq!((last.x, last.y), ((x0 + 8.0).round() as u16, y0.round() as u16));
        assert_eq!(s.gt_flow.at(5, 5), (8.0, 0.0));
    }

    #[test]
    fn same_seed_same_stream() {
        let a = generate_scene(&translating(3.0, -2.0)).unwrap();
        let b = generate_scene(&translating(3.0, -2.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg = translating(20.0, 0.0);
        assert!(matches!(generate_scene(&cfg), Err(Error::Scene(_))));
        cfg = SceneConfig {
            num_points: 0,
            ..translating(1.0, 0.0)
        };
        assert!(generate_scene(&cfg).is_err());
        // a displacement wider than the sensor can never stay in bounds
        cfg = SceneConfig {
            width: 8,
            height: 8,
            max_speed: 50.0,
            ..translating(30.0, 0.0)
        };
        assert!(matches!(generate_scene(&cfg), Err(Error::Scene(_))));
    }

    #[test]
    fn dataset_basics() {
        let cfg = DatasetConfig::new(3, 32, 32, 0.0);
        let one = generate_dataset(1, &cfg, Execution::Sequential).unwrap();
        assert_eq!(one.len(), 1);
        let statics = generate_dataset(4, &cfg, Execution::Sequential).unwrap();
        assert!(statics.iter().all(|s| s.gt_flow.at(0, 0) == (0.0, 0.0)));
        assert!(generate_dataset(0, &cfg, Execution::Sequential).is_err());
        assert!(is_train_index(0) && !is_train_index(1));
    }
}
