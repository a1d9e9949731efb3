//! Temporally-dense correlation volumes and their linear lookup.
//!
//! Features are channel-first `D × H × W`. Volume `i` pairs the reference
//! feature `F_0` with segment feature `F_i` and is stored as a stack of
//! `H·W` maps, `P × H_l × W_l` at pyramid level `l`, one map per source
//! pixel.

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

/// Where each segment's volume is sampled relative to the current flow `u`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LookupStyle {
    /// Intermediate volumes are sampled at the identity grid; only the last
    /// one follows `u`.
    None,
    /// Volume `i` of `g` is sampled at `x + (i/g)·u(x)`.
    #[default]
    Linear,
    /// Every volume is sampled at `x + u(x)`.
    SameCoordinates,
}

impl LookupStyle {
    pub fn name(self) -> &'static str {
        match self {
            LookupStyle::None => "none",
            LookupStyle::Linear => "linear",
            LookupStyle::SameCoordinates => "same",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LookupStyle::None),
            "linear" => Ok(LookupStyle::Linear),
            "same" | "same-coordinates" => Ok(LookupStyle::SameCoordinates),
            _ => Err(Error::Config(format!("unknown lookup style {s:?}"))),
        }
    }

    /// Fraction of `u` used for segment `i` (1-based) of `g`.
    pub fn flow_fraction(self, i: usize, g: usize) -> f64 {
        match self {
            LookupStyle::Linear => i as f64 / g as f64,
            LookupStyle::SameCoordinates => 1.0,
            LookupStyle::None => {
                if i == g {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LookupConfig {
    pub radius: usize,
    pub levels: usize,
    pub style: LookupStyle,
}

impl Default for LookupConfig {
    fn default() -> Self {
        Self {
            radius: 3,
            levels: 2,
            style: LookupStyle::Linear,
        }
    }
}

impl LookupConfig {
    pub fn window(&self) -> usize {
        2 * self.radius + 1
    }

    /// Sampled channels per segment: `L·(2r+1)²`.
    pub fn channels(&self) -> usize {
        self.levels * self.window() * self.window()
    }
}

/// `g` correlation volumes, each with its pooled pyramid.
#[derive(Clone, Debug)]
pub struct CorrelationVolumeSet {
    /// `pyramids[i][l]` is volume `i + 1` at level `l`, shaped `P × H_l × W_l`.
    pub pyramids: Vec<Vec<Var>>,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
}

impl CorrelationVolumeSet {
    pub fn segments(&self) -> usize {
        self.pyramids.len()
    }

    pub fn levels(&self) -> usize {
        self.pyramids.first().map_or(0, Vec::len)
    }
}

/// Raw volumes `C_i = <F_0(x), F_i(x')> / sqrt(D)`, each `P × H × W`.
pub fn correlation_volumes<T: Float>(tape: &mut Tape<T>, reference: Var, segments: &[Var]) -> Result<Vec<Var>> {
    let shape = tape.shape(reference).to_vec();
    if shape.len() != 3 {
        return dim_err(format!("features must be D×H×W, got {shape:?}"));
    }
    if segments.is_empty() {
        return dim_err("need at least one segment feature");
    }
    let (d, h, w) = (shape[0], shape[1], shape[2]);
    let p = h * w;
    let scale = T::one() / T::from_usize(d).expect("dim fits").sqrt();
    let f0 = tape.reshape(reference, &[d, p])?;
    let mut out = Vec::with_capacity(segments.len());
    for &fi in segments {
        if tape.shape(fi) != shape.as_slice() {
            return dim_err(format!(
                "segment feature {:?} differs from reference {shape:?}",
                tape.shape(fi)
            ));
        }
        let fi = tape.reshape(fi, &[d, p])?;
        let c = tape.matmul_t(f0, true, fi, false)?;
        let c = tape.scale(c, scale)?;
        out.push(tape.reshape(c, &[p, h, w])?);
    }
    Ok(out)
}

/// Levels `0..levels` of repeated 2×2 mean pooling over the last two dims.
pub fn build_pyramid<T: Float>(tape: &mut Tape<T>, volume: Var, levels: usize) -> Result<Vec<Var>> {
    if levels == 0 {
        return dim_err("pyramid needs at least one level");
    }
    let s = tape.shape(volume);
    let need = 1usize << (levels - 1);
    if s.len() < 2 || s[s.len() - 2] < need || s[s.len() - 1] < need {
        return dim_err(format!("volume {s:?} too small for {levels} pyramid levels"));
    }
    let mut out = vec![volume];
    for _ in 1..levels {
        let prev = *out.last().expect("non-empty");
        out.push(tape.avg_pool2(prev)?);
    }
    Ok(out)
}

pub fn build_correlation_volumes<T: Float>(
    tape: &mut Tape<T>,
    reference: Var,
    segments: &[Var],
    levels: usize,
) -> Result<CorrelationVolumeSet> {
    let shape = tape.shape(reference).to_vec();
    let raw = correlation_volumes(tape, reference, segments)?;
    let pyramids = raw
        .into_iter()
        .map(|v| build_pyramid(tape, v, levels))
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationVolumeSet {
        pyramids,
        height: shape[1],
        width: shape[2],
        dim: shape[0],
    })
}

/// Lookup coordinates for one pyramid level: `P × (2r+1)² × 2`.
///
/// The window is centered at `(x + fraction·u(x)) / 2^level`; offsets are
/// integers with `dy` major, `dx` minor.
pub fn lookup_coords<T: Float>(flow: &Tensor<T>, fraction: f64, level: usize, radius: usize) -> Tensor<T> {
    let (h, w) = (flow.shape()[1], flow.shape()[2]);
    let p = h * w;
    let win = 2 * radius + 1;
    let k = win * win;
    let inv = 1.0 / (1u64 << level) as f64;
    let fd = flow.data();
    let mut coords = Vec::with_capacity(p * k * 2);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let cx = (x as f64 + fraction * fd[i].to_f64_lossy()) * inv;
            let cy = (y as f64 + fraction * fd[p + i].to_f64_lossy()) * inv;
            for oy in 0..win {
                for ox in 0..win {
                    coords.push(T::from_f64_lossy(cx + ox as f64 - radius as f64));
                    coords.push(T::from_f64_lossy(cy + oy as f64 - radius as f64));
                }
            }
        }
    }
    Tensor::new(&[p, k, 2], coords).expect("coords shape")
}

/// Samples every volume around its scaled lookup center.
///
/// `flow` is `2 × H × W` at feature resolution and is not differentiated.
/// Returns one `L·(2r+1)² × H × W` map per segment, level-major.
pub fn linear_lookup<T: Float>(
    tape: &mut Tape<T>,
    set: &CorrelationVolumeSet,
    flow: &Tensor<T>,
    cfg: &LookupConfig,
) -> Result<Vec<Var>> {
    let (h, w) = (set.height, set.width);
    if flow.shape() != [2, h, w] {
        return dim_err(format!("flow {:?} does not match {h}×{w} features", flow.shape()));
    }
    if set.levels() < cfg.levels {
        return dim_err(format!("set has {} levels, lookup wants {}", set.levels(), cfg.levels));
    }
    let g = set.segments();
    let mut maps = Vec::with_capacity(g);
    for (seg, pyramid) in set.pyramids.iter().enumerate() {
        let fraction = cfg.style.flow_fraction(seg + 1, g);
        let mut per_level = Vec::with_capacity(cfg.levels);
        for (level, &vol) in pyramid.iter().take(cfg.levels).enumerate() {
            let coords = tape.constant(lookup_coords(flow, fraction, level, cfg.radius));
            per_level.push(tape.sample_rows(vol, coords)?);
        }
        let joined = if per_level.len() == 1 {
            per_level[0]
        } else {
            tape.concat(&per_level, 1)?
        };
        let chw = tape.transpose(joined)?;
        maps.push(tape.reshape(chw, &[cfg.channels(), h, w])?);
    }
    Ok(maps)
}
