//! The flow network: shared feature encoder, context encoder, correlation
//! lookup, motion encoder, motion pattern aggregation and recurrent updates.

pub mod baseline;
mod encoder;
pub mod layers;
mod loss;
mod motion;
pub mod mpa;
mod update;

pub use encoder::Encoder;
pub use loss::{sequence_loss, sequence_weights};
pub use motion::MotionEncoder;
pub use mpa::{Aggregated, MotionPatternAggregation, ValueProjection};
pub use update::{ConvGru, FlowHead, UpdateBlock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::correlation::{build_correlation_volumes, linear_lookup, LookupConfig, LookupStyle};
use crate::error::{dim_err, Error, Result};
use crate::events::VoxelGrid;
use crate::flow::FlowField;
use crate::tensor::{ops, Float, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Event segments `g`.
    pub segments: usize,
    /// Time bins per segment voxel grid.
    pub bins: usize,
    pub feature_dim: usize,
    /// Feature resolution is `1/downsample`; must be a power of two.
    pub downsample: usize,
    pub iterations: usize,
    pub mpa_layers: usize,
    pub radius: usize,
    pub levels: usize,
    /// Per-stage decay of the sequence loss.
    pub gamma: f64,
    pub value_projection: ValueProjection,
    pub lookup_style: LookupStyle,
    pub context_dim: usize,
    pub hidden_dim: usize,
    pub motion_dim: usize,
    /// Stem width of both encoders.
    pub encoder_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            segments: 5,
            bins: 3,
            feature_dim: 128,
            downsample: 8,
            iterations: 6,
            mpa_layers: 1,
            radius: 3,
            levels: 2,
            gamma: 0.8,
            value_projection: ValueProjection::Identity,
            lookup_style: LookupStyle::Linear,
            context_dim: 64,
            hidden_dim: 64,
            motion_dim: 128,
            encoder_width: 32,
        }
    }
}

impl ModelConfig {
    pub fn lookup(&self) -> LookupConfig {
        LookupConfig {
            radius: self.radius,
            levels: self.levels,
            style: self.lookup_style,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.segments == 0 {
            return bad("segments must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.bins == 0 || self.levels == 0 {
            return bad("bins and levels must be at least 1");
        }
        if !self.downsample.is_power_of_two() {
            return bad("downsample must be a power of two");
        }
        if self.motion_dim <= 2 {
            return bad("motion_dim must exceed 2");
        }
        if self.feature_dim == 0 || self.context_dim == 0 || self.hidden_dim == 0 || self.encoder_width == 0 {
            return bad("layer widths must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        Ok(())
    }

    /// Checks an input resolution against the downsample factor and the
    /// pyramid depth.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        if height % self.downsample != 0 || width % self.downsample != 0 {
            return dim_err(format!(
                "input {height}×{width} not divisible by downsample factor {}",
                self.downsample
            ));
        }
        let need = 1 << (self.levels - 1);
        if height / self.downsample < need || width / self.downsample < need {
            return dim_err(format!(
                "feature map {}×{} too small for {} pyramid levels",
                height / self.downsample,
                width / self.downsample,
                self.levels
            ));
        }
        Ok(())
    }
}

/// Network weights plus the component layout that indexes them.
#[derive(Clone, Debug)]
pub struct TmaModel<T: Float = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub(crate) feature_encoder: Encoder,
    pub(crate) context_encoder: Encoder,
    pub(crate) motion_encoder: MotionEncoder,
    pub(crate) aggregation: MotionPatternAggregation,
    pub(crate) update: UpdateBlock,
}

/// Outputs of every refinement stage.
#[derive(Clone, Debug)]
pub struct ForwardOutput<T: Float = f32> {
    /// Full-resolution flows, one per iteration.
    pub flows: Vec<Var>,
    /// Feature-resolution flows, one per iteration.
    pub low_res: Vec<Var>,
    /// The constant flow each iteration started from.
    pub detached: Vec<Tensor<T>>,
}

impl<T: Float> TmaModel<T> {
    /// Builds freshly initialized weights from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = &config;
        let feature_encoder = Encoder::new(&mut params, &mut rng, "fnet", c.bins, c.encoder_width, c.downsample, c.feature_dim);
        let context_encoder = Encoder::new(
            &mut params,
            &mut rng,
            "cnet",
            c.bins,
            c.encoder_width,
            c.downsample,
            c.hidden_dim + c.context_dim,
        );
        let motion_encoder = MotionEncoder::new(&mut params, &mut rng, c.lookup().channels(), c.motion_dim);
        let aggregation = MotionPatternAggregation::new(&mut params, &mut rng, c.motion_dim, c.mpa_layers, c.value_projection);
        let update = UpdateBlock::new(
            &mut params,
            &mut rng,
            c.hidden_dim,
            c.context_dim + c.segments * c.motion_dim,
        );
        Ok(Self {
            config,
            params,
            feature_encoder,
            context_encoder,
            motion_encoder,
            aggregation,
            update,
        })
    }

    /// Same architecture with weights converted to another precision.
    pub fn cast<U: Float>(&self) -> TmaModel<U> {
        TmaModel {
            config: self.config.clone(),
            params: self.params.cast(),
            feature_encoder: self.feature_encoder.clone(),
            context_encoder: self.context_encoder.clone(),
            motion_encoder: self.motion_encoder.clone(),
            aggregation: self.aggregation.clone(),
            update: self.update.clone(),
        }
    }

    /// Shared-weight features for each grid, `D × H/f × W/f`.
    pub fn extract_features(&self, tape: &mut Tape<T>, grids: &[Var]) -> Result<Vec<Var>> {
        grids
            .iter()
            .map(|&g| self.feature_encoder.forward(tape, &self.params, g))
            .collect()
    }

    /// `(context, hidden0)` from the auxiliary grid.
    pub fn extract_context(&self, tape: &mut Tape<T>, aux: Var) -> Result<(Var, Var)> {
        let out = self.context_encoder.forward(tape, &self.params, aux)?;
        let h = self.config.hidden_dim;
        let hidden = tape.slice(out, 0, 0, h)?;
        let hidden = tape.tanh(hidden)?;
        let context = tape.slice(out, 0, h, self.config.context_dim)?;
        let context = tape.relu(context)?;
        Ok((context, hidden))
    }

    pub fn encode_motion_features(&self, tape: &mut Tape<T>, corr_maps: &[Var], flow: Var) -> Result<Vec<Var>> {
        corr_maps
            .iter()
            .map(|&c| self.motion_encoder.forward(tape, &self.params, c, flow))
            .collect()
    }

    pub fn aggregate_motion_patterns(&self, tape: &mut Tape<T>, features: &[Var]) -> Result<Aggregated> {
        self.aggregation.forward(tape, &self.params, features)
    }

    /// One recurrent step; returns `(h', Δflow)`.
    pub fn update_flow(&self, tape: &mut Tape<T>, hidden: Var, context: Var, motion: &[Var]) -> Result<(Var, Var)> {
        let motion = if motion.len() == 1 {
            motion[0]
        } else {
            tape.concat(motion, 0)?
        };
        self.update.forward(tape, &self.params, hidden, context, motion)
    }

    /// Bilinear upsampling by the downsample factor, rescaled to full-resolution pixels.
    pub fn upsample_flow(&self, tape: &mut Tape<T>, flow: Var) -> Result<Var> {
        let f = self.config.downsample;
        let up = tape.upsample(flow, f)?;
        tape.scale(up, T::from_usize(f).expect("factor fits"))
    }

    /// Records the full network on `tape`.
    ///
    /// `grids` holds the auxiliary grid followed by the `g` segment grids,
    /// each `B × H × W`.
    pub fn forward(&self, tape: &mut Tape<T>, grids: &[Var]) -> Result<ForwardOutput<T>> {
        self.forward_inner(tape, grids, None)
    }

    /// Like [`forward`](Self::forward), but iteration `j` starts from
    /// `detached[j]` instead of the previous estimate. Replaying with a run's
    /// own `detached` states reproduces it; perturbing weights then gives the
    /// function whose gradient `backward` reports.
    pub fn forward_replay(&self, tape: &mut Tape<T>, grids: &[Var], detached: &[Tensor<T>]) -> Result<ForwardOutput<T>> {
        if detached.len() != self.config.iterations {
            return dim_err(format!(
                "{} detached states for {} iterations",
                detached.len(),
                self.config.iterations
            ));
        }
        self.forward_inner(tape, grids, Some(detached))
    }

    fn forward_inner(&self, tape: &mut Tape<T>, grids: &[Var], detached: Option<&[Tensor<T>]>) -> Result<ForwardOutput<T>> {
        let cfg = &self.config;
        let g = cfg.segments;
        if grids.len() != g + 1 {
            return dim_err(format!("expected {} voxel grids, got {}", g + 1, grids.len()));
        }
        let s = tape.shape(grids[0]).to_vec();
        if s.len() != 3 || s[0] != cfg.bins {
            return dim_err(format!("voxel grid {s:?} does not have {} bins", cfg.bins));
        }
        if grids.iter().any(|&v| tape.shape(v) != s.as_slice()) {
            return dim_err("voxel grids differ in shape");
        }
        cfg.check_input(s[1], s[2])?;

        let features = self.extract_features(tape, grids)?;
        let (context, mut hidden) = self.extract_context(tape, grids[0])?;
        let set = build_correlation_volumes(tape, features[0], &features[1..], cfg.levels)?;
        let (h, w) = (set.height, set.width);
        let lookup = cfg.lookup();

        let mut flow = Tensor::<T>::zeros(&[2, h, w]);
        let mut out = ForwardOutput {
            flows: Vec::with_capacity(cfg.iterations),
            low_res: Vec::with_capacity(cfg.iterations),
            detached: Vec::with_capacity(cfg.iterations),
        };
        for it in 0..cfg.iterations {
            if let Some(d) = detached {
                if d[it].shape() != flow.shape() {
                    return dim_err(format!("detached state {:?} vs flow {:?}", d[it].shape(), flow.shape()));
                }
                flow = d[it].clone();
            }
            let flow_var = tape.constant(flow.clone());
            out.detached.push(flow.clone());
            let corr = linear_lookup(tape, &set, &flow, &lookup)?;
            let motion = self.encode_motion_features(tape, &corr, flow_var)?;
            let motion = self.aggregate_motion_patterns(tape, &motion)?.features;
            let (h_next, delta) = self.update_flow(tape, hidden, context, &motion)?;
            hidden = h_next;
            let next = tape.add(flow_var, delta)?;
            out.flows.push(self.upsample_flow(tape, next)?);
            out.low_res.push(next);
            flow = tape.value(next).clone();
        }
        Ok(out)
    }

    /// Places voxel grids on the tape as constants.
    pub fn input_vars(&self, tape: &mut Tape<T>, grids: &[VoxelGrid]) -> Vec<Var> {
        grids.iter().map(|g| tape.constant(g.values.cast())).collect()
    }

    /// Runs inference and returns every stage's full-resolution flow.
    pub fn predict(&self, grids: &[VoxelGrid]) -> Result<Vec<FlowField>> {
        let mut tape = Tape::new();
        let inputs = self.input_vars(&mut tape, grids);
        let out = self.forward(&mut tape, &inputs)?;
        out.flows
            .iter()
            .map(|&f| {
                let v = tape.value(f).cast::<f32>();
                let plane = v.shape()[1] * v.shape()[2];
                FlowField::new(v, vec![true; plane])
            })
            .collect()
    }
}

/// Bilinear flow upsampling outside the tape: values scale with `factor`.
pub fn upsample_flow_field(flow: &Tensor<f32>, factor: usize) -> Result<Tensor<f32>> {
    let up = ops::upsample_bilinear(flow, factor)?;
    let s = factor as f32;
    let data = up.data().iter().map(|&v| v * s).collect();
    Tensor::new(up.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            segments: 3,
            bins: 2,
            feature_dim: 8,
            downsample: 4,
            iterations: 2,
            mpa_layers: 1,
            radius: 1,
            levels: 2,
            context_dim: 4,
            hidden_dim: 4,
            motion_dim: 6,
            encoder_width: 4,
            ..ModelConfig::default()
        }
    }

    fn random_grids(cfg: &ModelConfig, size: usize, seed: u64) -> Vec<VoxelGrid> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..=cfg.segments)
            .map(|_| {
                let data: Vec<f32> = (0..cfg.bins * size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
                VoxelGrid {
                    values: Tensor::new(&[cfg.bins, size, size], data).unwrap(),
                    bins: cfg.bins,
                    window: (0, 1),
                }
            })
            .collect()
    }

    #[test]
    fn default_config_matches_reference_constants() {
        let c = ModelConfig::default();
        assert_eq!((c.segments, c.bins, c.feature_dim, c.iterations, c.mpa_layers), (5, 3, 128, 6, 1));
        assert_eq!((c.radius, c.levels, c.downsample), (3, 2, 8));
        assert_eq!(c.gamma, 0.8);
        assert_eq!(c.value_projection, ValueProjection::Identity);
        assert_eq!(c.lookup().channels(), 98);
    }

    #[test]
    fn feature_shape_at_default_width() {
        let cfg = ModelConfig {
            encoder_width: 8,
            ..ModelConfig::default()
        };
        let model = TmaModel::<f32>::new(cfg, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 64, 64]));
        let f = model.extract_features(&mut tape, &[x]).unwrap();
        assert_eq!(tape.shape(f[0]), &[128, 8, 8]);
    }

    #[test]
    fn indivisible_input_rejected() {
        let model = TmaModel::<f32>::new(tiny_config(), 1).unwrap();
        let grids: Vec<VoxelGrid> = (0..4).map(|_| VoxelGrid::zeros(2, 18, 16, (0, 1))).collect();
        assert!(matches!(model.predict(&grids), Err(Error::Dimension(_))));
        assert!(model.predict(&grids[..3]).is_err());
    }

    #[test]
    fn forward_returns_one_finite_flow_per_iteration() {
        let cfg = tiny_config();
        let model = TmaModel::<f32>::new(cfg.clone(), 2).unwrap();
        let flows = model.predict(&random_grids(&cfg, 16, 3)).unwrap();
        assert_eq!(flows.len(), 2);
        for f in &flows {
            assert_eq!(f.values.shape(), &[2, 16, 16]);
            assert!(f.values.all_finite());
        }
    }

    #[test]
    fn zero_input_is_finite_and_deterministic() {
        let cfg = tiny_config();
        let model = TmaModel::<f32>::new(cfg.clone(), 5).unwrap();
        let grids: Vec<VoxelGrid> = (0..4).map(|_| VoxelGrid::zeros(2, 16, 16, (0, 1))).collect();
        let a = model.predict(&grids).unwrap();
        let b = model.predict(&grids).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|f| f.values.all_finite()));
    }

    #[test]
    fn zero_initialized_head_gives_zero_first_increment() {
        let cfg = tiny_config();
        let model = TmaModel::<f32>::new(cfg.clone(), 9).unwrap();
        let flows = model.predict(&random_grids(&cfg, 16, 4)).unwrap();
        assert!(flows[0].values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn context_ranges() {
        let cfg = tiny_config();
        let model = TmaModel::<f32>::new(cfg.clone(), 11).unwrap();
        let grids = random_grids(&cfg, 16, 6);
        let mut tape = Tape::new();
        let x = tape.constant(grids[0].values.clone());
        let (ctx, hid) = model.extract_context(&mut tape, x).unwrap();
        assert!(tape.value(ctx).data().iter().all(|&v| v >= 0.0));
        assert!(tape.value(hid).data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        let (ctx2, hid2) = model.extract_context(&mut tape, x).unwrap();
        assert_eq!(tape.value(ctx), tape.value(ctx2));
        assert_eq!(tape.value(hid), tape.value(hid2));
    }

    #[test]
    fn upsample_constant_flow_scales_by_factor() {
        let up = upsample_flow_field(&FlowField::constant(2, 2, 1.0, 0.0).values, 8).unwrap();
        assert_eq!(up.shape(), &[2, 16, 16]);
        assert!(up.data()[..256].iter().all(|&v| v == 8.0));
        assert!(up.data()[256..].iter().all(|&v| v == 0.0));
        let zero = upsample_flow_field(&FlowField::zeros(3, 2).values, 4).unwrap();
        assert_eq!(zero.shape(), &[2, 12, 8]);
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            ModelConfig { segments: 0, ..tiny_config() },
            ModelConfig { iterations: 0, ..tiny_config() },
            ModelConfig { downsample: 6, ..tiny_config() },
            ModelConfig { gamma: 0.0, ..tiny_config() },
        ] {
            assert!(TmaModel::<f32>::new(bad, 0).is_err());
        }
    }
}
