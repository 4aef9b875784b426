//! Compact replicate-and-offset upsampling network.
//!
//! Each input point goes through a shared per-point MLP encoder. The encoded
//! feature is repeated `r` times, the `j`-th copy is concatenated with a
//! learned code `c_j`, and an offset decoder maps the pair to a bounded
//! displacement measured in units of the input's mean nearest-neighbor
//! spacing `h(x)`:
//!
//! ```text
//! f_i    = enc(x_i)
//! y_ij   = x_i + offset_scale * h(x) * tanh(dec([f_i, c_j]))
//! ```
//!
//! Because `h` shrinks as the input gets denser, the same weights describe
//! the same relative spread at any density: upsampling `x_down` to `x` and
//! `x` to `y` are the same problem to the network.
//!
//! With feature width `F`, `L` hidden layers and ratio `r` the parameter
//! count is (see [`parameter_count`]):
//!
//! ```text
//! encoder  (3F + F) + (L - 1)(F^2 + F)
//! codes    rF
//! decoder  L = 1:  6F + 3
//!          L > 1:  (2F^2 + F) + (L - 2)(F^2 + F) + (3F + 3)
//! ```
//!
//! which is 3491 for the default `F = 32, L = 2, r = 4`.

mod checkpoint;

pub use checkpoint::{
    read_checkpoint, read_checkpoint_from, write_checkpoint, write_checkpoint_to,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParameterSet, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{mean_spacing, PointCloud};
use crate::metrics::{chamfer_matches, matched_loss_grad, ChamferMatches};

pub const SUPPORTED_RATIOS: [usize; 4] = [2, 4, 8, 16];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackboneConfig {
    pub ratio: usize,
    pub feature_dim: usize,
    pub hidden_layers: usize,
    pub offset_scale: f64,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            ratio: 4,
            feature_dim: 32,
            hidden_layers: 2,
            offset_scale: 1.0,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_RATIOS.contains(&self.ratio) {
            return Err(Error::Parameter(format!(
                "upsampling ratio must be one of {SUPPORTED_RATIOS:?}, got {}",
                self.ratio
            )));
        }
        if self.feature_dim < 8 {
            return Err(Error::Parameter(format!(
                "feature_dim must be >= 8, got {}",
                self.feature_dim
            )));
        }
        if self.hidden_layers == 0 {
            return Err(Error::Parameter("hidden_layers must be >= 1".into()));
        }
        if !(self.offset_scale.is_finite() && self.offset_scale >= 0.0) {
            return Err(Error::Parameter(format!(
                "offset_scale must be finite and nonnegative, got {}",
                self.offset_scale
            )));
        }
        Ok(())
    }
}

/// Closed-form parameter count for a configuration.
pub fn parameter_count(cfg: &BackboneConfig) -> usize {
    let (f, l, r) = (cfg.feature_dim, cfg.hidden_layers, cfg.ratio);
    let encoder = 4 * f + (l - 1) * (f * f + f);
    let codes = r * f;
    let decoder = if l == 1 {
        6 * f + 3
    } else {
        (2 * f * f + f) + (l - 2) * (f * f + f) + 3 * f + 3
    };
    encoder + codes + decoder
}

/// `(name, fan_in, fan_out)` for every dense layer, in forward order.
fn layer_plan(cfg: &BackboneConfig) -> (Vec<(String, usize, usize)>, Vec<(String, usize, usize)>) {
    let f = cfg.feature_dim;
    let enc = (0..cfg.hidden_layers)
        .map(|i| (format!("enc.{i}"), if i == 0 { 3 } else { f }, f))
        .collect();
    let mut dec: Vec<(String, usize, usize)> = (0..cfg.hidden_layers - 1)
        .map(|i| (format!("dec.{i}"), if i == 0 { 2 * f } else { f }, f))
        .collect();
    let last_in = if cfg.hidden_layers == 1 { 2 * f } else { f };
    dec.push(("out".to_string(), last_in, 3));
    (enc, dec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Upsampler {
    config: BackboneConfig,
    params: ParameterSet,
}

impl Upsampler {
    /// Glorot-uniform weights, zero biases, codes from `U(-0.1, 0.1)`.
    pub fn init(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParameterSet::new();
        let (enc, dec) = layer_plan(&config);
        for (name, fan_in, fan_out) in enc.iter().chain(dec.iter()) {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-s..=s))
                .collect();
            params.insert(
                &format!("{name}.w"),
                Tensor::new(vec![*fan_in, *fan_out], w)?,
            )?;
            params.insert(&format!("{name}.b"), Tensor::zeros(&[*fan_out]))?;
        }
        let codes = (0..config.ratio * config.feature_dim)
            .map(|_| rng.random_range(-0.1..=0.1))
            .collect();
        params.insert(
            "codes",
            Tensor::new(vec![config.ratio, config.feature_dim], codes)?,
        )?;
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking them against the config's schema.
    pub fn from_parts(config: BackboneConfig, params: ParameterSet) -> Result<Self> {
        let template = Self::init(BackboneConfig { seed: 0, ..config })?;
        template.params.check_schema(&params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn ratio(&self) -> usize {
        self.config.ratio
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn set_params(&mut self, params: ParameterSet) -> Result<()> {
        self.params.check_schema(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn with_params(&self, params: ParameterSet) -> Result<Self> {
        let mut out = self.clone();
        out.set_params(params)?;
        Ok(out)
    }

    /// Builds the forward graph for `x` under the given parameters.
    pub fn build_graph(&self, params: &ParameterSet, x: &PointCloud) -> Result<(Graph, NodeId)> {
        self.params.check_schema(params)?;
        let cfg = &self.config;
        let n = x.len();
        let mut g = Graph::new();
        let mut ids = std::collections::HashMap::new();
        for (name, id) in params.names().zip(g.params_from(params)?) {
            ids.insert(name.to_string(), id);
        }
        let p = |name: &str| ids[name];
        let (enc, dec) = layer_plan(cfg);

        let input = g.constant(Tensor::from_points(x.points()));
        let mut h = input;
        for (name, _, _) in &enc {
            h = g.linear(h, p(&format!("{name}.w")), p(&format!("{name}.b")))?;
            h = g.relu(h);
        }
        let feats = g.replicate(h, cfg.ratio)?;
        let codes = g.tile(p("codes"), n)?;
        let mut h = g.concat(feats, codes)?;
        for (k, (name, _, _)) in dec.iter().enumerate() {
            h = g.linear(h, p(&format!("{name}.w")), p(&format!("{name}.b")))?;
            if k + 1 < dec.len() {
                h = g.relu(h);
            }
        }
        let bounded = g.tanh(h);
        let offsets = g.scale(bounded, cfg.offset_scale * mean_spacing(x));
        let base = g.replicate(input, cfg.ratio)?;
        let y = g.add(base, offsets)?;
        Ok((g, y))
    }

    /// Upsamples `x` to `r * |x|` points with the stored parameters.
    pub fn forward(&self, x: &PointCloud) -> Result<(PointCloud, Graph)> {
        let (g, y) = self.build_graph(&self.params, x)?;
        let pc = PointCloud::new(g.value(y).to_points()?)?;
        Ok((pc, g))
    }

    pub fn forward_with(&self, params: &ParameterSet, x: &PointCloud) -> Result<PointCloud> {
        let (g, y) = self.build_graph(params, x)?;
        PointCloud::new(g.value(y).to_points()?)
    }

    /// Mean Chamfer loss of `F(x)` against `target`, as a differentiable graph.
    pub fn loss_forward(
        &self,
        params: &ParameterSet,
        x: &PointCloud,
        target: &PointCloud,
    ) -> Result<(f64, Graph, NodeId)> {
        self.loss_forward_matched(params, x, target, None)
    }

    /// Like [`Self::loss_forward`], but with correspondences fixed to `matches`
    /// when given instead of recomputed from the prediction.
    pub fn loss_forward_matched(
        &self,
        params: &ParameterSet,
        x: &PointCloud,
        target: &PointCloud,
        matches: Option<&ChamferMatches>,
    ) -> Result<(f64, Graph, NodeId)> {
        let (mut g, y) = self.build_graph(params, x)?;
        let pred = PointCloud::new(g.value(y).to_points()?)?;
        let (loss, grad) = match matches {
            Some(m) => matched_loss_grad(pred.points(), target.points(), m),
            None => matched_loss_grad(
                pred.points(),
                target.points(),
                &chamfer_matches(&pred, target),
            ),
        };
        let node = g.custom_scalar(y, loss, Tensor::from_points(&grad))?;
        Ok((loss, g, node))
    }

    pub fn loss_and_grad(
        &self,
        params: &ParameterSet,
        x: &PointCloud,
        target: &PointCloud,
    ) -> Result<(f64, ParameterSet)> {
        let (loss, g, node) = self.loss_forward(params, x, target)?;
        Ok((loss, g.backward(node)?))
    }

    pub fn loss_and_grad_matched(
        &self,
        params: &ParameterSet,
        x: &PointCloud,
        target: &PointCloud,
        matches: &ChamferMatches,
    ) -> Result<(f64, ParameterSet)> {
        let (loss, g, node) = self.loss_forward_matched(params, x, target, Some(matches))?;
        Ok((loss, g.backward(node)?))
    }

    /// Correspondences between `F(x)` and `target` under `params`.
    pub fn matches(
        &self,
        params: &ParameterSet,
        x: &PointCloud,
        target: &PointCloud,
    ) -> Result<ChamferMatches> {
        Ok(chamfer_matches(&self.forward_with(params, x)?, target))
    }
}
