//! Minimal differentiable training pipeline: a small strided convolutional
//! stack with hand-written reverse-mode gradients, feeding the volumetric
//! soft-argmax heads, trained with AdamW under an exponential two-segment
//! learning-rate schedule.
//!
//! The operator set is closed (conv, bias, ReLU, softmax, soft-argmax, L1
//! and aligned-2D losses), so the whole graph is differentiated by hand and
//! checked against central finite differences. Convolutions run as im2col
//! plus one matrix multiply per layer. Training is deterministic given the
//! config seeds; the optional thread pool reduces per-example gradients in
//! example order so parallel runs stay bit-identical to serial ones.

use ndarray::{Array1, Array2, Array3, Array4, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MetroError, Result};
use crate::geometry::{back_project, Pose2D, Pose3D};
use crate::heatmaps::{
    decode_25d_from_logits, decode_25d_vjp, decode_metric, decode_metric_root_relative,
    decode_metric_vjp, root_relative, spatial_softmax, HeatmapLogits, VolumeSpec,
};
use crate::losses::{loss_2d_aligned_grad, LossWeights};
use crate::metrics::{evaluate_corpus, mpjpe, truncation_report, EvalReport, TruncationReport};
use crate::scale_recovery::weak_perspective_lift;
use crate::striding::LayerSpec;
use crate::synthdata::{default_skeleton, Example, ROOT_JOINT};

/// Prediction head on top of the shared logits volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Fixed-metric-scale soft-argmax decoding, root-relative supervision.
    Metro,
    /// Pixel/depth soft-argmax decoding; needs the true root depth and
    /// camera to produce metric joints.
    Baseline25D,
}

/// One convolution layer: geometry, width, and activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub layer: LayerSpec,
    pub out_channels: usize,
    pub relu: bool,
}

/// Full architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_size: usize,
    pub in_channels: usize,
    pub convs: Vec<ConvSpec>,
    pub head: Head,
    pub volume: VolumeSpec,
    pub num_joints: usize,
    pub seed: u64,
}

fn conv_out_size(in_size: usize, l: &LayerSpec) -> Result<usize> {
    let span = in_size + 2 * l.padding;
    let reach = l.dilation * (l.kernel - 1) + 1;
    if span < reach {
        return Err(MetroError::contract("kernel larger than padded input"));
    }
    Ok((span - reach) / l.stride + 1)
}

impl ModelSpec {
    /// The default desk-scale architecture: three stride-2 stages, one
    /// dilated stage for context, and a 1x1 projection to `J * nz` maps.
    pub fn default_toy(head: Head, num_joints: usize, seed: u64) -> Result<Self> {
        let volume = VolumeSpec::default_for_crop(64)?;
        let conv = |k, s, p, d, out_channels, relu| -> Result<ConvSpec> {
            Ok(ConvSpec {
                layer: LayerSpec::new(k, s, p, d)?,
                out_channels,
                relu,
            })
        };
        let spec = Self {
            input_size: 64,
            in_channels: 3,
            convs: vec![
                conv(3, 2, 1, 1, 16, true)?,
                conv(3, 2, 1, 1, 32, true)?,
                conv(3, 2, 1, 1, 48, true)?,
                conv(3, 1, 2, 2, 64, true)?,
                conv(1, 1, 0, 1, num_joints * volume.nz, false)?,
            ],
            head,
            volume,
            num_joints,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.convs.is_empty() {
            return Err(MetroError::contract("model needs at least one layer"));
        }
        let last = self.convs.last().unwrap();
        if last.out_channels != self.num_joints * self.volume.nz {
            return Err(MetroError::contract(
                "final channel count must equal num_joints * nz",
            ));
        }
        let mut size = self.input_size;
        for c in &self.convs {
            size = conv_out_size(size, &c.layer)?;
        }
        if size != self.volume.nx || size != self.volume.ny {
            return Err(MetroError::contract(format!(
                "stack output {size} does not match volume {}x{}",
                self.volume.nx, self.volume.ny
            )));
        }
        Ok(())
    }
}

/// Learnable parameters of one layer. Weights are stored as the im2col
/// matrix `(out_channels, in_channels * k * k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// A parameterized model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub layers: Vec<ConvLayer>,
}

impl Model {
    /// Uniform fan-in initialization, deterministic in `spec.seed`.
    pub fn init(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut layers = Vec::with_capacity(spec.convs.len());
        let mut in_c = spec.in_channels;
        for c in &spec.convs {
            let fan_in = in_c * c.layer.kernel * c.layer.kernel;
            let bound = (1.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((c.out_channels, fan_in), |_| {
                rng.gen_range(-bound..bound)
            });
            layers.push(ConvLayer {
                w,
                b: Array1::zeros(c.out_channels),
            });
            in_c = c.out_channels;
        }
        Ok(Self { spec, layers })
    }

    /// All-zero parameters (uniform heatmaps, barycenter decodes).
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let mut model = Self::init(spec)?;
        for l in &mut model.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        Ok(model)
    }
}

/// Expand an input into the `(c*k*k, oh*ow)` patch matrix.
fn im2col(x: &Array3<f64>, l: &LayerSpec, oh: usize, ow: usize) -> Array2<f64> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut cols = Array2::zeros((c_in * l.kernel * l.kernel, oh * ow));
    for c in 0..c_in {
        for ky in 0..l.kernel {
            for kx in 0..l.kernel {
                let row = (c * l.kernel + ky) * l.kernel + kx;
                let dy = (ky * l.dilation) as isize - l.padding as isize;
                let dx = (kx * l.dilation) as isize - l.padding as isize;
                for oy in 0..oh {
                    let iy = (oy * l.stride) as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * l.stride) as isize + dx;
                        if ix >= 0 && ix < w as isize {
                            cols[(row, oy * ow + ox)] = x[(c, iy as usize, ix as usize)];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the patch-matrix cotangent back onto the input plane.
fn col2im(dcols: &Array2<f64>, l: &LayerSpec, shape: (usize, usize, usize), oh: usize, ow: usize) -> Array3<f64> {
    let (c_in, h, w) = shape;
    let mut dx = Array3::zeros(shape);
    for c in 0..c_in {
        for ky in 0..l.kernel {
            for kx in 0..l.kernel {
                let row = (c * l.kernel + ky) * l.kernel + kx;
                let dy = (ky * l.dilation) as isize - l.padding as isize;
                let dx_off = (kx * l.dilation) as isize - l.padding as isize;
                for oy in 0..oh {
                    let iy = (oy * l.stride) as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * l.stride) as isize + dx_off;
                        if ix >= 0 && ix < w as isize {
                            dx[(c, iy as usize, ix as usize)] += dcols[(row, oy * ow + ox)];
                        }
                    }
                }
            }
        }
    }
    dx
}

struct LayerCache {
    cols: Array2<f64>,
    pre: Array2<f64>,
    in_shape: (usize, usize, usize),
    oh: usize,
    ow: usize,
}

/// Per-layer parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

fn forward_cached(model: &Model, x: &Array3<f64>) -> Result<(Vec<LayerCache>, HeatmapLogits)> {
    let spec = &model.spec;
    if x.shape() != [spec.in_channels, spec.input_size, spec.input_size] {
        return Err(MetroError::contract(format!(
            "input shape {:?} does not match model spec",
            x.shape()
        )));
    }
    let mut caches = Vec::with_capacity(model.layers.len());
    let mut cur = x.clone();
    for (c, l) in spec.convs.iter().zip(&model.layers) {
        let (h, w) = (cur.shape()[1], cur.shape()[2]);
        let oh = conv_out_size(h, &c.layer)?;
        let ow = conv_out_size(w, &c.layer)?;
        let cols = im2col(&cur, &c.layer, oh, ow);
        let mut pre = l.w.dot(&cols);
        for (mut row, &bias) in pre.axis_iter_mut(Axis(0)).zip(l.b.iter()) {
            row += bias;
        }
        let post = if c.relu { pre.mapv(|v| v.max(0.0)) } else { pre.clone() };
        caches.push(LayerCache {
            cols,
            pre,
            in_shape: (cur.shape()[0], h, w),
            oh,
            ow,
        });
        cur = post
            .into_shape_with_order((c.out_channels, oh, ow))
            .expect("conv output reshape");
    }
    let nz = spec.volume.nz;
    let logits = cur
        .into_shape_with_order((spec.num_joints, nz, spec.volume.ny, spec.volume.nx))
        .expect("logits reshape");
    Ok((caches, HeatmapLogits(logits)))
}

fn backward_cached(model: &Model, caches: &[LayerCache], dlogits: Array4<f64>) -> Vec<LayerGrads> {
    let spec = &model.spec;
    let n = model.layers.len();
    let mut grads: Vec<Option<LayerGrads>> = (0..n).map(|_| None).collect();
    let last = &caches[n - 1];
    let mut dout = dlogits
        .into_shape_with_order((spec.convs[n - 1].out_channels, last.oh * last.ow))
        .expect("dlogits reshape");
    for i in (0..n).rev() {
        let cache = &caches[i];
        let layer = &model.layers[i];
        let mut dpre = dout;
        if spec.convs[i].relu {
            Zip::from(&mut dpre).and(&cache.pre).for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let dw = dpre.dot(&cache.cols.t());
        let db = dpre.sum_axis(Axis(1));
        grads[i] = Some(LayerGrads { dw, db });
        if i == 0 {
            break;
        }
        let dcols = layer.w.t().dot(&dpre);
        let dx = col2im(&dcols, &spec.convs[i].layer, cache.in_shape, cache.oh, cache.ow);
        let prev = &caches[i - 1];
        dout = dx
            .into_shape_with_order((prev.pre.shape()[0], prev.oh * prev.ow))
            .expect("dx reshape");
    }
    grads.into_iter().map(|g| g.unwrap()).collect()
}

/// Decoded output per head: metric volume pose for METRO, the lifted
/// (u, v, z) triple for the 2.5D baseline.
pub fn decode_head(model: &Model, logits: &HeatmapLogits) -> Result<Pose3D> {
    let spec = &model.spec;
    match spec.head {
        Head::Metro => decode_metric(&spatial_softmax(logits), &spec.volume),
        Head::Baseline25D => Ok(weak_perspective_lift(&decode_25d_from_logits(
            logits,
            &spec.volume,
            ROOT_JOINT,
        )?)),
    }
}

/// Batched forward pass: logits and decoded poses, one pair per image.
pub fn forward(model: &Model, images: &[Array3<f64>]) -> Result<Vec<(HeatmapLogits, Pose3D)>> {
    images
        .iter()
        .map(|x| {
            let (_, logits) = forward_cached(model, x)?;
            let decoded = decode_head(model, &logits)?;
            Ok((logits, decoded))
        })
        .collect()
}

/// Loss, upstream-decoded cotangent, and logits cotangent for one example.
fn example_loss(
    model: &Model,
    logits: &HeatmapLogits,
    ex: &Example,
    two_d_only: bool,
    weights: &LossWeights,
) -> Result<(f64, Array4<f64>)> {
    let spec = &model.spec;
    let j_n = spec.num_joints;
    let norm = 1.0 / (3.0 * j_n as f64);
    match (spec.head, two_d_only) {
        (Head::Metro, false) => {
            // Root-relative L1 in mm; upstream is the sign subgradient on
            // the root-relative coordinates.
            let pred = decode_metric_root_relative(logits, &spec.volume, ROOT_JOINT)?;
            let mut loss = 0.0;
            let mut up = vec![[0.0f64; 3]; j_n];
            for j in 0..j_n {
                for k in 0..3 {
                    let d = pred.joints[j][k] - ex.target_pose.joints[j][k];
                    loss += norm * d.abs();
                    up[j][k] = norm * d.signum() * if d == 0.0 { 0.0 } else { 1.0 };
                }
            }
            Ok((loss, decode_metric_vjp(logits, &spec.volume, ROOT_JOINT, &up)?))
        }
        (Head::Metro, true) => {
            // Scale/translation-aligned 2D loss on the decoded XY. Its
            // gradient sums to zero over joints (translation invariance),
            // so the root-relative VJP reproduces the plain chain rule.
            let pred = decode_metric(&spatial_softmax(logits), &spec.volume)?;
            let (l2d, grad) = loss_2d_aligned_grad(&pred, &ex.target_2d)?;
            let up: Vec<[f64; 3]> = grad
                .iter()
                .map(|g| [weights.lambda_2d * g[0], weights.lambda_2d * g[1], 0.0])
                .collect();
            Ok((
                weights.lambda_2d * l2d,
                decode_metric_vjp(logits, &spec.volume, ROOT_JOINT, &up)?,
            ))
        }
        (Head::Baseline25D, two_d) => {
            // L1 on (u, v, z_rel); pixels are weighted into mm-equivalents
            // so both heads train at comparable gradient scales. 2D-only
            // examples drop the depth term and are weighted by lambda.
            let pred = decode_25d_from_logits(logits, &spec.volume, ROOT_JOINT)?;
            let s_uv = spec.volume.d_mm / spec.volume.crop_w as f64;
            let scale = if two_d { weights.lambda_2d } else { 1.0 };
            let mut loss = 0.0;
            let mut up = vec![[0.0f64; 3]; j_n];
            for j in 0..j_n {
                let du = pred.joints[j][0] - ex.target_2d.joints[j][0];
                let dv = pred.joints[j][1] - ex.target_2d.joints[j][1];
                loss += scale * norm * s_uv * (du.abs() + dv.abs());
                up[j][0] = scale * norm * s_uv * du.signum();
                up[j][1] = scale * norm * s_uv * dv.signum();
                if !two_d {
                    let dz = pred.joints[j][2] - ex.target_pose.joints[j][2];
                    loss += norm * dz.abs();
                    up[j][2] = norm * dz.signum() * if dz == 0.0 { 0.0 } else { 1.0 };
                }
            }
            Ok((loss, decode_25d_vjp(logits, &spec.volume, ROOT_JOINT, &up)?))
        }
    }
}

/// Loss and parameter gradients for one example.
fn example_grads(
    model: &Model,
    ex: &Example,
    two_d_only: bool,
    weights: &LossWeights,
) -> Result<(f64, Vec<LayerGrads>)> {
    let (caches, logits) = forward_cached(model, &ex.image)?;
    let (loss, dlogits) = example_loss(model, &logits, ex, two_d_only, weights)?;
    Ok((loss, backward_cached(model, &caches, dlogits)))
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub main_epochs: usize,
    pub cooldown_epochs: usize,
    /// Peak learning rate; the schedule decays it exponentially to
    /// `lr0 / 3` over the main epochs, then runs a cooldown segment from
    /// `lr0 / 30` down to `lr0 / 100`.
    pub lr0: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weights: LossWeights,
    /// Fraction of each batch supervised with 2D labels only.
    pub mix_2d: f64,
    pub seed: u64,
    /// Worker threads for per-example gradients; results are identical to
    /// serial because reduction follows example order.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 32,
            main_epochs: 20,
            cooldown_epochs: 2,
            lr0: 8e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weights: LossWeights::default(),
            mix_2d: 0.0,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch == 0
            || self.main_epochs == 0
            || !(self.lr0 >= 0.0)
            || !(0.0..=1.0).contains(&self.mix_2d)
            || self.threads == 0
        {
            return Err(MetroError::contract("invalid training config"));
        }
        Ok(())
    }

    /// Exponential two-segment schedule (main decay, then cooldown).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let geom = |a: f64, b: f64, i: usize, n: usize| {
            if a == 0.0 || n <= 1 {
                b
            } else {
                a * (b / a).powf(i as f64 / (n - 1) as f64)
            }
        };
        if epoch < self.main_epochs {
            geom(self.lr0, self.lr0 / 3.0, epoch, self.main_epochs)
        } else {
            let i = (epoch - self.main_epochs).min(self.cooldown_epochs.saturating_sub(1));
            geom(self.lr0 / 30.0, self.lr0 / 100.0, i, self.cooldown_epochs)
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.main_epochs + self.cooldown_epochs
    }
}

/// First/second moment state for one parameter tensor.
#[derive(Debug, Clone)]
struct Moments2 {
    m: Array2<f64>,
    v: Array2<f64>,
}

#[derive(Debug, Clone)]
struct Moments1 {
    m: Array1<f64>,
    v: Array1<f64>,
}

/// AdamW with decoupled weight decay over the model's layer parameters.
/// With a zero data gradient the moments stay zero and each step multiplies
/// the weights by exactly `1 - lr * weight_decay`.
pub struct AdamW {
    w_state: Vec<Moments2>,
    b_state: Vec<Moments1>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(model: &Model, cfg: &TrainConfig) -> Self {
        Self {
            w_state: model
                .layers
                .iter()
                .map(|l| Moments2 {
                    m: Array2::zeros(l.w.raw_dim()),
                    v: Array2::zeros(l.w.raw_dim()),
                })
                .collect(),
            b_state: model
                .layers
                .iter()
                .map(|l| Moments1 {
                    m: Array1::zeros(l.b.raw_dim()),
                    v: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[LayerGrads], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let decay = 1.0 - lr * self.weight_decay;
        for ((layer, g), (ws, bs)) in model
            .layers
            .iter_mut()
            .zip(grads)
            .zip(self.w_state.iter_mut().zip(self.b_state.iter_mut()))
        {
            // Decoupled decay applies to weights only, never to biases.
            layer.w.mapv_inplace(|w| w * decay);
            Zip::from(&mut layer.w)
                .and(&mut ws.m)
                .and(&mut ws.v)
                .and(&g.dw)
                .for_each(|w, m, v, &grad| {
                    *m = b1 * *m + (1.0 - b1) * grad;
                    *v = b2 * *v + (1.0 - b2) * grad * grad;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
            Zip::from(&mut layer.b)
                .and(&mut bs.m)
                .and(&mut bs.v)
                .and(&g.db)
                .for_each(|w, m, v, &grad| {
                    *m = b1 * *m + (1.0 - b1) * grad;
                    *v = b2 * *v + (1.0 - b2) * grad * grad;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}

/// Mean gradients over a batch, reduced in example order regardless of the
/// thread count.
fn batch_grads(
    model: &Model,
    batch: &[(&Example, bool)],
    weights: &LossWeights,
    threads: usize,
) -> Result<(f64, Vec<LayerGrads>)> {
    let per_example: Vec<Result<(f64, Vec<LayerGrads>)>> = if threads <= 1 || batch.len() <= 1 {
        batch
            .iter()
            .map(|(ex, two_d)| example_grads(model, ex, *two_d, weights))
            .collect()
    } else {
        let chunk = batch.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|(ex, two_d)| example_grads(model, ex, *two_d, weights))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    };

    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut total: Option<Vec<LayerGrads>> = None;
    for r in per_example {
        let (l, grads) = r?;
        loss += inv * l;
        match &mut total {
            None => {
                let mut grads = grads;
                for g in &mut grads {
                    g.dw.mapv_inplace(|v| v * inv);
                    g.db.mapv_inplace(|v| v * inv);
                }
                total = Some(grads);
            }
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.dw.scaled_add(inv, &g.dw);
                    a.db.scaled_add(inv, &g.db);
                }
            }
        }
    }
    Ok((loss, total.expect("non-empty batch")))
}

/// A trained model with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
    /// Mean training loss per epoch.
    pub trace: Vec<f64>,
    /// Train-set MPJPE of the final weights, logged for reproducibility.
    pub final_train_mpjpe: f64,
}

/// Train a freshly initialized model on the dataset.
pub fn train(spec: &ModelSpec, config: &TrainConfig, dataset: &[Example]) -> Result<Checkpoint> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(MetroError::contract("dataset must be non-empty"));
    }
    let mut model = Model::init(spec.clone())?;
    let mut opt = AdamW::new(&model, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(config.total_epochs());
    for epoch in 0..config.total_epochs() {
        let lr = config.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch) {
            let two_d_cut = (config.mix_2d * chunk.len() as f64).round() as usize;
            let batch: Vec<(&Example, bool)> = chunk
                .iter()
                .enumerate()
                .map(|(i, &idx)| (&dataset[idx], i < two_d_cut))
                .collect();
            let (loss, grads) = batch_grads(&model, &batch, &config.weights, config.threads)?;
            if !loss.is_finite() {
                return Err(MetroError::degenerate(format!(
                    "training diverged at epoch {epoch}: loss {loss}"
                )));
            }
            opt.step(&mut model, &grads, lr);
            epoch_loss += loss;
            batches += 1;
        }
        trace.push(epoch_loss / batches as f64);
    }
    let final_train_mpjpe = {
        let eval = evaluate(&model, dataset, Protocol::Full)?;
        eval.report.mpjpe_mm
    };
    Ok(Checkpoint {
        model,
        config: config.clone(),
        trace,
        final_train_mpjpe,
    })
}

/// Evaluation protocol selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    Full,
    Truncated,
}

/// Aggregated evaluation outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Present-vs-all joint split; only under [`Protocol::Truncated`].
    pub truncation: Option<TruncationReport>,
    /// Per-example relative error of the predicted total skeleton length.
    pub scale_errors: Vec<f64>,
}

/// Root-relative metric prediction for one example under the model's head.
pub fn predict_root_relative(model: &Model, ex: &Example) -> Result<Pose3D> {
    let (_, logits) = forward_cached(model, &ex.image)?;
    match model.spec.head {
        Head::Metro => decode_metric_root_relative(&logits, &model.spec.volume, ROOT_JOINT),
        Head::Baseline25D => {
            // The 2.5D head needs external information to become metric:
            // use the ground-truth root depth and the crop camera.
            let p25 = decode_25d_from_logits(&logits, &model.spec.volume, ROOT_JOINT)?;
            let z_root = ex.root_mm[2];
            let flat = Pose2D::new(
                p25.joints.iter().map(|j| [j[0], j[1]]).collect(),
                p25.mask.clone(),
            )?;
            let depths: Vec<f64> = p25.joints.iter().map(|j| z_root + j[2]).collect();
            let pose = back_project(&flat, &depths, &ex.crop.new_intrinsics)?;
            root_relative(&pose, ROOT_JOINT)
        }
    }
}

/// Evaluate a model over a dataset with the shared metrics suite.
pub fn evaluate(model: &Model, dataset: &[Example], protocol: Protocol) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(MetroError::contract("dataset must be non-empty"));
    }
    let preds: Vec<Pose3D> = dataset
        .iter()
        .map(|ex| predict_root_relative(model, ex))
        .collect::<Result<_>>()?;
    let gts: Vec<Pose3D> = dataset.iter().map(|ex| ex.target_pose.clone()).collect();
    let report = evaluate_corpus(&preds, &gts, ROOT_JOINT)?;
    let truncation = match protocol {
        Protocol::Full => None,
        Protocol::Truncated => {
            let vis: Vec<Vec<bool>> = dataset.iter().map(|ex| ex.visibility.clone()).collect();
            Some(truncation_report(&preds, &gts, &vis, ROOT_JOINT)?)
        }
    };
    let scale_errors = preds
        .iter()
        .zip(dataset)
        .map(|(p, ex)| skeleton_scale_error(p, ex.person_height_mm))
        .collect::<Result<_>>()?;
    Ok(Evaluation {
        report,
        truncation,
        scale_errors,
    })
}

/// Relative error of the predicted total bone length against the
/// height-scaled reference skeleton.
pub fn skeleton_scale_error(pred_root_relative: &Pose3D, person_height_mm: f64) -> Result<f64> {
    let skel = default_skeleton(person_height_mm)?;
    let mut pred_total = 0.0;
    let mut ref_total = 0.0;
    for (&(a, b), &r) in skel.edges.iter().zip(&skel.ref_lengths_mm) {
        pred_total += (0..3)
            .map(|k| (pred_root_relative.joints[a][k] - pred_root_relative.joints[b][k]).powi(2))
            .sum::<f64>()
            .sqrt();
        ref_total += r;
    }
    Ok((pred_total - ref_total).abs() / ref_total)
}

/// MPJPE of always predicting the root (all-zero root-relative pose).
pub fn barycenter_baseline_mpjpe(dataset: &[Example]) -> Result<f64> {
    let mut acc = 0.0;
    for ex in dataset {
        let zero = Pose3D {
            joints: vec![[0.0; 3]; ex.target_pose.len()],
            mask: ex.target_pose.mask.clone(),
        };
        acc += mpjpe(&zero, &ex.target_pose, ROOT_JOINT)?;
    }
    Ok(acc / dataset.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointManifest {
    spec: ModelSpec,
    config: TrainConfig,
    trace: Vec<f64>,
    final_train_mpjpe: f64,
    layers: usize,
}

/// Write a checkpoint directory (MTRT tensors plus a JSON manifest).
pub fn save_checkpoint(dir: &std::path::Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::io::save_json(
        dir.join("checkpoint.json"),
        &CheckpointManifest {
            spec: ckpt.model.spec.clone(),
            config: ckpt.config.clone(),
            trace: ckpt.trace.clone(),
            final_train_mpjpe: ckpt.final_train_mpjpe,
            layers: ckpt.model.layers.len(),
        },
    )?;
    for (i, l) in ckpt.model.layers.iter().enumerate() {
        crate::io::save_mtrt(dir.join(format!("layer_{i}_w.mtrt")), &l.w.mapv(|v| v as f32).into_dyn())?;
        crate::io::save_mtrt(dir.join(format!("layer_{i}_b.mtrt")), &l.b.mapv(|v| v as f32).into_dyn())?;
    }
    Ok(())
}

/// Read a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &std::path::Path) -> Result<Checkpoint> {
    let manifest: CheckpointManifest = crate::io::load_json(dir.join("checkpoint.json"))?;
    manifest.spec.validate()?;
    let mut layers = Vec::with_capacity(manifest.layers);
    for i in 0..manifest.layers {
        let w = crate::io::load_mtrt(dir.join(format!("layer_{i}_w.mtrt")))?
            .mapv(|v| v as f64)
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|_| MetroError::format("weight tensor must be rank 2"))?;
        let b = crate::io::load_mtrt(dir.join(format!("layer_{i}_b.mtrt")))?
            .mapv(|v| v as f64)
            .into_dimensionality::<ndarray::Ix1>()
            .map_err(|_| MetroError::format("bias tensor must be rank 1"))?;
        layers.push(ConvLayer { w, b });
    }
    Ok(Checkpoint {
        model: Model {
            spec: manifest.spec,
            layers,
        },
        config: manifest.config,
        trace: manifest.trace,
        final_train_mpjpe: manifest.final_train_mpjpe,
    })
}

/// Tiny two-layer model for exhaustive finite-difference checking.
pub fn miniature_spec(head: Head, seed: u64) -> Result<ModelSpec> {
    let volume = VolumeSpec::new(2200.0, 2200.0, 2200.0, 4, 4, 2, 4, 16, 16)?;
    let spec = ModelSpec {
        input_size: 16,
        in_channels: 3,
        convs: vec![
            ConvSpec {
                layer: LayerSpec::new(3, 2, 1, 1)?,
                out_channels: 4,
                relu: true,
            },
            ConvSpec {
                layer: LayerSpec::new(3, 2, 1, 1)?,
                out_channels: 2 * 2,
                relu: false,
            },
        ],
        head,
        volume,
        num_joints: 2,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// Compare analytic parameter gradients with central finite differences on
/// a miniature model; returns the maximum relative error.
pub fn gradient_check(head: Head, seed: u64) -> Result<f64> {
    let spec = miniature_spec(head, seed)?;
    let model = Model::init(spec.clone())?;
    let ex = miniature_example(&spec, seed ^ 0x5eed)?;
    let weights = LossWeights::default();
    let (loss_of, _) = (
        |m: &Model| -> f64 {
            let (_, logits) = forward_cached(m, &ex.image).unwrap();
            example_loss(m, &logits, &ex, false, &weights).unwrap().0
        },
        (),
    );
    let (_, analytic) = example_grads(&model, &ex, false, &weights)?;
    // Central differences: step balances truncation against the roundoff
    // of the O(100) loss; tiny entries are compared on the overall gradient
    // scale so FD noise on near-zero coordinates does not dominate.
    let step = 1e-5;
    let gmax = analytic
        .iter()
        .flat_map(|g| g.dw.iter().chain(g.db.iter()))
        .fold(1e-9f64, |m, v| m.max(v.abs()));
    let mut worst: f64 = 0.0;
    for li in 0..model.layers.len() {
        let nw = model.layers[li].w.len();
        for idx in 0..nw + model.layers[li].b.len() {
            let probe = |delta: f64| -> f64 {
                let mut m = model.clone();
                if idx < nw {
                    let flat = m.layers[li].w.as_slice_mut().unwrap();
                    flat[idx] += delta;
                } else {
                    m.layers[li].b[idx - nw] += delta;
                }
                loss_of(&m)
            };
            let fd = (probe(step) - probe(-step)) / (2.0 * step);
            let an = if idx < nw {
                analytic[li].dw.as_slice().unwrap()[idx]
            } else {
                analytic[li].db[idx - nw]
            };
            let denom = an.abs().max(fd.abs()).max(1e-3 * gmax);
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    Ok(worst)
}

/// Deterministic synthetic example resized to the miniature model's input.
fn miniature_example(spec: &ModelSpec, seed: u64) -> Result<Example> {
    use crate::geometry::{perspective_crop, SquareBox};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.input_size;
    let image = Array3::from_shape_fn((3, n, n), |_| rng.gen_range(0.0..1.0));
    let j_n = spec.num_joints;
    let target_pose = Pose3D::all_masked(
        (0..j_n)
            .map(|j| {
                if j == ROOT_JOINT {
                    [0.0, 0.0, 0.0]
                } else {
                    [
                        rng.gen_range(-400.0..400.0),
                        rng.gen_range(-400.0..400.0),
                        rng.gen_range(-400.0..400.0),
                    ]
                }
            })
            .collect(),
    )?;
    let target_2d = Pose2D::new(
        (0..j_n)
            .map(|_| [rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64)])
            .collect(),
        vec![true; j_n],
    )?;
    let cam = crate::geometry::CameraIntrinsics::new(1100.0, 1100.0, 8.0, 8.0)?;
    let crop = perspective_crop(&cam, SquareBox::new(0.0, 0.0, 16.0)?, n as f64)?;
    Ok(Example {
        image,
        target_pose,
        root_mm: [0.0, 0.0, 3000.0],
        target_2d,
        visibility: vec![true; j_n],
        crop,
        person_height_mm: 1700.0,
    })
}
