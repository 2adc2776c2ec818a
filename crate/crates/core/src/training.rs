//! Full-batch MSE training with iRprop-.
//!
//! One epoch computes the average gradient over the whole training set and
//! applies exactly one Rprop step. Per-sample gradients may be computed on
//! several threads, but they are always summed in sample-index order, so the
//! result is bit-identical for any thread count.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::dataset::{ClassLabel, Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::evaluation::argmax;
use crate::network::{ForwardCache, GradientSet, Network, ParamBanks, PyraNetConfig};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub delta0: f64,
    pub delta_max: f64,
    pub delta_min: f64,
    pub seed: u64,
    /// Stop once the epoch MSE is at or below this; 0 disables early stopping.
    pub target_mse: f64,
    /// Worker threads for per-sample gradients; 1 runs on the calling thread.
    pub threads: usize,
    /// Multiplies the loss (and so every gradient). Rprop ignores it by construction.
    pub loss_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            eta_plus: 1.2,
            eta_minus: 0.5,
            delta0: 0.01,
            delta_max: 50.0,
            delta_min: 1e-6,
            seed: 42,
            target_mse: 0.08,
            threads: 1,
            loss_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_eta = 0.0 < self.eta_minus && self.eta_minus < 1.0 && 1.0 < self.eta_plus;
        let ok_delta =
            0.0 < self.delta_min && self.delta_min <= self.delta0 && self.delta0 <= self.delta_max;
        if !ok_eta || !ok_delta {
            return Err(Error::Data(format!(
                "invalid Rprop constants: need 0 < eta_minus < 1 < eta_plus and \
                 0 < delta_min <= delta0 <= delta_max, got eta_minus={} eta_plus={} \
                 delta_min={} delta0={} delta_max={}",
                self.eta_minus, self.eta_plus, self.delta_min, self.delta0, self.delta_max
            )));
        }
        if self.threads == 0 {
            return Err(Error::Data("threads must be at least 1".into()));
        }
        if !(self.loss_scale > 0.0 && self.loss_scale.is_finite()) {
            return Err(Error::Data(format!(
                "loss scale must be positive and finite, got {}",
                self.loss_scale
            )));
        }
        if self.target_mse.is_nan() || self.target_mse < 0.0 {
            return Err(Error::Data(format!(
                "target mse must be >= 0, got {}",
                self.target_mse
            )));
        }
        Ok(())
    }
}

/// Per-parameter step sizes and previous gradients, flat in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct RpropState {
    pub steps: Vec<f64>,
    pub prev_grads: Vec<f64>,
    /// Number of Rprop steps applied so far.
    pub epochs: usize,
}

impl RpropState {
    pub fn new(num_params: usize, delta0: f64) -> Self {
        RpropState {
            steps: vec![delta0; num_params],
            prev_grads: vec![0.0; num_params],
            epochs: 0,
        }
    }

    pub fn for_network(network: &Network, config: &TrainConfig) -> Self {
        RpropState::new(network.num_params(), config.delta0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based
    pub epoch: usize,
    pub mse: f64,
    pub accuracy: f64,
}

/// `+1` at `class_index`, `-1` elsewhere.
pub fn one_hot_target(class_index: usize) -> Result<[f64; NUM_CLASSES]> {
    if class_index >= NUM_CLASSES {
        return Err(Error::Label(format!(
            "class index {class_index} out of range 0..{NUM_CLASSES}"
        )));
    }
    let mut t = [-1.0; NUM_CLASSES];
    t[class_index] = 1.0;
    Ok(t)
}

fn check_lengths(op: &'static str, scores: &[f64], target: &[f64]) -> Result<()> {
    if scores.len() != target.len() || scores.is_empty() {
        return Err(Error::dimension(op, target.len(), scores.len()));
    }
    Ok(())
}

/// Mean of squared component errors.
pub fn mse_loss(scores: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths("mse_loss", scores, target)?;
    let sum: f64 = scores
        .iter()
        .zip(target)
        .map(|(s, t)| (s - t) * (s - t))
        .sum();
    Ok(sum / scores.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to `scores`.
pub fn mse_gradient(scores: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_lengths("mse_gradient", scores, target)?;
    let n = scores.len() as f64;
    Ok(scores
        .iter()
        .zip(target)
        .map(|(s, t)| 2.0 * (s - t) / n)
        .collect())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One iRprop- update of every parameter.
///
/// Same gradient sign as last step: grow the step (capped at `delta_max`).
/// Sign flip: shrink the step (floored at `delta_min`) and skip this update,
/// remembering a zero gradient. The parameter then moves by
/// `-sign(gradient) * step`.
pub fn rprop_step(
    state: &mut RpropState,
    gradients: &GradientSet,
    params: &mut ParamBanks,
    config: &TrainConfig,
) -> Result<()> {
    let n = params.num_params();
    if gradients.num_params() != n || !gradients.same_layout(params) {
        return Err(Error::dimension("rprop_step", n, gradients.num_params()));
    }
    if state.steps.len() != n || state.prev_grads.len() != n {
        return Err(Error::dimension("rprop_step", n, state.steps.len()));
    }

    let mut offset = 0;
    for (p_slice, g_slice) in params.slices_mut().into_iter().zip(gradients.slices()) {
        let len = p_slice.len();
        let steps = &mut state.steps[offset..offset + len];
        let prev = &mut state.prev_grads[offset..offset + len];
        for (((p, &g), step), prev) in p_slice.iter_mut().zip(g_slice).zip(steps).zip(prev) {
            let mut g = g;
            let trend = sign(*prev) * sign(g);
            if trend > 0.0 {
                *step = (*step * config.eta_plus).min(config.delta_max);
            } else if trend < 0.0 {
                *step = (*step * config.eta_minus).max(config.delta_min);
                g = 0.0;
            }
            *p -= sign(g) * *step;
            *prev = g;
        }
        offset += len;
    }
    state.epochs += 1;
    Ok(())
}

struct SampleResult {
    grads: GradientSet,
    mse: f64,
    correct: bool,
}

fn sample_gradient(
    network: &Network,
    sample: &LabeledImage,
    loss_scale: f64,
) -> Result<SampleResult> {
    let (scores, cache) = network.forward(&sample.tensor)?;
    let target = one_hot_target(sample.label.index())?;
    let mse = mse_loss(&scores, &target)?;
    let mut upstream = mse_gradient(&scores, &target)?;
    if loss_scale != 1.0 {
        upstream.iter_mut().for_each(|g| *g *= loss_scale);
    }
    let grads = network.backward(&cache, &upstream)?;
    Ok(SampleResult {
        grads,
        mse,
        correct: argmax(&scores) == sample.label.index(),
    })
}

/// Loss, accuracy, and average gradient of the whole dataset at the current parameters.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub grads: GradientSet,
    pub mse: f64,
    pub accuracy: f64,
}

/// Samples whose gradients are held in memory at once when running on a pool.
const BLOCK: usize = 64;

/// Averages per-sample gradients over `samples`, summing in index order.
pub fn batch_gradient(
    network: &Network,
    samples: &[LabeledImage],
    threads: usize,
    loss_scale: f64,
) -> Result<BatchGradient> {
    if samples.is_empty() {
        return Err(Error::Data(
            "cannot compute a gradient over an empty dataset".into(),
        ));
    }
    let mut total = network.params.zeros_like();
    let mut mse_sum = 0.0;
    let mut correct = 0usize;
    let mut absorb = |r: SampleResult| {
        total.add_assign(&r.grads);
        mse_sum += r.mse;
        correct += r.correct as usize;
    };

    if threads <= 1 {
        for s in samples {
            absorb(sample_gradient(network, s, loss_scale)?);
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Data(format!("cannot start {threads} worker threads: {e}")))?;
        for block in samples.chunks(BLOCK) {
            let results: Vec<Result<SampleResult>> = pool.install(|| {
                block
                    .par_iter()
                    .map(|s| sample_gradient(network, s, loss_scale))
                    .collect()
            });
            for r in results {
                absorb(r?);
            }
        }
    }

    let n = samples.len() as f64;
    total.scale(1.0 / n);
    Ok(BatchGradient {
        grads: total,
        mse: mse_sum / n,
        accuracy: correct as f64 / n,
    })
}

/// Computes the full-batch gradient and applies one Rprop step.
///
/// The returned metrics describe the parameters before the step.
pub fn train_epoch(
    network: &mut Network,
    dataset: &Dataset,
    state: &mut RpropState,
    config: &TrainConfig,
) -> Result<EpochMetrics> {
    let batch = batch_gradient(network, dataset.items(), config.threads, config.loss_scale)?;
    rprop_step(state, &batch.grads, &mut network.params, config)?;
    Ok(EpochMetrics {
        epoch: state.epochs,
        mse: batch.mse,
        accuracy: batch.accuracy,
    })
}

/// Trains for up to `config.epochs` epochs, stopping early once the epoch MSE
/// reaches `config.target_mse`.
pub fn fit(
    network: Network,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(Network, Vec<EpochMetrics>)> {
    fit_with(network, dataset, config, |_| {})
}

/// [`fit`] with a callback invoked after every epoch.
pub fn fit_with(
    mut network: Network,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(Network, Vec<EpochMetrics>)> {
    config.validate()?;
    let mut history = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        return Ok((network, history));
    }
    if dataset.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    let mut state = RpropState::for_network(&network, config);
    for _ in 0..config.epochs {
        let metrics = train_epoch(&mut network, dataset, &mut state, config)?;
        on_epoch(&metrics);
        history.push(metrics);
        if config.target_mse > 0.0 && metrics.mse <= config.target_mse {
            break;
        }
    }
    Ok((network, history))
}

/// `epoch,mse,accuracy` header followed by one line per epoch.
pub fn history_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,mse,accuracy\n");
    for m in history {
        let _ = writeln!(out, "{}", csv_line(m));
    }
    out
}

pub fn csv_line(m: &EpochMetrics) -> String {
    format!("{},{},{}", m.epoch, m.mse, m.accuracy)
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    /// Parameters compared; the whole network if this is at least its size.
    pub sample_params: usize,
    /// Picks which parameters are compared.
    pub seed: u64,
    pub step: f64,
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            tolerance: 1e-6,
            sample_params: 1000,
            seed: 0,
            step: 1e-5,
            abs_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Parameters actually compared.
    pub checked: usize,
    /// Draws replaced because a `+-step` probe changed a max-pool winner.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Canonical index of the worst parameter.
    pub worst_param: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Relative difference, treated as zero when the absolute gap is within `floor`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= floor {
        0.0
    } else {
        diff / a.abs().max(b.abs())
    }
}

/// Loss at the probe point, or `None` when max-pool routing differs from `base`.
fn probe_loss(
    network: &Network,
    sample: &LabeledImage,
    base: &ForwardCache,
) -> Result<Option<f64>> {
    let (scores, cache) = network.forward(&sample.tensor)?;
    if cache.s2_pool != base.s2_pool || cache.s4_pool != base.s4_pool {
        return Ok(None);
    }
    Ok(Some(mse_loss(
        &scores,
        &one_hot_target(sample.label.index())?,
    )?))
}

/// Network and sample used by the command-line gradient check: `Network::init`
/// with `seed`, an input drawn uniformly from [-1, 1], and class `seed % 12`.
pub fn gradcheck_fixture(config: PyraNetConfig, seed: u64) -> Result<(Network, LabeledImage)> {
    let network = Network::init(config, seed)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x6772_6164_6368_6b00);
    let shape = network.input_shape();
    let data = (0..shape.len())
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    let sample = LabeledImage {
        tensor: Tensor::from_vec(shape, data)?,
        label: ClassLabel::from_index((seed % NUM_CLASSES as u64) as usize)?,
        source: format!("gradcheck/{seed}"),
    };
    Ok((network, sample))
}

/// Compares the analytic per-sample MSE gradient with central differences.
pub fn check_gradients(
    network: &Network,
    sample: &LabeledImage,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    check_gradients_with(network, sample, options, |net, s| {
        Ok(sample_gradient(net, s, 1.0)?.grads)
    })
}

/// [`check_gradients`] against an arbitrary analytic gradient routine.
///
/// Parameters are visited in a seeded random order until `sample_params` have
/// been compared. A central difference whose probes land on different max-pool
/// winners straddles a kink and measures nothing, so such a parameter is
/// counted in `skipped_kinks` and the next draw takes its place.
pub fn check_gradients_with(
    network: &Network,
    sample: &LabeledImage,
    options: &GradCheckOptions,
    analytic: impl Fn(&Network, &LabeledImage) -> Result<GradientSet>,
) -> Result<GradCheckReport> {
    let grads = analytic(network, sample)?;
    let (_, base) = network.forward(&sample.tensor)?;
    let n = network.num_params();
    let mut order: Vec<usize> = (0..n).collect();
    if options.sample_params < n {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(options.seed);
        order.shuffle(&mut rng);
    }

    let mut probe = network.clone();
    let mut report = GradCheckReport {
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_param: 0,
        analytic: 0.0,
        numeric: 0.0,
        tolerance: options.tolerance,
    };
    for i in order {
        if report.checked >= options.sample_params {
            break;
        }
        let original = network.params.get(i).expect("index within parameter count");
        *probe.params.get_mut(i).unwrap() = original + options.step;
        let plus = probe_loss(&probe, sample, &base)?;
        *probe.params.get_mut(i).unwrap() = original - options.step;
        let minus = probe_loss(&probe, sample, &base)?;
        *probe.params.get_mut(i).unwrap() = original;
        let (Some(plus), Some(minus)) = (plus, minus) else {
            report.skipped_kinks += 1;
            continue;
        };

        let numeric = (plus - minus) / (2.0 * options.step);
        let a = grads.get(i).expect("gradient layout matches network");
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        let err = relative_error(a, numeric, options.abs_floor);
        if report.checked == 1 || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_param = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
