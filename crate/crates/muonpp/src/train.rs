//! Biasless multilayer perceptron with manual backpropagation, spectral
//! initialization, pluggable optimizers, width-scaling coordinate checks and
//! learning-rate sweeps.
//!
//! Data comes from a frozen random teacher network of the same shape, so
//! gradients are hand-derivable and runs are deterministic in the seed. All
//! parameters are matrices by construction; there are no vector parameters.

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::{spectral_norm, top_two_singular, Matrix, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::optim::{
    cascade_step, muon_baseline_step, muonpp_rescale_step, muonpp_step, MuonPPState, SpectralTarget,
    StepOptions,
};
use crate::rmt::trial_seed;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Momentum coefficient used by all momentum-carrying optimizers in the
/// harness.
pub const DEFAULT_MU: f64 = 0.95;

/// Loss threshold beyond which a run counts as diverged.
const DIVERGENCE_LIMIT: f64 = 1e6;

/// Tolerance of the spectral rescaling applied at initialization.
const INIT_NORM_TOL: f64 = 1e-13;
const INIT_NORM_MAX_ITER: usize = 50_000;

// Stream tags for deriving the independent random streams of a run.
const TEACHER_STREAM: u64 = 1;
const STUDENT_STREAM: u64 = 2;
const PROBE_STREAM: u64 = 3;
const BATCH_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected relu, tanh or identity)"
            ))),
        }
    }
}

/// The only supported loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Loss {
    #[default]
    SquaredError,
}

#[derive(Debug, Clone)]
pub struct MLPConfig {
    /// Layer sizes `[n_0, n_1, ..., n_L]`.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub loss: Loss,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl MLPConfig {
    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::InvalidInput(
                "the network needs at least two layers (three widths)".to_string(),
            ));
        }
        if self.widths.iter().any(|&w| w < 2) {
            return Err(Error::InvalidInput("all widths must be at least 2".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".to_string()));
        }
        Ok(())
    }

    /// The same configuration with every hidden width multiplied by `k`.
    pub fn widened(&self, k: usize) -> Self {
        let mut widths = self.widths.clone();
        for w in widths.iter_mut().take(self.widths.len() - 1).skip(1) {
            *w *= k;
        }
        Self {
            widths,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    MuonPP,
    MuonPPRescale,
    Muon,
    Cascade,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "muonpp" => Ok(OptimizerKind::MuonPP),
            "muonpp_rescale" => Ok(OptimizerKind::MuonPPRescale),
            "muon" => Ok(OptimizerKind::Muon),
            "cascade" => Ok(OptimizerKind::Cascade),
            other => Err(Error::Config(format!(
                "unknown optimizer {other:?} (expected muonpp, muonpp_rescale, muon or cascade)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::MuonPP => "muonpp",
            OptimizerKind::MuonPPRescale => "muonpp_rescale",
            OptimizerKind::Muon => "muon",
            OptimizerKind::Cascade => "cascade",
        }
    }
}

/// Per-layer telemetry of one training step.
#[derive(Debug, Clone)]
pub struct LayerStats {
    pub spectral_norm_w: f64,
    pub update_spectral_norm: f64,
    pub h_l2: f64,
    pub delta_h_l2: f64,
    pub gap: f64,
    pub rescaled: bool,
}

#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub per_layer: Vec<LayerStats>,
}

/// A finished (or aborted) training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub records: Vec<TrainRecord>,
    pub diverged: bool,
    pub final_weights: Vec<Matrix>,
}

impl TrainRun {
    /// One CSV row per (step, layer).
    pub fn csv(&self) -> String {
        let mut out = String::from(
            "step,layer,loss,spectral_norm_w,update_spectral_norm,h_l2,delta_h_l2,gap,rescaled\n",
        );
        for rec in &self.records {
            for (l, stats) in rec.per_layer.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    rec.step,
                    l + 1,
                    fmt_f64(rec.loss),
                    fmt_f64(stats.spectral_norm_w),
                    fmt_f64(stats.update_spectral_norm),
                    fmt_f64(stats.h_l2),
                    fmt_f64(stats.delta_h_l2),
                    fmt_f64(stats.gap),
                    stats.rescaled
                ));
            }
        }
        out
    }

    pub fn initial_loss(&self) -> f64 {
        self.records.first().map(|r| r.loss).unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map(|r| r.loss).unwrap_or(f64::NAN)
    }
}

/// Gaussian weights rescaled so every layer sits exactly on its spectral
/// target `sqrt(n_l / n_{l-1})`. Deterministic in the seed.
pub fn mup_init(config: &MLPConfig) -> Result<Vec<Matrix>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = Vec::with_capacity(config.depth());
    for l in 1..config.widths.len() {
        let rows = config.widths[l];
        let cols = config.widths[l - 1];
        let raw = Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
        let target = SpectralTarget::new(rows, cols)?;
        let norm = spectral_norm(&raw, INIT_NORM_TOL, INIT_NORM_MAX_ITER);
        weights.push(raw.scale(target.s() / norm));
    }
    Ok(weights)
}

/// Forward pass over a batch laid out as columns of `x` (`n_0 x B`).
///
/// Returns all activations `[h_0, h_1, ..., h_L]`; the last layer is linear.
pub fn forward(weights: &[Matrix], x: &Matrix, activation: Activation) -> Result<Vec<Matrix>> {
    if weights.is_empty() {
        return Err(Error::InvalidInput("no weight matrices".to_string()));
    }
    if x.rows() != weights[0].cols() {
        return Err(Error::InvalidInput(format!(
            "input dimension {} does not match first layer width {}",
            x.rows(),
            weights[0].cols()
        )));
    }
    let depth = weights.len();
    let mut activations = Vec::with_capacity(depth + 1);
    activations.push(x.clone());
    for (l, w) in weights.iter().enumerate() {
        let mut z = w.matmul(activations.last().unwrap());
        if l + 1 < depth {
            for v in z.data_mut() {
                *v = activation.apply(*v);
            }
        }
        activations.push(z);
    }
    Ok(activations)
}

/// Mean squared-error loss `|H_L - Y|_F^2 / (2B)` over the batch columns.
pub fn squared_error_loss(output: &Matrix, target: &Matrix) -> f64 {
    let d = output.sub(target);
    let n = d.frobenius_norm();
    n * n / (2.0 * output.cols() as f64)
}

/// Gradients of the squared-error loss with respect to every weight, by the
/// chain rule through the stored activations.
pub fn backward(
    weights: &[Matrix],
    activations: &[Matrix],
    target: &Matrix,
    activation: Activation,
) -> Result<Vec<Matrix>> {
    let depth = weights.len();
    if activations.len() != depth + 1 {
        return Err(Error::InvalidInput(format!(
            "expected {} stored activations, got {}",
            depth + 1,
            activations.len()
        )));
    }
    let output = &activations[depth];
    if output.shape() != target.shape() {
        return Err(Error::InvalidInput(format!(
            "target shape {:?} does not match output {:?}",
            target.shape(),
            output.shape()
        )));
    }
    for (l, w) in weights.iter().enumerate() {
        if activations[l].rows() != w.cols() || activations[l + 1].rows() != w.rows() {
            return Err(Error::InvalidInput(format!(
                "stale activations at layer {}",
                l + 1
            )));
        }
    }

    let batch = output.cols() as f64;
    // d = dL/dz_L for the linear head.
    let mut d = output.sub(target).scale(1.0 / batch);
    let mut grads: Vec<Matrix> = Vec::with_capacity(depth);
    for l in (0..depth).rev() {
        grads.push(d.matmul(&activations[l].transpose()));
        if l > 0 {
            let mut back = weights[l].transpose().matmul(&d);
            let h_prev = &activations[l];
            for (v, &h) in back.data_mut().iter_mut().zip(h_prev.data()) {
                *v *= activation.derivative_from_output(h);
            }
            d = back;
        }
    }
    grads.reverse();
    Ok(grads)
}

/// Mean over batch columns of the per-column Euclidean norm.
fn mean_column_norm(m: &Matrix) -> f64 {
    let b = m.cols();
    let mut total = 0.0;
    for j in 0..b {
        let mut s = 0.0;
        for i in 0..m.rows() {
            let v = m.get(i, j);
            s += v * v;
        }
        total += s.sqrt();
    }
    total / b as f64
}

fn gaussian_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

struct LayerState {
    state: Option<MuonPPState>,
}

/// Runs the full training loop on the frozen-teacher regression task.
///
/// The recorded loss is evaluated on a fixed probe batch, so it is constant
/// whenever the weights are (for example at `eta = 0`). Batches are
/// resampled each step from a per-step derived seed. Divergence (probe loss
/// above 1e6 or non-finite) aborts the loop after pushing the offending
/// record.
pub fn train_run(config: &MLPConfig, kind: OptimizerKind, eta: f64) -> Result<TrainRun> {
    config.validate()?;
    let depth = config.depth();
    let opts = StepOptions::training();

    let teacher = mup_init(&MLPConfig {
        seed: trial_seed(config.seed, TEACHER_STREAM, 0),
        ..config.clone()
    })?;
    let mut weights = mup_init(&MLPConfig {
        seed: trial_seed(config.seed, STUDENT_STREAM, 0),
        ..config.clone()
    })?;

    let mut probe_rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, PROBE_STREAM, 0));
    let probe_x = gaussian_batch(&mut probe_rng, config.widths[0], config.batch_size);
    let probe_y = forward(&teacher, &probe_x, config.activation)?
        .pop()
        .expect("teacher forward");

    let mut layer_states: Vec<LayerState> = weights
        .iter()
        .map(|w| -> Result<LayerState> {
            Ok(LayerState {
                state: match kind {
                    OptimizerKind::Cascade => None,
                    _ => Some(MuonPPState::for_parameter(w, DEFAULT_MU)?),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(config.steps + 1);
    let mut diverged = false;

    let probe_loss = |weights: &[Matrix]| -> Result<f64> {
        let acts = forward(weights, &probe_x, config.activation)?;
        Ok(squared_error_loss(&acts[depth], &probe_y))
    };

    // Step-0 record: initialization state, no update statistics yet.
    {
        let loss = probe_loss(&weights)?;
        let acts = forward(&weights, &probe_x, config.activation)?;
        let per_layer = weights
            .iter()
            .enumerate()
            .map(|(l, w)| {
                let info = top_two_singular(w, 1e-8, DEFAULT_MAX_ITER).expect("non-zero weight");
                LayerStats {
                    spectral_norm_w: info.sigma1,
                    update_spectral_norm: 0.0,
                    h_l2: mean_column_norm(&acts[l + 1]),
                    delta_h_l2: 0.0,
                    gap: info.gap,
                    rescaled: false,
                }
            })
            .collect();
        records.push(TrainRecord {
            step: 0,
            loss,
            per_layer,
        });
    }

    for step in 1..=config.steps {
        let mut batch_rng =
            ChaCha8Rng::seed_from_u64(trial_seed(config.seed, BATCH_STREAM, step as u64));
        let x = gaussian_batch(&mut batch_rng, config.widths[0], config.batch_size);
        let y = forward(&teacher, &x, config.activation)?
            .pop()
            .expect("teacher forward");

        let acts = forward(&weights, &x, config.activation)?;
        let grads = backward(&weights, &acts, &y, config.activation)?;

        let mut per_layer = Vec::with_capacity(depth);
        let mut new_weights = Vec::with_capacity(depth);
        for l in 0..depth {
            let w = &weights[l];
            let g = &grads[l];
            let (new_w, gap, rescaled, norm_after) = match kind {
                OptimizerKind::MuonPP => {
                    let state = layer_states[l].state.as_mut().unwrap();
                    let (new_w, report) = muonpp_step(state, w, g, eta, &opts)?;
                    (new_w, report.gap_before, false, report.spectral_norm_after)
                }
                OptimizerKind::MuonPPRescale => {
                    let state = layer_states[l].state.as_mut().unwrap();
                    let (new_w, report) = muonpp_rescale_step(state, w, g, eta, &opts)?;
                    (
                        new_w,
                        report.gap_before,
                        report.rescaled,
                        report.spectral_norm_after,
                    )
                }
                OptimizerKind::Muon => {
                    let state = layer_states[l].state.as_mut().unwrap();
                    let info = top_two_singular(w, 1e-8, DEFAULT_MAX_ITER)
                        .expect("non-zero weight");
                    let (new_w, _) = muon_baseline_step(state, w, g, eta, false, &opts)?;
                    let norm = spectral_norm(&new_w, DEFAULT_TOL, DEFAULT_MAX_ITER);
                    (new_w, info.gap, false, norm)
                }
                OptimizerKind::Cascade => {
                    let info = top_two_singular(w, 1e-8, DEFAULT_MAX_ITER)
                        .expect("non-zero weight");
                    let (new_w, _) = cascade_step(w, g, eta, 1.0)?;
                    let norm = spectral_norm(&new_w, DEFAULT_TOL, DEFAULT_MAX_ITER);
                    (new_w, info.gap, false, norm)
                }
            };
            let update_norm = spectral_norm(&new_w.sub(w), DEFAULT_TOL, DEFAULT_MAX_ITER);
            per_layer.push(LayerStats {
                spectral_norm_w: norm_after,
                update_spectral_norm: update_norm,
                h_l2: mean_column_norm(&acts[l + 1]),
                delta_h_l2: 0.0, // filled below once all layers moved
                gap,
                rescaled,
            });
            new_weights.push(new_w);
        }

        // Feature movement on the same batch, after the whole step.
        let acts_after = forward(&new_weights, &x, config.activation)?;
        for l in 0..depth {
            per_layer[l].delta_h_l2 = mean_column_norm(&acts_after[l + 1].sub(&acts[l + 1]));
        }

        weights = new_weights;
        let loss = probe_loss(&weights)?;
        records.push(TrainRecord {
            step,
            loss,
            per_layer,
        });
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            diverged = true;
            break;
        }
    }

    Ok(TrainRun {
        records,
        diverged,
        final_weights: weights,
    })
}

/// One row of a coordinate-check table.
#[derive(Debug, Clone)]
pub struct CoordRow {
    pub multiplier: usize,
    pub step: usize,
    pub layer: usize,
    pub width: usize,
    /// `|h_l|_2 / sqrt(n_l)`, batch-averaged.
    pub h_ratio: f64,
    /// `|dh_l|_2 / sqrt(n_l)`, batch-averaged.
    pub dh_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct CoordTable {
    pub rows: Vec<CoordRow>,
}

impl CoordTable {
    pub fn csv(&self) -> String {
        let mut out = String::from("multiplier,step,layer,width,h_ratio,dh_ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.multiplier,
                r.step,
                r.layer,
                r.width,
                fmt_f64(r.h_ratio),
                fmt_f64(r.dh_ratio)
            ));
        }
        out
    }

    /// Worst cross-multiplier spread (max/min) of the two normalized
    /// statistics over hidden layers at steps `>= from_step`. `None` when
    /// fewer than two multipliers are present.
    pub fn max_spread(&self, from_step: usize) -> Option<(f64, f64)> {
        let mut multipliers: Vec<usize> = self.rows.iter().map(|r| r.multiplier).collect();
        multipliers.sort_unstable();
        multipliers.dedup();
        if multipliers.len() < 2 {
            return None;
        }
        let mut worst_h: f64 = 1.0;
        let mut worst_dh: f64 = 1.0;
        let mut keys: Vec<(usize, usize)> = self
            .rows
            .iter()
            .filter(|r| r.step >= from_step)
            .map(|r| (r.step, r.layer))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        for (step, layer) in keys {
            let group: Vec<&CoordRow> = self
                .rows
                .iter()
                .filter(|r| r.step == step && r.layer == layer)
                .collect();
            if group.len() < 2 {
                continue;
            }
            let spread = |f: &dyn Fn(&CoordRow) -> f64| -> f64 {
                let lo = group.iter().map(|r| f(r)).fold(f64::INFINITY, f64::min);
                let hi = group.iter().map(|r| f(r)).fold(0.0f64, f64::max);
                if lo > 0.0 {
                    hi / lo
                } else {
                    f64::INFINITY
                }
            };
            worst_h = worst_h.max(spread(&|r| r.h_ratio));
            worst_dh = worst_dh.max(spread(&|r| r.dh_ratio));
        }
        Some((worst_h, worst_dh))
    }
}

/// Trains one short run per width multiplier and tabulates the normalized
/// feature statistics per hidden layer per step.
pub fn coordinate_check(
    base: &MLPConfig,
    multipliers: &[usize],
    kind: OptimizerKind,
    eta: f64,
) -> Result<CoordTable> {
    if multipliers.is_empty() || multipliers.contains(&0) {
        return Err(Error::InvalidInput(
            "multipliers must be a non-empty list of positive integers".to_string(),
        ));
    }
    let mut rows = Vec::new();
    for &k in multipliers {
        let config = base.widened(k);
        let run = train_run(&config, kind, eta)?;
        for rec in &run.records {
            // Hidden layers only: the head is linear and its width fixed.
            for l in 1..config.depth() {
                let width = config.widths[l];
                let stats = &rec.per_layer[l - 1];
                rows.push(CoordRow {
                    multiplier: k,
                    step: rec.step,
                    layer: l,
                    width,
                    h_ratio: stats.h_l2 / (width as f64).sqrt(),
                    dh_ratio: stats.delta_h_l2 / (width as f64).sqrt(),
                });
            }
        }
    }
    Ok(CoordTable { rows })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub multiplier: usize,
    pub eta: f64,
    pub final_loss: f64,
    pub argmin: bool,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn csv(&self) -> String {
        let mut out = String::from("width_multiplier,eta,final_loss,argmin_flag\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.multiplier,
                fmt_f64(r.eta),
                fmt_f64(r.final_loss),
                r.argmin
            ));
        }
        out
    }

    pub fn argmin_eta(&self, multiplier: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.multiplier == multiplier && r.argmin)
            .map(|r| r.eta)
    }
}

/// Final probe loss per (width multiplier, step size), with the per-width
/// argmin flagged.
pub fn lr_sweep(
    base: &MLPConfig,
    multipliers: &[usize],
    eta_grid: &[f64],
    kind: OptimizerKind,
) -> Result<SweepTable> {
    if multipliers.is_empty() || multipliers.contains(&0) {
        return Err(Error::InvalidInput(
            "multipliers must be a non-empty list of positive integers".to_string(),
        ));
    }
    if eta_grid.is_empty() {
        return Err(Error::InvalidInput("eta grid must be non-empty".to_string()));
    }
    let mut rows = Vec::new();
    for &k in multipliers {
        let config = base.widened(k);
        let mut losses = Vec::with_capacity(eta_grid.len());
        for &eta in eta_grid {
            let run = train_run(&config, kind, eta)?;
            losses.push(run.final_loss());
        }
        let best = losses
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        for (i, (&eta, &loss)) in eta_grid.iter().zip(&losses).enumerate() {
            rows.push(SweepRow {
                multiplier: k,
                eta,
                final_loss: loss,
                argmin: i == best,
            });
        }
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm_exact;

    fn small_config() -> MLPConfig {
        MLPConfig {
            widths: vec![8, 16, 16, 4],
            activation: Activation::Tanh,
            loss: Loss::SquaredError,
            batch_size: 4,
            steps: 5,
            seed: 42,
        }
    }

    #[test]
    fn init_hits_the_spectral_targets_exactly() {
        let config = small_config();
        let weights = mup_init(&config).unwrap();
        for (l, w) in weights.iter().enumerate() {
            let s = (config.widths[l + 1] as f64 / config.widths[l] as f64).sqrt();
            let norm = spectral_norm_exact(w);
            assert!(
                (norm - s).abs() <= 1e-12 * s,
                "layer {}: norm {} target {}",
                l + 1,
                norm,
                s
            );
        }
    }

    #[test]
    fn uniform_widths_give_unit_targets() {
        let config = MLPConfig {
            widths: vec![64, 64, 64],
            ..small_config()
        };
        for w in mup_init(&config).unwrap() {
            assert!((spectral_norm_exact(&w) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn init_entries_look_gaussian() {
        // Kurtosis is scale-invariant, so it can be checked after the
        // spectral rescaling; 128x64 = 8192 entries.
        let config = MLPConfig {
            widths: vec![64, 128, 4],
            ..small_config()
        };
        let w = &mup_init(&config).unwrap()[0];
        let k = w.data().len() as f64;
        let mean = w.data().iter().sum::<f64>() / k;
        let m2 = w.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k;
        let m4 = w.data().iter().map(|x| (x - mean).powi(4)).sum::<f64>() / k;
        let kurtosis = m4 / (m2 * m2);
        assert!(
            (2.5..=3.5).contains(&kurtosis),
            "sample kurtosis {kurtosis} outside [2.5, 3.5]"
        );
    }

    #[test]
    fn zero_input_gives_zero_activations_for_odd_activation() {
        let config = small_config();
        let weights = mup_init(&config).unwrap();
        let x = Matrix::zeros(8, 3);
        let acts = forward(&weights, &x, Activation::Tanh).unwrap();
        for h in &acts[1..] {
            assert!(h.is_zero());
        }
    }

    #[test]
    fn identity_network_is_a_linear_composition() {
        let config = MLPConfig {
            widths: vec![6, 10, 5],
            activation: Activation::Identity,
            ..small_config()
        };
        let weights = mup_init(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian_batch(&mut rng, 6, 3);
        let acts = forward(&weights, &x, Activation::Identity).unwrap();
        let direct = weights[1].matmul(&weights[0]).matmul(&x);
        assert!(acts[2].sub(&direct).frobenius_norm() < 1e-12);
    }

    #[test]
    fn forward_shapes_and_finiteness() {
        let config = small_config();
        let weights = mup_init(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian_batch(&mut rng, 8, 4);
        let acts = forward(&weights, &x, config.activation).unwrap();
        assert_eq!(acts.len(), 4);
        for (h, &w) in acts.iter().zip(&config.widths) {
            assert_eq!(h.rows(), w);
            assert_eq!(h.cols(), 4);
            assert!(h.is_finite());
        }
        // Dimension mismatch is invalid input.
        let bad = Matrix::zeros(7, 4);
        assert!(forward(&weights, &bad, config.activation).is_err());
    }

    #[test]
    fn zero_error_means_zero_gradients() {
        let config = small_config();
        let weights = mup_init(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian_batch(&mut rng, 8, 4);
        let acts = forward(&weights, &x, config.activation).unwrap();
        let target = acts.last().unwrap().clone();
        let grads = backward(&weights, &acts, &target, config.activation).unwrap();
        for g in grads {
            assert!(g.is_zero());
        }
    }

    #[test]
    fn linear_two_layer_gradient_matches_closed_form() {
        // Loss (1/2B)|W2 W1 X - Y|_F^2: dW2 = E (W1 X)^T / B, dW1 = W2^T E X^T / B.
        let config = MLPConfig {
            widths: vec![5, 7, 3],
            activation: Activation::Identity,
            ..small_config()
        };
        let weights = mup_init(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian_batch(&mut rng, 5, 6);
        let y = gaussian_batch(&mut rng, 3, 6);
        let acts = forward(&weights, &x, Activation::Identity).unwrap();
        let grads = backward(&weights, &acts, &y, Activation::Identity).unwrap();

        let b = 6.0;
        let err = weights[1].matmul(&weights[0]).matmul(&x).sub(&y);
        let want_g2 = err.matmul(&weights[0].matmul(&x).transpose()).scale(1.0 / b);
        let want_g1 = weights[1]
            .transpose()
            .matmul(&err)
            .matmul(&x.transpose())
            .scale(1.0 / b);
        assert!(grads[1].sub(&want_g2).frobenius_norm() < 1e-12);
        assert!(grads[0].sub(&want_g1).frobenius_norm() < 1e-12);
    }

    /// Central finite differences against the analytic gradients.
    fn finite_difference_check(config: &MLPConfig, activation: Activation) -> f64 {
        let config = MLPConfig {
            activation,
            ..config.clone()
        };
        let weights = mup_init(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian_batch(&mut rng, config.widths[0], config.batch_size);
        let y = gaussian_batch(&mut rng, *config.widths.last().unwrap(), config.batch_size);
        let acts = forward(&weights, &x, activation).unwrap();
        let grads = backward(&weights, &acts, &y, activation).unwrap();

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for l in 0..weights.len() {
            for i in 0..weights[l].rows() {
                for j in 0..weights[l].cols() {
                    let base = weights[l].get(i, j);
                    let mut plus = weights.to_vec();
                    plus[l].set(i, j, base + h);
                    let mut minus = weights.to_vec();
                    minus[l].set(i, j, base - h);
                    let lp = squared_error_loss(
                        forward(&plus, &x, activation).unwrap().last().unwrap(),
                        &y,
                    );
                    let lm = squared_error_loss(
                        forward(&minus, &x, activation).unwrap().last().unwrap(),
                        &y,
                    );
                    let numeric = (lp - lm) / (2.0 * h);
                    let analytic = grads[l].get(i, j);
                    worst = worst.max((analytic - numeric).abs() / (analytic.abs() + 1e-8));
                }
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let config = MLPConfig {
            widths: vec![6, 9, 8, 4],
            batch_size: 3,
            ..small_config()
        };
        for activation in [Activation::Tanh, Activation::Identity, Activation::Relu] {
            let worst = finite_difference_check(&config, activation);
            assert!(
                worst <= 1e-5,
                "{activation:?}: worst relative gradient error {worst}"
            );
        }
    }

    #[test]
    fn zero_step_size_freezes_the_run() {
        let config = small_config();
        let run = train_run(&config, OptimizerKind::MuonPP, 0.0).unwrap();
        assert!(!run.diverged);
        let first = run.records.first().unwrap().loss;
        for rec in &run.records {
            assert_eq!(rec.loss, first, "probe loss constant at eta = 0");
            for stats in &rec.per_layer {
                assert_eq!(stats.update_spectral_norm, 0.0);
            }
        }
    }

    #[test]
    fn training_runs_are_deterministic() {
        let config = small_config();
        let a = train_run(&config, OptimizerKind::MuonPPRescale, 0.1).unwrap();
        let b = train_run(&config, OptimizerKind::MuonPPRescale, 0.1).unwrap();
        assert_eq!(a.csv(), b.csv());
    }

    #[test]
    fn rescale_run_pins_every_layer_norm() {
        let config = MLPConfig {
            widths: vec![12, 24, 24, 6],
            steps: 20,
            ..small_config()
        };
        let run = train_run(&config, OptimizerKind::MuonPPRescale, 0.15).unwrap();
        assert!(!run.diverged);
        for rec in &run.records {
            for (l, stats) in rec.per_layer.iter().enumerate() {
                let s = (config.widths[l + 1] as f64 / config.widths[l] as f64).sqrt();
                assert!(
                    (stats.spectral_norm_w - s).abs() <= 1e-9 * s,
                    "step {} layer {}: norm {} target {}",
                    rec.step,
                    l + 1,
                    stats.spectral_norm_w,
                    s
                );
            }
        }
        // Check the final weights against the exact oracle too.
        for (l, w) in run.final_weights.iter().enumerate() {
            let s = (config.widths[l + 1] as f64 / config.widths[l] as f64).sqrt();
            assert!((spectral_norm_exact(w) - s).abs() <= 1e-9 * s);
        }
    }

    #[test]
    fn short_runs_reduce_the_loss() {
        let config = MLPConfig {
            widths: vec![8, 24, 24, 4],
            steps: 40,
            ..small_config()
        };
        for kind in [OptimizerKind::MuonPP, OptimizerKind::MuonPPRescale] {
            let run = train_run(&config, kind, 0.02).unwrap();
            assert!(!run.diverged);
            assert!(
                run.final_loss() < run.initial_loss(),
                "{kind:?}: {} -> {}",
                run.initial_loss(),
                run.final_loss()
            );
        }
    }

    #[test]
    fn single_width_coordinate_table_has_no_comparison() {
        let config = small_config();
        let table = coordinate_check(&config, &[2], OptimizerKind::MuonPP, 0.1).unwrap();
        assert!(table.max_spread(3).is_none());
        assert!(!table.rows.is_empty());
        // One row group per (step, hidden layer).
        let expected = (config.steps + 1) * (config.depth() - 1);
        assert_eq!(table.rows.len(), expected);
    }

    #[test]
    fn single_eta_sweep_is_trivially_argmin() {
        let config = MLPConfig {
            steps: 2,
            ..small_config()
        };
        let table = lr_sweep(&config, &[1], &[0.05], OptimizerKind::MuonPP).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(table.rows[0].argmin);
        assert_eq!(table.argmin_eta(1), Some(0.05));
    }

    #[test]
    fn train_csv_has_one_row_per_step_layer() {
        let config = MLPConfig {
            steps: 3,
            ..small_config()
        };
        let run = train_run(&config, OptimizerKind::Muon, 0.01).unwrap();
        let csv = run.csv();
        let rows = csv.lines().count() - 1;
        assert_eq!(rows, (config.steps + 1) * config.depth());
    }
}
