use log::warn;

use crate::error::Result;
use crate::numerics::{Matrix, RandomSource};
use crate::rbm::{sgd_epoch_for, LayerKind, RbmParams, TrainConfig};

use super::masks::{importance_order, pdc_rates, pdo_rates, retain_count, MaskSpec};
use super::runtime::Regularizer;
use super::{RegConfig, RegMode, ReferenceWeights};

/// Reported after every training epoch.
pub struct EpochEvent<'a> {
    /// 1-based epoch counter, continuous across phases.
    pub epoch: usize,
    pub phase: &'a str,
    pub params: &'a RbmParams,
    pub penalty: f64,
    pub regularizer: &'a Regularizer,
}

pub type Observer<'o> = dyn FnMut(&EpochEvent<'_>) -> Result<()> + 'o;

#[derive(Clone, Debug)]
pub struct TrainedLayer {
    pub params: RbmParams,
    /// Regularizer of the final phase (defines the mean network).
    pub regularizer: Regularizer,
    pub reference: Option<ReferenceWeights>,
}

#[derive(Clone, Debug)]
pub struct InpOutcome {
    pub params: RbmParams,
    /// Frozen mask after each round; retained sets are nested.
    pub masks: Vec<MaskSpec>,
}

/// Split `total` epochs into `parts` contiguous segments differing by at most one.
pub fn split_epochs(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|s| total * (s + 1) / parts - total * s / parts)
        .collect()
}

struct Phase<'a, 'o> {
    kind: LayerKind,
    data: &'a Matrix,
    config: &'a TrainConfig,
    rng: &'a RandomSource,
    next_epoch: usize,
    observer: &'a mut Observer<'o>,
}

impl Phase<'_, '_> {
    fn run(&mut self, mut params: RbmParams, reg: &Regularizer, epochs: usize, name: &str) -> Result<RbmParams> {
        for _ in 0..epochs {
            let out = sgd_epoch_for(self.kind, &params, self.data, self.config, reg, self.rng, self.next_epoch)?;
            params = out.params;
            self.next_epoch += 1;
            (self.observer)(&EpochEvent {
                epoch: self.next_epoch,
                phase: name,
                params: &params,
                penalty: out.penalty,
                regularizer: reg,
            })?;
        }
        Ok(params)
    }
}

fn bake(params: &mut RbmParams, spec: &MaskSpec) -> Result<()> {
    params.weights = params.weights.hadamard(&spec.to_matrix())?;
    Ok(())
}

/// Train one layer under `reg_cfg`, including the unregularized first phase
/// of modes that need `Ŵ`: half the epochs for L²+AL¹ (L²-only), SNP, PDO
/// and PDC; one of `rounds + 1` equal segments for INP.
pub fn train_regularized(
    kind: LayerKind,
    init: RbmParams,
    data: &Matrix,
    config: &TrainConfig,
    reg_cfg: &RegConfig,
    rng: &RandomSource,
    observer: &mut Observer<'_>,
) -> Result<TrainedLayer> {
    reg_cfg.validate()?;
    config.validate()?;
    let mut phase = Phase {
        kind,
        data,
        config,
        rng,
        next_epoch: 0,
        observer,
    };
    let epochs = config.epochs;

    if !reg_cfg.mode.needs_reference() {
        let reg = Regularizer::from_config(reg_cfg, None)?;
        let params = phase.run(init, &reg, epochs, "train")?;
        return Ok(TrainedLayer {
            params,
            regularizer: reg,
            reference: None,
        });
    }

    if reg_cfg.mode == RegMode::Inp {
        let segments = split_epochs(epochs, reg_cfg.rounds + 1);
        let params = phase.run(init, &Regularizer::none(), segments[0], "pretrain")?;
        let reference = ReferenceWeights::new(params.weights.clone());
        let out = inp_rounds(&mut phase, params, reg_cfg.p, &segments[1..])?;
        let last = out.masks.last().cloned().expect("at least one round");
        return Ok(TrainedLayer {
            params: out.params,
            regularizer: Regularizer::with_mask(RegMode::Inp, last),
            reference: Some(reference),
        });
    }

    let halves = split_epochs(epochs, 2);
    let first = if reg_cfg.mode == RegMode::L2al1 {
        Regularizer::l2(reg_cfg.lambda)
    } else {
        Regularizer::none()
    };
    let params = phase.run(init, &first, halves[0], "pretrain")?;
    let reference = ReferenceWeights::new(params.weights.clone());

    match reg_cfg.mode {
        RegMode::Pdo | RegMode::Pdc => {
            let (params, reg) = partial_rounds(&mut phase, params, reg_cfg, halves[1])?;
            Ok(TrainedLayer {
                params,
                regularizer: reg,
                reference: Some(reference),
            })
        }
        _ => {
            let reg = Regularizer::from_config(reg_cfg, Some(reference.clone()))?;
            let mut params = phase.run(params, &reg, halves[1], "retrain")?;
            if let Some(spec) = reg.mask_spec().filter(|s| s.is_frozen()) {
                bake(&mut params, spec)?;
            }
            Ok(TrainedLayer {
                params,
                regularizer: reg,
                reference: Some(reference),
            })
        }
    }
}

fn inp_rounds(phase: &mut Phase<'_, '_>, mut params: RbmParams, p: f64, round_epochs: &[usize]) -> Result<InpOutcome> {
    let rounds = round_epochs.len();
    let total = params.weights.len();
    let (rows, cols) = params.weights.shape();
    let mut retained = vec![true; total];
    let mut masks = Vec::with_capacity(rounds);
    for (t, &epochs) in round_epochs.iter().enumerate() {
        let target = retain_count(1.0 - (t + 1) as f64 * (1.0 - p) / rounds as f64, total);
        let current = retained.iter().filter(|&&r| r).count();
        if current <= target {
            warn!("pruning round {} has no weights left to cut; skipping the cut", t + 1);
        } else {
            // Rank currently retained weights by magnitude; pruned ones rank last.
            let mags: Vec<f64> = params
                .weights
                .as_slice()
                .iter()
                .zip(&retained)
                .map(|(w, &r)| if r { w.abs() } else { f64::NEG_INFINITY })
                .collect();
            let mut next = vec![false; total];
            for &i in importance_order(&mags).iter().take(target) {
                next[i] = true;
            }
            retained = next;
        }
        let data = retained.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect();
        let spec = MaskSpec::edge(Matrix::from_vec(rows, cols, data)?, true)?;
        let reg = Regularizer::with_mask(RegMode::Inp, spec.clone());
        params = phase.run(params, &reg, epochs, &format!("prune-{}", t + 1))?;
        bake(&mut params, &spec)?;
        masks.push(spec);
    }
    Ok(InpOutcome { params, masks })
}

fn partial_rounds(
    phase: &mut Phase<'_, '_>,
    mut params: RbmParams,
    reg_cfg: &RegConfig,
    epochs: usize,
) -> Result<(RbmParams, Regularizer)> {
    let updates = reg_cfg.partial_updates;
    let mut last = Regularizer::none();
    for (u, e) in split_epochs(epochs, updates.max(1)).into_iter().enumerate().take(updates) {
        // Rates from the current estimate θ̂_p.
        let reference = ReferenceWeights::new(params.weights.clone());
        let spec = match reg_cfg.mode {
            RegMode::Pdo => pdo_rates(&reference, reg_cfg.p0, reg_cfg.q)?,
            _ => pdc_rates(&reference, reg_cfg.p0, reg_cfg.q)?,
        };
        last = Regularizer::with_mask(reg_cfg.mode, spec);
        params = phase.run(params, &last, e, &format!("partial-{}", u + 1))?;
    }
    Ok((params, last))
}

/// Iterative network pruning from trained `params`: `rounds` rounds, each
/// cutting a further `(1 − p)/rounds` of all weights by magnitude among the
/// retained ones and retraining for `config.epochs` epochs.
pub fn inp_loop(
    kind: LayerKind,
    params: RbmParams,
    data: &Matrix,
    p: f64,
    rounds: usize,
    config: &TrainConfig,
    rng: &RandomSource,
) -> Result<InpOutcome> {
    RegConfig {
        p,
        rounds,
        ..RegConfig::with_mode(RegMode::Inp)
    }
    .validate()?;
    let mut noop = |_: &EpochEvent<'_>| Ok(());
    let mut phase = Phase {
        kind,
        data,
        config,
        rng,
        next_epoch: 0,
        observer: &mut noop,
    };
    inp_rounds(&mut phase, params, p, &vec![config.epochs; rounds])
}

fn partial_loop(
    mode: RegMode,
    kind: LayerKind,
    params: RbmParams,
    data: &Matrix,
    p0: f64,
    q: f64,
    iterations: usize,
    config: &TrainConfig,
    rng: &RandomSource,
) -> Result<(RbmParams, Option<MaskSpec>)> {
    let reg_cfg = RegConfig {
        p0,
        q,
        partial_updates: iterations,
        ..RegConfig::with_mode(mode)
    };
    reg_cfg.validate()?;
    let mut noop = |_: &EpochEvent<'_>| Ok(());
    let mut phase = Phase {
        kind,
        data,
        config,
        rng,
        next_epoch: 0,
        observer: &mut noop,
    };
    let (params, reg) = partial_rounds(&mut phase, params, &reg_cfg, config.epochs * iterations)?;
    Ok((params, reg.mask_spec().cloned()))
}

/// Partial DropConnect retraining: `iterations` rounds of recomputing the
/// retain rates from the current weights and retraining with DropConnect for
/// `config.epochs` epochs. Returns the final parameters and the last rates.
pub fn pdc_loop(
    kind: LayerKind,
    params: RbmParams,
    data: &Matrix,
    p0: f64,
    q: f64,
    iterations: usize,
    config: &TrainConfig,
    rng: &RandomSource,
) -> Result<(RbmParams, Option<MaskSpec>)> {
    partial_loop(RegMode::Pdc, kind, params, data, p0, q, iterations, config, rng)
}

/// Partial Dropout analogue of [`pdc_loop`], protecting hidden units by row norm.
pub fn pdo_loop(
    kind: LayerKind,
    params: RbmParams,
    data: &Matrix,
    p0: f64,
    q: f64,
    iterations: usize,
    config: &TrainConfig,
    rng: &RandomSource,
) -> Result<(RbmParams, Option<MaskSpec>)> {
    partial_loop(RegMode::Pdo, kind, params, data, p0, q, iterations, config, rng)
}
