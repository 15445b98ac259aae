//! Alternating first-order search and plain architecture training.
//!
//! One search epoch is (a) a weight step: Adam on the training loss with the
//! mixture coefficients held fixed, then (b) a mixture step: Adam on the
//! validation loss, plus `lambda` times the mean node entropy when asked,
//! with the weights held fixed. Frozen edges never receive mixture updates,
//! but their chosen operation's weights keep training like any other weight.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::gnnops::{AggregationViews, OpKind};
use crate::graph::{Graph, Label, MaskKind};
use crate::scalar::Scalar;
use crate::seeding::rng_from;
use crate::supernet::{full_opset, Binding, DerivedArchitecture, SupernetModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Alternating epochs for architecture search.
    pub epochs_search: usize,
    /// Weight-only epochs when training a discretized architecture.
    pub epochs_eval: usize,
    pub lr_w: f64,
    pub lr_alpha: f64,
    /// Decoupled decay on operation and projection weights; mixture steps
    /// run without decay.
    pub weight_decay: f64,
    /// Weight of the entropy regularizer in the mixture objective. The
    /// full-cell search ignores it (no regularizer there); localized search
    /// and the expansion stage apply it.
    pub lambda: f64,
    /// Fraction of labeled non-test nodes assigned to training when a
    /// subgraph is re-split.
    pub train_val_ratio: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            epochs_search: 50,
            epochs_eval: 50,
            lr_w: 2e-3,
            lr_alpha: 5e-4,
            weight_decay: 3e-4,
            lambda: 0.1,
            train_val_ratio: 0.5,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_w > 0.0 && self.lr_w.is_finite()) {
            return Err(Error::config("lr_w must be positive"));
        }
        if !(self.lr_alpha > 0.0 && self.lr_alpha.is_finite()) {
            return Err(Error::config("lr_alpha must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be nonnegative"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda must be nonnegative"));
        }
        if !(self.train_val_ratio > 0.0 && self.train_val_ratio < 1.0) {
            return Err(Error::config(
                "train_val_ratio must lie strictly between 0 and 1",
            ));
        }
        Ok(())
    }
}

/// Per-epoch scalars from one search run. `val_losses` and `reg_values`
/// stay empty when there is nothing trainable on the mixture side.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub reg_values: Vec<f64>,
}

/// Outcome of training a fixed architecture from fresh parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub val_accuracy: f64,
    /// Present when the graph has a nonempty test mask.
    pub test_accuracy: Option<f64>,
    pub train_losses: Vec<f64>,
    pub wall_secs: f64,
}

/// Drive `epochs` alternating epochs on an existing model, in place.
/// `lambda` weights the entropy regularizer in the mixture objective; pass 0
/// for plain validation-loss descent. When every edge is frozen this is
/// weight-only training and the mixture step is skipped.
pub fn alternating_search<S: Scalar>(
    model: &mut SupernetModel<S>,
    g: &Graph<S>,
    cfg: &SearchConfig,
    lambda: f64,
    epochs: usize,
) -> Result<SearchTrace> {
    cfg.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config("lambda must be nonnegative"));
    }
    let mut trace = SearchTrace::default();
    if epochs == 0 {
        return Ok(trace);
    }
    let views = AggregationViews::of(g);
    let labels: Vec<Label> = g.labels().to_vec();
    let train_mask = g.mask_vec(MaskKind::Train);
    let val_mask = g.mask_vec(MaskKind::Val);
    if !train_mask.iter().any(|&b| b) {
        return Err(Error::data("training mask is empty"));
    }
    let trainable = model.trainable_edges();
    if !trainable.is_empty() && !val_mask.iter().any(|&b| b) {
        return Err(Error::data("validation mask is empty"));
    }
    let mut adam_w = Adam::new(AdamConfig::new(cfg.lr_w, cfg.weight_decay), &model.w_shapes());
    let alpha_shapes = vec![(1, model.opset.len()); trainable.len()];
    let mut adam_a = Adam::new(AdamConfig::new(cfg.lr_alpha, 0.0), &alpha_shapes);

    for epoch in 0..epochs {
        let wrap =
            |err: Error| Error::numerical("alternating_search", format!("epoch {epoch}: {err}"));

        // (a) Weight step on the training loss; mixtures fixed.
        {
            let mut tape = Tape::new();
            let bound = model
                .forward(&mut tape, g.features(), &views, Binding::WStep)
                .map_err(wrap)?;
            let loss = tape
                .masked_cross_entropy(&bound.logits, &labels, &train_mask)
                .map_err(wrap)?;
            let train_loss = loss.scalar().to64();
            if !train_loss.is_finite() {
                return Err(Error::numerical(
                    "alternating_search",
                    format!("epoch {epoch}: training loss is not finite"),
                ));
            }
            let grads = tape.backward(&loss).map_err(wrap)?;
            adam_w.begin_step();
            let mut slot = 0;
            model.for_each_w_slot_mut(&mut |m| {
                adam_w.update(slot, m, &grads.wrt(&bound.w_leaves[slot]));
                slot += 1;
            });
            trace.train_losses.push(train_loss);
        }

        // (b) Mixture step on the validation objective; weights fixed.
        if !trainable.is_empty() {
            let mut tape = Tape::new();
            let bound = model
                .forward(&mut tape, g.features(), &views, Binding::AlphaStep)
                .map_err(wrap)?;
            let val = tape
                .masked_cross_entropy(&bound.logits, &labels, &val_mask)
                .map_err(wrap)?;
            let val_loss = val.scalar().to64();
            if !val_loss.is_finite() {
                return Err(Error::numerical(
                    "alternating_search",
                    format!("epoch {epoch}: validation loss is not finite"),
                ));
            }
            let reg_value = bound.reg.scalar().to64();
            let objective = if lambda > 0.0 {
                let scaled = tape.mul_scalar(&bound.reg, S::of(lambda)).map_err(wrap)?;
                tape.add(&val, &scaled).map_err(wrap)?
            } else {
                val
            };
            let grads = tape.backward(&objective).map_err(wrap)?;
            adam_a.begin_step();
            let mut rows: Vec<((usize, usize), Vec<S>)> =
                Vec::with_capacity(bound.alpha_leaves.len());
            for (i, (edge, leaf)) in bound.alpha_leaves.iter().enumerate() {
                let mut row = leaf.value().clone();
                adam_a.update(i, &mut row, &grads.wrt(leaf));
                rows.push((*edge, row.data().to_vec()));
            }
            model.set_trainable_alpha(&rows).map_err(wrap)?;
            trace.val_losses.push(val_loss);
            trace.reg_values.push(reg_value);
        }
    }
    Ok(trace)
}

/// Search a fresh, fully trainable supernet over a dense cell. No entropy
/// regularizer; the mixture objective is the plain validation loss.
pub fn darts_search<S: Scalar>(
    g: &Graph<S>,
    opset: Vec<OpKind>,
    hidden: usize,
    cells: usize,
    p0: usize,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<(SupernetModel<S>, SearchTrace)> {
    let mut rng = rng_from(seed);
    let mut model = SupernetModel::new(
        g.feat_dim(),
        hidden,
        g.num_classes(),
        cells,
        p0,
        opset,
        &mut rng,
    )?;
    let trace = alternating_search(&mut model, g, cfg, 0.0, cfg.epochs_search)?;
    Ok((model, trace))
}

/// Re-search the trainable (recently reopened) edges of a partially frozen
/// model under the entropy-regularized objective. Frozen mixtures stay put;
/// every weight in the model keeps training.
pub fn localized_search<S: Scalar>(
    model: &mut SupernetModel<S>,
    g: &Graph<S>,
    cfg: &SearchConfig,
    lambda: f64,
) -> Result<SearchTrace> {
    if model.trainable_edges().is_empty() {
        return Err(Error::config(
            "localized search needs at least one trainable edge",
        ));
    }
    alternating_search(model, g, cfg, lambda, cfg.epochs_search)
}

/// Train a discretized architecture from fresh parameters for
/// `cfg.epochs_eval` weight epochs and report masked accuracies.
pub fn train_eval<S: Scalar>(
    arch: &DerivedArchitecture,
    g: &Graph<S>,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<EvalResult> {
    let start = Instant::now();
    let mut rng = rng_from(seed);
    let mut model =
        SupernetModel::from_frozen(arch, g.feat_dim(), g.num_classes(), full_opset(), &mut rng)?;
    let trace = alternating_search(&mut model, g, cfg, 0.0, cfg.epochs_eval)?;
    let views = AggregationViews::of(g);
    let mut tape = Tape::new();
    let bound = model.forward(&mut tape, g.features(), &views, Binding::Eval)?;
    let logits = bound.logits.value();
    let val_mask = g.mask_vec(MaskKind::Val);
    let val_accuracy = masked_accuracy(logits, g.labels(), &val_mask)?;
    let test_mask = g.mask_vec(MaskKind::Test);
    let test_accuracy = if test_mask.iter().any(|&b| b) {
        Some(masked_accuracy(logits, g.labels(), &test_mask)?)
    } else {
        None
    };
    Ok(EvalResult {
        val_accuracy,
        test_accuracy,
        train_losses: trace.train_losses,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Fraction of masked rows whose argmax logit matches the label. Ties go to
/// the lowest class index.
pub fn masked_accuracy<S: Scalar>(logits: &Mat<S>, labels: &[Label], mask: &[bool]) -> Result<f64> {
    if logits.rows() != labels.len() || labels.len() != mask.len() {
        return Err(Error::data("accuracy inputs disagree on node count"));
    }
    let mut total = 0usize;
    let mut hits = 0usize;
    for r in 0..logits.rows() {
        if !mask[r] {
            continue;
        }
        total += 1;
        let mut best = 0;
        for c in 1..logits.cols() {
            if logits.at(r, c) > logits.at(r, best) {
                best = c;
            }
        }
        if labels[r] == best as Label {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::data("accuracy mask is empty"));
    }
    Ok(hits as f64 / total as f64)
}
