use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Activations, Fusion, FusionKind, ModelParams};
use crate::dataset::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, rng_from_seed, sgd_step, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Linear decay from `learning_rate` to `learning_rate * final_lr_fraction`.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub fusion: FusionKind,
    pub init_scale: f64,
    /// Probability of replacing a content token by `[MASK]` during training.
    pub mask_dropout: f64,
    pub lr_schedule: LrSchedule,
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 0,
            loss: LossKind::Mae,
            embed_dim: 12,
            hidden_dim: 12,
            fusion: FusionKind::Concat,
            init_scale: 0.1,
            mask_dropout: 0.05,
            lr_schedule: LrSchedule::Linear,
            final_lr_fraction: 0.02,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("embed_dim and hidden_dim must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.mask_dropout) {
            return bad("mask_dropout must lie in [0, 1]");
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final_lr_fraction must lie in (0, 1]");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be >= 0");
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Linear => {
                let t = if self.epochs <= 1 {
                    0.0
                } else {
                    epoch as f64 / (self.epochs - 1) as f64
                };
                self.learning_rate * (1.0 - t * (1.0 - self.final_lr_fraction))
            }
        }
    }
}

/// Accumulates `d_out * d(output)/d(params)` into `grads`.
fn backward(
    params: &ModelParams,
    act: &Activations,
    rows: &[usize],
    d_out: f64,
    grads: &mut ModelParams,
) -> Result<()> {
    let head_w = params.head.weights.row(0);
    grads.head.weights.add_outer(&[1.0], &act.fused, d_out);
    grads.head.bias[0] += d_out;
    let d_fused: Vec<f64> = head_w.iter().map(|w| w * d_out).collect();

    let dh = params.hidden_dim();
    let (d_lang, d_audio, d_visual): (Vec<f64>, Vec<f64>, Vec<f64>) =
        match (&params.fusion, &mut grads.fusion) {
            (Fusion::Concat { projection }, Fusion::Concat { projection: gp }) => {
                let z: Vec<f64> = act
                    .lang
                    .iter()
                    .chain(act.audio.iter())
                    .chain(act.visual.iter())
                    .copied()
                    .collect();
                gp.weights.add_outer(&d_fused, &z, 1.0);
                for (b, d) in gp.bias.iter_mut().zip(&d_fused) {
                    *b += d;
                }
                let dz = projection.weights.mul_transpose_vec(&d_fused)?;
                (
                    dz[..dh].to_vec(),
                    dz[dh..2 * dh].to_vec(),
                    dz[2 * dh..].to_vec(),
                )
            }
            (
                Fusion::Gated {
                    language,
                    audio,
                    visual,
                },
                Fusion::Gated {
                    language: gl,
                    audio: ga,
                    visual: gv,
                },
            ) => {
                let branch = |gates: &[f64], g_gates: &mut [f64], x: &[f64]| -> Vec<f64> {
                    (0..dh)
                        .map(|i| {
                            let s = sigmoid(gates[i]);
                            g_gates[i] += d_fused[i] * x[i] * s * (1.0 - s);
                            d_fused[i] * s
                        })
                        .collect()
                };
                let dl = branch(language, gl, &act.lang);
                let da = branch(audio, ga, &act.audio);
                let dv = branch(visual, gv, &act.visual);
                (dl, da, dv)
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "gradient buffer does not match model fusion".into(),
                ))
            }
        };

    grads
        .audio_encoder
        .weights
        .add_outer(&d_audio, &act.audio_in, 1.0);
    for (b, d) in grads.audio_encoder.bias.iter_mut().zip(&d_audio) {
        *b += d;
    }
    grads
        .visual_encoder
        .weights
        .add_outer(&d_visual, &act.visual_in, 1.0);
    for (b, d) in grads.visual_encoder.bias.iter_mut().zip(&d_visual) {
        *b += d;
    }
    grads
        .lang_encoder
        .weights
        .add_outer(&d_lang, &act.pooled, 1.0);
    for (b, d) in grads.lang_encoder.bias.iter_mut().zip(&d_lang) {
        *b += d;
    }
    let d_pooled = params.lang_encoder.weights.mul_transpose_vec(&d_lang)?;
    let share = 1.0 / rows.len() as f64;
    for &r in rows {
        for (g, d) in grads.embeddings.row_mut(r).iter_mut().zip(d_pooled.iter()) {
            *g += d * share;
        }
    }
    Ok(())
}

/// Subgradient of `|r|`, taking 0 at the kink.
fn abs_subgradient(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(
    params: &ModelParams,
    u: &Utterance,
    mask: Option<&[bool]>,
    scale: f64,
    grads: &mut ModelParams,
) -> Result<f64> {
    let rows = params.token_rows(&u.tokens, mask)?;
    let pooled = params.pool_rows(&rows);
    let act = params.forward(pooled, &u.audio, &u.visual)?;
    let r = act.output - u.label;
    backward(params, &act, &rows, abs_subgradient(r) * scale, grads)?;
    Ok(r.abs())
}

/// Mean absolute error over `batch` and its gradient (no mask dropout).
pub fn loss_and_gradient(params: &ModelParams, batch: &[&Utterance]) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    let mut grads = params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for u in batch {
        loss += accumulate(params, u, None, scale, &mut grads)?;
    }
    Ok((loss * scale, grads))
}

fn train_mae(params: &ModelParams, train: &[Utterance]) -> Result<f64> {
    let mut total = 0.0;
    for u in train {
        let pooled = params.pool_tokens(&u.tokens, None)?;
        total += (params.forward(pooled, &u.audio, &u.visual)?.output - u.label).abs();
    }
    Ok(total / train.len() as f64)
}

/// Mini-batch subgradient descent on the training split's MAE.
///
/// Content tokens are swapped for `[MASK]` with probability
/// `config.mask_dropout` so the mask row is trained. Randomness comes from
/// child seeds of `config.seed` (`init`, `order`, `mask`).
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<ModelParams> {
    config.validate()?;
    if corpus.train.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    let mut tokens: Vec<&str> = corpus.vocabulary.tokens().collect();
    let known: std::collections::HashSet<&str> = tokens.iter().copied().collect();
    let mut extra: Vec<&str> = corpus
        .train
        .iter()
        .flat_map(|u| u.tokens.iter().map(String::as_str))
        .filter(|t| !known.contains(t))
        .collect();
    extra.sort_unstable();
    extra.dedup();
    tokens.extend(extra);

    let mut init_rng = rng_from_seed(derive_seed(config.seed, "init"));
    let mut params = ModelParams::init(
        tokens,
        corpus.audio_dim,
        corpus.visual_dim,
        config.embed_dim,
        config.hidden_dim,
        config.fusion,
        config.init_scale,
        &mut init_rng,
    )?;
    let mut order_rng = rng_from_seed(derive_seed(config.seed, "order"));
    let mut mask_rng = rng_from_seed(derive_seed(config.seed, "mask"));

    let n = corpus.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut grads = params.zeros_like();
    let mut mask = Vec::new();
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut order_rng);
        for batch in order.chunks(config.batch_size) {
            for s in grads.slices_mut() {
                s.fill(0.0);
            }
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in batch {
                let u = &corpus.train[i];
                mask.clear();
                mask.extend(u.content_flags.iter().map(|&c| {
                    c && config.mask_dropout > 0.0 && mask_rng.random_bool(config.mask_dropout)
                }));
                loss += accumulate(&params, u, Some(&mask), scale, &mut grads)?;
            }
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            for (p, g) in params.slices_mut().into_iter().zip(grads.slices()) {
                sgd_step(p, g, lr).map_err(|e| match e {
                    Error::NumericOverflow(_) => Error::TrainingDiverged { epoch },
                    other => other,
                })?;
            }
        }
        if params
            .slices()
            .iter()
            .any(|s| s.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::TrainingDiverged { epoch });
        }
    }
    let mae = train_mae(&params, &corpus.train)?;
    if !mae.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: config.epochs,
        });
    }
    params.train_mae = Some(mae);
    Ok(params)
}
