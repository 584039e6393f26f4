//! A small multimodal regression model: mean-pooled token embeddings,
//! one affine encoder per modality, a fusion layer and a scalar head.

mod checkpoint;
mod train;

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, Utterance, MASK_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::numerics::{affine_apply, sigmoid, Matrix, Rng, Vector};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{loss_and_gradient, train, LossKind, LrSchedule, TrainConfig};

/// An affine layer `W x + b`, `W` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Affine {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Affine {
            weights: Matrix::identity(dim),
            bias: vec![0.0; dim],
        }
    }

    fn uniform(out_dim: usize, in_dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let mut layer = Affine::zeros(out_dim, in_dim);
        for w in layer.weights.data.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.random_range(-scale..=scale);
        }
        layer
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vector> {
        affine_apply(&self.weights, &self.bias, x)
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows
    }

    fn check(&self, name: &str) -> Result<()> {
        let w = &self.weights;
        if w.data.len() != w.rows * w.cols || self.bias.len() != w.rows {
            return Err(Error::CheckpointError(format!(
                "{name}: inconsistent shape"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Concat,
    Gated,
}

/// The fusion `m = fuse(l, a, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum Fusion {
    /// Linear projection of `[l; a; v]` back to the hidden dim.
    Concat { projection: Affine },
    /// `sigmoid(g_l) * l + sigmoid(g_a) * a + sigmoid(g_v) * v`, element-wise,
    /// with learned gate logits.
    Gated {
        language: Vec<f64>,
        audio: Vec<f64>,
        visual: Vec<f64>,
    },
}

impl Fusion {
    pub fn kind(&self) -> FusionKind {
        match self {
            Fusion::Concat { .. } => FusionKind::Concat,
            Fusion::Gated { .. } => FusionKind::Gated,
        }
    }

    fn hidden_dim(&self) -> usize {
        match self {
            Fusion::Concat { projection } => projection.out_dim(),
            Fusion::Gated { language, .. } => language.len(),
        }
    }
}

pub fn fuse(l: &[f64], a: &[f64], v: &[f64], fusion: &Fusion) -> Result<Vector> {
    let dh = fusion.hidden_dim();
    for x in [l, a, v] {
        if x.len() != dh {
            return Err(Error::dims(dh, x.len()));
        }
    }
    match fusion {
        Fusion::Concat { projection } => {
            if projection.in_dim() != 3 * dh {
                return Err(Error::dims(3 * dh, projection.in_dim()));
            }
            let z: Vec<f64> = l.iter().chain(a).chain(v).copied().collect();
            projection.apply(&z)
        }
        Fusion::Gated {
            language,
            audio,
            visual,
        } => {
            if audio.len() != dh || visual.len() != dh {
                return Err(Error::dims(dh, audio.len().min(visual.len())));
            }
            Ok((0..dh)
                .map(|i| {
                    sigmoid(language[i]) * l[i]
                        + sigmoid(audio[i]) * a[i]
                        + sigmoid(visual[i]) * v[i]
                })
                .collect())
        }
    }
}

/// How the language modality enters the model.
#[derive(Debug, Clone, Copy)]
pub enum LangInput<'a> {
    /// Mean of the utterance's token embeddings.
    Full,
    /// Tokens whose flag is set are replaced by `[MASK]` before pooling.
    Masked(&'a [bool]),
    /// A precomputed pooled embedding replaces the utterance's tokens.
    Pooled(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LangMode {
    Full,
    Masked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Row labels of the embedding table.
    pub vocab: Vec<String>,
    pub embeddings: Matrix,
    pub lang_encoder: Affine,
    pub audio_encoder: Affine,
    pub visual_encoder: Affine,
    pub fusion: Fusion,
    pub head: Affine,
    /// Mean absolute error on the training split after the last epoch.
    pub train_mae: Option<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub pooled: Vector,
    pub lang: Vector,
    pub audio_in: Vector,
    pub visual_in: Vector,
    pub audio: Vector,
    pub visual: Vector,
    pub fused: Vector,
    pub output: f64,
}

impl ModelParams {
    /// Seeded uniform initialization in `[-init_scale, init_scale]`.
    ///
    /// The embedding table covers `vocab_tokens` plus `[MASK]` and `[UNK]`.
    #[allow(clippy::too_many_arguments)]
    pub fn init<'a>(
        vocab_tokens: impl IntoIterator<Item = &'a str>,
        audio_dim: usize,
        visual_dim: usize,
        embed_dim: usize,
        hidden_dim: usize,
        fusion: FusionKind,
        init_scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if embed_dim == 0 || hidden_dim == 0 || audio_dim == 0 || visual_dim == 0 {
            return Err(Error::InvalidConfig("model dims must be >= 1".into()));
        }
        let mut vocab: Vec<String> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for t in vocab_tokens.into_iter().chain([MASK_TOKEN, UNK_TOKEN]) {
            if seen.insert(t) {
                vocab.push(t.to_string());
            }
        }
        let emb = Affine::uniform(vocab.len(), embed_dim, init_scale, rng).weights;
        let lang_encoder = Affine::uniform(hidden_dim, embed_dim, init_scale, rng);
        let audio_encoder = Affine::uniform(hidden_dim, audio_dim, init_scale, rng);
        let visual_encoder = Affine::uniform(hidden_dim, visual_dim, init_scale, rng);
        let fusion = match fusion {
            FusionKind::Concat => Fusion::Concat {
                projection: Affine::uniform(hidden_dim, 3 * hidden_dim, init_scale, rng),
            },
            FusionKind::Gated => {
                let mut gate = || -> Vec<f64> {
                    (0..hidden_dim)
                        .map(|_| rng.random_range(-init_scale..=init_scale))
                        .collect()
                };
                let (language, audio, visual) = (gate(), gate(), gate());
                Fusion::Gated {
                    language,
                    audio,
                    visual,
                }
            }
        };
        let head = Affine::uniform(1, hidden_dim, init_scale, rng);
        ModelParams::from_parts(
            vocab,
            emb,
            lang_encoder,
            audio_encoder,
            visual_encoder,
            fusion,
            head,
        )
    }

    /// Assembles parameters and checks every shape.
    pub fn from_parts(
        vocab: Vec<String>,
        embeddings: Matrix,
        lang_encoder: Affine,
        audio_encoder: Affine,
        visual_encoder: Affine,
        fusion: Fusion,
        head: Affine,
    ) -> Result<Self> {
        let mut p = ModelParams {
            vocab,
            embeddings,
            lang_encoder,
            audio_encoder,
            visual_encoder,
            fusion,
            head,
            train_mae: None,
            index: HashMap::new(),
        };
        p.rebuild_index()?;
        p.check_shapes()?;
        Ok(p)
    }

    pub(crate) fn rebuild_index(&mut self) -> Result<()> {
        self.index.clear();
        for (i, t) in self.vocab.iter().enumerate() {
            if self.index.insert(t.clone(), i).is_some() {
                return Err(Error::CheckpointError(format!(
                    "duplicate vocab entry {t:?}"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let e = &self.embeddings;
        if e.rows != self.vocab.len() || e.data.len() != e.rows * e.cols {
            return Err(Error::CheckpointError(
                "embedding table does not match vocabulary".into(),
            ));
        }
        for (name, layer) in [
            ("lang_encoder", &self.lang_encoder),
            ("audio_encoder", &self.audio_encoder),
            ("visual_encoder", &self.visual_encoder),
            ("head", &self.head),
        ] {
            layer.check(name)?;
        }
        let dh = self.hidden_dim();
        let bad = |what: &str| Err(Error::CheckpointError(format!("{what} has wrong shape")));
        if self.lang_encoder.in_dim() != e.cols {
            return bad("lang_encoder");
        }
        if self.audio_encoder.out_dim() != dh || self.visual_encoder.out_dim() != dh {
            return bad("modality encoder");
        }
        if self.head.out_dim() != 1 || self.head.in_dim() != dh {
            return bad("head");
        }
        match &self.fusion {
            Fusion::Concat { projection } => {
                projection.check("fusion")?;
                if projection.out_dim() != dh || projection.in_dim() != 3 * dh {
                    return bad("fusion projection");
                }
            }
            Fusion::Gated {
                language,
                audio,
                visual,
            } => {
                if language.len() != dh || audio.len() != dh || visual.len() != dh {
                    return bad("fusion gates");
                }
            }
        }
        if !self
            .slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
        {
            return Err(Error::CheckpointError("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.lang_encoder.out_dim()
    }

    pub fn audio_dim(&self) -> usize {
        self.audio_encoder.in_dim()
    }

    pub fn visual_dim(&self) -> usize {
        self.visual_encoder.in_dim()
    }

    /// Row of `token`; unknown tokens fall back to `[UNK]` when the table has
    /// one.
    pub fn token_row(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .or_else(|| self.index.get(UNK_TOKEN))
            .copied()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    /// Rows of the pooled tokens, with `[MASK]` substituted where `mask` is set.
    pub(crate) fn token_rows<S: AsRef<str>>(
        &self,
        tokens: &[S],
        mask: Option<&[bool]>,
    ) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(Error::EmptyAggregate);
        }
        if let Some(m) = mask {
            if m.len() != tokens.len() {
                return Err(Error::dims(tokens.len(), m.len()));
            }
        }
        let mask_row = match mask {
            Some(m) if m.iter().any(|&f| f) => Some(
                self.index
                    .get(MASK_TOKEN)
                    .copied()
                    .ok_or_else(|| Error::UnknownToken(MASK_TOKEN.into()))?,
            ),
            _ => None,
        };
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| match (mask, mask_row) {
                (Some(m), Some(row)) if m[i] => Ok(row),
                _ => self.token_row(t.as_ref()),
            })
            .collect()
    }

    fn pool_rows(&self, rows: &[usize]) -> Vector {
        let mut acc = vec![0.0; self.embed_dim()];
        for &r in rows {
            for (a, e) in acc.iter_mut().zip(self.embeddings.row(r)) {
                *a += e;
            }
        }
        let n = rows.len() as f64;
        acc.into_iter().map(|a| a / n).collect()
    }

    /// Mean of the token embeddings (pre-encoder language feature).
    pub fn pool_tokens<S: AsRef<str>>(
        &self,
        tokens: &[S],
        mask: Option<&[bool]>,
    ) -> Result<Vector> {
        let rows = self.token_rows(tokens, mask)?;
        Ok(self.pool_rows(&rows))
    }

    /// Checks that a corpus can be fed to this model.
    pub fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        if corpus.audio_dim != self.audio_dim() || corpus.visual_dim != self.visual_dim() {
            return Err(Error::SchemaError(format!(
                "checkpoint expects (audio, visual) dims ({}, {}), corpus has ({}, {})",
                self.audio_dim(),
                self.visual_dim(),
                corpus.audio_dim,
                corpus.visual_dim
            )));
        }
        if let Some(missing) = corpus
            .vocabulary
            .tokens()
            .find(|t| !self.index.contains_key(*t))
        {
            return Err(Error::SchemaError(format!(
                "corpus token {missing:?} has no embedding row in the checkpoint"
            )));
        }
        Ok(())
    }

    pub(crate) fn forward(
        &self,
        pooled: Vector,
        audio_in: &[f64],
        visual_in: &[f64],
    ) -> Result<Activations> {
        let lang = self.lang_encoder.apply(&pooled)?;
        let audio = self.audio_encoder.apply(audio_in)?;
        let visual = self.visual_encoder.apply(visual_in)?;
        let fused = fuse(&lang, &audio, &visual, &self.fusion)?;
        let output = self.head.apply(&fused)?[0];
        Ok(Activations {
            pooled,
            lang,
            audio_in: audio_in.to_vec().into(),
            visual_in: visual_in.to_vec().into(),
            audio,
            visual,
            fused,
            output,
        })
    }

    /// Flat views of every parameter block, in a fixed order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            &self.embeddings.data,
            &self.lang_encoder.weights.data,
            &self.lang_encoder.bias,
            &self.audio_encoder.weights.data,
            &self.audio_encoder.bias,
            &self.visual_encoder.weights.data,
            &self.visual_encoder.bias,
        ];
        match &self.fusion {
            Fusion::Concat { projection } => {
                out.push(&projection.weights.data);
                out.push(&projection.bias);
            }
            Fusion::Gated {
                language,
                audio,
                visual,
            } => {
                out.push(language);
                out.push(audio);
                out.push(visual);
            }
        }
        out.push(&self.head.weights.data);
        out.push(&self.head.bias);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.embeddings.data,
            &mut self.lang_encoder.weights.data,
            &mut self.lang_encoder.bias,
            &mut self.audio_encoder.weights.data,
            &mut self.audio_encoder.bias,
            &mut self.visual_encoder.weights.data,
            &mut self.visual_encoder.bias,
        ];
        match &mut self.fusion {
            Fusion::Concat { projection } => {
                out.push(&mut projection.weights.data);
                out.push(&mut projection.bias);
            }
            Fusion::Gated {
                language,
                audio,
                visual,
            } => {
                out.push(language);
                out.push(audio);
                out.push(visual);
            }
        }
        out.push(&mut self.head.weights.data);
        out.push(&mut self.head.bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Same shapes, all zeros. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(0.0);
        }
        z.train_mae = None;
        z
    }
}

/// Mean-pools the (optionally masked) tokens and applies the language encoder.
pub fn encode_language<S: AsRef<str>>(
    params: &ModelParams,
    tokens: &[S],
    content_flags: &[bool],
    mode: LangMode,
) -> Result<Vector> {
    let mask = match mode {
        LangMode::Full => None,
        LangMode::Masked => Some(content_flags),
    };
    if content_flags.len() != tokens.len() {
        return Err(Error::dims(tokens.len(), content_flags.len()));
    }
    let pooled = params.pool_tokens(tokens, mask)?;
    params.lang_encoder.apply(&pooled)
}

pub(crate) fn pooled_input(
    params: &ModelParams,
    utterance: &Utterance,
    lang: LangInput<'_>,
) -> Result<Vector> {
    match lang {
        LangInput::Full => params.pool_tokens(&utterance.tokens, None),
        LangInput::Masked(mask) => params.pool_tokens(&utterance.tokens, Some(mask)),
        LangInput::Pooled(p) => {
            if p.len() != params.embed_dim() {
                return Err(Error::dims(params.embed_dim(), p.len()));
            }
            Ok(p.to_vec().into())
        }
    }
}

/// Scores one utterance. Overrides replace the raw audio/visual features;
/// the same entry point yields factual and counterfactual outcomes.
pub fn predict(
    params: &ModelParams,
    utterance: &Utterance,
    lang: LangInput<'_>,
    audio_override: Option<&[f64]>,
    visual_override: Option<&[f64]>,
) -> Result<f64> {
    let audio = audio_override.unwrap_or(&utterance.audio);
    let visual = visual_override.unwrap_or(&utterance.visual);
    if audio.len() != params.audio_dim() {
        return Err(Error::dims(params.audio_dim(), audio.len()));
    }
    if visual.len() != params.visual_dim() {
        return Err(Error::dims(params.visual_dim(), visual.len()));
    }
    let pooled = pooled_input(params, utterance, lang)?;
    Ok(params.forward(pooled, audio, visual)?.output)
}
