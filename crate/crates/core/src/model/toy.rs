//! The desk-scale vision-language model: a frozen patch encoder, a linear
//! projector into the language model's width, and a small pre-norm causal
//! transformer whose base weights are frozen and tuned through adapters.

use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::autograd::{Tape, Var};
use super::encoder::{load_media, EncoderConfig, Frame, VisualInput, VisualTokens};
use super::lora::{gaussian, Linear};
use super::tokenizer::Vocabulary;
use super::ModelError;
use crate::dataset::TaskRecord;
use crate::scheduler::{attach_identifier, TaskIdentifierMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_vision: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub encoder: EncoderConfig,
    pub max_prompt_tokens: usize,
    pub max_response_tokens: usize,
    pub freeze_vision: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_vision: 16,
            d_model: 32,
            n_layers: 2,
            d_ff: 64,
            encoder: EncoderConfig::default(),
            max_prompt_tokens: 96,
            max_response_tokens: 48,
            freeze_vision: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        let positive = [
            ("d_vision", self.d_vision),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_prompt_tokens", self.max_prompt_tokens),
            ("max_response_tokens", self.max_response_tokens),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.max_prompt_tokens < 2 {
            return Err(ModelError::Config(
                "max_prompt_tokens must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Layers that can carry adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterTarget {
    Q,
    K,
    V,
    O,
    MlpIn,
    MlpOut,
    Head,
}

impl AdapterTarget {
    pub const ALL: [AdapterTarget; 7] = [
        AdapterTarget::Q,
        AdapterTarget::K,
        AdapterTarget::V,
        AdapterTarget::O,
        AdapterTarget::MlpIn,
        AdapterTarget::MlpOut,
        AdapterTarget::Head,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdapterTarget::Q => "q",
            AdapterTarget::K => "k",
            AdapterTarget::V => "v",
            AdapterTarget::O => "o",
            AdapterTarget::MlpIn => "mlp_in",
            AdapterTarget::MlpOut => "mlp_out",
            AdapterTarget::Head => "head",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEncoder {
    pub config: EncoderConfig,
    /// `patch_dim × d_vision`, no bias.
    pub weight: Array2<f64>,
    pub frozen: bool,
}

impl PatchEncoder {
    pub fn encode_frames(&self, frames: &[Frame]) -> Result<VisualTokens, ModelError> {
        if frames.is_empty() {
            return Err(ModelError::Shape("no frames to encode".into()));
        }
        let blocks: Vec<Array2<f64>> = frames
            .iter()
            .map(|f| f.patches(self.config.patch_size))
            .collect();
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let patches = ndarray::concatenate(Axis(0), &views).expect("equal patch widths");
        self.tokens_from(&VisualInput::Patches(patches), "frames")
    }

    /// Decodes a media reference and encodes it.
    pub fn encode_media(&self, media_ref: &str) -> Result<VisualTokens, ModelError> {
        let input = load_media(media_ref, &self.config)?;
        self.tokens_from(&input, media_ref)
    }

    pub fn tokens_from(
        &self,
        input: &VisualInput,
        provenance: &str,
    ) -> Result<VisualTokens, ModelError> {
        let tokens = match input {
            VisualInput::Patches(p) => {
                if p.ncols() != self.weight.nrows() {
                    return Err(ModelError::Shape(format!(
                        "patch width {} does not match encoder input {}",
                        p.ncols(),
                        self.weight.nrows()
                    )));
                }
                p.dot(&self.weight)
            }
            VisualInput::Tokens(t) => {
                if t.ncols() != self.weight.ncols() {
                    return Err(ModelError::Shape(format!(
                        "precomputed token width {} does not match d_vision {}",
                        t.ncols(),
                        self.weight.ncols()
                    )));
                }
                t.clone()
            }
        };
        VisualTokens::new(tokens, provenance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl Block {
    fn layer_mut(&mut self, target: AdapterTarget) -> Option<&mut Linear> {
        match target {
            AdapterTarget::Q => Some(&mut self.q),
            AdapterTarget::K => Some(&mut self.k),
            AdapterTarget::V => Some(&mut self.v),
            AdapterTarget::O => Some(&mut self.o),
            AdapterTarget::MlpIn => Some(&mut self.mlp_in),
            AdapterTarget::MlpOut => Some(&mut self.mlp_out),
            AdapterTarget::Head => None,
        }
    }

    fn layers(&self) -> [(&'static str, &Linear); 6] {
        [
            ("q", &self.q),
            ("k", &self.k),
            ("v", &self.v),
            ("o", &self.o),
            ("mlp_in", &self.mlp_in),
            ("mlp_out", &self.mlp_out),
        ]
    }

    fn layers_mut(&mut self) -> [(&'static str, &mut Linear); 6] {
        [
            ("q", &mut self.q),
            ("k", &mut self.k),
            ("v", &mut self.v),
            ("o", &mut self.o),
            ("mlp_in", &mut self.mlp_in),
            ("mlp_out", &mut self.mlp_out),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub identifiers: TaskIdentifierMap,
    pub vision: PatchEncoder,
    /// `d_vision × d_model`; always trainable.
    pub projector: Array2<f64>,
    /// `vocab × d_model`; frozen.
    pub embed: Array2<f64>,
    pub blocks: Vec<Block>,
    pub head: Linear,
}

/// `num_tokens × d_model` visual tokens in the language model's space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedTokens {
    pub tokens: Array2<f64>,
}

/// Token ids with their embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTokens {
    pub ids: Vec<usize>,
    pub embedded: Array2<f64>,
}

/// Visual rows followed by text rows; `boundary` is the number of visual rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedInput {
    pub matrix: Array2<f64>,
    pub boundary: usize,
}

impl FusedInput {
    pub fn visual(&self) -> ndarray::ArrayView2<'_, f64> {
        self.matrix.slice(s![..self.boundary, ..])
    }

    pub fn text(&self) -> ndarray::ArrayView2<'_, f64> {
        self.matrix.slice(s![self.boundary.., ..])
    }
}

/// One training example: visual input, prompt ids ending in `<sep>`, response ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub visual: Option<VisualInput>,
    pub prompt: Vec<usize>,
    pub response: Vec<usize>,
}

/// Decoded media keyed by reference; frames are decoded once per run.
#[derive(Debug, Default)]
pub struct MediaCache {
    entries: HashMap<String, VisualInput>,
}

impl MediaCache {
    pub fn get(
        &mut self,
        media_ref: &str,
        cfg: &EncoderConfig,
    ) -> Result<&VisualInput, ModelError> {
        if !self.entries.contains_key(media_ref) {
            let input = load_media(media_ref, cfg)?;
            self.entries.insert(media_ref.to_string(), input);
        }
        Ok(&self.entries[media_ref])
    }
}

fn sinusoid(rows: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, d), |(pos, i)| {
        let angle = pos as f64 / 10_000f64.powf((i / 2 * 2) as f64 / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Vocabulary over the identifiers plus every query and response word.
pub fn vocabulary_for(records: &[TaskRecord], identifiers: &TaskIdentifierMap) -> Vocabulary {
    let ids: Vec<&str> = identifiers.tokens().map(|(_, t)| t).collect();
    let texts = records
        .iter()
        .flat_map(|r| [r.query.as_str(), r.response.as_str()]);
    Vocabulary::build(&ids, texts)
}

pub(crate) struct Run {
    pub tape: Tape,
    pub logits: Var,
    pub trainable: Vec<(String, Var)>,
}

impl ToyModel {
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        identifiers: TaskIdentifierMap,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let patch_dim = config.encoder.patch_dim();
        let (dv, d, ff, nv) = (config.d_vision, config.d_model, config.d_ff, vocab.len());
        let vision = PatchEncoder {
            config: config.encoder,
            weight: gaussian(patch_dim, dv, 1.0 / (patch_dim as f64).sqrt(), &mut rng),
            frozen: config.freeze_vision,
        };
        let projector = gaussian(dv, d, 1.0 / (dv as f64).sqrt(), &mut rng);
        let embed = gaussian(nv, d, 1.0, &mut rng);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                q: Linear::random(d, d, &mut rng),
                k: Linear::random(d, d, &mut rng),
                v: Linear::random(d, d, &mut rng),
                o: Linear::random(d, d, &mut rng),
                mlp_in: Linear::random(d, ff, &mut rng),
                mlp_out: Linear::random(ff, d, &mut rng),
            })
            .collect();
        let head = Linear::random(d, nv, &mut rng);
        Ok(Self {
            config,
            vocab,
            identifiers,
            vision,
            projector,
            embed,
            blocks,
            head,
        })
    }

    /// Every parameter matrix with its name and whether training updates it.
    pub fn params(&self) -> Vec<(String, &Array2<f64>, bool)> {
        let mut out = vec![
            (
                "vision.weight".to_string(),
                &self.vision.weight,
                !self.vision.frozen,
            ),
            ("projector".to_string(), &self.projector, true),
            ("embed".to_string(), &self.embed, false),
        ];
        let linears = self
            .blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.layers().map(|(n, l)| (format!("blocks.{i}.{n}"), l)))
            .chain(std::iter::once(("head".to_string(), &self.head)));
        for (prefix, l) in linears {
            out.push((format!("{prefix}.weight"), &l.weight, false));
            if let Some(ad) = &l.adapter {
                out.push((format!("{prefix}.lora_a"), &ad.a, true));
                out.push((format!("{prefix}.lora_b"), &ad.b, true));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>, bool)> {
        let frozen = self.vision.frozen;
        let mut out = vec![
            (
                "vision.weight".to_string(),
                &mut self.vision.weight,
                !frozen,
            ),
            ("projector".to_string(), &mut self.projector, true),
            ("embed".to_string(), &mut self.embed, false),
        ];
        let linears = self
            .blocks
            .iter_mut()
            .enumerate()
            .flat_map(|(i, b)| b.layers_mut().map(|(n, l)| (format!("blocks.{i}.{n}"), l)))
            .chain(std::iter::once(("head".to_string(), &mut self.head)));
        for (prefix, l) in linears {
            out.push((format!("{prefix}.weight"), &mut l.weight, false));
            if let Some(ad) = &mut l.adapter {
                out.push((format!("{prefix}.lora_a"), &mut ad.a, true));
                out.push((format!("{prefix}.lora_b"), &mut ad.b, true));
            }
        }
        out
    }

    pub fn trainable_param_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.2)
            .map(|p| p.1.len())
            .sum()
    }

    pub fn adapter_param_count(&self) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| b.layers().map(|(_, l)| l))
            .chain(std::iter::once(&self.head))
            .filter_map(|l| l.adapter.as_ref())
            .map(|a| a.param_count())
            .sum()
    }

    pub fn has_adapters(&self) -> bool {
        self.adapter_param_count() > 0
    }

    /// `(d_in, d_out)` of every adapted layer.
    pub fn adapted_layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, l) in b.layers() {
                if l.adapter.is_some() {
                    out.push((format!("blocks.{i}.{name}"), l.d_in(), l.d_out()));
                }
            }
        }
        if self.head.adapter.is_some() {
            out.push(("head".to_string(), self.head.d_in(), self.head.d_out()));
        }
        out
    }

    /// SHA-256 over the vision encoder's weight bits.
    pub fn vision_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.vision.weight {
            h.update(v.to_bits().to_le_bytes());
        }
        super::hex(&h.finalize())
    }

    pub(crate) fn attach_adapters(
        &mut self,
        rank: usize,
        alpha: f64,
        targets: &[AdapterTarget],
        seed: u64,
    ) -> Result<(), ModelError> {
        if targets.is_empty() {
            return Err(ModelError::Config(
                "no adapter target layers configured".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for block in &mut self.blocks {
            for &t in targets {
                if let Some(layer) = block.layer_mut(t) {
                    layer.attach_adapter(rank, alpha, &mut rng)?;
                }
            }
        }
        if targets.contains(&AdapterTarget::Head) {
            self.head.attach_adapter(rank, alpha, &mut rng)?;
        }
        Ok(())
    }

    pub fn embed_text(&self, ids: &[usize]) -> Result<TextTokens, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyText);
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(ModelError::Shape(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab.len()
            )));
        }
        Ok(TextTokens {
            ids: ids.to_vec(),
            embedded: self.embed.select(Axis(0), ids),
        })
    }

    /// Transformer body over an already-recorded input `x`.
    fn body(&self, tape: &mut Tape, x: Var, trainable: &mut Vec<(String, Var)>, grad: bool) -> Var {
        let (rows, d) = tape.value(x).dim();
        let pos = tape.leaf(sinusoid(rows, d), false);
        let mut h = tape.add(x, pos);
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let mut lin = |tape: &mut Tape, name: String, l: &Linear, input: Var| {
            let (out, ab) = l.forward(tape, input);
            if let (true, Some((a, b))) = (grad, ab) {
                trainable.push((format!("{name}.lora_a"), a));
                trainable.push((format!("{name}.lora_b"), b));
            }
            out
        };
        for (i, b) in self.blocks.iter().enumerate() {
            let a = tape.layer_norm(h);
            let q = lin(tape, format!("blocks.{i}.q"), &b.q, a);
            let k = lin(tape, format!("blocks.{i}.k"), &b.k, a);
            let v = lin(tape, format!("blocks.{i}.v"), &b.v, a);
            let scores = tape.matmul_bt(q, k);
            let scores = tape.scale(scores, inv_sqrt_d);
            let probs = tape.causal_softmax(scores);
            let ctx = tape.matmul(probs, v);
            let attn = lin(tape, format!("blocks.{i}.o"), &b.o, ctx);
            h = tape.add(h, attn);

            let m = tape.layer_norm(h);
            let up = lin(tape, format!("blocks.{i}.mlp_in"), &b.mlp_in, m);
            let act = tape.gelu(up);
            let down = lin(tape, format!("blocks.{i}.mlp_out"), &b.mlp_out, act);
            h = tape.add(h, down);
        }
        let n = tape.layer_norm(h);
        lin(tape, "head".to_string(), &self.head, n)
    }

    fn check_logits(tape: &Tape, logits: Var) -> Result<(), ModelError> {
        if tape.value(logits).iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ModelError::NonFinite("logits".into()))
        }
    }

    /// Records the full pass from visual input and token ids to logits.
    pub(crate) fn run(
        &self,
        visual: Option<&VisualInput>,
        ids: &[usize],
        grad: bool,
    ) -> Result<Run, ModelError> {
        let mut tape = Tape::new();
        let mut trainable = Vec::new();
        let text = {
            let tt = self.embed_text(ids)?;
            tape.leaf(tt.embedded, false)
        };
        let x = match visual {
            None => text,
            Some(input) => {
                let tokens = match input {
                    VisualInput::Patches(p) => {
                        if p.ncols() != self.vision.weight.nrows() {
                            return Err(ModelError::Shape(format!(
                                "patch width {} does not match encoder input {}",
                                p.ncols(),
                                self.vision.weight.nrows()
                            )));
                        }
                        let patches = tape.leaf(p.clone(), false);
                        let train_vision = grad && !self.vision.frozen;
                        let w = tape.leaf(self.vision.weight.clone(), train_vision);
                        if train_vision {
                            trainable.push(("vision.weight".to_string(), w));
                        }
                        tape.matmul(patches, w)
                    }
                    VisualInput::Tokens(t) => {
                        if t.ncols() != self.projector.nrows() {
                            return Err(ModelError::Shape(format!(
                                "visual token width {} does not match projector input {}",
                                t.ncols(),
                                self.projector.nrows()
                            )));
                        }
                        tape.leaf(t.clone(), false)
                    }
                };
                let wv = tape.leaf(self.projector.clone(), grad);
                if grad {
                    trainable.push(("projector".to_string(), wv));
                }
                let projected = tape.matmul(tokens, wv);
                tape.concat_rows(projected, text)
            }
        };
        let logits = self.body(&mut tape, x, &mut trainable, grad);
        Self::check_logits(&tape, logits)?;
        Ok(Run {
            tape,
            logits,
            trainable,
        })
    }

    /// Logits for a fused input.
    pub fn logits(&self, x: &FusedInput) -> Result<Array2<f64>, ModelError> {
        if x.matrix.ncols() != self.config.d_model {
            return Err(ModelError::Shape(format!(
                "fused width {} does not match d_model {}",
                x.matrix.ncols(),
                self.config.d_model
            )));
        }
        let mut tape = Tape::new();
        let input = tape.leaf(x.matrix.clone(), false);
        let logits = self.body(&mut tape, input, &mut Vec::new(), false);
        Self::check_logits(&tape, logits)?;
        Ok(tape.value(logits).clone())
    }

    fn targets(ex: &Example, boundary: usize, eos: usize) -> Vec<(usize, usize)> {
        let start = boundary + ex.prompt.len() - 1;
        ex.response
            .iter()
            .copied()
            .chain(std::iter::once(eos))
            .enumerate()
            .map(|(j, id)| (start + j, id))
            .collect()
    }

    fn record_loss(&self, ex: &Example, grad: bool) -> Result<(Run, Var), ModelError> {
        if ex.prompt.is_empty() {
            return Err(ModelError::EmptyText);
        }
        let ids: Vec<usize> = ex.prompt.iter().chain(&ex.response).copied().collect();
        let mut run = self.run(ex.visual.as_ref(), &ids, grad)?;
        let boundary = ex.visual.as_ref().map_or(0, VisualInput::rows);
        let targets = Self::targets(ex, boundary, self.vocab.eos());
        let loss = run.tape.cross_entropy(run.logits, &targets);
        Ok((run, loss))
    }

    /// Mean next-token cross-entropy over the response tokens and `<eos>`.
    pub fn loss(&self, ex: &Example) -> Result<f64, ModelError> {
        let (run, loss) = self.record_loss(ex, false)?;
        Ok(run.tape.value(loss)[[0, 0]])
    }

    /// Loss plus gradients of every trainable parameter, keyed by name.
    pub fn loss_and_grads(
        &self,
        ex: &Example,
    ) -> Result<(f64, BTreeMap<String, Array2<f64>>), ModelError> {
        let (run, loss) = self.record_loss(ex, true)?;
        let value = run.tape.value(loss)[[0, 0]];
        let mut grads = run.tape.backward(loss);
        let mut out = BTreeMap::new();
        for (name, var) in run.trainable {
            let g = grads
                .take(var)
                .unwrap_or_else(|| Array2::zeros(run.tape.value(var).raw_dim()));
            out.insert(name, g);
        }
        Ok((value, out))
    }

    /// Identifier-prefixed query ids (left-truncated to the prompt budget,
    /// identifier kept) followed by `<sep>`.
    pub fn prompt_ids(&self, record: &TaskRecord) -> Result<Vec<usize>, ModelError> {
        let text = attach_identifier(record, &self.identifiers)?;
        let mut ids = self.vocab.encode(&text);
        let budget = self.config.max_prompt_tokens - 1;
        if ids.len() > budget {
            let head = ids[0];
            let tail = ids.split_off(ids.len() - (budget - 1));
            ids = std::iter::once(head).chain(tail).collect();
        }
        ids.push(self.vocab.sep());
        Ok(ids)
    }

    fn visual_for(
        &self,
        record: &TaskRecord,
        cache: &mut MediaCache,
    ) -> Result<Option<VisualInput>, ModelError> {
        let mut parts = Vec::new();
        for m in &record.media {
            parts.push(cache.get(m, &self.config.encoder)?.clone());
        }
        match parts.len() {
            0 => Ok(None),
            1 => Ok(parts.pop()),
            _ => {
                let patches = parts.iter().all(|p| matches!(p, VisualInput::Patches(_)));
                let tokens = parts.iter().all(|p| matches!(p, VisualInput::Tokens(_)));
                if !patches && !tokens {
                    return Err(ModelError::Media {
                        media_ref: record.media.join(", "),
                        message: "cannot mix frames and precomputed tokens in one record".into(),
                    });
                }
                let views: Vec<_> = parts
                    .iter()
                    .map(|p| match p {
                        VisualInput::Patches(a) | VisualInput::Tokens(a) => a.view(),
                    })
                    .collect();
                let joined = ndarray::concatenate(Axis(0), &views)
                    .map_err(|e| ModelError::Shape(e.to_string()))?;
                Ok(Some(if patches {
                    VisualInput::Patches(joined)
                } else {
                    VisualInput::Tokens(joined)
                }))
            }
        }
    }

    pub fn example(
        &self,
        record: &TaskRecord,
        cache: &mut MediaCache,
    ) -> Result<Example, ModelError> {
        let mut response = self.vocab.encode(&record.response);
        response.truncate(self.config.max_response_tokens);
        Ok(Example {
            visual: self.visual_for(record, cache)?,
            prompt: self.prompt_ids(record)?,
            response,
        })
    }

    /// Builds the fused input for a record's prompt through the public
    /// encode → project → fuse path.
    pub fn fused_prompt(
        &self,
        record: &TaskRecord,
        cache: &mut MediaCache,
    ) -> Result<FusedInput, ModelError> {
        let visual = match self.visual_for(record, cache)? {
            Some(input) => Some(super::project(
                &self.vision.tokens_from(&input, &record.record_id)?,
                self,
            )?),
            None => None,
        };
        let text = self.embed_text(&self.prompt_ids(record)?)?;
        super::fuse(visual.as_ref(), &text)
    }
}
