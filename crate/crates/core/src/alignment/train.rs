use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{contrastive_loss, contrastive_loss_from_scores, temperature, LossValues, Temperature};
use super::optim::AdamW;
use crate::data::image::{flip_horizontal, flip_vertical};
use crate::encoders::vision::patchify;
use crate::data::synthetic::mirror_word;
use crate::encoders::{ModelParams, Vocab, PARAM_NAMES, TAU_LOG, UNK};
use crate::par;
use crate::tensor::{Graph, NodeId, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Initial similarity multiplier τ (not its log).
    pub tau_init: f64,
    /// Seeded random horizontal/vertical flips per sample and epoch.
    pub augment_flips: bool,
    #[serde(default)]
    pub text_context: TextContext,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            tau_init: 1.0 / 0.07,
            augment_flips: false,
            text_context: TextContext::default(),
        }
    }
}

impl TrainConfig {
    /// 80 epochs at batch 512.
    pub fn paper_scale() -> Self {
        Self {
            epochs: 80,
            batch_size: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.tau_init > 0.0 && self.tau_init.is_finite()) {
            return Err(Error::Config("tau_init must be positive".into()));
        }
        Ok(())
    }
}

/// One image (`H×W×C`) with the token ids of its training text.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub image: Tensor,
    pub tokens: Vec<usize>,
}

/// Per-epoch record of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_i2t: f64,
    pub loss_t2i: f64,
    pub loss: f64,
    pub tau: f64,
    pub wallclock_ms: u64,
}

impl EpochMetrics {
    /// Equality ignoring the wallclock field.
    pub fn same_values(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.loss_i2t.to_bits() == other.loss_i2t.to_bits()
            && self.loss_t2i.to_bits() == other.loss_t2i.to_bits()
            && self.loss.to_bits() == other.loss.to_bits()
            && self.tau.to_bits() == other.tau.to_bits()
    }
}

/// How text embeddings are conditioned on images inside a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TextContext {
    /// Every text is refined by its own paired image, and that one embedding
    /// is scored against all images.
    Paired,
    /// Text `i` is refined by image `j`'s context when scored against image `j`.
    #[default]
    Pairwise,
}

impl std::str::FromStr for TextContext {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(Self::Paired),
            "pairwise" => Ok(Self::Pairwise),
            other => Err(Error::Config(format!(
                "unknown text context {other:?} (expected paired or pairwise)"
            ))),
        }
    }
}

/// Token encoding of one text, kept alive for the backward pass.
struct TextTrace {
    graph: Graph,
    tokens: NodeId,
    params: Vec<NodeId>,
}

fn text_trace(params: &ModelParams, ids: &[usize], trainable: bool) -> Result<TextTrace> {
    let graph = Graph::new();
    let (tokens, ids) = {
        let bound = params.bind(&graph, trainable);
        (bound.encode_tokens(ids)?.id(), bound.ids())
    };
    Ok(TextTrace {
        graph,
        tokens,
        params: ids,
    })
}

/// A single image's forward pass with the given encoded texts refined under
/// its context, kept alive for the backward pass.
struct Trace {
    graph: Graph,
    image: NodeId,
    inputs: Vec<NodeId>,
    texts: Vec<NodeId>,
    params: Vec<NodeId>,
}

fn forward_trace(params: &ModelParams, image: &Tensor, tokens: &[&Tensor], trainable: bool) -> Result<Trace> {
    let graph = Graph::new();
    let (image_id, inputs, text_ids, ids) = {
        let bound = params.bind(&graph, trainable);
        let patches = patchify(image, params.config.patch_size)?;
        let ctx = bound.encode_image(&patches)?;
        let img = bound.image_embedding(&ctx)?;
        let mut inputs = Vec::with_capacity(tokens.len());
        let mut txt = Vec::with_capacity(tokens.len());
        for t in tokens {
            let t = if trainable {
                graph.param((*t).clone())
            } else {
                graph.constant((*t).clone())
            };
            inputs.push(t.id());
            txt.push(bound.refine_and_project(&t, Some(&ctx))?.id());
        }
        (img.id(), inputs, txt, bound.ids())
    };
    Ok(Trace {
        graph,
        image: image_id,
        inputs,
        texts: text_ids,
        params: ids,
    })
}

fn stack(rows: &[Tensor]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = rows.iter().map(|t| t.data().to_vec()).collect();
    Ok(Tensor::from_rows(&rows)?)
}

fn first_non_finite(kind: &str, rows: &[Tensor]) -> Option<String> {
    rows.iter()
        .position(|t| !t.is_finite())
        .map(|i| format!("{kind} embedding of batch item {i}"))
}

fn effective_context(params: &ModelParams, context: TextContext) -> TextContext {
    if params.config.variant.uses_vgte() {
        context
    } else {
        TextContext::Paired
    }
}

/// Encode every text once, then run every image with the texts its column
/// of the similarity matrix needs.
fn batch_traces(
    params: &ModelParams,
    batch: &[&PairExample],
    context: TextContext,
    trainable: bool,
) -> Result<(Vec<TextTrace>, Vec<Trace>)> {
    let text_traces = par::map(batch, |ex| text_trace(params, &ex.tokens, trainable))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let encoded: Vec<Tensor> = text_traces.iter().map(|t| t.graph.value(t.tokens)).collect();
    let all: Vec<&Tensor> = encoded.iter().collect();
    let traces = par::map_range(batch.len(), |j| {
        let texts = match context {
            TextContext::Paired => std::slice::from_ref(&all[j]),
            TextContext::Pairwise => all.as_slice(),
        };
        forward_trace(params, &batch[j].image, texts, trainable)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok((text_traces, traces))
}

/// Embedding-level loss graph. `texts[j]` holds the text embeddings computed
/// under image `j` (one per batch item, or only text `j` when paired).
struct LossGraph<'g> {
    images: Var<'g>,
    texts: Vec<Var<'g>>,
    tau_log: Var<'g>,
    loss: super::loss::LossVars<'g>,
}

fn loss_graph<'g>(
    g: &'g Graph,
    images: &[Tensor],
    texts: &[Vec<Tensor>],
    tau_log: f64,
    context: TextContext,
) -> Result<LossGraph<'g>> {
    let iv = g.param(stack(images)?);
    let tau_log = g.param(Tensor::scalar(tau_log));
    let tau = temperature(&tau_log)?;
    let (tvs, loss) = match context {
        TextContext::Paired => {
            let own: Vec<Tensor> = texts.iter().map(|t| t[0].clone()).collect();
            let tv = g.param(stack(&own)?);
            let loss = contrastive_loss(&iv, &tv, &tau)?;
            (vec![tv], loss)
        }
        TextContext::Pairwise => {
            let tvs = texts
                .iter()
                .map(|t| Ok(g.param(stack(t)?)))
                .collect::<Result<Vec<_>>>()?;
            let mut scores: Option<Var<'g>> = None;
            for (j, tv) in tvs.iter().enumerate() {
                let col = tv.matmul(&iv.gather_rows(&[j])?.t()?)?;
                scores = Some(match scores {
                    None => col,
                    Some(s) => s.concat_cols(&col)?,
                });
            }
            let scores = scores.ok_or_else(|| Error::Input("empty training batch".into()))?;
            let loss = contrastive_loss_from_scores(&scores, &tau)?;
            (tvs, loss)
        }
    };
    Ok(LossGraph {
        images: iv,
        texts: tvs,
        tau_log,
        loss,
    })
}

fn values_of(l: &super::loss::LossVars<'_>) -> LossValues {
    LossValues {
        i2t: l.i2t.value().item(),
        t2i: l.t2i.value().item(),
        total: l.total.value().item(),
    }
}

/// Contrastive loss of a batch, forward only.
pub fn batch_loss(params: &ModelParams, batch: &[&PairExample], context: TextContext) -> Result<LossValues> {
    if batch.is_empty() {
        return Err(Error::Input("empty training batch".into()));
    }
    let context = effective_context(params, context);
    let (_, traces) = batch_traces(params, batch, context, false)?;
    let images: Vec<Tensor> = traces.iter().map(|t| t.graph.value(t.image)).collect();
    let texts: Vec<Vec<Tensor>> = traces
        .iter()
        .map(|t| t.texts.iter().map(|&id| t.graph.value(id)).collect())
        .collect();
    let g = Graph::new();
    let lg = loss_graph(&g, &images, &texts, params.tau_log(), context)?;
    Ok(values_of(&lg.loss))
}

/// Loss and the gradient of `L_cont` for every parameter, in [`PARAM_NAMES`] order.
///
/// Each text is encoded once on its own tape and each image runs on its own
/// tape with the encoded texts as leaves (in parallel with the `parallel`
/// feature). The loss couples the samples only through their final
/// embeddings, so the loss gradient w.r.t. the embeddings is computed on a
/// small separate tape and fed back as the seed of each image's backward
/// pass; the leaf gradients in turn seed the text tapes. Gradients are summed
/// in batch order, so the result does not depend on thread count.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &[&PairExample],
    context: TextContext,
) -> Result<(LossValues, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::Input("empty training batch".into()));
    }
    let context = effective_context(params, context);
    let (text_traces, traces) = batch_traces(params, batch, context, true)?;
    let images: Vec<Tensor> = traces.iter().map(|t| t.graph.value(t.image)).collect();
    let texts: Vec<Vec<Tensor>> = traces
        .iter()
        .map(|t| t.texts.iter().map(|&id| t.graph.value(id)).collect())
        .collect();

    let g = Graph::new();
    let lg = loss_graph(&g, &images, &texts, params.tau_log(), context)?;
    let values = values_of(&lg.loss);
    if !values.total.is_finite() {
        let flat: Vec<Tensor> = texts.iter().flatten().cloned().collect();
        let culprit = first_non_finite("image", &images)
            .or_else(|| first_non_finite("text", &flat))
            .or_else(|| {
                params
                    .named()
                    .find(|(_, t)| !t.is_finite())
                    .map(|(n, _)| n.to_string())
            })
            .unwrap_or_else(|| "tau_log".to_string());
        return Err(Error::NonFinite { tensor: culprit });
    }
    let lgrads = g.backward(lg.loss.total)?;
    let d_images = lgrads.wrt(&lg.images)?;
    let d_texts = lg
        .texts
        .iter()
        .map(|t| lgrads.wrt(t))
        .collect::<Result<Vec<_>, _>>()?;

    let seeded: Vec<(Trace, Vec<(NodeId, Tensor)>)> = traces
        .into_iter()
        .enumerate()
        .map(|(j, t)| {
            let mut seeds = vec![(t.image, Tensor::row_vector(d_images.row(j).to_vec()))];
            match context {
                TextContext::Paired => {
                    seeds.push((t.texts[0], Tensor::row_vector(d_texts[0].row(j).to_vec())));
                }
                TextContext::Pairwise => {
                    for (i, &id) in t.texts.iter().enumerate() {
                        seeds.push((id, Tensor::row_vector(d_texts[j].row(i).to_vec())));
                    }
                }
            }
            (t, seeds)
        })
        .collect();
    let per_image = par::map_owned(seeded, |(trace, seeds)| -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let grads = trace.graph.backward_from(&seeds)?;
        Ok((
            trace.params.iter().map(|id| grads.get(*id)).collect(),
            trace.inputs.iter().map(|id| grads.get(*id)).collect(),
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    // gradient w.r.t. each encoded text, summed over the images it met
    let mut d_tokens: Vec<Tensor> = text_traces
        .iter()
        .map(|t| Tensor::zeros(t.graph.value(t.tokens).shape()))
        .collect();
    for (j, (_, inputs)) in per_image.iter().enumerate() {
        for (i, d) in inputs.iter().enumerate() {
            let target = match context {
                TextContext::Paired => j,
                TextContext::Pairwise => i,
            };
            add_into(&mut d_tokens[target], d);
        }
    }
    let per_text = par::map_owned(
        text_traces.into_iter().zip(d_tokens).collect(),
        |(trace, seed)| -> Result<Vec<Tensor>> {
            let grads = trace.graph.backward_from(&[(trace.tokens, seed)])?;
            Ok(trace.params.iter().map(|id| grads.get(*id)).collect())
        },
    );

    let mut total: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    for (sample, _) in &per_image {
        for (acc, g) in total.iter_mut().zip(sample) {
            add_into(acc, g);
        }
    }
    for sample in per_text {
        for (acc, g) in total.iter_mut().zip(sample?) {
            add_into(acc, &g);
        }
    }
    total[TAU_LOG] = lgrads.wrt(&lg.tau_log)?;

    if let Some((name, _)) = PARAM_NAMES.iter().zip(&total).find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite {
            tensor: format!("gradient of {name}"),
        });
    }
    Ok((values, total))
}

fn add_into(acc: &mut Tensor, g: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

/// Shuffled sample order for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Optimizer state plus the parameters it updates.
pub struct Trainer {
    pub params: ModelParams,
    pub config: TrainConfig,
    opt: AdamW,
    decay: Vec<bool>,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let opt = AdamW::new(config.learning_rate, config.weight_decay);
        let decay = (0..PARAM_NAMES.len()).map(|i| i != TAU_LOG).collect();
        Ok(Self {
            params,
            config,
            opt,
            decay,
        })
    }

    /// Forward, backward and one AdamW update on `batch`. Returns the pre-update loss.
    pub fn step(&mut self, batch: &[&PairExample]) -> Result<LossValues> {
        let (loss, grads) = batch_gradients(&self.params, batch, self.config.text_context)?;
        self.opt.step(self.params.tensors_mut(), &grads, &self.decay);
        Ok(loss)
    }

    /// One pass over `examples` in the epoch's shuffled order.
    ///
    /// A trailing batch of fewer than two samples is skipped: it has no negatives.
    pub fn run_epoch(&mut self, examples: &[PairExample], epoch: usize) -> Result<LossValues> {
        let order = epoch_order(examples.len(), self.config.seed, epoch);
        let augmented = self
            .config
            .augment_flips
            .then(|| augment(examples, &self.params.vocab, self.config.seed, epoch));
        let source = augmented.as_deref().unwrap_or(examples);
        let (mut i2t, mut t2i, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(self.config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&PairExample> = chunk.iter().map(|&i| &source[i]).collect();
            let l = self.step(&batch)?;
            i2t += l.i2t;
            t2i += l.t2i;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        Ok(LossValues {
            i2t: i2t / n,
            t2i: t2i / n,
            total: (i2t + t2i) / n,
        })
    }
}

/// Seeded flips per sample. Grid words in the caption are mirrored with the image.
fn augment(examples: &[PairExample], vocab: &Vocab, seed: u64, epoch: usize) -> Vec<PairExample> {
    let mirrored = |id: usize, h: bool, v: bool| {
        mirror_word(&vocab.tokens()[id], h, v).map_or(id, |w| match vocab.id(w) {
            UNK => id,
            m => m,
        })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_F00D_CAFE);
    rng.set_stream(epoch as u64);
    examples
        .iter()
        .map(|ex| {
            let (h, v) = (rng.random_bool(0.5), rng.random_bool(0.5));
            let mut image = ex.image.clone();
            if h {
                image = flip_horizontal(&image).expect("training images are H×W×C");
            }
            if v {
                image = flip_vertical(&image).expect("training images are H×W×C");
            }
            PairExample {
                image,
                tokens: ex.tokens.iter().map(|&t| mirrored(t, h, v)).collect(),
            }
        })
        .collect()
}

/// Final parameters, the lowest-loss epoch's parameters and the metrics stream.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub best: ModelParams,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

/// Epoch loop with seeded shuffling; `on_epoch` sees each record as it is produced.
pub fn train(
    params: ModelParams,
    examples: &[PairExample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    if examples.len() < 2 {
        return Err(Error::Input(format!(
            "training needs at least 2 pairs, got {}",
            examples.len()
        )));
    }
    let started = Instant::now();
    let mut trainer = Trainer::new(params, config.clone())?;
    let mut best = (f64::INFINITY, trainer.params.clone(), 0);
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let loss = trainer.run_epoch(examples, epoch)?;
        let record = EpochMetrics {
            epoch,
            loss_i2t: loss.i2t,
            loss_t2i: loss.t2i,
            loss: loss.total,
            tau: Temperature {
                tau_log: trainer.params.tau_log(),
            }
            .tau(),
            wallclock_ms: started.elapsed().as_millis() as u64,
        };
        log::debug!("epoch {epoch}: loss {:.6}", loss.total);
        on_epoch(&record);
        if loss.total < best.0 {
            best = (loss.total, trainer.params.clone(), epoch);
        }
        metrics.push(record);
    }
    Ok(TrainOutcome {
        params: trainer.params,
        best: best.1,
        best_epoch: best.2,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{cell_words, GRID};

    #[test]
    fn flips_move_grid_words_with_the_image() {
        let vocab = Vocab::build(["top upper lower bottom leftmost left right rightmost coral"], 32);
        let mut image = Tensor::zeros(&[GRID, GRID, 1]);
        image.data_mut()[GRID + 2] = 1.0;
        let text = format!("coral {}", cell_words(GRID + 2));
        let ex = PairExample {
            image,
            tokens: vocab.encode(&text, 8),
        };
        let mut seen = std::collections::HashSet::new();
        for epoch in 0..16 {
            let out = augment(std::slice::from_ref(&ex), &vocab, 3, epoch).remove(0);
            let lit = out.image.data().iter().position(|&v| v == 1.0).unwrap();
            let words: Vec<&str> = out.tokens.iter().map(|&t| vocab.tokens()[t].as_str()).collect();
            assert_eq!(words.join(" "), format!("coral {}", cell_words(lit)));
            seen.insert(lit);
        }
        assert_eq!(seen.len(), 4, "all four flip combinations occur");
    }
}
