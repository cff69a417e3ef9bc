//! Joint objective, initialization and the mini-batch Adam loop.

mod log;
mod loss;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use log::{time_epoch, EpochRecord, TrainLog};
pub use loss::{aux_loss, pair_loss, total_loss};

use crate::autodiff::{AdamState, Tape, Tensor, Var};
use crate::corpus::{build_vocab, load_embeddings, Batch, Document, EmbeddingTable, EncodedDocument, SplitMode, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_encoded, DEFAULT_ETA};
use crate::network::{forward, Ablation, Bound, Checkpoint, Mode, ModelConfig, ParameterSet};

/// RNG stream used for parameter and embedding initialization.
const INIT_STREAM: u64 = 0;
/// Stream for per-epoch shuffling and dropout masks.
const TRAIN_STREAM: u64 = 1;
/// Stream for carving a dev split out of the training documents.
const DEV_STREAM: u64 = 2;

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the squared-norm regularizer.
    pub lambda_l2: f64,
    /// Weight of the auxiliary emotion/cause loss.
    pub beta_aux: f64,
    pub dropout_p: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub split_mode: SplitMode,
    /// Share of training documents held out for snapshot selection; 0 disables it.
    pub dev_fraction: f64,
    /// Decoding threshold used for dev evaluation.
    pub eta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            lambda_l2: 1e-5,
            beta_aux: 1.0,
            dropout_p: 0.5,
            epochs: 20,
            seed: 0,
            ablation: Ablation::default(),
            split_mode: SplitMode::default(),
            dev_fraction: 0.0,
            eta: DEFAULT_ETA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.lambda_l2 >= 0.0) || !(self.beta_aux >= 0.0) {
            return Err(Error::Parameter("lambda_l2 and beta_aux must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Parameter(format!("dropout_p {} must be in [0, 1)", self.dropout_p)));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Parameter(format!("dev_fraction {} must be in [0, 1)", self.dev_fraction)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Parameter(format!("eta {} must be in (0, 1)", self.eta)));
        }
        Ok(())
    }

    /// Auxiliary weight after applying the ablation switch.
    pub fn effective_beta(&self) -> f64 {
        if self.ablation.use_aux {
            self.beta_aux
        } else {
            0.0
        }
    }
}

/// Embedding table (pretrained rows where available) plus fresh weights.
pub fn init_params(
    config: &ModelConfig,
    vocab: &Vocabulary,
    embeddings: Option<&std::path::Path>,
    seed: u64,
) -> Result<ParameterSet> {
    config.validate()?;
    let mut rng = seeded(seed, INIT_STREAM);
    let table = match embeddings {
        Some(path) => load_embeddings(path, vocab, config.d_e, false, &mut rng)?,
        None => EmbeddingTable::random(vocab.len(), config.d_e, &mut rng),
    };
    ParameterSet::init(config.clone(), table, &mut rng)
}

/// Loss terms of one mini-batch, each summed over its documents.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub total: Var,
    pub pair: Var,
    pub aux: Var,
}

/// Builds the objective for `batch` on `tape`.
pub fn batch_loss(
    tape: &mut Tape,
    bound: &Bound,
    params: &ParameterSet,
    batch: &Batch,
    config: &TrainConfig,
    mode: &mut Mode,
) -> Result<BatchLoss> {
    let outputs = forward(tape, bound, &params.config, batch, config.ablation, mode)?;
    let mut pair_terms = Vec::with_capacity(outputs.len());
    let mut aux_terms = Vec::with_capacity(outputs.len());
    for (b, out) in outputs.iter().enumerate() {
        let mask = vec![1.0; out.clauses];
        pair_terms.push(pair_loss(tape, out.pair_scores, &batch.pair_target(b), &mask)?);
        aux_terms.push(aux_loss(
            tape,
            out.aux_emotion,
            out.aux_cause,
            batch.emotion_target(b),
            batch.cause_target(b),
            &mask,
        )?);
    }
    let pair = sum_all(tape, &pair_terms)?;
    let aux = sum_all(tape, &aux_terms)?;
    let regularized: Vec<(Var, usize)> = bound
        .vars
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, params.frozen_prefix(i)))
        .collect();
    let total = total_loss(tape, pair, aux, &regularized, config.effective_beta(), config.lambda_l2)?;
    Ok(BatchLoss { total, pair, aux })
}

fn sum_all(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let (&first, rest) = terms.split_first().ok_or(Error::Degenerate("sum of no loss terms"))?;
    rest.iter().try_fold(first, |acc, &t| tape.add(acc, t))
}

/// Scalar losses of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub pair: f64,
    pub aux: f64,
    pub clamp_events: usize,
}

/// Incremental trainer: owns its parameters, optimizer state and RNG.
#[derive(Debug, Clone)]
pub struct Trainer {
    params: ParameterSet,
    adam: AdamState,
    rng: ChaCha8Rng,
    config: TrainConfig,
    docs: Vec<EncodedDocument>,
    epoch: usize,
}

impl Trainer {
    pub fn new(params: ParameterSet, docs: Vec<EncodedDocument>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if docs.is_empty() {
            return Err(Error::Degenerate("training set without documents"));
        }
        let vocab = params.vocab_size();
        for d in &docs {
            if let Some(&bad) = d.clauses.iter().flatten().find(|&&t| t >= vocab) {
                return Err(Error::Index { index: bad, size: vocab });
            }
        }
        let adam = AdamState::new((0..params.len()).map(|i| params.tensor(i).len()));
        let rng = seeded(config.seed, TRAIN_STREAM);
        Ok(Trainer {
            params,
            adam,
            rng,
            config,
            docs,
            epoch: 0,
        })
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn into_params(self) -> ParameterSet {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Forward, backward and one Adam update on the given documents.
    pub fn step(&mut self, indices: &[usize]) -> Result<StepLosses> {
        let docs: Vec<EncodedDocument> = indices.iter().map(|&i| self.docs[i].clone()).collect();
        let batch = Batch::from_encoded(&docs)?;
        let (losses, grads) = {
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape, true);
            let mut mode = if self.config.dropout_p > 0.0 {
                Mode::Train {
                    dropout: self.config.dropout_p,
                    rng: &mut self.rng,
                }
            } else {
                Mode::Eval
            };
            let loss = batch_loss(&mut tape, &bound, &self.params, &batch, &self.config, &mut mode)?;
            let scalar = |v: Var| tape.value(v).data()[0];
            let losses = StepLosses {
                total: scalar(loss.total),
                pair: scalar(loss.pair),
                aux: scalar(loss.aux),
                clamp_events: tape.clamp_events(),
            };
            if !losses.total.is_finite() {
                return Err(Error::Numeric(format!("loss {} at epoch {}", losses.total, self.epoch + 1)));
            }
            let g = tape.backward(loss.total)?;
            let grads: Vec<Tensor> = bound
                .vars
                .iter()
                .map(|&v| g.wrt(v).expect("parameters are tracked"))
                .collect();
            (losses, grads)
        };
        // the tape is gone, so make_mut below updates in place
        let names: Vec<String> = self.params.names().to_vec();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let frozen: Vec<usize> = (0..self.params.len()).map(|i| self.params.frozen_prefix(i)).collect();
        let saved: Vec<Vec<f64>> = frozen
            .iter()
            .enumerate()
            .map(|(i, &n)| self.params.tensor(i).data()[..n].to_vec())
            .collect();
        let mut grads = grads;
        for (g, &n) in grads.iter_mut().zip(&frozen) {
            g.data_mut()[..n].fill(0.0);
        }
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        let mut tensors = self.params.tensors_mut();
        self.adam.step(&mut tensors, &grad_refs, &names, self.config.learning_rate)?;
        // frozen entries have zero gradient, so Adam leaves them alone; the
        // restore guards against any drift from the epsilon term
        for (t, s) in tensors.iter_mut().zip(&saved) {
            t.data_mut()[..s.len()].copy_from_slice(s);
        }
        Ok(losses)
    }

    /// One pass over the training documents in a freshly shuffled order.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let mut order: Vec<usize> = (0..self.docs.len()).collect();
        order.shuffle(&mut self.rng);
        let epoch = self.epoch + 1;
        let (result, seconds) = time_epoch(|| -> Result<(StepLosses, usize)> {
            let mut sum = StepLosses {
                total: 0.0,
                pair: 0.0,
                aux: 0.0,
                clamp_events: 0,
            };
            let mut batches = 0;
            for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
                let s = self.step(chunk).map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("{msg}, batch {}", b + 1)),
                    other => other,
                })?;
                sum.total += s.total;
                sum.pair += s.pair;
                sum.aux += s.aux;
                sum.clamp_events += s.clamp_events;
                batches += 1;
            }
            Ok((sum, batches))
        });
        let (sum, batches) = result?;
        self.epoch = epoch;
        let n = batches as f64;
        Ok(EpochRecord {
            epoch,
            loss: sum.total / n,
            pair_loss: sum.pair / n,
            aux_loss: sum.aux / n,
            seconds,
            clamp_events: sum.clamp_events,
            dev: None,
        })
    }
}

/// Runs `config.epochs` epochs. With `dev` documents, each epoch is scored on
/// them and the parameters of the best dev pair F1 are returned.
pub fn train(
    params: ParameterSet,
    docs: &[EncodedDocument],
    dev: Option<&[EncodedDocument]>,
    config: &TrainConfig,
) -> Result<(ParameterSet, TrainLog)> {
    let mut trainer = Trainer::new(params, docs.to_vec(), config.clone())?;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ParameterSet)> = None;
    for _ in 0..config.epochs {
        let mut record = trainer.run_epoch()?;
        if let Some(dev) = dev.filter(|d| !d.is_empty()) {
            let m = evaluate_encoded(trainer.params(), dev, config.eta, config.ablation)?;
            if best.as_ref().is_none_or(|(f1, _)| m.pair.f1 > *f1) {
                best = Some((m.pair.f1, trainer.params().clone()));
                log.best_epoch = Some(record.epoch);
            }
            record.dev = Some(m);
        }
        log.epochs.push(record);
    }
    let params = match best {
        Some((_, p)) => p,
        None => trainer.into_params(),
    };
    Ok((params, log))
}

/// Everything needed to go from raw documents to a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Tokens seen fewer times than this map to UNK.
    pub min_count: usize,
    /// word2vec text file; random vectors when absent.
    pub embeddings: Option<PathBuf>,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            min_count: 1,
            embeddings: None,
        }
    }
}

/// A trained model and how it got there.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub dev_ids: Vec<String>,
}

/// Builds the vocabulary, initializes, optionally carves out a dev split and
/// trains.
pub fn fit(docs: &[Document], exp: &Experiment) -> Result<Fitted> {
    exp.train.validate()?;
    if docs.is_empty() {
        return Err(Error::Degenerate("training set without documents"));
    }
    let (train_docs, dev_docs) = split_dev(docs, exp.train.dev_fraction, exp.train.seed);
    let vocab = build_vocab(&train_docs, exp.min_count);
    let params = init_params(&exp.model, &vocab, exp.embeddings.as_deref(), exp.train.seed)?;
    let encode = |ds: &[Document]| ds.iter().map(|d| vocab.encode(d)).collect::<Vec<_>>();
    let train_enc = encode(&train_docs);
    let dev_enc = encode(&dev_docs);
    let dev = (!dev_enc.is_empty()).then_some(dev_enc.as_slice());
    let (params, log) = train(params, &train_enc, dev, &exp.train)?;
    Ok(Fitted {
        checkpoint: Checkpoint {
            params,
            vocab,
            ablation: exp.train.ablation,
        },
        log,
        dev_ids: dev_docs.into_iter().map(|d| d.doc_id).collect(),
    })
}

fn split_dev(docs: &[Document], fraction: f64, seed: u64) -> (Vec<Document>, Vec<Document>) {
    if fraction <= 0.0 || docs.len() < 2 {
        return (docs.to_vec(), Vec::new());
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut seeded(seed, DEV_STREAM));
    let n_dev = ((docs.len() as f64 * fraction).round() as usize).clamp(1, docs.len() - 1);
    let (dev, train) = order.split_at(n_dev);
    let mut train = train.to_vec();
    train.sort_unstable();
    let mut dev = dev.to_vec();
    dev.sort_unstable();
    (
        train.iter().map(|&i| docs[i].clone()).collect(),
        dev.iter().map(|&i| docs[i].clone()).collect(),
    )
}
