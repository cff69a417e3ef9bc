//! Clause encoder, document BiLSTM, biaffine pair scorer and auxiliary heads.
//!
//! Data flow for one document of `C` clauses:
//!
//! ```text
//! tokens ─embed─▶ conv_k + ReLU ─maxpool─▶ ⊕_k  = c_i        [C × |K|·d_c]
//! c_1..c_C ─BiLSTM─▶ h_i                                      [C × 2d_h]
//! h ─▶ z^e, z^c = ReLU(W h + b)                               [C × d_z]
//! M[p][q] = (W^m z^e_p + b^m)ᵀ z^c_q ─σ─▶ M̃ ─⊙ A─▶ M̂            [C × C]
//! h ─▶ z̃^e, z̃^c ─▶ softmax(Ŵ z̃ + b̂) = ŷ^e, ŷ^c                [C × 2]
//! ```
//!
//! Rows of the pair matrices index emotion clauses, columns cause clauses.

mod checkpoint;
mod params;
mod position;

use rand::RngCore;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{Affine, Bound, ParameterSet, EMBEDDING};
pub use position::position_weights;

use crate::autodiff::{lstm_sequence, Tape, Tensor, Var};
use crate::corpus::Batch;
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_e: usize,
    pub kernel_sizes: Vec<usize>,
    pub d_c: usize,
    pub d_h: usize,
    pub d_z: usize,
    /// Smoothing term of the position weights.
    pub epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_e: 200,
            kernel_sizes: vec![2, 3, 4, 5],
            d_c: 50,
            d_h: 300,
            d_z: 100,
            epsilon: 1.0,
        }
    }
}

impl ModelConfig {
    /// Width of a clause feature vector.
    pub fn feature_dim(&self) -> usize {
        self.kernel_sizes.len() * self.d_c
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) {
            return Err(Error::Parameter(format!("bad kernel sizes {:?}", self.kernel_sizes)));
        }
        if [self.d_e, self.d_c, self.d_h, self.d_z].contains(&0) {
            return Err(Error::Parameter("layer sizes must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Parameter(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// Switches for the two ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub use_position: bool,
    pub use_aux: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_position: true,
            use_aux: true,
        }
    }
}

/// Dropout is active only in `Train` mode.
pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut dyn RngCore },
}

impl Mode<'_> {
    fn dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train { dropout, rng } => tape.dropout(x, *dropout, true, &mut **rng),
        }
    }
}

/// Tape handles for one document's intermediate results.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutputs {
    pub clauses: usize,
    /// `[C × |K|·d_c]`
    pub clause_features: Var,
    /// `[C × 2d_h]`
    pub hidden: Var,
    pub z_emotion: Var,
    pub z_cause: Var,
    /// Raw biaffine scores `M`.
    pub pair_logits: Var,
    /// `M̃ = σ(M)`.
    pub pair_probs: Var,
    /// `M̂ = M̃ ⊙ A` (or `M̃` when position weighting is off).
    pub pair_scores: Var,
    /// `[C × 2]`, columns (negative, positive).
    pub aux_emotion: Var,
    pub aux_cause: Var,
}

/// Embeds, convolves, max-pools and concatenates one clause.
pub fn encode_clause(tape: &mut Tape, bound: &Bound, tokens: &[usize], mode: &mut Mode) -> Result<Var> {
    let emb = tape.gather(bound.embedding, tokens)?;
    let emb = mode.dropout(tape, emb)?;
    let mut parts = Vec::with_capacity(bound.convs.len());
    for conv in &bound.convs {
        let c = tape.conv1d_same(emb, conv.weight, conv.bias)?;
        let c = tape.relu(c);
        parts.push(tape.max_over_time(c)?);
    }
    let feature = tape.concat(&parts)?;
    mode.dropout(tape, feature)
}

/// Bidirectional LSTM over clause features; row `i` is `fwd_i ⊕ bwd_i`.
pub fn encode_document(tape: &mut Tape, bound: &Bound, features: &[Var]) -> Result<Var> {
    let fwd = lstm_sequence(tape, features, &bound.lstm_fwd, false)?;
    let bwd = lstm_sequence(tape, features, &bound.lstm_bwd, true)?;
    let rows = fwd
        .iter()
        .zip(&bwd)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    tape.stack_rows(&rows)
}

/// `ReLU(h Wᵀ + b)` applied row-wise.
pub fn project(tape: &mut Tape, hidden: Var, head: &Affine) -> Result<Var> {
    let z = tape.linear(hidden, head.weight, head.bias)?;
    Ok(tape.relu(z))
}

/// `M[p][q] = (W z^e_p + b)ᵀ z^c_q`.
pub fn biaffine(tape: &mut Tape, z_emotion: Var, z_cause: Var, transform: &Affine) -> Result<Var> {
    let left = tape.linear(z_emotion, transform.weight, transform.bias)?;
    let right = tape.transpose(z_cause)?;
    tape.matmul(left, right)
}

pub fn activate_pairs(tape: &mut Tape, logits: Var) -> Var {
    tape.sigmoid(logits)
}

/// Element-wise product with constant weights; no gradient reaches `weights`.
pub fn apply_position_weights(tape: &mut Tape, probs: Var, weights: Tensor) -> Result<Var> {
    let a = tape.constant(weights);
    tape.mul(probs, a)
}

/// Two-class softmax heads over the auxiliary representations.
pub fn aux_heads(tape: &mut Tape, bound: &Bound, z_emotion: Var, z_cause: Var) -> Result<(Var, Var)> {
    let le = tape.linear(z_emotion, bound.aux_emotion_out.weight, bound.aux_emotion_out.bias)?;
    let lc = tape.linear(z_cause, bound.aux_cause_out.weight, bound.aux_cause_out.bias)?;
    Ok((tape.softmax_rows(le)?, tape.softmax_rows(lc)?))
}

/// Full forward pass for one document given its clauses' token ids.
pub fn forward_document(
    tape: &mut Tape,
    bound: &Bound,
    config: &ModelConfig,
    clauses: &[&[usize]],
    ablation: Ablation,
    mode: &mut Mode,
) -> Result<ForwardOutputs> {
    if clauses.is_empty() {
        return Err(Error::Degenerate("document without clauses"));
    }
    let features = clauses
        .iter()
        .map(|c| encode_clause(tape, bound, c, mode))
        .collect::<Result<Vec<_>>>()?;
    let clause_features = tape.stack_rows(&features)?;
    let hidden = encode_document(tape, bound, &features)?;

    let z_emotion = project(tape, hidden, &bound.emotion_proj)?;
    let z_cause = project(tape, hidden, &bound.cause_proj)?;
    let pair_logits = biaffine(tape, z_emotion, z_cause, &bound.biaffine)?;
    let pair_probs = activate_pairs(tape, pair_logits);
    let pair_scores = if ablation.use_position {
        apply_position_weights(tape, pair_probs, position_weights(clauses.len(), config.epsilon))?
    } else {
        pair_probs
    };

    // heads are evaluated even when their loss is disabled, for reporting
    let zt_e = project(tape, hidden, &bound.aux_emotion_proj)?;
    let zt_c = project(tape, hidden, &bound.aux_cause_proj)?;
    let (aux_emotion, aux_cause) = aux_heads(tape, bound, zt_e, zt_c)?;

    Ok(ForwardOutputs {
        clauses: clauses.len(),
        clause_features,
        hidden,
        z_emotion,
        z_cause,
        pair_logits,
        pair_probs,
        pair_scores,
        aux_emotion,
        aux_cause,
    })
}

/// Forward pass over every document of a batch at its true length.
pub fn forward(
    tape: &mut Tape,
    bound: &Bound,
    config: &ModelConfig,
    batch: &Batch,
    ablation: Ablation,
    mode: &mut Mode,
) -> Result<Vec<ForwardOutputs>> {
    (0..batch.len())
        .map(|b| forward_document(tape, bound, config, &batch.document_clauses(b), ablation, mode))
        .collect()
}

/// Materialized eval-mode outputs for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentScores {
    pub doc_id: String,
    pub pair_scores: Tensor,
    pub pair_probs: Tensor,
    pub aux_emotion: Tensor,
    pub aux_cause: Tensor,
}

/// Eval-mode forward without gradient tracking.
pub fn score_document(
    params: &ParameterSet,
    doc_id: &str,
    clauses: &[&[usize]],
    ablation: Ablation,
) -> Result<DocumentScores> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = forward_document(&mut tape, &bound, &params.config, clauses, ablation, &mut Mode::Eval)?;
    Ok(DocumentScores {
        doc_id: doc_id.to_string(),
        pair_scores: tape.value(out.pair_scores).clone(),
        pair_probs: tape.value(out.pair_probs).clone(),
        aux_emotion: tape.value(out.aux_emotion).clone(),
        aux_cause: tape.value(out.aux_cause).clone(),
    })
}
