//! WebAssembly bindings for the static page in `www/`.
//!
//! Everything crosses the boundary as numbers, `Float64Array`s or JSON
//! strings, so the page needs no bundler.

use wasm_bindgen::prelude::*;

use ecpe::corpus::{build_vocab, gen_synthetic, Document, EncodedDocument, SyntheticProfile};
use ecpe::evaluation::{decode, score_corpus, sweep_csv, threshold_sweep, PredictionSet};
use ecpe::network::{Ablation, DocumentScores, ModelConfig};
use ecpe::training::{init_params, TrainConfig, Trainer};

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Row-major `[C × C]` position weights.
#[wasm_bindgen]
pub fn position_weights(clauses: usize, epsilon: f64) -> Result<Vec<f64>, JsError> {
    if clauses == 0 || clauses > 30 || !(epsilon > 0.0) {
        return Err(js("need 1 ≤ C ≤ 30 and ε > 0"));
    }
    Ok(ecpe::network::position_weights(clauses, epsilon).data().to_vec())
}

/// A small model trained in the page on a synthetic corpus.
#[wasm_bindgen]
pub struct Demo {
    train_docs: Vec<Document>,
    test_docs: Vec<Document>,
    test: Vec<EncodedDocument>,
    trainer: Trainer,
    ablation: Ablation,
    scores: Option<Vec<DocumentScores>>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, use_position: bool, use_aux: bool) -> Result<Demo, JsError> {
        let profile = SyntheticProfile {
            mean_clauses: 8.0,
            max_clauses: 12,
            ..SyntheticProfile::default()
        };
        let train_docs = gen_synthetic(60, seed, &profile);
        let test_docs = gen_synthetic(20, seed.wrapping_add(1_000), &profile);
        let vocab = build_vocab(&train_docs, 1);
        let model = ModelConfig {
            d_e: 16,
            kernel_sizes: vec![2, 3],
            d_c: 8,
            d_h: 16,
            d_z: 16,
            epsilon: 1.0,
        };
        let ablation = Ablation { use_position, use_aux };
        let config = TrainConfig {
            batch_size: 8,
            learning_rate: 5e-3,
            seed,
            ablation,
            ..TrainConfig::default()
        };
        let params = init_params(&model, &vocab, None, seed).map_err(js)?;
        let encoded = train_docs.iter().map(|d| vocab.encode(d)).collect();
        let test = test_docs.iter().map(|d| vocab.encode(d)).collect();
        let trainer = Trainer::new(params, encoded, config).map_err(js)?;
        Ok(Demo {
            train_docs,
            test_docs,
            test,
            trainer,
            ablation,
            scores: None,
        })
    }

    /// Runs `epochs` passes and returns the last epoch's mean mini-batch loss.
    pub fn train(&mut self, epochs: usize) -> Result<f64, JsError> {
        let mut loss = f64::NAN;
        for _ in 0..epochs {
            loss = self.trainer.run_epoch().map_err(js)?.loss;
        }
        self.scores = None;
        Ok(loss)
    }

    pub fn epoch(&self) -> usize {
        self.trainer.epoch()
    }

    pub fn train_size(&self) -> usize {
        self.train_docs.len()
    }

    pub fn test_size(&self) -> usize {
        self.test_docs.len()
    }

    fn scores(&mut self) -> Result<&[DocumentScores], JsError> {
        if self.scores.is_none() {
            self.scores = Some(score_corpus(self.trainer.params(), &self.test, self.ablation).map_err(js)?);
        }
        Ok(self.scores.as_deref().unwrap_or_default())
    }

    fn doc(&self, i: usize) -> Result<&Document, JsError> {
        self.test_docs.get(i).ok_or_else(|| js(format!("no test document {i}")))
    }

    /// The `i`-th held-out document as JSON.
    pub fn document(&self, i: usize) -> Result<String, JsError> {
        Ok(self.doc(i)?.to_json())
    }

    /// Final pair scores of held-out document `i`, row-major `[C × C]`.
    pub fn pair_scores(&mut self, i: usize) -> Result<Vec<f64>, JsError> {
        self.doc(i)?;
        Ok(self.scores()?[i].pair_scores.data().to_vec())
    }

    /// Pairs, emotions and causes extracted from document `i` at `eta`.
    pub fn predict(&mut self, i: usize, eta: f64) -> Result<String, JsError> {
        self.doc(i)?;
        let p = decode(&self.scores()?[i], eta);
        serde_json::to_string(&p).map_err(js)
    }

    /// Held-out pair metrics over ascending thresholds, as CSV.
    pub fn sweep(&mut self, etas: Vec<f64>) -> Result<String, JsError> {
        let gold: Vec<PredictionSet> = self.test.iter().map(PredictionSet::from).collect();
        let rows = threshold_sweep(self.scores()?, &gold, &etas).map_err(js)?;
        Ok(sweep_csv(&rows))
    }
}
