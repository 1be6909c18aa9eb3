//! The full detector: parameter layout, per-graph inputs, and the forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Mat, ParamStore, Tape, Var};
use crate::dataset::{Graph, Label};
use crate::localspec::{self, HeadParams, LocalInput, LocalParams, LocalShape};
use crate::loss::{self, LossConfig};
use crate::spectral::SpectralError;
use crate::transformer::{self, Dropout, GtInput, GtParams, GtShape, HeadAttention};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("graph {id} has {got} features, model expects {want}")]
    FeatureDim { id: usize, got: usize, want: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub heads: usize,
    /// Random-walk length `T`.
    pub steps: usize,
    /// Transformer layers `L`.
    pub layers: usize,
    /// Beta bank order `M`.
    pub bank_order: usize,
    /// Low/high-pass layers `K`.
    pub lowhigh_layers: usize,
    pub psi: f64,
    /// Attention dropout during training.
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(in_dim: usize) -> Self {
        ModelConfig {
            in_dim,
            hidden: 128,
            out_dim: 32,
            heads: 4,
            steps: 4,
            layers: 6,
            bank_order: 3,
            lowhigh_layers: 4,
            psi: 0.5,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("in_dim", self.in_dim),
            ("hidden", self.hidden),
            ("out_dim", self.out_dim),
            ("heads", self.heads),
            ("steps", self.steps),
            ("layers", self.layers),
            ("bank_order", self.bank_order),
            ("lowhigh_layers", self.lowhigh_layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "{} heads do not divide hidden width {}",
                self.heads, self.hidden
            )));
        }
        if !(0.0..=1.0).contains(&self.psi) {
            return Err(ModelError::Config(format!("psi {} outside [0, 1]", self.psi)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Everything about one graph that does not depend on parameters.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub id: usize,
    pub label: Label,
    pub gt: GtInput,
    pub local: LocalInput,
}

impl GraphInput {
    pub fn prepare(g: &Graph, cfg: &ModelConfig) -> Result<Self, ModelError> {
        if g.feature_dim() != cfg.in_dim {
            return Err(ModelError::FeatureDim {
                id: g.id,
                got: g.feature_dim(),
                want: cfg.in_dim,
            });
        }
        Ok(GraphInput {
            id: g.id,
            label: g.y,
            gt: GtInput::prepare(g, cfg.steps)?,
            local: LocalInput::prepare(g, cfg.bank_order, cfg.psi)?,
        })
    }
}

/// Parameters plus the handles that locate each piece inside the store.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub gt: GtParams,
    pub local: LocalParams,
    pub head: HeadParams,
}

/// Outputs for a batch of graphs, one row per graph in input order.
pub struct Forward {
    pub logit: Var,
    pub p: Var,
    /// Graph embeddings `H_G`, `batch × out_dim`.
    pub embedding: Var,
    pub h_gt: Var,
    pub h_loc: Var,
    /// Attention matrices, layer-major then head, each holding one block per graph.
    pub attention: Vec<HeadAttention>,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let gt = GtParams::init(
            &mut params,
            GtShape {
                in_dim: config.in_dim,
                hidden: config.hidden,
                heads: config.heads,
                layers: config.layers,
                steps: config.steps,
                ffn_hidden: config.hidden,
            },
            &mut rng,
        );
        let local = LocalParams::init(
            &mut params,
            LocalShape {
                in_dim: config.in_dim,
                hidden: config.hidden,
                order: config.bank_order,
                layers: config.lowhigh_layers,
            },
            &mut rng,
        );
        let head = HeadParams::init(&mut params, 3 * config.hidden, config.out_dim, &mut rng);
        Ok(Model {
            config,
            params,
            gt,
            local,
            head,
        })
    }

    /// Rebuilds the handle layout for `config` and adopts `params`, which
    /// must match it name for name and shape for shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        let mut model = Model::init(config, 0)?;
        if model.params.len() != params.len() {
            return Err(ModelError::Config(format!(
                "checkpoint has {} tensors, configuration needs {}",
                params.len(),
                model.params.len()
            )));
        }
        for ((_, want_name, want), (_, name, got)) in model.params.iter().zip(params.iter()) {
            if want_name != name || want.dim() != got.dim() {
                return Err(ModelError::Config(format!(
                    "checkpoint tensor {name} {:?} does not match {want_name} {:?}",
                    got.dim(),
                    want.dim()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    /// Forward pass over a batch on an existing tape, with parameters already
    /// registered as `vars`. `dropout`, when given, holds one stream per graph.
    pub fn forward_on<'t>(
        &self,
        t: &Tape<'t>,
        vars: &[Var],
        inputs: &[&'t GraphInput],
        dropout: Option<&mut [Dropout]>,
    ) -> Result<Forward, ModelError> {
        let p = |id: crate::autodiff::ParamId| vars[id.index()];
        let gt_in: Vec<&GtInput> = inputs.iter().map(|i| &i.gt).collect();
        let local_in: Vec<&LocalInput> = inputs.iter().map(|i| &i.local).collect();
        let gt = transformer::forward(t, &self.gt, vars, &gt_in, dropout)?;
        let h_loc = localspec::forward(t, &self.local, vars, &local_in)?;
        let h = &self.head;
        let embedding = localspec::fuse(t, gt.h_gt, h_loc, p(h.fuse_w), p(h.fuse_b))?;
        let (logit, prob) = localspec::classify(
            t,
            embedding,
            (p(h.norm_gain), p(h.norm_bias)),
            (p(h.hidden_w), p(h.hidden_b)),
            (p(h.out_w), p(h.out_b)),
        )?;
        Ok(Forward {
            logit,
            p: prob,
            embedding,
            h_gt: gt.h_gt,
            h_loc,
            attention: gt.attention,
        })
    }

    /// Anomaly probability for one graph, without dropout.
    pub fn predict(&self, input: &GraphInput) -> Result<f64, ModelError> {
        Ok(self.predict_batch(&[input])?[0])
    }

    /// Anomaly probabilities for a batch, without dropout.
    pub fn predict_batch(&self, inputs: &[&GraphInput]) -> Result<Vec<f64>, ModelError> {
        Ok(self.embed_batch(inputs)?.into_iter().map(|(p, _)| p).collect())
    }

    /// Probability and embedding row for one graph.
    pub fn embed(&self, input: &GraphInput) -> Result<(f64, Vec<f64>), ModelError> {
        Ok(self.embed_batch(&[input])?.remove(0))
    }

    /// Probability and embedding row for each graph of a batch.
    pub fn embed_batch(&self, inputs: &[&GraphInput]) -> Result<Vec<(f64, Vec<f64>)>, ModelError> {
        let t = Tape::new();
        let vars = self.params.register(&t);
        let out = self.forward_on(&t, &vars, inputs, None)?;
        let (p, emb) = (t.value(out.p), t.value(out.embedding));
        Ok(p.iter().zip(emb.rows()).map(|(&p, row)| (p, row.to_vec())).collect())
    }

    /// VOCE loss of one graph and its gradient with respect to every parameter,
    /// in store order.
    pub fn loss_and_grad(
        &self,
        input: &GraphInput,
        loss_cfg: &LossConfig,
        dropout: Option<&mut Dropout>,
    ) -> Result<(f64, Vec<Mat>), ModelError> {
        let mut grads = self.params.zeros_like();
        let loss = self.accumulate_grad(&[input], loss_cfg, dropout.map(std::slice::from_mut), &mut grads)?;
        Ok((loss, grads))
    }

    /// Summed VOCE loss of a batch; adds its gradient into `acc`.
    pub fn accumulate_grad(
        &self,
        inputs: &[&GraphInput],
        loss_cfg: &LossConfig,
        dropout: Option<&mut [Dropout]>,
        acc: &mut [Mat],
    ) -> Result<f64, ModelError> {
        let t = Tape::new();
        let vars = self.params.register(&t);
        let out = self.forward_on(&t, &vars, inputs, dropout)?;
        let labels: Vec<Label> = inputs.iter().map(|i| i.label).collect();
        let l = loss::voce_on_tape(&t, out.p, &labels, loss_cfg)?;
        let value = t.scalar(l);
        let mut grads = t.backward(l)?;
        for (&v, a) in vars.iter().zip(acc.iter_mut()) {
            if let Some(g) = grads.take(v) {
                *a += &g;
            }
        }
        Ok(value)
    }
}
