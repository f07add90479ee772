//! Joint optimization of the autoencoder and the discriminator.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_propagator, EdgeSplit, Graph};
use crate::models::{
    content_loss, decode_gcn, discriminator_logits, discriminator_loss, embed_mean, encode_on_tape,
    generator_loss, inner_product_structure_loss, kl_loss, structure_loss, Architecture,
    DecoderKind, DecoderVars, DiscriminatorVars, EncodeOptions, EncoderVars, ModelParams, Variant,
};
use crate::tensor::{DenseMat, Rng, SparseMat, Tape, Var};

// `Rng::with_stream` ids used by the trainer.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_NOISE: u64 = 1;
pub const STREAM_ADVERSARY: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    Gaussian,
    Uniform,
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Prior::Gaussian => "gaussian",
            Prior::Uniform => "uniform",
        })
    }
}

impl FromStr for Prior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Prior::Gaussian),
            "uniform" => Ok(Prior::Uniform),
            _ => Err(Error::Config(format!("unknown prior {s:?}"))),
        }
    }
}

/// `m x d` draws from the prior: i.i.d. `N(0, 1)` or `U(-1, 1)`.
pub fn sample_prior(prior: Prior, m: usize, d: usize, rng: &mut Rng) -> DenseMat {
    match prior {
        Prior::Gaussian => rng.normal_matrix(m, d),
        Prior::Uniform => rng.uniform_matrix(m, d),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub prior: Prior,
    pub epochs: usize,
    pub disc_steps: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub hidden: usize,
    pub embed: usize,
    pub decoder_hidden: usize,
    pub disc_hidden: (usize, usize),
    /// Rows sampled per discriminator step; `None` uses every node.
    pub disc_batch: Option<usize>,
    pub seed: u64,
    pub adv_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Arga,
            prior: Prior::Gaussian,
            epochs: 200,
            disc_steps: 1,
            lr: 0.001,
            disc_lr: 0.001,
            hidden: 32,
            embed: 16,
            decoder_hidden: 32,
            disc_hidden: (16, 64),
            disc_batch: None,
            seed: 0,
            adv_weight: 1.0,
        }
    }
}

impl TrainConfig {
    /// Settings for the large PubMed graph.
    pub fn pubmed() -> Self {
        TrainConfig {
            epochs: 2000,
            disc_lr: 0.008,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.disc_steps < 1 {
            return bad("disc_steps must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.disc_lr > 0.0 && self.disc_lr.is_finite()) {
            return bad("disc_lr must be positive");
        }
        if self.embed < 1 || self.hidden < 1 || self.decoder_hidden < 1 {
            return bad("layer widths must be at least 1");
        }
        if self.disc_hidden.0 < 1 || self.disc_hidden.1 < 1 {
            return bad("discriminator widths must be at least 1");
        }
        if self.disc_batch == Some(0) {
            return bad("disc_batch must be at least 1");
        }
        if !(self.adv_weight >= 0.0 && self.adv_weight.is_finite()) {
            return bad("adv_weight must be finite and non-negative");
        }
        Ok(())
    }

    /// Overrides fields with the keys of a TOML document; unknown keys are
    /// rejected.
    pub fn merge_toml(&self, text: &str) -> Result<TrainConfig> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let overrides: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        table.extend(overrides);
        let merged: TrainConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        merged.validate()?;
        Ok(merged)
    }

    pub fn architecture(&self, g: &Graph) -> Architecture {
        Architecture {
            variant: self.variant,
            num_nodes: g.num_nodes(),
            num_features: g.num_features(),
            hidden: self.hidden,
            embed: self.embed,
            decoder_hidden: self.decoder_hidden,
            disc_hidden: self.disc_hidden,
        }
    }
}

/// Bias-corrected Adam moments for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<DenseMat>,
    pub v: Vec<DenseMat>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        AdamState {
            m: shapes.iter().map(|&(r, c)| DenseMat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| DenseMat::zeros(r, c)).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &[&DenseMat]) -> Self {
        let shapes: Vec<_> = params.iter().map(|p| p.shape()).collect();
        Self::new(&shapes)
    }

    /// One update of every parameter. Nothing is modified when any gradient
    /// is non-finite or misshapen.
    pub fn step(
        &mut self,
        params: &mut [&mut DenseMat],
        grads: &[&DenseMat],
        names: &[&str],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len()
            || grads.len() != self.m.len()
            || names.len() != self.m.len()
        {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} moments, {} params, {} grads, {} names",
                    self.m.len(),
                    params.len(),
                    grads.len(),
                    names.len()
                ),
            ));
        }
        for (k, name) in names.iter().enumerate() {
            if params[k].shape() != self.m[k].shape() || grads[k].shape() != self.m[k].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "{name}: moment {:?}, param {:?}, grad {:?}",
                        self.m[k].shape(),
                        params[k].shape(),
                        grads[k].shape()
                    ),
                ));
            }
            if !grads[k].is_finite() {
                return Err(Error::numeric(format!("gradient of {name}")));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..self.m.len() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let g = grads[k].data();
            let p = params[k].data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Loss components recorded once per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub recon: f64,
    /// Per-node KL, before the 1/n weight it carries in the objective.
    pub kl: f64,
    pub disc: f64,
    pub gen: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub arch: Architecture,
    pub params: ModelParams,
    /// Mean-path embedding from the final weights.
    pub embedding: DenseMat,
    pub history: Vec<LossRow>,
}

/// Graph-derived inputs shared by every epoch.
pub struct TrainingInputs {
    pub propagator: Arc<SparseMat>,
    pub features: Arc<SparseMat>,
    pub dense_features: DenseMat,
    pub target: SparseMat,
}

impl TrainingInputs {
    /// Builds the propagator and reconstruction target from the training
    /// edges only.
    pub fn new(g: &Graph, split: &EdgeSplit) -> Result<Self> {
        let train_graph = g.with_edges(&split.train_edges)?;
        Ok(TrainingInputs {
            propagator: build_propagator(&train_graph).matrix().clone(),
            features: Arc::new(SparseMat::from_dense(g.features())),
            dense_features: g.features().clone(),
            target: train_graph.augmented_adjacency(),
        })
    }
}

fn gen_param_names(params: &ModelParams) -> Vec<&'static str> {
    let mut names = vec!["encoder.w0", "encoder.w1"];
    if params.encoder.w1_sigma.is_some() {
        names.push("encoder.w1_sigma");
    }
    if params.decoder.wd1.is_some() {
        names.extend(["decoder.wd1", "decoder.wd2"]);
    }
    names
}

fn gen_params_mut(params: &mut ModelParams) -> Vec<&mut DenseMat> {
    let mut out = vec![&mut params.encoder.w0, &mut params.encoder.w1];
    if let Some(w) = params.encoder.w1_sigma.as_mut() {
        out.push(w);
    }
    if let (Some(a), Some(b)) = (params.decoder.wd1.as_mut(), params.decoder.wd2.as_mut()) {
        out.push(a);
        out.push(b);
    }
    out
}

fn gen_params(params: &ModelParams) -> Vec<&DenseMat> {
    let mut out = vec![&params.encoder.w0, &params.encoder.w1];
    out.extend(params.encoder.w1_sigma.as_ref());
    out.extend(params.decoder.wd1.as_ref());
    out.extend(params.decoder.wd2.as_ref());
    out
}

const DISC_NAMES: [&str; 6] = [
    "discriminator.w1",
    "discriminator.b1",
    "discriminator.w2",
    "discriminator.b2",
    "discriminator.w3",
    "discriminator.b3",
];

/// Points within an epoch reported by [`Trainer::epoch_observed`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Latent codes computed, nothing updated yet.
    Encoded,
    /// After the `K` discriminator steps.
    DiscriminatorUpdated,
    /// After the encoder and decoder step.
    AutoencoderUpdated,
}

/// Mutable training state; `train` drives it epoch by epoch.
pub struct Trainer<'a> {
    cfg: &'a TrainConfig,
    inputs: &'a TrainingInputs,
    pub params: ModelParams,
    gen_adam: AdamState,
    disc_adam: AdamState,
    noise_rng: Rng,
    adv_rng: Rng,
    pub history: Vec<LossRow>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: &'a TrainConfig,
        arch: &Architecture,
        inputs: &'a TrainingInputs,
    ) -> Result<Self> {
        cfg.validate()?;
        if arch.variant.decoder() == DecoderKind::GcnContent {
            if let Some(v) = inputs
                .dense_features
                .data()
                .iter()
                .find(|&&v| v != 0.0 && v != 1.0)
            {
                return Err(Error::Contract(format!(
                    "{} reconstructs features and needs them binary, found {v}",
                    arch.variant
                )));
            }
        }
        crate::models::structure_weights(inputs.target.rows(), inputs.target.nnz())?;
        let mut init_rng = Rng::with_stream(cfg.seed, STREAM_INIT);
        let params = ModelParams::init(arch, &mut init_rng);
        let gen_adam = AdamState::for_params(&gen_params(&params));
        let disc_adam = AdamState::for_params(&params.discriminator.as_slice());
        Ok(Trainer {
            cfg,
            inputs,
            params,
            gen_adam,
            disc_adam,
            noise_rng: Rng::with_stream(cfg.seed, STREAM_NOISE),
            adv_rng: Rng::with_stream(cfg.seed, STREAM_ADVERSARY),
            history: Vec::with_capacity(cfg.epochs),
        })
    }

    /// Runs one epoch; numeric failures become `Diverged` with the epoch index.
    pub fn epoch(&mut self) -> Result<LossRow> {
        self.epoch_observed(&mut |_, _| {})
    }

    /// [`Trainer::epoch`] that shows the parameters to `observe` after each
    /// phase.
    pub fn epoch_observed(
        &mut self,
        observe: &mut dyn FnMut(Phase, &ModelParams),
    ) -> Result<LossRow> {
        let epoch = self.history.len();
        let row = self.epoch_inner(epoch, observe).map_err(|e| match e {
            Error::Numeric { op } => Error::Diverged { epoch, what: op },
            other => other,
        })?;
        self.history.push(row);
        Ok(row)
    }

    fn epoch_inner(
        &mut self,
        epoch: usize,
        observe: &mut dyn FnMut(Phase, &ModelParams),
    ) -> Result<LossRow> {
        let cfg = self.cfg;
        let inputs = self.inputs;
        let n = inputs.propagator.rows();
        let variational = cfg.variant.is_variational();

        let mut tape = Tape::new();
        let ev = EncoderVars::params(&mut tape, &self.params.encoder);
        let dec = match (&self.params.decoder.wd1, &self.params.decoder.wd2) {
            (Some(a), Some(b)) => Some(DecoderVars {
                wd1: tape.param(a.clone()),
                wd2: tape.param(b.clone()),
            }),
            _ => None,
        };
        let noise = variational.then(|| self.noise_rng.normal_matrix(n, cfg.embed));
        let lat = encode_on_tape(
            &mut tape,
            &inputs.propagator,
            &inputs.features,
            &ev,
            noise.as_ref(),
            EncodeOptions::default(),
        )?;

        observe(Phase::Encoded, &self.params);
        let disc = self.discriminator_steps(tape.value(lat.z))?;
        observe(Phase::DiscriminatorUpdated, &self.params);

        let recon = self.reconstruction(&mut tape, lat.z, dec.as_ref())?;
        let mut total = recon;
        let mut kl_value = 0.0;
        if let Some(ls) = lat.log_sigma {
            let kl = kl_loss(&mut tape, lat.mu, ls)?;
            kl_value = tape.scalar(kl);
            // the reconstruction is a mean over n² entries, so the per-node KL
            // enters with weight 1/n to keep the bound's proportions
            let weighted = tape.scale(kl, 1.0 / n as f64)?;
            total = tape.add(total, weighted)?;
        }
        let dv = DiscriminatorVars::constants(&mut tape, &self.params.discriminator);
        let fake = discriminator_logits(&mut tape, lat.z, &dv)?;
        let gen = generator_loss(&mut tape, fake)?;
        if cfg.adv_weight > 0.0 {
            let weighted = tape.scale(gen, cfg.adv_weight)?;
            total = tape.add(total, weighted)?;
        }
        let row = LossRow {
            epoch,
            recon: tape.scalar(recon),
            kl: kl_value,
            disc,
            gen: tape.scalar(gen),
        };

        let grads = tape.backward(total)?;
        let mut vars: Vec<Var> = vec![ev.w0, ev.w1];
        vars.extend(ev.w1_sigma);
        if let Some(d) = dec {
            vars.extend([d.wd1, d.wd2]);
        }
        let grad_mats: Vec<DenseMat> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
        let grad_refs: Vec<&DenseMat> = grad_mats.iter().collect();
        let names = gen_param_names(&self.params);
        let mut targets = gen_params_mut(&mut self.params);
        self.gen_adam
            .step(&mut targets, &grad_refs, &names, cfg.lr)?;
        observe(Phase::AutoencoderUpdated, &self.params);
        Ok(row)
    }

    fn reconstruction(&self, tape: &mut Tape, z: Var, dec: Option<&DecoderVars>) -> Result<Var> {
        let inputs = self.inputs;
        match (self.cfg.variant.decoder(), dec) {
            (DecoderKind::InnerProduct, _) => inner_product_structure_loss(tape, z, &inputs.target),
            (DecoderKind::GcnStructure, Some(d)) => {
                let o = decode_gcn(tape, z, &inputs.propagator, d)?;
                structure_loss(tape, o, &inputs.target)
            }
            (DecoderKind::GcnContent, Some(d)) => {
                let s = inner_product_structure_loss(tape, z, &inputs.target)?;
                let o = decode_gcn(tape, z, &inputs.propagator, d)?;
                let c = content_loss(tape, o, &inputs.dense_features)?;
                tape.add(s, c)
            }
            _ => Err(Error::Contract("GCN decoder without weights".into())),
        }
    }

    /// `K` Adam steps on the discriminator against detached encoder output.
    /// Returns the loss of the last step.
    pub fn discriminator_steps(&mut self, z: &DenseMat) -> Result<f64> {
        let cfg = self.cfg;
        let n = z.rows();
        let m = cfg.disc_batch.unwrap_or(n).min(n);
        let mut last = 0.0;
        for _ in 0..cfg.disc_steps {
            let idx = self.adv_rng.sample_indices(n, m);
            let fake = z.select_rows(&idx);
            let real = sample_prior(cfg.prior, m, z.cols(), &mut self.adv_rng);
            let mut tape = Tape::new();
            let dv = DiscriminatorVars::params(&mut tape, &self.params.discriminator);
            let r = tape.constant(real);
            let f = tape.constant(fake);
            let lr_ = discriminator_logits(&mut tape, r, &dv)?;
            let lf = discriminator_logits(&mut tape, f, &dv)?;
            let loss = discriminator_loss(&mut tape, lr_, lf)?;
            last = tape.scalar(loss);
            let grads = tape.backward(loss)?;
            let grad_mats: Vec<DenseMat> = dv
                .as_array()
                .iter()
                .map(|&v| grads.get_or_zeros(v))
                .collect();
            let grad_refs: Vec<&DenseMat> = grad_mats.iter().collect();
            let mut targets = self.params.discriminator.as_mut_slice();
            self.disc_adam
                .step(&mut targets, &grad_refs, &DISC_NAMES, cfg.disc_lr)?;
        }
        Ok(last)
    }

    pub fn finish(self, arch: Architecture) -> Result<TrainedModel> {
        let embedding = embed_mean(
            &self.inputs.propagator,
            &self.inputs.features,
            &self.params.encoder,
        )?;
        Ok(TrainedModel {
            config: self.cfg.clone(),
            arch,
            params: self.params,
            embedding,
            history: self.history,
        })
    }
}

/// Trains `cfg.variant` for exactly `cfg.epochs` epochs on the training
/// edges of `split`.
pub fn train(g: &Graph, split: &EdgeSplit, cfg: &TrainConfig) -> Result<TrainedModel> {
    let inputs = TrainingInputs::new(g, split)?;
    train_with_inputs(g, &inputs, cfg)
}

pub fn train_with_inputs(
    g: &Graph,
    inputs: &TrainingInputs,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let arch = cfg.architecture(g);
    let mut trainer = Trainer::new(cfg, &arch, inputs)?;
    for _ in 0..cfg.epochs {
        let row = trainer.epoch()?;
        log::debug!(
            "epoch {} recon {:.5} kl {:.5} disc {:.5} gen {:.5}",
            row.epoch,
            row.recon,
            row.kl,
            row.disc,
            row.gen
        );
    }
    trainer.finish(arch)
}

impl TrainedModel {
    /// Link logits for `pairs`. Inner-product variants use `z_i . z_j`;
    /// the structure-decoder variants read the symmetrized decoder output.
    pub fn link_logits(
        &self,
        inputs: &TrainingInputs,
        pairs: &[(usize, usize)],
    ) -> Result<Vec<f64>> {
        link_logits(&self.params, &self.embedding, inputs, pairs)
    }
}

pub fn link_logits(
    params: &ModelParams,
    embedding: &DenseMat,
    inputs: &TrainingInputs,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let n = embedding.rows();
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
        return Err(Error::Contract(format!(
            "pair ({a}, {b}) out of range for {n} nodes"
        )));
    }
    match (
        params.decoder.kind,
        &params.decoder.wd1,
        &params.decoder.wd2,
    ) {
        (DecoderKind::GcnStructure, Some(wd1), Some(wd2)) => {
            let mut tape = Tape::new();
            let z = tape.constant(embedding.clone());
            let d = DecoderVars {
                wd1: tape.constant(wd1.clone()),
                wd2: tape.constant(wd2.clone()),
            };
            let o = decode_gcn(&mut tape, z, &inputs.propagator, &d)?;
            let o = tape.value(o);
            Ok(pairs
                .iter()
                .map(|&(a, b)| 0.5 * (o.get(a, b) + o.get(b, a)))
                .collect())
        }
        _ => Ok(pairs
            .iter()
            .map(|&(a, b)| crate::tensor::dot(embedding.row(a), embedding.row(b)))
            .collect()),
    }
}
