//! Encoder, decoders, discriminator and every loss term, expressed as tape
//! operations so the trainer can differentiate them.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseMat, Rng, SparseMat, Tape, Var};

/// Bounds applied to `log σ` before exponentiation.
pub const LOG_SIGMA_CLAMP: (f64, f64) = (-10.0, 10.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Arga,
    Arvga,
    ArgaGd,
    ArvgaGd,
    ArgaAx,
    ArvgaAx,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Arga,
        Variant::Arvga,
        Variant::ArgaGd,
        Variant::ArvgaGd,
        Variant::ArgaAx,
        Variant::ArvgaAx,
    ];

    pub fn is_variational(self) -> bool {
        matches!(self, Variant::Arvga | Variant::ArvgaGd | Variant::ArvgaAx)
    }

    pub fn decoder(self) -> DecoderKind {
        match self {
            Variant::Arga | Variant::Arvga => DecoderKind::InnerProduct,
            Variant::ArgaGd | Variant::ArvgaGd => DecoderKind::GcnStructure,
            Variant::ArgaAx | Variant::ArvgaAx => DecoderKind::GcnContent,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Arga => "arga",
            Variant::Arvga => "arvga",
            Variant::ArgaGd => "arga_gd",
            Variant::ArvgaGd => "arvga_gd",
            Variant::ArgaAx => "arga_ax",
            Variant::ArvgaAx => "arvga_ax",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        // the GCN-decoder variant is also written "dg"
        let lower = lower.replace("_dg", "_gd");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    InnerProduct,
    GcnStructure,
    GcnContent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderWeights {
    pub w0: DenseMat,
    pub w1: DenseMat,
    pub w1_sigma: Option<DenseMat>,
}

impl EncoderWeights {
    pub fn init(
        features: usize,
        hidden: usize,
        embed: usize,
        variational: bool,
        rng: &mut Rng,
    ) -> Self {
        let w0 = DenseMat::glorot_uniform(features, hidden, rng);
        let w1 = DenseMat::glorot_uniform(hidden, embed, rng);
        let w1_sigma = variational.then(|| DenseMat::glorot_uniform(hidden, embed, rng));
        EncoderWeights { w0, w1, w1_sigma }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderWeights {
    pub kind: DecoderKind,
    pub wd1: Option<DenseMat>,
    pub wd2: Option<DenseMat>,
}

impl DecoderWeights {
    /// `out_width` is `n` for structure reconstruction and `m` for content.
    pub fn init(
        kind: DecoderKind,
        embed: usize,
        hidden: usize,
        out_width: usize,
        rng: &mut Rng,
    ) -> Self {
        match kind {
            DecoderKind::InnerProduct => DecoderWeights {
                kind,
                wd1: None,
                wd2: None,
            },
            _ => DecoderWeights {
                kind,
                wd1: Some(DenseMat::glorot_uniform(embed, hidden, rng)),
                wd2: Some(DenseMat::glorot_uniform(hidden, out_width, rng)),
            },
        }
    }
}

/// Three affine layers `d -> h1 -> h2 -> 1` with biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorWeights {
    pub w1: DenseMat,
    pub b1: DenseMat,
    pub w2: DenseMat,
    pub b2: DenseMat,
    pub w3: DenseMat,
    pub b3: DenseMat,
}

impl DiscriminatorWeights {
    pub fn init(embed: usize, hidden: (usize, usize), rng: &mut Rng) -> Self {
        DiscriminatorWeights {
            w1: DenseMat::glorot_uniform(embed, hidden.0, rng),
            b1: DenseMat::zeros(1, hidden.0),
            w2: DenseMat::glorot_uniform(hidden.0, hidden.1, rng),
            b2: DenseMat::zeros(1, hidden.1),
            w3: DenseMat::glorot_uniform(hidden.1, 1, rng),
            b3: DenseMat::zeros(1, 1),
        }
    }

    pub fn as_slice(&self) -> [&DenseMat; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn as_mut_slice(&mut self) -> [&mut DenseMat; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

/// Encoder output values.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    pub z: DenseMat,
    pub mu: Option<DenseMat>,
    pub log_sigma: Option<DenseMat>,
}

/// Encoder weights placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub w0: Var,
    pub w1: Var,
    pub w1_sigma: Option<Var>,
}

impl EncoderVars {
    pub fn params(tape: &mut Tape, w: &EncoderWeights) -> Self {
        EncoderVars {
            w0: tape.param(w.w0.clone()),
            w1: tape.param(w.w1.clone()),
            w1_sigma: w.w1_sigma.as_ref().map(|m| tape.param(m.clone())),
        }
    }

    pub fn constants(tape: &mut Tape, w: &EncoderWeights) -> Self {
        EncoderVars {
            w0: tape.constant(w.w0.clone()),
            w1: tape.constant(w.w1.clone()),
            w1_sigma: w.w1_sigma.as_ref().map(|m| tape.constant(m.clone())),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LatentVars {
    pub z: Var,
    pub mu: Var,
    pub log_sigma: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderVars {
    pub wd1: Var,
    pub wd2: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w3: Var,
    pub b3: Var,
}

impl DiscriminatorVars {
    pub fn params(tape: &mut Tape, w: &DiscriminatorWeights) -> Self {
        Self::place(tape, w, true)
    }

    pub fn constants(tape: &mut Tape, w: &DiscriminatorWeights) -> Self {
        Self::place(tape, w, false)
    }

    fn place(tape: &mut Tape, w: &DiscriminatorWeights, trainable: bool) -> Self {
        let mut put = |m: &DenseMat| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        DiscriminatorVars {
            w1: put(&w.w1),
            b1: put(&w.b1),
            w2: put(&w.w2),
            b2: put(&w.b2),
            w3: put(&w.w3),
            b3: put(&w.b3),
        }
    }

    pub fn as_array(&self) -> [Var; 6] {
        [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]
    }
}

/// Options for the variational path.
#[derive(Clone, Copy, Debug)]
pub struct EncodeOptions {
    /// Clamp applied to `log σ`; `None` disables it.
    pub log_sigma_clamp: Option<(f64, f64)>,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            log_sigma_clamp: Some(LOG_SIGMA_CLAMP),
        }
    }
}

/// Two-layer GCN encoder on the tape.
///
/// `Z1 = relu(P X W0)`, `μ = P Z1 W1`. When `w.w1_sigma` is present,
/// `log σ = P Z1 W1σ` and `Z = μ + exp(log σ) ⊙ ε` using the supplied
/// standard-normal `noise`; otherwise `Z = μ`.
pub fn encode_on_tape(
    tape: &mut Tape,
    propagator: &Arc<SparseMat>,
    features: &Arc<SparseMat>,
    w: &EncoderVars,
    noise: Option<&DenseMat>,
    opts: EncodeOptions,
) -> Result<LatentVars> {
    let xw = tape.spmm(features, w.w0)?;
    let pre1 = tape.spmm(propagator, xw)?;
    let z1 = tape.relu(pre1);
    let h_mu = tape.matmul(z1, w.w1)?;
    let mu = tape.spmm(propagator, h_mu)?;
    let Some(ws) = w.w1_sigma else {
        return Ok(LatentVars {
            z: mu,
            mu,
            log_sigma: None,
        });
    };
    let h_ls = tape.matmul(z1, ws)?;
    let raw_ls = tape.spmm(propagator, h_ls)?;
    let log_sigma = match opts.log_sigma_clamp {
        Some((lo, hi)) => tape.clamp(raw_ls, lo, hi),
        None => raw_ls,
    };
    let z = match noise {
        Some(eps) => {
            let sigma = tape.exp(log_sigma)?;
            let eps = tape.constant(eps.clone());
            let spread = tape.hadamard(sigma, eps)?;
            tape.add(mu, spread)?
        }
        None => mu,
    };
    Ok(LatentVars {
        z,
        mu,
        log_sigma: Some(log_sigma),
    })
}

/// Value-level encoder. Variational weights draw `ε ~ N(0, I)` from `rng`.
pub fn encode(
    propagator: &Arc<SparseMat>,
    features: &Arc<SparseMat>,
    w: &EncoderWeights,
    rng: &mut Rng,
    opts: EncodeOptions,
) -> Result<LatentBatch> {
    let mut tape = Tape::new();
    let vars = EncoderVars::constants(&mut tape, w);
    let noise = w
        .w1_sigma
        .as_ref()
        .map(|ws| rng.normal_matrix(propagator.rows(), ws.cols()));
    let out = encode_on_tape(&mut tape, propagator, features, &vars, noise.as_ref(), opts)?;
    Ok(LatentBatch {
        z: tape.value(out.z).clone(),
        mu: out.log_sigma.map(|_| tape.value(out.mu).clone()),
        log_sigma: out.log_sigma.map(|v| tape.value(v).clone()),
    })
}

/// Deterministic embedding: the mean path of the encoder.
pub fn embed_mean(
    propagator: &Arc<SparseMat>,
    features: &Arc<SparseMat>,
    w: &EncoderWeights,
) -> Result<DenseMat> {
    let mut tape = Tape::new();
    let vars = EncoderVars::constants(&mut tape, w);
    let out = encode_on_tape(
        &mut tape,
        propagator,
        features,
        &vars,
        None,
        EncodeOptions::default(),
    )?;
    Ok(tape.value(out.mu).clone())
}

/// Inner-product decoder logits `Z Z^T`.
pub fn decode_inner_product(tape: &mut Tape, z: Var) -> Result<Var> {
    tape.matmul_transb(z, z)
}

/// Value-level inner-product decoder.
pub fn inner_product_logits(z: &DenseMat) -> DenseMat {
    z.matmul_transb(z).expect("same width")
}

/// Two linear GCN layers: `Z_D = P Z WD1`, `O = P Z_D WD2`.
pub fn decode_gcn(
    tape: &mut Tape,
    z: Var,
    propagator: &Arc<SparseMat>,
    w: &DecoderVars,
) -> Result<Var> {
    let h1 = tape.matmul(z, w.wd1)?;
    let zd = tape.spmm(propagator, h1)?;
    // (P Z_D) WD2 keeps the sparse product on the narrow side
    let pzd = tape.spmm(propagator, zd)?;
    tape.matmul(pzd, w.wd2)
}

/// Class-balancing weights for a binary `n x n` target with `nnz` ones:
/// `pos_weight = (n² - nnz) / nnz`, `norm = n² / (2 (n² - nnz))`.
pub fn structure_weights(n: usize, nnz: usize) -> Result<(f64, f64)> {
    let total = (n as f64) * (n as f64);
    let nnz = nnz as f64;
    if nnz <= 0.0 || nnz >= total {
        return Err(Error::Contract(format!(
            "structure loss undefined: target has {nnz} ones out of {total} entries"
        )));
    }
    Ok(((total - nnz) / nnz, total / (2.0 * (total - nnz))))
}

/// Weighted sigmoid cross-entropy of `n x n` logits against `Ã` (which must
/// include the self loops).
pub fn structure_loss(tape: &mut Tape, logits: Var, target: &SparseMat) -> Result<Var> {
    let (pw, norm) = structure_weights(target.rows(), target.nnz())?;
    tape.weighted_bce_sparse_target(logits, target, pw, norm)
}

/// `structure_loss(Z Z^T, target)` without materializing `Z Z^T`.
pub fn inner_product_structure_loss(tape: &mut Tape, z: Var, target: &SparseMat) -> Result<Var> {
    let (pw, norm) = structure_weights(target.rows(), target.nnz())?;
    tape.inner_product_bce(z, target, pw, norm)
}

/// Unweighted mean sigmoid cross-entropy between content logits and binary `X`.
pub fn content_loss(tape: &mut Tape, logits: Var, x: &DenseMat) -> Result<Var> {
    if let Some(v) = x.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Contract(format!(
            "content reconstruction needs binary features, found {v}"
        )));
    }
    tape.bce_with_logits(logits, x)
}

/// Closed-form `KL(N(μ, diag σ²) || N(0, I))` summed over dimensions and
/// averaged over nodes.
pub fn kl_loss(tape: &mut Tape, mu: Var, log_sigma: Var) -> Result<Var> {
    let n = tape.value(mu).rows() as f64;
    let two_ls = tape.scale(log_sigma, 2.0)?;
    let var = tape.exp(two_ls)?;
    let mu_sq = tape.hadamard(mu, mu)?;
    let a = tape.sub(two_ls, mu_sq)?;
    let b = tape.sub(a, var)?;
    let c = tape.add_scalar(b, 1.0)?;
    let s = tape.sum(c)?;
    tape.scale(s, -0.5 / n)
}

/// Discriminator logits: `affine(relu(affine(relu(affine(z)))))`.
pub fn discriminator_logits(tape: &mut Tape, z: Var, w: &DiscriminatorVars) -> Result<Var> {
    let a1 = tape.matmul(z, w.w1)?;
    let a1 = tape.add_row(a1, w.b1)?;
    let h1 = tape.relu(a1);
    let a2 = tape.matmul(h1, w.w2)?;
    let a2 = tape.add_row(a2, w.b2)?;
    let h2 = tape.relu(a2);
    let a3 = tape.matmul(h2, w.w3)?;
    tape.add_row(a3, w.b3)
}

/// Value-level discriminator probabilities, `batch x 1`.
pub fn discriminate(z: &DenseMat, w: &DiscriminatorWeights) -> Result<DenseMat> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let vars = DiscriminatorVars::constants(&mut tape, w);
    let logits = discriminator_logits(&mut tape, zv, &vars)?;
    let p = tape.sigmoid(logits);
    Ok(tape.value(p).clone())
}

/// Discriminator loss `-½ mean log D(real) - ½ mean log(1 - D(fake))` from logits.
pub fn discriminator_loss(tape: &mut Tape, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let real = tape.neg_mean_log_sigmoid(real_logits, 1.0)?;
    let fake = tape.neg_mean_log_sigmoid(fake_logits, -1.0)?;
    let sum = tape.add(real, fake)?;
    tape.scale(sum, 0.5)
}

/// Non-saturating generator loss `-mean log D(fake)` from logits.
pub fn generator_loss(tape: &mut Tape, fake_logits: Var) -> Result<Var> {
    tape.neg_mean_log_sigmoid(fake_logits, 1.0)
}

/// `(disc_loss, gen_loss)` for a pair of logit batches of equal size.
pub fn adversarial_losses(real_logits: &DenseMat, fake_logits: &DenseMat) -> Result<(f64, f64)> {
    if real_logits.len() != fake_logits.len() {
        return Err(Error::shape(
            "adversarial_losses",
            format!("{} real vs {} fake", real_logits.len(), fake_logits.len()),
        ));
    }
    let mut tape = Tape::new();
    let r = tape.constant(real_logits.clone());
    let f = tape.constant(fake_logits.clone());
    let d = discriminator_loss(&mut tape, r, f)?;
    let g = generator_loss(&mut tape, f)?;
    Ok((tape.scalar(d), tape.scalar(g)))
}

/// Every trainable matrix of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderWeights,
    pub decoder: DecoderWeights,
    pub discriminator: DiscriminatorWeights,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub variant: Variant,
    pub num_nodes: usize,
    pub num_features: usize,
    pub hidden: usize,
    pub embed: usize,
    pub decoder_hidden: usize,
    pub disc_hidden: (usize, usize),
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases.
    pub fn init(arch: &Architecture, rng: &mut Rng) -> Self {
        let v = arch.variant;
        let encoder = EncoderWeights::init(
            arch.num_features,
            arch.hidden,
            arch.embed,
            v.is_variational(),
            rng,
        );
        let out_width = match v.decoder() {
            DecoderKind::GcnContent => arch.num_features,
            _ => arch.num_nodes,
        };
        let decoder =
            DecoderWeights::init(v.decoder(), arch.embed, arch.decoder_hidden, out_width, rng);
        let discriminator = DiscriminatorWeights::init(arch.embed, arch.disc_hidden, rng);
        ModelParams {
            encoder,
            decoder,
            discriminator,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::numeric::{sigmoid, softplus};

    fn sp(m: &DenseMat) -> Arc<SparseMat> {
        Arc::new(SparseMat::from_dense(m))
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("ARVGA_AX".parse::<Variant>().unwrap(), Variant::ArvgaAx);
        assert_eq!("arga_dg".parse::<Variant>().unwrap(), Variant::ArgaGd);
        assert!("foo".parse::<Variant>().is_err());
    }

    #[test]
    fn zero_weights_give_zero_embedding() {
        let mut rng = Rng::new(0);
        let p = Arc::new(SparseMat::identity(4));
        let x = sp(&rng.normal_matrix(4, 3));
        let w = EncoderWeights {
            w0: DenseMat::zeros(3, 5),
            w1: DenseMat::zeros(5, 2),
            w1_sigma: None,
        };
        let out = encode(&p, &x, &w, &mut rng, EncodeOptions::default()).unwrap();
        assert_eq!(out.z, DenseMat::zeros(4, 2));
    }

    #[test]
    fn scalar_chain() {
        // P = [[1]], X = [1], w0 = 1, w1 = 2 -> relu(1) * 2
        let p = Arc::new(SparseMat::identity(1));
        let x = sp(&DenseMat::scalar(1.0));
        let w = EncoderWeights {
            w0: DenseMat::scalar(1.0),
            w1: DenseMat::scalar(2.0),
            w1_sigma: None,
        };
        let out = encode(&p, &x, &w, &mut Rng::new(0), EncodeOptions::default()).unwrap();
        assert_eq!(out.z, DenseMat::scalar(2.0));
    }

    #[test]
    fn variational_collapses_to_mean_without_variance() {
        let mut rng = Rng::new(4);
        let p = Arc::new(SparseMat::identity(5));
        let x = sp(&DenseMat::filled(5, 3, 1.0));
        let w = EncoderWeights {
            w0: DenseMat::filled(3, 4, 0.5),
            w1: rng.normal_matrix(4, 2),
            w1_sigma: Some(DenseMat::filled(4, 2, -500.0)),
        };
        let opts = EncodeOptions {
            log_sigma_clamp: None,
        };
        let out = encode(&p, &x, &w, &mut rng, opts).unwrap();
        assert!(out.z.max_abs_diff(out.mu.as_ref().unwrap()) < 1e-6);
    }

    #[test]
    fn inner_product_decoder() {
        let z = DenseMat::zeros(3, 2);
        assert_eq!(inner_product_logits(&z), DenseMat::zeros(3, 3));
        let e = DenseMat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(inner_product_logits(&e), DenseMat::identity(2));

        let mut rng = Rng::new(8);
        let z = rng.normal_matrix(4, 2);
        let logits = inner_product_logits(&z);
        for i in 0..4 {
            for j in 0..4 {
                let want = z.get(i, 0) * z.get(j, 0) + z.get(i, 1) * z.get(j, 1);
                assert!((logits.get(i, j) - want).abs() < 1e-15);
                assert_eq!(logits.get(i, j), logits.get(j, i));
            }
        }
    }

    #[test]
    fn gcn_decoder_scalar_chain_and_zero_weights() {
        let p = Arc::new(SparseMat::identity(1));
        let mut tape = Tape::new();
        let z = tape.constant(DenseMat::scalar(1.5));
        let w = DecoderVars {
            wd1: tape.constant(DenseMat::scalar(-2.0)),
            wd2: tape.constant(DenseMat::scalar(0.25)),
        };
        let o = decode_gcn(&mut tape, z, &p, &w).unwrap();
        assert_eq!(tape.value(o), &DenseMat::scalar(1.5 * -2.0 * 0.25));

        let p = Arc::new(SparseMat::identity(3));
        let z = tape.constant(DenseMat::filled(3, 2, 1.0));
        let w = DecoderVars {
            wd1: tape.constant(DenseMat::zeros(2, 4)),
            wd2: tape.constant(DenseMat::zeros(4, 3)),
        };
        let o = decode_gcn(&mut tape, z, &p, &w).unwrap();
        assert_eq!(tape.value(o), &DenseMat::zeros(3, 3));
    }

    #[test]
    fn structure_loss_complete_graph_is_error() {
        let target = SparseMat::from_dense(&DenseMat::filled(2, 2, 1.0));
        let mut tape = Tape::new();
        let l = tape.constant(DenseMat::zeros(2, 2));
        assert!(matches!(
            structure_loss(&mut tape, l, &target),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn structure_loss_matches_per_entry_loop() {
        let mut rng = Rng::new(21);
        let n = 5;
        let mut a = DenseMat::identity(n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.uniform() < 0.4 {
                    a.set(i, j, 1.0);
                    a.set(j, i, 1.0);
                }
            }
        }
        let target = SparseMat::from_dense(&a);
        let mut tape = Tape::new();
        let logits = tape.constant(DenseMat::zeros(n, n));
        let l = structure_loss(&mut tape, logits, &target).unwrap();

        let nnz = a.data().iter().filter(|&&v| v == 1.0).count() as f64;
        let total = (n * n) as f64;
        let pw = (total - nnz) / nnz;
        let norm = total / (2.0 * (total - nnz));
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let t = a.get(i, j);
                sum += pw * t * -(sigmoid(0.0).ln()) + (1.0 - t) * -((1.0 - sigmoid(0.0)).ln());
            }
        }
        let want = norm * sum / total;
        assert!((tape.scalar(l) - want).abs() < 1e-14);
    }

    #[test]
    fn structure_loss_perfect_reconstruction_limit() {
        let a = DenseMat::from_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let logits = a.map(|t| if t == 1.0 { 60.0 } else { -60.0 });
        let mut tape = Tape::new();
        let l = tape.constant(logits);
        let loss = structure_loss(&mut tape, l, &SparseMat::from_dense(&a)).unwrap();
        assert!(tape.scalar(loss) < 1e-20);
    }

    #[test]
    fn content_loss_cases() {
        let mut tape = Tape::new();
        let x = DenseMat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let zero = tape.constant(DenseMat::zeros(2, 2));
        let l = content_loss(&mut tape, zero, &x).unwrap();
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);

        let perfect = tape.constant(x.map(|t| if t == 1.0 { 50.0 } else { -50.0 }));
        let l = content_loss(&mut tape, perfect, &x).unwrap();
        assert!(tape.scalar(l) < 1e-20);

        let bad = DenseMat::filled(2, 2, 0.5);
        let c = tape.constant(DenseMat::zeros(2, 2));
        assert!(matches!(
            content_loss(&mut tape, c, &bad),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn content_loss_matches_loop() {
        let mut rng = Rng::new(2);
        let o = rng.normal_matrix(3, 4);
        let x = DenseMat::from_rows(&[
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
        ]);
        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..4 {
                let (t, v) = (x.get(i, j), o.get(i, j));
                want += t * softplus(-v) + (1.0 - t) * softplus(v);
            }
        }
        want /= 12.0;
        let mut tape = Tape::new();
        let ov = tape.constant(o);
        let l = content_loss(&mut tape, ov, &x).unwrap();
        assert!((tape.scalar(l) - want).abs() < 1e-15);
    }

    #[test]
    fn kl_closed_form_values() {
        let mut tape = Tape::new();
        let mu = tape.constant(DenseMat::zeros(3, 2));
        let ls = tape.constant(DenseMat::zeros(3, 2));
        let kl = kl_loss(&mut tape, mu, ls).unwrap();
        assert_eq!(tape.scalar(kl), 0.0);

        let mu = tape.constant(DenseMat::scalar(1.0));
        let ls = tape.constant(DenseMat::scalar(0.0));
        let kl = kl_loss(&mut tape, mu, ls).unwrap();
        assert!((tape.scalar(kl) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_monte_carlo_cross_check() {
        // KL(N(1,1) || N(0,1)) = E_q[log q(z) - log p(z)] with z ~ N(1,1)
        let mut rng = Rng::new(99);
        let samples = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let z = 1.0 + rng.normal();
            let log_q = -0.5 * (z - 1.0) * (z - 1.0);
            let log_p = -0.5 * z * z;
            acc += log_q - log_p;
        }
        let mc = acc / samples as f64;
        assert!((mc - 0.5).abs() < 1e-2, "mc estimate {mc}");
    }

    #[test]
    fn discriminator_zero_weights_half() {
        let w = DiscriminatorWeights {
            w1: DenseMat::zeros(2, 16),
            b1: DenseMat::zeros(1, 16),
            w2: DenseMat::zeros(16, 64),
            b2: DenseMat::zeros(1, 64),
            w3: DenseMat::zeros(64, 1),
            b3: DenseMat::zeros(1, 1),
        };
        let p = discriminate(&DenseMat::filled(4, 2, 3.0), &w).unwrap();
        assert_eq!(p, DenseMat::filled(4, 1, 0.5));
    }

    #[test]
    fn discriminator_matches_layer_loop() {
        let mut rng = Rng::new(31);
        let w = DiscriminatorWeights {
            w1: rng.normal_matrix(3, 4),
            b1: rng.normal_matrix(1, 4),
            w2: rng.normal_matrix(4, 5),
            b2: rng.normal_matrix(1, 5),
            w3: rng.normal_matrix(5, 1),
            b3: rng.normal_matrix(1, 1),
        };
        let z = rng.normal_matrix(6, 3);
        let p = discriminate(&z, &w).unwrap();
        let layer = |x: &[f64], wm: &DenseMat, b: &DenseMat, relu: bool| -> Vec<f64> {
            (0..wm.cols())
                .map(|c| {
                    let mut s = b.get(0, c);
                    for (r, xv) in x.iter().enumerate() {
                        s += xv * wm.get(r, c);
                    }
                    if relu {
                        s.max(0.0)
                    } else {
                        s
                    }
                })
                .collect()
        };
        for i in 0..6 {
            let h1 = layer(z.row(i), &w.w1, &w.b1, true);
            let h2 = layer(&h1, &w.w2, &w.b2, true);
            let o = layer(&h2, &w.w3, &w.b3, false)[0];
            let want = 1.0 / (1.0 + (-o).exp());
            assert!((p.get(i, 0) - want).abs() < 1e-14);
            assert!(p.get(i, 0) > 0.0 && p.get(i, 0) < 1.0);
        }
    }

    #[test]
    fn adversarial_loss_values() {
        let (d, g) = adversarial_losses(&DenseMat::zeros(4, 1), &DenseMat::zeros(4, 1)).unwrap();
        assert!((d - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g - std::f64::consts::LN_2).abs() < 1e-15);

        let (d, g) = adversarial_losses(
            &DenseMat::filled(4, 1, 40.0),
            &DenseMat::filled(4, 1, -40.0),
        )
        .unwrap();
        assert!(d < 1e-15);
        assert!(g > 39.0);

        let mut rng = Rng::new(17);
        let real = rng.normal_matrix(8, 1).scale(3.0);
        let fake = rng.normal_matrix(8, 1).scale(3.0);
        let (d, g) = adversarial_losses(&real, &fake).unwrap();
        let (mut dr, mut df, mut gf) = (0.0, 0.0, 0.0);
        for k in 0..8 {
            dr += -sigmoid(real.data()[k]).ln();
            df += -(1.0 - sigmoid(fake.data()[k])).ln();
            gf += -sigmoid(fake.data()[k]).ln();
        }
        assert!((d - 0.5 * (dr / 8.0 + df / 8.0)).abs() < 1e-12);
        assert!((g - gf / 8.0).abs() < 1e-12);

        assert!(adversarial_losses(&DenseMat::zeros(3, 1), &DenseMat::zeros(2, 1)).is_err());
    }
}
