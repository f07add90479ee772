//! Versioned JSON checkpoints and tab-separated embedding files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::DatasetSource;
use crate::models::{embed_mean, Architecture, DecoderKind, ModelParams};
use crate::tensor::DenseMat;
use crate::train::{LossRow, TrainConfig, TrainedModel, TrainingInputs};

pub const CHECKPOINT_FORMAT: &str = "argem-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How the training edges were chosen, so evaluation can rebuild the split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dataset: DatasetSource,
    pub split: SplitSpec,
    pub config: TrainConfig,
    pub arch: Architecture,
    pub params: ModelParams,
    pub node_ids: Vec<String>,
    pub embedding: DenseMat,
    pub history: Vec<LossRow>,
}

impl Checkpoint {
    pub fn new(
        model: &TrainedModel,
        dataset: &DatasetSource,
        split: SplitSpec,
        node_ids: &[String],
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dataset: dataset.clone(),
            split,
            config: model.config.clone(),
            arch: model.arch,
            params: model.params.clone(),
            node_ids: node_ids.to_vec(),
            embedding: model.embedding.clone(),
            history: model.history.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.validate()?;
        Ok(ck)
    }

    /// Format tag, version and every matrix shape against the architecture.
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let a = &self.arch;
        let out_width = match a.variant.decoder() {
            DecoderKind::GcnContent => a.num_features,
            _ => a.num_nodes,
        };
        let p = &self.params;
        let mut expect: Vec<(&str, Option<&DenseMat>, (usize, usize))> = vec![
            (
                "encoder.w0",
                Some(&p.encoder.w0),
                (a.num_features, a.hidden),
            ),
            ("encoder.w1", Some(&p.encoder.w1), (a.hidden, a.embed)),
            (
                "discriminator.w1",
                Some(&p.discriminator.w1),
                (a.embed, a.disc_hidden.0),
            ),
            (
                "discriminator.b1",
                Some(&p.discriminator.b1),
                (1, a.disc_hidden.0),
            ),
            (
                "discriminator.w2",
                Some(&p.discriminator.w2),
                (a.disc_hidden.0, a.disc_hidden.1),
            ),
            (
                "discriminator.b2",
                Some(&p.discriminator.b2),
                (1, a.disc_hidden.1),
            ),
            (
                "discriminator.w3",
                Some(&p.discriminator.w3),
                (a.disc_hidden.1, 1),
            ),
            ("discriminator.b3", Some(&p.discriminator.b3), (1, 1)),
            ("embedding", Some(&self.embedding), (a.num_nodes, a.embed)),
        ];
        if a.variant.is_variational() {
            expect.push((
                "encoder.w1_sigma",
                p.encoder.w1_sigma.as_ref(),
                (a.hidden, a.embed),
            ));
        } else if p.encoder.w1_sigma.is_some() {
            return Err(Error::Checkpoint(
                "encoder.w1_sigma present for a non-variational model".into(),
            ));
        }
        if p.decoder.kind != a.variant.decoder() {
            return Err(Error::Checkpoint(format!(
                "decoder {:?} does not match model {}",
                p.decoder.kind, a.variant
            )));
        }
        if a.variant.decoder() != DecoderKind::InnerProduct {
            expect.push((
                "decoder.wd1",
                p.decoder.wd1.as_ref(),
                (a.embed, a.decoder_hidden),
            ));
            expect.push((
                "decoder.wd2",
                p.decoder.wd2.as_ref(),
                (a.decoder_hidden, out_width),
            ));
        }
        for (name, mat, shape) in expect {
            let Some(m) = mat else {
                return Err(Error::Checkpoint(format!("{name} missing")));
            };
            if m.shape() != shape || m.data().len() != shape.0 * shape.1 {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {:?} with {} values, expected {shape:?}",
                    m.shape(),
                    m.data().len()
                )));
            }
            if !m.is_finite() {
                return Err(Error::Checkpoint(format!(
                    "{name} contains non-finite values"
                )));
            }
        }
        if self.node_ids.len() != a.num_nodes {
            return Err(Error::Checkpoint(format!(
                "{} node ids for {} nodes",
                self.node_ids.len(),
                a.num_nodes
            )));
        }
        Ok(())
    }

    /// Recomputes the mean-path embedding from the stored weights.
    pub fn recompute_embedding(&self, inputs: &TrainingInputs) -> Result<DenseMat> {
        embed_mean(&inputs.propagator, &inputs.features, &self.params.encoder)
    }

    pub fn to_model(&self) -> TrainedModel {
        TrainedModel {
            config: self.config.clone(),
            arch: self.arch,
            params: self.params.clone(),
            embedding: self.embedding.clone(),
            history: self.history.clone(),
        }
    }
}

/// Writes `node_id \t v_1 ... v_d` rows with round-trip float formatting.
pub fn write_embedding_tsv(path: &Path, node_ids: &[String], z: &DenseMat) -> Result<()> {
    if node_ids.len() != z.rows() {
        return Err(Error::shape(
            "write_embedding_tsv",
            format!("{} ids for {} rows", node_ids.len(), z.rows()),
        ));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (id, row) in node_ids.iter().zip((0..z.rows()).map(|i| z.row(i))) {
        w.write_all(id.as_bytes())?;
        for v in row {
            write!(w, "\t{v:?}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_embedding_tsv`].
pub fn read_embedding_tsv(path: &Path) -> Result<(Vec<String>, DenseMat)> {
    let text = fs::read_to_string(path)?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for (k, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        let mut fields = line.split('\t');
        ids.push(fields.next().unwrap_or_default().to_string());
        let before = data.len();
        for f in fields {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| parse_err(format!("bad value {f:?}: {e}")))?,
            );
        }
        let d = data.len() - before;
        match width {
            None => width = Some(d),
            Some(w) if w != d => return Err(parse_err(format!("{d} values, expected {w}"))),
            _ => {}
        }
    }
    let z = DenseMat::from_vec(ids.len(), width.unwrap_or(0), data)?;
    Ok((ids, z))
}
