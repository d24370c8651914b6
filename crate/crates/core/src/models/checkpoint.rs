//! Flat key → tensor archives: one `<key>.csv` per tensor in the tensor CSV
//! format and a `manifest.json` holding the model spec and the key list.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::{Decoder, DecoderSpec, LatentModel, Likelihood, Mlp, SkipMlp};
use crate::error::{Error, Result};
use crate::tensor::{read_csv, write_atomic, write_csv, Tensor};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub spec: Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (key, t) in &self.tensors {
            write_csv(dir.join(format!("{key}.csv")), t)?;
        }
        let manifest = json!({
            "spec": self.spec,
            "tensors": self.tensors.keys().collect::<Vec<_>>(),
        });
        write_atomic(
            &dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let keys = manifest["tensors"]
            .as_array()
            .ok_or_else(|| Error::Parse("manifest lacks a tensor list".into()))?;
        let mut tensors = BTreeMap::new();
        for k in keys {
            let k = k
                .as_str()
                .ok_or_else(|| Error::Parse("tensor keys must be strings".into()))?;
            tensors.insert(k.to_string(), read_csv(dir.join(format!("{k}.csv")))?);
        }
        Ok(Checkpoint {
            spec: manifest["spec"].clone(),
            tensors,
        })
    }

    fn take(&mut self, key: &str) -> Result<Tensor> {
        self.tensors
            .remove(key)
            .ok_or_else(|| Error::Parse(format!("checkpoint is missing `{key}`")))
    }
}

impl LatentModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors: BTreeMap<String, Tensor> = self
            .decoder
            .named_params()
            .into_iter()
            .map(|(k, t)| (k, t.clone()))
            .collect();
        let likelihood = match &self.likelihood {
            Likelihood::Gaussian { log_sigma } => {
                tensors.insert("likelihood.log_sigma".into(), log_sigma.clone());
                "gaussian"
            }
            Likelihood::Bernoulli => "bernoulli",
        };
        Checkpoint {
            spec: json!({ "decoder": self.decoder.spec(), "likelihood": likelihood }),
            tensors,
        }
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self> {
        let dspec: DecoderSpec = serde_json::from_value(ck.spec["decoder"].clone())?;
        let load_mlp = |ck: &mut Checkpoint, spec| -> Result<Mlp> {
            let mut mlp = Mlp::zeros(spec)?;
            for i in 0..mlp.spec.layers() {
                mlp.weights[i] = ck.take(&format!("decoder.{i}.weight"))?;
                mlp.biases[i] = ck.take(&format!("decoder.{i}.bias"))?;
            }
            Ok(mlp)
        };
        let decoder = match dspec {
            DecoderSpec::Linear { .. } => Decoder::Linear(ck.take("decoder.beta")?),
            DecoderSpec::Mlp { spec } => Decoder::Mlp(load_mlp(&mut ck, spec)?),
            DecoderSpec::Skip { spec } => {
                let mut net = SkipMlp::from_mlp(load_mlp(&mut ck, spec)?);
                for i in 0..net.skips.len() {
                    net.skips[i] = ck.take(&format!("decoder.{}.skip", i + 1))?;
                }
                Decoder::Skip(net)
            }
        };
        let likelihood = match ck.spec["likelihood"].as_str() {
            Some("gaussian") => Likelihood::Gaussian {
                log_sigma: ck.take("likelihood.log_sigma")?,
            },
            Some("bernoulli") => Likelihood::Bernoulli,
            other => return Err(Error::Parse(format!("unknown likelihood {other:?}"))),
        };
        LatentModel::new(decoder, likelihood)
    }
}
