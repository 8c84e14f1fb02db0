//! Checkpoints on top of the record container.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{metrics_from_jsonl, metrics_to_jsonl, MetricRecord};
use crate::config::Config;
use crate::container::{Container, Payload, Record};
use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{Group, ParamStore};
use crate::units::ClusterCodebook;

const PARAM: &str = "param/";
const TEACHER: &str = "teacher/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Resolved `key=value` config of the run that wrote this checkpoint.
    pub config: String,
    pub model: ModelConfig,
    /// Every stage this model went through, oldest first.
    pub provenance: Vec<String>,
    pub params: ParamStore,
    /// Frozen model whose features were clustered into the codebook.
    pub teacher: Option<ParamStore>,
    pub codebook: Option<ClusterCodebook>,
    pub rng: ChaCha8Rng,
    pub metrics: Vec<MetricRecord>,
}

impl Checkpoint {
    pub fn adapters_enabled(&self) -> bool {
        self.params.has_group(Group::Adapter)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.push(Record::text("meta/config", self.config.clone()));
        c.push(Record::text("meta/provenance", self.provenance.join("\n")));
        let mut rng = Vec::with_capacity(56);
        rng.extend_from_slice(&self.rng.get_seed());
        rng.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        rng.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        c.push(Record::bytes("meta/rng", rng));
        c.push(Record::text("meta/metrics", metrics_to_jsonl(&self.metrics)));
        if let Some(cb) = &self.codebook {
            c.records.extend(codebook_records(cb));
        }
        for (name, m) in self.params.iter() {
            c.push(Record::tensor(format!("{PARAM}{name}"), m.clone()));
        }
        if let Some(t) = &self.teacher {
            for (name, m) in t.iter() {
                c.push(Record::tensor(format!("{TEACHER}{name}"), m.clone()));
            }
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config = c.text("meta/config")?.to_string();
        let mut cfg = Config::default();
        cfg.apply_text(&config).map_err(|e| Error::Corrupt(format!("config echo: {e}")))?;
        let model = cfg.model()?;
        let provenance = c.text("meta/provenance")?.lines().map(str::to_string).collect();
        let raw = c.bytes("meta/rng")?;
        if raw.len() != 56 {
            return Err(Error::Corrupt("RNG state has the wrong length".into()));
        }
        let mut rng = ChaCha8Rng::from_seed(raw[..32].try_into().unwrap());
        rng.set_stream(u64::from_le_bytes(raw[32..40].try_into().unwrap()));
        rng.set_word_pos(u128::from_le_bytes(raw[40..56].try_into().unwrap()));
        let metrics = metrics_from_jsonl(c.text("meta/metrics")?)?;
        let codebook = match c.get("codebook/centroids") {
            Some(_) => Some(codebook_from(c)?),
            None => None,
        };
        let mut params = ParamStore::new();
        let mut teacher = ParamStore::new();
        for r in &c.records {
            let (store, name) = if let Some(n) = r.name.strip_prefix(PARAM) {
                (&mut params, n)
            } else if let Some(n) = r.name.strip_prefix(TEACHER) {
                (&mut teacher, n)
            } else {
                continue;
            };
            let Payload::Tensor(m) = &r.payload else {
                return Err(Error::Corrupt(format!("record `{}` is not a tensor", r.name)));
            };
            if Group::of(name).is_none() {
                return Err(Error::Corrupt(format!("parameter `{name}` has no group")));
            }
            store.insert(name, m.clone());
        }
        let teacher = (!teacher.is_empty()).then_some(teacher);
        Ok(Self { config, model, provenance, params, teacher, codebook, rng, metrics })
    }
}

fn codebook_records(cb: &ClusterCodebook) -> Vec<Record> {
    vec![
        Record::tensor("codebook/centroids", cb.centroids.clone()),
        Record::text("codebook/meta", format!("feature_source={}\nfit_seed={}\n", cb.feature_source, cb.fit_seed)),
    ]
}

fn codebook_from(c: &Container) -> Result<ClusterCodebook> {
    let centroids = c.tensor("codebook/centroids")?.clone();
    let meta = c.text("codebook/meta")?;
    let field = |k: &str| {
        meta.lines()
            .find_map(|l| l.strip_prefix(&format!("{k}=")))
            .ok_or_else(|| Error::Corrupt(format!("codebook meta lacks {k}")))
    };
    Ok(ClusterCodebook {
        centroids,
        feature_source: field("feature_source")?.parse()?,
        fit_seed: field("fit_seed")?.parse().map_err(|_| Error::Corrupt("codebook fit_seed".into()))?,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.to_container().save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_container(&Container::load(path)?)
}

/// Standalone codebook file in the same record format.
pub fn save_codebook(cb: &ClusterCodebook, path: &Path) -> Result<()> {
    Container { records: codebook_records(cb) }.save(path)
}

pub fn load_codebook(path: &Path) -> Result<ClusterCodebook> {
    codebook_from(&Container::load(path)?)
}
