use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, DualPathNet, RecurrentNet};
use crate::error::{Error, Result};
use crate::math::Tensor;
use crate::neuron::NeuronParams;

const MAGIC: &[u8; 8] = b"BSDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Model descriptor stored in the header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelSpec {
    DualPath {
        arch: Arch,
        neuron_fwd: NeuronParams,
        neuron_bwd: NeuronParams,
        steps: usize,
    },
    Recurrent {
        inputs: usize,
        hidden: usize,
        outputs: usize,
        neuron_fwd: NeuronParams,
        neuron_bwd: NeuronParams,
        steps: usize,
    },
    /// Plain ANN weights (reference baseline).
    Ann { sizes: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub spec: ModelSpec,
    pub seed: u64,
    pub blocks: Vec<BlockInfo>,
}

/// Header plus `f32` little-endian weight blocks in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, seed: u64, named: Vec<(String, &Tensor)>) -> Self {
        let blocks = named
            .iter()
            .map(|(n, t)| BlockInfo {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        Self {
            header: CheckpointHeader {
                version: CHECKPOINT_VERSION,
                spec,
                seed,
                blocks,
            },
            tensors: named.into_iter().map(|(_, t)| t.clone()).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, msg: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            msg,
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(fail(0, "not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fail(8, format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = 16 + hlen;
        if bytes.len() < body {
            return Err(fail(16, format!("header needs {hlen} bytes, file has {}", bytes.len() - 16)));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[16..body]).map_err(|e| fail(16, format!("bad header: {e}")))?;
        let mut offset = body;
        let mut tensors = vec![];
        for b in &header.blocks {
            let n: usize = b.shape.iter().product();
            let end = offset + 4 * n;
            if bytes.len() < end {
                return Err(fail(
                    offset,
                    format!("block {} needs {} bytes, {} remain", b.name, 4 * n, bytes.len() - offset),
                ));
            }
            let data = bytes[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            tensors.push(Tensor::from_vec(&b.shape, data)?);
            offset = end;
        }
        if offset != bytes.len() {
            return Err(fail(offset, format!("{} trailing bytes", bytes.len() - offset)));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Copy stored blocks into `targets`, checking names and shapes.
    pub fn restore_into(&self, names: &[String], targets: Vec<&mut Tensor>) -> Result<()> {
        if names.len() != self.tensors.len() {
            return Err(Error::data(format!(
                "checkpoint holds {} blocks, model expects {}",
                self.tensors.len(),
                names.len()
            )));
        }
        for ((name, info), (src, dst)) in names.iter().zip(&self.header.blocks).zip(self.tensors.iter().zip(targets)) {
            if *name != info.name || src.shape() != dst.shape() {
                return Err(Error::data(format!(
                    "checkpoint block {} {:?} does not match model block {name} {:?}",
                    info.name,
                    info.shape,
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

impl DualPathNet {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec::DualPath {
            arch: self.arch.clone(),
            neuron_fwd: self.neuron_fwd,
            neuron_bwd: self.neuron_bwd,
            steps: self.steps,
        }
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint::new(self.spec(), seed, self.named_tensors())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let ModelSpec::DualPath {
            arch,
            neuron_fwd,
            neuron_bwd,
            steps,
        } = ck.header.spec.clone()
        else {
            return Err(Error::data("checkpoint does not hold a dual-path network"));
        };
        let mut net = DualPathNet::new(arch, neuron_fwd, neuron_bwd, steps, ck.header.seed)?;
        let names: Vec<String> = net.named_tensors().into_iter().map(|(n, _)| n).collect();
        ck.restore_into(&names, net.tensors_mut())?;
        Ok(net)
    }
}

const RNN_NAMES: [&str; 6] = ["w_ih", "w_hh", "w_ho", "theta_oh", "theta_hh", "theta_hi"];

impl RecurrentNet {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec::Recurrent {
            inputs: self.pair.inputs(),
            hidden: self.pair.hidden(),
            outputs: self.pair.outputs(),
            neuron_fwd: self.neuron_fwd,
            neuron_bwd: self.neuron_bwd,
            steps: self.steps,
        }
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let named = RNN_NAMES.iter().map(|n| n.to_string()).zip(self.pair.params()).collect();
        Checkpoint::new(self.spec(), seed, named)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let ModelSpec::Recurrent {
            inputs,
            hidden,
            outputs,
            neuron_fwd,
            neuron_bwd,
            steps,
        } = ck.header.spec.clone()
        else {
            return Err(Error::data("checkpoint does not hold a recurrent network"));
        };
        let mut net = RecurrentNet::new(inputs, hidden, outputs, neuron_fwd, neuron_bwd, steps, ck.header.seed)?;
        let names: Vec<String> = RNN_NAMES.iter().map(|n| n.to_string()).collect();
        ck.restore_into(&names, net.pair.params_mut().into_iter().collect())?;
        Ok(net)
    }
}
