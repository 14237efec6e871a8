//! Surrogate model file: `weights.json` manifest (config, layer specs,
//! normalization statistics, tensor offsets) plus a `weights.f64` blob
//! of little-endian doubles. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::BatchNormState;
use crate::error::{Error, Result};

use super::{LayerWeights, NetWeights, SurrogateConfig, SurrogateModel};

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    stride: usize,
    activation: bool,
    has_bn: bool,
    bn_initialized: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetEntry {
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsManifest {
    schema_version: u32,
    config: SurrogateConfig,
    nets: Vec<(String, NetEntry)>,
    tensors: Vec<TensorEntry>,
    blob: String,
}

const NET_NAMES: [&str; 5] = ["enc_state", "enc_static", "enc_control", "g_net", "decoder"];

pub fn save_surrogate(model: &SurrogateModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob: Vec<f64> = Vec::new();
    let mut tensors = Vec::new();
    let mut nets = Vec::new();

    let push = |name: String, shape: Vec<usize>, data: &[f64], blob: &mut Vec<f64>, tensors: &mut Vec<TensorEntry>| {
        tensors.push(TensorEntry {
            name,
            shape,
            offset: blob.len(),
            len: data.len(),
        });
        blob.extend_from_slice(data);
    };

    for (net_name, net) in net_pairs(model) {
        let mut layers = Vec::new();
        for (li, l) in net.layers.iter().enumerate() {
            let p = format!("{net_name}.l{li}");
            push(format!("{p}.kernel"), l.kernel_shape.clone(), &l.kernel, &mut blob, &mut tensors);
            push(format!("{p}.bias"), vec![l.bias.len()], &l.bias, &mut blob, &mut tensors);
            let mut bn_initialized = false;
            if let Some((gamma, beta, st)) = &l.bn {
                push(format!("{p}.gamma"), vec![gamma.len()], gamma, &mut blob, &mut tensors);
                push(format!("{p}.beta"), vec![beta.len()], beta, &mut blob, &mut tensors);
                push(format!("{p}.running_mean"), vec![st.running_mean.len()], &st.running_mean, &mut blob, &mut tensors);
                push(format!("{p}.running_var"), vec![st.running_var.len()], &st.running_var, &mut blob, &mut tensors);
                bn_initialized = st.initialized;
            }
            layers.push(LayerEntry {
                stride: l.stride,
                activation: l.activation,
                has_bn: l.bn.is_some(),
                bn_initialized,
            });
        }
        nets.push((net_name.to_string(), NetEntry { layers }));
    }

    let manifest = WeightsManifest {
        schema_version: 1,
        config: model.config.clone(),
        nets,
        tensors,
        blob: "weights.f64".into(),
    };
    fs::write(dir.join("weights.json"), serde_json::to_string_pretty(&manifest)?)?;
    let mut bytes = Vec::with_capacity(blob.len() * 8);
    for v in &blob {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join("weights.f64"), bytes)?;
    Ok(())
}

pub fn load_surrogate(dir: &Path) -> Result<SurrogateModel> {
    let manifest: WeightsManifest = serde_json::from_str(
        &fs::read_to_string(dir.join("weights.json"))
            .map_err(|e| Error::Io(format!("cannot read weights.json: {e}")))?,
    )?;
    let bytes = fs::read(dir.join(&manifest.blob))
        .map_err(|e| Error::Io(format!("cannot read weights blob: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Io("weights blob length not a multiple of 8".into()));
    }
    let blob: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let fetch = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
        let e = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Io(format!("tensor {name} missing from manifest")))?;
        if e.offset + e.len > blob.len() {
            return Err(Error::Io(format!("tensor {name} extends past blob end")));
        }
        let data = blob[e.offset..e.offset + e.len].to_vec();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("tensor {name} has non-finite values")));
        }
        Ok((e.shape.clone(), data))
    };

    let mut nets: Vec<NetWeights> = Vec::new();
    for name in NET_NAMES {
        let entry = &manifest
            .nets
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Io(format!("net {name} missing from manifest")))?
            .1;
        let mut layers = Vec::new();
        for (li, le) in entry.layers.iter().enumerate() {
            let p = format!("{name}.l{li}");
            let (kernel_shape, kernel) = fetch(&format!("{p}.kernel"))?;
            let (_, bias) = fetch(&format!("{p}.bias"))?;
            let bn = if le.has_bn {
                let (_, gamma) = fetch(&format!("{p}.gamma"))?;
                let (_, beta) = fetch(&format!("{p}.beta"))?;
                let (_, running_mean) = fetch(&format!("{p}.running_mean"))?;
                let (_, running_var) = fetch(&format!("{p}.running_var"))?;
                Some((
                    gamma,
                    beta,
                    BatchNormState {
                        running_mean,
                        running_var,
                        initialized: le.bn_initialized,
                    },
                ))
            } else {
                None
            };
            layers.push(LayerWeights {
                kernel_shape,
                kernel,
                bias,
                bn,
                stride: le.stride,
                activation: le.activation,
            });
        }
        nets.push(NetWeights { layers });
    }
    let mut it = nets.into_iter();
    let model = SurrogateModel {
        config: manifest.config,
        enc_state: it.next().expect("five nets"),
        enc_static: it.next().expect("five nets"),
        enc_control: it.next().expect("five nets"),
        g_net: it.next().expect("five nets"),
        decoder: it.next().expect("five nets"),
    };
    model.config.validate()?;
    Ok(model)
}

fn net_pairs(model: &SurrogateModel) -> [(&'static str, &NetWeights); 5] {
    [
        ("enc_state", &model.enc_state),
        ("enc_static", &model.enc_static),
        ("enc_control", &model.enc_control),
        ("g_net", &model.g_net),
        ("decoder", &model.decoder),
    ]
}
