//! Weight files: a JSON shape header next to a flat little-endian `f32` blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_network, NetworkSpec, NetworkWeights};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub spec: NetworkSpec,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_weights(weights: &NetworkWeights, header: &Path, blob: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut bytes = Vec::new();
    let mut offset = 0;
    for (i, c) in weights.convs.iter().enumerate() {
        for (name, shape, data) in [
            (
                format!("conv{i}.weight"),
                vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                &c.weight,
            ),
            (format!("conv{i}.bias"), vec![c.out_channels], &c.bias),
        ] {
            tensors.push(TensorEntry { name, shape, offset });
            offset += data.len();
            for &v in data {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    let head = WeightsHeader {
        spec: weights.spec.clone(),
        dtype: "f32le".into(),
        tensors,
    };
    fs::write(header, serde_json::to_vec_pretty(&head)?).map_err(|e| Error::io(header, e))?;
    fs::write(blob, bytes).map_err(|e| Error::io(blob, e))
}

pub fn load_weights(header: &Path, blob: &Path) -> Result<NetworkWeights> {
    let text = fs::read(header).map_err(|e| Error::io(header, e))?;
    let head: WeightsHeader = serde_json::from_slice(&text)?;
    if head.dtype != "f32le" {
        return Err(Error::Data(format!("unsupported weight dtype '{}'", head.dtype)));
    }
    let bytes = fs::read(blob).map_err(|e| Error::io(blob, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Data("weight blob length is not a multiple of 4".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    // start from a correctly shaped network, then overwrite every tensor
    let mut weights = init_network(&head.spec, head.spec.seed)?;
    let expected = weights.convs.len() * 2;
    if head.tensors.len() != expected {
        return Err(Error::Data(format!(
            "header lists {} tensors, spec needs {expected}",
            head.tensors.len()
        )));
    }
    for (i, conv) in weights.convs.iter_mut().enumerate() {
        for (entry, dst) in head.tensors[2 * i..2 * i + 2]
            .iter()
            .zip([&mut conv.weight, &mut conv.bias])
        {
            let len: usize = entry.shape.iter().product();
            if len != dst.len() || entry.offset + len > values.len() {
                return Err(Error::Data(format!("tensor '{}' has wrong size", entry.name)));
            }
            dst.copy_from_slice(&values[entry.offset..entry.offset + len]);
        }
    }
    if let Some(bad) = weights
        .convs
        .iter()
        .flat_map(|c| c.weight.iter().chain(&c.bias))
        .find(|v| !v.is_finite())
    {
        return Err(Error::Data(format!("non-finite weight {bad}")));
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let w = init_network(&NetworkSpec::default(), 42).unwrap();
        let (h, b) = (dir.path().join("w.json"), dir.path().join("w.bin"));
        save_weights(&w, &h, &b).unwrap();
        assert_eq!(fs::metadata(&b).unwrap().len() as usize, w.convs.iter().map(|c| c.weight.len() + c.bias.len()).sum::<usize>() * 4);
        assert_eq!(load_weights(&h, &b).unwrap(), w);
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let w = init_network(&NetworkSpec::default(), 1).unwrap();
        let (h, b) = (dir.path().join("w.json"), dir.path().join("w.bin"));
        save_weights(&w, &h, &b).unwrap();
        let bytes = fs::read(&b).unwrap();
        fs::write(&b, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_weights(&h, &b).is_err());
    }
}
