//! Feature extraction (z or c) in eval mode, and the per-utterance binary
//! feature file format: shape prefix + little-endian 32-bit reals.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nn_core::{Bound, Graph, NnError, Result, Tensor};

use crate::model::CpcModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureLayer {
    /// Encoder output z.
    Z,
    /// Final aggregator layer output c.
    C,
}

impl FeatureLayer {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "z" => Ok(FeatureLayer::Z),
            "c" => Ok(FeatureLayer::C),
            other => Err(NnError::InvalidConfig(format!("unknown layer `{other}`"))),
        }
    }
}

/// Deterministic eval-mode extraction; dropout is inactive.
pub fn extract_features(model: &CpcModel, waveform: &[f64], layer: FeatureLayer) -> Result<Tensor> {
    let mut g = Graph::new();
    let mut bound = Bound::new();
    let z = model.base.encode(&mut g, &mut bound, waveform)?;
    let node = match layer {
        FeatureLayer::Z => z,
        FeatureLayer::C => model.base.aggregate(&mut g, &mut bound, z),
    };
    Ok(g.value(node).clone())
}

pub fn write_feature_file(path: &Path, features: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(features.shape().len() as u32).to_le_bytes())?;
    for &d in features.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in features.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    let ndim = u32::from_le_bytes(buf) as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        r.read_exact(&mut buf)?;
        shape.push(u32::from_le_bytes(buf) as usize);
    }
    let count: usize = shape.iter().product();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        data.push(f32::from_le_bytes(buf) as f64);
    }
    Tensor::new(shape, data)
}
