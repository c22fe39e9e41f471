//! Checkpoint codec.
//!
//! Layout, integers little-endian: magic `LMCK`, u32 version = 1, then the
//! shape table (u32 activation tag, u32 d_in, u32 trunk layer count, one u32
//! width per trunk layer, u32 embedding dim, u32 classifier outputs, u32
//! center count) followed by all parameter payloads as f32: per trunk layer
//! w then b, embedding w/b, batch-norm gamma/beta/running mean/running var,
//! classifier w/b, centers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::codec::ByteReader;
use crate::error::{Error, Result};
use crate::train::net::{Activation, BatchNorm, Centers, Linear, Network};

const CHECKPOINT_MAGIC: &[u8; 4] = b"LMCK";
const CHECKPOINT_VERSION: u32 = 1;

fn activation_tag(a: Activation) -> u32 {
    match a {
        Activation::Relu => 0,
        Activation::Softplus => 1,
    }
}

fn activation_from_tag(tag: u32) -> Result<Activation> {
    match tag {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Softplus),
        other => Err(Error::Codec(format!("unknown activation tag {other}"))),
    }
}

fn write_f64_as_f32<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, net: &Network, centers: &Centers) -> Result<()> {
    if centers.dim != net.embedding_dim() {
        return Err(Error::Shape(format!(
            "centers dim {} does not match embedding dim {}",
            centers.dim,
            net.embedding_dim()
        )));
    }
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&activation_tag(net.activation).to_le_bytes())?;
    w.write_all(&(net.d_in as u32).to_le_bytes())?;
    w.write_all(&(net.trunk.len() as u32).to_le_bytes())?;
    for layer in &net.trunk {
        w.write_all(&(layer.out_dim as u32).to_le_bytes())?;
    }
    w.write_all(&(net.embedding_dim() as u32).to_le_bytes())?;
    w.write_all(&(net.n_outputs() as u32).to_le_bytes())?;
    w.write_all(&(centers.n_classes as u32).to_le_bytes())?;
    for layer in &net.trunk {
        write_f64_as_f32(&mut w, &layer.w)?;
        write_f64_as_f32(&mut w, &layer.b)?;
    }
    write_f64_as_f32(&mut w, &net.embed.w)?;
    write_f64_as_f32(&mut w, &net.embed.b)?;
    write_f64_as_f32(&mut w, &net.bn.gamma)?;
    write_f64_as_f32(&mut w, &net.bn.beta)?;
    write_f64_as_f32(&mut w, &net.bn.running_mean)?;
    write_f64_as_f32(&mut w, &net.bn.running_var)?;
    write_f64_as_f32(&mut w, &net.classifier.w)?;
    write_f64_as_f32(&mut w, &net.classifier.b)?;
    write_f64_as_f32(&mut w, &centers.data)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, Centers)> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Codec(format!("unsupported checkpoint version {version}")));
    }
    let activation = activation_from_tag(r.u32("activation")?)?;
    let d_in = r.u32("d_in")? as usize;
    let n_trunk = r.u32("trunk layer count")? as usize;
    let mut widths = Vec::with_capacity(n_trunk);
    for _ in 0..n_trunk {
        widths.push(r.u32("trunk width")? as usize);
    }
    let d_embed = r.u32("embedding dim")? as usize;
    let n_outputs = r.u32("classifier outputs")? as usize;
    let n_centers = r.u32("center count")? as usize;
    if d_in == 0 || d_embed == 0 || n_outputs == 0 {
        return Err(Error::Codec("checkpoint shapes must be >= 1".into()));
    }

    let mut read_vec = |n: usize, what: &str| -> Result<Vec<f64>> {
        Ok(r.f32_vec(n, what)?.into_iter().map(f64::from).collect())
    };
    let mut trunk = Vec::with_capacity(n_trunk);
    let mut prev = d_in;
    for (i, &width) in widths.iter().enumerate() {
        let w = read_vec(prev * width, &format!("trunk layer {i} weights"))?;
        let b = read_vec(width, &format!("trunk layer {i} bias"))?;
        trunk.push(Linear { w, b, in_dim: prev, out_dim: width });
        prev = width;
    }
    let embed = Linear {
        w: read_vec(prev * d_embed, "embedding weights")?,
        b: read_vec(d_embed, "embedding bias")?,
        in_dim: prev,
        out_dim: d_embed,
    };
    let bn = BatchNorm {
        gamma: read_vec(d_embed, "bn gamma")?,
        beta: read_vec(d_embed, "bn beta")?,
        running_mean: read_vec(d_embed, "bn running mean")?,
        running_var: read_vec(d_embed, "bn running var")?,
    };
    let classifier = Linear {
        w: read_vec(d_embed * n_outputs, "classifier weights")?,
        b: read_vec(n_outputs, "classifier bias")?,
        in_dim: d_embed,
        out_dim: n_outputs,
    };
    let centers = Centers {
        n_classes: n_centers,
        dim: d_embed,
        data: read_vec(n_centers * d_embed, "centers")?,
    };
    if r.remaining() != 0 {
        return Err(Error::Codec(format!(
            "trailing bytes after checkpoint payload: {}",
            r.remaining()
        )));
    }
    Ok((Network { d_in, trunk, embed, bn, classifier, activation }, centers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::net::seeded_rng;

    #[test]
    fn checkpoint_roundtrip_preserves_f32_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lmck");
        let mut rng = seeded_rng(9);
        let mut net = Network::init(6, &[5, 4], 3, 4, Activation::Softplus, &mut rng);
        net.bn.running_mean = vec![0.25, -1.5, 3.0];
        net.bn.running_var = vec![0.5, 2.0, 1.25];
        let centers = Centers::init(3, 3, &mut rng);
        save_checkpoint(&path, &net, &centers).unwrap();
        let (net2, centers2) = load_checkpoint(&path).unwrap();
        assert_eq!(net2.activation, net.activation);
        assert_eq!(net2.d_in, net.d_in);
        assert_eq!(net2.trunk.len(), 2);
        // f64 -> f32 -> f64: values equal at f32 precision.
        for (a, b) in net.params_flat().iter().zip(net2.params_flat()) {
            assert_eq!(*a as f32, b as f32);
        }
        for (a, b) in centers.data.iter().zip(&centers2.data) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert_eq!(net2.bn.running_mean, net.bn.running_mean);
    }

    #[test]
    fn truncated_checkpoint_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.lmck");
        let mut rng = seeded_rng(10);
        let net = Network::init(4, &[3], 2, 3, Activation::Relu, &mut rng);
        let centers = Centers::init(2, 2, &mut rng);
        save_checkpoint(&path, &net, &centers).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
