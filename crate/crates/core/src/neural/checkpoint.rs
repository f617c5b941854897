//! Versioned binary checkpoints: header (kind, dims, training metadata)
//! followed by named parameter records in declared order, little-endian
//! 64-bit floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

use super::{ModelConfig, ModelGraph, ModelKind};

const MAGIC: &[u8; 4] = b"AVCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u32,
    pub val_loss: f64,
    pub seed: u64,
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        CheckpointMeta {
            epoch: 0,
            val_loss: f64::INFINITY,
            seed: 0,
        }
    }
}

fn kind_code(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::Vl2m => 0,
        ModelKind::Vl2mRef => 1,
        ModelKind::AvConcat => 2,
        ModelKind::AvConcatRef => 3,
    }
}

fn kind_from_code(code: u8) -> Result<ModelKind> {
    match code {
        0 => Ok(ModelKind::Vl2m),
        1 => Ok(ModelKind::Vl2mRef),
        2 => Ok(ModelKind::AvConcat),
        3 => Ok(ModelKind::AvConcatRef),
        other => Err(CoreError::Checkpoint(format!("unknown kind code {other}"))),
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn save<T: Scalar>(
    graph: &ModelGraph<T>,
    meta: &CheckpointMeta,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[kind_code(graph.kind())])?;

    let cfg = graph.config();
    write_u32(&mut out, cfg.feat_dim as u32)?;
    write_u32(&mut out, cfg.spec_bins as u32)?;
    write_u32(&mut out, cfg.units as u32)?;
    write_u32(&mut out, cfg.vl2m_layers as u32)?;
    write_u32(&mut out, cfg.concat_layers as u32)?;
    write_u32(&mut out, cfg.refine_layers as u32)?;
    out.write_all(&cfg.iam_clip.to_le_bytes())?;
    out.write_all(&[u8::from(graph.vl2m_frozen())])?;

    write_u32(&mut out, meta.epoch)?;
    out.write_all(&meta.val_loss.to_le_bytes())?;
    out.write_all(&meta.seed.to_le_bytes())?;

    let names = graph.param_names();
    let params = graph.params();
    write_u32(&mut out, names.len() as u32)?;
    for (name, tensor) in names.iter().zip(params) {
        let bytes = name.as_bytes();
        out.write_all(&(bytes.len() as u16).to_le_bytes())?;
        out.write_all(bytes)?;
        write_u32(&mut out, tensor.rows() as u32)?;
        write_u32(&mut out, tensor.cols() as u32)?;
        for &v in tensor.as_slice() {
            out.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<(ModelGraph<T>, CheckpointMeta)> {
    let mut input = BufReader::new(File::open(path.as_ref())?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CoreError::Checkpoint("bad checkpoint magic".into()));
    }
    let mut v = [0u8; 2];
    input.read_exact(&mut v)?;
    if u16::from_le_bytes(v) != VERSION {
        return Err(CoreError::Checkpoint("unsupported checkpoint version".into()));
    }
    let mut code = [0u8; 1];
    input.read_exact(&mut code)?;
    let kind = kind_from_code(code[0])?;

    let config = ModelConfig {
        feat_dim: read_u32(&mut input)? as usize,
        spec_bins: read_u32(&mut input)? as usize,
        units: read_u32(&mut input)? as usize,
        vl2m_layers: read_u32(&mut input)? as usize,
        concat_layers: read_u32(&mut input)? as usize,
        refine_layers: read_u32(&mut input)? as usize,
        iam_clip: read_f64(&mut input)?,
    };
    let mut frozen = [0u8; 1];
    input.read_exact(&mut frozen)?;

    let meta = CheckpointMeta {
        epoch: read_u32(&mut input)?,
        val_loss: read_f64(&mut input)?,
        seed: read_u64(&mut input)?,
    };

    let mut graph = ModelGraph::<T>::new(kind, config, meta.seed);
    graph.set_vl2m_frozen(frozen[0] != 0);

    let n_tensors = read_u32(&mut input)? as usize;
    let names = graph.param_names();
    if n_tensors != names.len() {
        return Err(CoreError::Checkpoint(format!(
            "tensor count mismatch: file has {n_tensors}, model needs {}",
            names.len()
        )));
    }
    for (expected, tensor) in names.iter().zip(graph.params_mut()) {
        let mut len_bytes = [0u8; 2];
        input.read_exact(&mut len_bytes)?;
        let name_len = u16::from_le_bytes(len_bytes) as usize;
        let mut name_bytes = vec![0u8; name_len];
        input.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CoreError::Checkpoint("non-utf8 tensor name".into()))?;
        if &name != expected {
            return Err(CoreError::Checkpoint(format!(
                "tensor order mismatch: expected '{expected}', found '{name}'"
            )));
        }
        let rows = read_u32(&mut input)? as usize;
        let cols = read_u32(&mut input)? as usize;
        if (rows, cols) != tensor.shape() {
            return Err(CoreError::Checkpoint(format!(
                "tensor '{name}' shape mismatch: file {rows}x{cols}, model {:?}",
                tensor.shape()
            )));
        }
        for v in tensor.as_mut_slice() {
            *v = T::from_f64_lossy(read_f64(&mut input)?);
        }
    }
    Ok((graph, meta))
}

/// Copies the trained VL2M component out of a VL2M checkpoint into a
/// composed graph (shared `vl2m.*` tensor names).
pub fn load_vl2m_component<T: Scalar>(
    graph: &mut ModelGraph<T>,
    vl2m_checkpoint: impl AsRef<Path>,
) -> Result<()> {
    let (source, _) = load::<T>(vl2m_checkpoint.as_ref())?;
    if source.kind() != ModelKind::Vl2m {
        return Err(CoreError::Checkpoint(format!(
            "expected a vl2m checkpoint, got {}",
            source.kind().label()
        )));
    }
    if !graph.kind().uses_vl2m() {
        return Err(CoreError::Checkpoint(format!(
            "model {} has no vl2m component",
            graph.kind().label()
        )));
    }
    let src_names = source.param_names();
    let src_params = source.params();
    let dst_names = graph.param_names();
    let mut copied = 0usize;
    for (dst_name, dst) in dst_names.iter().zip(graph.params_mut()) {
        if !dst_name.starts_with("vl2m.") {
            continue;
        }
        let idx = src_names
            .iter()
            .position(|n| n == dst_name)
            .ok_or_else(|| CoreError::Checkpoint(format!("missing tensor '{dst_name}'")))?;
        let src = src_params[idx];
        if src.shape() != dst.shape() {
            return Err(CoreError::Checkpoint(format!(
                "vl2m tensor '{dst_name}' shape mismatch"
            )));
        }
        dst.as_mut_slice().copy_from_slice(src.as_slice());
        copied += 1;
    }
    if copied == 0 {
        return Err(CoreError::Checkpoint("no vl2m tensors copied".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn tiny() -> ModelConfig {
        ModelConfig {
            feat_dim: 6,
            spec_bins: 4,
            units: 3,
            vl2m_layers: 2,
            concat_layers: 2,
            refine_layers: 1,
            iam_clip: 10.0,
        }
    }

    #[test]
    fn save_load_round_trip_preserves_forward_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        for kind in [
            ModelKind::Vl2m,
            ModelKind::Vl2mRef,
            ModelKind::AvConcat,
            ModelKind::AvConcatRef,
        ] {
            let graph: ModelGraph<f64> = ModelGraph::new(kind, tiny(), 77);
            let meta = CheckpointMeta {
                epoch: 12,
                val_loss: 3.25,
                seed: 77,
            };
            save(&graph, &meta, &path).unwrap();
            let (loaded, got_meta) = load::<f64>(&path).unwrap();
            assert_eq!(got_meta, meta);
            assert_eq!(loaded, graph, "{kind:?}");

            let v = Grid::from_elem(3, 6, 0.4);
            let y = Grid::from_elem(3, 4, 0.1);
            let (a, _) = graph.forward(&v, &y, None).unwrap();
            let (b, _) = loaded.forward(&v, &y, None).unwrap();
            assert_eq!(a.as_slice(), b.as_slice(), "{kind:?}");
        }
    }

    #[test]
    fn vl2m_component_transplant() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vl2m.ckpt");
        let vl2m: ModelGraph<f64> = ModelGraph::new(ModelKind::Vl2m, tiny(), 5);
        save(&vl2m, &CheckpointMeta::default(), &path).unwrap();

        let mut composed: ModelGraph<f64> = ModelGraph::new(ModelKind::Vl2mRef, tiny(), 99);
        load_vl2m_component(&mut composed, &path).unwrap();

        let src_names = vl2m.param_names();
        let src_params = vl2m.params();
        let dst_names = composed.param_names();
        let dst_params = composed.params();
        for (name, dst) in dst_names.iter().zip(dst_params) {
            if name.starts_with("vl2m.") {
                let i = src_names.iter().position(|n| n == name).unwrap();
                assert_eq!(dst.as_slice(), src_params[i].as_slice(), "{name}");
            }
        }
    }

    #[test]
    fn load_rejects_wrong_kind_for_component() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("concat.ckpt");
        let concat: ModelGraph<f64> = ModelGraph::new(ModelKind::AvConcat, tiny(), 5);
        save(&concat, &CheckpointMeta::default(), &path).unwrap();
        let mut composed: ModelGraph<f64> = ModelGraph::new(ModelKind::Vl2mRef, tiny(), 9);
        assert!(load_vl2m_component(&mut composed, &path).is_err());
    }
}
