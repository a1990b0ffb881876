//! `.mlstate` files: a magic line, one JSON header line, then each internal
//! node's tensor as little-endian `f64` pairs (re, im) in row-major order.

use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::TreeSpec;
use crate::C64;

use super::MlState;

const MAGIC: &str = "spinml-mlstate 1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub tree_hash: String,
    #[serde(rename = "L")]
    pub num_sites: usize,
    pub norm: f64,
    pub step: u64,
    /// (node, rows, cols) of each stored block, in file order.
    pub blocks: Vec<(usize, usize, usize)>,
}

pub(crate) fn write_complex(w: &mut impl Write, data: impl IntoIterator<Item = C64>) -> Result<()> {
    let mut buf = Vec::new();
    for z in data {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_complex(r: &mut impl Read, count: usize) -> Result<Vec<C64>> {
    let mut buf = vec![0u8; count * 16];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated data block: {e}")))?;
    Ok(buf
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect())
}

pub(crate) fn read_header_line<T: for<'de> Deserialize<'de>>(r: &mut impl BufRead, magic: &str) -> Result<T> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != magic {
        return Err(Error::Checkpoint(format!("expected `{magic}` on the first line")));
    }
    line.clear();
    r.read_line(&mut line)?;
    serde_json::from_str(line.trim_end()).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))
}

pub fn write_checkpoint(state: &MlState, w: &mut impl Write) -> Result<()> {
    let tree = state.tree();
    let blocks: Vec<_> = tree
        .internal_nodes()
        .map(|n| {
            let (r, c) = state.tensor(n).dim();
            (n, r, c)
        })
        .collect();
    let header = CheckpointHeader {
        tree_hash: format!("{:016x}", tree.hash()),
        num_sites: tree.num_sites(),
        norm: state.norm_sqr().sqrt(),
        step: state.step(),
        blocks,
    };
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for &(n, _, _) in &header.blocks {
        write_complex(w, state.tensor(n).iter().copied())?;
    }
    Ok(())
}

pub fn read_checkpoint(tree: &Arc<TreeSpec>, r: &mut impl BufRead) -> Result<MlState> {
    let header: CheckpointHeader = read_header_line(r, MAGIC)?;
    let want = format!("{:016x}", tree.hash());
    if header.tree_hash != want {
        return Err(Error::Checkpoint(format!(
            "checkpoint is for tree {} but the given tree hashes to {want}",
            header.tree_hash
        )));
    }
    if header.num_sites != tree.num_sites() {
        return Err(Error::Checkpoint(format!("checkpoint has L = {}", header.num_sites)));
    }
    let mut tensors: Vec<Option<Array2<C64>>> = vec![None; tree.len()];
    for &(n, rows, cols) in &header.blocks {
        if n >= tree.len() || tree.node(n).is_leaf() || tensors[n].is_some() {
            return Err(Error::Checkpoint(format!("unexpected block for node {n}")));
        }
        let data = read_complex(r, rows * cols)?;
        tensors[n] = Some(Array2::from_shape_vec((rows, cols), data).expect("sized above"));
    }
    if let Some(n) = tree.internal_nodes().find(|&n| tensors[n].is_none()) {
        return Err(Error::Checkpoint(format!("no block for node {n}")));
    }
    let mut s = MlState::from_tensors(Arc::clone(tree), tensors)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    s.set_step(header.step);
    Ok(s)
}
