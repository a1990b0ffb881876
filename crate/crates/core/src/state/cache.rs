//! Term-by-term operator matrices. Slower than the aggregated [`Layout`]
//! sweep, but each entry has a direct meaning, so it doubles as a reference
//! for it.
//!
//! [`Layout`]: super::Layout

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::{identity, mode_product, row_overlaps, unfold_gram};
use crate::model::SumOfProducts;
use crate::tree::NodeId;
use crate::C64;

use super::MlState;

/// For every term and node, the term restricted to the node's subtree in the
/// node's basis. Nodes the term does not touch hold the identity.
#[derive(Clone, Debug)]
pub struct NodeOperatorCache {
    coefficients: Vec<f64>,
    dims: Vec<usize>,
    mats: Vec<Vec<Option<Array2<C64>>>>,
    fingerprint: u64,
}

impl NodeOperatorCache {
    pub fn num_terms(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficient(&self, term: usize) -> f64 {
        self.coefficients[term]
    }

    pub fn matrix(&self, term: usize, node: NodeId) -> Array2<C64> {
        self.mats[term][node].clone().unwrap_or_else(|| identity(self.dims[node]))
    }

    /// `Σ_r c_r (root entry)`.
    pub fn energy(&self) -> C64 {
        (0..self.num_terms())
            .map(|r| self.coefficients[r] * self.matrix(r, 0)[[0, 0]])
            .sum()
    }
}

fn fingerprint(state: &MlState) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in state.tensors().iter().flatten() {
        for x in t {
            for bits in [x.re.to_bits(), x.im.to_bits()] {
                h ^= bits;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}

pub fn upward_pass(state: &MlState, h: &SumOfProducts) -> Result<NodeOperatorCache> {
    let tree = state.tree();
    if h.num_sites() != tree.num_sites() {
        return Err(Error::Consistency(format!(
            "Hamiltonian on {} sites, tree on {}",
            h.num_sites(),
            tree.num_sites()
        )));
    }
    let mut mats = Vec::with_capacity(h.terms().len());
    for term in h.terms() {
        let mut m: Vec<Option<Array2<C64>>> = vec![None; tree.len()];
        for (&s, op) in &term.factors {
            let leaf = tree
                .leaf_of_site(s)
                .ok_or_else(|| Error::Consistency(format!("site {s} is not a leaf of the tree")))?;
            let o = op.matrix();
            m[leaf] = Some(Array2::from_shape_fn((2, 2), |(i, j)| o[i][j]));
        }
        for n in (0..tree.len()).rev() {
            let children = tree.children(n);
            if children.iter().all(|&c| m[c].is_none()) {
                continue;
            }
            let a = state.tensor(n);
            let dims = state.child_dims(n);
            let mut x = a.clone();
            for (k, &c) in children.iter().enumerate() {
                if let Some(mc) = &m[c] {
                    x = mode_product(&x, &dims, k, mc.view());
                }
            }
            m[n] = Some(row_overlaps(a, &x));
        }
        mats.push(m);
    }
    Ok(NodeOperatorCache {
        coefficients: h.terms().iter().map(|t| t.coefficient).collect(),
        dims: tree.nodes().iter().map(|n| n.dim).collect(),
        mats,
        fingerprint: fingerprint(state),
    })
}

/// Per term, `F[a, b] = ⟨g_a|h^out|g_b⟩` on `node`, where `h^out` is the part
/// of the term outside the node's subtree and `Ψ = Σ_a φ_a ⊗ g_a`. With the
/// cache entry `h^in` of the same term, `Σ_ab F[a,b] h^in[a,b]` is the term's
/// expectation; for a term acting only inside the subtree `F` is the hole
/// density matrix.
pub fn mean_field_matrices(state: &MlState, cache: &NodeOperatorCache, node: NodeId) -> Result<Vec<Array2<C64>>> {
    if cache.fingerprint != fingerprint(state) {
        return Err(Error::Consistency("operator cache was built for different tensors".into()));
    }
    let tree = state.tree();
    if node >= tree.len() {
        return Err(Error::Domain(format!("no node {node}")));
    }
    let mut path = vec![node];
    while let Some(p) = tree.parent(*path.last().unwrap()) {
        path.push(p);
    }
    path.reverse();
    let mut out = Vec::with_capacity(cache.num_terms());
    for r in 0..cache.num_terms() {
        let mut f = identity(1);
        for w in path.windows(2) {
            let (p, c) = (w[0], w[1]);
            let a = state.tensor(p);
            let dims = state.child_dims(p);
            let k = tree.slot(c);
            let mut x = a.clone();
            for (s, &sib) in tree.children(p).iter().enumerate() {
                if s != k {
                    if let Some(m) = &cache.mats[r][sib] {
                        x = mode_product(&x, &dims, s, m.view());
                    }
                }
            }
            f = unfold_gram(a, &f.dot(&x), &dims, k);
        }
        out.push(f);
    }
    Ok(out)
}
