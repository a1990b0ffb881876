//! The layered wavefunction and its contractions.

mod cache;
pub(crate) mod checkpoint;
mod layout;

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, mode_product, orthonormality_deviation, orthonormalize_rows, unfold_gram};
use crate::model::SumOfProducts;
use crate::tree::{NodeId, TreeSpec};
use crate::C64;

pub use cache::{mean_field_matrices, upward_pass, NodeOperatorCache};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use layout::{Layout, Sweep};

/// Largest chain that may be expanded into a dense vector.
pub const MAX_DENSE_SITES: usize = 24;

/// Coefficient tensors on every internal node of a tree.
///
/// Each non-root tensor has orthonormal rows; the root tensor is a single
/// row holding the normalized top-layer coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct MlState {
    tree: Arc<TreeSpec>,
    tensors: Vec<Option<Array2<C64>>>,
    step: u64,
}

impl MlState {
    /// Wraps existing tensors after a shape check.
    pub fn from_tensors(tree: Arc<TreeSpec>, tensors: Vec<Option<Array2<C64>>>) -> Result<Self> {
        if tensors.len() != tree.len() {
            return Err(Error::Consistency(format!(
                "{} tensors for a tree of {} nodes",
                tensors.len(),
                tree.len()
            )));
        }
        for n in tree.nodes() {
            let t = &tensors[n.id];
            match (n.is_leaf(), t) {
                (true, None) => {}
                (false, Some(a)) if a.dim() == (n.dim, tree.child_product(n.id)) => {}
                (_, t) => {
                    return Err(Error::Consistency(format!(
                        "node {} expects shape {:?}, got {:?}",
                        n.id,
                        (!n.is_leaf()).then(|| (n.dim, tree.child_product(n.id))),
                        t.as_ref().map(|a| a.dim())
                    )))
                }
            }
        }
        Ok(Self { tree, tensors, step: 0 })
    }

    pub fn tree(&self) -> &Arc<TreeSpec> {
        &self.tree
    }

    pub fn num_sites(&self) -> usize {
        self.tree.num_sites()
    }

    pub fn tensor(&self, n: NodeId) -> &Array2<C64> {
        self.tensors[n].as_ref().expect("internal node")
    }

    pub fn tensor_mut(&mut self, n: NodeId) -> &mut Array2<C64> {
        self.tensors[n].as_mut().expect("internal node")
    }

    pub fn tensors(&self) -> &[Option<Array2<C64>>] {
        &self.tensors
    }

    pub fn child_dims(&self, n: NodeId) -> Vec<usize> {
        self.tree.children(n).iter().map(|&c| self.tree.dim(c)).collect()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// `⟨Ψ|Ψ⟩`, assuming orthonormal rows below the root.
    pub fn norm_sqr(&self) -> f64 {
        self.tensor(0).iter().map(|x| x.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) -> f64 {
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            self.tensor_mut(0).mapv_inplace(|x| x / n);
        }
        n
    }

    /// Re-orthonormalizes every non-root tensor, moving the non-orthogonal
    /// part into the parent so the wavefunction is unchanged, then normalizes
    /// the root.
    pub fn orthonormalize(&mut self) {
        for n in (1..self.tree.len()).rev() {
            if self.tree.node(n).is_leaf() {
                continue;
            }
            let t = orthonormalize_rows(self.tensor_mut(n));
            let p = self.tree.parent(n).expect("non-root");
            let dims = self.child_dims(p);
            let k = self.tree.slot(n);
            let updated = mode_product(self.tensor(p), &dims, k, t.t());
            *self.tensor_mut(p) = updated;
        }
        self.normalize();
    }

    /// Largest deviation from orthonormal rows over all non-root nodes.
    pub fn orthonormality_check(&self) -> f64 {
        self.tree
            .internal_nodes()
            .filter(|&n| n != 0)
            .map(|n| orthonormality_deviation(self.tensor(n)))
            .fold(0.0, f64::max)
    }

    /// `⟨self|other⟩` for two states on the same tree.
    pub fn overlap(&self, other: &MlState) -> Result<C64> {
        if self.tree.hash() != other.tree.hash() {
            return Err(Error::Consistency("overlap between states on different trees".into()));
        }
        // bottom-up overlap matrices S^n_ab = ⟨φ_a|φ'_b⟩
        let mut s: Vec<Option<Array2<C64>>> = vec![None; self.tree.len()];
        for n in (0..self.tree.len()).rev() {
            if self.tree.node(n).is_leaf() {
                continue;
            }
            let dims = self.child_dims(n);
            let mut x = other.tensor(n).clone();
            for (k, &c) in self.tree.children(n).iter().enumerate() {
                if let Some(sc) = &s[c] {
                    x = mode_product(&x, &dims, k, sc.view());
                }
            }
            s[n] = Some(linalg::row_overlaps(self.tensor(n), &x));
        }
        Ok(s[0].as_ref().expect("root")[[0, 0]])
    }

    /// Hole density matrices `ρ^n_ab = ⟨g_a|g_b⟩` for every non-root node
    /// (leaves included), where `Ψ = Σ_a φ_a ⊗ g_a`.
    pub(crate) fn hole_densities(&self) -> Vec<Option<Array2<C64>>> {
        let mut rho: Vec<Option<Array2<C64>>> = vec![None; self.tree.len()];
        rho[0] = Some(linalg::identity(1));
        for p in self.tree.internal_nodes() {
            let a = self.tensor(p);
            let dims = self.child_dims(p);
            let z = rho[p].as_ref().expect("parent first").dot(a);
            for (k, &c) in self.tree.children(p).iter().enumerate() {
                rho[c] = Some(unfold_gram(a, &z, &dims, k));
            }
        }
        rho
    }

    /// Reduced density matrix of the sites below `node`, in that node's basis
    /// (`ρ[a, b] = ⟨φ_a|ρ_A|φ_b⟩`; for a leaf, the single-spin density matrix).
    pub fn node_density_matrix(&self, node: NodeId) -> Result<Array2<C64>> {
        if node == 0 {
            return Err(Error::Domain("the root density matrix is the scalar norm".into()));
        }
        if node >= self.tree.len() {
            return Err(Error::Domain(format!("no node {node}")));
        }
        let rho = self.hole_densities().swap_remove(node).expect("computed for all non-root nodes");
        Ok(rho.t().to_owned())
    }

    /// Rows of `node`'s functions expanded on its sites, `m × 2^|sites|`,
    /// with the node's leaves in preorder and the first most significant.
    pub(crate) fn expand(&self, node: NodeId) -> Array2<C64> {
        if self.tree.node(node).is_leaf() {
            return linalg::identity(2);
        }
        let mut x = self.tensor(node).clone();
        let mut dims = self.child_dims(node);
        for (k, &c) in self.tree.children(node).iter().enumerate() {
            let phi = self.expand(c);
            x = mode_product(&x, &dims, k, phi.t());
            dims[k] = phi.ncols();
        }
        x
    }

    /// Amplitudes in the spin basis, site 1 most significant and `↑` before `↓`.
    pub fn to_statevector(&self) -> Result<Array1<C64>> {
        let l = self.num_sites();
        if l > MAX_DENSE_SITES {
            return Err(Error::Capacity(format!(
                "a dense vector over {l} sites exceeds the {MAX_DENSE_SITES}-site limit"
            )));
        }
        let root = self.expand(0);
        let raw = root.row(0);
        let order = self.tree.leaf_order();
        if order.iter().enumerate().all(|(k, &s)| s == k + 1) {
            return Ok(raw.to_owned());
        }
        // bit position (from the most significant end) of each leaf in `raw`
        let shifts: Vec<usize> = order.iter().map(|&s| l - s).collect();
        let mut out = Array1::zeros(1 << l);
        for (idx, &amp) in raw.iter().enumerate() {
            let mut target = 0usize;
            for (pos, &sh) in shifts.iter().enumerate() {
                let bit = (idx >> (l - 1 - pos)) & 1;
                target |= bit << sh;
            }
            out[target] = amp;
        }
        Ok(out)
    }

    /// `⟨Ψ|H|Ψ⟩`; errors if the imaginary part exceeds 1e-10 for a Hermitian `H`.
    pub fn expectation(&self, h: &SumOfProducts) -> Result<f64> {
        let layout = Layout::new(&self.tree, h)?;
        let sweep = layout.upward(self);
        let e = layout.root_expectation(self, &sweep);
        let n = self.norm_sqr();
        if h.is_hermitian() && e.im.abs() > 1e-10 * n.max(1.0) * h.norm_estimate().max(1.0) {
            return Err(Error::Consistency(format!(
                "expectation of a Hermitian operator has imaginary part {:e}",
                e.im
            )));
        }
        Ok(e.re / n)
    }
}

fn gaussian(rng: &mut ChaCha20Rng) -> C64 {
    C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// A state with Gaussian random tensors, orthonormalized, deterministic in `seed`.
pub fn random_state(tree: &Arc<TreeSpec>, seed: u64) -> MlState {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let tensors = tree
        .nodes()
        .iter()
        .map(|n| {
            (!n.is_leaf()).then(|| {
                Array2::from_shape_fn((n.dim, tree.child_product(n.id)), |_| gaussian(&mut rng))
            })
        })
        .collect();
    let mut s = MlState { tree: Arc::clone(tree), tensors, step: 0 };
    for n in tree.internal_nodes().filter(|&n| n != 0) {
        orthonormalize_rows(s.tensor_mut(n));
    }
    s.normalize();
    s
}

/// Spinor `(cos θ/2, e^{iφ} sin θ/2)` pointing along the Bloch vector `d`.
pub fn bloch_spinor(d: [f64; 3]) -> [C64; 2] {
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let (x, y, z) = (d[0] / r, d[1] / r, d[2] / r);
    let theta = z.clamp(-1.0, 1.0).acos();
    let phi = y.atan2(x);
    [
        C64::new((theta / 2.0).cos(), 0.0),
        C64::from_polar((theta / 2.0).sin(), phi),
    ]
}

/// The product state with spin `i` along `directions[i-1]`. The first
/// function of every node is the product of its children's first functions
/// (or the site spinors); the remaining functions complete an orthonormal set.
pub fn product_state(tree: &Arc<TreeSpec>, directions: &[[f64; 3]]) -> Result<MlState> {
    if directions.len() != tree.num_sites() {
        return Err(Error::Consistency(format!(
            "{} directions for {} sites",
            directions.len(),
            tree.num_sites()
        )));
    }
    if let Some(d) = directions.iter().find(|d| !(d.iter().map(|x| x * x).sum::<f64>() > 0.0)) {
        return Err(Error::Domain(format!("direction {d:?} is not a nonzero vector")));
    }
    let mut tensors: Vec<Option<Array2<C64>>> = vec![None; tree.len()];
    for n in tree.internal_nodes() {
        let mut v = Array1::from_elem(1, C64::new(1.0, 0.0));
        for &c in tree.children(n) {
            let f: Vec<C64> = match tree.node(c).site() {
                Some(s) => bloch_spinor(directions[s - 1]).to_vec(),
                None => {
                    let mut e = vec![C64::new(0.0, 0.0); tree.dim(c)];
                    e[0] = C64::new(1.0, 0.0);
                    e
                }
            };
            let mut next = Array1::zeros(v.len() * f.len());
            for (i, vi) in v.iter().enumerate() {
                for (j, fj) in f.iter().enumerate() {
                    next[i * f.len() + j] = vi * fj;
                }
            }
            v = next;
        }
        let mut a = Array2::zeros((tree.dim(n), v.len()));
        a.row_mut(0).assign(&v);
        orthonormalize_rows(&mut a);
        tensors[n] = Some(a);
    }
    MlState::from_tensors(Arc::clone(tree), tensors)
}

#[cfg(test)]
mod tests;
