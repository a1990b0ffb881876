//! Aggregated operator bookkeeping for a Hamiltonian on a tree.
//!
//! Every term is split at the nodes it passes through. Below its lowest
//! common ancestor (LCA) a term *crosses* a node: part of its support lies in
//! the node's subtree and part outside. The inside part is the node's "key";
//! terms with equal keys share one upward matrix and one summed mean field.
//! At and above the LCA the term is part of the node's block Hamiltonian.
//!
//! For a node `n` with tensor `A` and hole functions `g_a`
//! (`Ψ = Σ_a φ_a ⊗ g_a`) the sweep provides
//!
//! * `up[n][q] = ⟨φ_a|h_q|φ_b⟩` for every key `q`,
//! * `block[n] = ⟨φ_a|H_n|φ_b⟩` for the terms inside the subtree,
//! * `rho[n] = ⟨g_a|g_b⟩` and `field[n][q] = Σ_r c_r ⟨g_a|h_r^out|g_b⟩`,
//!
//! from which the energy gradient with respect to `conj(A)` is
//! `ρ · H_loc A + Σ_q F_q · h_q A`.

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::{mode_product, row_overlaps, unfold_gram};
use crate::model::SumOfProducts;
use crate::tree::{NodeId, TreeSpec};
use crate::C64;

use super::MlState;

type Key = Vec<(usize, usize)>;

/// `Σ_w c_w · h_{w}` on slot `last`, after the fixed factors on other slots.
#[derive(Clone, Debug)]
struct Group {
    fixed: Vec<(usize, usize)>,
    last: usize,
    weights: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
struct GroupSet {
    groups: Vec<Group>,
    index: HashMap<(Vec<(usize, usize)>, usize), usize>,
}

impl GroupSet {
    fn new() -> Self {
        Self { groups: Vec::new(), index: HashMap::new() }
    }

    fn add(&mut self, mut parts: Vec<(usize, usize)>, coefficient: f64) {
        parts.sort_unstable();
        let (last, key) = parts.pop().expect("at least one factor");
        let g = *self.index.entry((parts.clone(), last)).or_insert_with(|| {
            self.groups.push(Group { fixed: parts, last, weights: Vec::new() });
            self.groups.len() - 1
        });
        let w = &mut self.groups[g].weights;
        match w.iter_mut().find(|(k, _)| *k == key) {
            Some((_, c)) => *c += coefficient,
            None => w.push((key, coefficient)),
        }
    }
}

/// Term bookkeeping for one Hamiltonian on one tree; independent of the
/// tensors, so it is built once per run.
#[derive(Clone, Debug)]
pub struct Layout {
    tree_hash: u64,
    constant: f64,
    ops: Vec<Array2<C64>>,
    keys: Vec<Vec<Key>>,
    key_index: Vec<HashMap<Key, usize>>,
    /// `[n][q]`: (slot, child key) for each child the key touches.
    key_parts: Vec<Vec<Vec<(usize, usize)>>>,
    /// `[leaf][q]`: interned operator.
    leaf_key_op: Vec<Vec<usize>>,
    leaf_local: Vec<Option<Array2<C64>>>,
    /// Terms whose LCA is the node, grouped by all but their last child slot.
    lca: Vec<GroupSet>,
    /// `[n][q]`: keys of the parent that restrict to `q` on `n`.
    parent_sources: Vec<Vec<Vec<usize>>>,
    /// `[n][q]`: terms with LCA at the parent, by their sibling factors.
    local_sources: Vec<Vec<GroupSet>>,
    /// Whether any term lies entirely inside the subtree.
    has_block: Vec<bool>,
}

/// Operator matrices for one set of tensors.
#[derive(Clone, Debug)]
pub struct Sweep {
    up: Vec<Vec<Array2<C64>>>,
    block: Vec<Option<Array2<C64>>>,
    lca_w: Vec<Vec<Array2<C64>>>,
    rho: Vec<Option<Array2<C64>>>,
    field: Vec<Vec<Array2<C64>>>,
    /// Mean field of the terms acting only outside the subtree.
    outer: Vec<Option<Array2<C64>>>,
}

impl Sweep {
    pub fn hole_density(&self, n: NodeId) -> Option<&Array2<C64>> {
        self.rho[n].as_ref()
    }

    pub fn block(&self, n: NodeId) -> Option<&Array2<C64>> {
        self.block[n].as_ref()
    }
}

impl Layout {
    pub fn new(tree: &TreeSpec, h: &SumOfProducts) -> Result<Self> {
        if h.num_sites() != tree.num_sites() {
            return Err(Error::Consistency(format!(
                "Hamiltonian on {} sites, tree on {}",
                h.num_sites(),
                tree.num_sites()
            )));
        }
        let nn = tree.len();
        let mut site_leaf = vec![usize::MAX; tree.num_sites() + 1];
        for n in tree.nodes() {
            if let Some(s) = n.site() {
                if s < site_leaf.len() {
                    site_leaf[s] = n.id;
                }
            }
        }
        let mut lay = Layout {
            tree_hash: tree.hash(),
            constant: 0.0,
            ops: Vec::new(),
            keys: vec![Vec::new(); nn],
            key_index: vec![HashMap::new(); nn],
            key_parts: vec![Vec::new(); nn],
            leaf_key_op: vec![Vec::new(); nn],
            leaf_local: vec![None; nn],
            lca: vec![GroupSet::new(); nn],
            parent_sources: vec![Vec::new(); nn],
            local_sources: vec![Vec::new(); nn],
            has_block: vec![false; nn],
        };
        let mut op_index: HashMap<[u64; 8], usize> = HashMap::new();

        for term in h.terms() {
            if term.factors.is_empty() {
                lay.constant += term.coefficient;
                continue;
            }
            // (leaf, op id) for each factor
            let mut support = Vec::with_capacity(term.factors.len());
            for (&s, op) in &term.factors {
                let leaf = site_leaf.get(s).copied().unwrap_or(usize::MAX);
                if leaf == usize::MAX {
                    return Err(Error::Consistency(format!("site {s} is not a leaf of the tree")));
                }
                let id = *op_index.entry(op.key()).or_insert_with(|| {
                    let m = op.matrix();
                    lay.ops.push(Array2::from_shape_fn((2, 2), |(i, j)| m[i][j]));
                    lay.ops.len() - 1
                });
                support.push((leaf, id));
            }
            let lca = lowest_common_ancestor(tree, support.iter().map(|&(l, _)| l));
            let mut a = Some(lca);
            while let Some(n) = a {
                lay.has_block[n] = true;
                a = tree.parent(n);
            }
            if support.len() == 1 {
                let (leaf, id) = support[0];
                let m = lay.ops[id].mapv(|x| x * term.coefficient);
                lay.leaf_local[leaf] = Some(match lay.leaf_local[leaf].take() {
                    Some(acc) => acc + m,
                    None => m,
                });
                continue;
            }
            let top = lay.register(tree, lca, &support);
            lay.lca[lca].add(top, term.coefficient);
            // sources for every crossing node below the LCA
            for &(leaf, _) in &support {
                let mut n = leaf;
                while let Some(p) = tree.parent(n) {
                    let q = lay.key_of(tree, n, &support);
                    let qi = lay.key_index[n][&q];
                    if p == lca {
                        let k = tree.slot(n);
                        let sibs: Vec<_> = lay
                            .split_children(tree, p, &support)
                            .into_iter()
                            .filter(|&(s, _)| s != k)
                            .collect();
                        let sources = &mut lay.local_sources[n];
                        if sources.len() <= qi {
                            sources.resize_with(qi + 1, GroupSet::new);
                        }
                        // each term is visited once per leaf; add it once per node
                        if leaf == first_leaf_below(tree, n, &support) {
                            sources[qi].add(sibs, term.coefficient);
                        }
                        break;
                    }
                    let qp = lay.key_index[p][&lay.key_of(tree, p, &support)];
                    let ps = &mut lay.parent_sources[n];
                    if ps.len() <= qi {
                        ps.resize_with(qi + 1, Vec::new);
                    }
                    if !ps[qi].contains(&qp) {
                        ps[qi].push(qp);
                    }
                    n = p;
                }
            }
        }
        for n in 0..nn {
            let nq = lay.keys[n].len();
            lay.parent_sources[n].resize_with(nq, Vec::new);
            lay.local_sources[n].resize_with(nq, GroupSet::new);
        }
        Ok(lay)
    }

    fn key_of(&self, tree: &TreeSpec, n: NodeId, support: &[(usize, usize)]) -> Key {
        let sites = tree.leaf_set(n);
        let mut k: Key = support
            .iter()
            .filter(|(leaf, _)| sites.binary_search(&tree.node(*leaf).site().unwrap()).is_ok())
            .map(|&(leaf, op)| (tree.node(leaf).site().unwrap(), op))
            .collect();
        k.sort_unstable();
        k
    }

    /// (slot, child key index) for each child of `n` touched by `support`;
    /// the child keys must already be registered.
    fn split_children(&self, tree: &TreeSpec, n: NodeId, support: &[(usize, usize)]) -> Vec<(usize, usize)> {
        tree.children(n)
            .iter()
            .enumerate()
            .filter_map(|(k, &c)| {
                let q = self.key_of(tree, c, support);
                (!q.is_empty()).then(|| (k, self.key_index[c][&q]))
            })
            .collect()
    }

    /// Registers the keys of a term on every crossing node below `lca` and
    /// returns the term's (slot, key) parts at `lca`.
    fn register(&mut self, tree: &TreeSpec, lca: NodeId, support: &[(usize, usize)]) -> Vec<(usize, usize)> {
        for &c in tree.children(lca) {
            self.register_below(tree, c, support);
        }
        self.split_children(tree, lca, support)
    }

    fn register_below(&mut self, tree: &TreeSpec, n: NodeId, support: &[(usize, usize)]) -> Option<usize> {
        let q = self.key_of(tree, n, support);
        if q.is_empty() {
            return None;
        }
        if let Some(&i) = self.key_index[n].get(&q) {
            return Some(i);
        }
        if let Some(site) = tree.node(n).site() {
            let op = support.iter().find(|(l, _)| tree.node(*l).site() == Some(site)).unwrap().1;
            self.leaf_key_op[n].push(op);
            self.key_parts[n].push(Vec::new());
        } else {
            let parts: Vec<_> = tree
                .children(n)
                .iter()
                .enumerate()
                .filter_map(|(k, &c)| self.register_below(tree, c, support).map(|qi| (k, qi)))
                .collect();
            self.key_parts[n].push(parts);
            self.leaf_key_op[n].push(usize::MAX);
        }
        let i = self.keys[n].len();
        self.keys[n].push(q.clone());
        self.key_index[n].insert(q, i);
        Some(i)
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn num_keys(&self, n: NodeId) -> usize {
        self.keys[n].len()
    }

    fn check(&self, state: &MlState) {
        debug_assert_eq!(self.tree_hash, state.tree().hash(), "layout built for another tree");
    }

    /// Applies the slot operators `parts` (child keys) to `v`, a tensor of `n`.
    fn lift(&self, sw: &Sweep, state: &MlState, n: NodeId, parts: &[(usize, usize)], v: &Array2<C64>, dims: &[usize]) -> Array2<C64> {
        let children = state.tree().children(n);
        let mut x: Option<Array2<C64>> = None;
        for &(k, q) in parts {
            let m = &sw.up[children[k]][q];
            x = Some(mode_product(x.as_ref().unwrap_or(v), dims, k, m.view()));
        }
        x.unwrap_or_else(|| v.clone())
    }

    fn apply_groups(&self, sw: &Sweep, state: &MlState, n: NodeId, groups: &[Group], ws: &[Array2<C64>], v: &Array2<C64>, dims: &[usize], acc: &mut Option<Array2<C64>>) {
        for (g, w) in groups.iter().zip(ws) {
            let x = mode_product(v, dims, g.last, w.view());
            let x = self.lift(sw, state, n, &g.fixed, &x, dims);
            add_into(acc, x);
        }
    }

    fn group_weights(&self, sw: &Sweep, state: &MlState, n: NodeId, groups: &[Group]) -> Vec<Array2<C64>> {
        let children = state.tree().children(n);
        groups
            .iter()
            .map(|g| {
                let c = children[g.last];
                let d = state.tree().dim(c);
                let mut w = Array2::<C64>::zeros((d, d));
                for &(q, coef) in &g.weights {
                    w.scaled_add(C64::new(coef, 0.0), &sw.up[c][q]);
                }
                w
            })
            .collect()
    }

    /// `H_n v` for the terms inside the subtree of `n`, without the constant.
    fn local_action(&self, sw: &Sweep, state: &MlState, n: NodeId, v: &Array2<C64>) -> Option<Array2<C64>> {
        let dims = state.child_dims(n);
        let mut acc = None;
        for (k, &c) in state.tree().children(n).iter().enumerate() {
            if let Some(b) = &sw.block[c] {
                add_into(&mut acc, mode_product(v, &dims, k, b.view()));
            }
        }
        self.apply_groups(sw, state, n, &self.lca[n].groups, &sw.lca_w[n], v, &dims, &mut acc);
        acc
    }

    /// Upward matrices and block Hamiltonians for the current tensors.
    pub fn upward(&self, state: &MlState) -> Sweep {
        self.check(state);
        let tree = state.tree();
        let nn = tree.len();
        let mut sw = Sweep {
            up: vec![Vec::new(); nn],
            block: vec![None; nn],
            lca_w: vec![Vec::new(); nn],
            rho: vec![None; nn],
            field: vec![Vec::new(); nn],
            outer: vec![None; nn],
        };
        for n in (0..nn).rev() {
            if tree.node(n).is_leaf() {
                sw.up[n] = self.leaf_key_op[n].iter().map(|&op| self.ops[op].clone()).collect();
                sw.block[n] = self.leaf_local[n].clone();
                continue;
            }
            let a = state.tensor(n);
            let dims = state.child_dims(n);
            let up: Vec<_> = self.key_parts[n]
                .iter()
                .map(|parts| row_overlaps(a, &self.lift(&sw, state, n, parts, a, &dims)))
                .collect();
            sw.up[n] = up;
            sw.lca_w[n] = self.group_weights(&sw, state, n, &self.lca[n].groups);
            if self.has_block[n] && n != 0 {
                sw.block[n] = self
                    .local_action(&sw, state, n, a)
                    .map(|y| row_overlaps(a, &y));
            }
        }
        sw
    }

    /// Hole densities and summed mean fields; needs the upward matrices.
    pub fn downward(&self, state: &MlState, sw: &mut Sweep) {
        self.downward_impl(state, sw, true);
    }

    /// Like [`Layout::downward`] but without the fields of terms acting only
    /// outside each subtree, which [`Layout::projected_gradient_source`] does
    /// not need.
    pub fn downward_projected(&self, state: &MlState, sw: &mut Sweep) {
        self.downward_impl(state, sw, false);
    }

    fn downward_impl(&self, state: &MlState, sw: &mut Sweep, with_outer: bool) {
        self.check(state);
        let tree = state.tree();
        sw.rho[0] = Some(crate::linalg::identity(1));
        for p in tree.internal_nodes() {
            let a = state.tensor(p);
            let dims = state.child_dims(p);
            let rho_p = sw.rho[p].clone().expect("parents first");
            let za = rho_p.dot(a);
            for (k, &c) in tree.children(p).iter().enumerate() {
                sw.rho[c] = Some(unfold_gram(a, &za, &dims, k));
                if tree.node(c).is_leaf() {
                    continue;
                }
                if with_outer {
                    sw.outer[c] = Some(self.outer_field(state, sw, p, k));
                }
                let mut fields = Vec::with_capacity(self.keys[c].len());
                for q in 0..self.keys[c].len() {
                    let mut z: Option<Array2<C64>> = None;
                    for &qp in &self.parent_sources[c][q] {
                        let parts: Vec<_> =
                            self.key_parts[p][qp].iter().copied().filter(|&(s, _)| s != k).collect();
                        let x = self.lift(sw, state, p, &parts, a, &dims);
                        add_into(&mut z, sw.field[p][qp].dot(&x));
                    }
                    let local = &self.local_sources[c][q].groups;
                    if !local.is_empty() {
                        let ws = self.group_weights(sw, state, p, local);
                        let mut y = None;
                        self.apply_groups(sw, state, p, local, &ws, a, &dims, &mut y);
                        add_into(&mut z, rho_p.dot(&y.expect("nonempty")));
                    }
                    let z = z.expect("every key has a source");
                    fields.push(unfold_gram(a, &z, &dims, k));
                }
                sw.field[c] = fields;
            }
        }
    }

    /// `⟨g_a|H_out|g_b⟩` for child slot `k` of `p`, where `H_out` collects
    /// the terms that do not touch the child's subtree.
    fn outer_field(&self, state: &MlState, sw: &Sweep, p: NodeId, k: usize) -> Array2<C64> {
        let a = state.tensor(p);
        let dims = state.child_dims(p);
        let mut y: Option<Array2<C64>> = None;
        for (s, &c) in state.tree().children(p).iter().enumerate() {
            if s != k {
                if let Some(b) = &sw.block[c] {
                    add_into(&mut y, mode_product(a, &dims, s, b.view()));
                }
            }
        }
        let (groups, ws): (Vec<_>, Vec<_>) = self.lca[p]
            .groups
            .iter()
            .zip(&sw.lca_w[p])
            .filter(|(g, _)| g.last != k && g.fixed.iter().all(|&(s, _)| s != k))
            .map(|(g, w)| (g.clone(), w.clone()))
            .unzip();
        self.apply_groups(sw, state, p, &groups, &ws, a, &dims, &mut y);
        let mut z = match y {
            Some(y) => sw.rho[p].as_ref().expect("parents first").dot(&y),
            None => Array2::zeros(a.dim()),
        };
        if let Some(f) = &sw.outer[p] {
            z = z + f.dot(a);
        }
        // terms reaching past the parent through a sibling only
        for (q, parts) in self.key_parts[p].iter().enumerate() {
            if parts.iter().all(|&(s, _)| s != k) {
                z = z + sw.field[p][q].dot(&self.lift(sw, state, p, parts, a, &dims));
            }
        }
        unfold_gram(a, &z, &dims, k)
    }

    /// `Σ_r c_r ⟨Ψ|h_r|Ψ⟩` from the root block (not normalized).
    pub fn root_expectation(&self, state: &MlState, sw: &Sweep) -> C64 {
        let a = state.tensor(0);
        let y = self.apply_root(state, sw, a);
        crate::linalg::dot(a.as_slice().unwrap(), y.as_slice().unwrap())
    }

    /// Effective Hamiltonian on the root coefficients, applied to `v` (a
    /// `1 × K` row).
    pub fn apply_root(&self, state: &MlState, sw: &Sweep, v: &Array2<C64>) -> Array2<C64> {
        let mut y = self.local_action(sw, state, 0, v).unwrap_or_else(|| Array2::zeros(v.dim()));
        if self.constant != 0.0 {
            y.scaled_add(C64::new(self.constant, 0.0), v);
        }
        y
    }

    /// Gradient of `⟨Ψ|H|Ψ⟩` with respect to `conj(A_n)` for a non-root node,
    /// leaving out the terms acting only outside the subtree. Those only
    /// contribute within the span of the current rows.
    pub fn projected_gradient_source(&self, state: &MlState, sw: &Sweep, n: NodeId) -> Array2<C64> {
        let a = state.tensor(n);
        let dims = state.child_dims(n);
        let rho = sw.rho[n].as_ref().expect("downward pass done");
        let mut y = self.local_action(sw, state, n, a).unwrap_or_else(|| Array2::zeros(a.dim()));
        if self.constant != 0.0 {
            y.scaled_add(C64::new(self.constant, 0.0), a);
        }
        let mut g = rho.dot(&y);
        for (q, parts) in self.key_parts[n].iter().enumerate() {
            let x = self.lift(sw, state, n, parts, a, &dims);
            g = g + sw.field[n][q].dot(&x);
        }
        g
    }

    /// Full gradient of `⟨Ψ|H|Ψ⟩` with respect to `conj(A_n)`, non-root `n`.
    pub fn gradient(&self, state: &MlState, sw: &Sweep, n: NodeId) -> Array2<C64> {
        let g = self.projected_gradient_source(state, sw, n);
        match &sw.outer[n] {
            Some(f) => g + f.dot(state.tensor(n)),
            None => g,
        }
    }

    /// `⟨A_n, G_n⟩`; equals the root expectation for any node.
    pub fn node_expectation(&self, state: &MlState, sw: &Sweep, n: NodeId) -> C64 {
        if n == 0 {
            return self.root_expectation(state, sw);
        }
        let g = self.gradient(state, sw, n);
        let a = state.tensor(n);
        a.iter().zip(g.iter()).map(|(x, y)| x.conj() * y).sum()
    }
}

fn add_into(acc: &mut Option<Array2<C64>>, x: Array2<C64>) {
    match acc {
        Some(a) => *a += &x,
        None => *acc = Some(x),
    }
}

fn lowest_common_ancestor(tree: &TreeSpec, mut leaves: impl Iterator<Item = NodeId>) -> NodeId {
    let path = |mut n: NodeId| {
        let mut p = vec![n];
        while let Some(q) = tree.parent(n) {
            p.push(q);
            n = q;
        }
        p.reverse();
        p
    };
    let mut common = path(leaves.next().expect("nonempty support"));
    for l in leaves {
        let other = path(l);
        let k = common.iter().zip(&other).take_while(|(a, b)| a == b).count();
        common.truncate(k);
    }
    *common.last().expect("root is common")
}

/// The support leaf with the smallest id under `n`, used to visit each
/// (term, node) pair once.
fn first_leaf_below(tree: &TreeSpec, n: NodeId, support: &[(usize, usize)]) -> NodeId {
    let sites = tree.leaf_set(n);
    support
        .iter()
        .map(|&(l, _)| l)
        .filter(|&l| sites.binary_search(&tree.node(l).site().unwrap()).is_ok())
        .min()
        .expect("node on a support path")
}
