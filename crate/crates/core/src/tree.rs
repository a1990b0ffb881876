//! Tree topologies for the layered wavefunction.
//!
//! Nodes live in an arena in preorder, so the root is node 0 and every parent
//! precedes its children. Internal nodes carry `dim` single-particle functions
//! over the product space of their children; leaves are single spins with the
//! fixed primitive dimension 2.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const LEAF_DIM: usize = 2;

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Internal(Vec<NodeId>),
    Leaf(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub dim: usize,
    pub parent: Option<NodeId>,
}

impl TreeNode {
    pub fn children(&self) -> &[NodeId] {
        match &self.kind {
            NodeKind::Internal(c) => c,
            NodeKind::Leaf(_) => &[],
        }
    }

    pub fn site(&self) -> Option<usize> {
        match self.kind {
            NodeKind::Leaf(s) => Some(s),
            NodeKind::Internal(_) => None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf(_))
    }
}

/// Nested description used by the builders and the document parser before
/// the arena is laid out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreeShape {
    Leaf(usize),
    Node { m: usize, children: Vec<TreeShape> },
}

impl TreeShape {
    fn dim(&self) -> usize {
        match self {
            TreeShape::Leaf(_) => LEAF_DIM,
            TreeShape::Node { m, .. } => *m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeSpec {
    nodes: Vec<TreeNode>,
    num_sites: usize,
    /// Sites of each node's subtree, sorted.
    leaf_sets: Vec<Vec<usize>>,
    depth: Vec<usize>,
    /// Slot of each node within its parent's child list.
    slot: Vec<usize>,
    /// Sites in the order leaves appear in a preorder walk.
    leaf_order: Vec<usize>,
}

impl TreeSpec {
    /// Lays out a nested shape as an arena. The result is not validated;
    /// call [`validate`] or use one of the builders.
    pub fn from_shape(shape: &TreeShape) -> Self {
        let mut t = TreeSpec {
            nodes: Vec::new(),
            num_sites: 0,
            leaf_sets: Vec::new(),
            depth: Vec::new(),
            slot: Vec::new(),
            leaf_order: Vec::new(),
        };
        t.push(shape, None, 0, 0);
        t.num_sites = t.leaf_order.len();
        t
    }

    fn push(&mut self, shape: &TreeShape, parent: Option<NodeId>, depth: usize, slot: usize) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(TreeNode { id, kind: NodeKind::Leaf(0), dim: shape.dim(), parent });
        self.leaf_sets.push(Vec::new());
        self.depth.push(depth);
        self.slot.push(slot);
        match shape {
            TreeShape::Leaf(s) => {
                self.nodes[id].kind = NodeKind::Leaf(*s);
                self.leaf_sets[id] = vec![*s];
                self.leaf_order.push(*s);
            }
            TreeShape::Node { children, .. } => {
                let ids: Vec<_> = children
                    .iter()
                    .enumerate()
                    .map(|(k, c)| self.push(c, Some(id), depth + 1, k))
                    .collect();
                let mut sites: Vec<usize> =
                    ids.iter().flat_map(|&c| self.leaf_sets[c].iter().copied()).collect();
                sites.sort_unstable();
                self.leaf_sets[id] = sites;
                self.nodes[id].kind = NodeKind::Internal(ids);
            }
        }
        id
    }

    pub fn shape(&self) -> TreeShape {
        self.shape_of(0)
    }

    fn shape_of(&self, n: NodeId) -> TreeShape {
        match &self.nodes[n].kind {
            NodeKind::Leaf(s) => TreeShape::Leaf(*s),
            NodeKind::Internal(c) => TreeShape::Node {
                m: self.nodes[n].dim,
                children: c.iter().map(|&k| self.shape_of(k)).collect(),
            },
        }
    }

    pub const ROOT: NodeId = 0;

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn dim(&self, id: NodeId) -> usize {
        self.nodes[id].dim
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        self.nodes[id].children()
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn slot(&self, id: NodeId) -> usize {
        self.slot[id]
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.depth[id]
    }

    pub fn leaf_set(&self, id: NodeId) -> &[usize] {
        &self.leaf_sets[id]
    }

    /// Root, internal and leaf layers together.
    pub fn num_layers(&self) -> usize {
        self.depth.iter().max().map_or(0, |d| d + 1)
    }

    /// Ids of internal nodes, in preorder.
    pub fn internal_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| !n.is_leaf()).map(|n| n.id)
    }

    /// Sites in preorder leaf order.
    pub fn leaf_order(&self) -> &[usize] {
        &self.leaf_order
    }

    /// Leaf node carrying `site`.
    pub fn leaf_of_site(&self, site: usize) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.site() == Some(site)).map(|n| n.id)
    }

    /// Π dim(child), the column count of the node's coefficient matrix.
    pub fn child_product(&self, id: NodeId) -> usize {
        self.children(id).iter().map(|&c| self.dim(c)).product()
    }

    /// Number of coefficients at the root, i.e. the size of the top-layer
    /// eigenvalue problem.
    pub fn root_configurations(&self) -> usize {
        self.child_product(0)
    }

    /// Total number of complex coefficients over all internal nodes.
    pub fn num_parameters(&self) -> usize {
        self.internal_nodes().map(|n| self.dim(n) * self.child_product(n)).sum()
    }

    /// The node whose leaf set is exactly `sites` (sorted), if any.
    pub fn node_with_leaf_set(&self, sites: &[usize]) -> Option<NodeId> {
        self.leaf_sets.iter().position(|s| s == sites)
    }

    /// 64-bit FNV-1a hash of the canonical document; identifies the topology
    /// in checkpoints.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in serialize_tree(self).bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Every violated structural invariant, as human-readable text.
pub fn validate(spec: &TreeSpec) -> Vec<String> {
    let mut out = Vec::new();
    if spec.is_empty() {
        out.push("tree has no nodes".into());
        return out;
    }
    if spec.root().is_leaf() {
        out.push("root must be an internal node".into());
    } else if spec.root().dim != 1 {
        out.push(format!("root carries {} functions, expected 1", spec.root().dim));
    }
    for n in spec.nodes() {
        match &n.kind {
            NodeKind::Leaf(_) => {
                if n.dim != LEAF_DIM {
                    out.push(format!("leaf node {} has dim {}, expected {LEAF_DIM}", n.id, n.dim));
                }
            }
            NodeKind::Internal(c) => {
                if c.len() < 2 {
                    out.push(format!("node {} has {} child(ren), need at least 2", n.id, c.len()));
                }
                if n.dim == 0 {
                    out.push(format!("node {} has dim 0", n.id));
                }
                let cap = spec.child_product(n.id);
                if n.dim > cap {
                    out.push(format!(
                        "node {} is overcomplete: dim {} exceeds the product of child dims {cap}",
                        n.id, n.dim
                    ));
                }
            }
        }
    }
    let l = spec.num_sites();
    let mut seen = BTreeSet::new();
    for &s in spec.leaf_order() {
        if s == 0 || s > l {
            out.push(format!("leaf site {s} outside 1..={l}"));
        } else if !seen.insert(s) {
            out.push(format!("leaf site {s} appears more than once"));
        }
    }
    for s in 1..=l {
        if !seen.contains(&s) && !spec.leaf_order().iter().any(|&x| x == 0 || x > l) {
            out.push(format!("site {s} missing from the leaves"));
        }
    }
    out
}

fn checked(shape: TreeShape) -> Result<TreeSpec> {
    let spec = TreeSpec::from_shape(&shape);
    let diag = validate(&spec);
    if diag.is_empty() {
        Ok(spec)
    } else {
        Err(Error::Topology(diag.join("; ")))
    }
}

/// Fill `None` dims bottom-up with the full product of the children's dims.
fn finish(shape: Proto) -> TreeShape {
    match shape {
        Proto::Leaf(s) => TreeShape::Leaf(s),
        Proto::Node(m, children) => {
            let children: Vec<_> = children.into_iter().map(finish).collect();
            let full = children.iter().map(TreeShape::dim).product();
            TreeShape::Node { m: m.unwrap_or(full), children }
        }
    }
}

enum Proto {
    Leaf(usize),
    Node(Option<usize>, Vec<Proto>),
}

fn layer_dim(spf_per_layer: &[usize], depth: usize) -> Option<usize> {
    if depth == 0 {
        Some(1)
    } else {
        spf_per_layer.get(depth - 1).copied()
    }
}

/// Balanced binary tree over sites `1..=L` in order.
///
/// `spf_per_layer[0]` applies to the root's two children, `[1]` to the next
/// layer down, and so on. Layers without an entry get the full product of
/// their children's dims (no truncation).
pub fn binary_tree(l: usize, spf_per_layer: &[usize]) -> Result<TreeSpec> {
    if l < 2 || !l.is_power_of_two() {
        return Err(Error::Topology(format!("binary tree needs L = 2^k with k >= 1, got {l}")));
    }
    let depth = l.trailing_zeros() as usize;
    if spf_per_layer.len() > depth.saturating_sub(1) {
        return Err(Error::Topology(format!(
            "{} SPF layer entries given but L = {l} has only {} internal layers below the root",
            spf_per_layer.len(),
            depth - 1
        )));
    }
    fn build(lo: usize, len: usize, d: usize, spf: &[usize]) -> Proto {
        if len == 1 {
            return Proto::Leaf(lo);
        }
        let h = len / 2;
        Proto::Node(
            layer_dim(spf, d),
            vec![build(lo, h, d + 1, spf), build(lo + h, h, d + 1, spf)],
        )
    }
    checked(finish(build(1, l, 0, spf_per_layer)))
}

/// Tree for an `nx × ny` lattice with row-major site numbering: spins are
/// combined in triplets along x, then triplets of those along y, alternating
/// until one node remains. `spf_per_layer` is indexed top-down as in
/// [`binary_tree`].
pub fn grid_tree_2d(nx: usize, ny: usize, spf_per_layer: &[usize]) -> Result<TreeSpec> {
    let pow3 = |n: usize| {
        let mut k = n;
        while k > 1 && k % 3 == 0 {
            k /= 3;
        }
        n >= 3 && k == 1
    };
    if !pow3(nx) || !pow3(ny) {
        return Err(Error::Topology(format!(
            "grid tree needs both sides to be powers of 3 (>= 3), got {nx}x{ny}"
        )));
    }
    // bottom-up: a grid of blocks, each an unfinished subtree
    let mut blocks: Vec<Vec<Proto>> = (0..ny)
        .map(|y| (0..nx).map(|x| Proto::Leaf(crate::model::grid_site(nx, x, y))).collect())
        .collect();
    let mut along_x = true;
    let mut n_internal = 0;
    while blocks.len() > 1 || blocks[0].len() > 1 {
        let (w, h) = (blocks[0].len(), blocks.len());
        if (along_x && w > 1) || h == 1 {
            blocks = blocks
                .into_iter()
                .map(|row| {
                    let mut it = row.into_iter();
                    (0..w / 3)
                        .map(|_| Proto::Node(None, it.by_ref().take(3).collect()))
                        .collect()
                })
                .collect();
        } else {
            let mut rows = blocks.into_iter();
            let mut next = Vec::with_capacity(h / 3);
            for _ in 0..h / 3 {
                let r: Vec<Vec<Proto>> = rows.by_ref().take(3).collect();
                let mut cols: Vec<Vec<Proto>> = (0..w).map(|_| Vec::with_capacity(3)).collect();
                for row in r {
                    for (x, b) in row.into_iter().enumerate() {
                        cols[x].push(b);
                    }
                }
                next.push(cols.into_iter().map(|c| Proto::Node(None, c)).collect());
            }
            blocks = next;
        }
        n_internal += 1;
        along_x = !along_x;
    }
    if spf_per_layer.len() > n_internal - 1 {
        return Err(Error::Topology(format!(
            "{} SPF layer entries given but the {nx}x{ny} grid has only {} internal layers below the root",
            spf_per_layer.len(),
            n_internal - 1
        )));
    }
    fn assign(p: Proto, d: usize, spf: &[usize]) -> Proto {
        match p {
            Proto::Leaf(s) => Proto::Leaf(s),
            Proto::Node(_, c) => Proto::Node(
                layer_dim(spf, d),
                c.into_iter().map(|k| assign(k, d + 1, spf)).collect(),
            ),
        }
    }
    let root = blocks.pop().and_then(|mut r| r.pop()).expect("one block remains");
    checked(finish(assign(root, 0, spf_per_layer)))
}

/// Two-layer tree: the root over one node per group, each group node over its
/// sites. A group of one site is attached to the root as a bare leaf (its
/// `m` must be 2), and a single group covering every site becomes the root.
pub fn mode_combination_tree(l: usize, groups: &[Vec<usize>], m: &[usize]) -> Result<TreeSpec> {
    if groups.len() != m.len() {
        return Err(Error::Topology(format!("{} groups but {} SPF counts", groups.len(), m.len())));
    }
    let mut expect = 1;
    for g in groups {
        if g.is_empty() {
            return Err(Error::Topology("empty group".into()));
        }
        for &s in g {
            if s != expect {
                return Err(Error::Topology(format!(
                    "groups must be contiguous and cover 1..={l} in order; found site {s} where {expect} was expected"
                )));
            }
            expect += 1;
        }
    }
    if expect != l + 1 {
        return Err(Error::Topology(format!("groups cover 1..={} but L = {l}", expect - 1)));
    }
    if groups.len() == 1 {
        let leaves = groups[0].iter().map(|&s| TreeShape::Leaf(s)).collect();
        return checked(TreeShape::Node { m: 1, children: leaves });
    }
    let mut children = Vec::with_capacity(groups.len());
    for (g, &mg) in groups.iter().zip(m) {
        if g.len() == 1 {
            if mg != LEAF_DIM {
                return Err(Error::Topology(format!(
                    "single-site group {{{}}} must have m = {LEAF_DIM}, got {mg}",
                    g[0]
                )));
            }
            children.push(TreeShape::Leaf(g[0]));
        } else {
            let leaves = g.iter().map(|&s| TreeShape::Leaf(s)).collect();
            children.push(TreeShape::Node { m: mg, children: leaves });
        }
    }
    checked(TreeShape::Node { m: 1, children })
}

/// Canonical `.tree.json` text: nested `{"m", "children"}` / `{"site"}` objects.
pub fn serialize_tree(spec: &TreeSpec) -> String {
    fn emit(spec: &TreeSpec, n: NodeId, out: &mut String) {
        match &spec.node(n).kind {
            NodeKind::Leaf(s) => {
                let _ = write!(out, "{{\"site\":{s}}}");
            }
            NodeKind::Internal(c) => {
                let _ = write!(out, "{{\"m\":{},\"children\":[", spec.dim(n));
                for (k, &ch) in c.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    emit(spec, ch, out);
                }
                out.push_str("]}");
            }
        }
    }
    let mut out = String::new();
    emit(spec, 0, &mut out);
    out
}

fn parse_err(path: &str, message: impl Into<String>) -> Error {
    Error::Parse { location: path.to_string(), message: message.into() }
}

fn parse_node(v: &Value, path: &str) -> Result<TreeShape> {
    let obj: &Map<String, Value> =
        v.as_object().ok_or_else(|| parse_err(path, "expected an object"))?;
    let uint = |key: &str| -> Result<usize> {
        let x = &obj[key];
        x.as_u64()
            .map(|u| u as usize)
            .ok_or_else(|| parse_err(&format!("{path}.{key}"), format!("expected a non-negative integer, got {x}")))
    };
    if obj.contains_key("site") {
        if let Some(k) = obj.keys().find(|k| *k != "site") {
            return Err(parse_err(path, format!("unknown field `{k}` in leaf node")));
        }
        return Ok(TreeShape::Leaf(uint("site")?));
    }
    if let Some(k) = obj.keys().find(|k| *k != "m" && *k != "children") {
        return Err(parse_err(path, format!("unknown field `{k}`")));
    }
    if !obj.contains_key("m") {
        return Err(parse_err(path, "missing field `m`"));
    }
    let m = uint("m")?;
    let children = obj
        .get("children")
        .ok_or_else(|| parse_err(path, "missing field `children`"))?
        .as_array()
        .ok_or_else(|| parse_err(&format!("{path}.children"), "expected an array"))?
        .iter()
        .enumerate()
        .map(|(k, c)| parse_node(c, &format!("{path}.children[{k}]")))
        .collect::<Result<Vec<_>>>()?;
    Ok(TreeShape::Node { m, children })
}

/// Parses a tree document. Structural invariants are not checked here; run
/// [`validate`] on the result.
pub fn parse_tree(text: &str) -> Result<TreeSpec> {
    let v: Value = serde_json::from_str(text).map_err(|e| {
        parse_err(&format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    let shape = parse_node(&v, "$")?;
    if let TreeShape::Leaf(_) = shape {
        return Err(parse_err("$", "the document root must be an internal node"));
    }
    Ok(TreeSpec::from_shape(&shape))
}
