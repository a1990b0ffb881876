//! Exact diagonalization on the full `2^L` spin space without building the
//! Hamiltonian matrix.
//!
//! Basis index bit `L - s` holds site `s` (site 1 most significant) and a set
//! bit means spin down. Each product term splits into pieces that flip a fixed
//! set of spins; pieces with the same flip mask and support are merged into
//! one lookup table over the support bits.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::{lowest_eigenpairs, LanczosConfig};
use crate::linalg::{dot, herm_eig, norm};
use crate::model::SumOfProducts;
use crate::observables::{evaluate, ObservableReport, ObservableRequests};
use crate::state::checkpoint::{read_complex, read_header_line, write_complex};
use crate::C64;

pub const MAX_ED_SITES: usize = 20;
/// Largest system for which a dense matrix is ever materialized.
pub const MAX_DENSE_MATRIX_SITES: usize = 12;
/// Longest term support the kernel tables accept.
const MAX_TERM_SUPPORT: usize = 8;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone)]
struct FlipGroup {
    flip: usize,
    /// Bit positions of the support, lowest table bit first.
    bits: Vec<u32>,
    table: Vec<C64>,
}

/// A Hamiltonian compiled into a diagonal plus flip-mask groups.
#[derive(Debug, Clone)]
pub struct EdOperator {
    num_sites: usize,
    diagonal: Vec<C64>,
    groups: Vec<FlipGroup>,
    norm_estimate: f64,
}

impl EdOperator {
    pub fn new(h: &SumOfProducts) -> Result<Self> {
        let l = h.num_sites();
        if l > MAX_ED_SITES {
            return Err(Error::Capacity(format!(
                "exact diagonalization is limited to {MAX_ED_SITES} sites, got {l}"
            )));
        }
        let dim = 1usize << l;
        let mut merged: BTreeMap<(usize, Vec<u32>), Vec<C64>> = BTreeMap::new();
        for t in h.terms() {
            let sites: Vec<usize> = t.support().collect();
            let k = sites.len();
            if k > MAX_TERM_SUPPORT {
                return Err(Error::Capacity(format!("term `{t}` acts on {k} sites, at most {MAX_TERM_SUPPORT} supported")));
            }
            let bits: Vec<u32> = sites.iter().map(|&s| (l - s) as u32).collect();
            let mats: Vec<_> = sites.iter().map(|s| t.factors[s].matrix()).collect();
            for f in 0..1usize << k {
                let table: Vec<C64> = (0..1usize << k)
                    .map(|c| {
                        let mut amp = C64::new(t.coefficient, 0.0);
                        for (i, m) in mats.iter().enumerate() {
                            let col = (c >> i) & 1;
                            amp *= m[col ^ ((f >> i) & 1)][col];
                        }
                        amp
                    })
                    .collect();
                if table.iter().all(|z| *z == ZERO) {
                    continue;
                }
                let flip = (0..k).filter(|i| (f >> i) & 1 == 1).fold(0usize, |acc, i| acc | 1 << bits[i]);
                let entry = merged.entry((flip, bits.clone())).or_insert_with(|| vec![ZERO; 1 << k]);
                for (e, x) in entry.iter_mut().zip(&table) {
                    *e += x;
                }
            }
        }
        let mut diagonal = vec![ZERO; dim];
        let mut groups = Vec::new();
        for ((flip, bits), table) in merged {
            if flip == 0 {
                for (b, d) in diagonal.iter_mut().enumerate() {
                    *d += table[extract(b, &bits)];
                }
            } else {
                groups.push(FlipGroup { flip, bits, table });
            }
        }
        Ok(Self { num_sites: l, diagonal, groups, norm_estimate: h.norm_estimate() })
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn norm_estimate(&self) -> f64 {
        self.norm_estimate
    }

    /// `y = H x`.
    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        for ((yb, xb), d) in y.iter_mut().zip(x).zip(&self.diagonal) {
            *yb = d * xb;
        }
        for g in &self.groups {
            for (b, xb) in x.iter().enumerate() {
                let a = g.table[extract(b, &g.bits)];
                if a != ZERO {
                    y[b ^ g.flip] += a * xb;
                }
            }
        }
    }

    pub fn expectation(&self, v: &[C64]) -> C64 {
        let mut hv = vec![ZERO; v.len()];
        self.apply(v, &mut hv);
        dot(v, &hv)
    }
}

#[inline]
fn extract(b: usize, bits: &[u32]) -> usize {
    bits.iter().enumerate().fold(0, |acc, (i, &p)| acc | ((b >> p) & 1) << i)
}

pub fn apply_hamiltonian(h: &SumOfProducts, v: &[C64]) -> Result<Vec<C64>> {
    let op = EdOperator::new(h)?;
    if v.len() != op.dim() {
        return Err(Error::Domain(format!("vector of length {} for a {}-site operator", v.len(), op.num_sites)));
    }
    let mut y = vec![ZERO; v.len()];
    op.apply(v, &mut y);
    Ok(y)
}

/// The full matrix, column `j` being `H e_j`.
pub fn dense_matrix(h: &SumOfProducts) -> Result<Array2<C64>> {
    let l = h.num_sites();
    if l > MAX_DENSE_MATRIX_SITES {
        return Err(Error::Capacity(format!("dense matrices are limited to {MAX_DENSE_MATRIX_SITES} sites, got {l}")));
    }
    let op = EdOperator::new(h)?;
    let dim = op.dim();
    let mut m = Array2::zeros((dim, dim));
    let mut e = vec![ZERO; dim];
    let mut col = vec![ZERO; dim];
    for j in 0..dim {
        e[j] = C64::new(1.0, 0.0);
        op.apply(&e, &mut col);
        e[j] = ZERO;
        m.column_mut(j).assign(&Array1::from(col.clone()));
    }
    Ok(m)
}

/// A normalized state on the full spin space.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    num_sites: usize,
    amplitudes: Vec<C64>,
}

impl DenseState {
    pub fn new(num_sites: usize, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != 1usize << num_sites {
            return Err(Error::Domain(format!(
                "{} amplitudes do not describe {num_sites} spins",
                amplitudes.len()
            )));
        }
        Ok(Self { num_sites, amplitudes })
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }

    pub fn expectation(&self, h: &SumOfProducts) -> Result<f64> {
        if h.num_sites() != self.num_sites {
            return Err(Error::Consistency(format!(
                "{}-site operator on a {}-site state",
                h.num_sites(),
                self.num_sites
            )));
        }
        let op = EdOperator::new(h)?;
        let n2 = dot(&self.amplitudes, &self.amplitudes).re;
        Ok(op.expectation(&self.amplitudes).re / n2)
    }

    /// Spectrum of the reduced density matrix of the leftmost `ls` sites.
    pub fn left_block_spectrum(&self, ls: usize) -> Result<Vec<f64>> {
        let l = self.num_sites;
        if ls == 0 || ls >= l {
            return Err(Error::Domain(format!("block size {ls} outside 1..{l}")));
        }
        let rows = 1usize << ls;
        let cols = 1usize << (l - ls);
        let m = Array2::from_shape_vec((rows, cols), self.amplitudes.clone()).expect("2^L amplitudes");
        let n2 = dot(&self.amplitudes, &self.amplitudes).re;
        let gram = if rows <= cols {
            m.dot(&m.t().mapv(|z| z.conj()))
        } else {
            m.t().mapv(|z| z.conj()).dot(&m)
        };
        let (vals, _) = herm_eig(&gram);
        Ok(vals.into_iter().map(|v| v / n2).collect())
    }
}

/// An exact eigenstate together with the run that produced it.
#[derive(Clone, Debug)]
pub struct DenseGroundState {
    pub energy: f64,
    pub state: DenseState,
    pub residual: f64,
    /// Another returned level lies within the degeneracy window.
    pub degenerate: bool,
    pub model: String,
    pub seed: Option<u64>,
}

impl DenseGroundState {
    pub fn num_sites(&self) -> usize {
        self.state.num_sites
    }

    pub fn vector(&self) -> &[C64] {
        &self.state.amplitudes
    }
}

/// Relative window, scaled by the norm estimate, inside which levels count as
/// degenerate.
pub const DEGENERACY_WINDOW: f64 = 1e-10;

/// Index of the degenerate cluster of each (ascending) energy.
pub fn degeneracy_clusters(energies: &[f64], scale: f64) -> Vec<usize> {
    let mut out = Vec::with_capacity(energies.len());
    let mut cluster = 0;
    for (i, e) in energies.iter().enumerate() {
        if i > 0 && (e - energies[i - 1]).abs() > DEGENERACY_WINDOW * scale {
            cluster += 1;
        }
        out.push(cluster);
    }
    out
}

/// The `k` lowest eigenstates, energies ascending.
pub fn ed_ground_state(h: &SumOfProducts, k: usize) -> Result<Vec<DenseGroundState>> {
    ed_ground_state_with(h, k, &LanczosConfig::default(), None)
}

/// Like [`ed_ground_state`] with explicit solver settings and an optional
/// start vector.
pub fn ed_ground_state_with(
    h: &SumOfProducts,
    k: usize,
    cfg: &LanczosConfig,
    start: Option<&[C64]>,
) -> Result<Vec<DenseGroundState>> {
    if k == 0 {
        return Err(Error::Domain("asked for zero eigenstates".into()));
    }
    let op = EdOperator::new(h)?;
    let out = lowest_eigenpairs(|x: &[C64], y: &mut [C64]| op.apply(x, y), op.dim(), k, cfg, start)?;
    let scale = op.norm_estimate().max(f64::MIN_POSITIVE);
    let worst = out.pairs.iter().map(|p| p.residual).fold(0.0f64, f64::max);
    if worst > 1e-10 * scale {
        return Err(Error::NonConvergence {
            message: format!("eigenpair residual above 1e-10 x {scale:.3e}"),
            residual: worst,
        });
    }
    let energies: Vec<f64> = out.pairs.iter().map(|p| p.value).collect();
    let clusters = degeneracy_clusters(&energies, scale);
    let seed = h.spec().and_then(|s| s.seed());
    Ok(out
        .pairs
        .into_iter()
        .enumerate()
        .map(|(i, p)| DenseGroundState {
            energy: p.value,
            state: DenseState { num_sites: op.num_sites, amplitudes: p.vector },
            residual: p.residual,
            degenerate: clusters.iter().filter(|&&c| c == clusters[i]).count() > 1,
            model: h.name().to_string(),
            seed,
        })
        .collect())
}

/// Observables of an exact state, computed by the same routines as for tree
/// states.
pub fn ed_observables(gs: &DenseGroundState, req: &ObservableRequests) -> Result<ObservableReport> {
    evaluate(&gs.state, req)
}

const ED_MAGIC: &str = "spinml-edstate 1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdHeader {
    model: String,
    seed: Option<u64>,
    #[serde(rename = "L")]
    num_sites: usize,
    energy: f64,
    residual: f64,
    degenerate: bool,
}

/// Writes an `.edstate` dump: magic line, JSON header line, then the
/// amplitudes as little-endian `f64` pairs (re, im).
pub fn write_edstate(gs: &DenseGroundState, w: &mut impl Write) -> Result<()> {
    let header = EdHeader {
        model: gs.model.clone(),
        seed: gs.seed,
        num_sites: gs.num_sites(),
        energy: gs.energy,
        residual: gs.residual,
        degenerate: gs.degenerate,
    };
    writeln!(w, "{ED_MAGIC}")?;
    writeln!(w, "{}", serde_json::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?)?;
    write_complex(w, gs.vector().iter().copied())
}

pub fn read_edstate(r: &mut impl BufRead) -> Result<DenseGroundState> {
    let header: EdHeader = read_header_line(r, ED_MAGIC)?;
    if header.num_sites > MAX_ED_SITES {
        return Err(Error::Checkpoint(format!("{} sites exceeds the {MAX_ED_SITES}-site limit", header.num_sites)));
    }
    let amplitudes = read_complex(r, 1usize << header.num_sites)?;
    Ok(DenseGroundState {
        energy: header.energy,
        state: DenseState { num_sites: header.num_sites, amplitudes },
        residual: header.residual,
        degenerate: header.degenerate,
        model: header.model,
        seed: header.seed,
    })
}
