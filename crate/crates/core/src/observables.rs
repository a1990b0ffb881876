//! Energies, connected correlations and entanglement entropies of a state,
//! evaluated the same way for tree states and dense vectors.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{entropy_of_spectrum, herm_eig};
use crate::model::{ProductTerm, SiteOperator, SumOfProducts};
use crate::oracle::DenseState;
use crate::state::MlState;

/// Eigenvalues at or below this are left out of entropy sums.
pub const ENTROPY_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn operator(self) -> SiteOperator {
        match self {
            Axis::X => SiteOperator::X,
            Axis::Y => SiteOperator::Y,
            Axis::Z => SiteOperator::Z,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::Domain(format!("unknown spin axis `{other}`"))),
        }
    }
}

/// What observables need from a state.
pub trait SpinState {
    fn num_sites(&self) -> usize;
    /// Normalized `⟨H⟩`.
    fn expect(&self, h: &SumOfProducts) -> Result<f64>;
    /// Eigenvalues of the reduced density matrix of sites `1..=ls`.
    fn left_block_spectrum(&self, ls: usize) -> Result<Vec<f64>>;
}

impl SpinState for DenseState {
    fn num_sites(&self) -> usize {
        DenseState::num_sites(self)
    }

    fn expect(&self, h: &SumOfProducts) -> Result<f64> {
        self.expectation(h)
    }

    fn left_block_spectrum(&self, ls: usize) -> Result<Vec<f64>> {
        DenseState::left_block_spectrum(self, ls)
    }
}

impl SpinState for MlState {
    fn num_sites(&self) -> usize {
        MlState::num_sites(self)
    }

    fn expect(&self, h: &SumOfProducts) -> Result<f64> {
        self.expectation(h)
    }

    fn left_block_spectrum(&self, ls: usize) -> Result<Vec<f64>> {
        let l = MlState::num_sites(self);
        check_cut(ls, l)?;
        match tree_edge(self, ls) {
            Some(node) => Ok(herm_eig(&self.node_density_matrix(node)?).0),
            None => self.dense_left_block_spectrum(ls),
        }
    }
}

fn check_cut(ls: usize, l: usize) -> Result<()> {
    if ls == 0 || ls >= l {
        return Err(Error::Domain(format!("block size {ls} outside 1..{l}")));
    }
    Ok(())
}

/// A non-root node whose leaves are exactly `1..=ls` or `ls+1..=L`.
fn tree_edge(state: &MlState, ls: usize) -> Option<usize> {
    let tree = state.tree();
    let l = tree.num_sites();
    let left: Vec<usize> = (1..=ls).collect();
    let right: Vec<usize> = (ls + 1..=l).collect();
    tree.node_with_leaf_set(&left)
        .or_else(|| tree.node_with_leaf_set(&right))
        .filter(|&n| n != 0)
}

impl MlState {
    /// Block spectrum through the dense vector, bypassing any tree edge.
    pub fn dense_left_block_spectrum(&self, ls: usize) -> Result<Vec<f64>> {
        let v = self.to_statevector()?;
        DenseState::new(MlState::num_sites(self), v.to_vec())?.left_block_spectrum(ls)
    }
}

fn pair_term(axis: Axis, i: usize, j: usize) -> ProductTerm {
    ProductTerm::new(1.0, [(i, axis.operator()), (j, axis.operator())])
}

fn single(l: usize, axis: Axis, i: usize) -> Result<SumOfProducts> {
    SumOfProducts::new(l, vec![ProductTerm::new(1.0, [(i, axis.operator())])])
}

/// `⟨σ_i^β⟩` for every site.
pub fn magnetization<S: SpinState + ?Sized>(state: &S, axis: Axis) -> Result<Vec<f64>> {
    let l = state.num_sites();
    (1..=l).map(|i| state.expect(&single(l, axis, i)?)).collect()
}

/// `⟨σ_i^β σ_j^β⟩ - ⟨σ_i^β⟩⟨σ_j^β⟩`.
pub fn connected_correlation<S: SpinState + ?Sized>(state: &S, axis: Axis, i: usize, j: usize) -> Result<f64> {
    let l = state.num_sites();
    if !(1 <= i && i < j && j <= l) {
        return Err(Error::Domain(format!("need 1 <= i < j <= {l}, got i={i}, j={j}")));
    }
    let both = state.expect(&SumOfProducts::new(l, vec![pair_term(axis, i, j)])?)?;
    let si = state.expect(&single(l, axis, i)?)?;
    let sj = state.expect(&single(l, axis, j)?)?;
    Ok(both - si * sj)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub axis: Axis,
    /// `(i, j, C(i, j))` with `i < j`.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Mean over pairs at separation `r`, index `r - 1`; present when every
    /// pair was evaluated.
    pub profile: Option<Vec<f64>>,
}

impl CorrelationResult {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.pairs.iter().find(|p| p.0 == i && p.1 == j).map(|p| p.2)
    }
}

/// `C(first, j)` for every `j > first`.
pub fn correlation_row<S: SpinState + ?Sized>(state: &S, axis: Axis, first: usize) -> Result<CorrelationResult> {
    let l = state.num_sites();
    if first == 0 || first >= l {
        return Err(Error::Domain(format!("reference site {first} outside 1..{l}")));
    }
    let m = magnetization(state, axis)?;
    let mut pairs = Vec::with_capacity(l - first);
    for j in first + 1..=l {
        let both = state.expect(&SumOfProducts::new(l, vec![pair_term(axis, first, j)])?)?;
        pairs.push((first, j, both - m[first - 1] * m[j - 1]));
    }
    Ok(CorrelationResult { axis, pairs, profile: None })
}

/// Every pair, with the distance profile.
pub fn all_correlations<S: SpinState + ?Sized>(state: &S, axis: Axis, magnitude: bool) -> Result<CorrelationResult> {
    let l = state.num_sites();
    let m = magnetization(state, axis)?;
    let mut pairs = Vec::with_capacity(l * (l - 1) / 2);
    for i in 1..=l {
        for j in i + 1..=l {
            let both = state.expect(&SumOfProducts::new(l, vec![pair_term(axis, i, j)])?)?;
            pairs.push((i, j, both - m[i - 1] * m[j - 1]));
        }
    }
    let profile = distance_profile(l, &pairs, magnitude);
    Ok(CorrelationResult { axis, pairs, profile: Some(profile) })
}

fn distance_profile(l: usize, pairs: &[(usize, usize, f64)], magnitude: bool) -> Vec<f64> {
    let mut sum = vec![0.0; l.saturating_sub(1)];
    let mut count = vec![0usize; l.saturating_sub(1)];
    for &(i, j, c) in pairs {
        sum[j - i - 1] += if magnitude { c.abs() } else { c };
        count[j - i - 1] += 1;
    }
    sum.iter().zip(&count).map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 }).collect()
}

/// Mean of `C(i, i + r)` over all `i` and all states; `magnitude` averages
/// `|C|` instead of the signed value.
pub fn averaged_correlation<S: SpinState>(states: &[S], axis: Axis, r: usize, magnitude: bool) -> Result<f64> {
    Ok(averaged_profile(states, axis, magnitude)?[r_index(states, r)?])
}

fn r_index<S: SpinState>(states: &[S], r: usize) -> Result<usize> {
    let l = states.first().map_or(0, SpinState::num_sites);
    if r == 0 || r >= l {
        return Err(Error::Domain(format!("separation {r} outside 1..{l}")));
    }
    Ok(r - 1)
}

/// [`averaged_correlation`] for every separation `r = 1..L-1`.
pub fn averaged_profile<S: SpinState>(states: &[S], axis: Axis, magnitude: bool) -> Result<Vec<f64>> {
    let first = states.first().ok_or_else(|| Error::Domain("empty ensemble".into()))?;
    let l = first.num_sites();
    if states.iter().any(|s| s.num_sites() != l) {
        return Err(Error::Domain("ensemble members differ in size".into()));
    }
    let profiles = states
        .iter()
        .map(|s| all_correlations(s, axis, magnitude).map(|c| c.profile.expect("all pairs")))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_profiles(&profiles))
}

/// Element-wise mean of equally long profiles.
pub fn mean_profiles(profiles: &[Vec<f64>]) -> Vec<f64> {
    let n = profiles.len().max(1) as f64;
    let len = profiles.first().map_or(0, Vec::len);
    (0..len).map(|k| profiles.iter().map(|p| p[k]).sum::<f64>() / n).collect()
}

/// Von Neumann entropy (natural log) of the leftmost `ls` spins.
pub fn vnee<S: SpinState + ?Sized>(state: &S, ls: usize) -> Result<f64> {
    check_cut(ls, state.num_sites())?;
    Ok(entropy_of_spectrum(&state.left_block_spectrum(ls)?, ENTROPY_FLOOR))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    /// Entry `k` is the entropy of the leftmost `k + 1` spins.
    pub values: Vec<f64>,
}

pub fn entropy_profile<S: SpinState + ?Sized>(state: &S) -> Result<EntropyProfile> {
    let l = state.num_sites();
    Ok(EntropyProfile { values: (1..l).map(|ls| vnee(state, ls)).collect::<Result<_>>()? })
}

/// `|E / E_ref - 1|`.
pub fn relative_error(e: f64, e_ref: f64) -> Result<f64> {
    if e_ref == 0.0 {
        return Err(Error::Domain("relative error against a zero reference".into()));
    }
    Ok((e / e_ref - 1.0).abs())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservableRequests {
    /// Axes for all-pairs correlations.
    pub correlations: Vec<Axis>,
    /// Axes for `C(1, j)` rows only (cheap at large L).
    pub first_site_correlations: Vec<Axis>,
    pub entropy: bool,
    /// Average `|C|` instead of `C` in distance profiles.
    pub magnitude: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservableReport {
    pub correlations: Vec<CorrelationResult>,
    pub entropy: Option<EntropyProfile>,
}

pub fn evaluate<S: SpinState + ?Sized>(state: &S, req: &ObservableRequests) -> Result<ObservableReport> {
    let mut correlations = Vec::new();
    for &axis in &req.correlations {
        correlations.push(all_correlations(state, axis, req.magnitude)?);
    }
    for &axis in &req.first_site_correlations {
        if !req.correlations.contains(&axis) {
            correlations.push(correlation_row(state, axis, 1)?);
        }
    }
    let entropy = if req.entropy { Some(entropy_profile(state)?) } else { None };
    Ok(ObservableReport { correlations, entropy })
}

pub fn write_correlations_csv(w: &mut impl Write, results: &[CorrelationResult]) -> Result<()> {
    writeln!(w, "axis,i,j,r,value")?;
    for c in results {
        for &(i, j, v) in &c.pairs {
            writeln!(w, "{},{i},{j},{},{v:.16e}", c.axis.label(), j - i)?;
        }
    }
    Ok(())
}

pub fn write_entropy_csv(w: &mut impl Write, profile: &EntropyProfile) -> Result<()> {
    writeln!(w, "l_s,s_vn")?;
    for (k, s) in profile.values.iter().enumerate() {
        writeln!(w, "{},{s:.16e}", k + 1)?;
    }
    Ok(())
}

/// Run summary written as JSON next to the CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: String,
    pub seeds: Vec<u64>,
    #[serde(rename = "E0")]
    pub e0: f64,
    #[serde(rename = "E0_per_spin")]
    pub e0_per_spin: f64,
    pub delta_e_rel: Option<f64>,
    pub entropy_profile: Option<Vec<f64>>,
    pub correlation_profile: Option<Vec<f64>>,
    /// No exact reference exists for this run.
    #[serde(default)]
    pub unverified: bool,
}

/// Bloch vector `(⟨σ^x⟩, ⟨σ^y⟩, ⟨σ^z⟩)` of one site.
pub fn bloch_vector<S: SpinState + ?Sized>(state: &S, site: usize) -> Result<[f64; 3]> {
    let l = state.num_sites();
    Ok([
        state.expect(&single(l, Axis::X, site)?)?,
        state.expect(&single(l, Axis::Y, site)?)?,
        state.expect(&single(l, Axis::Z, site)?)?,
    ])
}
