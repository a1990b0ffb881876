//! Spin Hamiltonians as sums of products of single-site operators.
//!
//! Every model here lives on `L` spin-1/2 sites numbered `1..=L`. A
//! [`SumOfProducts`] is the canonical operator form consumed by the tensor-tree
//! contraction engine and by the exact-diagonalization oracle:
//!
//! ```text
//! H = Σ_r c_r ⊗_i O_{r,i}
//! ```
//!
//! Site operators are expressed in the primitive basis `(|↑⟩, |↓⟩)`, so `σ^z`
//! is `diag(1, -1)`. The spin-flip operators follow the unnormalized
//! convention `σ^± = σ^x ± iσ^y`, i.e. `σ^+ |↓⟩ = 2 |↑⟩`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_complex::Complex64 as C64;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};

/// Terms with `|c| < PRUNE_RELATIVE * max|c|` are dropped when a model is built.
pub const PRUNE_RELATIVE: f64 = 1e-15;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// A 2×2 operator on one spin, indexed `[row][col]` in the `(↑, ↓)` basis.
pub type Matrix2 = [[C64; 2]; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SiteOperator {
    Id,
    X,
    Y,
    Z,
    /// `σ^x + iσ^y`
    Plus,
    /// `σ^x - iσ^y`
    Minus,
    Dense(Matrix2),
}

impl SiteOperator {
    pub fn matrix(&self) -> Matrix2 {
        match self {
            SiteOperator::Id => [[ONE, ZERO], [ZERO, ONE]],
            SiteOperator::X => [[ZERO, ONE], [ONE, ZERO]],
            SiteOperator::Y => [[ZERO, -I], [I, ZERO]],
            SiteOperator::Z => [[ONE, ZERO], [ZERO, -ONE]],
            SiteOperator::Plus => [[ZERO, C64::new(2.0, 0.0)], [ZERO, ZERO]],
            SiteOperator::Minus => [[ZERO, ZERO], [C64::new(2.0, 0.0), ZERO]],
            SiteOperator::Dense(m) => *m,
        }
    }

    /// Upper bound on the operator norm (exact except for `Dense`, which uses
    /// the Frobenius norm).
    pub fn norm_bound(&self) -> f64 {
        match self {
            SiteOperator::Id | SiteOperator::X | SiteOperator::Y | SiteOperator::Z => 1.0,
            SiteOperator::Plus | SiteOperator::Minus => 2.0,
            SiteOperator::Dense(m) => m.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        }
    }

    pub fn adjoint(&self) -> SiteOperator {
        match self {
            SiteOperator::Plus => SiteOperator::Minus,
            SiteOperator::Minus => SiteOperator::Plus,
            SiteOperator::Dense(m) => SiteOperator::Dense([
                [m[0][0].conj(), m[1][0].conj()],
                [m[0][1].conj(), m[1][1].conj()],
            ]),
            other => *other,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.key() == SiteOperator::Id.key()
    }

    pub fn is_self_adjoint(&self) -> bool {
        self.key() == self.adjoint().key()
    }

    /// Bit pattern of the matrix; equal keys mean equal operators.
    pub(crate) fn key(&self) -> [u64; 8] {
        let m = self.matrix();
        let mut k = [0u64; 8];
        for (n, z) in m.iter().flatten().enumerate() {
            // normalize -0.0 so that equal matrices hash equally
            k[2 * n] = (z.re + 0.0).to_bits();
            k[2 * n + 1] = (z.im + 0.0).to_bits();
        }
        k
    }

    fn label(&self) -> String {
        match self {
            SiteOperator::Id => "I".into(),
            SiteOperator::X => "X".into(),
            SiteOperator::Y => "Y".into(),
            SiteOperator::Z => "Z".into(),
            SiteOperator::Plus => "+".into(),
            SiteOperator::Minus => "-".into(),
            SiteOperator::Dense(_) => "M".into(),
        }
    }
}

/// `c · ⊗_i O_i` with sites absent from `factors` acting as the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductTerm {
    pub coefficient: f64,
    pub factors: BTreeMap<usize, SiteOperator>,
}

impl ProductTerm {
    pub fn new<It>(coefficient: f64, factors: It) -> Self
    where
        It: IntoIterator<Item = (usize, SiteOperator)>,
    {
        let factors = factors
            .into_iter()
            .filter(|(_, op)| !op.is_identity())
            .collect();
        Self { coefficient, factors }
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.factors.keys().copied()
    }

    pub fn is_self_adjoint(&self) -> bool {
        self.factors.values().all(SiteOperator::is_self_adjoint)
    }

    fn factor_key(&self) -> Vec<(usize, [u64; 8])> {
        self.factors.iter().map(|(&s, op)| (s, op.key())).collect()
    }

    fn adjoint_key(&self) -> Vec<(usize, [u64; 8])> {
        self.factors.iter().map(|(&s, op)| (s, op.adjoint().key())).collect()
    }
}

impl fmt::Display for ProductTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+.6e}", self.coefficient)?;
        for (s, op) in &self.factors {
            write!(f, " {}{}", op.label(), s)?;
        }
        Ok(())
    }
}

/// A Hamiltonian `Σ_r c_r ⊗_i O_{r,i}` on `num_sites` spins.
#[derive(Clone, Debug, PartialEq)]
pub struct SumOfProducts {
    num_sites: usize,
    terms: Vec<ProductTerm>,
    spec: Option<ModelSpec>,
}

impl SumOfProducts {
    /// Canonicalizes `terms`: identity factors are dropped, terms with equal
    /// factor maps are merged (first occurrence keeps its position) and
    /// negligible coefficients are pruned.
    pub fn new(num_sites: usize, terms: Vec<ProductTerm>) -> Result<Self> {
        if num_sites == 0 {
            return Err(Error::InvalidModel("a model needs at least one site".into()));
        }
        let mut merged: Vec<ProductTerm> = Vec::with_capacity(terms.len());
        let mut index: HashMap<Vec<(usize, [u64; 8])>, usize> = HashMap::new();
        for term in terms {
            let term = ProductTerm::new(term.coefficient, term.factors);
            if !term.coefficient.is_finite() {
                return Err(Error::InvalidModel(format!("non-finite coefficient in term {term}")));
            }
            if let Some(&bad) = term.factors.keys().find(|&&s| s == 0 || s > num_sites) {
                return Err(Error::InvalidModel(format!(
                    "site {bad} outside 1..={num_sites}"
                )));
            }
            match index.entry(term.factor_key()) {
                std::collections::hash_map::Entry::Occupied(e) => {
                    merged[*e.get()].coefficient += term.coefficient;
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(merged.len());
                    merged.push(term);
                }
            }
        }
        let cmax = merged.iter().map(|t| t.coefficient.abs()).fold(0.0, f64::max);
        merged.retain(|t| t.coefficient != 0.0 && t.coefficient.abs() >= PRUNE_RELATIVE * cmax);
        Ok(Self { num_sites, terms: merged, spec: None })
    }

    pub fn with_spec(mut self, spec: ModelSpec) -> Self {
        self.spec = Some(spec);
        self
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn terms(&self) -> &[ProductTerm] {
        &self.terms
    }

    pub fn spec(&self) -> Option<&ModelSpec> {
        self.spec.as_ref()
    }

    pub fn name(&self) -> &'static str {
        self.spec.as_ref().map_or("custom", ModelSpec::name)
    }

    /// `Σ_r |c_r| Π ‖o‖`, an upper bound on the spectral radius.
    pub fn norm_estimate(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coefficient.abs() * t.factors.values().map(SiteOperator::norm_bound).product::<f64>())
            .sum()
    }

    /// True when every non-self-adjoint term has its adjoint partner with the
    /// same coefficient.
    pub fn is_hermitian(&self) -> bool {
        let coefs: HashMap<_, f64> = self
            .terms
            .iter()
            .map(|t| (t.factor_key(), t.coefficient))
            .collect();
        self.terms.iter().all(|t| {
            t.is_self_adjoint()
                || coefs
                    .get(&t.adjoint_key())
                    .is_some_and(|&c| (c - t.coefficient).abs() <= 1e-14 * c.abs().max(1.0))
        })
    }

    /// Count terms whose factors are exactly the given Pauli pattern, e.g.
    /// `&[Z, Z]` counts nearest or distant `ZZ` couplings alike.
    pub fn count_pattern(&self, pattern: &[SiteOperator]) -> usize {
        let mut want: Vec<_> = pattern.iter().map(SiteOperator::key).collect();
        want.sort();
        self.terms
            .iter()
            .filter(|t| {
                let mut got: Vec<_> = t.factors.values().map(SiteOperator::key).collect();
                got.sort();
                got == want
            })
            .count()
    }

    /// Coefficient of the term with exactly these factors, 0 if absent.
    pub fn coefficient_of(&self, factors: &[(usize, SiteOperator)]) -> f64 {
        let probe = ProductTerm::new(1.0, factors.iter().copied());
        let key = probe.factor_key();
        self.terms
            .iter()
            .find(|t| t.factor_key() == key)
            .map_or(0.0, |t| t.coefficient)
    }
}

fn check_sites(l: usize) -> Result<()> {
    if l < 2 {
        return Err(Error::InvalidModel(format!("need L >= 2, got {l}")));
    }
    Ok(())
}

fn field_terms(l: usize, h_x: f64, h_z: f64) -> impl Iterator<Item = ProductTerm> {
    let xs = (1..=l).map(move |i| ProductTerm::new(-h_x, [(i, SiteOperator::X)]));
    let zs = (1..=l).map(move |i| ProductTerm::new(-h_z, [(i, SiteOperator::Z)]));
    xs.filter(move |_| h_x != 0.0).chain(zs.filter(move |_| h_z != 0.0))
}

fn zz(i: usize, j: usize, c: f64) -> ProductTerm {
    ProductTerm::new(c, [(i, SiteOperator::Z), (j, SiteOperator::Z)])
}

/// Transverse-field Ising chain with nearest-neighbour coupling.
pub fn build_sr_tfim(l: usize, j: f64, h_x: f64, h_z: f64) -> Result<SumOfProducts> {
    check_sites(l)?;
    let mut terms: Vec<_> = (1..l).filter(|_| j != 0.0).map(|i| zz(i, i + 1, -j)).collect();
    terms.extend(field_terms(l, h_x, h_z));
    Ok(SumOfProducts::new(l, terms)?.with_spec(ModelSpec::SrTfim { l, j, h_x, h_z }))
}

/// Transverse-field Ising chain with couplings `J |i-j|^(-alpha)` between all pairs.
pub fn build_lr_tfim(l: usize, j: f64, h_x: f64, h_z: f64, alpha: f64) -> Result<SumOfProducts> {
    check_sites(l)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidModel(format!("alpha must be positive, got {alpha}")));
    }
    let mut terms = Vec::with_capacity(l * (l - 1) / 2 + 2 * l);
    for a in 1..=l {
        for b in a + 1..=l {
            let c = j * ((b - a) as f64).powf(-alpha);
            if c != 0.0 {
                terms.push(zz(a, b, -c));
            }
        }
    }
    terms.extend(field_terms(l, h_x, h_z));
    Ok(SumOfProducts::new(l, terms)?.with_spec(ModelSpec::LrTfim { l, j, h_x, h_z, alpha }))
}

/// XY spin glass `Σ_{i<j} J_ij |i-j|^(-alpha) (σ_i^+σ_j^- + σ_j^+σ_i^-)` with the
/// couplings drawn pair-lexicographically from the disorder stream.
///
/// With the unnormalized spin-flip operators each block equals
/// `2 J_ij |i-j|^(-alpha) (σ_i^xσ_j^x + σ_i^yσ_j^y)`, which is what is stored.
pub fn build_xysg(l: usize, alpha: f64, disorder: &DisorderSpec) -> Result<SumOfProducts> {
    check_sites(l)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidModel(format!("alpha must be non-negative, got {alpha}")));
    }
    let couplings = draw_couplings(disorder, l * (l - 1) / 2);
    let mut terms = Vec::with_capacity(l * (l - 1));
    let mut next = couplings.into_iter();
    for a in 1..=l {
        for b in a + 1..=l {
            let jab = next.next().expect("one coupling per pair");
            let c = 2.0 * jab * ((b - a) as f64).powf(-alpha);
            terms.push(ProductTerm::new(c, [(a, SiteOperator::X), (b, SiteOperator::X)]));
            terms.push(ProductTerm::new(c, [(a, SiteOperator::Y), (b, SiteOperator::Y)]));
        }
    }
    Ok(SumOfProducts::new(l, terms)?.with_spec(ModelSpec::Xysg { l, alpha, seed: disorder.seed }))
}

/// The coupling profile `J_i = J0 exp(-2 (L/2 - i)^2)`, `i = 1..L-1`.
pub fn sdrg_couplings(l: usize, j0: f64) -> Vec<f64> {
    let center = (l / 2) as f64;
    (1..l)
        .map(|i| {
            let n = center - i as f64;
            j0 * (-2.0 * n * n).exp()
        })
        .collect()
}

/// Rainbow XX chain `½ Σ_i J_i (σ_i^xσ_{i+1}^x + σ_i^yσ_{i+1}^y)`.
pub fn build_sdrg(l: usize, j0: f64) -> Result<SumOfProducts> {
    check_sites(l)?;
    if l % 2 != 0 {
        return Err(Error::InvalidModel(format!(
            "the coupling profile is centred on L/2 and needs even L, got {l}"
        )));
    }
    let mut terms = Vec::with_capacity(2 * (l - 1));
    for (k, ji) in sdrg_couplings(l, j0).into_iter().enumerate() {
        let i = k + 1;
        terms.push(ProductTerm::new(0.5 * ji, [(i, SiteOperator::X), (i + 1, SiteOperator::X)]));
        terms.push(ProductTerm::new(0.5 * ji, [(i, SiteOperator::Y), (i + 1, SiteOperator::Y)]));
    }
    Ok(SumOfProducts::new(l, terms)?.with_spec(ModelSpec::Sdrg { l, j0 }))
}

/// Site number (1-based, row-major) of grid point `(x, y)`.
pub fn grid_site(nx: usize, x: usize, y: usize) -> usize {
    y * nx + x + 1
}

/// Transverse-field Ising model on an open `nx × ny` square lattice.
pub fn build_tfim_2d(nx: usize, ny: usize, j: f64, h_x: f64, h_z: f64) -> Result<SumOfProducts> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidModel(format!("empty {nx}x{ny} lattice")));
    }
    let l = nx * ny;
    check_sites(l)?;
    let mut terms = Vec::new();
    if j != 0.0 {
        for y in 0..ny {
            for x in 0..nx {
                let s = grid_site(nx, x, y);
                if x + 1 < nx {
                    terms.push(zz(s, grid_site(nx, x + 1, y), -j));
                }
                if y + 1 < ny {
                    terms.push(zz(s, grid_site(nx, x, y + 1), -j));
                }
            }
        }
    }
    terms.extend(field_terms(l, h_x, h_z));
    Ok(SumOfProducts::new(l, terms)?.with_spec(ModelSpec::SrTfim2d { nx, ny, j, h_x, h_z }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CouplingDistribution {
    /// Uniform on `[-1, 1]`.
    #[default]
    UniformSymmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisorderSpec {
    pub seed: u64,
    #[serde(default)]
    pub distribution: CouplingDistribution,
}

impl DisorderSpec {
    pub fn uniform(seed: u64) -> Self {
        Self { seed, distribution: CouplingDistribution::UniformSymmetric }
    }
}

/// Draws `count` couplings from a ChaCha20 stream seeded with the disorder
/// seed. Each value takes the top 53 bits of one 64-bit output, so the
/// sequence is bit-identical on every platform.
pub fn draw_couplings(disorder: &DisorderSpec, count: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(disorder.seed);
    match disorder.distribution {
        CouplingDistribution::UniformSymmetric => (0..count)
            .map(|_| {
                let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                2.0 * u - 1.0
            })
            .collect(),
    }
}

fn default_j() -> f64 {
    1.0
}

/// Parameters of one of the built-in models; the `.model.json` document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    SrTfim {
        #[serde(rename = "L")]
        l: usize,
        #[serde(rename = "J", default = "default_j")]
        j: f64,
        h_x: f64,
        #[serde(default)]
        h_z: f64,
    },
    LrTfim {
        #[serde(rename = "L")]
        l: usize,
        #[serde(rename = "J", default = "default_j")]
        j: f64,
        h_x: f64,
        #[serde(default)]
        h_z: f64,
        alpha: f64,
    },
    Xysg {
        #[serde(rename = "L")]
        l: usize,
        alpha: f64,
        seed: u64,
    },
    Sdrg {
        #[serde(rename = "L")]
        l: usize,
        #[serde(rename = "J0", default = "default_j")]
        j0: f64,
    },
    SrTfim2d {
        nx: usize,
        ny: usize,
        #[serde(rename = "J", default = "default_j")]
        j: f64,
        h_x: f64,
        #[serde(default)]
        h_z: f64,
    },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::SrTfim { .. } => "sr_tfim",
            ModelSpec::LrTfim { .. } => "lr_tfim",
            ModelSpec::Xysg { .. } => "xysg",
            ModelSpec::Sdrg { .. } => "sdrg",
            ModelSpec::SrTfim2d { .. } => "sr_tfim_2d",
        }
    }

    pub fn num_sites(&self) -> usize {
        match *self {
            ModelSpec::SrTfim { l, .. }
            | ModelSpec::LrTfim { l, .. }
            | ModelSpec::Xysg { l, .. }
            | ModelSpec::Sdrg { l, .. } => l,
            ModelSpec::SrTfim2d { nx, ny, .. } => nx * ny,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match *self {
            ModelSpec::Xysg { seed, .. } => Some(seed),
            _ => None,
        }
    }

    pub fn is_disordered(&self) -> bool {
        matches!(self, ModelSpec::Xysg { .. })
    }

    /// Same model with a different disorder seed; clean models are unchanged.
    pub fn with_seed(&self, new_seed: u64) -> ModelSpec {
        match self.clone() {
            ModelSpec::Xysg { l, alpha, .. } => ModelSpec::Xysg { l, alpha, seed: new_seed },
            other => other,
        }
    }

    pub fn build(&self) -> Result<SumOfProducts> {
        match *self {
            ModelSpec::SrTfim { l, j, h_x, h_z } => build_sr_tfim(l, j, h_x, h_z),
            ModelSpec::LrTfim { l, j, h_x, h_z, alpha } => build_lr_tfim(l, j, h_x, h_z, alpha),
            ModelSpec::Xysg { l, alpha, seed } => build_xysg(l, alpha, &DisorderSpec::uniform(seed)),
            ModelSpec::Sdrg { l, j0 } => build_sdrg(l, j0),
            ModelSpec::SrTfim2d { nx, ny, j, h_x, h_z } => build_tfim_2d(nx, ny, j, h_x, h_z),
        }
    }
}

#[derive(Serialize)]
struct TermDoc<'a> {
    coefficient: &'a RawValue,
    factors: BTreeMap<String, String>,
}

/// Serializes a built model: its parameters plus the expanded term list, with
/// every coefficient written to 17 significant digits.
pub fn model_document(model: &SumOfProducts) -> Result<String> {
    let spec = model
        .spec()
        .ok_or_else(|| Error::InvalidModel("only built-in models can be serialized".into()))?;
    let mut doc = serde_json::to_value(spec).expect("model spec serializes");
    let raw: Vec<Box<RawValue>> = model
        .terms()
        .iter()
        .map(|t| RawValue::from_string(format!("{:.16e}", t.coefficient)).expect("valid number"))
        .collect();
    let terms: Vec<TermDoc> = model
        .terms()
        .iter()
        .zip(&raw)
        .map(|(t, c)| TermDoc {
            coefficient: c,
            factors: t.factors.iter().map(|(s, op)| (s.to_string(), op.label())).collect(),
        })
        .collect();
    doc["terms"] = serde_json::to_value(terms).expect("terms serialize");
    Ok(serde_json::to_string_pretty(&doc).expect("json value serializes"))
}

/// Parses a `.model.json` document. The informational `terms` list is
/// ignored; the model is rebuilt from its parameters.
pub fn parse_model_document(text: &str) -> Result<ModelSpec> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("terms");
    }
    serde_json::from_value(value).map_err(|e| Error::Parse {
        location: "model document".into(),
        message: e.to_string(),
    })
}
