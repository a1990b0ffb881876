//! Implicitly restarted Lanczos for Hermitian operators given only through
//! their action on vectors.
//!
//! The basis is kept fully reorthogonalized. Each restart compresses the basis
//! onto the wanted end of the spectrum with the unwanted Ritz values as exact
//! shifts, without extra operator applications.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, herm_eig, norm};
use crate::C64;

/// Operators up to this size are diagonalized densely.
pub const DENSE_LIMIT: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LanczosConfig {
    /// Krylov basis size per restart cycle.
    pub ncv: usize,
    pub max_restarts: usize,
    /// Residual bound relative to the largest Ritz value magnitude.
    pub tol: f64,
    /// Seed for start vectors that are not supplied.
    pub seed: u64,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        Self { ncv: 32, max_restarts: 500, tol: 1e-12, seed: 0x5eed }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<C64>,
    /// `‖A v - λ v‖`.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct KrylovOutcome {
    pub pairs: Vec<EigenPair>,
    pub matvecs: usize,
    pub restarts: usize,
}

fn random_vector(rng: &mut ChaCha20Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))).collect()
}

/// Makes `w` orthogonal to `basis` (two classical Gram-Schmidt passes) and
/// returns the coefficients removed in the first pass.
fn orthogonalize(w: &mut [C64], basis: &[Vec<C64>]) -> Vec<C64> {
    let mut first = Vec::with_capacity(basis.len());
    for pass in 0..2 {
        for v in basis {
            let c = dot(v, w);
            axpy(-c, v, w);
            if pass == 0 {
                first.push(c);
            }
        }
    }
    first
}

fn dense_eigs<F>(apply: &mut F, n: usize, nev: usize) -> KrylovOutcome
where
    F: FnMut(&[C64], &mut [C64]),
{
    let mut m = ndarray::Array2::<C64>::zeros((n, n));
    let mut e = vec![C64::new(0.0, 0.0); n];
    let mut col = vec![C64::new(0.0, 0.0); n];
    for j in 0..n {
        e[j] = C64::new(1.0, 0.0);
        apply(&e, &mut col);
        e[j] = C64::new(0.0, 0.0);
        for i in 0..n {
            m[[i, j]] = col[i];
        }
    }
    let (vals, vecs) = herm_eig(&m);
    let pairs = (0..nev.min(n))
        .map(|k| {
            let vector: Vec<C64> = vecs.column(k).to_vec();
            apply(&vector, &mut col);
            axpy(C64::new(-vals[k], 0.0), &vector, &mut col);
            EigenPair { value: vals[k], vector, residual: norm(&col) }
        })
        .collect();
    KrylovOutcome { pairs, matvecs: n + nev.min(n), restarts: 0 }
}

/// The `nev` lowest eigenpairs of a Hermitian operator of dimension `n`.
///
/// A single Krylov sequence sees one vector per eigenspace, so exactly
/// degenerate eigenvalues may be reported once; use [`lowest_eigenpairs`]
/// when multiplicities matter.
pub fn irl<F>(apply: F, n: usize, nev: usize, cfg: &LanczosConfig, start: Option<&[C64]>) -> Result<KrylovOutcome>
where
    F: FnMut(&[C64], &mut [C64]),
{
    irl_constrained(apply, n, nev, cfg, start, &[])
}

/// Lanczos restricted to the orthogonal complement of `constraint`
/// (orthonormal vectors).
fn irl_constrained<F>(
    mut apply: F,
    n: usize,
    nev: usize,
    cfg: &LanczosConfig,
    start: Option<&[C64]>,
    constraint: &[Vec<C64>],
) -> Result<KrylovOutcome>
where
    F: FnMut(&[C64], &mut [C64]),
{
    if n == 0 || nev == 0 {
        return Err(Error::Domain(format!("need dim >= 1 and nev >= 1, got {n} and {nev}")));
    }
    if nev > n {
        return Err(Error::Domain(format!("asked for {nev} eigenpairs of a {n}-dimensional operator")));
    }
    if constraint.is_empty() && n <= DENSE_LIMIT.max(cfg.ncv) {
        return Ok(dense_eigs(&mut apply, n, nev));
    }
    let m = cfg.ncv.max(2 * nev + 2).min(n);
    let k_keep = nev + (m - nev) / 2;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let fresh = |rng: &mut ChaCha20Rng, against: &[Vec<C64>]| {
        let mut r = random_vector(rng, n);
        orthogonalize(&mut r, constraint);
        orthogonalize(&mut r, against);
        let nr = norm(&r);
        r.iter_mut().for_each(|x| *x /= nr);
        r
    };

    let mut v0 = match start {
        Some(s) if s.len() == n && norm(s) > 0.0 => s.to_vec(),
        _ => random_vector(&mut rng, n),
    };
    orthogonalize(&mut v0, constraint);
    let n0 = norm(&v0);
    if n0 < 1e-8 {
        v0 = fresh(&mut rng, &[]);
    } else {
        v0.iter_mut().for_each(|x| *x /= n0);
    }

    // projected matrix: tridiagonal after a cold start, arrowhead plus
    // tridiagonal after a restart
    let mut t = DMatrix::<f64>::zeros(m, m);
    let mut basis: Vec<Vec<C64>> = vec![v0];
    let mut w = vec![C64::new(0.0, 0.0); n];
    let mut fnorm = 0.0;
    let mut matvecs = 0;
    let mut anorm: f64 = 0.0;
    let mut j0 = 0;

    for restart in 0..=cfg.max_restarts {
        for j in j0..m {
            apply(&basis[j], &mut w);
            matvecs += 1;
            orthogonalize(&mut w, constraint);
            let mut diag = 0.0;
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate().take(j + 1) {
                    let c = dot(v, &w);
                    axpy(-c, v, &mut w);
                    if i == j {
                        diag += c.re;
                    }
                }
            }
            t[(j, j)] = diag;
            let mut b = norm(&w);
            anorm = anorm.max(diag.abs() + b);
            if b <= 1e-13 * anorm.max(f64::MIN_POSITIVE) {
                // invariant subspace: continue with a fresh direction
                b = 0.0;
                w = fresh(&mut rng, &basis[..=j]);
            } else {
                w.iter_mut().for_each(|x| *x /= b);
            }
            if j + 1 < m {
                t[(j + 1, j)] = b;
                t[(j, j + 1)] = b;
            }
            fnorm = b;
            if basis.len() == j + 1 {
                basis.push(w.clone());
            } else {
                basis[j + 1].copy_from_slice(&w);
            }
        }

        let eig = t.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let scale = eig.eigenvalues.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(f64::MIN_POSITIVE);
        let estimates: Vec<f64> =
            order.iter().map(|&i| (fnorm * eig.eigenvectors[(m - 1, i)]).abs()).collect();
        let converged = estimates[..nev].iter().all(|&r| r <= cfg.tol * scale);

        let ritz = |cols: &[usize]| -> Vec<Vec<C64>> {
            cols.iter()
                .map(|&i| {
                    let mut y = vec![C64::new(0.0, 0.0); n];
                    for (jj, v) in basis.iter().take(m).enumerate() {
                        axpy(C64::new(eig.eigenvectors[(jj, i)], 0.0), v, &mut y);
                    }
                    y
                })
                .collect()
        };

        if converged || restart == cfg.max_restarts {
            let mut pairs = Vec::with_capacity(nev);
            for mut y in ritz(&order[..nev]) {
                let ny = norm(&y);
                y.iter_mut().for_each(|x| *x /= ny);
                apply(&y, &mut w);
                matvecs += 1;
                orthogonalize(&mut w, constraint);
                let value = dot(&y, &w).re;
                axpy(C64::new(-value, 0.0), &y, &mut w);
                pairs.push(EigenPair { value, vector: y, residual: norm(&w) });
            }
            if !converged {
                let worst = estimates[..nev].iter().fold(0.0f64, |a, &b| a.max(b));
                return Err(Error::NonConvergence {
                    message: format!("{} restarts of a {m}-vector Lanczos basis", cfg.max_restarts),
                    residual: worst,
                });
            }
            return Ok(KrylovOutcome { pairs, matvecs, restarts: restart });
        }

        // Restart with the k lowest Ritz vectors. This is the same subspace an
        // implicit restart with the other Ritz values as exact shifts would
        // keep, without the forward instability of the shifted QR sweeps.
        let mut kept = ritz(&order[..k_keep]);
        let residual_dir = basis[m].clone();
        let mut tn = DMatrix::<f64>::zeros(m, m);
        for (c, &i) in order[..k_keep].iter().enumerate() {
            tn[(c, c)] = eig.eigenvalues[i];
            let b = fnorm * eig.eigenvectors[(m - 1, i)];
            tn[(c, k_keep)] = b;
            tn[(k_keep, c)] = b;
        }
        for y in kept.iter_mut() {
            orthogonalize(y, constraint);
        }
        let next = if fnorm == 0.0 { fresh(&mut rng, &kept) } else { residual_dir };
        kept.push(next);
        basis = kept;
        t = tn;
        j0 = k_keep;
    }
    unreachable!("the final restart returns")
}

/// The `count` lowest eigenpairs, with each eigenspace fully resolved: pairs
/// are found one at a time with all earlier ones projected out, then rotated
/// into the eigenbasis of the operator restricted to their span.
pub fn lowest_eigenpairs<F>(mut apply: F, n: usize, count: usize, cfg: &LanczosConfig, start: Option<&[C64]>) -> Result<KrylovOutcome>
where
    F: FnMut(&[C64], &mut [C64]),
{
    if count > n {
        return Err(Error::Domain(format!("asked for {count} eigenpairs of a {n}-dimensional operator")));
    }
    if n <= DENSE_LIMIT.max(cfg.ncv) {
        return Ok(dense_eigs(&mut apply, n, count));
    }
    let mut locked: Vec<Vec<C64>> = Vec::with_capacity(count);
    let mut matvecs = 0;
    let mut restarts = 0;
    for round in 0..count {
        let mut s = start.map(<[C64]>::to_vec);
        if let Some(s) = s.as_mut() {
            orthogonalize(s, &locked);
            if norm(s) < 1e-8 {
                s.clear();
            }
        }
        let mut run_cfg = *cfg;
        run_cfg.seed = cfg.seed.wrapping_add(round as u64);
        let out = irl_constrained(&mut apply, n, 1, &run_cfg, s.as_deref().filter(|s| !s.is_empty()), &locked)?;
        matvecs += out.matvecs;
        restarts += out.restarts;
        let mut v = out.pairs.into_iter().next().expect("one pair").vector;
        orthogonalize(&mut v, &locked);
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        locked.push(v);
    }
    // Rayleigh-Ritz over the locked span
    let k = locked.len();
    let mut av = Vec::with_capacity(k);
    for v in &locked {
        let mut y = vec![C64::new(0.0, 0.0); n];
        apply(v, &mut y);
        matvecs += 1;
        av.push(y);
    }
    let h = ndarray::Array2::from_shape_fn((k, k), |(i, j)| dot(&locked[i], &av[j]));
    let (vals, vecs) = herm_eig(&h);
    let mut pairs = Vec::with_capacity(k);
    for c in 0..k {
        let mut y = vec![C64::new(0.0, 0.0); n];
        let mut ay = vec![C64::new(0.0, 0.0); n];
        for i in 0..k {
            axpy(vecs[[i, c]], &locked[i], &mut y);
            axpy(vecs[[i, c]], &av[i], &mut ay);
        }
        axpy(C64::new(-vals[c], 0.0), &y, &mut ay);
        pairs.push(EigenPair { value: vals[c], vector: y, residual: norm(&ay) });
    }
    Ok(KrylovOutcome { pairs, matvecs, restarts })
}

/// The `target_index`-th lowest eigenpair (0 = ground state) of a Hermitian
/// operator, with residual `‖Av - λv‖ ≤ tol · ‖A‖`.
pub fn krylov_lowest<F>(apply: F, dim: usize, cfg: &LanczosConfig, target_index: usize, start: Option<&[C64]>) -> Result<(EigenPair, KrylovOutcome)>
where
    F: FnMut(&[C64], &mut [C64]),
{
    if dim == 0 {
        return Err(Error::Domain("empty operator".into()));
    }
    let out = if target_index == 0 {
        irl(apply, dim, 1, cfg, start)?
    } else {
        lowest_eigenpairs(apply, dim, target_index + 1, cfg, start)?
    };
    let pair = out.pairs[target_index].clone();
    Ok((pair, out))
}
