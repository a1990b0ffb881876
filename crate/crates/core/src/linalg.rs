//! Dense kernels on node tensors.
//!
//! A node tensor is stored as a matrix whose rows are the node's functions and
//! whose columns run over the child multi-index, first child most
//! significant. "Slot k" is the k-th child index inside a column.

use nalgebra::DMatrix;
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

fn split(dims: &[usize], k: usize) -> (usize, usize) {
    (dims[..k].iter().product(), dims[k + 1..].iter().product())
}

/// Applies `m` (d' × dims[k]) to slot `k` of every row of `a`. The result has
/// slot `k` of size d'.
pub fn mode_product(a: &Array2<C64>, dims: &[usize], k: usize, m: ArrayView2<C64>) -> Array2<C64> {
    let rows = a.nrows();
    let (pre, post) = split(dims, k);
    let (dk, dn) = (dims[k], m.nrows());
    debug_assert_eq!(m.ncols(), dk);
    debug_assert_eq!(a.ncols(), pre * dk * post);
    let a = a.as_standard_layout();
    let src = a.as_slice().expect("standard layout");
    let mut out = Array2::<C64>::zeros((rows, pre * dn * post));
    let dst = out.as_slice_mut().expect("fresh array");
    let blocks = rows * pre;
    if post == 1 {
        let av = ArrayView2::from_shape((blocks, dk), src).expect("shape");
        let mut ov = ArrayViewMut2::from_shape((blocks, dn), dst).expect("shape");
        general_mat_mul(ONE, &av, &m.t(), ZERO, &mut ov);
    } else {
        for b in 0..blocks {
            let av = ArrayView2::from_shape((dk, post), &src[b * dk * post..(b + 1) * dk * post])
                .expect("shape");
            let mut ov =
                ArrayViewMut2::from_shape((dn, post), &mut dst[b * dn * post..(b + 1) * dn * post])
                    .expect("shape");
            general_mat_mul(ONE, &m, &av, ZERO, &mut ov);
        }
    }
    out
}

/// `M[a, b] = Σ_{p,q} conj(A[p, a, q]) Z[p, b, q]` where `p` runs over the
/// row index and the slots before `k`, and `q` over the slots after it.
pub fn unfold_gram(a: &Array2<C64>, z: &Array2<C64>, dims: &[usize], k: usize) -> Array2<C64> {
    let (pre, post) = split(dims, k);
    let dk = dims[k];
    let blocks = a.nrows() * pre;
    debug_assert_eq!(a.dim(), z.dim());
    let a = a.as_standard_layout();
    let z = z.as_standard_layout();
    let sa = a.as_slice().expect("standard layout");
    let sz = z.as_slice().expect("standard layout");
    let mut m = Array2::<C64>::zeros((dk, dk));
    if post == 1 {
        let av = ArrayView2::from_shape((blocks, dk), sa).expect("shape").mapv(|x| x.conj());
        let zv = ArrayView2::from_shape((blocks, dk), sz).expect("shape");
        general_mat_mul(ONE, &av.t(), &zv, ZERO, &mut m);
    } else {
        for b in 0..blocks {
            let r = b * dk * post..(b + 1) * dk * post;
            let av = ArrayView2::from_shape((dk, post), &sa[r.clone()]).expect("shape").mapv(|x| x.conj());
            let zv = ArrayView2::from_shape((dk, post), &sz[r]).expect("shape");
            general_mat_mul(ONE, &av, &zv.t(), ONE, &mut m);
        }
    }
    m
}

pub fn matmul(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    a.dot(b)
}

/// `conj(a) · bᵀ`: the matrix of overlaps `⟨a_i|b_j⟩` between rows.
pub fn row_overlaps(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    general_mat_mul(ONE, &a.mapv(|x| x.conj()), &b.t(), ZERO, &mut out);
    out
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: C64, x: &mut [C64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

/// Orthonormalizes the rows of `a` in place by modified Gram-Schmidt with
/// one reorthogonalization pass, returning the lower-triangular `T` with
/// `a_old = T · a_new`. Rows that are numerically dependent are replaced by
/// unit vectors orthogonal to the earlier rows; their column of `T` is zero.
pub fn orthonormalize_rows(a: &mut Array2<C64>) -> Array2<C64> {
    let (m, n) = a.dim();
    let mut t = Array2::<C64>::zeros((m, m));
    let scale = a
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let tiny = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut filler = 0usize;
    for i in 0..m {
        let mut v = a.row(i).to_vec();
        for _pass in 0..2 {
            for j in 0..i {
                let q = a.row(j);
                let r: C64 = q.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                t[[i, j]] += r;
                for (vk, qk) in v.iter_mut().zip(q.iter()) {
                    *vk -= r * qk;
                }
            }
        }
        let mut nv = norm(&v);
        if nv > tiny {
            t[[i, i]] = C64::new(nv, 0.0);
        } else {
            // pull in the next basis vector that survives projection
            loop {
                assert!(filler < n, "more rows than columns");
                v.iter_mut().for_each(|x| *x = ZERO);
                v[filler] = ONE;
                filler += 1;
                for _pass in 0..2 {
                    for j in 0..i {
                        let q = a.row(j);
                        let r: C64 = q.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                        for (vk, qk) in v.iter_mut().zip(q.iter()) {
                            *vk -= r * qk;
                        }
                    }
                }
                nv = norm(&v);
                if nv > 1e-3 {
                    break;
                }
            }
        }
        let inv = 1.0 / nv;
        for (dst, x) in a.row_mut(i).iter_mut().zip(&v) {
            *dst = x * inv;
        }
    }
    t
}

/// `max |⟨a_i|a_j⟩ - δ_ij|`.
pub fn orthonormality_deviation(a: &Array2<C64>) -> f64 {
    let g = row_overlaps(a, a);
    let mut dev: f64 = 0.0;
    for ((i, j), x) in g.indexed_iter() {
        let target = if i == j { ONE } else { ZERO };
        dev = dev.max((x - target).norm());
    }
    dev
}

pub fn to_nalgebra(m: &Array2<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub fn from_nalgebra(m: &DMatrix<C64>) -> Array2<C64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and the
/// matching eigenvectors as columns. Only the Hermitian part is used.
pub fn herm_eig(m: &Array2<C64>) -> (Vec<f64>, Array2<C64>) {
    let n = m.nrows();
    let h = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]].conj()));
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(i, c)| eig.eigenvectors[(i, order[c])]);
    (values, vectors)
}

/// Inverse of a Hermitian positive semidefinite `rho` with eigenvalues
/// floored at `eps · λ_max`.
pub fn regularized_inverse(rho: &Array2<C64>, eps: f64) -> Result<Array2<C64>> {
    let (vals, vecs) = herm_eig(rho);
    let lmax = vals.last().copied().unwrap_or(0.0);
    if !(lmax.is_finite() && lmax > 0.0) {
        return Err(Error::StepFailure(format!(
            "density matrix has no positive eigenvalue (largest {lmax:e}); try a smaller dt"
        )));
    }
    let floor = eps * lmax;
    let n = rho.nrows();
    let mut scaled = vecs.clone();
    for (c, &l) in vals.iter().enumerate() {
        let inv = 1.0 / l.max(floor);
        scaled.column_mut(c).mapv_inplace(|x| x * inv);
    }
    let mut out = Array2::zeros((n, n));
    general_mat_mul(ONE, &scaled, &vecs.t().mapv(|x| x.conj()), ZERO, &mut out);
    Ok(out)
}

/// `-Σ λ ln λ` over eigenvalues above `floor`.
pub fn entropy_of_spectrum(vals: &[f64], floor: f64) -> f64 {
    vals.iter().filter(|&&l| l > floor).map(|&l| -l * l.ln()).sum()
}

pub fn identity(n: usize) -> Array2<C64> {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { ONE } else { ZERO })
}

pub fn is_finite(a: &Array2<C64>) -> bool {
    a.iter().all(|x| x.re.is_finite() && x.im.is_finite())
}

/// Leading `rows` rows of `a`, as an owned matrix.
pub fn head_rows(a: &Array2<C64>, rows: usize) -> Array2<C64> {
    a.slice(s![..rows, ..]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<C64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| {
            C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        })
    }

    // a[r, i0, i1, i2] with explicit loops
    fn naive_mode(a: &Array2<C64>, dims: &[usize; 3], k: usize, m: &Array2<C64>) -> Array2<C64> {
        let mut nd = *dims;
        nd[k] = m.nrows();
        let mut out = Array2::zeros((a.nrows(), nd.iter().product()));
        for r in 0..a.nrows() {
            for i0 in 0..nd[0] {
                for i1 in 0..nd[1] {
                    for i2 in 0..nd[2] {
                        let o = [i0, i1, i2];
                        let mut acc = ZERO;
                        for j in 0..dims[k] {
                            let mut src = o;
                            src[k] = j;
                            let col = (src[0] * dims[1] + src[1]) * dims[2] + src[2];
                            acc += m[[o[k], j]] * a[[r, col]];
                        }
                        out[[r, (i0 * nd[1] + i1) * nd[2] + i2]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn mode_product_matches_loops() {
        let dims = [2, 3, 4];
        let a = random(3, 24, 1);
        for k in 0..3 {
            let m = random(5, dims[k], 2 + k as u64);
            let fast = mode_product(&a, &dims, k, m.view());
            let slow = naive_mode(&a, &dims, k, &m);
            assert!((&fast - &slow).iter().all(|x| x.norm() < 1e-12));
        }
    }

    #[test]
    fn unfold_gram_matches_loops() {
        let dims = [2, 3, 4];
        let a = random(3, 24, 5);
        let z = random(3, 24, 6);
        for k in 0..3 {
            let m = unfold_gram(&a, &z, &dims, k);
            let mut slow = Array2::<C64>::zeros((dims[k], dims[k]));
            for r in 0..3 {
                for c in 0..24 {
                    let idx = [c / 12, (c / 4) % 3, c % 4];
                    for b in 0..dims[k] {
                        let mut other = idx;
                        other[k] = b;
                        let c2 = (other[0] * 3 + other[1]) * 4 + other[2];
                        slow[[idx[k], b]] += a[[r, c]].conj() * z[[r, c2]];
                    }
                }
            }
            assert!((&m - &slow).iter().all(|x| x.norm() < 1e-12));
        }
    }

    #[test]
    fn gram_schmidt_factorization() {
        let a0 = random(4, 9, 7);
        let mut a = a0.clone();
        let t = orthonormalize_rows(&mut a);
        assert!(orthonormality_deviation(&a) < 1e-14);
        let back = t.dot(&a);
        assert!((&back - &a0).iter().all(|x| x.norm() < 1e-12));
    }

    #[test]
    fn gram_schmidt_fills_dependent_rows() {
        let mut a = Array2::<C64>::zeros((3, 4));
        a[[0, 1]] = ONE;
        a[[1, 1]] = C64::new(2.0, 0.0);
        let t = orthonormalize_rows(&mut a);
        assert!(orthonormality_deviation(&a) < 1e-14);
        assert_eq!(t[[1, 0]], C64::new(2.0, 0.0));
        assert_eq!(t[[1, 1]], ZERO);
    }

    #[test]
    fn regularized_inverse_floors_small_eigenvalues() {
        let mut rho = Array2::<C64>::zeros((2, 2));
        rho[[0, 0]] = ONE;
        let inv = regularized_inverse(&rho, 1e-8).unwrap();
        assert!((inv[[1, 1]].re - 1e8).abs() < 1e-3);
        assert!((inv[[0, 0]].re - 1.0).abs() < 1e-12);
        assert!(regularized_inverse(&Array2::zeros((2, 2)), 1e-8).is_err());
    }
}
