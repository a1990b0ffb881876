//! Reference computations for unit tests: dense Kronecker-product operators
//! and explicit partial traces, written without any of the library's kernels.

use ndarray::{Array1, Array2};

use crate::model::SumOfProducts;
use crate::C64;

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(i, j)| a[[i / br, j / bc]] * b[[i % br, j % bc]])
}

pub fn dense_hamiltonian(h: &SumOfProducts) -> Array2<C64> {
    let l = h.num_sites();
    let dim = 1usize << l;
    let mut out = Array2::<C64>::zeros((dim, dim));
    for t in h.terms() {
        let mut m = Array2::from_elem((1, 1), C64::new(t.coefficient, 0.0));
        for s in 1..=l {
            let op = t.factors.get(&s).map_or(crate::model::SiteOperator::Id.matrix(), |o| o.matrix());
            let o = Array2::from_shape_fn((2, 2), |(i, j)| op[i][j]);
            m = kron(&m, &o);
        }
        out += &m;
    }
    out
}

pub fn expect_dense(h: &Array2<C64>, v: &Array1<C64>) -> C64 {
    let hv = h.dot(v);
    v.iter().zip(hv.iter()).map(|(a, b)| a.conj() * b).sum()
}

/// Reduced density matrix of `sites` (sorted, 1-based), in the order of
/// `sites` with the first most significant.
pub fn partial_trace(v: &Array1<C64>, l: usize, sites: &[usize]) -> Array2<C64> {
    let na = sites.len();
    let rest: Vec<usize> = (1..=l).filter(|s| !sites.contains(s)).collect();
    let compose = |a: usize, b: usize| {
        let mut x = 0;
        for (k, &s) in sites.iter().enumerate() {
            x |= ((a >> (na - 1 - k)) & 1) << (l - s);
        }
        for (k, &s) in rest.iter().enumerate() {
            x |= ((b >> (rest.len() - 1 - k)) & 1) << (l - s);
        }
        x
    };
    let mut rho = Array2::<C64>::zeros((1 << na, 1 << na));
    for a in 0..1usize << na {
        for a2 in 0..1usize << na {
            let mut acc = C64::new(0.0, 0.0);
            for b in 0..1usize << rest.len() {
                acc += v[compose(a, b)] * v[compose(a2, b)].conj();
            }
            rho[[a, a2]] = acc;
        }
    }
    rho
}

pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
