use std::sync::Arc;

use ndarray::Array2;

use super::*;
use crate::model::{build_lr_tfim, build_sdrg, build_sr_tfim, build_tfim_2d, build_xysg, DisorderSpec, ProductTerm, SiteOperator};
use crate::testutil::{dense_hamiltonian, expect_dense, max_abs_diff, partial_trace};
use crate::tree::{binary_tree, grid_tree_2d, mode_combination_tree};

fn trees() -> Vec<Arc<TreeSpec>> {
    vec![
        Arc::new(binary_tree(2, &[]).unwrap()),
        Arc::new(binary_tree(4, &[3]).unwrap()),
        Arc::new(binary_tree(8, &[3, 3]).unwrap()),
        Arc::new(binary_tree(8, &[]).unwrap()),
        Arc::new(mode_combination_tree(6, &[vec![1, 2], vec![3], vec![4, 5, 6]], &[3, 2, 5]).unwrap()),
        Arc::new(grid_tree_2d(3, 3, &[5]).unwrap()),
    ]
}

fn models(l: usize) -> Vec<SumOfProducts> {
    let mut out = vec![
        build_sr_tfim(l, 1.0, 0.7, 0.2).unwrap(),
        build_lr_tfim(l, 1.0, 0.9, 0.1, 3.0).unwrap(),
        build_xysg(l, 3.0, &DisorderSpec::uniform(5)).unwrap(),
    ];
    if l % 2 == 0 {
        out.push(build_sdrg(l, 1.0).unwrap());
    }
    // a three-body term with a constant offset exercises the general grouping
    let mut terms = out[0].terms().to_vec();
    terms.push(ProductTerm::new(0.3, []));
    if l >= 3 {
        terms.push(ProductTerm::new(
            0.4,
            [(1, SiteOperator::X), (2, SiteOperator::Y), (l, SiteOperator::Z)],
        ));
    }
    out.push(SumOfProducts::new(l, terms).unwrap());
    out
}

#[test]
fn random_states_are_orthonormal_and_deterministic() {
    for t in trees() {
        let a = random_state(&t, 11);
        assert!(a.orthonormality_check() <= 1e-12);
        assert_eq!(a, random_state(&t, 11));
        assert_ne!(a, random_state(&t, 12));
        let v = a.to_statevector().unwrap();
        let n: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        assert!((n - 1.0).abs() < 1e-10);
    }
    let t = Arc::new(binary_tree(2, &[]).unwrap());
    assert_eq!(random_state(&t, 0).tensor(0).dim(), (1, 4));
}

#[test]
fn product_state_amplitudes() {
    let t = Arc::new(binary_tree(4, &[2]).unwrap());
    let up = product_state(&t, &[[0.0, 0.0, 1.0]; 4]).unwrap();
    let v = up.to_statevector().unwrap();
    assert!((v[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
    assert!(v.iter().skip(1).all(|x| x.norm() < 1e-15));
    let h = build_sr_tfim(4, 1.0, 0.0, 0.01).unwrap();
    assert!((up.expectation(&h).unwrap() - (-3.0 - 0.04)).abs() < 1e-14);

    // tensor product of single-spin states, exactly
    let dirs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 1.0, 1.0]];
    let p = product_state(&t, &dirs).unwrap();
    let mut dense = ndarray::Array1::from_elem(1, C64::new(1.0, 0.0));
    for d in dirs {
        let s = bloch_spinor(d);
        dense = ndarray::Array1::from_shape_fn(dense.len() * 2, |i| dense[i / 2] * s[i % 2]);
    }
    let v = p.to_statevector().unwrap();
    assert!(v.iter().zip(dense.iter()).all(|(a, b)| (a - b).norm() < 1e-15));
    assert!(p.orthonormality_check() < 1e-14);
}

#[test]
fn leaf_order_is_undone_in_dense_vectors() {
    // the 3x3 grid tree is not in site order below its first layer
    let t = Arc::new(grid_tree_2d(3, 3, &[]).unwrap());
    let mut dirs = [[0.0, 0.0, 1.0]; 9];
    dirs[4] = [0.0, 0.0, -1.0];
    let v = product_state(&t, &dirs).unwrap().to_statevector().unwrap();
    let idx = 1usize << (9 - 5);
    assert!((v[idx].norm() - 1.0).abs() < 1e-14);
}

#[test]
fn expectation_matches_dense() {
    for t in trees() {
        let l = t.num_sites();
        for h in models(l) {
            let hd = dense_hamiltonian(&h);
            for seed in 0..3 {
                let s = random_state(&t, seed);
                let v = s.to_statevector().unwrap();
                let e = s.expectation(&h).unwrap();
                let ed = expect_dense(&hd, &v);
                assert!((e - ed.re).abs() < 1e-10, "L={l} {}: {e} vs {}", h.name(), ed.re);
            }
        }
    }
}

#[test]
fn all_up_has_zero_xy_energy() {
    let t = Arc::new(binary_tree(8, &[4, 4]).unwrap());
    let up = product_state(&t, &[[0.0, 0.0, 1.0]; 8]).unwrap();
    for seed in 0..4 {
        let h = build_xysg(8, 3.0, &DisorderSpec::uniform(seed)).unwrap();
        assert!(up.expectation(&h).unwrap().abs() < 1e-14);
    }
}

#[test]
fn every_node_reproduces_the_energy() {
    for t in trees() {
        for h in models(t.num_sites()) {
            let s = random_state(&t, 3);
            let lay = Layout::new(&t, &h).unwrap();
            let mut sw = lay.upward(&s);
            lay.downward(&s, &mut sw);
            let e = lay.root_expectation(&s, &sw);
            for n in t.internal_nodes() {
                let en = lay.node_expectation(&s, &sw, n);
                assert!((en - e).norm() < 1e-12 * e.norm().max(1.0), "node {n}: {en} vs {e}");
            }
        }
    }
}

#[test]
fn per_term_cache_agrees_with_aggregated_sweep() {
    for t in trees() {
        for h in models(t.num_sites()) {
            let s = random_state(&t, 8);
            let cache = upward_pass(&s, &h).unwrap();
            let e = s.expectation(&h).unwrap();
            assert!((cache.energy().re - e).abs() < 1e-12);
            for n in 0..t.len() {
                let f = mean_field_matrices(&s, &cache, n).unwrap();
                let total: C64 = (0..cache.num_terms())
                    .map(|r| {
                        let hin = cache.matrix(r, n);
                        cache.coefficient(r) * f[r].iter().zip(hin.iter()).map(|(a, b)| a * b).sum::<C64>()
                    })
                    .sum();
                assert!((total.re - e).abs() < 1e-12, "node {n}");
            }
        }
    }
}

/// `(1 - P) G` from the per-term cache, for comparison with the sweep.
fn per_term_projected_gradient(s: &MlState, h: &SumOfProducts, n: NodeId) -> Array2<C64> {
    let cache = upward_pass(s, h).unwrap();
    let f = mean_field_matrices(s, &cache, n).unwrap();
    let a = s.tensor(n);
    let dims = s.child_dims(n);
    let mut g = Array2::<C64>::zeros(a.dim());
    for r in 0..cache.num_terms() {
        let mut x = a.clone();
        for (k, &c) in s.tree().children(n).iter().enumerate() {
            x = mode_product(&x, &dims, k, cache.matrix(r, c).view());
        }
        g = g + f[r].dot(&x).mapv(|z| z * cache.coefficient(r));
    }
    project_out(a, &g)
}

fn project_out(a: &Array2<C64>, g: &Array2<C64>) -> Array2<C64> {
    let ah = a.t().mapv(|z| z.conj());
    g - &g.dot(&ah).dot(a)
}

#[test]
fn projected_gradient_matches_per_term_sum() {
    for t in trees() {
        for h in models(t.num_sites()) {
            let s = random_state(&t, 21);
            let lay = Layout::new(&t, &h).unwrap();
            let mut sw = lay.upward(&s);
            lay.downward(&s, &mut sw);
            for n in t.internal_nodes().filter(|&n| n != 0) {
                let g = project_out(s.tensor(n), &lay.gradient(&s, &sw, n));
                let reference = per_term_projected_gradient(&s, &h, n);
                assert!(max_abs_diff(&g, &reference) < 1e-11, "node {n}");
            }
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    // E(A) = ⟨Ψ|H|Ψ⟩ is real-quadratic in the entries of A, so
    // dE/dRe A[a,J] = 2 Re G[a,J] and dE/dIm A[a,J] = 2 Im G[a,J].
    let t = Arc::new(binary_tree(4, &[3]).unwrap());
    let h = build_lr_tfim(4, 1.0, 0.8, 0.3, 3.0).unwrap();
    let hd = dense_hamiltonian(&h);
    let s = random_state(&t, 4);
    let lay = Layout::new(&t, &h).unwrap();
    let mut sw = lay.upward(&s);
    lay.downward(&s, &mut sw);
    let energy = |st: &MlState| expect_dense(&hd, &st.to_statevector().unwrap()).re;
    let eps = 1e-6;
    for n in t.internal_nodes() {
        let g = if n == 0 { lay.apply_root(&s, &sw, s.tensor(0)) } else { lay.gradient(&s, &sw, n) };
        for (idx, gz) in g.indexed_iter().take(6) {
            for (dir, want) in [(C64::new(eps, 0.0), 2.0 * gz.re), (C64::new(0.0, eps), 2.0 * gz.im)] {
                let mut plus = s.clone();
                plus.tensor_mut(n)[idx] += dir;
                let mut minus = s.clone();
                minus.tensor_mut(n)[idx] -= dir;
                let fd = (energy(&plus) - energy(&minus)) / (2.0 * eps);
                assert!((fd - want).abs() < 1e-6, "node {n} {idx:?}: {fd} vs {want}");
            }
        }
    }
}

#[test]
fn density_matrices_match_partial_traces() {
    for t in [
        Arc::new(binary_tree(4, &[3]).unwrap()),
        Arc::new(binary_tree(8, &[3, 3]).unwrap()),
        Arc::new(mode_combination_tree(6, &[vec![1, 2], vec![3], vec![4, 5, 6]], &[3, 2, 5]).unwrap()),
    ] {
        let l = t.num_sites();
        for seed in 0..5 {
            let s = random_state(&t, seed);
            let v = s.to_statevector().unwrap();
            for n in 1..t.len() {
                let rho = s.node_density_matrix(n).unwrap();
                assert!(max_abs_diff(&rho, &rho.t().mapv(|z| z.conj())) < 1e-12);
                let tr: C64 = rho.diag().sum();
                assert!((tr - C64::new(1.0, 0.0)).norm() < 1e-12);
                let (vals, _) = crate::linalg::herm_eig(&rho);
                assert!(vals[0] > -1e-12);
                // basis functions of the node on its sites
                let phi = s.expand(n);
                let prim = phi.t().dot(&rho).dot(&phi.mapv(|z| z.conj()));
                let dense = partial_trace(&v, l, t.leaf_set(n));
                assert!(max_abs_diff(&prim, &dense) < 1e-10, "node {n}");
            }
        }
    }
    let t = Arc::new(binary_tree(4, &[2]).unwrap());
    assert!(matches!(random_state(&t, 0).node_density_matrix(0), Err(Error::Domain(_))));
}

fn singlet_state() -> MlState {
    let t = Arc::new(binary_tree(2, &[]).unwrap());
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut root = Array2::zeros((1, 4));
    root[[0, 1]] = C64::new(r, 0.0);
    root[[0, 2]] = C64::new(-r, 0.0);
    MlState::from_tensors(t, vec![Some(root), None, None]).unwrap()
}

#[test]
fn singlet_leaves_are_maximally_mixed() {
    let s = singlet_state();
    for leaf in [1, 2] {
        let rho = s.node_density_matrix(leaf).unwrap();
        let half = Array2::from_shape_fn((2, 2), |(i, j)| C64::new(if i == j { 0.5 } else { 0.0 }, 0.0));
        assert!(max_abs_diff(&rho, &half) < 1e-15);
    }
}

#[test]
fn product_states_are_pure_at_every_node() {
    let t = Arc::new(binary_tree(8, &[3, 3]).unwrap());
    let p = product_state(&t, &[[0.3, -0.2, 0.9]; 8]).unwrap();
    for n in 1..t.len() {
        let (vals, _) = crate::linalg::herm_eig(&p.node_density_matrix(n).unwrap());
        assert!((vals.last().unwrap() - 1.0).abs() < 1e-12);
        assert!(vals.iter().rev().skip(1).all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn overlaps_match_dense() {
    let t = Arc::new(binary_tree(8, &[3, 4]).unwrap());
    let a = random_state(&t, 1);
    let b = random_state(&t, 2);
    let (va, vb) = (a.to_statevector().unwrap(), b.to_statevector().unwrap());
    let dense: C64 = va.iter().zip(vb.iter()).map(|(x, y)| x.conj() * y).sum();
    assert!((a.overlap(&b).unwrap() - dense).norm() < 1e-12);
    assert!((a.overlap(&a).unwrap() - C64::new(1.0, 0.0)).norm() < 1e-12);
}

#[test]
fn orthonormalize_restores_orthonormal_rows() {
    let t = Arc::new(binary_tree(8, &[3, 3]).unwrap());
    let mut s = random_state(&t, 5);
    for n in 1..t.len() {
        if let Some(a) = &mut s.tensors[n] {
            a.mapv_inplace(|z| z * C64::new(1.1, 0.2));
            a[[0, 0]] += C64::new(0.3, 0.0);
        }
    }
    let skewed = s.to_statevector().unwrap();
    s.orthonormalize();
    assert!(s.orthonormality_check() < 1e-13);
    // same ray as before
    let after = s.to_statevector().unwrap();
    let ov: C64 = skewed.iter().zip(after.iter()).map(|(x, y)| x.conj() * y).sum();
    let nrm: f64 = skewed.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    assert!((ov.norm() / nrm - 1.0).abs() < 1e-12);
}

#[test]
fn gauge_change_keeps_dense_vector() {
    let t = Arc::new(binary_tree(4, &[3]).unwrap());
    let mut s = random_state(&t, 2);
    let v0 = s.to_statevector().unwrap();
    // scale a child tensor and compensate in the root: same wavefunction
    let n = t.children(0)[0];
    let scale = Array2::from_shape_fn((3, 3), |(i, j)| C64::new(if i == j { 1.0 + i as f64 } else { 0.1 }, 0.0));
    let a = s.tensor(n).clone();
    *s.tensor_mut(n) = scale.dot(&a);
    // root coefficients in the new basis: solve scale^T c' = c on slot 0
    let sc = crate::linalg::to_nalgebra(&scale.t().to_owned());
    let sinv = crate::linalg::from_nalgebra(&sc.try_inverse().unwrap());
    let dims = s.child_dims(0);
    let root = mode_product(s.tensor(0), &dims, 0, sinv.view());
    *s.tensor_mut(0) = root;
    s.orthonormalize();
    let v1 = s.to_statevector().unwrap();
    assert!(v0.iter().zip(v1.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
}

#[test]
fn scaled_row_deviation() {
    let t = Arc::new(binary_tree(4, &[3]).unwrap());
    let mut s = random_state(&t, 1);
    let n = t.children(0)[1];
    s.tensor_mut(n).row_mut(1).mapv_inplace(|z| z * 1.5);
    assert!((s.orthonormality_check() - (1.5f64 * 1.5 - 1.0)).abs() < 1e-12);
}

#[test]
fn dense_vector_capacity_guard() {
    let t = Arc::new(binary_tree(32, &[2, 2, 2, 2]).unwrap());
    let s = random_state(&t, 0);
    assert!(matches!(s.to_statevector(), Err(Error::Capacity(_))));
}

#[test]
fn sites_outside_the_tree_are_rejected() {
    let t = Arc::new(binary_tree(4, &[]).unwrap());
    let s = random_state(&t, 0);
    let h = build_sr_tfim(8, 1.0, 1.0, 0.0).unwrap();
    assert!(matches!(s.expectation(&h), Err(Error::Consistency(_))));
    assert!(matches!(upward_pass(&s, &h), Err(Error::Consistency(_))));
}

#[test]
fn stale_cache_is_detected() {
    let t = Arc::new(binary_tree(4, &[]).unwrap());
    let mut s = random_state(&t, 0);
    let h = build_sr_tfim(4, 1.0, 1.0, 0.0).unwrap();
    let cache = upward_pass(&s, &h).unwrap();
    s.tensor_mut(0)[[0, 0]] += C64::new(1e-3, 0.0);
    assert!(matches!(mean_field_matrices(&s, &cache, 1), Err(Error::Consistency(_))));
}

#[test]
fn identity_term_cache_is_identity() {
    let t = Arc::new(binary_tree(4, &[3]).unwrap());
    let s = random_state(&t, 0);
    let h = SumOfProducts::new(4, vec![ProductTerm::new(1.0, [])]).unwrap();
    let cache = upward_pass(&s, &h).unwrap();
    for n in 0..t.len() {
        let m = cache.matrix(0, n);
        assert!(max_abs_diff(&m, &crate::linalg::identity(t.dim(n))) == 0.0);
    }
    assert!((s.expectation(&h).unwrap() - 1.0).abs() < 1e-14);
    // the identity's mean field is the hole density, with unit trace
    for n in 1..t.len() {
        let f = mean_field_matrices(&s, &cache, n).unwrap();
        let tr: C64 = f[0].diag().sum();
        assert!((tr.re - 1.0).abs() < 1e-12);
    }
}

#[test]
fn single_z_on_all_up() {
    let t = Arc::new(binary_tree(4, &[2]).unwrap());
    let up = product_state(&t, &[[0.0, 0.0, 1.0]; 4]).unwrap();
    let h = SumOfProducts::new(4, vec![ProductTerm::new(1.0, [(3, SiteOperator::Z)])]).unwrap();
    let cache = upward_pass(&up, &h).unwrap();
    assert!((cache.matrix(0, 0)[[0, 0]] - C64::new(1.0, 0.0)).norm() < 1e-15);
}

#[test]
fn variance_is_non_negative() {
    let t = Arc::new(binary_tree(4, &[3]).unwrap());
    let h = build_sr_tfim(4, 1.0, 0.5, 0.1).unwrap();
    let hd = dense_hamiltonian(&h);
    for seed in 0..10 {
        let s = random_state(&t, seed);
        let v = s.to_statevector().unwrap();
        let hv = hd.dot(&v);
        let h2: f64 = hv.iter().map(|x| x.norm_sqr()).sum();
        let e = s.expectation(&h).unwrap();
        assert!(h2 - e * e >= -1e-9);
    }
}

#[test]
fn checkpoint_round_trip() {
    let t = Arc::new(binary_tree(8, &[3, 3]).unwrap());
    let mut s = random_state(&t, 9);
    s.set_step(42);
    let mut buf = Vec::new();
    write_checkpoint(&s, &mut buf).unwrap();
    let back = read_checkpoint(&t, &mut buf.as_slice()).unwrap();
    assert_eq!(back, s);
    assert_eq!(back.step(), 42);
    let other = Arc::new(binary_tree(8, &[3, 4]).unwrap());
    assert!(matches!(read_checkpoint(&other, &mut buf.as_slice()), Err(Error::Checkpoint(_))));
    let cut = &buf[..buf.len() - 5];
    assert!(matches!(read_checkpoint(&t, &mut &cut[..]), Err(Error::Checkpoint(_))));
}

#[test]
fn tfim_2d_on_grid_tree() {
    let t = Arc::new(grid_tree_2d(3, 3, &[4]).unwrap());
    let h = build_tfim_2d(3, 3, 1.0, 3.0, 0.01).unwrap();
    let s = random_state(&t, 6);
    let hd = dense_hamiltonian(&h);
    let e = s.expectation(&h).unwrap();
    assert!((e - expect_dense(&hd, &s.to_statevector().unwrap()).re).abs() < 1e-10);
}
