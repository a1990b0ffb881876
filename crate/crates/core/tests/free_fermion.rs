//! Open transverse-field Ising chains map onto free fermions, whose ground
//! energy is minus the sum of the singular values of a bidiagonal matrix.
//! This gives the exact-diagonalization route an independent check.

use nalgebra::DMatrix;
use spinml_core::model::build_sr_tfim;
use spinml_core::oracle::ed_ground_state;

/// Ground energy of `-Σ J_i Z_i Z_{i+1} - Σ h_i X_i` on an open chain.
fn free_fermion_energy(couplings: &[f64], fields: &[f64]) -> f64 {
    let l = fields.len();
    let m = DMatrix::from_fn(l, l, |i, j| {
        if i == j {
            fields[i]
        } else if j == i + 1 {
            couplings[i]
        } else {
            0.0
        }
    });
    -m.singular_values().iter().sum::<f64>()
}

#[test]
fn two_site_closed_form() {
    let (j, h) = (0.7f64, 1.3f64);
    let want = -(4.0 * h * h + j * j).sqrt();
    assert!((free_fermion_energy(&[j], &[h, h]) - want).abs() < 1e-14);
}

#[test]
fn ed_matches_free_fermions() {
    for (l, h_x) in [(4, 1.0), (8, 1.0), (8, 0.45), (16, 1.0)] {
        let h = build_sr_tfim(l, 1.0, h_x, 0.0).unwrap();
        let ed = ed_ground_state(&h, 1).unwrap()[0].energy;
        let ff = free_fermion_energy(&vec![1.0; l - 1], &vec![h_x; l]);
        assert!((ed - ff).abs() < 1e-10, "L={l}: {ed} vs {ff}");
    }
}
