//! Ready-made configurations for the standard benchmark runs.

use std::path::PathBuf;

use spinml_core::model::ModelSpec;
use spinml_core::observables::{Axis, ObservableRequests};
use spinml_core::relax::RelaxConfig;

use crate::config::{Ensemble, InitialState, RunConfig, TreeChoice};

pub const PRESETS: &[&str] =
    &["sr_tfim_16", "lr_tfim_16", "xysg_16", "sdrg_16", "tfim_3x3", "sr_tfim_128", "tfim_9x9"];

fn base(model: ModelSpec, tree: TreeChoice, name: &str) -> RunConfig {
    RunConfig {
        model,
        tree,
        relax: RelaxConfig::default(),
        initial: InitialState::Random,
        ensemble: Ensemble { num_realizations: 1, base_seed: 1 },
        observables: ObservableRequests::default(),
        output: PathBuf::from("out").join(name),
        checkpoint_every: 0,
    }
}

pub fn preset(name: &str) -> Option<RunConfig> {
    let binary = |m: &[usize]| TreeChoice::Binary { spf_per_layer: m.to_vec() };
    let cfg = match name {
        "sr_tfim_16" => {
            let mut c = base(ModelSpec::SrTfim { l: 16, j: 1.0, h_x: 1.0, h_z: 0.01 }, binary(&[6, 12]), name);
            c.observables = ObservableRequests {
                first_site_correlations: vec![Axis::Z],
                entropy: true,
                ..Default::default()
            };
            c
        }
        "lr_tfim_16" => {
            let model = ModelSpec::LrTfim { l: 16, j: 1.0, h_x: 1.0, h_z: 0.0, alpha: 3.0 };
            let mut c = base(model, binary(&[16, 16]), name);
            c.observables = ObservableRequests {
                first_site_correlations: vec![Axis::Z],
                entropy: true,
                ..Default::default()
            };
            c
        }
        "xysg_16" => {
            let mut c = base(ModelSpec::Xysg { l: 16, alpha: 3.0, seed: 0 }, binary(&[32, 16]), name);
            c.ensemble = Ensemble { num_realizations: 10, base_seed: 0 };
            c.observables = ObservableRequests { correlations: vec![Axis::X], entropy: true, ..Default::default() };
            c
        }
        "sdrg_16" => {
            let groups = vec![(1..=6).collect(), (7..=10).collect(), (11..=16).collect()];
            let tree = TreeChoice::ModeCombination { groups, m: vec![8, 16, 8] };
            let mut c = base(ModelSpec::Sdrg { l: 16, j0: 1.0 }, tree, name);
            c.initial = InitialState::Product { direction: [1.0, 0.3, 0.2] };
            c.relax.energy_tol = 1e-14;
            c.relax.max_steps = 400;
            c.observables = ObservableRequests { correlations: vec![Axis::X], entropy: true, ..Default::default() };
            c
        }
        "tfim_3x3" => {
            let model = ModelSpec::SrTfim2d { nx: 3, ny: 3, j: 1.0, h_x: 3.0, h_z: 0.01 };
            let mut c = base(model, TreeChoice::Grid { spf_per_layer: vec![8] }, name);
            c.observables = ObservableRequests { correlations: vec![Axis::Z], ..Default::default() };
            c
        }
        "sr_tfim_128" => {
            let model = ModelSpec::SrTfim { l: 128, j: 1.0, h_x: 1.0, h_z: 0.01 };
            let mut c = base(model, binary(&[6, 6, 6, 6, 12]), name);
            c.observables = ObservableRequests { first_site_correlations: vec![Axis::Z], ..Default::default() };
            c
        }
        "tfim_9x9" => {
            let model = ModelSpec::SrTfim2d { nx: 9, ny: 9, j: 1.0, h_x: 3.0, h_z: 0.01 };
            base(model, TreeChoice::Grid { spf_per_layer: vec![12, 12, 8] }, name)
        }
        _ => return None,
    };
    Some(cfg)
}
