//! The `.run.json` document that drives a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spinml_core::model::ModelSpec;
use spinml_core::observables::ObservableRequests;
use spinml_core::relax::RelaxConfig;
use spinml_core::tree::{binary_tree, grid_tree_2d, mode_combination_tree, parse_tree, validate, TreeSpec};

use crate::error::{HarnessError, Result};

pub const CONFIG_EXTENSION: &str = ".run.json";
pub const SEED_ENV: &str = "SPINML_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum TreeChoice {
    /// SPF counts listed from the root's children downward.
    Binary { spf_per_layer: Vec<usize> },
    Grid { spf_per_layer: Vec<usize> },
    ModeCombination { groups: Vec<Vec<usize>>, m: Vec<usize> },
    /// A `.tree.json` document, relative to the config file.
    File { path: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// Gaussian random tensors seeded with the realization seed.
    #[default]
    Random,
    /// Every spin along `direction` (a Bloch vector).
    Product { direction: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ensemble {
    pub num_realizations: usize,
    pub base_seed: u64,
}

impl Default for Ensemble {
    fn default() -> Self {
        Self { num_realizations: 1, base_seed: 0 }
    }
}

impl Ensemble {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.num_realizations as u64).map(|k| self.base_seed + k).collect()
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub tree: TreeChoice,
    #[serde(default)]
    pub relax: RelaxConfig,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub ensemble: Ensemble,
    #[serde(default)]
    pub observables: ObservableRequests,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Write a checkpoint every this many steps; 0 keeps only the final state.
    #[serde(default)]
    pub checkpoint_every: u64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("run config: {e}")))
    }

    /// Reads a config file; relative tree paths are resolved against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let TreeChoice::File { path: tree } = &mut cfg.tree {
            if tree.is_relative() {
                if let Some(dir) = path.parent() {
                    *tree = dir.join(&*tree);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// `SPINML_SEED`, when set, replaces the ensemble base seed.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.ensemble.base_seed = v
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble.num_realizations == 0 {
            return Err(HarnessError::Config("ensemble.num_realizations must be at least 1".into()));
        }
        if self.ensemble.base_seed.checked_add(self.ensemble.num_realizations as u64).is_none() {
            return Err(HarnessError::Config("seed range overflows".into()));
        }
        if let InitialState::Product { direction } = self.initial {
            if !(direction.iter().map(|x| x * x).sum::<f64>() > 0.0) {
                return Err(HarnessError::Config("product direction must be a nonzero vector".into()));
            }
        }
        self.relax.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.build_tree().map_err(|e| match e {
            HarnessError::Core(c) => HarnessError::Config(c.to_string()),
            other => other,
        })?;
        Ok(())
    }

    pub fn build_tree(&self) -> Result<TreeSpec> {
        let l = self.model.num_sites();
        let tree = match &self.tree {
            TreeChoice::Binary { spf_per_layer } => binary_tree(l, spf_per_layer)?,
            TreeChoice::Grid { spf_per_layer } => match self.model {
                ModelSpec::SrTfim2d { nx, ny, .. } => grid_tree_2d(nx, ny, spf_per_layer)?,
                _ => return Err(HarnessError::Config("the grid tree needs a 2D model".into())),
            },
            TreeChoice::ModeCombination { groups, m } => mode_combination_tree(l, groups, m)?,
            TreeChoice::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| HarnessError::Config(format!("cannot read tree {}: {e}", path.display())))?;
                let tree = parse_tree(&text)?;
                let problems = validate(&tree);
                if !problems.is_empty() {
                    return Err(HarnessError::Config(format!("tree {}: {}", path.display(), problems.join("; "))));
                }
                tree
            }
        };
        if tree.num_sites() != l {
            return Err(HarnessError::Config(format!("tree has {} sites, model has {l}", tree.num_sites())));
        }
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::parse(
            r#"{"model": {"model": "sr_tfim", "L": 8, "h_x": 1.0},
                "tree": {"builder": "binary", "spf_per_layer": [4, 4]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.ensemble.seeds(), vec![0]);
        assert_eq!(cfg.initial, InitialState::Random);
        assert_eq!(cfg.output, PathBuf::from("out"));
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let cases = [
            r#"{"model": {"model": "sr_tfim", "L": 8, "h_x": 1.0}, "tree": {"builder": "binary", "spf_per_layer": [4]}, "bogus": 1}"#,
            r#"{"model": {"model": "sr_tfim", "L": 6, "h_x": 1.0}, "tree": {"builder": "binary", "spf_per_layer": [4]}}"#,
            r#"{"model": {"model": "sr_tfim", "L": 8, "h_x": 1.0}, "tree": {"builder": "grid", "spf_per_layer": [4]}}"#,
            r#"{"model": {"model": "sr_tfim", "L": 8, "h_x": 1.0}, "tree": {"builder": "binary", "spf_per_layer": [4]}, "ensemble": {"num_realizations": 0}}"#,
            r#"{"model": {"model": "sr_tfim", "L": 8, "h_x": 1.0}, "tree": {"builder": "file", "path": "/nonexistent.tree.json"}}"#,
        ];
        for text in cases {
            let r = RunConfig::parse(text).and_then(|c| c.validate());
            assert!(matches!(r, Err(HarnessError::Config(_))), "{text}: {r:?}");
        }
    }

    #[test]
    fn tree_files_resolve_next_to_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let tree = binary_tree(4, &[]).unwrap();
        std::fs::write(dir.path().join("t.tree.json"), spinml_core::tree::serialize_tree(&tree)).unwrap();
        let cfg_path = dir.path().join("a.run.json");
        std::fs::write(
            &cfg_path,
            r#"{"model": {"model": "sr_tfim", "L": 4, "h_x": 1.0}, "tree": {"builder": "file", "path": "t.tree.json"}}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.build_tree().unwrap(), tree);
    }
}
