//! CSV tables behind the standard plots.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use spinml_core::relax::TRACE_HEADER;

use crate::error::Result;
use crate::run::RunResults;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Figure {
    /// `model,L,seed,E0,E0_per_spin,delta_e_rel`, one row per realization.
    EnergyVsL,
    /// The trace columns prefixed with `seed`.
    Convergence,
    /// `axis,i,j,r,mean,stderr` over the realizations.
    Correlations,
    /// `l_s,mean,stderr`.
    Entropy,
}

impl Figure {
    pub fn file_name(self) -> &'static str {
        match self {
            Figure::EnergyVsL => "energy_vs_L.csv",
            Figure::Convergence => "convergence.csv",
            Figure::Correlations => "correlations.csv",
            Figure::Entropy => "entropy.csv",
        }
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Writes one figure table into `dir` and returns its path. Figures other
/// than `energy_vs_L` use the first result set only.
pub fn emit_figure_data(results: &[RunResults], figure: Figure, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(figure.file_name());
    let mut w = BufWriter::new(File::create(&path)?);
    match figure {
        Figure::EnergyVsL => {
            writeln!(w, "model,L,seed,E0,E0_per_spin,delta_e_rel")?;
            for res in results {
                for r in &res.realizations {
                    let d = r.comparison.as_ref().map_or(String::new(), |c| format!("{:.6e}", c.delta_e_rel));
                    let l = res.num_sites;
                    writeln!(w, "{},{l},{},{:.16e},{:.16e},{d}", res.model, r.seed, r.energy, r.energy / l as f64)?;
                }
            }
        }
        Figure::Convergence => {
            writeln!(w, "seed,{TRACE_HEADER}")?;
            for r in results.iter().take(1).flat_map(|res| &res.realizations) {
                for row in &r.trace.rows {
                    writeln!(w, "{},{}", r.seed, row.csv_line())?;
                }
            }
        }
        Figure::Correlations => {
            writeln!(w, "axis,i,j,r,mean,stderr")?;
            if let Some(res) = results.first() {
                let first = res.realizations.first().map(|r| r.observables.correlations.clone()).unwrap_or_default();
                for (k, c) in first.iter().enumerate() {
                    for (p, &(i, j, _)) in c.pairs.iter().enumerate() {
                        let xs: Vec<f64> =
                            res.realizations.iter().map(|r| r.observables.correlations[k].pairs[p].2).collect();
                        let (m, s) = mean_stderr(&xs);
                        writeln!(w, "{},{i},{j},{},{m:.16e},{s:.16e}", c.axis.label(), j - i)?;
                    }
                }
            }
        }
        Figure::Entropy => {
            writeln!(w, "l_s,mean,stderr")?;
            if let Some(e) = results.first().and_then(|r| r.aggregates.entropy.as_ref()) {
                for (k, (m, s)) in e.mean.iter().zip(&e.stderr).enumerate() {
                    writeln!(w, "{},{m:.16e},{s:.16e}", k + 1)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(path)
}
