//! Relaxation runs over disorder ensembles, ED comparison and result files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spinml_core::krylov::LanczosConfig;
use spinml_core::model::SumOfProducts;
use spinml_core::observables::{
    evaluate, mean_profiles, relative_error, write_correlations_csv, write_entropy_csv, Axis, CorrelationResult,
    EntropyProfile, ObservableReport, ObservableRequests, Summary,
};
use spinml_core::oracle::{ed_ground_state, ed_ground_state_with, DenseGroundState, MAX_ED_SITES};
use spinml_core::relax::{relax_with, ConvergenceTrace, FileObserver};
use spinml_core::state::{product_state, random_state, write_checkpoint, MlState};
use spinml_core::tree::TreeSpec;

use crate::config::{InitialState, RunConfig};
use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub compare_ed: bool,
    /// Worker threads for independent realizations; 0 uses every core.
    pub jobs: usize,
}

/// ML against ED for one realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: u64,
    pub e_ml: f64,
    pub e_ed: f64,
    pub delta_e_rel: f64,
    /// The ED ground level is degenerate; the ED reference state is then the
    /// ML state's image in the ground manifold and entropies are flagged.
    pub degenerate: bool,
    pub max_dc: Option<f64>,
    pub max_ds: Option<f64>,
    /// Per cut, the `[min, max]` entropy over the ED ground-manifold vectors
    /// at hand (the reference state and every Lanczos vector of the level).
    pub entropy_range: Option<Vec<[f64; 2]>>,
    pub ed_observables: ObservableReport,
}

impl Comparison {
    pub const CSV_HEADER: &'static str = "seed,e_ml,e_ed,delta_e_rel,max_dc,max_ds,degenerate";

    pub fn csv_line(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6e}"));
        format!(
            "{},{:.16e},{:.16e},{:.6e},{},{},{}",
            self.seed,
            self.e_ml,
            self.e_ed,
            self.delta_e_rel,
            opt(self.max_dc),
            opt(self.max_ds),
            self.degenerate
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Realization {
    pub seed: u64,
    pub energy: f64,
    pub converged: bool,
    pub trace: ConvergenceTrace,
    pub observables: ObservableReport,
    pub comparison: Option<Comparison>,
    #[serde(skip)]
    pub state: Option<MlState>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl MeanStderr {
    pub fn of(samples: &[Vec<f64>]) -> Self {
        let mean = mean_profiles(samples);
        let n = samples.len();
        let stderr = (0..mean.len())
            .map(|k| {
                if n < 2 {
                    return 0.0;
                }
                let var = samples.iter().map(|s| (s[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            })
            .collect();
        Self { mean, stderr }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub energy: MeanStderr,
    /// Distance profiles `C̄(r)` per axis (all-pairs requests only).
    pub correlation_profiles: Vec<(Axis, MeanStderr)>,
    pub entropy: Option<MeanStderr>,
    /// The same averages over the ED reference states, when compared.
    pub ed_correlation_profiles: Vec<(Axis, MeanStderr)>,
    pub ed_entropy: Option<MeanStderr>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResults {
    pub model: String,
    pub num_sites: usize,
    pub realizations: Vec<Realization>,
    pub aggregates: Aggregates,
}

impl RunResults {
    pub fn seeds(&self) -> Vec<u64> {
        self.realizations.iter().map(|r| r.seed).collect()
    }

    pub fn unconverged(&self) -> Vec<u64> {
        self.realizations.iter().filter(|r| !r.converged).map(|r| r.seed).collect()
    }

    pub fn summary(&self) -> Summary {
        let e0 = self.aggregates.energy.mean[0];
        let delta = self
            .realizations
            .iter()
            .map(|r| r.comparison.as_ref().map(|c| c.delta_e_rel))
            .collect::<Option<Vec<_>>>()
            .map(|d| d.into_iter().fold(0.0, f64::max));
        Summary {
            model: self.model.clone(),
            seeds: self.seeds(),
            e0,
            e0_per_spin: e0 / self.num_sites as f64,
            delta_e_rel: delta,
            entropy_profile: self.aggregates.entropy.as_ref().map(|e| e.mean.clone()),
            correlation_profile: self.aggregates.correlation_profiles.first().map(|c| c.1.mean.clone()),
            unverified: delta.is_none(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(RESULTS_FILE))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", dir.display())))
    }
}

pub const RESULTS_FILE: &str = "results.json";
pub const SUMMARY_FILE: &str = "summary.json";

fn initial_state(cfg: &RunConfig, tree: &Arc<TreeSpec>, seed: u64) -> Result<MlState> {
    Ok(match cfg.initial {
        InitialState::Random => random_state(tree, seed),
        InitialState::Product { direction } => product_state(tree, &vec![direction; tree.num_sites()])?,
    })
}

fn ed_reference(h: &SumOfProducts, ml: &MlState) -> Result<(Vec<DenseGroundState>, DenseGroundState)> {
    let levels = ed_ground_state(h, 2)?;
    if !levels[0].degenerate {
        let first = levels[0].clone();
        return Ok((levels, first));
    }
    let v = ml.to_statevector()?.to_vec();
    let seeded = ed_ground_state_with(h, 1, &LanczosConfig::default(), Some(&v))?.remove(0);
    Ok((levels, seeded))
}

fn max_correlation_gap(a: &[CorrelationResult], b: &[CorrelationResult]) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.pairs.iter().zip(&y.pairs) {
            worst = Some(worst.unwrap_or(0.0).max((p.2 - q.2).abs()));
        }
    }
    worst
}

/// Compares a converged state with exact diagonalization of `h`.
pub fn compare_state(
    h: &SumOfProducts,
    ml: &MlState,
    e_ml: f64,
    seed: u64,
    ml_obs: &ObservableReport,
    req: &ObservableRequests,
) -> Result<Comparison> {
    if h.num_sites() > MAX_ED_SITES {
        return Err(spinml_core::Error::Capacity(format!(
            "ED comparison needs L <= {MAX_ED_SITES}, got {}",
            h.num_sites()
        ))
        .into());
    }
    let (levels, reference) = ed_reference(h, ml)?;
    let e_ed = levels[0].energy;
    let ed_obs = evaluate(&reference.state, req)?;
    let max_dc = max_correlation_gap(&ml_obs.correlations, &ed_obs.correlations);
    let (max_ds, entropy_range) = match (&ml_obs.entropy, &ed_obs.entropy) {
        (Some(a), Some(b)) => {
            let gap = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let mut profiles: Vec<EntropyProfile> = vec![b.clone()];
            for lv in levels.iter().filter(|lv| lv.degenerate && levels[0].degenerate) {
                profiles.push(spinml_core::observables::entropy_profile(&lv.state)?);
            }
            let range = (0..b.values.len())
                .map(|k| {
                    let vals = profiles.iter().map(|p| p.values[k]);
                    [vals.clone().fold(f64::INFINITY, f64::min), vals.fold(f64::NEG_INFINITY, f64::max)]
                })
                .collect();
            (Some(gap), Some(range))
        }
        _ => (None, None),
    };
    Ok(Comparison {
        seed,
        e_ml,
        e_ed,
        delta_e_rel: relative_error(e_ml, e_ed)?,
        degenerate: levels[0].degenerate,
        max_dc,
        max_ds,
        entropy_range,
        ed_observables: ed_obs,
    })
}

fn path_for(dir: &Path, stem: &str, seed: u64, ext: &str) -> PathBuf {
    dir.join(format!("{stem}_seed{seed}.{ext}"))
}

fn run_one(cfg: &RunConfig, tree: &Arc<TreeSpec>, seed: u64, opts: RunOptions) -> Result<Realization> {
    let h = cfg.model.with_seed(seed).build()?;
    let mut state = initial_state(cfg, tree, seed)?;
    let dir = &cfg.output;
    let ckpt = (cfg.checkpoint_every > 0).then(|| (path_for(dir, "state", seed, "mlstate"), cfg.checkpoint_every));
    let mut observer = FileObserver::new(Some(path_for(dir, "trace", seed, "csv")), ckpt)?;
    let mut relax_cfg = cfg.relax.clone();
    relax_cfg.seed = seed;
    let out = relax_with(&mut state, &h, &relax_cfg, None, &mut observer)?;
    drop(observer);

    let mut w = BufWriter::new(File::create(path_for(dir, "state", seed, "mlstate"))?);
    write_checkpoint(&state, &mut w)?;
    w.flush()?;

    let observables = evaluate(&state, &cfg.observables)?;
    if !observables.correlations.is_empty() {
        let mut w = BufWriter::new(File::create(path_for(dir, "correlations", seed, "csv"))?);
        write_correlations_csv(&mut w, &observables.correlations)?;
    }
    if let Some(p) = &observables.entropy {
        let mut w = BufWriter::new(File::create(path_for(dir, "entropy", seed, "csv"))?);
        write_entropy_csv(&mut w, p)?;
    }
    let comparison = if opts.compare_ed {
        Some(compare_state(&h, &state, out.energy, seed, &observables, &cfg.observables)?)
    } else {
        None
    };
    Ok(Realization {
        seed,
        energy: out.energy,
        converged: out.trace.converged,
        trace: out.trace,
        observables,
        comparison,
        state: Some(state),
    })
}

fn profiles_by_axis<'a>(reports: impl Iterator<Item = &'a ObservableReport> + Clone) -> Vec<(Axis, MeanStderr)> {
    let Some(first) = reports.clone().next() else { return Vec::new() };
    first
        .correlations
        .iter()
        .filter(|c| c.profile.is_some())
        .map(|c| {
            let samples: Vec<Vec<f64>> = reports
                .clone()
                .filter_map(|r| r.correlations.iter().find(|d| d.axis == c.axis && d.profile.is_some()))
                .map(|d| d.profile.clone().expect("filtered"))
                .collect();
            (c.axis, MeanStderr::of(&samples))
        })
        .collect()
}

fn entropy_mean<'a>(reports: impl Iterator<Item = &'a ObservableReport>) -> Option<MeanStderr> {
    let samples: Option<Vec<Vec<f64>>> = reports.map(|r| r.entropy.as_ref().map(|e| e.values.clone())).collect();
    samples.filter(|s| !s.is_empty()).map(|s| MeanStderr::of(&s))
}

pub fn aggregate(realizations: &[Realization]) -> Aggregates {
    let energies: Vec<Vec<f64>> = realizations.iter().map(|r| vec![r.energy]).collect();
    let ml = realizations.iter().map(|r| &r.observables);
    let compared: Option<Vec<&ObservableReport>> =
        realizations.iter().map(|r| r.comparison.as_ref().map(|c| &c.ed_observables)).collect();
    let (ed_correlation_profiles, ed_entropy) = match &compared {
        Some(eds) => (profiles_by_axis(eds.iter().copied()), entropy_mean(eds.iter().copied())),
        None => (Vec::new(), None),
    };
    Aggregates {
        energy: MeanStderr::of(&energies),
        correlation_profiles: profiles_by_axis(ml.clone()),
        entropy: entropy_mean(ml),
        ed_correlation_profiles,
        ed_entropy,
    }
}

fn write_mean_csv(path: &Path, header: &str, first_index: usize, m: &MeanStderr) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header},mean,stderr")?;
    for (k, (a, b)) in m.mean.iter().zip(&m.stderr).enumerate() {
        writeln!(w, "{},{a:.16e},{b:.16e}", k + first_index)?;
    }
    Ok(())
}

fn write_outputs(dir: &Path, results: &RunResults) -> Result<()> {
    let agg = &results.aggregates;
    for (axis, m) in &agg.correlation_profiles {
        write_mean_csv(&dir.join(format!("correlation_profile_{}.csv", axis.label())), "r", 1, m)?;
    }
    if let Some(e) = &agg.entropy {
        write_mean_csv(&dir.join("entropy_mean.csv"), "l_s", 1, e)?;
    }
    let compared: Vec<&Comparison> = results.realizations.iter().filter_map(|r| r.comparison.as_ref()).collect();
    if !compared.is_empty() {
        let mut w = BufWriter::new(File::create(dir.join("compare.csv"))?);
        writeln!(w, "{}", Comparison::CSV_HEADER)?;
        for c in compared {
            writeln!(w, "{}", c.csv_line())?;
        }
    }
    std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&results.summary()).expect("serializes"))?;
    std::fs::write(dir.join(RESULTS_FILE), serde_json::to_string_pretty(results).expect("serializes"))?;
    Ok(())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

/// Runs every realization of `cfg`, writes all outputs into `cfg.output` and
/// fails with [`HarnessError::NonConverged`] if any realization did not
/// converge (the results are written first).
pub fn run_relaxation(cfg: &RunConfig, opts: RunOptions) -> Result<RunResults> {
    let results = run_relaxation_unchecked(cfg, opts)?;
    let bad = results.unconverged();
    if !bad.is_empty() {
        return Err(HarnessError::NonConverged(bad));
    }
    Ok(results)
}

/// [`run_relaxation`] without the convergence verdict.
pub fn run_relaxation_unchecked(cfg: &RunConfig, opts: RunOptions) -> Result<RunResults> {
    cfg.validate()?;
    let tree = Arc::new(cfg.build_tree()?);
    std::fs::create_dir_all(&cfg.output)?;
    let seeds = cfg.ensemble.seeds();
    let realizations: Vec<Realization> = pool(opts.jobs)?
        .install(|| seeds.par_iter().map(|&s| run_one(cfg, &tree, s, opts)).collect::<Result<_>>())?;
    let results = RunResults {
        model: cfg.model.name().to_string(),
        num_sites: cfg.model.num_sites(),
        aggregates: aggregate(&realizations),
        realizations,
    };
    write_outputs(&cfg.output, &results)?;
    Ok(results)
}

/// Relaxation plus ED comparison for every realization.
pub fn compare_with_ed(cfg: &RunConfig, jobs: usize) -> Result<Vec<Comparison>> {
    let results = run_relaxation_unchecked(cfg, RunOptions { compare_ed: true, jobs })?;
    Ok(results.realizations.into_iter().filter_map(|r| r.comparison).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdRecord {
    pub seed: Option<u64>,
    pub energies: Vec<f64>,
    pub degenerate: bool,
}

/// Exact diagonalization only: `.edstate` files plus `ed.json`.
pub fn run_ed(cfg: &RunConfig, states: usize, jobs: usize) -> Result<Vec<EdRecord>> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output)?;
    let seeds = if cfg.model.is_disordered() { cfg.ensemble.seeds() } else { vec![cfg.ensemble.base_seed] };
    let records = pool(jobs)?.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let h = cfg.model.with_seed(seed).build()?;
                let levels = ed_ground_state(&h, states.max(1))?;
                for (k, lv) in levels.iter().enumerate() {
                    let name = format!("ed_seed{seed}_level{k}.edstate");
                    let mut w = BufWriter::new(File::create(cfg.output.join(name))?);
                    spinml_core::oracle::write_edstate(lv, &mut w)?;
                }
                Ok(EdRecord {
                    seed: h.spec().and_then(|s| s.seed()),
                    energies: levels.iter().map(|l| l.energy).collect(),
                    degenerate: levels[0].degenerate,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    std::fs::write(cfg.output.join("ed.json"), serde_json::to_string_pretty(&records).expect("serializes"))?;
    Ok(records)
}
