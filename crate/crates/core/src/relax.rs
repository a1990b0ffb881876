//! Ground and excited states of a tree wavefunction.
//!
//! Two drivers share one SPF update. `ImaginaryTime` moves every tensor along
//! the projected flow `-∂_τ Ψ = H Ψ`. `ImprovedRelaxation` alternates an exact
//! eigensolve for the root coefficients with a few such steps for the lower
//! tensors while the root is held fixed.
//!
//! For a non-root node with rows `A`, hole density `ρ` and energy gradient
//! `G` (with respect to `conj(A)`), one step is
//! `A ← A - dt · ρ_reg⁻¹ (G - G A^† A)` followed by re-orthonormalization.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::{krylov_lowest, LanczosConfig};
use crate::linalg::{is_finite, regularized_inverse};
use crate::model::SumOfProducts;
use crate::state::{write_checkpoint, Layout, MlState, Sweep};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxMode {
    ImaginaryTime,
    ImprovedRelaxation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigConfig {
    pub krylov_dim: usize,
    pub max_restarts: usize,
    pub tol: f64,
    /// 0 for the ground state, 1 for the first excited state, ...
    pub target_index: usize,
}

impl Default for EigConfig {
    fn default() -> Self {
        Self { krylov_dim: 32, max_restarts: 500, tol: 1e-12, target_index: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxConfig {
    pub mode: RelaxMode,
    /// Imaginary-time step; `None` means `0.1 / ‖H‖_est`.
    pub dt: Option<f64>,
    /// Outer iterations (improved relaxation) or steps (imaginary time).
    pub max_steps: usize,
    pub energy_tol: f64,
    pub reg_eps: f64,
    pub eig: EigConfig,
    /// Re-orthonormalize after every step; otherwise only once the drift
    /// exceeds 1e-10.
    pub reorthogonalize: bool,
    /// SPF steps per root eigensolve.
    pub substeps: usize,
    /// Halve `dt` on an energy increase and double it after a run of
    /// successful steps.
    pub adaptive_dt: bool,
    pub seed: u64,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        Self {
            mode: RelaxMode::ImprovedRelaxation,
            dt: None,
            max_steps: 2000,
            energy_tol: 1e-10,
            reg_eps: 1e-8,
            eig: EigConfig::default(),
            reorthogonalize: true,
            substeps: 5,
            adaptive_dt: true,
            seed: 0,
        }
    }
}

impl RelaxConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidModel(format!("relaxation setting {what}")));
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad("dt must be positive");
            }
        }
        if !(self.energy_tol > 0.0) {
            return bad("energy_tol must be positive");
        }
        if !(self.reg_eps > 0.0) {
            return bad("reg_eps must be positive");
        }
        if !(self.eig.tol > 0.0) || self.eig.krylov_dim < 4 {
            return bad("eig.tol must be positive and eig.krylov_dim at least 4");
        }
        if self.substeps == 0 && self.mode == RelaxMode::ImprovedRelaxation {
            return bad("substeps must be at least 1");
        }
        Ok(())
    }

    pub fn resolved_dt(&self, h: &SumOfProducts) -> f64 {
        self.dt.unwrap_or_else(|| 0.1 / h.norm_estimate().max(1e-300))
    }

    fn lanczos(&self) -> LanczosConfig {
        LanczosConfig {
            ncv: self.eig.krylov_dim,
            max_restarts: self.eig.max_restarts,
            tol: self.eig.tol,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub tau: f64,
    pub energy: f64,
    pub delta_e_rel: Option<f64>,
    pub ortho_dev: f64,
    pub krylov_iters: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    pub rejected_steps: usize,
}

pub const TRACE_HEADER: &str = "step,tau,energy,delta_e_rel,ortho_dev,krylov_iters";

impl TraceRow {
    pub fn csv_line(&self) -> String {
        let d = self.delta_e_rel.map_or(String::new(), |d| format!("{d:.16e}"));
        format!(
            "{},{:.16e},{:.16e},{},{:.6e},{}",
            self.step, self.tau, self.energy, d, self.ortho_dev, self.krylov_iters
        )
    }
}

impl ConvergenceTrace {
    pub fn final_energy(&self) -> Option<f64> {
        self.rows.last().map(|r| r.energy)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{}", r.csv_line())?;
        }
        Ok(())
    }
}

/// Receives every recorded step while a relaxation runs.
pub trait StepObserver {
    fn on_step(&mut self, state: &MlState, row: &TraceRow) -> Result<()>;
}

impl StepObserver for () {
    fn on_step(&mut self, _: &MlState, _: &TraceRow) -> Result<()> {
        Ok(())
    }
}

/// Streams the trace as CSV and writes `.mlstate` checkpoints every
/// `checkpoint_every` steps (overwriting one file).
pub struct FileObserver {
    csv: Option<BufWriter<File>>,
    checkpoint: Option<(PathBuf, u64)>,
}

impl FileObserver {
    pub fn new(csv_path: Option<PathBuf>, checkpoint: Option<(PathBuf, u64)>) -> Result<Self> {
        let csv = match csv_path {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(w, "{TRACE_HEADER}")?;
                Some(w)
            }
            None => None,
        };
        Ok(Self { csv, checkpoint })
    }
}

impl StepObserver for FileObserver {
    fn on_step(&mut self, state: &MlState, row: &TraceRow) -> Result<()> {
        if let Some(w) = self.csv.as_mut() {
            writeln!(w, "{}", row.csv_line())?;
            w.flush()?;
        }
        if let Some((path, every)) = &self.checkpoint {
            if *every > 0 && row.step % every == 0 {
                let tmp = path.with_extension("mlstate.tmp");
                let mut w = BufWriter::new(File::create(&tmp)?);
                write_checkpoint(state, &mut w)?;
                w.flush()?;
                drop(w);
                std::fs::rename(&tmp, path)?;
            }
        }
        Ok(())
    }
}

fn energy_of(layout: &Layout, state: &MlState, sw: &Sweep) -> f64 {
    layout.root_expectation(state, sw).re / state.norm_sqr()
}

/// SPF updates `-ρ_reg⁻¹ (1 - P) G` for every non-root internal node.
fn spf_updates(layout: &Layout, state: &MlState, sw: &Sweep, reg_eps: f64) -> Result<Vec<Option<Array2<C64>>>> {
    let tree = state.tree();
    let mut out = vec![None; tree.len()];
    for n in tree.internal_nodes().filter(|&n| n != 0) {
        let a = state.tensor(n);
        let g = layout.projected_gradient_source(state, sw, n);
        let ah = a.t().mapv(|z| z.conj());
        let pg = &g - &g.dot(&ah).dot(a);
        let rho = sw.hole_density(n).expect("downward pass done");
        let d = regularized_inverse(rho, reg_eps)?.dot(&pg);
        out[n] = Some(d);
    }
    Ok(out)
}

fn finish_step(state: &mut MlState, reorthogonalize: bool) -> Result<()> {
    if reorthogonalize || state.orthonormality_check() > 1e-10 {
        state.orthonormalize();
    } else {
        state.normalize();
    }
    let finite = state.tensors().iter().flatten().all(is_finite);
    if !finite || !(state.norm_sqr() > 0.0) {
        return Err(Error::StepFailure("non-finite tensors after an update; try a smaller dt".into()));
    }
    Ok(())
}

/// One explicit step of projected imaginary-time evolution for all tensors,
/// the root included.
pub fn imaginary_time_step(state: &mut MlState, layout: &Layout, dt: f64, reg_eps: f64) -> Result<()> {
    let mut sw = layout.upward(state);
    layout.downward_projected(state, &mut sw);
    let e = energy_of(layout, state, &sw);
    let updates = spf_updates(layout, state, &sw, reg_eps)?;
    let root = state.tensor(0).clone();
    let mut hr = layout.apply_root(state, &sw, &root);
    hr.scaled_add(C64::new(-e, 0.0), &root);
    apply_updates(state, &updates, dt);
    state.tensor_mut(0).scaled_add(C64::new(-dt, 0.0), &hr);
    finish_step(state, true)
}

fn apply_updates(state: &mut MlState, updates: &[Option<Array2<C64>>], dt: f64) {
    for (n, d) in updates.iter().enumerate() {
        if let Some(d) = d {
            state.tensor_mut(n).scaled_add(C64::new(-dt, 0.0), d);
        }
    }
}

/// The outcome of [`relax`].
#[derive(Clone, Debug)]
pub struct RelaxOutcome {
    pub energy: f64,
    pub trace: ConvergenceTrace,
}

/// Step-size bookkeeping shared by both drivers.
struct StepControl {
    dt: f64,
    dt_min: f64,
    dt_max: f64,
    streak: usize,
    adaptive: bool,
    rejected: usize,
}

const GROW_AFTER: usize = 4;
/// Weakly coupled modes relax on time scales far beyond `1/‖H‖`, so `dt` may
/// grow by this factor; rejected steps keep the energy monotone.
const MAX_GROWTH: f64 = 1e6;
/// Energy rise tolerated as roundoff before a step is rejected.
const RISE_TOL: f64 = 1e-11;

impl StepControl {
    fn new(dt: f64, adaptive: bool) -> Self {
        Self { dt, dt_min: dt * 1e-6, dt_max: dt * MAX_GROWTH, streak: 0, adaptive, rejected: 0 }
    }

    fn accept(&mut self) {
        self.streak += 1;
        if self.adaptive && self.streak >= GROW_AFTER {
            self.dt = (self.dt * 2.0).min(self.dt_max);
            self.streak = 0;
        }
    }

    fn reject(&mut self) -> Result<()> {
        self.rejected += 1;
        self.streak = 0;
        self.dt *= 0.5;
        if self.dt < self.dt_min {
            return Err(Error::StepFailure(format!(
                "energy keeps rising down to dt = {:e}; try a smaller dt or larger reg_eps",
                self.dt
            )));
        }
        Ok(())
    }
}

/// One accepted step at the current `dt`, retried with smaller steps while the
/// energy rises. Returns the step taken and the new energy with its sweep.
fn controlled_step(
    state: &mut MlState,
    layout: &Layout,
    cfg: &RelaxConfig,
    ctl: &mut StepControl,
    sw: &mut Sweep,
    energy: f64,
    move_root: bool,
) -> Result<(f64, f64)> {
    layout.downward_projected(state, sw);
    let updates = spf_updates(layout, state, sw, cfg.reg_eps)?;
    let root_dir = if move_root {
        let root = state.tensor(0).clone();
        let mut hr = layout.apply_root(state, sw, &root);
        hr.scaled_add(C64::new(-energy, 0.0), &root);
        Some(hr)
    } else {
        None
    };
    let saved: Vec<_> = state.tensors().to_vec();
    loop {
        let dt = ctl.dt;
        apply_updates(state, &updates, dt);
        if let Some(hr) = &root_dir {
            state.tensor_mut(0).scaled_add(C64::new(-dt, 0.0), hr);
        }
        let ok = finish_step(state, cfg.reorthogonalize);
        let new_sw = layout.upward(state);
        let e = energy_of(layout, state, &new_sw);
        if ok.is_ok() && e.is_finite() && (e <= energy + RISE_TOL || !cfg.adaptive_dt) {
            *sw = new_sw;
            ctl.accept();
            return Ok((dt, e));
        }
        let step = state.step();
        *state = MlState::from_tensors(state.tree().clone(), saved.clone())?;
        state.set_step(step);
        if !cfg.adaptive_dt {
            ok?;
            return Err(Error::StepFailure(format!("non-finite energy at dt = {dt:e}")));
        }
        ctl.reject()?;
    }
}

/// Runs the configured driver until the relative energy change stays below
/// `energy_tol` for three consecutive iterations or `max_steps` is reached.
/// `reference` fills the `delta_e_rel` column.
pub fn relax(state: &mut MlState, h: &SumOfProducts, cfg: &RelaxConfig, reference: Option<f64>) -> Result<RelaxOutcome> {
    relax_with(state, h, cfg, reference, &mut ())
}

pub fn relax_with(
    state: &mut MlState,
    h: &SumOfProducts,
    cfg: &RelaxConfig,
    reference: Option<f64>,
    observer: &mut dyn StepObserver,
) -> Result<RelaxOutcome> {
    cfg.validate()?;
    let layout = Layout::new(state.tree(), h)?;
    match cfg.mode {
        RelaxMode::ImaginaryTime => imaginary_time(state, &layout, h, cfg, reference, observer),
        RelaxMode::ImprovedRelaxation => improved(state, &layout, h, cfg, reference, observer),
    }
}

/// [`relax`] with the mode forced to improved relaxation.
pub fn improved_relaxation(state: &mut MlState, h: &SumOfProducts, cfg: &RelaxConfig) -> Result<(f64, ConvergenceTrace)> {
    let cfg = RelaxConfig { mode: RelaxMode::ImprovedRelaxation, ..cfg.clone() };
    let out = relax(state, h, &cfg, None)?;
    Ok((out.energy, out.trace))
}

fn rel_change(e: f64, prev: f64) -> f64 {
    (e - prev).abs() / e.abs().max(f64::MIN_POSITIVE)
}

fn row(step: u64, tau: f64, energy: f64, reference: Option<f64>, state: &MlState, krylov_iters: usize) -> TraceRow {
    TraceRow {
        step,
        tau,
        energy,
        delta_e_rel: reference.filter(|r| *r != 0.0).map(|r| (energy / r - 1.0).abs()),
        ortho_dev: state.orthonormality_check(),
        krylov_iters,
    }
}

const CONSECUTIVE: usize = 3;

fn imaginary_time(
    state: &mut MlState,
    layout: &Layout,
    h: &SumOfProducts,
    cfg: &RelaxConfig,
    reference: Option<f64>,
    observer: &mut dyn StepObserver,
) -> Result<RelaxOutcome> {
    finish_step(state, true)?;
    let mut ctl = StepControl::new(cfg.resolved_dt(h), cfg.adaptive_dt);
    let mut sw = layout.upward(state);
    let mut energy = energy_of(layout, state, &sw);
    let mut trace = ConvergenceTrace::default();
    let mut tau = 0.0;
    let r0 = row(state.step(), tau, energy, reference, state, 0);
    observer.on_step(state, &r0)?;
    trace.rows.push(r0);
    let mut quiet = 0;
    for _ in 0..cfg.max_steps {
        let (dt, e) = controlled_step(state, layout, cfg, &mut ctl, &mut sw, energy, true)?;
        tau += dt;
        state.set_step(state.step() + 1);
        quiet = if rel_change(e, energy) < cfg.energy_tol { quiet + 1 } else { 0 };
        energy = e;
        let r = row(state.step(), tau, energy, reference, state, 0);
        observer.on_step(state, &r)?;
        trace.rows.push(r);
        if quiet >= CONSECUTIVE {
            trace.converged = true;
            break;
        }
    }
    trace.rejected_steps = ctl.rejected;
    Ok(RelaxOutcome { energy, trace })
}

/// Replaces the root by the `target`-th eigenvector of the effective
/// Hamiltonian; returns the eigenvalue and the operator applications used.
fn solve_root(state: &mut MlState, layout: &Layout, sw: &Sweep, cfg: &RelaxConfig) -> Result<(f64, usize)> {
    let cols = state.tensor(0).ncols();
    let start: Vec<C64> = state.tensor(0).iter().copied().collect();
    let (pair, out) = {
        let st = &*state;
        krylov_lowest(
            |x: &[C64], y: &mut [C64]| {
                let v = Array2::from_shape_vec((1, cols), x.to_vec()).expect("row");
                let hv = layout.apply_root(st, sw, &v);
                y.copy_from_slice(hv.as_slice().expect("contiguous"));
            },
            cols,
            &cfg.lanczos(),
            cfg.eig.target_index,
            Some(&start),
        )?
    };
    *state.tensor_mut(0) = Array2::from_shape_vec((1, cols), pair.vector).expect("row");
    state.normalize();
    Ok((pair.value, out.matvecs))
}

fn improved(
    state: &mut MlState,
    layout: &Layout,
    h: &SumOfProducts,
    cfg: &RelaxConfig,
    reference: Option<f64>,
    observer: &mut dyn StepObserver,
) -> Result<RelaxOutcome> {
    finish_step(state, true)?;
    let mut ctl = StepControl::new(cfg.resolved_dt(h), cfg.adaptive_dt);
    let mut trace = ConvergenceTrace::default();
    let mut tau = 0.0;
    let mut prev: Option<f64> = None;
    let mut quiet = 0;
    let scale = h.norm_estimate().max(1.0);
    let mut energy = f64::NAN;
    let has_spfs = state.tree().internal_nodes().any(|n| n != 0);
    for _ in 0..cfg.max_steps.max(1) {
        let mut sw = layout.upward(state);
        let (e, matvecs) = solve_root(state, layout, &sw, cfg)?;
        energy = e;
        if let Some(p) = prev {
            // the root solve minimizes over a space that contains the previous
            // state, so the ground-state energy cannot rise
            if cfg.eig.target_index == 0 && energy > p + 1e-9 * scale {
                return Err(Error::Consistency(format!(
                    "energy rose from {p:.15e} to {energy:.15e} between outer iterations"
                )));
            }
            quiet = if rel_change(energy, p) < cfg.energy_tol { quiet + 1 } else { 0 };
        }
        prev = Some(energy);
        state.set_step(state.step() + 1);
        let r = row(state.step(), tau, energy, reference, state, matvecs);
        observer.on_step(state, &r)?;
        trace.rows.push(r);
        if quiet >= CONSECUTIVE || !has_spfs {
            trace.converged = true;
            break;
        }
        sw = layout.upward(state);
        let mut e_spf = energy_of(layout, state, &sw);
        for _ in 0..cfg.substeps {
            let (dt, e) = if cfg.eig.target_index == 0 {
                controlled_step(state, layout, cfg, &mut ctl, &mut sw, e_spf, false)?
            } else {
                // an excited root is a saddle of the energy, so the step is
                // taken without the descent test
                let plain = RelaxConfig { adaptive_dt: false, ..cfg.clone() };
                controlled_step(state, layout, &plain, &mut ctl, &mut sw, e_spf, false)?
            };
            tau += dt;
            e_spf = e;
        }
    }
    trace.rejected_steps = ctl.rejected;
    Ok(RelaxOutcome { energy, trace })
}
