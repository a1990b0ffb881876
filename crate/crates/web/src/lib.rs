//! Browser bindings: relax a small chain, diagonalize it exactly, and build
//! trees. Inputs and outputs are JSON strings so the page stays plain JS.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use spinml_core::model::ModelSpec;
use spinml_core::observables::{all_correlations, entropy_profile, Axis};
use spinml_core::oracle::ed_ground_state;
use spinml_core::relax::{relax, RelaxConfig};
use spinml_core::state::random_state;
use spinml_core::tree::{binary_tree, serialize_tree};
use wasm_bindgen::prelude::*;

/// ED is dense in 2^L; keep the tab responsive.
pub const MAX_ED_SITES: usize = 14;
pub const MAX_RELAX_STEPS: usize = 400;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RelaxRequest {
    model: ModelSpec,
    spf_per_layer: Vec<usize>,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize)]
struct RelaxReply {
    energy: f64,
    converged: bool,
    parameters: usize,
    trace: Vec<f64>,
    entropy: Vec<f64>,
    correlation_x: Vec<f64>,
}

#[derive(Serialize)]
struct ExactReply {
    energy: f64,
    gap: Option<f64>,
    degenerate: bool,
    entropy: Vec<f64>,
    correlation_x: Vec<f64>,
}

#[derive(Serialize)]
struct TreeReply {
    sites: usize,
    nodes: usize,
    parameters: usize,
    document: String,
}

fn model_of(text: &str) -> Result<ModelSpec, String> {
    serde_json::from_str(text).map_err(|e| format!("model: {e}"))
}

pub fn relax_json(request: &str) -> Result<String, String> {
    let req: RelaxRequest = serde_json::from_str(request).map_err(|e| format!("request: {e}"))?;
    let h = req.model.build().map_err(|e| e.to_string())?;
    let tree = Arc::new(binary_tree(h.num_sites(), &req.spf_per_layer).map_err(|e| e.to_string())?);
    let mut state = random_state(&tree, req.seed);
    let cfg = RelaxConfig { max_steps: MAX_RELAX_STEPS, seed: req.seed, ..RelaxConfig::default() };
    let out = relax(&mut state, &h, &cfg, None).map_err(|e| e.to_string())?;
    let entropy = entropy_profile(&state).map_err(|e| e.to_string())?.values;
    let corr = all_correlations(&state, Axis::X, false).map_err(|e| e.to_string())?;
    let reply = RelaxReply {
        energy: out.energy,
        converged: out.trace.converged,
        parameters: tree.num_parameters(),
        trace: out.trace.rows.iter().map(|r| r.energy).collect(),
        entropy,
        correlation_x: corr.profile.unwrap_or_default(),
    };
    Ok(serde_json::to_string(&reply).expect("reply serializes"))
}

pub fn exact_json(model: &str) -> Result<String, String> {
    let spec = model_of(model)?;
    if spec.num_sites() > MAX_ED_SITES {
        return Err(format!("exact diagonalization is limited to {MAX_ED_SITES} sites here"));
    }
    let h = spec.build().map_err(|e| e.to_string())?;
    let levels = ed_ground_state(&h, 2).map_err(|e| e.to_string())?;
    let gs = &levels[0];
    let corr = all_correlations(&gs.state, Axis::X, false).map_err(|e| e.to_string())?;
    let reply = ExactReply {
        energy: gs.energy,
        gap: levels.get(1).map(|l| l.energy - gs.energy),
        degenerate: gs.degenerate,
        entropy: entropy_profile(&gs.state).map_err(|e| e.to_string())?.values,
        correlation_x: corr.profile.unwrap_or_default(),
    };
    Ok(serde_json::to_string(&reply).expect("reply serializes"))
}

pub fn tree_json(num_sites: usize, spf_per_layer: &str) -> Result<String, String> {
    let spf: Vec<usize> = serde_json::from_str(spf_per_layer).map_err(|e| format!("spf_per_layer: {e}"))?;
    let tree = binary_tree(num_sites, &spf).map_err(|e| e.to_string())?;
    let reply = TreeReply {
        sites: tree.num_sites(),
        nodes: tree.len(),
        parameters: tree.num_parameters(),
        document: serialize_tree(&tree),
    };
    Ok(serde_json::to_string(&reply).expect("reply serializes"))
}

#[wasm_bindgen]
pub fn relax_chain(request: &str) -> Result<String, JsError> {
    relax_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn exact_chain(model: &str) -> Result<String, JsError> {
    exact_json(model).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn build_tree(num_sites: usize, spf_per_layer: &str) -> Result<String, JsError> {
    tree_json(num_sites, spf_per_layer).map_err(|e| JsError::new(&e))
}
