//! JSON cache of class weights keyed by `(m, tail_eps, R, K, kind, Nσ)`.

use serde_json::{json, Value};

use super::reduced::{ClassWeights, ReducedModel};
use crate::cache::CacheDir;
use crate::error::{Error, Result};
use crate::measure::ObservableKind;

const KIND: &str = "class-weights";

fn params(model: &ReducedModel, kind: ObservableKind, n_sigma: u64, k_min: u64) -> Value {
    json!({
        "m_bits": model.params.m.to_bits(),
        "tail_eps_bits": model.tail_eps.to_bits(),
        "r_bits": model.r.to_bits(),
        "k_min": k_min,
        "kind": kind.label(),
        "n_sigma": n_sigma,
    })
}

/// [`ReducedModel::class_weights`] through an optional cache directory.
pub fn class_weights_cached(
    dir: Option<&CacheDir>,
    model: &ReducedModel,
    kind: ObservableKind,
    n_sigma: u64,
    k_min: u64,
) -> Result<ClassWeights> {
    let key = params(model, kind, n_sigma, k_min);
    if let Some(d) = dir {
        if let Some((_, body)) = d.load(KIND, &key)? {
            return serde_json::from_slice(&body).map_err(|e| Error::Cache(format!("class weights: {e}")));
        }
    }
    let w = model.class_weights(kind, n_sigma, k_min);
    if let Some(d) = dir {
        let body = serde_json::to_vec(&w).map_err(|e| Error::Cache(e.to_string()))?;
        d.store(KIND, &key, w.classes.len() as u64, &body)?;
    }
    Ok(w)
}
