//! Trust-weighted robust combination of accepted updates.

use crate::error::{Error, Result};
use crate::evaluation::ModelVector;
use crate::policy::{AggMethod, PolicyConfig};
use crate::NodeId;

/// An accepted update paired with its aggregation weight (proportional to
/// the node's trust at screening time).
#[derive(Debug, Clone)]
pub struct WeightedUpdate {
    pub node_id: NodeId,
    pub update: ModelVector,
    pub weight: f64,
}

fn check_inputs(items: &[WeightedUpdate]) -> Result<(usize, f64)> {
    let first = items.first().ok_or(Error::EmptyInput("weighted updates"))?;
    let dim = first.update.dim();
    let mut total = 0.0;
    for it in items {
        if it.update.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: it.update.dim(),
            });
        }
        if it.weight < 0.0 || !it.weight.is_finite() {
            return Err(Error::OutOfRange(format!("weight {}", it.weight)));
        }
        total += it.weight;
    }
    if total <= 0.0 {
        return Err(Error::OutOfRange("total weight must be > 0".into()));
    }
    Ok((dim, total))
}

/// Lower weighted median per coordinate: the smallest value whose cumulative
/// normalized weight reaches 0.5. Value ties sort by node id.
pub fn weighted_coordinate_median(items: &[WeightedUpdate]) -> Result<ModelVector> {
    let mut sink = 0u64;
    weighted_coordinate_median_counted(items, &mut sink)
}

/// Same as [`weighted_coordinate_median`] but counts sort comparisons, for
/// complexity instrumentation.
pub fn weighted_coordinate_median_counted(
    items: &[WeightedUpdate],
    comparisons: &mut u64,
) -> Result<ModelVector> {
    let (dim, total) = check_inputs(items)?;
    let mut out = Vec::with_capacity(dim);
    let mut col: Vec<(f64, &str, f64)> = Vec::with_capacity(items.len());
    for k in 0..dim {
        col.clear();
        col.extend(items.iter().map(|it| (it.update.0[k], it.node_id.as_str(), it.weight)));
        col.sort_by(|a, b| {
            *comparisons += 1;
            a.0.total_cmp(&b.0).then(a.1.cmp(b.1))
        });
        let mut cum = 0.0;
        let mut chosen = col[col.len() - 1].0;
        for (v, _, w) in &col {
            cum += w / total;
            if cum >= 0.5 {
                chosen = *v;
                break;
            }
        }
        out.push(chosen);
    }
    Ok(ModelVector(out))
}

/// Weighted trimmed mean per coordinate: `trim` of the total weight is
/// removed from each tail (with a partial cut at the boundary item), then
/// the remainder is weight-averaged.
pub fn weighted_trimmed_mean(items: &[WeightedUpdate], trim: f64) -> Result<ModelVector> {
    let mut sink = 0u64;
    weighted_trimmed_mean_counted(items, trim, &mut sink)
}

pub fn weighted_trimmed_mean_counted(
    items: &[WeightedUpdate],
    trim: f64,
    comparisons: &mut u64,
) -> Result<ModelVector> {
    if !(0.0..0.5).contains(&trim) {
        return Err(Error::OutOfRange(format!("trim {trim} not in [0, 0.5)")));
    }
    let (dim, total) = check_inputs(items)?;
    let cut = trim * total;
    let mut out = Vec::with_capacity(dim);
    let mut col: Vec<(f64, &str, f64)> = Vec::with_capacity(items.len());
    for k in 0..dim {
        col.clear();
        col.extend(items.iter().map(|it| (it.update.0[k], it.node_id.as_str(), it.weight)));
        col.sort_by(|a, b| {
            *comparisons += 1;
            a.0.total_cmp(&b.0).then(a.1.cmp(b.1))
        });
        let mut num = 0.0;
        let mut den = 0.0;
        let mut lo = 0.0;
        for (v, _, w) in &col {
            let hi = lo + w;
            // weight surviving both tail cuts
            let eff = (hi.min(total - cut) - lo.max(cut)).max(0.0);
            num += eff * v;
            den += eff;
            lo = hi;
        }
        out.push(num / den);
    }
    Ok(ModelVector(out))
}

/// Combine accepted updates into the next global model. An empty accepted
/// set leaves the model unchanged (stall round).
pub fn aggregate_round(
    global: &ModelVector,
    accepted: &[WeightedUpdate],
    config: &PolicyConfig,
) -> Result<ModelVector> {
    if accepted.is_empty() {
        return Ok(global.clone());
    }
    let delta = match config.agg_method {
        AggMethod::Median => weighted_coordinate_median(accepted)?,
        AggMethod::TrimmedMean => weighted_trimmed_mean(accepted, config.trim)?,
        AggMethod::UnweightedMean => {
            let uniform: Vec<WeightedUpdate> = accepted
                .iter()
                .map(|it| WeightedUpdate {
                    node_id: it.node_id.clone(),
                    update: it.update.clone(),
                    weight: 1.0,
                })
                .collect();
            weighted_trimmed_mean(&uniform, 0.0)?
        }
    };
    global.add(&delta)
}
