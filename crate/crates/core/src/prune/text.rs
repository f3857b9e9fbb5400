//! Plan export as TOML. Keep masks are strings of `1` (kept) and `0`
//! (removed), one character per channel.

use serde::{Deserialize, Serialize};

use super::plan::{LayerPlan, PruneMethod, PrunePlan};
use crate::error::PruneError;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDoc {
    method: String,
    ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f32>,
    model_hash: String,
    removed: usize,
    total: usize,
    realized_fraction: f64,
    #[serde(default)]
    guard_restored: usize,
    #[serde(default)]
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    bn_layer: usize,
    keep: String,
    #[serde(default)]
    compensation: Vec<f32>,
}

pub fn plan_to_text(plan: &PrunePlan) -> String {
    let doc = PlanDoc {
        method: plan.method.name().to_string(),
        ratio: plan.ratio,
        threshold: plan.threshold,
        model_hash: plan.model_hash.clone(),
        removed: plan.removed(),
        total: plan.total(),
        realized_fraction: plan.realized_fraction(),
        guard_restored: plan.guard_restored,
        layers: plan
            .layers
            .iter()
            .map(|l| LayerDoc {
                bn_layer: l.bn_layer,
                keep: l.keep.iter().map(|&k| if k { '1' } else { '0' }).collect(),
                compensation: l.compensation.clone(),
            })
            .collect(),
    };
    toml::to_string(&doc).expect("plan fields are all representable in TOML")
}

/// Parses and cross-checks a plan: counts must agree with the masks and
/// every removed channel needs one compensation constant.
pub fn parse_plan(text: &str) -> Result<PrunePlan, PruneError> {
    let doc: PlanDoc = toml::from_str(text).map_err(|e| PruneError::PlanText(e.message().to_string()))?;
    let bad = |m: String| Err(PruneError::PlanText(m));
    let method: PruneMethod = doc.method.parse()?;
    if !(0.0..1.0).contains(&doc.ratio) {
        return Err(PruneError::InvalidRatio(doc.ratio));
    }
    if doc.model_hash.len() != 8 || !doc.model_hash.bytes().all(|b| b.is_ascii_hexdigit()) {
        return bad(format!("model_hash `{}` is not 8 hex digits", doc.model_hash));
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for l in doc.layers {
        let keep: Vec<bool> = l
            .keep
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(PruneError::PlanText(format!("keep mask character `{other}`"))),
            })
            .collect::<Result<_, _>>()?;
        if keep.is_empty() {
            return bad(format!("layer {}: empty keep mask", l.bn_layer));
        }
        let lp = LayerPlan {
            bn_layer: l.bn_layer,
            keep,
            compensation: l.compensation,
        };
        if lp.compensation.len() != lp.removed() {
            return bad(format!(
                "layer {}: {} compensation constants for {} removed channels",
                lp.bn_layer,
                lp.compensation.len(),
                lp.removed()
            ));
        }
        if layers.last().is_some_and(|p: &LayerPlan| p.bn_layer >= lp.bn_layer) {
            return bad("layers must be listed in increasing order".into());
        }
        layers.push(lp);
    }
    if layers.is_empty() {
        return bad("plan lists no layers".into());
    }
    let plan = PrunePlan {
        method,
        ratio: doc.ratio,
        threshold: doc.threshold,
        model_hash: doc.model_hash.to_ascii_lowercase(),
        layers,
        guard_restored: doc.guard_restored,
    };
    if plan.removed() != doc.removed || plan.total() != doc.total {
        return bad(format!(
            "header says {}/{} removed, masks say {}/{}",
            doc.removed,
            doc.total,
            plan.removed(),
            plan.total()
        ));
    }
    Ok(plan)
}
