use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::agent::AgentUsage;

/// Prices and shapes for the models used in published cost comparisons.
pub const DEFAULT_PRICING_JSON: &str = include_str!("../../data/pricing.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_layer: u32,
    pub d_model: u32,
}

/// `24 * n_layer * d_model^2`.
pub fn flops_per_token(shape: ModelShape) -> u128 {
    24 * u128::from(shape.n_layer) * u128::from(shape.d_model).pow(2)
}

/// Price of one model in dollars per million tokens: either one flat rate
/// or an input/output pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingEntry {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flat_per_mtok: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_per_mtok: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_per_mtok: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<ModelShape>,
}

impl PricingEntry {
    pub fn flat(model: impl Into<String>, per_mtok: f64) -> Self {
        Self { model: model.into(), flat_per_mtok: Some(per_mtok), input_per_mtok: None, output_per_mtok: None, shape: None }
    }

    pub fn pair(model: impl Into<String>, input_per_mtok: f64, output_per_mtok: f64) -> Self {
        Self {
            model: model.into(),
            flat_per_mtok: None,
            input_per_mtok: Some(input_per_mtok),
            output_per_mtok: Some(output_per_mtok),
            shape: None,
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |message: &str| MetricsError::InvalidPricing { model: self.model.clone(), message: message.into() };
        let prices = [self.flat_per_mtok, self.input_per_mtok, self.output_per_mtok];
        if prices.iter().flatten().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(bad("prices must be finite and nonnegative"));
        }
        match (self.flat_per_mtok, self.input_per_mtok, self.output_per_mtok) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            _ => return Err(bad("set exactly one of flat_per_mtok or input_per_mtok + output_per_mtok")),
        }
        if let Some(s) = self.shape {
            if s.n_layer == 0 || s.d_model == 0 {
                return Err(bad("shape dimensions must be positive"));
            }
        }
        Ok(())
    }

    /// Unrounded dollars for `usage`.
    pub fn cost(&self, usage: &AgentUsage) -> f64 {
        let (input, output) = (usage.input_tokens as f64, usage.output_tokens as f64);
        match self.flat_per_mtok {
            Some(flat) => (input + output) / 1e6 * flat,
            None => {
                input / 1e6 * self.input_per_mtok.unwrap_or(0.0) + output / 1e6 * self.output_per_mtok.unwrap_or(0.0)
            }
        }
    }
}

pub fn parse_pricing(text: &str) -> Result<Vec<PricingEntry>, MetricsError> {
    let entries: Vec<PricingEntry> =
        serde_json::from_str(text).map_err(|e| MetricsError::PricingFile(e.to_string()))?;
    for e in &entries {
        e.validate()?;
    }
    Ok(entries)
}

pub fn load_pricing(path: &Path) -> Result<Vec<PricingEntry>, MetricsError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MetricsError::PricingFile(format!("{}: {e}", path.display())))?;
    parse_pricing(&text)
}

fn find<'a>(pricing: &'a [PricingEntry], model: &str) -> Result<&'a PricingEntry, MetricsError> {
    pricing
        .iter()
        .find(|p| p.model == model)
        .ok_or_else(|| MetricsError::MissingPricing(model.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    /// Unrounded dollars per model.
    pub per_model: BTreeMap<String, f64>,
    /// Sum over models, rounded once to 3 decimals.
    pub total: f64,
}

/// Dollar cost of the given per-model usage.
pub fn estimate_cost(
    usage: &BTreeMap<String, AgentUsage>,
    pricing: &[PricingEntry],
) -> Result<CostEstimate, MetricsError> {
    let mut per_model = BTreeMap::new();
    for (model, u) in usage {
        per_model.insert(model.clone(), find(pricing, model)?.cost(u));
    }
    let total = per_model.values().sum::<f64>();
    Ok(CostEstimate { per_model, total: (total * 1000.0).round() / 1000.0 })
}

/// Run FLOPS per model: per-token FLOPS times total tokens. Models without
/// a shape are omitted.
pub fn estimate_flops(
    usage: &BTreeMap<String, AgentUsage>,
    pricing: &[PricingEntry],
) -> BTreeMap<String, u128> {
    usage
        .iter()
        .filter_map(|(model, u)| {
            let shape = pricing.iter().find(|p| &p.model == model)?.shape?;
            Some((model.clone(), flops_per_token(shape) * u128::from(u.total_tokens())))
        })
        .collect()
}
