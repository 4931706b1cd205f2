//! Dataset-level filters: elevation ceiling per patch and region acceptance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::resample::PatchPair;

/// Regions averaging below this elevation are rejected as likely built-up.
pub const MIN_MEAN_ELEVATION_M: f64 = 100.0;
/// Human-modification index at or above which a region is rejected.
pub const HUMAN_MODIFICATION_LIMIT: f64 = 0.3;
/// Maximum accepted regions per climate category.
pub const CATEGORY_CAP: usize = 125;

/// Keeps pairs whose highest sample is at most `limit_m` (inclusive).
pub fn elevation_filter(pairs: Vec<PatchPair>, limit_m: f64) -> Vec<PatchPair> {
    pairs
        .into_iter()
        .filter(|p| p.heightmap.max_elevation() as f64 <= limit_m)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Climate {
    Tropical,
    Temperate,
    Subarctic,
    Polar,
    Arid,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Landcover {
    pub cropland: bool,
    pub built_up: bool,
    pub water: bool,
    pub cloud: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetadata {
    pub mean_elevation_m: f64,
    /// In `[0, 1]`.
    pub human_modification: f64,
    pub climate: Climate,
    pub landcover: Landcover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    LowElevation,
    HumanModification,
    Climate,
    Landcover,
    Cloud,
    InvalidIndex,
    CategoryFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionDecision {
    Accept,
    Reject(RejectReason),
}

impl RegionDecision {
    pub fn is_accept(&self) -> bool {
        matches!(self, RegionDecision::Accept)
    }
}

/// Per-region predicate. Checks run in a fixed order and the first failing
/// one names the reason.
pub fn region_filter(meta: &RegionMetadata) -> RegionDecision {
    if !(0.0..=1.0).contains(&meta.human_modification) {
        return RegionDecision::Reject(RejectReason::InvalidIndex);
    }
    if meta.mean_elevation_m < MIN_MEAN_ELEVATION_M {
        return RegionDecision::Reject(RejectReason::LowElevation);
    }
    if meta.human_modification >= HUMAN_MODIFICATION_LIMIT {
        return RegionDecision::Reject(RejectReason::HumanModification);
    }
    if matches!(meta.climate, Climate::Arid | Climate::Other) {
        return RegionDecision::Reject(RejectReason::Climate);
    }
    let lc = meta.landcover;
    if lc.cropland || lc.built_up || lc.water {
        return RegionDecision::Reject(RejectReason::Landcover);
    }
    if lc.cloud {
        return RegionDecision::Reject(RejectReason::Cloud);
    }
    RegionDecision::Accept
}

/// Applies [`region_filter`] over a stream in input order, admitting at most
/// `cap` regions per climate category.
pub fn apply_category_cap(regions: &[RegionMetadata], cap: usize) -> Vec<RegionDecision> {
    let mut taken: BTreeMap<Climate, usize> = BTreeMap::new();
    regions
        .iter()
        .map(|r| match region_filter(r) {
            RegionDecision::Accept => {
                let n = taken.entry(r.climate).or_default();
                if *n >= cap {
                    RegionDecision::Reject(RejectReason::CategoryFull)
                } else {
                    *n += 1;
                    RegionDecision::Accept
                }
            }
            reject => reject,
        })
        .collect()
}
