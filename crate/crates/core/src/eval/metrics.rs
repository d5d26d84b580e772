use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute gain `tau` and effective gain `rho` (percent of the
/// source-to-oracle gap that adaptation closed).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub source_ap: f64,
    pub adapted_ap: f64,
    pub oracle_ap: Option<f64>,
    pub tau: f64,
    pub rho: Option<f64>,
}

/// Inputs may be fractions or percentages as long as one call is
/// consistent; `rho` is always a percentage.
pub fn gain(source_ap: f64, adapted_ap: f64, oracle_ap: Option<f64>) -> Result<GainReport> {
    let tau = adapted_ap - source_ap;
    let rho = match oracle_ap {
        None => None,
        Some(o) if o == source_ap => {
            if adapted_ap != source_ap {
                return Err(Error::UndefinedRho(o));
            }
            None
        }
        Some(o) => Some(100.0 * (adapted_ap - source_ap) / (o - source_ap)),
    };
    Ok(GainReport {
        source_ap,
        adapted_ap,
        oracle_ap,
        tau,
        rho,
    })
}

/// Mean over kinds of the mean over each kind's severities.
pub fn mpc(per_kind: &[Vec<f64>]) -> Result<f64> {
    if per_kind.is_empty() || per_kind.iter().any(Vec::is_empty) {
        return Err(Error::Config("mPC needs at least one score per corruption kind".into()));
    }
    let means = per_kind.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64);
    Ok(means.sum::<f64>() / per_kind.len() as f64)
}

/// `mPC / AP_clean`, undefined for a zero clean score.
pub fn rpc(mpc: f64, ap_clean: f64) -> Option<f64> {
    (ap_clean > 0.0).then(|| mpc / ap_clean)
}
