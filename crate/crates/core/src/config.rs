//! Run configuration: the two data profiles and their default thresholds.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Sequentially captured data: tight loop threshold, slow penalty ramp.
    Sequential,
    /// Unordered internet-style data: looser thresholds, fast penalty ramp.
    Internet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    /// Coverage target for track selection.
    pub k: usize,
    /// Combination weight in the spanning-tree edge weight.
    pub alpha: f64,
    /// Rotation loop verification threshold, degrees.
    pub phi1_deg: f64,
    /// Orientation filter threshold, degrees.
    pub phi2_deg: f64,
    /// Penalty growth factor of the L1 solver.
    pub rho: f64,
    pub beta0: f64,
    pub beta_max: f64,
    pub solver: SolverKind,
    pub seed: u64,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (phi1_deg, phi2_deg, rho) = match profile {
            Profile::Sequential => (3.0, 5.0, 1.01),
            Profile::Internet => (5.0, 10.0, 1.1),
        };
        Self {
            profile,
            k: 30,
            alpha: 0.1,
            phi1_deg,
            phi2_deg,
            rho,
            beta0: 1e-6,
            beta_max: 1e6,
            solver: SolverKind::L1,
            seed: 0,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Sequential)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_defaults() {
        let seq = RunConfig::for_profile(Profile::Sequential);
        assert_eq!(seq.k, 30);
        assert_eq!(seq.alpha, 0.1);
        assert_eq!(seq.phi1_deg, 3.0);
        assert_eq!(seq.phi2_deg, 5.0);
        assert_eq!(seq.rho, 1.01);
        assert_eq!(seq.beta0, 1e-6);
        assert_eq!(seq.beta_max, 1e6);

        let net = RunConfig::for_profile(Profile::Internet);
        assert_eq!(net.phi1_deg, 5.0);
        assert_eq!(net.phi2_deg, 10.0);
        assert_eq!(net.rho, 1.1);
    }
}
