use serde::{Deserialize, Serialize};

use crate::data::{Lateral, Longitudinal, FUTURE_LEN};

/// Parameters of one bivariate Gaussian over (x, y), feet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateGaussian {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

impl BivariateGaussian {
    pub fn is_valid(&self) -> bool {
        self.sigma_x > 0.0
            && self.sigma_y > 0.0
            && self.rho.abs() < 1.0
            && [self.mu_x, self.mu_y, self.sigma_x, self.sigma_y, self.rho].iter().all(|v| v.is_finite())
    }

    /// Natural log of the density at `(x, y)`.
    pub fn log_density(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.mu_x) / self.sigma_x;
        let dy = (y - self.mu_y) / self.sigma_y;
        let one_m = 1.0 - self.rho * self.rho;
        let z = dx * dx + dy * dy - 2.0 * self.rho * dx * dy;
        -(2.0 * std::f64::consts::PI).ln() - self.sigma_x.ln() - self.sigma_y.ln() - 0.5 * one_m.ln() - z / (2.0 * one_m)
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        self.log_density(x, y).exp()
    }

    /// Same distribution with every length multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        BivariateGaussian {
            mu_x: self.mu_x * k,
            mu_y: self.mu_y * k,
            sigma_x: self.sigma_x * k,
            sigma_y: self.sigma_y * k,
            rho: self.rho,
        }
    }
}

/// One Gaussian per future step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParamSequence {
    pub steps: Vec<BivariateGaussian>,
}

impl GaussianParamSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn means(&self) -> Vec<[f64; 2]> {
        self.steps.iter().map(|s| [s.mu_x, s.mu_y]).collect()
    }
}

/// Class probabilities for the two maneuver axes. The joint index of a
/// (lateral, longitudinal) pair is `lateral.index() * 2 + longitudinal.index()`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverDistribution {
    pub lateral: [f64; 3],
    pub longitudinal: [f64; 2],
}

pub const MANEUVER_COUNT: usize = 6;

pub fn maneuver_index(lat: Lateral, lon: Longitudinal) -> usize {
    lat.index() * 2 + lon.index()
}

/// All six maneuvers in joint-index order.
pub fn maneuvers() -> impl Iterator<Item = (Lateral, Longitudinal)> {
    Lateral::ALL.into_iter().flat_map(|lat| Longitudinal::ALL.into_iter().map(move |lon| (lat, lon)))
}

impl ManeuverDistribution {
    pub fn joint(&self) -> [f64; MANEUVER_COUNT] {
        let mut out = [0.0; MANEUVER_COUNT];
        for (lat, lon) in maneuvers() {
            out[maneuver_index(lat, lon)] = self.lateral[lat.index()] * self.longitudinal[lon.index()];
        }
        out
    }

    pub fn probability(&self, lat: Lateral, lon: Longitudinal) -> f64 {
        self.lateral[lat.index()] * self.longitudinal[lon.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    /// `None` for models without a maneuver decoder.
    pub maneuver: Option<(Lateral, Longitudinal)>,
    pub sequence: GaussianParamSequence,
}

/// Mixture over future trajectories: six maneuver-conditioned components for a
/// maneuver-aware model, or a single mode of weight one otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub maneuvers: Option<ManeuverDistribution>,
    pub components: Vec<Component>,
}

impl PredictiveDistribution {
    pub fn unimodal(sequence: GaussianParamSequence) -> Self {
        PredictiveDistribution {
            maneuvers: None,
            components: vec![Component { weight: 1.0, maneuver: None, sequence }],
        }
    }

    /// `sequences` are in joint-index order.
    pub fn multimodal(maneuvers: ManeuverDistribution, sequences: Vec<GaussianParamSequence>) -> Self {
        assert_eq!(sequences.len(), MANEUVER_COUNT);
        let joint = maneuvers.joint();
        let components = maneuvers_with(sequences)
            .map(|(m, sequence)| Component {
                weight: joint[maneuver_index(m.0, m.1)],
                maneuver: Some(m),
                sequence,
            })
            .collect();
        PredictiveDistribution {
            maneuvers: Some(maneuvers),
            components,
        }
    }

    pub fn horizon(&self) -> usize {
        self.components.first().map_or(0, |m| m.sequence.len())
    }

    /// The highest-weight mode; the earliest wins ties.
    pub fn most_likely(&self) -> &Component {
        let mut best = &self.components[0];
        for m in &self.components[1..] {
            if m.weight > best.weight {
                best = m;
            }
        }
        best
    }

    pub fn mode_for(&self, lat: Lateral, lon: Longitudinal) -> Option<&Component> {
        self.components.iter().find(|m| m.maneuver == Some((lat, lon)))
    }

    /// Mixture density at future step `step`.
    pub fn density(&self, step: usize, x: f64, y: f64) -> f64 {
        self.components.iter().map(|m| m.weight * m.sequence.steps[step].density(x, y)).sum()
    }

    pub fn check_shape(&self) -> bool {
        !self.components.is_empty() && self.components.iter().all(|m| m.sequence.len() == FUTURE_LEN)
    }
}

fn maneuvers_with(
    sequences: Vec<GaussianParamSequence>,
) -> impl Iterator<Item = ((Lateral, Longitudinal), GaussianParamSequence)> {
    maneuvers().zip(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_order_matches_index() {
        let d = ManeuverDistribution {
            lateral: [0.2, 0.5, 0.3],
            longitudinal: [0.9, 0.1],
        };
        let j = d.joint();
        assert!((j.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(j[maneuver_index(Lateral::RightChange, Longitudinal::Brake)], 0.3 * 0.1);
        let order: Vec<usize> = maneuvers().map(|(a, b)| maneuver_index(a, b)).collect();
        assert_eq!(order, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn unit_gaussian_log_density_at_mean() {
        let g = BivariateGaussian { mu_x: 0.0, mu_y: 0.0, sigma_x: 1.0, sigma_y: 1.0, rho: 0.0 };
        assert!((g.log_density(0.0, 0.0) + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }
}
