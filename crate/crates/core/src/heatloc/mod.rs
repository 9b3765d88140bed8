//! Heat-map based localization.
//!
//! A localizer sees the city map, the base-station positions, one estimated
//! radio map per base station and the measured pathloss values. It scores
//! every pixel with a (quasi-)heat map and reduces the heat map to a position
//! with the center-of-mass layer.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dpm_sim::RadioMap;
use crate::error::{Error, Result};
use crate::grid::{Pixel, Point};
use crate::scene::CityMap;

pub mod analytic;
pub mod com;
pub mod encode;
pub mod model;
pub mod nn;
pub mod train;

pub use analytic::{analytic_heatmap, analytic_localize, analytic_log_heatmap, HeatmapMode};
pub use com::{center_of_mass, center_of_mass_backward, HeatMap, COM_EPS};
pub use encode::{dihedral_point, dihedral_stack, encode_inputs, InputStack};
pub use model::{ArchConfig, LocNetModel, OutputActivation};
pub use train::{locnet_train, locnet_train_from, TrainConfig, TrainLogRow, TrainOutcome};

/// Where a sample's radio maps and measurements came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub map_model: String,
    pub meas_model: String,
}

/// One localization instance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub scene_id: usize,
    pub ue_id: usize,
    /// City map as known to the localizer (no cars).
    pub city: Arc<CityMap>,
    pub bs: Vec<Pixel>,
    /// Radio maps available to the localizer, one per base station.
    pub radio_maps_est: Arc<[RadioMap]>,
    /// Measured pathloss per base station, gray-level.
    pub p_meas: Vec<f64>,
    pub truth: Pixel,
    pub provenance: Provenance,
}

impl Sample {
    pub fn n_bs(&self) -> usize {
        self.bs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.city.size();
        if self.bs.is_empty() {
            return Err(Error::invalid("sample without base stations"));
        }
        if self.radio_maps_est.len() != self.bs.len() || self.p_meas.len() != self.bs.len() {
            return Err(Error::Shape(format!(
                "{} base stations, {} radio maps, {} measurements",
                self.bs.len(),
                self.radio_maps_est.len(),
                self.p_meas.len()
            )));
        }
        if let Some(r) = self.radio_maps_est.iter().find(|r| r.size() != n) {
            return Err(Error::Shape(format!(
                "radio map is {} px, city {n} px",
                r.size()
            )));
        }
        if let Some(p) = self.p_meas.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!(
                "measured gray value {p} outside [0, 1]"
            )));
        }
        for &b in &self.bs {
            self.city.buildings.check(b)?;
        }
        self.city.check_exterior(self.truth)
    }
}

/// Mean Euclidean distance between paired positions.
pub fn mae(estimates: &[Point], truths: &[Point]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} estimates vs {} ground truths",
            estimates.len(),
            truths.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::invalid("mae of an empty set"));
    }
    Ok(estimates
        .iter()
        .zip(truths)
        .map(|(a, b)| a.dist(*b))
        .sum::<f64>()
        / estimates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        let a = [Point::new(1.0, 2.0), Point::new(3.0, 3.0)];
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(
            mae(&[Point::new(0.0, 0.0)], &[Point::new(3.0, 4.0)]).unwrap(),
            5.0
        );
        let est = [Point::new(0.0, 0.0), Point::new(7.0, 7.0)];
        let tru = [Point::new(3.0, 4.0), Point::new(7.0, 7.0)];
        assert_eq!(mae(&est, &tru).unwrap(), 2.5);
        assert!(mae(&est, &tru[..1]).is_err());
        assert!(mae(&[], &[]).is_err());
    }
}
