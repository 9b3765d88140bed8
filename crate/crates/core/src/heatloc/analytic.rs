//! Likelihood heat map from radio-map residuals:
//! `h(x, y) = exp(-Σ_j (R_j(x, y) - p_j)^2 / 2σ^2)` on exterior cells, zero
//! inside buildings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use crate::heatloc::com::{center_of_mass, HeatMap};
use crate::heatloc::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapMode {
    /// Center of mass of the heat map.
    #[default]
    Com,
    /// Highest-scoring pixel (first in row-major order on ties).
    Argmax,
}

/// `-Σ_j (R_j - p_j)^2 / 2σ^2` on exterior cells, `-inf` inside buildings.
pub fn analytic_log_heatmap(sample: &Sample, sigma_gray: f64) -> Result<Grid<f64>> {
    if !(sigma_gray > 0.0) {
        return Err(Error::invalid(format!(
            "sigma_gray must be positive, got {sigma_gray}"
        )));
    }
    sample.validate()?;
    let scale = 1.0 / (2.0 * sigma_gray * sigma_gray);
    let n = sample.city.size();
    Ok(Grid::from_fn(n, |p| {
        if sample.city.is_building(p) {
            return f64::NEG_INFINITY;
        }
        let ss: f64 = sample
            .radio_maps_est
            .iter()
            .zip(&sample.p_meas)
            .map(|(r, &m)| (r.gray.get(p) - m).powi(2))
            .sum();
        -ss * scale
    }))
}

/// Heat map normalised so its largest entry is 1 (the center of mass is
/// scale invariant, and the normalisation keeps small σ from underflowing).
pub fn analytic_heatmap(sample: &Sample, sigma_gray: f64) -> Result<HeatMap> {
    let log_h = analytic_log_heatmap(sample, sigma_gray)?;
    let peak = log_h
        .as_slice()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::invalid("no exterior cell to score"));
    }
    Ok(HeatMap::new(log_h.map(|&v| (v - peak).exp())))
}

pub fn analytic_localize(sample: &Sample, sigma_gray: f64, mode: HeatmapMode) -> Result<Point> {
    let heat = analytic_heatmap(sample, sigma_gray)?;
    match mode {
        HeatmapMode::Com => center_of_mass(&heat),
        HeatmapMode::Argmax => {
            let (best, _) = heat.h.as_slice().iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
            Ok(heat.h.pixel(best).to_point())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpm_sim::{simulate_radio_map, SimParams};
    use crate::grid::Pixel;
    use crate::heatloc::Provenance;
    use crate::scene::{generate_city_map, place_points, BuildingParams, CityMap};
    use std::sync::Arc;

    fn noiseless_sample(seed: u64) -> Sample {
        let city = generate_city_map(seed, 32, 6, &BuildingParams::default()).unwrap();
        let pts = place_points(&city, 4, seed).unwrap();
        let maps: Vec<_> = pts[..3]
            .iter()
            .map(|&b| simulate_radio_map(&city, b, &SimParams::base()).unwrap())
            .collect();
        let truth = pts[3];
        let p_meas = maps.iter().map(|m| m.gray.get(truth)).collect();
        Sample {
            scene_id: 0,
            ue_id: 0,
            city: Arc::new(city),
            bs: pts[..3].to_vec(),
            radio_maps_est: maps.into(),
            p_meas,
            truth,
            provenance: Provenance {
                map_model: "base".into(),
                meas_model: "base".into(),
            },
        }
    }

    fn fingerprint_unique(s: &Sample) -> bool {
        let at =
            |p: Pixel| -> Vec<f64> { s.radio_maps_est.iter().map(|r| r.gray.get(p)).collect() };
        let target = at(s.truth);
        s.city
            .exterior_cells()
            .into_iter()
            .filter(|&p| p != s.truth)
            .all(|p| at(p) != target)
    }

    #[test]
    fn noiseless_argmax_recovers_truth() {
        let mut checked = 0;
        for seed in 0..10 {
            let s = noiseless_sample(seed);
            if !fingerprint_unique(&s) {
                continue;
            }
            checked += 1;
            let est = analytic_localize(&s, 0.01, HeatmapMode::Argmax).unwrap();
            assert_eq!(est, s.truth.to_point(), "seed {seed}");
        }
        assert!(checked >= 5);
    }

    #[test]
    fn single_bs_heat_depends_only_on_its_map() {
        let mut s = noiseless_sample(3);
        s.bs.truncate(1);
        s.radio_maps_est = s.radio_maps_est[..1].to_vec().into();
        s.p_meas.truncate(1);
        let heat = analytic_heatmap(&s, 0.05).unwrap();
        let r = &s.radio_maps_est[0];
        let ext = s.city.exterior_cells();
        for &a in &ext {
            for &b in ext.iter().step_by(37) {
                if r.gray.get(a) == r.gray.get(b) {
                    assert_eq!(heat.h.get(a), heat.h.get(b));
                }
            }
        }
    }

    #[test]
    fn huge_sigma_gives_exterior_centroid() {
        let s = noiseless_sample(5);
        let est = analytic_localize(&s, 1e6, HeatmapMode::Com).unwrap();
        let ext = s.city.exterior_cells();
        let cx = ext.iter().map(|p| p.x as f64).sum::<f64>() / ext.len() as f64;
        let cy = ext.iter().map(|p| p.y as f64).sum::<f64>() / ext.len() as f64;
        assert!((est.x - cx).abs() < 1e-6 && (est.y - cy).abs() < 1e-6);
    }

    #[test]
    fn log_heat_is_sum_of_per_bs_terms() {
        let s = noiseless_sample(2);
        let sigma = 0.07;
        let full = analytic_log_heatmap(&s, sigma).unwrap();
        let parts: Vec<Grid<f64>> = (0..3)
            .map(|j| {
                let mut one = s.clone();
                one.bs = vec![s.bs[j]];
                one.radio_maps_est = vec![s.radio_maps_est[j].clone()].into();
                one.p_meas = vec![s.p_meas[j]];
                analytic_log_heatmap(&one, sigma).unwrap()
            })
            .collect();
        for p in s.city.exterior_cells() {
            let sum: f64 = parts.iter().map(|g| g.get(p)).sum();
            assert!((full.get(p) - sum).abs() < 1e-9);
        }
        let heat = analytic_heatmap(&s, sigma).unwrap();
        assert!(heat.h.as_slice().iter().all(|&v| v >= 0.0));
        let b = s
            .city
            .buildings
            .pixels()
            .find(|&p| s.city.is_building(p))
            .unwrap();
        assert_eq!(heat.h.get(b), 0.0);
    }

    #[test]
    fn rejects_bad_sigma() {
        let s = noiseless_sample(1);
        assert!(analytic_heatmap(&s, 0.0).is_err());
        let _ = CityMap::empty(16, 1.0);
    }
}
