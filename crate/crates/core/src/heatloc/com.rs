//! Center-of-mass (soft-argmax) reduction of a heat map.
//!
//! With 1-indexed pixel coordinates,
//! `μx = Σ x H(x, y) / Σ H(x, y)` and `μy = Σ y H(x, y) / Σ H(x, y)`.

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};

/// Smallest admissible `|Σ H|`.
pub const COM_EPS: f64 = 1e-8;

/// Per-pixel likelihood scores; entries may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub h: Grid<f64>,
}

impl HeatMap {
    pub fn new(h: Grid<f64>) -> Self {
        Self { h }
    }
}

struct Moments {
    sum: f64,
    sx: f64,
    sy: f64,
}

fn moments(h: &Grid<f64>) -> Result<Moments> {
    let n = h.size();
    let (mut sum, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (i, &v) in h.as_slice().iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite heat map value at index {i}"
            )));
        }
        let x = (i % n + 1) as f64;
        let y = (i / n + 1) as f64;
        sum += v;
        sx += x * v;
        sy += y * v;
    }
    if !(sum.abs() >= COM_EPS) {
        return Err(Error::DegenerateHeatMap {
            sum: sum.abs(),
            eps: COM_EPS,
        });
    }
    Ok(Moments { sum, sx, sy })
}

pub fn center_of_mass(heat: &HeatMap) -> Result<Point> {
    let m = moments(&heat.h)?;
    Ok(Point::new(m.sx / m.sum, m.sy / m.sum))
}

/// Gradient of `gx * μx + gy * μy` with respect to every heat-map entry:
/// `∂μx/∂H(x, y) = (x - μx) / Σ H`.
pub fn center_of_mass_backward(heat: &HeatMap, grad: Point) -> Result<Grid<f64>> {
    let m = moments(&heat.h)?;
    let (mx, my) = (m.sx / m.sum, m.sy / m.sum);
    let n = heat.h.size();
    Ok(Grid::from_fn(n, |p| {
        (grad.x * (p.x as f64 - mx) + grad.y * (p.y as f64 - my)) / m.sum
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Pixel;

    #[test]
    fn uniform_map_centers_on_grid_middle() {
        let c = center_of_mass(&HeatMap::new(Grid::filled(64, 0.7))).unwrap();
        assert!((c.x - 32.5).abs() < 1e-9 && (c.y - 32.5).abs() < 1e-9);
    }

    #[test]
    fn one_hot_returns_pixel() {
        let mut g = Grid::filled(32, 0.0);
        g[Pixel::new(10, 20)] = 3.0;
        assert_eq!(
            center_of_mass(&HeatMap::new(g)).unwrap(),
            Point::new(10.0, 20.0)
        );
    }

    #[test]
    fn two_point_weighted_mean() {
        let mut g = Grid::filled(8, 0.0);
        g[Pixel::new(1, 1)] = 1.0;
        g[Pixel::new(3, 1)] = 3.0;
        let c = center_of_mass(&HeatMap::new(g)).unwrap();
        assert!((c.x - 2.5).abs() < 1e-12 && (c.y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sum_is_an_error() {
        let mut g = Grid::filled(4, 0.0);
        g[Pixel::new(1, 1)] = 1.0;
        g[Pixel::new(2, 2)] = -1.0;
        assert!(matches!(
            center_of_mass(&HeatMap::new(g)),
            Err(Error::DegenerateHeatMap { .. })
        ));
    }

    #[test]
    fn negative_entries_are_allowed() {
        let mut g = Grid::filled(4, 0.0);
        g[Pixel::new(1, 1)] = 2.0;
        g[Pixel::new(4, 1)] = -1.0;
        // (1*2 - 4*1) / 1 = -2
        assert_eq!(center_of_mass(&HeatMap::new(g)).unwrap().x, -2.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = Grid::from_fn(6, |p| {
            0.3 + ((p.x * 7 + p.y * 3) % 5) as f64 * 0.2 - 0.1 * (p.x as f64)
        });
        let heat = HeatMap::new(h.clone());
        let g = Point::new(0.6, -1.3);
        let analytic = center_of_mass_backward(&heat, g).unwrap();
        let f = |h: &Grid<f64>| {
            let c = center_of_mass(&HeatMap::new(h.clone())).unwrap();
            g.x * c.x + g.y * c.y
        };
        for p in h.pixels() {
            let eps = 1e-6;
            let mut plus = h.clone();
            plus[p] += eps;
            let mut minus = h.clone();
            minus[p] -= eps;
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            let a = analytic.get(p);
            assert!(
                (fd - a).abs() <= 1e-3 * fd.abs().max(a.abs()).max(1e-6),
                "{p:?}: {fd} vs {a}"
            );
        }
    }
}
