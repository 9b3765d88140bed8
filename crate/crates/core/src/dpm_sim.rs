//! Dominant-path radio-map and time-of-arrival simulator.
//!
//! Propagation is modelled on the 8-connected pixel graph. The dominant path
//! to every pixel is the minimum-cost path where a step costs its geometric
//! length plus `db_to_m * wall_db_per_cell` meters for every building or car
//! cell it enters. Pathloss along that path is
//!
//! ```text
//! PL(p) = -( l0 + 10 n log10(max(d, cell) / cell) + wall_db * walls + corner_db * turn )
//! ```
//!
//! where `d` is the geometric path length, `walls` the number of penetrated
//! cells and `turn` the total turning angle at the path's corners. ToA is
//! `d / c`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Pixel};
use crate::io;
use crate::rng;
use crate::scene::{CityMap, RadioMapFiles};

/// Speed of light used for ToA conversion, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Relative slack of the 8-connected grid metric against Euclidean distance:
/// the octile length exceeds the straight line by at most `sqrt(4 - 2 sqrt 2) - 1`.
pub const GRID_METRIC_SLACK: f64 = 0.0824;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Loss at a distance of one cell, dB.
    pub l0_db: f64,
    pub path_exponent: f64,
    pub wall_db_per_cell: f64,
    pub corner_db_per_rad: f64,
    /// Gray-level window: `pl_min_db` maps to 0, `pl_max_db` to 1.
    pub pl_min_db: f64,
    pub pl_max_db: f64,
    /// Meters of path cost charged per dB of wall loss when choosing the
    /// dominant path.
    pub db_to_m: f64,
}

impl SimParams {
    /// Ground-truth model used for the localizer-side radio maps.
    pub const fn base() -> Self {
        Self {
            l0_db: 40.0,
            path_exponent: 2.0,
            wall_db_per_cell: 15.0,
            corner_db_per_rad: 10.0,
            pl_min_db: -160.0,
            pl_max_db: -40.0,
            db_to_m: 1.0,
        }
    }

    /// Finer-grained stand-in for a ray tracer: steeper distance decay,
    /// cheaper walls, more expensive corners.
    pub const fn perturbed() -> Self {
        Self {
            l0_db: 40.0,
            path_exponent: 2.2,
            wall_db_per_cell: 12.0,
            corner_db_per_rad: 14.0,
            ..Self::base()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.l0_db,
            self.path_exponent,
            self.wall_db_per_cell,
            self.corner_db_per_rad,
            self.pl_min_db,
            self.pl_max_db,
            self.db_to_m,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("simulation parameters must be finite"));
        }
        if !(self.pl_min_db < self.pl_max_db) {
            return Err(Error::invalid(format!(
                "pl_min_db ({}) must be below pl_max_db ({})",
                self.pl_min_db, self.pl_max_db
            )));
        }
        if self.path_exponent <= 0.0 {
            return Err(Error::invalid("path exponent must be positive"));
        }
        if self.l0_db < 0.0
            || self.wall_db_per_cell < 0.0
            || self.corner_db_per_rad < 0.0
            || self.db_to_m < 0.0
        {
            return Err(Error::invalid("loss costs must be non-negative"));
        }
        Ok(())
    }
}

impl Default for SimParams {
    fn default() -> Self {
        Self::base()
    }
}

// ---------------------------------------------------------------------------
// Dominant path
// ---------------------------------------------------------------------------

/// Per-pixel properties of the dominant path from `source`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathField {
    pub source: Pixel,
    pub cell_m: f64,
    /// Geometric length of the dominant path, meters.
    pub dist_m: Grid<f64>,
    /// Total turning angle at the path's corners, radians.
    pub turn_rad: Grid<f64>,
    /// Building or car cells entered along the path.
    pub wall_cells: Grid<u32>,
    /// Minimised path cost: `dist_m + db_to_m * wall_db_per_cell * wall_cells`.
    pub cost_m: Grid<f64>,
}

impl PathField {
    /// Excess of the path length over the straight-line distance.
    pub fn nlos_bias_m(&self, p: Pixel) -> f64 {
        self.dist_m.get(p)
            - self
                .source
                .to_meters(self.cell_m)
                .dist(p.to_meters(self.cell_m))
    }
}

/// Length of the shortest 8-connected path on an obstacle-free grid.
pub fn octile_distance(a: Pixel, b: Pixel, cell_m: f64) -> f64 {
    let dx = a.x.abs_diff(b.x);
    let dy = a.y.abs_diff(b.y);
    let diag = dx.min(dy);
    let straight = dx.max(dy) - diag;
    cell_m * (straight as f64 + SQRT_2 * diag as f64)
}

#[derive(Clone, Copy, Default)]
struct Steps {
    straight: u32,
    diagonal: u32,
    walls: u32,
}

impl Steps {
    fn length(self, cell_m: f64) -> f64 {
        cell_m * (self.straight as f64 + SQRT_2 * self.diagonal as f64)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Queued {
    cost: f64,
    index: usize,
}

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then index
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Single-source dominant paths from `tx` over the whole grid.
pub fn dominant_path(map: &CityMap, tx: Pixel, params: &SimParams) -> Result<PathField> {
    map.check_exterior(tx)?;
    let n = map.size();
    let cell = map.cell_m;
    let wall_cost = params.db_to_m * params.wall_db_per_cell;
    let cost_of = |s: Steps| s.length(cell) + wall_cost * s.walls as f64;

    let total = n * n;
    let mut steps = vec![Steps::default(); total];
    let mut cost = vec![f64::INFINITY; total];
    let mut pred = vec![usize::MAX; total];
    let mut done = vec![false; total];
    let mut order = Vec::with_capacity(total);
    let obstacle: Vec<bool> = map
        .buildings
        .as_slice()
        .iter()
        .zip(map.cars.as_slice())
        .map(|(&b, &c)| b != 0 || c != 0)
        .collect();

    let src = map.buildings.index(tx);
    cost[src] = 0.0;
    let mut heap = BinaryHeap::from([Queued {
        cost: 0.0,
        index: src,
    }]);
    while let Some(Queued { cost: c, index: u }) = heap.pop() {
        if done[u] || c > cost[u] {
            continue;
        }
        done[u] = true;
        order.push(u);
        let (ux, uy) = ((u % n) as isize, (u / n) as isize);
        for (dx, dy) in NEIGHBORS {
            let (vx, vy) = (ux + dx, uy + dy);
            if vx < 0 || vy < 0 || vx >= n as isize || vy >= n as isize {
                continue;
            }
            let v = vy as usize * n + vx as usize;
            if done[v] {
                continue;
            }
            let mut s = steps[u];
            if dx != 0 && dy != 0 {
                s.diagonal += 1;
            } else {
                s.straight += 1;
            }
            s.walls += u32::from(obstacle[v]);
            let cv = cost_of(s);
            if cv < cost[v] {
                cost[v] = cv;
                steps[v] = s;
                pred[v] = u;
                heap.push(Queued { cost: cv, index: v });
            }
        }
    }

    let turn = accumulate_turns(n, &order, &pred, &steps, &obstacle);
    Ok(PathField {
        source: tx,
        cell_m: cell,
        dist_m: Grid::from_vec(n, steps.iter().map(|s| s.length(cell)).collect())?,
        turn_rad: Grid::from_vec(n, turn)?,
        wall_cells: Grid::from_vec(n, steps.iter().map(|s| s.walls).collect())?,
        cost_m: Grid::from_vec(n, cost)?,
    })
}

/// Cells visited by the Bresenham line from `a` to `b`, excluding `a`.
fn bresenham(a: (isize, isize), b: (isize, isize), mut visit: impl FnMut(isize, isize)) {
    let (dx, dy) = ((b.0 - a.0).abs(), -(b.1 - a.1).abs());
    let (sx, sy) = ((b.0 - a.0).signum(), (b.1 - a.1).signum());
    let (mut x, mut y) = a;
    let mut err = dx + dy;
    while (x, y) != b {
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
        visit(x, y);
    }
}

/// Whether the straight segment from `tx` to `p` avoids every building and car
/// cell (Bresenham rasterisation). Such pixels have an obstacle-free shortest
/// grid path, so their dominant path is the free-space one.
pub fn line_of_sight(map: &CityMap, tx: Pixel, p: Pixel) -> bool {
    let mut clear = true;
    bresenham(
        (tx.x as isize, tx.y as isize),
        (p.x as isize, p.y as isize),
        |x, y| clear &= !map.is_obstacle(Pixel::new(x as usize, y as usize)),
    );
    clear
}

fn angle_between(a: (f64, f64), b: (f64, f64)) -> f64 {
    let na = a.0.hypot(a.1);
    let nb = b.0.hypot(b.1);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    ((a.0 * b.0 + a.1 * b.1) / (na * nb))
        .clamp(-1.0, 1.0)
        .acos()
}

/// Turning angle along the predecessor tree.
///
/// Each pixel keeps the last corner ("anchor") of its path. A pixel inherits
/// its predecessor's anchor when the straight line from that anchor reaches it
/// through exactly the obstacle cells the path itself penetrated since the
/// anchor; otherwise the predecessor becomes a new corner. Grid zig-zags on
/// visible stretches therefore add no turning.
fn accumulate_turns(
    n: usize,
    order: &[usize],
    pred: &[usize],
    steps: &[Steps],
    obstacle: &[bool],
) -> Vec<f64> {
    let xy = |i: usize| ((i % n) as isize, (i / n) as isize);
    let mut anchor = vec![usize::MAX; n * n];
    let mut turn = vec![0.0; n * n];
    let dir_in = |anchor: &[usize], i: usize| -> (f64, f64) {
        let (x, y) = xy(i);
        let (ax, ay) = xy(anchor[i]);
        ((x - ax) as f64, (y - ay) as f64)
    };
    for &v in order {
        let u = pred[v];
        if u == usize::MAX {
            anchor[v] = v;
            continue;
        }
        let a = anchor[u];
        let mut walls = 0u32;
        bresenham(xy(a), xy(v), |x, y| {
            walls += u32::from(obstacle[y as usize * n + x as usize])
        });
        let (vx, vy) = xy(v);
        let corner = if walls == steps[v].walls - steps[a].walls {
            a
        } else {
            u
        };
        let (cx, cy) = xy(corner);
        anchor[v] = corner;
        turn[v] = turn[corner]
            + angle_between(
                dir_in(&anchor, corner),
                ((vx - cx) as f64, (vy - cy) as f64),
            );
    }
    turn
}

// ---------------------------------------------------------------------------
// Radio and ToA maps
// ---------------------------------------------------------------------------

pub fn pathloss_to_gray(pl_db: f64, params: &SimParams) -> f64 {
    ((pl_db - params.pl_min_db) / (params.pl_max_db - params.pl_min_db)).clamp(0.0, 1.0)
}

/// Inverse of [`pathloss_to_gray`]; exact for gray values in (0, 1), clipped
/// values map to the window edges.
pub fn gray_to_pathloss(gray: f64, params: &SimParams) -> f64 {
    params.pl_min_db + gray.clamp(0.0, 1.0) * (params.pl_max_db - params.pl_min_db)
}

/// Pathloss map of one transmitter, in dB and gray-level.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioMap {
    pub tx: Pixel,
    pub params: SimParams,
    pub pl_db: Grid<f64>,
    pub gray: Grid<f64>,
}

impl RadioMap {
    pub fn from_pathloss(tx: Pixel, pl_db: Grid<f64>, params: SimParams) -> Self {
        let gray = pl_db.map(|&v| pathloss_to_gray(v, &params));
        Self {
            tx,
            params,
            pl_db,
            gray,
        }
    }

    pub fn size(&self) -> usize {
        self.pl_db.size()
    }

    /// Writes `<stem>.png`, `<stem>.json` and `<stem>.pld` under `root`.
    pub fn save(&self, root: &Path, stem: &str, cell_m: f64) -> Result<RadioMapFiles> {
        let files = RadioMapFiles {
            png: format!("{stem}.png"),
            sidecar: format!("{stem}.json"),
            pathloss: format!("{stem}.pld"),
        };
        let image = self.gray.map(|&g| (g * 255.0).round() as u8);
        io::write_gray_png(&root.join(&files.png), &image)?;
        io::write_float_grid(
            &root.join(&files.pathloss),
            io::PATHLOSS_MAGIC,
            &self.pl_db,
            cell_m,
        )?;
        let sidecar = RadioMapSidecar {
            tx: self.tx,
            size_px: self.size(),
            cell_m,
            sim_params: self.params,
            pl_window_db: [self.params.pl_min_db, self.params.pl_max_db],
            png: files.png.clone(),
            pathloss: files.pathloss.clone(),
        };
        io::write_json(&root.join(&files.sidecar), &sidecar)?;
        Ok(files)
    }

    pub fn load(root: &Path, files: &RadioMapFiles) -> Result<Self> {
        let sidecar: RadioMapSidecar = io::read_json(&root.join(&files.sidecar))?;
        let (pl_db, _) = io::read_float_grid(&root.join(&files.pathloss), io::PATHLOSS_MAGIC)?;
        if pl_db.size() != sidecar.size_px {
            return Err(Error::Format {
                path: root.join(&files.pathloss),
                reason: format!(
                    "grid is {} px, sidecar says {}",
                    pl_db.size(),
                    sidecar.size_px
                ),
            });
        }
        Ok(Self::from_pathloss(sidecar.tx, pl_db, sidecar.sim_params))
    }
}

/// JSON sidecar stored next to each radio-map PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioMapSidecar {
    pub tx: Pixel,
    pub size_px: usize,
    pub cell_m: f64,
    pub sim_params: SimParams,
    pub pl_window_db: [f64; 2],
    pub png: String,
    pub pathloss: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToAMap {
    pub tx: Pixel,
    pub cell_m: f64,
    pub toa_s: Grid<f64>,
}

impl ToAMap {
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_float_grid(path, io::TOA_MAGIC, &self.toa_s, self.cell_m)
    }

    pub fn load(path: &Path, tx: Pixel) -> Result<Self> {
        let (toa_s, cell_m) = io::read_float_grid(path, io::TOA_MAGIC)?;
        Ok(Self { tx, cell_m, toa_s })
    }
}

fn pathloss_from_field(field: &PathField, params: &SimParams) -> Grid<f64> {
    let cell = field.cell_m;
    let n = field.dist_m.size();
    Grid::from_fn(n, |p| {
        let d = field.dist_m.get(p).max(cell) / cell;
        -(params.l0_db
            + 10.0 * params.path_exponent * d.log10()
            + params.wall_db_per_cell * field.wall_cells.get(p) as f64
            + params.corner_db_per_rad * field.turn_rad.get(p))
    })
}

pub fn simulate_radio_map(map: &CityMap, tx: Pixel, params: &SimParams) -> Result<RadioMap> {
    params.validate()?;
    let field = dominant_path(map, tx, params)?;
    Ok(RadioMap::from_pathloss(
        tx,
        pathloss_from_field(&field, params),
        *params,
    ))
}

/// ToA along the dominant path chosen with `params`' wall cost.
pub fn simulate_toa(map: &CityMap, tx: Pixel, params: &SimParams) -> Result<ToAMap> {
    params.validate()?;
    let field = dominant_path(map, tx, params)?;
    Ok(toa_from_field(&field))
}

fn toa_from_field(field: &PathField) -> ToAMap {
    ToAMap {
        tx: field.source,
        cell_m: field.cell_m,
        toa_s: field.dist_m.map(|&d| d / SPEED_OF_LIGHT),
    }
}

/// Radio map and ToA map from a single dominant-path computation.
pub fn simulate(map: &CityMap, tx: Pixel, params: &SimParams) -> Result<(RadioMap, ToAMap)> {
    params.validate()?;
    let field = dominant_path(map, tx, params)?;
    Ok((
        RadioMap::from_pathloss(tx, pathloss_from_field(&field, params), *params),
        toa_from_field(&field),
    ))
}

/// Pathloss reading at `ue` with additive Gaussian noise (dB).
pub fn measure_rss(radio_map: &RadioMap, ue: Pixel, noise_db: f64, seed: u64) -> Result<f64> {
    radio_map.pl_db.check(ue)?;
    let truth = radio_map.pl_db.get(ue);
    if noise_db == 0.0 {
        return Ok(truth);
    }
    let normal = Normal::new(0.0, noise_db)
        .map_err(|e| Error::invalid(format!("noise_db {noise_db}: {e}")))?;
    Ok(truth + normal.sample(&mut rng::seeded(seed)))
}

// ---------------------------------------------------------------------------
// Cars
// ---------------------------------------------------------------------------

/// A 2x1 (or 1x2) car footprint: top-left pixel and orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Car {
    pub origin: Pixel,
    pub horizontal: bool,
}

impl Car {
    pub fn cells(self) -> [Pixel; 2] {
        let second = if self.horizontal {
            Pixel::new(self.origin.x + 1, self.origin.y)
        } else {
            Pixel::new(self.origin.x, self.origin.y + 1)
        };
        [self.origin, second]
    }
}

/// Non-overlapping cars on exterior cells, drawn with bounded retries.
pub fn place_cars(map: &CityMap, seed: u64, n_cars: usize) -> Result<Vec<Car>> {
    let n = map.size();
    let free = map.exterior_cells().len();
    let attempts = 1000 * n_cars.max(1);
    if 2 * n_cars > free {
        return Err(Error::CarPlacement {
            requested: n_cars,
            placed: 0,
            attempts: 0,
        });
    }
    let mut rng = rng::seeded(seed);
    let mut taken = map.cars.clone();
    let mut cars = Vec::with_capacity(n_cars);
    for _ in 0..attempts {
        if cars.len() == n_cars {
            break;
        }
        let horizontal = rng.random_bool(0.5);
        let (wmax, hmax) = if horizontal { (n - 1, n) } else { (n, n - 1) };
        let car = Car {
            origin: Pixel::new(rng.random_range(1..=wmax), rng.random_range(1..=hmax)),
            horizontal,
        };
        if car
            .cells()
            .iter()
            .all(|&p| map.is_exterior(p) && taken.get(p) == 0)
        {
            for p in car.cells() {
                taken[p] = 1;
            }
            cars.push(car);
        }
    }
    if cars.len() < n_cars {
        return Err(Error::CarPlacement {
            requested: n_cars,
            placed: cars.len(),
            attempts,
        });
    }
    Ok(cars)
}

/// Copy of `map` with `n_cars` extra car obstacles; buildings are untouched.
pub fn perturb_scene(map: &CityMap, seed: u64, n_cars: usize) -> Result<CityMap> {
    let mut out = map.clone();
    for car in place_cars(map, seed, n_cars)? {
        for p in car.cells() {
            out.cars[p] = 1;
        }
    }
    Ok(out)
}
