//! Synthetic city maps, base-station/UE placement and on-disk datasets.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpm_sim::{self, RadioMap, SimParams, ToAMap};
use crate::error::{Error, Result};
use crate::grid::{Grid, Pixel};
use crate::io;
use crate::rng;

// ---------------------------------------------------------------------------
// CityMap
// ---------------------------------------------------------------------------

/// Binary occupancy grid of buildings plus an optional car overlay.
#[derive(Debug, Clone, PartialEq)]
pub struct CityMap {
    pub cell_m: f64,
    /// 1 = building interior, 0 = exterior.
    pub buildings: Grid<u8>,
    /// 1 = car, only ever set on exterior cells.
    pub cars: Grid<u8>,
}

impl CityMap {
    /// All-exterior map.
    pub fn empty(size_px: usize, cell_m: f64) -> Self {
        Self {
            cell_m,
            buildings: Grid::filled(size_px, 0),
            cars: Grid::filled(size_px, 0),
        }
    }

    pub fn from_buildings(buildings: Grid<u8>, cell_m: f64) -> Result<Self> {
        let n = buildings.size();
        let map = Self {
            cell_m,
            buildings,
            cars: Grid::filled(n, 0),
        };
        map.validate()?;
        Ok(map)
    }

    pub fn size(&self) -> usize {
        self.buildings.size()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cars.size() != self.buildings.size() {
            return Err(Error::Shape(format!(
                "car overlay is {0}x{0}, buildings {1}x{1}",
                self.cars.size(),
                self.buildings.size()
            )));
        }
        if !(self.cell_m > 0.0) {
            return Err(Error::invalid(format!(
                "cell_m must be positive, got {}",
                self.cell_m
            )));
        }
        for (&b, &c) in self.buildings.as_slice().iter().zip(self.cars.as_slice()) {
            if b > 1 || c > 1 {
                return Err(Error::invalid("occupancy grids must be 0/1 valued"));
            }
            if b == 1 && c == 1 {
                return Err(Error::invalid("car placed on a building cell"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn is_building(&self, p: Pixel) -> bool {
        self.buildings.get(p) != 0
    }

    /// Building or car: a cell the signal has to penetrate.
    #[inline]
    pub fn is_obstacle(&self, p: Pixel) -> bool {
        self.buildings.get(p) != 0 || self.cars.get(p) != 0
    }

    /// Exterior means "not a building"; cars stand on exterior cells.
    #[inline]
    pub fn is_exterior(&self, p: Pixel) -> bool {
        self.buildings.contains(p) && self.buildings.get(p) == 0
    }

    pub fn exterior_cells(&self) -> Vec<Pixel> {
        self.buildings
            .pixels()
            .filter(|&p| self.buildings.get(p) == 0)
            .collect()
    }

    pub fn building_fraction(&self) -> f64 {
        let n = self.buildings.as_slice().len();
        self.buildings
            .as_slice()
            .iter()
            .filter(|&&b| b != 0)
            .count() as f64
            / n as f64
    }

    /// Whether the exterior cells form one 4-connected component.
    pub fn exterior_is_connected(&self) -> bool {
        let exterior = self.exterior_cells();
        let Some(&start) = exterior.first() else {
            return false;
        };
        let n = self.size();
        let mut seen = Grid::filled(n, false);
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0usize;
        while let Some(p) = stack.pop() {
            count += 1;
            for q in neighbors4(p, n) {
                if !seen[q] && self.buildings.get(q) == 0 {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        count == exterior.len()
    }

    /// Check that `p` is on the grid and outside every building.
    pub fn check_exterior(&self, p: Pixel) -> Result<()> {
        self.buildings.check(p)?;
        if self.is_building(p) {
            return Err(Error::InsideBuilding { x: p.x, y: p.y });
        }
        Ok(())
    }
}

fn neighbors4(p: Pixel, n: usize) -> impl Iterator<Item = Pixel> {
    let cand = [
        (p.x.wrapping_sub(1), p.y),
        (p.x + 1, p.y),
        (p.x, p.y.wrapping_sub(1)),
        (p.x, p.y + 1),
    ];
    cand.into_iter()
        .filter(move |&(x, y)| (1..=n).contains(&x) && (1..=n).contains(&y))
        .map(|(x, y)| Pixel::new(x, y))
}

/// 0/1 occupancy to 0/255 image values and back.
pub fn occupancy_to_image(g: &Grid<u8>) -> Grid<u8> {
    g.map(|&v| if v != 0 { 255 } else { 0 })
}

pub fn image_to_occupancy(g: &Grid<u8>) -> Grid<u8> {
    g.map(|&v| u8::from(v >= 128))
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Bounds for the rectangular buildings of [`generate_city_map`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildingParams {
    pub min_side: usize,
    pub max_side: usize,
    pub max_fraction: f64,
    pub max_rounds: usize,
}

impl Default for BuildingParams {
    fn default() -> Self {
        Self {
            min_side: 4,
            max_side: 12,
            max_fraction: 0.6,
            max_rounds: 200,
        }
    }
}

/// Random axis-aligned rectangular buildings, resampled until the exterior is
/// 4-connected and the building fraction is at most `params.max_fraction`.
pub fn generate_city_map(
    seed: u64,
    size_px: usize,
    n_buildings: usize,
    params: &BuildingParams,
) -> Result<CityMap> {
    if size_px < 16 {
        return Err(Error::invalid(format!(
            "size_px must be >= 16, got {size_px}"
        )));
    }
    if params.min_side == 0 || params.min_side > params.max_side || params.max_side > size_px {
        return Err(Error::invalid(format!(
            "building sides {}..={} invalid for a {size_px} px map",
            params.min_side, params.max_side
        )));
    }
    let max_fraction = params.max_fraction.min(0.6);
    let mut rng = rng::seeded(seed);
    for _ in 0..params.max_rounds.max(1) {
        let mut buildings = Grid::filled(size_px, 0u8);
        for _ in 0..n_buildings {
            let w = rng.random_range(params.min_side..=params.max_side);
            let h = rng.random_range(params.min_side..=params.max_side);
            let x0 = rng.random_range(1..=size_px - w + 1);
            let y0 = rng.random_range(1..=size_px - h + 1);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    buildings[Pixel::new(x, y)] = 1;
                }
            }
        }
        let map = CityMap {
            cell_m: 1.0,
            cars: Grid::filled(size_px, 0),
            buildings,
        };
        if map.building_fraction() <= max_fraction && map.exterior_is_connected() {
            return Ok(map);
        }
    }
    Err(Error::MapGeneration {
        rounds: params.max_rounds.max(1),
        size_px,
        n_buildings,
        min_side: params.min_side,
        max_side: params.max_side,
    })
}

/// `count` distinct exterior cells drawn uniformly without replacement.
pub fn place_points(map: &CityMap, count: usize, seed: u64) -> Result<Vec<Pixel>> {
    let exterior = map.exterior_cells();
    if count > exterior.len() {
        return Err(Error::NotEnoughExterior {
            requested: count,
            available: exterior.len(),
        });
    }
    let mut rng = rng::seeded(seed);
    Ok(index::sample(&mut rng, exterior.len(), count)
        .into_iter()
        .map(|i| exterior[i])
        .collect())
}

// ---------------------------------------------------------------------------
// Scenes and datasets
// ---------------------------------------------------------------------------

/// One city map with its base stations and UE test locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: usize,
    pub city: CityMap,
    pub bs: Vec<Pixel>,
    pub ue: Vec<Pixel>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.city.validate()?;
        if self.bs.is_empty() {
            return Err(Error::invalid("a scene needs at least one base station"));
        }
        for &p in self.bs.iter().chain(&self.ue) {
            self.city.check_exterior(p)?;
        }
        let distinct: BTreeSet<_> = self.bs.iter().collect();
        if distinct.len() != self.bs.len() {
            return Err(Error::invalid("base station locations must be distinct"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub maps: usize,
    pub size_px: usize,
    pub cell_m: f64,
    pub n_buildings: usize,
    pub building: BuildingParams,
    pub n_bs: usize,
    pub ue_per_scene: usize,
    pub split: SplitCounts,
    pub sim_params: SimParams,
    pub out_dir: PathBuf,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            maps: 20,
            size_px: 64,
            cell_m: 1.0,
            n_buildings: 16,
            building: BuildingParams::default(),
            n_bs: 5,
            ue_per_scene: 50,
            split: SplitCounts {
                train: 14,
                val: 3,
                test: 3,
            },
            sim_params: SimParams::base(),
            out_dir: PathBuf::from("dataset"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioMapFiles {
    pub png: String,
    pub sidecar: String,
    pub pathloss: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: usize,
    pub split: Split,
    pub seed: u64,
    pub city_map: String,
    pub bs: Vec<Pixel>,
    pub ue: Vec<Pixel>,
    pub radio_maps: Vec<RadioMapFiles>,
    pub toa_maps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub size_px: usize,
    pub cell_m: f64,
    pub n_bs: usize,
    pub sim_params: SimParams,
    pub scenes: Vec<SceneEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn split_ids(&self, split: Split) -> Vec<usize> {
        self.scenes
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.id)
            .collect()
    }

    pub fn scene(&self, id: usize) -> Option<&SceneEntry> {
        self.scenes.iter().find(|s| s.id == id)
    }
}

fn assign_splits(maps: usize, counts: SplitCounts, seed: u64) -> Result<Vec<Split>> {
    if counts.train + counts.val + counts.test != maps {
        return Err(Error::invalid(format!(
            "split {}/{}/{} does not add up to {maps} maps",
            counts.train, counts.val, counts.test
        )));
    }
    let mut order: Vec<usize> = (0..maps).collect();
    order.shuffle(&mut rng::seeded(rng::derive(seed, "split", 0)));
    let mut splits = vec![Split::Train; maps];
    for (rank, &scene) in order.iter().enumerate() {
        splits[scene] = if rank < counts.train {
            Split::Train
        } else if rank < counts.train + counts.val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(splits)
}

/// Generate one scene deterministically from the dataset seed.
pub fn generate_scene(config: &DatasetConfig, id: usize) -> Result<(Scene, u64)> {
    let seed = rng::derive(config.seed, "scene", id as u64);
    let mut city = generate_city_map(
        rng::derive(seed, "city", 0),
        config.size_px,
        config.n_buildings,
        &config.building,
    )?;
    city.cell_m = config.cell_m;
    let points = place_points(
        &city,
        config.n_bs + config.ue_per_scene,
        rng::derive(seed, "points", 0),
    )?;
    let (bs, ue) = points.split_at(config.n_bs);
    Ok((
        Scene {
            id,
            city,
            bs: bs.to_vec(),
            ue: ue.to_vec(),
        },
        seed,
    ))
}

fn write_scene(config: &DatasetConfig, id: usize, split: Split, out: &Path) -> Result<SceneEntry> {
    let (scene, seed) = generate_scene(config, id)?;
    scene.validate()?;
    let city_map = format!("maps/scene_{id:03}.png");
    io::write_gray_png(
        &out.join(&city_map),
        &occupancy_to_image(&scene.city.buildings),
    )?;
    let mut radio_maps = Vec::with_capacity(scene.bs.len());
    let mut toa_maps = Vec::with_capacity(scene.bs.len());
    for (j, &tx) in scene.bs.iter().enumerate() {
        let (radio, toa) = dpm_sim::simulate(&scene.city, tx, &config.sim_params)?;
        let stem = format!("radio/scene_{id:03}_bs{j}");
        radio_maps.push(radio.save(out, &stem, scene.city.cell_m)?);
        let toa_file = format!("toa/scene_{id:03}_bs{j}.toa");
        toa.save(&out.join(&toa_file))?;
        toa_maps.push(toa_file);
    }
    Ok(SceneEntry {
        id,
        split,
        seed,
        city_map,
        bs: scene.bs,
        ue: scene.ue,
        radio_maps,
        toa_maps,
    })
}

/// Generate all scenes, simulate their radio and ToA maps and write the
/// dataset plus `manifest.json` under `config.out_dir`.
pub fn build_dataset(config: &DatasetConfig) -> Result<DatasetManifest> {
    config.sim_params.validate()?;
    if config.n_bs == 0 {
        return Err(Error::invalid("n_bs must be >= 1"));
    }
    let out = &config.out_dir;
    for sub in ["maps", "radio", "toa"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    let splits = assign_splits(config.maps, config.split, config.seed)?;
    let scenes: Vec<SceneEntry> = (0..config.maps)
        .into_par_iter()
        .map(|id| {
            write_scene(config, id, splits[id], out).map_err(|e| Error::Scene {
                scene: id,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        version: 1,
        seed: config.seed,
        size_px: config.size_px,
        cell_m: config.cell_m,
        n_bs: config.n_bs,
        sim_params: config.sim_params,
        scenes,
    };
    io::write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// A dataset on disk: manifest plus its root directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = io::read_json(&root.join(MANIFEST_FILE))?;
        Ok(Self { root, manifest })
    }

    /// Every file the manifest references, in manifest order.
    pub fn referenced_files(&self) -> Vec<PathBuf> {
        let mut files = Vec::new();
        for s in &self.manifest.scenes {
            files.push(self.root.join(&s.city_map));
            for r in &s.radio_maps {
                files.push(self.root.join(&r.png));
                files.push(self.root.join(&r.sidecar));
                files.push(self.root.join(&r.pathloss));
            }
            files.extend(s.toa_maps.iter().map(|t| self.root.join(t)));
        }
        files
    }

    pub fn check_files(&self) -> Result<()> {
        match self.referenced_files().into_iter().find(|f| !f.is_file()) {
            Some(missing) => Err(Error::MissingFile(missing)),
            None => Ok(()),
        }
    }

    pub fn load_scene(&self, id: usize) -> Result<Scene> {
        let entry = self
            .manifest
            .scene(id)
            .ok_or_else(|| Error::invalid(format!("scene {id} not in manifest")))?;
        let image = io::read_gray_png(&self.root.join(&entry.city_map))?;
        let city = CityMap::from_buildings(image_to_occupancy(&image), self.manifest.cell_m)?;
        Ok(Scene {
            id,
            city,
            bs: entry.bs.clone(),
            ue: entry.ue.clone(),
        })
    }

    pub fn load_radio_maps(&self, id: usize) -> Result<Vec<RadioMap>> {
        let entry = self
            .manifest
            .scene(id)
            .ok_or_else(|| Error::invalid(format!("scene {id} not in manifest")))?;
        entry
            .radio_maps
            .iter()
            .map(|files| RadioMap::load(&self.root, files))
            .collect()
    }

    pub fn load_toa_maps(&self, id: usize) -> Result<Vec<ToAMap>> {
        let entry = self
            .manifest
            .scene(id)
            .ok_or_else(|| Error::invalid(format!("scene {id} not in manifest")))?;
        entry
            .bs
            .iter()
            .zip(&entry.toa_maps)
            .map(|(&tx, file)| ToAMap::load(&self.root.join(file), tx))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_buildings_gives_empty_map() {
        let map = generate_city_map(0, 64, 0, &BuildingParams::default()).unwrap();
        assert_eq!(map.building_fraction(), 0.0);
        assert!(map.exterior_is_connected());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_city_map(7, 64, 8, &BuildingParams::default()).unwrap();
        let b = generate_city_map(7, 64, 8, &BuildingParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generated_map_respects_constraints() {
        let map = generate_city_map(7, 64, 8, &BuildingParams::default()).unwrap();
        let f = map.building_fraction();
        assert!(f > 0.0 && f <= 0.6, "fraction {f}");
        assert!(flood_fill_connected(&map));
    }

    /// Independent connectivity check: BFS over a plain boolean matrix.
    fn flood_fill_connected(map: &CityMap) -> bool {
        let n = map.size();
        let free: Vec<Vec<bool>> = (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| map.buildings.as_slice()[r * n + c] == 0)
                    .collect()
            })
            .collect();
        let total = free.iter().flatten().filter(|&&f| f).count();
        let start = (0..n * n).find(|&i| free[i / n][i % n]).unwrap();
        let mut seen = vec![vec![false; n]; n];
        let mut queue = std::collections::VecDeque::from([(start / n, start % n)]);
        seen[start / n][start % n] = true;
        let mut count = 0;
        while let Some((r, c)) = queue.pop_front() {
            count += 1;
            let mut push = |r: usize, c: usize| {
                if free[r][c] && !seen[r][c] {
                    seen[r][c] = true;
                    queue.push_back((r, c));
                }
            };
            if r > 0 {
                push(r - 1, c);
            }
            if r + 1 < n {
                push(r + 1, c);
            }
            if c > 0 {
                push(r, c - 1);
            }
            if c + 1 < n {
                push(r, c + 1);
            }
        }
        count == total
    }

    #[test]
    fn impossible_constraints_fail_with_parameters() {
        let params = BuildingParams {
            min_side: 15,
            max_side: 16,
            max_fraction: 0.6,
            max_rounds: 5,
        };
        let err = generate_city_map(1, 16, 40, &params).unwrap_err();
        assert!(
            matches!(
                err,
                Error::MapGeneration {
                    rounds: 5,
                    n_buildings: 40,
                    ..
                }
            ),
            "{err}"
        );
        assert!(generate_city_map(1, 8, 0, &BuildingParams::default()).is_err());
    }

    #[test]
    fn place_points_exhausts_small_map() {
        let map = CityMap::empty(4, 1.0);
        let pts = place_points(&map, 16, 0).unwrap();
        let set: BTreeSet<_> = pts.iter().copied().collect();
        assert_eq!(set.len(), 16);
        assert_eq!(set, map.exterior_cells().into_iter().collect());
    }

    #[test]
    fn place_points_on_exterior_and_deterministic() {
        let map = generate_city_map(3, 64, 10, &BuildingParams::default()).unwrap();
        let pts = place_points(&map, 5, 3).unwrap();
        assert_eq!(pts.len(), 5);
        assert_eq!(pts.iter().collect::<BTreeSet<_>>().len(), 5);
        assert!(pts.iter().all(|&p| map.buildings.get(p) == 0));
        assert_eq!(pts, place_points(&map, 5, 3).unwrap());
    }

    #[test]
    fn place_points_reports_both_counts() {
        let map = CityMap::empty(4, 1.0);
        match place_points(&map, 17, 0) {
            Err(Error::NotEnoughExterior {
                requested: 17,
                available: 16,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn splits_partition_scenes() {
        let s = assign_splits(
            10,
            SplitCounts {
                train: 6,
                val: 2,
                test: 2,
            },
            4,
        )
        .unwrap();
        assert_eq!(s.iter().filter(|&&x| x == Split::Train).count(), 6);
        assert_eq!(s.iter().filter(|&&x| x == Split::Val).count(), 2);
        assert_eq!(s.iter().filter(|&&x| x == Split::Test).count(), 2);
        assert!(assign_splits(
            10,
            SplitCounts {
                train: 1,
                val: 1,
                test: 1
            },
            0
        )
        .is_err());
    }
}
