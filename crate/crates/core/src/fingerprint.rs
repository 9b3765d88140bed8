//! Pathloss fingerprint baselines: kNN and adaptive kNN over a database built
//! from radio maps.
//!
//! Fingerprints are compared in gray-level space, the same representation the
//! heat-map localizers consume.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dpm_sim::RadioMap;
use crate::error::{Error, Result};
use crate::grid::{Pixel, Point};
use crate::io;
use crate::scene::CityMap;

/// Measured gray-level pathloss, one value per base station.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub values: Vec<f64>,
}

impl Fingerprint {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// How the selected neighbours are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    InverseDistance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDb {
    pub locations: Vec<Pixel>,
    /// Row-major `M x J` matrix of gray values.
    vectors: Vec<f64>,
    n_bs: usize,
    pub stride: usize,
}

impl FingerprintDb {
    pub fn new(
        locations: Vec<Pixel>,
        vectors: Vec<f64>,
        n_bs: usize,
        stride: usize,
    ) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if vectors.len() != locations.len() * n_bs {
            return Err(Error::Shape(format!(
                "{} locations x {n_bs} base stations needs {} values, got {}",
                locations.len(),
                locations.len() * n_bs,
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("fingerprint entries must lie in [0, 1]"));
        }
        Ok(Self {
            locations,
            vectors,
            n_bs,
            stride,
        })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    pub fn vector(&self, m: usize) -> &[f64] {
        &self.vectors[m * self.n_bs..(m + 1) * self.n_bs]
    }

    /// Euclidean distance of every entry to `query`, in database order.
    pub fn distances(&self, query: &Fingerprint) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if query.values.len() != self.n_bs {
            return Err(Error::Shape(format!(
                "query has {} values, database has {} base stations",
                query.values.len(),
                self.n_bs
            )));
        }
        Ok(self
            .vectors
            .chunks_exact(self.n_bs)
            .map(|row| {
                row.iter()
                    .zip(&query.values)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }

    pub fn save(&self, dir: &Path, stem: &str, map_id: usize) -> Result<()> {
        let header = DbHeader {
            n_bs: self.n_bs,
            entries: self.len(),
            stride: self.stride,
            map_id,
            locations: self.locations.clone(),
        };
        io::write_json(&dir.join(format!("{stem}.json")), &header)?;
        let bytes: Vec<u8> = self.vectors.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<(Self, usize)> {
        let header: DbHeader = io::read_json(&dir.join(format!("{stem}.json")))?;
        let path = dir.join(format!("{stem}.bin"));
        let bytes = std::fs::read(&path).map_err(|e| io::missing_or_io(&path, e))?;
        if bytes.len() != 8 * header.entries * header.n_bs {
            return Err(Error::Format {
                path,
                reason: format!("expected {} bytes", 8 * header.entries * header.n_bs),
            });
        }
        let vectors = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let db = Self::new(header.locations, vectors, header.n_bs, header.stride)?;
        Ok((db, header.map_id))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DbHeader {
    n_bs: usize,
    entries: usize,
    stride: usize,
    map_id: usize,
    locations: Vec<Pixel>,
}

/// One database entry per exterior cell on the `stride` lattice
/// (`x, y ≡ 1 mod stride`), holding the gray values of all `radio_maps`.
pub fn build_fingerprint_db(
    radio_maps: &[RadioMap],
    city: &CityMap,
    stride: usize,
) -> Result<FingerprintDb> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    if radio_maps.is_empty() {
        return Err(Error::invalid("need at least one radio map"));
    }
    let n = city.size();
    if let Some(bad) = radio_maps.iter().find(|r| r.size() != n) {
        return Err(Error::Shape(format!(
            "radio map is {} px, city map {n} px",
            bad.size()
        )));
    }
    let mut locations = Vec::new();
    let mut vectors = Vec::new();
    for y in (1..=n).step_by(stride) {
        for x in (1..=n).step_by(stride) {
            let p = Pixel::new(x, y);
            if city.is_exterior(p) {
                locations.push(p);
                vectors.extend(radio_maps.iter().map(|r| r.gray.get(p)));
            }
        }
    }
    if locations.is_empty() {
        return Err(Error::invalid(format!(
            "no exterior cell on the stride-{stride} lattice"
        )));
    }
    FingerprintDb::new(locations, vectors, radio_maps.len(), stride)
}

/// Entry indices sorted by distance, ties in database order.
fn ranked(distances: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..distances.len()).collect();
    idx.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    idx
}

fn combine(db: &FingerprintDb, chosen: &[usize], distances: &[f64], weighting: Weighting) -> Point {
    match weighting {
        Weighting::Uniform => {
            let sum = chosen
                .iter()
                .fold(Point::default(), |acc, &m| acc + db.locations[m].to_point());
            sum.scale(1.0 / chosen.len() as f64)
        }
        Weighting::InverseDistance => {
            // an exact match takes all the weight
            if let Some(&m) = chosen.iter().find(|&&m| distances[m] == 0.0) {
                return db.locations[m].to_point();
            }
            let (mut acc, mut wsum) = (Point::default(), 0.0);
            for &m in chosen {
                let w = 1.0 / distances[m];
                acc = acc + db.locations[m].to_point().scale(w);
                wsum += w;
            }
            acc.scale(1.0 / wsum)
        }
    }
}

/// Centroid of the `k` database locations nearest to `query` in fingerprint space.
pub fn knn_localize(db: &FingerprintDb, query: &Fingerprint, k: usize) -> Result<Point> {
    knn_localize_weighted(db, query, k, Weighting::Uniform)
}

pub fn knn_localize_weighted(
    db: &FingerprintDb,
    query: &Fingerprint,
    k: usize,
    weighting: Weighting,
) -> Result<Point> {
    let d = db.distances(query)?;
    if k == 0 || k > db.len() {
        return Err(Error::invalid(format!(
            "k = {k} must be in 1..={}",
            db.len()
        )));
    }
    let order = ranked(&d);
    Ok(combine(db, &order[..k], &d, weighting))
}

/// Adaptive-kNN estimate and the number of neighbours actually used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveEstimate {
    pub location: Point,
    pub k: usize,
}

/// Keeps every entry within `alpha * d_min` of the query (at most `k_max`,
/// nearest first) and returns their centroid.
pub fn adaptive_knn_localize(
    db: &FingerprintDb,
    query: &Fingerprint,
    alpha: f64,
    k_max: usize,
) -> Result<AdaptiveEstimate> {
    let d = db.distances(query)?;
    if !(alpha >= 1.0) {
        return Err(Error::invalid(format!("alpha must be >= 1, got {alpha}")));
    }
    if k_max == 0 {
        return Err(Error::invalid("k_max must be >= 1"));
    }
    let order = ranked(&d);
    let threshold = alpha * d[order[0]];
    let chosen: Vec<usize> = order
        .into_iter()
        .take_while(|&m| d[m] <= threshold)
        .take(k_max)
        .collect();
    Ok(AdaptiveEstimate {
        location: combine(db, &chosen, &d, Weighting::Uniform),
        k: chosen.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpm_sim::{simulate_radio_map, SimParams};
    use crate::grid::Grid;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn db_from(rows: &[(Pixel, Vec<f64>)]) -> FingerprintDb {
        let j = rows[0].1.len();
        FingerprintDb::new(
            rows.iter().map(|r| r.0).collect(),
            rows.iter().flat_map(|r| r.1.clone()).collect(),
            j,
            1,
        )
        .unwrap()
    }

    fn random_db(seed: u64, m: usize, j: usize) -> FingerprintDb {
        let mut r = rng::seeded(seed);
        let rows: Vec<(Pixel, Vec<f64>)> = (0..m)
            .map(|i| {
                (
                    Pixel::new(1 + i % 17, 1 + i / 17),
                    (0..j).map(|_| r.random::<f64>()).collect(),
                )
            })
            .collect();
        db_from(&rows)
    }

    #[test]
    fn lattice_counts() {
        let city = CityMap::empty(8, 1.0);
        let rm = simulate_radio_map(&city, Pixel::new(1, 1), &SimParams::base()).unwrap();
        let maps = vec![rm.clone(), rm];
        assert_eq!(build_fingerprint_db(&maps, &city, 1).unwrap().len(), 64);
        assert_eq!(build_fingerprint_db(&maps, &city, 2).unwrap().len(), 16);
        assert!(build_fingerprint_db(&maps, &city, 0).is_err());
    }

    #[test]
    fn entries_match_radio_map_gray_values() {
        let city = CityMap::empty(8, 1.0);
        let a = simulate_radio_map(&city, Pixel::new(1, 1), &SimParams::base()).unwrap();
        let b = simulate_radio_map(&city, Pixel::new(8, 3), &SimParams::base()).unwrap();
        let db = build_fingerprint_db(&[a.clone(), b.clone()], &city, 1).unwrap();
        let p = Pixel::new(5, 6);
        let m = db.locations.iter().position(|&q| q == p).unwrap();
        assert_eq!(db.vector(m), &[a.gray.get(p), b.gray.get(p)]);
    }

    #[test]
    fn lattice_without_exterior_fails() {
        let mut city = CityMap::empty(16, 1.0);
        city.buildings = Grid::from_fn(16, |p| u8::from((p.x - 1) % 4 == 0 && (p.y - 1) % 4 == 0));
        let rm =
            RadioMap::from_pathloss(Pixel::new(2, 2), Grid::filled(16, -80.0), SimParams::base());
        assert!(build_fingerprint_db(&[rm], &city, 4).is_err());
    }

    #[test]
    fn exact_match_k1() {
        let db = db_from(&[
            (Pixel::new(1, 1), vec![0.1, 0.2]),
            (Pixel::new(5, 7), vec![0.4, 0.4]),
            (Pixel::new(9, 2), vec![0.9, 0.1]),
        ]);
        let est = knn_localize(&db, &Fingerprint::new(vec![0.4, 0.4]), 1).unwrap();
        assert_eq!(est, Point::new(5.0, 7.0));
    }

    #[test]
    fn equidistant_pair_gives_midpoint() {
        let db = db_from(&[
            (Pixel::new(2, 2), vec![0.3]),
            (Pixel::new(6, 4), vec![0.5]),
            (Pixel::new(30, 30), vec![0.9]),
        ]);
        let est = knn_localize(&db, &Fingerprint::new(vec![0.4]), 2).unwrap();
        assert_eq!(est, Point::new(4.0, 3.0));
    }

    #[test]
    fn knn_matches_exhaustive_scan() {
        let db = random_db(11, 50, 3);
        let mut r = rng::seeded(12);
        for _ in 0..20 {
            let q = Fingerprint::new((0..3).map(|_| r.random::<f64>()).collect());
            // oracle: repeatedly extract the minimum
            let mut pool: Vec<(usize, f64)> = (0..50)
                .map(|m| {
                    let d2: f64 = db
                        .vector(m)
                        .iter()
                        .zip(&q.values)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    (m, d2)
                })
                .collect();
            let mut picked = Vec::new();
            for _ in 0..5 {
                let (pos, _) = pool
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
                    .unwrap();
                picked.push(pool.remove(pos).0);
            }
            let cx = picked
                .iter()
                .map(|&m| db.locations[m].x as f64)
                .sum::<f64>()
                / 5.0;
            let cy = picked
                .iter()
                .map(|&m| db.locations[m].y as f64)
                .sum::<f64>()
                / 5.0;
            let est = knn_localize(&db, &q, 5).unwrap();
            assert!((est.x - cx).abs() < 1e-12 && (est.y - cy).abs() < 1e-12);
        }
    }

    #[test]
    fn k_equal_m_is_global_centroid() {
        let db = random_db(3, 30, 2);
        let cx = db.locations.iter().map(|p| p.x as f64).sum::<f64>() / 30.0;
        let cy = db.locations.iter().map(|p| p.y as f64).sum::<f64>() / 30.0;
        for q in [vec![0.0, 0.0], vec![1.0, 0.3]] {
            let est = knn_localize(&db, &Fingerprint::new(q), 30).unwrap();
            assert!((est.x - cx).abs() < 1e-12 && (est.y - cy).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_k_and_query_shape() {
        let db = random_db(3, 10, 2);
        let q = Fingerprint::new(vec![0.5, 0.5]);
        assert!(knn_localize(&db, &q, 0).is_err());
        assert!(knn_localize(&db, &q, 11).is_err());
        assert!(knn_localize(&db, &Fingerprint::new(vec![0.5]), 1).is_err());
        assert!(matches!(
            FingerprintDb::new(vec![], vec![], 2, 1),
            Err(Error::EmptyDatabase)
        ));
    }

    #[test]
    fn adaptive_exact_match_uses_one_neighbour() {
        let db = db_from(&[
            (Pixel::new(1, 1), vec![0.1]),
            (Pixel::new(3, 3), vec![0.5]),
            (Pixel::new(9, 9), vec![0.6]),
        ]);
        let est = adaptive_knn_localize(&db, &Fingerprint::new(vec![0.5]), 1.5, 8).unwrap();
        assert_eq!(est.k, 1);
        assert_eq!(est.location, Point::new(3.0, 3.0));
    }

    #[test]
    fn adaptive_all_equal_takes_first_k_max() {
        let rows: Vec<_> = (1..=6)
            .map(|i| (Pixel::new(i, 2 * i), vec![0.5, 0.5]))
            .collect();
        let db = db_from(&rows);
        let est = adaptive_knn_localize(&db, &Fingerprint::new(vec![0.1, 0.1]), 1.1, 4).unwrap();
        assert_eq!(est.k, 4);
        assert_eq!(est.location, Point::new(2.5, 5.0));
        assert!(adaptive_knn_localize(&db, &Fingerprint::new(vec![0.1, 0.1]), 0.9, 4).is_err());
    }

    #[test]
    fn adaptive_matches_rule_replay() {
        let db = random_db(21, 60, 4);
        let mut r = rng::seeded(22);
        let mut ks = Vec::new();
        for _ in 0..30 {
            let q = Fingerprint::new((0..4).map(|_| r.random::<f64>()).collect());
            let d: Vec<f64> = (0..db.len())
                .map(|m| {
                    db.vector(m)
                        .iter()
                        .zip(&q.values)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut inside: Vec<usize> = (0..db.len()).filter(|&m| d[m] <= 1.1 * dmin).collect();
            inside.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap().then(a.cmp(&b)));
            inside.truncate(8);
            let cx = inside
                .iter()
                .map(|&m| db.locations[m].x as f64)
                .sum::<f64>()
                / inside.len() as f64;
            let cy = inside
                .iter()
                .map(|&m| db.locations[m].y as f64)
                .sum::<f64>()
                / inside.len() as f64;
            let est = adaptive_knn_localize(&db, &q, 1.1, 8).unwrap();
            assert_eq!(est.k, inside.len());
            assert!((est.location.x - cx).abs() < 1e-12 && (est.location.y - cy).abs() < 1e-12);
            ks.push(est.k as f64);
        }
        let avg_k = ks.iter().sum::<f64>() / ks.len() as f64;
        assert!((1.0..=8.0).contains(&avg_k));
    }

    #[test]
    fn inverse_distance_weighting_prefers_closer_entry() {
        let db = db_from(&[
            (Pixel::new(0 + 1, 1), vec![0.0]),
            (Pixel::new(11, 1), vec![1.0]),
        ]);
        let est = knn_localize_weighted(
            &db,
            &Fingerprint::new(vec![0.25]),
            2,
            Weighting::InverseDistance,
        )
        .unwrap();
        // weights 4 and 4/3 -> x = (4*1 + 4/3*11) / (16/3) = 3.5
        assert!((est.x - 3.5).abs() < 1e-12);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let db = random_db(5, 12, 3);
        db.save(dir.path(), "fp", 7).unwrap();
        let (back, map_id) = FingerprintDb::load(dir.path(), "fp").unwrap();
        assert_eq!(back, db);
        assert_eq!(map_id, 7);
    }

    proptest! {
        #[test]
        fn permutation_invariance(seed in 0u64..1000, shift in 1usize..49) {
            let db = random_db(seed, 50, 3);
            let q = Fingerprint::new(vec![0.5, 0.4, 0.6]);
            let perm: Vec<usize> = (0..50).map(|i| (i + shift) % 50).collect();
            let permuted = FingerprintDb::new(
                perm.iter().map(|&m| db.locations[m]).collect(),
                perm.iter().flat_map(|&m| db.vector(m).to_vec()).collect(),
                3,
                1,
            ).unwrap();
            let a = knn_localize(&db, &q, 4).unwrap();
            let b = knn_localize(&permuted, &q, 4).unwrap();
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }
}
