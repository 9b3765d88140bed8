#![allow(dead_code)]

use radioloc::dpm_sim::SimParams;
use radioloc::scene::CityMap;
use radioloc::Pixel;

/// Textbook O(V^2) Dijkstra over the 8-connected grid, written without
/// reference to the library engine. Returns the minimum path cost
/// (length + wall penalty per entered obstacle cell) for every pixel.
pub fn brute_force_costs(map: &CityMap, tx: Pixel, params: &SimParams) -> Vec<f64> {
    let n = map.size();
    let wall = params.db_to_m * params.wall_db_per_cell;
    let obstacle = |x: usize, y: usize| map.is_obstacle(Pixel::new(x + 1, y + 1));
    let mut dist = vec![f64::INFINITY; n * n];
    let mut fixed = vec![false; n * n];
    dist[(tx.y - 1) * n + (tx.x - 1)] = 0.0;
    for _ in 0..n * n {
        let mut u = usize::MAX;
        for i in 0..n * n {
            if !fixed[i] && dist[i].is_finite() && (u == usize::MAX || dist[i] < dist[u]) {
                u = i;
            }
        }
        if u == usize::MAX {
            break;
        }
        fixed[u] = true;
        let (ux, uy) = ((u % n) as i64, (u / n) as i64);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (vx, vy) = (ux + dx, uy + dy);
                if vx < 0 || vy < 0 || vx >= n as i64 || vy >= n as i64 {
                    continue;
                }
                let len = if dx != 0 && dy != 0 { 2f64.sqrt() } else { 1.0 } * map.cell_m;
                let pen = if obstacle(vx as usize, vy as usize) {
                    wall
                } else {
                    0.0
                };
                let v = vy as usize * n + vx as usize;
                if dist[u] + len + pen < dist[v] {
                    dist[v] = dist[u] + len + pen;
                }
            }
        }
    }
    dist
}
