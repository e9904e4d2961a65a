//! All-pairs neighbour searches.

use nalgebra::Vector3;

/// Distance from every point to its third nearest other point (or the
/// farthest other point when there are fewer than three; 0 for a lone point).
pub fn third_neighbour_distances(points: &[Vector3<f64>]) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d2: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| {
                    let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
                    dx * dx + dy * dy + dz * dz
                })
                .collect();
            d2.sort_by(f64::total_cmp);
            match d2.len() {
                0 => 0.0,
                n => d2[n.min(3) - 1].sqrt(),
            }
        })
        .collect()
}

/// Mean value of the `k` sources nearest to `(u, v)`, ties by list order.
pub fn knn_mean(sources: &[(f64, f64, f64)], u: f64, v: f64, k: usize) -> f64 {
    let mut order: Vec<usize> = (0..sources.len()).collect();
    let d = |i: usize| {
        let (x, y, _) = sources[i];
        (x - u) * (x - u) + (y - v) * (y - v)
    };
    // Insertion sort keeps equal distances in list order.
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && d(order[j - 1]) > d(order[j]) {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let k = k.min(sources.len());
    order[..k].iter().map(|&i| sources[i].2).sum::<f64>() / k as f64
}
