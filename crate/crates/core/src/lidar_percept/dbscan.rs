//! Density-based clustering with an order-independent labelling.

use std::cmp::Ordering;

use crate::geometry::{Aabb3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Members sorted lexicographically by coordinates.
    pub points: Vec<Vec3>,
    pub centroid: Vec3,
    pub bbox: Aabb3,
}

impl Cluster {
    fn from_points(mut points: Vec<Vec3>) -> Self {
        points.sort_by(lex_cmp);
        let centroid = points.iter().fold(Vec3::ZERO, |a, p| a + *p) / points.len() as f64;
        let bbox = Aabb3::from_points(&points).expect("cluster is non-empty");
        Self { points, centroid, bbox }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Clustering {
    pub clusters: Vec<Cluster>,
    pub noise: Vec<Vec3>,
}

pub fn lex_cmp(a: &Vec3, b: &Vec3) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

/// Per-point labels: `Some(cluster)` or `None` for noise. A point counts
/// itself toward `min_pts`. Border points join the cluster of their nearest
/// core point, with ties going to the lexicographically smaller core point,
/// so the partition does not depend on input order.
pub fn dbscan_labels(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> =
        (0..n).map(|i| (0..n).filter(|&j| points[i].distance_squared(points[j]) <= eps2).collect()).collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut comp = vec![usize::MAX; n];
    let mut n_comp = 0;
    for start in 0..n {
        if !core[start] || comp[start] != usize::MAX {
            continue;
        }
        comp[start] = n_comp;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for &j in &neighbors[i] {
                if core[j] && comp[j] == usize::MAX {
                    comp[j] = n_comp;
                    stack.push(j);
                }
            }
        }
        n_comp += 1;
    }

    let mut labels: Vec<Option<usize>> = (0..n).map(|i| core[i].then_some(comp[i])).collect();
    for i in (0..n).filter(|&i| !core[i]) {
        let best = neighbors[i].iter().copied().filter(|&j| core[j]).min_by(|&a, &b| {
            points[i]
                .distance_squared(points[a])
                .total_cmp(&points[i].distance_squared(points[b]))
                .then_with(|| lex_cmp(&points[a], &points[b]))
        });
        labels[i] = best.map(|j| comp[j]);
    }
    labels
}

/// Groups points into clusters ordered by their lexicographically smallest
/// member; noise points are returned sorted.
pub fn dbscan(points: &[Vec3], eps: f64, min_pts: usize) -> Clustering {
    let labels = dbscan_labels(points, eps, min_pts);
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<Vec3>> = vec![Vec::new(); n_clusters];
    let mut noise = Vec::new();
    for (p, l) in points.iter().zip(&labels) {
        match l {
            Some(c) => groups[*c].push(*p),
            None => noise.push(*p),
        }
    }
    let mut clusters: Vec<Cluster> = groups.into_iter().filter(|g| !g.is_empty()).map(Cluster::from_points).collect();
    clusters.sort_by(|a, b| lex_cmp(&a.points[0], &b.points[0]));
    noise.sort_by(lex_cmp);
    Clustering { clusters, noise }
}
