use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

use super::PointCloud;

/// Neighbors per point when no mesh connectivity is available.
pub const DEFAULT_KNN: usize = 8;

/// Number of sources used to estimate the geodesic diameter.
pub const DIAMETER_SOURCES: usize = 16;

/// Shortest-path distances over a kNN (or mesh edge) graph, computed per
/// source on demand and cached.
#[derive(Debug)]
pub struct GeodesicField {
    label: String,
    adjacency: Vec<Vec<(usize, f64)>>,
    cache: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist(p: &PointCloud, i: usize, j: usize) -> f64 {
    let (a, b) = (p.point(i), p.point(j));
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn knn_edges(p: &PointCloud, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = p.len();
    let k = k.min(n - 1);
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (dist(p, i, j), j)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k, cmp);
            cand.truncate(k);
        }
        for &(d, j) in &cand {
            adjacency[i].push((j, d));
            adjacency[j].push((i, d));
        }
    }
    dedup(adjacency)
}

fn mesh_edges(p: &PointCloud, faces: &[[usize; 3]]) -> Vec<Vec<(usize, f64)>> {
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p.len()];
    for f in faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            let d = dist(p, a, b);
            adjacency[a].push((b, d));
            adjacency[b].push((a, d));
        }
    }
    dedup(adjacency)
}

fn dedup(mut adjacency: Vec<Vec<(usize, f64)>>) -> Vec<Vec<(usize, f64)>> {
    for list in &mut adjacency {
        list.sort_by_key(|e| e.0);
        list.dedup_by_key(|e| e.0);
    }
    adjacency
}

/// Sizes of the connected components, largest first.
fn component_sizes(adjacency: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut sizes = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![s];
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            for &(w, _) in &adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

/// Builds the geodesic field of `p`: mesh edges when faces are present,
/// otherwise a symmetrized `knn` graph with Euclidean weights.
pub fn geodesics(p: &PointCloud, knn: usize) -> Result<GeodesicField> {
    if knn == 0 && p.faces().is_none() {
        return Err(Error::Contract("knn must be positive".into()));
    }
    let adjacency = match p.faces() {
        Some(faces) => mesh_edges(p, faces),
        None => knn_edges(p, knn),
    };
    let sizes = component_sizes(&adjacency);
    if sizes.len() > 1 {
        return Err(Error::Disconnected { sizes });
    }
    Ok(GeodesicField {
        label: p.label().to_string(),
        adjacency,
        cache: Mutex::new(HashMap::new()),
    })
}

impl GeodesicField {
    /// Field over an explicit undirected graph on `n` vertices.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], label: impl Into<String>) -> Result<Self> {
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            let limit = n;
            for index in [a, b] {
                if index >= n {
                    return Err(Error::Index {
                        op: "GeodesicField::from_edges",
                        index,
                        limit,
                    });
                }
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Contract(format!("edge ({a}, {b}) has weight {w}")));
            }
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        let adjacency = dedup(adjacency);
        let sizes = component_sizes(&adjacency);
        if sizes.len() > 1 {
            return Err(Error::Disconnected { sizes });
        }
        Ok(GeodesicField {
            label: label.into(),
            adjacency,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    fn dijkstra(&self, src: usize) -> Vec<f64> {
        let n = self.adjacency.len();
        let mut d = vec![f64::INFINITY; n];
        d[src] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Entry(0.0, src));
        while let Some(Entry(du, u)) = heap.pop() {
            if du > d[u] {
                continue;
            }
            for &(v, w) in &self.adjacency[u] {
                let nd = du + w;
                if nd < d[v] {
                    d[v] = nd;
                    heap.push(Entry(nd, v));
                }
            }
        }
        d
    }

    /// Distances from `src` to every point.
    pub fn row(&self, src: usize) -> Arc<Vec<f64>> {
        let mut cache = self.cache.lock().expect("geodesic cache poisoned");
        if let Some(r) = cache.get(&src) {
            return Arc::clone(r);
        }
        let r = Arc::new(self.dijkstra(src));
        cache.insert(src, Arc::clone(&r));
        r
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.row(i)[j]
    }

    /// Largest distance seen from [`DIAMETER_SOURCES`] evenly spaced sources
    /// (all sources on small graphs).
    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let sources: Vec<usize> = if n <= DIAMETER_SOURCES {
            (0..n).collect()
        } else {
            (0..DIAMETER_SOURCES).map(|s| s * n / DIAMETER_SOURCES).collect()
        };
        sources
            .into_iter()
            .map(|s| self.row(s).iter().copied().fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffmat::Mat;

    fn line(n: usize) -> PointCloud {
        PointCloud::new(Mat::from_fn(n, 3, |r, c| if c == 0 { r as f64 } else { 0.0 }), "line").unwrap()
    }

    #[test]
    fn path_graph_distances() {
        let p = line(4);
        let faces = vec![[0, 1, 1], [1, 2, 2], [2, 3, 3]];
        let p = PointCloud::with_faces(p.coords().clone(), faces, "path").unwrap();
        let g = geodesics(&p, DEFAULT_KNN).unwrap();
        assert_eq!(g.distance(0, 2), 2.0);
        assert_eq!(g.distance(0, 3), 3.0);
        assert_eq!(g.diameter(), 3.0);
        for i in 0..4 {
            assert_eq!(g.distance(i, i), 0.0);
        }
    }

    /// All-pairs shortest paths by Floyd–Warshall on the same edge set.
    fn floyd_warshall(g: &GeodesicField) -> Vec<Vec<f64>> {
        let n = g.len();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for i in 0..n {
            d[i][i] = 0.0;
            for &(j, w) in g.neighbors(i) {
                d[i][j] = d[i][j].min(w);
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[i][k] + d[k][j];
                    if via < d[i][j] {
                        d[i][j] = via;
                    }
                }
            }
        }
        d
    }

    #[test]
    fn dijkstra_matches_floyd_warshall() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let coords = Mat::from_fn(100, 3, |_, _| rng.gen_range(-1.0..1.0));
        let p = PointCloud::new(coords, "rand").unwrap();
        let g = geodesics(&p, DEFAULT_KNN).unwrap();
        let oracle = floyd_warshall(&g);
        for i in 0..100 {
            let row = g.row(i);
            for j in 0..100 {
                assert!((row[j] - oracle[i][j]).abs() <= 1e-9);
                assert!((row[j] - g.distance(j, i)).abs() <= 1e-9);
            }
        }
        // triangle inequality on sampled triples
        for _ in 0..500 {
            let (a, b, c) = (rng.gen_range(0..100), rng.gen_range(0..100), rng.gen_range(0..100));
            assert!(g.distance(a, c) <= g.distance(a, b) + g.distance(b, c) + 1e-12);
        }
    }

    #[test]
    fn disconnected_graph_reports_components() {
        let mut coords = Mat::zeros(10, 3);
        for i in 0..10 {
            coords.set(i, 0, if i < 6 { i as f64 * 0.1 } else { 100.0 + i as f64 * 0.1 });
        }
        let p = PointCloud::new(coords, "split").unwrap();
        match geodesics(&p, 2) {
            Err(Error::Disconnected { sizes }) => assert_eq!(sizes, vec![6, 4]),
            other => panic!("expected disconnected error, got {other:?}"),
        }
    }

    #[test]
    fn rigid_motion_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let coords = Mat::from_fn(60, 3, |_, _| rng.gen_range(-1.0..1.0));
        let p = PointCloud::new(coords, "r").unwrap();
        let q = p.rotated(&super::super::random_rotation(4)).unwrap();
        let (gp, gq) = (geodesics(&p, 8).unwrap(), geodesics(&q, 8).unwrap());
        for i in (0..60).step_by(7) {
            for j in 0..60 {
                assert!((gp.distance(i, j) - gq.distance(i, j)).abs() < 1e-9);
            }
        }
    }
}
