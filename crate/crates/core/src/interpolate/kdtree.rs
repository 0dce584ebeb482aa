//! 3-D kd-tree over unit-sphere coordinates.
//!
//! Lon/lat points are embedded on the unit sphere; Euclidean (chord) distance
//! is monotone in great-circle distance, so nearest-neighbor queries in chord
//! metric are exact everywhere, including near the antimeridian. Ties are
//! broken by lower point index.

#[derive(Debug, Clone, Copy)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn from_lon_lat(lon_deg: f64, lat_deg: f64) -> Self {
        let lon = lon_deg.to_radians();
        let lat = lat_deg.to_radians();
        Point3 {
            x: lat.cos() * lon.cos(),
            y: lat.cos() * lon.sin(),
            z: lat.sin(),
        }
    }

    fn coord(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn dist2(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }
}

#[derive(Debug, Clone)]
struct Node {
    /// Index into the points array.
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl KdTree {
    pub fn build(points: Vec<Point3>) -> Self {
        let mut indices: Vec<usize> = (0..points.len()).collect();
        let mut tree = KdTree {
            points,
            nodes: Vec::new(),
            root: None,
        };
        tree.root = tree.build_rec(&mut indices, 0);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    fn build_rec(&mut self, indices: &mut [usize], depth: usize) -> Option<usize> {
        if indices.is_empty() {
            return None;
        }
        let axis = depth % 3;
        // Median split; order within equal coordinates fixed by point index
        // so the tree shape is deterministic.
        indices.sort_unstable_by(|&a, &b| {
            self.points[a]
                .coord(axis)
                .partial_cmp(&self.points[b].coord(axis))
                .unwrap()
                .then(a.cmp(&b))
        });
        let mid = indices.len() / 2;
        let point = indices[mid];
        let node_idx = self.nodes.len();
        self.nodes.push(Node {
            point,
            axis,
            left: None,
            right: None,
        });
        let (left_slice, rest) = indices.split_at_mut(mid);
        let right_slice = &mut rest[1..];
        let left = self.build_rec(left_slice, depth + 1);
        let right = self.build_rec(right_slice, depth + 1);
        self.nodes[node_idx].left = left;
        self.nodes[node_idx].right = right;
        node_idx.into()
    }

    /// Indices and squared chord distances of the `k` nearest points,
    /// ordered by (distance, index). `skip` excludes one point index.
    pub fn k_nearest(&self, query: &Point3, k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if let Some(root) = self.root {
            self.search(root, query, k, skip, &mut best);
        }
        best.into_iter().map(|(d2, i)| (i, d2)).collect()
    }

    fn search(
        &self,
        node_idx: usize,
        query: &Point3,
        k: usize,
        skip: Option<usize>,
        best: &mut Vec<(f64, usize)>,
    ) {
        let node = &self.nodes[node_idx];
        let point = &self.points[node.point];
        if skip != Some(node.point) {
            let d2 = query.dist2(point);
            let candidate = (d2, node.point);
            let pos = best.partition_point(|entry| *entry < candidate);
            if pos < k {
                best.insert(pos, candidate);
                best.truncate(k);
            }
        }
        let diff = query.coord(node.axis) - point.coord(node.axis);
        let (near, far) = if diff <= 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.search(n, query, k, skip, best);
        }
        let need_far =
            best.len() < k || diff * diff <= best.last().map(|b| b.0).unwrap_or(f64::MAX);
        if need_far {
            if let Some(f) = far {
                self.search(f, query, k, skip, best);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_k_nearest(
        points: &[Point3],
        query: &Point3,
        k: usize,
        skip: Option<usize>,
    ) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| skip != Some(*i))
            .map(|(i, p)| (query.dist2(p), i))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.truncate(k);
        all.into_iter().map(|(d2, i)| (i, d2)).collect()
    }

    #[test]
    fn matches_naive_scan() {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(13);
        let points: Vec<Point3> = (0..400)
            .map(|_| {
                Point3::from_lon_lat(
                    rng.random_range(-179.0..179.0),
                    rng.random_range(-85.0..85.0),
                )
            })
            .collect();
        let tree = KdTree::build(points.clone());
        for _ in 0..50 {
            let q = Point3::from_lon_lat(
                rng.random_range(-179.0..179.0),
                rng.random_range(-85.0..85.0),
            );
            for k in [1, 3, 7] {
                assert_eq!(
                    tree.k_nearest(&q, k, None),
                    naive_k_nearest(&points, &q, k, None)
                );
            }
        }
    }

    #[test]
    fn skip_excludes_by_index() {
        let points = vec![
            Point3::from_lon_lat(0.0, 0.0),
            Point3::from_lon_lat(0.0, 0.0), // coincident duplicate
            Point3::from_lon_lat(1.0, 1.0),
        ];
        let tree = KdTree::build(points.clone());
        let hits = tree.k_nearest(&points[0], 2, Some(0));
        assert_eq!(hits[0].0, 1, "coincident other point still returned");
        assert_eq!(hits[1].0, 2);
    }
}
