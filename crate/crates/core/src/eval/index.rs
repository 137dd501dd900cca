//! Nearest-neighbour structures: a kd-tree for k-NN queries and a uniform
//! hash grid for fixed-radius queries.

use std::collections::{BinaryHeap, HashMap};

use crate::geom::Vec3;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Permutation of point indices laid out as an implicit balanced tree.
    order: Vec<usize>,
    axes: Vec<u8>,
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        Self::build(points, &mut order, &mut axes);
        Self {
            points: points.to_vec(),
            order,
            axes,
        }
    }

    /// Median split; `axes` is aligned with `idx`.
    fn build(points: &[Vec3], idx: &mut [usize], axes: &mut [u8]) {
        if idx.is_empty() {
            return;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in idx.iter() {
            lo = lo.inf(&points[i]);
            hi = hi.sup(&points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
        axes[mid] = axis as u8;
        let (left, right) = idx.split_at_mut(mid);
        let (axes_l, axes_r) = axes.split_at_mut(mid);
        Self::build(points, left, axes_l);
        Self::build(points, &mut right[1..], &mut axes_r[1..]);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Vec3 {
        &self.points[i]
    }

    /// `k` nearest points as `(squared distance, index)`, closest first.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(f64, usize)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(q, k, 0, self.order.len(), &mut heap);
        let mut out: Vec<(f64, usize)> = heap.into_iter().map(|Candidate(d, i)| (d, i)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    pub fn nearest(&self, q: &Vec3) -> Option<(f64, usize)> {
        self.knn(q, 1).into_iter().next()
    }

    fn search(&self, q: &Vec3, k: usize, lo: usize, hi: usize, heap: &mut BinaryHeap<Candidate>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let p = &self.points[i];
        let d2 = (p - q).norm_squared();
        if heap.len() < k {
            heap.push(Candidate(d2, i));
        } else if d2 < heap.peek().unwrap().0 {
            heap.pop();
            heap.push(Candidate(d2, i));
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, k, near.0, near.1, heap);
        if heap.len() < k || diff * diff < heap.peek().unwrap().0 {
            self.search(q, k, far.0, far.1, heap);
        }
    }
}

/// Uniform hash grid answering "is any point within `radius`".
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    points: Vec<Vec3>,
}

impl SpatialGrid {
    pub fn new(points: &[Vec3], cell: f64) -> Self {
        assert!(cell > 0.0);
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self {
            cell,
            cells,
            points: points.to_vec(),
        }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    pub fn any_within(&self, q: &Vec3, radius: f64) -> bool {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let k = Self::key(q, self.cell);
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    if let Some(list) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if list.iter().any(|&i| (self.points[i] - q).norm_squared() <= r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}
