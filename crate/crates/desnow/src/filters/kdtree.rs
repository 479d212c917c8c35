//! Minimal 3D k-d tree for exact radius counting.
//!
//! Pruning only skips subtrees that provably cannot contain a match, so
//! query results are bit-identical to an O(n^2) scan using the same
//! `d^2 <= r^2` test.

#[derive(Debug)]
struct Node {
    point_idx: usize,
    axis: usize,
    left: Option<Box<Node>>,
    right: Option<Box<Node>>,
}

#[derive(Debug)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    root: Option<Box<Node>>,
}

impl KdTree {
    pub fn build(points: Vec<[f64; 3]>) -> Self {
        let mut indices: Vec<usize> = (0..points.len()).collect();
        let root = build_node(&points, &mut indices, 0);
        Self { points, root }
    }

    /// Number of points with squared distance `<= radius^2` from `center`,
    /// excluding the point at `exclude` (pass `usize::MAX` to keep all).
    pub fn count_within(&self, center: [f64; 3], radius: f64, exclude: usize) -> usize {
        let mut count = 0;
        if let Some(root) = &self.root {
            count_rec(root, &self.points, center, radius * radius, radius, exclude, &mut count);
        }
        count
    }
}

fn build_node(points: &[[f64; 3]], indices: &mut [usize], depth: usize) -> Option<Box<Node>> {
    if indices.is_empty() {
        return None;
    }
    let axis = depth % 3;
    let mid = indices.len() / 2;
    indices.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let point_idx = indices[mid];
    let (left, rest) = indices.split_at_mut(mid);
    let right = &mut rest[1..];
    Some(Box::new(Node {
        point_idx,
        axis,
        left: build_node(points, left, depth + 1),
        right: build_node(points, right, depth + 1),
    }))
}

fn count_rec(
    node: &Node,
    points: &[[f64; 3]],
    center: [f64; 3],
    r2: f64,
    r: f64,
    exclude: usize,
    count: &mut usize,
) {
    let p = points[node.point_idx];
    if node.point_idx != exclude {
        let dx = p[0] - center[0];
        let dy = p[1] - center[1];
        let dz = p[2] - center[2];
        if dx * dx + dy * dy + dz * dz <= r2 {
            *count += 1;
        }
    }
    let delta = center[node.axis] - p[node.axis];
    if delta <= r {
        if let Some(left) = &node.left {
            count_rec(left, points, center, r2, r, exclude, count);
        }
    }
    if delta >= -r {
        if let Some(right) = &node.right {
            count_rec(right, points, center, r2, r, exclude, count);
        }
    }
}
