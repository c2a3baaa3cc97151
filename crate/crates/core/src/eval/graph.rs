use std::ops::RangeInclusive;

use rand::Rng;

/// Undirected edge; self-loops allowed.
pub type Edge = (usize, usize);

/// Random graph input: the edge count is drawn uniformly from `edge_count`,
/// then both endpoints of every edge are drawn uniformly from
/// `0..num_vertices`.
///
/// # Panics
///
/// If `num_vertices` is zero or the edge range is empty.
pub fn generate_graph_input<R: Rng + ?Sized>(
    num_vertices: usize,
    edge_count: RangeInclusive<usize>,
    rng: &mut R,
) -> Vec<Edge> {
    assert!(num_vertices >= 1, "graph needs at least one vertex");
    assert!(!edge_count.is_empty(), "empty edge-count range");
    let m = rng.gen_range(edge_count);
    (0..m)
        .map(|_| (rng.gen_range(0..num_vertices), rng.gen_range(0..num_vertices)))
        .collect()
}
