//! Optimal matching distance between two spectra.
//!
//! `d(a, b) = min over bijections pi of max_i |a_i - b_pi(i)|`, solved
//! exactly as a bottleneck assignment: binary search over the sorted
//! pairwise distances, with a bipartite perfect-matching test at each
//! threshold.

use num_complex::Complex64;

use crate::error::{ensure_dim, Result};

pub fn optimal_matching_distance(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    ensure_dim("spectra for matching distance", a.len(), b.len())?;
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let dist: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| (x - y).norm()).collect())
        .collect();
    let mut levels: Vec<f64> = dist.iter().flatten().copied().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let (mut lo, mut hi) = (0, levels.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if has_perfect_matching(&dist, levels[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(levels[lo])
}

fn has_perfect_matching(dist: &[Vec<f64>], threshold: f64) -> bool {
    let n = dist.len();
    let mut match_of_right: Vec<Option<usize>> = vec![None; n];
    for left in 0..n {
        let mut visited = vec![false; n];
        if !augment(left, dist, threshold, &mut visited, &mut match_of_right) {
            return false;
        }
    }
    true
}

fn augment(
    left: usize,
    dist: &[Vec<f64>],
    threshold: f64,
    visited: &mut [bool],
    match_of_right: &mut [Option<usize>],
) -> bool {
    for right in 0..dist.len() {
        if dist[left][right] > threshold || visited[right] {
            continue;
        }
        visited[right] = true;
        let free = match match_of_right[right] {
            None => true,
            Some(other) => augment(other, dist, threshold, visited, match_of_right),
        };
        if free {
            match_of_right[right] = Some(left);
            return true;
        }
    }
    false
}
