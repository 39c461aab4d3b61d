//! Nearest-neighbour descriptor matching by Euclidean distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Descriptor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f32,
    /// Best over second-best distance; 0 when `b` has a single descriptor.
    pub ratio: f32,
}

#[derive(Debug, Clone, Copy)]
struct Nearest {
    index: usize,
    best: f32,
    second: f32,
}

#[inline]
fn squared_distance(a: &Descriptor, b: &Descriptor) -> f32 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(query: &Descriptor, pool: &[Descriptor]) -> Option<Nearest> {
    let mut out: Option<Nearest> = None;
    for (i, cand) in pool.iter().enumerate() {
        let d = squared_distance(query, cand);
        match &mut out {
            None => {
                out = Some(Nearest {
                    index: i,
                    best: d,
                    second: f32::INFINITY,
                })
            }
            Some(n) if d < n.best => {
                n.second = n.best;
                n.best = d;
                n.index = i;
            }
            Some(n) if d < n.second => n.second = d,
            _ => {}
        }
    }
    out
}

/// Matches every descriptor of `a` to its nearest neighbour in `b`.
///
/// A pair is kept when the distance ratio to the second-nearest neighbour is below
/// `ratio_threshold` and the two descriptors are each other's nearest neighbour.
/// Output is ordered by `index_a`.
pub fn match_features(a: &[Descriptor], b: &[Descriptor], ratio_threshold: f32) -> Vec<MatchPair> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let forward: Vec<Nearest> = a.par_iter().map(|d| nearest(d, b).unwrap()).collect();
    let backward: Vec<usize> = b.par_iter().map(|d| nearest(d, a).unwrap().index).collect();

    forward
        .iter()
        .enumerate()
        .filter_map(|(ia, n)| {
            let best = n.best.sqrt();
            let second = n.second.sqrt();
            let ratio = if second.is_infinite() {
                0.0
            } else if second > 0.0 {
                best / second
            } else {
                1.0
            };
            (ratio < ratio_threshold && backward[n.index] == ia).then_some(MatchPair {
                index_a: ia,
                index_b: n.index,
                distance: best,
                ratio,
            })
        })
        .collect()
}
