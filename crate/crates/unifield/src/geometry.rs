//! Non-differentiable geometric index computations: farthest point sampling,
//! exact k-nearest neighbors, and inverse-distance interpolation weights.
//!
//! All distance comparisons run on exact f64 squared distances with ties
//! broken by ascending index, so sequential and parallel paths return
//! identical indices. The `kernels` submodule exposes both paths directly
//! for differential tests and benches.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorId};

/// A set of 3-D points in dataset-native length units.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || !coords.len().is_multiple_of(3) {
            return Err(Error::contract(format!(
                "point set needs 3 coordinates per point, got buffer of {}",
                coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("point coordinates must be finite"));
        }
        Ok(PointSet { coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        [self.coords[3 * i], self.coords[3 * i + 1], self.coords[3 * i + 2]]
    }

    pub fn select(&self, indices: &[usize]) -> PointSet {
        let mut coords = Vec::with_capacity(indices.len() * 3);
        for &i in indices {
            coords.extend_from_slice(&self.coords[3 * i..3 * i + 3]);
        }
        PointSet { coords }
    }

    pub fn permute(&self, perm: &[usize]) -> PointSet {
        self.select(perm)
    }
}

/// Row-sorted neighbor table: row i holds the k nearest reference indices of
/// query i, ascending by distance, ties by ascending index.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    indices: Arc<Vec<usize>>,
    k: usize,
    n_query: usize,
    n_ref: usize,
}

impl NeighborIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_query(&self) -> usize {
        self.n_query
    }

    pub fn n_ref(&self) -> usize {
        self.n_ref
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Flat row-major `[n_query * k]` index buffer, shared for tape gathers.
    pub fn flat(&self) -> Arc<Vec<usize>> {
        Arc::clone(&self.indices)
    }
}

/// Whether a query point may select itself when queries and references are
/// the same set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfMode {
    Include,
    /// Valid only for queries == refs; drops reference j == i.
    Exclude,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Low-level kernels with explicit sequential/parallel entry points.
pub mod kernels {
    use super::*;

    pub(super) fn knn_row(
        qi: usize,
        q: &[f64],
        refs: &[f64],
        n_ref: usize,
        k: usize,
        exclude_self: bool,
        out: &mut [usize],
    ) {
        let qp = &q[3 * qi..3 * qi + 3];
        let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n_ref);
        for j in 0..n_ref {
            if exclude_self && j == qi {
                continue;
            }
            cand.push((dist2(qp, &refs[3 * j..3 * j + 3]), j));
        }
        // partial selection, then order the k shortlisted entries; the
        // (distance, index) comparator is a strict total order, so the
        // result matches a full sort exactly
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        };
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        for (slot, &(_, j)) in out.iter_mut().zip(cand.iter()) {
            *slot = j;
        }
    }

    pub fn knn_seq(
        queries: &[f64],
        refs: &[f64],
        k: usize,
        exclude_self: bool,
    ) -> Vec<usize> {
        let n_query = queries.len() / 3;
        let n_ref = refs.len() / 3;
        let mut out = vec![0usize; n_query * k];
        par::fill_chunks_seq(&mut out, k, |i, row| {
            knn_row(i, queries, refs, n_ref, k, exclude_self, row)
        });
        out
    }

    #[cfg(feature = "parallel")]
    pub fn knn_par(
        queries: &[f64],
        refs: &[f64],
        k: usize,
        exclude_self: bool,
    ) -> Vec<usize> {
        let n_query = queries.len() / 3;
        let n_ref = refs.len() / 3;
        let mut out = vec![0usize; n_query * k];
        par::fill_chunks(&mut out, k, n_ref * 4, |i, row| {
            knn_row(i, queries, refs, n_ref, k, exclude_self, row)
        });
        out
    }

    const FPS_BLOCK: usize = 512;

    fn fps_impl(points: &[f64], count: usize, seed_index: usize, parallel: bool) -> Vec<usize> {
        let mut selected = Vec::with_capacity(count);
        selected.push(seed_index);
        // min squared distance from each point to the selected set
        let mut min_d2 = vec![f64::INFINITY; points.len() / 3];
        let mut last = seed_index;
        for _ in 1..count {
            let lp = &points[3 * last..3 * last + 3];
            let update = |block: usize, slots: &mut [f64]| {
                let base = block * FPS_BLOCK;
                for (off, slot) in slots.iter_mut().enumerate() {
                    let i = base + off;
                    let d = dist2(lp, &points[3 * i..3 * i + 3]);
                    if d < *slot {
                        *slot = d;
                    }
                }
            };
            if parallel {
                par::fill_chunks(&mut min_d2, FPS_BLOCK, FPS_BLOCK * 8, update);
            } else {
                par::fill_chunks_seq(&mut min_d2, FPS_BLOCK, update);
            }
            last = par::argmax_tiebreak_low(&min_d2);
            selected.push(last);
        }
        selected
    }

    pub fn fps_seq(points: &[f64], count: usize, seed_index: usize) -> Vec<usize> {
        fps_impl(points, count, seed_index, false)
    }

    #[cfg(feature = "parallel")]
    pub fn fps_par(points: &[f64], count: usize, seed_index: usize) -> Vec<usize> {
        fps_impl(points, count, seed_index, true)
    }
}

/// Index of the lexicographically smallest coordinate triple, ties to the
/// lowest index. Storage-order independent, so samplers seeded here keep
/// permutation equivariance.
pub fn lex_min_index(points: &PointSet) -> usize {
    let mut best = 0;
    for i in 1..points.len() {
        let a = points.point(i);
        let b = points.point(best);
        if (a[0], a[1], a[2]) < (b[0], b[1], b[2]) {
            best = i;
        }
    }
    best
}

/// Greedy max-min farthest point sampling.
///
/// The first selected index is `seed_index`; every subsequent pick maximizes
/// the minimum distance to all previously selected points, ties to the lowest
/// index.
pub fn farthest_point_sampling(
    points: &PointSet,
    count: usize,
    seed_index: usize,
) -> Result<Vec<usize>> {
    let n = points.len();
    if count == 0 || count > n {
        return Err(Error::contract(format!(
            "farthest point sampling needs 1 <= count <= {n}, got {count}"
        )));
    }
    if seed_index >= n {
        return Err(Error::contract(format!(
            "seed index {seed_index} out of range for {n} points"
        )));
    }
    #[cfg(feature = "parallel")]
    return Ok(kernels::fps_par(points.coords(), count, seed_index));
    #[cfg(not(feature = "parallel"))]
    Ok(kernels::fps_seq(points.coords(), count, seed_index))
}

/// Exact Euclidean k-nearest neighbors of each query among the references.
pub fn knn(
    queries: &PointSet,
    refs: &PointSet,
    k: usize,
    self_mode: SelfMode,
) -> Result<NeighborIndex> {
    let n_ref = refs.len();
    let exclude_self = match self_mode {
        SelfMode::Include => false,
        SelfMode::Exclude => {
            if queries.len() != n_ref {
                return Err(Error::contract(
                    "SelfMode::Exclude requires queries and refs to be the same set",
                ));
            }
            true
        }
    };
    let avail = if exclude_self { n_ref - 1 } else { n_ref };
    if k == 0 || k > avail {
        return Err(Error::contract(format!(
            "knn needs 1 <= k <= {avail}, got {k}"
        )));
    }
    #[cfg(feature = "parallel")]
    let indices = kernels::knn_par(queries.coords(), refs.coords(), k, exclude_self);
    #[cfg(not(feature = "parallel"))]
    let indices = kernels::knn_seq(queries.coords(), refs.coords(), k, exclude_self);
    Ok(NeighborIndex {
        indices: Arc::new(indices),
        k,
        n_query: queries.len(),
        n_ref,
    })
}

/// Nearest neighbors in an arbitrary-dimension feature space, used by the
/// feature-space slot-neighborhood variant.
pub fn knn_feature_space(
    queries: &[f64],
    refs: &[f64],
    dim: usize,
    k: usize,
) -> Result<NeighborIndex> {
    if dim == 0 || !queries.len().is_multiple_of(dim) || !refs.len().is_multiple_of(dim) {
        return Err(Error::contract("feature buffers must be a multiple of dim"));
    }
    let (n_query, n_ref) = (queries.len() / dim, refs.len() / dim);
    if k == 0 || k > n_ref {
        return Err(Error::contract(format!(
            "knn needs 1 <= k <= {n_ref}, got {k}"
        )));
    }
    let mut out = vec![0usize; n_query * k];
    par::fill_chunks(&mut out, k, n_ref * dim, |i, row| {
        let qp = &queries[dim * i..dim * (i + 1)];
        let mut cand: Vec<(f64, usize)> = (0..n_ref)
            .map(|j| {
                let rp = &refs[dim * j..dim * (j + 1)];
                let d2 = qp
                    .iter()
                    .zip(rp)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d2, j)
            })
            .collect();
        cand.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for (slot, &(_, j)) in row.iter_mut().zip(cand.iter().take(k)) {
            *slot = j;
        }
    });
    Ok(NeighborIndex {
        indices: Arc::new(out),
        k,
        n_query,
        n_ref,
    })
}

const INTERP_EPS: f64 = 1e-8;

/// Inverse-distance weights over the k nearest coarse points of each fine
/// point: w_j = (d_j + eps)^-1 / sum (d + eps)^-1. Weights per row sum to 1.
pub fn interpolation_weights(
    coarse: &PointSet,
    fine: &PointSet,
    k: usize,
) -> Result<(NeighborIndex, Vec<f64>)> {
    let nbr = knn(fine, coarse, k, SelfMode::Include)?;
    let mut weights = vec![0.0f64; fine.len() * k];
    par::fill_chunks(&mut weights, k, k * 8, |i, row| {
        let fp = fine.point(i);
        let mut total = 0.0;
        for (slot, &j) in row.iter_mut().zip(nbr.row(i)) {
            let d = dist2(&fp, &coarse.point(j)).sqrt();
            let w = 1.0 / (d + INTERP_EPS);
            *slot = w;
            total += w;
        }
        for slot in row.iter_mut() {
            *slot /= total;
        }
    });
    Ok((nbr, weights))
}

/// Interpolate coarse features `[M,D]` onto fine positions `[N]` by inverse
/// distance over the k nearest coarse points. Differentiable with respect to
/// the features; the weights are constants of the geometry.
pub fn knn_interpolate<T: Scalar>(
    tape: &mut Tape<T>,
    coarse_feats: TensorId,
    coarse_pos: &PointSet,
    fine_pos: &PointSet,
    k: usize,
) -> Result<TensorId> {
    let m = tape.shape(coarse_feats)[0];
    if m != coarse_pos.len() {
        return Err(Error::contract(format!(
            "coarse features have {m} rows but coarse set has {} points",
            coarse_pos.len()
        )));
    }
    let k = k.min(coarse_pos.len());
    let (nbr, weights) = interpolation_weights(coarse_pos, fine_pos, k)?;
    let n = fine_pos.len();
    let d = tape.shape(coarse_feats)[1];

    let gathered = tape.gather(coarse_feats, nbr.flat())?; // [N*k, D]
    let w = tape.constant(weights.iter().map(|&v| T::from_f64(v)).collect(), &[n * k])?;
    let weighted = tape.mul_col(gathered, w)?;
    let stacked = tape.reshape(weighted, &[n, k, d])?;
    tape.sum_axis(stacked, 1)
}
