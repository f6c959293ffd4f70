//! Temporal and spatial relation graphs over ROIs, graph convolution, and the
//! fusion of both graph views into one representation per ROI.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Array2, Tape, Var};
use crate::error::{Error, Result, config, contract};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiEntry {
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl RoiEntry {
    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// ROI labels with 3D centre coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoiAtlas {
    pub entries: Vec<RoiEntry>,
}

impl RoiAtlas {
    pub fn new(entries: Vec<RoiEntry>) -> Result<Self> {
        let atlas = Self { entries };
        atlas.validate()?;
        Ok(atlas)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() < 2 {
            return Err(config("an atlas needs at least two ROIs"));
        }
        if let Some(e) = self
            .entries
            .iter()
            .find(|e| !e.coords().iter().all(|c| c.is_finite()))
        {
            return Err(config(alloc::format!(
                "ROI {} has non-finite coordinates",
                e.label
            )));
        }
        Ok(())
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.entries[i].coords(), self.entries[j].coords());
        a.iter()
            .zip(&b)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
    }

    /// Distances of all unordered pairs `i < j`.
    pub fn pairwise_distances(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.distance(i, j));
            }
        }
        out
    }

    /// 20th percentile of the pairwise distances (linear interpolation).
    pub fn default_threshold(&self) -> f64 {
        percentile(self.pairwise_distances(), 0.2)
    }
}

pub(crate) fn percentile(mut values: Vec<f64>, q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    if values.is_empty() {
        return 0.0;
    }
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Binary adjacency from a distance threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGraph {
    pub adjacency: Array2,
    pub threshold: f64,
}

/// `A_ij = 1` iff `i ≠ j` and the centres are at most `threshold` apart.
pub fn build_spatial_graph(atlas: &RoiAtlas, threshold: f64) -> Result<SpatialGraph> {
    atlas.validate()?;
    if !(threshold > 0.0) {
        return Err(config(alloc::format!(
            "distance threshold must be positive, got {threshold}"
        )));
    }
    let n = atlas.len();
    let adjacency = Array2::from_fn(n, n, |i, j| {
        if i != j && atlas.distance(i, j) <= threshold {
            1.0
        } else {
            0.0
        }
    });
    Ok(SpatialGraph {
        adjacency,
        threshold,
    })
}

/// Dense clamped cosine-similarity adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalGraph {
    pub adjacency: Array2,
}

/// Value-level temporal graph over the rows of `h`.
pub fn build_temporal_graph(h: &Array2) -> Result<TemporalGraph> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let a = temporal_adjacency(&mut tape, hv)?;
    Ok(TemporalGraph {
        adjacency: tape.value(a).clone(),
    })
}

/// `max(0, cos(h_i, h_j))` for every pair of rows of `h`, recorded on the tape.
pub fn temporal_adjacency(tape: &mut Tape, h: Var) -> Result<Var> {
    let values = tape.value(h);
    for i in 0..values.rows() {
        if values.row(i).iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateEmbedding { roi: i });
        }
    }
    let sq = tape.square(h);
    let norms_sq = tape.row_sums(sq);
    let inv_norm = tape.powf(norms_sq, -0.5);
    let unit = tape.mul_col(h, inv_norm)?;
    let unit_t = tape.transpose(unit);
    let cos = tape.matmul(unit, unit_t)?;
    Ok(tape.relu(cos))
}

/// `D̂^{-1/2} Â D̂^{-1/2}` with `Â = A − diag(A) + I`, so every node carries
/// exactly one unit self-loop.
pub fn normalized_adjacency(tape: &mut Tape, a: Var) -> Result<Var> {
    let (n, m) = tape.value(a).shape();
    if n != m {
        return Err(Error::Dimension {
            op: "adjacency",
            left: (n, m),
            right: (m, n),
        });
    }
    if tape.value(a).data().iter().any(|&v| v < 0.0) {
        return Err(contract("adjacency has negative entries"));
    }
    let off_diag = tape.constant(Array2::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }));
    let eye = tape.constant(Array2::identity(n));
    let stripped = tape.mul(a, off_diag)?;
    let a_hat = tape.add(stripped, eye)?;
    let degree = tape.row_sums(a_hat);
    let d_inv_sqrt = tape.powf(degree, -0.5);
    let left = tape.mul_col(a_hat, d_inv_sqrt)?;
    let left_t = tape.transpose(left);
    let both_t = tape.mul_col(left_t, d_inv_sqrt)?;
    Ok(tape.transpose(both_t))
}

/// One graph convolution `ReLU(D̂^{-1/2} Â D̂^{-1/2} H W)`.
pub fn gcn_layer(tape: &mut Tape, h: Var, adjacency: Var, w: Var) -> Result<Var> {
    let norm = normalized_adjacency(tape, adjacency)?;
    let hw = tape.matmul(h, w)?;
    let agg = tape.matmul(norm, hw)?;
    Ok(tape.relu(agg))
}

/// Value-level [`gcn_layer`].
pub fn gcn_forward(h: &Array2, adjacency: &Array2, w: &Array2) -> Result<Array2> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let av = tape.constant(adjacency.clone());
    let wv = tape.constant(w.clone());
    let out = gcn_layer(&mut tape, hv, av, wv)?;
    Ok(tape.value(out).clone())
}

/// `concat(h_temporal, h_spatial) · W + b`.
pub fn fuse(tape: &mut Tape, h_temporal: Var, h_spatial: Var, w: Var, b: Var) -> Result<Var> {
    let (rt, ct) = tape.value(h_temporal).shape();
    let (rs, cs) = tape.value(h_spatial).shape();
    if (rt, ct) != (rs, cs) {
        return Err(Error::Dimension {
            op: "fuse",
            left: (rt, ct),
            right: (rs, cs),
        });
    }
    let joined = tape.concat_cols(&[h_temporal, h_spatial])?;
    let lin = tape.matmul(joined, w)?;
    tape.add_row(lin, b)
}

/// Graph-convolution and fusion weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub temporal_w: Array2,
    pub spatial_w: Array2,
    pub fuse_w: Array2,
    pub fuse_b: Array2,
}

impl GcnParams {
    pub fn register(&self, tape: &mut Tape) -> GcnVars {
        GcnVars {
            temporal_w: tape.parameter(self.temporal_w.clone()),
            spatial_w: tape.parameter(self.spatial_w.clone()),
            fuse_w: tape.parameter(self.fuse_w.clone()),
            fuse_b: tape.parameter(self.fuse_b.clone()),
        }
    }
}

#[derive(Copy, Clone, Debug)]
pub struct GcnVars {
    pub temporal_w: Var,
    pub spatial_w: Var,
    pub fuse_w: Var,
    pub fuse_b: Var,
}

/// Which graph branches run; a disabled branch passes `h` through unchanged.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct GraphSwitches {
    pub temporal: bool,
    pub spatial: bool,
}

/// How often each branch actually executed.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct BranchCounters {
    pub temporal_gcn: usize,
    pub spatial_gcn: usize,
}

impl GcnVars {
    /// Both graph branches followed by fusion, giving `N×d_u`.
    pub fn relate(
        &self,
        tape: &mut Tape,
        h: Var,
        spatial: &Array2,
        switches: GraphSwitches,
        counters: &mut BranchCounters,
    ) -> Result<Var> {
        let h_temporal = if switches.temporal {
            counters.temporal_gcn += 1;
            let a = temporal_adjacency(tape, h)?;
            gcn_layer(tape, h, a, self.temporal_w)?
        } else {
            h
        };
        let h_spatial = if switches.spatial {
            counters.spatial_gcn += 1;
            let a = tape.constant(spatial.clone());
            gcn_layer(tape, h, a, self.spatial_w)?
        } else {
            h
        };
        fuse(tape, h_temporal, h_spatial, self.fuse_w, self.fuse_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn atlas(points: &[[f64; 3]]) -> RoiAtlas {
        RoiAtlas::new(
            points
                .iter()
                .enumerate()
                .map(|(i, p)| RoiEntry {
                    label: alloc::format!("r{i}"),
                    x: p[0],
                    y: p[1],
                    z: p[2],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        let h = Array2::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 2.0], [-1.0, 0.0]]).unwrap();
        let g = build_temporal_graph(&h).unwrap().adjacency;
        assert!((g.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(g.get(0, 2), 0.0);
        assert_eq!(g.get(0, 3), 0.0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
    }

    #[test]
    fn zero_embedding_names_roi() {
        let h = Array2::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(
            build_temporal_graph(&h),
            Err(Error::DegenerateEmbedding { roi: 1 })
        );
    }

    #[test]
    fn spatial_threshold_is_inclusive() {
        let a = atlas(&[[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let g = build_spatial_graph(&a, 1.0).unwrap().adjacency;
        assert_eq!(g.data(), &[0.0, 1.0, 1.0, 0.0]);
        let g = build_spatial_graph(&a, 0.5).unwrap().adjacency;
        assert_eq!(g.data(), &[0.0; 4]);
        assert!(matches!(
            build_spatial_graph(&a, 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_spatial_graph(&a, -1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn atlas_needs_two_finite_rois() {
        assert!(
            RoiAtlas::new(vec![RoiEntry {
                label: "a".into(),
                x: 0.0,
                y: 0.0,
                z: 0.0
            }])
            .is_err()
        );
        assert!(
            RoiAtlas::new(vec![
                RoiEntry {
                    label: "a".into(),
                    x: 0.0,
                    y: 0.0,
                    z: 0.0
                },
                RoiEntry {
                    label: "b".into(),
                    x: f64::NAN,
                    y: 0.0,
                    z: 0.0
                },
            ])
            .is_err()
        );
    }

    #[test]
    fn isolated_node_gcn_is_relu_hw() {
        let h = Array2::row_vector(&[1.0, -2.0]);
        let w = Array2::from_rows(&[[1.0, 0.5], [1.0, -1.0]]).unwrap();
        let out = gcn_forward(&h, &Array2::zeros(1, 1), &w).unwrap();
        assert_eq!(out.data(), &[0.0, 2.5]);
    }

    #[test]
    fn identical_nodes_on_complete_graph() {
        let h = Array2::from_rows(&[[0.3, 0.7], [0.3, 0.7]]).unwrap();
        let a = Array2::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let w = Array2::from_rows(&[[1.0, -0.2], [0.4, 0.9]]).unwrap();
        let out = gcn_forward(&h, &a, &w).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn negative_adjacency_is_rejected() {
        let h = Array2::zeros(2, 1);
        let a = Array2::from_rows(&[[0.0, -0.1], [-0.1, 0.0]]).unwrap();
        assert!(matches!(
            gcn_forward(&h, &a, &Array2::zeros(1, 1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn fuse_selector_and_zero() {
        let mut tape = Tape::new();
        let ht = tape.constant(Array2::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let hs = tape.constant(Array2::from_rows(&[[9.0, 9.0], [9.0, 9.0]]).unwrap());
        let sel = tape.constant(Array2::from_fn(4, 2, |i, j| if i == j { 1.0 } else { 0.0 }));
        let b = tape.constant(Array2::zeros(1, 2));
        let u = fuse(&mut tape, ht, hs, sel, b).unwrap();
        assert_eq!(tape.value(u), tape.value(ht));

        let z = tape.constant(Array2::zeros(2, 2));
        let w = tape.constant(Array2::filled(4, 3, 0.7));
        let b = tape.constant(Array2::zeros(1, 3));
        let u = fuse(&mut tape, z, z, w, b).unwrap();
        assert!(tape.value(u).data().iter().all(|&v| v == 0.0));

        let bad = tape.constant(Array2::zeros(2, 3));
        assert!(matches!(
            fuse(&mut tape, z, bad, w, b),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(vec![4.0, 1.0, 3.0, 2.0, 5.0], 0.2), 1.8);
        assert_eq!(percentile(vec![1.0, 2.0], 0.0), 1.0);
    }
}
