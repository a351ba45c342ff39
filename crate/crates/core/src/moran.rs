//! Local spatial autocorrelation: row-standardized k-nearest-neighbor
//! weights from station geography and per-node local Moran statistics.

use crate::geo::haversine_km;
use crate::{Error, Result};

/// Row-standardized spatial weight matrix with a zero diagonal.
#[derive(Debug, Clone)]
pub struct SpatialWeights {
    n: usize,
    w: Vec<f64>,
}

impl SpatialWeights {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }
}

/// Per-node local Moran values for one snapshot.
#[derive(Debug, Clone)]
pub struct MoranField {
    pub values: Vec<f64>,
}

/// Builds row-standardized weights from each station's `k` nearest
/// haversine neighbors. Distance ties are broken by station index.
pub fn knn_weights(stations: &[(f64, f64)], k: usize) -> Result<SpatialWeights> {
    let n = stations.len();
    if n == 0 {
        return Err(Error::invalid("knn_weights", "at least one station required"));
    }
    if k >= n {
        return Err(Error::invalid(
            "knn_weights",
            format!("k ({k}) must be smaller than the station count ({n})"),
        ));
    }
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let mut dist = vec![0.0; n];
        for &j in &order {
            dist[j] = haversine_km(stations[i], stations[j]);
        }
        order.sort_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap().then(a.cmp(&b)));
        if k > 0 {
            let share = 1.0 / k as f64;
            for &j in order.iter().take(k) {
                w[i * n + j] = share;
            }
        }
    }
    Ok(SpatialWeights { n, w })
}

/// Local Moran statistic M_i = (n−1)·z_i·(Σ_j w_ij z_j) / (Σ_k z_k² + 1e-12)
/// with z the mean-centered field. A constant field yields all zeros.
pub fn local_moran(x: &[f64], w: &SpatialWeights) -> Result<MoranField> {
    let n = w.n;
    if x.len() != n {
        return Err(Error::invalid(
            "local_moran",
            format!("expected {} values, got {}", n, x.len()),
        ));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let den: f64 = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() + 1e-12;
    let values = (0..n)
        .map(|i| {
            let zi = x[i] - mean;
            let lag: f64 = (0..n).map(|j| w.w[i * n + j] * (x[j] - mean)).sum();
            (n as f64 - 1.0) * zi * lag / den
        })
        .collect();
    Ok(MoranField { values })
}

/// Local Moran fields of each future snapshot of a target block laid out
/// as [N, horizon] row-major; the output shares that layout. Targets are
/// plain values with no gradient path.
pub fn moran_targets(y: &[f64], n_nodes: usize, horizon: usize, w: &SpatialWeights) -> Result<Vec<f64>> {
    if y.len() != n_nodes * horizon {
        return Err(Error::invalid(
            "moran_targets",
            format!(
                "expected {}x{} values, got {}",
                n_nodes,
                horizon,
                y.len()
            ),
        ));
    }
    if n_nodes != w.n {
        return Err(Error::invalid(
            "moran_targets",
            format!("weights are for {} nodes, targets have {}", w.n, n_nodes),
        ));
    }
    let mut out = vec![0.0; y.len()];
    let mut snapshot = vec![0.0; n_nodes];
    for s in 0..horizon {
        for i in 0..n_nodes {
            snapshot[i] = y[i * horizon + s];
        }
        let field = local_moran(&snapshot, w)?;
        for i in 0..n_nodes {
            out[i * horizon + s] = field.values[i];
        }
    }
    Ok(out)
}
