//! Cluster-quality indices of labeled point sets, Euclidean distance.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
}

fn distance(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Members of each label in `0..k`, where `k` is one past the largest label.
/// Every cluster must have at least two members and there must be two
/// clusters.
fn groups(points: &Array2<f64>, labels: &[usize]) -> Result<Vec<Vec<usize>>> {
    if points.nrows() != labels.len() {
        return Err(EvalError::Contract(format!(
            "{} points but {} labels",
            points.nrows(),
            labels.len()
        )));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    if k < 2 {
        return Err(EvalError::Metric("need at least two clusters".into()));
    }
    if let Some(c) = out.iter().position(|g| g.len() < 2) {
        return Err(EvalError::Metric(format!("cluster {c} has {} member(s)", out[c].len())));
    }
    Ok(out)
}

fn centroids(points: &Array2<f64>, groups: &[Vec<usize>]) -> Vec<Array1<f64>> {
    groups
        .iter()
        .map(|g| {
            let mut c = Array1::zeros(points.ncols());
            for &i in g {
                c += &points.row(i);
            }
            c / g.len() as f64
        })
        .collect()
}

/// Mean silhouette coefficient over all points; higher is better.
pub fn silhouette(points: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let groups = groups(points, labels)?;
    let n = points.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let mut mean_to = vec![0.0; groups.len()];
        for (c, g) in groups.iter().enumerate() {
            let s: f64 = g.iter().map(|&j| distance(points.row(i), points.row(j))).sum();
            let count = if c == labels[i] { g.len() - 1 } else { g.len() };
            mean_to[c] = s / count as f64;
        }
        let a = mean_to[labels[i]];
        let b = mean_to
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != labels[i])
            .map(|(_, &d)| d)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    Ok(total / n as f64)
}

/// Davies-Bouldin index; lower is better.
pub fn davies_bouldin(points: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let groups = groups(points, labels)?;
    let cents = centroids(points, &groups);
    let scatter: Vec<f64> = groups
        .iter()
        .zip(&cents)
        .map(|(g, c)| g.iter().map(|&i| distance(points.row(i), c.view())).sum::<f64>() / g.len() as f64)
        .collect();
    let k = groups.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in (0..k).filter(|&j| j != i) {
            let sep = distance(cents[i].view(), cents[j].view());
            if sep == 0.0 {
                return Err(EvalError::Metric(format!("clusters {i} and {j} share a centroid")));
            }
            worst = worst.max((scatter[i] + scatter[j]) / sep);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Calinski-Harabasz index (variance ratio); higher is better.
pub fn calinski_harabasz(points: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let groups = groups(points, labels)?;
    let n = points.nrows();
    let k = groups.len();
    if n <= k {
        return Err(EvalError::Metric(format!("{n} points for {k} clusters")));
    }
    let cents = centroids(points, &groups);
    let overall = points.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let mut between = 0.0;
    let mut within = 0.0;
    for (g, c) in groups.iter().zip(&cents) {
        between += g.len() as f64 * distance(c.view(), overall.view()).powi(2);
        within += g
            .iter()
            .map(|&i| distance(points.row(i), c.view()).powi(2))
            .sum::<f64>();
    }
    if within == 0.0 {
        return Err(EvalError::Metric("zero within-cluster dispersion".into()));
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

pub fn clustering_metrics(points: &Array2<f64>, labels: &[usize]) -> Result<ClusteringScores> {
    Ok(ClusteringScores {
        silhouette: silhouette(points, labels)?,
        davies_bouldin: davies_bouldin(points, labels)?,
        calinski_harabasz: calinski_harabasz(points, labels)?,
    })
}
