use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbscanConfig {
    /// Neighbourhood radius in frames (inclusive).
    pub eps: f64,
    /// Neighbours, self included, needed for a core point.
    pub minp: usize,
}

impl DbscanConfig {
    pub fn new(eps: f64, minp: usize) -> Result<Self> {
        let cfg = Self { eps, minp };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::arg(format!("eps must be positive, got {}", self.eps)));
        }
        if self.minp == 0 {
            return Err(Error::arg("minp must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PointLabel {
    Noise,
    Cluster(usize),
}

impl PointLabel {
    pub fn cluster(self) -> Option<usize> {
        match self {
            PointLabel::Cluster(c) => Some(c),
            PointLabel::Noise => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointRole {
    Core,
    Border,
    Noise,
}

/// Per-point labels and roles, aligned with the input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbscanResult {
    pub labels: Vec<PointLabel>,
    pub roles: Vec<PointRole>,
    pub n_clusters: usize,
}

/// DBSCAN on the real line with `|a - b| <= eps` neighbourhoods.
///
/// Cluster ids increase from left to right. A border point within reach of
/// several clusters joins the one holding its nearest core point, the left
/// one on ties, so the partition does not depend on input order.
pub fn dbscan_1d(points: &[f64], cfg: &DbscanConfig) -> Result<DbscanResult> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::arg("dbscan needs at least one point"));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::arg("dbscan points must be finite"));
    }
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| points[i]).collect();

    let core: Vec<bool> = sorted
        .iter()
        .map(|&x| {
            // differences, not shifted bounds, so rounding matches |x - y| <= eps
            let lo = sorted.partition_point(|&y| x - y > cfg.eps);
            let hi = sorted.partition_point(|&y| y - x <= cfg.eps);
            hi - lo >= cfg.minp
        })
        .collect();

    // Cores chain into one cluster while consecutive gaps stay within eps.
    let mut cluster_of_core = vec![usize::MAX; n];
    let mut n_clusters = 0;
    let mut last_core: Option<usize> = None;
    for s in (0..n).filter(|&s| core[s]) {
        match last_core {
            Some(prev) if sorted[s] - sorted[prev] <= cfg.eps => {
                cluster_of_core[s] = cluster_of_core[prev];
            }
            _ => {
                cluster_of_core[s] = n_clusters;
                n_clusters += 1;
            }
        }
        last_core = Some(s);
    }

    let core_positions: Vec<usize> = (0..n).filter(|&s| core[s]).collect();
    let mut labels = vec![PointLabel::Noise; n];
    let mut roles = vec![PointRole::Noise; n];
    for s in 0..n {
        let i = order[s];
        if core[s] {
            labels[i] = PointLabel::Cluster(cluster_of_core[s]);
            roles[i] = PointRole::Core;
            continue;
        }
        let x = sorted[s];
        let right = core_positions.partition_point(|&c| sorted[c] < x);
        let left_d = right.checked_sub(1).map(|k| (x - sorted[core_positions[k]], core_positions[k]));
        let right_d = core_positions.get(right).map(|&c| (sorted[c] - x, c));
        let nearest = match (left_d, right_d) {
            (Some(l), Some(r)) => Some(if r.0 < l.0 { r } else { l }),
            (l, r) => l.or(r),
        };
        if let Some((d, c)) = nearest {
            if d <= cfg.eps {
                labels[i] = PointLabel::Cluster(cluster_of_core[c]);
                roles[i] = PointRole::Border;
            }
        }
    }
    Ok(DbscanResult {
        labels,
        roles,
        n_clusters,
    })
}

/// Median of each cluster's members, rounding half up; sorted, deduplicated.
pub fn cluster_representatives(result: &DbscanResult, points: &[usize]) -> Result<Vec<usize>> {
    if result.labels.len() != points.len() {
        return Err(Error::arg(format!(
            "result has {} labels for {} points",
            result.labels.len(),
            points.len()
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); result.n_clusters];
    for (label, &p) in result.labels.iter().zip(points) {
        if let Some(c) = label.cluster() {
            members
                .get_mut(c)
                .ok_or_else(|| Error::arg(format!("cluster id {c} out of range")))?
                .push(p);
        }
    }
    let mut reps: Vec<usize> = members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|mut m| {
            m.sort_unstable();
            let k = m.len();
            if k % 2 == 1 {
                m[k / 2]
            } else {
                (m[k / 2 - 1] + m[k / 2]).div_ceil(2)
            }
        })
        .collect();
    reps.sort_unstable();
    reps.dedup();
    Ok(reps)
}

/// Clusters integer frames and returns one representative per cluster.
pub fn cluster_frames(frames: &[usize], cfg: &DbscanConfig) -> Result<Vec<usize>> {
    if frames.is_empty() {
        cfg.validate()?;
        return Ok(Vec::new());
    }
    let values: Vec<f64> = frames.iter().map(|&f| f as f64).collect();
    let result = dbscan_1d(&values, cfg)?;
    cluster_representatives(&result, frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(eps: f64, minp: usize) -> DbscanConfig {
        DbscanConfig::new(eps, minp).unwrap()
    }

    #[test]
    fn two_clusters_no_noise() {
        let r = dbscan_1d(&[0.0, 1.0, 2.0, 100.0, 101.0], &cfg(2.0, 2)).unwrap();
        use PointLabel::*;
        assert_eq!(r.labels, vec![Cluster(0), Cluster(0), Cluster(0), Cluster(1), Cluster(1)]);
        assert!(r.roles.iter().all(|&x| x == PointRole::Core));
    }

    #[test]
    fn sparse_points_are_noise() {
        let r = dbscan_1d(&[0.0, 10.0, 20.0], &cfg(2.0, 2)).unwrap();
        assert_eq!(r.n_clusters, 0);
        assert!(r.labels.iter().all(|&l| l == PointLabel::Noise));
        assert!(r.roles.iter().all(|&x| x == PointRole::Noise));
    }

    #[test]
    fn repeated_point_is_all_core() {
        let r = dbscan_1d(&[7.0; 4], &cfg(1.0, 4)).unwrap();
        assert_eq!(r.n_clusters, 1);
        assert!(r.roles.iter().all(|&x| x == PointRole::Core));
    }

    #[test]
    fn border_joins_nearest_core() {
        // 5 is a border point reachable from both clusters; 3 is closer.
        let pts = [0.0, 1.0, 2.0, 3.0, 5.0, 8.0, 9.0, 10.0, 11.0];
        let r = dbscan_1d(&pts, &cfg(3.0, 5)).unwrap();
        assert_eq!(r.roles[4], PointRole::Border);
        assert_eq!(r.labels[4], r.labels[3]);
    }

    #[test]
    fn empty_input_and_bad_config_rejected() {
        assert!(dbscan_1d(&[], &DbscanConfig { eps: 1.0, minp: 1 }).is_err());
        assert!(DbscanConfig::new(0.0, 2).is_err());
        assert!(DbscanConfig::new(1.0, 0).is_err());
    }

    #[test]
    fn representative_examples() {
        let pts = [10, 12, 14];
        let r = dbscan_1d(&[10.0, 12.0, 14.0], &cfg(2.0, 2)).unwrap();
        assert_eq!(cluster_representatives(&r, &pts).unwrap(), vec![12]);
        let r = dbscan_1d(&[10.0, 11.0], &cfg(2.0, 2)).unwrap();
        assert_eq!(cluster_representatives(&r, &[10, 11]).unwrap(), vec![11]);
        let r = dbscan_1d(&[0.0, 50.0], &cfg(2.0, 2)).unwrap();
        assert!(cluster_representatives(&r, &[0, 50]).unwrap().is_empty());
    }

    #[test]
    fn cluster_frames_handles_empty_input() {
        assert!(cluster_frames(&[], &cfg(5.0, 2)).unwrap().is_empty());
        assert_eq!(cluster_frames(&[100, 102], &cfg(5.0, 2)).unwrap(), vec![101]);
        assert!(cluster_frames(&[100, 500], &cfg(5.0, 2)).unwrap().is_empty());
    }
}
