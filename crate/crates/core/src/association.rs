//! RUE-to-satellite association: Hungarian assignment, balanced k-means
//! clustering and the resulting binary association matrix.

use crate::geometry::GroundSite;
use serde::Serialize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AssocError {
    #[error("cost matrix entry ({0}, {1}) is not finite")]
    NonFinite(usize, usize),
    #[error("cost matrix must be non-empty with rows <= cols (got {0}x{1})")]
    Shape(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("need at least as many RUEs ({rues}) as clusters ({clusters})")]
    TooFewRues { rues: usize, clusters: usize },
    #[error("RUEs not covered by their cluster satellite: {0:?}")]
    Uncovered(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row.
    pub perm: Vec<usize>,
    pub total_cost: f64,
}

/// Minimum-cost assignment of every row to a distinct column
/// (shortest augmenting paths with potentials, O(n²·m)). Rectangular inputs
/// with rows < cols are padded with sentinel rows. Ties resolve towards the
/// lowest column index.
pub fn hungarian_assign(cost: &[Vec<f64>]) -> Result<Assignment, AssocError> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || n > m || cost.iter().any(|r| r.len() != m) {
        return Err(AssocError::Shape(n, m));
    }
    for (i, row) in cost.iter().enumerate() {
        if let Some(j) = row.iter().position(|c| !c.is_finite()) {
            return Err(AssocError::NonFinite(i, j));
        }
    }
    // Sentinel rows cost the same for every column, so they never change the
    // optimal choice of real rows.
    let big = cost.iter().flatten().fold(0.0f64, |a, &c| a.max(c.abs())) * 2.0 + 1.0;
    let at = |i: usize, j: usize| if i < n { cost[i][j] } else { big };
    let size = m;

    // 1-based arrays; index 0 is the virtual start.
    let mut u = vec![0.0; size + 1];
    let mut v = vec![0.0; size + 1];
    let mut p = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=size {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![usize::MAX; n];
    for j in 1..=size {
        if p[j] >= 1 && p[j] <= n {
            perm[p[j] - 1] = j - 1;
        }
    }
    let total_cost = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok(Assignment { perm, total_cost })
}

pub type Point2 = [f64; 2];

fn sq_dist(a: Point2, b: Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Balanced cluster sizes: the first `U mod S` clusters get ⌈U/S⌉ members.
pub fn balanced_sizes(rues: usize, clusters: usize) -> Vec<usize> {
    let base = rues / clusters;
    let extra = rues % clusters;
    (0..clusters).map(|c| base + usize::from(c < extra)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterState {
    pub centroids: Vec<Point2>,
    pub slots_per_cluster: Vec<usize>,
    /// Cluster of each RUE.
    pub assignment: Vec<usize>,
    /// Mean squared RUE-to-centroid distance of the final assignment.
    pub mse: f64,
    /// MSE after each assignment step.
    pub mse_trace: Vec<f64>,
    pub iterations: usize,
}

impl ClusterState {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.centroids.len()];
        for &c in &self.assignment {
            s[c] += 1;
        }
        s
    }
}

fn balanced_assignment(points: &[Point2], centroids: &[Point2], sizes: &[usize]) -> Result<(Vec<usize>, f64), AssocError> {
    let slot_cluster: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
    let cost: Vec<Vec<f64>> = points
        .iter()
        .map(|&p| slot_cluster.iter().map(|&c| sq_dist(p, centroids[c])).collect())
        .collect();
    let a = hungarian_assign(&cost)?;
    let assign = a.perm.iter().map(|&j| slot_cluster[j]).collect();
    Ok((assign, a.total_cost / points.len() as f64))
}

/// Balanced k-means: Hungarian assignment of RUEs to per-cluster slots on
/// squared distance, then mean centroid updates, until centroids move by at
/// most `tol` or `max_iters` iterations run.
pub fn bkmc(points: &[Point2], init_centroids: &[Point2], max_iters: usize, tol: f64) -> Result<ClusterState, AssocError> {
    if points.is_empty() {
        return Err(AssocError::Empty("no RUE positions"));
    }
    if init_centroids.is_empty() {
        return Err(AssocError::Empty("no initial centroids"));
    }
    if points.len() < init_centroids.len() {
        return Err(AssocError::TooFewRues {
            rues: points.len(),
            clusters: init_centroids.len(),
        });
    }
    let sizes = balanced_sizes(points.len(), init_centroids.len());
    let mut centroids = init_centroids.to_vec();
    let mut mse_trace = Vec::new();
    let mut assignment = Vec::new();
    let mut mse = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let (assign, cost) = balanced_assignment(points, &centroids, &sizes)?;
        assignment = assign;
        mse = cost;
        mse_trace.push(cost);
        let mut sums = vec![[0.0, 0.0]; centroids.len()];
        for (p, &c) in points.iter().zip(&assignment) {
            sums[c][0] += p[0];
            sums[c][1] += p[1];
        }
        let mut shift: f64 = 0.0;
        for (c, s) in sums.iter().enumerate() {
            let k = sizes[c] as f64;
            let next = [s[0] / k, s[1] / k];
            shift = shift.max(sq_dist(next, centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift <= tol {
            break;
        }
    }
    // Mean squared distance to the final centroids.
    let final_mse = points.iter().zip(&assignment).map(|(&p, &c)| sq_dist(p, centroids[c])).sum::<f64>() / points.len() as f64;
    if final_mse < mse {
        mse = final_mse;
    }
    Ok(ClusterState {
        centroids,
        slots_per_cluster: sizes,
        assignment,
        mse,
        mse_trace,
        iterations,
    })
}

/// Azimuthal-equidistant projection about `center` (metres on the ground).
pub fn project_local(site: &GroundSite, center: &GroundSite, earth_radius_m: f64) -> Point2 {
    let c = center.central_angle(site);
    if c == 0.0 {
        return [0.0, 0.0];
    }
    let dlon = site.lon_rad - center.lon_rad;
    let y = dlon.sin() * site.lat_rad.cos();
    let x = center.lat_rad.cos() * site.lat_rad.sin() - center.lat_rad.sin() * site.lat_rad.cos() * dlon.cos();
    let az = y.atan2(x);
    [earth_radius_m * c * az.sin(), earth_radius_m * c * az.cos()]
}

/// Binary association v[b][u][s].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssociationMatrix {
    pub num_gbs: usize,
    pub num_rues: usize,
    pub num_sats: usize,
    entries: Vec<u8>,
}

impl AssociationMatrix {
    pub fn new(num_gbs: usize, num_rues: usize, num_sats: usize) -> Self {
        Self {
            num_gbs,
            num_rues,
            num_sats,
            entries: vec![0; num_gbs * num_rues * num_sats],
        }
    }

    fn idx(&self, b: usize, u: usize, s: usize) -> usize {
        (b * self.num_rues + u) * self.num_sats + s
    }

    pub fn get(&self, b: usize, u: usize, s: usize) -> bool {
        self.entries[self.idx(b, u, s)] == 1
    }

    pub fn set(&mut self, b: usize, u: usize, s: usize, on: bool) {
        let i = self.idx(b, u, s);
        self.entries[i] = u8::from(on);
    }

    pub fn ones(&self) -> usize {
        self.entries.iter().map(|&e| e as usize).sum()
    }

    /// (GBS, satellite) serving RUE `u`, if any.
    pub fn serving(&self, u: usize) -> Option<(usize, usize)> {
        (0..self.num_gbs).find_map(|b| (0..self.num_sats).find(|&s| self.get(b, u, s)).map(|s| (b, s)))
    }

    /// RUEs served through satellite `s`.
    pub fn members(&self, s: usize) -> Vec<usize> {
        (0..self.num_rues).filter(|&u| (0..self.num_gbs).any(|b| self.get(b, u, s))).collect()
    }

    /// Checks that every RUE is associated with at most one (GBS, satellite)
    /// pair; returns the offending RUEs.
    pub fn validate(&self) -> Vec<usize> {
        (0..self.num_rues)
            .filter(|&u| {
                let n: usize = (0..self.num_gbs)
                    .flat_map(|b| (0..self.num_sats).map(move |s| (b, s)))
                    .filter(|&(b, s)| self.get(b, u, s))
                    .count();
                n > 1
            })
            .collect()
    }
}

/// Turns clusters into an association. `cluster_sats[c]` is the satellite
/// of cluster `c`, `serving_gbs[c]` its GBS, and `covers(u, s)` the
/// elevation check.
pub fn build_association(
    cluster: &ClusterState,
    cluster_sats: &[usize],
    serving_gbs: &[usize],
    num_gbs: usize,
    num_sats: usize,
    covers: impl Fn(usize, usize) -> bool,
) -> Result<AssociationMatrix, AssocError> {
    let mut v = AssociationMatrix::new(num_gbs, cluster.assignment.len(), num_sats);
    let mut uncovered = Vec::new();
    for (u, &c) in cluster.assignment.iter().enumerate() {
        let s = cluster_sats[c];
        if covers(u, s) {
            v.set(serving_gbs[c], u, s, true);
        } else {
            uncovered.push(u);
        }
    }
    if uncovered.is_empty() {
        Ok(v)
    } else {
        Err(AssocError::Uncovered(uncovered))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..cost[0].len() {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, acc + cost[row][j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost[0].len()], 0.0, &mut best);
        best
    }

    #[test]
    fn hungarian_examples() {
        let a = hungarian_assign(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(a.perm, vec![0, 1]);
        assert_eq!(a.total_cost, 2.0);
        let b = hungarian_assign(&[vec![4.0, 1.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(b.perm, vec![1, 0]);
        assert_eq!(b.total_cost, 3.0);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = stream(5, &[]);
        for _ in 0..100 {
            let cost: Vec<Vec<f64>> = (0..6).map(|_| (0..6).map(|_| rng.random::<f64>() * 10.0).collect()).collect();
            let a = hungarian_assign(&cost).unwrap();
            assert!((a.total_cost - brute_force(&cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn hungarian_rectangular_and_errors() {
        let a = hungarian_assign(&[vec![5.0, 1.0, 3.0]]).unwrap();
        assert_eq!(a.perm, vec![1]);
        assert!(matches!(hungarian_assign(&[vec![f64::NAN]]), Err(AssocError::NonFinite(0, 0))));
        assert!(matches!(hungarian_assign(&[]), Err(AssocError::Shape(0, 0))));
    }

    #[test]
    fn ties_prefer_lowest_index() {
        let a = hungarian_assign(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(a.perm, vec![0, 1]);
    }

    #[test]
    fn bkmc_examples() {
        let pts = [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let s = bkmc(&pts, &[[1.0, 0.0], [9.0, 0.0]], 100, 1e-9).unwrap();
        assert_eq!(s.assignment, vec![0, 0, 1, 1]);

        let s = bkmc(&pts, &pts, 100, 1e-9).unwrap();
        assert_eq!(s.cluster_sizes(), vec![1, 1, 1, 1]);

        let five = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]];
        let s = bkmc(&five, &[[0.0, 0.0], [4.0, 0.0]], 100, 1e-9).unwrap();
        assert_eq!(s.cluster_sizes(), vec![3, 2]);
        assert!(bkmc(&[], &[[0.0, 0.0]], 10, 1e-9).is_err());
    }

    #[test]
    fn association_from_clusters() {
        let pts = [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let s = bkmc(&pts, &[[1.0, 0.0], [9.0, 0.0]], 100, 1e-9).unwrap();
        let v = build_association(&s, &[0, 1], &[0, 0], 1, 2, |_, _| true).unwrap();
        assert_eq!(v.ones(), 4);
        assert!(v.validate().is_empty());
        assert_eq!(v.serving(2), Some((0, 1)));
        let err = build_association(&s, &[0, 1], &[0, 0], 1, 2, |u, _| u != 3).unwrap_err();
        assert_eq!(err, AssocError::Uncovered(vec![3]));
    }

    fn all_balanced_partitions_best(points: &[Point2], centroids: &[Point2], sizes: &[usize]) -> f64 {
        fn rec(i: usize, points: &[Point2], centroids: &[Point2], left: &mut Vec<usize>, acc: f64, best: &mut f64) {
            if i == points.len() {
                *best = best.min(acc);
                return;
            }
            for c in 0..centroids.len() {
                if left[c] > 0 {
                    left[c] -= 1;
                    rec(i + 1, points, centroids, left, acc + sq_dist(points[i], centroids[c]), best);
                    left[c] += 1;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, points, centroids, &mut sizes.to_vec(), 0.0, &mut best);
        best / points.len() as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bkmc_invariants(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..9),
            k in 1usize..4,
        ) {
            let pts: Vec<Point2> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let k = k.min(pts.len());
            let init: Vec<Point2> = pts[..k].to_vec();
            let s = bkmc(&pts, &init, 50, 1e-9).unwrap();
            let sizes = s.cluster_sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for w in s.mse_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
            // The last assignment step is optimal for the centroids it used.
            let (_, cost) = balanced_assignment(&pts, &s.centroids, &s.slots_per_cluster).unwrap();
            let brute = all_balanced_partitions_best(&pts, &s.centroids, &s.slots_per_cluster);
            prop_assert!((cost - brute).abs() <= 1e-9 * brute.max(1.0));
        }

        #[test]
        fn hungarian_beats_random_permutations(seed in 0u64..1000) {
            let mut rng = stream(seed, &[]);
            let n = 5;
            let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
            let a = hungarian_assign(&cost).unwrap();
            for _ in 0..50 {
                let mut perm: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    perm.swap(i, rng.random_range(0..=i));
                }
                let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                prop_assert!(a.total_cost <= c + 1e-12);
            }
        }
    }

    #[test]
    fn projection_is_equidistant() {
        let c = GroundSite::from_degrees(10.0, 20.0);
        let s = c.destination(0.5, 0.01);
        let p = project_local(&s, &c, 6_378_100.0);
        assert!(((p[0].hypot(p[1])) - 63_781.0).abs() < 1e-6);
        assert!((p[0].atan2(p[1]) - 0.5).abs() < 1e-9);
    }
}
