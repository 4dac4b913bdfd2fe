//! Average-linkage clustering of hidden neurons pooled across students,
//! threshold selection, size and alignment filters, and winner-take-all
//! collapse of the surviving clusters into reconstructed neurons.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

/// Pairwise distances, with zero vectors dropped under the cosine metric.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub matrix: DMatrix<f64>,
    /// Input indices corresponding to the rows of `matrix`.
    pub kept: Vec<usize>,
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (1.0 - dot / (na * nb)).max(0.0)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn pairwise_distances(vectors: &[Vec<f64>], metric: Metric) -> Result<DistanceMatrix> {
    if let Some(first) = vectors.first() {
        if vectors.iter().any(|v| v.len() != first.len()) {
            return Err(Error::Shape("all clustering vectors must share a dimension".into()));
        }
    }
    let kept: Vec<usize> = (0..vectors.len())
        .filter(|&i| metric == Metric::Euclidean || vectors[i].iter().any(|&v| v != 0.0))
        .collect();
    if kept.len() < vectors.len() {
        log::warn!(
            "{} zero vectors dropped before cosine clustering",
            vectors.len() - kept.len()
        );
    }
    let n = kept.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let (a, b) = (&vectors[kept[i]], &vectors[kept[j]]);
                    match metric {
                        Metric::Euclidean => euclidean(a, b),
                        Metric::Cosine => cosine_distance(a, b),
                    }
                })
                .collect()
        })
        .collect();
    // symmetrise so that S_ij and S_ji are bitwise equal
    let matrix = DMatrix::from_fn(n, n, |i, j| if i <= j { rows[i][j] } else { rows[j][i] });
    Ok(DistanceMatrix { matrix, kept })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Cluster ids: leaves are `0..leaf_count`, merge `i` creates `leaf_count + i`.
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
    pub leaf_count: usize,
}

/// Agglomerative clustering with average linkage, updated by the
/// Lance-Williams rule. Ties go to the lexicographically smallest pair.
pub fn average_linkage(matrix: &DMatrix<f64>) -> Result<Dendrogram> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::Shape("distance matrix must be square".into()));
    }
    let mut d = matrix.clone();
    let mut active: Vec<bool> = vec![true; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && d[(i, j)] < best.0 {
                    best = (d[(i, j)], i, j);
                }
            }
        }
        let (h, i, j) = best;
        if i == usize::MAX {
            // only non-finite distances remain
            return Err(Error::Argument("distance matrix has non-finite entries".into()));
        }
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if active[k] && k != i && k != j {
                let v = (si * d[(k, i)] + sj * d[(k, j)]) / (si + sj);
                d[(k, i)] = v;
                d[(i, k)] = v;
            }
        }
        let (a, b) = (id[i].min(id[j]), id[i].max(id[j]));
        size[i] += size[j];
        active[j] = false;
        id[i] = n + step;
        merges.push(Merge {
            a,
            b,
            height: h,
            size: size[i],
        });
    }
    Ok(Dendrogram { merges, leaf_count: n })
}

impl Dendrogram {
    /// Leaf sets after applying the first `k` merges, ordered by smallest leaf.
    pub fn clusters_after(&self, k: usize) -> Vec<Vec<usize>> {
        let n = self.leaf_count;
        let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
        for m in &self.merges[..k] {
            let mut a = members[m.a].take().expect("merged once");
            let b = members[m.b].take().expect("merged once");
            a.extend(b);
            a.sort_unstable();
            members.push(Some(a));
        }
        let mut out: Vec<Vec<usize>> = members.into_iter().flatten().collect();
        out.sort_by_key(|c| c[0]);
        out
    }

    /// Clusters obtained by cutting at height `h` (merges with height ≤ h).
    pub fn cut(&self, h: f64) -> Vec<Vec<usize>> {
        let k = self.merges.iter().take_while(|m| m.height <= h).count();
        self.clusters_after(k)
    }
}

/// Smallest cluster size that counts as big: `⌈γN⌉`.
pub fn min_cluster_size(gamma: f64, n_students: usize) -> usize {
    ((gamma * n_students as f64) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub threshold: f64,
    pub clusters: Vec<Vec<usize>>,
    pub big_count: usize,
    pub min_size: usize,
    /// Whether other heights reached the same big-cluster count.
    pub tie: bool,
}

/// Cut height maximising the number of clusters of size `≥ ⌈γN⌉`; among equal
/// counts the smallest height wins. The candidates are the merge heights and
/// the all-singletons state (height 0).
pub fn select_threshold(dendrogram: &Dendrogram, gamma: f64, n_students: usize) -> Result<Selection> {
    if !(gamma > 0.0 && gamma <= 1.0) || n_students == 0 {
        return Err(Error::Argument("γ must lie in (0, 1] and N ≥ 1".into()));
    }
    let min_size = min_cluster_size(gamma, n_students);
    let n = dendrogram.leaf_count;
    // cluster sizes evolve incrementally; evaluate only where the height changes
    let mut sizes: Vec<usize> = vec![1; n];
    let mut big = if min_size <= 1 { n } else { 0 };
    let mut best: Option<(usize, usize, f64)> = None; // (count, merges applied, height)
    let mut ties = 0usize;
    let mut consider = |count: usize, k: usize, h: f64, best: &mut Option<(usize, usize, f64)>| match best {
        Some((c, _, _)) if count < *c => {}
        Some((c, _, _)) if count == *c => ties += 1,
        _ => {
            *best = Some((count, k, h));
            ties = 0;
        }
    };
    let first_height = dendrogram.merges.first().map_or(0.0, |m| m.height);
    if first_height > 0.0 || dendrogram.merges.is_empty() {
        consider(big, 0, 0.0, &mut best);
    }
    for (k, m) in dendrogram.merges.iter().enumerate() {
        let (sa, sb) = (sizes[m.a], sizes[m.b]);
        big -= usize::from(sa >= min_size) + usize::from(sb >= min_size);
        big += usize::from(sa + sb >= min_size);
        sizes.push(sa + sb);
        let next_higher = dendrogram.merges.get(k + 1).is_none_or(|next| next.height > m.height);
        if next_higher {
            consider(big, k + 1, m.height, &mut best);
        }
    }
    let (count, k, h) = best.expect("at least one candidate");
    if count == 0 {
        return Err(Error::EmptySelection { min_size });
    }
    Ok(Selection {
        threshold: h,
        clusters: dendrogram.clusters_after(k),
        big_count: count,
        min_size,
        tie: ties > 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterStatus {
    Kept,
    TooSmall,
    Unaligned,
}

/// A pooled neuron: which student and which unit of the clustered layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronRef {
    pub student: usize,
    pub neuron: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterInfo {
    /// Leaf indices into the clustered point set.
    pub leaves: Vec<usize>,
    /// `members[i]` is the origin of `leaves[i]`.
    pub members: Vec<NeuronRef>,
    pub size: usize,
    pub median_angle: f64,
    pub status: ClusterStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<ClusterInfo>,
    pub threshold: f64,
    pub gamma: f64,
    pub beta: f64,
    pub n_students: usize,
    pub min_size: usize,
    pub tie_break_used: bool,
    pub dendrogram: Dendrogram,
}

impl ClusterReport {
    pub fn kept(&self) -> impl Iterator<Item = &ClusterInfo> {
        self.clusters.iter().filter(|c| c.status == ClusterStatus::Kept)
    }

    pub fn kept_count(&self) -> usize {
        self.kept().count()
    }
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    // 2·atan2(‖â − b̂‖, ‖â + b̂‖) is exact for identical directions
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// Median over member pairs of the angle between their weight vectors; 0 for
/// singletons.
pub fn median_pairwise_angle(weights: &[&[f64]]) -> f64 {
    let mut angles = Vec::new();
    for i in 0..weights.len() {
        for j in i + 1..weights.len() {
            angles.push(angle(weights[i], weights[j]));
        }
    }
    if angles.is_empty() {
        return 0.0;
    }
    angles.sort_by(f64::total_cmp);
    let m = angles.len() / 2;
    if angles.len() % 2 == 1 {
        angles[m]
    } else {
        0.5 * (angles[m - 1] + angles[m])
    }
}

/// Grow every big cluster of the cut by its dendrogram sibling for as long as
/// the two share no student. Each student holds one copy of a teacher
/// neuron, so a student-disjoint sibling is the rest of the same cluster that
/// merges just above the cut, e.g. the other half of a tight blob that split
/// 5/5 when `⌈γN⌉ ≤ N/2`. Junk neurons of students already present never
/// qualify.
pub fn fuse_complementary(selection: &Selection, dendrogram: &Dendrogram, refs: &[NeuronRef]) -> Vec<Vec<usize>> {
    use std::collections::{BTreeSet, HashMap};
    let n = dendrogram.leaf_count;
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut parent: Vec<Option<usize>> = vec![None; n + dendrogram.merges.len()];
    for (step, m) in dendrogram.merges.iter().enumerate() {
        let mut c = members[m.a].clone();
        c.extend(&members[m.b]);
        c.sort_unstable();
        members.push(c);
        parent[m.a] = Some(n + step);
        parent[m.b] = Some(n + step);
    }
    let node_of: HashMap<&[usize], usize> = members.iter().enumerate().map(|(id, c)| (c.as_slice(), id)).collect();
    let students = |id: usize| -> BTreeSet<usize> { members[id].iter().map(|&l| refs[l].student).collect() };
    let mut grown: BTreeSet<usize> = BTreeSet::new();
    for c in selection.clusters.iter().filter(|c| c.len() >= selection.min_size) {
        let mut cur = node_of[c.as_slice()];
        while let Some(p) = parent[cur] {
            let m = &dendrogram.merges[p - n];
            let sib = if m.a == cur { m.b } else { m.a };
            if !students(cur).is_disjoint(&students(sib)) {
                break;
            }
            cur = p;
        }
        grown.insert(cur);
    }
    // keep maximal grown nodes, then every cut cluster they do not cover
    let grown: Vec<usize> = grown
        .iter()
        .copied()
        .filter(|&g| {
            !grown
                .iter()
                .any(|&h| h != g && members[h].binary_search(&members[g][0]).is_ok())
        })
        .collect();
    let covered: BTreeSet<usize> = grown.iter().flat_map(|&g| members[g].iter().copied()).collect();
    let mut out: Vec<Vec<usize>> = grown.iter().map(|&g| members[g].clone()).collect();
    out.extend(selection.clusters.iter().filter(|c| !covered.contains(&c[0])).cloned());
    out.sort_by_key(|c| c[0]);
    out
}

/// Mark clusters as too small or unaligned, after fusing complementary
/// halves (see [`fuse_complementary`]). `weights[leaf]` is the canonicalised
/// input weight vector (without bias) of each leaf and `refs[leaf]` its origin.
pub fn filter_alignment(
    selection: &Selection,
    dendrogram: &Dendrogram,
    weights: &[Vec<f64>],
    refs: &[NeuronRef],
    beta: f64,
    gamma: f64,
    n_students: usize,
) -> Result<ClusterReport> {
    if weights.len() != dendrogram.leaf_count || refs.len() != dendrogram.leaf_count {
        return Err(Error::Shape("one weight vector and reference per leaf required".into()));
    }
    let clusters = fuse_complementary(selection, dendrogram, refs)
        .iter()
        .map(|leaves| {
            let ws: Vec<&[f64]> = leaves.iter().map(|&i| weights[i].as_slice()).collect();
            let median_angle = median_pairwise_angle(&ws);
            let status = if leaves.len() < selection.min_size {
                ClusterStatus::TooSmall
            } else if median_angle > beta {
                ClusterStatus::Unaligned
            } else {
                ClusterStatus::Kept
            };
            let members: Vec<NeuronRef> = leaves.iter().map(|&i| refs[i]).collect();
            ClusterInfo {
                leaves: leaves.clone(),
                members,
                size: leaves.len(),
                median_angle,
                status,
            }
        })
        .collect();
    Ok(ClusterReport {
        clusters,
        threshold: selection.threshold,
        gamma,
        beta,
        n_students,
        min_size: selection.min_size,
        tie_break_used: selection.tie,
        dendrogram: dendrogram.clone(),
    })
}

/// Pooled neuron parameters that a cluster collapses into.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledNeuron {
    pub w: DVector<f64>,
    pub b: f64,
    pub a: DVector<f64>,
}

/// Reconstructed layer: row `k` of `weights`/`bias` and column `k` of
/// `out_weights` come from kept cluster `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapsedLayer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub out_weights: DMatrix<f64>,
    /// The members chosen for each neuron.
    pub sources: Vec<Vec<NeuronRef>>,
}

/// Winner-take-all collapse: for each kept cluster take the members of the
/// lowest-loss student present, average their `(w, b)` and sum their `a`.
pub fn collapse_clusters(
    report: &ClusterReport,
    neurons: &[PooledNeuron],
    student_losses: &[f64],
) -> Result<CollapsedLayer> {
    let kept: Vec<&ClusterInfo> = report.kept().collect();
    if kept.is_empty() {
        return Err(Error::EmptySelection {
            min_size: report.min_size,
        });
    }
    let d_in = neurons[0].w.len();
    let d_out = neurons[0].a.len();
    let m = kept.len();
    let mut weights = DMatrix::zeros(m, d_in);
    let mut bias = DVector::zeros(m);
    let mut out_weights = DMatrix::zeros(d_out, m);
    let mut sources = Vec::with_capacity(m);
    for (k, c) in kept.iter().enumerate() {
        let loss = |i: usize| {
            student_losses
                .get(c.members[i].student)
                .copied()
                .unwrap_or(f64::INFINITY)
        };
        let winner_pos = (0..c.members.len())
            .min_by(|&i, &j| {
                loss(i)
                    .total_cmp(&loss(j))
                    .then(c.members[i].student.cmp(&c.members[j].student))
            })
            .expect("kept clusters are nonempty");
        let winner = c.members[winner_pos].student;
        let chosen: Vec<(usize, NeuronRef)> = c
            .leaves
            .iter()
            .zip(&c.members)
            .filter(|(_, r)| r.student == winner)
            .map(|(&leaf, r)| (leaf, *r))
            .collect();
        let q = chosen.len() as f64;
        let mut w = DVector::zeros(d_in);
        let mut b = 0.0;
        let mut a = DVector::zeros(d_out);
        for &(leaf, _) in &chosen {
            w += &neurons[leaf].w;
            b += neurons[leaf].b;
            a += &neurons[leaf].a;
        }
        weights.set_row(k, &(w / q).transpose());
        bias[k] = b / q;
        out_weights.set_column(k, &a);
        sources.push(chosen.into_iter().map(|(_, r)| r).collect());
    }
    Ok(CollapsedLayer {
        weights,
        bias,
        out_weights,
        sources,
    })
}
