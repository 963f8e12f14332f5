//! Universal attacks: cluster subjects in classifier feature space, train
//! one adversarial generator per cluster, and greedily pick a small artifact
//! set covering the most subjects.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::agn::{train_agn, AgnConfig, AgnOutcome, AttackSurface, AttackerSet};
use crate::dataset::LabeledDataset;
use crate::error::{AgnError, Result};
use crate::geometry::Homography;
use crate::image::Mask;
use crate::models::{ClassifierModel, DiscriminatorModel, GeneratorModel};
use crate::scalar::Scalar;

/// Subject-to-cluster map produced by balanced k-means++.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// assignment[subject] = cluster index.
    pub assignment: Vec<usize>,
    pub cluster_count: usize,
    pub cluster_size: usize,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding, Lloyd iterations, then greedy rebalancing so no
/// cluster exceeds `target_size` members (overflow reassigned to the
/// nearest non-full centroid). k = ceil(N / target_size).
pub fn kmeanspp_cluster(
    features: &[Vec<f64>],
    target_size: usize,
    rng_seed: u64,
) -> Result<ClusterAssignment> {
    if features.is_empty() {
        return Err(AgnError::EmptyInput("feature set".into()));
    }
    if target_size == 0 {
        return Err(AgnError::InvalidValue("cluster size must be positive".into()));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(AgnError::DimensionMismatch(
            "features must share one dimension".into(),
        ));
    }
    let n = features.len();
    let k = n.div_ceil(target_size);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    // k-means++ seeding: first centroid uniform, then D^2 weighting.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(features[rng.gen_range(0..n)].clone());
    while centroids.len() < k {
        let d2: Vec<f64> = features
            .iter()
            .map(|f| {
                centroids
                    .iter()
                    .map(|c| sq_dist(f, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // All points coincide with existing centroids; duplicate one.
            centroids.push(features[rng.gen_range(0..n)].clone());
            continue;
        }
        let mut pick = rng.gen::<f64>() * total;
        let mut chosen = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if pick < w {
                chosen = i;
                break;
            }
            pick -= w;
        }
        centroids.push(features[chosen].clone());
    }

    // Lloyd iterations to convergence or 300 rounds.
    let mut assignment = vec![0usize; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, f) in features.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(f, &centroids[a]).total_cmp(&sq_dist(f, &centroids[b])))
                .unwrap();
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            for d in 0..dim {
                centroid[d] =
                    members.iter().map(|&i| features[i][d]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }

    // Greedy rebalancing: spill the farthest members of over-full clusters
    // into the nearest centroid with room.
    let mut sizes = vec![0usize; k];
    for &c in &assignment {
        sizes[c] += 1;
    }
    for c in 0..k {
        while sizes[c] > target_size {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
            // Farthest member from its own centroid moves.
            let &mover = members
                .iter()
                .max_by(|&&a, &&b| {
                    sq_dist(&features[a], &centroids[c])
                        .total_cmp(&sq_dist(&features[b], &centroids[c]))
                })
                .unwrap();
            let dest = (0..k)
                .filter(|&d| d != c && sizes[d] < target_size)
                .min_by(|&a, &b| {
                    sq_dist(&features[mover], &centroids[a])
                        .total_cmp(&sq_dist(&features[mover], &centroids[b]))
                })
                .ok_or_else(|| {
                    AgnError::InvalidValue("no non-full cluster to rebalance into".into())
                })?;
            assignment[mover] = dest;
            sizes[c] -= 1;
            sizes[dest] += 1;
        }
    }

    Ok(ClusterAssignment {
        assignment,
        cluster_count: k,
        cluster_size: target_size,
    })
}

/// Boolean artifacts x subjects outcome table feeding coverage selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuccessMatrix {
    pub artifact_ids: Vec<String>,
    pub subject_ids: Vec<String>,
    /// cells[artifact][subject].
    pub cells: Vec<Vec<bool>>,
}

impl SuccessMatrix {
    pub fn new(artifact_ids: Vec<String>, subject_ids: Vec<String>, cells: Vec<Vec<bool>>) -> Result<Self> {
        if artifact_ids.is_empty() || subject_ids.is_empty() {
            return Err(AgnError::EmptyInput("success matrix".into()));
        }
        if cells.len() != artifact_ids.len()
            || cells.iter().any(|r| r.len() != subject_ids.len())
        {
            return Err(AgnError::DimensionMismatch(
                "success matrix must be rectangular".into(),
            ));
        }
        Ok(Self {
            artifact_ids,
            subject_ids,
            cells,
        })
    }

    /// CSV with a header row of subject IDs; cells are 0/1.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec!["artifact".to_string()];
        header.extend(self.subject_ids.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (i, row) in self.cells.iter().enumerate() {
            let mut rec = vec![self.artifact_ids[i].clone()];
            rec.extend(row.iter().map(|&b| if b { "1".to_string() } else { "0".to_string() }));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
        let subject_ids: Vec<String> = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .skip(1)
            .map(|s| s.to_string())
            .collect();
        let mut artifact_ids = Vec::new();
        let mut cells = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            artifact_ids.push(rec[0].to_string());
            cells.push(
                rec.iter()
                    .skip(1)
                    .map(|v| v.trim() == "1")
                    .collect::<Vec<bool>>(),
            );
        }
        Self::new(artifact_ids, subject_ids, cells)
    }

    /// Fraction of subjects covered by any selected artifact.
    pub fn coverage(&self, selection: &[usize]) -> f64 {
        let mut covered = vec![false; self.subject_ids.len()];
        for &a in selection {
            for (s, &hit) in self.cells[a].iter().enumerate() {
                covered[s] |= hit;
            }
        }
        covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64
    }
}

fn csv_err(e: csv::Error) -> AgnError {
    AgnError::InvalidValue(format!("csv: {e}"))
}

/// Classic greedy max-coverage: repeatedly pick the artifact covering the
/// most not-yet-covered subjects, ties toward the lowest index, stopping
/// early on full coverage or zero marginal gain.
pub fn greedy_select_coverage(matrix: &SuccessMatrix, budget: usize) -> Vec<usize> {
    let n_subjects = matrix.subject_ids.len();
    let mut covered: HashSet<usize> = HashSet::new();
    let mut picked: Vec<usize> = Vec::new();
    let mut available: Vec<bool> = vec![true; matrix.artifact_ids.len()];
    for _ in 0..budget.min(matrix.artifact_ids.len()) {
        let mut best: Option<(usize, usize)> = None; // (gain, index)
        for (a, row) in matrix.cells.iter().enumerate() {
            if !available[a] {
                continue;
            }
            let gain = row
                .iter()
                .enumerate()
                .filter(|&(s, &hit)| hit && !covered.contains(&s))
                .count();
            let better = match best {
                None => true,
                Some((bg, bi)) => gain > bg || (gain == bg && a < bi),
            };
            if better {
                best = Some((gain, a));
            }
        }
        let Some((gain, a)) = best else { break };
        if gain == 0 {
            break;
        }
        picked.push(a);
        available[a] = false;
        for (s, &hit) in matrix.cells[a].iter().enumerate() {
            if hit {
                covered.insert(s);
            }
        }
        if covered.len() == n_subjects {
            break;
        }
    }
    picked
}

/// Exhaustive max-coverage optimum for small instances (test oracle).
pub fn optimal_coverage_count(matrix: &SuccessMatrix, budget: usize) -> usize {
    let rows = matrix.artifact_ids.len();
    let mut best = 0usize;
    // Enumerate all subsets of rows of size <= budget.
    let total = 1usize << rows;
    for mask in 0..total {
        if (mask as u32).count_ones() as usize > budget {
            continue;
        }
        let mut covered: HashSet<usize> = HashSet::new();
        for a in 0..rows {
            if mask & (1 << a) != 0 {
                for (s, &hit) in matrix.cells[a].iter().enumerate() {
                    if hit {
                        covered.insert(s);
                    }
                }
            }
        }
        best = best.max(covered.len());
    }
    best
}

/// Everything a universal run needs besides the subjects.
pub struct UniversalContext<'a, F: Scalar> {
    pub generator_template: &'a GeneratorModel<F>,
    pub discriminator_template: &'a DiscriminatorModel<F>,
    pub classifier: &'a mut ClassifierModel<F>,
    pub mask: &'a Mask,
    /// Canonical patch-to-face placement used for every subject.
    pub alignment: Homography,
    pub real_dataset: &'a LabeledDataset<F>,
}

pub struct UniversalOutcome<F: Scalar> {
    pub generators: Vec<GeneratorModel<F>>,
    pub clusters: Option<ClusterAssignment>,
    pub runs: Vec<AgnOutcome<F>>,
}

/// Train universal dodging generators: one Algorithm-1 run over all
/// subjects when there are at most 10, otherwise one run per cluster of
/// `cluster_size` subjects grouped in embedding space.
pub fn train_universal<F: Scalar>(
    subjects: &LabeledDataset<F>,
    ctx: &mut UniversalContext<'_, F>,
    config: &AgnConfig<F>,
    cluster_size: usize,
    rng_seed: u64,
) -> Result<UniversalOutcome<F>> {
    if subjects.is_empty() {
        return Err(AgnError::EmptyInput("subject set".into()));
    }
    let n = subjects.len();
    let groups: (Option<ClusterAssignment>, Vec<Vec<usize>>) = if n <= 10 {
        (None, vec![(0..n).collect()])
    } else {
        let mut feats: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (img, _) in subjects.items() {
            let batch = crate::image::batch_chw(std::slice::from_ref(img))?;
            let emb = ctx.classifier.embed(&batch)?;
            feats.push(emb.row(0).iter().map(|v| v.to_f64_lossy()).collect());
        }
        let clusters = kmeanspp_cluster(&feats, cluster_size, rng_seed)?;
        let groups = (0..clusters.cluster_count)
            .map(|c| clusters.members(c))
            .filter(|m| !m.is_empty())
            .collect();
        (Some(clusters), groups)
    };

    let mut generators = Vec::new();
    let mut runs = Vec::new();
    for (gi, members) in groups.1.iter().enumerate() {
        let images: Vec<_> = members
            .iter()
            .map(|&i| subjects.items()[i].0.clone())
            .collect();
        let true_classes: Vec<_> = members.iter().map(|&i| subjects.items()[i].1).collect();
        let count = images.len();
        let attacker = AttackerSet {
            images,
            true_classes,
            alignments: Some(vec![ctx.alignment; count]),
            luminance_levels: None,
            luminance_models: Vec::new(),
        };
        let surface = AttackSurface::Overlay {
            attacker,
            mask: ctx.mask.clone(),
        };
        let mut generator = ctx.generator_template.clone();
        let mut discriminator = ctx.discriminator_template.clone();
        let mut cfg = config.clone();
        let outcome = train_agn(
            &surface,
            &mut generator,
            &mut discriminator,
            ctx.classifier,
            ctx.real_dataset,
            &mut cfg,
            rng_seed.wrapping_add(gi as u64),
        )?;
        generators.push(generator);
        runs.push(outcome);
    }
    Ok(UniversalOutcome {
        generators,
        clusters: groups.0,
        runs,
    })
}

/// Report of a coverage selection: picked artifacts and who they cover.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub artifacts: Vec<String>,
    pub covered_subjects: Vec<String>,
    pub coverage: f64,
}

pub fn selection_report(matrix: &SuccessMatrix, selection: &[usize]) -> SelectionReport {
    let mut covered: Vec<bool> = vec![false; matrix.subject_ids.len()];
    for &a in selection {
        for (s, &hit) in matrix.cells[a].iter().enumerate() {
            covered[s] |= hit;
        }
    }
    SelectionReport {
        artifacts: selection
            .iter()
            .map(|&a| matrix.artifact_ids[a].clone())
            .collect(),
        covered_subjects: matrix
            .subject_ids
            .iter()
            .zip(&covered)
            .filter(|(_, &c)| c)
            .map(|(s, _)| s.clone())
            .collect(),
        coverage: covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64,
    }
}

/// Embedding features for a whole dataset, one row per item.
pub fn embedding_features<F: Scalar>(
    classifier: &mut ClassifierModel<F>,
    dataset: &LabeledDataset<F>,
) -> Result<Array2<F>> {
    let images: Vec<_> = dataset.items().iter().map(|(i, _)| i.clone()).collect();
    classifier.embed(&crate::image::batch_chw(&images)?)
}

/// Write a selection report as pretty JSON.
pub fn write_selection_report(report: &SelectionReport, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(serde_json::to_string_pretty(report)?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<bool>>) -> SuccessMatrix {
        let subjects = (0..rows[0].len()).map(|i| format!("s{i}")).collect();
        let artifacts = (0..rows.len()).map(|i| format!("a{i}")).collect();
        SuccessMatrix::new(artifacts, subjects, rows).unwrap()
    }

    #[test]
    fn greedy_worked_example() {
        // Rows cover {a,b}, {b,c}, {d}; budget 2 picks row0 then row1
        // (1-new tie against row2 broken by index), covering 3 of 4.
        let m = matrix(vec![
            vec![true, true, false, false],
            vec![false, true, true, false],
            vec![false, false, false, true],
        ]);
        let sel = greedy_select_coverage(&m, 2);
        assert_eq!(sel, vec![0, 1]);
        assert!((m.coverage(&sel) - 0.75).abs() < 1e-12);
        assert_eq!(optimal_coverage_count(&m, 2), 3);
    }

    #[test]
    fn greedy_exhausts_rows_given_budget() {
        let m = matrix(vec![
            vec![true, false, false],
            vec![false, true, false],
            vec![false, false, true],
        ]);
        let sel = greedy_select_coverage(&m, 10);
        assert_eq!(m.coverage(&sel), 1.0);
    }

    #[test]
    fn greedy_skips_zero_gain_duplicates() {
        let m = matrix(vec![
            vec![true, true, false],
            vec![true, true, false],
            vec![true, true, false],
        ]);
        let sel = greedy_select_coverage(&m, 3);
        assert_eq!(sel, vec![0]);
    }

    #[test]
    fn clustering_recovers_separated_blobs() {
        let mut feats: Vec<Vec<f64>> = Vec::new();
        for i in 0..5 {
            feats.push(vec![0.0 + 0.01 * i as f64, 0.0]);
        }
        for i in 0..5 {
            feats.push(vec![10.0 + 0.01 * i as f64, 10.0]);
        }
        let clusters = kmeanspp_cluster(&feats, 5, 7).unwrap();
        assert_eq!(clusters.cluster_count, 2);
        // Within-blob assignments agree, across-blob differ.
        for i in 1..5 {
            assert_eq!(clusters.assignment[0], clusters.assignment[i]);
            assert_eq!(clusters.assignment[5], clusters.assignment[5 + i]);
        }
        assert_ne!(clusters.assignment[0], clusters.assignment[5]);
        // Brute-force check: within-cluster distances below between-cluster.
        let within = sq_dist(&feats[0], &feats[4]);
        let between = sq_dist(&feats[0], &feats[9]);
        assert!(within < between);
    }

    #[test]
    fn single_cluster_when_size_covers_all() {
        let feats: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64]).collect();
        let clusters = kmeanspp_cluster(&feats, 7, 3).unwrap();
        assert_eq!(clusters.cluster_count, 1);
        assert!(clusters.assignment.iter().all(|&c| c == 0));
    }

    #[test]
    fn clustering_deterministic_and_balanced() {
        let feats: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i % 7) as f64, (i % 3) as f64, i as f64 * 0.1])
            .collect();
        let a = kmeanspp_cluster(&feats, 6, 11).unwrap();
        let b = kmeanspp_cluster(&feats, 6, 11).unwrap();
        assert_eq!(a.assignment, b.assignment);
        let mut sizes = vec![0usize; a.cluster_count];
        for &c in &a.assignment {
            sizes[c] += 1;
        }
        assert!(sizes.iter().all(|&s| s <= 6), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 20);
    }

    #[test]
    fn csv_roundtrip() {
        let m = matrix(vec![vec![true, false], vec![false, true]]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        m.write_csv(&p).unwrap();
        let back = SuccessMatrix::read_csv(&p).unwrap();
        assert_eq!(m, back);
    }
}
