//! Patch verification, image matching and patch retrieval scored by mean
//! average precision, broken down by noise tier.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DescriptorSet, Tier};
use crate::error::{Error, Result};
use crate::numerics::squared_distance;

pub const DEFAULT_PAIRS_PER_TIER: usize = 2000;
pub const DEFAULT_DISTRACTORS: usize = 100;

/// `(1/R) Σ precision@r` over the ranks `r` holding relevant items, or `None`
/// when nothing is relevant.
pub fn average_precision(ranked_relevance: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Indices sorted by ascending distance; equal distances keep index order.
pub fn rank_by_distance(distances: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..distances.len()).collect();
    idx.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    idx
}

fn distance(set: &DescriptorSet, i: usize, j: usize) -> f64 {
    squared_distance(set.descriptors.row(i), set.descriptors.row(j)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Verification,
    Matching,
    Retrieval,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Verification, Task::Matching, Task::Retrieval];

    pub fn name(self) -> &'static str {
        match self {
            Task::Verification => "verification",
            Task::Matching => "matching",
            Task::Retrieval => "retrieval",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Task> {
        match s.trim().to_ascii_lowercase().as_str() {
            "verification" => Ok(Task::Verification),
            "matching" => Ok(Task::Matching),
            "retrieval" => Ok(Task::Retrieval),
            other => Err(Error::config(format!(
                "unknown task '{other}' (expected verification, matching or retrieval)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierResult {
    pub tier: Tier,
    pub map: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    /// Mean over every scored query (not over tiers).
    pub map_overall: f64,
    pub map_by_tier: Vec<TierResult>,
    pub num_queries: usize,
    /// Queries left out because they had nothing relevant to find.
    pub skipped: usize,
    /// Free-form `key=value` context such as dimension, scheme and seed.
    pub echo: Vec<(String, String)>,
}

impl EvalReport {
    fn from_queries(task: Task, aps: &[(Option<Tier>, f64)], skipped: usize) -> EvalReport {
        let mut by_tier: BTreeMap<Tier, (f64, usize)> = BTreeMap::new();
        for &(tier, ap) in aps {
            if let Some(t) = tier {
                let e = by_tier.entry(t).or_default();
                e.0 += ap;
                e.1 += 1;
            }
        }
        let total: f64 = aps.iter().map(|q| q.1).sum();
        EvalReport {
            task,
            map_overall: if aps.is_empty() { 0.0 } else { total / aps.len() as f64 },
            map_by_tier: by_tier
                .into_iter()
                .map(|(tier, (sum, n))| TierResult {
                    tier,
                    map: sum / n as f64,
                    queries: n,
                })
                .collect(),
            num_queries: aps.len(),
            skipped,
            echo: Vec::new(),
        }
    }

    pub fn with_echo(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.echo.push((key.into(), value.to_string()));
        self
    }

    pub fn tier_map(&self, tier: Tier) -> Option<f64> {
        self.map_by_tier.iter().find(|t| t.tier == tier).map(|t| t.map)
    }

    /// Flat `key=value` block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("task={}\n", self.task.name()));
        for (k, v) in &self.echo {
            out.push_str(&format!("{k}={v}\n"));
        }
        out.push_str(&format!("map={:.6}\n", self.map_overall));
        out.push_str(&format!("queries={}\n", self.num_queries));
        out.push_str(&format!("skipped={}\n", self.skipped));
        for t in &self.map_by_tier {
            out.push_str(&format!("map_{}={:.6}\n", t.tier.name(), t.map));
            out.push_str(&format!("queries_{}={}\n", t.tier.name(), t.queries));
        }
        out
    }

    /// One whitespace-separated `key=value` record per tier plus an `all` record.
    pub fn to_records(&self) -> String {
        let echo: String = self.echo.iter().map(|(k, v)| format!(" {k}={v}")).collect();
        let mut out = format!(
            "task={} tier=all map={:.6} queries={} skipped={}{echo}\n",
            self.task.name(),
            self.map_overall,
            self.num_queries,
            self.skipped
        );
        for t in &self.map_by_tier {
            out.push_str(&format!(
                "task={} tier={} map={:.6} queries={}{echo}\n",
                self.task.name(),
                t.tier.name(),
                t.map,
                t.queries
            ));
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Balanced same-label / different-label pair ranking. For each tier, the second
/// patch of every pair is drawn from that tier; positives pair it with another
/// patch of its label, negatives with a patch of a different label. Each tier's
/// pair list is one query, scored by −distance.
pub fn eval_verification(set: &DescriptorSet, pairs_per_tier: usize, seed: u64) -> Result<EvalReport> {
    let by_label = set.indices_by_label();
    let multi = by_label.values().filter(|rows| rows.len() >= 2).count();
    if by_label.len() < 2 || multi < 2 {
        return Err(Error::config(format!(
            "verification needs at least 2 classes with 2 patches each ({} classes, {multi} with ≥ 2)",
            by_label.len()
        )));
    }
    if pairs_per_tier == 0 {
        return Err(Error::config("pairs_per_tier must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = set.len();
    let groups: Vec<(Option<Tier>, Vec<usize>)> = match &set.tiers {
        Some(tiers) => Tier::ALL
            .iter()
            .map(|&t| (Some(t), (0..n).filter(|&i| tiers[i] == t && by_label[&set.labels[i]].len() >= 2).collect()))
            .collect(),
        None => vec![(None, (0..n).filter(|&i| by_label[&set.labels[i]].len() >= 2).collect())],
    };
    let mut aps = Vec::new();
    for (tier, members) in groups {
        if members.is_empty() {
            continue;
        }
        let mut dists = Vec::with_capacity(2 * pairs_per_tier);
        let mut relevant = Vec::with_capacity(2 * pairs_per_tier);
        for _ in 0..pairs_per_tier {
            let j = members[rng.random_range(0..members.len())];
            let same = &by_label[&set.labels[j]];
            let mut i = same[rng.random_range(0..same.len() - 1)];
            if i == j {
                i = *same.last().expect("class has ≥ 2 rows");
            }
            dists.push(distance(set, i, j));
            relevant.push(true);
            let mut k = rng.random_range(0..n);
            while set.labels[k] == set.labels[j] {
                k = rng.random_range(0..n);
            }
            dists.push(distance(set, k, j));
            relevant.push(false);
        }
        let ranked: Vec<bool> = rank_by_distance(&dists).into_iter().map(|r| relevant[r]).collect();
        aps.push((tier, average_precision(&ranked).expect("positives present")));
    }
    Ok(EvalReport::from_queries(Task::Verification, &aps, 0))
}

/// Groups sequences that share at least one label into scenes. Returns, per
/// scene, its sequence ids ascending; the first is the reference.
fn scenes(set: &DescriptorSet) -> Vec<Vec<u32>> {
    let seqs: BTreeSet<u32> = set.sequence_ids.iter().copied().collect();
    let index: BTreeMap<u32, usize> = seqs.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut parent: Vec<usize> = (0..seqs.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut first_seq_of_label: BTreeMap<u32, usize> = BTreeMap::new();
    for (l, s) in set.labels.iter().zip(&set.sequence_ids) {
        let si = index[s];
        match first_seq_of_label.get(l) {
            Some(&other) => {
                let (a, b) = (find(&mut parent, si), find(&mut parent, other));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
            None => {
                first_seq_of_label.insert(*l, si);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for (&s, &si) in &index {
        let root = find(&mut parent, si);
        groups.entry(root).or_default().push(s);
    }
    groups.into_values().collect()
}

/// Nearest-neighbour matching from each scene's reference sequence (its lowest
/// sequence id) to every other sequence of the scene. Putative matches are
/// ranked by ascending distance; a match is correct when labels agree. One AP
/// per (reference, target) pair; a pair whose labels overlap but whose matches
/// are all wrong scores 0.
pub fn eval_matching(set: &DescriptorSet, _seed: u64) -> Result<EvalReport> {
    let mut rows_of_seq: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &s) in set.sequence_ids.iter().enumerate() {
        rows_of_seq.entry(s).or_default().push(i);
    }
    let mut aps = Vec::new();
    let mut skipped = 0;
    for scene in scenes(set) {
        let reference = &rows_of_seq[&scene[0]];
        for seq in &scene[1..] {
            let target = &rows_of_seq[seq];
            let target_labels: BTreeSet<u32> = target.iter().map(|&j| set.labels[j]).collect();
            if !reference.iter().any(|&i| target_labels.contains(&set.labels[i])) {
                log::warn!("sequences {} and {seq} share no labels; pair skipped", scene[0]);
                skipped += 1;
                continue;
            }
            let mut dists = Vec::with_capacity(reference.len());
            let mut correct = Vec::with_capacity(reference.len());
            for &i in reference {
                let mut best = (usize::MAX, f64::INFINITY);
                for &j in target {
                    let d = distance(set, i, j);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                dists.push(best.1);
                correct.push(set.labels[best.0] == set.labels[i]);
            }
            let ranked: Vec<bool> = rank_by_distance(&dists).into_iter().map(|r| correct[r]).collect();
            let tier = set.tiers.as_ref().map(|t| dominant_tier(target.iter().map(|&j| t[j])));
            aps.push((tier, average_precision(&ranked).unwrap_or(0.0)));
        }
    }
    if aps.is_empty() {
        return Err(Error::config(
            "matching needs a reference and at least one target sequence sharing labels",
        ));
    }
    Ok(EvalReport::from_queries(Task::Matching, &aps, skipped))
}

/// Most frequent tier, the noisier one on ties.
fn dominant_tier(tiers: impl Iterator<Item = Tier>) -> Tier {
    let mut counts = [0usize; 3];
    for t in tiers {
        counts[t.code() as usize] += 1;
    }
    let best = (0..3).rev().max_by_key(|&i| counts[i]).expect("three tiers");
    Tier::from_code(best as u8).expect("valid code")
}

/// Every patch whose label has another patch is a query. Its pool holds all
/// other patches of its label plus up to `distractors_per_query` patches of
/// other labels, sampled without replacement; AP ranks the pool by distance.
pub fn eval_retrieval(set: &DescriptorSet, distractors_per_query: usize, seed: u64) -> Result<EvalReport> {
    let by_label = set.indices_by_label();
    if by_label.len() < 2 {
        return Err(Error::config("retrieval needs at least 2 classes"));
    }
    let n = set.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aps = Vec::new();
    let mut skipped = 0;
    for q in 0..n {
        let same = &by_label[&set.labels[q]];
        if same.len() < 2 {
            skipped += 1;
            continue;
        }
        let others = n - same.len();
        let take = distractors_per_query.min(others);
        let mut pool: Vec<usize> = same.iter().copied().filter(|&i| i != q).collect();
        let relevant_count = pool.len();
        // sample among the rows of other labels by index into the complement
        let mut complement_index = sample(&mut rng, others, take).into_vec();
        complement_index.sort_unstable();
        let mut same_sorted = same.clone();
        same_sorted.sort_unstable();
        for c in complement_index {
            pool.push(nth_outside(c, &same_sorted));
        }
        let dists: Vec<f64> = pool.iter().map(|&j| distance(set, q, j)).collect();
        let ranked: Vec<bool> = rank_by_distance(&dists).into_iter().map(|r| r < relevant_count).collect();
        let ap = average_precision(&ranked).expect("same-label items present");
        aps.push((set.tier(q), ap));
    }
    if aps.is_empty() {
        return Err(Error::config("retrieval found no label with 2 or more patches"));
    }
    Ok(EvalReport::from_queries(Task::Retrieval, &aps, skipped))
}

/// The `c`-th (0-based) row index not contained in the sorted list `excluded`.
fn nth_outside(c: usize, excluded: &[usize]) -> usize {
    let mut idx = c;
    for &e in excluded {
        if e <= idx {
            idx += 1;
        } else {
            break;
        }
    }
    idx
}

/// Runs one task with default sampling sizes.
pub fn evaluate(set: &DescriptorSet, task: Task, seed: u64) -> Result<EvalReport> {
    match task {
        Task::Verification => eval_verification(set, DEFAULT_PAIRS_PER_TIER, seed),
        Task::Matching => eval_matching(set, seed),
        Task::Retrieval => eval_retrieval(set, DEFAULT_DISTRACTORS, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn set(rows: Vec<Vec<f64>>, labels: Vec<u32>, seqs: Vec<u32>) -> DescriptorSet {
        DescriptorSet::new(Matrix::from_rows(&rows).unwrap(), labels, seqs, None).unwrap()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true, true]), Some(1.0));
        assert!((average_precision(&[false, false, true]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((average_precision(&[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[false, false]), None);
    }

    #[test]
    fn ranking_ties_keep_index_order() {
        assert_eq!(rank_by_distance(&[1.0, 0.5, 1.0, 0.5]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn nth_outside_skips_excluded() {
        let ex = [0, 2, 3];
        let got: Vec<usize> = (0..3).map(|c| nth_outside(c, &ex)).collect();
        assert_eq!(got, vec![1, 4, 5]);
    }

    #[test]
    fn matching_copy_is_perfect() {
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.7, 0.7]];
        let mut all = rows.clone();
        all.extend(rows);
        let s = set(all, vec![0, 1, 2, 0, 1, 2], vec![0, 0, 0, 1, 1, 1]);
        let r = eval_matching(&s, 0).unwrap();
        assert_eq!(r.map_overall, 1.0);
        assert_eq!(r.num_queries, 1);
    }

    #[test]
    fn matching_hand_instance_with_swap() {
        // target rows for labels 1 and 2 are swapped in position relative to labels
        let s = set(
            vec![
                vec![0.0], vec![10.0], vec![20.0],
                vec![0.5], vec![19.0], vec![11.5],
            ],
            vec![0, 1, 2, 0, 1, 2],
            vec![0, 0, 0, 1, 1, 1],
        );
        // NN: ref 0 → 0.5 (label 0, d .5, correct); ref 10 → 11.5 (label 2, d 1.5, wrong);
        // ref 20 → 19 (label 1, d 1, wrong). Ranked by distance: [correct, wrong, wrong].
        let r = eval_matching(&s, 0).unwrap();
        assert!((r.map_overall - 1.0).abs() < 1e-15);
        let s2 = set(
            vec![vec![0.0], vec![10.0], vec![20.0], vec![1.9], vec![10.5], vec![21.0]],
            vec![0, 1, 2, 2, 1, 0],
            vec![0, 0, 0, 1, 1, 1],
        );
        // ref 0 → 1.9 (label 2, wrong, d 1.9); ref 10 → 10.5 (correct, d .5);
        // ref 20 → 21 (label 0, wrong, d 1). Ranked: [correct, wrong, wrong] → AP 1
        assert_eq!(eval_matching(&s2, 0).unwrap().map_overall, 1.0);
        let s3 = set(
            vec![vec![0.0], vec![10.0], vec![20.0], vec![0.2], vec![10.5], vec![21.0]],
            vec![0, 1, 2, 2, 1, 0],
            vec![0, 0, 0, 1, 1, 1],
        );
        // ref 0 → 0.2 (wrong, d .2); ref 10 → 10.5 (correct, d .5); ref 20 → 21 (wrong, d 1)
        // ranked [wrong, correct, wrong] → AP = 1/2
        assert!((eval_matching(&s3, 0).unwrap().map_overall - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scenes_group_by_shared_labels() {
        let s = set(
            vec![vec![0.0]; 6],
            vec![0, 0, 1, 1, 2, 2],
            vec![4, 5, 4, 5, 7, 9],
        );
        assert_eq!(scenes(&s), vec![vec![4, 5], vec![7, 9]]);
    }

    #[test]
    fn retrieval_hand_pool() {
        // query 0 (label 0) pool: row 1 (label 0, d 2), rows 2..4 (d 1, 3, 4)
        let s = set(
            vec![vec![0.0], vec![2.0], vec![1.0], vec![3.0], vec![4.0]],
            vec![0, 0, 1, 2, 3],
            vec![0; 5],
        );
        let r = eval_retrieval(&s, 10, 0).unwrap();
        // query 0: ranking [d1 (label1), d2 (rel), d3, d4] → AP 1/2
        // query 1 (at 2.0): pool row 0 (rel, d 2), rows 2 (d 1), 3 (d 1), 4 (d 2)
        // ranking: row2, row3, row0 (tie with row4 broken by pool order), row4 → AP 1/3
        assert_eq!(r.num_queries, 2);
        assert_eq!(r.skipped, 3);
        assert!((r.map_overall - (0.5 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn verification_separable_is_perfect() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..5 {
            for k in 0..3 {
                rows.push(vec![100.0 * c as f64 + k as f64, 0.0]);
                labels.push(c);
            }
        }
        let s = set(rows, labels, vec![0; 15]);
        let r = eval_verification(&s, 200, 3).unwrap();
        assert_eq!(r.map_overall, 1.0);
        assert_eq!(r, eval_verification(&s, 200, 3).unwrap());
    }

    #[test]
    fn insufficient_classes() {
        let s = set(vec![vec![0.0], vec![1.0]], vec![0, 0], vec![0, 1]);
        assert!(matches!(eval_verification(&s, 10, 0), Err(Error::Config(_))));
        assert!(matches!(eval_retrieval(&s, 10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn report_text() {
        let r = EvalReport::from_queries(Task::Matching, &[(Some(Tier::Easy), 1.0), (Some(Tier::Hard), 0.5), (Some(Tier::Hard), 0.0)], 1)
            .with_echo("dim", 16);
        assert!((r.map_overall - 0.5).abs() < 1e-15);
        assert_eq!(r.tier_map(Tier::Hard), Some(0.25));
        let text = r.to_text();
        assert!(text.contains("task=matching\n") && text.contains("dim=16\n") && text.contains("map_hard=0.250000\n"));
        assert_eq!(r.to_records().lines().count(), 3);
    }
}
