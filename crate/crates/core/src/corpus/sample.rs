//! Stratified rater assignment.
//!
//! Each rater gets exactly `per_rater / 4` artifacts per level, and their
//! domain and grade-span counts end within one of each other. Artifacts are
//! picked round-robin over levels; each pick takes the candidate whose
//! domain and grade span are least represented so far, ties broken by a
//! seeded shuffle.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, ManifestEntry};
use super::CorpusError;
use crate::digest::{derive_seed, sha256_hex};
use crate::docs::{read_document, write_document};
use crate::profiles::PerformanceLevel;
use crate::standards::{Domain, GradeBand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPolicy {
    /// Disjoint across raters when the corpus is large enough, otherwise
    /// each rater samples the whole corpus.
    Auto,
    Disjoint,
    Allow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingOptions {
    pub raters: usize,
    pub per_rater: usize,
    pub seed: u64,
    pub overlap: OverlapPolicy,
}

impl SamplingOptions {
    pub fn new(raters: usize, per_rater: usize, seed: u64) -> Self {
        Self {
            raters,
            per_rater,
            seed,
            overlap: OverlapPolicy::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strata {
    pub levels: Vec<PerformanceLevel>,
    pub domains: Vec<Domain>,
    pub grade_spans: Vec<GradeBand>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub id: String,
    pub raters: Vec<String>,
    pub per_rater: usize,
    pub strata: Strata,
    pub assignment: BTreeMap<String, Vec<String>>,
    pub seed: u64,
    /// Whether raters may share artifacts.
    pub overlapping: bool,
}

impl SamplingPlan {
    pub fn total_evaluations(&self) -> usize {
        self.assignment.values().map(Vec::len).sum()
    }

    pub fn is_assigned(&self, rater: &str, artifact: &str) -> bool {
        self.assignment.get(rater).is_some_and(|ids| ids.iter().any(|a| a == artifact))
    }

    pub fn path(root: &Path, id: &str) -> PathBuf {
        root.join("plans").join(format!("{id}.json"))
    }

    pub fn save(&self, root: &Path) -> Result<PathBuf, CorpusError> {
        let path = Self::path(root, &self.id);
        write_document(&path, "sampling_plan", self)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Ok(read_document(path, "sampling_plan")?)
    }
}

#[derive(Default)]
struct Tally {
    domain: BTreeMap<Domain, usize>,
    span: BTreeMap<GradeBand, usize>,
}

impl Tally {
    fn add(&mut self, e: &ManifestEntry) {
        *self.domain.entry(e.domain).or_insert(0) += 1;
        *self.span.entry(e.grade_band).or_insert(0) += 1;
    }

    fn key(&self, e: &ManifestEntry) -> (usize, usize, usize) {
        let d = self.domain.get(&e.domain).copied().unwrap_or(0);
        let s = self.span.get(&e.grade_band).copied().unwrap_or(0);
        (d + s, d, s)
    }
}

/// Spread of `counts` over `strata` (absent strata count as zero), and the
/// least-represented stratum.
fn spread<K: Ord + Copy>(counts: &BTreeMap<K, usize>, strata: &[K]) -> (usize, Option<K>) {
    let get = |k: &K| counts.get(k).copied().unwrap_or(0);
    let min = strata.iter().min_by_key(|k| get(k)).copied();
    let lo = strata.iter().map(get).min().unwrap_or(0);
    let hi = strata.iter().map(get).max().unwrap_or(0);
    (hi - lo, min)
}

const ATTEMPTS: u64 = 16;

fn pick_for_rater<'a>(
    pools: &BTreeMap<PerformanceLevel, Vec<&'a ManifestEntry>>,
    used: &BTreeSet<&'a str>,
    strata: &Strata,
    per_level: usize,
    seed: u64,
) -> Result<Vec<&'a ManifestEntry>, String> {
    let mut last_problem = String::new();
    for attempt in 0..ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&["attempt", &attempt.to_string()], seed));
        let mut avail: BTreeMap<PerformanceLevel, Vec<&ManifestEntry>> = pools
            .iter()
            .map(|(l, p)| {
                let mut v: Vec<_> = p.iter().copied().filter(|e| !used.contains(e.id.as_str())).collect();
                v.shuffle(&mut rng);
                (*l, v)
            })
            .collect();
        let mut tally = Tally::default();
        let mut chosen = Vec::new();
        for _ in 0..per_level {
            for level in &strata.levels {
                let cands = avail.get_mut(level).expect("level pool");
                let best = cands
                    .iter()
                    .enumerate()
                    .min_by_key(|(i, e)| (tally.key(e), *i))
                    .map(|(i, _)| i)
                    .expect("pool size checked");
                let e = cands.remove(best);
                tally.add(e);
                chosen.push(e);
            }
        }
        let (ds, dmin) = spread(&tally.domain, &strata.domains);
        let (ss, smin) = spread(&tally.span, &strata.grade_spans);
        if ds <= 1 && ss <= 1 {
            return Ok(chosen);
        }
        last_problem = if ds > 1 {
            format!("domain {} is under-represented", dmin.map(|d| d.to_string()).unwrap_or_default())
        } else {
            format!("grade span {} is under-represented", smin.map(|s| s.to_string()).unwrap_or_default())
        };
    }
    Err(last_problem)
}

/// Assigns `per_rater` artifacts to each of `raters` raters.
pub fn stratified_sample(manifest: &CorpusManifest, opts: &SamplingOptions) -> Result<SamplingPlan, CorpusError> {
    let SamplingOptions {
        raters,
        per_rater,
        seed,
        overlap,
    } = *opts;
    if raters == 0 || per_rater == 0 {
        return Err(CorpusError::Sampling("raters and per_rater must be positive".into()));
    }
    if per_rater % 4 != 0 {
        return Err(CorpusError::Sampling(format!(
            "per_rater {per_rater} is not divisible by 4, so levels cannot be equal"
        )));
    }
    let per_level = per_rater / 4;
    let mut pools: BTreeMap<PerformanceLevel, Vec<&ManifestEntry>> =
        PerformanceLevel::ALL.iter().map(|l| (*l, Vec::new())).collect();
    for e in &manifest.artifacts {
        pools.get_mut(&e.level).expect("every level").push(e);
    }
    for (level, pool) in &pools {
        if pool.len() < per_level {
            return Err(CorpusError::Sampling(format!(
                "level {level} has {} artifacts, each rater needs {per_level}",
                pool.len()
            )));
        }
    }
    let disjoint_fits = pools.values().all(|p| p.len() >= per_level * raters);
    let overlapping = match overlap {
        OverlapPolicy::Allow => true,
        OverlapPolicy::Auto => !disjoint_fits,
        OverlapPolicy::Disjoint if disjoint_fits => false,
        OverlapPolicy::Disjoint => {
            let (level, pool) = pools.iter().min_by_key(|(_, p)| p.len()).expect("four levels");
            return Err(CorpusError::Sampling(format!(
                "level {level} has {} artifacts; {raters} disjoint raters need {}",
                pool.len(),
                per_level * raters
            )));
        }
    };
    if overlapping && overlap == OverlapPolicy::Auto {
        log::warn!("corpus too small for disjoint assignment; raters will share artifacts");
    }
    let strata = Strata {
        levels: PerformanceLevel::ALL.to_vec(),
        domains: manifest.artifacts.iter().map(|e| e.domain).collect::<BTreeSet<_>>().into_iter().collect(),
        grade_spans: manifest.artifacts.iter().map(|e| e.grade_band).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let rater_ids: Vec<String> = (1..=raters).map(|i| format!("R{i}")).collect();
    let mut used: BTreeSet<&str> = BTreeSet::new();
    let mut assignment = BTreeMap::new();
    for rater in &rater_ids {
        let own_seed = derive_seed(&["rater", rater], seed);
        let picked = pick_for_rater(&pools, &used, &strata, per_level, own_seed)
            .map_err(|problem| CorpusError::Sampling(format!("rater {rater}: {problem}")))?;
        if !overlapping {
            used.extend(picked.iter().map(|e| e.id.as_str()));
        }
        assignment.insert(rater.clone(), picked.into_iter().map(|e| e.id.clone()).collect::<Vec<_>>());
    }
    let body = serde_json::to_vec(&(&assignment, seed, per_rater)).expect("assignment serializes");
    Ok(SamplingPlan {
        id: format!("plan-{}", &sha256_hex(&body)[..12]),
        raters: rater_ids,
        per_rater,
        strata,
        assignment,
        seed,
        overlapping,
    })
}
