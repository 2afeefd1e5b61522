//! Independent reference implementations used by the property and
//! acceptance tests. Nothing here calls into the library's scoring code.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

pub const TARGET_POOL: [&str; 12] = [
    "lung",
    "tb",
    "covid",
    "pneumonia",
    "malaria",
    "polyp",
    "optic disc",
    "retinal vessel",
    "glaucoma",
    "leukemia",
    "kidney",
    "liver",
];
pub const MODALITY_POOL: [&str; 6] = ["cxr", "ct", "fundus", "endoscopy", "microscopy", "mri"];

/// Character-trigram cosine over `^token$`, from raw counts.
pub fn trigram_cosine(a: &str, b: &str) -> f64 {
    fn grams(s: &str) -> HashMap<(char, char, char), u64> {
        let chars: Vec<char> = format!("^{s}$").chars().collect();
        let mut m = HashMap::new();
        for i in 0..chars.len().saturating_sub(2) {
            *m.entry((chars[i], chars[i + 1], chars[i + 2])).or_insert(0) += 1;
        }
        m
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (ga, gb) = (grams(a), grams(b));
    let dot: u64 = ga.iter().map(|(k, v)| v * gb.get(k).copied().unwrap_or(0)).sum();
    let na: u64 = ga.values().map(|v| v * v).sum();
    let nb: u64 = gb.values().map(|v| v * v).sum();
    dot as f64 / ((na * nb) as f64).sqrt()
}

/// A weight as the oracle understands it, straight from its stem.
#[derive(Debug, Clone)]
pub struct OracleWeight {
    pub id: String,
    pub classification: bool,
    pub joined_target: String,
    pub modality: String,
    pub class_count: usize,
}

pub fn oracle_weight(stem: &str) -> OracleWeight {
    let parts: Vec<&str> = stem.split('_').collect();
    assert_eq!(parts.len(), 3, "{stem}");
    let classification = matches!(parts[0].to_lowercase().as_str(), "cls" | "class" | "classification");
    let target = parts[1].to_lowercase();
    let n_targets = if classification { target.split('-').count() } else { 1 };
    OracleWeight {
        id: stem.to_string(),
        classification,
        joined_target: target,
        modality: parts[2].to_lowercase(),
        class_count: if n_targets == 1 { 2 } else { n_targets },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleDecision {
    pub winner: Option<String>,
    pub reason: Option<&'static str>,
    pub best_score: Option<f64>,
}

/// Enumerates every (candidate, score) pair and picks the winner.
pub fn brute_force_select(
    stems: &[String],
    classification: bool,
    target: &str,
    modality: Option<&str>,
    alpha: f64,
    beta: f64,
    threshold: f64,
) -> OracleDecision {
    if stems.is_empty() {
        return OracleDecision {
            winner: None,
            reason: Some("no_candidates"),
            best_score: None,
        };
    }
    let mut scored: Vec<(f64, usize, String)> = Vec::new();
    for stem in stems {
        let w = oracle_weight(stem);
        if w.classification != classification {
            continue;
        }
        let mut s = 1.0 + alpha * trigram_cosine(target, &w.joined_target);
        if let Some(m) = modality {
            s += beta * trigram_cosine(m, &w.modality);
        }
        scored.push((s, w.class_count, w.id));
    }
    if scored.is_empty() {
        return OracleDecision {
            winner: None,
            reason: Some("intent_filtered"),
            best_score: None,
        };
    }
    let mut best = scored[0].clone();
    for cand in &scored[1..] {
        let better = cand.0 > best.0
            || (cand.0 == best.0 && (cand.1 < best.1 || (cand.1 == best.1 && cand.2 < best.2)));
        if better {
            best = cand.clone();
        }
    }
    if best.0 > threshold {
        OracleDecision {
            winner: Some(best.2),
            reason: None,
            best_score: Some(best.0),
        }
    } else {
        OracleDecision {
            winner: None,
            reason: Some("below_threshold"),
            best_score: Some(best.0),
        }
    }
}

/// Deterministic xorshift so helpers do not depend on an RNG crate.
pub struct XorShift(pub u64);

impl XorShift {
    pub fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }

    pub fn chance(&mut self, percent: u64) -> bool {
        self.next() % 100 < percent
    }
}

/// A random stem over the pools, e.g. `Cls_Covid-Tb_CT`.
pub fn random_stem(rng: &mut XorShift) -> String {
    let cls = rng.chance(60);
    let modality = MODALITY_POOL[rng.below(MODALITY_POOL.len())];
    let target = if cls {
        let n = 1 + rng.below(3);
        let mut picked: Vec<&str> = Vec::new();
        while picked.len() < n {
            // hyphenated pool entries would change the class count
            let t = TARGET_POOL[rng.below(TARGET_POOL.len())];
            if !picked.contains(&t) {
                picked.push(t);
            }
        }
        picked.join("-")
    } else {
        TARGET_POOL[rng.below(TARGET_POOL.len())].to_string()
    };
    format!("{}_{}_{}", if cls { "Cls" } else { "Seg" }, target, modality)
}

pub fn random_registry_stems(rng: &mut XorShift, max: usize) -> Vec<String> {
    let n = rng.below(max + 1);
    let set: BTreeSet<String> = (0..n).map(|_| random_stem(rng)).collect();
    set.into_iter().collect()
}

/// `deps[i]` lists the indices node `i` depends on; all point backwards
/// in `perm` order so the graph is acyclic.
pub fn random_dag(rng: &mut XorShift, n: usize) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.below(i + 1));
    }
    let mut deps = vec![Vec::new(); n];
    for j in 0..n {
        for i in 0..j {
            if rng.chance(25) {
                deps[perm[j]].push(perm[i]);
            }
        }
    }
    deps
}

/// True when `order` lists every node once and respects every edge.
pub fn order_respects(order: &[usize], deps: &[Vec<usize>]) -> bool {
    if order.len() != deps.len() {
        return false;
    }
    let mut pos = vec![usize::MAX; deps.len()];
    for (p, &n) in order.iter().enumerate() {
        if n >= deps.len() || pos[n] != usize::MAX {
            return false;
        }
        pos[n] = p;
    }
    deps.iter()
        .enumerate()
        .all(|(node, ds)| ds.iter().all(|&d| pos[d] < pos[node]))
}

/// Nodes that (transitively) depend on `from`.
pub fn descendants(deps: &[Vec<usize>], from: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut changed = true;
    while changed {
        changed = false;
        for (node, ds) in deps.iter().enumerate() {
            if !out.contains(&node) && ds.iter().any(|d| *d == from || out.contains(d)) {
                out.insert(node);
                changed = true;
            }
        }
    }
    out
}
