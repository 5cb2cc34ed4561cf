//! Diff comparison checked against an independent brute-force multiset
//! oracle and against the bundled fixture diffs with known counts.

mod common;

use std::fs;

use ladu_core::eval::{self, DiffModel, FileDiff};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Brute force: repeatedly remove the first exact match from a scratch copy.
/// Deliberately different from the counting-map implementation under test.
fn brute_common(a: &[String], b: &[String]) -> u64 {
    let mut pool: Vec<&String> = b.iter().collect();
    let mut n = 0;
    for line in a {
        if let Some(pos) = pool.iter().position(|x| *x == line) {
            pool.remove(pos);
            n += 1;
        }
    }
    n
}

fn brute_compare(cand: &DiffModel, gold: &DiffModel) -> (u64, u64, u64) {
    let mut files = 0;
    let mut added = 0;
    let mut removed = 0;
    for (path, c) in &cand.files {
        if let Some(g) = gold.files.get(path) {
            files += 1;
            added += brute_common(&c.added, &g.added);
            removed += brute_common(&c.removed, &g.removed);
        }
    }
    (files, added, removed)
}

fn random_model(rng: &mut ChaCha8Rng) -> DiffModel {
    let paths = ["a.java", "b.java", "pom.xml", "c/d.yml", "e.java"];
    let lines = ["alpha", "beta", "gamma", "delta", "alpha", "epsilon"];
    let mut model = DiffModel::default();
    let nfiles = rng.random_range(0..4usize);
    for _ in 0..nfiles {
        let path = paths[rng.random_range(0..paths.len())].to_string();
        let mut fd = model
            .files
            .remove(&path)
            .unwrap_or_else(|| FileDiff { path: path.clone(), ..Default::default() });
        for _ in 0..rng.random_range(0..6usize) {
            fd.added.push(lines[rng.random_range(0..lines.len())].to_string());
        }
        for _ in 0..rng.random_range(0..6usize) {
            fd.removed.push(lines[rng.random_range(0..lines.len())].to_string());
        }
        model.files.insert(path, fd);
    }
    model
}

fn render_model(model: &DiffModel) -> String {
    let mut out = String::new();
    for (path, fd) in &model.files {
        let n_old = fd.removed.len() + 1;
        let n_new = fd.added.len() + 1;
        out.push_str(&format!("--- a/{path}\n+++ b/{path}\n@@ -1,{n_old} +1,{n_new} @@\n context\n"));
        for l in &fd.removed {
            out.push_str(&format!("-{l}\n"));
        }
        for l in &fd.added {
            out.push_str(&format!("+{l}\n"));
        }
    }
    out
}

#[test]
fn compare_matches_brute_force_on_200_random_diffs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1adb);
    let mut mismatches = 0;
    for _ in 0..200 {
        let cand = random_model(&mut rng);
        let gold = random_model(&mut rng);
        let report = eval::compare(&cand, &gold);
        let (files, added, removed) = brute_compare(&cand, &gold);
        if report.common_files != files || report.common_added != added || report.common_removed != removed {
            mismatches += 1;
        }
        // parser round-trip: rendering the model and re-parsing reproduces it
        let reparsed = eval::parse_unified_diff(&render_model(&cand)).unwrap();
        assert_eq!(reparsed, cand);
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn fixture_diffs_reproduce_known_row() {
    let dir = common::fixtures_dir().join("diffs");
    let cand = eval::parse_unified_diff(&fs::read_to_string(dir.join("candidate_3_2_to_3_3.diff")).unwrap()).unwrap();
    let gold = eval::parse_unified_diff(&fs::read_to_string(dir.join("gold_3_2_to_3_3.diff")).unwrap()).unwrap();
    let r = eval::compare(&cand, &gold);
    assert_eq!(
        (r.files_candidate, r.files_gold, r.common_files),
        (3, 9, 3)
    );
    assert_eq!((r.added_candidate, r.removed_candidate), (4, 7));
    assert_eq!((r.added_gold, r.removed_gold), (50, 37));
    assert_eq!((r.common_added, r.common_removed), (2, 5));
    let precision = r.precision_removed.unwrap();
    assert!((precision - 0.714).abs() < 0.001, "removed precision {precision}");
}

#[test]
fn self_comparison_is_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let m = random_model(&mut rng);
        let r = eval::compare(&m, &m);
        if r.added_candidate > 0 {
            assert_eq!(r.precision_added, Some(1.0));
            assert_eq!(r.recall_added, Some(1.0));
        }
        if r.removed_candidate > 0 {
            assert_eq!(r.precision_removed, Some(1.0));
            assert_eq!(r.recall_removed, Some(1.0));
        }
        assert_eq!(r.common_files, r.files_candidate);
    }
}

#[test]
fn non_matching_line_never_raises_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let mut cand = random_model(&mut rng);
        let gold = random_model(&mut rng);
        let before = eval::compare(&cand, &gold);
        let path = cand.files.keys().next().cloned();
        let Some(path) = path else { continue };
        cand.files.get_mut(&path).unwrap().added.push("definitely-not-in-gold-xyzzy".to_string());
        let after = eval::compare(&cand, &gold);
        match (before.precision_added, after.precision_added) {
            (Some(b), Some(a)) => assert!(a <= b + 1e-12),
            (None, Some(a)) => assert!(a <= 1.0),
            _ => {}
        }
    }
}
