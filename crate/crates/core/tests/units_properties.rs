//! Unit extraction checked against the hand-counted fixture manifest and
//! property-tested over generated class/method skeletons.

mod common;

use std::fs;

use ladu_core::repo::{line_count, slice_lines};
use ladu_core::syntax_units::{extract_units, UnitKind, UnitSpan};
use proptest::prelude::*;

fn flatten(unit: &UnitSpan, chain: &str, out: &mut Vec<(String, String, usize, usize)>) {
    let here = if chain.is_empty() {
        unit.name.clone()
    } else {
        format!("{chain}::{}", unit.name)
    };
    out.push((unit.kind.token().to_string(), here.clone(), unit.start_line, unit.end_line));
    for c in &unit.children {
        flatten(c, if unit.kind == UnitKind::File { "" } else { &here }, out);
    }
}

/// Oracle: manual line counts recorded in the fixture manifest.
#[test]
fn fixture_spans_match_manifest() {
    let fixtures = common::fixtures_dir();
    let manifest = fs::read_to_string(fixtures.join("units_manifest.tsv")).unwrap();
    let mut expected: std::collections::BTreeMap<String, Vec<(String, String, usize, usize)>> =
        Default::default();
    for line in manifest.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        expected.entry(f[0].to_string()).or_default().push((
            f[1].to_string(),
            f[2].to_string(),
            f[3].parse().unwrap(),
            f[4].parse().unwrap(),
        ));
    }
    for (path, rows) in expected {
        let src = fs::read_to_string(fixtures.join("demo_repo").join(&path)).unwrap();
        let root = extract_units(&src, &path).unwrap();
        let mut got = Vec::new();
        flatten(&root, "", &mut got);
        assert_eq!(got, rows, "span mismatch in {path}");
    }
}

// ---------------------------------------------------------------------------
// Skeleton generator

#[derive(Debug, Clone)]
enum Member {
    Method { name: String, tricky: bool },
    Field,
    StaticInit,
    Nested(Box<TypeSkel>),
}

#[derive(Debug, Clone)]
struct TypeSkel {
    name: String,
    members: Vec<Member>,
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,5}".prop_map(|s| format!("m{s}"))
}

fn type_name() -> impl Strategy<Value = String> {
    "[A-Z][a-zA-Z0-9]{0,5}".prop_map(|s| format!("T{s}"))
}

fn member(depth: u32) -> BoxedStrategy<Member> {
    let method = (ident(), any::<bool>()).prop_map(|(name, tricky)| Member::Method { name, tricky });
    if depth == 0 {
        prop_oneof![
            4 => method,
            1 => Just(Member::Field),
            1 => Just(Member::StaticInit),
        ]
        .boxed()
    } else {
        prop_oneof![
            4 => method,
            1 => Just(Member::Field),
            1 => Just(Member::StaticInit),
            2 => type_skel(depth - 1).prop_map(|t| Member::Nested(Box::new(t))),
        ]
        .boxed()
    }
}

fn type_skel(depth: u32) -> BoxedStrategy<TypeSkel> {
    (type_name(), prop::collection::vec(member(depth), 0..4))
        .prop_map(|(name, members)| TypeSkel { name, members })
        .boxed()
}

fn render_member(m: &Member, indent: usize, out: &mut String) {
    let pad = "    ".repeat(indent);
    match m {
        Member::Method { name, tricky } => {
            out.push_str(&format!("{pad}void {name}(int a) {{\n"));
            if *tricky {
                out.push_str(&format!("{pad}    // braces in comment {{{{\n"));
                out.push_str(&format!("{pad}    String s = \"}}}}{{\";\n"));
                out.push_str(&format!("{pad}    char c = '{{';\n"));
            }
            out.push_str(&format!("{pad}    int x = a + 1;\n"));
            out.push_str(&format!("{pad}}}\n"));
        }
        Member::Field => {
            out.push_str(&format!("{pad}int[] data = {{1, 2, 3}};\n"));
        }
        Member::StaticInit => {
            out.push_str(&format!("{pad}static {{\n{pad}    int y = 0;\n{pad}}}\n"));
        }
        Member::Nested(t) => render_type(t, indent, out),
    }
}

fn render_type(t: &TypeSkel, indent: usize, out: &mut String) {
    let pad = "    ".repeat(indent);
    out.push_str(&format!("{pad}class {} {{\n", t.name));
    for m in &t.members {
        render_member(m, indent + 1, out);
    }
    out.push_str(&format!("{pad}}}\n"));
}

fn expected_shape(t: &TypeSkel) -> (String, Vec<(String, UnitKind)>) {
    let mut kids = Vec::new();
    for m in &t.members {
        match m {
            Member::Method { name, .. } => kids.push((name.clone(), UnitKind::Method)),
            Member::Nested(n) => kids.push((n.name.clone(), UnitKind::Class)),
            Member::Field | Member::StaticInit => {}
        }
    }
    (t.name.clone(), kids)
}

fn check_nesting(unit: &UnitSpan) -> Result<(), TestCaseError> {
    let mut prev_end = unit.start_line.saturating_sub(1);
    for c in &unit.children {
        prop_assert!(
            unit.start_line <= c.start_line && c.start_line <= c.end_line && c.end_line <= unit.end_line,
            "child {} [{},{}] escapes parent {} [{},{}]",
            c.name, c.start_line, c.end_line, unit.name, unit.start_line, unit.end_line
        );
        prop_assert!(c.start_line > prev_end, "sibling overlap at {}", c.name);
        prev_end = c.end_line;
        check_nesting(c)?;
    }
    Ok(())
}

fn check_names(unit: &UnitSpan, skel: &TypeSkel) -> Result<(), TestCaseError> {
    let (name, kids) = expected_shape(skel);
    prop_assert_eq!(&unit.name, &name);
    prop_assert_eq!(unit.children.len(), kids.len());
    let mut nested = skel.members.iter().filter_map(|m| match m {
        Member::Nested(n) => Some(n.as_ref()),
        _ => None,
    });
    for (child, (kname, kkind)) in unit.children.iter().zip(&kids) {
        prop_assert_eq!(&child.name, kname);
        prop_assert_eq!(child.kind, *kkind);
        if *kkind == UnitKind::Class {
            check_names(child, nested.next().unwrap())?;
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    /// Nesting, disjointness, shape fidelity and determinism over generated
    /// skeletons.
    #[test]
    fn generated_skeletons_extract_cleanly(types in prop::collection::vec(type_skel(2), 1..3)) {
        let mut src = String::from("package gen;\n\n");
        for t in &types {
            render_type(t, 0, &mut src);
        }
        let root = extract_units(&src, "Gen.java").unwrap();
        prop_assert_eq!(root.kind, UnitKind::File);
        prop_assert_eq!(root.start_line, 1);
        prop_assert_eq!(root.end_line, line_count(&src));
        check_nesting(&root)?;
        prop_assert_eq!(root.children.len(), types.len());
        for (child, skel) in root.children.iter().zip(&types) {
            check_names(child, skel)?;
        }
        // determinism
        prop_assert_eq!(&root, &extract_units(&src, "Gen.java").unwrap());
    }

    /// Spans partition the file's lines: top-level children plus gaps
    /// reconstruct the file byte-for-byte.
    #[test]
    fn spans_cover_file_bytes(types in prop::collection::vec(type_skel(1), 1..3)) {
        let mut src = String::from("package gen;\n\n");
        for t in &types {
            render_type(t, 0, &mut src);
        }
        let root = extract_units(&src, "Gen.java").unwrap();
        let mut rebuilt = String::new();
        let mut cursor = 1;
        for c in &root.children {
            if c.start_line > cursor {
                rebuilt.push_str(slice_lines(&src, cursor, c.start_line - 1));
            }
            rebuilt.push_str(slice_lines(&src, c.start_line, c.end_line));
            cursor = c.end_line + 1;
        }
        if cursor <= line_count(&src) {
            rebuilt.push_str(slice_lines(&src, cursor, line_count(&src)));
        }
        prop_assert_eq!(rebuilt, src);
    }
}
