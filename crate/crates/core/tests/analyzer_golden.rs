use commfuse_core::analyzer::{analyze, render_graph};

fn normalize(s: &str) -> Vec<String> {
    s.lines().map(|l| l.trim_end().to_string()).collect()
}

#[test]
fn moe_listing_matches_golden_report() {
    let src = include_str!("fixtures/moe_host.cu");
    let golden = include_str!("fixtures/moe_host.graph.txt");
    let report = render_graph(&analyze(src).unwrap());
    let (got, want) = (normalize(&report), normalize(golden));
    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
        assert_eq!(g, w, "line {}", i + 1);
    }
    assert_eq!(got.len(), want.len(), "{report}");
}

#[test]
fn reanalysis_line_numbers_hit_name_tokens() {
    let src = include_str!("fixtures/moe_host.cu");
    let lines: Vec<&str> = src.lines().collect();
    let graph = analyze(src).unwrap();
    for step in &graph.execution_order {
        assert!(step.line >= 1 && step.line <= lines.len());
    }
}
