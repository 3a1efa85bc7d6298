use std::path::Path;

use proptest::prelude::*;

use commfuse_core::agents::{assemble_context, extract_hardware_context, ArchTable, HardwareContext, HarnessProfile};
use commfuse_core::analyzer::{analyze, scan_source};
use commfuse_core::blocks::{fixup_markers, frozen_skeleton, is_marker_line};
use commfuse_core::cascade::{score_from_latency, CascadeResult, Level};
use commfuse_core::directive::{conservative_directive, Backend, Issuer};
use commfuse_core::evolve::{choose_phase, parse_offspring, Phase};
use commfuse_core::program::Topology;
use commfuse_core::store::{Candidate, Novelty, Store, LOG_FILE};

const KB: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../knowledge");

#[derive(Debug, Clone)]
enum Stmt {
    Collective {
        op: &'static str,
        send: usize,
        recv: usize,
        split: bool,
    },
    Launch {
        kernel: usize,
        buf: usize,
    },
    Sync,
}

#[derive(Debug, Clone)]
struct HostProgram {
    allocators: Vec<&'static str>,
    body: Vec<Stmt>,
}

impl HostProgram {
    fn render(&self) -> String {
        let mut s = String::from("void host(ncclComm_t comm, cudaStream_t st) {\n");
        for (i, _) in self.allocators.iter().enumerate() {
            s += &format!("  float *b{i};\n");
        }
        for (i, a) in self.allocators.iter().enumerate() {
            s += &format!("  {a}(&b{i}, bytes);\n");
        }
        for st in &self.body {
            match st {
                Stmt::Collective { op, send, recv, split } => {
                    let sep = if *split { ",\n      " } else { ", " };
                    s += &format!("  {op}(b{send}{sep}b{recv}, n, ncclFloat, comm, st);\n");
                }
                Stmt::Launch { kernel, buf } => s += &format!("  k{kernel}<<<g, t, 0, st>>>(b{buf}, n);\n"),
                Stmt::Sync => s += "  cudaStreamSynchronize(st);\n",
            }
        }
        s + "}\n"
    }

    fn collectives(&self) -> usize {
        self.body
            .iter()
            .filter(|s| matches!(s, Stmt::Collective { .. }))
            .count()
    }
}

fn host_program() -> impl Strategy<Value = HostProgram> {
    proptest::collection::vec(
        prop::sample::select(vec!["cudaMalloc", "ncclMemAlloc", "cudaMallocManaged"]),
        2..5,
    )
    .prop_flat_map(|allocators| {
        let nb = allocators.len();
        let stmt = prop_oneof![
            (
                prop::sample::select(vec!["ncclAllReduce", "ncclAlltoAll", "ncclAllGather"]),
                0..nb,
                0..nb,
                any::<bool>()
            )
                .prop_map(|(op, send, recv, split)| Stmt::Collective { op, send, recv, split }),
            (0..3usize, 0..nb).prop_map(|(kernel, buf)| Stmt::Launch { kernel, buf }),
            Just(Stmt::Sync),
        ];
        (Just(allocators), proptest::collection::vec(stmt, 0..10))
    })
    .prop_map(|(allocators, body)| HostProgram { allocators, body })
}

fn record(id: &str, embedding: Vec<f64>) -> Candidate {
    Candidate {
        id: id.into(),
        run_id: "p".into(),
        source: String::new(),
        directive: conservative_directive(Backend::Gin),
        parent_id: None,
        island: 1,
        generation: 0,
        mutation_form: None,
        result: CascadeResult::failed(Level::L1Failed, "x"),
        feedback: None,
        embedding,
        strategy: "other".into(),
        created_at_ms: 1,
        seq: 0,
    }
}

fn marked_line() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => "[a-z]{1,5}\\(\\);".prop_map(|s| format!("  {s}")),
        1 => Just("  // EVOLVE-BLOCK-START".to_string()),
        1 => Just("  // EVOLVE-BLOCK-END".to_string()),
    ]
}

const PARENT: &str = "void f() {\n  a();\n  // EVOLVE-BLOCK-START\n  b();\n  // EVOLVE-BLOCK-END\n  c();\n  // EVOLVE-BLOCK-START\n  d();\n  // EVOLVE-BLOCK-END\n}\n";

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn analyzer_lines_and_migration_flags(p in host_program()) {
        let src = p.render();
        let lines: Vec<&str> = src.lines().collect();
        for c in scan_source(&src).unwrap() {
            prop_assert!(lines[c.start_line - 1].contains(&c.name), "{} not on line {}", c.name, c.start_line);
        }
        let g = analyze(&src).unwrap();
        prop_assert_eq!(g.nodes.len(), p.collectives());
        for n in &g.nodes {
            for b in n.send.iter().chain(&n.recv) {
                let i: usize = b.name[1..].parse().unwrap();
                prop_assert_eq!(b.needs_migration, p.allocators[i] == "cudaMalloc", "buffer {}", b.name);
            }
        }
    }

    #[test]
    fn unknown_hardware_is_never_filled_in(flags in proptest::collection::vec("-arch=sm_[0-9]{2}a?|-O[0-3]|-lineinfo", 0..4), ranks in 1u32..16) {
        let profile = HarnessProfile {
            compiler_flags: flags,
            topology: Topology { ranks, hosts: Vec::new() },
            ..Default::default()
        };
        let x = extract_hardware_context(&profile, &ArchTable::default()).unwrap();
        let blank = HardwareContext::default();
        prop_assert_eq!(&x.context.gpu_model, &blank.gpu_model);
        prop_assert_eq!(x.context.sm_count, None);
        prop_assert_eq!(&x.context.hbm_bandwidth, &None);
        prop_assert_eq!(&x.context.shared_mem_capacity, &None);
        prop_assert!(!x.warnings.is_empty());
    }

    #[test]
    fn score_is_strictly_decreasing(a in 0.0f64..1e6, b in 0.0f64..1e6) {
        prop_assume!(a < b);
        prop_assert!(score_from_latency(a).unwrap() > score_from_latency(b).unwrap());
    }

    #[test]
    fn threshold_one_only_rejects_duplicates(
        vs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 8), 1..20),
        q in proptest::collection::vec(-1.0f64..1.0, 8),
        pick in any::<prop::sample::Index>(),
    ) {
        let store = Store::in_memory();
        for (i, v) in vs.iter().enumerate() {
            store.insert(record(&format!("r{i}"), v.clone())).unwrap();
        }
        let snap = store.snapshot();
        let dup = &vs[pick.index(vs.len())];
        let verdict = snap.novelty_check(dup, 1.0).unwrap();
        prop_assert!(matches!(verdict, Novelty::Reject { .. }), "duplicate accepted");
        if !vs.contains(&q) {
            prop_assert_eq!(snap.novelty_check(&q, 1.0).unwrap(), Novelty::Accept);
        }
    }

    #[test]
    fn store_log_only_grows(n in 1usize..12) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let log = dir.path().join(LOG_FILE);
        let mut prev = Vec::new();
        for i in 0..n {
            store.insert(record(&format!("r{i}"), vec![i as f64 + 1.0, 1.0])).unwrap();
            let now = std::fs::read(&log).unwrap();
            prop_assert!(now.len() > prev.len() && now.starts_with(&prev));
            prev = now;
        }
        let reopened = Store::open(dir.path()).unwrap();
        prop_assert_eq!(reopened.len(), n);
        for (i, r) in reopened.snapshot().records().iter().enumerate() {
            prop_assert_eq!(r.seq, i as u64);
        }
    }

    #[test]
    fn explore_phase_length(total in 1u32..200, alpha in 0.0f64..=1.0) {
        let explore = (1..=total).filter(|g| choose_phase(*g, total, alpha) == Phase::Explore).count();
        // Same 1e-9 slack as choose_phase.
        prop_assert_eq!(explore as u32, (alpha * total as f64 + 1e-9).floor() as u32);
        let first_exploit = (1..=total).find(|g| choose_phase(*g, total, alpha) == Phase::Exploit);
        if let Some(f) = first_exploit {
            prop_assert!((f..=total).all(|g| choose_phase(g, total, alpha) == Phase::Exploit));
        }
    }

    #[test]
    fn marker_repair_balances(lines in proptest::collection::vec(marked_line(), 0..20)) {
        let src: String = lines.iter().map(|l| format!("{l}\n")).collect();
        let fixed = fixup_markers(&src);
        prop_assert!(frozen_skeleton(&fixed).is_ok());
        prop_assert_eq!(fixup_markers(&fixed), fixed.clone());
        let plain = |s: &str| s.lines().filter(|l| !is_marker_line(l)).map(String::from).collect::<Vec<_>>();
        prop_assert_eq!(plain(&fixed), plain(&src));
    }

    #[test]
    fn accepted_offspring_keep_the_skeleton(edits in proptest::collection::vec((0usize..10, marked_line()), 0..4)) {
        let mut lines: Vec<String> = PARENT.lines().map(String::from).collect();
        for (at, l) in edits {
            let at = at.min(lines.len() - 1);
            lines[at] = l;
        }
        let program = lines.join("\n") + "\n";
        let response = format!("whole program\n```cuda\n{program}```\n");
        let d = conservative_directive(Backend::Gin);
        if let Ok((child, _)) = parse_offspring(PARENT, &d, &response) {
            prop_assert_eq!(frozen_skeleton(&child).unwrap(), frozen_skeleton(PARENT).unwrap());
        }
    }
}

#[test]
fn knowledge_stays_within_its_backend() {
    for (b, other) in [(Backend::Gin, Backend::Lsa), (Backend::Lsa, Backend::Gin)] {
        let ctx = assemble_context(b, HardwareContext::default(), Path::new(KB)).unwrap();
        assert_eq!(ctx.backend, b);
        assert!(!ctx.api_docs.is_empty());
        for d in ctx.api_docs.iter().chain(&ctx.headers) {
            assert_ne!(d.backend, Some(other), "{}", d.name);
            assert!(!d.name.starts_with(&format!("{}/", other.tag())), "{}", d.name);
        }
        let foreign = std::fs::read_to_string(Path::new(KB).join(other.tag()).join("reference_kernel.cu")).unwrap();
        assert_ne!(ctx.reference_kernel, foreign);
    }
}

#[test]
fn conservative_directive_uses_cta_issuer() {
    for b in Backend::ALL {
        assert_eq!(conservative_directive(b).issuer, Issuer::CoopCta);
    }
}
