use std::collections::BTreeSet;

use drawsim_core::conceptmap::{
    feedback_complete, generate_map, map_violations, render_map, validate_map, ConceptMap, Layer,
};
use drawsim_core::corpus::{build_corpus, consistency_rows, density_samples, ArtifactStore, BuildOptions};
use drawsim_core::docs::{from_document, to_document};
use drawsim_core::metrics::{consistency_report, edge_density, ConsistencyScores, EdgeConfig};
use drawsim_core::profiles::{build_profile_ladder, CapabilityProfile, PerformanceLevel};
use drawsim_core::providers::Providers;
use drawsim_core::standards::{bundled_standards, decompose, MAX_EVIDENCE, MIN_EVIDENCE};
use drawsim_core::synthesis::{
    generate_baseline, generate_unified, generate_unprofiled, render_drawing, verify_alignment, BaselineStrategy,
};

#[test]
fn every_bundled_standard_flows_through_every_level() {
    let p = Providers::offline();
    let gen = p.generation.as_ref();
    let dir = tempfile::tempdir().unwrap();
    let store = ArtifactStore::new(dir.path());
    let blobs = store.blobs();
    for pe in bundled_standards() {
        let topic = decompose(&pe, gen, 0).unwrap();
        let n = topic.evidence.len();
        assert!((MIN_EVIDENCE..=MAX_EVIDENCE).contains(&n), "{}: {n} statements", pe.code);
        let ladder = build_profile_ladder(&topic, gen, 0).unwrap();
        assert!(ladder.chain_violations().is_empty());
        let mut misconceptions = Vec::new();
        for level in PerformanceLevel::ALL {
            let profile = ladder.get(level).unwrap();
            let all: BTreeSet<&String> = profile.can_do.iter().chain(&profile.cannot_yet_do).collect();
            assert_eq!(all.len(), n, "{} partition", profile.id());
            let out = generate_unified(&topic, pe.grade, profile, gen, 0, &p.style).unwrap();
            assert!(verify_alignment(&out, profile).unwrap().pass, "{}", profile.id());
            let map = generate_map(&topic, profile, &out.prompt, gen, 0).unwrap();
            assert!(map_violations(&map, profile).is_empty(), "{}", profile.id());
            assert!(feedback_complete(&map, level), "{}", profile.id());
            if level == PerformanceLevel::Advanced {
                assert_eq!(map.count(Layer::Feedback), 0, "{}", profile.id());
            }
            misconceptions.push(map.misconception_count());
            assert!(render_map(&map).unwrap().starts_with("digraph"));
            let (image, bytes) = render_drawing(&out.prompt.composed, p.image.as_ref(), 0, blobs).unwrap();
            assert_eq!(blobs.get(&image.sha256).unwrap(), bytes);
        }
        assert!(
            misconceptions.windows(2).all(|w| w[0] >= w[1]),
            "{}: misconceptions rise along the ladder {misconceptions:?}",
            pe.code
        );
    }
}

#[test]
fn baselines_drift_where_unified_does_not() {
    let p = Providers::offline();
    let gen = p.generation.as_ref();
    let mut independent_failures = 0;
    let mut cells = 0;
    for pe in bundled_standards() {
        let topic = decompose(&pe, gen, 0).unwrap();
        let ladder = build_profile_ladder(&topic, gen, 0).unwrap();
        for level in PerformanceLevel::ALL {
            let profile = ladder.get(level).unwrap();
            cells += 1;
            let unified = generate_unified(&topic, pe.grade, profile, gen, 3, &p.style).unwrap();
            assert!(verify_alignment(&unified, profile).unwrap().pass);
            let seq = generate_baseline(BaselineStrategy::Sequential, &topic, pe.grade, profile, gen, 3, &p.style).unwrap();
            assert_eq!(seq.profile_ref, profile.id());
            let ind = generate_baseline(BaselineStrategy::Independent, &topic, pe.grade, profile, gen, 3, &p.style).unwrap();
            if !verify_alignment(&ind, profile).is_ok_and(|r| r.pass) {
                independent_failures += 1;
            }
        }
    }
    assert!(
        independent_failures * 2 > cells,
        "independent prompts should miss the profile in most cells, missed {independent_failures}/{cells}"
    );
}

#[test]
fn unprofiled_output_ignores_the_level() {
    let p = Providers::offline();
    let gen = p.generation.as_ref();
    let pe = bundled_standards().into_iter().find(|pe| pe.code == "MS-ESS2-4").unwrap();
    let topic = decompose(&pe, gen, 0).unwrap();
    let a = generate_unprofiled(&topic, pe.grade, PerformanceLevel::Emergent, gen, 9, &p.style).unwrap();
    let b = generate_unprofiled(&topic, pe.grade, PerformanceLevel::Advanced, gen, 9, &p.style).unwrap();
    assert_eq!(a.prompt.composed, b.prompt.composed);
    assert_eq!(a.profile_ref, "MS-ESS2-4/L1/unprofiled");
}

#[test]
fn documents_round_trip_and_reject_other_kinds() {
    let p = Providers::offline();
    let gen = p.generation.as_ref();
    let pe = bundled_standards().into_iter().find(|pe| pe.code == "5-PS2-1").unwrap();
    let topic = decompose(&pe, gen, 0).unwrap();
    let ladder = build_profile_ladder(&topic, gen, 0).unwrap();
    let profile = ladder.get(PerformanceLevel::Developing).unwrap();
    let out = generate_unified(&topic, pe.grade, profile, gen, 0, &p.style).unwrap();
    let map = generate_map(&topic, profile, &out.prompt, gen, 0).unwrap();

    let text = to_document("concept_map", &map);
    let back: ConceptMap = from_document("concept_map", &text, "map.json").unwrap();
    assert_eq!(back, map);
    assert!(validate_map(&back).pass());
    assert!(from_document::<ConceptMap>("capability_profile", &text, "map.json").is_err());
    let text = to_document("capability_profile", profile);
    let back: CapabilityProfile = from_document("capability_profile", &text, "p.json").unwrap();
    assert_eq!(&back, profile);
}

#[test]
fn corpus_metrics_are_reproducible_and_consistent() {
    let p = Providers::offline();
    let pe = bundled_standards().into_iter().find(|pe| pe.code == "HS-ESS1-4").unwrap();
    let topic = decompose(&pe, p.generation.as_ref(), 0).unwrap();
    let opts = BuildOptions {
        exemplars_per_cell: 1,
        concurrency: 2,
        ..BuildOptions::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let summary = build_corpus(dir.path(), std::slice::from_ref(&topic), &p, &opts).unwrap();
    let store = ArtifactStore::new(dir.path());
    let entries = &summary.manifest.artifacts;

    let rows = consistency_rows::<f64>(&store, entries, p.embedding.as_ref()).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let s = r.scores;
        for v in [s.text_draw, s.cmap_draw, s.text_cmap] {
            assert!((-1.0..=1.0).contains(&v));
        }
        assert!(s.identity_holds());
    }
    let report = consistency_report(&rows).unwrap();
    assert_eq!(report.overall.n, 4);
    assert_eq!(report.by_level.len(), 4);
    let mean_td = rows.iter().map(|r| r.scores.text_draw).sum::<f64>() / 4.0;
    assert!((report.overall.means.text_draw - mean_td).abs() < 1e-12);

    // rebuilding into a fresh root reproduces densities bit for bit
    let cfg = EdgeConfig::default();
    let first = density_samples::<f64>(&store, entries, &cfg).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let again = build_corpus(dir2.path(), std::slice::from_ref(&topic), &p, &opts).unwrap();
    let second = density_samples::<f64>(&ArtifactStore::new(dir2.path()), &again.manifest.artifacts, &cfg).unwrap();
    assert_eq!(first, second);

    // the f32 path agrees with f64 to single precision
    let a = store.load(&entries[0].id).unwrap();
    let bytes = store.image(&a).unwrap();
    let d64 = edge_density::<f64>(&bytes, &cfg).unwrap();
    let d32 = edge_density::<f32>(&bytes, &EdgeConfig::default()).unwrap();
    assert_eq!(d64.edge_pixels, d32.edge_pixels);
    assert!((d64.edge_density as f32 - d32.edge_density).abs() < 1e-6);
    let s32 = ConsistencyScores::new(0.356_f32, 0.606, 0.273);
    assert!(s32.identity_holds());
}
