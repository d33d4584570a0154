use cta_core::adaptor::{forward, FrozenBackbone, LowRankAdaptor};
use cta_core::container::Container;
use cta_core::harness::{
    load_references, precompute_references, source_model, write_references, ExperimentConfig,
};
use cta_core::numerics::{DenseMatrix, DenseVector, SeededRng};
use cta_core::simulator::trace::{read_trace, TraceWriter};
use cta_core::simulator::{
    evaluate_accuracy, generate_source_model, head_predict, preset_schedule, sample_scene,
    DomainSchedule, DomainTransform, Preset, SceneConfig, ScheduleMode, Segment, SourceConfig,
};
use cta_core::stats::{compute_stats, kl_diag_gaussian};
use cta_core::Vector;

fn default_model() -> cta_core::simulator::SourceModel {
    source_model(&ExperimentConfig::default()).unwrap()
}

fn pure_shift(s: &Vector) -> DomainTransform {
    DomainTransform::new(s.clone(), 1.0, DenseMatrix::identity(s.len()).unwrap(), 0.0).unwrap()
}

#[test]
fn pure_shift_moves_class_means() {
    let m = default_model();
    let d = m.dim();
    let mut rng = SeededRng::new(5);
    let s = DenseVector::from_fn(d, |i| if i % 2 == 0 { 1.5 } else { -0.75 }).unwrap();
    let t = pure_shift(&s);
    let n = 10_000;
    let se = (m.class_var() / n as f64).sqrt();
    for k in [0, m.num_classes() - 1] {
        let feats: Vec<Vector> = (0..n)
            .map(|_| t.apply(&m.sample_clean(k, &mut rng), &mut rng).unwrap())
            .collect();
        let mean = DenseVector::mean_of(&feats).unwrap();
        let want = m.prototypes()[k].add(&s).unwrap();
        // Summed squared z-scores follow chi-square with d degrees of freedom.
        let z2: f64 = mean
            .iter()
            .zip(want.iter())
            .map(|(a, b)| ((a - b) / se).powi(2))
            .sum();
        assert!(
            z2 < d as f64 + 4.5 * (2.0 * d as f64).sqrt(),
            "class {k}: z² = {z2}"
        );
        let worst = mean
            .iter()
            .zip(want.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            worst < 4.5 * se,
            "class {k}: worst coordinate off by {worst}, se {se}"
        );
    }
}

#[test]
fn class_imbalance_is_reproduced() {
    let cfg = SourceConfig {
        classes: 2,
        class_freqs: vec![10.0, 1.0],
        ..SourceConfig::default()
    };
    let m = generate_source_model(&mut SeededRng::new(3), &cfg).unwrap();
    let t = DomainTransform::identity(m.dim()).unwrap();
    let mut rng = SeededRng::new(4);
    let mut counts = [0usize; 2];
    while counts.iter().sum::<usize>() < 20_000 {
        for o in sample_scene(&m, &t, &mut rng, &SceneConfig::default())
            .unwrap()
            .objects
        {
            counts[o.true_class] += 1;
        }
    }
    let ratio = counts[0] as f64 / counts[1] as f64;
    assert!((ratio - 10.0).abs() < 1.0, "ratio {ratio}");
}

#[test]
fn clean_stream_is_near_perfect() {
    let m = default_model();
    let t = DomainTransform::identity(m.dim()).unwrap();
    let mut rng = SeededRng::new(9);
    let mut preds = Vec::new();
    for _ in 0..500 {
        for o in sample_scene(&m, &t, &mut rng, &SceneConfig::default())
            .unwrap()
            .objects
        {
            preds.push((head_predict(&o.feature, &m).unwrap(), o.true_class));
        }
    }
    assert!(evaluate_accuracy(&preds) >= 0.95);
}

#[test]
fn two_class_prototypes_are_separated() {
    let cfg = SourceConfig {
        classes: 2,
        dim: 2,
        ..SourceConfig::default()
    };
    for seed in 0..20 {
        let m = generate_source_model(&mut SeededRng::new(seed), &cfg).unwrap();
        let gap = m.prototypes()[0].sub(&m.prototypes()[1]).unwrap().norm();
        assert!(gap >= cfg.separation - 1e-9, "seed {seed}: {gap}");
    }
}

#[test]
fn continuous_schedule_midpoint_and_return() {
    let m = default_model();
    let s = preset_schedule(
        Preset::ShiftContinuousLike,
        &m,
        &SeededRng::new(1),
        Some(100),
        1.0,
    )
    .unwrap();
    assert_eq!(s.mode(), ScheduleMode::Continuous);
    let fog = &s.segments()[1].transform;
    let mid = s.transform_at(50).unwrap();
    for (a, b) in mid.shift().iter().zip(fog.shift().iter()) {
        assert!((a - 0.5 * b).abs() < 1e-12);
    }
    assert!((mid.scale() - (1.0 + fog.scale()) / 2.0).abs() < 1e-12);
    assert!(s.transform_at(s.total_steps() - 1).unwrap().is_identity());
    assert!(s.transform_at(0).unwrap().is_identity());
}

#[test]
fn in_domain_gap_is_small_next_to_shift() {
    let cfg = ExperimentConfig::default();
    let m = source_model(&cfg).unwrap();
    let refs = precompute_references(&cfg, &m).unwrap();
    assert!(refs.d_kl_in > 0.0);
    let sched = preset_schedule(
        Preset::ShiftDiscreteLike,
        &m,
        &SeededRng::new(2),
        Some(10),
        1.0,
    )
    .unwrap();
    let mut rng = SeededRng::new(6);
    for seg in &sched.segments()[..sched.segments().len() - 1] {
        let images: Vec<Vector> = (0..1000)
            .map(|_| {
                sample_scene(&m, &seg.transform, &mut rng, &cfg.scene)
                    .unwrap()
                    .image_feature
            })
            .collect();
        let kl = kl_diag_gaussian(&compute_stats(&images).unwrap(), &refs.image).unwrap();
        assert!(
            kl > 10.0 * refs.d_kl_in,
            "{}: {kl} vs {}",
            seg.label,
            refs.d_kl_in
        );
    }
}

#[test]
fn reference_file_is_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        reference_samples: 300,
        ..ExperimentConfig::default()
    };
    let a = dir.path().join("a.ctastats");
    let b = dir.path().join("b.ctastats");
    write_references(&cfg, &a).unwrap();
    write_references(&cfg, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = Container::load(&a).unwrap();
    assert_eq!((c.dim, c.classes), (cfg.source.dim, cfg.source.classes));
    let mut tags = vec!["image".to_string()];
    tags.extend((0..c.classes).map(|k| format!("class.{k}")));
    for tag in tags {
        assert_eq!(
            c.parse_record::<f64>(&format!("{tag}.mean")).unwrap().len(),
            c.dim
        );
        assert_eq!(
            c.parse_record::<f64>(&format!("{tag}.var")).unwrap().len(),
            c.dim
        );
        assert_eq!(
            c.parse_record::<u64>(&format!("{tag}.count"))
                .unwrap()
                .len(),
            1
        );
    }
    assert!(c.parse_record::<f64>("d_kl_in").unwrap()[0] > 0.0);
    assert_eq!(c.get_attr("model_seed"), Some("0"));

    let loaded = load_references(&cfg, &a).unwrap();
    assert_eq!(
        loaded,
        precompute_references(&cfg, &source_model(&cfg).unwrap()).unwrap()
    );
    let mut other = cfg.clone();
    other.model_seed = 1;
    assert!(load_references(&other, &a).is_err());
}

#[test]
fn low_rank_branch_can_undo_a_mean_shift() {
    // Constructed by hand: one down column that is positive on every shifted
    // feature, and an up row that subtracts the shift scaled by its mean
    // activation.
    let m = default_model();
    let d = m.dim();
    let r = 32;
    let h = d / r;
    let s = DenseVector::from_fn(d, |i| if i < d / 2 { 2.0 } else { -1.0 }).unwrap();
    let t = pure_shift(&s);
    let mut rng = SeededRng::new(8);
    let feats: Vec<Vector> = (0..10_000)
        .map(|_| {
            let k = rng.below(m.num_classes());
            t.apply(&m.sample_clean(k, &mut rng), &mut rng).unwrap()
        })
        .collect();
    let shifted_mean = DenseVector::mean_of(&feats).unwrap();
    let source_mean = shifted_mean.sub(&s).unwrap();

    let v = DenseVector::filled(d, 1.0 / (d as f64).sqrt());
    assert!(feats.iter().all(|f| f.dot(&v).unwrap() > 0.0));
    let gain = v.dot(&shifted_mean).unwrap();
    let down = DenseMatrix::from_fn(d, h, |i, j| if j == 0 { v[i] } else { 0.0 }).unwrap();
    let up = DenseMatrix::from_fn(h, d, |i, j| if i == 0 { -s[j] / gain } else { 0.0 }).unwrap();
    let adaptor = LowRankAdaptor::from_parts(down, up, r).unwrap();

    let bb = FrozenBackbone::identity(d).unwrap();
    let outs: Vec<Vector> = feats
        .iter()
        .map(|f| forward(&bb, &adaptor, f).unwrap().output)
        .collect();
    let out_mean = DenseVector::mean_of(&outs).unwrap();
    let err = out_mean.sub(&source_mean).unwrap().norm();
    assert!(err < 1e-9 * source_mean.norm(), "residual {err}");
    assert!(shifted_mean.sub(&source_mean).unwrap().norm() > 1.0);
}

#[test]
fn trace_round_trip() {
    let m = default_model();
    let sched = DomainSchedule::new(
        ScheduleMode::Discrete,
        vec![Segment {
            label: "clear".into(),
            transform: DomainTransform::identity(m.dim()).unwrap(),
            duration: 3,
        }],
    )
    .unwrap();
    let mut rng = SeededRng::new(10);
    let scenes: Vec<_> = (0..3)
        .map(|t| {
            sample_scene(
                &m,
                &sched.transform_at(t).unwrap(),
                &mut rng,
                &SceneConfig::default(),
            )
            .unwrap()
        })
        .collect();
    let mut w = TraceWriter::new(Vec::new(), m.dim()).unwrap();
    for (t, s) in scenes.iter().enumerate() {
        w.write(t as u64, 0, s).unwrap();
    }
    let bytes = w.finish().unwrap();
    let (dim, recs) = read_trace(bytes.as_slice()).unwrap();
    assert_eq!(dim, m.dim());
    assert_eq!(recs.len(), 3);
    for (t, (rec, s)) in recs.iter().zip(&scenes).enumerate() {
        assert_eq!(rec.step, t as u64);
        assert_eq!(&rec.scene, s);
    }
}
