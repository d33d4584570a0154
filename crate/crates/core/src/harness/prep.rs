use std::collections::BTreeMap;
use std::path::Path;

use crate::alignment::assign_and_filter;
use crate::container::{Container, ReferenceStats};
use crate::error::{CtaError, Result};
use crate::harness::ExperimentConfig;
use crate::numerics::SeededRng;
use crate::simulator::{
    build_schedule, generate_source_model, head_predict, preset_schedule, sample_scene,
    DomainSchedule, DomainTransform, SourceModel,
};
use crate::stats::{compute_stats, in_domain_gap, DEFAULT_GAP_PAIRS};
use crate::{References, Vector};

// Fork keys under `model_seed`.
const KEY_SOURCE: u64 = 1;
const KEY_SCENARIO: u64 = 2;
const KEY_REFERENCES: u64 = 3;
const KEY_GAP: u64 = 4;

/// Everything fixed by `model_seed`: the detector, the shift sequence and the
/// source statistics. Shared by every run of a sweep.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub source: SourceModel,
    pub schedule: DomainSchedule,
    pub references: References,
}

impl Benchmark {
    /// Builds the benchmark, loading references from `output.references`
    /// when that file exists.
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let source = source_model(cfg)?;
        let schedule = scenario_schedule(cfg, &source)?;
        let references = match &cfg.output.references {
            Some(path) if path.exists() => load_references(cfg, path)?,
            _ => precompute_references(cfg, &source)?,
        };
        Ok(Self {
            source,
            schedule,
            references,
        })
    }
}

pub fn source_model(cfg: &ExperimentConfig) -> Result<SourceModel> {
    generate_source_model(
        &mut SeededRng::new(cfg.model_seed).fork(KEY_SOURCE),
        &cfg.source,
    )
}

pub fn scenario_schedule(cfg: &ExperimentConfig, source: &SourceModel) -> Result<DomainSchedule> {
    let rng = SeededRng::new(cfg.model_seed).fork(KEY_SCENARIO);
    let s = &cfg.scenario;
    if s.segments.is_empty() {
        preset_schedule(s.preset, source, &rng, s.segment_steps, s.severity)
    } else {
        let steps = s
            .segment_steps
            .unwrap_or_else(|| s.preset.default_segment_steps());
        build_schedule(&s.segments, s.mode, source, &rng, steps, s.severity)
    }
}

/// Source statistics from `reference_samples` clean scenes.
///
/// Class blocks go through the same background filter and argmax assignment
/// as test-time features, so an unshifted stream tracks them without bias.
pub fn precompute_references(cfg: &ExperimentConfig, source: &SourceModel) -> Result<References> {
    let identity = DomainTransform::identity(source.dim())?;
    let mut rng = SeededRng::new(cfg.model_seed).fork(KEY_REFERENCES);
    let mut images = Vec::with_capacity(cfg.reference_samples);
    let mut by_class: BTreeMap<usize, Vec<Vector>> = BTreeMap::new();
    for _ in 0..cfg.reference_samples {
        let scene = sample_scene(source, &identity, &mut rng, &cfg.scene)?;
        let rois = scene
            .objects
            .iter()
            .map(|o| head_predict(&o.feature, source))
            .collect::<Result<Vec<_>>>()?;
        let assignment = assign_and_filter(&rois, cfg.thresholds.bg_threshold)?;
        for (k, idx) in assignment.iter() {
            let list = by_class.entry(k).or_default();
            list.extend(idx.iter().map(|&i| scene.objects[i].feature.clone()));
        }
        images.push(scene.image_feature);
    }
    let image = compute_stats(&images)?;
    let classes = (0..source.num_classes())
        .map(|k| {
            let feats = by_class.get(&k).map(Vec::as_slice).unwrap_or(&[]);
            compute_stats(feats).map_err(|_| {
                CtaError::Infeasible(format!(
                    "class {k} kept only {} reference objects; raise reference_samples",
                    feats.len()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let d_kl_in = in_domain_gap(
        &images,
        &mut SeededRng::new(cfg.model_seed).fork(KEY_GAP),
        DEFAULT_GAP_PAIRS,
    )?;
    Ok(ReferenceStats {
        image,
        classes,
        d_kl_in,
    })
}

fn provenance(cfg: &ExperimentConfig) -> [(&'static str, String); 2] {
    [
        ("model_seed", cfg.model_seed.to_string()),
        ("samples", cfg.reference_samples.to_string()),
    ]
}

pub fn references_to_container(cfg: &ExperimentConfig, refs: &References) -> Container {
    provenance(cfg)
        .into_iter()
        .fold(refs.to_container(), |c, (k, v)| c.attr(k, v))
}

/// Computes references for `cfg` and writes them to `path`.
pub fn write_references(cfg: &ExperimentConfig, path: &Path) -> Result<References> {
    let refs = precompute_references(cfg, &source_model(cfg)?)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CtaError::io(parent, e))?;
    }
    references_to_container(cfg, &refs).save(path)?;
    Ok(refs)
}

/// Loads references, refusing files made for a different source model.
pub fn load_references(cfg: &ExperimentConfig, path: &Path) -> Result<References> {
    let c = Container::load(path)?;
    for (key, want) in provenance(cfg) {
        if let Some(got) = c.get_attr(key) {
            if got != want {
                return Err(CtaError::Config(format!(
                    "{}: {key}={got} but config has {want}",
                    path.display()
                )));
            }
        }
    }
    if c.dim != cfg.source.dim || c.classes != cfg.source.classes {
        return Err(CtaError::Config(format!(
            "{}: d={} k={} but config has d={} k={}",
            path.display(),
            c.dim,
            c.classes,
            cfg.source.dim,
            cfg.source.classes
        )));
    }
    ReferenceStats::from_container(&c)
}
