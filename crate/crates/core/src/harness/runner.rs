use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::adaptor::{
    backward, forward_batch, full_finetune_backward, sgd_step, sgd_step_backbone, FrozenBackbone,
    LowRankAdaptor,
};
use crate::alignment::{
    assign_and_filter, image_loss, object_loss, total_loss_and_grads, ClassBank,
};
use crate::controller::SkipState;
use crate::error::{CtaError, Result};
use crate::harness::{Benchmark, ExperimentConfig, Method};
use crate::numerics::{DenseMatrix, DenseVector, SeededRng};
use crate::simulator::{evaluate_accuracy, head_predict, sample_scene, Scene};
use crate::stats::EmaMeanTracker;
use crate::{Adaptor, Backbone, Vector};

// Fork keys under `seed`.
const KEY_ADAPTOR: u64 = 1;
const KEY_STREAM: u64 = 2;

/// One line of the per-step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub segment_id: usize,
    pub l_img: f64,
    pub l_obj: f64,
    pub l_total: f64,
    pub ratio1: f64,
    #[serde(with = "unbounded")]
    pub ratio2: f64,
    pub fired1: bool,
    pub fired2: bool,
    pub updated: bool,
    /// Accuracy proxy over this step's objects, before any update.
    pub accuracy: f64,
    pub cumulative_backward_count: u64,
}

/// JSON has no infinity; an unbounded ratio is written as `null`.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentSummary {
    pub segment_id: usize,
    pub label: String,
    /// Object-weighted accuracy proxy over the segment.
    pub accuracy: f64,
    pub objects: u64,
    pub forward_steps: u64,
    pub backward_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub segments: Vec<SegmentSummary>,
    pub overall_accuracy: f64,
    /// Accuracy on the closing source-domain segment.
    pub final_accuracy: f64,
    pub backward_steps: u64,
    pub forward_steps: u64,
    /// Adaptation-loop throughput, excluding I/O.
    pub steps_per_sec: f64,
    pub adaptor_params: usize,
}

impl RunSummary {
    /// Mean of per-segment accuracies over every segment but the last.
    pub fn shifted_accuracy(&self) -> f64 {
        let shifted = &self.segments[..self.segments.len().saturating_sub(1)];
        if shifted.is_empty() {
            return self.final_accuracy;
        }
        shifted.iter().map(|s| s.accuracy).sum::<f64>() / shifted.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub summary: RunSummary,
    pub backbone: Backbone,
    pub adaptor: Adaptor,
}

/// A run that stopped early, with the log up to the failing step.
#[derive(Debug, thiserror::Error)]
#[error("run aborted after {} steps: {error}", records.len())]
pub struct Aborted {
    pub records: Vec<StepRecord>,
    #[source]
    pub error: CtaError,
}

/// Fresh adaptor for `cfg.seed`, optionally with its down-projection columns
/// turned to face `source_mean`.
pub fn init_adaptor(cfg: &ExperimentConfig, source_mean: &Vector) -> Result<Adaptor> {
    let mut rng = SeededRng::new(cfg.seed).fork(KEY_ADAPTOR);
    let fresh = LowRankAdaptor::new(cfg.source.dim, cfg.adaptor.ratio, &mut rng)?;
    if !cfg.adaptor.orient_down {
        return Ok(fresh);
    }
    let down = orient_columns(fresh.down(), source_mean);
    LowRankAdaptor::from_parts(down, fresh.up().clone(), fresh.ratio())
}

/// Scenes for step `t`; pure in `(seed, t)`.
pub fn step_scenes(cfg: &ExperimentConfig, bench: &Benchmark, t: usize) -> Result<Vec<Scene>> {
    let transform = bench.schedule.transform_at(t)?;
    let mut rng = SeededRng::new(cfg.seed).fork(KEY_STREAM).fork(t as u64);
    (0..cfg.batch_size)
        .map(|_| sample_scene(&bench.source, &transform, &mut rng, &cfg.scene))
        .collect()
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
) -> std::result::Result<RunOutput, Aborted> {
    run_experiment_with(cfg, bench, |_, _| Ok(()))
}

/// Runs the adaptation loop, handing each step's scenes to `observe` (used
/// for trace dumps; its time is excluded from throughput).
pub fn run_experiment_with<F>(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
    observe: F,
) -> std::result::Result<RunOutput, Aborted>
where
    F: FnMut(usize, &[Scene]) -> Result<()>,
{
    let mut run = match Run::new(cfg, bench) {
        Ok(r) => r,
        Err(error) => {
            return Err(Aborted {
                records: Vec::new(),
                error,
            })
        }
    };
    match run.execute(observe) {
        Ok(()) => Ok(run.finish()),
        Err(error) => Err(Aborted {
            records: run.records,
            error,
        }),
    }
}

struct SegmentTally {
    hits: f64,
    objects: u64,
    forward: u64,
    backward: u64,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    bench: &'a Benchmark,
    backbone: Backbone,
    adaptor: Adaptor,
    image_ema: EmaMeanTracker<f64>,
    bank: ClassBank<f64>,
    skip: SkipState<f64>,
    records: Vec<StepRecord>,
    tallies: Vec<SegmentTally>,
    backward_count: u64,
    busy: Duration,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig, bench: &'a Benchmark) -> Result<Self> {
        cfg.validate()?;
        let refs = &bench.references;
        if refs.dim() != cfg.source.dim || refs.classes.len() != bench.source.num_classes() {
            return Err(CtaError::Shape(
                "references do not match the source model".into(),
            ));
        }
        let alpha = cfg.rates.alpha;
        Ok(Self {
            cfg,
            bench,
            backbone: FrozenBackbone::identity(cfg.source.dim)?,
            adaptor: init_adaptor(cfg, refs.image.mean())?,
            image_ema: EmaMeanTracker::from_stats(&refs.image, alpha)?,
            bank: ClassBank::new(refs.classes.clone(), alpha)?,
            skip: SkipState::new(refs.d_kl_in, cfg.thresholds.tau1, cfg.thresholds.tau2)?,
            records: Vec::with_capacity(bench.schedule.total_steps()),
            tallies: bench
                .schedule
                .segments()
                .iter()
                .map(|_| SegmentTally {
                    hits: 0.0,
                    objects: 0,
                    forward: 0,
                    backward: 0,
                })
                .collect(),
            backward_count: 0,
            busy: Duration::ZERO,
        })
    }

    fn execute<F>(&mut self, mut observe: F) -> Result<()>
    where
        F: FnMut(usize, &[Scene]) -> Result<()>,
    {
        for t in 0..self.bench.schedule.total_steps() {
            let start = Instant::now();
            let scenes = step_scenes(self.cfg, self.bench, t)?;
            self.busy += start.elapsed();
            observe(t, &scenes)?;
            let start = Instant::now();
            let record = self.step(t, &scenes).map_err(|e| match e {
                CtaError::NonFinite(reason) => CtaError::Diverged { step: t, reason },
                other => other,
            })?;
            self.busy += start.elapsed();
            self.records.push(record);
        }
        Ok(())
    }

    fn step(&mut self, t: usize, scenes: &[Scene]) -> Result<StepRecord> {
        let b = scenes.len();
        let (segment_id, _) = self.bench.schedule.locate(t);
        let mut inputs =
            Vec::with_capacity(b + scenes.iter().map(|s| s.objects.len()).sum::<usize>());
        inputs.extend(scenes.iter().map(|s| s.image_feature.clone()));
        let mut truth = Vec::new();
        for s in scenes {
            for o in &s.objects {
                inputs.push(o.feature.clone());
                truth.push(o.true_class);
            }
        }
        let cache = forward_batch(&self.backbone, &self.adaptor, &inputs)?;
        let outputs: Vec<Vector> = cache.entries().iter().map(|r| r.output.clone()).collect();
        let (image_out, object_out) = outputs.split_at(b);

        // Predict first: accuracy reflects the model before this step's update.
        let rois = object_out
            .iter()
            .map(|f| head_predict(f, &self.bench.source))
            .collect::<Result<Vec<_>>>()?;
        let scored: Vec<_> = rois.iter().cloned().zip(truth.iter().copied()).collect();
        let accuracy = evaluate_accuracy(&scored);

        self.image_ema.update(&DenseVector::mean_of(image_out)?)?;
        let assignment = assign_and_filter(&rois, self.cfg.thresholds.bg_threshold)?;
        self.bank.update(&assignment.gather(object_out)?)?;
        let l_img = image_loss(&self.bench.references.image, &self.image_ema)?;
        let l_obj = object_loss(&self.bank)?;
        if !l_img.is_finite() || !l_obj.is_finite() {
            return Err(CtaError::Diverged {
                step: t,
                reason: format!("l_img={l_img} l_obj={l_obj}"),
            });
        }
        let decision = self.skip.observe(l_img)?;
        let updated = match self.cfg.method {
            Method::Direct => false,
            Method::Full | Method::Ours => true,
            Method::OursSkip => decision.update,
            Method::EvenlySkip(n) => t.is_multiple_of(n),
        };

        if updated {
            let out = total_loss_and_grads(
                &self.bench.references.image,
                &self.bank,
                &self.image_ema,
                b,
                &assignment,
                self.cfg.rates.alpha,
            )?;
            let mut upstream = vec![DenseVector::zeros(self.cfg.source.dim); inputs.len()];
            for (slot, g) in upstream.iter_mut().zip(out.image_grads) {
                *slot = g;
            }
            for (i, g) in out.object_grads {
                upstream[b + i].axpy(1.0, &g)?;
            }
            let lr = self.cfg.rates.lr;
            if self.cfg.method.adapts_backbone() {
                let grads = full_finetune_backward(&self.adaptor, &cache, &upstream)?;
                sgd_step(&mut self.adaptor, &grads, lr)?;
                sgd_step_backbone(&mut self.backbone, &grads, lr)?;
            } else {
                let grads = backward(&self.adaptor, &cache, &upstream)?;
                sgd_step(&mut self.adaptor, &grads, lr)?;
            }
            self.backward_count += 1;
        }

        let tally = &mut self.tallies[segment_id];
        tally.hits += accuracy * truth.len() as f64;
        tally.objects += truth.len() as u64;
        tally.forward += 1;
        tally.backward += u64::from(updated);

        Ok(StepRecord {
            t,
            segment_id,
            l_img,
            l_obj,
            l_total: l_img + l_obj,
            ratio1: decision.ratio1,
            ratio2: decision.ratio2,
            fired1: decision.fired1,
            fired2: decision.fired2,
            updated,
            accuracy,
            cumulative_backward_count: self.backward_count,
        })
    }

    fn finish(self) -> RunOutput {
        let segments: Vec<SegmentSummary> = self
            .bench
            .schedule
            .segments()
            .iter()
            .zip(&self.tallies)
            .enumerate()
            .map(|(i, (seg, tally))| SegmentSummary {
                segment_id: i,
                label: seg.label.clone(),
                accuracy: if tally.objects > 0 {
                    tally.hits / tally.objects as f64
                } else {
                    0.0
                },
                objects: tally.objects,
                forward_steps: tally.forward,
                backward_steps: tally.backward,
            })
            .collect();
        let hits: f64 = self.tallies.iter().map(|t| t.hits).sum();
        let objects: u64 = self.tallies.iter().map(|t| t.objects).sum();
        let forward_steps = self.records.len() as u64;
        let secs = self.busy.as_secs_f64();
        let summary = RunSummary {
            method: self.cfg.method,
            seed: self.cfg.seed,
            overall_accuracy: if objects > 0 {
                hits / objects as f64
            } else {
                0.0
            },
            final_accuracy: segments.last().map_or(0.0, |s| s.accuracy),
            segments,
            backward_steps: self.backward_count,
            forward_steps,
            steps_per_sec: if secs > 0.0 {
                forward_steps as f64 / secs
            } else {
                0.0
            },
            adaptor_params: self.adaptor.param_count(),
        };
        RunOutput {
            records: self.records,
            summary,
            backbone: self.backbone,
            adaptor: self.adaptor,
        }
    }
}

/// Flips every column whose dot product with `toward` is negative.
pub fn orient_columns(down: &DenseMatrix<f64>, toward: &Vector) -> DenseMatrix<f64> {
    let mut out = down.clone();
    for j in 0..out.cols() {
        let z: f64 = (0..out.rows()).map(|i| out.get(i, j) * toward.get(i)).sum();
        if z < 0.0 {
            for i in 0..out.rows() {
                out.set(i, j, -out.get(i, j));
            }
        }
    }
    out
}
