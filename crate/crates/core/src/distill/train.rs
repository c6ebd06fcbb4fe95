use super::config::{PositiveSource, TrainConfig};
use super::eval::{evaluate_student, EvalReport};
use super::generator::{init_student_from_teacher, GeneratorNet};
use super::positives::{build_positive_set, Provenance};
use crate::anchor::grouped_margin_loss;
use crate::datasets::{sample_batch, LabeledBatch, SyntheticSpec};
use crate::drift::{tfd_loss_with_targets, tfd_targets, DriftConfig, GroupLayout, LayerFeatures};
use crate::error::{Result, TfdError};
use crate::metrics::MetricLog;
use crate::numerics::{clip_global_norm, euclidean, global_norm, warmup_lr, AdamW, Tape, Tensor, Var};
use crate::rng::SeedStream;
use crate::teacher::{extract_feature_values, extract_features, Checkpoint, CheckpointKind, DenoiserNet, FeatureSpec};

/// Everything random about one update, drawn up front.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub step: usize,
    pub conditions: Vec<usize>,
    /// `groups·N⁺` rows, grouped by condition.
    pub positives: Tensor,
    pub positive_labels: Vec<usize>,
    pub provenance: Vec<Provenance>,
    /// `groups·N` student inputs, grouped by condition.
    pub noise: Tensor,
    pub labels: Vec<usize>,
    pub layout: GroupLayout,
    feature_seed: SeedStream,
}

/// Scalar summary of one update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub tfd: f64,
    pub anchor: f64,
    pub total: f64,
    pub tfd_per_layer: Vec<(usize, f64)>,
    pub anchor_per_layer: Vec<(usize, f64)>,
    pub violations: usize,
    /// Global gradient norm before and after clipping.
    pub grad_norm: f64,
    pub clipped_norm: f64,
    pub lr: f64,
}

/// Differentiable objective of one batch.
pub struct LossGraph<'t> {
    pub total: Var<'t>,
    pub tfd: f64,
    pub anchor: f64,
    pub tfd_per_layer: Vec<(usize, f64)>,
    pub anchor_per_layer: Vec<(usize, f64)>,
    pub violations: usize,
    pub targets: LayerFeatures,
}

/// Receives metrics and checkpoint events from [`Distiller::run`].
pub trait DistillHooks {
    /// Called after new rows were appended; `from` is the first new row.
    fn on_metrics(&mut self, _log: &MetricLog, _from: usize) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _distiller: &Distiller<'_>) -> Result<()> {
        Ok(())
    }
}

/// Hooks that ignore every event.
pub struct NoHooks;

impl DistillHooks for NoHooks {}

/// Student, optimizer and frozen bandwidth for one distillation run.
pub struct Distiller<'a> {
    teacher: &'a DenoiserNet,
    data: SyntheticSpec,
    features: FeatureSpec,
    drift: DriftConfig,
    cfg: TrainConfig,
    student: GeneratorNet,
    opt: AdamW,
    bandwidth: Option<f64>,
    step: usize,
    seed: SeedStream,
}

fn layer_summary(parts: &[(usize, f64)]) -> String {
    parts.iter().map(|(l, v)| format!("layer{l}={v}")).collect::<Vec<_>>().join(" ")
}

impl<'a> Distiller<'a> {
    pub fn new(
        teacher: &'a DenoiserNet,
        data: SyntheticSpec,
        features: FeatureSpec,
        drift: DriftConfig,
        cfg: TrainConfig,
        seed: &SeedStream,
    ) -> Result<Self> {
        data.validate()?;
        drift.validate()?;
        cfg.validate()?;
        features.validate(teacher)?;
        let arch = teacher.arch();
        if arch.dim != data.dimension || arch.num_classes != data.num_classes() {
            return Err(TfdError::contract("teacher does not match the dataset dimension/classes"));
        }
        let student = init_student_from_teacher(teacher)?;
        let opt = AdamW::new(student.net().params(), cfg.weight_decay);
        Ok(Self {
            teacher,
            data,
            features,
            drift,
            cfg,
            student,
            opt,
            bandwidth: None,
            step: 0,
            seed: seed.clone(),
        })
    }

    /// Restores a run from a student checkpoint written by [`Self::checkpoint`].
    pub fn resume(
        teacher: &'a DenoiserNet,
        data: SyntheticSpec,
        features: FeatureSpec,
        drift: DriftConfig,
        cfg: TrainConfig,
        seed: &SeedStream,
        ck: &Checkpoint,
    ) -> Result<Self> {
        if ck.kind != CheckpointKind::Student {
            return Err(TfdError::Format("expected a student checkpoint".into()));
        }
        if ck.net.arch() != teacher.arch() || ck.net.schedule() != teacher.schedule() {
            return Err(TfdError::Format("student checkpoint does not match the teacher architecture".into()));
        }
        let mut d = Self::new(teacher, data, features, drift, cfg, seed)?;
        let (&h, opt_state) = ck
            .extra
            .split_first()
            .ok_or_else(|| TfdError::Format("student checkpoint lacks training state".into()))?;
        d.opt.import_state(opt_state)?;
        d.bandwidth = h.is_finite().then_some(h);
        d.student = GeneratorNet::new(ck.net.clone(), ck.input_sigma)?;
        d.step = ck.step as usize;
        Ok(d)
    }

    /// Student checkpoint holding `[bandwidth, optimizer state]` as extra.
    pub fn checkpoint(&self, spec_hash: [u8; 32]) -> Checkpoint {
        let mut extra = vec![self.bandwidth.unwrap_or(f64::NAN)];
        extra.extend(self.opt.export_state());
        Checkpoint {
            kind: CheckpointKind::Student,
            net: self.student.net().clone(),
            input_sigma: self.student.input_sigma(),
            spec_hash,
            step: self.step as u64,
            extra,
        }
    }

    pub fn student(&self) -> &GeneratorNet {
        &self.student
    }

    pub fn into_student(self) -> GeneratorNet {
        self.student
    }

    pub fn teacher(&self) -> &DenoiserNet {
        self.teacher
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Number of completed updates.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Kernel bandwidth of the anchor loss, fixed on the first update.
    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }

    pub fn set_bandwidth(&mut self, h: f64) -> Result<()> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(TfdError::contract(format!("bandwidth must be positive, got {h}")));
        }
        self.bandwidth = Some(h);
        Ok(())
    }

    /// Conditions, positives and noise of update `step`, all drawn from
    /// `seed.derive("distill-step", step)`.
    pub fn prepare_batch(&self, step: usize) -> Result<StepBatch> {
        let mut rng = self.seed.derive("distill-step", step as u64);
        let k = self.data.num_classes();
        let b = self.cfg.conditions_per_step;
        let conditions: Vec<usize> = if b <= k {
            let mut all: Vec<usize> = (0..k).collect();
            rng.shuffle(&mut all);
            all.truncate(b);
            all
        } else {
            (0..b).map(|_| rng.below(k)).collect()
        };
        let n_plus = self.cfg.positives_per_condition;
        let n_gen = self.cfg.generated_per_condition;
        let n_real = match self.cfg.positive_source {
            PositiveSource::TeacherOnly => 0,
            _ => self.cfg.real_per_condition.unwrap_or(n_plus).min(n_plus),
        };
        let d = self.data.dimension;
        let mut parts = Vec::with_capacity(b);
        let mut provenance = Vec::with_capacity(b * n_plus);
        for &c in &conditions {
            let pool = if n_real > 0 {
                sample_batch(&self.data, n_real, &mut rng, Some(c))?
            } else {
                LabeledBatch {
                    points: Tensor::zeros(&[0, d]),
                    labels: Vec::new(),
                }
            };
            let set = build_positive_set(
                c,
                n_plus,
                &pool,
                self.teacher,
                self.cfg.positive_source,
                self.cfg.teacher_sampling_steps,
                &mut rng,
            )?;
            provenance.extend(set.provenance);
            parts.push(set.points);
        }
        let positives = Tensor::vstack(&parts.iter().collect::<Vec<_>>())?;
        let noise = self.student.draw_noise(b * n_gen, &mut rng);
        let labels = conditions.iter().flat_map(|&c| std::iter::repeat(c).take(n_gen)).collect();
        let positive_labels = conditions.iter().flat_map(|&c| std::iter::repeat(c).take(n_plus)).collect();
        Ok(StepBatch {
            step,
            conditions,
            positives,
            positive_labels,
            provenance,
            noise,
            labels,
            layout: GroupLayout {
                groups: b,
                gen_per_group: n_gen,
                pos_per_group: n_plus,
            },
            feature_seed: rng.derive("features", 0),
        })
    }

    /// Noised teacher features of the batch's positives; these double as
    /// the anchors of the step.
    pub fn positive_features(&self, batch: &StepBatch) -> Result<LayerFeatures> {
        let mut fseed = batch.feature_seed.clone();
        extract_feature_values(self.teacher, &batch.positives, &batch.positive_labels, &self.features, &mut fseed)
    }

    /// Median within-group anchor distance pooled over layers, scaled by
    /// the coverage temperature.
    pub fn bandwidth_heuristic(&self, batch: &StepBatch) -> Result<f64> {
        let anchors = self.positive_features(batch)?;
        let m = batch.layout.pos_per_group;
        let mut dists = Vec::new();
        for feats in anchors.values() {
            for g in 0..batch.layout.groups {
                for i in g * m..(g + 1) * m {
                    for j in i + 1..(g + 1) * m {
                        dists.push(euclidean(feats.row(i), feats.row(j)));
                    }
                }
            }
        }
        if dists.is_empty() {
            return Err(TfdError::contract("bandwidth heuristic needs at least two positives per group"));
        }
        dists.sort_by(f64::total_cmp);
        let n = dists.len();
        let median = if n % 2 == 1 {
            dists[n / 2]
        } else {
            0.5 * (dists[n / 2 - 1] + dists[n / 2])
        };
        let h = median * self.cfg.coverage_temperature;
        if !(h > 0.0) {
            return Err(TfdError::Numeric(format!("degenerate anchor bandwidth {h}")));
        }
        Ok(h)
    }

    /// Builds the objective on `tape` for the student parameters `params`.
    ///
    /// Drift targets are computed from the current generated features
    /// unless `frozen_targets` is given. Feature noise is replayed from the
    /// batch, so repeated calls see the same perturbations.
    pub fn compute_loss<'t>(
        &self,
        params: &[Var<'t>],
        batch: &StepBatch,
        frozen_targets: Option<&LayerFeatures>,
    ) -> Result<LossGraph<'t>> {
        let Some(tape) = params.first().map(|p| p.tape()) else {
            return Err(TfdError::contract("no student parameters bound"));
        };
        let mut fseed = batch.feature_seed.clone();
        let real = extract_feature_values(self.teacher, &batch.positives, &batch.positive_labels, &self.features, &mut fseed)?;
        let eps = tape.constant(batch.noise.clone());
        let generated = self.student.forward(params, eps, &batch.labels)?;
        let gen_feats = extract_features(self.teacher, generated, &batch.labels, &self.features, &mut fseed)?;
        let targets = match frozen_targets {
            Some(t) => t.clone(),
            None => {
                let values: LayerFeatures = gen_feats.iter().map(|(&l, v)| (l, (*v.value()).clone())).collect();
                tfd_targets(&real, &values, batch.layout, &self.drift)?
            }
        };
        let tfd = tfd_loss_with_targets(&gen_feats, &targets)?;

        let lambda = self.cfg.lambda_anchor;
        let mut anchor_total: Option<Var<'t>> = None;
        let mut anchor_per_layer = Vec::new();
        let mut violations = 0;
        if lambda != 0.0 {
            let h = self
                .bandwidth
                .ok_or_else(|| TfdError::contract("anchor bandwidth not initialized"))?;
            for (&l, &z) in &gen_feats {
                let (loss, report) = grouped_margin_loss(
                    &real[&l],
                    z,
                    batch.layout,
                    h,
                    self.cfg.alpha,
                    self.cfg.support_normalizer,
                )?;
                anchor_per_layer.push((l, loss.item()));
                violations += report.violations;
                anchor_total = Some(match anchor_total {
                    Some(a) => a.add(loss)?,
                    None => loss,
                });
            }
        }
        let tfd_value = tfd.total.item();
        let (total, anchor) = match anchor_total {
            Some(a) => (tfd.total.add(a.scale(lambda)?)?, a.item()),
            None => (tfd.total, 0.0),
        };
        Ok(LossGraph {
            total,
            tfd: tfd_value,
            anchor,
            tfd_per_layer: tfd.per_layer,
            anchor_per_layer,
            violations,
            targets: tfd.targets,
        })
    }

    /// Total loss at flat student parameters `flat` with fixed targets.
    pub fn loss_at(&self, flat: &[f64], batch: &StepBatch, targets: &LayerFeatures) -> Result<f64> {
        let mut net = self.student.net().clone();
        net.set_flat_params(flat)?;
        let tape = Tape::new();
        let params = net.bind(&tape, false);
        Ok(self.compute_loss(&params, batch, Some(targets))?.total.item())
    }

    /// Loss, flat gradient and the targets the gradient was taken at.
    pub fn gradient(&self, batch: &StepBatch) -> Result<(f64, Vec<f64>, LayerFeatures)> {
        let tape = Tape::new();
        let params = self.student.net().bind(&tape, true);
        let graph = self.compute_loss(&params, batch, None)?;
        tape.backward(graph.total)?;
        let grad = params.iter().flat_map(|p| tape.grad(*p).into_data()).collect();
        Ok((graph.total.item(), grad, graph.targets))
    }

    /// One update of the student.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let step = self.step;
        let batch = self.prepare_batch(step)?;
        if self.bandwidth.is_none() && self.cfg.lambda_anchor != 0.0 {
            self.bandwidth = Some(self.bandwidth_heuristic(&batch)?);
        }
        let tape = Tape::new();
        let params = self.student.net().bind(&tape, true);
        let graph = self.compute_loss(&params, &batch, None)?;
        let total = graph.total.item();
        if !total.is_finite() {
            return Err(TfdError::Divergence {
                step,
                detail: format!(
                    "loss {total} (tfd {} [{}], anchor {} [{}])",
                    graph.tfd,
                    layer_summary(&graph.tfd_per_layer),
                    graph.anchor,
                    layer_summary(&graph.anchor_per_layer)
                ),
            });
        }
        tape.backward(graph.total)?;
        let mut grads: Vec<Tensor> = params.iter().map(|p| tape.grad(*p)).collect();
        let grad_norm = clip_global_norm(&mut grads, self.cfg.clip_max_norm);
        if !grad_norm.is_finite() {
            return Err(TfdError::Divergence {
                step,
                detail: format!(
                    "gradient norm {grad_norm} (tfd [{}], anchor [{}])",
                    layer_summary(&graph.tfd_per_layer),
                    layer_summary(&graph.anchor_per_layer)
                ),
            });
        }
        let lr = warmup_lr(self.cfg.lr, self.cfg.warmup_steps, step);
        self.opt.step(self.student.net_mut().params_mut(), &grads, lr)?;
        self.step += 1;
        Ok(StepReport {
            step,
            tfd: graph.tfd,
            anchor: graph.anchor,
            total,
            tfd_per_layer: graph.tfd_per_layer,
            anchor_per_layer: graph.anchor_per_layer,
            violations: graph.violations,
            grad_norm,
            clipped_norm: global_norm(&grads),
            lr,
        })
    }

    /// Sample-quality metrics of the current student.
    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate_student(
            &self.student,
            self.teacher,
            &self.data,
            &self.features,
            self.cfg.eval_samples,
            &self.seed.derive("eval", self.step as u64),
        )
    }

    fn log_eval(&self, log: &mut MetricLog) -> Result<()> {
        self.evaluate()?.push_to(log, self.step);
        Ok(())
    }

    /// Trains until `cfg.total_steps` updates are done.
    ///
    /// Losses are logged every `log_interval` updates, sample metrics at
    /// step 0 and every `eval_interval`, checkpoints every
    /// `checkpoint_interval`; the final step always gets all three.
    pub fn run(&mut self, log: &mut MetricLog, hooks: &mut dyn DistillHooks) -> Result<()> {
        let total = self.cfg.total_steps;
        if self.step == 0 {
            let from = log.len();
            self.log_eval(log)?;
            hooks.on_metrics(log, from)?;
        }
        while self.step < total {
            let report = self.train_step()?;
            let done = self.step;
            let last = done == total;
            let from = log.len();
            if done % self.cfg.log_interval == 0 || last {
                report.push_to(log, done);
            }
            if done % self.cfg.eval_interval == 0 || last {
                self.log_eval(log)?;
            }
            if log.len() > from {
                hooks.on_metrics(log, from)?;
            }
            if done % self.cfg.checkpoint_interval == 0 || last {
                hooks.on_checkpoint(self)?;
            }
        }
        Ok(())
    }
}

impl StepReport {
    pub fn push_to(&self, log: &mut MetricLog, step: usize) {
        log.push(step, "loss/total", self.total);
        log.push(step, "loss/tfd", self.tfd);
        log.push(step, "loss/anchor", self.anchor);
        for (l, v) in &self.tfd_per_layer {
            log.push(step, &format!("loss/tfd/layer{l}"), *v);
        }
        for (l, v) in &self.anchor_per_layer {
            log.push(step, &format!("loss/anchor/layer{l}"), *v);
        }
        log.push(step, "anchor/violations", self.violations as f64);
        log.push(step, "grad_norm", self.grad_norm);
        log.push(step, "lr", self.lr);
    }
}

/// Runs a full distillation from a fresh student.
pub fn distill(
    teacher: &DenoiserNet,
    data: SyntheticSpec,
    features: FeatureSpec,
    drift: DriftConfig,
    cfg: TrainConfig,
    seed: &SeedStream,
) -> Result<(GeneratorNet, MetricLog)> {
    let mut d = Distiller::new(teacher, data, features, drift, cfg, seed)?;
    let mut log = MetricLog::new();
    d.run(&mut log, &mut NoHooks)?;
    Ok((d.into_student(), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::{Architecture, NoiseSchedule};

    fn tiny_teacher() -> DenoiserNet {
        let arch = Architecture {
            dim: 2,
            num_classes: 8,
            widths: vec![16; 4],
            embed_freqs: 3,
        };
        DenoiserNet::new(arch, NoiseSchedule::default(), &mut SeedStream::new(11)).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            conditions_per_step: 3,
            total_steps: 6,
            warmup_steps: 2,
            log_interval: 2,
            eval_interval: 3,
            checkpoint_interval: 3,
            eval_samples: 40,
            ..TrainConfig::default()
        }
    }

    fn distiller(teacher: &DenoiserNet, cfg: TrainConfig) -> Distiller<'_> {
        Distiller::new(
            teacher,
            SyntheticSpec::default(),
            FeatureSpec::default(),
            DriftConfig::default(),
            cfg,
            &SeedStream::new(5),
        )
        .unwrap()
    }

    #[test]
    fn fresh_runs_are_bit_identical() {
        let t = tiny_teacher();
        let mut a = distiller(&t, small_cfg());
        let mut b = distiller(&t, small_cfg());
        for _ in 0..3 {
            assert_eq!(a.train_step().unwrap(), b.train_step().unwrap());
        }
        assert_eq!(a.student().net().flat_params(), b.student().net().flat_params());
    }

    #[test]
    fn zero_anchor_weight_gives_plain_tfd() {
        let t = tiny_teacher();
        let mut d = distiller(
            &t,
            TrainConfig {
                lambda_anchor: 0.0,
                ..small_cfg()
            },
        );
        let r = d.train_step().unwrap();
        assert_eq!(r.total, r.tfd);
        assert_eq!(r.anchor, 0.0);
        assert!(d.bandwidth().is_none());
    }

    #[test]
    fn total_decomposes_into_tfd_and_weighted_anchor() {
        let t = tiny_teacher();
        let mut d = distiller(
            &t,
            TrainConfig {
                lambda_anchor: 2.5,
                ..small_cfg()
            },
        );
        for _ in 0..3 {
            let r = d.train_step().unwrap();
            assert!((r.total - (r.tfd + 2.5 * r.anchor)).abs() <= 1e-15 * r.total.abs().max(1.0));
            let tfd_sum: f64 = r.tfd_per_layer.iter().map(|(_, v)| v).sum();
            assert!((tfd_sum - r.tfd).abs() < 1e-15);
        }
    }

    #[test]
    fn clipping_bounds_the_applied_gradient() {
        let t = tiny_teacher();
        let mut d = distiller(
            &t,
            TrainConfig {
                clip_max_norm: 1e-4,
                ..small_cfg()
            },
        );
        let r = d.train_step().unwrap();
        assert!(r.grad_norm > 1e-4);
        assert!(r.clipped_norm <= 1e-4 + 1e-9);
    }

    #[test]
    fn teacher_is_untouched_by_training() {
        let t = tiny_teacher();
        let before = t.checksum();
        let mut d = distiller(&t, small_cfg());
        d.run(&mut MetricLog::new(), &mut NoHooks).unwrap();
        assert_eq!(t.checksum(), before);
        assert_ne!(d.student().checksum(), before);
    }

    #[test]
    fn zero_steps_leave_the_initialization() {
        let t = tiny_teacher();
        let cfg = TrainConfig {
            total_steps: 0,
            ..small_cfg()
        };
        let (student, log) = distill(
            &t,
            SyntheticSpec::default(),
            FeatureSpec::default(),
            DriftConfig::default(),
            cfg,
            &SeedStream::new(1),
        )
        .unwrap();
        assert_eq!(student.checksum(), t.checksum());
        assert!(log.records().iter().all(|r| r.step == 0));
    }

    #[test]
    fn run_logs_on_schedule() {
        let t = tiny_teacher();
        let mut d = distiller(&t, small_cfg());
        let mut log = MetricLog::new();
        d.run(&mut log, &mut NoHooks).unwrap();
        let loss_steps: Vec<usize> = log.series("loss/total").iter().map(|r| r.step).collect();
        assert_eq!(loss_steps, vec![2, 4, 6]);
        let eval_steps: Vec<usize> = log.series("eval/frechet").iter().map(|r| r.step).collect();
        assert_eq!(eval_steps, vec![0, 3, 6]);
        assert!(log.series("loss/tfd/layer3").len() == 3);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let t = tiny_teacher();
        // Interrupt on a step where every interval fires anyway.
        let small_cfg = || TrainConfig {
            log_interval: 3,
            ..small_cfg()
        };
        let mut full = distiller(&t, small_cfg());
        let mut full_log = MetricLog::new();
        full.run(&mut full_log, &mut NoHooks).unwrap();

        let mut first = distiller(
            &t,
            TrainConfig {
                total_steps: 3,
                ..small_cfg()
            },
        );
        let mut log = MetricLog::new();
        first.run(&mut log, &mut NoHooks).unwrap();
        let bytes = first.checkpoint([3; 32]).to_bytes();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        let mut second = Distiller::resume(
            &t,
            SyntheticSpec::default(),
            FeatureSpec::default(),
            DriftConfig::default(),
            small_cfg(),
            &SeedStream::new(5),
            &ck,
        )
        .unwrap();
        assert_eq!(second.step(), 3);
        second.run(&mut log, &mut NoHooks).unwrap();
        assert_eq!(second.student().net().flat_params(), full.student().net().flat_params());
        assert_eq!(log.to_csv(), full_log.to_csv());
    }

    #[test]
    fn conditions_are_distinct_when_they_fit() {
        let t = tiny_teacher();
        let d = distiller(&t, small_cfg());
        let b = d.prepare_batch(4).unwrap();
        let mut c = b.conditions.clone();
        c.sort_unstable();
        c.dedup();
        assert_eq!(c.len(), 3);
        assert_eq!(b.labels.len(), 12);
        assert_eq!(b.positives.rows(), 12);
        assert_eq!(b.provenance.iter().filter(|p| **p == Provenance::Real).count(), 12);
        for (i, &l) in b.positive_labels.iter().enumerate() {
            assert_eq!(l, b.conditions[i / 4]);
        }
    }

    #[test]
    fn hybrid_policy_fills_from_teacher() {
        let t = tiny_teacher();
        let d = distiller(
            &t,
            TrainConfig {
                positive_source: PositiveSource::Hybrid,
                real_per_condition: Some(1),
                teacher_sampling_steps: 3,
                ..small_cfg()
            },
        );
        let b = d.prepare_batch(0).unwrap();
        assert_eq!(b.provenance.iter().filter(|p| **p == Provenance::Teacher).count(), 9);
    }

    #[test]
    fn frozen_target_loss_matches_gradient_direction() {
        let t = tiny_teacher();
        let mut d = distiller(&t, small_cfg());
        let batch = d.prepare_batch(0).unwrap();
        d.set_bandwidth(d.bandwidth_heuristic(&batch).unwrap()).unwrap();
        let (loss, grad, targets) = d.gradient(&batch).unwrap();
        let flat = d.student().net().flat_params();
        assert_eq!(d.loss_at(&flat, &batch, &targets).unwrap(), loss);
        let eps = 1e-3;
        let stepped: Vec<f64> = flat.iter().zip(&grad).map(|(p, g)| p - eps * g).collect();
        assert!(d.loss_at(&stepped, &batch, &targets).unwrap() < loss);
    }
}
