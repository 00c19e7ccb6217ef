//! Optimization loop: fresh uniform batches each step, held-out residual
//! tracking, best-checkpoint selection and a serializable report.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::netcore::Tensor2;
use crate::presentation::{Presentation, RelationEq};
use crate::relcomp::{compile, compile_relation, relation_residual, sample, total_loss, CompileError, NetSet, SampleDomain};
use crate::rng;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(format!("unknown optimizer `{s}` (expected sgd or adam)")),
        }
    }
}

/// Coordinate range every sample coordinate is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub const SYMMETRIC: Interval = Interval { low: -1.0, high: 1.0 };
    pub const UNIT: Interval = Interval { low: 0.0, high: 1.0 };

    pub fn domain(self, width: usize) -> SampleDomain {
        SampleDomain::new(self.low, self.high, width)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub target_residual: f64,
    pub seed: u64,
    pub domain: Interval,
    /// One weight per relation; empty means all ones.
    pub relation_weights: Vec<f64>,
    pub deterministic: bool,
    /// Held-out residuals are measured after step 1 and every `eval_every` steps.
    pub eval_every: usize,
    pub eval_points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            batch_size: 256,
            max_steps: 20_000,
            target_residual: 1e-4,
            seed: 0,
            domain: Interval::SYMMETRIC,
            relation_weights: Vec::new(),
            deterministic: true,
            eval_every: 200,
            eval_points: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, relations: usize) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if !(self.target_residual >= 0.0) {
            return bad("target_residual must be non-negative");
        }
        if !(self.domain.low < self.domain.high) {
            return bad("domain needs low < high");
        }
        if self.eval_every == 0 || self.eval_points == 0 {
            return bad("eval_every and eval_points must be at least 1");
        }
        if !self.relation_weights.is_empty() && self.relation_weights.len() != relations {
            return Err(TrainError::Config(format!(
                "{} relation weights given for {relations} relations",
                self.relation_weights.len()
            )));
        }
        if self.relation_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("relation weights must be finite and non-negative");
        }
        Ok(())
    }

    fn weights(&self, relations: usize) -> Vec<f64> {
        if self.relation_weights.is_empty() {
            vec![1.0; relations]
        } else {
            self.relation_weights.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub label: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub presentation: String,
    pub regime: String,
    pub block_dim: usize,
    pub config: TrainConfig,
    pub history: Vec<HistoryEntry>,
    /// Held-out residuals of the returned networks, by relation label.
    pub final_residuals: BTreeMap<String, f64>,
    pub steps_used: usize,
    pub best_step: usize,
    pub converged: bool,
    /// Omitted in deterministic runs so reports compare byte for byte.
    pub wall_time_secs: Option<f64>,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn max_residual(&self) -> f64 {
        self.final_residuals.values().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize, report: Box<TrainReport> },
}

/// Per-parameter optimizer state.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    kind: Optimizer,
    lr: T,
    step: i32,
    moments: BTreeMap<usize, (Tensor2<T>, Tensor2<T>)>,
}

impl<T: Scalar> OptimizerState<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: Optimizer, lr: f64) -> Self {
        Self { kind, lr: T::of(lr), step: 0, moments: BTreeMap::new() }
    }

    /// One update of every parameter of `nets` from `grads`.
    pub fn apply(&mut self, nets: &mut NetSet<T>, grads: &BTreeMap<usize, Tensor2<T>>) {
        self.step += 1;
        let (b1, b2, eps) = (T::of(Self::BETA1), T::of(Self::BETA2), T::of(Self::EPS));
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let (kind, lr) = (self.kind, self.lr);
        let moments = &mut self.moments;
        for (slot, net) in nets.nets_mut().iter_mut().enumerate() {
            net.for_each_param_mut(slot, |key, p| {
                let Some(g) = grads.get(&key) else { return };
                match kind {
                    Optimizer::Sgd => {
                        for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                            *w -= lr * d;
                        }
                    }
                    Optimizer::Adam => {
                        let (m, v) = moments
                            .entry(key)
                            .or_insert_with(|| (Tensor2::zeros(g.rows(), g.cols()), Tensor2::zeros(g.rows(), g.cols())));
                        for (((w, &d), mi), vi) in
                            p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
                        {
                            *mi = b1 * *mi + (T::one() - b1) * d;
                            *vi = b2 * *vi + (T::one() - b2) * d * d;
                            *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                        }
                    }
                }
            });
        }
    }
}

/// Held-out points for each relation, drawn once per run from their own streams.
pub fn held_out_points<T: Scalar>(widths: &[usize], cfg: &TrainConfig) -> Vec<Tensor2<T>> {
    widths
        .iter()
        .enumerate()
        .map(|(i, &w)| sample(&cfg.domain.domain(w), cfg.eval_points, &mut rng::stream(cfg.seed, &format!("heldout/{i}"))))
        .collect()
}

fn is_converged(residuals: &[f64], target: f64) -> bool {
    residuals.iter().all(|&r| r < target || r == 0.0)
}

/// Trains `nets` in place toward `pres`. On return `nets` holds the best
/// checkpoint seen on held-out points, which may precede the last step.
pub fn train<T: Scalar>(pres: &Presentation, nets: &mut NetSet<T>, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    let rels = compile(pres, nets)?;
    cfg.validate(rels.len())?;
    let start = Instant::now();
    let weights = cfg.weights(rels.len());
    let widths: Vec<usize> = rels.iter().map(|r| r.in_width()).collect();
    let held_out = held_out_points::<T>(&widths, cfg);
    let mut batch_rng = rng::stream(cfg.seed, "batch");
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate);
    let regime = nets.nets().first().map(|n| n.regime().name()).unwrap_or("linear");

    let mut report = TrainReport {
        presentation: pres.name.clone(),
        regime: regime.to_string(),
        block_dim: nets.block_dim(),
        config: cfg.clone(),
        history: Vec::new(),
        final_residuals: BTreeMap::new(),
        steps_used: 0,
        best_step: 0,
        converged: false,
        wall_time_secs: None,
    };
    let mut best: Option<(bool, f64, Vec<f64>, NetSet<T>)> = None;

    let finish = |report: &mut TrainReport, best: &Option<(bool, f64, Vec<f64>, NetSet<T>)>, nets: &mut NetSet<T>| {
        if let Some((not_converged, _, residuals, snapshot)) = best {
            *nets = snapshot.clone();
            report.converged = !not_converged;
            report.final_residuals = rels.iter().map(|r| r.label.clone()).zip(residuals.iter().copied()).collect();
        }
        if !cfg.deterministic {
            report.wall_time_secs = Some(start.elapsed().as_secs_f64());
        }
    };

    for step in 1..=cfg.max_steps {
        let batches: Vec<Tensor2<T>> =
            widths.iter().map(|&w| sample(&cfg.domain.domain(w), cfg.batch_size, &mut batch_rng)).collect();
        let loss = total_loss(&rels, nets, &batches, &weights, true)?;
        if !loss.value.is_finite() || loss.grads.values().any(|g| !g.is_finite()) {
            finish(&mut report, &best, nets);
            return Err(TrainError::Diverged { step, report: Box::new(report) });
        }
        opt.apply(nets, &loss.grads);
        report.steps_used = step;

        if step == 1 || step % cfg.eval_every == 0 {
            let residuals = rels
                .iter()
                .zip(&held_out)
                .map(|(r, pts)| relation_residual(r, nets, pts).map(Scalar::as_f64))
                .collect::<Result<Vec<f64>, _>>()?;
            if residuals.iter().any(|r| !r.is_finite()) {
                finish(&mut report, &best, nets);
                return Err(TrainError::Diverged { step, report: Box::new(report) });
            }
            for (r, &v) in rels.iter().zip(&residuals) {
                report.history.push(HistoryEntry { step, label: r.label.clone(), value: v });
            }
            let converged = is_converged(&residuals, cfg.target_residual);
            let total: f64 = residuals.iter().zip(&weights).map(|(r, w)| r * w).sum();
            let better = match &best {
                None => true,
                Some((nc, t, _, _)) => (!converged, total) < (*nc, *t),
            };
            if better {
                best = Some((!converged, total, residuals, nets.clone()));
                report.best_step = step;
            }
            if converged {
                break;
            }
        }
    }
    finish(&mut report, &best, nets);
    Ok(report)
}

/// Held-out residuals of relations outside the training set.
pub fn probe_extra_relations<T: Scalar>(
    pres: &Presentation,
    nets: &NetSet<T>,
    probes: &[RelationEq],
    domain: Interval,
    points: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>, CompileError> {
    nets.check_against(pres)?;
    probes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let rel = compile_relation(pres, nets, p)?;
            let pts = sample(&domain.domain(rel.in_width()), points, &mut rng::stream(seed, &format!("probe/{i}")));
            Ok((p.label.clone(), relation_residual(&rel, nets, &pts)?.as_f64()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{layer_specs, GeneratorNet, LayerParams, Regime};
    use crate::presentation::{builtin, parse_presentation, Builtin, Monoidal, RelExpr};

    fn quick(max_steps: usize) -> TrainConfig {
        TrainConfig { max_steps, eval_every: 20, eval_points: 256, batch_size: 64, seed: 3, ..TrainConfig::default() }
    }

    #[test]
    fn trivial_relation_converges_at_first_step() {
        let pres = parse_presentation("structure custom\ngenerator f arity 1->1\nrelation f = f\n").unwrap();
        let mut nets = NetSet::<f64>::init(&pres, 2, Regime::Nonlinear, 0).unwrap();
        let report = train(&pres, &mut nets, &TrainConfig { target_residual: 0.0, ..quick(100) }).unwrap();
        assert!(report.converged);
        assert_eq!(report.steps_used, 1);
        assert_eq!(report.final_residuals["f = f"], 0.0);
    }

    #[test]
    fn sgd_step_matches_closed_form() {
        // Loss mean ‖W x‖² over a single point x: ∂/∂W = 2 (W x) xᵀ.
        let pres = parse_presentation("structure group\ngenerator z arity 1->1\nrelation z = 0 z\n").unwrap();
        let w0 = 0.75;
        let layers = layer_specs(&[1, 1], Regime::Linear).unwrap();
        let net = GeneratorNet::from_parts(
            "z",
            1,
            1,
            1,
            Regime::Linear,
            layers,
            vec![LayerParams { weight: Tensor2::from_vec(1, 1, vec![w0]), bias: None }],
        )
        .unwrap();
        let mut nets = NetSet::new(Monoidal::Cartesian, 1, vec![net]);
        let rels = compile(&pres, &nets).unwrap();
        let x = 0.4;
        let pts = Tensor2::from_vec(1, 1, vec![x]);
        let loss = total_loss(&rels, &nets, &[pts], &[1.0], false).unwrap();
        assert_eq!(loss.value, (w0 * x) * (w0 * x));
        let lr = 0.1;
        OptimizerState::new(Optimizer::Sgd, lr).apply(&mut nets, &loss.grads);
        let expected = w0 - lr * 2.0 * w0 * x * x;
        assert_eq!(nets.nets()[0].params()[0].weight.get(0, 0), expected);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let pres = parse_presentation("structure group\ngenerator z arity 1->1\nrelation z = 0 z\n").unwrap();
        let layers = layer_specs(&[1, 1], Regime::Linear).unwrap();
        let net = GeneratorNet::from_parts(
            "z",
            1,
            1,
            1,
            Regime::Linear,
            layers,
            vec![LayerParams { weight: Tensor2::from_vec(1, 1, vec![0.5]), bias: None }],
        )
        .unwrap();
        let mut nets = NetSet::new(Monoidal::Cartesian, 1, vec![net]);
        let rels = compile(&pres, &nets).unwrap();
        let loss = total_loss(&rels, &nets, &[Tensor2::from_vec(1, 1, vec![1.0])], &[1.0], false).unwrap();
        OptimizerState::new(Optimizer::Adam, 0.01).apply(&mut nets, &loss.grads);
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
        let g: f64 = 1.0;
        assert!((nets.nets()[0].params()[0].weight.get(0, 0) - (0.5 - 0.01 * g / (g + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn deterministic_runs_are_identical() {
        let pres = builtin(Builtin::Braid, &BTreeMap::new()).unwrap();
        let run = || {
            let mut nets = NetSet::<f64>::init(&pres, 1, Regime::Linear, 5).unwrap();
            let report = train(&pres, &mut nets, &quick(60)).unwrap();
            (report.to_json(), nets)
        };
        let (a, na) = run();
        let (b, nb) = run();
        assert_eq!(a, b);
        assert_eq!(na, nb);
    }

    #[test]
    fn report_history_and_schema() {
        let pres = builtin(Builtin::Braid, &BTreeMap::new()).unwrap();
        let mut nets = NetSet::<f64>::init(&pres, 1, Regime::Linear, 1).unwrap();
        let report = train(&pres, &mut nets, &TrainConfig { target_residual: 0.0, ..quick(45) }).unwrap();
        assert!(!report.converged);
        assert_eq!(report.steps_used, 45);
        let steps: Vec<usize> = report.history.iter().map(|h| h.step).collect();
        assert!(steps.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(steps, [1, 1, 1, 20, 20, 20, 40, 40, 40]);
        assert_eq!(report.final_residuals.len(), 3);
        assert!(report.wall_time_secs.is_none());
        let back: TrainReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
        // The returned nets are the best checkpoint: re-evaluating reproduces the table.
        let rels = compile(&pres, &nets).unwrap();
        let held = held_out_points::<f64>(&rels.iter().map(|r| r.in_width()).collect::<Vec<_>>(), &report.config);
        for (r, pts) in rels.iter().zip(&held) {
            assert_eq!(relation_residual(r, &nets, pts).unwrap(), report.final_residuals[&r.label]);
        }
    }

    #[test]
    fn larger_budget_never_worsens_best() {
        let pres = builtin(Builtin::Braid, &BTreeMap::new()).unwrap();
        let best = |steps| {
            let mut nets = NetSet::<f64>::init(&pres, 1, Regime::Linear, 2).unwrap();
            let r = train(&pres, &mut nets, &TrainConfig { target_residual: 0.0, ..quick(steps) }).unwrap();
            r.final_residuals.values().sum::<f64>()
        };
        let (a, b, c) = (best(30), best(60), best(100));
        assert!(b <= a && c <= b, "{a} {b} {c}");
    }

    #[test]
    fn divergence_is_reported() {
        let pres = builtin(Builtin::Braid, &BTreeMap::new()).unwrap();
        let mut nets = NetSet::<f64>::init(&pres, 1, Regime::Linear, 0).unwrap();
        let cfg = TrainConfig { optimizer: Optimizer::Sgd, learning_rate: 1e6, ..quick(200) };
        match train(&pres, &mut nets, &cfg) {
            Err(TrainError::Diverged { step, report }) => {
                assert!(step >= 2);
                assert_eq!(report.steps_used, step - 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_is_checked() {
        let pres = builtin(Builtin::Braid, &BTreeMap::new()).unwrap();
        let mut nets = NetSet::<f64>::init(&pres, 1, Regime::Linear, 0).unwrap();
        for cfg in [
            TrainConfig { learning_rate: 0.0, ..quick(1) },
            TrainConfig { batch_size: 0, ..quick(1) },
            TrainConfig { max_steps: 0, ..quick(1) },
            TrainConfig { target_residual: -1.0, ..quick(1) },
            TrainConfig { relation_weights: vec![1.0], ..quick(1) },
        ] {
            assert!(matches!(train(&pres, &mut nets, &cfg), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn probes_of_swap() {
        let pres = builtin(Builtin::Braid, &BTreeMap::new()).unwrap();
        let swap = || {
            GeneratorNet::from_parts(
                "f",
                1,
                2,
                2,
                Regime::Linear,
                layer_specs(&[2, 2], Regime::Linear).unwrap(),
                vec![LayerParams { weight: Tensor2::<f64>::from_f64_rows(&[&[0.0, 1.0], &[1.0, 0.0]]), bias: None }],
            )
            .unwrap()
        };
        let mut g = swap();
        g = GeneratorNet::from_parts("g", 1, 2, 2, Regime::Linear, g.layers().to_vec(), g.params().to_vec()).unwrap();
        let nets = NetSet::new(Monoidal::Cartesian, 1, vec![swap(), g]);
        let probes = [
            RelationEq::new("f∘f = id", RelExpr::gen("f").after(RelExpr::gen("f")), RelExpr::id(2)),
            RelationEq::new("f = id", RelExpr::gen("f"), RelExpr::id(2)),
        ];
        let res = probe_extra_relations(&pres, &nets, &probes, Interval::SYMMETRIC, 512, 0).unwrap();
        assert_eq!(res[0].1, 0.0);
        assert!(res[1].1 > 0.5);
    }

    #[test]
    fn probing_a_trained_relation_reproduces_its_residual() {
        let pres = builtin(Builtin::Braid, &BTreeMap::new()).unwrap();
        let mut nets = NetSet::<f64>::init(&pres, 1, Regime::Linear, 4).unwrap();
        let cfg = quick(40);
        let report = train(&pres, &mut nets, &cfg).unwrap();
        let rels = compile(&pres, &nets).unwrap();
        let held = held_out_points::<f64>(&rels.iter().map(|r| r.in_width()).collect::<Vec<_>>(), &cfg);
        let probe = relation_residual(&rels[2], &nets, &held[2]).unwrap();
        assert_eq!(probe, report.final_residuals[&rels[2].label]);
    }
}
