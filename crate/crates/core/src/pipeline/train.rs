//! Supervised imitation of the optimal controls: plain backpropagation with
//! Adam on the control-space mean squared error.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::database::Database;
use crate::gcnet::{Activation, InputMap, NetError, NetSpec, OutputMap};
use crate::odeflow::{Control, State, CONTROL_DIM, STATE_DIM};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty training set")]
    Empty,
    #[error("network maps {inputs} -> {outputs}, the database needs {STATE_DIM} -> {CONTROL_DIM}")]
    Dimension { inputs: usize, outputs: usize },
    #[error("loss became {loss} in epoch {epoch}")]
    NonFinite { epoch: usize, loss: f64 },
    #[error("invalid training options: {0}")]
    Options(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    /// Adam step size at the first epoch; decays geometrically to
    /// `final_learning_rate` at the last.
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Fraction of trajectories held out for reporting.
    pub holdout: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 400,
            batch: 256,
            learning_rate: 3e-3,
            final_learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            holdout: 0.1,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.epochs > 0
            && self.batch > 0
            && self.learning_rate > 0.0
            && self.final_learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && (0.0..1.0).contains(&self.holdout);
        if ok {
            Ok(())
        } else {
            Err(TrainError::Options(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_mse: f64,
    pub holdout_mse: f64,
    pub holdout_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    pub train_rows: usize,
    pub holdout_rows: usize,
}

impl TrainReport {
    pub fn final_mae(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.holdout_mae)
    }
}

pub fn write_metrics_csv<W: Write>(mut w: W, report: &TrainReport) -> std::io::Result<()> {
    writeln!(w, "epoch,learning_rate,train_mse,holdout_mse,holdout_mae")?;
    for m in &report.metrics {
        writeln!(
            w,
            "{},{},{},{},{}",
            m.epoch, m.learning_rate, m.train_mse, m.holdout_mse, m.holdout_mae
        )?;
    }
    Ok(())
}

/// Per-feature mean and inverse standard deviation of `states`. Constant
/// features get unit scale.
pub fn fit_input_map(states: &[State]) -> InputMap {
    let n = states.len().max(1) as f64;
    let mut shift = vec![0.0; STATE_DIM];
    let mut scale = vec![1.0; STATE_DIM];
    for j in 0..STATE_DIM {
        let mean = states.iter().map(|x| x[j]).sum::<f64>() / n;
        let var = states.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
        shift[j] = mean;
        if var > 0.0 {
            scale[j] = 1.0 / var.sqrt();
        }
    }
    InputMap { shift, scale }
}

/// A fresh `5 → hidden → 2` network standardized on `db` with the
/// analytic control-box output map.
pub fn init_net(db: &Database, hidden: &[usize], seed: u64) -> Result<NetSpec, TrainError> {
    if db.is_empty() {
        return Err(TrainError::Empty);
    }
    Ok(NetSpec::random(
        STATE_DIM,
        hidden,
        CONTROL_DIM,
        fit_input_map(&db.states),
        OutputMap::quad_controls(),
        seed,
    )?)
}

// Layers as contiguous row-major blocks, so the inner loops stay tight.
#[derive(Clone)]
struct Dense {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    act: Activation,
}

struct Model {
    shift: Vec<f64>,
    scale: Vec<f64>,
    post_scale: Vec<f64>,
    post_shift: Vec<f64>,
    layers: Vec<Dense>,
}

impl Model {
    fn from_net(net: &NetSpec) -> Self {
        Model {
            shift: net.pre.shift.clone(),
            scale: net.pre.scale.clone(),
            post_scale: net.post.scale.clone(),
            post_shift: net.post.shift.clone(),
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    rows: l.outputs(),
                    cols: l.inputs(),
                    w: l.weights.concat(),
                    b: l.b.clone(),
                    act: l.act,
                })
                .collect(),
        }
    }

    fn write_back(&self, net: &mut NetSpec) {
        for (l, d) in net.layers.iter_mut().zip(&self.layers) {
            for (r, row) in l.weights.iter_mut().enumerate() {
                row.copy_from_slice(&d.w[r * d.cols..(r + 1) * d.cols]);
            }
            l.b.copy_from_slice(&d.b);
        }
    }

    fn parameter_count(&self) -> usize {
        self.layers.iter().map(|d| d.w.len() + d.b.len()).sum()
    }

    fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for d in &self.layers {
            out.extend_from_slice(&d.w);
            out.extend_from_slice(&d.b);
        }
        out
    }

    fn set_parameters(&mut self, theta: &[f64]) {
        let mut k = 0;
        for d in &mut self.layers {
            let nw = d.w.len();
            d.w.copy_from_slice(&theta[k..k + nw]);
            k += nw;
            let nb = d.b.len();
            d.b.copy_from_slice(&theta[k..k + nb]);
            k += nb;
        }
    }

    // Pre-activations of every layer for one input; `acts[0]` is the
    // standardized input.
    fn forward(&self, x: &State, zs: &mut [Vec<f64>], acts: &mut [Vec<f64>]) {
        for j in 0..STATE_DIM {
            acts[0][j] = (x[j] - self.shift[j]) * self.scale[j];
        }
        for (l, d) in self.layers.iter().enumerate() {
            let (prev, next) = acts.split_at_mut(l + 1);
            let input = &prev[l];
            for r in 0..d.rows {
                let row = &d.w[r * d.cols..(r + 1) * d.cols];
                let z = d.b[r] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                zs[l][r] = z;
                next[0][r] = d.act.apply(&z);
            }
        }
    }

    fn output(&self, acts: &[Vec<f64>]) -> Control {
        let y = acts.last().expect("at least one layer");
        [
            y[0] * self.post_scale[0] + self.post_shift[0],
            y[1] * self.post_scale[1] + self.post_shift[1],
        ]
    }

    fn buffers(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let zs = self.layers.iter().map(|d| vec![0.0; d.rows]).collect();
        let mut acts = vec![vec![0.0; STATE_DIM]];
        acts.extend(self.layers.iter().map(|d| vec![0.0; d.rows]));
        (zs, acts)
    }

    /// Mean squared control error over `rows` and its gradient, in the
    /// parameter order of [`Model::parameters`].
    fn loss_gradient(&self, states: &[State], controls: &[Control], rows: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (mut zs, mut acts) = self.buffers();
        let mut deltas: Vec<Vec<f64>> = self.layers.iter().map(|d| vec![0.0; d.rows]).collect();
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |k, d| {
                let o = *k;
                *k += d.w.len() + d.b.len();
                Some(o)
            })
            .collect();
        let norm = 1.0 / (rows.len() * CONTROL_DIM) as f64;
        let mut loss = 0.0;
        for &i in rows {
            self.forward(&states[i], &mut zs, &mut acts);
            let u = self.output(&acts);
            let last = self.layers.len() - 1;
            for k in 0..CONTROL_DIM {
                let e = u[k] - controls[i][k];
                loss += e * e;
                let dz = self.layers[last].act.derivative(zs[last][k]);
                deltas[last][k] = 2.0 * e * self.post_scale[k] * norm * dz;
            }
            for l in (0..self.layers.len()).rev() {
                let d = &self.layers[l];
                let g = &mut grad[offsets[l]..offsets[l] + d.w.len() + d.b.len()];
                let input = &acts[l];
                for r in 0..d.rows {
                    let dr = deltas[l][r];
                    if dr == 0.0 {
                        continue;
                    }
                    for (gw, a) in g[r * d.cols..(r + 1) * d.cols].iter_mut().zip(input) {
                        *gw += dr * a;
                    }
                    g[d.w.len() + r] += dr;
                }
                if l > 0 {
                    let (lower, upper) = deltas.split_at_mut(l);
                    let below = &mut lower[l - 1];
                    below.iter_mut().for_each(|v| *v = 0.0);
                    for r in 0..d.rows {
                        let dr = upper[0][r];
                        for (c, w) in d.w[r * d.cols..(r + 1) * d.cols].iter().enumerate() {
                            below[c] += w * dr;
                        }
                    }
                    let act = self.layers[l - 1].act;
                    for (c, v) in below.iter_mut().enumerate() {
                        *v *= act.derivative(zs[l - 1][c]);
                    }
                }
            }
        }
        loss * norm
    }

    /// (MSE, MAE) over `rows`.
    fn errors(&self, states: &[State], controls: &[Control], rows: &[usize]) -> (f64, f64) {
        if rows.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let (mut zs, mut acts) = self.buffers();
        let (mut se, mut ae) = (0.0, 0.0);
        for &i in rows {
            self.forward(&states[i], &mut zs, &mut acts);
            let u = self.output(&acts);
            for k in 0..CONTROL_DIM {
                let e = u[k] - controls[i][k];
                se += e * e;
                ae += e.abs();
            }
        }
        let n = (rows.len() * CONTROL_DIM) as f64;
        (se / n, ae / n)
    }
}

fn check_dims(net: &NetSpec) -> Result<(), TrainError> {
    net.validate()?;
    if net.input_dim() != STATE_DIM || net.output_dim() != CONTROL_DIM {
        return Err(TrainError::Dimension {
            inputs: net.input_dim(),
            outputs: net.output_dim(),
        });
    }
    Ok(())
}

/// Trainable parameters of `net`, layer by layer: weights row-major, then
/// biases.
pub fn parameters(net: &NetSpec) -> Vec<f64> {
    Model::from_net(net).parameters()
}

/// Inverse of [`parameters`].
pub fn set_parameters(net: &mut NetSpec, theta: &[f64]) -> Result<(), TrainError> {
    let mut m = Model::from_net(net);
    if theta.len() != m.parameter_count() {
        return Err(TrainError::Options(format!(
            "{} parameters for a network with {}",
            theta.len(),
            m.parameter_count()
        )));
    }
    m.set_parameters(theta);
    m.write_back(net);
    Ok(())
}

/// Control-space mean squared error of `net` on the given pairs, and its
/// gradient with respect to [`parameters`].
pub fn loss_and_gradient(net: &NetSpec, states: &[State], controls: &[Control]) -> Result<(f64, Vec<f64>), TrainError> {
    check_dims(net)?;
    if states.is_empty() || states.len() != controls.len() {
        return Err(TrainError::Empty);
    }
    let m = Model::from_net(net);
    let rows: Vec<usize> = (0..states.len()).collect();
    let mut grad = vec![0.0; m.parameter_count()];
    let loss = m.loss_gradient(states, controls, &rows, &mut grad);
    Ok((loss, grad))
}

// Whole trajectories go to one side of the split, so held-out rows are not
// near-duplicates of training rows.
fn split(db: &Database, holdout: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let s = db.meta.samples_per_traj.max(1);
    let n_traj = db.len() / s;
    let mut order: Vec<usize> = (0..n_traj).collect();
    order.shuffle(rng);
    let held = if n_traj >= 2 {
        ((n_traj as f64 * holdout).round() as usize).clamp(usize::from(holdout > 0.0), n_traj - 1)
    } else {
        0
    };
    let rows = |ts: &[usize]| -> Vec<usize> { ts.iter().flat_map(|t| t * s..(t + 1) * s).collect() };
    (rows(&order[held..]), rows(&order[..held]))
}

/// Fits `net` to the database with Adam. The input and output maps are
/// left untouched. When the database has a single trajectory there is
/// nothing to hold out and the reported held-out errors are training
/// errors.
pub fn train(net: &NetSpec, db: &Database, opts: &TrainOptions) -> Result<(NetSpec, TrainReport), TrainError> {
    check_dims(net)?;
    opts.validate()?;
    if db.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut train_rows, mut held_rows) = split(db, opts.holdout, &mut rng);
    if held_rows.is_empty() {
        held_rows = train_rows.clone();
    }
    let mut model = Model::from_net(net);
    let mut theta = model.parameters();
    let mut grad = vec![0.0; theta.len()];
    let mut m1 = vec![0.0; theta.len()];
    let mut m2 = vec![0.0; theta.len()];
    let mut t = 0i32;
    let decay = (opts.final_learning_rate / opts.learning_rate).powf(1.0 / (opts.epochs.max(2) - 1) as f64);
    let mut metrics = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let lr = opts.learning_rate * decay.powi(epoch as i32);
        train_rows.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in train_rows.chunks(opts.batch) {
            let loss = model.loss_gradient(&db.states, &db.controls, batch, &mut grad);
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, loss });
            }
            sum += loss * batch.len() as f64;
            t += 1;
            let (c1, c2) = (1.0 - opts.beta1.powi(t), 1.0 - opts.beta2.powi(t));
            for k in 0..theta.len() {
                m1[k] = opts.beta1 * m1[k] + (1.0 - opts.beta1) * grad[k];
                m2[k] = opts.beta2 * m2[k] + (1.0 - opts.beta2) * grad[k] * grad[k];
                theta[k] -= lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + 1e-8);
            }
            model.set_parameters(&theta);
        }
        let (holdout_mse, holdout_mae) = model.errors(&db.states, &db.controls, &held_rows);
        if !holdout_mse.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                loss: holdout_mse,
            });
        }
        let row = EpochMetrics {
            epoch,
            learning_rate: lr,
            train_mse: sum / train_rows.len() as f64,
            holdout_mse,
            holdout_mae,
        };
        log::debug!("{row:?}");
        metrics.push(row);
    }
    let mut out = net.clone();
    model.write_back(&mut out);
    Ok((
        out,
        TrainReport {
            metrics,
            train_rows: train_rows.len(),
            holdout_rows: held_rows.len(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::database::DatabaseMeta;
    use crate::pipeline::SaturationStats;
    use crate::odeflow::QuadParams;
    use crate::pipeline::Bounds;
    use rand::Rng;

    fn toy_db(states: Vec<State>, controls: Vec<Control>, per_traj: usize) -> Database {
        let n = states.len();
        Database {
            states,
            controls,
            meta: DatabaseMeta {
                seed: 0,
                bounds: Bounds::default(),
                trajectories: n / per_traj,
                samples_per_traj: per_traj,
                failures: 0,
                params: QuadParams::default(),
                saturation: SaturationStats::default(),
                mean_tf: 0.0,
                max_tf: 0.0,
            },
        }
    }

    fn random_states(n: usize, seed: u64) -> Vec<State> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut x = [0.0; STATE_DIM];
                x.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
                x
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let states = random_states(7, 1);
        let controls: Vec<Control> = states.iter().map(|x| [0.3 + 0.1 * x[0], -0.2 * x[4]]).collect();
        let net = NetSpec::random(
            5,
            &[6],
            2,
            fit_input_map(&states),
            OutputMap::quad_controls(),
            4,
        )
        .unwrap();
        let (_, g) = loss_and_gradient(&net, &states, &controls).unwrap();
        let theta = parameters(&net);
        let h = 1e-6;
        for k in 0..theta.len() {
            let mut probe = net.clone();
            let mut tp = theta.clone();
            tp[k] += h;
            set_parameters(&mut probe, &tp).unwrap();
            let lp = loss_and_gradient(&probe, &states, &controls).unwrap().0;
            tp[k] -= 2.0 * h;
            set_parameters(&mut probe, &tp).unwrap();
            let lm = loss_and_gradient(&probe, &states, &controls).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-4 * fd.abs().max(1e-6), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn parameters_round_trip() {
        let mut net = NetSpec::random(5, &[4, 3], 2, InputMap::identity(5), OutputMap::quad_controls(), 2).unwrap();
        let theta: Vec<f64> = (0..parameters(&net).len()).map(|i| i as f64).collect();
        set_parameters(&mut net, &theta).unwrap();
        assert_eq!(parameters(&net), theta);
        assert_eq!(net.layers[0].weights[1][0], 5.0);
        assert!(set_parameters(&mut net, &theta[1..]).is_err());
    }

    #[test]
    fn realizable_targets_are_learned() {
        let states = random_states(4000, 2);
        let teacher = NetSpec::random(5, &[8], 2, fit_input_map(&states), OutputMap::quad_controls(), 9).unwrap();
        let controls: Vec<Control> = states
            .iter()
            .map(|x| {
                let u = teacher.forward(x).unwrap();
                [u[0], u[1]]
            })
            .collect();
        let db = toy_db(states, controls, 40);
        let student = NetSpec::random(5, &[16], 2, teacher.pre.clone(), OutputMap::quad_controls(), 1).unwrap();
        let opts = TrainOptions {
            epochs: 150,
            batch: 32,
            learning_rate: 1e-2,
            final_learning_rate: 1e-5,
            ..TrainOptions::default()
        };
        let (_, report) = train(&student, &db, &opts).unwrap();
        assert!(report.final_mae() < 1e-3, "{}", report.final_mae());
        assert_eq!(report.train_rows + report.holdout_rows, 4000);
    }

    #[test]
    fn divergence_is_reported() {
        let states = random_states(40, 3);
        let controls = vec![[f64::NAN, 0.0]; 40];
        let db = toy_db(states, controls, 10);
        let net = init_net(&db, &[4], 0).unwrap();
        assert!(matches!(
            train(&net, &db, &TrainOptions::default()),
            Err(TrainError::NonFinite { epoch: 0, .. })
        ));
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let db = toy_db(random_states(10, 0), vec![[0.5, 0.0]; 10], 10);
        let net = NetSpec::random(5, &[4], 3, InputMap::identity(5), OutputMap::identity(3), 0).unwrap();
        assert!(matches!(train(&net, &db, &TrainOptions::default()), Err(TrainError::Dimension { .. })));
    }
}
