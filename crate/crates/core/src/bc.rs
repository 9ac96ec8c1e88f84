//! Skill cloning: regress Skill-GP via-point shifts from task state.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{aligned_base, SkillGpSolver};
use crate::envs::{nominal_tc, sample_tc, EnvKind, TaskConfiguration};
use crate::error::{invalid, numeric, Error, Result};
use crate::nn::{mse, train_step, Activation, AdamConfig, Loss, Network, NetworkDocument, Normalizer, OptimizerState};
use crate::skill::SkillModel;

/// Largest applied via-point shift per component, in metres.
pub const ACTION_BOUND: f64 = 0.04;
pub const STATE_DIM: usize = 6;
pub const MIN_PAIRS: usize = 100;

/// Tool-to-object and object-to-goal vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcState {
    pub d_o: [f64; 3],
    pub d_g: [f64; 3],
}

impl BcState {
    pub fn from_tc(tc: &TaskConfiguration) -> Self {
        let (s, o, g) = (tc.start_pose.position, tc.object_pose.position, tc.goal_pose.position);
        Self {
            d_o: [o[0] - s[0], o[1] - s[1], o[2] - s[2]],
            d_g: [g[0] - o[0], g[1] - o[1], g[2] - o[2]],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.d_o.iter().chain(&self.d_g).copied().collect()
    }
}

/// Expert state-action pairs; actions are axis-major position shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcDataset {
    pub states: Vec<BcState>,
    pub actions: Vec<Vec<f64>>,
    /// Task configurations dropped because Skill-GP did not converge.
    pub skipped: usize,
    /// Action components that had to be clamped to the bound.
    pub clamped: usize,
}

impl BcDataset {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Writes columns `s1..s6, dg1..dgK`.
    pub fn save_csv<W: Write>(&self, writer: W) -> Result<()> {
        let k = self.actions.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=STATE_DIM)
            .map(|i| format!("s{i}"))
            .chain((1..=k).map(|i| format!("dg{i}")))
            .collect();
        w.write_record(&header).map_err(csv_error)?;
        for (s, a) in self.states.iter().zip(&self.actions) {
            let row: Vec<String> = s.to_vec().iter().chain(a).map(|v| v.to_string()).collect();
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let width = r.headers().map_err(csv_error)?.len();
        if width <= STATE_DIM {
            return Err(invalid("dataset has no action columns"));
        }
        let mut ds = BcDataset {
            states: Vec::new(),
            actions: Vec::new(),
            skipped: 0,
            clamped: 0,
        };
        for (i, rec) in r.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(csv_error)?;
            if rec.len() != width {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {width} fields, found {}", rec.len()),
                });
            }
            let vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
            ds.states.push(BcState {
                d_o: [vals[0], vals[1], vals[2]],
                d_g: [vals[3], vals[4], vals[5]],
            });
            ds.actions.push(vals[STATE_DIM..].to_vec());
        }
        Ok(ds)
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Runs Skill-GP on `n_pairs` task configurations (the nominal one first)
/// and records `ΔΓ = Γ* − Γ_aligned` for each.
pub fn generate_expert_dataset(
    env: EnvKind,
    solver: &SkillGpSolver,
    n_pairs: usize,
    max_offset: f64,
    seed: u64,
) -> Result<BcDataset> {
    if n_pairs < MIN_PAIRS {
        return Err(invalid(format!("need at least {MIN_PAIRS} pairs, got {n_pairs}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tcs = vec![nominal_tc(env)];
    for _ in 1..n_pairs {
        tcs.push(sample_tc(env, &mut rng, max_offset)?);
    }
    let skill = solver.skill();
    type Pair = (BcState, Vec<f64>);
    let results: Vec<Result<Option<Pair>>> = tcs
        .par_iter()
        .map(|tc| {
            let (anchors, base) = aligned_base(skill, tc)?;
            let res = solver.solve(&anchors)?;
            if !res.converged {
                return Ok(None);
            }
            Ok(Some((BcState::from_tc(tc), res.via.position_difference(&base))))
        })
        .collect();
    let mut ds = BcDataset {
        states: Vec::with_capacity(n_pairs),
        actions: Vec::with_capacity(n_pairs),
        skipped: 0,
        clamped: 0,
    };
    for r in results {
        match r? {
            Some((state, mut action)) => {
                for a in action.iter_mut() {
                    if a.abs() > ACTION_BOUND {
                        ds.clamped += 1;
                        *a = a.clamp(-ACTION_BOUND, ACTION_BOUND);
                    }
                }
                ds.states.push(state);
                ds.actions.push(action);
            }
            None => ds.skipped += 1,
        }
    }
    if ds.skipped > 0 {
        log::warn!("{} task configurations skipped after Skill-GP non-convergence", ds.skipped);
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            learning_rate: 3e-4,
            hidden: vec![256, 256],
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcTrainReport {
    /// Mean batch loss per epoch in squared metres.
    pub epoch_losses: Vec<f64>,
    pub train_mse: f64,
    pub holdout_mse: f64,
    pub train_pairs: usize,
    pub holdout_pairs: usize,
}

/// Regression policy mapping [`BcState`] to clamped via-point shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct BcPolicy {
    pub normalizer: Normalizer,
    pub net: Network,
    pub action_bound: f64,
}

impl BcPolicy {
    /// Predicted shifts in metres, clamped to the action bound.
    pub fn predict(&self, state: &BcState) -> Result<Vec<f64>> {
        let out = self.net.forward(&self.normalizer.apply(&state.to_vec()))?;
        let b = self.action_bound;
        Ok(out.iter().map(|v| (v * b).clamp(-b, b)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&BcPolicyDocument {
            normalizer: self.normalizer.clone(),
            action_bound: self.action_bound,
            network: self.net.to_document(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BcPolicyDocument = serde_json::from_str(text)?;
        let net = Network::from_document(&doc.network)?;
        if net.input_dim() != STATE_DIM || doc.normalizer.mean.len() != STATE_DIM {
            return Err(invalid("checkpoint is not a cloning policy"));
        }
        Ok(Self {
            normalizer: doc.normalizer,
            net,
            action_bound: doc.action_bound,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BcPolicyDocument {
    normalizer: Normalizer,
    action_bound: f64,
    network: NetworkDocument,
}

fn action_matrix(actions: &[&Vec<f64>], bound: f64) -> DMatrix<f64> {
    let k = actions[0].len();
    DMatrix::from_fn(actions.len(), k, |r, c| actions[r][c] / bound)
}

/// Trains the clone on a seeded 90/10 split.
pub fn train_clone(ds: &BcDataset, cfg: &BcConfig) -> Result<(BcPolicy, BcTrainReport)> {
    if ds.len() < 10 {
        return Err(invalid(format!("dataset too small: {} pairs", ds.len())));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(invalid("epochs and batch size must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(invalid("holdout fraction must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((ds.len() as f64) * cfg.holdout_fraction).round() as usize;
    let (hold_idx, train_idx) = order.split_at(n_hold);

    let states: Vec<Vec<f64>> = ds.states.iter().map(BcState::to_vec).collect();
    let train_states: Vec<Vec<f64>> = train_idx.iter().map(|&i| states[i].clone()).collect();
    let normalizer = Normalizer::fit(&train_states)?;
    let k = ds.actions[0].len();
    let mut sizes = vec![STATE_DIM];
    sizes.extend(&cfg.hidden);
    sizes.push(k);
    let mut net = Network::new(&sizes, Activation::Relu, Activation::Linear, &mut rng)?;
    let mut opt = OptimizerState::new(
        &net,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let b2 = ACTION_BOUND * ACTION_BOUND;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut shuffled = train_idx.to_vec();
    for epoch in 0..cfg.epochs {
        shuffled.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in shuffled.chunks(cfg.batch_size) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| states[i].clone()).collect();
            let acts: Vec<&Vec<f64>> = chunk.iter().map(|&i| &ds.actions[i]).collect();
            let x = normalizer.apply_rows(&rows);
            let y = action_matrix(&acts, ACTION_BOUND);
            total += train_step(&mut net, &x, &y, Loss::Mse, &mut opt)? * b2;
            batches += 1;
        }
        let mean = total / batches as f64;
        if epoch > 0 && mean > 10.0 * epoch_losses[0] {
            return Err(numeric(format!("cloning diverged at epoch {epoch}: loss {mean:e}")));
        }
        epoch_losses.push(mean);
    }
    let policy = BcPolicy {
        normalizer,
        net,
        action_bound: ACTION_BOUND,
    };
    let eval = |idx: &[usize]| -> Result<f64> {
        if idx.is_empty() {
            return Ok(f64::NAN);
        }
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| states[i].clone()).collect();
        let acts: Vec<&Vec<f64>> = idx.iter().map(|&i| &ds.actions[i]).collect();
        let pred = policy.net.forward_batch(&policy.normalizer.apply_rows(&rows))?;
        Ok(mse(&pred, &action_matrix(&acts, ACTION_BOUND)).0 * b2)
    };
    let report = BcTrainReport {
        train_mse: eval(train_idx)?,
        holdout_mse: eval(hold_idx)?,
        train_pairs: train_idx.len(),
        holdout_pairs: hold_idx.len(),
        epoch_losses,
    };
    Ok((policy, report))
}

/// Applies the clone's shifts to the aligned via-points for `tc`.
pub fn clone_adapt(policy: &BcPolicy, skill: &SkillModel, tc: &TaskConfiguration) -> Result<SkillModel> {
    let (_, base) = aligned_base(skill, tc)?;
    let shifts = policy.predict(&BcState::from_tc(tc))?;
    skill.with_via(base.with_position_shifts(&shifts, ACTION_BOUND)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::tc_with_offset;

    fn linear_dataset(n: usize) -> BcDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ds = BcDataset {
            states: Vec::new(),
            actions: Vec::new(),
            skipped: 0,
            clamped: 0,
        };
        use rand::Rng;
        for _ in 0..n {
            let d_o = [rng.random_range(0.1..0.4), rng.random_range(-0.2..0.2), -0.2];
            let d_g = [rng.random_range(0.2..0.4), rng.random_range(-0.05..0.05), 0.0];
            let s = BcState { d_o, d_g };
            let a = (0..9)
                .map(|k| 0.02 * (d_o[1] + 0.5 * d_g[k % 2] - 0.1 * (k as f64) * d_o[0]))
                .collect();
            ds.states.push(s);
            ds.actions.push(a);
        }
        ds
    }

    #[test]
    fn linear_targets_are_fit() {
        let ds = linear_dataset(600);
        let cfg = BcConfig {
            epochs: 150,
            batch_size: 64,
            learning_rate: 1e-3,
            hidden: vec![64, 64],
            ..BcConfig::default()
        };
        let (_, rep) = train_clone(&ds, &cfg).unwrap();
        assert!(rep.holdout_mse < 1e-5, "holdout {}", rep.holdout_mse);
    }

    #[test]
    fn csv_round_trip() {
        let ds = linear_dataset(20);
        let mut buf = Vec::new();
        ds.save_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("s1,s2,s3,s4,s5,s6,dg1,"));
        let back = BcDataset::load_csv(buf.as_slice()).unwrap();
        assert_eq!(back.states, ds.states);
        assert_eq!(back.actions, ds.actions);
    }

    #[test]
    fn state_from_offset_tc() {
        let a = BcState::from_tc(&tc_with_offset(EnvKind::SCpt, [0.0; 2], [0.0; 2]));
        let b = BcState::from_tc(&tc_with_offset(EnvKind::SCpt, [0.1, -0.05], [0.0; 2]));
        assert!((b.d_o[0] - a.d_o[0] - 0.1).abs() < 1e-12);
        assert!((b.d_o[1] - a.d_o[1] + 0.05).abs() < 1e-12);
        assert!((b.d_g[0] - a.d_g[0]).abs() < 1e-12);
    }

    #[test]
    fn predictions_are_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::new(&[STATE_DIM, 4], Activation::Linear, Activation::Linear, &mut rng).unwrap();
        for l in net.layers_mut() {
            l.weights.fill(0.0);
            l.biases.copy_from_slice(&[25.0, -25.0, 0.5, -0.5]);
        }
        let p = BcPolicy {
            normalizer: Normalizer::identity(STATE_DIM),
            net,
            action_bound: ACTION_BOUND,
        };
        let out = p.predict(&BcState { d_o: [0.0; 3], d_g: [0.0; 3] }).unwrap();
        assert_eq!(out, vec![0.04, -0.04, 0.02, -0.02]);
    }
}
