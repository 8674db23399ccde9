//! SGD training loop: truncated BPTT over contiguous windows, exponential
//! per-epoch learning-rate decay, L2 weight decay on matrices, global-norm
//! gradient clipping, checkpointing, and CSV learning-curve logging.

use crate::data::batchify;
use crate::error::{Error, Result};
use crate::lm::{
    backward_window, evaluate_perplexity, forward_window, init_model, CarryState, DropoutMasks,
    ModelConfig, ModelParams,
};
use crate::rng::Rng;
use crate::serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Multiplied into the learning rate after every epoch; in (0, 1].
    pub lr_decay: f64,
    pub epochs: usize,
    pub window: usize,
    pub batch_size: usize,
    pub l2_lambda: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Validation/test perplexity is computed every this many epochs.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.5,
            lr_decay: 0.9,
            epochs: 10,
            window: 32,
            batch_size: 1,
            l2_lambda: 0.0,
            clip_norm: Some(10.0),
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.window == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::contract("TrainConfig", "counts must be positive"));
        }
        if !(0.0 < self.lr_decay && self.lr_decay <= 1.0) {
            return Err(Error::contract("TrainConfig", "lr_decay must lie in (0, 1]"));
        }
        if self.initial_lr <= 0.0 || self.l2_lambda < 0.0 {
            return Err(Error::contract("TrainConfig", "initial_lr > 0 and l2_lambda >= 0 required"));
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return Err(Error::contract("TrainConfig", "clip_norm must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub lr: f64,
    pub best_valid_ppl: f64,
}

impl TrainState {
    pub fn to_text(&self) -> String {
        format!(
            "epoch = {}\nlr = {}\nbest_valid_ppl = {}\n",
            self.epoch, self.lr, self.best_valid_ppl
        )
    }

    pub fn from_text(text: &str) -> Result<TrainState> {
        let mut epoch = None;
        let mut lr = None;
        let mut best = None;
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("TrainState", format!("bad line: {line}")))?;
            let v = v.trim();
            match k.trim() {
                "epoch" => epoch = Some(v.parse().map_err(|e| Error::parse("TrainState", format!("{e}")))?),
                "lr" => lr = Some(v.parse().map_err(|e| Error::parse("TrainState", format!("{e}")))?),
                "best_valid_ppl" => best = Some(v.parse().map_err(|e| Error::parse("TrainState", format!("{e}")))?),
                other => return Err(Error::parse("TrainState", format!("unknown key {other}"))),
            }
        }
        match (epoch, lr, best) {
            (Some(epoch), Some(lr), Some(best_valid_ppl)) => {
                Ok(TrainState { epoch, lr, best_valid_ppl })
            }
            _ => Err(Error::parse("TrainState", "missing key")),
        }
    }
}

/// Global-norm clip followed by the SGD update: matrices get L2 decay
/// (p ← p − lr·(g + λ·p)), biases do not. Returns the pre-clip global norm.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    lr: f64,
    l2_lambda: f64,
    clip_norm: Option<f64>,
) -> Result<f64> {
    let views = grads.tensors();
    let mut sq = 0.0;
    for t in &views {
        for &g in t.data {
            if !g.is_finite() {
                return Err(Error::numeric("sgd_step", format!("non-finite gradient in {}", t.name)));
            }
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    let scale = match clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    for (p, g) in params.tensors_mut().into_iter().zip(views) {
        debug_assert_eq!(p.name, g.name);
        let decay = if p.is_matrix { l2_lambda } else { 0.0 };
        for (pv, &gv) in p.data.iter_mut().zip(g.data) {
            *pv -= lr * (gv * scale + decay * *pv);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone)]
pub struct CorpusSplits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// One learning-curve row. Perplexity fields are None on epochs where
/// evaluation was skipped.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub valid_ppl: Option<f64>,
    pub test_ppl: Option<f64>,
    pub lr: f64,
}

pub fn learning_curve_csv(rows: &[LogRow], header_echo: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in header_echo {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out.push_str("epoch,step,train_loss,valid_ppl,test_ppl,lr\n");
    for r in rows {
        let fmt_opt = |o: Option<f64>| o.map_or(String::new(), |v| format!("{v:.6}"));
        let _ = writeln!(
            out,
            "{},{},{:.6},{},{},{}",
            r.epoch,
            r.step,
            r.train_loss,
            fmt_opt(r.valid_ppl),
            fmt_opt(r.test_ppl),
            r.lr
        );
    }
    out
}

pub struct TrainResult {
    /// Parameters at the best validation perplexity seen.
    pub best_params: ModelParams,
    pub final_params: ModelParams,
    pub state: TrainState,
    pub log: Vec<LogRow>,
    /// Mean training loss of every window step, in order, across all epochs.
    pub window_losses: Vec<f64>,
}

pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub state: PathBuf,
}

fn out_paths(dir: &Path) -> TrainOutputs {
    TrainOutputs {
        checkpoint: dir.join("checkpoint.rhn"),
        curve: dir.join("learning_curve.csv"),
        state: dir.join("train_state.txt"),
    }
}

/// Sequential window sweep per epoch (no shuffling; state carries within each
/// stream), lr decayed after each epoch, best-validation checkpoint retained.
/// On divergence the last-good checkpoint stays on disk and the call fails
/// with a numerical error.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    corpora: &CorpusSplits,
    out_dir: Option<&Path>,
    header_echo: &[(String, String)],
) -> Result<TrainResult> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let batches = batchify(&corpora.train, train_cfg.batch_size, train_cfg.window)?;
    let root = Rng::new(train_cfg.seed);
    let mut params = init_model(model_cfg, train_cfg.seed)?;
    let mut best_params = params.clone();
    let mut best_valid = f64::INFINITY;
    let mut log = Vec::new();
    let mut window_losses = Vec::new();
    let mut total_steps = 0usize;

    let paths = out_dir.map(out_paths);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    for epoch in 0..train_cfg.epochs {
        let lr = train_cfg.initial_lr * train_cfg.lr_decay.powi(epoch as i32);
        let mut carries: Vec<CarryState> =
            (0..train_cfg.batch_size).map(|_| CarryState::zeros(model_cfg.hidden)).collect();
        let epoch_rng = root.stream(1_000 + epoch as u64);
        let mut epoch_loss_sum = 0.0;

        for (w, batch) in batches.iter().enumerate() {
            let mut grad_sum = params.zeros_like();
            let mut loss_sum = 0.0;
            let window_rng = epoch_rng.stream(w as u64);
            for b in 0..train_cfg.batch_size {
                let masks = DropoutMasks::sample(model_cfg, &mut window_rng.stream(b as u64));
                let fw = forward_window(
                    &params,
                    model_cfg,
                    &batch.inputs[b],
                    &batch.targets[b],
                    &carries[b],
                    &masks,
                )?;
                if !fw.mean_loss.is_finite() {
                    return Err(Error::numeric(
                        "train",
                        format!("loss diverged at epoch {epoch}, window {w}"),
                    ));
                }
                let grads = backward_window(&params, model_cfg, &fw.cache, &masks)?;
                for (acc, g) in grad_sum.tensors_mut().into_iter().zip(grads.tensors()) {
                    for (a, &v) in acc.data.iter_mut().zip(g.data) {
                        *a += v;
                    }
                }
                loss_sum += fw.mean_loss;
                carries[b] = fw.carry_out;
            }
            if train_cfg.batch_size > 1 {
                let inv = 1.0 / train_cfg.batch_size as f64;
                for t in grad_sum.tensors_mut() {
                    for v in t.data {
                        *v *= inv;
                    }
                }
            }
            sgd_step(&mut params, &grad_sum, lr, train_cfg.l2_lambda, train_cfg.clip_norm)?;
            let mean_loss = loss_sum / train_cfg.batch_size as f64;
            epoch_loss_sum += mean_loss;
            window_losses.push(mean_loss);
            total_steps += 1;
        }

        let train_loss = epoch_loss_sum / batches.len() as f64;
        let eval_now = (epoch + 1) % train_cfg.eval_every == 0 || epoch + 1 == train_cfg.epochs;
        let (valid_ppl, test_ppl) = if eval_now {
            let vp = evaluate_perplexity(&params, model_cfg, &corpora.valid, train_cfg.window)?;
            let tp = evaluate_perplexity(&params, model_cfg, &corpora.test, train_cfg.window)?;
            if vp < best_valid {
                best_valid = vp;
                best_params = params.clone();
                if let Some(p) = &paths {
                    serialize::save_model(&p.checkpoint, &best_params, model_cfg)?;
                    std::fs::write(
                        &p.state,
                        TrainState { epoch, lr, best_valid_ppl: best_valid }.to_text(),
                    )?;
                }
            }
            (Some(vp), Some(tp))
        } else {
            (None, None)
        };
        log.push(LogRow { epoch, step: total_steps, train_loss, valid_ppl, test_ppl, lr });
    }

    if let Some(p) = &paths {
        std::fs::write(&p.curve, learning_curve_csv(&log, header_echo))?;
    }

    let state = TrainState {
        epoch: train_cfg.epochs - 1,
        lr: train_cfg.initial_lr * train_cfg.lr_decay.powi(train_cfg.epochs as i32 - 1),
        best_valid_ppl: best_valid,
    };
    Ok(TrainResult { best_params, final_params: params, state, log, window_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Matrix2D;

    fn tiny_model() -> (ModelConfig, ModelParams) {
        let cfg = ModelConfig::new(1, 3, 2, 4);
        let p = init_model(&cfg, 1).unwrap();
        (cfg, p)
    }

    #[test]
    fn zero_lr_is_noop() {
        let (_, mut p) = tiny_model();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.w_out.data[0] = 3.0;
        sgd_step(&mut p, &g, 0.0, 0.1, Some(1.0)).unwrap();
        for (a, b) in p.tensors().iter().zip(before.tensors().iter()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn plain_sgd_update() {
        let (_, mut p) = tiny_model();
        let w0 = p.w_out.data[0];
        let mut g = p.zeros_like();
        g.w_out.data[0] = 2.0;
        sgd_step(&mut p, &g, 0.1, 0.0, None).unwrap();
        assert!((p.w_out.data[0] - (w0 - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn clipping_halves_oversized_gradients() {
        let (_, mut p) = tiny_model();
        let w0 = p.w_out.data[0];
        let mut g = p.zeros_like();
        // global norm 10: two entries of sqrt(50)
        g.w_out.data[0] = 50f64.sqrt();
        g.w_out.data[1] = 50f64.sqrt();
        let norm = sgd_step(&mut p, &g, 1.0, 0.0, Some(5.0)).unwrap();
        assert!((norm - 10.0).abs() < 1e-12);
        assert!((p.w_out.data[0] - (w0 - 50f64.sqrt() / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn clip_is_identity_under_threshold() {
        let (_, mut p) = tiny_model();
        let w0 = p.w_out.data[0];
        let mut g = p.zeros_like();
        g.w_out.data[0] = 1.0;
        sgd_step(&mut p, &g, 1.0, 0.0, Some(5.0)).unwrap();
        assert_eq!(p.w_out.data[0], w0 - 1.0);
    }

    #[test]
    fn l2_shrinks_matrices_not_biases() {
        let (_, mut p) = tiny_model();
        p.b_out = vec![0.7; p.b_out.len()];
        let w0 = p.w_out.data.clone();
        let g = p.zeros_like();
        sgd_step(&mut p, &g, 0.5, 0.2, None).unwrap();
        for (a, &b) in p.w_out.data.iter().zip(&w0) {
            assert!((a - b * (1.0 - 0.5 * 0.2)).abs() < 1e-15);
        }
        assert!(p.b_out.iter().all(|&b| b == 0.7));
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let (_, mut p) = tiny_model();
        let mut g = p.zeros_like();
        g.input.w_t.data[0] = f64::NAN;
        let err = sgd_step(&mut p, &g, 0.1, 0.0, None).unwrap_err();
        assert!(err.to_string().contains("input.w_t"), "{err}");
    }

    fn tiny_splits(len: usize, vocab: usize) -> CorpusSplits {
        let gen = |off: usize| (0..len).map(|i| (i * 7 + off) % vocab).collect::<Vec<_>>();
        CorpusSplits { train: gen(0), valid: gen(1), test: gen(2) }
    }

    #[test]
    fn lr_schedule_is_geometric() {
        let cfg = ModelConfig::new(1, 4, 3, 5);
        let tc = TrainConfig {
            initial_lr: 1.0,
            lr_decay: 0.5,
            epochs: 4,
            window: 4,
            batch_size: 1,
            clip_norm: Some(10.0),
            ..TrainConfig::default()
        };
        let res = train(&cfg, &tc, &tiny_splits(60, 5), None, &[]).unwrap();
        let lrs: Vec<f64> = res.log.iter().map(|r| r.lr).collect();
        assert_eq!(lrs, vec![1.0, 0.5, 0.25, 0.125]);
    }

    #[test]
    fn training_reduces_loss_on_repetitive_corpus() {
        let cfg = ModelConfig::new(1, 8, 8, 3);
        let corpus: Vec<usize> = (0..240).map(|i| i % 3).collect();
        let splits =
            CorpusSplits { train: corpus.clone(), valid: corpus.clone(), test: corpus };
        let tc = TrainConfig {
            initial_lr: 0.5,
            lr_decay: 1.0,
            epochs: 6,
            window: 8,
            batch_size: 1,
            seed: 3,
            ..TrainConfig::default()
        };
        let res = train(&cfg, &tc, &splits, None, &[]).unwrap();
        let first = res.log.first().unwrap().train_loss;
        let last = res.log.last().unwrap().train_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        assert!(res.state.best_valid_ppl < 3.0);
    }

    #[test]
    fn identical_seeds_identical_curves() {
        let cfg = ModelConfig::new(2, 4, 4, 5);
        let tc = TrainConfig { epochs: 2, window: 5, seed: 9, ..TrainConfig::default() };
        let splits = tiny_splits(80, 5);
        let a = train(&cfg, &tc, &splits, None, &[("seed".into(), "9".into())]).unwrap();
        let b = train(&cfg, &tc, &splits, None, &[("seed".into(), "9".into())]).unwrap();
        assert_eq!(
            learning_curve_csv(&a.log, &[("seed".into(), "9".into())]),
            learning_curve_csv(&b.log, &[("seed".into(), "9".into())])
        );
    }

    #[test]
    fn divergent_model_aborts() {
        let cfg = ModelConfig::new(1, 4, 3, 5);
        let tc = TrainConfig { initial_lr: 1e9, epochs: 3, window: 4, clip_norm: None, ..TrainConfig::default() };
        let res = train(&cfg, &tc, &tiny_splits(60, 5), None, &[]);
        assert!(matches!(res, Err(Error::Numeric { .. })));
    }

    #[test]
    fn train_state_round_trip() {
        let s = TrainState { epoch: 7, lr: 0.03125, best_valid_ppl: 41.5 };
        let t = TrainState::from_text(&s.to_text()).unwrap();
        assert_eq!(t.epoch, 7);
        assert_eq!(t.lr, 0.03125);
        assert_eq!(t.best_valid_ppl, 41.5);
    }

    #[test]
    fn l2_with_zero_grads_geometric_shrink() {
        let (_, mut p) = tiny_model();
        p.w_out = Matrix2D::uniform(4, 3, 0.5, &mut Rng::new(5));
        let w0 = p.w_out.data.clone();
        let g = p.zeros_like();
        let (lr, lam) = (0.1, 0.3);
        for _ in 0..3 {
            sgd_step(&mut p, &g, lr, lam, Some(100.0)).unwrap();
        }
        let factor = (1.0 - lr * lam).powi(3);
        for (a, &b) in p.w_out.data.iter().zip(&w0) {
            assert!((a - b * factor).abs() < 1e-12);
        }
    }
}
