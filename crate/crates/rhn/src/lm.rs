//! Full language model: embedding lookup → one RHN cell (optionally followed
//! by an HSG cell) unrolled over a truncated-BPTT window → output projection
//! → softmax cross-entropy.
//!
//! With HSG enabled, the state entering the RHN at step t is ŝ^[t−1] (the HSG
//! output), and the output projection at step t reads ŝ^[t]. Without HSG both
//! roles fall to s_L. Dropout is variational: one mask per site per window,
//! reused at every time step.

use crate::error::{Error, Result};
use crate::hsg::{hsg_backward, hsg_forward, HsgParams, HsgStepCache};
use crate::rhn::{
    rhn_cell_backward, rhn_cell_forward, RhnGrads, RhnInputParams, RhnLayerParams, RhnStepCache,
};
use crate::rng::Rng;
use crate::tensor::{add_assign, softmax_xent, Matrix2D, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub depth: usize,
    pub hidden: usize,
    pub embed: usize,
    pub vocab: usize,
    pub coupled: bool,
    pub use_hsg: bool,
    pub dropout_embed: f64,
    pub dropout_state: f64,
    pub dropout_output: f64,
    pub gate_bias_init: f64,
    /// Checkpoint payload precision. In-memory math is always f64.
    pub precision: Precision,
}

impl ModelConfig {
    pub fn new(depth: usize, hidden: usize, embed: usize, vocab: usize) -> Self {
        ModelConfig {
            depth,
            hidden,
            embed,
            vocab,
            coupled: true,
            use_hsg: false,
            dropout_embed: 0.0,
            dropout_state: 0.0,
            dropout_output: 0.0,
            gate_bias_init: -2.5,
            precision: Precision::F64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.hidden == 0 || self.embed == 0 || self.vocab == 0 {
            return Err(Error::contract(
                "ModelConfig",
                "depth, hidden, embed, and vocab must all be positive",
            ));
        }
        for (name, r) in [
            ("dropout_embed", self.dropout_embed),
            ("dropout_state", self.dropout_state),
            ("dropout_output", self.dropout_output),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::contract(
                    "ModelConfig",
                    format!("{name} must lie in [0, 1), got {r}"),
                ));
            }
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (n, m, v, l) = (self.hidden, self.embed, self.vocab, self.depth);
        let gates = if self.coupled { 2 } else { 3 };
        let embedding = v * m;
        let input = gates * n * m;
        let layers = l * gates * (n * n + n);
        let hsg = if self.use_hsg { 2 * n * n + n } else { 0 };
        let output = v * n + v;
        embedding + input + layers + hsg + output
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub embedding: Matrix2D, // V x m, one row per token
    pub input: RhnInputParams,
    pub layers: Vec<RhnLayerParams>,
    pub hsg: Option<HsgParams>,
    pub w_out: Matrix2D, // V x n
    pub b_out: Vector,   // V
}

/// Deterministic initialization. Matrices are uniform in ±1/√fan_in; gate
/// biases (b_T and b_G) start at `gate_bias_init` so the gates open slowly
/// from a nearly-closed position; all other biases start at zero.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let root = Rng::new(seed);
    let (n, m, v) = (config.hidden, config.embed, config.vocab);
    let embedding = Matrix2D::uniform(v, m, 1.0 / (m as f64).sqrt(), &mut root.stream(1));
    let input = RhnInputParams::init(n, m, config.coupled, &mut root.stream(2));
    let layers = (0..config.depth)
        .map(|l| {
            RhnLayerParams::init(
                n,
                config.coupled,
                config.gate_bias_init,
                &mut root.stream(100 + l as u64),
            )
        })
        .collect();
    let hsg = config
        .use_hsg
        .then(|| HsgParams::init(n, config.gate_bias_init, &mut root.stream(3)));
    let w_out = Matrix2D::uniform(v, n, 1.0 / (n as f64).sqrt(), &mut root.stream(4));
    let b_out = vec![0.0; v];
    Ok(ModelParams { embedding, input, layers, hsg, w_out, b_out })
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            embedding: Matrix2D::zeros(self.embedding.rows, self.embedding.cols),
            input: self.input.zeros_like(),
            layers: self.layers.iter().map(|l| l.zeros_like()).collect(),
            hsg: self.hsg.as_ref().map(|h| h.zeros_like()),
            w_out: Matrix2D::zeros(self.w_out.rows, self.w_out.cols),
            b_out: vec![0.0; self.b_out.len()],
        }
    }

    /// Pin the HSG gate fully open or closed. Errors on a non-HSG model.
    pub fn force_hsg_gate(&mut self, open: bool) -> Result<()> {
        match self.hsg.as_mut() {
            Some(h) => {
                h.force_gate(open);
                Ok(())
            }
            None => Err(Error::contract("force_hsg_gate", "model has no HSG cell")),
        }
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> Option<String> {
        self.tensors().iter().find(|t| !t.data.iter().all(|x| x.is_finite())).map(|t| t.name.clone())
    }
}

/// Read-only view of one named tensor, used by the optimizer and serializer.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
    /// True for weight matrices (L2 decay applies), false for biases.
    pub is_matrix: bool,
}

pub struct TensorViewMut<'a> {
    pub name: String,
    pub data: &'a mut [f64],
    pub is_matrix: bool,
}

impl ModelParams {
    /// Tensors in a fixed, documented order; `tensors` and `tensors_mut`
    /// enumerate identically so two models of the same shape zip by index.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        fn push<'a>(
            out: &mut Vec<TensorView<'a>>,
            name: String,
            shape: Vec<usize>,
            data: &'a [f64],
            is_matrix: bool,
        ) {
            out.push(TensorView { name, shape, data, is_matrix });
        }
        push(&mut out, "embedding".into(), vec![self.embedding.rows, self.embedding.cols], &self.embedding.data, true);
        push(&mut out, "input.w_h".into(), vec![self.input.w_h.rows, self.input.w_h.cols], &self.input.w_h.data, true);
        push(&mut out, "input.w_t".into(), vec![self.input.w_t.rows, self.input.w_t.cols], &self.input.w_t.data, true);
        if let Some(wc) = &self.input.w_c {
            push(&mut out, "input.w_c".into(), vec![wc.rows, wc.cols], &wc.data, true);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            push(&mut out, format!("layer{l}.r_h"), vec![layer.r_h.rows, layer.r_h.cols], &layer.r_h.data, true);
            push(&mut out, format!("layer{l}.r_t"), vec![layer.r_t.rows, layer.r_t.cols], &layer.r_t.data, true);
            if let Some(rc) = &layer.r_c {
                push(&mut out, format!("layer{l}.r_c"), vec![rc.rows, rc.cols], &rc.data, true);
            }
            push(&mut out, format!("layer{l}.b_h"), vec![layer.b_h.len()], &layer.b_h, false);
            push(&mut out, format!("layer{l}.b_t"), vec![layer.b_t.len()], &layer.b_t, false);
            if let Some(bc) = &layer.b_c {
                push(&mut out, format!("layer{l}.b_c"), vec![bc.len()], bc, false);
            }
        }
        if let Some(h) = &self.hsg {
            push(&mut out, "hsg.w_r".into(), vec![h.w_r.rows, h.w_r.cols], &h.w_r.data, true);
            push(&mut out, "hsg.w_f".into(), vec![h.w_f.rows, h.w_f.cols], &h.w_f.data, true);
            push(&mut out, "hsg.b_g".into(), vec![h.b_g.len()], &h.b_g, false);
        }
        push(&mut out, "output.w".into(), vec![self.w_out.rows, self.w_out.cols], &self.w_out.data, true);
        push(&mut out, "output.b".into(), vec![self.b_out.len()], &self.b_out, false);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let mut out = Vec::new();
        fn push<'a>(out: &mut Vec<TensorViewMut<'a>>, name: String, data: &'a mut [f64], is_matrix: bool) {
            out.push(TensorViewMut { name, data, is_matrix });
        }
        push(&mut out, "embedding".into(), &mut self.embedding.data, true);
        push(&mut out, "input.w_h".into(), &mut self.input.w_h.data, true);
        push(&mut out, "input.w_t".into(), &mut self.input.w_t.data, true);
        if let Some(wc) = &mut self.input.w_c {
            push(&mut out, "input.w_c".into(), &mut wc.data, true);
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            push(&mut out, format!("layer{l}.r_h"), &mut layer.r_h.data, true);
            push(&mut out, format!("layer{l}.r_t"), &mut layer.r_t.data, true);
            if let Some(rc) = &mut layer.r_c {
                push(&mut out, format!("layer{l}.r_c"), &mut rc.data, true);
            }
            push(&mut out, format!("layer{l}.b_h"), &mut layer.b_h, false);
            push(&mut out, format!("layer{l}.b_t"), &mut layer.b_t, false);
            if let Some(bc) = &mut layer.b_c {
                push(&mut out, format!("layer{l}.b_c"), bc, false);
            }
        }
        if let Some(h) = &mut self.hsg {
            push(&mut out, "hsg.w_r".into(), &mut h.w_r.data, true);
            push(&mut out, "hsg.w_f".into(), &mut h.w_f.data, true);
            push(&mut out, "hsg.b_g".into(), &mut h.b_g, false);
        }
        push(&mut out, "output.w".into(), &mut self.w_out.data, true);
        push(&mut out, "output.b".into(), &mut self.b_out, false);
        out
    }
}

/// Per-window variational dropout masks: each site's mask is sampled once and
/// reused at every time step. Entries are 0 or 1/(1−rate) (inverted scaling).
#[derive(Debug, Clone, Default)]
pub struct DropoutMasks {
    pub embed: Option<Vector>,
    pub state: Option<Vector>,
    pub output: Option<Vector>,
}

impl DropoutMasks {
    pub fn sample(config: &ModelConfig, rng: &mut Rng) -> Self {
        let site = |len: usize, rate: f64, rng: &mut Rng| -> Option<Vector> {
            if rate == 0.0 {
                return None;
            }
            let keep = 1.0 - rate;
            Some((0..len).map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 }).collect())
        };
        DropoutMasks {
            embed: site(config.embed, config.dropout_embed, rng),
            state: site(config.hidden, config.dropout_state, rng),
            output: site(config.hidden, config.dropout_output, rng),
        }
    }

    pub fn none() -> Self {
        DropoutMasks::default()
    }
}

fn apply_mask(v: &[f64], mask: &Option<Vector>) -> Vector {
    match mask {
        Some(m) => v.iter().zip(m).map(|(x, k)| x * k).collect(),
        None => v.to_vec(),
    }
}

fn mask_grad(g: &mut [f64], mask: &Option<Vector>) {
    if let Some(m) = mask {
        for (x, k) in g.iter_mut().zip(m) {
            *x *= k;
        }
    }
}

/// State carried between consecutive windows. `s` is the RHN output state;
/// `s_hat` is the HSG output state (equal to `s` in a non-HSG model).
#[derive(Debug, Clone, PartialEq)]
pub struct CarryState {
    pub s: Vector,
    pub s_hat: Vector,
}

impl CarryState {
    pub fn zeros(hidden: usize) -> Self {
        CarryState { s: vec![0.0; hidden], s_hat: vec![0.0; hidden] }
    }
}

/// Everything one forward window saves for the exact backward pass.
pub struct StepCache {
    pub input_token: usize,
    pub target_token: usize,
    pub embedded: Vector, // after embed mask
    pub rhn: RhnStepCache,
    pub hsg: Option<HsgStepCache>,
    pub state_read: Vector, // state entering the projection, after output mask
    pub loss: f64,
    pub grad_logits: Vector,
}

pub struct UnrolledCache {
    pub steps: Vec<StepCache>,
    pub carry_in: CarryState,
}

pub struct WindowForward {
    pub mean_loss: f64,
    pub logits: Vec<Vector>,
    pub cache: UnrolledCache,
    pub carry_out: CarryState,
}

pub fn forward_window(
    params: &ModelParams,
    config: &ModelConfig,
    tokens_in: &[usize],
    tokens_target: &[usize],
    carry: &CarryState,
    masks: &DropoutMasks,
) -> Result<WindowForward> {
    if tokens_in.len() != tokens_target.len() || tokens_in.is_empty() {
        return Err(Error::contract(
            "forward_window",
            "input and target sequences must be non-empty and equal length",
        ));
    }
    if carry.s.len() != config.hidden || carry.s_hat.len() != config.hidden {
        return Err(Error::contract("forward_window", "carry state dimension mismatch"));
    }
    let mut steps = Vec::with_capacity(tokens_in.len());
    let mut logits_out = Vec::with_capacity(tokens_in.len());
    let mut state = carry.clone();
    let mut total_loss = 0.0;

    for (&tok, &tgt) in tokens_in.iter().zip(tokens_target) {
        if tok >= config.vocab || tgt >= config.vocab {
            return Err(Error::contract(
                "forward_window",
                format!("token id out of range for vocab {}", config.vocab),
            ));
        }
        let embedded = apply_mask(params.embedding.row(tok), &masks.embed);

        // The state feeding the recurrence: ŝ with HSG, s_L without.
        let recur_in = if config.use_hsg { &state.s_hat } else { &state.s };
        let masked_in = apply_mask(recur_in, &masks.state);
        let (s_l, rhn_cache) =
            rhn_cell_forward(&embedded, &masked_in, &params.input, &params.layers, config.coupled)?;

        let (read_state, hsg_cache) = if config.use_hsg {
            let h = params.hsg.as_ref().ok_or_else(|| {
                Error::contract("forward_window", "use_hsg set but model has no HSG params")
            })?;
            let (s_hat, hc) = hsg_forward(&state.s_hat, &s_l, h)?;
            state.s_hat = s_hat.clone();
            state.s = s_l;
            (s_hat, Some(hc))
        } else {
            state.s = s_l.clone();
            state.s_hat = s_l.clone();
            (s_l, None)
        };

        let state_read = apply_mask(&read_state, &masks.output);
        let mut logits = params.w_out.matvec(&state_read)?;
        add_assign(&mut logits, &params.b_out);
        let (loss, grad_logits) = softmax_xent(&logits, tgt)?;
        total_loss += loss;

        steps.push(StepCache {
            input_token: tok,
            target_token: tgt,
            embedded,
            rhn: rhn_cache,
            hsg: hsg_cache,
            state_read,
            loss,
            grad_logits,
        });
        logits_out.push(logits);
    }

    let mean_loss = total_loss / tokens_in.len() as f64;
    Ok(WindowForward {
        mean_loss,
        logits: logits_out,
        cache: UnrolledCache { steps, carry_in: carry.clone() },
        carry_out: state,
    })
}

/// Options for the shared backward loop. `only_step` restricts the loss to a
/// single time step (used by the gradient probe); `loss_scale` multiplies
/// every per-token loss gradient (1/T gives the mean-loss gradient).
pub struct BackwardOptions {
    pub only_step: Option<usize>,
    pub loss_scale: f64,
    pub record_state_grads: bool,
}

pub struct WindowBackward {
    pub grads: ModelParams,
    /// When requested: grad of the (restricted) loss wrt the state emitted at
    /// each step (ŝ^[t] with HSG, s_L^[t] without), indexed by step.
    pub state_grads: Option<Vec<Vector>>,
    /// Gradient wrt the carry-in state. Discarded by the trainer (truncation)
    /// but reported for diagnostics.
    pub grad_carry_in: Vector,
}

pub fn backward_window(
    params: &ModelParams,
    config: &ModelConfig,
    cache: &UnrolledCache,
    masks: &DropoutMasks,
) -> Result<ModelParams> {
    let opts = BackwardOptions {
        only_step: None,
        loss_scale: 1.0 / cache.steps.len() as f64,
        record_state_grads: false,
    };
    Ok(backward_window_opts(params, config, cache, masks, &opts)?.grads)
}

pub fn backward_window_opts(
    params: &ModelParams,
    config: &ModelConfig,
    cache: &UnrolledCache,
    masks: &DropoutMasks,
    opts: &BackwardOptions,
) -> Result<WindowBackward> {
    let t_len = cache.steps.len();
    if t_len == 0 {
        return Err(Error::contract("backward_window", "empty cache"));
    }
    if let Some(k) = opts.only_step {
        if k >= t_len {
            return Err(Error::contract(
                "backward_window",
                format!("only_step {k} out of range for window of {t_len}"),
            ));
        }
    }
    let n = config.hidden;
    let mut grads = params.zeros_like();
    let mut state_grads = opts.record_state_grads.then(|| vec![Vec::new(); t_len]);

    // Gradient wrt the state emitted at the step being processed, accumulated
    // from later steps; starts empty at the last step.
    let mut grad_state_next = vec![0.0; n];

    for t in (0..t_len).rev() {
        let sc = &cache.steps[t];

        // Readout contribution.
        let mut grad_emitted = grad_state_next.clone();
        let include_loss = opts.only_step.map_or(true, |k| k == t);
        if include_loss {
            let scaled: Vector = sc.grad_logits.iter().map(|g| g * opts.loss_scale).collect();
            grads.w_out.outer_accum(&scaled, &sc.state_read)?;
            add_assign(&mut grads.b_out, &scaled);
            let mut g_read = vec![0.0; n];
            params.w_out.matvec_t_accum(&scaled, &mut g_read)?;
            mask_grad(&mut g_read, &masks.output);
            add_assign(&mut grad_emitted, &g_read);
        }

        if let Some(sg) = state_grads.as_mut() {
            sg[t] = grad_emitted.clone();
        }

        // Split the emitted-state gradient into the RHN-output gradient and
        // the contribution flowing to the previous emitted state.
        let (grad_s_l, mut grad_prev_emitted) = if config.use_hsg {
            let h = params.hsg.as_ref().unwrap();
            let hc = sc.hsg.as_ref().ok_or_else(|| {
                Error::contract("backward_window", "HSG cache missing in HSG model")
            })?;
            let (g_prev_hat, g_s_l) =
                hsg_backward(&grad_emitted, hc, h, grads.hsg.as_mut().unwrap())?;
            (g_s_l, g_prev_hat)
        } else {
            (grad_emitted, vec![0.0; n])
        };

        // RHN backward; its state-input was the masked previous emitted state.
        let mut grad_layers_view = grads.layers.as_mut_slice();
        let (mut grad_x, mut grad_s0) = rhn_cell_backward(
            &grad_s_l,
            &sc.rhn,
            &params.input,
            &params.layers,
            config.coupled,
            RhnGrads { input: &mut grads.input, layers: &mut grad_layers_view },
        )?;
        mask_grad(&mut grad_s0, &masks.state);
        add_assign(&mut grad_prev_emitted, &grad_s0);

        // Embedding gradient.
        mask_grad(&mut grad_x, &masks.embed);
        add_assign(grads.embedding.row_mut(sc.input_token), &grad_x);

        grad_state_next = grad_prev_emitted;
    }

    Ok(WindowBackward { grads, state_grads, grad_carry_in: grad_state_next })
}

/// exp(mean token cross-entropy) over the whole corpus, state carried across
/// consecutive windows, no dropout.
pub fn evaluate_perplexity(
    params: &ModelParams,
    config: &ModelConfig,
    corpus: &[usize],
    window: usize,
) -> Result<f64> {
    let losses = per_token_losses(params, config, corpus, window)?;
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(mean.exp())
}

/// Cross-entropy loss at every position: entry i is the loss of predicting
/// corpus[i+1] from the prefix up to corpus[i]. Length is corpus.len() − 1.
pub fn per_token_losses(
    params: &ModelParams,
    config: &ModelConfig,
    corpus: &[usize],
    window: usize,
) -> Result<Vec<f64>> {
    if corpus.len() < 2 {
        return Err(Error::contract("per_token_losses", "corpus must hold at least 2 tokens"));
    }
    if window == 0 {
        return Err(Error::contract("per_token_losses", "window must be positive"));
    }
    let masks = DropoutMasks::none();
    let mut carry = CarryState::zeros(config.hidden);
    let mut losses = Vec::with_capacity(corpus.len() - 1);
    let mut pos = 0;
    while pos + 1 < corpus.len() {
        let end = (pos + window).min(corpus.len() - 1);
        let fw = forward_window(
            params,
            config,
            &corpus[pos..end],
            &corpus[pos + 1..end + 1],
            &carry,
            &masks,
        )?;
        losses.extend(fw.cache.steps.iter().map(|s| s.loss));
        carry = fw.carry_out;
        pos = end;
    }
    Ok(losses)
}
