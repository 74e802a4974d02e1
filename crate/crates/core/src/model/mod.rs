//! Attention-based encoder-decoder translation models.
//!
//! Three architectures share one text path: a stacked bidirectional GRU
//! encoder and a conditional GRU decoder with feed-forward attention and tied
//! output embeddings.
//!
//! * [`Arch::Baseline`] uses text only.
//! * [`Arch::Ma`] adds a separate attention over the spatial feature map and
//!   fuses both contexts linearly before the second decoder GRU.
//! * [`Arch::Fa`] additionally masks the feature map once per sentence with a
//!   spatial distribution predicted from the last encoder state.

mod batch;
pub mod layers;
mod params;
#[cfg(test)]
mod tests;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use batch::{Batch, SourceBatch, TargetBatch};
pub use layers::{AttentionKeys, AttentionResult, AttentionVars, FilterVars, FusionVars, GruVars};
pub use params::{Param, ParamSet, ParamSpec, ParamVars};

use crate::error::{Error, Result};
use crate::tensor::{Real, Rng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Baseline,
    Ma,
    Fa,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Baseline, Arch::Ma, Arch::Fa];

    pub fn uses_features(self) -> bool {
        !matches!(self, Arch::Baseline)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Baseline => "baseline",
            Arch::Ma => "ma",
            Arch::Fa => "fa",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "nmt" => Ok(Arch::Baseline),
            "ma" => Ok(Arch::Ma),
            "fa" => Ok(Arch::Fa),
            other => Err(Error::Config(format!("unknown architecture `{other}` (expected baseline, ma or fa)"))),
        }
    }
}

/// Sizes and dropout rates of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub enc_layers: usize,
    /// Channels `C` of the feature map; ignored by the baseline.
    pub feat_channels: usize,
    /// Dropout on source embeddings.
    pub dropout_emb: f64,
    /// Dropout on encoder states.
    pub dropout_enc: f64,
    /// Dropout on the pre-softmax activations.
    pub dropout_out: f64,
}

impl ModelConfig {
    pub fn new(arch: Arch, src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            arch,
            src_vocab,
            tgt_vocab,
            emb_dim: 32,
            hidden: 64,
            enc_layers: 2,
            feat_channels: 16,
            dropout_emb: 0.3,
            dropout_enc: 0.3,
            dropout_out: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("emb_dim", self.emb_dim),
            ("hidden", self.hidden),
            ("enc_layers", self.enc_layers),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.arch.uses_features() && self.feat_channels == 0 {
            return Err(Error::Config("feat_channels must be positive for ma/fa".into()));
        }
        for (name, p) in [
            ("dropout_emb", self.dropout_emb),
            ("dropout_enc", self.dropout_enc),
            ("dropout_out", self.dropout_out),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Width of one encoder state (both directions).
    pub fn ctx_dim(&self) -> usize {
        2 * self.hidden
    }
}

fn gru_specs(out: &mut Vec<ParamSpec>, prefix: &str, d_in: usize, h: usize) {
    let w = |name: &str, shape: Vec<usize>, is_bias| ParamSpec {
        name: format!("{prefix}.{name}"),
        shape,
        is_bias,
    };
    out.push(w("w_x", vec![d_in, 3 * h], false));
    out.push(w("u_gates", vec![h, 2 * h], false));
    out.push(w("u_cand", vec![h, h], false));
    out.push(w("b", vec![3 * h], true));
}

fn attention_specs(out: &mut Vec<ParamSpec>, prefix: &str, d_value: usize, d_query: usize, a: usize) {
    for (name, shape) in [("w_key", vec![d_value, a]), ("w_query", vec![d_query, a]), ("v", vec![a, 1])] {
        out.push(ParamSpec {
            name: format!("{prefix}.{name}"),
            shape,
            is_bias: false,
        });
    }
}

/// Every learnable tensor of a configuration, in registration order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (e, h) = (cfg.emb_dim, cfg.hidden);
    let weight = |name: &str, shape: Vec<usize>| ParamSpec {
        name: name.into(),
        shape,
        is_bias: false,
    };
    let bias = |name: &str, shape: Vec<usize>| ParamSpec {
        name: name.into(),
        shape,
        is_bias: true,
    };
    let mut specs = vec![weight("src_emb", vec![cfg.src_vocab, e]), weight("tgt_emb", vec![cfg.tgt_vocab, e])];
    for layer in 0..cfg.enc_layers {
        let d_in = if layer == 0 { e } else { 2 * h };
        gru_specs(&mut specs, &format!("enc.l{layer}.fwd"), d_in, h);
        gru_specs(&mut specs, &format!("enc.l{layer}.bwd"), d_in, h);
    }
    gru_specs(&mut specs, "dec1", e, h);
    attention_specs(&mut specs, "att_txt", 2 * h, h, h);
    gru_specs(&mut specs, "dec2", 2 * h, h);
    specs.push(weight("out.w_o", vec![h, e]));
    specs.push(bias("out.b_o", vec![e]));
    if cfg.arch.uses_features() {
        let c = cfg.feat_channels;
        attention_specs(&mut specs, "vis.att", c, h, h);
        specs.push(weight("vis.w_vis", vec![c, 2 * h]));
        specs.push(weight("vis.w_f", vec![4 * h, 2 * h]));
    }
    if cfg.arch == Arch::Fa {
        let c = cfg.feat_channels;
        specs.push(weight("filter.conv1.w", vec![2 * h + c, h]));
        specs.push(bias("filter.conv1.b", vec![h]));
        specs.push(weight("filter.conv2.w", vec![h, 1]));
        specs.push(bias("filter.conv2.b", vec![1]));
    }
    specs
}

/// Parameters of one model bound to a tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub all: ParamVars,
    pub src_emb: Var,
    pub tgt_emb: Var,
    /// `[forward, backward]` per layer.
    pub enc: Vec<[GruVars; 2]>,
    pub dec1: GruVars,
    pub att_txt: AttentionVars,
    pub dec2: GruVars,
    pub w_o: Var,
    pub b_o: Var,
    pub vis: Option<(AttentionVars, FusionVars)>,
    pub filter: Option<FilterVars>,
}

/// Extra measurements collected during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    /// Mean of `|W_k v_i + W_q q|` inside the visual attention, over all
    /// positions, units and steps.
    pub vis_pre_tanh_mean_abs: Option<f64>,
}

/// Result of a teacher-forced pass over a batch.
#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Mean negative log-likelihood per target token.
    pub loss: Var,
    pub tokens: usize,
    pub diagnostics: Diagnostics,
}

/// Result of [`Model::encode`]: everything the decoder needs from the source
/// as plain tensors, computed once per batch.
#[derive(Clone, Debug)]
pub struct Encoded<T: Real = f32> {
    /// `[B, S, 2h]`
    pub h_enc: Tensor<T>,
    /// `[B, S, h]`
    pub txt_keys: Tensor<T>,
    /// `B·S` validity flags.
    pub mask: Vec<bool>,
    /// `[B, P, C]`, the (filtered) feature map.
    pub vis_values: Option<Tensor<T>>,
    /// `[B, P, h]`
    pub vis_keys: Option<Tensor<T>>,
    /// `[B, P]`, the spatial mask of the filtered architecture.
    pub beta: Option<Tensor<T>>,
}

impl<T: Real> Encoded<T> {
    pub fn batch_size(&self) -> usize {
        self.h_enc.shape()[0]
    }

    pub fn src_len(&self) -> usize {
        self.h_enc.shape()[1]
    }
}

struct DecoderContext {
    txt: AttentionKeys,
    vis: Option<AttentionKeys>,
}

struct StepOut {
    o: Var,
    h2: Var,
    vis_pre: Option<Var>,
}

/// Architecture definition; parameters live in a separate [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    specs: Vec<ParamSpec>,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(&cfg);
        Ok(Model { cfg, specs })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn arch(&self) -> Arch {
        self.cfg.arch
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Fails unless `params` holds exactly this model's tensors.
    pub fn check_params<T: Real>(&self, params: &ParamSet<T>) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(Error::Contract(format!(
                "model expects {} parameters, got {}",
                self.specs.len(),
                params.len()
            )));
        }
        for (spec, p) in self.specs.iter().zip(params.iter()) {
            if spec.name != p.name {
                return Err(Error::Contract(format!("expected parameter `{}`, found `{}`", spec.name, p.name)));
            }
            if spec.shape != p.value.shape() {
                return Err(Error::dim("parameter shape", &spec.shape, p.value.shape()));
            }
        }
        Ok(())
    }

    /// Register `params` on `tape` and resolve the named handles.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet<T>) -> Result<ModelVars> {
        self.check_params(params)?;
        let all = params.register(tape);
        self.resolve(all)
    }

    /// Resolve named handles from vars given in [`Model::specs`] order.
    pub fn resolve(&self, all: ParamVars) -> Result<ModelVars> {
        if all.len() != self.specs.len() {
            return Err(Error::Contract(format!(
                "model expects {} parameters, got {}",
                self.specs.len(),
                all.len()
            )));
        }
        let get = |name: &str| -> Result<Var> {
            self.specs
                .iter()
                .position(|s| s.name == name)
                .map(|i| all[i])
                .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
        };
        let gru = |prefix: &str| -> Result<GruVars> {
            Ok(GruVars {
                w_x: get(&format!("{prefix}.w_x"))?,
                u_gates: get(&format!("{prefix}.u_gates"))?,
                u_cand: get(&format!("{prefix}.u_cand"))?,
                bias: get(&format!("{prefix}.b"))?,
            })
        };
        let att = |prefix: &str| -> Result<AttentionVars> {
            Ok(AttentionVars {
                w_key: get(&format!("{prefix}.w_key"))?,
                w_query: get(&format!("{prefix}.w_query"))?,
                v: get(&format!("{prefix}.v"))?,
            })
        };
        let enc = (0..self.cfg.enc_layers)
            .map(|l| Ok([gru(&format!("enc.l{l}.fwd"))?, gru(&format!("enc.l{l}.bwd"))?]))
            .collect::<Result<Vec<_>>>()?;
        let vis = if self.cfg.arch.uses_features() {
            Some((
                att("vis.att")?,
                FusionVars {
                    w_vis: get("vis.w_vis")?,
                    w_f: get("vis.w_f")?,
                },
            ))
        } else {
            None
        };
        let filter = if self.cfg.arch == Arch::Fa {
            Some(FilterVars {
                w1: get("filter.conv1.w")?,
                b1: get("filter.conv1.b")?,
                w2: get("filter.conv2.w")?,
                b2: get("filter.conv2.b")?,
            })
        } else {
            None
        };
        Ok(ModelVars {
            src_emb: get("src_emb")?,
            tgt_emb: get("tgt_emb")?,
            enc,
            dec1: gru("dec1")?,
            att_txt: att("att_txt")?,
            dec2: gru("dec2")?,
            w_o: get("out.w_o")?,
            b_o: get("out.b_o")?,
            vis,
            filter,
            all,
        })
    }

    fn check_features<T: Real>(&self, features: Option<&Tensor<T>>, batch: usize) -> Result<()> {
        match (self.cfg.arch.uses_features(), features) {
            (false, _) => Ok(()),
            (true, None) => Err(Error::Config(format!("architecture {} requires features", self.cfg.arch))),
            (true, Some(f)) => {
                if f.rank() != 3 || f.shape()[0] != batch || f.shape()[2] != self.cfg.feat_channels {
                    return Err(Error::dim("features", f.shape(), &[batch, 0, self.cfg.feat_channels]));
                }
                Ok(())
            }
        }
    }

    /// Bidirectional stacked encoder. Returns `H_enc: [B, S, 2h]` after dropout.
    pub fn encode_source<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelVars,
        src: &SourceBatch,
        rng: &mut Rng,
        training: bool,
    ) -> Result<Var> {
        src.validate(self.cfg.src_vocab)?;
        let (b, s) = (src.batch_size(), src.max_len);
        let emb = tape.gather_rows(vars.src_emb, &src.tokens)?;
        let mut layer_in = tape.dropout(emb, self.cfg.dropout_emb, rng, training)?;
        let masks: Vec<Vec<bool>> = (0..s).map(|t| src.lengths.iter().map(|&l| t < l).collect()).collect();
        let mut out = layer_in;
        for (li, layer) in vars.enc.iter().enumerate() {
            let fwd = run_direction(tape, &layer[0], layer_in, b, s, &masks, false)?;
            let bwd = run_direction(tape, &layer[1], layer_in, b, s, &masks, true)?;
            out = tape.concat(&[fwd, bwd], 2)?;
            if li + 1 < vars.enc.len() {
                layer_in = tape.reshape(out, &[b * s, 2 * self.cfg.hidden])?;
            }
        }
        tape.dropout(out, self.cfg.dropout_enc, rng, training)
    }

    fn prepare_context<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelVars,
        src: &SourceBatch,
        features: Option<&Tensor<T>>,
        rng: &mut Rng,
        training: bool,
    ) -> Result<(DecoderContext, Option<Var>)> {
        self.check_features(features, src.batch_size())?;
        let h_enc = self.encode_source(tape, vars, src, rng, training)?;
        let txt = vars.att_txt.prepare(tape, h_enc, Some(src.mask()))?;
        let mut beta = None;
        let vis = match (&vars.vis, features) {
            (Some((att, _)), Some(f)) => {
                let mut values = tape.constant(f.clone());
                if let Some(filter) = &vars.filter {
                    let last: Vec<usize> = src.lengths.iter().map(|&l| l - 1).collect();
                    let h_last = tape.gather_positions(h_enc, &last)?;
                    let (filtered, b) = layers::conv_att_filter(tape, filter, values, h_last)?;
                    values = filtered;
                    beta = Some(b);
                }
                Some(att.prepare(tape, values, None)?)
            }
            _ => None,
        };
        Ok((DecoderContext { txt, vis }, beta))
    }

    /// Everything after the first decoder GRU: attention, fusion, the second
    /// GRU and the output layer (before dropout).
    fn decoder_core<T: Real>(&self, tape: &mut Tape<T>, vars: &ModelVars, ctx: &DecoderContext, h1: Var) -> Result<StepOut> {
        let txt = vars.att_txt.attend(tape, &ctx.txt, h1)?;
        let mut vis_pre = None;
        let c = match (&vars.vis, &ctx.vis) {
            (Some((att, fusion)), Some(keys)) => {
                let vis = att.attend(tape, keys, h1)?;
                vis_pre = Some(vis.pre_activation);
                layers::fuse_contexts(tape, fusion, txt.context, vis.context)?
            }
            _ => txt.context,
        };
        let h2 = layers::gru_cell(tape, &vars.dec2, c, h1)?;
        let o = tape.matmul(h2, vars.w_o)?;
        let o = tape.add_bias(o, vars.b_o)?;
        let o = tape.tanh(o);
        Ok(StepOut { o, h2, vis_pre })
    }

    /// Teacher-forced mean token NLL of `batch`.
    pub fn loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelVars,
        batch: &Batch<T>,
        rng: &mut Rng,
        training: bool,
    ) -> Result<LossOutput> {
        let src = &batch.src;
        let tgt = &batch.tgt;
        if tgt.batch_size() != src.batch_size() {
            return Err(Error::dim("batch", &[src.batch_size()], &[tgt.batch_size()]));
        }
        tgt.validate(self.cfg.tgt_vocab)?;
        let (ctx, _) = self.prepare_context(tape, vars, src, batch.features.as_ref(), rng, training)?;

        let (b, t_len, h) = (tgt.batch_size(), tgt.max_len, self.cfg.hidden);
        let y = tape.gather_rows(vars.tgt_emb, &tgt.inputs)?;
        let xw = vars.dec1.project_input(tape, y)?;
        let xw = tape.reshape(xw, &[b, t_len, 3 * h])?;

        let mut h2 = tape.constant(Tensor::zeros(&[b, h]));
        let mut outputs = Vec::with_capacity(t_len);
        let mut pre_sum = 0.0;
        let mut pre_count = 0usize;
        for t in 0..t_len {
            let xw_t = tape.slice(xw, 1, t, 1)?;
            let xw_t = tape.reshape(xw_t, &[b, 3 * h])?;
            let h1 = layers::gru_step_projected(tape, &vars.dec1, xw_t, h2)?;
            let step = self.decoder_core(tape, vars, &ctx, h1)?;
            if let Some(pre) = step.vis_pre {
                let v = tape.value(pre);
                pre_sum += v.data().iter().map(|x| x.as_f64().abs()).sum::<f64>();
                pre_count += v.numel();
            }
            outputs.push(step.o);
            h2 = step.h2;
        }
        // Rows are ordered step-major: row t·B + b.
        let o = tape.concat(&outputs, 0)?;
        let o = tape.dropout(o, self.cfg.dropout_out, rng, training)?;
        let logits = tape.matmul_bt(o, vars.tgt_emb)?;
        let mut targets = Vec::with_capacity(b * t_len);
        let mut valid = Vec::with_capacity(b * t_len);
        for t in 0..t_len {
            for bi in 0..b {
                targets.push(tgt.outputs[bi * t_len + t]);
                valid.push(t < tgt.lengths[bi]);
            }
        }
        let loss = layers::sequence_loss(tape, logits, &targets, &valid)?;
        let diagnostics = Diagnostics {
            vis_pre_tanh_mean_abs: (pre_count > 0).then(|| pre_sum / pre_count as f64),
        };
        Ok(LossOutput {
            loss,
            tokens: valid.iter().filter(|&&v| v).count(),
            diagnostics,
        })
    }

    /// Inference-mode encoding of a source batch.
    pub fn encode<T: Real>(&self, params: &ParamSet<T>, src: &SourceBatch, features: Option<&Tensor<T>>) -> Result<Encoded<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, params)?;
        let mut rng = Rng::seed_from(0);
        let (ctx, beta) = self.prepare_context(&mut tape, &vars, src, features, &mut rng, false)?;
        let take = |tape: &Tape<T>, v: Var| tape.value(v).clone();
        Ok(Encoded {
            h_enc: take(&tape, ctx.txt.values),
            txt_keys: take(&tape, ctx.txt.keys),
            mask: ctx.txt.mask.clone().unwrap_or_default(),
            vis_values: ctx.vis.as_ref().map(|k| take(&tape, k.values)),
            vis_keys: ctx.vis.as_ref().map(|k| take(&tape, k.keys)),
            beta: beta.map(|b| take(&tape, b)),
        })
    }

    /// One inference step for `n` hypotheses. Hypothesis `i` belongs to source
    /// row `rows[i]` of `enc`, carries `h2[i]` and was extended by `prev[i]`.
    /// Returns `(logits [n, V], new h2 [n, h])`.
    pub fn decode_step<T: Real>(
        &self,
        params: &ParamSet<T>,
        enc: &Encoded<T>,
        rows: &[usize],
        h2: &Tensor<T>,
        prev: &[usize],
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let n = rows.len();
        let h = self.cfg.hidden;
        if prev.len() != n || h2.shape() != [n, h] {
            return Err(Error::dim("decode_step", &[n, h], h2.shape()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= enc.batch_size()) {
            return Err(Error::Contract(format!("source row {bad} outside batch of {}", enc.batch_size())));
        }
        if let Some(&bad) = prev.iter().find(|&&p| p >= self.cfg.tgt_vocab) {
            return Err(Error::Contract(format!("token {bad} outside target vocabulary of {}", self.cfg.tgt_vocab)));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, params)?;
        let s = enc.src_len();
        let mask: Vec<bool> = rows.iter().flat_map(|&r| enc.mask[r * s..(r + 1) * s].iter().copied()).collect();
        let txt = AttentionKeys {
            keys: tape.constant(enc.txt_keys.select_rows(rows)),
            values: tape.constant(enc.h_enc.select_rows(rows)),
            mask: Some(mask),
        };
        let vis = match (&enc.vis_keys, &enc.vis_values) {
            (Some(k), Some(v)) => Some(AttentionKeys {
                keys: tape.constant(k.select_rows(rows)),
                values: tape.constant(v.select_rows(rows)),
                mask: None,
            }),
            _ => None,
        };
        let ctx = DecoderContext { txt, vis };
        let y = tape.gather_rows(vars.tgt_emb, prev)?;
        let h_prev = tape.constant(h2.clone());
        let h1 = layers::gru_cell(&mut tape, &vars.dec1, y, h_prev)?;
        let step = self.decoder_core(&mut tape, &vars, &ctx, h1)?;
        let logits = tape.matmul_bt(step.o, vars.tgt_emb)?;
        Ok((tape.value(logits).clone(), tape.value(step.h2).clone()))
    }
}

/// One encoder direction over `x: [B·S, d_in]`. Padded steps keep the
/// previous state, so the backward direction starts at each row's last token.
fn run_direction<T: Real>(
    tape: &mut Tape<T>,
    gru: &GruVars,
    x: Var,
    b: usize,
    s: usize,
    masks: &[Vec<bool>],
    reverse: bool,
) -> Result<Var> {
    let h = gru.hidden(tape);
    let xw = gru.project_input(tape, x)?;
    let xw = tape.reshape(xw, &[b, s, 3 * h])?;
    let mut state = tape.constant(Tensor::zeros(&[b, h]));
    let mut states = vec![state; s];
    let order: Vec<usize> = if reverse { (0..s).rev().collect() } else { (0..s).collect() };
    for t in order {
        let xw_t = tape.slice(xw, 1, t, 1)?;
        let xw_t = tape.reshape(xw_t, &[b, 3 * h])?;
        let next = layers::gru_step_projected(tape, gru, xw_t, state)?;
        state = if masks[t].iter().all(|&m| m) {
            next
        } else {
            tape.select_rows(&masks[t], next, state)?
        };
        states[t] = tape.reshape(state, &[b, 1, h])?;
    }
    tape.concat(&states, 1)
}
