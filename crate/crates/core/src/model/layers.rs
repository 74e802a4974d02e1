//! Building blocks shared by the three architectures.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var};

/// GRU weights on a tape. Gate order inside the fused matrices is
/// `[reset, update, candidate]`.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    /// `[d_in, 3h]`
    pub w_x: Var,
    /// `[h, 2h]`, recurrent part of the reset and update gates.
    pub u_gates: Var,
    /// `[h, h]`, recurrent part of the candidate.
    pub u_cand: Var,
    /// `[3h]`
    pub bias: Var,
}

impl GruVars {
    pub fn hidden<T: Real>(&self, tape: &Tape<T>) -> usize {
        tape.shape(self.u_cand)[0]
    }

    /// Input projection `x·W_x + b` for `x: [N, d_in]`.
    pub fn project_input<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.w_x)?;
        tape.add_bias(xw, self.bias)
    }
}

/// One recurrence step, `x: [B, d_in]`, `h: [B, h]`:
///
/// ```text
/// r  = σ(W_r x + U_r h + b_r)
/// z  = σ(W_z x + U_z h + b_z)
/// h̃  = tanh(W_c x + U_c (r ⊙ h) + b_c)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
pub fn gru_cell<T: Real>(tape: &mut Tape<T>, gru: &GruVars, x: Var, h: Var) -> Result<Var> {
    let xw = gru.project_input(tape, x)?;
    gru_step_projected(tape, gru, xw, h)
}

/// [`gru_cell`] with the input projection precomputed (`xw: [B, 3h]`).
pub fn gru_step_projected<T: Real>(tape: &mut Tape<T>, gru: &GruVars, xw: Var, h: Var) -> Result<Var> {
    let hd = gru.hidden(tape);
    if tape.shape(xw).len() != 2 || tape.shape(xw)[1] != 3 * hd || tape.shape(h) != [tape.shape(xw)[0], hd] {
        return Err(Error::dim("gru_cell", tape.shape(xw), tape.shape(h)));
    }
    let hu = tape.matmul(h, gru.u_gates)?;
    let xr = tape.slice(xw, 1, 0, hd)?;
    let xz = tape.slice(xw, 1, hd, hd)?;
    let xc = tape.slice(xw, 1, 2 * hd, hd)?;
    let hr = tape.slice(hu, 1, 0, hd)?;
    let hz = tape.slice(hu, 1, hd, hd)?;

    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r);
    let z = tape.add(xz, hz)?;
    let z = tape.sigmoid(z);

    let rh = tape.mul(r, h)?;
    let rhu = tape.matmul(rh, gru.u_cand)?;
    let cand = tape.add(xc, rhu)?;
    let cand = tape.tanh(cand);

    let keep = tape.affine(z, -T::one(), T::one());
    let old = tape.mul(keep, h)?;
    let new = tape.mul(z, cand)?;
    tape.add(old, new)
}

/// Feed-forward (additive) attention weights.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    /// `[d_value, a]`
    pub w_key: Var,
    /// `[d_query, a]`
    pub w_query: Var,
    /// `[a, 1]`
    pub v: Var,
}

/// Values and their projected keys, computed once per source sentence.
#[derive(Clone, Debug)]
pub struct AttentionKeys {
    /// `[B, P, a]`
    pub keys: Var,
    /// `[B, P, D]`
    pub values: Var,
    /// `B·P` validity flags; `None` means every position is valid.
    pub mask: Option<Vec<bool>>,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionResult {
    /// `[B, D]`
    pub context: Var,
    /// `[B, P]`, a distribution per row.
    pub weights: Var,
    /// `[B, P, a]`, the argument of the score tanh.
    pub pre_activation: Var,
}

impl AttentionVars {
    pub fn prepare<T: Real>(&self, tape: &mut Tape<T>, values: Var, mask: Option<Vec<bool>>) -> Result<AttentionKeys> {
        let shape = tape.shape(values).to_vec();
        if shape.len() != 3 {
            return Err(Error::dim("attention values", &shape, &[]));
        }
        let (b, p, d) = (shape[0], shape[1], shape[2]);
        if let Some(m) = &mask {
            if m.len() != b * p {
                return Err(Error::dim("attention mask", &shape, &[m.len()]));
            }
        }
        let flat = tape.reshape(values, &[b * p, d])?;
        let keys = tape.matmul(flat, self.w_key)?;
        let a = tape.shape(keys)[1];
        let keys = tape.reshape(keys, &[b, p, a])?;
        Ok(AttentionKeys { keys, values, mask })
    }

    /// `e_i = vᵀ tanh(W_k h_i + W_q q)`, `α = softmax(e)`, `c = Σ α_i h_i`.
    pub fn attend<T: Real>(&self, tape: &mut Tape<T>, keys: &AttentionKeys, query: Var) -> Result<AttentionResult> {
        let q = tape.matmul(query, self.w_query)?;
        let pre = tape.add_broadcast_mid(keys.keys, q)?;
        let act = tape.tanh(pre);
        let ks = tape.shape(keys.keys).to_vec();
        let (b, p, a) = (ks[0], ks[1], ks[2]);
        let flat = tape.reshape(act, &[b * p, a])?;
        let scores = tape.matmul(flat, self.v)?;
        let scores = tape.reshape(scores, &[b, p])?;
        let weights = match &keys.mask {
            Some(m) => tape.masked_softmax(scores, m)?,
            None => tape.softmax(scores, 1)?,
        };
        let context = tape.weighted_sum(weights, keys.values)?;
        Ok(AttentionResult {
            context,
            weights,
            pre_activation: pre,
        })
    }
}

/// Multimodal fusion weights.
#[derive(Clone, Copy, Debug)]
pub struct FusionVars {
    /// `[C, d_vis]`
    pub w_vis: Var,
    /// `[d_txt + d_vis, d_out]`
    pub w_f: Var,
}

/// `c = W_f [c_txt; W_vis c_vis]`, no bias.
pub fn fuse_contexts<T: Real>(tape: &mut Tape<T>, fusion: &FusionVars, c_txt: Var, c_vis: Var) -> Result<Var> {
    let projected = tape.matmul(c_vis, fusion.w_vis)?;
    let joint = tape.concat(&[c_txt, projected], 1)?;
    tape.matmul(joint, fusion.w_f)
}

/// Two 1×1 convolutions over the tiled sentence vector and the feature map.
#[derive(Clone, Copy, Debug)]
pub struct FilterVars {
    /// `[d_sent + C, h]`
    pub w1: Var,
    /// `[h]`
    pub b1: Var,
    /// `[h, 1]`
    pub w2: Var,
    /// `[1]`
    pub b2: Var,
}

/// Encoder-conditioned spatial mask.
///
/// `β = softmax_p(conv2(tanh(conv1([Tile(h_last); V]))))` and `Ṽ = β ⊙ V`,
/// for `features: [B, P, C]` and `h_last: [B, d_sent]`. Returns `(Ṽ, β)`.
pub fn conv_att_filter<T: Real>(
    tape: &mut Tape<T>,
    filter: &FilterVars,
    features: Var,
    h_last: Var,
) -> Result<(Var, Var)> {
    let fs = tape.shape(features).to_vec();
    if fs.len() != 3 || tape.shape(h_last).len() != 2 || tape.shape(h_last)[0] != fs[0] {
        return Err(Error::dim("conv_att_filter", &fs, tape.shape(h_last)));
    }
    let (b, p) = (fs[0], fs[1]);
    let tiled = tape.tile(h_last, p)?;
    let joint = tape.concat(&[tiled, features], 2)?;
    let width = tape.shape(joint)[2];
    let flat = tape.reshape(joint, &[b * p, width])?;
    let hidden = tape.matmul(flat, filter.w1)?;
    let hidden = tape.add_bias(hidden, filter.b1)?;
    let hidden = tape.tanh(hidden);
    let scores = tape.matmul(hidden, filter.w2)?;
    let scores = tape.add_bias(scores, filter.b2)?;
    let scores = tape.reshape(scores, &[b, p])?;
    let beta = tape.softmax(scores, 1)?;
    let filtered = tape.scale_positions(features, beta)?;
    Ok((filtered, beta))
}

/// Mean cross-entropy over the rows of `logits: [N, V]` where `valid` is true.
pub fn sequence_loss<T: Real>(tape: &mut Tape<T>, logits: Var, targets: &[usize], valid: &[bool]) -> Result<Var> {
    if targets.len() != valid.len() {
        return Err(Error::dim("sequence_loss", &[targets.len()], &[valid.len()]));
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::Contract("sequence loss over an empty reference".into()));
    }
    let weights: Vec<T> = valid.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
    let total = tape.cross_entropy(logits, targets, &weights)?;
    Ok(tape.scale(total, T::one() / T::lit(count as f64)))
}
