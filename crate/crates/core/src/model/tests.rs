use approx::assert_abs_diff_eq;

use super::layers::{self, AttentionVars, FilterVars, FusionVars, GruVars};
use super::*;
use crate::tensor::gradcheck::check_inputs;

fn random(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| scale * rng.normal()).collect()).unwrap()
}

fn random_params(model: &Model, scale: f64, seed: u64) -> ParamSet<f64> {
    let mut rng = Rng::seed_from(seed);
    ParamSet::from_specs(model.specs(), |s| random(&s.shape, scale, &mut rng)).unwrap()
}

fn toy_config(arch: Arch) -> ModelConfig {
    ModelConfig {
        arch,
        src_vocab: 7,
        tgt_vocab: 6,
        emb_dim: 3,
        hidden: 4,
        enc_layers: 2,
        feat_channels: 5,
        dropout_emb: 0.0,
        dropout_enc: 0.0,
        dropout_out: 0.0,
    }
}

fn gru_leaves(tape: &mut Tape<f64>, d_in: usize, h: usize, fill: f64) -> GruVars {
    GruVars {
        w_x: tape.leaf(Tensor::full(&[d_in, 3 * h], fill)),
        u_gates: tape.leaf(Tensor::full(&[h, 2 * h], fill)),
        u_cand: tape.leaf(Tensor::full(&[h, h], fill)),
        bias: tape.leaf(Tensor::full(&[3 * h], fill)),
    }
}

#[test]
fn gru_with_zero_weights_halves_the_state() {
    let mut tape = Tape::<f64>::new();
    let gru = gru_leaves(&mut tape, 3, 2, 0.0);
    let x = tape.constant(Tensor::from_f64(&[1, 3], &[0.3, -1.0, 2.0]).unwrap());
    let h = tape.constant(Tensor::from_f64(&[1, 2], &[0.8, -0.4]).unwrap());
    let out = layers::gru_cell(&mut tape, &gru, x, h).unwrap();
    assert_eq!(tape.value(out).data(), &[0.4, -0.2]);

    let zero = tape.constant(Tensor::zeros(&[1, 2]));
    let out = layers::gru_cell(&mut tape, &gru, x, zero).unwrap();
    assert_eq!(tape.value(out).data(), &[0.0, 0.0]);
}

#[test]
fn gru_rejects_mismatched_state() {
    let mut tape = Tape::<f64>::new();
    let gru = gru_leaves(&mut tape, 3, 2, 0.0);
    let x = tape.constant(Tensor::zeros(&[1, 3]));
    let h = tape.constant(Tensor::zeros(&[1, 5]));
    assert!(matches!(layers::gru_cell(&mut tape, &gru, x, h), Err(Error::Dimension { .. })));
}

#[test]
fn gru_gradients_match_finite_differences() {
    let mut rng = Rng::seed_from(3);
    let (d, h) = (3, 4);
    let inputs = [
        random(&[2, d], 1.0, &mut rng),
        random(&[2, h], 1.0, &mut rng),
        random(&[d, 3 * h], 0.5, &mut rng),
        random(&[h, 2 * h], 0.5, &mut rng),
        random(&[h, h], 0.5, &mut rng),
        random(&[3 * h], 0.5, &mut rng),
    ];
    let report = check_inputs(
        &inputs,
        |tape, v| {
            let gru = GruVars {
                w_x: v[2],
                u_gates: v[3],
                u_cand: v[4],
                bias: v[5],
            };
            let out = layers::gru_cell(tape, &gru, v[0], v[1])?;
            let out = tape.tanh(out);
            Ok(tape.sum_squares(out))
        },
        1e-6,
        None,
    )
    .unwrap();
    assert!(report.max_error < 1e-4, "{report:?}");
}

fn encode_values(model: &Model, params: &ParamSet<f64>, sentences: &[Vec<usize>]) -> Tensor<f64> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, params).unwrap();
    let src = SourceBatch::from_sentences(sentences, 0);
    let h = model.encode_source(&mut tape, &vars, &src, &mut Rng::seed_from(0), false).unwrap();
    tape.value(h).clone()
}

#[test]
fn encoder_emits_two_directions_per_position() {
    let model = Model::new(toy_config(Arch::Baseline)).unwrap();
    let params = random_params(&model, 0.5, 1);
    assert_eq!(encode_values(&model, &params, &[vec![1, 2, 3, 4, 5]]).shape(), &[1, 5, 8]);
    assert_eq!(encode_values(&model, &params, &[vec![6]]).shape(), &[1, 1, 8]);
    assert!(model.encode_source(
        &mut Tape::<f64>::new(),
        &model.bind(&mut Tape::new(), &params).unwrap(),
        &SourceBatch::from_sentences(&[vec![9]], 0),
        &mut Rng::seed_from(0),
        false
    )
    .is_err());
}

#[test]
fn reversing_the_input_swaps_direction_roles() {
    let mut cfg = toy_config(Arch::Baseline);
    cfg.enc_layers = 1;
    let model = Model::new(cfg).unwrap();
    let mut params = random_params(&model, 0.5, 2);
    // Same weights in both directions so the roles are interchangeable.
    for name in ["w_x", "u_gates", "u_cand", "b"] {
        let fwd = params.get(&format!("enc.l0.fwd.{name}")).unwrap().value.as_ref().clone();
        let idx = params.index_of(&format!("enc.l0.bwd.{name}")).unwrap();
        params.set(idx, fwd).unwrap();
    }
    let orig = encode_values(&model, &params, &[vec![1, 2, 3]]);
    let rev = encode_values(&model, &params, &[vec![3, 2, 1]]);
    let h = 4;
    for t in 0..3 {
        let fwd_rev = &rev.data()[t * 2 * h..t * 2 * h + h];
        let s = 2 - t;
        let bwd_orig = &orig.data()[s * 2 * h + h..(s + 1) * 2 * h];
        assert_eq!(fwd_rev, bwd_orig);
    }
}

#[test]
fn padding_does_not_change_encoder_states() {
    let model = Model::new(toy_config(Arch::Baseline)).unwrap();
    let params = random_params(&model, 0.5, 4);
    let alone = encode_values(&model, &params, &[vec![1, 2, 3]]);
    let padded = encode_values(&model, &params, &[vec![1, 2, 3], vec![4, 5, 6, 1, 2]]);
    assert_eq!(alone.data(), &padded.data()[..3 * 8]);
}

fn attention_leaves(tape: &mut Tape<f64>, w_key: Tensor<f64>, w_query: Tensor<f64>, v: Tensor<f64>) -> AttentionVars {
    AttentionVars {
        w_key: tape.leaf(w_key),
        w_query: tape.leaf(w_query),
        v: tape.leaf(v),
    }
}

#[test]
fn text_attention_examples() {
    let mut tape = Tape::<f64>::new();
    let att = attention_leaves(
        &mut tape,
        Tensor::from_f64(&[2, 1], &[1.0, 0.0]).unwrap(),
        Tensor::zeros(&[1, 1]),
        Tensor::ones(&[1, 1]),
    );
    let q = tape.constant(Tensor::from_f64(&[1, 1], &[0.7]).unwrap());

    let single = tape.constant(Tensor::from_f64(&[1, 1, 2], &[0.3, -0.9]).unwrap());
    let keys = att.prepare(&mut tape, single, Some(vec![true])).unwrap();
    let r = att.attend(&mut tape, &keys, q).unwrap();
    assert_eq!(tape.value(r.weights).data(), &[1.0]);
    assert_eq!(tape.value(r.context).data(), &[0.3, -0.9]);

    // Equal first coordinates give equal scores.
    let rows = tape.constant(Tensor::from_f64(&[1, 3, 2], &[0.5, 1.0, 0.5, 2.0, 0.5, 6.0]).unwrap());
    let keys = att.prepare(&mut tape, rows, Some(vec![true; 3])).unwrap();
    let r = att.attend(&mut tape, &keys, q).unwrap();
    for &w in tape.value(r.weights).data() {
        assert_abs_diff_eq!(w, 1.0 / 3.0, epsilon = 1e-12);
    }
    assert_abs_diff_eq!(tape.value(r.context).data()[1], 3.0, epsilon = 1e-12);

    // Scores 0 and ln 3: v = 2 ln 3 and tanh(k) = 1/2.
    let att = attention_leaves(
        &mut tape,
        Tensor::from_f64(&[2, 1], &[1.0, 0.0]).unwrap(),
        Tensor::zeros(&[1, 1]),
        Tensor::from_f64(&[1, 1], &[2.0 * 3f64.ln()]).unwrap(),
    );
    let k = 0.5f64.atanh();
    let rows = tape.constant(Tensor::from_f64(&[1, 2, 2], &[0.0, 1.0, k, 2.0]).unwrap());
    let keys = att.prepare(&mut tape, rows, Some(vec![true; 2])).unwrap();
    let zero_q = tape.constant(Tensor::zeros(&[1, 1]));
    let r = att.attend(&mut tape, &keys, zero_q).unwrap();
    let w = tape.value(r.weights).data();
    assert_abs_diff_eq!(w[0], 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(w[1], 0.75, epsilon = 1e-12);

    let keys = att.prepare(&mut tape, rows, Some(vec![false; 2])).unwrap();
    assert!(att.attend(&mut tape, &keys, zero_q).is_err());
}

#[test]
fn masked_positions_get_zero_weight() {
    let mut tape = Tape::<f64>::new();
    let mut rng = Rng::seed_from(5);
    let att = attention_leaves(
        &mut tape,
        random(&[3, 4], 1.0, &mut rng),
        random(&[2, 4], 1.0, &mut rng),
        random(&[4, 1], 1.0, &mut rng),
    );
    let values = tape.constant(random(&[2, 3, 3], 1.0, &mut rng));
    let q = tape.constant(random(&[2, 2], 1.0, &mut rng));
    let keys = att.prepare(&mut tape, values, Some(vec![true, true, false, true, false, false])).unwrap();
    let r = att.attend(&mut tape, &keys, q).unwrap();
    let w = tape.value(r.weights).data();
    assert_eq!((w[2], w[4], w[5]), (0.0, 0.0, 0.0));
    assert_eq!(w[3], 1.0);
    assert_abs_diff_eq!(w[0] + w[1], 1.0, epsilon = 1e-12);
}

#[test]
fn visual_attention_examples() {
    let mut rng = Rng::seed_from(6);
    let mut tape = Tape::<f64>::new();
    let c = 3;
    let att = attention_leaves(
        &mut tape,
        random(&[c, 4], 1.0, &mut rng),
        random(&[4, 4], 1.0, &mut rng),
        random(&[4, 1], 1.0, &mut rng),
    );
    let q = tape.constant(random(&[1, 4], 1.0, &mut rng));

    let one = tape.constant(Tensor::from_f64(&[1, 1, c], &[0.2, 0.4, 0.6]).unwrap());
    let keys = att.prepare(&mut tape, one, None).unwrap();
    let r = att.attend(&mut tape, &keys, q).unwrap();
    assert_eq!(tape.value(r.context).data(), &[0.2, 0.4, 0.6]);

    let column = [0.1, -0.5, 0.9];
    let same: Vec<f64> = (0..16).flat_map(|_| column).collect();
    let grid = tape.constant(Tensor::from_f64(&[1, 16, c], &same).unwrap());
    let keys = att.prepare(&mut tape, grid, None).unwrap();
    let r = att.attend(&mut tape, &keys, q).unwrap();
    for &w in tape.value(r.weights).data() {
        assert_abs_diff_eq!(w, 1.0 / 16.0, epsilon = 1e-12);
    }
    for (got, want) in tape.value(r.context).data().iter().zip(column) {
        assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
    }

    let grid = tape.constant(random(&[1, 49, c], 1.0, &mut rng));
    let keys = att.prepare(&mut tape, grid, None).unwrap();
    let r = att.attend(&mut tape, &keys, q).unwrap();
    let w = tape.value(r.weights).data();
    assert_eq!(w.len(), 49);
    assert!(w.iter().all(|&x| x >= 0.0));
    assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-6);
}

#[test]
fn fusion_examples_and_gradients() {
    let mut rng = Rng::seed_from(7);
    let mut tape = Tape::<f64>::new();
    let fusion = FusionVars {
        w_vis: tape.leaf(random(&[3, 2], 1.0, &mut rng)),
        w_f: tape.leaf(random(&[4, 2], 1.0, &mut rng)),
    };
    let c_txt = tape.constant(Tensor::from_f64(&[1, 2], &[1.0, -2.0]).unwrap());
    let zero_vis = tape.constant(Tensor::zeros(&[1, 3]));
    let out = layers::fuse_contexts(&mut tape, &fusion, c_txt, zero_vis).unwrap();
    let w_f = tape.value(fusion.w_f).clone();
    let expect = [
        w_f.data()[0] - 2.0 * w_f.data()[2],
        w_f.data()[1] - 2.0 * w_f.data()[3],
    ];
    assert_abs_diff_eq!(tape.value(out).data()[0], expect[0], epsilon = 1e-12);
    assert_abs_diff_eq!(tape.value(out).data()[1], expect[1], epsilon = 1e-12);

    let zero_txt = tape.constant(Tensor::zeros(&[1, 2]));
    let out = layers::fuse_contexts(&mut tape, &fusion, zero_txt, zero_vis).unwrap();
    assert_eq!(tape.value(out).data(), &[0.0, 0.0]);

    let inputs = [
        random(&[2, 2], 1.0, &mut rng),
        random(&[2, 3], 1.0, &mut rng),
        random(&[3, 2], 1.0, &mut rng),
        random(&[4, 2], 1.0, &mut rng),
    ];
    let f = |tape: &mut Tape<f64>, v: &[Var]| {
        let fusion = FusionVars { w_vis: v[2], w_f: v[3] };
        let out = layers::fuse_contexts(tape, &fusion, v[0], v[1])?;
        let out = tape.tanh(out);
        Ok(tape.sum_squares(out))
    };
    let report = check_inputs(&inputs, f, 1e-6, None).unwrap();
    assert!(report.max_error < 1e-4, "{report:?}");

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    for v in &vars[2..] {
        assert!(grads.get(*v).unwrap().data().iter().any(|&g| g != 0.0));
    }
}

fn filter_leaves(tape: &mut Tape<f64>, d: usize, c: usize, h: usize, rng: &mut Rng) -> FilterVars {
    FilterVars {
        w1: tape.leaf(random(&[d + c, h], 1.0, rng)),
        b1: tape.leaf(random(&[h], 1.0, rng)),
        w2: tape.leaf(Tensor::zeros(&[h, 1])),
        b2: tape.leaf(Tensor::from_f64(&[1], &[0.3]).unwrap()),
    }
}

#[test]
fn filter_with_zero_output_layer_is_uniform() {
    let mut rng = Rng::seed_from(8);
    let mut tape = Tape::<f64>::new();
    let (d, c, h, p) = (4, 3, 5, 9);
    let filter = filter_leaves(&mut tape, d, c, h, &mut rng);
    let v = random(&[2, p, c], 1.0, &mut rng);
    let features = tape.constant(v.clone());
    let h_last = tape.constant(random(&[2, d], 1.0, &mut rng));
    let (filtered, beta) = layers::conv_att_filter(&mut tape, &filter, features, h_last).unwrap();
    for &b in tape.value(beta).data() {
        assert_eq!(b, 1.0 / p as f64);
    }
    for (got, want) in tape.value(filtered).data().iter().zip(v.data()) {
        assert_eq!(*got, want * (1.0 / p as f64));
    }
}

#[test]
fn filter_distribution_sums_to_one_and_masks() {
    let mut rng = Rng::seed_from(9);
    let (d, c, h, p) = (4, 3, 5, 16);
    let mut tape = Tape::<f64>::new();
    let mut filter = filter_leaves(&mut tape, d, c, h, &mut rng);
    filter.w2 = tape.leaf(random(&[h, 1], 1.0, &mut rng));
    let features = tape.constant(random(&[3, p, c], 1.0, &mut rng));
    let h_last = tape.constant(random(&[3, d], 1.0, &mut rng));
    let (_, beta) = layers::conv_att_filter(&mut tape, &filter, features, h_last).unwrap();
    for row in tape.value(beta).data().chunks(p) {
        assert!(row.iter().all(|&b| b >= 0.0));
        assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-6);
    }

    // A marker channel at one position drives the score there far above the rest.
    let marked = 5;
    let mut v = vec![0.0; p * c];
    for q in 0..p {
        v[q * c + 1] = 1.0;
    }
    v[marked * c] = 1.0;
    let mut w1 = vec![0.0; (d + c) * h];
    w1[d * h] = 50.0;
    let filter = FilterVars {
        w1: tape.leaf(Tensor::new(&[d + c, h], w1).unwrap()),
        b1: tape.leaf(Tensor::zeros(&[h])),
        w2: tape.leaf(Tensor::from_f64(&[h, 1], &[1000.0, 0.0, 0.0, 0.0, 0.0]).unwrap()),
        b2: tape.leaf(Tensor::zeros(&[1])),
    };
    let features = tape.constant(Tensor::new(&[1, p, c], v).unwrap());
    let h_last = tape.constant(random(&[1, d], 1.0, &mut rng));
    let (filtered, beta) = layers::conv_att_filter(&mut tape, &filter, features, h_last).unwrap();
    assert_eq!(tape.value(beta).data()[marked], 1.0);
    for (q, col) in tape.value(filtered).data().chunks(c).enumerate() {
        assert_eq!(col.iter().any(|&x| x != 0.0), q == marked, "position {q}");
    }
}

#[test]
fn sequence_loss_examples() {
    let mut tape = Tape::<f64>::new();
    let uniform = tape.constant(Tensor::zeros(&[3, 5]));
    let loss = layers::sequence_loss(&mut tape, uniform, &[0, 3, 4], &[true, true, true]).unwrap();
    assert_abs_diff_eq!(tape.value(loss).item(), 5f64.ln(), epsilon = 1e-12);

    let peaked = tape.constant(Tensor::from_f64(&[1, 3], &[0.0, 80.0, 0.0]).unwrap());
    let loss = layers::sequence_loss(&mut tape, peaked, &[1], &[true]).unwrap();
    assert!(tape.value(loss).item() < 1e-30);

    // Row 0: logits (ln 2, 0), target 0 → −ln(2/3). Row 1: (0, 0, ...) target 1 → ln 2.
    let hand = tape.constant(Tensor::from_f64(&[3, 2], &[2f64.ln(), 0.0, 0.0, 0.0, 9.0, -9.0]).unwrap());
    let loss = layers::sequence_loss(&mut tape, hand, &[0, 1, 1], &[true, true, false]).unwrap();
    let expect = (-(2.0f64 / 3.0).ln() + 2f64.ln()) / 2.0;
    assert_abs_diff_eq!(tape.value(loss).item(), expect, epsilon = 1e-12);

    assert!(layers::sequence_loss(&mut tape, hand, &[0, 1, 1], &[false; 3]).is_err());
}

fn toy_batch(arch: Arch, p: usize, c: usize, rng: &mut Rng) -> Batch<f64> {
    let src = SourceBatch::from_sentences(&[vec![1, 2, 3, 4], vec![5, 6]], 0);
    let tgt = TargetBatch::from_sentences(&[vec![3, 4, 5], vec![4]], 1, 2, 0);
    let features = arch.uses_features().then(|| random(&[2, p, c], 1.0, rng));
    Batch { src, tgt, features }
}

#[test]
fn decode_step_shapes_and_zero_output_layer() {
    for arch in Arch::ALL {
        let model = Model::new(toy_config(arch)).unwrap();
        let mut params = random_params(&model, 0.5, 10);
        let mut rng = Rng::seed_from(11);
        let batch = toy_batch(arch, 4, 5, &mut rng);
        let enc = model.encode(&params, &batch.src, batch.features.as_ref()).unwrap();
        let h2 = Tensor::zeros(&[3, 4]);
        let (logits, next) = model.decode_step(&params, &enc, &[0, 1, 1], &h2, &[1, 1, 3]).unwrap();
        assert_eq!(logits.shape(), &[3, 6]);
        assert_eq!(next.shape(), &[3, 4]);
        assert!(model.decode_step(&params, &enc, &[0], &Tensor::zeros(&[1, 4]), &[6]).is_err());

        for name in ["out.w_o", "out.b_o"] {
            let i = params.index_of(name).unwrap();
            let shape = params.at(i).value.shape().to_vec();
            params.set(i, Tensor::zeros(&shape)).unwrap();
        }
        let (logits, _) = model.decode_step(&params, &enc, &[0, 1], &Tensor::zeros(&[2, 4]), &[1, 1]).unwrap();
        assert!(logits.data().iter().all(|&l| l == 0.0));
    }
}

#[test]
fn missing_features_is_a_config_error() {
    let model = Model::new(toy_config(Arch::Ma)).unwrap();
    let params = random_params(&model, 0.5, 12);
    let src = SourceBatch::from_sentences(&[vec![1, 2]], 0);
    let err = model.encode(&params, &src, None).unwrap_err();
    assert!(err.is_config(), "{err}");
}

#[test]
fn filtered_with_zero_mask_layer_equals_multimodal_on_scaled_features() {
    let fa = Model::new(toy_config(Arch::Fa)).unwrap();
    let ma = Model::new(toy_config(Arch::Ma)).unwrap();
    let mut fa_params = random_params(&fa, 0.5, 13);
    let w2 = fa_params.index_of("filter.conv2.w").unwrap();
    fa_params.set(w2, Tensor::zeros(&[4, 1])).unwrap();
    let shared: Vec<Param<f64>> = fa_params.iter().filter(|p| !p.name.starts_with("filter.")).cloned().collect();
    let ma_params = ParamSet::new(shared).unwrap();

    let p = 9;
    let mut rng = Rng::seed_from(14);
    let batch = toy_batch(Arch::Fa, p, 5, &mut rng);
    let v = batch.features.clone().unwrap();
    let inv = 1.0 / p as f64;
    let scaled = Tensor::new(v.shape(), v.data().iter().map(|x| x * inv).collect()).unwrap();

    let fa_enc = fa.encode(&fa_params, &batch.src, Some(&v)).unwrap();
    let ma_enc = ma.encode(&ma_params, &batch.src, Some(&scaled)).unwrap();
    let rows = [0, 1];
    let mut h_fa = Tensor::zeros(&[2, 4]);
    let mut h_ma = Tensor::zeros(&[2, 4]);
    let mut prev = vec![1, 1];
    for _ in 0..4 {
        let (l_fa, n_fa) = fa.decode_step(&fa_params, &fa_enc, &rows, &h_fa, &prev).unwrap();
        let (l_ma, n_ma) = ma.decode_step(&ma_params, &ma_enc, &rows, &h_ma, &prev).unwrap();
        assert_eq!(l_fa, l_ma);
        h_fa = n_fa;
        h_ma = n_ma;
        prev = vec![3, 5];
    }
}

#[test]
fn batched_decoding_matches_single_rows_bitwise() {
    let model = Model::new(toy_config(Arch::Fa)).unwrap();
    let params = random_params(&model, 0.5, 15).cast::<f32>();
    let mut rng = Rng::seed_from(16);
    let batch = toy_batch(Arch::Fa, 4, 5, &mut rng).cast::<f32>();
    let enc = model.encode(&params, &batch.src, batch.features.as_ref()).unwrap();
    let (both, _) = model.decode_step(&params, &enc, &[0, 1], &Tensor::zeros(&[2, 4]), &[1, 1]).unwrap();

    let single = SourceBatch::from_sentences(&[vec![5, 6]], 0);
    let feats = batch.features.as_ref().unwrap().select_rows(&[1]);
    let enc1 = model.encode(&params, &single, Some(&feats)).unwrap();
    let (one, _) = model.decode_step(&params, &enc1, &[0], &Tensor::zeros(&[1, 4]), &[1]).unwrap();
    assert_eq!(one.data(), both.row(1));
}

#[test]
fn parameter_counts_are_ordered() {
    let counts: Vec<usize> = Arch::ALL
        .iter()
        .map(|&a| Model::new(toy_config(a)).unwrap().param_count())
        .collect();
    assert!(counts[0] < counts[1] && counts[1] < counts[2], "{counts:?}");

    let base = param_specs(&toy_config(Arch::Baseline));
    let fa = param_specs(&toy_config(Arch::Fa));
    assert_eq!(&fa[..base.len()], &base[..]);
}

#[test]
fn arch_parses_and_prints() {
    for a in Arch::ALL {
        assert_eq!(a.to_string().parse::<Arch>().unwrap(), a);
    }
    assert!("cnn".parse::<Arch>().unwrap_err().is_config());
}

fn full_model_check(arch: Arch) -> f64 {
    let mut cfg = toy_config(arch);
    cfg.dropout_emb = 0.2;
    cfg.dropout_enc = 0.2;
    cfg.dropout_out = 0.2;
    let model = Model::new(cfg).unwrap();
    let params = random_params(&model, 0.5, 20);
    let mut rng = Rng::seed_from(21);
    let batch = toy_batch(arch, 4, 5, &mut rng);
    let inputs: Vec<Tensor<f64>> = params.iter().map(|p| p.value.as_ref().clone()).collect();
    let mut sample_rng = Rng::seed_from(22);
    let report = check_inputs(
        &inputs,
        |tape, v| {
            let vars = model.resolve(ParamVars::new(v.to_vec()))?;
            let mut drop = Rng::seed_from(23);
            Ok(model.loss(tape, &vars, &batch, &mut drop, true)?.loss)
        },
        1e-6,
        Some((6, &mut sample_rng)),
    )
    .unwrap();
    assert!(report.checked >= 6 * params.len() / 2);
    report.max_error
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for arch in Arch::ALL {
        let err = full_model_check(arch);
        assert!(err < 1e-3, "{arch}: {err}");
    }
}
