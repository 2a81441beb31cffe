//! Independent straight-line reimplementation of the full M3R forward pass,
//! compared against the tape-based model end to end. The reference uses only
//! plain f64 loops over the parameter values pulled out of the store.

use m3_core::data::Event;
use m3_core::model::{Activation, Aggregation, EncoderSet, GateType, M3Config, M3Model, Variant};
use m3_core::params::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rows_of(store: &ParamStore<f64>, name: &str) -> Vec<Vec<f64>> {
    let id = store.by_name(name).unwrap_or_else(|| panic!("param {name}"));
    let t = store.value(id);
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    // x (1×k) · m (k×n)
    let n = m[0].len();
    let mut out = vec![0.0; n];
    for (k, row) in m.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += x[k] * v;
        }
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
}

#[test]
fn m3r_scores_match_reference_reimplementation() {
    let config = M3Config {
        variant: Variant::M3R,
        d_in: 8,
        d_enc: 8,
        d_out: 8,
        embed_dim: 8,
        aggregation: Aggregation::WeightedConcat,
        gate: GateType::BottomSwitch,
        enabled: EncoderSet::ALL,
        f_in_activation: Activation::Relu,
        f_out_activation: Activation::Relu,
        f_in_layers: 1,
        f_out_layers: 1,
        ctx_in_vocab: vec![3],
        ctx_out_vocab: vec![2],
        ctx_embed_dim: 8,
        ..M3Config::default()
    };
    let vocab = 20;
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let model = M3Model::init(config, vocab, &mut store, &mut rng).unwrap();

    let events: Vec<Event> = [(3usize, 0usize, 1usize), (17, 2, 0), (5, 1, 1), (5, 0, 0), (11, 2, 1)]
        .iter()
        .map(|&(item, ci, co)| Event {
            item,
            ctx_in: vec![ci],
            ctx_out: vec![co],
            timestamp: None,
        })
        .collect();

    let out = model.score_all(&store, &events).unwrap();

    // ---- reference path ----
    let q = rows_of(&store, "embed.q");
    let q_out = rows_of(&store, "embed.q_out");
    let ctx_in = rows_of(&store, "embed.ctx_in0");
    let ctx_out = rows_of(&store, "embed.ctx_out0");
    let f_in_w = rows_of(&store, "f_in.l0.w");
    let f_in_b = rows_of(&store, "f_in.l0.b");
    let f_out_w = rows_of(&store, "f_out.l0.w");
    let f_out_b = rows_of(&store, "f_out.l0.b");
    let gate_w = rows_of(&store, "gate.w");
    let gate_b = rows_of(&store, "gate.b");
    let w_xr = rows_of(&store, "gru.w_xr");
    let w_hr = rows_of(&store, "gru.w_hr");
    let b_r = rows_of(&store, "gru.b_r");
    let w_xu = rows_of(&store, "gru.w_xu");
    let w_hu = rows_of(&store, "gru.w_hu");
    let b_u = rows_of(&store, "gru.b_u");
    let w_xc = rows_of(&store, "gru.w_xc");
    let w_hc = rows_of(&store, "gru.w_hc");
    let b_c = rows_of(&store, "gru.b_c");
    let w_r = rows_of(&store, "gru.out_proj");

    // fuse + F_in
    let z: Vec<Vec<f64>> = events
        .iter()
        .map(|e| {
            let mut x = q[e.item].clone();
            x.extend_from_slice(&ctx_in[e.ctx_in[0]]);
            relu(&add(&matvec(&f_in_w, &x), &f_in_b[0]))
        })
        .collect();
    let tau = z.len() - 1;

    // tiny: identity (d_in == d_enc)
    let se_t = z[tau].clone();

    // GRU per the stated cell convention
    let mut h = vec![0.0; 8];
    for x in &z {
        let r = sigmoid(&add(&add(&matvec(&w_xr, x), &matvec(&w_hr, &h)), &b_r[0]));
        let u = sigmoid(&add(&add(&matvec(&w_xu, x), &matvec(&w_hu, &h)), &b_u[0]));
        let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        let c: Vec<f64> = add(&add(&matvec(&w_xc, x), &matvec(&w_hc, &rh)), &b_c[0])
            .iter()
            .map(|v| v.tanh())
            .collect();
        h = h
            .iter()
            .zip(&u)
            .zip(&c)
            .map(|((hv, uv), cv)| (1.0 - uv) * hv + uv * cv)
            .collect();
    }
    let se_s = matvec(&w_r, &h);

    // attention: scaled dot-product, raw rows as values
    let scale = 1.0 / (8.0f64).sqrt();
    let raw: Vec<f64> = z
        .iter()
        .map(|zi| zi.iter().zip(&z[tau]).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect();
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let mut se_l = vec![0.0; 8];
    for (w, zi) in exps.iter().zip(&z) {
        for (o, v) in se_l.iter_mut().zip(zi) {
            *o += (w / denom) * v;
        }
    }

    // gate on the processed last row
    let g = sigmoid(&add(&matvec(&gate_w, &z[tau]), &gate_b[0]));

    // weighted concat, then F_out over [aggregate ⊕ ctx_out]
    let mut agg = Vec::with_capacity(24);
    agg.extend(se_t.iter().map(|v| g[0] * v));
    agg.extend(se_s.iter().map(|v| g[1] * v));
    agg.extend(se_l.iter().map(|v| g[2] * v));
    let mut f_out_in = agg;
    f_out_in.extend_from_slice(&ctx_out[events[tau].ctx_out[0]]);
    let z_user = relu(&add(&matvec(&f_out_w, &f_out_in), &f_out_b[0]));

    let reference: Vec<f64> = q_out
        .iter()
        .map(|row| row.iter().zip(&z_user).map(|(a, b)| a * b).sum())
        .collect();

    for (v, (got, want)) in out.scores.scores.iter().zip(&reference).enumerate() {
        assert!(
            (got - want).abs() < 1e-10,
            "item {v}: {got} vs reference {want}"
        );
    }
    for (got, want) in out.gate.values.iter().zip(&g) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn m3c_scores_match_reference_reimplementation() {
    let config = M3Config {
        variant: Variant::M3C,
        d_in: 6,
        d_enc: 6,
        d_out: 6,
        embed_dim: 6,
        aggregation: Aggregation::WeightedSum,
        gate: GateType::BottomSwitch,
        enabled: EncoderSet::ALL,
        f_in_layers: 1,
        f_out_layers: 1,
        tcn_layers: 2,
        tcn_width: 3,
        ..M3Config::default()
    };
    let vocab = 15;
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let model = M3Model::init(config, vocab, &mut store, &mut rng).unwrap();

    let events: Vec<Event> = [2usize, 9, 14, 0, 9].iter().map(|&i| Event::item(i)).collect();
    let out = model.score_all(&store, &events).unwrap();

    let q = rows_of(&store, "embed.q");
    let q_out = rows_of(&store, "embed.q_out");
    let f_in_w = rows_of(&store, "f_in.l0.w");
    let f_in_b = rows_of(&store, "f_in.l0.b");
    let f_out_w = rows_of(&store, "f_out.l0.w");
    let f_out_b = rows_of(&store, "f_out.l0.b");
    let gate_w = rows_of(&store, "gate.w");
    let gate_b = rows_of(&store, "gate.b");

    let z: Vec<Vec<f64>> = events
        .iter()
        .map(|e| relu(&add(&matvec(&f_in_w, &q[e.item]), &f_in_b[0])))
        .collect();
    let tau = z.len() - 1;
    let se_t = z[tau].clone();

    // two causal conv layers, width 3, ReLU after each
    let mut levels = z.clone();
    for layer in 0..2 {
        let taps: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|j| rows_of(&store, &format!("tcn.l{layer}.w{j}")))
            .collect();
        let bias = rows_of(&store, &format!("tcn.l{layer}.b"));
        let mut next = Vec::with_capacity(levels.len());
        for t in 0..levels.len() {
            let mut accv = vec![0.0; 6];
            for (j, tap) in taps.iter().enumerate() {
                if j > t {
                    break;
                }
                accv = add(&accv, &matvec(tap, &levels[t - j]));
            }
            next.push(relu(&add(&accv, &bias[0])));
        }
        levels = next;
    }
    let se_s = levels[tau].clone();

    let scale = 1.0 / (6.0f64).sqrt();
    let raw: Vec<f64> = z
        .iter()
        .map(|zi| zi.iter().zip(&z[tau]).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect();
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let mut se_l = vec![0.0; 6];
    for (w, zi) in exps.iter().zip(&z) {
        for (o, v) in se_l.iter_mut().zip(zi) {
            *o += (w / denom) * v;
        }
    }

    let g = sigmoid(&add(&matvec(&gate_w, &z[tau]), &gate_b[0]));
    let agg: Vec<f64> = (0..6)
        .map(|k| g[0] * se_t[k] + g[1] * se_s[k] + g[2] * se_l[k])
        .collect();
    let z_user = relu(&add(&matvec(&f_out_w, &agg), &f_out_b[0]));
    let reference: Vec<f64> = q_out
        .iter()
        .map(|row| row.iter().zip(&z_user).map(|(a, b)| a * b).sum())
        .collect();

    for (v, (got, want)) in out.scores.scores.iter().zip(&reference).enumerate() {
        assert!(
            (got - want).abs() < 1e-10,
            "item {v}: {got} vs reference {want}"
        );
    }
}
