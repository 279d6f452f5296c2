//! Finite-difference cases for the autodiff primitives and a full model.
//! Each case returns the worst relative error for one seed.

use rand::Rng;
use soupmt::autodiff::Tape;

use super::{fd_check, fd_check_with, project, random_tensor, rng};

pub const CASES: u64 = 50;

pub fn matmul_plain_batched_and_shared_rhs(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m, k, n) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
    let b = r.random_range(1..3);
    let a2 = random_tensor(&mut r, &[m, k], 1.0);
    let b2 = random_tensor(&mut r, &[k, n], 1.0);
    let a3 = random_tensor(&mut r, &[b, m, k], 1.0);
    let b3 = random_tensor(&mut r, &[b, k, n], 1.0);
    let plain = fd_check(&[a2, b2.clone()], |t, v| {
        let o = t.matmul(v[0], v[1])?;
        project(t, o, seed)
    });
    let batched = fd_check(&[a3.clone(), b3], |t, v| {
        let o = t.matmul(v[0], v[1])?;
        project(t, o, seed)
    });
    let shared = fd_check(&[a3, b2], |t, v| {
        let o = t.matmul(v[0], v[1])?;
        project(t, o, seed)
    });
    plain.max(batched).max(shared)
}

pub fn add_with_and_without_broadcast(seed: u64) -> f64 {
    let mut r = rng(seed);
    let a = random_tensor(&mut r, &[2, 3, 4], 1.0);
    let full = random_tensor(&mut r, &[2, 3, 4], 1.0);
    let bias = random_tensor(&mut r, &[4], 1.0);
    let same = fd_check(&[a.clone(), full], |t, v| {
        let o = t.add(v[0], v[1])?;
        project(t, o, seed)
    });
    let bcast = fd_check(&[a, bias], |t, v| {
        let o = t.add(v[0], v[1])?;
        project(t, o, seed)
    });
    same.max(bcast)
}

pub fn mul_scale_sum_reshape_permute(seed: u64) -> f64 {
    let mut r = rng(seed);
    let a = random_tensor(&mut r, &[2, 3, 2], 1.0);
    let b = random_tensor(&mut r, &[2, 3, 2], 1.0);
    let factor = r.random_range(-2.0..2.0);
    fd_check(&[a, b], |t, v| {
        let m = t.mul(v[0], v[1])?;
        let s = t.scale(m, factor)?;
        let p = t.permute(s, &[2, 0, 1])?;
        let q = t.reshape(p, &[4, 3])?;
        project(t, q, seed)
    })
}

pub fn relu_and_gelu(seed: u64) -> f64 {
    let mut r = rng(seed);
    // keep relu inputs away from the kink
    let mut x = random_tensor(&mut r, &[3, 5], 2.0);
    for v in x.values_mut() {
        if v.abs() < 1e-3 {
            *v += 0.01;
        }
    }
    let relu = fd_check(&[x.clone()], |t, v| {
        let o = t.relu(v[0])?;
        project(t, o, seed)
    });
    let gelu = fd_check(&[x], |t, v| {
        let o = t.gelu(v[0])?;
        project(t, o, seed)
    });
    relu.max(gelu)
}

pub fn softmax_last_axis(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, &[2, 3, 5], 3.0);
    fd_check(&[x], |t, v| {
        let o = t.softmax(v[0])?;
        project(t, o, seed)
    })
}

pub fn layer_norm_all_inputs(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, &[3, 6], 2.0);
    let g = random_tensor(&mut r, &[6], 1.5);
    let b = random_tensor(&mut r, &[6], 1.0);
    fd_check(&[x, g, b], |t, v| {
        let o = t.layer_norm(v[0], v[1], v[2])?;
        project(t, o, seed)
    })
}

pub fn embedding_lookup_with_repeats(seed: u64) -> f64 {
    let mut r = rng(seed);
    let table = random_tensor(&mut r, &[5, 3], 1.0);
    let ids: Vec<usize> = (0..6).map(|_| r.random_range(0..5)).collect();
    fd_check(&[table], |t, v| {
        let o = t.embedding(v[0], &ids, &[2, 3])?;
        project(t, o, seed)
    })
}

pub fn dropout_with_fixed_mask(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, &[4, 4], 1.0);
    fd_check_with(
        &[x],
        || Tape::training(seed + 1000),
        |t, v| {
            let o = t.dropout(v[0], 0.3)?;
            project(t, o, seed)
        },
    )
}

pub fn cross_entropy_with_ignored_rows(seed: u64) -> f64 {
    let mut r = rng(seed);
    let logits = random_tensor(&mut r, &[4, 6], 3.0);
    let targets: Vec<Option<usize>> = (0..4)
        .map(|i| if i == 2 { None } else { Some(r.random_range(0..6)) })
        .collect();
    fd_check(&[logits], |t, v| t.cross_entropy(v[0], &targets))
}

pub fn composed_mlp_three_layers(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, &[4, 5], 1.0);
    let w1 = random_tensor(&mut r, &[5, 6], 0.8);
    let b1 = random_tensor(&mut r, &[6], 0.3);
    let w2 = random_tensor(&mut r, &[6, 6], 0.8);
    let w3 = random_tensor(&mut r, &[6, 3], 0.8);
    let targets: Vec<Option<usize>> = (0..4).map(|_| Some(r.random_range(0..3))).collect();
    fd_check(&[x, w1, b1, w2, w3], |t, v| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.add(h, v[2])?;
        let h = t.gelu(h)?;
        let h = t.matmul(h, v[3])?;
        let h = t.gelu(h)?;
        let o = t.matmul(h, v[4])?;
        t.cross_entropy(o, &targets)
    })
}

pub mod model {
    use super::super::{rel_err, rng, FD_STEP};
    use rand::seq::index::sample;
    use rand::Rng;
    use soupmt::autodiff::Tape;
    use soupmt::model::{make_untrained_adapter, GroupSet, Model, ModelConfig, Side, TokenBatch};

    fn config() -> ModelConfig {
        ModelConfig {
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            vocab_size: 9,
            max_seq_len: 8,
            adapter_bottleneck: 3,
            dropout_p: 0.0,
        }
    }

    fn loss(m: &Model<f64>, src: &TokenBatch, tgt: &TokenBatch, targets: &[Option<usize>]) -> f64 {
        let mut tape = Tape::new();
        let logits = m.forward(&mut tape, src, tgt, GroupSet::NONE).unwrap();
        let l = tape.cross_entropy(logits, targets).unwrap();
        tape.item(l)
    }

    /// Full encoder-decoder with adapters on both sides, every tensor probed
    /// at up to `PER_TENSOR` random entries.
    pub fn encoder_decoder_with_adapters(seed: u64) -> f64 {
        const PER_TENSOR: usize = 6;
        let mut r = rng(seed);
        let mut m = Model::<f64>::build(config(), seed).unwrap();
        for side in [Side::Encoder, Side::Decoder] {
            let mut a = make_untrained_adapter(&config(), side, seed + 7).unwrap();
            // move the adapter away from its near-identity init
            a.map_values(|_, v| *v += r.random_range(-0.3..0.3));
            m.attach(side, a).unwrap();
        }
        let seqs = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<usize>> {
            (0..2)
                .map(|_| {
                    let n = r.random_range(2..5);
                    (0..n).map(|_| r.random_range(0..9)).collect()
                })
                .collect()
        };
        let src = TokenBatch::from_seqs(&seqs(&mut r), 0).unwrap();
        let tgt = TokenBatch::from_seqs(&seqs(&mut r), 0).unwrap();
        let targets: Vec<Option<usize>> = (0..tgt.batch() * tgt.width)
            .map(|i| (i % tgt.width < tgt.lens[i / tgt.width]).then(|| r.random_range(0..9)))
            .collect();

        let mut tape = Tape::new();
        let logits = m.forward(&mut tape, &src, &tgt, GroupSet::all()).unwrap();
        let l = tape.cross_entropy(logits, &targets).unwrap();
        let grads = tape.backward(l).unwrap();
        let analytic: Vec<(String, Vec<f64>)> = grads.named().map(|(n, g)| (n.to_string(), g.to_vec())).collect();
        assert_eq!(analytic.len(), m.all_params().len());

        let mut worst = 0.0f64;
        for (name, g) in &analytic {
            let picks = sample(&mut r, g.len(), PER_TENSOR.min(g.len()));
            for j in picks {
                let orig = m.param(name).unwrap().values()[j];
                m.param_mut(name).unwrap().values_mut()[j] = orig + FD_STEP;
                let plus = loss(&m, &src, &tgt, &targets);
                m.param_mut(name).unwrap().values_mut()[j] = orig - FD_STEP;
                let minus = loss(&m, &src, &tgt, &targets);
                m.param_mut(name).unwrap().values_mut()[j] = orig;
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                let e = rel_err(g[j], numeric);
                worst = worst.max(e);
            }
        }
        worst
    }
}

pub fn all() -> Vec<(&'static str, fn(u64) -> f64)> {
    vec![
        ("matmul", matmul_plain_batched_and_shared_rhs),
        ("add", add_with_and_without_broadcast),
        ("mul/scale/sum/reshape/permute", mul_scale_sum_reshape_permute),
        ("relu/gelu", relu_and_gelu),
        ("softmax", softmax_last_axis),
        ("layer_norm", layer_norm_all_inputs),
        ("embedding", embedding_lookup_with_repeats),
        ("dropout", dropout_with_fixed_mask),
        ("cross_entropy", cross_entropy_with_ignored_rows),
        ("mlp", composed_mlp_three_layers),
        ("encoder-decoder", model::encoder_decoder_with_adapters),
    ]
}
