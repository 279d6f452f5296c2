use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soupmt::model::{greedy_decode, make_untrained_adapter, GroupSet, Model, ModelConfig, ParameterGroupTag, Side};
use soupmt::training::{
    accumulated_gradients, caft, caft_with_hook, train_denoising_adapter, Adam, DenoisingData, Example, ParallelData,
    ScheduleKind, TrainConfig,
};
use soupmt::Error;

const EOS: usize = 2;
const MASK: usize = 3;
const TAG_A: usize = 5;
const TAG_B: usize = 6;
const FIRST_WORD: usize = 7;

fn config() -> ModelConfig {
    ModelConfig {
        n_enc_layers: 2,
        n_dec_layers: 2,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        vocab_size: 24,
        max_seq_len: 16,
        adapter_bottleneck: 8,
        dropout_p: 0.1,
    }
}

fn train_cfg(max_steps: usize) -> TrainConfig {
    TrainConfig {
        max_steps,
        batch_size: 8,
        grad_accum: 2,
        warmup_steps: 5,
        max_lr: 3e-3,
        schedule: ScheduleKind::Constant,
        eval_interval: 10,
        seed: 4,
        ..TrainConfig::default()
    }
}

fn sequences(n: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = r.random_range(3..9);
            (0..len).map(|_| r.random_range(FIRST_WORD..24)).collect()
        })
        .collect()
}

fn mono(n: usize) -> DenoisingData {
    DenoisingData {
        sequences: sequences(n, 1),
        lang_tag: TAG_A,
        mask_id: MASK,
        eos: EOS,
    }
}

fn copy_pairs(n: usize) -> ParallelData {
    ParallelData {
        pairs: sequences(n, 2).into_iter().map(|s| (s.clone(), s)).collect(),
        src_tag: TAG_A,
        tgt_tag: TAG_B,
        eos: EOS,
    }
}

fn values_of(m: &Model<f32>) -> Vec<(String, Vec<u32>)> {
    m.all_params()
        .into_iter()
        .map(|(n, t)| (n, t.values().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn adapter_training_leaves_base_untouched() {
    let mut m = Model::<f32>::build(config(), 1).unwrap();
    let before = m.base_params().content_hash();
    let init = make_untrained_adapter(&config(), Side::Encoder, 9).unwrap();
    let (trained, out) =
        train_denoising_adapter(&mut m, init.clone(), Side::Encoder, &mono(60), &train_cfg(20)).unwrap();
    assert_eq!(m.base_params().content_hash(), before);
    assert!(m.adapter(Side::Encoder).is_none());
    assert_ne!(trained, init);
    assert_eq!(trained.fingerprint(), init.fingerprint());
    assert!(out.steps > 0);
}

#[test]
fn caft_changes_only_cross_attention() {
    let mut m = Model::<f32>::build(config(), 1).unwrap();
    let enc = make_untrained_adapter(&config(), Side::Encoder, 9).unwrap();
    let dec = make_untrained_adapter(&config(), Side::Decoder, 9).unwrap();
    let mut reference = m.clone();
    reference.attach_adapters(Some(enc.clone()), Some(dec.clone())).unwrap();
    let before = values_of(&reference);
    caft(&mut m, enc, dec, &copy_pairs(60), &train_cfg(15)).unwrap();
    let after = values_of(&m);
    assert_eq!(before.len(), after.len());
    let mut changed = 0;
    for ((name, a), (name2, b)) in before.iter().zip(&after) {
        assert_eq!(name, name2);
        if ParameterGroupTag::of(name).unwrap() == ParameterGroupTag::CrossAttention {
            changed += usize::from(a != b);
        } else {
            assert_eq!(a, b, "{name} changed");
        }
    }
    assert!(changed > 0);
}

#[test]
fn gradient_accumulation_matches_full_batch() {
    let mut m = Model::<f64>::build(
        ModelConfig {
            dropout_p: 0.0,
            ..config()
        },
        3,
    )
    .unwrap();
    m.attach(
        Side::Decoder,
        make_untrained_adapter(&config(), Side::Decoder, 2).unwrap(),
    )
    .unwrap();
    let exs: Vec<Example> = sequences(6, 5)
        .into_iter()
        .map(|s| {
            let mut src = vec![TAG_A];
            src.extend(&s);
            src.push(EOS);
            let mut tgt_in = vec![TAG_B];
            tgt_in.extend(&s);
            let mut tgt_out = s;
            tgt_out.push(EOS);
            Example { src, tgt_in, tgt_out }
        })
        .collect();
    let all: Vec<&Example> = exs.iter().collect();
    let trainable = GroupSet::all();
    let (l1, g1) = accumulated_gradients(&m, trainable, &[all.clone()], None).unwrap();
    let split = vec![all[..2].to_vec(), all[2..3].to_vec(), all[3..].to_vec()];
    let (l2, g2) = accumulated_gradients(&m, trainable, &split, None).unwrap();
    assert!((l1 - l2).abs() < 1e-10);
    assert_eq!(g1.len(), g2.len());
    for ((n1, a), (n2, b)) in g1.iter().zip(&g2) {
        assert_eq!(n1, n2);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-5, "{n1}");
        }
    }
}

#[test]
fn same_seed_same_adapter() {
    let run = || {
        let mut m = Model::<f32>::build(config(), 1).unwrap();
        let init = make_untrained_adapter(&config(), Side::Decoder, 9).unwrap();
        train_denoising_adapter(&mut m, init, Side::Decoder, &mono(40), &train_cfg(12)).unwrap()
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a.store().content_hash(), b.store().content_hash());
    assert_eq!(la.log.to_csv(), lb.log.to_csv());
}

#[test]
fn zero_steps_return_init() {
    let mut m = Model::<f32>::build(config(), 1).unwrap();
    let init = make_untrained_adapter(&config(), Side::Encoder, 9).unwrap();
    let (out, o) = train_denoising_adapter(&mut m, init.clone(), Side::Encoder, &mono(20), &train_cfg(0)).unwrap();
    assert_eq!(out, init);
    assert_eq!(o.steps, 0);
    assert_eq!(o.log.dev_losses().len(), 1);
}

#[test]
fn detaching_during_caft_is_a_contract_error() {
    let mut m = Model::<f32>::build(config(), 1).unwrap();
    let enc = make_untrained_adapter(&config(), Side::Encoder, 9).unwrap();
    let dec = make_untrained_adapter(&config(), Side::Decoder, 9).unwrap();
    let mut hook = |step: usize, m: &mut Model<f32>| {
        if step == 3 {
            m.detach(Side::Decoder);
        }
    };
    let err = caft_with_hook(&mut m, enc, dec, &copy_pairs(60), &train_cfg(10), &mut hook).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn caft_lowers_dev_loss_on_copy_task() {
    let mut m = Model::<f32>::build(config(), 1).unwrap();
    let enc = make_untrained_adapter(&config(), Side::Encoder, 9).unwrap();
    let dec = make_untrained_adapter(&config(), Side::Decoder, 9).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        max_steps: 1000,
        ..train_cfg(0)
    };
    let (_, out) = caft(&mut m, enc, dec, &copy_pairs(500), &cfg).unwrap();
    let dev = out.log.dev_losses();
    assert!(out.best_dev_loss < dev[0].1, "{dev:?}");
}

#[test]
fn memorizes_twenty_pairs() {
    let cfg = ModelConfig {
        dropout_p: 0.0,
        ..config()
    };
    let mut m = Model::<f32>::build(cfg, 7).unwrap();
    let data = copy_pairs(20);
    let exs: Vec<Example> = data
        .pairs
        .iter()
        .map(|(s, t)| {
            let mut src = vec![TAG_A];
            src.extend(s);
            src.push(EOS);
            let mut tgt_in = vec![TAG_B];
            tgt_in.extend(t);
            let mut tgt_out = t.clone();
            tgt_out.push(EOS);
            Example { src, tgt_in, tgt_out }
        })
        .collect();
    let batch: Vec<&Example> = exs.iter().collect();
    let mut adam = Adam::new();
    for _ in 0..300 {
        let (_, g) = accumulated_gradients(&m, GroupSet::all(), &[batch.clone()], None).unwrap();
        adam.step(&mut m, &g, 3e-3).unwrap();
    }
    for (e, (_, t)) in exs.iter().zip(&data.pairs) {
        let out = greedy_decode(&m, &e.src, &[TAG_B], 16, EOS).unwrap();
        assert_eq!(&out, t);
    }
}
