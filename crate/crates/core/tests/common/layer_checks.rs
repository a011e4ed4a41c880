//! Seeded finite-difference check suites for every kernel layer, shared by
//! the core gradient tests and the acceptance suite. Conv cases are vetted
//! against the dense reference for ReLU/max-pool margins before checking, so
//! central differences never straddle a kink.

use mailclass_core::nn::gradcheck::{check_gradients, GradCheckReport};
use mailclass_core::nn::{
    softmax_cross_entropy, BatchNorm, ConvBlock, ConvBlockSpec, Dense, Dropout, Embedding,
    EncodedBatch, Mode, ParamStore, Tensor,
};
use mailclass_core::rng::stream;
use rand::Rng;

fn random_vec(r: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

fn proj(r: &mut impl Rng, n: usize) -> Vec<f64> {
    random_vec(r, n, -1.0, 1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn check_embedding(cases: usize) -> GradCheckReport {
    let mut worst = GradCheckReport::default();
    for seed in 0..cases as u64 {
        let mut r = stream(seed, "gc-embed");
        let (vocab, dim, s) = (r.gen_range(3..7), r.gen_range(1..4), r.gen_range(1..7));
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "table", vocab, dim, false, &mut r);
        let indices: Vec<u32> = (0..s).map(|_| r.gen_range(0..vocab as u32)).collect();
        let c = proj(&mut r, s * dim);

        worst.merge(check_gradients(
            &mut store,
            &[emb.table],
            |store| dot(emb.forward(store, &indices).unwrap().data(), &c),
            |store| {
                store.zero_grads();
                emb.backward(store, &indices, &c);
            },
        ));
    }
    worst
}

pub fn check_dense(cases: usize) -> GradCheckReport {
    let mut worst = GradCheckReport::default();
    for seed in 0..cases as u64 {
        let mut r = stream(seed, "gc-dense");
        let (in_d, out_d, batch) = (r.gen_range(1..5), r.gen_range(1..4), r.gen_range(1..4));
        let mut store = ParamStore::new();
        let dense = Dense::new(&mut store, "fc", in_d, out_d, 1e-3, 1e-3, &mut r);
        {
            // Keep weights away from the |w| kink of the L1 term.
            let id = store.id_of("fc.weight").unwrap();
            for v in store.get_mut(id).tensor.data_mut() {
                let mag = r.gen_range(0.05..0.6);
                *v = if r.gen::<bool>() { mag } else { -mag };
            }
        }
        let x = random_vec(&mut r, batch * in_d, -1.0, 1.0);
        let c = proj(&mut r, batch * out_d);

        worst.merge(check_gradients(
            &mut store,
            &[dense.weight, dense.bias],
            |store| {
                let (y, _) = dense.forward(store, &x, batch).unwrap();
                dot(&y, &c) + dense.penalty(store)
            },
            |store| {
                store.zero_grads();
                let (_, ctx) = dense.forward(store, &x, batch).unwrap();
                dense.backward(store, &ctx, &c);
            },
        ));
    }
    worst
}

pub fn check_batch_norm(cases: usize) -> GradCheckReport {
    let mut worst = GradCheckReport::default();
    for seed in 0..cases as u64 {
        let mut r = stream(seed, "gc-bn");
        let (channels, batch) = (r.gen_range(1..4), r.gen_range(2..6));
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", channels);
        let x0 = random_vec(&mut r, batch * channels, -1.5, 1.5);
        let x_id = store.insert("x", Tensor::new(vec![batch * channels], x0).unwrap(), true);
        let c = proj(&mut r, batch * channels);

        worst.merge(check_gradients(
            &mut store,
            &[bn.gamma, bn.beta, x_id],
            |store| {
                let x = store.get(x_id).data().to_vec();
                let (y, _) = bn.forward(store, &x, batch, Mode::Train).unwrap();
                dot(&y, &c)
            },
            |store| {
                store.zero_grads();
                let x = store.get(x_id).data().to_vec();
                let (_, ctx) = bn.forward(store, &x, batch, Mode::Train).unwrap();
                let dx = bn.backward(store, &ctx.unwrap(), &c);
                let grad = store.get_mut(x_id).tensor.grad_mut();
                for (g, d) in grad.iter_mut().zip(&dx) {
                    *g += d;
                }
            },
        ));
    }
    worst
}

pub fn check_dropout(cases: usize) -> GradCheckReport {
    let mut worst = GradCheckReport::default();
    for seed in 0..cases as u64 {
        let mut r = stream(seed, "gc-drop");
        let n = r.gen_range(4..40);
        let rate = [0.0, 0.3, 0.5][seed as usize % 3];
        let drop = Dropout::new(rate).unwrap();
        let mut store = ParamStore::new();
        let x0 = random_vec(&mut r, n, -1.0, 1.0);
        let x_id = store.insert("x", Tensor::new(vec![n], x0).unwrap(), true);
        let c = proj(&mut r, n);
        let mask_seed = seed;

        worst.merge(check_gradients(
            &mut store,
            &[x_id],
            |store| {
                let mut x = store.get(x_id).data().to_vec();
                drop.forward(&mut x, Mode::Train, &mut stream(mask_seed, "gc-drop-mask"));
                dot(&x, &c)
            },
            |store| {
                store.zero_grads();
                let mut x = store.get(x_id).data().to_vec();
                let mask =
                    drop.forward(&mut x, Mode::Train, &mut stream(mask_seed, "gc-drop-mask"));
                let mut d = c.clone();
                Dropout::backward(&mut d, &mask);
                let grad = store.get_mut(x_id).tensor.grad_mut();
                grad.copy_from_slice(&d);
            },
        ));
    }
    worst
}

pub fn check_softmax_ce(cases: usize) -> GradCheckReport {
    let mut worst = GradCheckReport::default();
    for seed in 0..cases as u64 {
        let mut r = stream(seed, "gc-sce");
        let batch = r.gen_range(1..6);
        let mut store = ParamStore::new();
        let logits0 = random_vec(&mut r, batch * 2, -3.0, 3.0);
        let id = store.insert("logits", Tensor::new(vec![batch * 2], logits0).unwrap(), true);
        let labels: Vec<u8> = (0..batch).map(|_| r.gen_range(0..2u8)).collect();

        worst.merge(check_gradients(
            &mut store,
            &[id],
            |store| {
                softmax_cross_entropy(store.get(id).data(), &labels)
                    .unwrap()
                    .loss
            },
            |store| {
                store.zero_grads();
                let out = softmax_cross_entropy(store.get(id).data(), &labels).unwrap();
                store
                    .get_mut(id)
                    .tensor
                    .grad_mut()
                    .copy_from_slice(&out.d_logits);
            },
        ));
    }
    worst
}

pub struct ConvCase {
    pub store: ParamStore,
    pub conv: ConvBlock,
    pub rows: Vec<Vec<u32>>,
    pub params: Vec<mailclass_core::nn::ParamId>,
}

/// Builds a conv gradcheck case, skipping seeds whose ReLU or max-pool
/// margins are too small for clean central differences. The pinned padding
/// row (freeze_pad) deliberately discards its gradient, so the embedding is
/// only checked in the unfrozen half of the cases.
pub fn vetted_conv_case(seed_base: u64, freeze_pad: bool) -> ConvCase {
    const MARGIN: f64 = 2e-3;
    for attempt in 0..40u64 {
        let seed = seed_base + 10_000 * attempt;
        let mut r = stream(seed, "gc-conv");
        let vocab = r.gen_range(4..7);
        let e = r.gen_range(1..3);
        let max_w = r.gen_range(1..3);
        let f = r.gen_range(1..3);
        let s = r.gen_range(max_w.max(2)..7);
        let bsz = r.gen_range(2..5);

        let mut store = ParamStore::new();
        let embed = Embedding::new(&mut store, "embed", vocab, e, freeze_pad, &mut r);
        if !freeze_pad {
            let id = store.id_of("embed").unwrap();
            for d in 0..e {
                store.get_mut(id).tensor.data_mut()[d] = r.gen_range(-0.7..0.7);
            }
        }
        let spec = ConvBlockSpec::new(max_w, f);
        let windows = spec.window_sizes.clone();
        let conv = ConvBlock::new(&mut store, "conv", embed, spec, &mut r);
        for w in &windows {
            for pname in ["gamma", "beta"] {
                let id = store.id_of(&format!("conv.w{w}.bn.{pname}")).unwrap();
                for v in store.get_mut(id).tensor.data_mut() {
                    *v += r.gen_range(-0.3..0.3);
                }
            }
        }
        let mut rows = Vec::new();
        for b in 0..bsz {
            let real = if b == 0 { s } else { r.gen_range(1..=s) };
            let mut row: Vec<u32> = (0..real).map(|_| r.gen_range(1..vocab as u32)).collect();
            row.resize(s, 0);
            rows.push(row);
        }

        let probe =
            super::reference_conv_forward(&store, "conv", "embed", &rows, &windows, f, e, true);
        if probe.min_pool_gap < MARGIN || probe.min_relu_margin < MARGIN || probe.min_sigma < 1e-2
        {
            continue;
        }

        let mut params = Vec::new();
        if !freeze_pad {
            params.push(store.id_of("embed").unwrap());
        }
        for w in &windows {
            for pname in ["weight", "bias", "bn.gamma", "bn.beta"] {
                params.push(store.id_of(&format!("conv.w{w}.{pname}")).unwrap());
            }
        }
        return ConvCase {
            store,
            conv,
            rows,
            params,
        };
    }
    panic!("no vetted conv case found near seed {seed_base}");
}

pub fn check_conv_block(cases: usize) -> GradCheckReport {
    let mut worst = GradCheckReport::default();
    for seed in 0..cases as u64 {
        let freeze_pad = seed % 2 == 0;
        let ConvCase {
            mut store,
            conv,
            rows,
            params,
        } = vetted_conv_case(seed, freeze_pad);
        let batch = EncodedBatch::new(&rows).unwrap();
        let width = conv.spec.out_width() * rows.len();
        let c = proj(&mut stream(seed, "gc-conv-proj"), width);

        worst.merge(check_gradients(
            &mut store,
            &params,
            |store| {
                let (out, _) = conv.forward_train(store, &batch, Mode::Train).unwrap();
                dot(&out, &c)
            },
            |store| {
                store.zero_grads();
                let (_, ctx) = conv.forward_train(store, &batch, Mode::Train).unwrap();
                conv.backward(store, &batch, &ctx, &c);
            },
        ));
    }
    worst
}

/// Every layer's check at `cases` seeded cases each; returns
/// `(layer name, report)` rows.
pub fn check_all_layers(cases: usize) -> Vec<(&'static str, GradCheckReport)> {
    vec![
        ("embedding", check_embedding(cases)),
        ("dense", check_dense(cases)),
        ("batch_norm", check_batch_norm(cases)),
        ("dropout", check_dropout(cases)),
        ("softmax_cross_entropy", check_softmax_ce(cases)),
        ("conv_block", check_conv_block(cases)),
    ]
}
