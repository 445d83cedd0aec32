use std::collections::BTreeMap;

use proptest::prelude::*;

use hiertext::adaptation::{prepare_pretrain_corpus, split_sentences};
use hiertext::eval::{confusion_matrix, macro_f1};
use hiertext::model::{Encoder, EncoderConfig};
use hiertext::text::{build_vocab, encode, tokenize, Subtask, CLS, PAD, SEP};
use hiertext::training::{class_weights, step_decay_lr, weighted_cross_entropy, AdamW, AdamWConfig, ClassWeights};
use hiertext::{Graph, ParamStore, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

/// Per-class F1 from raw counts, averaged.
fn reference_macro_f1(preds: &[usize], golds: &[usize], m: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..m {
        let tp = preds.iter().zip(golds).filter(|&(&p, &g)| p == c && g == c).count() as f64;
        let fp = preds.iter().zip(golds).filter(|&(&p, &g)| p == c && g != c).count() as f64;
        let fn_ = preds.iter().zip(golds).filter(|&(&p, &g)| p != c && g == c).count() as f64;
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        total += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    total / m as f64
}

fn labels(m: usize, n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (prop::collection::vec(0..m, n), prop::collection::vec(0..m, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(x in matrix(4, 7)) {
        let mut g = Graph::new();
        let v = g.constant(x);
        let s = g.softmax(v).unwrap();
        for row in g.value(s).data().chunks(7) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn matmul_is_associative(a in matrix(3, 4), b in matrix(4, 5), c in matrix(5, 2)) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(close(left.data(), right.data(), 1e-10));
    }

    #[test]
    fn macro_f1_matches_counting_oracle((p, g) in labels(4, 40)) {
        let got = macro_f1(&p, &g, 4).unwrap();
        prop_assert!((got - reference_macro_f1(&p, &g, 4)).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_ignores_instance_order((p, g) in labels(3, 30), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..p.len()).collect();
        hiertext::SeedRng::new(seed).shuffle(&mut idx);
        let p2: Vec<usize> = idx.iter().map(|&i| p[i]).collect();
        let g2: Vec<usize> = idx.iter().map(|&i| g[i]).collect();
        prop_assert_eq!(macro_f1(&p, &g, 3).unwrap(), macro_f1(&p2, &g2, 3).unwrap());
        prop_assert_eq!(confusion_matrix(&p, &g, 3).unwrap().total(), 30);
    }

    #[test]
    fn class_weights_sum_to_arity_and_favor_rare_classes(counts in prop::collection::vec(1usize..500, 2..8)) {
        let w = class_weights(&counts).unwrap();
        let w = w.values();
        prop_assert!((w.iter().sum::<f64>() - counts.len() as f64).abs() < 1e-9);
        for i in 0..counts.len() {
            for j in 0..counts.len() {
                if counts[i] < counts[j] {
                    prop_assert!(w[i] > w[j]);
                } else if counts[i] == counts[j] {
                    prop_assert!((w[i] - w[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn weighted_cross_entropy_matches_loop(
        x in matrix(6, 3),
        targets in prop::collection::vec(0usize..3, 6),
        counts in prop::collection::vec(1usize..50, 3),
    ) {
        let w = class_weights(&counts).unwrap();
        let mut g = Graph::new();
        let logits = g.param(x.clone());
        let loss = weighted_cross_entropy(&mut g, logits, &targets, Some(&w)).unwrap();
        let got = g.value(loss).item().unwrap();

        let (mut num, mut den) = (0.0, 0.0);
        for (row, &t) in x.data().chunks(3).zip(&targets) {
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            let wi = w.values()[t];
            num += wi * (lse - row[t]);
            den += wi;
        }
        prop_assert!((got - num / den).abs() < 1e-10);

        let mut g = Graph::new();
        let logits = g.param(x);
        let plain = weighted_cross_entropy(&mut g, logits, &targets, Some(&ClassWeights::uniform(3))).unwrap();
        let mut h = Graph::new();
        let l2 = h.param(g.value(logits).clone());
        let none = weighted_cross_entropy(&mut h, l2, &targets, None).unwrap();
        prop_assert!((g.value(plain).item().unwrap() - h.value(none).item().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn adamw_matches_reference_loop(
        init in prop::collection::vec(-1.0f64..1.0, 5),
        grads in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 5), 50),
        wd in 0.0f64..0.1,
    ) {
        let cfg = AdamWConfig { weight_decay: wd, ..AdamWConfig::default() };
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(vec![5], init.clone()).unwrap());
        let mut opt = AdamW::new(cfg);

        let (mut theta, mut m, mut v) = (init, vec![0.0; 5], vec![0.0; 5]);
        for (t, gstep) in grads.iter().enumerate() {
            let lr = step_decay_lr(1e-2, t / 10, 2, 0.5);
            opt.step(&mut store, &BTreeMap::from([("w".to_string(), gstep.clone())]), lr).unwrap();
            let k = (t + 1) as i32;
            for i in 0..5 {
                m[i] = 0.9 * m[i] + 0.1 * gstep[i];
                v[i] = 0.999 * v[i] + 0.001 * gstep[i] * gstep[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(k));
                let vh = v[i] / (1.0 - 0.999f64.powi(k));
                theta[i] = theta[i] - lr * wd * theta[i] - lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        prop_assert!(close(store.get("w").unwrap().data(), &theta, 1e-10));
    }

    #[test]
    fn step_decay_halves_on_schedule(base in 1e-6f64..1e-2, epoch in 0usize..30, step in 1usize..6) {
        let lr = step_decay_lr(base, epoch, step, 0.5);
        prop_assert!((lr - base * 0.5f64.powi((epoch / step) as i32)).abs() <= 1e-18);
        prop_assert!(step_decay_lr(base, epoch + 1, step, 0.5) <= lr);
    }

    #[test]
    fn two_sentence_filter_is_idempotent(
        docs in prop::collection::vec(prop::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,4}[.?!]", 0..5), 0..12),
    ) {
        let docs: Vec<String> = docs.iter().map(|d| d.join(" ")).collect();
        let (kept, stats) = prepare_pretrain_corpus(&docs);
        prop_assert!(kept.iter().all(|d| d.len() >= 2));
        prop_assert_eq!(stats.kept_docs, kept.len());
        let rejoined: Vec<String> = kept.iter().map(|d| d.join(" ")).collect();
        let (again, _) = prepare_pretrain_corpus(&rejoined);
        prop_assert_eq!(&again, &kept);
        for (d, k) in docs.iter().filter(|d| split_sentences(d).len() >= 2).zip(&kept) {
            prop_assert_eq!(&split_sentences(d), k);
        }
    }

    #[test]
    fn decode_inverts_encode_for_known_tokens(words in prop::collection::vec("[a-z]{1,8}", 1..12)) {
        let text = words.join(" ");
        let (vocab, _) = build_vocab(&[text.as_str()], 100, 1).unwrap();
        let ex = encode(&text, &vocab, 16).unwrap();
        let real = ex.real_len();
        prop_assert_eq!(ex.token_ids[0], CLS);
        prop_assert_eq!(ex.token_ids[real - 1], SEP);
        prop_assert!(ex.token_ids[real..].iter().all(|&t| t == PAD));
        let expected: Vec<String> = tokenize(&text).into_iter().take(14).collect();
        prop_assert_eq!(vocab.decode(&ex.token_ids[1..real - 1]), expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn encoder_logits_follow_batch_permutation(
        texts in prop::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,6}", 2..6),
        seed in any::<u64>(),
    ) {
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let (vocab, _) = build_vocab(&refs, 200, 1).unwrap();
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            hidden: 8,
            layers: 1,
            heads: 2,
            ffn: 16,
            max_len: 12,
            ..EncoderConfig::default()
        }
        .for_subtask(Subtask::B);
        let enc = Encoder::init(cfg, seed).unwrap();
        let examples: Vec<_> = texts.iter().map(|t| encode(t, &vocab, 12).unwrap()).collect();
        let forward: Vec<_> = examples.iter().collect();
        let reversed: Vec<_> = examples.iter().rev().collect();
        let a = enc.logits(&forward).unwrap();
        let b = enc.logits(&reversed).unwrap();
        let m = Subtask::B.arity();
        let n = examples.len();
        for i in 0..n {
            let row_a = &a.data()[i * m..(i + 1) * m];
            let row_b = &b.data()[(n - 1 - i) * m..(n - i) * m];
            prop_assert!(close(row_a, row_b, 1e-10));
        }
        // A lone example gives the same logits as inside a padded batch.
        let single = enc.logits(&forward[..1]).unwrap();
        prop_assert!(close(single.data(), &a.data()[..m], 1e-10));
    }
}
