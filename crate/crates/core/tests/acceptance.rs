//! Acceptance suite. Runs every criterion, prints one verdict line each and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::*;
use mwe_core::autodiff::{OpKind, ParamId, ParamStore, Tape, Tensor};
use mwe_core::corpus::{
    decode_tags, encode_tags, extract_mwes, merge_corpora, parse_cupt, serialize_cupt, Corpus,
    MweSpan, Sentence,
};
use mwe_core::evaluation::{evaluate, f1_score, round2, MatchMode};
use mwe_core::gradcheck_suite::{run_suite, THRESHOLD};
use mwe_core::lateral_inhibition::LateralInhibitionLayer;
use mwe_core::model::{Model, ModelConfig, Reversal};
use mwe_core::trainer::{
    batch_gradients, language_accuracy, train, train_step, LossTerms, TrainerConfig,
};
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn within(budget: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    if t > budget {
        Err(format!("took {:.2?}, budget {budget:.0?}", t))
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------- 1

/// (table, row, column, P, R, printed F1)
const PUBLISHED: [(&str, &str, &str, f64, f64, f64); 28] = [
    ("mono", "MTLB-STRUCT", "global", 89.88, 91.05, 90.46),
    ("mono", "MTLB-STRUCT", "unseen", 28.84, 41.47, 34.02),
    ("mono", "TRAVIS-mono", "global", 90.80, 91.39, 91.09),
    ("mono", "TRAVIS-mono", "unseen", 33.05, 51.51, 40.26),
    ("mono", "RoBERT", "global", 90.73, 93.74, 92.21),
    ("mono", "RoBERT", "unseen", 52.97, 70.69, 60.56),
    ("mono", "Distil-RoBERT", "global", 87.56, 90.40, 88.96),
    ("mono", "Distil-RoBERT", "unseen", 41.06, 62.77, 49.65),
    ("mono", "M-BERT", "global", 90.39, 90.11, 90.25),
    ("mono", "M-BERT", "unseen", 46.82, 51.09, 48.86),
    ("mono", "XLM-RoBERTa", "global", 90.72, 91.46, 91.09),
    ("mono", "XLM-RoBERTa", "unseen", 51.54, 62.77, 56.61),
    ("multi", "M-BERT", "global", 91.34, 88.46, 89.88),
    ("multi", "M-BERT", "unseen", 49.90, 48.12, 48.99),
    ("multi", "M-BERT + LI", "global", 90.78, 88.85, 89.81),
    ("multi", "M-BERT + LI", "unseen", 45.06, 45.15, 45.10),
    ("multi", "M-BERT + Adv", "global", 89.14, 90.13, 89.63),
    ("multi", "M-BERT + Adv", "unseen", 46.27, 56.44, 50.85),
    ("multi", "M-BERT + LI + Adv", "global", 89.95, 88.78, 89.36),
    ("multi", "M-BERT + LI + Adv", "unseen", 45.44, 50.30, 47.74),
    ("multi", "XLM-RoBERTa", "global", 91.23, 92.53, 91.87),
    ("multi", "XLM-RoBERTa", "unseen", 52.92, 64.55, 58.16),
    ("multi", "XLM-RoBERTa + LI", "global", 91.12, 92.02, 91.02),
    ("multi", "XLM-RoBERTa + LI", "unseen", 52.11, 61.19, 56.28),
    ("multi", "XLM-RoBERTa + Adv", "global", 89.45, 92.87, 91.12),
    ("multi", "XLM-RoBERTa + Adv", "unseen", 54.91, 63.96, 59.09),
    (
        "multi",
        "XLM-RoBERTa + Adv + LI",
        "global",
        90.49,
        92.61,
        91.53,
    ),
    (
        "multi",
        "XLM-RoBERTa + Adv + LI",
        "unseen",
        55.01,
        64.47,
        59.36,
    ),
];

/// Rows whose printed F1 is not 2PR/(P+R) of the printed P and R at two
/// decimals. Frozen so any change in the F1 routine shows up here.
const INCONSISTENT_ROWS: [(&str, &str, &str); 10] = [
    ("mono", "TRAVIS-mono", "unseen"),
    ("mono", "XLM-RoBERTa", "unseen"),
    ("multi", "M-BERT + LI", "global"),
    ("multi", "M-BERT + LI + Adv", "unseen"),
    ("multi", "XLM-RoBERTa", "global"),
    ("multi", "XLM-RoBERTa + LI", "global"),
    ("multi", "XLM-RoBERTa + LI", "unseen"),
    ("multi", "XLM-RoBERTa + Adv", "global"),
    ("multi", "XLM-RoBERTa + Adv + LI", "global"),
    ("multi", "XLM-RoBERTa + Adv + LI", "unseen"),
];

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let tol = 0.005;
    let mut mismatched = Vec::new();
    for (table, row, col, p, r, printed) in PUBLISHED {
        let f = f1_score(p, r);
        if (f - printed).abs() > tol {
            println!(
                "    reported: {table} / {row} / {col}: 2PR/(P+R) = {f:.4} ({:.2}), printed {printed:.2}",
                round2(f)
            );
            mismatched.push((table, row, col));
        }
    }
    let robert = [(90.73, 93.74, 92.21), (52.97, 70.69, 60.56)];
    for (p, r, want) in robert {
        if (f1_score(p, r) - want).abs() > tol {
            return Err(format!("RoBERT row ({p}, {r}) does not give {want}"));
        }
    }
    if mismatched != INCONSISTENT_ROWS {
        return Err(format!(
            "unexpected set of inconsistent rows: {mismatched:?}"
        ));
    }
    within(Duration::from_secs(1), start)?;
    Ok(format!(
        "RoBERT rows reproduce 92.21 / 60.56; {}/28 rows agree, {} printed F1 values reported as inconsistent",
        28 - mismatched.len(),
        mismatched.len()
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let report = run_suite(0, None).map_err(|e| e.to_string())?;
    for line in report.to_string().lines() {
        println!("    {line}");
    }
    if !report.passed() {
        return Err(format!("max relative error {:.3e}", report.max_rel_error()));
    }
    let hard = report
        .cases
        .iter()
        .find(|c| c.expected_fail)
        .ok_or("hard-Heaviside control missing")?;
    if hard.within_threshold() {
        return Err("hard-Heaviside control unexpectedly agreed".into());
    }
    let corrupted = run_suite(
        0,
        Some(mwe_core::autodiff::Fault {
            kind: OpKind::Sigmoid,
            factor: 1.01,
        }),
    )
    .map_err(|e| e.to_string())?;
    if corrupted.passed() {
        return Err("corrupted sigmoid adjoint went unnoticed".into());
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!(
        "max relative error {:.2e} < {THRESHOLD:e}; hard gate expected-fail at {:.2e}",
        report.max_rel_error(),
        hard.max_rel_error
    ))
}

// ---------------------------------------------------------------- 3

fn d2_corpus() -> Corpus {
    let ro = "1\tel\tel\tX\t_\t_\t0\tdep\t_\t_\t*\n\
              2\tfura\tfura\tX\t_\t_\t0\tdep\t_\t_\t1:VID\n\
              3\tsomnul\tsomn\tX\t_\t_\t0\tdep\t_\t_\t1\n\n";
    let fr = "1\tse\tse\tX\t_\t_\t0\tdep\t_\t_\t1:IRV\n\
              2\tsouvient\tsouvenir\tX\t_\t_\t0\tdep\t_\t_\t1\n\n";
    merge_corpora(vec![
        (corpus_of(ro, "RO"), lang("RO")),
        (corpus_of(fr, "FR"), lang("FR")),
    ])
    .unwrap()
}

fn d2_model(adv: bool) -> Model {
    let c = d2_corpus();
    let cfg = ModelConfig {
        embedding_dim: 2,
        window: 0,
        hidden_dim: 2,
        discriminator_hidden_dim: 2,
        use_lateral_inhibition: true,
        use_adversarial: adv,
        ..ModelConfig::default()
    };
    let mut m = Model::new(cfg, &c).unwrap();
    // hand-sized values with some closed gates and dead relus
    let ids: Vec<ParamId> = m.store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        for (j, v) in m.store.get_mut(id).value.data_mut().iter_mut().enumerate() {
            *v = (1.7 * (k * 7 + j) as f64 + 0.3).sin() * 0.9;
        }
    }
    m
}

/// Plain nested-loop forward/backward of the d = 2 model, independent of the
/// tape. Returns `(grad of L_y, grad of L_lg)` keyed by parameter name.
#[allow(clippy::needless_range_loop)]
fn d2_hand_gradients(
    m: &Model,
    batch: &[&Sentence],
) -> (BTreeMap<String, Vec<f64>>, BTreeMap<String, Vec<f64>>) {
    let p = |name: &str| m.store.get(m.store.find(name).unwrap()).value.clone();
    let (e, w1, b1) = (p("F.embedding"), p("F.hidden.weight"), p("F.hidden.bias"));
    let (lw, lb) = (p("C.inhibition.weight"), p("C.inhibition.bias"));
    let (v, c) = (p("C.head.weight"), p("C.head.bias"));
    let (u1, ub1, u2, ub2) = (
        p("LG.hidden.weight"),
        p("LG.hidden.bias"),
        p("LG.out.weight"),
        p("LG.out.bias"),
    );
    let k = m.config.steepness;
    let d = 2;
    let t = m.tagset.len();
    let nl = m.languages.len();
    let total: usize = batch.iter().map(|s| s.len()).sum();
    let nb = batch.len() as f64;

    let zeros = |x: &Tensor| vec![0.0; x.len()];
    let mut gy: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut gl: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (name, x) in [
        ("F.embedding", &e),
        ("F.hidden.weight", &w1),
        ("F.hidden.bias", &b1),
        ("C.inhibition.weight", &lw),
        ("C.inhibition.bias", &lb),
        ("C.head.weight", &v),
        ("C.head.bias", &c),
        ("LG.hidden.weight", &u1),
        ("LG.hidden.bias", &ub1),
        ("LG.out.weight", &u2),
        ("LG.out.bias", &ub2),
    ] {
        gy.insert(name.into(), zeros(x));
        gl.insert(name.into(), zeros(x));
    }
    let softmax = |z: &[f64]| {
        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = ex.iter().sum();
        ex.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());

    // backprop into F from dL/dh for one token
    let back_f = |g: &mut BTreeMap<String, Vec<f64>>, id: usize, a: &[f64], dh: &[f64]| {
        let da: Vec<f64> = (0..d)
            .map(|j| if a[j] > 0.0 { dh[j] } else { 0.0 })
            .collect();
        for q in 0..d {
            for j in 0..d {
                g.get_mut("F.hidden.weight").unwrap()[q * d + j] += e.at(id, q) * da[j];
                g.get_mut("F.embedding").unwrap()[id * d + q] += da[j] * w1.at(q, j);
            }
        }
        for j in 0..d {
            g.get_mut("F.hidden.bias").unwrap()[j] += da[j];
        }
    };

    for s in batch {
        let labels = m.gold_labels(s).unwrap();
        let ids: Vec<usize> = s.tokens.iter().map(|tk| m.vocab.id(&tk.form)).collect();
        let n = s.len();
        let mut hs = Vec::new();
        let mut as_ = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            let a: Vec<f64> = (0..d)
                .map(|j| (0..d).map(|q| e.at(id, q) * w1.at(q, j)).sum::<f64>() + b1.data()[j])
                .collect();
            let h: Vec<f64> = a.iter().map(|x| x.max(0.0)).collect();
            // inhibition
            let pre: Vec<f64> = (0..d)
                .map(|j| {
                    (0..d)
                        .filter(|&q| q != j)
                        .map(|q| h[q] * lw.at(j, q))
                        .sum::<f64>()
                        + lb.data()[j]
                })
                .collect();
            let gate: Vec<f64> = pre
                .iter()
                .map(|&x| if x > 0.0 { 1.0 } else { 0.0 })
                .collect();
            let y: Vec<f64> = (0..d).map(|j| h[j] * gate[j]).collect();
            let z: Vec<f64> = (0..t)
                .map(|o| (0..d).map(|j| y[j] * v.at(j, o)).sum::<f64>() + c.data()[o])
                .collect();
            let mut dz = softmax(&z);
            dz[labels[i]] -= 1.0;
            for x in dz.iter_mut() {
                *x /= total as f64;
            }
            let mut dy = vec![0.0; d];
            for j in 0..d {
                for o in 0..t {
                    gy.get_mut("C.head.weight").unwrap()[j * t + o] += y[j] * dz[o];
                    dy[j] += dz[o] * v.at(j, o);
                }
            }
            for o in 0..t {
                gy.get_mut("C.head.bias").unwrap()[o] += dz[o];
            }
            let mut dh: Vec<f64> = (0..d).map(|j| dy[j] * gate[j]).collect();
            for j in 0..d {
                let sg = sig(k * pre[j]);
                let dpre = dy[j] * h[j] * k * sg * (1.0 - sg);
                gy.get_mut("C.inhibition.bias").unwrap()[j] += dpre;
                for q in 0..d {
                    if q != j {
                        gy.get_mut("C.inhibition.weight").unwrap()[j * d + q] += dpre * h[q];
                        dh[q] += dpre * lw.at(j, q);
                    }
                }
            }
            back_f(&mut gy, id, &a, &dh);
            let _ = i;
            hs.push(h);
            as_.push(a);
        }

        // discriminator on the mean of h
        let mean: Vec<f64> = (0..d)
            .map(|j| hs.iter().map(|h| h[j]).sum::<f64>() / n as f64)
            .collect();
        let dh2 = u1.cols();
        let r: Vec<f64> = (0..dh2)
            .map(|o| (0..d).map(|j| mean[j] * u1.at(j, o)).sum::<f64>() + ub1.data()[o])
            .collect();
        let q: Vec<f64> = r.iter().map(|x| x.max(0.0)).collect();
        let o: Vec<f64> = (0..nl)
            .map(|l| (0..dh2).map(|a| q[a] * u2.at(a, l)).sum::<f64>() + ub2.data()[l])
            .collect();
        let mut dout = softmax(&o);
        dout[m.language_index(&s.language).unwrap()] -= 1.0;
        for x in dout.iter_mut() {
            *x /= nb;
        }
        let mut dq = vec![0.0; dh2];
        for a in 0..dh2 {
            for l in 0..nl {
                gl.get_mut("LG.out.weight").unwrap()[a * nl + l] += q[a] * dout[l];
                dq[a] += dout[l] * u2.at(a, l);
            }
        }
        for l in 0..nl {
            gl.get_mut("LG.out.bias").unwrap()[l] += dout[l];
        }
        let dr: Vec<f64> = (0..dh2)
            .map(|a| if r[a] > 0.0 { dq[a] } else { 0.0 })
            .collect();
        let mut dmean = vec![0.0; d];
        for j in 0..d {
            for a in 0..dh2 {
                gl.get_mut("LG.hidden.weight").unwrap()[j * dh2 + a] += mean[j] * dr[a];
                dmean[j] += dr[a] * u1.at(j, a);
            }
        }
        for a in 0..dh2 {
            gl.get_mut("LG.hidden.bias").unwrap()[a] += dr[a];
        }
        for (i, &id) in ids.iter().enumerate() {
            let dh: Vec<f64> = dmean.iter().map(|x| x / n as f64).collect();
            back_f(&mut gl, id, &as_[i], &dh);
        }
    }
    (gy, gl)
}

fn criterion_3() -> Outcome {
    let c = d2_corpus();
    let batch: Vec<&Sentence> = c.sentences.iter().collect();
    let alpha = 0.3;
    let cfg = TrainerConfig {
        learning_rate: alpha,
        ..TrainerConfig::default()
    };
    let mut worst = 0.0f64;
    for lambda in [0.0, 0.5, 1.0, 2.0, 0.37] {
        let m0 = d2_model(true);
        let (gy, gl) = d2_hand_gradients(&m0, &batch);
        let mut m = m0.clone();
        train_step(&mut m, &batch, &cfg, lambda).map_err(|e| e.to_string())?;
        for (id, param) in m.store.iter() {
            let name = &param.name;
            let before = m0.store.get(id).value.data();
            let (y, l) = (&gy[name], &gl[name]);
            for i in 0..before.len() {
                let delta = param.value.data()[i] - before[i];
                let want = if name.starts_with("F.") {
                    -alpha * (y[i] - lambda * l[i])
                } else if name.starts_with("C.") {
                    -alpha * y[i]
                } else {
                    -alpha * l[i]
                };
                // deltas compared relative to the parameter scale
                let err = (delta - want).abs() / before[i].abs().max(want.abs()).max(1e-3);
                worst = worst.max(err);
                if err > 1e-12 {
                    return Err(format!(
                        "{name}[{i}] λ={lambda}: delta {delta:e}, hand {want:e}"
                    ));
                }
            }
        }
    }

    // λ = 0 against the discriminator-free tagger, bitwise
    let mut adv = d2_model(true);
    let mut plain = d2_model(false);
    for _ in 0..5 {
        train_step(&mut adv, &batch, &cfg, 0.0).map_err(|e| e.to_string())?;
        train_step(&mut plain, &batch, &cfg, 0.0).map_err(|e| e.to_string())?;
    }
    for id in plain
        .feature_params()
        .into_iter()
        .chain(plain.classifier_params())
    {
        let a: Vec<u64> = adv
            .store
            .get(id)
            .value
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let b: Vec<u64> = plain
            .store
            .get(id)
            .value
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        if a != b {
            return Err(format!(
                "λ=0 diverges from baseline at {}",
                plain.store.get(id).name
            ));
        }
    }
    Ok(format!(
        "all three update rules match the hand computation (worst relative error {worst:.1e}); λ=0 is bitwise equal to the baseline over 5 steps"
    ))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let c = fixture_corpus();
    let m = Model::new(small_config(true, true, 13), &c).unwrap();
    let batch: Vec<&Sentence> = c.sentences.iter().collect();
    let feature_grads = |r: Reversal| -> Vec<f64> {
        let mut mm = m.clone();
        mm.store.zero_grad();
        batch_gradients(&mut mm, &batch, r, LossTerms::LANGUAGE).unwrap();
        mm.feature_params()
            .iter()
            .flat_map(|&id| mm.store.get(id).grad.data().to_vec())
            .collect()
    };
    let plain = feature_grads(Reversal::PassThrough);
    if plain.iter().all(|g| *g == 0.0) {
        return Err("unreversed contribution is identically zero".into());
    }
    for lambda in [0.0, 0.5, 1.0, 2.0] {
        let rev = feature_grads(Reversal::Reversed(lambda));
        if let Some(i) = (0..rev.len()).find(|&i| rev[i] != -lambda * plain[i]) {
            return Err(format!(
                "λ={lambda}: component {i}: {} vs {}",
                rev[i],
                -lambda * plain[i]
            ));
        }
    }
    Ok(format!(
        "reversed θ_F gradient equals −λ × unreversed exactly over {} components, λ ∈ {{0, 0.5, 1, 2}}",
        plain.len()
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    use proptest::prelude::*;
    let start = Instant::now();
    let strat = (1usize..5, 1usize..7).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(-2.0f64..2.0, n * d),
            prop::collection::vec(-2.0f64..2.0, d * d),
            prop::collection::vec(-1.0f64..1.0, d),
            Just((n, d)),
        )
    });
    let mut runner = TestRunner::new(PtConfig {
        cases: 10_000,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let result = runner.run(&strat, |(x, w, b, (n, d))| {
        let mut store = ParamStore::new();
        let layer = LateralInhibitionLayer::with_values(
            &mut store,
            "LI",
            Tensor::matrix(d, d, w),
            Tensor::vector(b),
            10.0,
        )
        .unwrap();
        let x = Tensor::matrix(n, d, x);
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = layer.forward(&mut tape, &store, xv).unwrap();
        for (yv, xv) in tape.value(y).data().iter().zip(x.data()) {
            prop_assert!(*yv == 0.0 || yv == xv, "y = {yv}, x = {xv}");
        }
        let cw = tape.input(x.map(|v| v.cos()));
        let p = tape.mul(y, cw).unwrap();
        let loss = tape.sum(p);
        tape.backward(loss, &mut store).unwrap();
        let g = &store.get(layer.weight).grad;
        for i in 0..d {
            prop_assert_eq!(g.at(i, i), 0.0);
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    within(Duration::from_secs(10), start)?;
    Ok(format!(
        "10000 random (X, W, b): Y ∈ {{0, X}} elementwise and ∂loss/∂W[i][i] = 0 ({:.2?})",
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- 6

fn fixture_corpus() -> Corpus {
    let ro = corpus_of(include_str!("../fixtures/ro_train.cupt"), "RO");
    let fr = corpus_of(include_str!("../fixtures/fr_train.cupt"), "FR");
    merge_corpora(vec![(ro, lang("RO")), (fr, lang("FR"))]).unwrap()
}

fn small_config(li: bool, adv: bool, seed: u64) -> ModelConfig {
    ModelConfig {
        embedding_dim: 8,
        window: 1,
        hidden_dim: 16,
        discriminator_hidden_dim: 8,
        use_lateral_inhibition: li,
        use_adversarial: adv,
        seed,
        ..ModelConfig::default()
    }
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let c = fixture_corpus();
    let cats: std::collections::BTreeSet<String> = c
        .sentences
        .iter()
        .flat_map(|s| extract_mwes(s).unwrap())
        .map(|m| m.category.to_string())
        .collect();
    if c.sentences.len() != 10 || cats.len() != 4 || c.languages().len() != 2 {
        return Err(format!(
            "fixture shape: {} sentences, categories {cats:?}",
            c.sentences.len()
        ));
    }
    let mut m = Model::new(small_config(true, true, 13), &c).unwrap();
    let cfg = TrainerConfig {
        learning_rate: 0.3,
        epochs: 300,
        batch_size: 5,
        lambda: 1.0,
        seed: 7,
        ..TrainerConfig::default()
    };
    let out = train(&mut m, &c, Some(&c), &cfg).map_err(|e| e.to_string())?;
    let first = out
        .report
        .epochs
        .iter()
        .find(|e| e.dev.is_some_and(|d| d.global_f1 == 100.0))
        .map(|e| e.epoch);
    let pred = m.tag_corpus(&c).unwrap();
    let r = evaluate(&c, &pred, &c, MatchMode::CategorySensitive).unwrap();
    within(Duration::from_secs(60), start)?;
    match first {
        Some(e) if r.global.f1 == 100.0 => Ok(format!(
            "LI + adversarial reach train global F1 = 100 at epoch {e} and end at 100 (category-sensitive), {:.2?}",
            start.elapsed()
        )),
        Some(e) => Err(format!("reached 100 at epoch {e} but ended at {:.2}", r.global.f1)),
        None => Err(format!("best train F1 {:?}", out.report.best_dev)),
    }
}

// ---------------------------------------------------------------- 7

const MWE_TEMPLATES: [(&str, &str, &str); 4] = [
    ("take", "decision", "LVC.full"),
    ("lose", "head", "VID"),
    ("self", "remember", "IRV"),
    ("make", "fire", "LVC.cause"),
];
/// Filler vocabulary per language; disjoint, so every filler token is a
/// language marker that carries no tagging information.
const FILLERS: [[&str; 6]; 2] = [
    ["the", "big", "now", "here", "house", "bread"],
    ["le", "grand", "alors", "ici", "maison", "pain"],
];

/// Sentences in which the only language signal is a marker token that carries
/// no tagging information.
fn marker_corpus(rng: &mut ChaCha8Rng, per_language: usize) -> Corpus {
    let mut parts = Vec::new();
    for (li, code) in ["AA", "BB"].into_iter().enumerate() {
        let fillers = FILLERS[li];
        let marker = format!("mk{}", code.to_lowercase());
        let mut text = String::new();
        for _ in 0..per_language {
            let mut toks: Vec<(String, String)> = Vec::new();
            let len = rng.gen_range(3..7);
            let mut words: Vec<String> = (0..len)
                .map(|_| fillers[rng.gen_range(0..fillers.len())].to_string())
                .collect();
            let at = rng.gen_range(0..=words.len());
            words.insert(rng.gen_range(0..=words.len()), marker.clone());
            let (verb, noun, cat) = MWE_TEMPLATES[rng.gen_range(0..4)];
            let gap = rng.gen_bool(0.3);
            let mut insert = vec![verb.to_string()];
            if gap {
                insert.push(fillers[rng.gen_range(0..3)].to_string());
            }
            insert.push(noun.to_string());
            let at = at.min(words.len());
            for (k, w) in insert.into_iter().enumerate() {
                words.insert(at + k, w);
            }
            for (i, w) in words.iter().enumerate() {
                let col = if w == verb && i == at {
                    format!("1:{cat}")
                } else if w == noun && i == at + 1 + gap as usize {
                    "1".to_string()
                } else {
                    "*".to_string()
                };
                toks.push((w.clone(), col));
            }
            for (i, (w, col)) in toks.iter().enumerate() {
                text.push_str(&token_line(i + 1, w, w, col));
                text.push('\n');
            }
            text.push('\n');
        }
        parts.push((corpus_of(&text, code), lang(code)));
    }
    merge_corpora(parts).unwrap()
}

struct InvarianceRun {
    held_out_accuracy: f64,
    tag_f1: f64,
}

/// Trains `F` and `LG` together on language identification alone, so the
/// encoder starts out language-aware the way a pretrained multilingual
/// encoder is. Without this, `F` learned from scratch at this scale only
/// carries language at initialization noise level and both arms sit at
/// chance, which says nothing about the direction.
fn language_aware_start(seed: u64, train_c: &Corpus) -> Model {
    let cfg = ModelConfig {
        embedding_dim: 16,
        hidden_dim: 32,
        discriminator_hidden_dim: 16,
        ..small_config(true, true, seed)
    };
    let mut m = Model::new(cfg, train_c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train_c.sentences.len()).collect();
    let ids: Vec<ParamId> = m.store.ids().collect();
    for _ in 0..100 {
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        for chunk in order.chunks(8) {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &train_c.sentences[i]).collect();
            m.store.zero_grad();
            batch_gradients(&mut m, &batch, Reversal::PassThrough, LossTerms::LANGUAGE).unwrap();
            m.store.sgd_step(&ids, 0.05);
        }
    }
    m
}

fn invariance_run(
    start: &Model,
    seed: u64,
    lambda: f64,
    train_c: &Corpus,
    test_c: &Corpus,
) -> InvarianceRun {
    let mut m = start.clone();
    let cfg = TrainerConfig {
        learning_rate: 0.1,
        epochs: 150,
        batch_size: 8,
        lambda,
        seed,
        ..TrainerConfig::default()
    };
    train(&mut m, train_c, None, &cfg).unwrap();
    let pred = m.tag_corpus(test_c).unwrap();
    let r = evaluate(test_c, &pred, train_c, MatchMode::default()).unwrap();
    InvarianceRun {
        held_out_accuracy: language_accuracy(&m, test_c).unwrap().unwrap(),
        tag_f1: r.global.f1,
    }
}

fn criterion_7() -> Outcome {
    let mut votes = 0;
    for seed in [1u64, 2, 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let train_c = marker_corpus(&mut rng, 40);
        let test_c = marker_corpus(&mut rng, 25);
        let start = language_aware_start(seed, &train_c);
        let initial = language_accuracy(&start, &test_c).unwrap().unwrap();
        let base = invariance_run(&start, seed, 0.0, &train_c, &test_c);
        let adv = invariance_run(&start, seed, 1.0, &train_c, &test_c);
        let ok = adv.held_out_accuracy < base.held_out_accuracy && base.tag_f1 - adv.tag_f1 < 5.0;
        println!(
            "    seed {seed}: held-out discriminator accuracy start {initial:.2}, λ=0 {:.2}, λ=1 {:.2}; tag F1 λ=0 {:.2}, λ=1 {:.2} -> {}",
            base.held_out_accuracy,
            adv.held_out_accuracy,
            base.tag_f1,
            adv.tag_f1,
            if ok { "holds" } else { "does not hold" }
        );
        votes += ok as usize;
    }
    if votes >= 2 {
        Ok(format!("direction holds in {votes}/3 seeds"))
    } else {
        Err(format!("direction holds in only {votes}/3 seeds"))
    }
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    for (name, text) in [
        ("ro_train", include_str!("../fixtures/ro_train.cupt")),
        ("fr_train", include_str!("../fixtures/fr_train.cupt")),
        ("ro_dev", include_str!("../fixtures/ro_dev.cupt")),
    ] {
        let c = parse_cupt(text, &lang("RO")).map_err(|e| e.to_string())?;
        if serialize_cupt(&c) != text {
            return Err(format!("{name} does not serialize back to itself"));
        }
    }
    let mut runner = TestRunner::new(PtConfig {
        cases: 1000,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let gapped = std::cell::Cell::new(0usize);
    runner
        .run(&disjoint_sentence(), |g| {
            let s = g.parse();
            let enc = encode_tags(&s).unwrap();
            let mut gold: Vec<MweSpan> =
                extract_mwes(&s).unwrap().iter().map(|m| m.span()).collect();
            gold.sort_by(|a, b| a.token_indices.cmp(&b.token_indices));
            if gold
                .iter()
                .any(|m| m.token_indices.windows(2).any(|w| w[1] != w[0] + 1))
            {
                gapped.set(gapped.get() + 1);
            }
            proptest::prop_assert!(enc.dropped.is_empty());
            proptest::prop_assert_eq!(decode_tags(&enc.tags), gold);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    if gapped.get() < 100 {
        return Err(format!(
            "only {} generated sentences had gapped MWEs",
            gapped.get()
        ));
    }
    Ok(format!(
        "3 fixtures serialize byte-identically; 1000 generated sentences ({} with gapped MWEs) round-trip through the tags",
        gapped.get()
    ))
}

// ---------------------------------------------------------------- 9

/// One gold sentence: `(lemma, gold column, predicted column)` per token.
type EvalSentence = &'static [(&'static str, &'static str, &'static str)];

struct EvalCase {
    name: &'static str,
    sensitive: bool,
    sentences: &'static [EvalSentence],
    /// global tp, gold, pred; unseen tp, gold, pred (counted by hand)
    expected: [usize; 6],
}

const TRAIN_MWES: [&[&str]; 3] = [&["fura", "somn"], &["da", "citire"], &["sine", "gândi"]];

const EVAL_CASES: [EvalCase; 20] = [
    EvalCase {
        name: "perfect seen",
        sensitive: false,
        sentences: &[&[("fura", "1:VID", "1:VID"), ("somn", "1", "1")]],
        expected: [1, 1, 1, 0, 0, 0],
    },
    EvalCase {
        name: "perfect unseen",
        sensitive: false,
        sentences: &[&[("lua", "1:LVC.full", "1:LVC.full"), ("decizie", "1", "1")]],
        expected: [1, 1, 1, 1, 1, 1],
    },
    EvalCase {
        name: "empty prediction",
        sensitive: false,
        sentences: &[&[
            ("fura", "1:VID", "*"),
            ("somn", "1", "*"),
            ("lua", "2:LVC.full", "*"),
            ("decizie", "2", "*"),
        ]],
        expected: [0, 2, 0, 0, 1, 0],
    },
    EvalCase {
        name: "nothing to find, nothing found",
        sensitive: false,
        sentences: &[&[("a", "*", "*"), ("b", "*", "*")]],
        expected: [0, 0, 0, 0, 0, 0],
    },
    EvalCase {
        name: "spurious only",
        sensitive: false,
        sentences: &[&[("a", "*", "1:VID"), ("b", "*", "1")]],
        expected: [0, 0, 1, 0, 0, 1],
    },
    EvalCase {
        name: "partial overlap is a miss",
        sensitive: false,
        sentences: &[&[
            ("fura", "1:VID", "1:VID"),
            ("somn", "1", "*"),
            ("repede", "*", "1"),
        ]],
        expected: [0, 1, 1, 0, 0, 1],
    },
    EvalCase {
        name: "category ignored by default",
        sensitive: false,
        sentences: &[&[("sine", "1:IRV", "1:VID"), ("gândi", "1", "1")]],
        expected: [1, 1, 1, 0, 0, 0],
    },
    EvalCase {
        name: "category enforced when sensitive",
        sensitive: true,
        sentences: &[&[("sine", "1:IRV", "1:VID"), ("gândi", "1", "1")]],
        expected: [0, 1, 1, 0, 0, 0],
    },
    EvalCase {
        name: "gapped match",
        sensitive: false,
        sentences: &[&[
            ("da", "1:LVC.full", "1:LVC.full"),
            ("repede", "*", "*"),
            ("citire", "1", "1"),
        ]],
        expected: [1, 1, 1, 0, 0, 0],
    },
    EvalCase {
        name: "gap swallowed by prediction",
        sensitive: false,
        sentences: &[&[
            ("da", "1:LVC.full", "1:LVC.full"),
            ("repede", "*", "1"),
            ("citire", "1", "1"),
        ]],
        expected: [0, 1, 1, 0, 0, 1],
    },
    EvalCase {
        name: "case-folded lemmas are seen",
        sensitive: false,
        sentences: &[&[("Fura", "1:VID", "1:VID"), ("SOMN", "1", "1")]],
        expected: [1, 1, 1, 0, 0, 0],
    },
    EvalCase {
        name: "seen regardless of category",
        sensitive: false,
        sentences: &[&[("fura", "1:LVC.full", "1:LVC.full"), ("somn", "1", "1")]],
        expected: [1, 1, 1, 0, 0, 0],
    },
    EvalCase {
        name: "lemma order does not matter",
        sensitive: false,
        sentences: &[&[("somn", "1:VID", "1:VID"), ("fura", "1", "1")]],
        expected: [1, 1, 1, 0, 0, 0],
    },
    EvalCase {
        name: "seen hit, unseen miss",
        sensitive: false,
        sentences: &[&[
            ("fura", "1:VID", "1:VID"),
            ("somn", "1", "1"),
            ("lua", "2:LVC.full", "*"),
            ("decizie", "2", "*"),
        ]],
        expected: [1, 2, 1, 0, 1, 0],
    },
    EvalCase {
        name: "seen miss, unseen hit",
        sensitive: false,
        sentences: &[&[
            ("fura", "1:VID", "*"),
            ("somn", "1", "*"),
            ("lua", "2:LVC.full", "1:LVC.full"),
            ("decizie", "2", "1"),
        ]],
        expected: [1, 2, 1, 1, 1, 1],
    },
    EvalCase {
        name: "duplicate predictions match once",
        sensitive: false,
        sentences: &[&[("fura", "1:VID", "1:VID;2:VID"), ("somn", "1", "1;2")]],
        expected: [1, 1, 2, 0, 0, 0],
    },
    EvalCase {
        name: "overlapping gold both found",
        sensitive: false,
        sentences: &[&[
            ("fura", "1:VID", "1:VID"),
            ("somn", "1;2:LVC.full", "1;2:LVC.full"),
            ("greu", "2", "2"),
        ]],
        expected: [2, 2, 2, 1, 1, 1],
    },
    EvalCase {
        name: "counts add up over sentences",
        sensitive: false,
        sentences: &[
            &[("fura", "1:VID", "1:VID"), ("somn", "1", "1")],
            &[("a", "*", "1:VID"), ("b", "*", "1")],
        ],
        expected: [1, 1, 2, 0, 0, 1],
    },
    EvalCase {
        name: "sensitive mode with unseen",
        sensitive: true,
        sentences: &[&[
            ("sine", "1:IRV", "1:IRV"),
            ("gândi", "1", "1"),
            ("lua", "2:LVC.full", "2:VID"),
            ("decizie", "2", "2"),
        ]],
        expected: [1, 2, 2, 0, 1, 1],
    },
    EvalCase {
        name: "three gold, two found",
        sensitive: false,
        sentences: &[&[
            ("fura", "1:VID", "1:VID"),
            ("somn", "1", "1"),
            ("lua", "2:LVC.full", "2:LVC.full"),
            ("decizie", "2", "2"),
            ("da", "3:LVC.full", "*"),
            ("foc", "3", "*"),
        ]],
        expected: [2, 3, 2, 1, 2, 1],
    },
];

/// `(token set, category, lowercased sorted lemmas)` read straight off a column.
fn read_column(s: EvalSentence, col: usize) -> Vec<(Vec<usize>, String, Vec<String>)> {
    let mut by_id: BTreeMap<u32, (Vec<usize>, String, Vec<String>)> = BTreeMap::new();
    for (i, tok) in s.iter().enumerate() {
        let v = if col == 0 { tok.1 } else { tok.2 };
        if v == "*" {
            continue;
        }
        for part in v.split(';') {
            let (id, cat) = part.split_once(':').unwrap_or((part, ""));
            let e = by_id.entry(id.parse().unwrap()).or_default();
            e.0.push(i + 1);
            if !cat.is_empty() {
                e.1 = cat.to_string();
            }
            e.2.push(tok.0.to_lowercase());
        }
    }
    by_id
        .into_values()
        .map(|mut e| {
            e.2.sort();
            e
        })
        .collect()
}

/// Size of a maximum one-to-one matching, by exhaustive search.
fn brute_force_matching(
    gold: &[&(Vec<usize>, String, Vec<String>)],
    pred: &[&(Vec<usize>, String, Vec<String>)],
    sensitive: bool,
) -> usize {
    fn go(
        gi: usize,
        gold: &[&(Vec<usize>, String, Vec<String>)],
        pred: &[&(Vec<usize>, String, Vec<String>)],
        used: &mut Vec<bool>,
        sensitive: bool,
    ) -> usize {
        if gi == gold.len() {
            return 0;
        }
        let mut best = go(gi + 1, gold, pred, used, sensitive);
        for pi in 0..pred.len() {
            let fits =
                !used[pi] && pred[pi].0 == gold[gi].0 && (!sensitive || pred[pi].1 == gold[gi].1);
            if fits {
                used[pi] = true;
                best = best.max(1 + go(gi + 1, gold, pred, used, sensitive));
                used[pi] = false;
            }
        }
        best
    }
    go(0, gold, pred, &mut vec![false; pred.len()], sensitive)
}

fn eval_corpus(sentences: &[EvalSentence], col: usize) -> Corpus {
    let mut text = String::new();
    for s in sentences {
        for (i, tok) in s.iter().enumerate() {
            let v = if col == 0 { tok.1 } else { tok.2 };
            text.push_str(&token_line(i + 1, tok.0, tok.0, v));
            text.push('\n');
        }
        text.push('\n');
    }
    corpus_of(&text, "RO")
}

fn criterion_9() -> Outcome {
    let mut train_text = String::new();
    for lemmas in TRAIN_MWES {
        for (i, l) in lemmas.iter().enumerate() {
            let col = if i == 0 { "1:VID" } else { "1" };
            train_text.push_str(&token_line(i + 1, l, l, col));
            train_text.push('\n');
        }
        train_text.push('\n');
    }
    let train_c = corpus_of(&train_text, "RO");
    let seen: Vec<Vec<String>> = TRAIN_MWES
        .iter()
        .map(|l| {
            let mut v: Vec<String> = l.iter().map(|x| x.to_lowercase()).collect();
            v.sort();
            v
        })
        .collect();

    for case in &EVAL_CASES {
        let mut brute = [0usize; 6];
        for s in case.sentences {
            let gold = read_column(s, 0);
            let pred = read_column(s, 1);
            let g: Vec<_> = gold.iter().collect();
            let p: Vec<_> = pred.iter().collect();
            let gu: Vec<_> = gold.iter().filter(|m| !seen.contains(&m.2)).collect();
            let pu: Vec<_> = pred.iter().filter(|m| !seen.contains(&m.2)).collect();
            brute[0] += brute_force_matching(&g, &p, case.sensitive);
            brute[1] += g.len();
            brute[2] += p.len();
            brute[3] += brute_force_matching(&gu, &pu, case.sensitive);
            brute[4] += gu.len();
            brute[5] += pu.len();
        }
        if brute != case.expected {
            return Err(format!(
                "{}: brute force {brute:?} vs hand {:?}",
                case.name, case.expected
            ));
        }
        let gold = eval_corpus(case.sentences, 0);
        let pred = eval_corpus(case.sentences, 1);
        let mode = if case.sensitive {
            MatchMode::CategorySensitive
        } else {
            MatchMode::CategoryInsensitive
        };
        let r = evaluate(&gold, &pred, &train_c, mode).map_err(|e| e.to_string())?;
        let (gc, uc) = (r.global_counts, r.unseen_counts);
        let got = [
            gc.true_positive,
            gc.gold,
            gc.predicted,
            uc.true_positive,
            uc.gold,
            uc.predicted,
        ];
        if got != case.expected {
            return Err(format!(
                "{}: evaluate counted {got:?}, expected {:?}",
                case.name, case.expected
            ));
        }
        for (scores, tp, ng, np) in [
            (r.global, brute[0], brute[1], brute[2]),
            (r.unseen, brute[3], brute[4], brute[5]),
        ] {
            let p = if np == 0 {
                0.0
            } else {
                100.0 * tp as f64 / np as f64
            };
            let rc = if ng == 0 {
                0.0
            } else {
                100.0 * tp as f64 / ng as f64
            };
            let f = if p + rc == 0.0 {
                0.0
            } else {
                2.0 * p * rc / (p + rc)
            };
            for (a, b) in [(scores.precision, p), (scores.recall, rc), (scores.f1, f)] {
                if (a - b).abs() > 1e-9 {
                    return Err(format!("{}: score {a} vs {b}", case.name));
                }
            }
        }
    }
    Ok(format!(
        "{} fixtures: counts and P/R/F1 agree with exhaustive matching",
        EVAL_CASES.len()
    ))
}

// ---------------------------------------------------------------- 10

fn end_to_end() -> (String, String, String, String) {
    let c = fixture_corpus();
    let dev = corpus_of(include_str!("../fixtures/ro_dev.cupt"), "RO");
    let mut m = Model::new(small_config(true, true, 5), &c).unwrap();
    let cfg = TrainerConfig {
        epochs: 15,
        batch_size: 3,
        seed: 11,
        clip_norm: Some(5.0),
        ..TrainerConfig::default()
    };
    let out = train(&mut m, &c, Some(&dev), &cfg).unwrap();
    let ckpt = m.save_json();
    let reloaded = Model::load_json(&ckpt).unwrap();
    let pred = reloaded.tag_corpus(&dev).unwrap();
    let pred_text = serialize_cupt(&pred);
    let r = evaluate(&dev, &pred, &c, MatchMode::default()).unwrap();
    let report = format!("{r}\n{}", serde_json::to_string(&r).unwrap());
    (ckpt, pred_text, report, out.report.to_jsonl())
}

fn criterion_10() -> Outcome {
    let a = end_to_end();
    let b = end_to_end();
    let names = [
        "checkpoint",
        "predictions",
        "evaluation report",
        "training report",
    ];
    for (i, (x, y)) in [(&a.0, &b.0), (&a.1, &b.1), (&a.2, &b.2), (&a.3, &b.3)]
        .into_iter()
        .enumerate()
    {
        if x != y {
            return Err(format!("{} differs between runs", names[i]));
        }
    }
    Ok(format!(
        "checkpoint ({} bytes), predictions, evaluation and training reports are byte-identical across two runs",
        a.0.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("F1 arithmetic of the reference scores", criterion_1),
        ("finite-difference gradient suite", criterion_2),
        ("update rules on a d=2 model", criterion_3),
        ("gradient reversal is exactly −λ", criterion_4),
        ("lateral inhibition selectivity", criterion_5),
        ("overfit the bilingual fixture", criterion_6),
        ("language invariance direction", criterion_7),
        ("corpus round trips", criterion_8),
        ("evaluation oracle", criterion_9),
        ("end-to-end determinism", criterion_10),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let t = start.elapsed();
        match outcome {
            Ok(msg) => println!("criterion {n:>2} PASS  {name} [{t:.2?}]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name} [{t:.2?}]: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
