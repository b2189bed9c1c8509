//! Acceptance suite: one test per shipped guarantee. Every test prints a
//! single `ACCEPTANCE <name>: PASS` line with its measured figures, so a
//! `--nocapture` run doubles as a release report.

use std::collections::HashMap;
use std::time::Instant;

use hopqa::augment::{
    builtin_lexicon, mutate_antonym, mutate_entity_flip, mutate_polarity, substitute_entities,
    EntityPool,
};
use hopqa::controller::{controller_step, ControllerStep};
use hopqa::corpus::{
    generate_synthetic, tokenize, Answer, Document, Example, GenConfig, QType, Span,
};
use hopqa::encoder::{encode, Vocab};
use hopqa::error::{Error, Result};
use hopqa::eval::{evaluate, exact_match, f1_score, hard_layout};
use hopqa::gradcheck::finite_diff_check;
use hopqa::model::{forward, register_model_params, ModelConfig};
use hopqa::modules::{compare, find, relocate, AttentionFrame, COMPARE, FIND, NOOP, RELOCATE};
use hopqa::params::{ParamSource, ParameterStore};
use hopqa::stack::{execute_hard, execute_step, soft_pop, soft_push, NetworkState};
use hopqa::tensor as ts;
use hopqa::tensor::Tensor;
use hopqa::trainer::{load_checkpoint, save_checkpoint, train_two_phase, TrainConfig};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Hand out parameters from a plain name->tensor map, so gradient checks can
/// watch every parameter of a composite as an explicit input.
struct MapParams(HashMap<String, Tensor>);

impl ParamSource for MapParams {
    fn get(&self, name: &str) -> Result<Tensor> {
        self.0
            .get(name)
            .cloned()
            .ok_or_else(|| Error::contract(format!("missing param {name}")))
    }
}

/// Deterministic (sorted-name) dump of a parameter store into parallel
/// name/tensor vectors.
fn store_to_inputs(store: &ParameterStore) -> (Vec<String>, Vec<Tensor>) {
    let mut names: Vec<String> = store.names().cloned().collect();
    names.sort();
    let tensors = names
        .iter()
        .map(|n| {
            let p = store.get(n).unwrap();
            Tensor::from_vec(p.shape.clone(), p.data.clone()).unwrap()
        })
        .collect();
    (names, tensors)
}

fn map_params(names: &[String], tensors: &[Tensor]) -> MapParams {
    MapParams(
        names
            .iter()
            .cloned()
            .zip(tensors.iter().cloned())
            .collect(),
    )
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// A two-document toy example with a bridge annotation, sized so gradient
/// checks stay fast (context of ~14 positions, 4-word question).
fn toy_example() -> Example {
    Example {
        id: "toy".to_string(),
        question: words("occupation of rel alba"),
        documents: vec![
            Document {
                title: words("rel alba"),
                body: words("rel alba wrote tam ode"),
            },
            Document {
                title: words("tam ode"),
                body: words("tam ode by singer"),
            },
        ],
        answer: Answer::Span(Span {
            doc: 1,
            start: 3,
            end: 4,
        }),
        answer_text: "singer".to_string(),
        qtype: QType::Bridge,
        supporting: [0, 1],
        bridge: Some(Span {
            doc: 1,
            start: 0,
            end: 2,
        }),
    }
}

fn toy_setup(seed: u64) -> (Example, Vocab, ModelConfig, ParameterStore) {
    let ex = toy_example();
    let vocab = Vocab::from_examples(std::slice::from_ref(&ex));
    let cfg = ModelConfig {
        hidden: 4,
        emb_dim: 4,
        t_steps: 3,
        depth: 3,
        ..ModelConfig::default()
    };
    let mut store = ParameterStore::new(seed);
    register_model_params(&mut store, vocab.len(), &cfg).unwrap();
    (ex, vocab, cfg, store)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, rand_vec(rng, n, -1.0, 1.0)).unwrap()
}

fn rand_att(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let mut v = rand_vec(rng, n, 0.05, 1.0);
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    Tensor::from_vec(vec![n], v).unwrap()
}

fn max_abs_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Process CPU time (user + system, all threads) in seconds.
fn cpu_seconds() -> f64 {
    let stat = std::fs::read_to_string("/proc/self/stat").expect("readable /proc/self/stat");
    // Skip past the parenthesised command name; fields after it are
    // whitespace-separated with utime and stime at offsets 11 and 12.
    let rest = &stat[stat.rfind(')').unwrap() + 2..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let ticks: u64 = fields[11].parse::<u64>().unwrap() + fields[12].parse::<u64>().unwrap();
    ticks as f64 / 100.0
}

// ---------------------------------------------------------------------------
// 1. Gradient suite: primitive ops and whole-network composites
// ---------------------------------------------------------------------------

#[test]
fn gradient_suite_ops_and_composites() {
    let started = Instant::now();
    let tol = 1e-6;
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    let mut check = |label: &str, f: &dyn Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor]| {
        let err = finite_diff_check(&f, inputs, eps)
            .unwrap_or_else(|e| panic!("{label}: gradient check failed to run: {e}"));
        assert!(err <= tol, "{label}: max relative error {err:.3e} > {tol:.0e}");
        worst = worst.max(err);
    };

    // --- primitive ops, randomized small tensors -------------------------
    for trial in 0..5 {
        let a = rand_tensor(&mut rng, vec![3, 4]);
        let b = rand_tensor(&mut rng, vec![3, 4]);
        let v3 = rand_tensor(&mut rng, vec![3]);
        let v4 = rand_tensor(&mut rng, vec![4]);
        let m43 = rand_tensor(&mut rng, vec![4, 3]);
        let s = Tensor::from_vec(vec![1], vec![rng.random_range(0.3..1.5)]).unwrap();
        let _ = trial;

        check("add", &|x| ts::reduce_sum(&ts::mul(&ts::add(&x[0], &x[1])?, &x[0])?), &[a.clone(), b.clone()]);
        check("sub", &|x| ts::reduce_sum(&ts::mul(&ts::sub(&x[0], &x[1])?, &x[1])?), &[a.clone(), b.clone()]);
        check("mul", &|x| ts::reduce_sum(&ts::mul(&x[0], &x[1])?), &[a.clone(), b.clone()]);
        check("scale", &|x| ts::reduce_sum(&ts::scale(&x[0], -2.5)?), &[a.clone()]);
        check("add_scalar", &|x| ts::reduce_sum(&ts::mul(&ts::add_scalar(&x[0], 0.7)?, &x[0])?), &[a.clone()]);
        check("mul_scalar_t", &|x| ts::reduce_sum(&ts::mul_scalar_t(&x[0], &x[1])?), &[a.clone(), s.clone()]);
        check("add_scalar_t", &|x| ts::reduce_sum(&ts::mul(&ts::add_scalar_t(&x[0], &x[1])?, &x[0])?), &[a.clone(), s.clone()]);
        check("add_row", &|x| ts::reduce_sum(&ts::mul(&ts::add_row(&x[0], &x[1])?, &x[0])?), &[a.clone(), v4.clone()]);
        check("add_col", &|x| ts::reduce_sum(&ts::mul(&ts::add_col(&x[0], &x[1])?, &x[0])?), &[a.clone(), v3.clone()]);
        check("mul_row", &|x| ts::reduce_sum(&ts::mul_row(&x[0], &x[1])?), &[a.clone(), v4.clone()]);
        check("matmul", &|x| ts::reduce_sum(&ts::matmul(&x[0], &x[1])?), &[a.clone(), m43.clone()]);
        check("matvec", &|x| ts::reduce_sum(&ts::matvec(&x[0], &x[1])?), &[a.clone(), v4.clone()]);
        check("vecmat", &|x| ts::reduce_sum(&ts::vecmat(&x[0], &x[1])?), &[v3.clone(), a.clone()]);
        check("transpose", &|x| ts::reduce_sum(&ts::mul(&ts::transpose(&x[0])?, &m43.detach())?), &[a.clone()]);
        check("reshape", &|x| ts::reduce_sum(&ts::mul(&ts::reshape(&x[0], vec![12])?, &ts::reshape(&x[1], vec![12])?)?), &[a.clone(), b.clone()]);
        check("tanh", &|x| ts::reduce_sum(&ts::tanh_t(&x[0])?), &[a.clone()]);
        check("sigmoid", &|x| ts::reduce_sum(&ts::sigmoid(&x[0])?), &[a.clone()]);
        check("exp", &|x| ts::reduce_sum(&ts::exp_t(&x[0])?), &[a.clone()]);
        check("softmax", &|x| ts::pick(&ts::softmax(&x[0])?, 2), &[v4.clone()]);
        check("softmax_axis0", &|x| ts::reduce_sum(&ts::mul(&ts::softmax_axis(&x[0], 0)?, &b.detach())?), &[a.clone()]);
        check("softmax_axis1", &|x| ts::reduce_sum(&ts::mul(&ts::softmax_axis(&x[0], 1)?, &b.detach())?), &[a.clone()]);
        check("concat1", &|x| ts::reduce_sum(&ts::mul(&ts::concat1(&[&x[0], &x[1]])?, &ts::concat1(&[&x[1], &x[0]])?)?), &[v3.clone(), v3.clone()]);
        check("concat_cols", &|x| ts::reduce_sum(&ts::mul(&ts::concat_cols(&[&x[0], &x[1]])?, &ts::concat_cols(&[&x[1], &x[0]])?)?), &[a.clone(), b.clone()]);
        check("stack_rows", &|x| ts::reduce_sum(&ts::mul(&ts::stack_rows(&[x[0].clone(), x[1].clone()])?, &ts::stack_rows(&[x[1].clone(), x[0].clone()])?)?), &[v4.clone(), v4.clone()]);
        check("slice1", &|x| ts::reduce_sum(&ts::mul(&ts::slice1(&x[0], 1, 2)?, &ts::slice1(&x[0], 0, 2)?)?), &[v4.clone()]);
        check("gather_rows", &|x| ts::reduce_sum(&ts::gather_rows(&x[0], &[2, 0, 2])?), &[a.clone()]);
        check("row", &|x| ts::reduce_sum(&ts::mul(&ts::row(&x[0], 1)?, &ts::row(&x[0], 2)?)?), &[a.clone()]);
        check("pick", &|x| ts::pick(&x[0], 2), &[v4.clone()]);
        check("reduce_sum", &|x| ts::reduce_sum(&ts::mul(&x[0], &x[0])?), &[a.clone()]);

        // Piecewise ops need probe points away from their kinks/ties.
        let pos = Tensor::from_vec(vec![4], rand_vec(&mut rng, 4, 0.2, 2.0)).unwrap();
        let shifted = ts::add_scalar(&a, 3.0).unwrap().detach();
        check("relu", &|x| ts::reduce_sum(&ts::relu(&ts::add_scalar(&x[0], -0.05)?)?), &[shifted.clone()]);
        check("log", &|x| ts::reduce_sum(&ts::log_t(&x[0])?), &[pos.clone()]);
        check("normalize_sum", &|x| ts::pick(&ts::normalize_sum(&x[0])?, 1), &[pos.clone()]);
        check("cross_entropy", &|x| ts::cross_entropy(&ts::softmax(&x[0])?, 1), &[v4.clone()]);
        // max_elem / reduce_max_axis: enforce a clear margin between the
        // operands so the max choice is stable under the probe eps.
        let big = ts::add_scalar(&a, 4.0).unwrap().detach();
        check("max_elem", &|x| ts::reduce_sum(&ts::max_elem(&x[0], &x[1])?), &[big.clone(), b.clone()]);
        let spread = {
            let mut v = rand_vec(&mut rng, 12, -1.0, 1.0);
            for (i, x) in v.iter_mut().enumerate() {
                *x += (i % 4) as f64 * 3.0;
            }
            Tensor::from_vec(vec![3, 4], v).unwrap()
        };
        check("reduce_max_axis0", &|x| ts::reduce_sum(&ts::mul(&ts::reduce_max_axis(&x[0], 0)?, &v4.detach())?), &[spread.clone()]);
        check("reduce_max_axis1", &|x| ts::reduce_sum(&ts::mul(&ts::reduce_max_axis(&x[0], 1)?, &v3.detach())?), &[spread.clone()]);
    }

    // --- composites over every parameter ---------------------------------
    // Toy scale: d = 4 (2d = 8), context S = 14, question J = 4, depth D = 3.
    let (ex, vocab, cfg, store) = toy_setup(17);
    let (names, tensors) = store_to_inputs(&store);
    let frozen = store.bind_frozen();
    let enc = encode(&ex, &vocab, cfg.hidden, &frozen).unwrap();
    let s_len = enc.context.len();
    let ct = rand_tensor(&mut rng, vec![2 * cfg.hidden]);
    let top = AttentionFrame {
        att: rand_att(&mut rng, s_len),
        rich: rand_tensor(&mut rng, vec![s_len, 8 * cfg.hidden]),
    };
    let second = AttentionFrame {
        att: rand_att(&mut rng, s_len),
        rich: rand_tensor(&mut rng, vec![s_len, 8 * cfg.hidden]),
    };

    // Composite closures re-encode from the watched parameters so gradients
    // flow through the whole subgraph, not just the module weights.
    let ex_c = ex.clone();
    let vocab_c = vocab.clone();
    let cfg_c = cfg.clone();
    let names_c = names.clone();

    let composite_controller = {
        let (ex, vocab, cfg, names) = (ex_c.clone(), vocab_c.clone(), cfg_c.clone(), names_c.clone());
        move |x: &[Tensor]| -> Result<Tensor> {
            let p = map_params(&names, x);
            let enc = encode(&ex, &vocab, cfg.hidden, &p)?;
            let c0 = Tensor::zeros(vec![2 * cfg.hidden]);
            let step = controller_step(&enc.qv, &enc.u, &c0, 0, cfg.share_steps, &p)?;
            ts::sum_all(&[
                ts::reduce_sum(&ts::mul(&step.p, &step.p)?)?,
                ts::pick(&step.c, 1)?,
                ts::reduce_sum(&ts::mul(&step.cv, &step.cv)?)?,
            ])
        }
    };
    check("composite:controller_step", &composite_controller, &tensors);

    let composite_find = {
        let (ex, vocab, cfg, names, ct) = (ex_c.clone(), vocab_c.clone(), cfg_c.clone(), names_c.clone(), ct.clone());
        move |x: &[Tensor]| -> Result<Tensor> {
            let p = map_params(&names, x);
            let enc = encode(&ex, &vocab, cfg.hidden, &p)?;
            let f = find(&enc, &ct, &p)?;
            ts::add(&ts::pick(&f.att, 3)?, &ts::reduce_sum(&ts::mul(&f.rich, &f.rich)?)?)
        }
    };
    check("composite:find", &composite_find, &tensors);

    let composite_relocate = {
        let (ex, vocab, cfg, names, ct, top) = (ex_c.clone(), vocab_c.clone(), cfg_c.clone(), names_c.clone(), ct.clone(), top.clone());
        move |x: &[Tensor]| -> Result<Tensor> {
            let p = map_params(&names, x);
            let enc = encode(&ex, &vocab, cfg.hidden, &p)?;
            let f = relocate(&enc, &ct, &top, &p)?;
            ts::add(&ts::pick(&f.att, 5)?, &ts::reduce_sum(&ts::mul(&f.rich, &f.rich)?)?)
        }
    };
    check("composite:relocate", &composite_relocate, &tensors);

    let composite_compare = {
        let (ex, vocab, cfg, names, ct, top, second) =
            (ex_c.clone(), vocab_c.clone(), cfg_c.clone(), names_c.clone(), ct.clone(), top.clone(), second.clone());
        move |x: &[Tensor]| -> Result<Tensor> {
            let p = map_params(&names, x);
            let enc = encode(&ex, &vocab, cfg.hidden, &p)?;
            let m = compare(&enc, &ct, &top, &second, &p)?;
            ts::reduce_sum(&ts::mul(&m, &m)?)
        }
    };
    check("composite:compare", &composite_compare, &tensors);

    let composite_execute = {
        let (ex, vocab, cfg, names) = (ex_c.clone(), vocab_c.clone(), cfg_c.clone(), names_c.clone());
        move |x: &[Tensor]| -> Result<Tensor> {
            let p = map_params(&names, x);
            let enc = encode(&ex, &vocab, cfg.hidden, &p)?;
            let c0 = Tensor::zeros(vec![2 * cfg.hidden]);
            let step = controller_step(&enc.qv, &enc.u, &c0, 0, cfg.share_steps, &p)?;
            let state = NetworkState::new(cfg.depth, enc.context.len(), 2 * cfg.hidden)?;
            let next = execute_step(&state, &step, &enc, &p)?;
            let mut total = ts::reduce_sum(&ts::mul(&next.memory, &next.memory)?)?;
            for frame in &next.frames {
                total = ts::add(&total, &ts::reduce_sum(&ts::mul(&frame.att, &frame.att)?)?)?;
            }
            ts::add(&total, &ts::pick(&next.pointer, 1)?)
        }
    };
    check("composite:execute_step", &composite_execute, &tensors);

    let composite_total_loss = {
        let (ex, vocab, cfg, names) = (ex_c, vocab_c, cfg_c, names_c);
        move |x: &[Tensor]| -> Result<Tensor> {
            let p = map_params(&names, x);
            Ok(forward(&ex, &vocab, &cfg, &p)?.loss)
        }
    };
    check("composite:total_loss", &composite_total_loss, &tensors);

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient suite took {elapsed:.1}s (budget 60s)");
    println!(
        "ACCEPTANCE gradient-suite: PASS (max relative error {worst:.2e} <= 1e-6, {elapsed:.1}s < 60s)"
    );
}

// ---------------------------------------------------------------------------
// 2. Soft execution with one-hot module choices == hard composition
// ---------------------------------------------------------------------------

#[test]
fn soft_one_hot_execution_matches_hard_composition() {
    let mut worst: f64 = 0.0;
    for draw in 0..100u64 {
        let (ex, vocab, cfg, store) = toy_setup(1000 + draw);
        let p = store.bind_frozen();
        let enc = encode(&ex, &vocab, cfg.hidden, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let d2 = 2 * cfg.hidden;

        let mut soft = NetworkState::new(cfg.depth, enc.context.len(), d2).unwrap();
        let mut hard = NetworkState::new(cfg.depth, enc.context.len(), d2).unwrap();
        for _ in 0..cfg.t_steps {
            let module = rng.random_range(0..4usize);
            let ct = rand_tensor(&mut rng, vec![d2]);
            let step = ControllerStep {
                p: Tensor::one_hot(4, module),
                c: ct.clone(),
                cv: Tensor::zeros(vec![ex.question.len()]),
            };
            soft = execute_step(&soft, &step, &enc, &p).unwrap();
            hard = execute_hard(&hard, module, &enc, &ct, &p).unwrap();

            worst = worst.max(max_abs_gap(soft.pointer.data(), hard.pointer.data()));
            worst = worst.max(max_abs_gap(soft.memory.data(), hard.memory.data()));
            for (sf, hf) in soft.frames.iter().zip(&hard.frames) {
                worst = worst.max(max_abs_gap(sf.att.data(), hf.att.data()));
                worst = worst.max(max_abs_gap(sf.rich.data(), hf.rich.data()));
            }
            assert!(
                worst <= 1e-9,
                "draw {draw}: soft/hard gap {worst:.3e} > 1e-9"
            );
        }
    }
    println!(
        "ACCEPTANCE soft-hard-equivalence: PASS (100 one-hot draws, max fieldwise gap {worst:.2e} <= 1e-9)"
    );
}

// ---------------------------------------------------------------------------
// 3. NoOp identity and pointer-mass conservation
// ---------------------------------------------------------------------------

#[test]
fn noop_identity_and_pointer_mass_conservation() {
    // One-hot NoOp steps leave the state bit-identical.
    let (ex, vocab, cfg, store) = toy_setup(9);
    let p = store.bind_frozen();
    let enc = encode(&ex, &vocab, cfg.hidden, &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let d2 = 2 * cfg.hidden;
    let mut state = NetworkState::new(cfg.depth, enc.context.len(), d2).unwrap();
    // Put real content on the stack first so identity is checked on a
    // non-trivial state.
    for module in [FIND, RELOCATE, COMPARE, FIND] {
        let ct = rand_tensor(&mut rng, vec![d2]);
        state = execute_hard(&state, module, &enc, &ct, &p).unwrap();
    }
    for _ in 0..5 {
        let step = ControllerStep {
            p: Tensor::one_hot(4, NOOP),
            c: rand_tensor(&mut rng, vec![d2]),
            cv: Tensor::zeros(vec![ex.question.len()]),
        };
        let next = execute_step(&state, &step, &enc, &p).unwrap();
        assert_eq!(next.pointer.data(), state.pointer.data(), "pointer changed");
        assert_eq!(next.memory.data(), state.memory.data(), "memory changed");
        for (a, b) in next.frames.iter().zip(&state.frames) {
            assert_eq!(a.att.data(), b.att.data(), "attention changed");
            assert_eq!(a.rich.data(), b.rich.data(), "features changed");
        }
        state = next;
    }

    // Pointer mass conservation under 1000 random soft pushes and pops.
    let mut worst: f64 = 0.0;
    let mut stack = NetworkState::new(5, 6, 8).unwrap();
    for op in 0..1000 {
        if rng.random_bool(0.5) {
            let frame = AttentionFrame {
                att: rand_att(&mut rng, 6),
                rich: rand_tensor(&mut rng, vec![6, 32]),
            };
            let w = rng.random_range(0.0..1.0);
            stack = soft_push(&stack, &frame, w).unwrap();
        } else {
            stack = soft_pop(&stack).unwrap().1;
        }
        let mass: f64 = stack.pointer.data().iter().sum();
        worst = worst.max((mass - 1.0).abs());
        assert!(
            worst <= 1e-9,
            "pointer mass drifted to {mass} after op {op}"
        );
    }
    println!(
        "ACCEPTANCE noop-and-stack-conservation: PASS (NoOp bit-identical over 5 steps; mass drift {worst:.2e} <= 1e-9 over 1000 ops)"
    );
}

// ---------------------------------------------------------------------------
// 4. EM / F1 metric oracle
// ---------------------------------------------------------------------------

/// Independent metric recomputation, written against the shared definition
/// (lowercase, strip punctuation and articles, token-multiset F1) but with a
/// separate implementation.
mod metric_oracle {
    use std::collections::HashMap;

    pub fn norm(s: &str) -> Vec<String> {
        let lowered: String = s
            .chars()
            .map(|c| {
                if c.is_ascii_punctuation() {
                    ' '
                } else {
                    c.to_ascii_lowercase()
                }
            })
            .collect();
        lowered
            .split_whitespace()
            .filter(|w| !matches!(*w, "a" | "an" | "the"))
            .map(str::to_string)
            .collect()
    }

    pub fn em(pred: &str, gold: &str) -> bool {
        norm(pred) == norm(gold)
    }

    pub fn f1(pred: &str, gold: &str) -> f64 {
        let p = norm(pred);
        let g = norm(gold);
        if p.is_empty() || g.is_empty() {
            return if p == g { 1.0 } else { 0.0 };
        }
        let mut counts: HashMap<&str, i64> = HashMap::new();
        for t in &g {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
        let mut overlap = 0i64;
        for t in &p {
            let c = counts.entry(t.as_str()).or_insert(0);
            if *c > 0 {
                overlap += 1;
                *c -= 1;
            }
        }
        if overlap == 0 {
            return 0.0;
        }
        let precision = overlap as f64 / p.len() as f64;
        let recall = overlap as f64 / g.len() as f64;
        2.0 * precision * recall / (precision + recall)
    }
}

#[test]
fn metric_oracle_twenty_case_fixture() {
    // (prediction, gold, expected EM, expected F1). F1 values are hand
    // token-overlap computations.
    let cases: Vec<(&str, &str, bool, f64)> = vec![
        ("Temple", "Shirley Temple", false, 2.0 / 3.0),
        ("Shirley Temple", "Shirley Temple", true, 1.0),
        ("the Shirley Temple", "Shirley Temple", true, 1.0),
        ("shirley temple", "Shirley Temple", true, 1.0),
        ("Temple, Shirley", "Shirley Temple", false, 1.0),
        ("yes", "yes", true, 1.0),
        ("no", "yes", false, 0.0),
        ("Yes", "yes", true, 1.0),
        ("1ADY 6AGA", "Lady Gaga", false, 0.0),
        ("a an the", "the an a", true, 1.0),
        ("France", "France Germany", false, 2.0 / 3.0),
        ("France Germany Japan", "France Germany", false, 0.8),
        ("", "", true, 1.0),
        ("", "yes", false, 0.0),
        ("answer", "", false, 0.0),
        ("big big cat", "big cat", false, 0.8),
        ("big cat", "big big cat", false, 0.8),
        ("New York City", "New York", false, 0.8),
        ("governor of Texas", "Governor, of Texas!", true, 1.0),
        ("mayor", "senator", false, 0.0),
    ];
    assert_eq!(cases.len(), 20);
    for (pred, gold, want_em, want_f1) in &cases {
        let got_em = exact_match(pred, gold);
        let got_f1 = f1_score(pred, gold);
        assert_eq!(got_em, *want_em, "EM({pred:?}, {gold:?})");
        assert!(
            (got_f1 - want_f1).abs() < 1e-12,
            "F1({pred:?}, {gold:?}) = {got_f1}, hand value {want_f1}"
        );
        // Independent recomputation must agree exactly.
        assert_eq!(got_em, metric_oracle::em(pred, gold), "oracle EM disagrees on ({pred:?}, {gold:?})");
        assert!(
            (got_f1 - metric_oracle::f1(pred, gold)).abs() == 0.0,
            "oracle F1 disagrees on ({pred:?}, {gold:?})"
        );
    }
    println!("ACCEPTANCE metric-oracle: PASS (20 fixture cases match hand values and independent recomputation exactly)");
}

// ---------------------------------------------------------------------------
// 8. Augmentation fixtures and involutions
// ---------------------------------------------------------------------------

fn fixture_example(question: &str, answer: Answer, t1: &str, t2: &str) -> Example {
    let answer_text = match answer {
        Answer::Yes => "yes".to_string(),
        Answer::No => "no".to_string(),
        _ => unreachable!("fixtures are yes/no"),
    };
    Example {
        id: "fixture".to_string(),
        question: tokenize(question),
        documents: vec![
            Document {
                title: tokenize(t1),
                body: tokenize(&format!("{t1} was a person .")),
            },
            Document {
                title: tokenize(t2),
                body: tokenize(&format!("{t2} was a person .")),
            },
        ],
        answer,
        answer_text,
        qtype: QType::Comparison,
        supporting: [0, 1],
        bridge: None,
    }
}

#[test]
fn augmentation_fixtures_and_involutions() {
    let lexicon = builtin_lexicon();

    // Row 1: entity substitution keeps the answer.
    let original = fixture_example(
        "Were Pavel Urysohn and Levin known for the same type of work ?",
        Answer::No,
        "Pavel Urysohn",
        "Levin",
    );
    let mut pool = EntityPool::default();
    pool.insert("person", tokenize("Henry Cavill"));
    pool.insert("person", tokenize("Li Na"));
    let substituted = substitute_entities(&original, &pool, 0).unwrap();
    let q = substituted.question.join(" ");
    assert!(
        q == "Were Henry Cavill and Li Na known for the same type of work ?"
            || q == "Were Li Na and Henry Cavill known for the same type of work ?",
        "substituted question: {q}"
    );
    assert_eq!(substituted.answer, Answer::No, "substitution must not flip the answer");

    // Row 2: same -> different flips the answer.
    let polarity = mutate_polarity(&original, &lexicon).unwrap();
    assert_eq!(
        polarity.question.join(" "),
        "Were Pavel Urysohn and Levin known for the different type of work ?"
    );
    assert_eq!(polarity.answer, Answer::Yes);
    // Involution: mutating again restores question and answer.
    let back = mutate_polarity(&polarity, &lexicon).unwrap();
    assert_eq!(back.question, original.question);
    assert_eq!(back.answer, original.answer);

    // Row 3: comparative antonym (older -> younger) flips the answer.
    let cmp = fixture_example(
        "Is Rohan Bopanna older than Sherwood Stewart ?",
        Answer::Yes,
        "Rohan Bopanna",
        "Sherwood Stewart",
    );
    let antonym = mutate_antonym(&cmp, &lexicon).unwrap().unwrap();
    assert_eq!(
        antonym.question.join(" "),
        "Is Rohan Bopanna younger than Sherwood Stewart ?"
    );
    assert_eq!(antonym.answer, Answer::No);
    let back = mutate_antonym(&antonym, &lexicon).unwrap().unwrap();
    assert_eq!(back.question, cmp.question);
    assert_eq!(back.answer, cmp.answer);

    // Row 4: flipping the compared entities flips the answer.
    let flip_src = fixture_example(
        "Was Howard Hawks a screenwriter of more productions than Arthur Berthelet ?",
        Answer::Yes,
        "Howard Hawks",
        "Arthur Berthelet",
    );
    let flipped = mutate_entity_flip(&flip_src, &lexicon).unwrap();
    assert_eq!(
        flipped.question.join(" "),
        "Was Arthur Berthelet a screenwriter of more productions than Howard Hawks ?"
    );
    assert_eq!(flipped.answer, Answer::No);
    let back = mutate_entity_flip(&flipped, &lexicon).unwrap();
    assert_eq!(back.question, flip_src.question);
    assert_eq!(back.answer, flip_src.answer);

    println!("ACCEPTANCE augmentation-fixtures: PASS (4 fixture rows reproduced; polarity, antonym and entity-flip are involutions)");
}

// ---------------------------------------------------------------------------
// 9. Checkpoint round-trip
// ---------------------------------------------------------------------------

#[test]
fn checkpoint_round_trip_is_bitwise_identical() {
    let gen = GenConfig {
        n: 40,
        docs_per_example: 3,
        ..GenConfig::default()
    };
    let data = generate_synthetic(&gen, 5).unwrap();
    let vocab = Vocab::from_examples(&data.examples);
    let cfg = ModelConfig {
        hidden: 8,
        emb_dim: 8,
        ..ModelConfig::default()
    };
    let mut store = ParameterStore::new(3);
    register_model_params(&mut store, vocab.len(), &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &store, &vocab, &cfg).unwrap();
    let (loaded_store, loaded_vocab, loaded_cfg) = load_checkpoint(&path).unwrap();
    assert_eq!(loaded_cfg, cfg);

    let before = evaluate(&data.examples, &store, &vocab, &cfg).unwrap();
    let after = evaluate(&data.examples, &loaded_store, &loaded_vocab, &loaded_cfg).unwrap();

    // Bitwise comparison through exact serialization.
    let a = serde_json::to_string(&before).unwrap();
    let b = serde_json::to_string(&after).unwrap();
    assert_eq!(a, b, "round-tripped evaluation reports differ");
    assert_eq!(before.em.to_bits(), after.em.to_bits());
    assert_eq!(before.f1.to_bits(), after.f1.to_bits());
    for (x, y) in before.per_example.iter().zip(&after.per_example) {
        assert_eq!(x.f1.to_bits(), y.f1.to_bits(), "{}", x.id);
    }
    println!(
        "ACCEPTANCE checkpoint-round-trip: PASS (save/load/evaluate bitwise-identical over {} examples)",
        before.n
    );
}

// ---------------------------------------------------------------------------
// 10. Full-scale benchmark reproduction is documented as out of scope
// ---------------------------------------------------------------------------

#[test]
fn full_scale_results_documented_out_of_scope() {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md"))
        .expect("README.md at the workspace root");
    assert!(
        readme.contains("50.67"),
        "README must state the full-scale EM figure that is out of scope here"
    );
    assert!(
        readme.to_lowercase().contains("not reproduc"),
        "README must state that full-scale results are not reproduced at this scale"
    );
    println!("ACCEPTANCE scale-disclaimer: PASS (README documents that full-corpus HotpotQA results are out of scope)");
}

// ---------------------------------------------------------------------------
// 5 + 6 + 7. End-to-end synthetic learning, induced layouts, and the
// bridge-supervision ablation share one training run.
// ---------------------------------------------------------------------------

/// Fraction of bridge examples whose step-0 attention argmax falls inside
/// the annotated bridge span.
fn bridge_hit_rate(
    examples: &[Example],
    store: &ParameterStore,
    vocab: &Vocab,
    cfg: &ModelConfig,
) -> f64 {
    let p = store.bind_frozen();
    let mut hits = 0usize;
    let mut total = 0usize;
    for ex in examples {
        let Some(bspan) = &ex.bridge else { continue };
        let enc = encode(ex, vocab, cfg.hidden, &p).unwrap();
        let trace =
            hopqa::stack::run_program(&enc, cfg.t_steps, cfg.depth, cfg.share_steps, &p).unwrap();
        let att = trace.first_hop_att.data();
        let best = att
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let inside = (bspan.start..bspan.end)
            .any(|pos| enc.context.position(bspan.doc, pos) == best);
        total += 1;
        if inside {
            hits += 1;
        }
    }
    hits as f64 / total.max(1) as f64
}

#[test]
fn end_to_end_learning_layouts_and_bridge_ablation() {
    let gen_train = GenConfig {
        n: 2000,
        docs_per_example: 3,
        ..GenConfig::default()
    };
    let gen_dev = GenConfig {
        n: 400,
        docs_per_example: 3,
        ..GenConfig::default()
    };
    let train = generate_synthetic(&gen_train, 1).unwrap();
    let dev = generate_synthetic(&gen_dev, 2).unwrap();
    let vocab = Vocab::from_examples(&train.examples);

    let model_cfg = ModelConfig::default(); // d = 32, T = 3, D = 3
    let train_cfg = TrainConfig {
        epochs: ACCEPT_EPOCHS,
        lr: 0.003,
        warmup_epochs: 3,
        seed: 0,
        ..TrainConfig::default()
    };

    // --- supervised run (criterion: >= 0.90 EM within 15 CPU-minutes) ----
    let cpu_before = cpu_seconds();
    let mut store = ParameterStore::new(train_cfg.seed);
    register_model_params(&mut store, vocab.len(), &model_cfg).unwrap();
    train_two_phase(
        &mut store,
        &train.examples,
        &dev.examples,
        &vocab,
        &model_cfg,
        &train_cfg,
        None,
    )
    .unwrap();
    let cpu_minutes = (cpu_seconds() - cpu_before) / 60.0;
    assert!(
        cpu_minutes <= 15.0,
        "training took {cpu_minutes:.1} CPU-minutes (budget 15)"
    );

    let report = evaluate(&dev.examples, &store, &vocab, &model_cfg).unwrap();
    assert!(
        report.em >= 0.90,
        "dev EM {:.4} < 0.90 (f1 {:.4})",
        report.em,
        report.f1
    );
    println!(
        "ACCEPTANCE end-to-end-learning: PASS (dev EM {:.4} >= 0.90, F1 {:.4}, {:.1} CPU-minutes <= 15)",
        report.em, report.f1, cpu_minutes
    );

    // --- induced layouts (criterion: >= 0.80 bridge, >= 0.60 comparison) -
    assert!(
        report.bridge_layout_match >= 0.80,
        "bridge layout match {:.4} < 0.80",
        report.bridge_layout_match
    );
    assert!(
        report.comparison_layout_match >= 0.60,
        "comparison layout match {:.4} < 0.60",
        report.comparison_layout_match
    );
    println!(
        "ACCEPTANCE induced-layouts: PASS (bridge {:.4} >= 0.80, comparison {:.4} >= 0.60)",
        report.bridge_layout_match, report.comparison_layout_match
    );

    // --- bridge-supervision ablation (direction only) ---------------------
    let ablated_cfg = ModelConfig {
        lambda_bridge: 0.0,
        ..model_cfg.clone()
    };
    let mut ablated_store = ParameterStore::new(train_cfg.seed);
    register_model_params(&mut ablated_store, vocab.len(), &ablated_cfg).unwrap();
    let ablation_train_cfg = TrainConfig {
        epochs: ABLATION_EPOCHS,
        ..train_cfg.clone()
    };
    train_two_phase(
        &mut ablated_store,
        &train.examples,
        &dev.examples,
        &vocab,
        &ablated_cfg,
        &ablation_train_cfg,
        None,
    )
    .unwrap();

    let hit_supervised = bridge_hit_rate(&dev.examples, &store, &vocab, &model_cfg);
    let hit_ablated = bridge_hit_rate(&dev.examples, &ablated_store, &vocab, &ablated_cfg);
    assert!(
        hit_supervised > hit_ablated,
        "step-0 bridge hit rate did not degrade: supervised {hit_supervised:.4} vs ablated {hit_ablated:.4}"
    );
    println!(
        "ACCEPTANCE bridge-supervision-ablation: PASS (step-0 bridge hit rate {hit_supervised:.4} supervised > {hit_ablated:.4} without supervision)"
    );

    // Sanity: layouts in the report derive from hard argmax per step.
    let sample = &dev.examples[0];
    let p = store.bind_frozen();
    let (_, module_probs) = hopqa::model::predict(sample, &vocab, &model_cfg, &p).unwrap();
    let layout = hard_layout(&module_probs);
    assert!(layout.len() <= model_cfg.t_steps);
}

/// Training epochs for the shared end-to-end run; tuned against the CPU
/// budget on a single-core machine.
const ACCEPT_EPOCHS: usize = 24;
/// The ablation only needs enough training to expose the directional gap.
const ABLATION_EPOCHS: usize = 8;
