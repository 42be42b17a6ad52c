//! The finite-difference suite run by `mwe gradcheck`.
//!
//! Every case builds a small random problem around one operation and compares
//! tape gradients with central differences. The hard Heaviside gate is
//! included as a control that is expected to disagree.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Fault, FiniteDifference, ParamStore, Tape, Tensor, Var};
use crate::lateral_inhibition::{LateralInhibitionLayer, DEFAULT_STEEPNESS};

pub const THRESHOLD: f64 = 1e-5;
pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    /// Not counted towards the verdict.
    pub expected_fail: bool,
}

impl CaseResult {
    pub fn within_threshold(&self) -> bool {
        self.max_rel_error < THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases
            .iter()
            .filter(|c| !c.expected_fail)
            .all(CaseResult::within_threshold)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.cases
            .iter()
            .filter(|c| !c.expected_fail)
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cases {
            let verdict = match (c.expected_fail, c.within_threshold()) {
                (false, true) => "ok",
                (false, false) => "FAIL",
                (true, false) => "expected-fail",
                (true, true) => "expected-fail (agreed anyway)",
            };
            writeln!(f, "{:<28} {:>12.3e}  {verdict}", c.name, c.max_rel_error)?;
        }
        write!(
            f,
            "threshold {THRESHOLD:e}, h = {STEP:e}: {}",
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Values in `±[0.1, 1)`, kept away from zero so relu kinks stay out of reach.
fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data)
}

type Loss = Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var, AutodiffError>>;

struct Case {
    name: &'static str,
    expected_fail: bool,
    store: ParamStore,
    loss: Loss,
}

/// `sum(a ⊙ c)` for a fixed random `c`, turning a tensor into a scalar whose
/// gradient is `c` rather than all ones.
fn weighted_sum(tape: &mut Tape, a: Var, c: &Tensor) -> Result<Var, AutodiffError> {
    let cv = tape.input(c.clone());
    let p = tape.mul(a, cv)?;
    Ok(tape.sum(p))
}

fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    {
        let mut store = ParamStore::new();
        let a = store.add("A", rand_tensor(&mut rng, 3, 4));
        let b = store.add("B", rand_tensor(&mut rng, 4, 2));
        let c = rand_tensor(&mut rng, 3, 2);
        out.push(Case {
            name: "matmul",
            expected_fail: false,
            store,
            loss: Box::new(move |t, s| {
                let (av, bv) = (t.param(s, a), t.param(s, b));
                let p = t.matmul(av, bv)?;
                let sq = t.mul(p, p)?;
                weighted_sum(t, sq, &c)
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let x = store.add("x", rand_tensor(&mut rng, 3, 4).map(|v| 3.0 * v));
        let c = rand_tensor(&mut rng, 3, 4);
        out.push(Case {
            name: "sigmoid",
            expected_fail: false,
            store,
            loss: Box::new(move |t, s| {
                let xv = t.param(s, x);
                let y = t.sigmoid(xv);
                weighted_sum(t, y, &c)
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let x = store.add("x", rand_tensor(&mut rng, 4, 3));
        let c = rand_tensor(&mut rng, 4, 3);
        out.push(Case {
            name: "relu",
            expected_fail: false,
            store,
            loss: Box::new(move |t, s| {
                let xv = t.param(s, x);
                let y = t.relu(xv);
                let sq = t.mul(y, y)?;
                weighted_sum(t, sq, &c)
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let table = store.add("E", rand_tensor(&mut rng, 6, 3));
        let c = rand_tensor(&mut rng, 5, 3);
        out.push(Case {
            name: "embedding",
            expected_fail: false,
            store,
            loss: Box::new(move |t, s| {
                let e = t.param(s, table);
                let rows = t.embedding_lookup(e, &[0, 2, 2, 5, 1])?;
                let sq = t.mul(rows, rows)?;
                weighted_sum(t, sq, &c)
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let z = store.add("logits", rand_tensor(&mut rng, 4, 5).map(|v| 2.0 * v));
        out.push(Case {
            name: "softmax_cross_entropy",
            expected_fail: false,
            store,
            loss: Box::new(move |t, s| {
                let zv = t.param(s, z);
                t.softmax_cross_entropy(zv, &[0, 3, 4, 3])
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let m = store.add("M", rand_tensor(&mut rng, 3, 3));
        let c = rand_tensor(&mut rng, 3, 3);
        out.push(Case {
            name: "zero_diag",
            expected_fail: false,
            store,
            loss: Box::new(move |t, s| {
                let mv = t.param(s, m);
                let z = t.zero_diag(mv)?;
                let sq = t.mul(z, z)?;
                weighted_sum(t, sq, &c)
            }),
        });
    }
    {
        // a whole extractor-shaped network: embedding, concat, affine, relu,
        // mean pooling, transpose and cross-entropy together
        let mut store = ParamStore::new();
        let emb = store.add("E", rand_tensor(&mut rng, 5, 2));
        let w = store.add("W", rand_tensor(&mut rng, 4, 3));
        let b = store.add("b", Tensor::vector(vec![0.3, -0.2, 0.15]));
        let v = store.add("V", rand_tensor(&mut rng, 2, 3));
        out.push(Case {
            name: "composite",
            expected_fail: false,
            store,
            loss: Box::new(move |t, s| {
                let e = t.param(s, emb);
                let left = t.embedding_lookup(e, &[0, 1, 2])?;
                let right = t.embedding_lookup(e, &[1, 2, 4])?;
                let x = t.concat(&[left, right])?;
                let wv = t.param(s, w);
                let bv = t.param(s, b);
                let xw = t.matmul(x, wv)?;
                let pre = t.add(xw, bv)?;
                let h = t.sigmoid(pre);
                let pooled = t.mean_rows(h)?;
                let vv = t.param(s, v);
                let vt = t.transpose(vv)?;
                let tok = t.matmul(h, vt)?;
                let ce = t.softmax_cross_entropy(tok, &[1, 0, 1])?;
                let sent = t.matmul(pooled, vt)?;
                let ce2 = t.softmax_cross_entropy(sent, &[0])?;
                let half = t.scale(ce2, 0.5);
                t.add(ce, half)
            }),
        });
    }
    for (name, hard) in [
        ("lateral_inhibition_relaxed", false),
        ("lateral_inhibition_hard", true),
    ] {
        let mut store = ParamStore::new();
        let x = rand_tensor(&mut rng, 3, 4);
        let w = rand_tensor(&mut rng, 4, 4).map(|v| 0.3 * v);
        let b = Tensor::vector((0..4).map(|_| rng.gen_range(-0.2..0.2)).collect());
        let layer = LateralInhibitionLayer::with_values(&mut store, "LI", w, b, DEFAULT_STEEPNESS)
            .expect("square weight");
        let c = rand_tensor(&mut rng, 3, 4);
        out.push(Case {
            name,
            expected_fail: hard,
            store,
            loss: Box::new(move |t, s| {
                let xv = t.input(x.clone());
                let y = if hard {
                    layer.forward(t, s, xv)?
                } else {
                    layer.forward_relaxed(t, s, xv)?
                };
                weighted_sum(t, y, &c)
            }),
        });
    }
    out
}

/// Runs every case. `fault` corrupts the analytic gradient of one operation
/// kind, which must then make the suite fail.
pub fn run_suite(seed: u64, fault: Option<Fault>) -> Result<SuiteReport, AutodiffError> {
    let checker = FiniteDifference { step: STEP, fault };
    let mut results = Vec::new();
    for mut case in cases(seed) {
        let report = checker.check(&mut case.store, &case.loss)?;
        results.push(CaseResult {
            name: case.name,
            max_rel_error: report.max_rel_error,
            expected_fail: case.expected_fail,
        });
    }
    Ok(SuiteReport { cases: results })
}
