//! Central finite-difference checks of the tape's backward rules and of a
//! full policy-through-model rollout gradient.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::autodiff::{Axis, Corruption, Tape, Tensor, Var, PRIMITIVE_OPS};
use crate::design::parse_design;
use crate::error::Result;
use crate::nets::{ActBlocks, HiddenState, ModelNet, ModelParams, NetArch, PolicyNet, PolicyParams};
use crate::rng::{stream, Rng};
use crate::sim::{initial_state, NoiseModel, RewardWeights};
use crate::trainer::ModelRollout;

pub const EPS: f64 = 1e-5;
pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const ROLLOUT_TOL: f64 = 1e-3;

/// Worst error of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub worst_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst_rel_err <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub primitives: Vec<CheckResult>,
    pub rollout: CheckResult,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.primitives.iter().all(CheckResult::passed) && self.rollout.passed()
    }

    pub fn failures(&self) -> Vec<&str> {
        self.primitives
            .iter()
            .chain([&self.rollout])
            .filter(|c| !c.passed())
            .map(|c| c.name.as_str())
            .collect()
    }

    /// One line per check.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in self.primitives.iter().chain([&self.rollout]) {
            s.push_str(&format!(
                "{:<10} cases={:<4} worst_rel_err={:.3e} tol={:.0e} {}\n",
                c.name,
                c.cases,
                c.worst_rel_err,
                c.tolerance,
                if c.passed() { "ok" } else { "FAIL" }
            ));
        }
        s
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-6)` over a whole gradient.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-6)
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

struct Case {
    inputs: Vec<Tensor>,
    build: Build,
}

fn rand_tensor(rng: &mut Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect())
}

fn dims(rng: &mut Rng) -> (usize, usize) {
    (rng.random_range(1..=4), rng.random_range(1..=4))
}

fn random_axis(rng: &mut Rng) -> Axis {
    if rng.random_bool(0.5) {
        Axis::Rows
    } else {
        Axis::Cols
    }
}

/// Broadcast shape for the second operand of add/mul.
fn operand_shape(rng: &mut Rng, r: usize, c: usize) -> (usize, usize) {
    match rng.random_range(0..4) {
        0 => (r, c),
        1 => (1, c),
        2 => (r, 1),
        _ => (1, 1),
    }
}

fn unary(rng: &mut Rng, lo: f64, hi: f64, f: fn(&mut Tape, Var) -> Var) -> Case {
    let (r, c) = dims(rng);
    Case {
        inputs: vec![rand_tensor(rng, r, c, lo, hi)],
        build: Box::new(move |t, v| f(t, v[0])),
    }
}

fn make_case(op: &str, rng: &mut Rng) -> Case {
    match op {
        "matmul" => {
            let (m, k) = dims(rng);
            let n = rng.random_range(1..=4);
            Case {
                inputs: vec![rand_tensor(rng, m, k, -1.0, 1.0), rand_tensor(rng, k, n, -1.0, 1.0)],
                build: Box::new(|t, v| t.matmul(v[0], v[1])),
            }
        }
        "add" | "mul" => {
            let (r, c) = dims(rng);
            let (br, bc) = operand_shape(rng, r, c);
            let mul = op == "mul";
            Case {
                inputs: vec![rand_tensor(rng, r, c, -1.0, 1.0), rand_tensor(rng, br, bc, -1.0, 1.0)],
                build: Box::new(move |t, v| if mul { t.mul(v[0], v[1]) } else { t.add(v[0], v[1]) }),
            }
        }
        "tanh" => unary(rng, -2.0, 2.0, |t, x| t.tanh(x)),
        "sigmoid" => unary(rng, -3.0, 3.0, |t, x| t.sigmoid(x)),
        "exp" => unary(rng, -2.0, 2.0, |t, x| t.exp(x)),
        "log" => unary(rng, 0.2, 3.0, |t, x| t.log(x)),
        "square" => unary(rng, -2.0, 2.0, |t, x| t.square(x)),
        "softplus" => unary(rng, -3.0, 3.0, |t, x| t.softplus(x)),
        "clamp" => {
            // Values stay clear of the kinks, where no derivative exists.
            let (r, c) = dims(rng);
            let data = (0..r * c)
                .map(|_| {
                    let v: f64 = rng.random_range(-2.0..2.0);
                    if (v.abs() - 1.0).abs() < 1e-3 {
                        v * 1.1
                    } else {
                        v
                    }
                })
                .collect();
            Case {
                inputs: vec![Tensor::matrix(r, c, data)],
                build: Box::new(|t, v| t.clamp(v[0], -1.0, 1.0)),
            }
        }
        "concat" => {
            let axis = random_axis(rng);
            let n = rng.random_range(2..=3);
            let (r, c) = dims(rng);
            let inputs = (0..n)
                .map(|_| {
                    let k = rng.random_range(1..=3);
                    match axis {
                        Axis::Rows => rand_tensor(rng, k, c, -1.0, 1.0),
                        Axis::Cols => rand_tensor(rng, r, k, -1.0, 1.0),
                    }
                })
                .collect();
            Case {
                inputs,
                build: Box::new(move |t, v| t.concat(v, axis)),
            }
        }
        "slice" => {
            let axis = random_axis(rng);
            let (r, c) = dims(rng);
            let extent = if axis == Axis::Rows { r } else { c };
            let start = rng.random_range(0..extent);
            let len = rng.random_range(1..=extent - start);
            Case {
                inputs: vec![rand_tensor(rng, r, c, -1.0, 1.0)],
                build: Box::new(move |t, v| t.slice(v[0], axis, start, len)),
            }
        }
        "sum" | "mean" => {
            let axis = match rng.random_range(0..3) {
                0 => None,
                1 => Some(Axis::Rows),
                _ => Some(Axis::Cols),
            };
            let mean = op == "mean";
            let (r, c) = dims(rng);
            Case {
                inputs: vec![rand_tensor(rng, r, c, -1.0, 1.0)],
                build: Box::new(move |t, v| if mean { t.mean(v[0], axis) } else { t.sum(v[0], axis) }),
            }
        }
        other => panic!("no gradient case for op `{other}`"),
    }
}

/// Scalar `Σ op(inputs) ⊙ weights` with fixed random weights.
fn eval_case(
    case: &Case,
    weights: &mut Option<Tensor>,
    inputs: &[Tensor],
    corruption: Corruption,
    rng: &mut Rng,
) -> (f64, Tape, Vec<Var>, Var) {
    let mut tape = Tape::with_corruption(corruption);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars);
    let (r, c) = tape.shape(out);
    let w = weights.get_or_insert_with(|| rand_tensor(rng, r, c, -1.0, 1.0)).clone();
    let w = tape.constant(w);
    let y = tape.mul(out, w);
    let s = tape.sum(y, None);
    (tape.value(s).item(), tape, vars, s)
}

fn check_case(case: &Case, corruption: Corruption, rng: &mut Rng) -> Result<f64> {
    let mut weights = None;
    let (_, tape, vars, s) = eval_case(case, &mut weights, &case.inputs, corruption, rng);
    let grads = tape.backward(s)?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        analytic.extend_from_slice(grads.get(*v).expect("input on gradient path").data());
        for j in 0..case.inputs[i].len() {
            let mut plus = case.inputs.clone();
            plus[i].data_mut()[j] += EPS;
            let mut minus = case.inputs.clone();
            minus[i].data_mut()[j] -= EPS;
            let fp = eval_case(case, &mut weights, &plus, Corruption::default(), rng).0;
            let fm = eval_case(case, &mut weights, &minus, Corruption::default(), rng).0;
            numeric.push((fp - fm) / (2.0 * EPS));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Finite-difference check of every primitive over `cases` random cases.
pub fn check_primitives(cases: usize, seed: u64, corruption: Corruption) -> Result<Vec<CheckResult>> {
    PRIMITIVE_OPS
        .iter()
        .enumerate()
        .map(|(k, op)| {
            let mut rng = stream(seed, k as u64);
            let mut worst: f64 = 0.0;
            for _ in 0..cases {
                let case = make_case(op, &mut rng);
                worst = worst.max(check_case(&case, corruption, &mut rng)?);
            }
            Ok(CheckResult {
                name: op.to_string(),
                cases,
                worst_rel_err: worst,
                tolerance: PRIMITIVE_TOL,
            })
        })
        .collect()
}

fn toy_arch() -> NetArch {
    NetArch {
        hidden: 6,
        message: 4,
        rounds: 2,
        recurrent: 5,
    }
}

/// Negative mean reward of a sampled 2-step rollout on a leg-and-wheel
/// design, differentiated with respect to every policy parameter.
pub fn check_rollout(seed: u64, corruption: Corruption) -> Result<CheckResult> {
    let design = parse_design("LWN|NWL")?;
    let arch = toy_arch();
    let theta = PolicyParams::init(arch, seed);
    let mut phi = ModelParams::init(arch, seed ^ 1);
    // Rescaled heads so the model's predictions stay comparable to states.
    for (name, t) in phi.store.iter_mut() {
        if name.ends_with("head.w") {
            t.data_mut().iter_mut().for_each(|v| *v *= 0.1);
        }
    }
    let policy = PolicyNet::new(arch, &design);
    let model = ModelNet::new(arch, &design);
    let batch = 2;
    let steps = 2;
    let mut rng = stream(seed, 99);
    let starts: Vec<Vec<f64>> = (0..batch)
        .map(|_| initial_state(&design, &NoiseModel::default(), &mut rng).values)
        .collect();
    let noise: Vec<ActBlocks<Tensor>> = (0..steps)
        .map(|_| {
            let mut b = ActBlocks { leg: None, wheel: None };
            for kind in [crate::design::ModuleKind::Leg, crate::design::ModuleKind::Wheel] {
                let (r, c) = (policy.layout.count(kind) * batch, kind.action_dim());
                b.set(
                    kind,
                    Tensor::matrix(r, c, (0..r * c).map(|_| StandardNormal.sample(&mut rng)).collect()),
                );
            }
            b
        })
        .collect();
    let weights = RewardWeights {
        effort: 0.01,
        pose: 0.05,
        ..RewardWeights::default()
    };
    let ro = ModelRollout {
        policy: &policy,
        model: &model,
        norm: &phi.norm,
        weights,
    };
    let loss = |store: &crate::autodiff::ParamStore, corruption: Corruption, grad: bool| -> Result<(f64, Option<Vec<f64>>)> {
        let mut tape = Tape::with_corruption(corruption);
        let p = if grad {
            store.bind(&mut tape)
        } else {
            store.bind_frozen(&mut tape)
        };
        let f = phi.store.bind_frozen(&mut tape);
        let refs: Vec<&[f64]> = starts.iter().map(Vec::as_slice).collect();
        let s = model.state_blocks(&refs).map(|_, t| tape.constant(t.clone()));
        let zeros = HiddenState::zeros(&design, &arch);
        let h = policy.hidden_constants(&mut tape, &vec![&zeros; batch]);
        let out = ro.run(&mut tape, &p, &f, s, h, batch, steps, Some(&noise))?;
        let l = tape.scale(out.reward, -1.0 / batch as f64);
        let v = tape.value(l).item();
        if !grad {
            return Ok((v, None));
        }
        let g = tape.backward(l)?;
        Ok((v, Some(p.collect(&g, store).flatten())))
    };
    let analytic = loss(&theta.store, corruption, true)?.1.unwrap();
    let flat = theta.store.flatten();
    let mut numeric = Vec::with_capacity(flat.len());
    for j in 0..flat.len() {
        let mut x = flat.clone();
        x[j] += EPS;
        let fp = loss(&theta.store.unflatten(&x)?, Corruption::default(), false)?.0;
        x[j] -= 2.0 * EPS;
        let fm = loss(&theta.store.unflatten(&x)?, Corruption::default(), false)?.0;
        numeric.push((fp - fm) / (2.0 * EPS));
    }
    Ok(CheckResult {
        name: "rollout".to_string(),
        cases: flat.len(),
        worst_rel_err: relative_error(&analytic, &numeric),
        tolerance: ROLLOUT_TOL,
    })
}

/// Both suites with `cases` random cases per primitive.
pub fn run_gradcheck(cases: usize, seed: u64, corruption: Corruption) -> Result<GradcheckReport> {
    Ok(GradcheckReport {
        primitives: check_primitives(cases, seed, corruption)?,
        rollout: check_rollout(seed, corruption)?,
    })
}
