//! Test-only oracles shared by the integration suites.

#![allow(dead_code)]

use transopt::tensor::{Graph, SplitRng, Stat, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
/// Entries whose analytic and numeric magnitudes sum below this are skipped.
pub const FD_FLOOR: f64 = 1e-8;

/// `|a − n| / max(|a|, |n|)`, or `None` when both are negligible.
pub fn rel_err(analytic: f64, numeric: f64) -> Option<f64> {
    if analytic.abs() + numeric.abs() <= FD_FLOOR {
        return None;
    }
    Some((analytic - numeric).abs() / analytic.abs().max(numeric.abs()))
}

/// Evaluates the scalar built by `build` from fresh leaves holding `inputs`.
pub fn eval_scalar<F>(inputs: &[Tensor], build: &F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.value(out).data()[0]
}

/// Finite-difference scheme used as the gradient oracle.
#[derive(Clone, Copy, Debug)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`.
    Central(f64),
    /// Five-point central stencil, fourth order. Same idea at a larger step:
    /// less rounding noise on gradients near the magnitude floor.
    FourthOrder(f64),
}

/// The plain central scheme at `FD_STEP`.
pub const CENTRAL: Stencil = Stencil::Central(FD_STEP);

/// Finite-difference gradients of the scalar `build` w.r.t. every input
/// entry. Independent of the reverse sweep: it only evaluates forwards.
pub fn numeric_grads<F>(inputs: &[Tensor], build: &F, stencil: Stencil) -> Vec<Vec<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        let mut gi = vec![0.0; inputs[i].len()];
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            let mut at = |dx: f64| {
                work[i].data_mut()[j] = orig + dx;
                eval_scalar(&work, build)
            };
            gi[j] = match stencil {
                Stencil::Central(h) => (at(h) - at(-h)) / (2.0 * h),
                Stencil::FourthOrder(h) => {
                    let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
                    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
                }
            };
            work[i].data_mut()[j] = orig;
        }
        out.push(gi);
    }
    out
}

pub fn analytic_grads<F>(inputs: &[Tensor], build: &F) -> Vec<Vec<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.backward(out).unwrap();
    vars.iter()
        .zip(inputs)
        .map(|(v, t)| {
            g.grad(*v)
                .map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
        })
        .collect()
}

/// Largest relative error between the reverse sweep and [`CENTRAL`].
pub fn max_grad_error<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    worst_entry(inputs, build, CENTRAL).map_or(0.0, |w| w.rel)
}

#[derive(Clone, Copy, Debug)]
pub struct Worst {
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
}

/// The entry with the largest relative error, if any entry is measured.
pub fn worst_entry<F>(inputs: &[Tensor], build: F, stencil: Stencil) -> Option<Worst>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let a = analytic_grads(inputs, &build);
    let n = numeric_grads(inputs, &build, stencil);
    a.iter()
        .flatten()
        .zip(n.iter().flatten())
        .filter_map(|(&x, &y)| {
            rel_err(x, y).map(|rel| Worst {
                analytic: x,
                numeric: y,
                rel,
            })
        })
        .max_by(|p, q| p.rel.total_cmp(&q.rel))
}

pub fn random_tensor(rng: &mut SplitRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform(lo, hi)).collect(),
    )
    .unwrap()
}

/// Entries bounded away from zero: magnitude in `[0.05, 1]`, random sign.
pub fn away_from_zero(rng: &mut SplitRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.uniform(0.05, 1.0);
            if rng.next_f64() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Entries that are pairwise at least 0.01 apart (a shuffled grid plus jitter).
pub fn well_separated(rng: &mut SplitRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / n.max(1) as f64 + rng.uniform(0.0, 0.002))
        .collect();
    rng.shuffle(&mut data);
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces any tensor to a scalar with fixed random weights, so every output
/// entry contributes an O(1) gradient.
pub fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Var {
    let shape = g.value(x).shape().to_vec();
    let mut rng = SplitRng::new(seed);
    let w = g.constant(random_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = g.mul(x, w).unwrap();
    g.sum(p)
}

/// One randomized gradient-check family: builds a case from a seed and
/// returns its largest relative error.
pub struct OpCase {
    pub name: &'static str,
    pub run: fn(u64) -> f64,
}

fn dims(rng: &mut SplitRng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn case_matmul(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let (m, k, n) = (dims(&mut r, 1, 4), dims(&mut r, 1, 4), dims(&mut r, 1, 4));
    let ins = [
        random_tensor(&mut r, &[m, k], -1.0, 1.0),
        random_tensor(&mut r, &[k, n], -1.0, 1.0),
    ];
    max_grad_error(&ins, |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn case_linear(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let (m, k, n) = (dims(&mut r, 1, 4), dims(&mut r, 1, 4), dims(&mut r, 1, 4));
    let ins = [
        random_tensor(&mut r, &[m, k], -1.0, 1.0),
        random_tensor(&mut r, &[k, n], -1.0, 1.0),
        random_tensor(&mut r, &[n], -1.0, 1.0),
    ];
    max_grad_error(&ins, |g, v| {
        let y = g.linear(v[0], v[1], v[2]).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn case_add(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let (m, n) = (dims(&mut r, 1, 4), dims(&mut r, 1, 4));
    let small: Vec<usize> = match seed % 3 {
        0 => vec![m, n],
        1 => vec![n],
        _ => vec![m, 1],
    };
    let ins = [
        random_tensor(&mut r, &[m, n], -1.0, 1.0),
        random_tensor(&mut r, &small, -1.0, 1.0),
    ];
    // Alternate operand order so both broadcast directions are exercised.
    let swap = seed.is_multiple_of(2);
    max_grad_error(&ins, |g, v| {
        let y = if swap {
            g.add(v[1], v[0]).unwrap()
        } else {
            g.add(v[0], v[1]).unwrap()
        };
        weighted_sum(g, y, seed)
    })
}

fn case_mul(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let (m, n) = (dims(&mut r, 1, 4), dims(&mut r, 1, 4));
    let ins = [
        random_tensor(&mut r, &[m, n], -1.0, 1.0),
        random_tensor(&mut r, &[m, n], -1.0, 1.0),
    ];
    max_grad_error(&ins, |g, v| {
        let y = g.mul(v[0], v[1]).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn case_scale_sum(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let (m, n) = (dims(&mut r, 1, 4), dims(&mut r, 1, 4));
    let f = r.uniform(-2.0, 2.0);
    let ins = [random_tensor(&mut r, &[m, n], -1.0, 1.0)];
    max_grad_error(&ins, |g, v| {
        let y = g.scale(v[0], f);
        let y = g.mul(y, v[0]).unwrap();
        g.sum(y)
    })
}

fn case_relu(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let (m, n) = (dims(&mut r, 1, 4), dims(&mut r, 1, 4));
    let ins = [away_from_zero(&mut r, &[m, n])];
    max_grad_error(&ins, |g, v| {
        let y = g.relu(v[0]);
        weighted_sum(g, y, seed)
    })
}

fn case_softmax(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let (m, n) = (dims(&mut r, 1, 4), dims(&mut r, 1, 5));
    let ins = [random_tensor(&mut r, &[m, n], -3.0, 3.0)];
    max_grad_error(&ins, |g, v| {
        let y = g.softmax_rows(v[0]).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn case_layer_norm(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    // Two-column rows normalize to ±1 whatever the input, so their gradients
    // are O(ε) and below finite-difference resolution; use three or more.
    let (m, n) = (dims(&mut r, 1, 4), dims(&mut r, 3, 5));
    let ins = [
        random_tensor(&mut r, &[m, n], -2.0, 2.0),
        random_tensor(&mut r, &[n], 0.5, 1.5),
        random_tensor(&mut r, &[n], -0.5, 0.5),
    ];
    max_grad_error(&ins, |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2]).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn case_dropout(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let (m, n) = (dims(&mut r, 1, 4), dims(&mut r, 1, 4));
    let p = r.uniform(0.1, 0.6);
    let ins = [random_tensor(&mut r, &[m, n], -1.0, 1.0)];
    // A fresh generator per evaluation fixes the mask across perturbations.
    max_grad_error(&ins, |g, v| {
        let y = g
            .dropout(v[0], p, true, &mut SplitRng::new(seed ^ 0xD0))
            .unwrap();
        weighted_sum(g, y, seed)
    })
}

fn case_reduce(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let (s, e) = (dims(&mut r, 1, 5), dims(&mut r, 1, 4));
    let ins = [well_separated(&mut r, &[s, e])];
    let stat = [Stat::Min, Stat::Max, Stat::Mean, Stat::Std][(seed % 4) as usize];
    max_grad_error(&ins, |g, v| {
        let y = g.reduce(v[0], stat).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn case_concat(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let axis = (seed % 2) as usize;
    let m = dims(&mut r, 1, 3);
    let (w1, w2) = (dims(&mut r, 1, 3), dims(&mut r, 1, 3));
    let (s1, s2) = if axis == 0 {
        (vec![w1, m], vec![w2, m])
    } else {
        (vec![m, w1], vec![m, w2])
    };
    let ins = [
        random_tensor(&mut r, &s1, -1.0, 1.0),
        random_tensor(&mut r, &s2, -1.0, 1.0),
    ];
    max_grad_error(&ins, |g, v| {
        let y = g.concat(&[v[0], v[1], v[0]], axis).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn case_slice_transpose_reshape(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let (m, n) = (dims(&mut r, 1, 4), dims(&mut r, 2, 5));
    let lo = r.below(n - 1);
    let hi = lo + 1 + r.below(n - lo);
    let ins = [random_tensor(&mut r, &[m, n], -1.0, 1.0)];
    max_grad_error(&ins, |g, v| {
        let y = g.slice_cols(v[0], lo, hi).unwrap();
        let y = g.transpose(y).unwrap();
        let y = g.reshape(y, &[m * (hi - lo)]).unwrap();
        weighted_sum(g, y, seed)
    })
}

fn case_cross_entropy(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let (b, n) = (dims(&mut r, 1, 4), dims(&mut r, 2, 6));
    let labels: Vec<usize> = (0..b).map(|_| r.below(n)).collect();
    let ins = [random_tensor(&mut r, &[b, n], -3.0, 3.0)];
    max_grad_error(&ins, |g, v| g.cross_entropy_logits(v[0], &labels).unwrap())
}

fn case_attention(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let heads = dims(&mut r, 1, 3);
    let (s, dh) = (dims(&mut r, 1, 4), dims(&mut r, 1, 3));
    let e = heads * dh;
    let scale = r.uniform(0.3, 1.0);
    let ins = [
        random_tensor(&mut r, &[s, e], -1.0, 1.0),
        random_tensor(&mut r, &[s, e], -1.0, 1.0),
        random_tensor(&mut r, &[s, e], -1.0, 1.0),
    ];
    max_grad_error(&ins, |g, v| {
        let y = g.attention(v[0], v[1], v[2], heads, scale).unwrap();
        weighted_sum(g, y, seed)
    })
}

/// Two-layer perceptron with a shared parent (diamond) feeding the loss.
fn case_mlp_diamond(seed: u64) -> f64 {
    let mut r = SplitRng::new(seed);
    let (b, k, hdim, n) = (
        dims(&mut r, 1, 3),
        dims(&mut r, 1, 4),
        dims(&mut r, 2, 5),
        dims(&mut r, 2, 4),
    );
    let labels: Vec<usize> = (0..b).map(|_| r.below(n)).collect();
    let ins = [
        random_tensor(&mut r, &[b, k], -1.0, 1.0),
        random_tensor(&mut r, &[k, hdim], -1.0, 1.0),
        random_tensor(&mut r, &[hdim], -0.5, 0.5),
        random_tensor(&mut r, &[hdim, n], -1.0, 1.0),
    ];
    max_grad_error(&ins, |g, v| {
        let h = g.matmul(v[0], v[1]).unwrap();
        let h = g.add(h, v[2]).unwrap();
        // tanh-free smooth nonlinearity: h ⊙ h, then reuse h (diamond).
        let sq = g.mul(h, h).unwrap();
        let h2 = g.add(sq, h).unwrap();
        let logits = g.matmul(h2, v[3]).unwrap();
        g.cross_entropy_logits(logits, &labels).unwrap()
    })
}

pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            run: case_matmul,
        },
        OpCase {
            name: "linear",
            run: case_linear,
        },
        OpCase {
            name: "add",
            run: case_add,
        },
        OpCase {
            name: "mul",
            run: case_mul,
        },
        OpCase {
            name: "scale+sum",
            run: case_scale_sum,
        },
        OpCase {
            name: "relu",
            run: case_relu,
        },
        OpCase {
            name: "softmax_rows",
            run: case_softmax,
        },
        OpCase {
            name: "layer_norm",
            run: case_layer_norm,
        },
        OpCase {
            name: "dropout",
            run: case_dropout,
        },
        OpCase {
            name: "reduce",
            run: case_reduce,
        },
        OpCase {
            name: "concat",
            run: case_concat,
        },
        OpCase {
            name: "slice/transpose/reshape",
            run: case_slice_transpose_reshape,
        },
        OpCase {
            name: "cross_entropy_logits",
            run: case_cross_entropy,
        },
        OpCase {
            name: "attention",
            run: case_attention,
        },
        OpCase {
            name: "mlp diamond",
            run: case_mlp_diamond,
        },
    ]
}

/// Minimum distance from a kink (ReLU zero, min/max tie) for a case to be
/// checked; comfortably wider than any stencil reach used here.
pub const KINK_MARGIN: f64 = 1e-3;

/// Cross-entropy of the tiny model (d=2, e=4, h=1, L=1, s=3) against every
/// parameter. Odd seeds run in training mode with a fixed dropout stream.
/// Returns `None` when the case sits within [`KINK_MARGIN`] of a kink.
pub fn tiny_model_error(seed: u64, stencil: Stencil) -> Option<f64> {
    use transopt::fnsuite::ClassId;
    use transopt::model::{Mode, ModelConfig, TransOptModel};
    use transopt::sampling::DesignMatrix;

    let mut r = SplitRng::new(seed);
    let model = TransOptModel::init(ModelConfig::new(2, 4, 1, 1), &mut r.split(0)).unwrap();
    let x: Vec<f64> = (0..6).map(|_| r.uniform(-5.0, 5.0)).collect();
    let y_raw: Vec<f64> = (0..3).map(|_| r.uniform(-10.0, 10.0)).collect();
    let label = ClassId::from_index(r.below(24)).unwrap();
    let des = DesignMatrix::from_raw(x, y_raw, label, 2).unwrap();
    let mode = if seed % 2 == 1 {
        Mode::Train
    } else {
        Mode::Eval
    };
    let ins: Vec<Tensor> = model.parameter_tensors().to_vec();
    let build = |g: &mut Graph, v: &[Var]| {
        let mut drop_rng = SplitRng::new(seed ^ 0xD0);
        let f = model.forward(g, v, &des, mode, &mut drop_rng).unwrap();
        let row = g.reshape(f.logits, &[1, 24]).unwrap();
        g.cross_entropy_logits(row, &[label.index()]).unwrap()
    };
    let mut probe = Graph::new();
    let vars: Vec<Var> = ins.iter().map(|t| probe.param(t.clone())).collect();
    build(&mut probe, &vars);
    if probe.nonsmooth_margin() < KINK_MARGIN {
        return None;
    }
    Some(worst_entry(&ins, build, stencil).map_or(0.0, |w| w.rel))
}

/// Errors of the first `n` tiny-model cases that clear the kink margin, and
/// how many seeds were skipped to find them.
pub fn tiny_model_cases(n: usize, stencil: Stencil) -> (Vec<f64>, usize) {
    let mut errs = Vec::new();
    let mut skipped = 0;
    let mut seed = 0;
    while errs.len() < n {
        match tiny_model_error(seed, stencil) {
            Some(e) => errs.push(e),
            None => skipped += 1,
        }
        seed += 1;
    }
    (errs, skipped)
}

/// Every axis of the `s × d` sample has exactly one coordinate in each of the
/// `s` equal strata of `[−5, 5)`.
pub fn lhs_stratification_holds(x: &Tensor) -> bool {
    let (s, d) = (x.shape()[0], x.shape()[1]);
    let edge = |k: usize| -5.0 + 10.0 * k as f64 / s as f64;
    (0..d).all(|axis| {
        let mut hits = vec![0usize; s];
        for row in 0..s {
            let v = x.at2(row, axis);
            let guess = (((v + 5.0) / 10.0) * s as f64)
                .floor()
                .clamp(0.0, (s - 1) as f64) as usize;
            let k = (guess.saturating_sub(1)..(guess + 2).min(s))
                .find(|&k| edge(k) <= v && v < edge(k + 1));
            match k {
                Some(k) => hits[k] += 1,
                None => return false,
            }
        }
        hits.iter().all(|&c| c == 1)
    })
}

/// Largest difference between min-max scaling `y` and `a·y + b`.
pub fn minmax_affine_error(y: &[f64], a: f64, b: f64) -> f64 {
    use transopt::sampling::minmax_scale;
    let moved: Vec<f64> = y.iter().map(|v| a * v + b).collect();
    let p = minmax_scale(y).unwrap();
    let q = minmax_scale(&moved).unwrap();
    p.iter()
        .zip(&q)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

/// Worst deviations over a suite sweep.
#[derive(Clone, Copy, Debug, Default)]
pub struct SuiteCheck {
    /// `|evaluate(x_opt) − f_opt| / tolerance`, worst case; ≤ 1 passes.
    pub opt_ratio: f64,
    /// `max |RᵀR − I|`, recomputed from the stored rotation.
    pub orthogonality: f64,
    /// Random points whose value was not finite.
    pub non_finite: usize,
    pub instances: usize,
}

/// Every class, `per_class` random instance ids per dimension in `dims`, and
/// `points` random x per instance.
pub fn suite_check(dims: &[usize], per_class: usize, points: usize, seed: u64) -> SuiteCheck {
    use transopt::fnsuite::{make_instance, InstanceSpec};
    let mut rng = SplitRng::new(seed);
    let mut out = SuiteCheck::default();
    for &d in dims {
        for class in 1..=24u32 {
            for _ in 0..per_class {
                let id = 1 + rng.below(1 << 30) as u64;
                let inst = make_instance(InstanceSpec::new(class, id, d).unwrap());
                let tol = if class == 20 { 1e-6 * d as f64 } else { 1e-6 };
                let err = (inst.evaluate(inst.x_opt()).unwrap() - inst.f_opt()).abs();
                out.opt_ratio = out.opt_ratio.max(err / tol);
                let r = inst.rotation();
                for i in 0..d {
                    for j in 0..d {
                        let dot: f64 = (0..d).map(|k| r[k * d + i] * r[k * d + j]).sum();
                        let eye = f64::from(u8::from(i == j));
                        out.orthogonality = out.orthogonality.max((dot - eye).abs());
                    }
                }
                for _ in 0..points {
                    let x: Vec<f64> = (0..d).map(|_| rng.uniform(-5.0, 5.0)).collect();
                    if !inst.evaluate(&x).unwrap().is_finite() {
                        out.non_finite += 1;
                    }
                }
                out.instances += 1;
            }
        }
    }
    out
}

/// A d=3, s=150 design of a random class and instance.
pub fn random_design(rng: &mut SplitRng) -> transopt::sampling::DesignMatrix {
    use transopt::fnsuite::{make_instance, InstanceSpec};
    use transopt::sampling::{build_design, Multiplier};
    let class = 1 + rng.below(24) as u32;
    let id = 1 + rng.below(1 << 20) as u64;
    let inst = make_instance(InstanceSpec::new(class, id, 3).unwrap());
    build_design(
        &inst,
        Multiplier::new(50).unwrap(),
        rng.below(1 << 30) as u64,
    )
    .unwrap()
}

/// Worst eval-mode logit change over `n` random designs under a random row
/// permutation, for a randomly initialized model of the given shape.
pub fn permutation_worst(n: usize, e: usize, h: usize, layers: usize, seed: u64) -> f64 {
    use transopt::model::{ModelConfig, TransOptModel};
    let mut rng = SplitRng::new(seed);
    let model = TransOptModel::init(ModelConfig::new(3, e, h, layers), &mut rng.split(0)).unwrap();
    (0..n)
        .map(|_| {
            let des = random_design(&mut rng);
            let perm = rng.permutation(des.s);
            let a = model.predict(&des).unwrap();
            let b = model.predict(&des.permuted(&perm)).unwrap();
            a.max_abs_diff(&b)
        })
        .fold(0.0, f64::max)
}

/// Outcome of mapping every raw objective value to `10·y + 5` before scaling.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScalingCheck {
    /// Worst model-input change.
    pub input: f64,
    /// Worst eval-logit change.
    pub logits: f64,
    /// Worst input change divided by what rounding `10·y + 5` alone can
    /// cause, `max(1e-12, 8·ε·max|y| / span)`; ≤ 1 means no excess error.
    pub excess: f64,
    /// Largest `max|y| / span` seen.
    pub conditioning: f64,
}

pub fn scaling_worst(n: usize, seed: u64) -> ScalingCheck {
    use transopt::model::{ModelConfig, TransOptModel};
    use transopt::sampling::DesignMatrix;
    let mut rng = SplitRng::new(seed);
    let model = TransOptModel::init(ModelConfig::new(3, 30, 1, 1), &mut rng.split(0)).unwrap();
    let mut worst = ScalingCheck::default();
    for _ in 0..n {
        let des = random_design(&mut rng);
        let raw = des.y_raw.clone().unwrap();
        let moved: Vec<f64> = raw.iter().map(|y| 10.0 * y + 5.0).collect();
        let other = DesignMatrix::from_raw(des.x.clone(), moved, des.class_label, des.d).unwrap();
        let input = des.model_input().max_abs_diff(&other.model_input());
        let (a, b) = (model.predict(&des).unwrap(), model.predict(&other).unwrap());
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let big = raw.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let cond = if hi > lo { big / (hi - lo) } else { 0.0 };
        let bound = (8.0 * f64::EPSILON * cond).max(1e-12);
        worst.input = worst.input.max(input);
        worst.logits = worst.logits.max(a.max_abs_diff(&b));
        worst.excess = worst.excess.max(input / bound);
        worst.conditioning = worst.conditioning.max(cond);
    }
    worst
}
