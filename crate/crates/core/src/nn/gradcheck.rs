//! Central finite-difference checks of every backward kernel in double
//! precision.
//!
//! Each layer is reduced to the scalar `L = sum(out * r)` for a fixed random
//! `r`, so the upstream gradient is `r` itself.

use super::layers::{
    cross_entropy, gap_backward, gap_forward, relu_backward, relu_inplace, Act, BatchNorm2d, Conv2d, Linear,
};
use super::model::{Mode, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Denominator floor so gradients that are exactly zero compare on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn step_for(w: f64) -> f64 {
    1e-5 * w.abs().max(1.0)
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Compares `analytic` against central differences of `f` over every
/// element of `param`.
fn compare(
    name: &str,
    param: &mut [f64],
    analytic: &[f64],
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> GradCheck {
    let mut max_rel_err: f64 = 0.0;
    for i in 0..param.len() {
        let w = param[i];
        let h = step_for(w);
        param[i] = w + h;
        let up = f(param);
        param[i] = w - h;
        let down = f(param);
        param[i] = w;
        max_rel_err = max_rel_err.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    GradCheck {
        name: name.to_string(),
        checked: param.len(),
        max_rel_err,
    }
}

fn check_conv(rng: &mut ChaCha8Rng, label: &str, kernel: usize, stride: usize, pad: usize) -> Vec<GradCheck> {
    let (n, cin, cout, hw) = (2, 3, 4, 7);
    let mut conv = Conv2d::<f64>::new(cin, cout, kernel, stride, pad);
    conv.weight = randn(rng, conv.weight.len());
    let mut x = randn(rng, n * cin * hw * hw);
    let act = |d: &[f64]| Act::from_vec(n, cin, hw, hw, d.to_vec());
    let y = conv.forward(&act(&x));
    let r = randn(rng, y.data.len());
    let dy = Act::from_vec(y.n, y.c, y.h, y.w, r.clone());
    let mut dw = vec![0.0; conv.weight.len()];
    let dx = conv.backward(&act(&x), &dy, true, Some(&mut dw)).expect("dx");

    let mut out = vec![compare(&format!("{label} dx"), &mut x, &dx.data, &mut |xv| {
        dot(&conv.forward(&act(xv)).data, &r)
    })];
    let mut w = conv.weight.clone();
    let xa = act(&x);
    out.push(compare(&format!("{label} dw"), &mut w, &dw, &mut |wv| {
        let mut c = conv.clone();
        c.weight = wv.to_vec();
        dot(&c.forward(&xa).data, &r)
    }));
    out
}

fn check_bn(rng: &mut ChaCha8Rng, train: bool) -> Vec<GradCheck> {
    let (n, c, hw) = (3, 2, 4);
    let label = if train { "batchnorm (batch stats)" } else { "batchnorm (running stats)" };
    let mut bn = BatchNorm2d::<f64>::new(c);
    bn.gamma = randn(rng, c).iter().map(|v| 1.0 + 0.5 * v).collect();
    bn.beta = randn(rng, c);
    bn.running_mean = randn(rng, c);
    bn.running_var = randn(rng, c).iter().map(|v| 1.0 + 0.5 * v.abs()).collect();
    let mut x: Vec<f64> = randn(rng, n * c * hw * hw).iter().map(|v| 2.0 * v + 0.3).collect();
    let act = |d: &[f64]| Act::from_vec(n, c, hw, hw, d.to_vec());
    let fwd = |bn: &BatchNorm2d<f64>, xv: &[f64]| {
        let mut b = bn.clone();
        if train {
            b.forward_train(&act(xv), true)
        } else {
            b.forward_eval(&act(xv))
        }
    };
    let (y, cache) = fwd(&bn, &x);
    let r = randn(rng, y.data.len());
    let dy = Act::from_vec(n, c, hw, hw, r.clone());
    let (mut dg, mut db) = (vec![0.0; c], vec![0.0; c]);
    let dx = bn.backward(&cache, &dy, true, Some((&mut dg, &mut db))).expect("dx");

    let mut out = vec![compare(&format!("{label} dx"), &mut x, &dx.data, &mut |xv| dot(&fwd(&bn, xv).0.data, &r))];
    let mut g = bn.gamma.clone();
    out.push(compare(&format!("{label} dgamma"), &mut g, &dg, &mut |gv| {
        let mut b = bn.clone();
        b.gamma = gv.to_vec();
        dot(&fwd(&b, &x).0.data, &r)
    }));
    let mut be = bn.beta.clone();
    out.push(compare(&format!("{label} dbeta"), &mut be, &db, &mut |bv| {
        let mut b = bn.clone();
        b.beta = bv.to_vec();
        dot(&fwd(&b, &x).0.data, &r)
    }));
    out
}

fn check_linear(rng: &mut ChaCha8Rng) -> Vec<GradCheck> {
    let (batch, fin, fout) = (3, 5, 4);
    let mut lin = Linear::<f64>::new(fin, fout);
    lin.weight = randn(rng, lin.weight.len());
    lin.bias = randn(rng, fout);
    let mut x = randn(rng, batch * fin);
    let r = randn(rng, batch * fout);
    let (mut dw, mut db) = (vec![0.0; lin.weight.len()], vec![0.0; fout]);
    let dx = lin.backward(&x, &r, batch, Some((&mut dw, &mut db)));
    let mut out = vec![compare("linear dx", &mut x, &dx, &mut |xv| dot(&lin.forward(xv, batch), &r))];
    let mut w = lin.weight.clone();
    out.push(compare("linear dw", &mut w, &dw, &mut |wv| {
        let mut l = lin.clone();
        l.weight = wv.to_vec();
        dot(&l.forward(&x, batch), &r)
    }));
    let mut b = lin.bias.clone();
    out.push(compare("linear db", &mut b, &db, &mut |bv| {
        let mut l = lin.clone();
        l.bias = bv.to_vec();
        dot(&l.forward(&x, batch), &r)
    }));
    out
}

fn check_relu(rng: &mut ChaCha8Rng) -> GradCheck {
    // Keep inputs away from the kink so the difference quotient is exact.
    let mut x: Vec<f64> = randn(rng, 40)
        .into_iter()
        .map(|v| if v.abs() < 0.05 { v.signum() * 0.5 } else { v })
        .collect();
    let r = randn(rng, 40);
    let fwd = |xv: &[f64]| {
        let mut a = Act::from_vec(2, 2, 2, 5, xv.to_vec());
        relu_inplace(&mut a);
        a
    };
    let dx = relu_backward(&fwd(&x), &Act::from_vec(2, 2, 2, 5, r.clone()));
    compare("relu dx", &mut x, &dx.data, &mut |xv| dot(&fwd(xv).data, &r))
}

fn check_gap(rng: &mut ChaCha8Rng) -> GradCheck {
    let (n, c, h, w) = (2, 3, 3, 4);
    let mut x = randn(rng, n * c * h * w);
    let r = randn(rng, n * c);
    let dx = gap_backward(&r, n, c, h, w);
    compare("global average pool dx", &mut x, &dx.data, &mut |xv| {
        dot(&gap_forward(&Act::from_vec(n, c, h, w, xv.to_vec())), &r)
    })
}

fn check_cross_entropy(rng: &mut ChaCha8Rng) -> GradCheck {
    let (batch, classes) = (4, 3);
    let mut logits: Vec<f64> = randn(rng, batch * classes).iter().map(|v| 3.0 * v).collect();
    let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();
    let (_, grad) = cross_entropy(&logits, &labels, classes);
    compare("softmax cross-entropy dlogits", &mut logits, &grad, &mut |lv| {
        cross_entropy(lv, &labels, classes).0
    })
}

/// Every trainable tensor of a two-stage network on 16x16 inputs in train mode.
fn check_model(rng: &mut ChaCha8Rng) -> Vec<GradCheck> {
    let cfg = ModelConfig {
        stage_blocks: vec![1, 1],
        stage_channels: vec![3, 4],
        num_classes: 2,
        input_size: 16,
        arch_tag: "gradcheck".into(),
    };
    let mut model = Model::<f64>::build(&cfg, rng.gen()).expect("valid config");
    for t in model.tensors_mut() {
        if t.trainable && t.name.contains("bn") {
            for v in t.data.iter_mut() {
                *v += 0.2 * rng.gen_range(-1.0..1.0);
            }
        }
    }
    let (n, s) = (4, cfg.input_size);
    let x = Act::from_vec(n, 3, s, s, randn(rng, n * 3 * s * s));
    let labels = vec![0, 1, 1, 0];
    let (_, grads) = model.clone().loss_and_grads(&x, &labels).expect("grads");
    let loss_of = |m: &Model<f64>| {
        let logits = m.clone().forward(&x, Mode::Train).expect("forward");
        cross_entropy(&logits, &labels, 2).0
    };

    let names: Vec<String> = model.tensors().iter().filter(|t| t.trainable).map(|t| t.name.clone()).collect();
    names
        .into_iter()
        .map(|name| {
            let analytic = grads.get(&name).cloned().unwrap_or_default();
            let mut values = model
                .tensors()
                .into_iter()
                .find(|t| t.name == name)
                .expect("tensor")
                .data
                .to_vec();
            let mut probe = model.clone();
            let res = compare(&format!("model {name}"), &mut values, &analytic, &mut |v| {
                for t in probe.tensors_mut() {
                    if t.name == name {
                        t.data.copy_from_slice(v);
                    }
                }
                loss_of(&probe)
            });
            if analytic.len() != res.checked {
                return GradCheck {
                    max_rel_err: f64::INFINITY,
                    ..res
                };
            }
            res
        })
        .collect()
}

/// Runs the full suite; one entry per (layer, gradient) pair.
pub fn run_gradient_suite(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.extend(check_conv(&mut rng, "conv 3x3 stride 1", 3, 1, 1));
    out.extend(check_conv(&mut rng, "conv 3x3 stride 2", 3, 2, 1));
    out.extend(check_conv(&mut rng, "conv 1x1 stride 1", 1, 1, 0));
    out.extend(check_conv(&mut rng, "conv 1x1 stride 2", 1, 2, 0));
    out.extend(check_bn(&mut rng, true));
    out.extend(check_bn(&mut rng, false));
    out.extend(check_linear(&mut rng));
    out.push(check_relu(&mut rng));
    out.push(check_gap(&mut rng));
    out.push(check_cross_entropy(&mut rng));
    out.extend(check_model(&mut rng));
    out
}
