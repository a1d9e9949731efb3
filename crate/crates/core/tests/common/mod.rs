//! Shared helpers for integration tests: brute-force references and a
//! finite-difference gradient checker.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tma_core::events::Event;
use tma_core::tensor::{Activation, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn rand_tensor_f32(rng: &mut impl Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Sorted random events on a `w × h` sensor.
pub fn rand_events(rng: &mut impl Rng, n: usize, w: u16, h: u16, t_max: u64) -> Vec<Event> {
    let mut ts: Vec<u64> = (0..n).map(|_| rng.random_range(0..=t_max)).collect();
    ts.sort_unstable();
    ts.into_iter()
        .map(|t| {
            let p = if rng.random_bool(0.5) { 1 } else { -1 };
            Event::new(rng.random_range(0..w), rng.random_range(0..h), t, p)
        })
        .collect()
}

// ---- brute-force references ------------------------------------------------

fn tent(a: f64) -> f64 {
    (1.0 - a.abs()).max(0.0)
}

/// Voxel grid by summing every event's kernel at every cell.
pub fn naive_voxel(events: &[Event], bins: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; bins * h * w];
    if events.is_empty() {
        return out;
    }
    let (t1, tn) = (events[0].t as f64, events[events.len() - 1].t as f64);
    for b in 0..bins {
        for y in 0..h {
            for x in 0..w {
                let mut v = 0.0;
                for e in events {
                    let ts = if tn > t1 {
                        (bins as f64 - 1.0) * (e.t as f64 - t1) / (tn - t1)
                    } else {
                        0.0
                    };
                    v += e.p as f64
                        * tent(x as f64 - e.x as f64)
                        * tent(y as f64 - e.y as f64)
                        * tent(b as f64 - ts);
                }
                out[(b * h + y) * w + x] = v;
            }
        }
    }
    out
}

/// `C[(y0,x0),(y1,x1)] = Σ_d F0[d,y0,x0] F1[d,y1,x1] / sqrt(D)`, as `P × H × W`.
pub fn naive_correlation(f0: &Tensor<f64>, f1: &Tensor<f64>) -> Vec<f64> {
    let (d, h, w) = (f0.shape()[0], f0.shape()[1], f0.shape()[2]);
    let p = h * w;
    let mut out = vec![0.0; p * p];
    for a in 0..p {
        for b in 0..p {
            let mut s = 0.0;
            for c in 0..d {
                s += f0.data()[c * p + a] * f1.data()[c * p + b];
            }
            out[a * p + b] = s / (d as f64).sqrt();
        }
    }
    out
}

/// Level `l`: mean over each `2^l × 2^l` block of the last two dims.
pub fn naive_pool(vol: &[f64], rows: usize, h: usize, w: usize, level: usize) -> (Vec<f64>, usize, usize) {
    let s = 1 << level;
    let (hl, wl) = (h / s, w / s);
    let mut out = vec![0.0; rows * hl * wl];
    for r in 0..rows {
        for y in 0..hl {
            for x in 0..wl {
                let mut acc = 0.0;
                for dy in 0..s {
                    for dx in 0..s {
                        acc += vol[(r * h + y * s + dy) * w + x * s + dx];
                    }
                }
                out[(r * hl + y) * wl + x] = acc / (s * s) as f64;
            }
        }
    }
    (out, hl, wl)
}

/// Bilinear read of an `h × w` map at `(x, y)`; outside corners count as zero.
pub fn naive_bilinear(map: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let mut v = 0.0;
    for (cx, cy) in [(x0, y0), (x0 + 1.0, y0), (x0, y0 + 1.0), (x0 + 1.0, y0 + 1.0)] {
        if cx < 0.0 || cy < 0.0 || cx >= w as f64 || cy >= h as f64 {
            continue;
        }
        v += tent(x - cx) * tent(y - cy) * map[cy as usize * w + cx as usize];
    }
    v
}

// ---- gradient checking -----------------------------------------------------

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub type Builder = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> tma_core::Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Builder,
}

/// Worst relative error between backward and central differences over every
/// input scalar. The op output is reduced with fixed random weights.
pub fn gradcheck(inputs: &[Tensor<f64>], build: &Builder, seed: u64) -> f64 {
    let eval = |xs: &[Tensor<f64>], weights: Option<&Tensor<f64>>| -> (f64, Tensor<f64>, Vec<Tensor<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
        let out = build(&mut tape, &vars).unwrap();
        let w = match weights {
            Some(w) => w.clone(),
            None => rand_tensor(&mut rng(seed), tape.shape(out), -1.0, 1.0),
        };
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv).unwrap();
        let loss = tape.sum(prod).unwrap();
        let value = tape.value(loss).item();
        let grads = tape.backward(loss).unwrap();
        let g = vars.iter().map(|&v| grads.get(v).unwrap()).collect();
        (value, w, g)
    };
    let (_, weights, analytic) = eval(inputs, None);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= h;
            let fp = eval(&plus, Some(&weights)).0;
            let fm = eval(&minus, Some(&weights)).0;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(analytic[k].data()[j], numeric));
        }
    }
    worst
}

/// Every differentiable tape op on small random inputs away from kinks.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut r = rng(seed);
    let mut t = |shape: &[usize]| rand_tensor(&mut r, shape, -1.0, 1.0);
    // |x| > 0.1 keeps relu and the L1 target away from their kinks
    let away = |x: Tensor<f64>| {
        let d: Vec<f64> = x.data().iter().map(|&v| if v.abs() < 0.1 { v + 0.3 } else { v }).collect();
        Tensor::new(x.shape(), d).unwrap()
    };
    let mut cases: Vec<OpCase> = Vec::new();
    let mut add = |name: &'static str, inputs: Vec<Tensor<f64>>, build: Builder| cases.push(OpCase { name, inputs, build });

    add("matmul", vec![t(&[3, 4]), t(&[4, 2])], Box::new(|tp, v| tp.matmul(v[0], v[1])));
    add(
        "matmul_transposed",
        vec![t(&[4, 3]), t(&[2, 4])],
        Box::new(|tp, v| tp.matmul_t(v[0], true, v[1], true)),
    );
    add(
        "conv2d_stride1",
        vec![t(&[2, 5, 4]), t(&[3, 2, 3, 3])],
        Box::new(|tp, v| tp.conv2d(v[0], v[1], 1, 1)),
    );
    add(
        "conv2d_stride2",
        vec![t(&[2, 6, 5]), t(&[2, 2, 3, 3])],
        Box::new(|tp, v| tp.conv2d(v[0], v[1], 2, 1)),
    );
    add(
        "conv2d_1x1",
        vec![t(&[3, 3, 3]), t(&[2, 3, 1, 1])],
        Box::new(|tp, v| tp.conv2d(v[0], v[1], 1, 0)),
    );
    add("add_bias", vec![t(&[3, 2, 2]), t(&[3])], Box::new(|tp, v| tp.add_bias(v[0], v[1], 0)));
    add("add", vec![t(&[2, 3]), t(&[2, 3])], Box::new(|tp, v| tp.add(v[0], v[1])));
    add("sub", vec![t(&[2, 3]), t(&[2, 3])], Box::new(|tp, v| tp.sub(v[0], v[1])));
    add("mul", vec![t(&[2, 3]), t(&[2, 3])], Box::new(|tp, v| tp.mul(v[0], v[1])));
    add("scale", vec![t(&[4])], Box::new(|tp, v| tp.scale(v[0], -1.7)));
    add("relu", vec![away(t(&[6]))], Box::new(|tp, v| tp.activation(v[0], Activation::Relu)));
    add("tanh", vec![t(&[6])], Box::new(|tp, v| tp.tanh(v[0])));
    add("sigmoid", vec![t(&[6])], Box::new(|tp, v| tp.sigmoid(v[0])));
    add("softmax_rows", vec![t(&[3, 4])], Box::new(|tp, v| tp.softmax(v[0], 1)));
    add("softmax_cols", vec![t(&[3, 4])], Box::new(|tp, v| tp.softmax(v[0], 0)));
    add(
        "concat",
        vec![t(&[2, 3]), t(&[1, 3])],
        Box::new(|tp, v| tp.concat(&[v[0], v[1]], 0)),
    );
    add("slice", vec![t(&[3, 4, 2])], Box::new(|tp, v| tp.slice(v[0], 1, 1, 2)));
    add("reshape", vec![t(&[2, 6])], Box::new(|tp, v| tp.reshape(v[0], &[3, 4])));
    add("transpose", vec![t(&[2, 5])], Box::new(|tp, v| tp.transpose(v[0])));
    let coords = {
        let c: Vec<f64> = [0.3, 0.7, 2.6, 1.2, -0.4, 2.3, 1.5, 3.4].to_vec();
        Tensor::new(&[4, 2], c).unwrap()
    };
    add(
        "grid_sample",
        vec![t(&[2, 4, 3]), coords],
        Box::new(|tp, v| tp.grid_sample(v[0], v[1])),
    );
    let rows = {
        let c: Vec<f64> = [0.2, 0.6, 1.7, 2.1, 2.4, -0.3, 0.9, 1.3, 3.2, 0.5, 1.1, 1.8].to_vec();
        Tensor::new(&[2, 3, 2], c).unwrap()
    };
    add(
        "sample_rows",
        vec![t(&[2, 3, 4]), rows],
        Box::new(|tp, v| tp.sample_rows(v[0], v[1])),
    );
    add("avg_pool2", vec![t(&[2, 4, 5])], Box::new(|tp, v| tp.avg_pool2(v[0])));
    add("upsample", vec![t(&[2, 3, 2])], Box::new(|tp, v| tp.upsample(v[0], 2)));
    add(
        "layer_norm",
        vec![t(&[3, 5]), t(&[5]), t(&[5])],
        Box::new(|tp, v| tp.layer_norm(v[0], v[1], v[2])),
    );
    let target = away(t(&[2, 2, 3]));
    let mask = Tensor::new(&[2, 2, 3], vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
    add(
        "l1_loss",
        vec![Tensor::zeros(&[2, 2, 3])],
        Box::new(move |tp, v| {
            let tg = tp.constant(target.clone());
            tp.l1_loss(v[0], tg, &mask)
        }),
    );
    add("sum", vec![t(&[3, 2])], Box::new(|tp, v| tp.sum(v[0])));
    cases
}

// ---- end-to-end ------------------------------------------------------------

pub fn toy_gradcheck_config() -> tma_core::model::ModelConfig {
    tma_core::model::ModelConfig {
        segments: 3,
        bins: 2,
        feature_dim: 6,
        downsample: 4,
        iterations: 2,
        mpa_layers: 1,
        radius: 1,
        levels: 2,
        context_dim: 3,
        hidden_dim: 3,
        motion_dim: 5,
        encoder_width: 3,
        ..tma_core::model::ModelConfig::default()
    }
}

pub struct EndToEnd {
    pub checked: usize,
    pub worst: f64,
    pub loss: f64,
}

/// Sequence-loss gradient of a perturbed 16×16 model against central
/// differences on `samples` randomly chosen weights, in f64.
pub fn end_to_end_gradcheck(seed: u64, samples: usize) -> EndToEnd {
    use tma_core::model::{sequence_loss, TmaModel};
    use tma_core::FlowField;

    let cfg = toy_gradcheck_config();
    let mut r = rng(seed);
    let mut model = TmaModel::<f32>::new(cfg.clone(), seed).unwrap().cast::<f64>();
    model.params.perturb(&mut r, 0.1);
    let grids: Vec<Tensor<f64>> = (0..=cfg.segments)
        .map(|_| rand_tensor(&mut r, &[cfg.bins, 16, 16], -1.0, 1.0))
        .collect();
    let gt_vals = rand_tensor_f32(&mut r, &[2, 16, 16], -2.0, 2.0);
    let valid: Vec<bool> = (0..256).map(|i| i % 5 != 0).collect();
    let gt = FlowField::new(gt_vals, valid).unwrap();

    let run = |m: &TmaModel<f64>, detached: Option<&[Tensor<f64>]>| {
        let mut tape = Tape::new();
        let inputs: Vec<Var> = grids.iter().map(|g| tape.constant(g.clone())).collect();
        let out = match detached {
            None => m.forward(&mut tape, &inputs).unwrap(),
            Some(d) => m.forward_replay(&mut tape, &inputs, d).unwrap(),
        };
        let loss = sequence_loss(&mut tape, &out.flows, &gt, m.config.gamma).unwrap();
        (tape, loss, out.detached)
    };
    let (tape, loss, detached) = run(&model, None);
    let grads = tape.backward(loss).unwrap().for_params(&model.params);
    let base = tape.value(loss).item();

    let ids: Vec<_> = model.params.ids().collect();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let id = ids[r.random_range(0..ids.len())];
        let j = r.random_range(0..model.params.get(id).len());
        let mut plus = model.clone();
        plus.params.get_mut(id).data_mut()[j] += h;
        let mut minus = model.clone();
        minus.params.get_mut(id).data_mut()[j] -= h;
        let (tp, lp, _) = run(&plus, Some(&detached));
        let (tm, lm, _) = run(&minus, Some(&detached));
        let numeric = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * h);
        worst = worst.max(rel_err(grads[id.index()].data()[j], numeric));
    }
    EndToEnd {
        checked: samples,
        worst,
        loss: base,
    }
}
