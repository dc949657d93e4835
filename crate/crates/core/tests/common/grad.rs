//! Finite-difference checks over every differentiable operation and over
//! all parameters of a model.

use fragmentvc::model::{FragmentVc, ModelConfig};
use fragmentvc::tensor::{check_gradients, relative_error, Tape, Tensor, Var};
use fragmentvc::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values with magnitude in `[0.1, 1)` and random sign, away from kinks.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces a matrix to a scalar with non-uniform upstream gradients:
/// `l · y · r` for fixed random `l` (1 × m) and `r` (n × 1).
pub fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let (m, n) = (tape.shape(y)[0], tape.shape(y)[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let l = tape.constant(uniform(&mut rng, &[1, m], -1.0, 1.0));
    let r = tape.constant(uniform(&mut rng, &[n, 1], -1.0, 1.0));
    let yr = tape.matmul(y, r)?;
    let s = tape.matmul(l, yr)?;
    Ok(tape.sum(s))
}

/// Maximum relative error of each operation for one seed.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut check = |name: &'static str, inputs: Vec<Tensor<f64>>, f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>| {
        let report = check_gradients(&inputs, H, |t, v| f(t, v)).unwrap();
        out.push((name, report.max_rel_error));
    };
    let a = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let b = uniform(&mut rng, &[4, 5], -1.0, 1.0);
    check("matmul", vec![a.clone(), b.clone()], &|t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, seed)
    });
    let bt = uniform(&mut rng, &[5, 4], -1.0, 1.0);
    check("matmul_nt", vec![a.clone(), bt], &|t, v| {
        let y = t.matmul_nt(v[0], v[1])?;
        project(t, y, seed)
    });
    let bias = uniform(&mut rng, &[4], -1.0, 1.0);
    check("add_bias", vec![a.clone(), bias.clone()], &|t, v| {
        let y = t.add_bias(v[0], v[1])?;
        project(t, y, seed)
    });
    let lb = uniform(&mut rng, &[5], -1.0, 1.0);
    check("linear", vec![a.clone(), b.clone(), lb], &|t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        project(t, y, seed)
    });
    let a2 = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    check("add", vec![a.clone(), a2], &|t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, seed)
    });
    check("scale", vec![a.clone()], &|t, v| {
        let y = t.scale(v[0], -1.7);
        project(t, y, seed)
    });
    check("relu", vec![away_from_zero(&mut rng, &[3, 4])], &|t, v| {
        let y = t.relu(v[0]);
        project(t, y, seed)
    });
    check("tanh", vec![uniform(&mut rng, &[3, 4], -2.0, 2.0)], &|t, v| {
        let y = t.tanh(v[0]);
        project(t, y, seed)
    });
    let gain = uniform(&mut rng, &[4], 0.5, 1.5);
    check("layer_norm", vec![uniform(&mut rng, &[3, 4], -2.0, 2.0), gain, bias], &|t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
        project(t, y, seed)
    });
    check("softmax_rows", vec![uniform(&mut rng, &[3, 5], -2.0, 2.0)], &|t, v| {
        let y = t.softmax_rows(v[0])?;
        project(t, y, seed)
    });
    let kernel = uniform(&mut rng, &[3, 4, 2], -1.0, 1.0);
    let cb = uniform(&mut rng, &[2], -1.0, 1.0);
    check("conv1d", vec![uniform(&mut rng, &[6, 4], -1.0, 1.0), kernel, cb], &|t, v| {
        let y = t.conv1d(v[0], v[1], v[2])?;
        project(t, y, seed)
    });
    check("col_slice", vec![a.clone()], &|t, v| {
        let y = t.col_slice(v[0], 1, 2)?;
        project(t, y, seed)
    });
    let c = uniform(&mut rng, &[3, 2], -1.0, 1.0);
    check("concat_cols", vec![a.clone(), c], &|t, v| {
        let y = t.concat_cols(&[v[0], v[1]])?;
        project(t, y, seed)
    });
    let r = uniform(&mut rng, &[2, 4], -1.0, 1.0);
    check("concat_rows", vec![a.clone(), r], &|t, v| {
        let y = t.concat_rows(&[v[0], v[1]])?;
        project(t, y, seed)
    });
    check("mean_rows", vec![a.clone()], &|t, v| {
        let y = t.mean_rows(v[0])?;
        project(t, y, seed)
    });
    // Targets sit at least 0.1 away from the predictions, far from the kink.
    let target = {
        let off = away_from_zero(&mut rng, &[3, 4]);
        let data = a.data().iter().zip(off.data()).map(|(x, o)| x + o).collect();
        Tensor::new([3, 4], data).unwrap()
    };
    check("l1_loss", vec![a.clone(), target], &|t, v| t.l1_loss(v[0], v[1]));
    check("sum", vec![a], &|t, v| Ok(t.sum(v[0])));
    out
}

/// The microconfig: width 8, two heads, three extractors, one smoother,
/// five mel bins.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        upstream_dim: 6,
        n_mel: 5,
        n_extractors: 3,
        n_smoothers: 1,
        ffn_kernel: 3,
        tgt_kernel: 3,
        postnet_kernel: 3,
        ..ModelConfig::default()
    }
}

pub struct ModelGradReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub coordinates: usize,
}

fn with_grads(model: &FragmentVc<f64>, src: &Tensor<f64>, tgts: &[&Tensor<f64>], gt: &Tensor<f64>) -> FragmentVc<f64> {
    let mut m = model.clone();
    let mut g = model.graph();
    let out = g.forward(src, tgts).unwrap();
    let loss = g.reconstruction_loss(&out, gt, true).unwrap();
    g.backward(loss).unwrap();
    let grads = g.into_grads();
    m.accumulate_grads(grads).unwrap();
    m
}

/// Inputs span `±INPUT_RANGE`. With unit-range inputs and only four source
/// frames, many ReLU units sit barely above zero and the attention maps are
/// nearly uniform, leaving gradients of 1e-10 to 1e-8 that central
/// differences at `H` resolve only to about 1e-11 absolute.
pub const INPUT_RANGE: f64 = 5.0;

/// Checks every parameter of a randomly initialised microconfig model
/// (T = 4 source frames, S = 6 target frames) against central differences.
///
/// The zero-initialised PostNet output layer is randomised so that its
/// gradient paths are exercised, and the ground truth sits 0.005–0.015 above
/// the prediction so the loss is small and far from L1 kinks. A
/// one-sided offset also stops sign sums from cancelling into gradients
/// that are exactly zero, where round-off alone would dominate.
pub fn check_micro_model(seed: u64) -> ModelGradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = FragmentVc::<f64>::new(micro_config(), seed).unwrap();
    let last = format!("postnet.{}.", model.config().postnet_layers - 1);
    for p in model.params_mut().iter_mut() {
        if p.name.starts_with(&last) {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    let src = uniform(&mut rng, &[4, 6], -INPUT_RANGE, INPUT_RANGE);
    let t1 = uniform(&mut rng, &[2, 5], -INPUT_RANGE, INPUT_RANGE);
    let t2 = uniform(&mut rng, &[4, 5], -INPUT_RANGE, INPUT_RANGE);
    let tgts = [&t1, &t2];
    let pred = model.infer(&src, &tgts).unwrap();
    let gt = {
        let data = pred
            .mel_post
            .data()
            .iter()
            .map(|&v| v + rng.random_range(0.005..0.015))
            .collect();
        Tensor::new(pred.mel_post.shape().to_vec(), data).unwrap()
    };

    let with_grads = with_grads(&model, &src, &tgts, &gt);
    let mut report = ModelGradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        coordinates: 0,
    };
    let n_params = model.params().len();
    let mut probe = model.clone();
    for pi in 0..n_params {
        let param = with_grads.params().iter().nth(pi).unwrap();
        let name = param.name.clone();
        let analytic: Vec<f64> = param
            .grad
            .as_ref()
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; param.value.len()]);
        for (j, &a) in analytic.iter().enumerate() {
            let orig = model.params().iter().nth(pi).unwrap().value.data()[j];
            let mut at = |v: f64| {
                probe.params_mut().iter_mut().nth(pi).unwrap().value.data_mut()[j] = v;
                let mut g = probe.graph();
                let out = g.forward(&src, &tgts).unwrap();
                let l = g.reconstruction_loss(&out, &gt, true).unwrap();
                g.tape.value(l).data()[0]
            };
            let numeric = (at(orig + H) - at(orig - H)) / (2.0 * H);
            at(orig);
            let err = relative_error(a, numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{j}] analytic {a:e} numeric {numeric:e}");
            }
            report.coordinates += 1;
        }
    }
    report
}
