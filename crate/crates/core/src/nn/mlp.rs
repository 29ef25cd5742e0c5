//! Dense softmax classifier: forward pass, KL loss and its gradients.

use super::matrix::Matrix;
use super::model::{Activation, ArchDescriptor, LayerSpan, ModelParams};
use super::scalar::{Dual, Real};
use crate::error::{Error, Result};

/// Output of one backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Backprop<S> {
    pub loss: S,
    pub grad_w: Vec<S>,
    /// Gradient w.r.t. the inputs, row-major `n x input_dim`.
    pub grad_x: Vec<S>,
    /// Gradient of the cross-entropy term `-Σ y·log p / n` w.r.t. the labels.
    /// The entropy term `Σ y·ln y` does not involve the network and is left out.
    pub grad_y: Vec<S>,
}

/// Directional derivative of `(∇_w L, ∇_X L, ∇_Y L)` along a weight-space
/// direction `v`: `(H_ww v, H_xw v, H_yw v)`. Equivalently the gradient of
/// `⟨v, ∇_w L⟩` w.r.t. weights, inputs and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrder {
    pub w: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub(crate) fn check_inputs(arch: &ArchDescriptor, x: &Matrix) -> Result<()> {
    if x.cols() != arch.input_dim {
        return Err(Error::Shape(format!(
            "input has {} features, architecture expects {}",
            x.cols(),
            arch.input_dim
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Shape("input has no rows".into()));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("network input"));
    }
    Ok(())
}

pub(crate) fn check_labels(arch: &ArchDescriptor, x: &Matrix, y: &Matrix) -> Result<()> {
    check_inputs(arch, x)?;
    if y.rows() != x.rows() || y.cols() != arch.num_classes {
        return Err(Error::Shape(format!(
            "labels are {}x{}, expected {}x{}",
            y.rows(),
            y.cols(),
            x.rows(),
            arch.num_classes
        )));
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("labels"));
    }
    Ok(())
}

#[inline]
fn is_zero<S: Real>(a: S, tangent_free: bool) -> bool {
    // only f64 activations (no tangent) can be skipped on an exact zero
    tangent_free && a.value() == 0.0
}

fn dense<S: Real>(input: &[S], n: usize, span: &LayerSpan, w: &[S], skip_zero: bool) -> Vec<S> {
    let (fi, fo) = (span.fan_in, span.fan_out);
    let weights = &w[span.offset..span.bias_offset()];
    let bias = &w[span.bias_offset()..span.end()];
    let mut out = Vec::with_capacity(n * fo);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    for (row, o) in input.chunks_exact(fi).zip(out.chunks_exact_mut(fo)) {
        for (i, &a) in row.iter().enumerate() {
            if is_zero(a, skip_zero) {
                continue;
            }
            let wr = &weights[i * fo..(i + 1) * fo];
            for (oj, &wj) in o.iter_mut().zip(wr) {
                *oj += a * wj;
            }
        }
    }
    out
}

fn activate<S: Real>(z: &mut [S], act: Activation) {
    match act {
        Activation::Relu => z.iter_mut().for_each(|v| *v = v.relu()),
        Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
    }
}

/// Per-layer inputs (`acts[0]` is the network input) and the final logits.
fn forward_pass<S: Real>(
    arch: &ArchDescriptor,
    layers: &[LayerSpan],
    w: &[S],
    x: Vec<S>,
    n: usize,
    skip_zero: bool,
) -> (Vec<Vec<S>>, Vec<S>) {
    let mut acts = Vec::with_capacity(layers.len());
    acts.push(x);
    for (l, span) in layers.iter().enumerate() {
        let mut z = dense(&acts[l], n, span, w, skip_zero);
        if l + 1 == layers.len() {
            return (acts, z);
        }
        activate(&mut z, arch.activation);
        acts.push(z);
    }
    unreachable!("an architecture always has an output layer")
}

/// Row-wise log-softmax with max subtraction.
fn log_softmax<S: Real>(logits: &mut [S], classes: usize) {
    for row in logits.chunks_exact_mut(classes) {
        let mx = row.iter().map(|z| z.value()).fold(f64::NEG_INFINITY, f64::max);
        let shift = S::constant(mx);
        let mut sum = S::constant(0.0);
        for z in row.iter_mut() {
            *z = *z - shift;
            sum += z.exp();
        }
        let lse = sum.ln();
        for z in row.iter_mut() {
            *z = *z - lse;
        }
    }
}

pub(crate) fn backprop<S: Real>(
    arch: &ArchDescriptor,
    w: &[S],
    x: Vec<S>,
    y: &[S],
    n: usize,
    want_input_grads: bool,
) -> Backprop<S> {
    let layers = arch.layers();
    let classes = arch.num_classes;
    let skip_zero = std::mem::size_of::<S>() == std::mem::size_of::<f64>();
    let (acts, mut logp) = forward_pass(arch, &layers, w, x, n, skip_zero);
    log_softmax(&mut logp, classes);

    let inv_n = S::constant(1.0 / n as f64);
    let zero = S::constant(0.0);
    let mut loss = zero;
    // dL/dz = (p * Σy - y) / n
    let mut delta = vec![zero; n * classes];
    let mut grad_y = if want_input_grads {
        vec![zero; n * classes]
    } else {
        Vec::new()
    };
    for s in 0..n {
        let lp = &logp[s * classes..(s + 1) * classes];
        let yr = &y[s * classes..(s + 1) * classes];
        let mut mass = zero;
        for c in 0..classes {
            mass += yr[c];
            let yc = yr[c];
            if yc.value() > 0.0 {
                loss += yc * (yc.ln() - lp[c]);
            } else if yc.value() < 0.0 {
                loss += -(yc * lp[c]);
            }
        }
        for c in 0..classes {
            delta[s * classes + c] = (lp[c].exp() * mass - yr[c]) * inv_n;
            if want_input_grads {
                grad_y[s * classes + c] = -lp[c] * inv_n;
            }
        }
    }
    loss = loss * inv_n;

    let mut grad_w = vec![zero; w.len()];
    let mut grad_x = Vec::new();
    for (l, span) in layers.iter().enumerate().rev() {
        let (fi, fo) = (span.fan_in, span.fan_out);
        let input = &acts[l];
        {
            let gb = &mut grad_w[span.bias_offset()..span.end()];
            for d in delta.chunks_exact(fo) {
                for (g, &v) in gb.iter_mut().zip(d) {
                    *g += v;
                }
            }
        }
        {
            let gw = &mut grad_w[span.offset..span.bias_offset()];
            for (row, d) in input.chunks_exact(fi).zip(delta.chunks_exact(fo)) {
                for (i, &a) in row.iter().enumerate() {
                    if is_zero(a, skip_zero) {
                        continue;
                    }
                    for (g, &v) in gw[i * fo..(i + 1) * fo].iter_mut().zip(d) {
                        *g += a * v;
                    }
                }
            }
        }
        if l == 0 && !want_input_grads {
            break;
        }
        let weights = &w[span.offset..span.bias_offset()];
        let mut upstream = vec![zero; n * fi];
        for (u, d) in upstream.chunks_exact_mut(fi).zip(delta.chunks_exact(fo)) {
            for (i, ui) in u.iter_mut().enumerate() {
                let wr = &weights[i * fo..(i + 1) * fo];
                let mut acc = zero;
                for (&wj, &dj) in wr.iter().zip(d) {
                    acc += wj * dj;
                }
                *ui = acc;
            }
        }
        if l == 0 {
            grad_x = upstream;
            break;
        }
        // back through the activation that produced `input`
        match arch.activation {
            Activation::Relu => {
                for (u, &a) in upstream.iter_mut().zip(input) {
                    *u = *u * a.relu_mask();
                }
            }
            Activation::Tanh => {
                let one = S::constant(1.0);
                for (u, &a) in upstream.iter_mut().zip(input) {
                    *u = *u * (one - a * a);
                }
            }
        }
        delta = upstream;
    }

    Backprop {
        loss,
        grad_w,
        grad_x,
        grad_y,
    }
}

/// Class probabilities, one row per input.
pub fn forward(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    let mut p = log_probs(params, x)?;
    p.as_mut_slice().iter_mut().for_each(|v| *v = v.exp());
    Ok(p)
}

/// Row-wise log-probabilities.
pub fn log_probs(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    let arch = params.arch();
    check_inputs(arch, x)?;
    let layers = arch.layers();
    let (_, mut logits) = forward_pass(
        arch,
        &layers,
        params.values(),
        x.as_slice().to_vec(),
        x.rows(),
        true,
    );
    log_softmax(&mut logits, arch.num_classes);
    Matrix::from_vec(x.rows(), arch.num_classes, logits)
}

/// Mean over rows of `KL(labels_i ‖ pred_i) = Σ_c z_c (ln z_c − ln y_c)`, with
/// `0 · ln 0 = 0`.
pub fn kl_loss(pred: &Matrix, labels: &Matrix) -> Result<f64> {
    if pred.rows() != labels.rows() || pred.cols() != labels.cols() {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs labels {}x{}",
            pred.rows(),
            pred.cols(),
            labels.rows(),
            labels.cols()
        )));
    }
    if pred.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if !pred.is_finite() {
        return Err(Error::NonFinite("predictions"));
    }
    if !labels.is_finite() {
        return Err(Error::NonFinite("labels"));
    }
    let total: f64 = pred
        .iter_rows()
        .zip(labels.iter_rows())
        .map(|(p, z)| {
            p.iter()
                .zip(z)
                .filter(|(_, &zc)| zc != 0.0)
                .map(|(&pc, &zc)| zc * (zc.ln() - pc.ln()))
                .sum::<f64>()
        })
        .sum();
    Ok(total / pred.rows() as f64)
}

/// `kl_loss(forward(params, x), y)` and its gradient w.r.t. the parameters.
pub fn loss_and_grad(params: &ModelParams, x: &Matrix, y: &Matrix) -> Result<(f64, Vec<f64>)> {
    let arch = params.arch();
    check_labels(arch, x, y)?;
    let bp = backprop(
        arch,
        params.values(),
        x.as_slice().to_vec(),
        y.as_slice(),
        x.rows(),
        false,
    );
    Ok((bp.loss, bp.grad_w))
}

/// `∇_w kl_loss(forward(params, x), y)`.
pub fn grad(params: &ModelParams, x: &Matrix, y: &Matrix) -> Result<Vec<f64>> {
    loss_and_grad(params, x, y).map(|(_, g)| g)
}

pub(crate) fn grad_raw(arch: &ArchDescriptor, w: &[f64], x: &Matrix, y: &Matrix) -> Vec<f64> {
    backprop(arch, w, x.as_slice().to_vec(), y.as_slice(), x.rows(), false).grad_w
}

/// Gradients of the loss w.r.t. weights, inputs and labels in one pass.
pub fn full_grad(params: &ModelParams, x: &Matrix, y: &Matrix) -> Result<(Vec<f64>, Matrix, Matrix)> {
    let arch = params.arch();
    check_labels(arch, x, y)?;
    let bp = backprop(
        arch,
        params.values(),
        x.as_slice().to_vec(),
        y.as_slice(),
        x.rows(),
        true,
    );
    Ok((
        bp.grad_w,
        Matrix::from_vec(x.rows(), x.cols(), bp.grad_x)?,
        Matrix::from_vec(y.rows(), y.cols(), bp.grad_y)?,
    ))
}

/// Forward-over-reverse product: pushes the weight-space direction `v` through
/// the backward pass.
pub(crate) fn second_order_raw(
    arch: &ArchDescriptor,
    w: &[f64],
    x: &Matrix,
    y: &Matrix,
    v: &[f64],
) -> SecondOrder {
    let wd: Vec<Dual> = w.iter().zip(v).map(|(&a, &b)| Dual::new(a, b)).collect();
    let xd: Vec<Dual> = x.as_slice().iter().map(|&a| Dual::new(a, 0.0)).collect();
    let yd: Vec<Dual> = y.as_slice().iter().map(|&a| Dual::new(a, 0.0)).collect();
    let bp = backprop(arch, &wd, xd, &yd, x.rows(), true);
    SecondOrder {
        w: bp.grad_w.iter().map(|d| d.du).collect(),
        x: bp.grad_x.iter().map(|d| d.du).collect(),
        y: bp.grad_y.iter().map(|d| d.du).collect(),
    }
}

pub fn second_order(params: &ModelParams, x: &Matrix, y: &Matrix, v: &[f64]) -> Result<SecondOrder> {
    check_labels(params.arch(), x, y)?;
    if v.len() != params.len() {
        return Err(Error::Shape("direction length differs from parameter count".into()));
    }
    Ok(second_order_raw(params.arch(), params.values(), x, y, v))
}

/// Mean cross-entropy against hard class labels.
pub fn cross_entropy(params: &ModelParams, x: &Matrix, labels: &[usize]) -> Result<f64> {
    let lp = log_probs(params, x)?;
    check_classes(&lp, labels)?;
    let total: f64 = lp.iter_rows().zip(labels).map(|(r, &c)| -r[c]).sum();
    Ok(total / labels.len() as f64)
}

/// Fraction of rows whose arg-max class equals the label. Ties resolve to the
/// lowest class index.
pub fn accuracy(params: &ModelParams, x: &Matrix, labels: &[usize]) -> Result<f64> {
    let lp = log_probs(params, x)?;
    check_classes(&lp, labels)?;
    let hits = lp
        .iter_rows()
        .zip(labels)
        .filter(|(r, &c)| argmax(r) == c)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Cross-entropy and accuracy from a single forward pass.
pub fn evaluate(params: &ModelParams, x: &Matrix, labels: &[usize]) -> Result<(f64, f64)> {
    let lp = log_probs(params, x)?;
    check_classes(&lp, labels)?;
    let mut ce = 0.0;
    let mut hits = 0usize;
    for (r, &c) in lp.iter_rows().zip(labels) {
        ce -= r[c];
        hits += usize::from(argmax(r) == c);
    }
    let n = labels.len() as f64;
    Ok((ce / n, hits as f64 / n))
}

fn check_classes(lp: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != lp.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} inputs",
            labels.len(),
            lp.rows()
        )));
    }
    if labels.iter().any(|&c| c >= lp.cols()) {
        return Err(Error::Shape("class label out of range".into()));
    }
    Ok(())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::matrix::norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straightforward per-sample forward pass, written independently of the
    /// batched kernel.
    fn naive_forward(params: &ModelParams, x: &[f64]) -> Vec<f64> {
        let arch = params.arch();
        let w = params.values();
        let mut a = x.to_vec();
        let layers = arch.layers();
        for (l, s) in layers.iter().enumerate() {
            let mut z = vec![0.0; s.fan_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut acc = w[s.bias_offset() + o];
                for (i, ai) in a.iter().enumerate() {
                    acc += ai * w[s.offset + i * s.fan_out + o];
                }
                *zo = acc;
            }
            if l + 1 < layers.len() {
                for zo in z.iter_mut() {
                    *zo = match arch.activation {
                        Activation::Relu => zo.max(0.0),
                        Activation::Tanh => zo.tanh(),
                    };
                }
            }
            a = z;
        }
        let e: Vec<f64> = a.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    fn random_params(widths: &[usize], act: Activation, seed: u64) -> ModelParams {
        let mut arch = ArchDescriptor::mlp(widths).unwrap();
        arch.activation = act;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::init(arch, &mut rng);
        // non-zero biases so they are exercised
        for v in p.values_mut() {
            *v += 0.1 * (rng.gen::<f64>() - 0.5);
        }
        p
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
            .unwrap()
    }

    fn random_simplex(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row: Vec<f64> = (0..cols).map(|_| rng.gen::<f64>() + 0.05).collect();
            let s: f64 = row.iter().sum();
            for (c, v) in row.iter().enumerate() {
                m.set(r, c, v / s);
            }
        }
        m
    }

    #[test]
    fn zero_network_is_uniform() {
        let arch = ArchDescriptor::mlp(&[3, 4, 5]).unwrap();
        let p = ModelParams::zeros(arch);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.0, 0.0, 9.0]]).unwrap();
        let out = forward(&p, &x).unwrap();
        assert!(out.as_slice().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn identity_logits_at_origin_are_even() {
        let arch = ArchDescriptor::mlp(&[2, 2]).unwrap();
        let p = ModelParams::new(arch, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let out = forward(&p, &Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(out.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn forward_matches_naive_pass() {
        for (seed, act) in [(1, Activation::Relu), (2, Activation::Tanh)] {
            let p = random_params(&[4, 6, 5, 3], act, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
            let x = random_matrix(5, 4, &mut rng);
            let out = forward(&p, &x).unwrap();
            for (i, row) in out.iter_rows().enumerate() {
                let expect = naive_forward(&p, x.row(i));
                for (a, b) in row.iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-12);
                }
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = ModelParams::zeros(ArchDescriptor::mlp(&[3, 2]).unwrap());
        let err = forward(&p, &Matrix::zeros(2, 4)).unwrap_err();
        assert!(err.to_string().contains("expects 3"));
    }

    #[test]
    fn kl_closed_forms() {
        let p = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let z = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!((kl_loss(&p, &z).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(kl_loss(&z, &z).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_simplex(4, 3, &mut rng);
        assert_eq!(kl_loss(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn kl_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_simplex(4, 3, &mut rng);
        let z = random_simplex(4, 3, &mut rng);
        let mut naive = 0.0;
        for r in 0..4 {
            for c in 0..3 {
                naive += z.get(r, c) * (z.get(r, c) / p.get(r, c)).ln();
            }
        }
        naive /= 4.0;
        assert!((kl_loss(&p, &z).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_non_finite() {
        let p = Matrix::from_rows(&[vec![f64::NAN, 0.5]]).unwrap();
        let z = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!(matches!(kl_loss(&p, &z), Err(Error::NonFinite(_))));
    }

    #[test]
    fn grad_vanishes_when_labels_match_predictions() {
        let p = random_params(&[3, 5, 4], Activation::Tanh, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(6, 3, &mut rng);
        let y = forward(&p, &x).unwrap();
        assert!(norm(&grad(&p, &x, &y).unwrap()) <= 1e-9);
    }

    #[test]
    fn grad_is_deterministic() {
        let p = random_params(&[3, 5, 4], Activation::Relu, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_matrix(6, 3, &mut rng);
        let y = random_simplex(6, 4, &mut rng);
        let a = grad(&p, &x, &y).unwrap();
        let b = grad(&p, &x, &y.clone()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grad_matches_central_differences() {
        for seed in 0..10u64 {
            let act = if seed % 2 == 0 { Activation::Tanh } else { Activation::Relu };
            let p = random_params(&[3, 7, 4], act, 100 + seed);
            assert!(p.len() <= 200);
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let x = random_matrix(5, 3, &mut rng);
            let y = random_simplex(5, 4, &mut rng);
            let g = grad(&p, &x, &y).unwrap();
            let loss = |q: &ModelParams| kl_loss(&forward(q, &x).unwrap(), &y).unwrap();
            let h = 1e-5;
            let scale = norm(&g).max(1e-3);
            for (i, gi) in g.iter().enumerate() {
                let mut plus = p.clone();
                plus.values_mut()[i] += h;
                let mut minus = p.clone();
                minus.values_mut()[i] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((fd - gi).abs() / scale < 1e-6, "seed {seed} coord {i}: {fd} vs {gi}");
            }
        }
    }

    #[test]
    fn second_order_matches_differenced_gradients() {
        let p = random_params(&[3, 6, 4], Activation::Tanh, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_matrix(4, 3, &mut rng);
        let y = random_simplex(4, 4, &mut rng);
        let v: Vec<f64> = (0..p.len()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let so = second_order(&p, &x, &y, &v).unwrap();
        let h = 1e-5;
        let shift = |sign: f64| {
            let mut q = p.clone();
            for (w, d) in q.values_mut().iter_mut().zip(&v) {
                *w += sign * h * d;
            }
            full_grad(&q, &x, &y).unwrap()
        };
        let (gw_p, gx_p, gy_p) = shift(1.0);
        let (gw_m, gx_m, gy_m) = shift(-1.0);
        let check = |analytic: &[f64], plus: &[f64], minus: &[f64]| {
            let scale = norm(analytic).max(1e-3);
            for ((a, p), m) in analytic.iter().zip(plus).zip(minus) {
                assert!((a - (p - m) / (2.0 * h)).abs() / scale < 1e-6);
            }
        };
        check(&so.w, &gw_p, &gw_m);
        check(&so.x, gx_p.as_slice(), gx_m.as_slice());
        check(&so.y, gy_p.as_slice(), gy_m.as_slice());
    }

    #[test]
    fn evaluate_agrees_with_parts() {
        let p = random_params(&[2, 5, 3], Activation::Relu, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_matrix(10, 2, &mut rng);
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let (ce, acc) = evaluate(&p, &x, &labels).unwrap();
        assert_eq!(ce, cross_entropy(&p, &x, &labels).unwrap());
        assert_eq!(acc, accuracy(&p, &x, &labels).unwrap());
        let onehot = Matrix::one_hot(&labels, 3);
        let kl = kl_loss(&forward(&p, &x).unwrap(), &onehot).unwrap();
        assert!((kl - ce).abs() < 1e-12);
    }
}
