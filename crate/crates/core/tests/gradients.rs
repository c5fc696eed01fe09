//! Finite-difference checks of the tape against the model and its ops.

use imphead::autodiff::{grad_check, sample_coords, CustomOp, Graph, Tensor, Var};
use imphead::biomech::JointLimits;
use imphead::model::{loss, ForwardCtx, Imp2Head, ModelConfig};
use imphead::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn matmul_gradients() {
    let mut r = rng(0);
    let a = Tensor::randn(&[2, 3], 1.0, &mut r);
    let b = Tensor::randn(&[3, 2], 1.0, &mut r);
    let report = grad_check(
        |g, v| {
            let c = g.matmul(v[0], v[1])?;
            let c = g.square(c);
            Ok(g.sum(c))
        },
        &[a, b],
        1e-6,
        1e-6,
        None,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn batched_matmul_and_transpose_gradients() {
    let mut r = rng(1);
    let a = Tensor::randn(&[2, 3, 4], 1.0, &mut r);
    let b = Tensor::randn(&[2, 3, 4], 1.0, &mut r);
    let report = grad_check(
        |g, v| {
            let bt = g.transpose(v[1])?;
            let c = g.matmul(v[0], bt)?;
            let c = g.exp(c);
            Ok(g.mean(c))
        },
        &[a, b],
        1e-6,
        1e-6,
        None,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn layer_norm_then_sum() {
    let mut r = rng(2);
    let x = Tensor::randn(&[3, 5], 1.0, &mut r);
    let w = Tensor::randn(&[5], 1.0, &mut r);
    let report = grad_check(
        |g, v| {
            let y = g.layer_norm(v[0], 1e-9)?;
            // A plain sum of a normalized row is constant, so weight it.
            let y = g.mul(y, v[1])?;
            Ok(g.sum(y))
        },
        &[x, w],
        1e-6,
        1e-5,
        None,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn elementwise_suite() {
    let mut r = rng(3);
    let x = Tensor::randn(&[2, 3, 4], 1.0, &mut r);
    let bias = Tensor::randn(&[3, 4], 1.0, &mut r);
    let report = grad_check(
        |g, v| {
            let a = g.add(v[0], v[1])?;
            let b = g.mul(a, v[1])?;
            let c = g.gelu(b);
            let d = g.softmax(c)?;
            let e = g.sub(d, v[1])?;
            let f = g.square(e);
            let h = g.shift(f, 1.0);
            let s = g.sqrt(h);
            let sl = g.slice(s, 1, 1, 2)?;
            let cat = g.concat(&[sl, s], 1)?;
            let rs = g.reshape(cat, &[2, 20])?;
            let relu = g.max_with_zero(rs);
            Ok(g.mean(relu))
        },
        &[x, bias],
        1e-6,
        // Some coordinates here have gradients near 1e-6, where central
        // differences only carry ~5 significant digits.
        1e-4,
        None,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn attention_with_mask_gradients() {
    let mut r = rng(4);
    let q = Tensor::randn(&[2, 3, 4], 1.0, &mut r);
    let k = Tensor::randn(&[2, 5, 4], 1.0, &mut r);
    let v = Tensor::randn(&[2, 5, 2], 1.0, &mut r);
    let mask = Tensor::new(
        vec![3, 5],
        (0..15).map(|i| if i % 4 == 3 { -1e9 } else { 0.0 }).collect(),
    )
    .unwrap();
    let report = grad_check(
        move |g, p| {
            let m = g.constant(mask.clone());
            let o = g.scaled_dot_product_attention(p[0], p[1], p[2], Some(m))?;
            let o = g.square(o);
            Ok(g.sum(o))
        },
        &[q, k, v],
        1e-6,
        1e-6,
        None,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn embedding_gradients() {
    let mut r = rng(5);
    let table = Tensor::randn(&[4, 3], 1.0, &mut r);
    let report = grad_check(
        |g, v| {
            let e = g.embedding_lookup(v[0], &[1, 3, 1])?;
            let e = g.square(e);
            Ok(g.sum(e))
        },
        &[table],
        1e-6,
        1e-8,
        None,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

/// Multiplication whose backward pretends it was addition.
struct WrongMul;

impl CustomOp for WrongMul {
    fn name(&self) -> &'static str {
        "wrong_mul"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(inputs[1].data())
            .map(|(a, b)| a * b)
            .collect();
        Tensor::new(inputs[0].shape().to_vec(), data)
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_output: &[f64]) -> Vec<Vec<f64>> {
        vec![grad_output.to_vec(), grad_output.to_vec()]
    }
}

#[test]
fn injected_backward_fault_is_detected() {
    let mut r = rng(6);
    let a = Tensor::randn(&[4], 1.0, &mut r);
    let b = Tensor::randn(&[4], 1.0, &mut r);
    let report = grad_check(
        |g, v| {
            let c = g.custom(Box::new(WrongMul), &[v[0], v[1]])?;
            Ok(g.sum(c))
        },
        &[a, b],
        1e-6,
        1e-4,
        None,
    )
    .unwrap();
    assert!(!report.passed);
    assert!(report.max_rel_error() > 1e-2);
}

#[test]
fn backward_is_linear() {
    // grad(2f + 3g) = 2 grad f + 3 grad g
    let mut r = rng(7);
    let x = Tensor::randn(&[5], 1.0, &mut r);
    let grad_of = |build: &dyn Fn(&mut Graph, Var) -> Var| {
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let out = build(&mut g, v);
        g.backward(out).unwrap();
        g.grad(v).unwrap().to_vec()
    };
    let f = |g: &mut Graph, v: Var| {
        let e = g.exp(v);
        g.sum(e)
    };
    let h = |g: &mut Graph, v: Var| {
        let s = g.square(v);
        g.mean(s)
    };
    let both = |g: &mut Graph, v: Var| {
        let a = f(g, v);
        let a = g.scale(a, 2.0);
        let b = h(g, v);
        let b = g.scale(b, 3.0);
        g.add(a, b).unwrap()
    };
    let (gf, gh, gb) = (grad_of(&f), grad_of(&h), grad_of(&both));
    for i in 0..5 {
        assert!((gb[i] - (2.0 * gf[i] + 3.0 * gh[i])).abs() < 1e-12);
    }
}

fn tiny_model() -> Imp2Head {
    let cfg = ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        ffn_multiplier: 2,
        dropout: 0.0,
        l_out: 2,
        ..ModelConfig::default()
    };
    Imp2Head::new(cfg, 11).unwrap()
}

#[test]
fn model_loss_gradient_on_two_samples() {
    let model = tiny_model();
    let mut r = rng(12);
    let l_in = model.config().l_in();
    let x = Tensor::randn(&[2, l_in, 8], 1.0, &mut r);
    // Targets well outside the limits so the penalty term is active.
    let y = Tensor::randn(&[2, 2, 9], 1.5, &mut r);
    let params: Vec<Tensor> = model.params().entries().iter().map(|(_, t)| t.clone()).collect();
    let coords = sample_coords(&params, 20, &mut r);
    let report = grad_check(
        |g, vars| {
            let bound = imphead::autodiff::Bound::from_vars(vars.to_vec());
            let xv = g.constant(x.clone());
            let yv = g.constant(y.clone());
            let pred = model.forward(g, &bound, &mut ForwardCtx::default(), xv)?;
            Ok(loss(g, pred, yv, &JointLimits::default(), 0.1)?.total)
        },
        &params,
        1e-6,
        1e-4,
        Some(&coords),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}
