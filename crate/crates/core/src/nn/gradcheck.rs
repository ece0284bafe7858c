//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Largest relative error between `grad` and central differences of
/// `f` at `x` with step `h`.
pub fn grad_check(f: impl Fn(&[f64]) -> f64, grad: &[f64], x: &[f64], h: f64) -> f64 {
    assert_eq!(grad.len(), x.len(), "gradient length");
    let mut xp = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        let num = (fp - fm) / (2.0 * h);
        worst = worst.max(relative_error(grad[i], num));
    }
    worst
}

/// Checks a tape-built scalar function of several tensor inputs. `build`
/// receives one variable per input and returns the scalar output.
pub fn check_graph(build: impl Fn(&mut Graph, &[Var]) -> Var, inputs: &[Tensor], h: f64) -> f64 {
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    let unflatten = |flat: &[f64]| -> Vec<Tensor> {
        let mut off = 0;
        shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let t = Tensor::from_vec(s, flat[off..off + n].to_vec()).expect("shape");
                off += n;
                t
            })
            .collect()
    };
    let eval = |flat: &[f64], want_grad: bool| -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = unflatten(flat).into_iter().map(|t| g.variable(t)).collect();
        let out = build(&mut g, &vars);
        let value = g.scalar(out);
        if !want_grad {
            return (value, Vec::new());
        }
        g.backward(out);
        let grad = vars
            .iter()
            .flat_map(|&v| match g.grad(v) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; g.value(v).numel()],
            })
            .collect();
        (value, grad)
    };
    let x: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let (_, grad) = eval(&x, true);
    grad_check(|p| eval(p, false).0, &grad, &x, h)
}
