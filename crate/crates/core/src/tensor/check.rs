//! Gradient verification against central finite differences.

use super::{Tape, Tensor};

/// Relative error floor: components smaller than this are compared on an
/// absolute scale so finite-difference noise near zero does not register as a
/// spurious relative blow-up.
const REL_FLOOR: f64 = 1e-3;

/// Compares the reverse-mode gradient of `f` against central finite
/// differences with step `h` and returns the maximum relative error over all
/// parameter components.
///
/// `f` must build a scalar loss from leaves created in the given order and be
/// a deterministic function of them (draw any randomness before calling).
pub fn grad_check<F>(f: F, shapes: &[Vec<usize>], params: &[Vec<f64>], h: f64) -> f64
where
    F: Fn(&mut Tape, &[Tensor]) -> Tensor,
{
    assert_eq!(shapes.len(), params.len());

    let eval = |ps: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<Tensor> = shapes
            .iter()
            .zip(ps)
            .map(|(s, p)| tape.tensor(p.clone(), s).expect("leaf shape"))
            .collect();
        let loss = f(&mut tape, &leaves);
        tape.scalar_value(loss)
    };

    // Reverse-mode gradients.
    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = shapes
        .iter()
        .zip(params)
        .map(|(s, p)| tape.tensor(p.clone(), s).expect("leaf shape"))
        .collect();
    let loss = f(&mut tape, &leaves);
    tape.backward(loss).expect("scalar loss");
    let autodiff: Vec<Vec<f64>> = leaves.iter().map(|&l| tape.grad(l).to_vec()).collect();

    let mut max_rel: f64 = 0.0;
    let mut work = params.to_vec();
    for pi in 0..params.len() {
        for j in 0..params[pi].len() {
            let orig = work[pi][j];
            work[pi][j] = orig + h;
            let fp = eval(&work);
            work[pi][j] = orig - h;
            let fm = eval(&work);
            work[pi][j] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let ad = autodiff[pi][j];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(REL_FLOOR);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}
