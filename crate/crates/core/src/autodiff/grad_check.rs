//! Finite-difference verification of tape gradients.

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_entry: (usize, usize),
    pub entries_checked: usize,
}

/// Compare the tape gradient of `f` at `point` against central differences.
///
/// `f` must build a scalar loss from the probe tensor; it runs once on a
/// recording tape (probe registered as a leaf) and twice per entry on
/// non-recording tapes (probe passed as a constant), so it must be a pure
/// function of the probe value. Relative error uses a unit floor:
/// |ad - fd| / max(1, |ad|, |fd|). Run this at f64; `h` defaults well at 1e-5.
pub fn gradient_check<S: Scalar>(
    f: &mut dyn FnMut(&mut Tape<S>, &Tensor<S>) -> Result<Tensor<S>>,
    point: &Mat<S>,
    h: f64,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let leaf = tape.leaf(point.clone());
    let loss = f(&mut tape, &leaf)?;
    if loss.shape() != (1, 1) {
        return Err(Error::Shape {
            op: "gradient_check",
            detail: format!("loss must be scalar, got {:?}", loss.shape()),
        });
    }
    let grads = tape.backward(&loss)?;
    let analytic = grads.wrt(&leaf);

    let mut eval = |probe: Mat<S>| -> Result<f64> {
        let mut t = Tape::new();
        let out = f(&mut t, &Tensor::constant(probe))?;
        let v = out.scalar().to64();
        if !v.is_finite() {
            return Err(Error::numerical("gradient_check", "non-finite loss at probe point"));
        }
        Ok(v)
    };

    let hs = S::of(h);
    let mut max_rel_err = 0.0f64;
    let mut worst_entry = (0, 0);
    for i in 0..point.rows() {
        for j in 0..point.cols() {
            let mut plus = point.clone();
            plus.set(i, j, plus.at(i, j) + hs);
            let mut minus = point.clone();
            minus.set(i, j, minus.at(i, j) - hs);
            let fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
            let ad = analytic.at(i, j).to64();
            let rel = (ad - fd).abs() / 1.0f64.max(ad.abs()).max(fd.abs());
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_entry = (i, j);
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst_entry,
        entries_checked: point.rows() * point.cols(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;
    use rand::Rng;

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let mut rng = rng_from(seed);
        Mat::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn linear_map_is_exact_to_rounding() {
        let a = rand_mat(4, 3, 1);
        let report = gradient_check(
            &mut |tape, w| {
                let at = Tensor::constant(a.clone());
                let y = tape.matmul(&at, w)?;
                tape.sum_all(&y)
            },
            &rand_mat(3, 2, 2),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-9, "{report:?}");
        assert_eq!(report.entries_checked, 6);
    }

    #[test]
    fn relu_away_from_kink() {
        // Entries are bounded away from zero so the probe never crosses it.
        let mut rng = rng_from(5);
        let point = Mat::from_fn(3, 3, |_, _| {
            let v = rng.random::<f64>() + 0.5;
            if rng.random::<f64>() < 0.5 {
                v
            } else {
                -v
            }
        });
        let report = gradient_check(
            &mut |tape, x| {
                let y = tape.relu(x)?;
                tape.sum_all(&y)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn softmax_entropy_gradient_checks() {
        let report = gradient_check(
            &mut |tape, alpha| tape.softmax_entropy_row(alpha),
            &rand_mat(1, 9, 8),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-7, "{report:?}");
    }

    #[test]
    fn composite_stack_checks() {
        // leaky_relu(elu(X W)) summed: several nonlinearities composed.
        let x = rand_mat(5, 4, 21);
        let report = gradient_check(
            &mut |tape, w| {
                let xt = Tensor::constant(x.clone());
                let y = tape.matmul(&xt, w)?;
                let y = tape.elu(&y)?;
                let y = tape.leaky_relu(&y, 0.2)?;
                tape.sum_all(&y)
            },
            &rand_mat(4, 3, 22),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn cross_entropy_checks() {
        let labels = vec![0i64, 2, 1, 2];
        let mask = vec![true, false, true, true];
        let report = gradient_check(
            &mut |tape, logits| tape.masked_cross_entropy(logits, &labels, &mask),
            &rand_mat(4, 3, 30),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-7, "{report:?}");
    }

    #[test]
    fn sparse_attention_checks_each_input() {
        use crate::sparse::Csr;
        use std::rc::Rc;
        let pattern = Rc::new(Csr::from_triplets(
            4,
            4,
            vec![
                (0, 0, 1.0),
                (0, 1, 1.0),
                (1, 1, 1.0),
                (1, 2, 1.0),
                (1, 3, 1.0),
                (2, 2, 1.0),
                (3, 0, 1.0),
                (3, 3, 1.0),
            ],
        ));
        let s_tgt = rand_mat(4, 1, 40);
        let s_src = rand_mat(4, 1, 41);
        let v = rand_mat(4, 3, 42);
        // With respect to the target scores.
        let report = gradient_check(
            &mut |tape, st| {
                let src = Tensor::constant(s_src.clone());
                let vt = Tensor::constant(v.clone());
                let y = tape.sparse_attention(&pattern, st, &src, &vt, 0.2)?;
                tape.sum_all(&y)
            },
            &s_tgt,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "tgt {report:?}");
        // With respect to the source scores.
        let report = gradient_check(
            &mut |tape, ss| {
                let tgt = Tensor::constant(s_tgt.clone());
                let vt = Tensor::constant(v.clone());
                let y = tape.sparse_attention(&pattern, &tgt, ss, &vt, 0.2)?;
                tape.sum_all(&y)
            },
            &s_src,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "src {report:?}");
        // With respect to the values.
        let report = gradient_check(
            &mut |tape, vv| {
                let tgt = Tensor::constant(s_tgt.clone());
                let src = Tensor::constant(s_src.clone());
                let y = tape.sparse_attention(&pattern, &tgt, &src, vv, 0.2)?;
                tape.sum_all(&y)
            },
            &v,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "v {report:?}");
    }

    #[test]
    fn mix_checks_weights_and_parts() {
        let parts: Vec<Mat<f64>> = (0..3).map(|k| rand_mat(3, 2, 50 + k)).collect();
        let report = gradient_check(
            &mut |tape, w| {
                let ts: Vec<Tensor<f64>> =
                    parts.iter().map(|p| Tensor::constant(p.clone())).collect();
                let refs: Vec<&Tensor<f64>> = ts.iter().collect();
                let y = tape.mix(w, &refs)?;
                tape.sum_all(&y)
            },
            &rand_mat(1, 3, 53),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "weights {report:?}");

        let w = rand_mat(1, 3, 54);
        let report = gradient_check(
            &mut |tape, p0| {
                let wt = Tensor::constant(w.clone());
                let t1 = Tensor::constant(parts[1].clone());
                let t2 = Tensor::constant(parts[2].clone());
                let y = tape.mix(&wt, &[p0, &t1, &t2])?;
                tape.sum_all(&y)
            },
            &parts[0],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "part {report:?}");
    }
}
