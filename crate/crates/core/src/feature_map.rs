use crate::config::FeatureMapKind;
use crate::tensor::Tensor;

/// Applies the map to every row of `t`.
pub fn apply(kind: FeatureMapKind, t: &Tensor) -> Tensor {
    match kind {
        FeatureMapKind::Identity => t.clone(),
        FeatureMapKind::Relu => t.map(|x| x.max(0.0)),
        FeatureMapKind::EluPlusOne => t.map(|x| if x > 0.0 { x + 1.0 } else { x.exp() }),
        FeatureMapKind::Cosine => {
            let mut out = t.clone();
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|x| *x /= norm);
                }
            }
            out
        }
    }
}

/// Pulls the cotangent `grad_out` of `apply(kind, input)` back to `input`.
pub fn backward(kind: FeatureMapKind, input: &Tensor, grad_out: &Tensor) -> Tensor {
    match kind {
        FeatureMapKind::Identity => grad_out.clone(),
        FeatureMapKind::Relu => zip_map(input, grad_out, |x, g| if x > 0.0 { g } else { 0.0 }),
        FeatureMapKind::EluPlusOne => {
            zip_map(
                input,
                grad_out,
                |x, g| if x > 0.0 { g } else { g * x.exp() },
            )
        }
        FeatureMapKind::Cosine => {
            // y = x/|x|  =>  dx = (g - y (y·g)) / |x|
            let mut out = Tensor::zeros(input.rows(), input.cols());
            for i in 0..input.rows() {
                let x = input.row(i);
                let g = grad_out.row(i);
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    continue;
                }
                let yg: f64 = x.iter().zip(g).map(|(a, b)| a / norm * b).sum();
                for (j, dst) in out.row_mut(i).iter_mut().enumerate() {
                    *dst = (g[j] - x[j] / norm * yg) / norm;
                }
            }
            out
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &g)| f(x, g))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::dot;

    #[test]
    fn cosine_zero_row_stays_zero() {
        let t = Tensor::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let c = apply(FeatureMapKind::Cosine, &t);
        assert_eq!(c.row(0), &[0.0, 0.0]);
        assert_eq!(c.row(1), &[0.6, 0.8]);
    }

    #[test]
    fn cosine_inner_products_bounded() {
        let (q, k, _) = crate::rng::generate_inputs(4, 16, 16, 5, 1, 3.0).unwrap();
        let q = apply(FeatureMapKind::Cosine, &q);
        let k = apply(FeatureMapKind::Cosine, &k);
        for a in q.iter_rows() {
            for b in k.iter_rows() {
                assert!(dot(a, b).abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn elu_plus_one_positive() {
        let t = Tensor::vector(vec![-3.0, 0.0, 2.0]);
        let y = apply(FeatureMapKind::EluPlusOne, &t);
        assert_eq!(y.data(), &[(-3.0f64).exp(), 1.0, 3.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (x, g, _) = crate::rng::generate_inputs(9, 3, 3, 4, 1, 1.0).unwrap();
        let h = 1e-6;
        for kind in FeatureMapKind::ALL {
            let analytic = backward(kind, &x, &g);
            for idx in 0..x.len() {
                let mut plus = x.clone();
                plus.data_mut()[idx] += h;
                let mut minus = x.clone();
                minus.data_mut()[idx] -= h;
                let fp = dot(apply(kind, &plus).data(), g.data());
                let fm = dot(apply(kind, &minus).data(), g.data());
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - analytic.data()[idx]).abs() < 1e-7,
                    "{kind}: {fd} vs {}",
                    analytic.data()[idx]
                );
            }
        }
    }
}
