//! Small dense tensor engine with tape-based reverse-mode differentiation.
//!
//! Only the operators the segmentation models need are provided. Activations
//! use the `[batch, channels, height, width]` layout and "convolution" means
//! cross-correlation (no kernel flip).

mod graph;
mod kernels;
mod tensor;

pub use graph::{Graph, Padding, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[1, 2, 3, 3], |i| i as f64 - 4.0));
        let w = g.constant(t(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.conv2d(x, w, Some(b), 1, Padding::Valid).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn conv2d_sum_kernel() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(t(&[1, 1, 2, 2], &[1.0; 4]));
        let y = g.conv2d(x, w, None, 1, Padding::Valid).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).item(), 10.0);
    }

    #[test]
    fn conv2d_output_dims() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 7, 6]));
        let w = g.constant(Tensor::zeros(&[3, 1, 3, 3]));
        let same = g.conv2d(x, w, None, 1, Padding::Same).unwrap();
        assert_eq!(g.value(same).shape(), &[1, 3, 7, 6]);
        let strided = g.conv2d(x, w, None, 2, Padding::Explicit(1)).unwrap();
        // floor((7 + 2 - 3) / 2) + 1 = 4, floor((6 + 2 - 3) / 2) + 1 = 3
        assert_eq!(g.value(strided).shape(), &[1, 3, 4, 3]);
        let same2 = g.conv2d(x, w, None, 2, Padding::Same).unwrap();
        assert_eq!(g.value(same2).shape(), &[1, 3, 4, 3]);
    }

    #[test]
    fn same_padding_extra_goes_high() {
        // even kernel: total pad 1, all of it on the bottom/right
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(t(&[1, 1, 2, 2], &[1.0; 4]));
        let y = g.conv2d(x, w, None, 1, Padding::Same).unwrap();
        assert_eq!(g.value(y).data(), &[10.0, 6.0, 7.0, 4.0]);
    }

    #[test]
    fn conv2d_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
        let w = g.constant(Tensor::zeros(&[1, 3, 1, 1]));
        assert!(g.conv2d(x, w, None, 1, Padding::Valid).is_err());
        let big = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
        assert!(g.conv2d(x, big, None, 1, Padding::Valid).is_err());
    }

    #[test]
    fn conv1x1_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2, 1, 1], &[1.0, 2.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 1.0, 1.0, -1.0]));
        let y = g.conv1x1(x, w, None).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -1.0]);

        let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zero = g.constant(Tensor::zeros(&[2]));
        let id = g.conv1x1(x, eye, Some(zero)).unwrap();
        assert_eq!(g.value(id), g.value(x));

        let bad = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.conv1x1(x, bad, None).is_err());
    }

    #[test]
    fn conv_transpose_single_tap() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 1, 1], &[3.0]));
        let w = g.constant(t(&[1, 1, 2, 2], &[1.0; 4]));
        let y = g.conv_transpose2d(x, w, None, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[3.0; 4]);
    }

    #[test]
    fn conv_transpose_output_dims() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3, 4, 5]));
        let w = g.constant(Tensor::zeros(&[3, 6, 2, 3]));
        let y = g.conv_transpose2d(x, w, None, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 6, 8, 11]);
        let bad = g.constant(Tensor::zeros(&[2, 6, 2, 2]));
        assert!(g.conv_transpose2d(x, bad, None, 2).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);

        let c = g.constant(Tensor::full(&[1, 2, 4, 6], 1.5));
        let y = g.maxpool2d(c, 2, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 2, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn maxpool_tie_routes_to_first() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full(&[1, 1, 2, 2], 7.0));
        let y = g.maxpool2d(x, 2, 2).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 1, 3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(Tensor::zeros(&[1, 1, 1, 3]));
        let s = g.add(x, z).unwrap();
        assert_eq!(g.value(s), g.value(x));
        let cat = g.concat_channels(x, z).unwrap();
        assert_eq!(g.value(cat).shape(), &[1, 2, 1, 3]);
        assert_eq!(g.value(cat).data(), &[-1.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        let up = g.upsample_nearest(x, 1).unwrap();
        assert_eq!(g.value(up), g.value(x));
        let up2 = g.upsample_nearest(x, 2).unwrap();
        assert_eq!(g.value(up2).shape(), &[1, 1, 2, 6]);
        assert_eq!(&g.value(up2).data()[..6], &[-1.0, -1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[1, 5, 2, 2]));
        let loss = g.softmax_ce_loss(logits, &[0, 1, 2, 4], None).unwrap();
        assert!((g.value(loss).item() - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_confident_logit() {
        let mut g = Graph::new();
        let mut prev = f64::INFINITY;
        for scale in [1.0, 5.0, 20.0, 50.0] {
            let logits = g.constant(t(&[1, 3, 1, 1], &[0.0, scale, 0.0]));
            let loss = g.softmax_ce_loss(logits, &[1], None).unwrap();
            let v = g.value(loss).item();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn cross_entropy_two_class_closed_form() {
        let data = [0.3, -1.2, 2.0, 0.1, -0.4, 0.9, 1.5, -0.7];
        let targets = [1, 0, 1, 1];
        let mut g = Graph::new();
        let logits = g.constant(t(&[1, 2, 2, 2], &data));
        let loss = g.softmax_ce_loss(logits, &targets, None).unwrap();
        let mut want = 0.0;
        for p in 0..4 {
            let (z0, z1) = (data[p], data[4 + p]);
            let zt = if targets[p] == 0 { z0 } else { z1 };
            want += -(zt.exp() / (z0.exp() + z1.exp())).ln();
        }
        want /= 4.0;
        assert!((g.value(loss).item() - want).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_ignore_index() {
        let mut g = Graph::new();
        let logits = g.param(t(&[1, 2, 1, 2], &[5.0, 0.0, 0.0, 0.0]));
        let loss = g.softmax_ce_loss(logits, &[0, 1], Some(1)).unwrap();
        let only_first = -(5f64.exp() / (5f64.exp() + 1.0)).ln();
        assert!((g.value(loss).item() - only_first).abs() < 1e-14);
        g.backward(loss).unwrap();
        let grad = g.grad(logits).unwrap();
        assert_eq!(grad[1], 0.0);
        assert_eq!(grad[3], 0.0);
        assert!(g.softmax_ce_loss(logits, &[0, 2], None).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_square_is_twice_x() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn(&[4], |i| i as f64 - 1.5));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        let want: Vec<f64> = g.value(x).data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.grad(x).unwrap(), &want[..]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let w = g.param(Tensor::full(&[1, 1, 1, 1], 2.0));
        let y = g.conv2d(x, w, None, 1, Padding::Valid).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad(w).unwrap(), &[4.0]);
    }
}
