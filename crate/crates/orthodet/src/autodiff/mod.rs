//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Define-by-run: each forward pass builds a fresh [`Graph`]; calling
//! [`Graph::backward`] on a scalar loss walks the tape in reverse. The op set
//! covers exactly what the detector needs (convolution, pyramid plumbing,
//! activations, softmax/BCE losses and the elementwise arithmetic of the IoU
//! loss).

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect())
    }

    /// Central finite differences on every coordinate of every leaf.
    fn gradcheck(
        shapes: &[&[usize]],
        build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
        seed: u64,
        tol: f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let leaves: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(s, &mut rng)).collect();

        let eval = |inputs: &[Tensor<f64>]| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
            let loss = build(&mut g, &vars);
            g.value(loss).item()
        };

        let mut g = Graph::new();
        let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = build(&mut g, &vars);
        let grads = g.backward(loss);

        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads
                .get(vars[li])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(leaf.shape()));
            for i in 0..leaf.len() {
                let mut plus = leaves.clone();
                plus[li].data_mut()[i] += h;
                let mut minus = leaves.clone();
                minus[li].data_mut()[i] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[i];
                let denom = a.abs().max(fd.abs()).max(1.0);
                assert!(
                    (a - fd).abs() / denom < tol,
                    "leaf {li} coord {i}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn gradcheck_elementwise_chain() {
        gradcheck(
            &[&[6], &[6]],
            |g, v| {
                let m = g.mul(v[0], v[1]);
                let s = g.silu(m);
                let a = g.atan(s);
                let sg = g.sigmoid(a);
                let d = g.add_scalar(v[1], 3.0);
                let q = g.div(sg, d);
                g.sum_all(q)
            },
            1,
            1e-6,
        );
    }

    #[test]
    fn gradcheck_min_max_clamp() {
        gradcheck(
            &[&[8], &[8]],
            |g, v| {
                let mn = g.min_elem(v[0], v[1]);
                let mx = g.max_elem(v[0], v[1]);
                let c = g.clamp(mn, -0.9, 0.9);
                let s = g.add(c, mx);
                let t = g.mul_scalar(s, 0.7);
                g.mean_all(t)
            },
            2,
            1e-6,
        );
    }

    #[test]
    fn gradcheck_conv2d_stride_and_pad() {
        for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
            gradcheck(
                &[&[2, 5, 5], &[3, 2, 3, 3], &[3]],
                |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad);
                    let a = g.silu(y);
                    g.sum_all(a)
                },
                3 + stride as u64 + pad as u64,
                1e-6,
            );
        }
    }

    #[test]
    fn gradcheck_pyramid_plumbing() {
        gradcheck(
            &[&[2, 2, 2], &[1, 2, 2]],
            |g, v| {
                let cat = g.concat_c(v[0], v[1]);
                let up = g.upsample2x(cat);
                let rows = g.chw_to_rows(up);
                let picked = g.gather_rows(rows, vec![0, 5, 9, 9]);
                let col = g.col_slice(picked, 1);
                g.sum_all(col)
            },
            4,
            1e-6,
        );
    }

    #[test]
    fn gradcheck_softmax_family() {
        gradcheck(
            &[&[3, 5]],
            |g, v| {
                let sm = g.row_softmax(v[0]);
                let w = g.row_weighted_sum(sm, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
                let ls = g.row_log_softmax(v[0]);
                let coef = Tensor::from_vec(
                    &[3, 5],
                    vec![
                        0.3, 0.7, 0.0, 0.0, 0.0, //
                        0.0, 0.0, 1.0, 0.0, 0.0, //
                        0.0, 0.5, 0.5, 0.0, 0.0,
                    ],
                );
                let dot = g.row_dot_const(ls, coef);
                let s1 = g.sum_all(w);
                let s2 = g.sum_all(dot);
                g.add(s1, s2)
            },
            5,
            1e-6,
        );
    }

    #[test]
    fn gradcheck_bce_and_group_sum() {
        gradcheck(
            &[&[4, 8]],
            |g, v| {
                let targets = Tensor::from_vec(
                    &[4, 8],
                    (0..32).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect(),
                );
                let bce = g.bce_with_logits(v[0], targets);
                let sig = g.sigmoid(v[0]);
                let grouped = g.row_group_sum(sig, 4);
                let clamped = g.clamp(grouped, 1e-7, 1.0 - 1e-7);
                let ptargets = Tensor::from_vec(&[4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
                let pb = g.bce_on_probs(clamped, ptargets);
                let s1 = g.sum_all(bce);
                let s2 = g.sum_all(pb);
                g.add(s1, s2)
            },
            6,
            1e-5,
        );
    }

    #[test]
    fn gradcheck_reshape_and_sub() {
        gradcheck(
            &[&[2, 6], &[12]],
            |g, v| {
                let r = g.reshape(v[0], &[12]);
                let d = g.sub(r, v[1]);
                let sq = g.mul(d, d);
                g.mean_all(sq)
            },
            7,
            1e-6,
        );
    }

    #[test]
    fn backward_accumulates_over_shared_subexpressions() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1], vec![3.0]), true);
        let y = g.mul(x, x); // x^2, dx = 2x = 6
        let z = g.add(y, x); // x^2 + x, dx = 2x + 1 = 7
        let loss = g.sum_all(z);
        let grads = g.backward(loss);
        assert_eq!(grads.get(x).unwrap().item(), 7.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]), true);
        let c = g.constant(Tensor::from_vec(&[2], vec![5.0, 5.0]));
        let y = g.mul(x, c);
        let loss = g.sum_all(y);
        let grads = g.backward(loss);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[5.0, 5.0]);
    }

    #[test]
    fn conv2d_known_values() {
        // 1x3x3 input, 1x1x2x2 kernel of ones, stride 1, no padding:
        // each output is the sum of a 2x2 patch.
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(
            &[1, 3, 3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        ));
        let w = g.constant(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0; 4]));
        let y = g.conv2d(x, w, None, 1, 0);
        assert_eq!(g.value(y).shape(), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn upsample_is_nearest_neighbor() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[1, 1, 2], vec![1.0, 2.0]));
        let y = g.upsample2x(x);
        assert_eq!(g.value(y).shape(), &[1, 2, 4]);
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
