use pgcycle_autograd::{ConvOpts, Graph, Tensor};
use proptest::prelude::*;

fn tensor(dims: [usize; 4]) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-1.0f64..1.0, dims.iter().product::<usize>())
        .prop_map(move |d| Tensor::from_vec(dims, d).unwrap())
}

fn conv(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
    let g = Graph::new();
    let out = g.constant(x.clone()).conv2d(g.constant(w.clone()), None, ConvOpts::new(1, 1)).unwrap();
    out.value().as_ref().clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convolution_is_linear_in_its_input(
        a in tensor([1, 2, 5, 6]),
        b in tensor([1, 2, 5, 6]),
        w in tensor([3, 2, 3, 3]),
        k in -2.0f64..2.0,
    ) {
        let mixed = Tensor::from_vec(a.dims(), a.data().iter().zip(b.data()).map(|(x, y)| x + k * y).collect()).unwrap();
        let (ca, cb) = (conv(&a, &w), conv(&b, &w));
        let want: Vec<f64> = ca.data().iter().zip(cb.data()).map(|(x, y)| x + k * y).collect();
        let got = conv(&mixed, &w);
        prop_assert!(got.data().iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn pixel_shuffle_only_moves_values(x in tensor([2, 8, 3, 4])) {
        let g = Graph::new();
        let out = g.constant(x.clone()).pixel_shuffle(2).unwrap();
        prop_assert_eq!(out.dims(), [2, 2, 6, 8]);
        let mut before = x.data().to_vec();
        let mut after = out.value().data().to_vec();
        before.sort_by(f64::total_cmp);
        after.sort_by(f64::total_cmp);
        prop_assert_eq!(before, after);
    }

    #[test]
    fn resizing_to_the_same_size_is_the_identity(x in tensor([1, 3, 7, 5])) {
        prop_assert_eq!(x.resize_bilinear(7, 5).unwrap(), x);
    }

    #[test]
    fn instance_norm_centres_each_channel(x in tensor([2, 3, 4, 4])) {
        let g = Graph::new();
        let out = g.constant(x).instance_norm().value();
        for plane in out.data().chunks(16) {
            let mean = plane.iter().sum::<f64>() / 16.0;
            prop_assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_of_a_weighted_mean_is_the_weight(x in tensor([1, 2, 3, 3]), c in tensor([1, 2, 3, 3])) {
        let g = Graph::new();
        let v = g.variable(x);
        let loss = v.mul(g.constant(c.clone())).unwrap().mean();
        let grads = g.backward(loss).unwrap();
        let got = grads.get(v).unwrap();
        prop_assert!(got.data().iter().zip(c.data()).all(|(a, b)| (a - b / 18.0).abs() < 1e-15));
    }
}
