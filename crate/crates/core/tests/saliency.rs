use shapebias_core::image::Image;
use shapebias_core::model::{Architecture, InputNormalization, InputSize, Network, NetworkConfig};
use shapebias_core::saliency::{self, aggregate_channels, smoothgrad_raw};
use shapebias_core::Tensor;

fn net() -> Network {
    Network::build(NetworkConfig {
        input: InputSize { channels: 3, height: 8, width: 8 },
        architecture: Architecture::MicroResNet { stages: vec![(4, 1), (8, 1)] },
        class_count: 3,
        input_normalization: InputNormalization::IDENTITY,
        seed: 21,
    })
    .unwrap()
}

fn image() -> Image {
    Image::new(8, 8, (0..192).map(|i| ((i * 53) % 97) as f64 / 96.0).collect()).unwrap()
}

#[test]
fn smoothgrad_without_noise_is_grad() {
    let (net, img) = (net(), image());
    for class in 0..3 {
        let g = saliency::grad_map(&net, &img, class, "m").unwrap();
        let s = saliency::smoothgrad_map(&net, &img, class, 25, 0.0, 4, "m").unwrap();
        assert_eq!(g.values, s.values);
    }
}

#[test]
fn linear_scorer_is_noise_free() {
    // Constant gradient: every noisy copy returns the same vector.
    let w: Vec<f64> = (0..12).map(|i| (i as f64 - 5.0) / 3.0).collect();
    let x = Tensor::new(vec![3, 2, 2], vec![0.5; 12]).unwrap();
    let wt = Tensor::new(vec![3, 2, 2], w).unwrap();
    let sg = smoothgrad_raw(|_| Ok(wt.clone()), &x, 50, 0.2, 1).unwrap();
    assert!(sg.max_abs_diff(&wt) < 1e-12);
}

#[test]
fn affine_gradient_converges_within_three_sigma() {
    // S(x) = ½xᵀAx + bᵀx, ∇S = Ax + b, and SmoothGrad estimates A·x + b with
    // per-coordinate standard deviation σ·‖Aᵢ‖/√n.
    let d = 12;
    let a: Vec<f64> = (0..d * d).map(|k| (((k * 31) % 17) as f64 - 8.0) / 8.0).collect();
    let b: Vec<f64> = (0..d).map(|i| i as f64 / 10.0).collect();
    let grad = |x: &Tensor| -> shapebias_core::Result<Tensor> {
        let out = (0..d).map(|i| b[i] + (0..d).map(|j| a[i * d + j] * x.data()[j]).sum::<f64>()).collect();
        Tensor::new(x.shape().to_vec(), out)
    };
    let x = Tensor::new(vec![3, 2, 2], (0..d).map(|i| i as f64 / 12.0).collect()).unwrap();
    let exact = grad(&x).unwrap();
    let (n, sigma) = (4000, 0.1);
    let sg = smoothgrad_raw(grad, &x, n, sigma, 77).unwrap();
    for i in 0..d {
        let row_norm = (0..d).map(|j| a[i * d + j] * a[i * d + j]).sum::<f64>().sqrt();
        let bound = 3.0 * sigma * row_norm / (n as f64).sqrt();
        assert!((sg.data()[i] - exact.data()[i]).abs() <= bound, "coordinate {i}");
    }
}

#[test]
fn maps_are_normalized_and_seeded() {
    let (net, img) = (net(), image());
    let a = saliency::smoothgrad_map(&net, &img, 1, 10, 0.1, 5, "m").unwrap();
    let b = saliency::smoothgrad_map(&net, &img, 1, 10, 0.1, 5, "m").unwrap();
    assert_eq!(a, b);
    let max = a.values.iter().cloned().fold(0.0, f64::max);
    assert_eq!(max, 1.0);
    assert!(a.values.iter().all(|v| *v >= 0.0));
    assert_eq!(a.provenance.as_ref().unwrap().samples, 10);
}

#[test]
fn bad_class_is_index_error() {
    assert!(saliency::grad_map(&net(), &image(), 3, "m").is_err());
}

#[test]
fn aggregation_requires_chw() {
    assert!(aggregate_channels(&Tensor::zeros(&[4, 4])).is_err());
}
