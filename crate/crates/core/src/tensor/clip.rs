use super::{Real, Tensor};

/// Euclidean norm over every element of every tensor, accumulated in f64.
pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&v| {
            let v = v.as_f64();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescale all gradients jointly so their global norm is at most `max_norm`.
/// Returns the applied scale (1 when no clipping happened).
pub fn global_norm_clip<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    debug_assert!(max_norm > 0.0);
    let norm = global_norm(grads);
    if norm <= max_norm {
        return 1.0;
    }
    let scale = max_norm / norm;
    let s = T::lit(scale);
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v *= s;
        }
    }
    scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn halves_norm_two() {
        let mut g = vec![Tensor::<f64>::from_f64(&[2], &[2.0, 0.0]).unwrap()];
        let s = global_norm_clip(&mut g, 1.0);
        assert_eq!(s, 0.5);
        assert_eq!(g[0].data(), &[1.0, 0.0]);
    }

    #[test]
    fn leaves_small_norm_alone() {
        let mut g = vec![Tensor::<f64>::from_f64(&[2], &[0.3, 0.4]).unwrap()];
        assert_eq!(global_norm_clip(&mut g, 1.0), 1.0);
        assert_eq!(g[0].data(), &[0.3, 0.4]);
    }

    #[test]
    fn joint_norm_across_tensors() {
        let mut g = vec![
            Tensor::<f64>::from_f64(&[2], &[3.0, 0.0]).unwrap(),
            Tensor::<f64>::from_f64(&[2], &[0.0, 4.0]).unwrap(),
        ];
        let s = global_norm_clip(&mut g, 1.0);
        assert!((s - 0.2).abs() < 1e-15);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-12);
        assert!((g[1].data()[1] - 0.8).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn clipped_norm_never_exceeds_bound(
            a in proptest::collection::vec(-50.0f32..50.0, 1..40),
            b in proptest::collection::vec(-50.0f32..50.0, 1..40),
            c in 0.01f64..5.0,
        ) {
            let mut g = vec![
                Tensor::new(&[a.len()], a).unwrap(),
                Tensor::new(&[b.len()], b).unwrap(),
            ];
            global_norm_clip(&mut g, c);
            prop_assert!(global_norm(&g) <= c + 1e-6);
        }
    }
}
