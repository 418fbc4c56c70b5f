//! Parameter-free feature fusion by mutual cross-attention.
//!
//! For each band the DE and PSD slices are `[channels × frames]` matrices.
//! Attention scores are channel-to-channel affinities (`Q·Kᵀ` is
//! `channels × channels`) scaled by `1/√frames`, and each attended output
//! row is a convex combination of the value rows.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureCube, FeatureKind};
use crate::tensor::Tensor;

/// `softmax(Q·Kᵀ / √d_k) · V` with `d_k` the last dimension of `Q`.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    if q.rank() != 2 {
        return Err(Error::InvalidShape {
            shape: q.shape().to_vec(),
            reason: "attention operands must be rank 2".into(),
        });
    }
    if q.shape() != k.shape() {
        return Err(Error::shape("attention", q.shape(), k.shape()));
    }
    if q.shape() != v.shape() {
        return Err(Error::shape("attention", q.shape(), v.shape()));
    }
    let d_k = q.shape()[1] as f64;
    let scores = q.matmul(&k.transpose2d()?)?.scale(1.0 / d_k.sqrt());
    scores.softmax_rows()?.matmul(v)
}

/// Mutual cross-attention: `attention(f1, f2, f2) + attention(f2, f1, f1)`.
pub fn mca(f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
    if f1.shape() != f2.shape() {
        return Err(Error::shape("mca", f1.shape(), f2.shape()));
    }
    attention(f1, f2, f2)?.add(&attention(f2, f1, f1)?)
}

/// Fuses a DE and a PSD cube band by band. Argument order does not matter.
pub fn fuse_cubes(a: &FeatureCube, b: &FeatureCube) -> Result<FeatureCube> {
    let kinds = (a.kind, b.kind);
    let (de, psd) = match kinds {
        (FeatureKind::De, FeatureKind::Psd) => (a, b),
        (FeatureKind::Psd, FeatureKind::De) => (b, a),
        _ => {
            return Err(Error::KindMismatch(format!(
                "fusion needs one DE and one PSD cube, got {kinds:?}"
            )))
        }
    };
    if de.values.shape() != psd.values.shape() {
        return Err(Error::shape("fuse_cubes", de.values.shape(), psd.values.shape()));
    }
    let fused = (0..de.bands())
        .into_par_iter()
        .map(|band| mca(&de.band(band), &psd.band(band)))
        .collect::<Result<Vec<_>>>()?;
    FeatureCube::from_bands(FeatureKind::Fused, &fused)
}

/// The element-wise `DE + PSD` baseline.
pub fn sum_cubes(a: &FeatureCube, b: &FeatureCube) -> Result<FeatureCube> {
    let mut kinds = [a.kind, b.kind];
    kinds.sort_by_key(|k| *k as u8);
    if kinds != [FeatureKind::De, FeatureKind::Psd] {
        return Err(Error::KindMismatch(format!(
            "summation needs one DE and one PSD cube, got {kinds:?}"
        )));
    }
    FeatureCube::new(FeatureKind::Sum, a.values.add(&b.values)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn cube(rng: &mut ChaCha8Rng, kind: FeatureKind) -> FeatureCube {
        let mut t = random(rng, &[32, 5, 60], 3.0);
        if kind == FeatureKind::Psd {
            t = t.map(f64::abs);
        }
        FeatureCube::new(kind, t).unwrap()
    }

    #[test]
    fn zero_keys_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = random(&mut rng, &[32, 60], 1.0);
        let v = random(&mut rng, &[32, 60], 1.0);
        let out = attention(&q, &Tensor::zeros(&[32, 60]), &v).unwrap();
        for j in 0..60 {
            let mean = (0..32).map(|i| v.get(&[i, j])).sum::<f64>() / 32.0;
            for i in 0..32 {
                assert!((out.get(&[i, j]) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sharp_self_match_selects_own_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 8;
        let mut qk = Tensor::zeros(&[n, n]);
        for i in 0..n {
            qk.set(&[i, i], 40.0);
        }
        let v = random(&mut rng, &[n, n], 1.0);
        let out = attention(&qk, &qk, &v).unwrap();
        // score gap 1600/√8 ≈ 566 → off-diagonal weight ≈ e^-566
        assert!(out.max_abs_diff(&v) < 1e-12);
        let mild = qk.scale(0.25);
        let blurred = attention(&mild, &mild, &v).unwrap();
        assert!(blurred.max_abs_diff(&v) > out.max_abs_diff(&v));
    }

    #[test]
    fn outputs_stay_inside_value_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random(&mut rng, &[32, 60], 2.0);
        let k = random(&mut rng, &[32, 60], 2.0);
        let v = random(&mut rng, &[32, 60], 5.0);
        let out = attention(&q, &k, &v).unwrap();
        for j in 0..60 {
            let col: Vec<f64> = (0..32).map(|i| v.get(&[i, j])).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..32 {
                let x = out.get(&[i, j]);
                assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Tensor::zeros(&[32, 60]);
        let b = Tensor::zeros(&[32, 59]);
        assert!(matches!(attention(&a, &b, &a), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(attention(&a, &a, &b), Err(Error::ShapeMismatch { .. })));
        assert!(mca(&a, &b).is_err());
    }

    #[test]
    fn mca_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f1 = random(&mut rng, &[32, 60], 1.0);
        let f2 = random(&mut rng, &[32, 60], 1.0);
        assert_eq!(mca(&f1, &f2).unwrap(), mca(&f2, &f1).unwrap());
        let self_fused = mca(&f1, &f1).unwrap();
        assert_eq!(self_fused, attention(&f1, &f1, &f1).unwrap().scale(2.0));
    }

    #[test]
    fn constant_inputs_double() {
        for c in [1.0, 2.5, -3.75, 0.125] {
            let f = Tensor::filled(&[32, 60], c);
            assert!(mca(&f, &f).unwrap().data().iter().all(|&x| x == 2.0 * c));
        }
        for c in [0.1, 7.3] {
            let f = Tensor::filled(&[32, 60], c);
            assert!(mca(&f, &f)
                .unwrap()
                .data()
                .iter()
                .all(|&x| (x - 2.0 * c).abs() <= 1e-12 * c.abs()));
        }
    }

    #[test]
    fn fuse_cubes_shape_and_commutativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let de = cube(&mut rng, FeatureKind::De);
        let psd = cube(&mut rng, FeatureKind::Psd);
        let fused = fuse_cubes(&de, &psd).unwrap();
        assert_eq!(fused.values.shape(), &[32, 5, 60]);
        assert_eq!(fused.kind, FeatureKind::Fused);
        assert_eq!(fused, fuse_cubes(&psd, &de).unwrap());
        assert!(fuse_cubes(&de, &de).is_err());
    }

    #[test]
    fn bands_fuse_independently() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let de = cube(&mut rng, FeatureKind::De);
        let psd = cube(&mut rng, FeatureKind::Psd);
        let base = fuse_cubes(&de, &psd).unwrap();
        let mut bands: Vec<Tensor> = (0..5).map(|b| de.band(b)).collect();
        bands[0] = random(&mut rng, &[32, 60], 10.0);
        let perturbed = FeatureCube::from_bands(FeatureKind::De, &bands).unwrap();
        let out = fuse_cubes(&perturbed, &psd).unwrap();
        assert_ne!(out.band(0), base.band(0));
        for b in 1..5 {
            assert_eq!(out.band(b), base.band(b));
        }
    }

    #[test]
    fn constant_cubes_fuse_to_double() {
        let de = FeatureCube::new(FeatureKind::De, Tensor::filled(&[32, 5, 60], 1.5)).unwrap();
        let psd = FeatureCube::new(FeatureKind::Psd, Tensor::filled(&[32, 5, 60], 1.5)).unwrap();
        let fused = fuse_cubes(&de, &psd).unwrap();
        assert!(fused.values.data().iter().all(|&x| x == 3.0));
    }

    #[test]
    fn sum_baseline() {
        let de = FeatureCube::new(FeatureKind::De, Tensor::filled(&[2, 5, 3], 1.0)).unwrap();
        let psd = FeatureCube::new(FeatureKind::Psd, Tensor::filled(&[2, 5, 3], 2.0)).unwrap();
        let s = sum_cubes(&psd, &de).unwrap();
        assert_eq!(s.kind, FeatureKind::Sum);
        assert!(s.values.data().iter().all(|&x| x == 3.0));
        assert!(sum_cubes(&de, &de).is_err());
    }

    proptest! {
        #[test]
        fn attention_is_finite_for_extreme_inputs(seed in any::<u64>(), scale in 1e-3f64..1e6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&mut rng, &[6, 5], scale);
            let b = random(&mut rng, &[6, 5], scale);
            let out = mca(&a, &b).unwrap();
            prop_assert!(out.data().iter().all(|v| v.is_finite()));
        }
    }
}
