//! Forward operator against spatial-domain loop oracles and dense matrices.

use lensless_core::forward::{
    convolve_psf, gaussian_filter_responses, make_erasure_mask, make_filter_masks, make_shutter_masks,
    ForwardModel, LinearMap, MaskKind, MaskStack, Psf, ShutterMode,
};
use lensless_core::rng::{self, streams};
use lensless_core::{Real, Tensor};
use proptest::prelude::*;

fn random<T: Real>(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    let mut r = rng::seeded(seed, streams::SCENE);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::of(rng::uniform(&mut r, lo, hi))).collect()).unwrap()
}

/// Direct linear convolution with the kernel origin at `(H/2, W/2)`, read off
/// on the sensor window.
fn conv_oracle(v: &[f64], h: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let (cy, cx) = ((rows / 2) as isize, (cols / 2) as isize);
    let mut out = vec![0.0; rows * cols];
    for y in 0..rows as isize {
        for x in 0..cols as isize {
            let mut acc = 0.0;
            for i in 0..rows as isize {
                for j in 0..cols as isize {
                    let (ky, kx) = (y - i + cy, x - j + cx);
                    if ky >= 0 && kx >= 0 && ky < rows as isize && kx < cols as isize {
                        acc += v[(i * cols as isize + j) as usize] * h[(ky * cols as isize + kx) as usize];
                    }
                }
            }
            out[(y * cols as isize + x) as usize] = acc;
        }
    }
    out
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

fn as_f64<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

#[test]
fn convolution_matches_loop_oracle() {
    for (rows, cols, seed) in [(8, 8, 1), (7, 9, 2), (6, 10, 3)] {
        let v = random::<f64>(&[rows, cols], seed, -1.0, 1.0);
        let psf = Psf::from_raw(random::<f64>(&[rows, cols], seed + 10, 0.0, 1.0)).unwrap();
        let want = conv_oracle(v.data(), psf.kernel().data(), rows, cols);
        let got = convolve_psf(&v, &psf).unwrap();
        assert!(rel_err(got.data(), &want) < 1e-12, "{rows}x{cols}");

        let psf32 = Psf::from_raw(psf.kernel().cast::<f32>()).unwrap();
        let got32 = convolve_psf(&v.cast::<f32>(), &psf32).unwrap();
        assert!(rel_err(&as_f64(&got32), &want) < 1e-5, "{rows}x{cols} f32");
    }
}

#[test]
fn shifted_delta_shifts_with_zero_fill() {
    let v = random::<f64>(&[6, 7], 4, 0.0, 1.0);
    for (dy, dx) in [(1isize, 0isize), (0, -2), (-1, 2), (2, 3)] {
        let out = convolve_psf(&v, &Psf::delta(6, 7, dy, dx).unwrap()).unwrap();
        for y in 0..6isize {
            for x in 0..7isize {
                let (sy, sx) = (y - dy, x - dx);
                let want = if sy >= 0 && sx >= 0 && sy < 6 && sx < 7 {
                    v.data()[(sy * 7 + sx) as usize]
                } else {
                    0.0
                };
                assert!((out.data()[(y * 7 + x) as usize] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn shape_mismatches_are_rejected() {
    let psf = Psf::from_raw(random::<f64>(&[8, 8], 5, 0.0, 1.0)).unwrap();
    assert!(convolve_psf(&Tensor::<f64>::zeros(&[8, 7]), &psf).is_err());
    let fm = ForwardModel::new(psf.clone(), MaskStack::unmasked(8, 8)).unwrap();
    assert!(fm.apply(&Tensor::zeros(&[2, 8, 8])).is_err());
    assert!(fm.adjoint(&Tensor::zeros(&[8, 9])).is_err());
    assert!(ForwardModel::new(psf, MaskStack::unmasked(8, 9)).is_err());
}

#[test]
fn specialization_chain_is_exact() {
    let psf = Psf::from_raw(random::<f32>(&[16, 12], 6, 0.0, 1.0)).unwrap();
    let v = random::<f32>(&[16, 12], 7, 0.0, 1.0);
    let plain = convolve_psf(&v, &psf).unwrap();
    let cube = v.clone().into_cube().unwrap();

    let a2d = ForwardModel::new(psf.clone(), MaskStack::unmasked(16, 12)).unwrap();
    assert_eq!(a2d.apply(&cube).unwrap(), plain);

    let erasure = make_erasure_mask::<f32>(16, 12, 0.5, 9).unwrap();
    let masked = plain.mul(&erasure.masks().clone().reshape(&[16, 12]).unwrap()).unwrap();
    let aer = ForwardModel::new(psf.clone(), erasure).unwrap();
    assert_eq!(aer.apply(&cube).unwrap(), masked);

    // Partition of unity with identical slices collapses to the 2D model.
    let half = random::<f64>(&[16, 12], 8, 0.0, 1.0).map(|m| if m > 0.5 { 1.0 } else { 0.0 });
    let pair = Tensor::stack(&[half.clone(), half.map(|m| 1.0 - m)]).unwrap();
    let psf64 = Psf::from_raw(psf.kernel().cast::<f64>()).unwrap();
    let two = ForwardModel::new(psf64.clone(), MaskStack::new(pair, MaskKind::Custom).unwrap()).unwrap();
    let v64 = v.cast::<f64>();
    let doubled = Tensor::stack(&[v64.clone(), v64.clone()]).unwrap();
    let want = convolve_psf(&v64, &psf64).unwrap();
    assert!(rel_err(two.apply(&doubled).unwrap().data(), want.data()) < 1e-14);
}

#[test]
fn identity_model_is_self_adjoint() {
    let fm = ForwardModel::new(Psf::<f64>::delta(9, 8, 0, 0).unwrap(), MaskStack::unmasked(9, 8)).unwrap();
    let x = random::<f64>(&[1, 9, 8], 10, -1.0, 1.0);
    let ax = fm.apply(&x).unwrap();
    assert!(rel_err(ax.data(), x.data()) < 1e-14);
    let aty = fm.adjoint(&ax.reshape(&[9, 8]).unwrap()).unwrap();
    assert!(rel_err(aty.data(), x.data()) < 1e-14);
}

/// Entry `((y, x), (k, i, j))` of the dense operator, written from the model
/// definition rather than from the implementation.
fn dense_entry(fm: &ForwardModel<f64>, y: usize, x: usize, k: usize, i: usize, j: usize) -> f64 {
    let (_, h, w) = fm.scene_dims();
    let (ky, kx) = (y as isize - i as isize + (h / 2) as isize, x as isize - j as isize + (w / 2) as isize);
    if ky < 0 || kx < 0 || ky >= h as isize || kx >= w as isize {
        return 0.0;
    }
    fm.masks().slice(k)[y * w + x] * fm.psf().kernel().data()[ky as usize * w + kx as usize]
}

#[test]
fn delta_probes_reproduce_the_dense_operator() {
    let (k, h, w) = (4, 16, 16);
    let psf = Psf::from_raw(random::<f64>(&[h, w], 11, 0.0, 1.0)).unwrap();
    let masks = MaskStack::new(random::<f64>(&[k, h, w], 12, 0.0, 1.0), MaskKind::Custom).unwrap();
    let fm = ForwardModel::new(psf, masks).unwrap();
    let n = k * h * w;
    let mut dense = vec![0.0; h * w * n];
    let mut worst = 0.0f64;
    for col in 0..n {
        let mut probe = Tensor::<f64>::zeros(&[k, h, w]);
        probe.data_mut()[col] = 1.0;
        let column = fm.apply(&probe).unwrap();
        let (kk, i, j) = (col / (h * w), (col / w) % h, col % w);
        for row in 0..h * w {
            dense[row * n + col] = column.data()[row];
            worst = worst.max((column.data()[row] - dense_entry(&fm, row / w, row % w, kk, i, j)).abs());
        }
    }
    assert!(worst < 1e-12, "probe columns differ from definition by {worst}");

    let v = random::<f64>(&[k, h, w], 13, -1.0, 1.0);
    let mv: Vec<f64> = (0..h * w)
        .map(|r| (0..n).map(|c| dense[r * n + c] * v.data()[c]).sum())
        .collect();
    assert!(rel_err(fm.apply(&v).unwrap().data(), &mv) < 1e-12);
    let v32 = v.cast::<f32>();
    let fm32 = ForwardModel::new(
        Psf::from_raw(fm.psf().kernel().cast::<f32>()).unwrap(),
        MaskStack::new(fm.masks().masks().cast::<f32>(), MaskKind::Custom).unwrap(),
    )
    .unwrap();
    assert!(rel_err(&as_f64(&fm32.apply(&v32).unwrap()), &mv) < 1e-5);

    // Transpose of the dense matrix against the adjoint.
    let y = random::<f64>(&[h, w], 14, -1.0, 1.0);
    let aty: Vec<f64> = (0..n)
        .map(|c| (0..h * w).map(|r| dense[r * n + c] * y.data()[r]).sum())
        .collect();
    assert!(rel_err(fm.adjoint(&y).unwrap().data(), &aty) < 1e-12);
}

#[test]
fn inner_product_identity_12x12x3() {
    let psf = Psf::from_raw(random::<f64>(&[12, 12], 15, 0.0, 1.0)).unwrap();
    let masks = MaskStack::new(random::<f64>(&[3, 12, 12], 16, 0.0, 1.0), MaskKind::Custom).unwrap();
    let fm = ForwardModel::new(psf, masks).unwrap();
    let x = random::<f64>(&[3, 12, 12], 17, -1.0, 1.0);
    let y = random::<f64>(&[12, 12], 18, -1.0, 1.0);
    let lhs = fm.apply(&x).unwrap().dot(&y).unwrap();
    let rhs = x.dot(&fm.adjoint(&y).unwrap()).unwrap();
    assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs());
}

#[test]
fn adjoint_of_zero_is_zero() {
    let fm = ForwardModel::new(
        Psf::from_raw(random::<f32>(&[8, 8], 19, 0.0, 1.0)).unwrap(),
        make_shutter_masks(8, 8, 2, ShutterMode::Single).unwrap(),
    )
    .unwrap();
    let out = fm.adjoint(&Tensor::zeros(&[8, 8])).unwrap();
    assert_eq!(out.shape(), &[4, 8, 8]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn concurrent_applies_agree() {
    let fm = ForwardModel::new(
        Psf::from_raw(random::<f64>(&[16, 16], 20, 0.0, 1.0)).unwrap(),
        make_shutter_masks(16, 16, 2, ShutterMode::Dual).unwrap(),
    )
    .unwrap();
    let v = random::<f64>(&[4, 16, 16], 21, 0.0, 1.0);
    let want = fm.apply(&v).unwrap();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4).map(|_| s.spawn(|| fm.apply(&v).unwrap())).collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), want);
        }
    });
}

/// Random model of one of the supported mask kinds.
fn model_of<T: Real>(kind: u8, h: usize, w: usize, k: usize, seed: u64) -> ForwardModel<T> {
    let psf = Psf::from_raw(random::<T>(&[h, w], seed, 0.0, 1.0)).unwrap();
    let masks = match kind % 5 {
        0 => make_erasure_mask(h, w, 0.9, seed).unwrap(),
        1 => make_shutter_masks(h, w, h / k.max(1), ShutterMode::Single).unwrap(),
        // Dual needs two bands per frame, so at most h / 2 frames.
        2 => make_shutter_masks(h, w, h / (2 * k.clamp(1, h / 2)), ShutterMode::Dual).unwrap(),
        3 => {
            let r = gaussian_filter_responses::<T>(4, k.min(4), 0.8);
            make_filter_masks(h, w, k.min(4), (2, 2), &r).unwrap()
        }
        _ => MaskStack::new(random::<T>(&[k, h, w], seed + 1, 0.0, 1.0), MaskKind::Custom).unwrap(),
    };
    ForwardModel::new(psf, masks).unwrap()
}

fn adjoint_gap<T: Real>(fm: &ForwardModel<T>, seed: u64) -> (f64, f64) {
    let (k, h, w) = fm.scene_dims();
    let x = random::<T>(&[k, h, w], seed + 2, -1.0, 1.0);
    let y = random::<T>(&[h, w], seed + 3, -1.0, 1.0);
    let ax = fm.apply(&x).unwrap();
    let gap = (ax.dot(&y).unwrap() - x.dot(&fm.adjoint(&y).unwrap()).unwrap()).abs();
    (gap, ax.norm() * y.norm())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn adjoint_identity_holds(kind in 0u8..5, hh in 1usize..=4, ww in 2usize..=32, kexp in 0u32..=3, seed in 0u64..1000) {
        // Heights are multiples of 8 so every shutter layout divides evenly.
        let (h, k) = (8 * hh, 1usize << kexp);
        let k = if kind == 0 { 1 } else { k };
        let w = ww + ww % 2;
        let fm64 = model_of::<f64>(kind, h, w, k, seed);
        let (gap, scale) = adjoint_gap(&fm64, seed);
        prop_assert!(gap <= 1e-5 * scale, "f64 gap {gap} scale {scale}");
        let fm32 = model_of::<f32>(kind, h, w, k, seed);
        let (gap, scale) = adjoint_gap(&fm32, seed);
        prop_assert!(gap <= 1e-5 * scale, "f32 gap {gap} scale {scale}");
    }

    #[test]
    fn apply_is_linear(kind in 0u8..5, alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in 0u64..1000) {
        let fm = model_of::<f64>(kind, 16, 12, if kind == 0 { 1 } else { 4 }, seed);
        let (k, h, w) = fm.scene_dims();
        let u = random::<f64>(&[k, h, w], seed + 4, -1.0, 1.0);
        let v = random::<f64>(&[k, h, w], seed + 5, -1.0, 1.0);
        let lhs = fm.apply(&u.scale(alpha).add(&v.scale(beta)).unwrap()).unwrap();
        let rhs = fm.apply(&u).unwrap().scale(alpha).add(&fm.apply(&v).unwrap().scale(beta)).unwrap();
        let err = lhs.sub(&rhs).unwrap().norm();
        prop_assert!(err <= 1e-5 * rhs.norm().max(1e-12), "err {err}");
    }

    #[test]
    fn shutter_partition_of_unity(bands in 1usize..=6, r in 1usize..=4, dual in any::<bool>(), w in 1usize..=9) {
        let (mode, h) = if dual { (ShutterMode::Dual, 2 * r * bands) } else { (ShutterMode::Single, r * bands) };
        let m = make_shutter_masks::<f64>(h, w, r, mode).unwrap();
        prop_assert_eq!(m.channels(), bands);
        prop_assert!(m.coverage().data().iter().all(|&c| c == 1.0));
        prop_assert!(m.masks().data().iter().all(|&c| c == 0.0 || c == 1.0));
    }
}
