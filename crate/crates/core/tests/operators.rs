use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specgrad::dataset::{build_dataset, GeneratorSpec};
use specgrad::diff::{fd_check, Activation, Tape, Value};
use specgrad::grf::{sample_grf, KernelSpec, RangeSpec};
use specgrad::operators::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, samples_from, save_checkpoint, train, Adam, AdamConfig,
    ArchSpec, Model, Normalizer, Sample, TrainConfig,
};
use specgrad::solvers::{ForcingSpec, SolverConfig};
use specgrad::spectral::{make_grid, shift_values, spectral_upsample};
use specgrad::Error;

fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn smooth(dims: usize, n: usize, seed: u64) -> Vec<f64> {
    let g = make_grid(dims, n, 1.0).unwrap();
    sample_grf(&KernelSpec::rbf(1.0, 0.15), &g, seed, 1).unwrap().remove(0).into_values()
}

fn fno1d(coords: bool) -> ArchSpec {
    ArchSpec::Fno1d {
        modes: 6,
        width: 6,
        layers: 2,
        coords,
        activation: Activation::Gelu,
    }
}

fn fno2d(coords: bool, t_in: usize, t_out: usize) -> ArchSpec {
    ArchSpec::Fno2d {
        modes: 3,
        width: 4,
        layers: 2,
        t_in,
        t_out,
        coords,
        direct: false,
        activation: Activation::Gelu,
    }
}

fn zeroed(model: &Model) -> Vec<Value> {
    model.params().iter().map(Value::zeros_like).collect()
}

fn flatten(params: &[Value]) -> Vec<f64> {
    params
        .iter()
        .flat_map(|p| match p {
            Value::Real(v) => v.clone(),
            Value::Complex(v) => v.iter().flat_map(|c| [c.re, c.im]).collect(),
        })
        .collect()
}

fn unflatten(like: &[Value], flat: &[f64]) -> Vec<Value> {
    let mut k = 0;
    like.iter()
        .map(|p| match p {
            Value::Real(v) => {
                k += v.len();
                Value::Real(flat[k - v.len()..k].to_vec())
            }
            Value::Complex(v) => {
                k += 2 * v.len();
                Value::Complex(flat[k - 2 * v.len()..k].chunks(2).map(|c| Complex64::new(c[0], c[1])).collect())
            }
        })
        .collect()
}

#[test]
fn zero_weights_give_the_projection_bias() {
    for (arch, n) in [(fno1d(true), 32), (fno2d(true, 2, 2), 8)] {
        let m = Model::init(arch.clone(), n, 0).unwrap();
        let mut p = zeroed(&m);
        *p.last_mut().unwrap() = Value::Real(vec![0.3]);
        let z = Model::from_parts(arch, n, p, None).unwrap();
        let y = z.predict(&rand_vec(z.input_len(), 1)).unwrap();
        assert_eq!(y.len(), z.output_len());
        assert!(y.iter().all(|&v| (v - 0.3).abs() <= 1e-15));
    }
    let arch = ArchSpec::deeponet(8, 2, 4);
    let m = Model::init(arch.clone(), 16, 0).unwrap();
    let mut p = zeroed(&m);
    *p.last_mut().unwrap() = Value::Real(vec![-0.7]);
    let z = Model::from_parts(arch, 16, p, Some(Normalizer { in_mean: 0.0, in_std: 1.0, out_mean: 1.0, out_std: 2.0 })).unwrap();
    assert!(z.predict(&rand_vec(16, 2)).unwrap().iter().all(|&v| (v - (1.0 - 1.4)).abs() <= 1e-15));
}

#[test]
fn mode_zero_layer_sees_only_the_input_mean() {
    let arch = ArchSpec::Fno1d {
        modes: 1,
        width: 3,
        layers: 1,
        coords: false,
        activation: Activation::Gelu,
    };
    let m = Model::init(arch.clone(), 16, 4).unwrap();
    let mut p = m.params().to_vec();
    let mut r = vec![Complex64::default(); 9];
    for i in 0..3 {
        r[i * 3 + i] = Complex64::new(1.0, 0.0);
    }
    p[2] = Value::Complex(r);
    p[3] = Value::Real(vec![0.0; 9]);
    p[4] = Value::Real(vec![0.0; 3]);
    let m = Model::from_parts(arch, 16, p, None).unwrap();
    let a = rand_vec(16, 5);
    let mean = a.iter().sum::<f64>() / 16.0;
    let mut b = rand_vec(16, 6);
    let mb = b.iter().sum::<f64>() / 16.0;
    b.iter_mut().for_each(|v| *v += mean - mb);
    let (ya, yb) = (m.predict(&a).unwrap(), m.predict(&b).unwrap());
    for (x, y) in ya.iter().zip(&yb) {
        assert!((x - y).abs() <= 1e-12);
        assert!((x - ya[0]).abs() <= 1e-12);
    }
}

#[test]
fn fno_is_translation_equivariant_without_coordinates() {
    let m = Model::init(fno1d(false), 32, 1).unwrap();
    let a = smooth(1, 32, 2);
    let shifted = shift_values(&a, 32, 1, [5, 0]);
    let want = shift_values(&m.predict(&a).unwrap(), 32, 1, [5, 0]);
    let got = m.predict(&shifted).unwrap();
    assert!(got.iter().zip(&want).all(|(x, y)| (x - y).abs() <= 1e-10));

    let m = Model::init(fno2d(false, 2, 2), 8, 1).unwrap();
    let frames: Vec<Vec<f64>> = (0..2).map(|s| smooth(2, 8, 10 + s)).collect();
    let shift = [3, -2];
    let input: Vec<f64> = frames.iter().flatten().copied().collect();
    let sh_input: Vec<f64> = frames.iter().flat_map(|f| shift_values(f, 8, 2, shift)).collect();
    let y = m.predict(&input).unwrap();
    let want: Vec<f64> = y.chunks(64).flat_map(|f| shift_values(f, 8, 2, shift)).collect();
    let got = m.predict(&sh_input).unwrap();
    assert!(got.iter().zip(&want).all(|(x, y)| (x - y).abs() <= 1e-10));

    let with = Model::init(fno1d(true), 32, 1).unwrap();
    let got = with.predict(&shifted).unwrap();
    let want = shift_values(&with.predict(&a).unwrap(), 32, 1, [5, 0]);
    assert!(got.iter().zip(&want).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn finer_grids_reproduce_coarse_outputs() {
    let m = Model::init(ArchSpec::fno1d(8, 8, 3), 64, 3).unwrap();
    let g = make_grid(1, 64, 1.0).unwrap();
    let a = sample_grf(&KernelSpec::rbf(1.0, 0.2), &g, 4, 1).unwrap().remove(0);
    let fine = spectral_upsample(&a, 128).unwrap();
    let y64 = m.predict(a.values()).unwrap();
    let y128 = m.predict(fine.values()).unwrap();
    let num: f64 = y64.iter().enumerate().map(|(i, v)| (v - y128[2 * i]).powi(2)).sum();
    let den: f64 = y64.iter().map(|v| v * v).sum();
    assert!((num / den).sqrt() <= 1e-3, "relative change {}", (num / den).sqrt());
    assert!(matches!(m.predict(&[0.0; 7]), Err(Error::InvalidParameter(_)) | Err(Error::GridMismatch(_))));
    let m2 = Model::init(fno2d(true, 2, 1), 8, 0).unwrap();
    assert!(matches!(m2.predict(&[0.0; 100]), Err(Error::GridMismatch(_))));
}

#[test]
fn deeponet_queries_are_consistent() {
    let m = Model::init(ArchSpec::deeponet(8, 3, 5), 16, 2).unwrap();
    let a = smooth(1, 16, 3);
    let grid_out = m.predict(&a).unwrap();
    let coords: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
    assert_eq!(m.deeponet_eval(&a, &coords).unwrap(), grid_out);
    for (i, &q) in coords.iter().enumerate() {
        assert_eq!(m.deeponet_eval(&a, &[q]).unwrap()[0], grid_out[i]);
    }
    assert!(matches!(m.predict(&a[..15]), Err(Error::GridMismatch(_))));
    let fno = Model::init(fno1d(true), 16, 0).unwrap();
    assert!(fno.deeponet_eval(&a, &coords).is_err());
}

#[test]
fn init_is_deterministic_and_scaled() {
    for arch in [fno1d(true), ArchSpec::fno2d(3, 4, 2, 2, 1), ArchSpec::deeponet(8, 2, 4)] {
        let n = if arch.dims() == 2 { 8 } else { 16 };
        let a = Model::init(arch.clone(), n, 7).unwrap();
        let b = Model::init(arch.clone(), n, 7).unwrap();
        let c = Model::init(arch.clone(), n, 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        let y = a.predict(&vec![1.0; a.input_len()]).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
    }
    let m = Model::init(ArchSpec::fno1d(6, 10, 2), 32, 0).unwrap();
    let bound = 1.0 / 60.0;
    for p in m.params() {
        if let Value::Complex(v) = p {
            assert!(v.iter().all(|c| c.re.abs() <= bound && c.im.abs() <= bound));
        }
    }
    assert!(Model::init(ArchSpec::fno1d(17, 4, 1), 32, 0).is_err());
    assert!(Model::init(ArchSpec::fno1d(4, 0, 1), 32, 0).is_err());
}

fn input_fd(model: &Model, x: &[f64], w: &[f64]) -> f64 {
    let f = |p: &[f64]| -> specgrad::Result<f64> {
        let y = model.predict(p)?;
        Ok(y.iter().zip(w).map(|(a, b)| a * b).sum())
    };
    let mut tape = Tape::new();
    let pv = model.register(&mut tape, false);
    let xv = tape.leaf_real(x.to_vec());
    let y = model.forward_on(&mut tape, &pv, xv).unwrap();
    let wv = tape.constant_real(w.to_vec());
    let yw = tape.mul(y, wv).unwrap();
    let l = tape.sum(yw).unwrap();
    let g = tape.backward(l).unwrap().real(xv, x.len());
    fd_check(f, x, &g, 1e-6, 24, 3).unwrap().max_rel_error
}

fn param_fd(model: &Model, x: &[f64], w: &[f64]) -> f64 {
    let eval = |flat: &[f64]| -> (f64, Vec<f64>) {
        let m = Model::from_parts(model.arch().clone(), model.n(), unflatten(model.params(), flat), model.normalizer()).unwrap();
        let mut tape = Tape::new();
        let pv = m.register(&mut tape, true);
        let xv = tape.constant_real(x.to_vec());
        let y = m.forward_on(&mut tape, &pv, xv).unwrap();
        let wv = tape.constant_real(w.to_vec());
        let yw = tape.mul(y, wv).unwrap();
        let l = tape.sum(yw).unwrap();
        let mut g = tape.backward(l).unwrap();
        let grads: Vec<Value> = pv.iter().zip(m.params()).map(|(v, p)| g.take(*v).unwrap_or_else(|| p.zeros_like())).collect();
        (tape.scalar(l), flatten(&grads))
    };
    let p = flatten(model.params());
    let (_, g) = eval(&p);
    fd_check(|q| Ok(eval(q).0), &p, &g, 1e-6, 40, 5).unwrap().max_rel_error
}

#[test]
fn gradients_match_finite_differences() {
    let nz = Some(Normalizer { in_mean: 0.2, in_std: 1.5, out_mean: -0.1, out_std: 0.7 });
    let cases = [(fno1d(true), 16), (fno2d(true, 2, 2), 8), (ArchSpec::deeponet(6, 3, 4), 12)];
    for (arch, n) in cases {
        let mut m = Model::init(arch, n, 11).unwrap();
        m.set_normalizer(nz);
        let x: Vec<f64> = rand_vec(m.input_len(), 12);
        let w = rand_vec(m.output_len(), 13);
        let e_in = input_fd(&m, &x, &w);
        let e_par = param_fd(&m, &x, &w);
        assert!(e_in <= 1e-5, "{}: input gradient error {e_in}", m.arch().name());
        assert!(e_par <= 1e-5, "{}: parameter gradient error {e_par}", m.arch().name());
    }
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    let params = vec![Value::Real(vec![1.0, -2.0]), Value::Complex(vec![Complex64::new(0.5, 0.5)])];
    let grads = vec![Value::Real(vec![3.0, -0.5]), Value::Complex(vec![Complex64::new(-1.0, 2.0)])];
    let mut p = params.clone();
    let mut adam = Adam::new(&p, 0.1, AdamConfig::default());
    adam.step(&mut p, &grads);
    let got = flatten(&p);
    let want = [1.0 - 0.1, -2.0 + 0.1, 0.5 + 0.1, 0.5 - 0.1];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= 1e-7, "{got:?}");
    }
}

fn burgers_samples(count: usize) -> Vec<Sample> {
    let cfg = SolverConfig::burgers(32, 0.01, 1e-3, 0.1);
    let gen = GeneratorSpec::grf(KernelSpec::rbf(1.0, 0.1), Some(RangeSpec::new(0.0, 1.0).unwrap()));
    let d = build_dataset("t", &gen, &cfg, count, 3, None).unwrap();
    samples_from(&ArchSpec::fno1d(8, 8, 2), &d).unwrap()
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let s = burgers_samples(4);
    let m = Model::init(ArchSpec::fno1d(8, 8, 2), 32, 0).unwrap();
    let (t, h) = train(&m, &s, &s[..2], &TrainConfig::new(3, 2, 0.0, 0)).unwrap();
    assert_eq!(t.params(), m.params());
    assert_eq!(h.train.len(), 3);
    assert_eq!(h.val.len(), 3);
    assert!(TrainConfig::new(1, 0, 1e-3, 0).validate().is_err());
}

#[test]
fn training_is_reproducible_and_reduces_loss() {
    let s = burgers_samples(16);
    let m = Model::init(ArchSpec::fno1d(8, 8, 2), 32, 0).unwrap();
    let cfg = TrainConfig::new(30, 4, 3e-3, 9);
    let (a, ha) = train(&m, &s, &[], &cfg).unwrap();
    let (b, hb) = train(&m, &s, &[], &cfg).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(ha, hb);
    assert!(ha.train.last().unwrap() <= &(0.1 * ha.train[0]), "{:?}", ha.train);
}

#[test]
fn single_sample_is_overfit() {
    let s = burgers_samples(1);
    let m = Model::init(ArchSpec::fno1d(8, 8, 2), 32, 0).unwrap();
    let (_, h) = train(&m, &s, &[], &TrainConfig::new(2000, 1, 3e-3, 0)).unwrap();
    assert!(*h.train.last().unwrap() < 1e-4, "final loss {}", h.train.last().unwrap());
}

#[test]
fn non_finite_losses_abort_with_the_epoch() {
    let mut s = burgers_samples(2);
    s[1].target[0] = f64::NAN;
    let m = Model::init(ArchSpec::fno1d(8, 8, 2), 32, 0).unwrap();
    let err = train(&m, &s, &[], &TrainConfig::new(2, 2, 1e-3, 0)).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 0 }), "{err:?}");
}

#[test]
fn frame_windows_for_recurrent_students() {
    let cfg = SolverConfig::ns(8, 1e-3, 0.05, 4.0, ForcingSpec::diagonal());
    let d = build_dataset("ns", &GeneratorSpec::grf(KernelSpec::rbf(1.0, 0.2), None), &cfg, 2, 0, None).unwrap();
    let s = samples_from(&ArchSpec::fno2d(3, 4, 1, 2, 3), &d).unwrap();
    assert_eq!(s[0].input.len(), 2 * 64);
    assert_eq!(s[0].target.len(), 3 * 64);
    assert_eq!(&s[1].input[64..], d.frames[1][1].values());
    assert_eq!(&s[1].target[128..], d.frames[1][4].values());
    let mut direct = ArchSpec::fno2d(3, 4, 1, 2, 3);
    if let ArchSpec::Fno2d { direct: dflag, .. } = &mut direct {
        *dflag = true;
    }
    let s = samples_from(&direct, &d).unwrap();
    assert_eq!(s[0].input, d.frames[0][0].values());
    assert_eq!(s[0].target, d.frames[0][4].values());
    assert!(samples_from(&ArchSpec::fno2d(3, 4, 1, 3, 3), &d).is_err());
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (arch, n) in [(fno1d(true), 16), (fno2d(true, 2, 2), 8), (ArchSpec::deeponet(6, 2, 3), 12)] {
        let mut m = Model::init(arch, n, 5).unwrap();
        m.set_normalizer(Some(Normalizer { in_mean: 0.5, in_std: 0.25, out_mean: 0.1, out_std: 3.0 }));
        let path = dir.path().join(format!("{}.sgno", m.arch().name()));
        save_checkpoint(&path, &m).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.arch(), m.arch());
        assert_eq!(back.normalizer(), m.normalizer());
        let x = rand_vec(m.input_len(), 1);
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
    }
    let m = Model::init(fno1d(false), 16, 0).unwrap();
    let bytes = encode_checkpoint(&m).unwrap();
    assert_eq!(&bytes[..4], b"SGNO");
    let p = std::path::Path::new("m.sgno");
    assert!(matches!(decode_checkpoint(p, &bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
    let mut bad = bytes.clone();
    bad[1] = b'X';
    assert!(matches!(decode_checkpoint(p, &bad), Err(Error::Format { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn equivariance_holds_for_any_shift(seed in 0u64..1000, shift in -31isize..32) {
        let m = Model::init(fno1d(false), 32, seed).unwrap();
        let a = rand_vec(32, seed + 1);
        let got = m.predict(&shift_values(&a, 32, 1, [shift, 0])).unwrap();
        let want = shift_values(&m.predict(&a).unwrap(), 32, 1, [shift, 0]);
        prop_assert!(got.iter().zip(&want).all(|(x, y)| (x - y).abs() <= 1e-10));
    }
}
