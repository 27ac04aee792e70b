//! Criteria checked against closed forms, brute force and finite differences.

use std::f64::consts::PI;

use num_complex::Complex64;
use specgrad::adv_train::{batch_by_batch, AdvTrainConfig, PoolPolicy, Variant};
use specgrad::attack::{
    attack, norm_inf, norm_l2, pgd_adam, AttackConfig, GradMode, LossEval, Method, Norm, Objective, Pipeline,
    TeacherStudent,
};
use specgrad::dataset::{build_dataset, GeneratorSpec};
use specgrad::diff::{dot_product_test, fd_check, Tape, Value};
use specgrad::grf::{sample_grf, spectral_density, KernelSpec, RangeSpec};
use specgrad::losses::{dtw_hard, softdtw, LossSpec};
use specgrad::operators::{samples_from, train, ArchSpec, Model, Normalizer, TrainConfig};
use specgrad::solvers::{ns_step, ForcingSpec, Scheme, Solver, SolverConfig};
use specgrad::spectral::{
    dealias, enstrophy, fft_forward, fft_inverse, make_grid, poisson_stream, shift_values, spectral_derivative,
    velocity_from_stream, Field,
};
use specgrad::Result;

use crate::util::{max_diff, rand_vec, Outcome};

pub fn c1_solvers() -> Result<Outcome> {
    let mut o = Outcome::new();

    let mut worst: f64 = 0.0;
    for (nu, dt) in [(0.01, 1e-3), (0.1, 0.05), (0.0, 0.01)] {
        let s = Solver::new(&SolverConfig::burgers(64, nu, dt, 100.0 * dt))?;
        let out = s.final_state(&Field::constant(s.grid().clone(), 0.7))?;
        worst = worst.max(out.values().iter().fold(0.0f64, |m, v| m.max((v - 0.7).abs())));
    }
    o.check("burgers constant state", worst, 1e-12);

    let (nu, dt, k, amp) = (0.01, 1e-3, 3.0, 1.3);
    let s = Solver::new(&SolverConfig::burgers(64, nu, dt, 100.0 * dt))?.without_advection();
    let a = Field::from_fn(s.grid().clone(), |x, _| amp * (2.0 * PI * k * x).sin());
    let out = s.final_state(&a)?;
    let kappa2 = (2.0 * PI * k).powi(2);
    let r = (1.0 - 0.5 * dt * nu * kappa2) / (1.0 + 0.5 * dt * nu * kappa2);
    let want: Vec<f64> = a.values().iter().map(|v| v * r.powi(100)).collect();
    o.check("CN decay over 100 steps", max_diff(out.values(), &want), 1e-10);

    let mut fixed = true;
    for scheme in [Scheme::CnEuler, Scheme::Ab2cn] {
        let mut cfg = SolverConfig::ns(32, 1e-3, 0.01, 1.0, ForcingSpec::none());
        cfg.scheme = scheme;
        let s = Solver::new(&cfg)?;
        fixed &= s.final_state(&Field::zeros(s.grid().clone()))?.values().iter().all(|&v| v == 0.0);
        let z = vec![Complex64::default(); s.grid().modes()];
        fixed &= ns_step(&s, &z, None)?.0.iter().all(|c| c.norm() == 0.0);
    }
    o.flag("NS zero state fixed", fixed);

    // largest relative step-to-step enstrophy increase; ≤ 1e-12 means monotone
    let mut rise: f64 = 0.0;
    let g = make_grid(2, 32, 1.0)?;
    let shell = Field::from_fn(g.clone(), |x, y| {
        (2.0 * PI * (3.0 * x + 4.0 * y)).sin() + 0.7 * (2.0 * PI * 5.0 * x).cos() - 0.4 * (2.0 * PI * (4.0 * x - 3.0 * y)).cos()
    });
    let random = sample_grf(&KernelSpec::matern(1.0, 0.2, 2.5), &g, 5, 1)?.remove(0);
    for scheme in [Scheme::CnEuler, Scheme::Ab2cn] {
        for (a, advect, dt, steps) in [(&shell, true, 0.01, 50), (&random, false, 0.01, 50), (&random, true, 1e-3, 200)] {
            let mut cfg = SolverConfig::ns(32, 1e-3, dt, steps as f64 * dt, ForcingSpec::none());
            cfg.scheme = scheme;
            cfg.snapshots = (0..=steps).map(|k| k as f64 * dt).collect();
            let mut s = Solver::new(&cfg)?;
            if !advect {
                s = s.without_advection();
            }
            let e: Vec<f64> = s.solve(a)?.frames.iter().map(enstrophy).collect();
            for w in e.windows(2) {
                rise = rise.max((w[1] - w[0]) / w[0]);
            }
        }
    }
    o.check("unforced enstrophy rise", rise, 1e-12);
    Ok(o)
}

/// Direct DFT of a real field on a 1D or 2D grid, full index layout.
fn dft(f: &Field) -> Vec<Complex64> {
    let n = f.grid().n();
    let dims = f.grid().dims();
    let v = f.values();
    let w = |k: usize, j: usize| Complex64::from_polar(1.0, -2.0 * PI * (k * j % n) as f64 / n as f64);
    if dims == 1 {
        (0..n).map(|k| (0..n).map(|j| v[j] * w(k, j)).sum()).collect()
    } else {
        let mut out = vec![Complex64::default(); n * n];
        for kx in 0..n {
            for ky in 0..n {
                let mut s = Complex64::default();
                for jx in 0..n {
                    for jy in 0..n {
                        s += v[jx * n + jy] * w(kx, jx) * w(ky, jy);
                    }
                }
                out[kx * n + ky] = s;
            }
        }
        out
    }
}

/// Product of two band-limited fields by explicit convolution of their
/// spectra, truncated to the 2/3 band per axis.
fn brute_truncated_product(a: &Field, b: &Field) -> Vec<f64> {
    let n = a.grid().n();
    let dims = a.grid().dims();
    let (fa, fb) = (dft(a), dft(b));
    let signed = |i: usize| if i < n / 2 { i as i64 } else { i as i64 - n as i64 };
    let wrap = |k: i64| k.rem_euclid(n as i64) as usize;
    let cut = (n / 3) as i64;
    let pts = a.values().len();
    let mut conv = vec![Complex64::default(); pts];
    let ks: Vec<Vec<i64>> = (0..pts)
        .map(|i| if dims == 1 { vec![signed(i)] } else { vec![signed(i / n), signed(i % n)] })
        .collect();
    for (p, kp) in ks.iter().enumerate() {
        for (q, kq) in ks.iter().enumerate() {
            let k: Vec<i64> = kp.iter().zip(kq).map(|(x, y)| x + y).collect();
            if k.iter().all(|c| c.abs() <= cut) {
                let idx = if dims == 1 { wrap(k[0]) } else { wrap(k[0]) * n + wrap(k[1]) };
                conv[idx] += fa[p] * fb[q] / pts as f64;
            }
        }
    }
    // inverse by direct summation
    (0..pts)
        .map(|j| {
            let xj: Vec<usize> = if dims == 1 { vec![j] } else { vec![j / n, j % n] };
            ks.iter()
                .enumerate()
                .map(|(i, k)| {
                    let phase: f64 = k.iter().zip(&xj).map(|(kk, x)| (*kk * *x as i64) as f64).sum();
                    conv[i] * Complex64::from_polar(1.0, 2.0 * PI * phase / n as f64)
                })
                .sum::<Complex64>()
                .re
                / pts as f64
        })
        .collect()
}

pub fn c2_spectral() -> Result<Outcome> {
    let mut o = Outcome::new();
    let mut rt: f64 = 0.0;
    for (dims, n) in [(1, 8), (1, 64), (1, 250), (2, 16), (2, 64)] {
        let g = make_grid(dims, n, 1.0)?;
        let f = Field::new(g.clone(), rand_vec(g.points(), n as u64))?;
        let back = fft_inverse(&fft_forward(&f)?);
        rt = rt.max(max_diff(back.values(), f.values()));
    }
    o.check("transform round trip", rt, 1e-12);

    // the inclusive floor(n/3) band is alias-free only when 3 does not divide n
    let mut conv: f64 = 0.0;
    for (dims, n) in [(1, 8), (1, 10), (1, 14), (1, 16), (2, 8), (2, 10), (2, 16)] {
        let g = make_grid(dims, n, 1.0)?;
        let band = |seed| -> Result<Field> {
            let f = Field::new(g.clone(), rand_vec(g.points(), seed))?;
            Ok(fft_inverse(&dealias(&fft_forward(&f)?)))
        };
        let (a, b) = (band(1)?, band(2)?);
        let prod: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
        let d = fft_inverse(&dealias(&fft_forward(&Field::new(g.clone(), prod)?)?));
        conv = conv.max(max_diff(d.values(), &brute_truncated_product(&a, &b)));
    }
    o.check("dealiased product vs convolution", conv, 1e-12);

    let mut div: f64 = 0.0;
    let mut lap: f64 = 0.0;
    for n in [16, 32, 64] {
        let g = make_grid(2, n, 1.0)?;
        let w = sample_grf(&KernelSpec::rbf(1.0, 0.1), &g, n as u64, 1)?.remove(0);
        let w = Field::new(g.clone(), w.values().iter().map(|v| v - w.mean()).collect())?;
        let psi = poisson_stream(&fft_forward(&w)?)?;
        let (u, v) = velocity_from_stream(&psi)?;
        let du = fft_inverse(&spectral_derivative(&u, 0, 1)?);
        let dv = fft_inverse(&spectral_derivative(&v, 1, 1)?);
        div = div.max(du.values().iter().zip(dv.values()).fold(0.0f64, |m, (a, b)| m.max((a + b).abs())));
        // −Δψ recovers ω
        let pxx = fft_inverse(&spectral_derivative(&psi, 0, 2)?);
        let pyy = fft_inverse(&spectral_derivative(&psi, 1, 2)?);
        let rec: Vec<f64> = pxx.values().iter().zip(pyy.values()).map(|(a, b)| -(a + b)).collect();
        lap = lap.max(max_diff(&rec, w.values()));
    }
    o.check("velocity divergence", div, 1e-12);
    o.check("-Δψ = ω", lap, 1e-12);
    Ok(o)
}

fn solve_map(solver: &Solver, x: &[f64]) -> Result<Vec<f64>> {
    let mut t = Tape::new();
    let a = t.constant_real(x.to_vec());
    let out = solver.solve_on(&mut t, a)?.output;
    Ok(t.real(out).to_vec())
}

fn solve_vjp(solver: &Solver, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let mut t = Tape::new();
    let a = t.leaf_real(x.to_vec());
    let out = solver.solve_on(&mut t, a)?.output;
    Ok(t.vjp(out, Value::Real(w.to_vec()))?.real(a, x.len()))
}

/// Dot-product gap and finite-difference error of `‖solve(x) − target‖²`.
fn solver_checks(solver: &Solver, x: &[f64], step: f64) -> Result<(f64, f64)> {
    let dot = dot_product_test(|p| solve_map(solver, p), |p, w| solve_vjp(solver, p, w), x, step, 3)?;
    let target = rand_vec(x.len(), 99);
    let loss = |p: &[f64]| -> Result<f64> {
        Ok(solve_map(solver, p)?.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum())
    };
    let seed: Vec<f64> = solve_map(solver, x)?.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
    let grad = solve_vjp(solver, x, &seed)?;
    let fd = fd_check(loss, x, &grad, step, 24, 5)?;
    Ok((dot, fd.max_rel_error))
}

/// Finite-difference error of `w · model(x)` in the input and in the parameters.
fn model_checks(model: &Model, x: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let weighted = |m: &Model, tape: &mut Tape, pv: &[specgrad::diff::Var], xv| -> Result<specgrad::diff::Var> {
        let y = m.forward_on(tape, pv, xv)?;
        let wv = tape.constant_real(w.to_vec());
        let yw = tape.mul(y, wv)?;
        tape.sum(yw)
    };
    let f = |p: &[f64]| -> Result<f64> { Ok(model.predict(p)?.iter().zip(w).map(|(a, b)| a * b).sum()) };
    let mut tape = Tape::new();
    let pv = model.register(&mut tape, false);
    let xv = tape.leaf_real(x.to_vec());
    let l = weighted(model, &mut tape, &pv, xv)?;
    let g = tape.backward(l)?.real(xv, x.len());
    let e_in = fd_check(f, x, &g, 1e-6, 24, 3)?.max_rel_error;

    let flatten = |params: &[Value]| -> Vec<f64> {
        params
            .iter()
            .flat_map(|p| match p {
                Value::Real(v) => v.clone(),
                Value::Complex(v) => v.iter().flat_map(|c| [c.re, c.im]).collect(),
            })
            .collect()
    };
    let unflatten = |flat: &[f64]| -> Vec<Value> {
        let mut k = 0;
        model
            .params()
            .iter()
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
    };
    let eval = |flat: &[f64]| -> Result<(f64, Vec<f64>)> {
        let m = Model::from_parts(model.arch().clone(), model.n(), unflatten(flat), model.normalizer())?;
        let mut tape = Tape::new();
        let pv = m.register(&mut tape, true);
        let xv = tape.constant_real(x.to_vec());
        let l = weighted(&m, &mut tape, &pv, xv)?;
        let mut g = tape.backward(l)?;
        let grads: Vec<Value> = pv.iter().zip(m.params()).map(|(v, p)| g.take(*v).unwrap_or_else(|| p.zeros_like())).collect();
        Ok((tape.scalar(l), flatten(&grads)))
    };
    let p = flatten(model.params());
    let (_, gp) = eval(&p)?;
    let e_par = fd_check(|q| Ok(eval(q)?.0), &p, &gp, 1e-6, 40, 5)?.max_rel_error;
    Ok((e_in, e_par))
}

fn softdtw_check(n: usize, m: usize, gamma: f64, seed: u64) -> Result<f64> {
    let eval = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut t = Tape::new();
        let xv = t.leaf_real(p[..n].to_vec());
        let yv = t.leaf_real(p[n..].to_vec());
        let l = t.softdtw(xv, yv, gamma)?;
        let g = t.backward(l)?;
        let mut out = g.real(xv, n);
        out.extend(g.real(yv, m));
        Ok((t.scalar(l), out))
    };
    let p = rand_vec(n + m, seed);
    let (_, grad) = eval(&p)?;
    Ok(fd_check(|q| Ok(eval(q)?.0), &p, &grad, 1e-7, n + m, seed)?.max_rel_error)
}

fn smooth(dims: usize, n: usize, seed: u64) -> Result<Vec<f64>> {
    let g = make_grid(dims, n, 1.0)?;
    Ok(sample_grf(&KernelSpec::rbf(1.0, 0.15), &g, seed, 1)?.remove(0).into_values())
}

pub fn c3_adjoints() -> Result<Outcome> {
    let mut o = Outcome::new();
    let tol = 1e-5;

    let burgers = Solver::new(&SolverConfig::burgers(64, 0.01, 1e-3, 10.0 * 1e-3))?;
    let x: Vec<f64> = smooth(1, 64, 1)?.iter().map(|v| 0.5 + 0.5 * v).collect();
    let (dot, fd) = solver_checks(&burgers, &x, 1e-5)?;
    o.check("burgers n=64 10 steps dot", dot, tol);
    o.check("burgers n=64 10 steps fd", fd, tol);

    let mut cfg = SolverConfig::ns(32, 1e-3, 0.01, 0.02, ForcingSpec::diagonal());
    cfg.snapshots.clear();
    let ns = Solver::new(&cfg)?;
    let x = smooth(2, 32, 2)?;
    let (dot, fd) = solver_checks(&ns, &x, 1e-4)?;
    o.check("NS n=32 2 steps dot", dot, tol);
    o.check("NS n=32 2 steps fd", fd, tol);

    let nz = Some(Normalizer { in_mean: 0.2, in_std: 1.5, out_mean: -0.1, out_std: 0.7 });
    for (arch, n) in [(ArchSpec::fno1d(6, 6, 2), 16), (ArchSpec::deeponet(6, 3, 4), 12)] {
        let name = arch.name();
        let mut m = Model::init(arch, n, 11)?;
        m.set_normalizer(nz);
        let x = rand_vec(m.input_len(), 12);
        let w = rand_vec(m.output_len(), 13);
        let (e_in, e_par) = model_checks(&m, &x, &w)?;
        o.check(&format!("{name} input fd"), e_in, tol);
        o.check(&format!("{name} parameter fd"), e_par, tol);
    }

    let worst = [(3, 4, 1), (6, 6, 2), (8, 5, 3)]
        .iter()
        .map(|&(n, m, s)| softdtw_check(n, m, 0.01, s))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    o.check("soft-DTW γ=0.01 fd", worst, tol);
    Ok(o)
}

/// Translation-averaged empirical autocovariance against the dense circulant
/// law: worst relative error over entries above a tenth of the variance.
fn mc_covariance(kernel: &KernelSpec, dims: usize, n: usize, samples: usize) -> Result<f64> {
    let g = make_grid(dims, n, 1.0)?;
    let pts = g.points();
    // dense law: C = F⁻¹ diag(λ) F, evaluated as the first row of the circulant
    let lam_half = spectral_density(kernel, &g)?;
    let h = n / 2 + 1;
    let lam = |i: usize| -> f64 {
        if dims == 1 {
            lam_half[if i <= n / 2 { i } else { n - i }]
        } else {
            let (a, b) = (i / n, i % n);
            let (a, b) = if b <= n / 2 { (a, b) } else { ((n - a) % n, n - b) };
            lam_half[a * h + b]
        }
    };
    let row: Vec<f64> = (0..pts)
        .map(|m| {
            (0..pts)
                .map(|k| {
                    let phase = if dims == 1 {
                        (k * m) as f64 / n as f64
                    } else {
                        ((k / n) * (m / n) + (k % n) * (m % n)) as f64 / n as f64
                    };
                    lam(k) * (2.0 * PI * phase).cos()
                })
                .sum::<f64>()
                / pts as f64
        })
        .collect();
    let shift = |i: usize, m: usize| -> usize {
        if dims == 1 {
            (i + m) % n
        } else {
            ((i / n + m / n) % n) * n + (i % n + m % n) % n
        }
    };
    let lags: Vec<usize> = (0..pts).filter(|&m| row[m].abs() > 0.1 * row[0]).collect();
    let mut emp = vec![0.0; lags.len()];
    for chunk in 0..samples.div_ceil(5000) {
        let count = 5000.min(samples - chunk * 5000);
        for f in sample_grf(kernel, &g, 1000 + chunk as u64, count)? {
            let v = f.values();
            for (e, &m) in emp.iter_mut().zip(&lags) {
                *e += (0..pts).map(|i| v[i] * v[shift(i, m)]).sum::<f64>() / pts as f64;
            }
        }
    }
    Ok(emp
        .iter()
        .zip(&lags)
        .map(|(e, &m)| (e / samples as f64 - row[m]).abs() / row[m].abs())
        .fold(0.0, f64::max))
}

pub fn c4_grf_law() -> Result<Outcome> {
    let mut o = Outcome::new();
    for (name, kernel) in [("rbf", KernelSpec::rbf(1.0, 0.2)), ("matern-1.5", KernelSpec::matern(1.0, 0.2, 1.5))] {
        for dims in [1, 2] {
            let e = mc_covariance(&kernel, dims, 16, 50_000)?;
            o.check(&format!("{name} {dims}D covariance"), e, 0.05);
        }
    }
    Ok(o)
}

fn all_path_costs(x: &[f64], y: &[f64]) -> Vec<f64> {
    fn walk(x: &[f64], y: &[f64], i: usize, j: usize, acc: f64, out: &mut Vec<f64>) {
        let acc = acc + (x[i] - y[j]).powi(2);
        if i + 1 == x.len() && j + 1 == y.len() {
            out.push(acc);
            return;
        }
        if i + 1 < x.len() {
            walk(x, y, i + 1, j, acc, out);
        }
        if j + 1 < y.len() {
            walk(x, y, i, j + 1, acc, out);
        }
        if i + 1 < x.len() && j + 1 < y.len() {
            walk(x, y, i + 1, j + 1, acc, out);
        }
    }
    let mut out = Vec::new();
    walk(x, y, 0, 0, 0.0, &mut out);
    out
}

pub fn c5_softdtw() -> Result<Outcome> {
    let mut o = Outcome::new();
    let mut limit: f64 = 0.0;
    let mut monotone = true;
    for (n, seed) in [(1, 0), (2, 1), (4, 2), (5, 3), (6, 4)] {
        let (x, y) = (rand_vec(n, seed), rand_vec(n, seed + 50));
        let best = all_path_costs(&x, &y).into_iter().fold(f64::INFINITY, f64::min);
        let soft = softdtw(&x, &y, 1e-4)?;
        limit = limit.max((soft - best).abs() / best.abs().max(1e-12));
        limit = limit.max((dtw_hard(&x, &y)? - best).abs() / best.abs().max(1e-12));
        let gammas = [1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0];
        let vals = gammas.iter().map(|&g| softdtw(&x, &y, g)).collect::<Result<Vec<_>>>()?;
        monotone &= vals.windows(2).all(|w| w[1] <= w[0]);
    }
    o.check("γ=1e-4 vs enumerated paths", limit, 1e-2);
    o.flag("non-increasing in γ", monotone);
    let worst = [(2, 3, 7), (6, 6, 8)]
        .iter()
        .map(|&(n, m, s)| softdtw_check(n, m, 0.01, s))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    o.check("gradient fd", worst, 1e-5);
    Ok(o)
}

fn linear(w: Vec<f64>) -> impl Fn(&[f64]) -> Result<LossEval> + Sync {
    move |x: &[f64]| {
        Ok(LossEval {
            loss: x.iter().zip(&w).map(|(a, b)| a * b).sum(),
            grad: w.clone(),
            ..Default::default()
        })
    }
}

fn quadratic(c: Vec<f64>) -> impl Fn(&[f64]) -> Result<LossEval> + Sync {
    move |x: &[f64]| {
        let d: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
        Ok(LossEval {
            loss: d.iter().map(|v| v * v).sum(),
            grad: d.iter().map(|v| 2.0 * v).collect(),
            ..Default::default()
        })
    }
}

pub fn c6_pgd() -> Result<Outcome> {
    let mut o = Outcome::new();
    let mut excess: f64 = 0.0;
    for seed in 0..60u64 {
        let (norm, method) = [(Norm::Inf, Method::Pgd), (Norm::L2, Method::Pgd), (Norm::L2, Method::Adam)][seed as usize % 3];
        let eps = 0.1 + (seed % 7) as f64 * 0.3;
        let mut cfg = AttackConfig::new(norm, method, eps, 0.05 + (seed % 5) as f64 * 0.7, 8);
        cfg.random_start = seed % 2 == 0;
        cfg.seed = seed;
        let x0 = rand_vec(12, seed);
        let r = attack(&x0, &quadratic(rand_vec(12, seed + 1000)), &cfg)?;
        for s in &r.records {
            excess = excess.max(s.radius - eps);
        }
        let d: Vec<f64> = r.final_input.iter().zip(&x0).map(|(a, b)| a - b).collect();
        excess = excess.max(match norm {
            Norm::Inf => norm_inf(&d),
            Norm::L2 => norm_l2(&d),
        } - eps);
    }
    o.check("largest radius overshoot", excess.max(0.0), 1e-12);

    // tiny Adam direction: no normalization, the raw direction is applied
    let g = vec![1e-24, -1e-24];
    let x0 = vec![1.0, 2.0];
    let r = pgd_adam(&x0, &linear(g.clone()), &AttackConfig::new(Norm::L2, Method::Adam, 1.0, 0.5, 1))?;
    let d: Vec<f64> = g.iter().map(|v| v / (v.abs() + 1e-8)).collect();
    let skipped = norm_l2(&d) < 1e-12 && r.final_input.iter().zip(&x0).zip(&d).all(|((x, c), di)| *x == c + 0.5 * di);
    o.flag("normalization skipped below 1e-12", skipped);

    // an oversized step lands on the sphere along the step direction
    let g = rand_vec(8, 4);
    let x0 = rand_vec(8, 5);
    let r = pgd_adam(&x0, &linear(g.clone()), &AttackConfig::new(Norm::L2, Method::Adam, 0.3, 5.0, 1))?;
    let nd = norm_l2(&r.perturbation);
    let d: Vec<f64> = g.iter().map(|v| v / (v.abs() + 1e-8)).collect();
    let cos = r.perturbation.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / (nd * norm_l2(&d));
    o.check("radial projection", (nd - 0.3).abs().max((cos - 1.0).abs()), 1e-12);

    let solver = SolverConfig::burgers(32, 0.02, 1e-3, 0.02);
    let gen = GeneratorSpec::grf(KernelSpec::rbf(1.0, 0.15), Some(RangeSpec::new(0.0, 1.0)?));
    let data = build_dataset("train", &gen, &solver, 8, 1, None)?;
    let model = Model::init(ArchSpec::fno1d(4, 4, 1), 32, 0)?;
    let cfg = AdvTrainConfig {
        variant: Variant::BatchByBatch,
        rounds: 1,
        policy: PoolPolicy::Replace,
        fraction: 1.0,
        mode: GradMode::WithSolver,
        loss: LossSpec::mse(),
        constant_range: [0.0, 0.0],
        seed: 1,
        train: TrainConfig::new(3, 4, 1e-2, 3),
        attack: AttackConfig::new(Norm::L2, Method::Pgd, 0.0, 0.2, 3),
    };
    let adv = batch_by_batch(&model, &data, &solver, &cfg)?;
    let (plain, h) = train(&model, &samples_from(model.arch(), &data)?, &[], &cfg.train)?;
    o.flag("ε=0 adversarial training is plain training", adv.model.params() == plain.params() && adv.history.train == h.train);
    Ok(o)
}

pub fn c9_shift() -> Result<Outcome> {
    let mut o = Outcome::new();
    let tol = 1e-5;

    let solver = Solver::new(&SolverConfig::burgers(32, 0.02, 1e-3, 0.02))?;
    let model = Model::init(ArchSpec::fno1d(6, 6, 2), 32, 1)?;
    let x: Vec<f64> = smooth(1, 32, 3)?;
    let e = shift_error(&model, &solver, Pipeline::Direct { mode: GradMode::WithSolver }, &x, 32, 1, [7, 0])?;
    o.check("burgers FNO-1D gradient", e, tol);

    // diagonal forcing is invariant under shifts along (1, -1)
    let cfg = SolverConfig::ns(16, 1e-3, 0.05, 2.0, ForcingSpec::diagonal());
    let solver = Solver::new(&cfg)?;
    let mut arch = ArchSpec::fno2d(4, 4, 2, 2, 1);
    if let ArchSpec::Fno2d { coords, .. } = &mut arch {
        *coords = false;
    }
    let model = Model::init(arch, 16, 2)?;
    let x = smooth(2, 16, 4)?;
    let pipe = Pipeline::Frames { modes: vec![GradMode::WithSolver; 2] };
    let e = shift_error(&model, &solver, pipe, &x, 16, 2, [5, -5])?;
    o.check("forced NS FNO-2D gradient", e, tol);
    let e = shift_error(&model, &Solver::new(&SolverConfig { forcing: ForcingSpec::none(), ..cfg })?, Pipeline::Frames { modes: vec![GradMode::WithSolver; 2] }, &x, 16, 2, [3, 6])?;
    o.check("unforced NS FNO-2D gradient", e, tol);
    Ok(o)
}

/// Gap between the gradient at a shifted input and the shifted gradient,
/// relative to the gradient's largest entry.
fn shift_error(model: &Model, solver: &Solver, pipe: Pipeline, x: &[f64], n: usize, dims: usize, s: [isize; 2]) -> Result<f64> {
    let grad = |x0: &[f64]| -> Result<Vec<f64>> {
        Ok(TeacherStudent::new(model, solver, LossSpec::mse(), pipe.clone(), None, x0)?.eval(x0)?.grad)
    };
    let g = grad(x)?;
    let xs = shift_values(x, n, dims, s);
    let gs = grad(&xs)?;
    Ok(max_diff(&gs, &shift_values(&g, n, dims, s)) / norm_inf(&g))
}
