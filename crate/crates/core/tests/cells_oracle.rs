mod common;

use common::oracles::{cell_scalar_worst, randomize_biases};
use common::{rng, uniform_vec};
use rand::Rng;
use v2c::cells::{CellKind, CellState, GruParams, LstmParams};
use v2c::numerics::{finite_diff_check, Matrix, ParamSlot};

#[test]
fn lstm_matches_scalar_loops() {
    let worst = cell_scalar_worst(CellKind::Lstm, 11, 1000);
    assert!(worst <= 1e-12, "max deviation {worst:e}");
}

#[test]
fn gru_matches_scalar_loops() {
    let worst = cell_scalar_worst(CellKind::Gru, 12, 1000);
    assert!(worst <= 1e-12, "max deviation {worst:e}");
}

fn vec_slot(name: &str, v: &[f64], g: &[f64]) -> ParamSlot {
    ParamSlot { name: name.to_owned(), value: Matrix::column(v), grad: Matrix::column(g) }
}

/// Loss `a.h + b.c` of one step; gradients w.r.t. params, x, h_prev, c_prev.
fn lstm_trial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (input, hidden) = (r.gen_range(1..=5), r.gen_range(1..=5));
    let mut p = LstmParams::uniform(input, hidden, 1.0, &mut r);
    randomize_biases(p.matrices_mut(), &mut r);
    let x = uniform_vec(&mut r, input, 1.0);
    let prev = CellState { h: uniform_vec(&mut r, hidden, 1.0), c: uniform_vec(&mut r, hidden, 1.0) };
    let a = uniform_vec(&mut r, hidden, 1.0);
    let b = uniform_vec(&mut r, hidden, 1.0);

    let (_, cache) = p.step(&x, &prev).unwrap();
    let mut grads = LstmParams::zeros(input, hidden);
    let sg = p.backward(&cache, &a, &b, &mut grads).unwrap();

    let mut slots: Vec<ParamSlot> = p
        .matrices()
        .into_iter()
        .zip(grads.matrices())
        .map(|((name, v), (_, g))| ParamSlot { name: name.to_owned(), value: v.clone(), grad: g.clone() })
        .collect();
    slots.push(vec_slot("x", &x, &sg.dx));
    slots.push(vec_slot("h_prev", &prev.h, &sg.dh_prev));
    slots.push(vec_slot("c_prev", &prev.c, &sg.dc_prev));

    let mut probe = p.clone();
    let report = finite_diff_check(
        |s| {
            for ((_, m), slot) in probe.matrices_mut().into_iter().zip(s) {
                *m = slot.value.clone();
            }
            let st = CellState { h: s[13].value.data().to_vec(), c: s[14].value.data().to_vec() };
            let (out, _) = probe.step(s[12].value.data(), &st).unwrap();
            out.h.iter().zip(&a).map(|(h, w)| h * w).sum::<f64>() + out.c.iter().zip(&b).map(|(c, w)| c * w).sum::<f64>()
        },
        &mut slots,
        1e-4,
    )
    .unwrap();
    report.max_rel_error
}

fn gru_trial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (input, hidden) = (r.gen_range(1..=5), r.gen_range(1..=5));
    let mut p = GruParams::uniform(input, hidden, 1.0, &mut r);
    randomize_biases(p.matrices_mut(), &mut r);
    let x = uniform_vec(&mut r, input, 1.0);
    let prev = CellState { h: uniform_vec(&mut r, hidden, 1.0), c: Vec::new() };
    let a = uniform_vec(&mut r, hidden, 1.0);

    let (_, cache) = p.step(&x, &prev).unwrap();
    let mut grads = GruParams::zeros(input, hidden);
    let sg = p.backward(&cache, &a, &mut grads).unwrap();
    assert!(sg.dc_prev.is_empty());

    let mut slots: Vec<ParamSlot> = p
        .matrices()
        .into_iter()
        .zip(grads.matrices())
        .map(|((name, v), (_, g))| ParamSlot { name: name.to_owned(), value: v.clone(), grad: g.clone() })
        .collect();
    slots.push(vec_slot("x", &x, &sg.dx));
    slots.push(vec_slot("h_prev", &prev.h, &sg.dh_prev));

    let mut probe = p.clone();
    let report = finite_diff_check(
        |s| {
            for ((_, m), slot) in probe.matrices_mut().into_iter().zip(s) {
                *m = slot.value.clone();
            }
            let st = CellState { h: s[10].value.data().to_vec(), c: Vec::new() };
            let (out, _) = probe.step(s[9].value.data(), &st).unwrap();
            out.h.iter().zip(&a).map(|(h, w)| h * w).sum::<f64>()
        },
        &mut slots,
        1e-4,
    )
    .unwrap();
    report.max_rel_error
}

#[test]
fn lstm_adjoint_matches_finite_differences() {
    let worst = (0..200).map(lstm_trial).fold(0.0, f64::max);
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn gru_adjoint_matches_finite_differences() {
    let worst = (0..200).map(gru_trial).fold(0.0, f64::max);
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn lstm_gates_and_outputs_bounded() {
    let mut r = rng(13);
    for _ in 0..500 {
        let (input, hidden) = (r.gen_range(1..=6), r.gen_range(1..=6));
        let mut p = LstmParams::uniform(input, hidden, 3.0, &mut r);
        randomize_biases(p.matrices_mut(), &mut r);
        let x = uniform_vec(&mut r, input, 5.0);
        let prev = CellState { h: uniform_vec(&mut r, hidden, 1.0), c: uniform_vec(&mut r, hidden, 10.0) };
        let (state, cache) = p.step(&x, &prev).unwrap();
        // open interval in exact arithmetic; f64 saturates to the endpoints
        for gate in [&cache.i, &cache.f, &cache.o] {
            assert!(gate.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(cache.g.iter().chain(&cache.tanh_c).all(|&v| (-1.0..=1.0).contains(&v)));
        assert!(state.h.iter().all(|&v| v.abs() <= 1.0));
    }
}

#[test]
fn gru_state_is_convex_combination() {
    let mut r = rng(14);
    for _ in 0..500 {
        let (input, hidden) = (r.gen_range(1..=6), r.gen_range(1..=6));
        let mut p = GruParams::uniform(input, hidden, 3.0, &mut r);
        randomize_biases(p.matrices_mut(), &mut r);
        let x = uniform_vec(&mut r, input, 5.0);
        let prev = CellState { h: uniform_vec(&mut r, hidden, 4.0), c: Vec::new() };
        let (state, cache) = p.step(&x, &prev).unwrap();
        let prev_inf = prev.h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..hidden {
            let (lo, hi) = (prev.h[k].min(cache.h_tilde[k]), prev.h[k].max(cache.h_tilde[k]));
            assert!(state.h[k] >= lo - 1e-15 && state.h[k] <= hi + 1e-15);
            assert!(state.h[k].abs() <= prev_inf.max(1.0) + 1e-15);
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let mut r = rng(15);
    let p = LstmParams::uniform(4, 5, 0.5, &mut r);
    let g = GruParams::uniform(4, 5, 0.5, &mut r);
    let x = uniform_vec(&mut r, 4, 1.0);
    let prev = CellState { h: uniform_vec(&mut r, 5, 1.0), c: uniform_vec(&mut r, 5, 1.0) };
    assert_eq!(p.step(&x, &prev).unwrap(), p.step(&x, &prev).unwrap());
    let prev_g = CellState { h: prev.h.clone(), c: Vec::new() };
    assert_eq!(g.step(&x, &prev_g).unwrap(), g.step(&x, &prev_g).unwrap());
}
