//! Analytic BPTT gradients against central finite differences of the loss.

use lbo_core::neural::{mse_loss, ModelKind, SequenceModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
const FLOOR: f64 = 1e-5;

struct Case {
    model: SequenceModel,
    windows: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

fn random_case(kind: ModelKind, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(1..=4);
    let n = rng.gen_range(1..=4);
    let p = rng.gen_range(1..=3);
    let t_x = rng.gen_range(1..=6);
    let mut model = SequenceModel::new(kind, t_x, m, n, p).unwrap();
    for s in model.params.slices_mut() {
        s.iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
    }
    // keep the ReLU units away from their kink
    for b in model.params.head.b_d.iter_mut() {
        *b = rng.gen_range(0.2..0.8) * if rng.gen_bool(0.8) { 1.0 } else { -1.0 };
    }
    let batch = rng.gen_range(1..=4);
    let windows = (0..batch)
        .map(|_| (0..t_x).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let targets = (0..batch).map(|_| rng.gen_range(0.0..1.0)).collect();
    Case {
        model,
        windows,
        targets,
    }
}

fn loss(model: &SequenceModel, case: &Case) -> f64 {
    let preds: Vec<f64> = case.windows.iter().map(|w| model.predict(w).unwrap()).collect();
    mse_loss(&preds, &case.targets).unwrap()
}

/// Returns the worst relative error over every parameter.
fn check(case: &Case) -> f64 {
    let tapes: Vec<_> = case.windows.iter().map(|w| case.model.forward(w).unwrap().1).collect();
    let grads = case.model.backward(&tapes, &case.targets).unwrap();
    let analytic: Vec<f64> = grads.slices().iter().flat_map(|s| s.iter().copied()).collect();

    let mut probe = case.model.clone();
    let mut worst = 0.0f64;
    let mut idx = 0;
    for block in 0..8 {
        let len = probe.params.slices()[block].len();
        for i in 0..len {
            let orig = probe.params.slices()[block][i];
            probe.params.slices_mut()[block][i] = orig + STEP;
            let up = loss(&probe, case);
            probe.params.slices_mut()[block][i] = orig - STEP;
            let down = loss(&probe, case);
            probe.params.slices_mut()[block][i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    worst
}

#[test]
fn lstm_gradients_match_finite_differences() {
    for seed in 0..20 {
        let worst = check(&random_case(ModelKind::Lstm, seed));
        assert!(worst < REL_TOL, "seed {seed}: relative error {worst:e}");
    }
}

#[test]
fn rnn_gradients_match_finite_differences() {
    for seed in 100..120 {
        let worst = check(&random_case(ModelKind::Rnn, seed));
        assert!(worst < REL_TOL, "seed {seed}: relative error {worst:e}");
    }
}

#[test]
fn spec_sized_models_match() {
    // m = n = 3, p = 2, t_x = 5
    for (kind, seed) in [(ModelKind::Lstm, 7u64), (ModelKind::Rnn, 8)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = SequenceModel::new(kind, 5, 3, 3, 2).unwrap();
        model.params.init_uniform(&mut rng);
        model.params.head.b_d = vec![0.3, 0.5];
        let windows: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.gen()).collect()).collect();
        let case = Case {
            model,
            windows,
            targets: vec![0.2, 0.9, 0.4],
        };
        assert!(check(&case) < REL_TOL);
    }
}
