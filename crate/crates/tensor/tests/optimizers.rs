use agf_tensor::{OptimizerKind, OptimizerState, Tensor};

fn run(kind: OptimizerKind, steps: usize) -> Vec<f64> {
    // f(p) = p², ∇f = 2p, starting from p = 1.
    let mut opt = OptimizerState::<f64>::new(kind);
    let mut p = vec![Tensor::scalar(1.0)];
    let mut trace = Vec::new();
    for _ in 0..steps {
        let g = vec![Tensor::scalar(2.0 * p[0].item())];
        opt.step(&mut p, &g).unwrap();
        trace.push(p[0].item());
    }
    trace
}

#[test]
fn nesterov_two_steps_match_hand_unrolled_recurrence() {
    // v1 = 0.9·0 − 0.1·2        = −0.2
    // p1 = 1 + 0.9·v1 − 0.1·2   = 0.62
    // v2 = 0.9·v1 − 0.1·1.24    = −0.304
    // p2 = 0.62 + 0.9·v2 − 0.124 = 0.2224
    let trace = run(OptimizerKind::SgdNesterov { lr: 0.1, momentum: 0.9 }, 2);
    assert!((trace[0] - 0.62).abs() < 1e-12);
    assert!((trace[1] - 0.2224).abs() < 1e-12);
}

#[test]
fn adam_three_steps_match_hand_unrolled_recurrence() {
    let (lr, b1, b2, eps) = (0.1f64, 0.5f64, 0.999f64, 1e-8f64);
    let mut p = 1.0f64;
    let (mut m, mut v) = (0.0f64, 0.0f64);
    let mut oracle = Vec::new();
    for t in 1..=3 {
        let g = 2.0 * p;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mhat = m / (1.0 - b1.powi(t));
        let vhat = v / (1.0 - b2.powi(t));
        p -= lr * mhat / (vhat.sqrt() + eps);
        oracle.push(p);
    }
    // Frozen values of the recurrence above.
    let frozen = [0.9000000005, 0.8018876030811648, 0.7069713135659215];
    for (a, b) in oracle.iter().zip(frozen) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    let trace = run(OptimizerKind::Adam { lr, beta1: b1, beta2: b2, epsilon: eps }, 3);
    for (a, b) in trace.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn steps_are_deterministic_and_counted() {
    let a = run(OptimizerKind::adam(0.01), 10);
    let b = run(OptimizerKind::adam(0.01), 10);
    assert_eq!(a, b);
    let mut opt = OptimizerState::<f32>::new(OptimizerKind::nesterov(0.01));
    let mut p = vec![Tensor::zeros(&[4])];
    for i in 1..=3 {
        opt.step(&mut p, &[Tensor::full(&[4], 1.0)]).unwrap();
        assert_eq!(opt.steps(), i);
    }
}
