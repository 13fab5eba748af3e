mod common;

use common::checks::{gradient_error, LossKind, FD_TOL, POINTS};
use nalgebra::DVector;
use pcagan::netcore::{AdamSettings, AdamState, LinearDiscriminator};
use pcagan::regularizers::{DiscriminatorObjective, DiscriminatorSample};

fn worst(kind: LossKind) -> f64 {
    (0..POINTS as u64).map(|p| gradient_error(kind, p)).fold(0.0, f64::max)
}

#[test]
fn adversarial_generator_gradient() {
    assert!(worst(LossKind::Adversarial) < FD_TOL);
}

#[test]
fn l1_gradient() {
    assert!(worst(LossKind::L1) < FD_TOL);
}

#[test]
fn sd_reward_gradient() {
    assert!(worst(LossKind::SdReward) < FD_TOL);
}

#[test]
fn rc_total_gradient() {
    assert!(worst(LossKind::RcTotal) < FD_TOL);
}

#[test]
fn evec_gradient() {
    let w = worst(LossKind::Evec);
    assert!(w < FD_TOL, "{w}");
}

#[test]
fn eval_gradient() {
    let w = worst(LossKind::Eval);
    assert!(w < FD_TOL, "{w}");
}

#[test]
fn pca_total_gradient() {
    assert!(worst(LossKind::PcaTotal) < FD_TOL);
}

#[test]
fn critic_gradient_penalty() {
    assert!(worst(LossKind::CriticPenalty) < FD_TOL);
}

// From a zero critic the penalty pulls |w_x| towards 1 along the direction of
// the Wasserstein gradient; worked out by hand for d = 2.
#[test]
fn critic_first_gradient_by_hand() {
    let x = DVector::from_vec(vec![1.0, 2.0]);
    let y = DVector::from_vec(vec![0.5, -0.5]);
    let fakes = vec![DVector::from_vec(vec![0.0, 1.0]), DVector::from_vec(vec![2.0, 1.0])];
    let sample = DiscriminatorSample::new(x, y, fakes, 0.25);
    let obj = DiscriminatorObjective {
        dim: 2,
        gp_weight: 10.0,
        samples: vec![sample],
    };
    let mut critic = LinearDiscriminator::zeros(2).unwrap();
    critic.set_w(&DVector::from_vec(vec![0.6, 0.8, 0.3, 0.1]));
    critic.set_bias(0.7);
    let (value, grad, (wass, gp)) = obj.evaluate(critic.params().values());
    // mean fake = (1, 1); x - mean fake = (0, 1); |w_x| = 1 so no penalty.
    assert!((wass - -0.8).abs() < 1e-15);
    assert_eq!(gp, 0.0);
    assert!((value - wass).abs() < 1e-15);
    assert_eq!(grad, vec![0.0, -1.0, 0.0, 0.0, 0.0]);

    critic.set_w(&DVector::from_vec(vec![1.2, 1.6, 0.0, 0.0]));
    let (_, grad, (_, gp)) = obj.evaluate(critic.params().values());
    // |w_x| = 2: penalty 10, gradient 20 (|w|-1) w/|w| = (12, 16) plus (0, -1).
    assert!((gp - 10.0).abs() < 1e-12);
    let want = [12.0, 15.0, 0.0, 0.0, 0.0];
    for (g, w) in grad.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{grad:?}");
    }
}

#[test]
fn adam_first_steps_by_hand() {
    let settings = AdamSettings {
        lr: 0.1,
        beta1: 0.5,
        beta2: 0.9,
        eps: 1e-8,
    };
    let mut state = AdamState::new(2, settings);
    let mut p = vec![1.0, -1.0];
    state.apply(&mut p, &[2.0, 0.0]).unwrap();
    // Bias-corrected moments are g and g^2, so the step is lr * sign(g).
    assert!((p[0] - 0.9).abs() < 1e-9);
    assert_eq!(p[1], -1.0);
    let after_first = p[0];

    state.apply(&mut p, &[1.0, 0.0]).unwrap();
    let m = (0.5 * 0.5 * 2.0 + 0.5 * 1.0) / (1.0 - 0.25);
    let v = (0.9 * 0.1 * 4.0 + 0.1 * 1.0) / (1.0 - 0.81);
    let want = after_first - 0.1 * m / (f64::sqrt(v) + 1e-8);
    assert!((p[0] - want).abs() < 1e-12);
    assert_eq!(state.step_count, 2);
}

#[test]
fn adam_rejects_mismatched_lengths() {
    let mut state = AdamState::new(2, AdamSettings::default());
    let mut p = vec![0.0; 3];
    assert!(state.apply(&mut p, &[0.0; 3]).is_err());
}
