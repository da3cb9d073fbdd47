//! The designed pitch loop as LTI systems.

use nalgebra::DMatrix;

use super::TransferFunction;
use crate::control::AttitudeGains;
use crate::linmodel::{attitude_extended_model, Labels, StateSpace};
use crate::plant::RocketParams;

/// Reference `theta_d` to `theta`, reference entering through the integrator.
pub fn pitch_closed_loop(p: &RocketParams, gains: &AttitudeGains) -> StateSpace {
    let a = gains.closed_loop_matrix(p);
    let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
    let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    let labels = Labels {
        states: attitude_extended_model(p).labels.states,
        inputs: vec!["theta_d".into()],
        outputs: vec!["theta".into()],
    };
    StateSpace::with_labels(a, b, c, labels).expect("fixed dimensions")
}

/// Loop broken at the plant input: `L(s) = K (sI - A)^{-1} B`.
pub fn pitch_open_loop(p: &RocketParams, gains: &AttitudeGains) -> StateSpace {
    let ss = attitude_extended_model(p);
    let labels = Labels {
        states: ss.labels.states.clone(),
        inputs: ss.labels.inputs.clone(),
        outputs: vec!["K x".into()],
    };
    StateSpace::with_labels(
        ss.a,
        ss.b,
        DMatrix::from_row_slice(1, 3, &gains.row()),
        labels,
    )
    .expect("fixed dimensions")
}

/// Same loop as a rational function, `b (k_d s^2 + k_p s + k_i) / s^3`.
pub fn pitch_open_loop_tf(p: &RocketParams, gains: &AttitudeGains) -> TransferFunction {
    let b = p.arm * p.weight() / p.inertia;
    TransferFunction::new(
        vec![b * gains.k_d, b * gains.k_p, b * gains.k_i],
        vec![1.0, 0.0, 0.0, 0.0],
    )
}
