use erocket::analysis::FrequencyResponse;
use erocket::plot::{stack, Chart, Series};
use erocket::sim::SimTrace;

pub fn pitch_step(t: &[f64], theta: &[f64]) -> String {
    Chart::new("Pitch step response", "t [s]", "theta [rad]")
        .with(Series::line("theta", t.to_vec(), theta.to_vec()))
        .with(Series::reference("theta_d", t.to_vec(), vec![1.0; t.len()]))
        .render()
}

pub fn pitch_bode(closed: &FrequencyResponse, open: &FrequencyResponse) -> String {
    let mag = Chart::new("Pitch loop magnitude", "omega [rad/s]", "|H| [dB]")
        .log_x()
        .with(Series::line(
            "closed loop",
            closed.omega.clone(),
            closed.magnitude_db.clone(),
        ))
        .with(Series::line(
            "open loop",
            open.omega.clone(),
            open.magnitude_db.clone(),
        ))
        .with(Series::reference(
            "0 dB",
            closed.omega.clone(),
            vec![0.0; closed.omega.len()],
        ));
    let phase = Chart::new("Pitch loop phase", "omega [rad/s]", "phase [deg]")
        .log_x()
        .with(Series::line(
            "closed loop",
            closed.omega.clone(),
            closed.phase_deg.clone(),
        ))
        .with(Series::line(
            "open loop",
            open.omega.clone(),
            open.phase_deg.clone(),
        ))
        .with(Series::reference(
            "-180 deg",
            open.omega.clone(),
            vec![-180.0; open.omega.len()],
        ));
    stack(&[mag, phase])
}

pub fn lateral(trace: &SimTrace) -> String {
    let t = trace.times();
    stack(&[
        Chart::new("Horizontal position", "t [s]", "x [m]")
            .with(Series::line("x", t.clone(), trace.column(|r| r.state.x)))
            .with(Series::reference("x_d", t.clone(), trace.column(|r| r.x_d))),
        Chart::new("Pitch", "t [s]", "theta [rad]")
            .with(Series::line(
                "theta",
                t.clone(),
                trace.column(|r| r.state.theta),
            ))
            .with(Series::reference("theta_d", t, trace.column(|r| r.theta_d))),
    ])
}

pub fn vertical(trace: &SimTrace) -> String {
    let t = trace.times();
    let rate = trace.climb_rate;
    stack(&[
        Chart::new("Altitude", "t [s]", "y [m]")
            .with(Series::line("y", t.clone(), trace.column(|r| r.state.y)))
            .with(Series::reference("y_d", t.clone(), trace.column(|r| r.y_d))),
        Chart::new("Climb rate", "t [s]", "ydot [m/s]")
            .with(Series::line(
                "ydot",
                t.clone(),
                trace.column(|r| r.y_rate()),
            ))
            .with(Series::reference("ydot_d", t.clone(), vec![rate; t.len()])),
    ])
}

pub fn full_2d(trace: &SimTrace) -> String {
    let t = trace.times();
    stack(&[
        Chart::new("Horizontal position", "t [s]", "x [m]")
            .with(Series::line("x", t.clone(), trace.column(|r| r.state.x)))
            .with(Series::reference("x_d", t.clone(), trace.column(|r| r.x_d))),
        Chart::new("Altitude tracking error", "t [s]", "y - y_d [m]").with(Series::line(
            "y - y_d",
            t.clone(),
            trace.column(|r| r.state.y - r.y_d),
        )),
        Chart::new("Altitude estimation error", "t [s]", "[m]")
            .with(Series::line(
                "y_m - y",
                t.clone(),
                trace.column(|r| r.sensors.y_m - r.state.y),
            ))
            .with(Series::line(
                "y_hat - y",
                t.clone(),
                trace.column(|r| r.y_hat - r.state.y),
            )),
        Chart::new("Pitch estimation error", "t [s]", "theta_hat - theta [deg]").with(
            Series::line(
                "theta_hat - theta",
                t,
                trace.column(|r| (r.theta_hat - r.state.theta).to_degrees()),
            ),
        ),
    ])
}
