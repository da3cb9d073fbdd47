//! Flat `key = value` design report.

use std::fmt::Write;

use anyhow::Result;
use erocket::analysis::{default_grid, gain_margin, pitch_open_loop, GainMargin};
use erocket::control::AttitudeController;
use erocket::navigation::{AltitudeFilter, AttitudeFilter};
use erocket::sim::ScenarioConfig;

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

fn complex(re: f64, im: f64) -> String {
    if im == 0.0 {
        re.to_string()
    } else if im > 0.0 {
        format!("{re} + {im}i")
    } else {
        format!("{re} - {}i", -im)
    }
}

pub fn design_report(cfg: &ScenarioConfig) -> Result<String> {
    let p = &cfg.plant;
    let gains = cfg.attitude.resolve_gains(p)?;
    // rejects non-stabilizing explicit gains
    AttitudeController::new(gains, p)?;

    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("plant.mass", p.mass.to_string());
    kv("plant.arm", p.arm.to_string());
    kv("plant.inertia", p.inertia.to_string());
    kv("plant.gravity", p.gravity.to_string());
    kv(
        "attitude.input_gain",
        (p.arm * p.weight() / p.inertia).to_string(),
    );
    kv("attitude.lqr.q", list(&cfg.attitude.lqr.q));
    kv("attitude.lqr.r", cfg.attitude.lqr.r.to_string());
    kv("attitude.K", list(&gains.row()));
    kv("attitude.k_p", gains.k_p.to_string());
    kv("attitude.k_d", gains.k_d.to_string());
    kv("attitude.k_i", gains.k_i.to_string());

    let mut eig: Vec<(f64, f64)> = gains
        .closed_loop_matrix(p)
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect();
    eig.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    for (i, (re, im)) in eig.iter().enumerate() {
        kv(&format!("attitude.closed_loop.eig.{i}"), complex(*re, *im));
    }

    match gain_margin(&pitch_open_loop(p, &gains), &default_grid()) {
        GainMargin::Finite {
            margin_db,
            crossover,
        } => {
            kv("attitude.gain_margin_db", margin_db.to_string());
            kv("attitude.gain_margin_abs_db", margin_db.abs().to_string());
            kv("attitude.phase_crossover", crossover.to_string());
        }
        GainMargin::Infinite => kv("attitude.gain_margin_db", "inf".into()),
    }

    let att = AttitudeFilter::from_covariances(cfg.filters.attitude);
    kv("attitude_filter.q", cfg.filters.attitude.q.to_string());
    kv("attitude_filter.r", cfg.filters.attitude.r.to_string());
    kv("attitude_filter.l", att.gain.to_string());
    kv("attitude_filter.eig.0", att.pole().to_string());

    let alt = AltitudeFilter::from_covariances(cfg.filters.altitude);
    kv("altitude_filter.q", cfg.filters.altitude.q.to_string());
    kv("altitude_filter.r", cfg.filters.altitude.r.to_string());
    kv(
        "altitude_filter.L",
        list(&[alt.gain_position, alt.gain_velocity]),
    );
    for (i, pole) in alt.poles().iter().enumerate() {
        kv(
            &format!("altitude_filter.eig.{i}"),
            complex(pole.re, pole.im),
        );
    }
    let poles = alt.poles();
    kv(
        "altitude_filter.eig",
        format!("{:.4} +/- {:.4}i", poles[0].re, poles[0].im.abs()),
    );
    kv("guidance.k_x", cfg.guidance.k_x.to_string());
    kv("guidance.k_1", cfg.guidance.k_1.to_string());
    kv("guidance.k_2", cfg.guidance.k_2.to_string());
    Ok(out)
}
