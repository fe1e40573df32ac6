//! The README's library walkthrough: learn the bundled plant, synthesize a
//! funnel between two boxes, and check the closed loop reaches the goal.

use std::sync::Arc;

use reachfunnel::controller::ControlLaw;
use reachfunnel::funnel::{synthesize, EtaPolicy};
use reachfunnel::gp::{GpModel, KernelParams, SeKernel, StateBox};
use reachfunnel::sim::{case_study_plant, integrate, sample_measurements, SimConfig};
use reachfunnel::BoundSet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plant = case_study_plant();
    let domain = plant.state_box().clone();
    let data = sample_measurements(&plant, &domain, 50, 0.01, 18)?;
    let params = KernelParams::new(vec![
        SeKernel::new(316.0, vec![2.9, 177.0])?,
        SeKernel::new(25.3, vec![1.67, 50.5])?,
    ])?;
    let model = Arc::new(GpModel::fit(data, params, domain)?);

    let start = StateBox::new(vec![-3.0, -3.0], vec![-2.0, -2.0])?;
    let goal = StateBox::new(vec![1.0, 1.0], vec![3.0, 3.0])?;
    let funnel = synthesize(
        &start,
        &goal,
        plant.state_box(),
        &[1.0, 1.0],
        0.5,
        &EtaPolicy::Midpoint,
    )?;
    let law = ControlLaw::new(
        Arc::clone(&model),
        BoundSet::deterministic(vec![3.0, 4.4])?,
        funnel.spec,
        plant.input_map(),
    )?;

    let cfg = SimConfig {
        goal: Some(goal),
        ..SimConfig::default()
    };
    let traj = integrate(&plant, &law, &start.center(), &cfg)?;
    let t = traj.reach_time().expect("closed loop should reach the goal");
    println!("reached the goal at t = {t:.3}");
    Ok(())
}
