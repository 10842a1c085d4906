//! Tabu search twice: on a cheap quadratic surrogate, then on a short
//! budget of real simulations.

use cellevac::controller::BetaConfig;
use cellevac::optimizer::{optimize, SearchSpace, SimulationObjective, TabuParams};
use cellevac::positioning::ChannelParams;
use cellevac::replication::ReplicationPolicy;
use cellevac::scenario::ScenarioLayout;
use cellevac::sfm::RunConfig;

fn main() -> cellevac::Result<()> {
    let space = SearchSpace::default();

    let target = [-12.0, 3.0, -1.0, 2.5, 4.0];
    let surrogate = move |b: &BetaConfig| b.to_array().iter().zip(target).map(|(x, t)| (x - t).powi(2)).sum::<f64>();
    let r = optimize(&surrogate, &space, &TabuParams { budget: 2000, ..Default::default() }, space.center())?;
    let (best, f) = r.best_or_error()?;
    println!("surrogate: {} evaluations, {} iterations, best f = {f:.4}", r.evaluations(), r.iterations);
    println!("  {best:?}");

    let layout = ScenarioLayout::reference();
    let objective = SimulationObjective {
        layout: &layout,
        base: RunConfig { scale: 0.05, seed: 11, channel: ChannelParams::with_sigma(10.0), ..Default::default() },
        policy: ReplicationPolicy { min_reps: 5, max_reps: 10, ..Default::default() },
        lambda: 1.0,
        workers: 1,
    };
    let start = space.snap(&BetaConfig::standard_behavior());
    let r = optimize(&objective, &space, &TabuParams { budget: 12, ..Default::default() }, start)?;
    for e in &r.trace {
        println!("  eval {:>2}  fitness {:8.4}  best {:8.4}", e.eval_index, e.fitness, e.best_so_far);
    }
    let (best, f) = r.best_or_error()?;
    println!("simulation: best fitness {f:.4} at {best:?}");
    Ok(())
}
