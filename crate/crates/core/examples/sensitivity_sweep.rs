//! Median evacuation time and decision changes across shadowing levels,
//! with replications chosen by the confidence-interval controller.

use cellevac::positioning::ChannelParams;
use cellevac::replication::{run_replicated, ReplicationPolicy};
use cellevac::scenario::ScenarioLayout;
use cellevac::sfm::RunConfig;
use cellevac::stats::{median, spearman};

fn main() -> cellevac::Result<()> {
    let layout = ScenarioLayout::reference();
    let policy = ReplicationPolicy::default();
    let sigmas = [0.0, 5.0, 10.0, 20.0, 30.0, 40.0];
    let mut medians = Vec::new();
    println!("sigma  reps  median evac (s)  median changes");
    for &s in &sigmas {
        let base = RunConfig { scale: 0.1, seed: 7, channel: ChannelParams::with_sigma(s), ..Default::default() };
        let summary = run_replicated(&layout, &base, &policy, 1)?;
        let t = median(&summary.column(|m| m.total_evac_time));
        let c = median(&summary.column(|m| m.mean_decision_changes));
        println!("{s:>5}  {:>4}  {t:>15.2}  {c:>14.3}", summary.n);
        medians.push(t);
    }
    println!("spearman(sigma, median evac) = {:.3}", spearman(&sigmas, &medians));
    Ok(())
}
