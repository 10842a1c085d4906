//! One guided evacuation of the reference arena at a tenth of the crowd.

use cellevac::positioning::ChannelParams;
use cellevac::scenario::ScenarioLayout;
use cellevac::sfm::{run_evacuation, RunConfig, ScenarioKind};

fn main() -> cellevac::Result<()> {
    let layout = ScenarioLayout::reference();
    for kind in [ScenarioKind::Nef, ScenarioKind::Ef] {
        let config = RunConfig { kind, scale: 0.1, seed: 42, channel: ChannelParams::with_sigma(10.0), ..Default::default() };
        let out = run_evacuation(&layout, &config)?;
        let m = &out.metrics;
        println!("{kind}: {} pedestrians at start", out.initial_population);
        if let Some(ef) = &out.ef {
            println!("  {}", ef.describe(&layout));
        }
        println!("  evacuation time  {:.1} s (viable: {})", m.total_evac_time, m.viable);
        println!("  average safety   {:.3}", m.avg_safety);
        println!("  safety variance  {:.4}", m.safety_variance);
        println!("  decision changes {:.3} per pedestrian", m.mean_decision_changes);
        for (gate, n) in layout.exits.iter().zip(&m.exit_throughput) {
            println!("  Ex{} {n:>4}", gate.id);
        }
    }
    Ok(())
}
