//! The replication controller on synthetic streams and on real runs.

use cellevac::replication::{ci_half_width, replicate, run_replicated, ReplicationPolicy};
use cellevac::scenario::ScenarioLayout;
use cellevac::sfm::RunConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> cellevac::Result<()> {
    let policy = ReplicationPolicy::default();
    for sd in [0.0, 0.2, 0.5, 2.0] {
        let normal = Normal::new(100.0, sd).unwrap();
        let xs = replicate(&policy, 1, 1, |_, s| Ok(normal.sample(&mut ChaCha8Rng::seed_from_u64(s))), |x| *x)
            .map_err(|e| e.source)?;
        println!("Normal(100, {sd}): stopped after {} reps, half-width {:.4}", xs.len(), ci_half_width(&xs, policy.confidence));
    }

    let layout = ScenarioLayout::reference();
    let s = run_replicated(&layout, &RunConfig { scale: 0.1, ..Default::default() }, &policy, 1)?;
    println!(
        "arena at scale 0.1: n = {}, evac {:.2} +/- {:.2} s, viable {:.0}%",
        s.n,
        s.evac_time.mean,
        ci_half_width(&s.column(|m| m.total_evac_time), policy.confidence),
        100.0 * s.viable_fraction
    );
    Ok(())
}
