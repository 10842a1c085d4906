use crate::geometry::{Segment, Vec2};

use super::{PedestrianState, SfmParams};

fn capped(f: Vec2, f_max: f64) -> Vec2 {
    let n = f.norm();
    if n > f_max {
        f * (f_max / n)
    } else {
        f
    }
}

/// `m (v0 e - v) / tau`, with `e` the unit vector towards `target`.
pub fn driving_force(p: &PedestrianState, target: Vec2, params: &SfmParams) -> Vec2 {
    let e = (target - p.position).normalized().unwrap_or(Vec2::ZERO);
    (e * p.preferred_speed - p.velocity) * (params.mass / params.tau)
}

/// Force exerted on `pi` by `pj`: exponential repulsion plus body contact
/// and sliding friction on overlap.
pub fn pair_force(pi: &PedestrianState, pj: &PedestrianState, params: &SfmParams) -> Vec2 {
    let diff = pi.position - pj.position;
    let d = diff.norm();
    if d < 1e-9 {
        let dir = if pi.id < pj.id { Vec2::new(-1.0, 0.0) } else { Vec2::new(1.0, 0.0) };
        return dir * params.f_max;
    }
    let n = diff / d;
    let rij = 2.0 * params.radius;
    let mut f = n * (params.a * ((rij - d) / params.b).exp());
    let overlap = rij - d;
    if overlap > 0.0 {
        let t = n.perp();
        let dv_t = (pj.velocity - pi.velocity).dot(t);
        f += n * (params.k * overlap) + t * (params.kappa * overlap * dv_t);
    }
    capped(f, params.f_max)
}

/// Force exerted on `p` by a wall segment.
pub fn wall_force(p: &PedestrianState, wall: &Segment, params: &SfmParams) -> Vec2 {
    let closest = wall.closest_point(p.position);
    let diff = p.position - closest;
    let d = diff.norm();
    if d < 1e-9 {
        return Vec2::ZERO;
    }
    let n = diff / d;
    let r = params.radius;
    let mut f = n * (params.a * ((r - d) / params.b).exp());
    let overlap = r - d;
    if overlap > 0.0 {
        let t = n.perp();
        f += n * (params.k * overlap) - t * (params.kappa * overlap * p.velocity.dot(t));
    }
    capped(f, params.f_max)
}

/// Total force on `p`. `neighbors` may include `p` itself (skipped by id).
pub fn social_force<'a, I>(
    p: &PedestrianState,
    neighbors: I,
    walls: &[Segment],
    target: Vec2,
    params: &SfmParams,
) -> Vec2
where
    I: IntoIterator<Item = &'a PedestrianState>,
{
    let mut f = driving_force(p, target, params);
    for q in neighbors {
        if q.id != p.id && q.active {
            f += pair_force(p, q, params);
        }
    }
    let cutoff = params.cutoff;
    for w in walls {
        if w.distance(p.position) < cutoff {
            f += wall_force(p, w, params);
        }
    }
    f
}
