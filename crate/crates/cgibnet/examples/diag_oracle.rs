use cgibnet::traffic::{CarStatus, MapName, MapSpec, TrafficEnv};

// full-information coordination via fixed-point intention resolution
fn coordinated_actions(env: &TrafficEnv) -> Vec<usize> {
    let spec = env.spec();
    let n = spec.num_agents;
    let active: Vec<bool> = (0..n).map(|i| env.cars()[i].status == CarStatusActive()).collect();
    let mut mv = vec![true; n];
    for _ in 0..n + 1 {
        let mut next_mv = mv.clone();
        for i in 0..n {
            if !active[i] {
                next_mv[i] = false;
                continue;
            }
            let route = &spec.routes[env.cars()[i].route_id];
            let next = route.cells[env.cars()[i].path_index + 1];
            if !spec.on_grid(next) {
                next_mv[i] = true;
                continue;
            }
            let mut ok = true;
            for j in 0..n {
                if i == j || !active[j] {
                    continue;
                }
                let jroute = &spec.routes[env.cars()[j].route_id];
                let jcell = jroute.cells[env.cars()[j].path_index];
                let jnext = jroute.cells[env.cars()[j].path_index + 1];
                // same-cell claim: lower index wins
                if mv[j] && jnext == next && j < i {
                    ok = false;
                }
                // moving into a stopper's cell
                if !mv[j] && jcell == next {
                    ok = false;
                }
            }
            next_mv[i] = ok;
        }
        if next_mv == mv {
            break;
        }
        mv = next_mv;
    }
    mv.iter().map(|&m| if m { 1 } else { 0 }).collect()
}

#[allow(non_snake_case)]
fn CarStatusActive() -> CarStatus { CarStatus::Active }

// no-comm heuristic: always move, except a one-step yield at the cell just
// before the junction for southbound cars that have never paused
fn heuristic_actions(env: &TrafficEnv, yield_routes: &[usize], yield_idx: usize) -> Vec<usize> {
    let n = env.spec().num_agents;
    (0..n)
        .map(|i| {
            let car = &env.cars()[i];
            if car.status != CarStatus::Active {
                return 0;
            }
            if yield_routes.contains(&car.route_id)
                && car.path_index == yield_idx
                && car.steps_alive == yield_idx - 0
            {
                return 0;
            }
            1
        })
        .collect()
}

fn run(policy: &str, episodes: u64) -> (f64, f64, f64) {
    let spec = MapSpec::builtin(MapName::Easy);
    let (mut total, mut coll, mut succ) = (0.0, 0.0, 0.0);
    for seed in 0..episodes {
        let mut env = TrafficEnv::new(spec.clone());
        env.reset(seed * 7919 + 13);
        while !env.is_done() {
            let a = match policy {
                "always" => vec![1; 4],
                "coord" => coordinated_actions(&env),
                "yield_south" => heuristic_actions(&env, &[2, 3], 2),
                "yield_east" => heuristic_actions(&env, &[0, 1], 1),
                _ => unreachable!(),
            };
            env.step(&a).unwrap();
        }
        let m = env.episode_metrics().unwrap();
        total += m.episode_return;
        coll += m.collisions as f64;
        succ += if m.success { 1.0 } else { 0.0 };
    }
    let e = episodes as f64;
    (total / e, coll / e, succ / e)
}

fn main() {
    for policy in ["always", "coord", "yield_south", "yield_east"] {
        let (ret, coll, succ) = run(policy, 2000);
        println!("{policy:>12}: return {ret:8.2}  collisions/ep {coll:5.2}  success {succ:.2}");
    }
}
