//! Traffic junction gridworld.
//!
//! Cars spawn at map entrances with a randomly assigned route, move forward
//! (or stop) one cell per step, and leave the grid at their route's exit.
//! The team shares one reward: a per-car time penalty that grows linearly
//! with the car's age, a collision penalty per car per step spent sharing a
//! cell, and a one-time exit bonus. Collisions never change positions or
//! statuses — they only hit the reward.
//!
//! Deterministic given (map, seed, action sequence).

pub mod maps;

pub use maps::{Cell, Entrance, MapName, MapSpec, Route};

use crate::rng::Pcg;
use crate::{CgibError, Result};

pub const TIME_PENALTY: f64 = -1.0;
pub const COLLISION_PENALTY: f64 = -100.0;
pub const EXIT_BONUS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarStatus {
    PreEntry,
    Active,
    Exited,
}

#[derive(Debug, Clone)]
pub struct CarState {
    pub route_id: usize,
    pub path_index: usize,
    pub steps_alive: usize,
    pub status: CarStatus,
}

/// One environment tick as seen by the learners.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    /// One observation vector per agent (zeros for pre-entry/exited cars).
    pub observations: Vec<Vec<f64>>,
    pub alive_mask: Vec<bool>,
    pub shared_reward: f64,
    pub done: bool,
    /// Concatenated observations ++ normalized timestep.
    pub global_state: Vec<f64>,
}

/// Per-step reward decomposition, recomputable from car states.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardBreakdown {
    pub time_penalty: f64,
    pub collision_penalty: f64,
    pub exit_bonus: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.time_penalty + self.collision_penalty + self.exit_bonus
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMetrics {
    pub episode_return: f64,
    pub collisions: usize,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct TrafficEnv {
    spec: MapSpec,
    cars: Vec<CarState>,
    t: usize,
    done: bool,
    // per-episode log backing `episode_metrics`
    return_acc: f64,
    collision_events: usize,
    last_breakdown: RewardBreakdown,
}

impl TrafficEnv {
    pub fn new(spec: MapSpec) -> Self {
        let cars = vec![
            CarState {
                route_id: 0,
                path_index: 0,
                steps_alive: 0,
                status: CarStatus::PreEntry,
            };
            spec.num_agents
        ];
        TrafficEnv {
            spec,
            cars,
            t: 0,
            done: true,
            return_acc: 0.0,
            collision_events: 0,
            last_breakdown: RewardBreakdown::default(),
        }
    }

    pub fn spec(&self) -> &MapSpec {
        &self.spec
    }

    pub fn cars(&self) -> &[CarState] {
        &self.cars
    }

    pub fn timestep(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn last_breakdown(&self) -> RewardBreakdown {
        self.last_breakdown
    }

    /// Start an episode: every car draws a route uniformly at random and a
    /// start cell near its entrance (a uniform offset within the entrance's
    /// spawn prefix), entering immediately if that cell is free; otherwise
    /// it waits off-grid in pre-entry.
    pub fn reset(&mut self, seed: u64) -> EnvStep {
        let mut rng = Pcg::from_key(seed, 0x7261666963, 0); // env reset stream
        for car in &mut self.cars {
            car.route_id = rng.below(self.spec.num_routes());
            let entrance = self.spec.routes[car.route_id].entrance;
            car.path_index = rng.below(self.spec.entrances[entrance].spawn_offsets);
            car.steps_alive = 0;
            car.status = CarStatus::PreEntry;
        }
        self.t = 0;
        self.done = false;
        self.return_acc = 0.0;
        self.collision_events = 0;
        self.last_breakdown = RewardBreakdown::default();
        self.admit_waiting_cars();
        self.snapshot(0.0)
    }

    /// Advance one tick. Actions: 0 = stop, 1 = move one cell forward.
    /// Actions of non-active cars are ignored.
    pub fn step(&mut self, actions: &[usize]) -> Result<EnvStep> {
        if self.done {
            return Err(CgibError::usage("step called on a finished episode"));
        }
        if actions.len() != self.spec.num_agents {
            return Err(CgibError::usage(format!(
                "expected {} actions, got {}",
                self.spec.num_agents,
                actions.len()
            )));
        }

        let mut breakdown = RewardBreakdown::default();

        // move phase: cars active at the start of the tick may advance
        let movers: Vec<usize> = (0..self.cars.len())
            .filter(|&i| self.cars[i].status == CarStatus::Active)
            .collect();
        for &i in &movers {
            if actions[i] == 1 {
                self.cars[i].path_index += 1;
            }
        }

        // age + exit phase
        for &i in &movers {
            let route_len = self.spec.routes[self.cars[i].route_id].on_grid_len();
            self.cars[i].steps_alive += 1;
            breakdown.time_penalty += TIME_PENALTY * self.cars[i].steps_alive as f64;
            if self.cars[i].path_index >= route_len {
                self.cars[i].status = CarStatus::Exited;
                breakdown.exit_bonus += EXIT_BONUS;
            }
        }

        // collision phase: cars sharing a cell after movement each pay the
        // penalty; positions and statuses are untouched
        let mut occupancy: Vec<(Cell, usize)> = Vec::new();
        for i in 0..self.cars.len() {
            if self.cars[i].status == CarStatus::Active {
                occupancy.push((self.car_cell(i), i));
            }
        }
        for k in 0..occupancy.len() {
            let (cell, _) = occupancy[k];
            let shared = occupancy.iter().filter(|(c, _)| *c == cell).count();
            if shared > 1 {
                breakdown.collision_penalty += COLLISION_PENALTY;
                self.collision_events += 1;
            }
        }

        // entry phase: waiting cars enter freed start cells in index order
        self.admit_waiting_cars();

        self.t += 1;
        let all_exited = self.cars.iter().all(|c| c.status == CarStatus::Exited);
        self.done = all_exited || self.t >= self.spec.max_steps;

        let reward = breakdown.total();
        self.return_acc += reward;
        self.last_breakdown = breakdown;
        Ok(self.snapshot(reward))
    }

    /// End-of-episode record. Usage error while the episode is still running.
    pub fn episode_metrics(&self) -> Result<EpisodeMetrics> {
        if !self.done {
            return Err(CgibError::usage("episode_metrics on an incomplete trajectory"));
        }
        Ok(EpisodeMetrics {
            episode_return: self.return_acc,
            collisions: self.collision_events,
            success: self.cars.iter().all(|c| c.status == CarStatus::Exited),
        })
    }

    fn admit_waiting_cars(&mut self) {
        let occupied: Vec<Cell> = (0..self.cars.len())
            .filter(|&i| self.cars[i].status == CarStatus::Active)
            .map(|i| self.car_cell(i))
            .collect();
        let mut occupied = occupied;
        for i in 0..self.cars.len() {
            if self.cars[i].status != CarStatus::PreEntry {
                continue;
            }
            let start = self.spec.routes[self.cars[i].route_id].cells[self.cars[i].path_index];
            if !occupied.contains(&start) {
                self.cars[i].status = CarStatus::Active;
                occupied.push(start);
            }
        }
    }

    pub fn car_cell(&self, i: usize) -> Cell {
        self.spec.routes[self.cars[i].route_id].cells[self.cars[i].path_index]
    }

    fn snapshot(&self, reward: f64) -> EnvStep {
        let obs_dim = self.spec.obs_dim();
        let mut observations = Vec::with_capacity(self.cars.len());
        let mut alive_mask = Vec::with_capacity(self.cars.len());
        for (i, car) in self.cars.iter().enumerate() {
            let mut obs = vec![0.0; obs_dim];
            let alive = car.status == CarStatus::Active;
            if alive {
                let (r, c) = self.car_cell(i);
                obs[r as usize * self.spec.cols + c as usize] = 1.0;
                obs[self.spec.grid_cells() + car.route_id] = 1.0;
                obs[obs_dim - 1] = car.steps_alive as f64 / self.spec.max_steps as f64;
            }
            observations.push(obs);
            alive_mask.push(alive);
        }
        let mut global_state = Vec::with_capacity(self.spec.global_state_dim());
        for obs in &observations {
            global_state.extend_from_slice(obs);
        }
        global_state.push(self.t as f64 / self.spec.max_steps as f64);
        EnvStep {
            observations,
            alive_mask,
            shared_reward: reward,
            done: self.done,
            global_state,
        }
    }

    /// ASCII rendering: road cells '.', off-road ' ', cars by hex index,
    /// overlapping cars '*'.
    pub fn render_text(&self) -> String {
        let mut grid = vec![vec![' '; self.spec.cols]; self.spec.rows];
        for route in &self.spec.routes {
            for &(r, c) in &route.cells {
                if self.spec.on_grid((r, c)) {
                    grid[r as usize][c as usize] = '.';
                }
            }
        }
        for i in 0..self.cars.len() {
            if self.cars[i].status != CarStatus::Active {
                continue;
            }
            let (r, c) = self.car_cell(i);
            let slot = &mut grid[r as usize][c as usize];
            *slot = if *slot == '.' {
                char::from_digit(i as u32, 16).unwrap_or('?')
            } else {
                '*'
            };
        }
        let mut out = String::new();
        out.push_str(&format!("t={} reward_acc={:.1}\n", self.t, self.return_acc));
        out.push('+');
        out.push_str(&"-".repeat(self.spec.cols));
        out.push_str("+\n");
        for row in grid {
            out.push('|');
            out.extend(row);
            out.push_str("|\n");
        }
        out.push('+');
        out.push_str(&"-".repeat(self.spec.cols));
        out.push_str("+\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn easy_env() -> TrafficEnv {
        TrafficEnv::new(MapSpec::builtin(MapName::Easy))
    }

    #[test]
    fn reset_is_deterministic_and_sized() {
        let mut a = easy_env();
        let mut b = easy_env();
        let s1 = a.reset(0);
        let s2 = b.reset(0);
        assert_eq!(s1, s2);
        assert_eq!(s1.alive_mask.len(), 4);
        assert!(!s1.done);
        assert_eq!(s1.shared_reward, 0.0);
    }

    #[test]
    fn hard_observation_length() {
        let mut env = TrafficEnv::new(MapSpec::builtin(MapName::Hard));
        let s = env.reset(3);
        let spec = MapSpec::builtin(MapName::Hard);
        for obs in &s.observations {
            assert_eq!(obs.len(), spec.grid_cells() + spec.num_routes() + 1);
        }
    }

    #[test]
    fn single_active_car_pays_its_age() {
        // drive the env so only car 0 is on the grid, then check the time
        // penalty at age 3
        let mut env = easy_env();
        // force a known state: all cars on route 0 but only car 0 admitted
        env.reset(0);
        for (i, car) in env.cars.iter_mut().enumerate() {
            car.route_id = 0;
            car.path_index = 0;
            car.steps_alive = 0;
            car.status = if i == 0 { CarStatus::Active } else { CarStatus::Exited };
        }
        let s1 = env.step(&[1, 0, 0, 0]).unwrap(); // age 1
        assert_eq!(s1.shared_reward, -1.0);
        let s2 = env.step(&[1, 0, 0, 0]).unwrap(); // age 2
        assert_eq!(s2.shared_reward, -2.0);
        let s3 = env.step(&[0, 0, 0, 0]).unwrap(); // age 3, stopped
        assert_eq!(s3.shared_reward, -3.0);
    }

    #[test]
    fn collision_penalizes_both_cars_without_moving_them() {
        let mut env = easy_env();
        env.reset(0);
        // route 0 (east) and route 2 (south) share the junction (3,2):
        // place both one move short of it
        env.cars[0] = CarState {
            route_id: 0,
            path_index: 1,
            steps_alive: 0,
            status: CarStatus::Active,
        };
        env.cars[1] = CarState {
            route_id: 2,
            path_index: 2,
            steps_alive: 2,
            status: CarStatus::Active,
        };
        for car in &mut env.cars[2..] {
            car.status = CarStatus::Exited;
        }
        let s = env.step(&[1, 1, 0, 0]).unwrap();
        // both at (3,2): 2 x -100, ages 1 and 3
        assert_eq!(s.shared_reward, -200.0 - 1.0 - 3.0);
        assert_eq!(env.cars[0].path_index, 2);
        assert_eq!(env.cars[1].path_index, 3);
        assert_eq!(env.cars[0].status, CarStatus::Active);
        let b = env.last_breakdown();
        assert_eq!(b.collision_penalty, -200.0);
        assert_eq!(b.total(), s.shared_reward);
    }

    #[test]
    fn exit_bonus_granted_once() {
        let mut env = easy_env();
        env.reset(0);
        // place car 0 one move from the end of the short route 1
        env.cars[0] = CarState {
            route_id: 1,
            path_index: 5,
            steps_alive: 4,
            status: CarStatus::Active,
        };
        for car in &mut env.cars[1..] {
            car.status = CarStatus::Exited;
        }
        let s = env.step(&[1, 0, 0, 0]).unwrap();
        assert_eq!(s.shared_reward, EXIT_BONUS - 5.0);
        assert!(s.done);
        assert!(env.episode_metrics().unwrap().success);
    }

    #[test]
    fn hand_built_exit_at_age_five_returns_fifteen() {
        // independent oracle: simulate the reward rule by hand for one car
        // five moves from its exit, -(1+2+3+4+5) + 30 = 15
        let mut env = easy_env();
        env.reset(0);
        for (i, car) in env.cars.iter_mut().enumerate() {
            *car = CarState {
                route_id: 1,
                path_index: 1,
                steps_alive: 0,
                status: if i == 0 { CarStatus::Active } else { CarStatus::Exited },
            };
        }
        env.return_acc = 0.0;
        let mut total = 0.0;
        for _ in 0..5 {
            let s = env.step(&[1, 0, 0, 0]).unwrap();
            total += s.shared_reward;
        }
        assert_eq!(total, 15.0);
        assert!(env.is_done());
        let m = env.episode_metrics().unwrap();
        assert_eq!(m.episode_return, 15.0);
        assert_eq!(m.collisions, 0);
    }

    #[test]
    fn all_stop_policy_times_out_without_collisions() {
        let mut env = easy_env();
        env.reset(7);
        let mut steps = 0;
        loop {
            let s = env.step(&[0, 0, 0, 0]).unwrap();
            steps += 1;
            if s.done {
                break;
            }
        }
        assert_eq!(steps, 20);
        let m = env.episode_metrics().unwrap();
        assert!(!m.success);
        assert_eq!(m.collisions, 0);
        // pure timestep penalties: every active car ages each step
        assert!(m.episode_return < 0.0);
        let err = env.step(&[0, 0, 0, 0]);
        assert!(err.is_err(), "stepping a done episode must be a usage error");
    }

    #[test]
    fn incomplete_episode_metrics_is_usage_error() {
        let mut env = easy_env();
        env.reset(0);
        assert!(env.episode_metrics().is_err());
    }

    #[test]
    fn full_episode_replay_is_bitwise_identical() {
        let run = |seed: u64| {
            let mut env = easy_env();
            let mut track = vec![env.reset(seed)];
            let mut rng = Pcg::from_seed_u64(seed ^ 0xabc);
            while !env.is_done() {
                let actions: Vec<usize> = (0..4).map(|_| rng.below(2)).collect();
                track.push(env.step(&actions).unwrap());
            }
            (track, env.episode_metrics().unwrap())
        };
        let (t1, m1) = run(5);
        let (t2, m2) = run(5);
        assert_eq!(t1, t2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn conservation_and_monotone_paths() {
        let mut env = easy_env();
        env.reset(11);
        let mut rng = Pcg::from_seed_u64(99);
        let mut prev_idx: Vec<usize> = env.cars().iter().map(|c| c.path_index).collect();
        while !env.is_done() {
            let actions: Vec<usize> = (0..4).map(|_| rng.below(2)).collect();
            env.step(&actions).unwrap();
            assert_eq!(env.cars().len(), 4);
            for (car, &prev) in env.cars().iter().zip(&prev_idx) {
                assert!(car.path_index >= prev);
                assert!(car.path_index - prev <= 1);
            }
            prev_idx = env.cars().iter().map(|c| c.path_index).collect();
        }
    }

    #[test]
    fn render_marks_active_cars() {
        let mut env = easy_env();
        env.reset(0);
        let ascii = env.render_text();
        assert!(ascii.contains('.'));
        assert!(ascii.contains('0') || ascii.contains('*'));
    }
}
