//! 2D fleet: robots random-walk inside a rectangle while steering around
//! walls and moving obstacles. Robots publish battery level and received
//! signal strength.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{MessageSink, Payload, PayloadSchema, StampedMessage, Stamper, StreamDescriptor, StreamKind};

use super::config::ScenarioConfig;
use super::models::{rssi, BatteryModel, RssiModel};
use super::{Pacer, SimError};

/// Extra distance kept between a robot's path and an obstacle edge.
const STEER_CLEARANCE: f64 = 0.1;
/// A move ending closer than this to an obstacle edge is not taken.
const MOVE_CLEARANCE: f64 = 0.05;
/// An obstacle does not move closer than this to a robot.
const OBSTACLE_CLEARANCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub pos: [f64; 2],
    pub velocity: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub id: String,
    pub pos: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    pub battery_pct: f64,
    pub cpu_load: f64,
    pub avoid_radius: f64,
    /// Heading random-walk intensity, rad per square-root second.
    pub heading_noise: f64,
    /// Half-angle of the forward sector that must be free of walls and
    /// obstacles within `avoid_radius`, radians.
    pub avoid_cone: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub width: f64,
    pub height: f64,
    pub router_pos: [f64; 2],
    pub obstacles: Vec<Obstacle>,
    pub robots: Vec<RobotState>,
    pub rng_seed: u64,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Smallest absolute difference between two angles.
fn angle_between(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

impl World {
    /// Builds the initial world. Robots without a configured heading draw
    /// one uniformly from `rng`.
    pub fn from_config<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> World {
        let robots = cfg
            .robots
            .iter()
            .enumerate()
            .map(|(i, r)| RobotState {
                id: cfg.robot_id(i),
                pos: r.pos,
                heading: r.heading.unwrap_or_else(|| rng.random_range(-PI..PI)),
                speed: r.speed,
                battery_pct: r.battery_pct,
                cpu_load: r.cpu_load,
                avoid_radius: r.avoid_radius,
                heading_noise: r.heading_noise,
                avoid_cone: r.avoid_cone_deg.to_radians(),
            })
            .collect();
        World {
            width: cfg.workspace.width,
            height: cfg.workspace.height,
            router_pos: cfg.router.pos,
            obstacles: cfg
                .obstacles
                .iter()
                .map(|o| Obstacle {
                    pos: o.pos,
                    velocity: o.velocity,
                    radius: o.radius,
                })
                .collect(),
            robots,
            rng_seed: cfg.seed,
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0.0..=self.width).contains(&p[0]) && (0.0..=self.height).contains(&p[1])
    }

    fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0].clamp(0.0, self.width), p[1].clamp(0.0, self.height)]
    }

    /// Smallest distance between any robot centre and any obstacle edge.
    pub fn min_clearance(&self) -> f64 {
        self.robots
            .iter()
            .flat_map(|r| self.obstacles.iter().map(move |o| dist(r.pos, o.pos) - o.radius))
            .fold(f64::INFINITY, f64::min)
    }

    /// Moves obstacles in straight lines, bouncing off walls. An obstacle
    /// whose next position would come near a robot reverses instead.
    pub fn step_obstacles(&mut self, dt: f64) {
        for o in &mut self.obstacles {
            let mut v = o.velocity;
            let mut next = [o.pos[0] + v[0] * dt, o.pos[1] + v[1] * dt];
            for k in 0..2 {
                let hi = if k == 0 { self.width } else { self.height };
                if next[k] - o.radius < 0.0 || next[k] + o.radius > hi {
                    v[k] = -v[k];
                    next[k] = o.pos[k] + v[k] * dt;
                }
            }
            let blocked = self
                .robots
                .iter()
                .any(|r| dist(r.pos, next) < o.radius + OBSTACLE_CLEARANCE);
            if blocked {
                o.velocity = [-v[0], -v[1]];
            } else {
                o.velocity = v;
                o.pos = [next[0].clamp(0.0, self.width), next[1].clamp(0.0, self.height)];
            }
        }
    }
}

fn heading_blocked(world: &World, robot: &RobotState, heading: f64) -> bool {
    let [x, y] = robot.pos;
    let ar = robot.avoid_radius;
    let cone = robot.avoid_cone;
    // A wall closer than `ar` hides every direction within acos(dist / ar)
    // of its normal; the sensor sector must miss all of them.
    let walls = [
        (world.width - x, 0.0),
        (x, PI),
        (world.height - y, PI / 2.0),
        (y, -PI / 2.0),
    ];
    let wall_hit = walls
        .iter()
        .any(|&(d, normal)| d < ar && angle_between(heading, normal) < (d / ar).acos() + cone);
    if wall_hit {
        return true;
    }
    world.obstacles.iter().any(|o| {
        let d = dist(robot.pos, o.pos);
        if d - o.radius > ar {
            return false;
        }
        let reach = o.radius + STEER_CLEARANCE;
        let half = if d <= reach { PI / 2.0 } else { (reach / d).asin() };
        let bearing = (o.pos[1] - y).atan2(o.pos[0] - x);
        angle_between(heading, bearing) < half + cone
    })
}

/// Advances one robot by `dt` seconds against the current obstacle
/// positions. The heading takes a gaussian random-walk step, then turns by
/// the smallest whole-degree angle that leaves every avoidance cone.
pub fn step_robot<R: Rng + ?Sized>(world: &World, robot: &RobotState, dt: f64, rng: &mut R) -> RobotState {
    let mut next = robot.clone();
    let z: f64 = rng.sample(StandardNormal);
    let wandered = robot.heading + robot.heading_noise * dt.sqrt() * z;
    let step = PI / 180.0;
    let clear = (0..=180)
        .flat_map(|k| {
            let d = k as f64 * step;
            if k == 0 {
                vec![d]
            } else {
                vec![d, -d]
            }
        })
        .map(|d| wandered + d)
        .find(|&h| !heading_blocked(world, robot, h));
    let heading = clear.unwrap_or(wandered + PI);
    next.heading = (heading + PI).rem_euclid(2.0 * PI) - PI;
    let travel = robot.speed * dt;
    let target = world.clamp([
        robot.pos[0] + travel * next.heading.cos(),
        robot.pos[1] + travel * next.heading.sin(),
    ]);
    let collides = world
        .obstacles
        .iter()
        .any(|o| dist(target, o.pos) < o.radius + MOVE_CLEARANCE);
    if !collides {
        next.pos = target;
    }
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetSummary {
    pub published: u64,
    pub steps: u64,
    pub streams: usize,
    /// Smallest robot-centre to obstacle-edge distance seen at any step.
    pub min_clearance: f64,
    pub stayed_inside: bool,
}

fn cpu_at(cfg: &ScenarioConfig, robot: &RobotState, t: f64) -> f64 {
    cfg.cpu_events
        .iter()
        .rev()
        .find(|e| e.robot == robot.id && e.start_s <= t && t < e.end_s)
        .map_or(robot.cpu_load, |e| e.cpu_load)
}

/// Runs the scenario and publishes `<robot>/battery` (percent) and
/// `<robot>/wifi` (dBm) for every robot at the configured rate. `pace`
/// plays simulated time at that multiple of wall time; `None` runs flat out.
pub fn run_fleet_scenario(
    cfg: &ScenarioConfig,
    sink: &mut dyn MessageSink,
    pace: Option<f64>,
) -> Result<FleetSummary, SimError> {
    run_fleet_observed(cfg, sink, pace, &mut |_, _| {})
}

/// Like [`run_fleet_scenario`], calling `observe(t, world)` after every step.
pub fn run_fleet_observed(
    cfg: &ScenarioConfig,
    sink: &mut dyn MessageSink,
    pace: Option<f64>,
    observe: &mut dyn FnMut(f64, &World),
) -> Result<FleetSummary, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut world = World::from_config(cfg, &mut rng);
    let rssi_model: RssiModel = cfg.rssi.model();
    let battery: BatteryModel = cfg.battery.model();
    let period_ns = (1e9 / cfg.publish_rate_hz).round() as u64;
    let steps_per_publish = (1.0 / cfg.publish_rate_hz / cfg.dt_s).round() as u64;
    let total_steps = (cfg.duration_s / cfg.dt_s).round() as u64;

    let mut stampers = Vec::new();
    for r in &world.robots {
        for topic in ["battery", "wifi"] {
            let d = StreamDescriptor::new(
                format!("{}/{topic}", r.id),
                StreamKind::Robot,
                cfg.publish_rate_hz,
                PayloadSchema::Scalar,
            )?;
            sink.advertise(&d)?;
            stampers.push(Stamper::new(d));
        }
    }

    let mut pacer = Pacer::new(pace);
    let mut summary = FleetSummary {
        published: 0,
        steps: 0,
        streams: stampers.len(),
        min_clearance: world.min_clearance(),
        stayed_inside: true,
    };
    for i in 0..total_steps {
        let t = i as f64 * cfg.dt_s;
        if i % steps_per_publish == 0 {
            let stamp = cfg
                .start_time
                .offset_nanos(((i / steps_per_publish) * period_ns) as i64);
            pacer.wait_for(stamp);
            let mut out: Vec<StampedMessage> = Vec::with_capacity(stampers.len());
            for (k, r) in world.robots.iter().enumerate() {
                let signal = rssi(&rssi_model, world.router_pos, r.pos, &mut rng);
                out.push(stampers[2 * k].stamp_at(stamp, Payload::scalar(r.battery_pct))?);
                out.push(stampers[2 * k + 1].stamp_at(stamp, Payload::scalar(signal))?);
            }
            for m in &out {
                sink.publish(m)?;
            }
            summary.published += out.len() as u64;
        }

        world.step_obstacles(cfg.dt_s);
        let robots: Vec<RobotState> = world
            .robots
            .iter()
            .map(|r| {
                let mut next = step_robot(&world, r, cfg.dt_s, &mut rng);
                next.battery_pct = battery.step(r.battery_pct, cpu_at(cfg, r, t), cfg.dt_s);
                next
            })
            .collect();
        world.robots = robots;
        summary.steps += 1;
        summary.min_clearance = summary.min_clearance.min(world.min_clearance());
        summary.stayed_inside &= world.robots.iter().all(|r| world.contains(r.pos));
        observe(t + cfg.dt_s, &world);
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MemorySink;

    fn open_world() -> World {
        World {
            width: 10.0,
            height: 10.0,
            router_pos: [0.5, 0.5],
            obstacles: vec![],
            robots: vec![],
            rng_seed: 0,
        }
    }

    fn robot(pos: [f64; 2], heading: f64, noise: f64) -> RobotState {
        RobotState {
            id: "robot1".into(),
            pos,
            heading,
            speed: 0.25,
            battery_pct: 100.0,
            cpu_load: 0.2,
            avoid_radius: 0.5,
            heading_noise: noise,
            avoid_cone: PI / 6.0,
        }
    }

    #[test]
    fn straight_line_without_noise() {
        let w = open_world();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = robot([2.0, 5.0], 0.0, 0.0);
        for k in 1..=10 {
            r = step_robot(&w, &r, 0.1, &mut rng);
            assert!((r.pos[0] - (2.0 + 0.025 * k as f64)).abs() < 1e-12);
            assert_eq!(r.pos[1], 5.0);
        }
    }

    #[test]
    fn wall_is_never_crossed() {
        let w = open_world();
        for (pos, heading) in [
            ([9.0, 5.0], 0.0),
            ([1.0, 5.0], PI),
            ([5.0, 9.0], PI / 2.0),
            ([5.0, 1.0], -PI / 2.0),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut r = robot(pos, heading, 0.0);
            for _ in 0..10_000 {
                r = step_robot(&w, &r, 0.1, &mut rng);
                assert!(w.contains(r.pos), "{:?}", r.pos);
            }
            let mut r = robot(pos, heading, 0.6);
            for _ in 0..10_000 {
                r = step_robot(&w, &r, 0.1, &mut rng);
                assert!(w.contains(r.pos), "{:?}", r.pos);
            }
        }
    }

    #[test]
    fn steers_around_an_obstacle() {
        let mut w = open_world();
        w.obstacles.push(Obstacle {
            pos: [5.0, 5.0],
            velocity: [0.0, 0.0],
            radius: 0.5,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = robot([2.0, 5.0], 0.0, 0.0);
        for _ in 0..400 {
            r = step_robot(&w, &r, 0.1, &mut rng);
            assert!(dist(r.pos, [5.0, 5.0]) >= 0.5 + MOVE_CLEARANCE);
        }
        assert!(r.pos[1] != 5.0);
    }

    #[test]
    fn angles() {
        assert!((angle_between(0.1, -0.1) - 0.2).abs() < 1e-12);
        assert!((angle_between(PI - 0.1, -PI + 0.1) - 0.2).abs() < 1e-12);
    }

    fn short(duration: f64) -> ScenarioConfig {
        ScenarioConfig {
            duration_s: duration,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn zero_duration_publishes_nothing() {
        let mut sink = MemorySink::default();
        let s = run_fleet_scenario(&short(0.0), &mut sink, None).unwrap();
        assert_eq!(s.published, 0);
        assert!(sink.messages.is_empty());
        assert_eq!(sink.descriptors.len(), 10);
    }

    #[test]
    fn publishes_ten_streams_at_one_hertz() {
        let mut sink = MemorySink::default();
        let s = run_fleet_scenario(&short(5.0), &mut sink, None).unwrap();
        assert_eq!(s.published, 50);
        assert_eq!(s.steps, 50);
        let ids: std::collections::BTreeSet<_> = sink.messages.iter().map(|m| m.stream.as_str().to_string()).collect();
        assert_eq!(ids.len(), 10);
        assert!(ids.contains("robot4/battery") && ids.contains("robot5/wifi"));
        let stamps: Vec<u64> = sink
            .messages
            .iter()
            .filter(|m| m.stream.as_str() == "robot1/wifi")
            .map(|m| m.stamp.secs())
            .collect();
        assert_eq!(stamps, (1_700_000_000..1_700_000_005).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_output() {
        let run = |seed| {
            let mut sink = MemorySink::default();
            let cfg = ScenarioConfig { seed, ..short(60.0) };
            run_fleet_scenario(&cfg, &mut sink, None).unwrap();
            sink.messages
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }
}
