use nalgebra::Vector2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ScenarioConfig, ScriptedCrossing, SimulatorError};
use crate::records::{BoxRecord, FrameRecords, ObjectId, Sequence};
use crate::rng;

/// Seconds of scripted approach before a meeting.
const APPROACH_S: f64 = 5.0;
/// Seconds of scripted departure after a meeting.
const DEPART_S: f64 = 1.5;
const DEPART_ACCEL: f64 = 3.0;
/// Half-width of the departure cone, degrees.
const DEPART_SPREAD_DEG: f64 = 60.0;
const WAYPOINT_REACHED: f64 = 0.5;

type V2 = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayerPose {
    pub id: ObjectId,
    pub x: f64,
    pub y: f64,
    /// Direction of travel, radians.
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
}

impl PlayerPose {
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFrame {
    pub timestamp: f64,
    pub poses: Vec<PlayerPose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub seed: u64,
    pub frames: Vec<ScenarioFrame>,
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Ground-truth BEV boxes: the square footprint of each body cylinder.
    pub fn ground_truth(&self) -> Sequence {
        let d = 2.0 * self.cfg.body.radius;
        Sequence::new(
            self.frames
                .iter()
                .map(|f| FrameRecords::new(f.timestamp, f.poses.iter().map(|p| BoxRecord::new(p.id, p.x, p.y, d, d)).collect()))
                .collect(),
        )
    }
}

/// Kinematic plan for one scripted player.
#[derive(Debug, Clone, Copy)]
struct Plan {
    t0: f64,
    p0: V2,
    v0: V2,
    meet: V2,
    t_meet: f64,
    t_leave: f64,
    t_release: f64,
    depart_dir: V2,
    depart_speed: f64,
}

impl Plan {
    fn position(&self, t: f64) -> V2 {
        if t <= self.t_meet {
            let span = self.t_meet - self.t0;
            let s = ((t - self.t0) / span).clamp(0.0, 1.0);
            // cubic Hermite from (p0, v0) to (meet, 0)
            let (s2, s3) = (s * s, s * s * s);
            let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
            let h10 = s3 - 2.0 * s2 + s;
            let h01 = -2.0 * s3 + 3.0 * s2;
            self.p0 * h00 + self.v0 * (h10 * span) + self.meet * h01
        } else if t <= self.t_leave {
            self.meet
        } else {
            let tau = t - self.t_leave;
            let t_cap = self.depart_speed / DEPART_ACCEL;
            let dist = if tau <= t_cap {
                0.5 * DEPART_ACCEL * tau * tau
            } else {
                0.5 * DEPART_ACCEL * t_cap * t_cap + self.depart_speed * (tau - t_cap)
            };
            self.meet + self.depart_dir * dist
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Player {
    id: ObjectId,
    p: V2,
    v: V2,
    waypoint: V2,
    cruise: f64,
    heading: f64,
    plan: Option<Plan>,
}

/// Deterministic scenario for `(cfg, seed)`.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario, SimulatorError> {
    cfg.validate()?;
    check_script_overlap(cfg)?;
    let mut rng = rng::stream(seed, &[0x5CE7]);
    let (l, w) = (cfg.court_length, cfg.court_width);
    let m = &cfg.motion;
    let dt = cfg.dt();

    let starts = place_players(cfg, &mut rng)?;
    let mut players: Vec<Player> = starts
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let cruise = m.max_speed * rng.random_range(m.cruise_fraction.0..=m.cruise_fraction.1);
            Player {
                id: i as ObjectId + 1,
                p,
                v: V2::zeros(),
                waypoint: random_waypoint(&mut rng, l, w),
                cruise,
                heading: 0.0,
                plan: None,
            }
        })
        .collect();

    let mut started = vec![false; cfg.crossings.len()];
    let mut frames = Vec::with_capacity(cfg.frame_count());
    frames.push(snapshot(0.0, &players));
    for k in 1..cfg.frame_count() {
        let (t_prev, t) = ((k - 1) as f64 * dt, k as f64 * dt);

        for (ci, c) in cfg.crossings.iter().enumerate() {
            if !started[ci] && script_window(c).0 < t {
                started[ci] = true;
                start_crossing(c, t_prev, &mut players, cfg, &mut rng);
            }
        }

        let before: Vec<V2> = players.iter().map(|p| p.p).collect();
        let scripted: Vec<bool> = players.iter().map(|p| p.plan.is_some()).collect();
        for i in 0..players.len() {
            let pl = &mut players[i];
            if let Some(plan) = pl.plan {
                pl.p = clamp_to_court(plan.position(t), l, w, m.margin);
                pl.v = (pl.p - before[i]) / dt;
                if t >= plan.t_release {
                    pl.plan = None;
                    let ahead = pl.p + plan.depart_dir * 5.0;
                    pl.waypoint = clamp_to_court(ahead, l, w, -0.5);
                }
                continue;
            }
            if (pl.waypoint - pl.p).norm() < WAYPOINT_REACHED || rng.random::<f64>() < m.waypoint_churn * dt {
                pl.waypoint = random_waypoint(&mut rng, l, w);
            }
            let to_wp = pl.waypoint - pl.p;
            let dist = to_wp.norm();
            let mut desired = if dist > 1e-9 { to_wp / dist * pl.cruise.min(2.0 * dist) } else { V2::zeros() };
            for (j, &q) in before.iter().enumerate() {
                if j == i {
                    continue;
                }
                let away = pl.p - q;
                let d = away.norm();
                if d < m.repulsion_radius && d > 1e-9 {
                    let gain = if scripted[j] { 2.0 } else { 1.0 } * m.repulsion_gain;
                    desired += away / d * gain * (1.0 - d / m.repulsion_radius);
                }
            }
            let mut dv = desired - pl.v;
            let max_dv = m.max_accel * dt;
            if dv.norm() > max_dv {
                dv *= max_dv / dv.norm();
            }
            pl.v += dv;
            if pl.v.norm() > m.max_speed {
                pl.v *= m.max_speed / pl.v.norm();
            }
            let next = pl.p + pl.v * dt;
            let clamped = clamp_to_court(next, l, w, m.margin);
            if clamped.x != next.x {
                pl.v.x = 0.0;
            }
            if clamped.y != next.y {
                pl.v.y = 0.0;
            }
            pl.p = clamped;
        }
        for pl in players.iter_mut() {
            if pl.v.norm() > 0.05 {
                pl.heading = pl.v.y.atan2(pl.v.x);
            }
        }
        frames.push(snapshot(t, &players));
    }
    Ok(Scenario {
        cfg: cfg.clone(),
        seed,
        frames,
    })
}

fn snapshot(t: f64, players: &[Player]) -> ScenarioFrame {
    ScenarioFrame {
        timestamp: t,
        poses: players
            .iter()
            .map(|p| PlayerPose {
                id: p.id,
                x: p.p.x,
                y: p.p.y,
                heading: p.heading,
                vx: p.v.x,
                vy: p.v.y,
            })
            .collect(),
    }
}

fn random_waypoint(rng: &mut ChaCha8Rng, l: f64, w: f64) -> V2 {
    V2::new(rng.random_range(0.5..l - 0.5), rng.random_range(0.5..w - 0.5))
}

fn clamp_to_court(p: V2, l: f64, w: f64, margin: f64) -> V2 {
    V2::new(p.x.clamp(-margin, l + margin), p.y.clamp(-margin, w + margin))
}

fn place_players(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Vec<V2>, SimulatorError> {
    let (l, w) = (cfg.court_length, cfg.court_width);
    let preferred = cfg.min_spacing().max(cfg.motion.repulsion_radius);
    for spacing in [preferred, cfg.min_spacing()] {
        'attempt: for _ in 0..50 {
            let mut out: Vec<V2> = Vec::with_capacity(cfg.player_count);
            while out.len() < cfg.player_count {
                let mut placed = false;
                for _ in 0..500 {
                    let c = random_waypoint(rng, l, w);
                    if out.iter().all(|q| (q - c).norm() >= spacing) {
                        out.push(c);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    continue 'attempt;
                }
            }
            return Ok(out);
        }
    }
    Err(SimulatorError::Config(format!(
        "could not place {} players at {:.2} m spacing",
        cfg.player_count,
        cfg.min_spacing()
    )))
}

fn script_window(c: &ScriptedCrossing) -> (f64, f64) {
    let start = (c.time_s - c.dwell_s / 2.0 - APPROACH_S).max(0.0);
    (start, c.time_s + c.dwell_s / 2.0 + DEPART_S)
}

fn check_script_overlap(cfg: &ScenarioConfig) -> Result<(), SimulatorError> {
    for (i, a) in cfg.crossings.iter().enumerate() {
        for b in &cfg.crossings[i + 1..] {
            let shared = [a.a, a.b].iter().any(|id| *id == b.a || *id == b.b);
            let (s1, e1) = script_window(a);
            let (s2, e2) = script_window(b);
            if shared && s1 < e2 && s2 < e1 {
                return Err(SimulatorError::Config(format!(
                    "crossings at {} s and {} s script the same player at overlapping times",
                    a.time_s, b.time_s
                )));
            }
        }
    }
    Ok(())
}

fn start_crossing(c: &ScriptedCrossing, t0: f64, players: &mut [Player], cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) {
    let (ia, ib) = (c.a as usize - 1, c.b as usize - 1);
    let (pa, pb) = (players[ia].p, players[ib].p);
    let inset = 3.0f64.min(cfg.court_width / 2.0).min(cfg.court_length / 2.0);
    let mid = (pa + pb) / 2.0;
    let mid = V2::new(
        mid.x.clamp(inset, cfg.court_length - inset),
        mid.y.clamp(inset, cfg.court_width - inset),
    );
    let sep = pa - pb;
    let u = if sep.norm() > 1e-9 { sep / sep.norm() } else { V2::new(1.0, 0.0) };
    let t_meet = (c.time_s - c.dwell_s / 2.0).max(t0 + cfg.dt());
    let t_leave = c.time_s + c.dwell_s / 2.0;
    let spread = DEPART_SPREAD_DEG.to_radians();
    for (idx, side) in [(ia, 1.0), (ib, -1.0)] {
        let phi: f64 = rng.random_range(-spread..=spread);
        let (s, co) = phi.sin_cos();
        let base = u * side;
        let dir = V2::new(co * base.x - s * base.y, s * base.x + co * base.y);
        let p = &mut players[idx];
        p.plan = Some(Plan {
            t0,
            p0: p.p,
            v0: p.v,
            meet: mid + u * (side * c.separation / 2.0),
            t_meet,
            t_leave: t_leave.max(t_meet),
            t_release: t_leave.max(t_meet) + DEPART_S,
            depart_dir: dir,
            depart_speed: p.cruise.min(cfg.motion.max_speed),
        });
    }
}
