//! Synthetic corner-kick data drawn from a known parameter set.
//!
//! Attacker trajectories come from a simple motion model; each defender's
//! latent chain is then simulated exactly as inference assumes it: the
//! initial state is drawn from the model's initial distribution, positions
//! are emitted independently per frame from the current state's emission,
//! and the next state is drawn from the covariate-dependent kernel
//! evaluated on the just-emitted observation. The generated dataset
//! therefore follows the generative process the estimator targets, and the
//! latent truth (zone pairing plus per-frame states) is returned alongside
//! for recovery checks.

use crate::error::{Error, Result};
use crate::linalg::{sqrt_spd, Mat2, Vec2};
use crate::model::{
    marking_mean, transition_matrix, CdhmmParams, MarkingBinGrid, TransitionWeights,
    ZonalGaussian,
};
use crate::tracking::{
    CornerSequence, Dataset, DeliveryType, Frame, PitchGeometry, PlayerFrame, PlayerId, Team, FPS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Attackers never exceed this speed (m/s), whatever the motion model says.
pub const MAX_ATTACKER_SPEED: f64 = 9.0;

/// Standard pre-delivery context: delivery at frame 25 (1 s at 25 Hz),
/// clamped into range for very short sequences.
pub const DEFAULT_DELIVERY_FRAME: usize = 25;

// ---------------------------------------------------------------------------
// Scenario specification
// ---------------------------------------------------------------------------

/// How the attackers move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerMotion {
    /// Straight constant-speed runs from `starts[k]` toward `targets[k]`;
    /// attackers stop on arrival.
    Runs { starts: Vec<[f64; 2]>, targets: Vec<[f64; 2]>, speed: f64 },
    /// Velocity random walk: start positions uniform in the given box,
    /// per-frame Gaussian acceleration, speed capped at
    /// `min(max_speed, MAX_ATTACKER_SPEED)`.
    RandomWalk {
        x_range: (f64, f64),
        y_range: (f64, f64),
        accel_std: f64,
        max_speed: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    /// Ground-truth parameters (typically built by [`truth_params`]).
    pub truth: CdhmmParams,
    pub frames: usize,
    pub sequences: usize,
    pub motion: AttackerMotion,
    pub seed: u64,
}

/// Latent ground truth for one generated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTruth {
    pub sequence_id: String,
    /// Zone paired with each defender (defender `j` uses zone `zone_of[j]`).
    pub zone_of: Vec<usize>,
    /// Per defender, the latent state at every frame (`K` = zonal).
    pub states: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub truths: Vec<SequenceTruth>,
}

/// Zone means spread evenly along the six-yard line, the usual layout for
/// synthetic scenarios.
pub fn spread_zone_means(k: usize) -> Vec<Vec2> {
    let pitch = PitchGeometry::canonical();
    let span = pitch.six_yard_half_span();
    (0..k)
        .map(|i| {
            let y = if k == 1 {
                0.0
            } else {
                -span + 2.0 * span * i as f64 / (k - 1) as f64
            };
            Vec2::new(pitch.six_yard_line_x, y)
        })
        .collect()
}

/// Assemble a ground-truth parameter set: given zones, a spatially uniform
/// marking grid, and raw (identity-standardized) covariate weights.
#[allow(clippy::too_many_arguments)]
pub fn truth_params(
    team_id: &str,
    delivery_type: DeliveryType,
    zone_means: &[Vec2],
    zone_cov: &Mat2,
    gamma_o: f64,
    sigma2: f64,
    beta: TransitionWeights,
    pi: Vec<f64>,
) -> Result<CdhmmParams> {
    let pitch = PitchGeometry::canonical();
    let zones = zone_means
        .iter()
        .map(|m| ZonalGaussian::new(*m, *zone_cov))
        .collect::<Result<Vec<_>>>()?;
    let params = CdhmmParams {
        team_id: team_id.to_string(),
        delivery_type,
        zones,
        grid: MarkingBinGrid::canonical(&pitch, gamma_o, sigma2),
        beta,
        pi,
        goal: pitch.goal(),
        standardizer: crate::covariates::StandardizationStats::identity(),
    };
    params.validate()?;
    Ok(params)
}

/// Ready-made scenario: `k` zones along the six-yard line, sticky marking
/// and zonal states, mostly zonal starts, and attackers on a bounded random
/// walk through the box. Produces data every estimator default can learn
/// from, which makes it the stock input for end-to-end runs.
#[allow(clippy::too_many_arguments)]
pub fn standard_scenario(
    team_id: &str,
    delivery_type: DeliveryType,
    attackers: usize,
    frames: usize,
    sequences: usize,
    seed: u64,
    gamma_o: f64,
    sigma2: f64,
) -> Result<ScenarioSpec> {
    if attackers == 0 {
        return Err(Error::Validation("a scenario needs at least one attacker".into()));
    }
    let mut beta = TransitionWeights::zeros();
    beta.man[0] = 3.0; // sticky marking
    beta.zonal[0] = 3.0; // sticky zone
    let mut pi = vec![0.3 / attackers as f64; attackers + 1];
    pi[attackers] = 0.7;
    let truth = truth_params(
        team_id,
        delivery_type,
        &spread_zone_means(attackers),
        &Mat2::identity(),
        gamma_o,
        sigma2,
        beta,
        pi,
    )?;
    Ok(ScenarioSpec {
        truth,
        frames,
        sequences,
        motion: AttackerMotion::RandomWalk {
            x_range: (-9.0, 6.0),
            y_range: (-12.0, 12.0),
            accel_std: 1.5,
            max_speed: 7.0,
        },
        seed,
    })
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

fn attacker_trajectories(
    motion: &AttackerMotion,
    k_count: usize,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec2>, Vec<Vec2>)> {
    let dt = 1.0 / FPS;
    let mut pos = vec![Vec2::zeros(); frames * k_count];
    let mut vel = vec![Vec2::zeros(); frames * k_count];
    match motion {
        AttackerMotion::Runs { starts, targets, speed } => {
            if starts.len() != k_count || targets.len() != k_count {
                return Err(Error::Validation(format!(
                    "motion lists {} starts / {} targets for {k_count} attackers",
                    starts.len(),
                    targets.len()
                )));
            }
            let speed = speed.min(MAX_ATTACKER_SPEED);
            if !(speed >= 0.0) {
                return Err(Error::Validation(format!("invalid run speed {speed}")));
            }
            for k in 0..k_count {
                let start = Vec2::new(starts[k][0], starts[k][1]);
                let target = Vec2::new(targets[k][0], targets[k][1]);
                let leg = target - start;
                let len = leg.norm();
                let dir = if len > 1e-12 { leg / len } else { Vec2::zeros() };
                for t in 0..frames {
                    let travelled = (speed * t as f64 * dt).min(len);
                    pos[t * k_count + k] = start + dir * travelled;
                    vel[t * k_count + k] =
                        if travelled < len { dir * speed } else { Vec2::zeros() };
                }
            }
        }
        AttackerMotion::RandomWalk { x_range, y_range, accel_std, max_speed } => {
            if !(x_range.0 < x_range.1) || !(y_range.0 < y_range.1) {
                return Err(Error::Validation("empty random-walk start box".into()));
            }
            if !(*accel_std >= 0.0) {
                return Err(Error::Validation(format!("invalid accel_std {accel_std}")));
            }
            let cap = max_speed.min(MAX_ATTACKER_SPEED);
            let accel = Normal::new(0.0, *accel_std).expect("validated std");
            for k in 0..k_count {
                let mut p = Vec2::new(
                    rng.random_range(x_range.0..x_range.1),
                    rng.random_range(y_range.0..y_range.1),
                );
                let mut v = Vec2::zeros();
                for t in 0..frames {
                    pos[t * k_count + k] = p;
                    vel[t * k_count + k] = v;
                    v += Vec2::new(accel.sample(rng), accel.sample(rng));
                    let speed = v.norm();
                    if speed > cap {
                        v *= cap / speed;
                    }
                    p += v * dt;
                }
            }
        }
    }
    Ok((pos, vel))
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

struct DefenderDraw {
    positions: Vec<Vec2>,
    velocities: Vec<Vec2>,
    states: Vec<usize>,
}

/// Simulate one defender chain against fixed attacker trajectories.
#[allow(clippy::too_many_arguments)]
fn simulate_defender(
    params: &CdhmmParams,
    zone: usize,
    att_pos: &[Vec2],
    att_vel: &[Vec2],
    k_count: usize,
    frames: usize,
    meta: (f64, f64),
    att_meta: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
) -> DefenderDraw {
    let n = k_count + 1;
    let zone_gauss = &params.zones[zone];
    let zone_ref = zone_gauss.zone_ref();
    let zone_sqrt = sqrt_spd(&zone_gauss.cov);
    let (height, weight) = meta;

    let mut positions = Vec::with_capacity(frames);
    let mut velocities = Vec::with_capacity(frames);
    let mut states = Vec::with_capacity(frames);

    let mut state = sample_categorical(rng, &params.pi);
    for t in 0..frames {
        states.push(state);
        // Emit the observation for the current state.
        let noise = Vec2::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let (pos, vel) = if state < k_count {
            let att = att_pos[t * k_count + state];
            let cell = params.grid.cell(params.grid.bin_index(&att));
            let mean = marking_mean(cell, &att, &params.goal);
            // Mean-path velocity: the marking mean moves with the attacker,
            // scaled by the local attacker coefficient.
            (mean + noise * cell.sigma2.sqrt(), att_vel[t * k_count + state] * cell.gamma_o)
        } else {
            (zone_gauss.mean + zone_sqrt * noise, Vec2::zeros())
        };
        positions.push(pos);
        velocities.push(vel);

        // Draw the next state from the kernel at the emitted observation.
        if t + 1 < frames {
            let mut fc = crate::covariates::FrameCovariates {
                man_mark: (0..k_count)
                    .map(|k| {
                        crate::covariates::man_mark_features(
                            &pos,
                            &vel,
                            &att_pos[t * k_count + k],
                            &att_vel[t * k_count + k],
                            att_meta[k].0,
                            att_meta[k].1,
                        )
                    })
                    .collect(),
                switch: Vec::new(),
                zonal: crate::covariates::zonal_features(&pos, &vel, &zone_ref, height, weight),
            };
            fc.switch = fc.man_mark.clone();
            params.standardizer.apply_frame(&mut fc);
            let trans = transition_matrix(&params.beta, &fc);
            let row: Vec<f64> = (0..n).map(|s| trans[(state, s)]).collect();
            state = sample_categorical(rng, &row);
        }
    }
    DefenderDraw { positions, velocities, states }
}

/// Generate one sequence. Draw order is fixed (attacker trajectories, then
/// attacker and defender body metadata, then one chain per defender), so a
/// seed fully determines the output.
fn generate_sequence(spec: &ScenarioSpec, index: usize) -> Result<(CornerSequence, SequenceTruth)> {
    let params = &spec.truth;
    let k_count = params.attacker_count();
    let frames = spec.frames;
    if frames < 2 {
        return Err(Error::Validation("synthetic sequences need at least 2 frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(index as u64));

    let (att_pos, att_vel) = attacker_trajectories(&spec.motion, k_count, frames, &mut rng)?;
    let att_meta: Vec<(f64, f64)> = (0..k_count)
        .map(|_| (rng.random_range(1.68..1.95), rng.random_range(62.0..95.0)))
        .collect();
    let def_meta: Vec<(f64, f64)> = (0..k_count)
        .map(|_| (rng.random_range(1.68..1.95), rng.random_range(62.0..95.0)))
        .collect();

    // Defender j is paired with zone j; the recovered pairing is matched up
    // to permutation anyway.
    let draws: Vec<DefenderDraw> = (0..k_count)
        .map(|j| {
            simulate_defender(
                params,
                j,
                &att_pos,
                &att_vel,
                k_count,
                frames,
                def_meta[j],
                &att_meta,
                &mut rng,
            )
        })
        .collect();

    let sequence_id = format!("synth-{index:04}");
    let frames_out: Vec<Frame> = (0..frames)
        .map(|t| {
            let mut players = Vec::with_capacity(2 * k_count);
            for (j, draw) in draws.iter().enumerate() {
                players.push(PlayerFrame {
                    id: PlayerId(format!("D{j:02}")),
                    team: Team::Defending,
                    gk: false,
                    x: draw.positions[t].x,
                    y: draw.positions[t].y,
                    vx: draw.velocities[t].x,
                    vy: draw.velocities[t].y,
                    h: def_meta[j].0,
                    w: def_meta[j].1,
                });
            }
            for k in 0..k_count {
                players.push(PlayerFrame {
                    id: PlayerId(format!("A{k:02}")),
                    team: Team::Attacking,
                    gk: false,
                    x: att_pos[t * k_count + k].x,
                    y: att_pos[t * k_count + k].y,
                    vx: att_vel[t * k_count + k].x,
                    vy: att_vel[t * k_count + k].y,
                    h: att_meta[k].0,
                    w: att_meta[k].1,
                });
            }
            Frame { t, players }
        })
        .collect();

    let delivery_frame = DEFAULT_DELIVERY_FRAME.min(frames - 1);
    let sequence = CornerSequence {
        sequence_id: sequence_id.clone(),
        delivery_type: params.delivery_type,
        defending_team_id: params.team_id.clone(),
        delivery_frame,
        first_contact: Some(crate::tracking::FirstContact {
            frame: delivery_frame,
            player_id: PlayerId("A00".to_string()),
        }),
        canonical: true,
        game_id: Some(format!("synth-game-{:03}", index / 10)),
        short_corner: false,
        orientation: None,
        frames: frames_out,
    };
    let truth = SequenceTruth {
        sequence_id,
        zone_of: (0..k_count).collect(),
        states: draws.into_iter().map(|d| d.states).collect(),
    };
    Ok((sequence, truth))
}

/// Generate a full dataset plus its latent truth, one sequence per
/// `spec.seed + index`.
pub fn generate_dataset(spec: &ScenarioSpec) -> Result<SyntheticDataset> {
    spec.truth.validate()?;
    if spec.sequences == 0 {
        return Err(Error::Validation("scenario generates zero sequences".into()));
    }
    let mut sequences = Vec::with_capacity(spec.sequences);
    let mut truths = Vec::with_capacity(spec.sequences);
    for i in 0..spec.sequences {
        let (seq, truth) = generate_sequence(spec, i)?;
        sequences.push(seq);
        truths.push(truth);
    }
    Ok(SyntheticDataset { dataset: Dataset::new(sequences)?, truths })
}
