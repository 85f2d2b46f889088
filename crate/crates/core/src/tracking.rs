//! Corner-kick tracking data: domain types, JSONL I/O, canonicalization,
//! velocity estimation, and training-set filtering.
//!
//! All modeling code runs in *canonical coordinates*: the origin sits on the
//! defending team's penalty spot, the defended goal line is the vertical line
//! `x = -10.9728` (12 yards behind the spot), and the delivery corner is on
//! the positive-`y` side. One tracking record per JSONL line:
//!
//! ```json
//! {"sequence_id":"s1","delivery_type":"inswing","defending_team_id":"T1",
//!  "delivery_frame":25,"first_contact":{"frame":60,"player_id":"A4"},
//!  "canonical":true,
//!  "frames":[{"t":0,"players":[{"id":"D1","team":"defending","gk":false,
//!    "x":1.0,"y":2.0,"vx":0.1,"vy":0.0,"h":1.85,"w":80.0}]}]}
//! ```
//!
//! Optional per-record fields: `game_id` (groups sequences into games for
//! per-game metrics), `short_corner` (annotation, filtered before training),
//! and `orientation` (raw pitch-centered records only; tells `canonicalize`
//! which goal end is defended and which corner the delivery comes from).

use crate::error::{Error, Result};
use crate::linalg::Vec2;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

/// Tracking frame rate (frames per second).
pub const FPS: f64 = 25.0;

const YARD: f64 = 0.9144;

/// Largest height/weight speeds etc. are validated against on load.
const HEIGHT_RANGE: (f64, f64) = (1.4, 2.2);
const WEIGHT_RANGE: (f64, f64) = (50.0, 120.0);

// ---------------------------------------------------------------------------
// Pitch geometry
// ---------------------------------------------------------------------------

/// Axis-aligned rectangle in pitch coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn contains(&self, p: &Vec2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }
}

/// Pitch landmarks in canonical (penalty-spot-origin) coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchGeometry {
    /// Center of the defended goal mouth; lies on the goal line.
    pub goal_center: [f64; 2],
    /// Coordinates are centered on the defending team's penalty spot.
    pub penalty_spot_origin: bool,
    /// x of the six-yard line (the line parallel to the goal line, 6 yd out).
    pub six_yard_line_x: f64,
    pub penalty_area_bounds: Rect,
    pub goal_line_x: f64,
}

impl PitchGeometry {
    /// Standard 105 m x 68 m pitch with yard-exact box dimensions.
    pub fn canonical() -> Self {
        let goal_line_x = -12.0 * YARD; // -10.9728
        PitchGeometry {
            goal_center: [goal_line_x, 0.0],
            penalty_spot_origin: true,
            six_yard_line_x: goal_line_x + 6.0 * YARD,
            penalty_area_bounds: Rect {
                min_x: goal_line_x,
                min_y: -22.0 * YARD,
                max_x: goal_line_x + 18.0 * YARD,
                max_y: 22.0 * YARD,
            },
            goal_line_x,
        }
    }

    pub fn goal(&self) -> Vec2 {
        Vec2::new(self.goal_center[0], self.goal_center[1])
    }

    /// Half-width of the six-yard box (goal mouth plus six yards each side).
    pub fn six_yard_half_span(&self) -> f64 {
        10.0 * YARD
    }
}

impl Default for PitchGeometry {
    fn default() -> Self {
        Self::canonical()
    }
}

// ---------------------------------------------------------------------------
// Domain types (serde-mapped to the JSONL schema)
// ---------------------------------------------------------------------------

/// Opaque player identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(pub String);

impl std::fmt::Display for PlayerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PlayerId {
    fn from(s: &str) -> Self {
        PlayerId(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Team {
    Attacking,
    Defending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeliveryType {
    Inswing,
    Outswing,
}

impl std::fmt::Display for DeliveryType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DeliveryType::Inswing => "inswing",
            DeliveryType::Outswing => "outswing",
        })
    }
}

/// One player's state in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerFrame {
    pub id: PlayerId,
    pub team: Team,
    /// Goalkeeper flag; goalkeepers are excluded from assignment modeling.
    pub gk: bool,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// Height in meters.
    pub h: f64,
    /// Weight in kilograms.
    pub w: f64,
}

impl PlayerFrame {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.vx, self.vy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// Frame index within the sequence; must run 0, 1, 2, ... (25 Hz).
    pub t: usize,
    pub players: Vec<PlayerFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstContact {
    pub frame: usize,
    pub player_id: PlayerId,
}

/// Which goal end is defended and which corner the ball comes from, for raw
/// pitch-centered records. `canonicalize` reflects/translates into canonical
/// coordinates using this.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawOrientation {
    pub goal_end: GoalEnd,
    pub corner: CornerSide,
    #[serde(default = "default_pitch_length")]
    pub pitch_length: f64,
    #[serde(default = "default_pitch_width")]
    pub pitch_width: f64,
}

fn default_pitch_length() -> f64 {
    105.0
}
fn default_pitch_width() -> f64 {
    68.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalEnd {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CornerSide {
    Top,
    Bottom,
}

/// One corner-kick sequence: a second of pre-delivery context plus up to two
/// seconds (or until the second on-ball event) after the delivery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerSequence {
    pub sequence_id: String,
    pub delivery_type: DeliveryType,
    pub defending_team_id: String,
    pub delivery_frame: usize,
    pub first_contact: Option<FirstContact>,
    pub canonical: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game_id: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub short_corner: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<RawOrientation>,
    pub frames: Vec<Frame>,
}

impl CornerSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    fn validate(&self, line: usize) -> Result<()> {
        let err = |message: String| Error::Schema { line, message };
        if self.frames.is_empty() {
            return Err(err(format!("sequence {}: no frames", self.sequence_id)));
        }
        if self.delivery_frame >= self.frames.len() {
            return Err(err(format!(
                "sequence {}: delivery_frame {} out of range (T = {})",
                self.sequence_id,
                self.delivery_frame,
                self.frames.len()
            )));
        }
        if let Some(fc) = &self.first_contact {
            if fc.frame >= self.frames.len() {
                return Err(err(format!(
                    "sequence {}: first_contact frame {} out of range",
                    self.sequence_id, fc.frame
                )));
            }
        }
        for (idx, frame) in self.frames.iter().enumerate() {
            if frame.t != idx {
                return Err(err(format!(
                    "sequence {}: frame index {} found where {} expected (non-consecutive 25 Hz frames)",
                    self.sequence_id, frame.t, idx
                )));
            }
            if frame.players.is_empty() {
                return Err(err(format!(
                    "sequence {}: frame {} has no players",
                    self.sequence_id, idx
                )));
            }
            for p in &frame.players {
                for (name, v) in [("x", p.x), ("y", p.y), ("vx", p.vx), ("vy", p.vy)] {
                    if !v.is_finite() {
                        return Err(err(format!(
                            "sequence {}: player {} has non-finite {name} at frame {idx}",
                            self.sequence_id, p.id
                        )));
                    }
                }
                if !(p.h > HEIGHT_RANGE.0 && p.h < HEIGHT_RANGE.1) {
                    return Err(err(format!(
                        "sequence {}: player {} height {} m outside ({}, {})",
                        self.sequence_id, p.id, p.h, HEIGHT_RANGE.0, HEIGHT_RANGE.1
                    )));
                }
                if !(p.w > WEIGHT_RANGE.0 && p.w < WEIGHT_RANGE.1) {
                    return Err(err(format!(
                        "sequence {}: player {} weight {} kg outside ({}, {})",
                        self.sequence_id, p.id, p.w, WEIGHT_RANGE.0, WEIGHT_RANGE.1
                    )));
                }
            }
        }
        if self.delivery_frame != 25 {
            log::warn!(
                "sequence {}: delivery at frame {} (expected 25 = 1 s of pre-delivery context)",
                self.sequence_id,
                self.delivery_frame
            );
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// A collection of corner sequences with unique ids, indexable by
/// (defending team, delivery type) — models are trained per such group.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub sequences: Vec<CornerSequence>,
}

impl Dataset {
    pub fn new(sequences: Vec<CornerSequence>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &sequences {
            if !seen.insert(s.sequence_id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate sequence_id {:?}",
                    s.sequence_id
                )));
            }
        }
        Ok(Dataset { sequences })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sequence indices grouped by (defending team, delivery type), with
    /// deterministic (sorted) group order.
    pub fn groups(&self) -> BTreeMap<(String, DeliveryType), Vec<usize>> {
        let mut map: BTreeMap<(String, DeliveryType), Vec<usize>> = BTreeMap::new();
        for (i, s) in self.sequences.iter().enumerate() {
            map.entry((s.defending_team_id.clone(), s.delivery_type))
                .or_default()
                .push(i);
        }
        map
    }

    /// Sequences for one (team, delivery type) group, in dataset order.
    pub fn group(&self, team: &str, delivery: DeliveryType) -> Vec<&CornerSequence> {
        self.sequences
            .iter()
            .filter(|s| s.defending_team_id == team && s.delivery_type == delivery)
            .collect()
    }
}

/// Read a JSONL tracking file. Malformed records abort the load with the
/// 1-based line number; blank lines are ignored.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut sequences = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: CornerSequence = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        seq.validate(i + 1)?;
        sequences.push(seq);
    }
    Dataset::new(sequences)
}

/// Write a dataset back out as JSONL (one record per line). Finite values
/// round-trip bit-identically through `load_dataset`.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    for seq in &dataset.sequences {
        serde_json::to_writer(&mut writer, seq)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Canonicalization
// ---------------------------------------------------------------------------

/// Map a raw pitch-centered sequence into canonical coordinates: defended
/// goal on the negative-x end, delivery corner on the positive-y side,
/// origin on the defending penalty spot. Velocities are reflected with the
/// positions (translation leaves them unchanged). Already-canonical
/// sequences pass through untouched.
pub fn canonicalize(seq: &CornerSequence, pitch: &PitchGeometry) -> Result<CornerSequence> {
    if seq.canonical {
        return Ok(seq.clone());
    }
    let orientation = seq.orientation.ok_or_else(|| {
        Error::Validation(format!(
            "sequence {}: unknown corner side (non-canonical record without orientation)",
            seq.sequence_id
        ))
    })?;
    let flip_x = orientation.goal_end == GoalEnd::Right;
    let flip_y = orientation.corner == CornerSide::Bottom;
    // Penalty spot sits |goal_line_x| inside the pitch from the goal line.
    let shift_x = orientation.pitch_length / 2.0 + pitch.goal_line_x;

    let mut out = seq.clone();
    for frame in &mut out.frames {
        for p in &mut frame.players {
            if flip_x {
                p.x = -p.x;
                p.vx = -p.vx;
            }
            if flip_y {
                p.y = -p.y;
                p.vy = -p.vy;
            }
            p.x += shift_x;
        }
    }
    out.canonical = true;
    out.orientation = None;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Velocity estimation
// ---------------------------------------------------------------------------

/// Re-estimate velocities from positions with central finite differences
/// (one-sided at the sequence ends), then smooth each velocity component
/// with a centered moving average of the given odd window (edge-clamped).
/// `window = 1` leaves the finite differences unsmoothed.
pub fn estimate_velocities(seq: &CornerSequence, window: usize) -> Result<CornerSequence> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Validation(format!(
            "smoothing window must be odd and >= 1, got {window}"
        )));
    }
    let t_len = seq.frames.len();
    if t_len < 2 {
        return Err(Error::Validation(format!(
            "sequence {}: need at least 2 frames to estimate velocities",
            seq.sequence_id
        )));
    }
    let roster = consistent_roster(seq)?;
    let mut out = seq.clone();
    for id in &roster {
        let idx_per_frame: Vec<usize> = seq
            .frames
            .iter()
            .map(|f| f.players.iter().position(|p| &p.id == id).expect("roster-checked"))
            .collect();
        let pos: Vec<Vec2> = seq
            .frames
            .iter()
            .zip(&idx_per_frame)
            .map(|(f, &i)| f.players[i].position())
            .collect();
        let mut vel = vec![Vec2::zeros(); t_len];
        for t in 0..t_len {
            vel[t] = if t == 0 {
                (pos[1] - pos[0]) * FPS
            } else if t == t_len - 1 {
                (pos[t_len - 1] - pos[t_len - 2]) * FPS
            } else {
                (pos[t + 1] - pos[t - 1]) * (FPS / 2.0)
            };
        }
        let half = window / 2;
        let smoothed: Vec<Vec2> = (0..t_len)
            .map(|t| {
                let lo = t.saturating_sub(half);
                let hi = (t + half).min(t_len - 1);
                let mut acc = Vec2::zeros();
                for v in &vel[lo..=hi] {
                    acc += *v;
                }
                acc / (hi - lo + 1) as f64
            })
            .collect();
        for (t, &i) in idx_per_frame.iter().enumerate() {
            out.frames[t].players[i].vx = smoothed[t].x;
            out.frames[t].players[i].vy = smoothed[t].y;
        }
    }
    Ok(out)
}

/// The player-id set of frame 0, after checking every frame carries exactly
/// the same players.
fn consistent_roster(seq: &CornerSequence) -> Result<Vec<PlayerId>> {
    let first: BTreeSet<PlayerId> = seq.frames[0].players.iter().map(|p| p.id.clone()).collect();
    if first.len() != seq.frames[0].players.len() {
        return Err(Error::Validation(format!(
            "sequence {}: duplicate player id within a frame",
            seq.sequence_id
        )));
    }
    for (t, frame) in seq.frames.iter().enumerate().skip(1) {
        let ids: BTreeSet<PlayerId> = frame.players.iter().map(|p| p.id.clone()).collect();
        if ids != first {
            return Err(Error::Validation(format!(
                "sequence {}: player set changes at frame {t}",
                seq.sequence_id
            )));
        }
    }
    Ok(first.into_iter().collect())
}

// ---------------------------------------------------------------------------
// Training filter
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SquadCountMode {
    /// Exactly 10 outfield defenders and 10 modeled attackers per sequence.
    Strict,
    /// Any equal outfield defender/attacker count (small synthetic scenes).
    Permissive,
}

/// Drop sequences unusable for training: annotated short corners,
/// non-canonical records, inconsistent player sets, and squads that do not
/// match the count mode. Dropped sequences are logged, never an error.
pub fn filter_for_training(dataset: &Dataset, mode: SquadCountMode) -> Dataset {
    let mut kept = Vec::new();
    for seq in &dataset.sequences {
        if seq.short_corner {
            log::warn!("dropping {}: annotated short corner", seq.sequence_id);
            continue;
        }
        if !seq.canonical {
            log::warn!("dropping {}: not in canonical coordinates", seq.sequence_id);
            continue;
        }
        if consistent_roster(seq).is_err() {
            log::warn!("dropping {}: player set changes between frames", seq.sequence_id);
            continue;
        }
        let view = match SequenceView::build(seq) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("dropping {}: {e}", seq.sequence_id);
                continue;
            }
        };
        let (j, k) = (view.defender_count(), view.attacker_count());
        let ok = match mode {
            SquadCountMode::Strict => j == 10 && k == 10,
            SquadCountMode::Permissive => j == k && j >= 1,
        };
        if !ok {
            log::warn!(
                "dropping {}: {} outfield defenders vs {} attackers under {mode:?} mode",
                seq.sequence_id,
                j,
                k
            );
            continue;
        }
        kept.push(seq.clone());
    }
    Dataset { sequences: kept }
}

// ---------------------------------------------------------------------------
// SequenceView: flat per-player arrays for the numerical modules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerMeta {
    pub id: PlayerId,
    pub height: f64,
    pub weight: f64,
}

/// Positions/velocities of the modeled (outfield) players laid out as flat
/// `[t * count + index]` arrays. Defenders and attackers are each ordered by
/// player id, which fixes the defender index `j` and attacker index `k`
/// used throughout inference, training, and reporting.
#[derive(Debug, Clone)]
pub struct SequenceView {
    pub sequence_id: String,
    pub frames: usize,
    pub delivery_frame: usize,
    pub first_contact: Option<FirstContact>,
    pub defenders: Vec<PlayerMeta>,
    pub attackers: Vec<PlayerMeta>,
    def_pos: Vec<Vec2>,
    def_vel: Vec<Vec2>,
    att_pos: Vec<Vec2>,
    att_vel: Vec<Vec2>,
}

impl SequenceView {
    /// Requires a consistent roster across frames; goalkeepers are excluded
    /// from both the defender and attacker lists.
    pub fn build(seq: &CornerSequence) -> Result<Self> {
        consistent_roster(seq)?;
        let pick = |team: Team| -> Vec<PlayerMeta> {
            let mut metas: Vec<PlayerMeta> = seq.frames[0]
                .players
                .iter()
                .filter(|p| p.team == team && !p.gk)
                .map(|p| PlayerMeta { id: p.id.clone(), height: p.h, weight: p.w })
                .collect();
            metas.sort_by(|a, b| a.id.cmp(&b.id));
            metas
        };
        let defenders = pick(Team::Defending);
        let attackers = pick(Team::Attacking);
        if defenders.is_empty() || attackers.is_empty() {
            return Err(Error::Validation(format!(
                "sequence {}: needs at least one outfield defender and one attacker",
                seq.sequence_id
            )));
        }
        let t_len = seq.frames.len();
        let mut view = SequenceView {
            sequence_id: seq.sequence_id.clone(),
            frames: t_len,
            delivery_frame: seq.delivery_frame,
            first_contact: seq.first_contact.clone(),
            def_pos: vec![Vec2::zeros(); t_len * defenders.len()],
            def_vel: vec![Vec2::zeros(); t_len * defenders.len()],
            att_pos: vec![Vec2::zeros(); t_len * attackers.len()],
            att_vel: vec![Vec2::zeros(); t_len * attackers.len()],
            defenders,
            attackers,
        };
        for (t, frame) in seq.frames.iter().enumerate() {
            for p in &frame.players {
                if p.gk {
                    continue;
                }
                match p.team {
                    Team::Defending => {
                        if let Some(j) = view.defenders.iter().position(|m| m.id == p.id) {
                            view.def_pos[t * view.defenders.len() + j] = p.position();
                            view.def_vel[t * view.defenders.len() + j] = p.velocity();
                        }
                    }
                    Team::Attacking => {
                        if let Some(k) = view.attackers.iter().position(|m| m.id == p.id) {
                            view.att_pos[t * view.attackers.len() + k] = p.position();
                            view.att_vel[t * view.attackers.len() + k] = p.velocity();
                        }
                    }
                }
            }
        }
        Ok(view)
    }

    pub fn defender_count(&self) -> usize {
        self.defenders.len()
    }

    pub fn attacker_count(&self) -> usize {
        self.attackers.len()
    }

    #[inline]
    pub fn def_pos(&self, t: usize, j: usize) -> Vec2 {
        self.def_pos[t * self.defenders.len() + j]
    }

    #[inline]
    pub fn def_vel(&self, t: usize, j: usize) -> Vec2 {
        self.def_vel[t * self.defenders.len() + j]
    }

    #[inline]
    pub fn att_pos(&self, t: usize, k: usize) -> Vec2 {
        self.att_pos[t * self.attackers.len() + k]
    }

    #[inline]
    pub fn att_vel(&self, t: usize, k: usize) -> Vec2 {
        self.att_vel[t * self.attackers.len() + k]
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample_sequence() -> CornerSequence {
        let mk_frame = |t: usize, dx: f64| Frame {
            t,
            players: vec![
                PlayerFrame {
                    id: "D1".into(),
                    team: Team::Defending,
                    gk: false,
                    x: dx,
                    y: 1.0,
                    vx: 0.5,
                    vy: 0.0,
                    h: 1.88,
                    w: 82.0,
                },
                PlayerFrame {
                    id: "GK".into(),
                    team: Team::Defending,
                    gk: true,
                    x: -10.0,
                    y: 0.0,
                    vx: 0.0,
                    vy: 0.0,
                    h: 1.93,
                    w: 90.0,
                },
                PlayerFrame {
                    id: "A1".into(),
                    team: Team::Attacking,
                    gk: false,
                    x: 2.0,
                    y: 5.0,
                    vx: 0.0,
                    vy: -1.0,
                    h: 1.79,
                    w: 74.0,
                },
            ],
        };
        CornerSequence {
            sequence_id: "seq-1".into(),
            delivery_type: DeliveryType::Outswing,
            defending_team_id: "T9".into(),
            delivery_frame: 1,
            first_contact: Some(FirstContact { frame: 2, player_id: "A1".into() }),
            canonical: true,
            game_id: Some("g1".into()),
            short_corner: false,
            orientation: None,
            frames: vec![mk_frame(0, 0.0), mk_frame(1, 0.02), mk_frame(2, 0.04)],
        }
    }

    #[test]
    fn jsonl_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let ds = Dataset::new(vec![sample_sequence()]).unwrap();
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.sequences, ds.sequences);
        let path2 = dir.path().join("data2.jsonl");
        save_dataset(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&sample_sequence()).unwrap();
        std::fs::write(&path, format!("{good}\n{{\"sequence_id\":3}}\n")).unwrap();
        match load_dataset(&path) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_height_is_a_schema_error() {
        let mut seq = sample_sequence();
        seq.frames[0].players[0].h = 2.6;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.jsonl");
        std::fs::write(&path, serde_json::to_string(&seq).unwrap() + "\n").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Schema { line: 1, .. })));
    }

    #[test]
    fn duplicate_sequence_ids_are_rejected() {
        let s = sample_sequence();
        assert!(Dataset::new(vec![s.clone(), s]).is_err());
    }

    #[test]
    fn canonicalize_is_identity_on_canonical_input() {
        let seq = sample_sequence();
        let out = canonicalize(&seq, &PitchGeometry::canonical()).unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn canonicalize_maps_penalty_spot_to_origin_and_reflects_velocities() {
        let pitch = PitchGeometry::canonical();
        let mut seq = sample_sequence();
        seq.canonical = false;
        seq.orientation = Some(RawOrientation {
            goal_end: GoalEnd::Right,
            corner: CornerSide::Bottom,
            pitch_length: 105.0,
            pitch_width: 68.0,
        });
        // Defending the right goal: penalty spot at x = 52.5 - 10.9728.
        let spot_x = 52.5 - 12.0 * 0.9144;
        seq.frames[0].players[0].x = spot_x;
        seq.frames[0].players[0].y = 0.0;
        let out = canonicalize(&seq, &pitch).unwrap();
        let p = &out.frames[0].players[0];
        assert_relative_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 0.0, epsilon = 1e-12);
        // x and y flips both negate the matching velocity components.
        assert_relative_eq!(p.vx, -0.5, epsilon = 1e-12);
        assert_relative_eq!(p.vy, 0.0, epsilon = 1e-12);
        assert!(out.canonical);

        // Bottom-corner-only reflection: y and vy negate, x untouched.
        let mut seq2 = sample_sequence();
        seq2.canonical = false;
        seq2.orientation = Some(RawOrientation {
            goal_end: GoalEnd::Left,
            corner: CornerSide::Bottom,
            pitch_length: 105.0,
            pitch_width: 68.0,
        });
        let out2 = canonicalize(&seq2, &pitch).unwrap();
        let a = &out2.frames[0].players[2];
        assert_relative_eq!(a.y, -5.0, epsilon = 1e-12);
        assert_relative_eq!(a.vy, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn canonicalize_without_orientation_fails() {
        let mut seq = sample_sequence();
        seq.canonical = false;
        seq.orientation = None;
        let err = canonicalize(&seq, &PitchGeometry::canonical()).unwrap_err();
        assert!(err.to_string().contains("unknown corner side"));
    }

    #[test]
    fn velocity_estimation_recovers_constant_velocity_exactly() {
        // Positions on a line: central differences and any smoothing window
        // reproduce the exact velocity at every frame.
        let t_len = 8;
        let defs: Vec<Vec<(Vec2, Vec2)>> = (0..t_len)
            .map(|t| vec![(Vec2::new(0.1 * t as f64, -0.04 * t as f64), Vec2::zeros())])
            .collect();
        let atts: Vec<Vec<(Vec2, Vec2)>> =
            (0..t_len).map(|_| vec![(Vec2::new(5.0, 5.0), Vec2::zeros())]).collect();
        let seq = test_support::sequence_from_tables("v", &defs, &atts);
        for window in [1, 3, 5] {
            let out = estimate_velocities(&seq, window).unwrap();
            for frame in &out.frames {
                let d = &frame.players[0];
                assert_relative_eq!(d.vx, 0.1 * FPS, epsilon = 1e-9);
                assert_relative_eq!(d.vy, -0.04 * FPS, epsilon = 1e-9);
                let a = &frame.players[1];
                assert_relative_eq!(a.vx, 0.0, epsilon = 1e-12);
            }
        }
        assert!(estimate_velocities(&seq, 2).is_err());
        assert!(estimate_velocities(&seq, 0).is_err());
    }

    #[test]
    fn filter_drops_short_corners_and_mismatched_squads() {
        let mut short = sample_sequence();
        short.sequence_id = "short".into();
        short.short_corner = true;
        let ok = sample_sequence();
        let ds = Dataset::new(vec![short, ok]).unwrap();
        let filtered = filter_for_training(&ds, SquadCountMode::Permissive);
        assert_eq!(filtered.sequences.len(), 1);
        assert_eq!(filtered.sequences[0].sequence_id, "seq-1");
        // Strict mode requires 10v10 outfield players.
        let strict = filter_for_training(&ds, SquadCountMode::Strict);
        assert!(strict.sequences.is_empty());
    }

    #[test]
    fn view_orders_players_by_id_and_skips_goalkeepers() {
        let view = SequenceView::build(&sample_sequence()).unwrap();
        assert_eq!(view.defender_count(), 1);
        assert_eq!(view.attacker_count(), 1);
        assert_eq!(view.defenders[0].id, "D1".into());
        assert_relative_eq!(view.def_pos(2, 0).x, 0.04);
        assert_relative_eq!(view.att_vel(1, 0).y, -1.0);
    }

    #[test]
    fn view_rejects_changing_rosters() {
        let mut seq = sample_sequence();
        seq.frames[2].players.pop();
        assert!(SequenceView::build(&seq).is_err());
    }

    #[test]
    fn canonical_pitch_landmarks() {
        let p = PitchGeometry::canonical();
        assert_relative_eq!(p.goal_line_x, -10.9728, epsilon = 1e-12);
        assert_relative_eq!(p.six_yard_line_x, -5.4864, epsilon = 1e-12);
        assert_relative_eq!(p.goal_center[0], p.goal_line_x);
        assert!(p.penalty_area_bounds.contains(&Vec2::new(0.0, 0.0)));
        assert!(!p.penalty_area_bounds.contains(&Vec2::new(6.0, 0.0)));
    }
}
