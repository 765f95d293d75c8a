//! Log-loss scoring, leaderboard ranking and phase rules for a
//! detection challenge.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_BOUND: f64 = 0.01;
const WEEK_S: u64 = 7 * 24 * 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    pub score: f64,
}

impl PredictionRecord {
    pub fn new(video_id: impl Into<String>, score: f64) -> Self {
        Self {
            video_id: video_id.into(),
            score,
        }
    }
}

/// Labels keyed by video id (fake 1, real 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthSet {
    entries: BTreeMap<String, u8>,
}

#[derive(Deserialize)]
struct TruthLine {
    video_id: String,
    label: u8,
}

impl GroundTruthSet {
    pub fn new(entries: impl IntoIterator<Item = (String, u8)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (id, label) in entries {
            if label > 1 {
                return Err(invalid!("video {id}: label must be 0 or 1, got {label}"));
            }
            if map.insert(id.clone(), label).is_some() {
                return Err(invalid!("duplicate ground-truth video id {id}"));
            }
        }
        if map.is_empty() {
            return Err(invalid!("ground truth is empty"));
        }
        Ok(Self { entries: map })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label(&self, video_id: &str) -> Option<u8> {
        self.entries.get(video_id).copied()
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u8)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: TruthLine = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            if rec.label > 1 {
                return Err(Error::parse(path, i + 1, format!("label {} is not 0 or 1", rec.label)));
            }
            if !seen.insert(rec.video_id.clone()) {
                return Err(Error::parse(path, i + 1, format!("duplicate video id {}", rec.video_id)));
            }
            entries.push((rec.video_id, rec.label));
        }
        Self::new(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for (id, label) in self.iter() {
            out.push_str(&format!("{{\"video_id\": {}, \"label\": {label}}}\n", json_string(id)));
        }
        fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Writes one `{"video_id": ..., "score": ...}` line per record, scores at
/// six decimals.
pub fn write_predictions(path: impl AsRef<Path>, preds: &[PredictionRecord]) -> Result<()> {
    let mut out = String::new();
    for p in preds {
        out.push_str(&format!(
            "{{\"video_id\": {}, \"score\": {:.6}}}\n",
            json_string(&p.video_id),
            p.score
        ));
    }
    fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Differences between a submission's ids and the ground truth.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CoverageReport {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    pub duplicates: Vec<String>,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty() && self.duplicates.is_empty()
    }
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 5;
        let mut parts = Vec::new();
        for (label, ids) in [("missing", &self.missing), ("extra", &self.extra), ("duplicate", &self.duplicates)] {
            if ids.is_empty() {
                continue;
            }
            let mut list = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
            if ids.len() > SHOWN {
                list.push_str(&format!(", ... ({} more)", ids.len() - SHOWN));
            }
            parts.push(format!("{} {label} [{list}]", ids.len()));
        }
        if parts.is_empty() {
            write!(f, "complete")
        } else {
            write!(f, "{}", parts.join("; "))
        }
    }
}

pub fn check_coverage(preds: &[PredictionRecord], truth: &GroundTruthSet) -> CoverageReport {
    let mut seen = BTreeSet::new();
    let mut report = CoverageReport::default();
    for p in preds {
        if !seen.insert(p.video_id.as_str()) {
            if !report.duplicates.contains(&p.video_id) {
                report.duplicates.push(p.video_id.clone());
            }
        } else if truth.label(&p.video_id).is_none() {
            report.extra.push(p.video_id.clone());
        }
    }
    report.missing = truth
        .iter()
        .filter(|(id, _)| !seen.contains(id))
        .map(|(id, _)| id.to_string())
        .collect();
    report
}

/// Loss of one video with `p` clamped to `[bound, 1 - bound]`.
pub fn video_loss(p: f64, label: u8, bound: f64) -> f64 {
    let p = p.clamp(bound, 1.0 - bound);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

fn check_bound(bound: f64) -> Result<()> {
    if !(bound > 0.0 && bound < 0.5) {
        return Err(invalid!("bound {bound} outside (0, 0.5)"));
    }
    Ok(())
}

/// Mean binary cross-entropy. The submission must cover the ground truth
/// exactly; otherwise the error carries the offending ids.
pub fn bce_loss(preds: &[PredictionRecord], truth: &GroundTruthSet, bound: f64) -> Result<f64> {
    check_bound(bound)?;
    let coverage = check_coverage(preds, truth);
    if !coverage.is_complete() {
        return Err(Error::Coverage(coverage));
    }
    let by_id: BTreeMap<&str, f64> = preds.iter().map(|p| (p.video_id.as_str(), p.score)).collect();
    if let Some(p) = preds.iter().find(|p| !(0.0..=1.0).contains(&p.score)) {
        return Err(invalid!("video {}: score {} outside [0, 1]", p.video_id, p.score));
    }
    // Summing in id order makes the result independent of submission order.
    let total: f64 = truth.iter().map(|(id, y)| video_loss(by_id[id], y, bound)).sum();
    Ok(total / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub team: String,
    pub bce_loss: f64,
    pub runtime_s: f64,
}

impl LeaderboardEntry {
    pub fn new(team: impl Into<String>, bce_loss: f64, runtime_s: f64) -> Self {
        Self {
            team: team.into(),
            bce_loss,
            runtime_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub ranking: usize,
    #[serde(flatten)]
    pub entry: LeaderboardEntry,
}

/// Ascending by loss, then runtime; full ties keep input order.
pub fn rank_leaderboard(entries: &[LeaderboardEntry]) -> Vec<RankedEntry> {
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| {
        a.bce_loss
            .total_cmp(&b.bce_loss)
            .then(a.runtime_s.total_cmp(&b.runtime_s))
    });
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, entry)| RankedEntry { ranking: i + 1, entry })
        .collect()
}

pub fn format_leaderboard(ranked: &[RankedEntry]) -> String {
    let team_w = ranked
        .iter()
        .map(|r| r.entry.team.chars().count())
        .chain(std::iter::once(4))
        .max()
        .unwrap_or(4);
    let mut out = format!("{:<7}  {:<team_w$}  {:>8}  {:>10}\n", "Ranking", "Team", "BCELoss", "Runtime");
    for r in ranked {
        out.push_str(&format!(
            "{:<7}  {:<team_w$}  {:>8.4}  {:>10.0}\n",
            r.ranking, r.entry.team, r.entry.bce_loss, r.entry.runtime_s
        ));
    }
    out
}

/// Reads entries from a JSON array or from one JSON object per line.
pub fn load_leaderboard_entries(path: impl AsRef<Path>) -> Result<Vec<LeaderboardEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<LeaderboardEntry> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?
    } else {
        let mut v = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            v.push(serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
        }
        v
    };
    for e in &entries {
        if !(e.bce_loss >= 0.0) || !(e.runtime_s >= 0.0) {
            return Err(invalid!("team {}: loss and runtime must be nonnegative", e.team));
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseName {
    Dev,
    Final,
}

impl std::str::FromStr for PhaseName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dev" => Ok(PhaseName::Dev),
            "final" => Ok(PhaseName::Final),
            other => Err(invalid!("unknown phase {other:?} (expected dev or final)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuotaPeriod {
    Week,
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub name: PhaseName,
    pub n_videos: usize,
    pub eval_quota: usize,
    pub quota_period: QuotaPeriod,
    pub runtime_limit_s: f64,
}

impl PhaseConfig {
    /// 1000 videos, four evaluations a week, 2.5 h each.
    pub fn dev() -> Self {
        Self {
            name: PhaseName::Dev,
            n_videos: 1000,
            eval_quota: 4,
            quota_period: QuotaPeriod::Week,
            runtime_limit_s: 9000.0,
        }
    }

    /// 3000 videos, two evaluations in total, 7.5 h each.
    pub fn final_phase() -> Self {
        Self {
            name: PhaseName::Final,
            n_videos: 3000,
            eval_quota: 2,
            quota_period: QuotaPeriod::Total,
            runtime_limit_s: 27000.0,
        }
    }

    pub fn named(name: PhaseName) -> Self {
        match name {
            PhaseName::Dev => Self::dev(),
            PhaseName::Final => Self::final_phase(),
        }
    }

    fn window_start(&self, now_s: u64) -> u64 {
        match self.quota_period {
            QuotaPeriod::Week => now_s.saturating_sub(WEEK_S - 1),
            QuotaPeriod::Total => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub coverage: CoverageReport,
    pub out_of_range: Vec<String>,
    pub runtime_s: f64,
    pub runtime_exceeded: bool,
    pub prior_evaluations: usize,
    pub quota_exceeded: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.coverage.is_complete() && self.out_of_range.is_empty() && !self.runtime_exceeded && !self.quota_exceeded
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.coverage.is_complete() {
            out.push(format!("coverage: {}", self.coverage));
        }
        if !self.out_of_range.is_empty() {
            out.push(format!("{} scores outside [0, 1]", self.out_of_range.len()));
        }
        if self.runtime_exceeded {
            out.push(format!("runtime {:.0} s over limit", self.runtime_s));
        }
        if self.quota_exceeded {
            out.push(format!("quota used up ({} prior evaluations)", self.prior_evaluations));
        }
        out
    }
}

/// Checks a submission against the phase rules. `prior_evaluations` counts
/// evaluations already spent in the current quota window.
pub fn validate_submission(
    preds: &[PredictionRecord],
    truth: &GroundTruthSet,
    phase: &PhaseConfig,
    measured_runtime_s: f64,
    prior_evaluations: usize,
) -> ValidationReport {
    ValidationReport {
        coverage: check_coverage(preds, truth),
        out_of_range: preds
            .iter()
            .filter(|p| !(0.0..=1.0).contains(&p.score))
            .map(|p| p.video_id.clone())
            .collect(),
        runtime_s: measured_runtime_s,
        runtime_exceeded: !(measured_runtime_s <= phase.runtime_limit_s),
        prior_evaluations,
        quota_exceeded: prior_evaluations >= phase.eval_quota,
    }
}

/// Append-only evaluation log: one `time_s<TAB>phase<TAB>team` line per
/// evaluation. A single process should write to a given file.
#[derive(Debug, Clone)]
pub struct QuotaLedger {
    path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRecord {
    pub time_s: u64,
    pub phase: PhaseName,
    pub team: String,
}

impl QuotaLedger {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> Result<Vec<LedgerRecord>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let (Some(t), Some(phase), Some(team)) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::parse(&self.path, i + 1, "expected time, phase and team"));
            };
            out.push(LedgerRecord {
                time_s: t
                    .parse()
                    .map_err(|_| Error::parse(&self.path, i + 1, format!("bad time {t:?}")))?,
                phase: phase.parse().map_err(|e: Error| Error::parse(&self.path, i + 1, e.to_string()))?,
                team: team.to_string(),
            });
        }
        Ok(out)
    }

    /// Evaluations by `team` inside the phase's quota window ending at `now_s`.
    pub fn used(&self, team: &str, phase: &PhaseConfig, now_s: u64) -> Result<usize> {
        let start = phase.window_start(now_s);
        Ok(self
            .records()?
            .iter()
            .filter(|r| r.team == team && r.phase == phase.name && r.time_s >= start && r.time_s <= now_s)
            .count())
    }

    pub fn record(&self, team: &str, phase: PhaseName, time_s: u64) -> Result<()> {
        if team.contains(['\t', '\n']) {
            return Err(invalid!("team name may not contain tabs or newlines"));
        }
        let phase = match phase {
            PhaseName::Dev => "dev",
            PhaseName::Final => "final",
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "{time_s}\t{phase}\t{team}").map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub team: String,
    pub time_s: u64,
    pub runtime_s: f64,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEvent {
    pub time_s: u64,
    pub team: String,
    pub accepted: bool,
    pub bce_loss: Option<f64>,
    pub failures: Vec<String>,
    pub leaderboard: Vec<RankedEntry>,
}

/// Replays submissions in time order under the phase rules. Each team's
/// best accepted result stays on the board; rejected submissions do not
/// consume quota.
pub fn simulate_challenge(
    submissions: &[Submission],
    truth: &GroundTruthSet,
    phase: &PhaseConfig,
    bound: f64,
) -> Result<Vec<HistoryEvent>> {
    check_bound(bound)?;
    let mut order: Vec<&Submission> = submissions.iter().collect();
    order.sort_by_key(|s| s.time_s);
    let mut spent: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    let mut best: BTreeMap<&str, LeaderboardEntry> = BTreeMap::new();
    let mut history = Vec::with_capacity(order.len());
    for sub in order {
        let start = phase.window_start(sub.time_s);
        let used = spent
            .get(sub.team.as_str())
            .map_or(0, |ts| ts.iter().filter(|&&t| t >= start).count());
        let report = validate_submission(&sub.predictions, truth, phase, sub.runtime_s, used);
        let mut loss = None;
        if report.is_valid() {
            let l = bce_loss(&sub.predictions, truth, bound)?;
            loss = Some(l);
            spent.entry(&sub.team).or_default().push(sub.time_s);
            let candidate = LeaderboardEntry::new(sub.team.clone(), l, sub.runtime_s);
            let replace = best.get(sub.team.as_str()).map_or(true, |cur| {
                (candidate.bce_loss, candidate.runtime_s) < (cur.bce_loss, cur.runtime_s)
            });
            if replace {
                best.insert(&sub.team, candidate);
            }
        }
        let board: Vec<LeaderboardEntry> = best.values().cloned().collect();
        history.push(HistoryEvent {
            time_s: sub.time_s,
            team: sub.team.clone(),
            accepted: loss.is_some(),
            bce_loss: loss,
            failures: report.failures(),
            leaderboard: rank_leaderboard(&board),
        });
    }
    Ok(history)
}
