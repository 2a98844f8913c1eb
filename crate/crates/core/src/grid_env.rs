//! Multi-agent smart-grid simulator.
//!
//! Prosumer buildings share a local energy pool fed by a hydropower plant,
//! keep a personal battery charged by small solar production, and can buy
//! from or sell to a national grid. One step is one hour.
//!
//! Every agent emits 6 action parameters in `[0,1]`, scaled by its
//! profile's action range:
//!
//! | index | meaning                                   |
//! |-------|-------------------------------------------|
//! | 0     | consume from the shared pool              |
//! | 1     | draw from the pool into the battery       |
//! | 2     | consume from the battery                  |
//! | 3     | give from the battery to the pool         |
//! | 4     | buy from the national grid (consumed)     |
//! | 5     | sell from the battery to the national grid|
//!
//! and receives 11 observations in `[0,1]`: 8 shared
//! (hour of day, pool, equity, waste, autonomy, exclusion, well-being,
//! over-consumption) followed by 3 local (battery, comfort, payoff).

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::{self, Outcome};
use crate::seeding::splitmix64;

pub const OBS_DIM: usize = 11;
pub const ACTION_DIM: usize = 6;

pub const ACTION_RANGE_FACTOR: f64 = 1.1;
pub const BATTERY_CAPACITY_FACTOR: f64 = 3.0;
pub const SOLAR_FACTOR: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildingKind {
    Household,
    Office,
    School,
}

impl BuildingKind {
    pub const ALL: [BuildingKind; 3] = [BuildingKind::Household, BuildingKind::Office, BuildingKind::School];

    pub fn token(self) -> &'static str {
        match self {
            BuildingKind::Household => "household",
            BuildingKind::Office => "office",
            BuildingKind::School => "school",
        }
    }
}

impl fmt::Display for BuildingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for BuildingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BuildingKind::ALL
            .into_iter()
            .find(|k| k.token().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown building kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileMode {
    Daily,
    Annual,
}

impl ProfileMode {
    /// Number of hourly needs in a profile.
    pub fn period(self) -> usize {
        match self {
            ProfileMode::Daily => 24,
            ProfileMode::Annual => 8760,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            ProfileMode::Daily => "daily",
            ProfileMode::Annual => "annual",
        }
    }
}

impl fmt::Display for ProfileMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ProfileMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(ProfileMode::Daily),
            "annual" => Ok(ProfileMode::Annual),
            _ => Err(Error::Config(format!("unknown profile mode '{s}'"))),
        }
    }
}

/// Optional replacements for the values derived from a profile's needs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileOverrides {
    pub action_range: Option<f64>,
    pub battery_capacity: Option<f64>,
    pub solar_production: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingProfile {
    pub kind: BuildingKind,
    /// Hourly energy need in Wh.
    pub needs: Vec<f64>,
    /// Wh corresponding to an action parameter of 1.
    pub action_range: f64,
    pub battery_capacity: f64,
    /// Wh added to the battery every step.
    pub solar_production: f64,
}

impl BuildingProfile {
    /// Derives range, capacity and solar production from the needs.
    pub fn from_needs(kind: BuildingKind, needs: Vec<f64>) -> Result<Self> {
        if needs.is_empty() {
            return Err(Error::Config(format!("{kind} profile has no needs")));
        }
        if let Some((i, n)) = needs.iter().enumerate().find(|(_, n)| !(**n > 0.0 && n.is_finite())) {
            return Err(Error::Config(format!(
                "{kind} profile: need {n} at hour {i} is not positive"
            )));
        }
        let max = needs.iter().copied().fold(0.0, f64::max);
        let mean = needs.iter().sum::<f64>() / needs.len() as f64;
        Ok(Self {
            kind,
            action_range: ACTION_RANGE_FACTOR * max,
            battery_capacity: BATTERY_CAPACITY_FACTOR * max,
            solar_production: SOLAR_FACTOR * mean,
            needs,
        })
    }

    pub fn with_overrides(mut self, o: &ProfileOverrides) -> Result<Self> {
        if let Some(v) = o.action_range {
            self.action_range = v;
        }
        if let Some(v) = o.battery_capacity {
            self.battery_capacity = v;
        }
        if let Some(v) = o.solar_production {
            self.solar_production = v;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let max = self.max_need();
        if !(self.action_range >= max) {
            return Err(Error::Config(format!(
                "{} action range {} is below the maximum need {max}",
                self.kind, self.action_range
            )));
        }
        if !(self.battery_capacity > 0.0) {
            return Err(Error::Config(format!("{} battery capacity must be > 0", self.kind)));
        }
        if !(self.solar_production >= 0.0) {
            return Err(Error::Config(format!("{} solar production must be >= 0", self.kind)));
        }
        Ok(())
    }

    pub fn max_need(&self) -> f64 {
        self.needs.iter().copied().fold(0.0, f64::max)
    }

    /// Need at simulation step `t`; the profile repeats.
    pub fn need_at(&self, t: u64) -> f64 {
        self.needs[(t % self.needs.len() as u64) as usize]
    }
}

#[derive(Debug, Deserialize)]
struct ProfileRow {
    hour_index: usize,
    need_wh: f64,
}

/// Parses one profile CSV (`hour_index,need_wh`).
///
/// `label` only names the source in error messages. Rows are numbered
/// from 1, the header excluded.
pub fn parse_profile_csv<R: Read>(
    reader: R,
    label: &Path,
    kind: BuildingKind,
    mode: ProfileMode,
) -> Result<BuildingProfile> {
    let ingest = |row: Option<usize>, message: String| Error::Ingestion {
        file: label.to_path_buf(),
        row,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| ingest(None, e.to_string()))?.clone();
    for col in ["hour_index", "need_wh"] {
        if !headers.iter().any(|h| h == col) {
            return Err(ingest(None, format!("missing column '{col}'")));
        }
    }
    let mut needs = Vec::with_capacity(mode.period());
    for (i, rec) in rdr.deserialize::<ProfileRow>().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| ingest(Some(row), e.to_string()))?;
        if rec.hour_index != i {
            return Err(ingest(
                Some(row),
                format!("hour_index {} out of sequence, expected {i}", rec.hour_index),
            ));
        }
        if !(rec.need_wh > 0.0 && rec.need_wh.is_finite()) {
            return Err(ingest(
                Some(row),
                format!("need_wh must be positive, got {}", rec.need_wh),
            ));
        }
        needs.push(rec.need_wh);
    }
    if needs.len() != mode.period() {
        return Err(ingest(
            None,
            format!("{mode} profiles need {} rows, found {}", mode.period(), needs.len()),
        ));
    }
    BuildingProfile::from_needs(kind, needs)
}

/// Loads one profile per file. The building kind is the file stem
/// (`household.csv`, `office.csv`, `school.csv`).
pub fn load_profiles<P: AsRef<Path>>(paths: &[P], mode: ProfileMode) -> Result<Vec<BuildingProfile>> {
    paths
        .iter()
        .map(|p| {
            let path = p.as_ref();
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let kind = stem.parse::<BuildingKind>().map_err(|_| Error::Ingestion {
                file: path.to_path_buf(),
                row: None,
                message: format!("file stem '{stem}' is not a building kind"),
            })?;
            let file = std::fs::File::open(path).map_err(|e| Error::Ingestion {
                file: path.to_path_buf(),
                row: None,
                message: e.to_string(),
            })?;
            parse_profile_csv(file, path, kind, mode)
        })
        .collect()
}

/// Loads `household.csv`, `office.csv` and `school.csv` from a directory.
pub fn load_profile_dir(dir: &Path, mode: ProfileMode) -> Result<Vec<BuildingProfile>> {
    let paths: Vec<PathBuf> = BuildingKind::ALL.iter().map(|k| dir.join(format!("{k}.csv"))).collect();
    load_profiles(&paths, mode)
}

const BUNDLED: [(BuildingKind, ProfileMode, &str); 6] = [
    (
        BuildingKind::Household,
        ProfileMode::Daily,
        include_str!("../data/profiles/daily/household.csv"),
    ),
    (
        BuildingKind::Office,
        ProfileMode::Daily,
        include_str!("../data/profiles/daily/office.csv"),
    ),
    (
        BuildingKind::School,
        ProfileMode::Daily,
        include_str!("../data/profiles/daily/school.csv"),
    ),
    (
        BuildingKind::Household,
        ProfileMode::Annual,
        include_str!("../data/profiles/annual/household.csv"),
    ),
    (
        BuildingKind::Office,
        ProfileMode::Annual,
        include_str!("../data/profiles/annual/office.csv"),
    ),
    (
        BuildingKind::School,
        ProfileMode::Annual,
        include_str!("../data/profiles/annual/school.csv"),
    ),
];

/// The synthetic profiles shipped with the crate, in [`BuildingKind::ALL`] order.
pub fn bundled_profiles(mode: ProfileMode) -> Vec<BuildingProfile> {
    BUNDLED
        .iter()
        .filter(|(_, m, _)| *m == mode)
        .map(|(kind, m, text)| {
            let label = PathBuf::from(format!("<bundled {m}/{kind}.csv>"));
            parse_profile_csv(text.as_bytes(), &label, *kind, *m).expect("bundled profile is valid")
        })
        .collect()
}

/// Raw CSV text of a bundled profile.
pub fn bundled_profile_csv(kind: BuildingKind, mode: ProfileMode) -> &'static str {
    BUNDLED
        .iter()
        .find(|(k, m, _)| *k == kind && *m == mode)
        .map(|(_, _, text)| *text)
        .expect("every kind and mode is bundled")
}

const HOUSEHOLD_DAY: [f64; 24] = [
    320.0, 270.0, 250.0, 240.0, 250.0, 330.0, 620.0, 940.0, 830.0, 540.0, 430.0, 420.0, 470.0, 420.0, 410.0, 460.0,
    620.0, 1020.0, 1310.0, 1420.0, 1230.0, 940.0, 640.0, 420.0,
];
const OFFICE_DAY: [f64; 24] = [
    1500.0, 1450.0, 1420.0, 1400.0, 1420.0, 1600.0, 2300.0, 3900.0, 5600.0, 6200.0, 6400.0, 6500.0, 6100.0, 6300.0,
    6400.0, 6200.0, 5700.0, 4600.0, 3100.0, 2200.0, 1900.0, 1700.0, 1600.0, 1550.0,
];
const SCHOOL_DAY: [f64; 24] = [
    3000.0, 2900.0, 2850.0, 2800.0, 2850.0, 3100.0, 4800.0, 9500.0, 13800.0, 15200.0, 15600.0, 15800.0, 14900.0,
    15300.0, 14800.0, 12100.0, 8200.0, 5600.0, 4400.0, 3900.0, 3600.0, 3300.0, 3150.0, 3050.0,
];

/// Deterministic synthetic needs used to produce the bundled CSV files.
///
/// Annual needs modulate the daily curve by season, weekday and a small
/// hash-based jitter; values are rounded to 0.1 Wh.
pub fn synthetic_needs(kind: BuildingKind, mode: ProfileMode) -> Vec<f64> {
    let day = match kind {
        BuildingKind::Household => &HOUSEHOLD_DAY,
        BuildingKind::Office => &OFFICE_DAY,
        BuildingKind::School => &SCHOOL_DAY,
    };
    let round = |v: f64| (v * 10.0).round() / 10.0;
    match mode {
        ProfileMode::Daily => day.to_vec(),
        ProfileMode::Annual => (0..8760usize)
            .map(|i| {
                let (d, h) = (i / 24, i % 24);
                let angle = 2.0 * std::f64::consts::PI * d as f64 / 365.0;
                let weekend = d % 7 >= 5;
                let (season, weekday) = match kind {
                    BuildingKind::Household => (1.0 + 0.3 * angle.cos(), if weekend { 1.15 } else { 1.0 }),
                    BuildingKind::Office => (1.0 + 0.15 * (2.0 * angle).cos(), if weekend { 0.35 } else { 1.0 }),
                    BuildingKind::School => {
                        let holiday = (180..240).contains(&d);
                        (
                            (1.0 + 0.2 * angle.cos()) * if holiday { 0.3 } else { 1.0 },
                            if weekend { 0.3 } else { 1.0 },
                        )
                    }
                };
                let hash = splitmix64(((kind as u64) << 32) ^ i as u64);
                let jitter = 1.0 + 0.1 * ((hash >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0);
                round(day[h] * season * weekday * jitter).max(0.1)
            })
            .collect(),
    }
}

/// Formats needs as a profile CSV body.
pub fn profile_csv(needs: &[f64]) -> String {
    let mut out = String::from("hour_index,need_wh\n");
    for (i, n) in needs.iter().enumerate() {
        out.push_str(&format!("{i},{n:.1}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub mode: ProfileMode,
    pub profiles: Vec<BuildingProfile>,
    /// Profile index of every agent.
    pub agents: Vec<usize>,
    /// Pool size as a fraction of the total current need.
    pub scarcity_factor: f64,
    /// Currency per Wh bought from the national grid.
    pub buy_price: f64,
    /// Currency per Wh sold to the national grid.
    pub sell_price: f64,
    /// Battery charge at reset, as a fraction of capacity.
    pub initial_charge: f64,
    /// Scale of the logistic squashing of the cumulative payoff observation.
    pub payoff_scale: f64,
    pub horizon: u64,
}

impl EnvConfig {
    /// Defaults around an explicit roster of `(kind, count)` pairs.
    pub fn with_roster(
        mode: ProfileMode,
        profiles: Vec<BuildingProfile>,
        roster: &[(BuildingKind, usize)],
    ) -> Result<Self> {
        let mut agents = Vec::new();
        for &(kind, count) in roster {
            let idx = profiles
                .iter()
                .position(|p| p.kind == kind)
                .ok_or_else(|| Error::Config(format!("no {kind} profile loaded")))?;
            agents.extend(std::iter::repeat_n(idx, count));
        }
        let cfg = Self {
            mode,
            profiles,
            agents,
            scarcity_factor: 0.75,
            buy_price: 0.2e-3,
            sell_price: 0.1e-3,
            initial_charge: 0.5,
            payoff_scale: 10.0,
            horizon: 10_000,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::Config("the grid needs at least one agent".into()));
        }
        if let Some(&i) = self.agents.iter().find(|&&i| i >= self.profiles.len()) {
            return Err(Error::Config(format!("agent refers to missing profile {i}")));
        }
        for p in &self.profiles {
            p.validate()?;
            if p.needs.len() != self.mode.period() {
                return Err(Error::Config(format!(
                    "{} profile has {} needs, {} mode needs {}",
                    p.kind,
                    p.needs.len(),
                    self.mode,
                    self.mode.period()
                )));
            }
        }
        if !(self.scarcity_factor > 0.0 && self.scarcity_factor <= 1.5) {
            return Err(Error::Config(format!(
                "scarcity factor must lie in (0, 1.5], got {}",
                self.scarcity_factor
            )));
        }
        if !(self.buy_price >= 0.0 && self.sell_price >= 0.0) {
            return Err(Error::Config("prices must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_charge) {
            return Err(Error::Config("initial charge must lie in [0, 1]".into()));
        }
        if !(self.payoff_scale > 0.0) {
            return Err(Error::Config("payoff scale must be > 0".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn profile_of(&self, agent: usize) -> &BuildingProfile {
        &self.profiles[self.agents[agent]]
    }

    fn total_need(&self, t: u64) -> f64 {
        (0..self.agents.len()).map(|a| self.profile_of(a).need_at(t)).sum()
    }
}

/// Action parameters scaled to Wh.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaledAction {
    pub consume_grid: f64,
    pub store: f64,
    pub consume_battery: f64,
    pub give: f64,
    pub buy: f64,
    pub sell: f64,
}

impl ScaledAction {
    fn battery_outflow(&self) -> f64 {
        self.consume_battery + self.give + self.sell
    }
}

pub fn scale_action(params: &[f64], range: f64) -> Result<ScaledAction> {
    if params.len() != ACTION_DIM {
        return Err(Error::Contract(format!(
            "expected {ACTION_DIM} action parameters, got {}",
            params.len()
        )));
    }
    if let Some(p) = params.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Contract(format!("action parameter {p} outside [0, 1]")));
    }
    Ok(ScaledAction {
        consume_grid: params[0] * range,
        store: params[1] * range,
        consume_battery: params[2] * range,
        give: params[3] * range,
        buy: params[4] * range,
        sell: params[5] * range,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Index of the next step to simulate.
    pub t: u64,
    pub battery: Vec<f64>,
    pub payoff: Vec<f64>,
    /// Hydropower production available at step `t`, before gifts.
    pub pool: f64,
}

/// Frozen outcome of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSnapshot {
    /// Index of the simulated step.
    pub t: u64,
    pub hour_of_day: u32,
    pub needs: Vec<f64>,
    /// Actions after the battery feasibility clamp.
    pub executed: Vec<ScaledAction>,
    pub consumed: Vec<f64>,
    pub stored: Vec<f64>,
    pub comforts: Vec<f64>,
    pub battery_before: Vec<f64>,
    pub battery_after: Vec<f64>,
    pub battery_fraction: Vec<f64>,
    pub waste_per_agent: Vec<f64>,
    pub payoff_delta: Vec<f64>,
    /// Pool including gifts, Wh.
    pub pool: f64,
    pub over_consumption: f64,
    pub waste: f64,
    pub total_need: f64,
    pub equity: f64,
    pub autonomy: f64,
    pub exclusion: f64,
    pub wellbeing: f64,
}

impl StepSnapshot {
    pub fn outcome(&self) -> Outcome<'_> {
        Outcome {
            comforts: &self.comforts,
            consumed: &self.consumed,
            stored: &self.stored,
            over_consumption: self.over_consumption,
        }
    }

    pub fn agents(&self) -> usize {
        self.comforts.len()
    }

    pub fn pool_level(&self) -> f64 {
        normalize(self.pool, self.total_need)
    }

    pub fn over_consumption_level(&self) -> f64 {
        normalize(self.over_consumption, self.total_need)
    }

    pub fn waste_level(&self) -> f64 {
        normalize(self.waste, self.total_need)
    }

    /// Energy entering agent `a`'s battery this step (store + solar).
    pub fn battery_inflow(&self, a: usize, solar: f64) -> f64 {
        self.executed[a].store + solar
    }

    pub fn battery_outflow(&self, a: usize) -> f64 {
        self.executed[a].battery_outflow()
    }
}

fn normalize(v: f64, by: f64) -> f64 {
    if by > 0.0 {
        (v / by).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone)]
pub struct SmartGrid {
    config: EnvConfig,
}

impl SmartGrid {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn agent_count(&self) -> usize {
        self.config.agent_count()
    }

    /// The dynamics are deterministic; no seed is involved.
    pub fn reset(&self) -> EnvState {
        let battery = (0..self.agent_count())
            .map(|a| self.config.initial_charge * self.config.profile_of(a).battery_capacity)
            .collect();
        EnvState {
            t: 0,
            battery,
            payoff: vec![0.0; self.agent_count()],
            pool: self.config.scarcity_factor * self.config.total_need(0),
        }
    }

    /// Snapshot observed before the first step: nothing consumed yet.
    pub fn initial_snapshot(&self, state: &EnvState) -> StepSnapshot {
        let n = self.agent_count();
        let needs: Vec<f64> = (0..n).map(|a| self.config.profile_of(a).need_at(state.t)).collect();
        let total_need = needs.iter().sum();
        let battery_fraction = (0..n)
            .map(|a| state.battery[a] / self.config.profile_of(a).battery_capacity)
            .collect();
        StepSnapshot {
            t: state.t,
            hour_of_day: (state.t % 24) as u32,
            needs,
            executed: vec![ScaledAction::default(); n],
            consumed: vec![0.0; n],
            stored: vec![0.0; n],
            comforts: vec![0.0; n],
            battery_before: state.battery.clone(),
            battery_after: state.battery.clone(),
            battery_fraction,
            waste_per_agent: vec![0.0; n],
            payoff_delta: vec![0.0; n],
            pool: state.pool,
            over_consumption: 0.0,
            waste: 0.0,
            total_need,
            equity: 1.0,
            autonomy: 1.0,
            exclusion: 0.0,
            wellbeing: 0.0,
        }
    }

    pub fn scale(&self, agent: usize, params: &[f64]) -> Result<ScaledAction> {
        scale_action(params, self.config.profile_of(agent).action_range)
    }

    /// Simulates one hour. Pure in `(state, joint)`.
    pub fn step(&self, state: &EnvState, joint: &[ScaledAction]) -> Result<(EnvState, StepSnapshot)> {
        let n = self.agent_count();
        if joint.len() != n {
            return Err(Error::Contract(format!("{} actions for {n} agents", joint.len())));
        }
        if let Some(a) = joint.iter().position(|act| {
            [
                act.consume_grid,
                act.store,
                act.consume_battery,
                act.give,
                act.buy,
                act.sell,
            ]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        }) {
            return Err(Error::Contract(format!(
                "agent {a} sent a negative or non-finite action"
            )));
        }
        let cfg = &self.config;
        let t = state.t;
        let needs: Vec<f64> = (0..n).map(|a| cfg.profile_of(a).need_at(t)).collect();
        let total_need: f64 = needs.iter().sum();

        // Battery outflows cannot exceed the charge.
        let executed: Vec<ScaledAction> = joint
            .iter()
            .zip(&state.battery)
            .map(|(act, &level)| {
                let out = act.battery_outflow();
                if out > level {
                    let f = if out > 0.0 { level / out } else { 0.0 };
                    ScaledAction {
                        consume_battery: act.consume_battery * f,
                        give: act.give * f,
                        sell: act.sell * f,
                        ..*act
                    }
                } else {
                    *act
                }
            })
            .collect();

        let gifts: f64 = executed.iter().map(|a| a.give).sum();
        let pool = cfg.scarcity_factor * total_need + gifts;

        let mut consumed = Vec::with_capacity(n);
        let mut stored = Vec::with_capacity(n);
        let mut battery_after = Vec::with_capacity(n);
        let mut battery_fraction = Vec::with_capacity(n);
        let mut waste_per_agent = Vec::with_capacity(n);
        let mut payoff_delta = Vec::with_capacity(n);
        let mut comforts = Vec::with_capacity(n);
        for a in 0..n {
            let act = &executed[a];
            let profile = cfg.profile_of(a);
            consumed.push(act.consume_grid + act.consume_battery + act.buy);
            stored.push(act.store);
            let raw = state.battery[a] + act.store + profile.solar_production - act.battery_outflow();
            let level = raw.clamp(0.0, profile.battery_capacity);
            waste_per_agent.push((raw - profile.battery_capacity).max(0.0));
            battery_after.push(level);
            battery_fraction.push((level / profile.battery_capacity).clamp(0.0, 1.0));
            payoff_delta.push(act.sell * cfg.sell_price - act.buy * cfg.buy_price);
            comforts.push((consumed[a] / needs[a]).min(1.0));
        }

        let drawn: f64 = executed.iter().map(|a| a.consume_grid + a.store).sum();
        let over_consumption = (drawn - pool).max(0.0);
        let waste = waste_per_agent.iter().sum();

        let bought: f64 = executed.iter().map(|a| a.buy).sum();
        let sold: f64 = executed.iter().map(|a| a.sell).sum();
        let exchanged = bought + sold;
        let denom = consumed.iter().sum::<f64>() + stored.iter().sum::<f64>() + exchanged;
        let autonomy = if denom > 0.0 {
            (1.0 - exchanged / denom).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let wellbeing = median(&comforts);
        let exclusion = comforts.iter().filter(|&&c| c < 0.5 * wellbeing).count() as f64 / n as f64;
        let equity = 1.0 - rewards::hoover(&comforts)?;

        let next = EnvState {
            t: t + 1,
            payoff: state.payoff.iter().zip(&payoff_delta).map(|(p, d)| p + d).collect(),
            battery: battery_after.clone(),
            pool: cfg.scarcity_factor * cfg.total_need(t + 1),
        };
        let snapshot = StepSnapshot {
            t,
            hour_of_day: (t % 24) as u32,
            needs,
            executed,
            consumed,
            stored,
            comforts,
            battery_before: state.battery.clone(),
            battery_after,
            battery_fraction,
            waste_per_agent,
            payoff_delta,
            pool,
            over_consumption,
            waste,
            total_need,
            equity,
            autonomy,
            exclusion,
            wellbeing,
        };
        Ok((next, snapshot))
    }

    /// Observation vector of `agent`, for the decision at `state.t`.
    ///
    /// The hour coordinate refers to the upcoming step; everything else is
    /// read from the last snapshot and the agent's own battery and wallet.
    pub fn observe(&self, snapshot: &StepSnapshot, state: &EnvState, agent: usize) -> Result<[f64; OBS_DIM]> {
        if agent >= self.agent_count() || agent >= snapshot.agents() {
            return Err(Error::Contract(format!("unknown agent {agent}")));
        }
        let profile = self.config.profile_of(agent);
        let payoff = state.payoff[agent] / self.config.payoff_scale;
        let obs = [
            (state.t % 24) as f64 / 24.0,
            snapshot.pool_level(),
            snapshot.equity,
            snapshot.waste_level(),
            snapshot.autonomy,
            snapshot.exclusion,
            snapshot.wellbeing,
            snapshot.over_consumption_level(),
            (state.battery[agent] / profile.battery_capacity).clamp(0.0, 1.0),
            snapshot.comforts[agent],
            1.0 / (1.0 + (-payoff).exp()),
        ];
        Ok(obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_profile(kind: BuildingKind, need: f64) -> BuildingProfile {
        BuildingProfile::from_needs(kind, vec![need; 24]).unwrap()
    }

    fn grid(n_households: usize) -> SmartGrid {
        let cfg = EnvConfig::with_roster(
            ProfileMode::Daily,
            vec![flat_profile(BuildingKind::Household, 1000.0)],
            &[(BuildingKind::Household, n_households)],
        )
        .unwrap();
        SmartGrid::new(cfg).unwrap()
    }

    #[test]
    fn derived_profile_fields() {
        let mut needs = vec![1000.0; 24];
        needs[5] = 5000.0;
        let p = BuildingProfile::from_needs(BuildingKind::Office, needs).unwrap();
        assert!((p.action_range - 5500.0).abs() < 1e-9);
        assert!((p.battery_capacity - 15000.0).abs() < 1e-9);
        assert!((p.solar_production - 0.2 * (23.0 * 1000.0 + 5000.0) / 24.0).abs() < 1e-9);
    }

    #[test]
    fn csv_row_count_and_values_are_checked() {
        let short = profile_csv(&[100.0; 23]);
        let err = parse_profile_csv(
            short.as_bytes(),
            Path::new("h.csv"),
            BuildingKind::Household,
            ProfileMode::Daily,
        )
        .unwrap_err();
        assert!(err.to_string().contains("24 rows"), "{err}");

        let mut zero = vec![100.0; 24];
        zero[3] = 0.0;
        let err = parse_profile_csv(
            profile_csv(&zero).as_bytes(),
            Path::new("h.csv"),
            BuildingKind::Household,
            ProfileMode::Daily,
        )
        .unwrap_err();
        match err {
            Error::Ingestion { row, file, .. } => {
                assert_eq!(row, Some(4));
                assert_eq!(file, PathBuf::from("h.csv"));
            }
            other => panic!("unexpected {other}"),
        }

        let err = parse_profile_csv(
            "hour,need_wh\n0,1\n".as_bytes(),
            Path::new("x.csv"),
            BuildingKind::Office,
            ProfileMode::Daily,
        )
        .unwrap_err();
        assert!(err.to_string().contains("hour_index"));
    }

    #[test]
    fn bundled_profiles_match_generator() {
        for mode in [ProfileMode::Daily, ProfileMode::Annual] {
            let profiles = bundled_profiles(mode);
            assert_eq!(profiles.len(), 3);
            for p in profiles {
                assert_eq!(p.needs.len(), mode.period());
                assert_eq!(p.needs, synthetic_needs(p.kind, mode));
                assert_eq!(bundled_profile_csv(p.kind, mode), profile_csv(&p.needs));
            }
        }
    }

    #[test]
    #[ignore = "regenerates the bundled profile files"]
    fn write_bundled_profiles() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/profiles");
        for mode in [ProfileMode::Daily, ProfileMode::Annual] {
            std::fs::create_dir_all(root.join(mode.token())).unwrap();
            for kind in BuildingKind::ALL {
                let path = root.join(mode.token()).join(format!("{kind}.csv"));
                std::fs::write(path, profile_csv(&synthetic_needs(kind, mode))).unwrap();
            }
        }
    }

    #[test]
    fn scale_action_examples() {
        let a = scale_action(&[0.5, 0.0, 1.0, 0.0, 0.0, 0.0], 6000.0).unwrap();
        assert_eq!(a.consume_grid, 3000.0);
        assert_eq!(a.store, 0.0);
        assert_eq!(a.consume_battery, 6000.0);
        let b = scale_action(&[1.0; 6], 5500.0).unwrap();
        assert_eq!(b.sell, 5500.0);
        assert!(scale_action(&[1.1, 0.0, 0.0, 0.0, 0.0, 0.0], 10.0).is_err());
        assert!(scale_action(&[0.5; 5], 10.0).is_err());
    }

    #[test]
    fn reset_state() {
        let g = grid(3);
        let s = g.reset();
        assert_eq!(s.t, 0);
        for a in 0..3 {
            assert_eq!(s.battery[a] / g.config().profile_of(a).battery_capacity, 0.5);
        }
        assert_eq!(s, g.reset());
        assert!(EnvConfig::with_roster(
            ProfileMode::Daily,
            vec![flat_profile(BuildingKind::Household, 1.0)],
            &[]
        )
        .is_err());
    }

    #[test]
    fn null_action_step() {
        let g = grid(2);
        let s = g.reset();
        let (next, snap) = g.step(&s, &[ScaledAction::default(); 2]).unwrap();
        assert_eq!(snap.comforts, vec![0.0, 0.0]);
        assert_eq!(snap.over_consumption, 0.0);
        let solar = g.config().profile_of(0).solar_production;
        for a in 0..2 {
            assert_eq!(next.battery[a], s.battery[a] + solar);
        }
    }

    #[test]
    fn over_consumption_examples() {
        let g = grid(1);
        let s = g.reset();
        let p = s.pool;
        let act = ScaledAction {
            consume_grid: p,
            ..Default::default()
        };
        let (_, snap) = g.step(&s, &[act]).unwrap();
        assert_eq!(snap.over_consumption, 0.0);
        assert_eq!(snap.comforts[0], (p / 1000.0).min(1.0));

        let g2 = grid(2);
        let s2 = g2.reset();
        let p2 = s2.pool;
        let act = ScaledAction {
            consume_grid: p2,
            ..Default::default()
        };
        let (_, snap) = g2.step(&s2, &[act, act]).unwrap();
        assert!((snap.over_consumption - p2).abs() < 1e-9);
    }

    #[test]
    fn battery_outflows_are_rescaled() {
        let g = grid(1);
        let mut s = g.reset();
        s.battery[0] = 300.0;
        let act = ScaledAction {
            consume_battery: 400.0,
            give: 100.0,
            sell: 100.0,
            ..Default::default()
        };
        let (next, snap) = g.step(&s, &[act]).unwrap();
        let e = snap.executed[0];
        assert!((e.consume_battery - 200.0).abs() < 1e-9);
        assert!((e.give - 50.0).abs() < 1e-9);
        assert!((e.sell - 50.0).abs() < 1e-9);
        let solar = g.config().profile_of(0).solar_production;
        assert!((next.battery[0] - solar).abs() < 1e-9);
    }

    #[test]
    fn overflow_counts_as_waste() {
        let g = grid(1);
        let mut s = g.reset();
        let cap = g.config().profile_of(0).battery_capacity;
        s.battery[0] = cap;
        let act = ScaledAction {
            store: 500.0,
            ..Default::default()
        };
        let (next, snap) = g.step(&s, &[act]).unwrap();
        assert_eq!(next.battery[0], cap);
        let solar = g.config().profile_of(0).solar_production;
        assert!((snap.waste - (500.0 + solar)).abs() < 1e-9);
    }

    #[test]
    fn observation_examples() {
        let g = grid(2);
        let mut s = g.reset();
        let snap = g.initial_snapshot(&s);
        s.t = 12;
        s.battery[1] = 0.0;
        let o = g.observe(&snap, &s, 1).unwrap();
        assert_eq!(o.len(), OBS_DIM);
        assert_eq!(o[0], 0.5);
        assert_eq!(o[8], 0.0);
        assert!(o.iter().all(|c| (0.0..=1.0).contains(c)));
        assert!(g.observe(&snap, &s, 2).is_err());
    }

    #[test]
    fn action_count_mismatch() {
        let g = grid(2);
        assert!(matches!(
            g.step(&g.reset(), &[ScaledAction::default()]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn median_and_exclusion() {
        assert_eq!(median(&[0.3, 0.1, 0.2]), 0.2);
        assert_eq!(median(&[0.4, 0.1, 0.2, 1.0]), 0.30000000000000004);
    }

    proptest! {
        #[test]
        fn step_invariants(params in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, ACTION_DIM), 3), charge in 0.0f64..=1.0, t in 0u64..48) {
            let g = grid(3);
            let mut s = g.reset();
            s.t = t;
            for b in &mut s.battery { *b *= 2.0 * charge; }
            let joint: Vec<ScaledAction> = params.iter().enumerate().map(|(a, p)| g.scale(a, p).unwrap()).collect();
            let (next, snap) = g.step(&s, &joint).unwrap();
            let (next2, snap2) = g.step(&s, &joint).unwrap();
            prop_assert_eq!(&next, &next2);
            prop_assert_eq!(&snap, &snap2);

            let drawn: f64 = snap.executed.iter().map(|a| a.consume_grid + a.store).sum();
            prop_assert_eq!(snap.over_consumption, (drawn - snap.pool).max(0.0));
            for a in 0..3 {
                let solar = g.config().profile_of(a).solar_production;
                let delta = next.battery[a] - s.battery[a];
                let books = snap.battery_inflow(a, solar) - snap.battery_outflow(a) - snap.waste_per_agent[a];
                prop_assert!((delta - books).abs() <= 1e-9);
                let cap = g.config().profile_of(a).battery_capacity;
                prop_assert!((0.0..=cap).contains(&next.battery[a]));
                let o = g.observe(&snap, &next, a).unwrap();
                prop_assert!(o.iter().all(|c| (0.0..=1.0).contains(c)));
            }
            for v in [snap.equity, snap.autonomy, snap.exclusion, snap.wellbeing] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn comfort_monotone_in_consumption(lo in 0.0f64..=1.0, hi in 0.0f64..=1.0) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let g = grid(1);
            let s = g.reset();
            let c = |x: f64| g.step(&s, &[g.scale(0, &[x, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap()]).unwrap().1.comforts[0];
            prop_assert!(c(lo) <= c(hi));
        }
    }
}
