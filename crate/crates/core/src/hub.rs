//! Closed-loop episode runner and its JSON-lines record store.
//!
//! Each hour the controller plans over the surrogates, the first setpoint is
//! applied to the thermal testbed, and everything known at that interval is
//! captured in a [`TimestepRecord`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{classify, ScenarioLabel, DEFAULT_THRESHOLD_W};
use crate::mpc::{MpcDecision, MpcProblem};
use crate::shapley::{shapley, verify_additivity, Attribution, BackgroundSet};
use crate::surrogate::{FeatureSchema, Regressor, SurrogateModel};
use crate::testbed::{
    disturbance_series, step, DrCalendar, Disturbance, TestbedConfig, ZoneState, HOURS_PER_DAY,
};

pub const EPISODE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub n_days: usize,
    /// First synthetic weather day; training data covers days before it.
    pub start_day: usize,
    /// Scenario threshold on P_limit(t+2).
    pub threshold_w: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            n_days: 31,
            start_day: 31,
            threshold_w: DEFAULT_THRESHOLD_W,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDigests {
    pub fx: String,
    pub fy: String,
}

/// The two surrogates with the background sets used to explain them.
pub struct Surrogates<'a> {
    pub fx: &'a dyn Regressor,
    pub fy: &'a dyn Regressor,
    pub fx_background: BackgroundSet,
    pub fy_background: BackgroundSet,
    pub digests: ModelDigests,
}

impl<'a> Surrogates<'a> {
    pub fn new(
        fx: &'a dyn Regressor,
        fy: &'a dyn Regressor,
        fx_background: BackgroundSet,
        fy_background: BackgroundSet,
        digests: ModelDigests,
    ) -> Result<Self> {
        check_schema(fx.schema(), &FeatureSchema::zone_temperature(), "f_x")?;
        check_schema(fy.schema(), &FeatureSchema::cooling_rate(), "f_y")?;
        for (bg, n) in [(&fx_background, fx.schema().len()), (&fy_background, fy.schema().len())] {
            if bg.width() != n {
                return Err(Error::Schema(format!(
                    "background width {} does not match {n} model features",
                    bg.width()
                )));
            }
        }
        Ok(Self {
            fx,
            fy,
            fx_background,
            fy_background,
            digests,
        })
    }

    /// Uses the backgrounds embedded in the model files.
    pub fn from_models(fx: &'a SurrogateModel, fy: &'a SurrogateModel) -> Result<Self> {
        Self::new(
            fx,
            fy,
            BackgroundSet::new(fx.background().to_vec())?,
            BackgroundSet::new(fy.background().to_vec())?,
            ModelDigests {
                fx: fx.digest(),
                fy: fy.digest(),
            },
        )
    }
}

fn check_schema(got: &FeatureSchema, want: &FeatureSchema, role: &str) -> Result<()> {
    if got.names() != want.names() {
        return Err(Error::Schema(format!(
            "{role} model features [{}] differ from the expected [{}]",
            got.names().join(", "),
            want.names().join(", ")
        )));
    }
    Ok(())
}

/// Attributions of the four predictions along the chosen setpoint pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonAttributions {
    pub fx_t1: Attribution,
    pub fy_t1: Attribution,
    pub fx_t2: Attribution,
    pub fy_t2: Attribution,
}

impl HorizonAttributions {
    /// In horizon order: f_x@t+1, f_y@t+1, f_x@t+2, f_y@t+2.
    pub fn all(&self) -> [&Attribution; 4] {
        [&self.fx_t1, &self.fy_t1, &self.fx_t2, &self.fy_t2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestepRecord {
    pub timestamp: usize,
    pub day: usize,
    pub hour_of_day: usize,
    /// Zone temperature the controller sees (mean over the previous hour).
    pub zone_temp_c: f64,
    /// Zone air temperature at the decision instant.
    pub air_temp_c: f64,
    /// Disturbances of the two horizon hours.
    pub forecast: [Disturbance; 2],
    pub applied_setpoint_c: f64,
    /// Cooling delivered by the testbed over the applied hour.
    pub cooling_rate_w: f64,
    pub power_limit_t1_w: f64,
    pub power_limit_t2_w: f64,
    pub decision: MpcDecision,
    pub attributions: HorizonAttributions,
    pub scenario: Option<ScenarioLabel>,
    pub opt_seconds: f64,
}

impl TimestepRecord {
    pub fn disturbance(&self) -> &Disturbance {
        &self.forecast[0]
    }

    pub fn state(&self) -> ZoneState {
        ZoneState {
            zone_temp: self.zone_temp_c,
            air_temp: self.air_temp_c,
            timestamp: self.timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub weather: u64,
    pub calendar: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSnapshot {
    pub episode: EpisodeConfig,
    pub testbed: TestbedConfig,
    pub calendar: DrCalendar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub version: u32,
    pub n_records: usize,
    pub seeds: Seeds,
    pub model_digests: ModelDigests,
    pub config: EpisodeSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub header: EpisodeHeader,
    pub records: Vec<TimestepRecord>,
}

fn attribute(model: &dyn Regressor, inputs: &[f64], background: &BackgroundSet) -> Result<Attribution> {
    let attr = shapley(model, inputs, background)?;
    let check = verify_additivity(&attr);
    if !check.ok {
        return Err(Error::Integrity(format!(
            "attribution residual {} exceeds tolerance",
            check.residual
        )));
    }
    Ok(attr)
}

/// Runs the closed loop for `cfg.n_days` days under perfect-foresight
/// disturbances.
pub fn run_episode(
    cfg: &EpisodeConfig,
    testbed: &TestbedConfig,
    models: &Surrogates<'_>,
    calendar: &DrCalendar,
) -> Result<Episode> {
    if cfg.n_days == 0 {
        return Err(Error::InvalidInput("n_days must be >= 1".into()));
    }
    testbed.validate()?;
    let n_hours = cfg.n_days * HOURS_PER_DAY;
    // One extra day so the last decision still has a second-hour forecast.
    let weather = disturbance_series(cfg.start_day, cfg.n_days + 1, testbed);
    let mut state = ZoneState::new(testbed.initial_zone_temp, 0);
    let mut records = Vec::with_capacity(n_hours);

    for t in 0..n_hours {
        let at = |source: Error| Error::AtTimestep {
            timestamp: t,
            source: Box::new(source),
        };
        let forecast = [weather[t], weather[t + 1]];
        let power_limits = [calendar.limit_at(t), calendar.limit_at(t + 1)];
        let problem = MpcProblem::new(state.zone_temp, forecast, power_limits, models.fx, models.fy);

        let started = Instant::now();
        let decision = problem.optimize().map_err(at)?;
        let opt_seconds = started.elapsed().as_secs_f64();

        let inputs = problem.inputs(decision.u1_c, decision.u2_c, decision.x1_c, decision.x2_c);
        let attributions = HorizonAttributions {
            fx_t1: attribute(models.fx, &inputs.fx_t1, &models.fx_background).map_err(at)?,
            fy_t1: attribute(models.fy, &inputs.fy_t1, &models.fy_background).map_err(at)?,
            fx_t2: attribute(models.fx, &inputs.fx_t2, &models.fx_background).map_err(at)?,
            fy_t2: attribute(models.fy, &inputs.fy_t2, &models.fy_background).map_err(at)?,
        };

        let (next, hvac) = step(&state, &forecast[0], decision.u1_c, testbed).map_err(at)?;
        let mut record = TimestepRecord {
            timestamp: t,
            day: cfg.start_day + t / HOURS_PER_DAY,
            hour_of_day: t % HOURS_PER_DAY,
            zone_temp_c: state.zone_temp,
            air_temp_c: state.air_temp,
            forecast,
            applied_setpoint_c: decision.u1_c,
            cooling_rate_w: hvac.cooling_rate,
            power_limit_t1_w: power_limits[0],
            power_limit_t2_w: power_limits[1],
            decision,
            attributions,
            scenario: None,
            opt_seconds,
        };
        record.scenario = Some(classify(&record, cfg.threshold_w));
        records.push(record);
        state = next;
    }

    Ok(Episode {
        header: EpisodeHeader {
            version: EPISODE_FORMAT_VERSION,
            n_records: records.len(),
            seeds: Seeds {
                weather: testbed.rng_seed,
                calendar: calendar.seed,
            },
            model_digests: models.digests.clone(),
            config: EpisodeSnapshot {
                episode: cfg.clone(),
                testbed: testbed.clone(),
                calendar: calendar.clone(),
            },
        },
        records,
    })
}

impl Episode {
    /// Zeroes wall-clock fields so reruns compare byte for byte.
    pub fn canonicalize(&mut self) {
        for r in &mut self.records {
            r.opt_seconds = 0.0;
        }
    }

    pub fn record(&self, timestamp: usize) -> Result<&TimestepRecord> {
        self.records
            .iter()
            .find(|r| r.timestamp == timestamp)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "timestep {timestamp} not in episode; valid range is 0..={}",
                    self.records.len().saturating_sub(1)
                ))
            })
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n").map_err(|e| Error::io("<episode>", e))?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io("<episode>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let header: EpisodeHeader = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io("<episode>", e))?;
                serde_json::from_str(&line).map_err(|e| Error::CorruptLine {
                    line: 1,
                    reason: e.to_string(),
                })?
            }
            None => return Err(Error::Integrity("episode file is empty".into())),
        };
        let mut records: Vec<TimestepRecord> = Vec::with_capacity(header.n_records);
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io("<episode>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TimestepRecord =
                serde_json::from_str(&line).map_err(|e| Error::CorruptLine {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            if let Some(prev) = records.last() {
                if record.timestamp != prev.timestamp + 1 {
                    return Err(Error::Integrity(format!(
                        "line {}: timestep {} does not follow {}",
                        i + 1,
                        record.timestamp,
                        prev.timestamp
                    )));
                }
            }
            records.push(record);
        }
        if records.len() != header.n_records {
            return Err(Error::Integrity(format!(
                "header announces {} records, file holds {}",
                header.n_records,
                records.len()
            )));
        }
        Ok(Self { header, records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub per_interval: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

/// Per-interval optimization wall-clock seconds.
pub fn timing_report(episode: &Episode) -> TimingReport {
    let per_interval: Vec<f64> = episode.records.iter().map(|r| r.opt_seconds).collect();
    let n = per_interval.len().max(1) as f64;
    let mean = per_interval.iter().sum::<f64>() / n;
    let max = per_interval.iter().copied().fold(0.0, f64::max);
    TimingReport {
        per_interval,
        mean,
        max,
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::surrogate::FnRegressor;
    use crate::testbed::generate_dr_calendar;

    /// One simulated day driven by closed-form surrogates. With `precooling`
    /// the cooling power grows with zone temperature, so lowering the first
    /// setpoint pays off ahead of an event; otherwise power only falls with
    /// the setpoint and the controller stays at the upper bound.
    pub(crate) fn stub_episode(event_probability: f64, precooling: bool) -> Episode {
        let fx = FnRegressor::new(FeatureSchema::zone_temperature(), move |x: &[f64]| {
            if precooling {
                0.5 * (x[0] + x[1])
            } else {
                x[0]
            }
        });
        let fy = FnRegressor::new(FeatureSchema::cooling_rate(), move |x: &[f64]| {
            if precooling {
                (400.0 * (x[1] - 20.0)).max(0.0)
            } else {
                100.0 * (26.0 - x[0])
            }
        });
        let row = vec![24.0, 24.0, 30.0, 200.0, 2.0];
        let models = Surrogates::new(
            &fx,
            &fy,
            BackgroundSet::new(vec![row.clone()]).unwrap(),
            BackgroundSet::new(vec![row]).unwrap(),
            ModelDigests {
                fx: "stub-fx".into(),
                fy: "stub-fy".into(),
            },
        )
        .unwrap();
        let cfg = EpisodeConfig {
            n_days: 1,
            ..EpisodeConfig::default()
        };
        let cal = generate_dr_calendar(1, event_probability, 5).unwrap();
        let mut ep = run_episode(&cfg, &TestbedConfig::default(), &models, &cal).unwrap();
        ep.canonicalize();
        ep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::Scenario;
    use crate::surrogate::FnRegressor;
    use crate::testbed::generate_dr_calendar;

    fn stub_pair() -> (impl Regressor, impl Regressor) {
        (
            FnRegressor::new(FeatureSchema::zone_temperature(), |x: &[f64]| x[0]),
            FnRegressor::new(FeatureSchema::cooling_rate(), |x: &[f64]| 100.0 * (26.0 - x[0])),
        )
    }

    fn backgrounds() -> (BackgroundSet, BackgroundSet) {
        let row = vec![24.0, 24.0, 30.0, 200.0, 2.0];
        (
            BackgroundSet::new(vec![row.clone()]).unwrap(),
            BackgroundSet::new(vec![row]).unwrap(),
        )
    }

    fn one_day_episode(p: f64) -> Episode {
        let (fx, fy) = stub_pair();
        let (bx, by) = backgrounds();
        let digests = ModelDigests {
            fx: "stub-fx".into(),
            fy: "stub-fy".into(),
        };
        let models = Surrogates::new(&fx, &fy, bx, by, digests).unwrap();
        let cfg = EpisodeConfig {
            n_days: 1,
            ..EpisodeConfig::default()
        };
        let cal = generate_dr_calendar(1, p, 5).unwrap();
        run_episode(&cfg, &TestbedConfig::default(), &models, &cal).unwrap()
    }

    #[test]
    fn stub_day_without_events_never_precools() {
        let ep = one_day_episode(0.0);
        assert_eq!(ep.records.len(), 24);
        assert!(ep.records.iter().all(|r| r.applied_setpoint_c == 26.0));
        assert!(ep
            .records
            .iter()
            .all(|r| r.scenario.as_ref().unwrap().scenario == Scenario::Normal));
    }

    #[test]
    fn records_follow_the_simulator() {
        let ep = one_day_episode(1.0);
        let cfg = &ep.header.config.testbed;
        for pair in ep.records.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            assert_eq!(prev.applied_setpoint_c, prev.decision.u1_c);
            let (state, _) = step(&prev.state(), prev.disturbance(), prev.applied_setpoint_c, cfg).unwrap();
            assert_eq!(state.zone_temp, next.zone_temp_c);
            assert_eq!(state.air_temp, next.air_temp_c);
        }
        for r in &ep.records {
            for a in r.attributions.all() {
                assert!(verify_additivity(a).ok);
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let mut ep = one_day_episode(1.0);
        ep.canonicalize();
        let text = ep.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 25);
        let back = Episode::read_from(text.as_bytes()).unwrap();
        assert_eq!(back, ep);
        assert_eq!(back.to_jsonl().unwrap(), text);
    }

    #[test]
    fn count_mismatch_and_corrupt_lines_are_reported() {
        let ep = one_day_episode(0.0);
        let text = ep.to_jsonl().unwrap();
        let short: String = text.lines().take(24).map(|l| format!("{l}\n")).collect();
        assert!(matches!(Episode::read_from(short.as_bytes()), Err(Error::Integrity(_))));

        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        lines[5] = lines[5][..lines[5].len() / 2].to_owned();
        let broken = lines.join("\n");
        match Episode::read_from(broken.as_bytes()) {
            Err(Error::CorruptLine { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected corrupt line, got {other:?}"),
        }
        assert!(matches!(Episode::read_from(&b""[..]), Err(Error::Integrity(_))));
    }

    #[test]
    fn timing_report_shape() {
        let ep = one_day_episode(0.0);
        let report = timing_report(&ep);
        assert_eq!(report.per_interval.len(), ep.records.len());
        assert!(report.max >= report.mean);
    }

    #[test]
    fn wrong_model_roles_are_rejected() {
        let (fx, fy) = stub_pair();
        let (bx, by) = backgrounds();
        let digests = ModelDigests {
            fx: String::new(),
            fy: String::new(),
        };
        assert!(matches!(
            Surrogates::new(&fy, &fx, bx, by, digests),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn unknown_timestep_lists_range() {
        let ep = one_day_episode(0.0);
        let err = ep.record(99).unwrap_err().to_string();
        assert!(err.contains("0..=23"), "{err}");
    }
}
