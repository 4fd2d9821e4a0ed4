//! Parameter sweeps over arrival rate or back-off, written as CSV rows plus
//! a JSON manifest that reruns them.
//!
//! A sweep varies either `lambda1` or `epsilon` over a grid for each named
//! channel case and records the requested measurements per row. Rows run
//! in parallel and are written in (case, sweep value) order, every
//! random quantity is seeded from the spec, and floats are printed in
//! shortest round-trip form, so a rerun of the same spec reproduces the
//! CSV byte for byte.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ergodic_opt::{
    solve_ergodic, solve_ergodic_conventional, static_energy_over_draws, QUAD_REL_TOL,
};
use crate::error::{Error, Result};
use crate::markov::analysis::{analyze_fading, analyze_static, AnalysisOptions, QueueAnalysis};
use crate::model::{ArrivalRates, ChannelGains, FadingChannel, LinkGains};
use crate::scenario::Policy;
use crate::sim::{run_eersp, FallbackGain, SimConfig};
use crate::static_opt::{brute_force_oracle, solve_conventional, solve_static};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Lambda1,
    Epsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub name: String,
    /// Fixed gains, or mean gains for the fading measurements.
    pub gains: LinkGains,
}

/// Which columns to fill.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Measures {
    pub static_dnc: bool,
    pub oracle: bool,
    pub conventional: bool,
    pub ergodic: bool,
    pub ergodic_conventional: bool,
    /// Average static energy over this many Rayleigh draws.
    pub static_draws: Option<usize>,
    /// Static queue analysis and actual energy.
    pub queues: bool,
    /// Static-channel simulation.
    pub simulate: bool,
    /// Fading queue analysis.
    pub fading_queues: bool,
    /// Fading-channel simulation.
    pub fading_simulate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub sweep: SweepVariable,
    pub values: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub epsilon: f64,
    pub cases: Vec<Case>,
    pub measures: Measures,
    pub seed: u64,
    pub slots: u64,
    pub truncation: usize,
    pub oracle_step: f64,
    #[serde(default)]
    pub fallback: FallbackGain,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidInput("sweep grid is empty".into()));
        }
        if self.values.windows(2).any(|w| !(w[1] > w[0])) || self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("sweep grid must be finite and strictly increasing".into()));
        }
        if self.cases.is_empty() {
            return Err(Error::InvalidInput("no cases".into()));
        }
        for c in &self.cases {
            ChannelGains::try_from(c.gains)?;
        }
        if self.slots == 0 || self.truncation == 0 {
            return Err(Error::InvalidInput("slots and truncation must be positive".into()));
        }
        if !(self.oracle_step > 0.0 && self.oracle_step < 1.0) {
            return Err(Error::InvalidInput("oracle_step must lie in (0, 1)".into()));
        }
        self.rates_at(self.values[0]).map(|_| ())
    }

    fn rates_at(&self, v: f64) -> Result<ArrivalRates> {
        match self.sweep {
            SweepVariable::Lambda1 => ArrivalRates::new(v, self.lambda2, self.epsilon),
            SweepVariable::Epsilon => ArrivalRates::new(self.lambda1, self.lambda2, v),
        }
    }
}

fn case(name: &str, g1r: f64, g2r: f64, gr1: f64, gr2: f64) -> Case {
    Case {
        name: name.into(),
        gains: LinkGains { g1r, g2r, gr1, gr2 },
    }
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    // decimal rounding keeps grid values readable in the CSV
    (0..=n).map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9).collect()
}

pub const PRESETS: [&str; 5] = [
    "oracle-check",
    "coding-gain",
    "fading-energy",
    "queues-vs-load",
    "queues-vs-backoff",
];

/// Built-in sweeps, one per entry of [`PRESETS`].
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    let base = ExperimentSpec {
        name: name.into(),
        sweep: SweepVariable::Lambda1,
        values: grid(0.1, 2.0, 0.1),
        lambda1: 0.5,
        lambda2: 1.0,
        epsilon: 0.0,
        cases: vec![
            case("unit", 1.0, 1.0, 1.0, 1.0),
            case("g1r=gr2=1,g2r=gr1=2", 1.0, 2.0, 2.0, 1.0),
            case("g1r=gr1=1,g2r=gr2=2", 1.0, 2.0, 1.0, 2.0),
        ],
        measures: Measures::default(),
        seed: 2024,
        slots: 1_000_000,
        truncation: 64,
        oracle_step: 0.05,
        fallback: FallbackGain::default(),
    };
    let spec = match name {
        // KKT solution against the direct grid search
        "oracle-check" => ExperimentSpec {
            measures: Measures {
                static_dnc: true,
                oracle: true,
                ..Default::default()
            },
            ..base
        },
        "coding-gain" => ExperimentSpec {
            measures: Measures {
                static_dnc: true,
                conventional: true,
                ..Default::default()
            },
            ..base
        },
        "fading-energy" => ExperimentSpec {
            cases: vec![case("I", 1.0, 1.0, 1.0, 1.0), case("II", 1.0, 2.0, 2.0, 1.0)],
            measures: Measures {
                ergodic: true,
                ergodic_conventional: true,
                static_draws: Some(200),
                ..Default::default()
            },
            ..base
        },
        "queues-vs-load" => ExperimentSpec {
            values: grid(0.1, 1.0, 0.1),
            epsilon: 0.5,
            cases: vec![case("g1r=gr1=1,g2r=gr2=2", 1.0, 2.0, 1.0, 2.0)],
            measures: Measures {
                static_dnc: true,
                queues: true,
                simulate: true,
                ..Default::default()
            },
            ..base
        },
        "queues-vs-backoff" => ExperimentSpec {
            sweep: SweepVariable::Epsilon,
            values: grid(0.1, 0.9, 0.1),
            cases: vec![case("unit", 1.0, 1.0, 1.0, 1.0)],
            measures: Measures {
                static_dnc: true,
                queues: true,
                simulate: true,
                ergodic: true,
                fading_queues: true,
                fading_simulate: true,
                ..Default::default()
            },
            ..base
        },
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown preset {other:?}; expected one of {PRESETS:?}"
            )))
        }
    };
    Ok(spec)
}

/// One sweep row; `None` marks a column that was not requested.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Row {
    pub case: String,
    pub value: f64,
    pub dnc_static: Option<f64>,
    pub oracle: Option<f64>,
    pub conventional: Option<f64>,
    pub ergodic: Option<f64>,
    pub ergodic_conventional: Option<f64>,
    pub static_over_draws: Option<f64>,
    pub q1_analytic: Option<f64>,
    pub q1_sim: Option<f64>,
    pub qr2_analytic: Option<f64>,
    pub qr2_sim: Option<f64>,
    pub eact_analytic: Option<f64>,
    pub eact_sim: Option<f64>,
    pub boundary_mass: Option<f64>,
    pub fading_q1_analytic: Option<f64>,
    pub fading_q1_sim: Option<f64>,
    pub fading_qr2_analytic: Option<f64>,
    pub fading_qr2_sim: Option<f64>,
    pub fading_eact_sim: Option<f64>,
    pub warnings: Vec<String>,
    /// Set when the row failed; the sweep continues.
    pub error: Option<String>,
}

const COLUMNS: [&str; 23] = [
    "case",
    "value",
    "status",
    "dnc_static",
    "oracle",
    "conventional",
    "ergodic",
    "ergodic_conventional",
    "static_over_draws",
    "q1_analytic",
    "q1_sim",
    "qr2_analytic",
    "qr2_sim",
    "eact_analytic",
    "eact_sim",
    "boundary_mass",
    "fading_q1_analytic",
    "fading_q1_sim",
    "fading_qr2_analytic",
    "fading_qr2_sim",
    "fading_eact_sim",
    "warnings",
    "error",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl Row {
    fn record(&self) -> Vec<String> {
        let status = if self.error.is_some() { "failed" } else { "ok" };
        vec![
            self.case.clone(),
            format!("{}", self.value),
            status.to_string(),
            opt(self.dnc_static),
            opt(self.oracle),
            opt(self.conventional),
            opt(self.ergodic),
            opt(self.ergodic_conventional),
            opt(self.static_over_draws),
            opt(self.q1_analytic),
            opt(self.q1_sim),
            opt(self.qr2_analytic),
            opt(self.qr2_sim),
            opt(self.eact_analytic),
            opt(self.eact_sim),
            opt(self.boundary_mass),
            opt(self.fading_q1_analytic),
            opt(self.fading_q1_sim),
            opt(self.fading_qr2_analytic),
            opt(self.fading_qr2_sim),
            opt(self.fading_eact_sim),
            self.warnings.join("; "),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

pub fn to_csv(rows: &[Row]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record(r.record()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn sim_config(policy: Policy, rates: &ArrivalRates, spec: &ExperimentSpec) -> Result<SimConfig> {
    let actual = ArrivalRates::new(rates.lambda1, rates.lambda2, 0.0)?;
    let mut c = SimConfig::new(policy, actual);
    c.slots = spec.slots;
    c.seed = spec.seed;
    c.fallback = spec.fallback;
    Ok(c)
}

fn fill_row(spec: &ExperimentSpec, case: &Case, value: f64, row: &mut Row) -> Result<()> {
    let m = &spec.measures;
    let rates = spec.rates_at(value)?;
    let gains = ChannelGains::try_from(case.gains)?;
    let fading = FadingChannel::rayleigh(case.gains.g1r, case.gains.g2r, case.gains.gr1, case.gains.gr2)?;
    let dists = fading.mode_distributions();
    let opts = AnalysisOptions {
        truncation: crate::markov::Truncation::square(spec.truncation),
        ..Default::default()
    };
    let note = |row: &mut Row, a: &QueueAnalysis| row.warnings.extend(a.warnings());

    if m.static_dnc || m.queues || m.simulate {
        let sol = solve_static(&gains, &rates)?;
        row.dnc_static = Some(sol.energy());
        if m.queues {
            let a = analyze_static(&sol, &rates, &opts)?;
            row.q1_analytic = Some(a.first.mean_source);
            row.qr2_analytic = Some(a.first.mean_relay);
            row.eact_analytic = a.energy.as_ref().map(|e| e.total);
            row.boundary_mass = Some(a.first.boundary_mass.max(a.second.boundary_mass));
            note(row, &a);
        }
        if m.simulate {
            let r = run_eersp(&sim_config(Policy::Static { solution: sol }, &rates, spec)?)?;
            row.q1_sim = Some(r.mean_q1);
            row.qr2_sim = Some(r.mean_qr2);
            row.eact_sim = Some(r.energy_per_slot);
        }
    }
    if m.oracle {
        row.oracle = Some(brute_force_oracle(&gains, &rates, spec.oracle_step)?.energy());
    }
    if m.conventional {
        row.conventional = Some(solve_conventional(&gains, &rates)?.energy());
    }
    if m.ergodic || m.fading_queues || m.fading_simulate {
        let sol = solve_ergodic(&dists, &rates)?;
        row.ergodic = Some(sol.energy());
        if m.fading_queues {
            let a = analyze_fading(&sol, &rates, &opts)?;
            row.fading_q1_analytic = Some(a.first.mean_source);
            row.fading_qr2_analytic = Some(a.first.mean_relay);
            note(row, &a);
        }
        if m.fading_simulate {
            let policy = Policy::Fading {
                solution: sol,
                channel: fading.clone(),
            };
            let r = run_eersp(&sim_config(policy, &rates, spec)?)?;
            row.fading_q1_sim = Some(r.mean_q1);
            row.fading_qr2_sim = Some(r.mean_qr2);
            row.fading_eact_sim = Some(r.energy_per_slot);
        }
    }
    if m.ergodic_conventional {
        row.ergodic_conventional = Some(solve_ergodic_conventional(&dists, &rates)?.energy());
    }
    if let Some(draws) = m.static_draws {
        row.static_over_draws = Some(static_energy_over_draws(&fading, &rates, draws, spec.seed)?);
    }
    Ok(())
}

/// Runs every (case, value) row; a failing row records its error and the
/// sweep moves on.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<Row>> {
    spec.validate()?;
    let jobs: Vec<(&Case, f64)> = spec
        .cases
        .iter()
        .flat_map(|c| spec.values.iter().map(move |&v| (c, v)))
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(case, value)| {
            let mut row = Row {
                case: case.name.clone(),
                value,
                ..Default::default()
            };
            if let Err(e) = fill_row(spec, case, value, &mut row) {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect();
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub quadrature_rel: f64,
    pub boundary_target: f64,
    pub stationary_residual: f64,
}

/// Everything needed to rerun an experiment; contains no timestamps so
/// reruns write identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub spec: ExperimentSpec,
    pub tolerances: Tolerances,
    pub csv: String,
    pub rows: usize,
    pub failed_rows: usize,
}

pub fn manifest(spec: &ExperimentSpec, rows: &[Row], csv_name: &str) -> Manifest {
    Manifest {
        tool: "twrelay".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        spec: spec.clone(),
        tolerances: Tolerances {
            quadrature_rel: QUAD_REL_TOL,
            boundary_target: crate::markov::analysis::BOUNDARY_TARGET,
            stationary_residual: crate::markov::stationary::DIRECT_RESIDUAL_TOL,
        },
        csv: csv_name.into(),
        rows: rows.len(),
        failed_rows: rows.iter().filter(|r| r.error.is_some()).count(),
    }
}

/// Runs the sweep and writes `<name>.csv` and `<name>.manifest.json` into `dir`.
pub fn run_to_dir(spec: &ExperimentSpec, dir: &Path) -> Result<(Vec<Row>, PathBuf, PathBuf)> {
    let rows = run_experiment(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", dir.display())))?;
    let csv_name = format!("{}.csv", spec.name);
    let csv_path = dir.join(&csv_name);
    let man_path = dir.join(format!("{}.manifest.json", spec.name));
    let io = |p: &Path, e: std::io::Error| Error::InvalidInput(format!("cannot write {}: {e}", p.display()));
    std::fs::write(&csv_path, to_csv(&rows)).map_err(|e| io(&csv_path, e))?;
    let man = serde_json::to_string_pretty(&manifest(spec, &rows, &csv_name)).expect("manifest serializes");
    std::fs::write(&man_path, man + "\n").map_err(|e| io(&man_path, e))?;
    Ok((rows, csv_path, man_path))
}

/// Reads either a bare spec or a manifest written by [`run_to_dir`].
pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    if let Ok(m) = serde_json::from_str::<Manifest>(&text) {
        return Ok(m.spec);
    }
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("bad experiment spec: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentSpec {
        let mut s = preset("coding-gain").unwrap();
        s.values = vec![0.5, 1.5];
        s.cases.truncate(1);
        s
    }

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            preset(p).unwrap().validate().unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn grid_rejects_non_increasing() {
        let mut s = small();
        s.values = vec![0.5, 0.5];
        assert!(s.validate().is_err());
        s.values.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn rows_are_ordered_and_complete() {
        let rows = run_experiment(&small()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].value, 0.5);
        let r = &rows[1];
        assert!((r.dnc_static.unwrap() - 15.0).abs() < 1e-6);
        assert!((r.conventional.unwrap() - 31.0).abs() < 1e-6);
        assert!(r.oracle.is_none());
        let csv = to_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        let mut rd = csv::Reader::from_reader(csv.as_bytes());
        assert_eq!(rd.headers().unwrap().len(), COLUMNS.len());
        assert!(rd.records().all(|r| r.unwrap().len() == COLUMNS.len()));
    }

    #[test]
    fn failing_row_does_not_stop_the_sweep() {
        let mut s = small();
        // a load this large drives the multiplier past its search cap
        s.values = vec![0.5, 80.0];
        let rows = run_experiment(&s).unwrap();
        assert!(rows[0].error.is_none());
        assert!(rows[1].error.is_some());
        assert!(to_csv(&rows).lines().nth(2).unwrap().contains(",failed,"));
    }
}
