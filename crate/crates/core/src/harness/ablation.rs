use std::fmt::Write as _;
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use super::train::Trainer;
use super::{ExperimentConfig, HarnessError, MANUAL_WEIGHTS};
use crate::depth::DepthBounds;
use crate::losses::WeightingMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    NCls,
    Weighting,
    Bounds,
    Patch,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::NCls => "n_cls",
            Self::Weighting => "weighting",
            Self::Bounds => "bounds",
            Self::Patch => "patch",
        }
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n_cls" | "n-cls" => Ok(Self::NCls),
            "weighting" => Ok(Self::Weighting),
            "bounds" => Ok(Self::Bounds),
            "patch" => Ok(Self::Patch),
            other => Err(format!("unknown ablation axis `{other}`")),
        }
    }
}

/// One configuration of a comparison grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub name: String,
    pub config: ExperimentConfig,
}

fn cell(name: impl Into<String>, config: ExperimentConfig) -> AblationCell {
    AblationCell {
        name: name.into(),
        config,
    }
}

/// Regression-only single-task baseline: no classification head, plain loss.
pub fn regression_only(base: &ExperimentConfig) -> ExperimentConfig {
    let mut c = base.clone();
    c.model.aux_head = false;
    c.weighting = WeightingMode::Equal;
    c
}

/// Multi-task run with learned weighting and `n_cls` intervals.
pub fn multi_task(base: &ExperimentConfig, n_cls: usize) -> ExperimentConfig {
    let mut c = base.clone();
    c.model.aux_head = true;
    c.model.n_cls = n_cls;
    c.weighting = WeightingMode::Learned;
    c
}

/// Preset grid for `axis`, derived from `base`.
pub fn preset_cells(axis: AblationAxis, base: &ExperimentConfig) -> Vec<AblationCell> {
    match axis {
        AblationAxis::NCls => {
            let mut cells = vec![cell("reg_only", regression_only(base))];
            for n in [2, 4, 32, 64] {
                cells.push(cell(format!("n_cls={n}"), multi_task(base, n)));
            }
            cells
        }
        AblationAxis::Weighting => {
            let with = |mode| {
                let mut c = base.clone();
                c.model.aux_head = true;
                c.weighting = mode;
                c
            };
            let (w_reg, w_cls) = MANUAL_WEIGHTS;
            vec![
                cell("equal", with(WeightingMode::Equal)),
                cell("manual", with(WeightingMode::Manual { w_reg, w_cls })),
                cell("learned", with(WeightingMode::Learned)),
            ]
        }
        AblationAxis::Bounds => [(2.0, 125.0), (0.0, 256.0)]
            .into_iter()
            .map(|(lo, hi)| {
                let mut c = base.clone();
                c.bounds = DepthBounds { d_min: lo, d_max: hi };
                cell(format!("bounds={lo}-{hi}"), c)
            })
            .collect(),
        AblationAxis::Patch => [32, 64]
            .into_iter()
            .map(|p| {
                let mut c = base.clone();
                c.augment.crop = (p, p);
                cell(format!("crop={p}"), c)
            })
            .collect(),
    }
}

/// Outcome of one cell over all seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Best validation error of the regression head per seed.
    pub best_silog_reg: Vec<f64>,
    pub best_silog_cls: Vec<Option<f64>>,
    pub median: f64,
    /// Sample standard deviation across seeds.
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: Option<AblationAxis>,
    pub rows: Vec<CellResult>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&CellResult> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Columns: `cell`, one per seed, `median`, `spread`, `median_cls`.
    pub fn to_csv(&self) -> String {
        let n_seeds = self.rows.iter().map(|r| r.seeds.len()).max().unwrap_or(0);
        let mut out = String::from("cell");
        for i in 0..n_seeds {
            let _ = write!(out, ",seed_{i}");
        }
        out.push_str(",median,spread,median_cls\n");
        for r in &self.rows {
            out.push_str(&r.name);
            for i in 0..n_seeds {
                match r.best_silog_reg.get(i) {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            let cls: Vec<f64> = r.best_silog_cls.iter().flatten().copied().collect();
            let cls = if cls.is_empty() {
                String::new()
            } else {
                median(&cls).to_string()
            };
            let _ = writeln!(out, ",{},{},{cls}", r.median, r.spread);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

/// Trains every cell once per seed (`base seed + i`) and tabulates the best
/// validation errors. Runs are spread over `jobs` threads; the table does not
/// depend on `jobs`.
pub fn run_cells(cells: &[AblationCell], seeds: usize, jobs: usize) -> Result<Vec<CellResult>, HarnessError> {
    if seeds == 0 {
        return Err(HarnessError::Config("at least one seed is required".into()));
    }
    let work: Vec<(usize, u64, ExperimentConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            (0..seeds as u64).map(move |s| {
                let mut cfg = c.config.clone();
                cfg.seed = c.config.seed + s;
                (i, cfg.seed, cfg)
            })
        })
        .collect();
    let results: Mutex<Vec<Option<RunOutcome>>> = Mutex::new((0..work.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, work.len().max(1)) {
            scope.spawn(|| loop {
                let k = {
                    let mut n = next.lock().expect("work counter");
                    let k = *n;
                    *n += 1;
                    k
                };
                let Some((cell_idx, seed, cfg)) = work.get(k) else {
                    return;
                };
                log::info!("ablation cell {} seed {seed}", cells[*cell_idx].name);
                let out = run_one(cfg);
                results.lock().expect("results")[k] = Some(out);
            });
        }
    });
    let results = results.into_inner().expect("results");
    let mut rows: Vec<CellResult> = cells
        .iter()
        .map(|c| CellResult {
            name: c.name.clone(),
            seeds: Vec::new(),
            best_silog_reg: Vec::new(),
            best_silog_cls: Vec::new(),
            median: f64::NAN,
            spread: f64::NAN,
        })
        .collect();
    for ((cell_idx, seed, _), res) in work.iter().zip(results) {
        let (reg, cls) = res.expect("every run finished")?;
        let row = &mut rows[*cell_idx];
        row.seeds.push(*seed);
        row.best_silog_reg.push(reg);
        row.best_silog_cls.push(cls);
    }
    for row in &mut rows {
        row.median = median(&row.best_silog_reg);
        row.spread = sample_std(&row.best_silog_reg);
    }
    Ok(rows)
}

/// Best validation errors of one run: regression, then classification.
type RunOutcome = Result<(f64, Option<f64>), HarnessError>;

fn run_one(cfg: &ExperimentConfig) -> RunOutcome {
    let mut t = Trainer::new(cfg)?;
    t.run_to_end()?;
    if t.log().val.is_empty() {
        let s = t.validate()?;
        return Ok((s.silog_reg, s.silog_cls));
    }
    let reg = t.log().best_silog_reg().expect("validation rows exist");
    Ok((reg, t.log().best_silog_cls()))
}

/// Runs the preset grid of `axis`. Without a configured initial rate a single
/// range test on `base` fixes the rate for every cell.
pub fn run_ablation(
    axis: AblationAxis,
    base: &ExperimentConfig,
    seeds: usize,
    jobs: usize,
) -> Result<AblationTable, HarnessError> {
    let mut base = base.clone();
    if base.lr.initial.is_none() {
        let t = Trainer::new(&base)?;
        base.lr.initial = t.config().lr.initial;
    }
    let cells = preset_cells(axis, &base);
    Ok(AblationTable {
        axis: Some(axis),
        rows: run_cells(&cells, seeds, jobs)?,
    })
}
