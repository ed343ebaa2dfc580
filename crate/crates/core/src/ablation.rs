//! Stage-selection sweep: one training run per (selection, seed), scored on
//! a held-out split.

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, Model};
use crate::error::{Error, Result};
use crate::losses::StageSelection;
use crate::synth::AnnotatedSample;
use crate::trainer::{self, TrainConfig, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub selections: Vec<StageSelection>,
    pub seeds: Vec<u64>,
}

impl AblationPlan {
    /// Single stages, adjacent pairs, adjacent triples, then all four.
    pub fn default_selections() -> Vec<StageSelection> {
        let rows: [&[usize]; 10] = [
            &[1],
            &[2],
            &[3],
            &[4],
            &[1, 2],
            &[2, 3],
            &[3, 4],
            &[1, 2, 3],
            &[2, 3, 4],
            &[1, 2, 3, 4],
        ];
        rows.iter()
            .map(|r| StageSelection::new(r).expect("static rows are valid"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.selections.is_empty() {
            return Err(Error::invalid("ablation needs at least one selection"));
        }
        for (i, s) in self.selections.iter().enumerate() {
            if self.selections[..i].contains(s) {
                return Err(Error::invalid(format!("selection {s} listed twice")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("ablation needs at least one seed"));
        }
        Ok(())
    }
}

impl Default for AblationPlan {
    fn default() -> Self {
        AblationPlan {
            selections: Self::default_selections(),
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub hmean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub selection: StageSelection,
    pub label: String,
    pub runs: Vec<SeedResult>,
    /// Mean over the seeds that finished; `None` when all of them failed.
    pub mean_hmean: Option<f64>,
    pub std_hmean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Trains and scores a single (selection, seed) cell.
#[allow(clippy::too_many_arguments)]
pub fn run_one(
    model_cfg: &BackboneConfig,
    train_cfg: &TrainConfig,
    data: &TrainingSet<'_>,
    val: Option<&[AnnotatedSample]>,
    test: &[AnnotatedSample],
    selection: StageSelection,
    seed: u64,
    eval_batch: usize,
) -> Result<f64> {
    let mut cfg = train_cfg.clone();
    cfg.loss.stages = selection;
    cfg.seed = seed;
    let model = Model::<f32>::init(model_cfg, seed)?;
    let outcome = trainer::train(model, data, val, &cfg, None)?;
    Ok(trainer::evaluate(&outcome.best_model, test, eval_batch)?.macro_hmean)
}

/// Runs every cell of `plan`, up to `jobs` at a time. A failing cell is
/// recorded in the report instead of aborting the sweep.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    plan: &AblationPlan,
    model_cfg: &BackboneConfig,
    train_cfg: &TrainConfig,
    data: &TrainingSet<'_>,
    val: Option<&[AnnotatedSample]>,
    test: &[AnnotatedSample],
    eval_batch: usize,
    jobs: usize,
) -> Result<AblationReport> {
    plan.validate()?;
    let cells: Vec<(StageSelection, u64)> = plan
        .selections
        .iter()
        .flat_map(|&s| plan.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let run = |&(sel, seed): &(StageSelection, u64)| {
        run_one(model_cfg, train_cfg, data, val, test, sel, seed, eval_batch)
    };
    let results: Vec<Result<f64>> = if jobs <= 1 {
        cells.iter().map(run).collect()
    } else {
        crate::par::with_threads(jobs, || {
            crate::par::map_indexed(cells.len(), |i| run(&cells[i]))
        })
    };

    let mut rows = Vec::with_capacity(plan.selections.len());
    let mut it = results.into_iter();
    for &selection in &plan.selections {
        let runs: Vec<SeedResult> = plan
            .seeds
            .iter()
            .map(|&seed| match it.next().expect("one result per cell") {
                Ok(h) => SeedResult {
                    seed,
                    hmean: Some(h),
                    error: None,
                },
                Err(e) => SeedResult {
                    seed,
                    hmean: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        let ok: Vec<f64> = runs.iter().filter_map(|r| r.hmean).collect();
        let stats = mean_std(&ok);
        rows.push(AblationRow {
            selection,
            label: selection.label(),
            runs,
            mean_hmean: stats.map(|s| s.0),
            std_hmean: stats.map(|s| s.1),
        });
    }
    Ok(AblationReport { rows })
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn best(&self) -> Option<&AblationRow> {
        self.rows
            .iter()
            .filter(|r| r.mean_hmean.is_some())
            .max_by(|a, b| a.mean_hmean.partial_cmp(&b.mean_hmean).expect("finite"))
    }

    /// Markdown table of mean Hmean in percent. Rows within 0.05 points of
    /// the best are bold.
    pub fn render_table(&self) -> String {
        let best = self.best().and_then(|r| r.mean_hmean).map(|h| h * 100.0);
        let mut out = String::from("| Stages | Hmean (%) | Std | Seeds |\n|---|---|---|---|\n");
        for row in &self.rows {
            let done = row.runs.iter().filter(|r| r.hmean.is_some()).count();
            let seeds = format!("{done}/{}", row.runs.len());
            match (row.mean_hmean, row.std_hmean) {
                (Some(m), Some(s)) => {
                    let pct = m * 100.0;
                    let bold = best.is_some_and(|b| b - pct <= 0.05);
                    let cell = if bold {
                        format!("**{pct:.1}**")
                    } else {
                        format!("{pct:.1}")
                    };
                    let label = if bold {
                        format!("**{}**", row.label)
                    } else {
                        row.label.clone()
                    };
                    out.push_str(&format!(
                        "| {label} | {cell} | {:.1} | {seeds} |\n",
                        s * 100.0
                    ));
                }
                _ => out.push_str(&format!("| {} | failed | - | {seeds} |\n", row.label)),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rows_in_order() {
        let labels: Vec<String> = AblationPlan::default_selections()
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(
            labels,
            ["1", "2", "3", "4", "1,2", "2,3", "3,4", "1,2,3", "2,3,4", "1,2,3,4"]
        );
    }

    fn row(label: &[usize], hs: &[Option<f64>]) -> AblationRow {
        let selection = StageSelection::new(label).unwrap();
        let runs: Vec<SeedResult> = hs
            .iter()
            .enumerate()
            .map(|(i, h)| SeedResult {
                seed: i as u64,
                hmean: *h,
                error: h.is_none().then(|| "boom".to_string()),
            })
            .collect();
        let ok: Vec<f64> = hs.iter().flatten().copied().collect();
        let stats = mean_std(&ok);
        AblationRow {
            selection,
            label: selection.label(),
            runs,
            mean_hmean: stats.map(|s| s.0),
            std_hmean: stats.map(|s| s.1),
        }
    }

    #[test]
    fn table_bolds_best_and_marks_failures() {
        let report = AblationReport {
            rows: vec![
                row(&[2], &[Some(0.90), Some(0.92)]),
                row(&[2, 3], &[Some(0.95), Some(0.95)]),
                row(&[4], &[None, None]),
            ],
        };
        let table = report.render_table();
        assert!(table.contains("| **Stage 2,3** | **95.0** |"), "{table}");
        assert!(table.contains("| Stage 2 | 91.0 |"), "{table}");
        assert!(table.contains("| Stage 4 | failed | - | 0/2 |"), "{table}");
        assert_eq!(report.best().unwrap().selection.to_string(), "2,3");
    }

    #[test]
    fn report_json_round_trips() {
        let report = AblationReport {
            rows: vec![row(&[1, 2], &[Some(0.5), None])],
        };
        let back: AblationReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn empty_plan_rejected() {
        assert!(AblationPlan {
            selections: vec![],
            seeds: vec![1]
        }
        .validate()
        .is_err());
        assert!(AblationPlan {
            selections: AblationPlan::default_selections(),
            seeds: vec![]
        }
        .validate()
        .is_err());
        let twice = vec![StageSelection::new(&[2, 3]).unwrap(); 2];
        assert!(AblationPlan {
            selections: twice,
            seeds: vec![1]
        }
        .validate()
        .is_err());
    }
}
