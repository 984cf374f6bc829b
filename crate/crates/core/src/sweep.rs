//! Parameter sweeps over scenarios.

use std::fmt::Write as _;
use std::thread;

use crate::analysis::{compute_metrics, regime_label, Metrics};
use crate::latency::{LatencyDist, LatencyTarget};
use crate::scenario::ScenarioConfig;
use crate::sim::simulate;

/// Values to try per parameter; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGrid {
    pub g: Vec<f64>,
    pub inference_latency: Vec<LatencyDist>,
    pub n: Vec<usize>,
    pub epsilon: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub g: f64,
    pub inference_latency: LatencyDist,
    pub n: usize,
    pub epsilon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: Cell,
    pub outcome: Result<Metrics, String>,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        self.outcome.is_err()
    }
}

fn or_base<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// All cells in row-major order: g, latency, n, epsilon, then seed.
pub fn cells(base: &ScenarioConfig, grid: &ParamGrid) -> Vec<Cell> {
    let base_latency = base
        .latency
        .iter()
        .find(|m| m.applies_to == LatencyTarget::ServerInference)
        .map_or(LatencyDist::Constant(0), |m| m.dist);
    let mut out = Vec::new();
    for &g in &or_base(&grid.g, base.client.g) {
        for &lat in &or_base(&grid.inference_latency, base_latency) {
            for &n in &or_base(&grid.n, base.client.n) {
                for &epsilon in &or_base(&grid.epsilon, base.client.epsilon) {
                    for &seed in &base.seeds {
                        out.push(Cell {
                            g,
                            inference_latency: lat,
                            n,
                            epsilon,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out
}

fn run_cell(base: &ScenarioConfig, cell: &Cell) -> Result<Metrics, String> {
    let mut s = base.clone();
    s.client.g = cell.g;
    s.client.n = cell.n;
    s.client.epsilon = cell.epsilon;
    s.set_latency(LatencyTarget::ServerInference, cell.inference_latency);
    let trace = simulate(&s, cell.seed).map_err(|e| e.to_string())?;
    compute_metrics(&trace, &s.client_config()).map_err(|e| e.to_string())
}

/// Simulates every cell, spreading them over `threads` workers. A failing
/// cell is reported in its row and does not stop the others.
pub fn sweep(base: &ScenarioConfig, grid: &ParamGrid, threads: usize) -> Vec<SweepRow> {
    let cells = cells(base, grid);
    let threads = threads.clamp(1, cells.len().max(1));
    let mut outcomes: Vec<Option<Result<Metrics, String>>> = vec![None; cells.len()];
    thread::scope(|scope| {
        let per = cells.len().div_ceil(threads);
        for (cell_chunk, out_chunk) in cells
            .chunks(per.max(1))
            .zip(outcomes.chunks_mut(per.max(1)))
        {
            scope.spawn(move || {
                for (cell, slot) in cell_chunk.iter().zip(out_chunk) {
                    *slot = Some(run_cell(base, cell));
                }
            });
        }
    });
    cells
        .into_iter()
        .zip(outcomes)
        .map(|(cell, outcome)| SweepRow {
            cell,
            outcome: outcome.expect("every cell ran"),
        })
        .collect()
}

fn cell_columns(c: &Cell) -> String {
    format!(
        "{},{},{},{},{}",
        c.g, c.inference_latency, c.n, c.epsilon, c.seed
    )
}

/// Long format: one line per (cell, metric). Failed cells get a single
/// `status=error` line carrying the message.
pub fn metrics_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("g,latency,n,epsilon,seed,status,metric,value\n");
    for row in rows {
        let cols = cell_columns(&row.cell);
        match &row.outcome {
            Ok(m) => {
                let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
                let values = [
                    ("ticks", m.ticks.to_string()),
                    ("idle_ticks", m.idle_ticks.to_string()),
                    ("idle_fraction", m.idle_fraction.to_string()),
                    ("mean_send_period_ticks", opt(m.mean_send_period_ticks)),
                    ("mean_receive_latency_ms", opt(m.mean_receive_latency_ms)),
                    ("inference_calls", m.inference_calls.to_string()),
                    ("tasks_completed", m.tasks_completed.to_string()),
                ];
                for (name, v) in values {
                    writeln!(out, "{cols},ok,{name},{v}").unwrap();
                }
            }
            Err(e) => {
                let msg = e.replace(['"', '\n'], "'");
                writeln!(out, "{cols},error,message,\"{msg}\"").unwrap();
            }
        }
    }
    out
}

/// Queue series of every successful cell, one line per tick.
pub fn series_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("g,latency,n,epsilon,seed,tick,queue_size,regime_label\n");
    for row in rows {
        if let Ok(m) = &row.outcome {
            let cols = cell_columns(&row.cell);
            let label = regime_label(row.cell.g);
            for (tick, size) in &m.queue_series {
                writeln!(out, "{cols},{tick},{size},{label}").unwrap();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ScenarioConfig {
        let mut s = ScenarioConfig::default();
        s.client.horizon = 200;
        s
    }

    #[test]
    fn one_row_per_cell() {
        let grid = ParamGrid {
            g: vec![0.0, 0.7, 1.0],
            ..ParamGrid::default()
        };
        let rows = sweep(&base(), &grid, 3);
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| !r.failed()));
        assert_eq!(rows[1].cell.g, 0.7);
    }

    #[test]
    fn bad_cell_is_isolated() {
        let grid = ParamGrid {
            g: vec![0.5, 1.5, 0.9],
            ..ParamGrid::default()
        };
        let rows = sweep(&base(), &grid, 2);
        let failed: Vec<bool> = rows.iter().map(SweepRow::failed).collect();
        assert_eq!(failed, vec![false, true, false]);
        let csv = metrics_csv(&rows);
        assert!(csv.contains("1.5,const:330,50,0,0,error,message,"));
        assert_eq!(csv.lines().filter(|l| l.contains(",ok,")).count(), 14);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut b = base();
        b.seeds = vec![1, 2, 3];
        let grid = ParamGrid {
            g: vec![0.2, 0.6],
            n: vec![10, 50],
            ..ParamGrid::default()
        };
        assert_eq!(sweep(&b, &grid, 1), sweep(&b, &grid, 8));
    }
}
