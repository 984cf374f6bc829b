//! Metrics from run traces, closed-form predictions, and plot export.

use std::fmt::Write as _;

use thiserror::Error;

use crate::trace::{EventKind, RunTrace};
use crate::types::ClientConfig;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("trace is incomplete: {0}")]
    IncompleteTrace(&'static str),
    #[error("trace was recorded with {field} = {trace}, config says {config}")]
    ConfigMismatch {
        field: &'static str,
        trace: String,
        config: String,
    },
}

/// Expected round trip: the three legs are independent, so means add.
pub fn expected_latency(mean_t_cs_ms: f64, mean_l_s_ms: f64, mean_t_sc_ms: f64) -> f64 {
    mean_t_cs_ms + mean_l_s_ms + mean_t_sc_ms
}

/// Like [`expected_latency`], but drops the transit legs when together they
/// are at most `negligible_ratio` of the inference mean.
pub fn effective_latency(
    mean_t_cs_ms: f64,
    mean_l_s_ms: f64,
    mean_t_sc_ms: f64,
    negligible_ratio: f64,
) -> f64 {
    let transit = mean_t_cs_ms + mean_t_sc_ms;
    if transit <= negligible_ratio * mean_l_s_ms {
        mean_l_s_ms
    } else {
        expected_latency(mean_t_cs_ms, mean_l_s_ms, mean_t_sc_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinG {
    /// `(l_s / dt) / n`, clamped to `[0, 1]`.
    pub analytic: f64,
    /// `ceil(l_s / dt) / n`, not clamped: above 1 no threshold avoids idling.
    pub conservative: f64,
}

/// Smallest threshold that keeps the queue from running dry.
pub fn min_g_no_starvation(mean_l_s_ms: f64, delta_t_ms: f64, n: usize) -> MinG {
    let ticks = mean_l_s_ms / delta_t_ms;
    MinG {
        analytic: (ticks / n as f64).clamp(0.0, 1.0),
        conservative: ticks.ceil() / n as f64,
    }
}

/// Post-pop queue size at every loop tick.
pub fn queue_series(trace: &RunTrace) -> Vec<(u64, u32)> {
    trace
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Exec { queue_len, .. } | EventKind::Idle { queue_len } => {
                Some((e.tick, queue_len))
            }
            _ => None,
        })
        .collect()
}

/// Re-derives the queue size series from merges and executions alone,
/// ignoring the sizes recorded in the trace.
pub fn reconstruct_queue_series(trace: &RunTrace) -> Vec<(u64, u32)> {
    // the queue is always the contiguous timestep range [front, end)
    let (mut front, mut end) = (0u64, 0u64);
    let mut out = Vec::new();
    for e in &trace.events {
        match e.kind {
            EventKind::ChunkMerged {
                start, len, step, ..
            } => {
                front = front.max(step);
                let in_start = start.max(step);
                let in_end = start + u64::from(len);
                if in_start < in_end {
                    if end <= front {
                        (front, end) = (in_start, in_end);
                    } else {
                        front = front.min(in_start);
                        end = end.max(in_end);
                    }
                }
            }
            EventKind::Exec { .. } => {
                front += 1;
                out.push((e.tick, end.saturating_sub(front) as u32));
            }
            EventKind::Idle { .. } => out.push((e.tick, end.saturating_sub(front) as u32)),
            _ => {}
        }
    }
    out
}

/// Label used in exported series.
pub fn regime_label(g: f64) -> &'static str {
    if g == 0.0 {
        "sequential"
    } else if g >= 1.0 {
        "compute-intensive"
    } else {
        "async"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub ticks: u64,
    pub idle_ticks: u64,
    /// Idle ticks over loop ticks elapsed.
    pub idle_fraction: f64,
    /// Mean gap between observation sends during the loop; `None` with
    /// fewer than two sends.
    pub mean_send_period_ticks: Option<f64>,
    pub mean_receive_latency_ms: Option<f64>,
    /// Every sent observation costs one forward pass, including the first.
    pub inference_calls: u64,
    pub tasks_completed: u64,
    pub first_completion_tick: Option<u64>,
    pub queue_series: Vec<(u64, u32)>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Loop-time observation sends: every `ObsSent` except the initial one.
pub fn loop_send_ticks(trace: &RunTrace) -> Vec<u64> {
    trace.send_ticks().into_iter().skip(1).collect()
}

pub fn compute_metrics(trace: &RunTrace, config: &ClientConfig) -> Result<Metrics, AnalysisError> {
    let h = &trace.header;
    if !h.complete {
        return Err(AnalysisError::IncompleteTrace("run was cut short"));
    }
    if trace.events.is_empty() || h.ticks_run == 0 {
        return Err(AnalysisError::IncompleteTrace("no loop ticks recorded"));
    }
    let mismatch = |field, trace: String, config: String| {
        Err(AnalysisError::ConfigMismatch {
            field,
            trace,
            config,
        })
    };
    if h.n != config.n as u64 {
        return mismatch("n", h.n.to_string(), config.n.to_string());
    }
    if h.delta_t_ms != config.delta_t_ms {
        return mismatch(
            "dt_ms",
            h.delta_t_ms.to_string(),
            config.delta_t_ms.to_string(),
        );
    }

    let series = queue_series(trace);
    if series.len() as u64 != h.ticks_run {
        return Err(AnalysisError::IncompleteTrace(
            "tick count disagrees with header",
        ));
    }
    let idle_ticks = trace.count(|k| matches!(k, EventKind::Idle { .. })) as u64;
    let sends = loop_send_ticks(trace);
    let first_completion_tick = trace
        .events
        .iter()
        .find(|e| matches!(e.kind, EventKind::TaskDone { .. }))
        .map(|e| e.tick);

    Ok(Metrics {
        ticks: h.ticks_run,
        idle_ticks,
        idle_fraction: idle_ticks as f64 / h.ticks_run as f64,
        mean_send_period_ticks: mean(sends.windows(2).map(|w| (w[1] - w[0]) as f64)),
        mean_receive_latency_ms: mean(trace.events.iter().filter_map(|e| match e.kind {
            EventKind::ChunkArrived { latency_ms, .. } => Some(latency_ms as f64),
            _ => None,
        })),
        inference_calls: trace.send_ticks().len() as u64,
        tasks_completed: trace.count(|k| matches!(k, EventKind::TaskDone { .. })) as u64,
        first_completion_tick,
        queue_series: series,
    })
}

/// CSV with header `tick,queue_size,regime_label`, one row per loop tick.
pub fn export_queue_series(trace: &RunTrace) -> String {
    let label = regime_label(trace.header.g);
    let mut out = String::from("tick,queue_size,regime_label\n");
    for (tick, size) in queue_series(trace) {
        writeln!(out, "{tick},{size},{label}").unwrap();
    }
    out
}

/// gnuplot script plotting a CSV written by [`export_queue_series`].
pub fn gnuplot_script(csv_path: &str, n: u64) -> String {
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel 'tick'\n\
         set ylabel 'queue size'\n\
         set yrange [0:{n}]\n\
         plot '{csv_path}' using 1:2 with steps\n"
    )
}

pub fn summary_text(m: &Metrics, config: &ClientConfig) -> String {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    let mut s = String::new();
    writeln!(s, "ticks                   {}", m.ticks).unwrap();
    writeln!(s, "idle_ticks              {}", m.idle_ticks).unwrap();
    writeln!(s, "idle_fraction           {:.4}", m.idle_fraction).unwrap();
    writeln!(
        s,
        "mean_send_period_ticks  {}",
        opt(m.mean_send_period_ticks)
    )
    .unwrap();
    writeln!(
        s,
        "predicted_send_period   {:.3}",
        (1.0 - config.g) * config.n as f64
    )
    .unwrap();
    writeln!(
        s,
        "mean_receive_latency_ms {}",
        opt(m.mean_receive_latency_ms)
    )
    .unwrap();
    writeln!(s, "inference_calls         {}", m.inference_calls).unwrap();
    writeln!(s, "tasks_completed         {}", m.tasks_completed).unwrap();
    if let Some(t) = m.first_completion_tick {
        writeln!(s, "first_completion_tick   {t}").unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{TraceEvent, TraceHeader};

    #[test]
    fn latency_sums() {
        assert_eq!(expected_latency(5.0, 330.0, 5.0), 340.0);
        assert_eq!(expected_latency(0.0, 0.0, 0.0), 0.0);
        for x in [0.0, 1.5, 330.0, 1e6] {
            assert_eq!(expected_latency(0.0, x, 0.0), x);
        }
        assert_eq!(effective_latency(5.0, 330.0, 5.0, 0.05), 330.0);
        assert_eq!(effective_latency(5.0, 330.0, 5.0, 0.01), 340.0);
    }

    #[test]
    fn starvation_bound_values() {
        assert_eq!(min_g_no_starvation(330.0, 33.0, 50).analytic, 0.2);
        assert_eq!(min_g_no_starvation(330.0, 33.0, 50).conservative, 0.2);
        assert_eq!(min_g_no_starvation(0.0, 33.0, 50).analytic, 0.0);
        assert_eq!(min_g_no_starvation(1650.0, 33.0, 50).analytic, 1.0);
        assert_eq!(min_g_no_starvation(3300.0, 33.0, 50).analytic, 1.0);
        assert_eq!(min_g_no_starvation(3300.0, 33.0, 50).conservative, 2.0);
        assert_eq!(
            min_g_no_starvation(340.0, 33.0, 50).conservative,
            11.0 / 50.0
        );
    }

    #[test]
    fn bound_is_monotone() {
        let mut prev = 0.0;
        for l in (0..3000).step_by(7) {
            let g = min_g_no_starvation(l as f64, 33.0, 50).analytic;
            assert!(g >= prev);
            prev = g;
        }
        for n in 1..100 {
            assert!(
                min_g_no_starvation(330.0, 33.0, n + 1).analytic
                    <= min_g_no_starvation(330.0, 33.0, n).analytic
            );
        }
        for dt in 1..100 {
            assert!(
                min_g_no_starvation(330.0, dt as f64 + 1.0, 50).analytic
                    <= min_g_no_starvation(330.0, dt as f64, 50).analytic
            );
        }
    }

    fn header(ticks_run: u64) -> TraceHeader {
        TraceHeader {
            n: 50,
            g: 0.0,
            delta_t_ms: 33,
            horizon: ticks_run,
            ticks_run,
            seed: 0,
            complete: true,
        }
    }

    #[test]
    fn empty_or_cut_trace_is_incomplete() {
        let cfg = ClientConfig::default();
        let empty = RunTrace {
            header: header(0),
            events: vec![],
        };
        assert!(matches!(
            compute_metrics(&empty, &cfg),
            Err(AnalysisError::IncompleteTrace(_))
        ));
        let mut cut = empty.clone();
        cut.header.complete = false;
        assert!(matches!(
            compute_metrics(&cut, &cfg),
            Err(AnalysisError::IncompleteTrace(_))
        ));
    }

    #[test]
    fn three_tick_export() {
        let trace = RunTrace {
            header: header(3),
            events: (0..3)
                .map(|t| TraceEvent {
                    tick: t,
                    kind: EventKind::Idle { queue_len: 0 },
                })
                .collect(),
        };
        let csv = export_queue_series(&trace);
        assert_eq!(
            csv,
            "tick,queue_size,regime_label\n0,0,sequential\n1,0,sequential\n2,0,sequential\n"
        );
        let m = compute_metrics(&trace, &ClientConfig::default()).unwrap();
        assert_eq!(m.idle_fraction, 1.0);
        assert_eq!(
            m,
            compute_metrics(&trace, &ClientConfig::default()).unwrap()
        );
    }

    #[test]
    fn config_mismatch_detected() {
        let trace = RunTrace {
            header: header(1),
            events: vec![TraceEvent {
                tick: 0,
                kind: EventKind::Idle { queue_len: 0 },
            }],
        };
        let cfg = ClientConfig {
            n: 10,
            ..ClientConfig::default()
        };
        assert!(matches!(
            compute_metrics(&trace, &cfg),
            Err(AnalysisError::ConfigMismatch { field: "n", .. })
        ));
    }
}
