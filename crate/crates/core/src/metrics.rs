//! Per-slot logging, run summaries, CSV and SVG output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::sim::{PedRecord, SimState, TripRecord};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no slots recorded in the evaluation window")]
    EmptyLog,
    #[error("io error writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SlotRecord {
    pub slot: u64,
    pub veh_queue: u64,
    pub ped_queue: u64,
    pub cum_veh_queue: u64,
    pub cum_ped_queue: u64,
    #[serde(skip)]
    pub training: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub controller: String,
    pub seed: u64,
    pub config_hash: String,
    pub slots: Vec<SlotRecord>,
    pub trips: Vec<(TripRecord, bool)>,
    pub peds: Vec<(PedRecord, bool)>,
}

impl MetricsLog {
    pub fn new(controller: &str, seed: u64, config_hash: &str) -> Self {
        MetricsLog {
            controller: controller.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            slots: Vec::new(),
            trips: Vec::new(),
            peds: Vec::new(),
        }
    }

    /// Append another log's records; slot numbers and cumulative sums
    /// continue from this log.
    pub fn concat(&mut self, other: &MetricsLog) {
        let (base_slot, base_v, base_p) = self
            .slots
            .last()
            .map_or((0, 0, 0), |r| (r.slot + 1, r.cum_veh_queue, r.cum_ped_queue));
        self.slots.extend(other.slots.iter().map(|r| SlotRecord {
            slot: base_slot + r.slot,
            cum_veh_queue: base_v + r.cum_veh_queue,
            cum_ped_queue: base_p + r.cum_ped_queue,
            ..*r
        }));
        self.trips.extend(other.trips.iter().cloned());
        self.peds.extend(other.peds.iter().cloned());
    }
}

/// Record the state after a completed slot, draining finished trips.
pub fn record_slot(log: &mut MetricsLog, state: &mut SimState, training: bool) {
    let veh_queue = state.vehicles_queued();
    let ped_queue = state.peds_waiting();
    let (cv, cp) = log.slots.last().map_or((0, 0), |r| (r.cum_veh_queue, r.cum_ped_queue));
    log.slots.push(SlotRecord {
        slot: state.clock - 1,
        veh_queue,
        ped_queue,
        cum_veh_queue: cv + veh_queue,
        cum_ped_queue: cp + ped_queue,
        training,
    });
    let (trips, peds) = state.take_completions();
    log.trips.extend(trips.into_iter().map(|t| (t, training)));
    log.peds.extend(peds.into_iter().map(|p| (p, training)));
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub controller: String,
    pub seed: u64,
    pub mean_veh_wait: f64,
    pub mean_ped_wait: f64,
    pub mean_travel: f64,
    pub total_stops: u64,
    pub completed_trips: u64,
    pub completed_peds: u64,
    pub mean_veh_queue: f64,
    pub mean_ped_queue: f64,
    pub slots: u64,
}

impl Summary {
    pub fn mean_combined_queue(&self) -> f64 {
        self.mean_veh_queue + self.mean_ped_queue
    }
}

fn mean(total: u64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

/// Summary over the evaluation window (records not flagged as training).
pub fn summarize(log: &MetricsLog) -> Result<Summary, MetricsError> {
    let slots: Vec<&SlotRecord> = log.slots.iter().filter(|r| !r.training).collect();
    if slots.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let trips: Vec<&TripRecord> = log.trips.iter().filter(|(_, t)| !t).map(|(r, _)| r).collect();
    let peds: Vec<&PedRecord> = log.peds.iter().filter(|(_, t)| !t).map(|(r, _)| r).collect();
    let n_trips = trips.len() as u64;
    let n_peds = peds.len() as u64;
    let n_slots = slots.len() as u64;
    Ok(Summary {
        controller: log.controller.clone(),
        seed: log.seed,
        mean_veh_wait: mean(trips.iter().map(|t| t.wait_slots).sum(), n_trips),
        mean_ped_wait: mean(peds.iter().map(|p| p.wait_slots).sum(), n_peds),
        mean_travel: mean(trips.iter().map(|t| t.travel_time()).sum(), n_trips),
        total_stops: trips.iter().map(|t| u64::from(t.stop_count)).sum(),
        completed_trips: n_trips,
        completed_peds: n_peds,
        mean_veh_queue: mean(slots.iter().map(|r| r.veh_queue).sum(), n_slots),
        mean_ped_queue: mean(slots.iter().map(|r| r.ped_queue).sum(), n_slots),
        slots: n_slots,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn slots_csv(log: &MetricsLog) -> Result<String, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["slot", "veh_queue", "ped_queue", "cum_veh_queue", "cum_ped_queue"])?;
    for r in &log.slots {
        w.write_record([
            r.slot.to_string(),
            r.veh_queue.to_string(),
            r.ped_queue.to_string(),
            r.cum_veh_queue.to_string(),
            r.cum_ped_queue.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is utf-8"))
}

/// Summary table; `deltas` adds percentage columns relative to the first row.
pub fn summary_csv(rows: &[Summary], deltas: bool) -> Result<String, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "controller",
        "seed",
        "mean_veh_wait",
        "mean_ped_wait",
        "mean_travel",
        "total_stops",
        "completed_trips",
        "completed_peds",
        "mean_veh_queue",
        "mean_ped_queue",
    ];
    if deltas {
        header.extend(["delta_veh_wait_pct", "delta_ped_wait_pct", "delta_travel_pct"]);
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.controller.clone(),
            r.seed.to_string(),
            format!("{:.4}", r.mean_veh_wait),
            format!("{:.4}", r.mean_ped_wait),
            format!("{:.4}", r.mean_travel),
            r.total_stops.to_string(),
            r.completed_trips.to_string(),
            r.completed_peds.to_string(),
            format!("{:.4}", r.mean_veh_queue),
            format!("{:.4}", r.mean_ped_queue),
        ];
        if deltas {
            let base = &rows[0];
            for (v, b) in [
                (r.mean_veh_wait, base.mean_veh_wait),
                (r.mean_ped_wait, base.mean_ped_wait),
                (r.mean_travel, base.mean_travel),
            ] {
                rec.push(format!("{:.2}", pct_delta(v, b)));
            }
        }
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is utf-8"))
}

/// Percentage change of `v` against `base`; zero when the base is zero.
pub fn pct_delta(v: f64, base: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        100.0 * (v - base) / base
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line plot of cumulative vehicle plus pedestrian queue per controller.
pub fn cumulative_svg(logs: &[MetricsLog]) -> String {
    let (w, h, pad) = (800.0, 400.0, 50.0);
    let max_x = logs.iter().filter_map(|l| l.slots.last()).map(|r| r.slot).max().unwrap_or(0).max(1) as f64;
    let max_y = logs
        .iter()
        .filter_map(|l| l.slots.last())
        .map(|r| r.cum_veh_queue + r.cum_ped_queue)
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {pad} V{y0} H{x1}" fill="none" stroke="black"/>"#,
        y0 = h - pad,
        x1 = w - pad
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">slot</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(svg, r#"<text x="15" y="{}" font-size="12" transform="rotate(-90 15 {})" text-anchor="middle">cumulative queue</text>"#, h / 2.0, h / 2.0);
    let _ = writeln!(svg, r#"<text x="{pad}" y="{}" font-size="10">{max_y:.0}</text>"#, pad - 5.0);
    for (k, log) in logs.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let step = (log.slots.len() / 1000).max(1);
        let mut pts = String::new();
        for (j, r) in log.slots.iter().enumerate() {
            if j % step != 0 && j + 1 != log.slots.len() {
                continue;
            }
            let x = pad + (w - 2.0 * pad) * r.slot as f64 / max_x;
            let y = h - pad - (h - 2.0 * pad) * (r.cum_veh_queue + r.cum_ped_queue) as f64 / max_y;
            let _ = write!(pts, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.trim_end());
        let ly = pad + 15.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-size="12" fill="{color}">{}</text>"#,
            pad + 10.0,
            log.controller
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write `<prefix>_<controller>_slots.csv` per log, `<prefix>_summary.csv`
/// and `<prefix>_cumulative.svg`. Returns the written paths.
pub fn write_outputs(logs: &[MetricsLog], prefix: &str, deltas: bool) -> Result<Vec<PathBuf>, MetricsError> {
    let mut written = Vec::new();
    let mut put = |path: PathBuf, body: String| -> Result<(), MetricsError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(&path, body).map_err(io_err(&path))?;
        written.push(path);
        Ok(())
    };
    let mut rows = Vec::new();
    for log in logs {
        put(PathBuf::from(format!("{prefix}_{}_slots.csv", log.controller)), slots_csv(log)?)?;
        rows.push(summarize(log)?);
    }
    put(PathBuf::from(format!("{prefix}_summary.csv")), summary_csv(&rows, deltas)?)?;
    put(PathBuf::from(format!("{prefix}_cumulative.svg")), cumulative_svg(logs))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_with(queues: &[(u64, u64)], training_until: u64) -> MetricsLog {
        let mut log = MetricsLog::new("fixed", 1, "h");
        let (mut cv, mut cp) = (0, 0);
        for (s, &(v, p)) in queues.iter().enumerate() {
            cv += v;
            cp += p;
            log.slots.push(SlotRecord {
                slot: s as u64,
                veh_queue: v,
                ped_queue: p,
                cum_veh_queue: cv,
                cum_ped_queue: cp,
                training: (s as u64) < training_until,
            });
        }
        log
    }

    fn trip(entry: u64, exit: u64, wait: u64) -> TripRecord {
        TripRecord {
            entry_slot: entry,
            exit_slot: exit,
            free_flow: exit - entry - wait,
            wait_slots: wait,
            stop_count: u32::from(wait > 0),
        }
    }

    #[test]
    fn summary_means() {
        let mut log = log_with(&[(2, 0), (4, 2), (0, 1)], 0);
        log.trips.push((trip(0, 10, 2), false));
        log.trips.push((trip(0, 14, 6), false));
        log.peds.push((PedRecord { arrival_slot: 0, done_slot: 20, wait_slots: 7 }, false));
        let s = summarize(&log).unwrap();
        assert_eq!(s.mean_veh_wait, 4.0);
        assert_eq!(s.mean_travel, 12.0);
        assert_eq!(s.total_stops, 2);
        assert_eq!(s.mean_ped_wait, 7.0);
        assert_eq!(s.mean_veh_queue, 2.0);
        assert_eq!(s.mean_ped_queue, 1.0);
    }

    #[test]
    fn summary_skips_training_and_rejects_empty() {
        let mut log = log_with(&[(100, 0), (2, 0)], 1);
        log.trips.push((trip(0, 100, 90), true));
        log.trips.push((trip(0, 10, 0), false));
        let s = summarize(&log).unwrap();
        assert_eq!(s.mean_veh_queue, 2.0);
        assert_eq!(s.completed_trips, 1);
        let empty = MetricsLog::new("x", 0, "");
        assert!(matches!(summarize(&empty), Err(MetricsError::EmptyLog)));
        assert!(matches!(summarize(&log_with(&[(1, 1)], 5)), Err(MetricsError::EmptyLog)));
    }

    #[test]
    fn concat_of_identical_runs_has_same_summary() {
        let mut log = log_with(&[(3, 1), (5, 0), (1, 2)], 0);
        log.trips.push((trip(0, 9, 3), false));
        let mut twice = log.clone();
        twice.concat(&log);
        assert_eq!(twice.slots.last().unwrap().cum_veh_queue, 18);
        let (a, b) = (summarize(&twice).unwrap(), summarize(&log).unwrap());
        assert_eq!(
            (a.mean_veh_wait, a.mean_ped_wait, a.mean_travel, a.mean_veh_queue, a.mean_ped_queue),
            (b.mean_veh_wait, b.mean_ped_wait, b.mean_travel, b.mean_veh_queue, b.mean_ped_queue)
        );
        assert_eq!(a.completed_trips, 2 * b.completed_trips);
    }

    #[test]
    fn csv_formats() {
        let log = log_with(&[(1, 0), (2, 3)], 0);
        let text = slots_csv(&log).unwrap();
        assert_eq!(text, "slot,veh_queue,ped_queue,cum_veh_queue,cum_ped_queue\n0,1,0,1,0\n1,2,3,3,3\n");
        let s = summarize(&log).unwrap();
        let mut other = s.clone();
        other.controller = "dynamic".into();
        other.mean_veh_queue = 3.0;
        other.mean_veh_wait = 0.0;
        let table = summary_csv(&[s, other], true).unwrap();
        let last = table.lines().last().unwrap();
        assert!(last.starts_with("dynamic,1,"), "{last}");
        assert!(last.ends_with(",0.00,0.00,0.00"), "{last}");
    }

    #[test]
    fn svg_has_a_line_per_controller() {
        let a = log_with(&[(1, 0), (2, 3)], 0);
        let mut b = a.clone();
        b.controller = "dynamic".into();
        let svg = cumulative_svg(&[a, b]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn pct_delta_zero_base() {
        assert_eq!(pct_delta(5.0, 0.0), 0.0);
        assert_eq!(pct_delta(75.0, 100.0), -25.0);
    }
}
