//! Forecast quality metrics: per-satellite, per-axis position RMSE over
//! all evaluated windows, total-RMSE-over-horizon curves, and the
//! two-run comparison table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::{LossConfig, PredictionBatch};
use crate::model::TrainedModel;
use crate::scenario::ScenarioTrajectory;
use crate::train::{rollout_trajectory, RolloutOptions, TrajectoryTensors};
use crate::Mat;

/// LVLH axis names: x radial, y in-track, z cross-track.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    Radial,
    InTrack,
    CrossTrack,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Radial, Axis::InTrack, Axis::CrossTrack];

    /// Column index in a position matrix.
    pub fn column(self) -> usize {
        match self {
            Axis::Radial => 0,
            Axis::InTrack => 1,
            Axis::CrossTrack => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::Radial => "radial",
            Axis::InTrack => "in_track",
            Axis::CrossTrack => "cross_track",
        }
    }

    pub fn from_label(label: &str) -> Result<Axis> {
        match label {
            "radial" => Ok(Axis::Radial),
            "in_track" => Ok(Axis::InTrack),
            "cross_track" => Ok(Axis::CrossTrack),
            other => Err(Error::Contract(format!("unknown axis label {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AxisRmse {
    pub satellite: usize,
    pub axis: Axis,
    pub rmse_km: f64,
}

/// Per-horizon-step position RMSE pooled over windows, agents and axes.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonCurve {
    pub rmse_km: Vec<f64>,
}

impl HorizonCurve {
    /// Mean slope across the final two steps (paper's "end of horizon"
    /// steepness measure).
    pub fn tail_slope(&self) -> f64 {
        let n = self.rmse_km.len();
        if n < 3 {
            return 0.0;
        }
        ((self.rmse_km[n - 1] - self.rmse_km[n - 2])
            + (self.rmse_km[n - 2] - self.rmse_km[n - 3]))
            / 2.0
    }
}

/// Squared-residual accumulator keyed by satellite and axis.
#[derive(Default)]
pub struct RmseAccumulator {
    by_sat_axis: BTreeMap<(usize, Axis), (f64, usize)>,
    by_step: Vec<(f64, usize)>,
}

impl RmseAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one window's predicted and true positions
    /// (`[horizon]` matrices of N x 3).
    pub fn add_window(&mut self, predicted: &[Mat], truth: &[Mat]) -> Result<()> {
        if predicted.len() != truth.len() {
            return Err(Error::Contract(format!(
                "window has {} predicted steps but {} truth steps",
                predicted.len(),
                truth.len()
            )));
        }
        if self.by_step.len() < predicted.len() {
            self.by_step.resize(predicted.len(), (0.0, 0));
        }
        for (k, (pred, exact)) in predicted.iter().zip(truth.iter()).enumerate() {
            if pred.shape() != exact.shape() || pred.cols() != 3 {
                return Err(Error::dimension("rmse_window", pred.shape(), exact.shape()));
            }
            for sat in 0..pred.rows() {
                for axis in Axis::ALL {
                    let d = pred.at(sat, axis.column()) - exact.at(sat, axis.column());
                    let entry = self.by_sat_axis.entry((sat, axis)).or_insert((0.0, 0));
                    entry.0 += d * d;
                    entry.1 += 1;
                    let step = &mut self.by_step[k];
                    step.0 += d * d;
                    step.1 += 1;
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.by_sat_axis.is_empty()
    }

    pub fn axis_rmse(&self) -> Result<Vec<AxisRmse>> {
        if self.by_sat_axis.is_empty() {
            return Err(Error::Contract("no windows accumulated".into()));
        }
        Ok(self
            .by_sat_axis
            .iter()
            .map(|(&(satellite, axis), &(sum, count))| AxisRmse {
                satellite,
                axis,
                rmse_km: (sum / count as f64).sqrt(),
            })
            .collect())
    }

    pub fn horizon_curve(&self) -> Result<HorizonCurve> {
        if self.by_step.is_empty() {
            return Err(Error::Contract("no windows accumulated".into()));
        }
        Ok(HorizonCurve {
            rmse_km: self
                .by_step
                .iter()
                .map(|&(sum, count)| (sum / count.max(1) as f64).sqrt())
                .collect(),
        })
    }
}

/// Per-satellite, per-axis RMSE over aligned window collections.
pub fn rmse_per_axis(predicted: &[Vec<Mat>], truth: &[Vec<Mat>]) -> Result<Vec<AxisRmse>> {
    let mut acc = RmseAccumulator::new();
    for (p, t) in predicted.iter().zip(truth.iter()) {
        acc.add_window(p, t)?;
    }
    acc.axis_rmse()
}

/// Per-step RMSE pooled over windows, agents and axes.
pub fn horizon_curve(predicted: &[Vec<Mat>], truth: &[Vec<Mat>]) -> Result<HorizonCurve> {
    let mut acc = RmseAccumulator::new();
    for (p, t) in predicted.iter().zip(truth.iter()) {
        acc.add_window(p, t)?;
    }
    acc.horizon_curve()
}

/// Full evaluation artifact of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub label: String,
    pub axis_rmse: Vec<AxisRmse>,
    pub curve: HorizonCurve,
    pub mean_loss: f64,
}

/// Evaluate a trained model over a set of trajectories (ground-truth
/// history by default; `autoregressive` switches to prediction-fed
/// rollouts for long-horizon studies).
pub fn evaluate_model(
    model: &TrainedModel,
    trajectories: &[ScenarioTrajectory],
    loss_config: &LossConfig,
    label: &str,
    autoregressive: bool,
) -> Result<RunMetrics> {
    if trajectories.is_empty() {
        return Err(Error::Contract("evaluation needs at least one trajectory".into()));
    }
    let mut acc = RmseAccumulator::new();
    let mut loss_sum = 0.0;
    for traj in trajectories {
        let tensors = TrajectoryTensors::build(traj, &model.standardizer)?;
        let opts = RolloutOptions {
            autoregressive,
            ..RolloutOptions::evaluation(loss_config.lambda_phys_max, loss_config)
        };
        let outcome = rollout_trajectory(&tensors, &model.params, &opts)?;
        loss_sum += outcome.loss;
        let horizon = model.params.config.horizon;
        let history = model.params.config.history_length;
        for (w, batch) in outcome.predictions.expect("collected").iter().enumerate() {
            let truth: Vec<Mat> = (0..horizon)
                .map(|k| tensors.pos_mats[w + history + k].clone())
                .collect();
            acc.add_window(&batch.positions, &truth)?;
        }
    }
    Ok(RunMetrics {
        label: label.to_string(),
        axis_rmse: acc.axis_rmse()?,
        curve: acc.horizon_curve()?,
        mean_loss: loss_sum / trajectories.len() as f64,
    })
}

fn fmt_float(x: f64) -> String {
    // Shortest representation that round-trips.
    format!("{x}")
}

/// metrics.csv: one row per satellite and axis.
pub fn metrics_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from("satellite,axis,rmse_km,run_label\n");
    for row in &metrics.axis_rmse {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.satellite,
            row.axis.label(),
            fmt_float(row.rmse_km),
            metrics.label
        );
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<RunMetrics> {
    let mut rows = Vec::new();
    let mut label = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "satellite,axis,rmse_km,run_label" {
                return Err(Error::Contract(format!("unexpected metrics header: {line}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Contract(format!("bad metrics row: {line}")));
        }
        let satellite = parts[0]
            .parse::<usize>()
            .map_err(|e| Error::Contract(format!("bad satellite id {}: {e}", parts[0])))?;
        let axis = Axis::from_label(parts[1])?;
        let rmse_km = parts[2]
            .parse::<f64>()
            .map_err(|e| Error::Contract(format!("bad rmse {}: {e}", parts[2])))?;
        label = parts[3].to_string();
        rows.push(AxisRmse {
            satellite,
            axis,
            rmse_km,
        });
    }
    if rows.is_empty() {
        return Err(Error::Contract("metrics csv has no rows".into()));
    }
    Ok(RunMetrics {
        label,
        axis_rmse: rows,
        curve: HorizonCurve { rmse_km: Vec::new() },
        mean_loss: f64::NAN,
    })
}

/// curve.csv: per-horizon-step pooled RMSE.
pub fn curve_csv(curve: &HorizonCurve) -> String {
    let mut out = String::from("step,rmse_km\n");
    for (k, v) in curve.rmse_km.iter().enumerate() {
        let _ = writeln!(out, "{},{}", k + 1, fmt_float(*v));
    }
    out
}

/// Side-by-side per-satellite, per-axis table of two runs, 4 decimals.
/// Returns the rendered table; `comparison_csv` carries full precision.
pub fn comparison_table(a: &RunMetrics, b: &RunMetrics) -> Result<String> {
    let keys_a: Vec<(usize, Axis)> = a.axis_rmse.iter().map(|r| (r.satellite, r.axis)).collect();
    let keys_b: Vec<(usize, Axis)> = b.axis_rmse.iter().map(|r| (r.satellite, r.axis)).collect();
    if keys_a != keys_b {
        return Err(Error::Contract(
            "comparison requires identical satellite/axis sets in both runs".into(),
        ));
    }

    let axis_name = |axis: Axis| match axis {
        Axis::Radial => "Radial",
        Axis::InTrack => "In track",
        Axis::CrossTrack => "Cross track",
    };
    let col_a = format!("RMSE ({}) [km]", a.label);
    let col_b = format!("RMSE ({}) [km]", b.label);
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:<12} {:<24} {:<24}", "Satellite", "Axis", col_a, col_b);
    for (ra, rb) in a.axis_rmse.iter().zip(b.axis_rmse.iter()) {
        let _ = writeln!(
            out,
            "{:<10} {:<12} {:<24.4} {:<24.4}",
            format!("Sat {}", ra.satellite + 1),
            axis_name(ra.axis),
            ra.rmse_km,
            rb.rmse_km
        );
    }
    Ok(out)
}

/// Machine-readable companion of [`comparison_table`].
pub fn comparison_csv(a: &RunMetrics, b: &RunMetrics) -> Result<String> {
    let keys_a: Vec<(usize, Axis)> = a.axis_rmse.iter().map(|r| (r.satellite, r.axis)).collect();
    let keys_b: Vec<(usize, Axis)> = b.axis_rmse.iter().map(|r| (r.satellite, r.axis)).collect();
    if keys_a != keys_b {
        return Err(Error::Contract(
            "comparison requires identical satellite/axis sets in both runs".into(),
        ));
    }
    let mut out = format!("satellite,axis,rmse_{}_km,rmse_{}_km\n", a.label, b.label);
    for (ra, rb) in a.axis_rmse.iter().zip(b.axis_rmse.iter()) {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            ra.satellite,
            ra.axis.label(),
            fmt_float(ra.rmse_km),
            fmt_float(rb.rmse_km)
        );
    }
    Ok(out)
}

/// Truth-versus-prediction series and the horizon curve for one
/// trajectory, written as SVGs plus CSV dumps. Predictions tile the
/// timeline using windows at horizon stride. Returns the file names.
pub fn emit_plots(
    traj: &ScenarioTrajectory,
    model: &TrainedModel,
    loss_config: &LossConfig,
    out_dir: &Path,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let tensors = TrajectoryTensors::build(traj, &model.standardizer)?;
    let opts = RolloutOptions::evaluation(loss_config.lambda_phys_max, loss_config);
    let outcome = rollout_trajectory(&tensors, &model.params, &opts)?;
    let batches = outcome.predictions.expect("collected");

    let history = model.params.config.history_length;
    let horizon = model.params.config.horizon;
    let steps = traj.step_count();
    let agents = traj.agent_count();
    let dt = traj.dt;

    // Tile the timeline: windows 0, horizon, 2*horizon, ...
    let mut tiled: Vec<Option<&PredictionBatch<f64>>> = Vec::new();
    let mut predicted_at: Vec<Option<(usize, usize)>> = vec![None; steps];
    let mut w = 0;
    while w < batches.len() {
        tiled.push(Some(&batches[w]));
        for k in 0..horizon {
            let t = w + history + k;
            if t < steps {
                predicted_at[t] = Some((w, k));
            }
        }
        w += horizon;
    }

    let mut files = Vec::new();
    let axis_titles = ["radial [km]", "in-track [km]", "cross-track [km]"];
    for sat in 0..agents {
        let mut csv = String::from("t_s,truth_x,truth_y,truth_z,pred_x,pred_y,pred_z\n");
        let mut truth_series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 3];
        let mut pred_series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 3];
        for t in 0..steps {
            let time = t as f64 * dt;
            let s = traj.states[t][sat];
            let p = s.position();
            for axis in 0..3 {
                truth_series[axis].push((time, p[axis]));
            }
            let pred = predicted_at[t].map(|(w, k)| {
                let batch = &batches[w];
                [
                    batch.positions[k].at(sat, 0),
                    batch.positions[k].at(sat, 1),
                    batch.positions[k].at(sat, 2),
                ]
            });
            match pred {
                Some(q) => {
                    for axis in 0..3 {
                        pred_series[axis].push((time, q[axis]));
                    }
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},{}",
                        fmt_float(time),
                        fmt_float(p[0]),
                        fmt_float(p[1]),
                        fmt_float(p[2]),
                        fmt_float(q[0]),
                        fmt_float(q[1]),
                        fmt_float(q[2])
                    );
                }
                None => {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},,,",
                        fmt_float(time),
                        fmt_float(p[0]),
                        fmt_float(p[1]),
                        fmt_float(p[2])
                    );
                }
            }
        }

        let panels: Vec<crate::plot::Panel> = (0..3)
            .map(|axis| crate::plot::Panel {
                title: axis_titles[axis].to_string(),
                series: vec![
                    crate::plot::Series {
                        label: "truth".into(),
                        color: "#1f77b4",
                        points: truth_series[axis].clone(),
                    },
                    crate::plot::Series {
                        label: "prediction".into(),
                        color: "#d62728",
                        points: pred_series[axis].clone(),
                    },
                ],
            })
            .collect();
        let svg = crate::plot::panel_chart(
            &format!("Satellite {} position: truth vs prediction", sat + 1),
            "time [s]",
            &panels,
        );
        let svg_name = format!("sat{}_comparison.svg", sat + 1);
        let csv_name = format!("sat{}_comparison.csv", sat + 1);
        std::fs::write(out_dir.join(&svg_name), svg)
            .map_err(|e| Error::io(out_dir.join(&svg_name), e))?;
        std::fs::write(out_dir.join(&csv_name), csv)
            .map_err(|e| Error::io(out_dir.join(&csv_name), e))?;
        files.push(svg_name);
        files.push(csv_name);
    }

    // Pooled horizon curve for this trajectory.
    let mut acc = RmseAccumulator::new();
    for (w, batch) in batches.iter().enumerate() {
        let truth: Vec<Mat> = (0..horizon)
            .map(|k| tensors.pos_mats[w + history + k].clone())
            .collect();
        acc.add_window(&batch.positions, &truth)?;
    }
    let curve = acc.horizon_curve()?;
    let points: Vec<(f64, f64)> = curve
        .rmse_km
        .iter()
        .enumerate()
        .map(|(k, &v)| ((k + 1) as f64, v))
        .collect();
    let svg = crate::plot::panel_chart(
        "Total position RMSE over the prediction horizon",
        "horizon step",
        &[crate::plot::Panel {
            title: "RMSE [km]".into(),
            series: vec![crate::plot::Series {
                label: "rmse".into(),
                color: "#2ca02c",
                points,
            }],
        }],
    );
    std::fs::write(out_dir.join("horizon_rmse.svg"), svg)
        .map_err(|e| Error::io(out_dir.join("horizon_rmse.svg"), e))?;
    std::fs::write(out_dir.join("horizon_rmse.csv"), curve_csv(&curve))
        .map_err(|e| Error::io(out_dir.join("horizon_rmse.csv"), e))?;
    files.push("horizon_rmse.svg".into());
    files.push("horizon_rmse.csv".into());
    Ok(files)
}
