//! Network requirement search.
//!
//! Evaluates remoting cost over a grid of (RTT, bandwidth) configurations,
//! marks which stay inside an overhead budget and extracts the loosest
//! satisfying configurations: largest RTT, smallest bandwidth.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::{total_cost, NetworkConfig};
use crate::trace::Trace;
use crate::{bytes_per_us_to_gbps, gbps_to_bytes_per_us};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("invalid budget: {0}")]
    Budget(String),
    #[error("invalid grid: {0}")]
    Grid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub epsilon_fraction: f64,
    pub baseline_us: f64,
}

impl Budget {
    pub fn new(epsilon_fraction: f64, baseline_us: f64) -> Result<Self, SolverError> {
        if !(epsilon_fraction > 0.0 && epsilon_fraction <= 1.0) {
            return Err(SolverError::Budget(format!(
                "epsilon must be in (0, 1], got {epsilon_fraction}"
            )));
        }
        if !(baseline_us > 0.0) || !baseline_us.is_finite() {
            return Err(SolverError::Budget(format!(
                "baseline must be positive, got {baseline_us}"
            )));
        }
        Ok(Budget {
            epsilon_fraction,
            baseline_us,
        })
    }

    pub fn epsilon_us(&self) -> f64 {
        self.epsilon_fraction * self.baseline_us
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    rtts_us: Vec<f64>,
    /// Bytes per microsecond.
    bandwidths: Vec<f64>,
}

impl Grid {
    pub fn new(rtts_us: Vec<f64>, bandwidths: Vec<f64>) -> Result<Self, SolverError> {
        check_axis("rtt", &rtts_us, |v| v >= 0.0)?;
        check_axis("bandwidth", &bandwidths, |v| v > 0.0)?;
        Ok(Grid { rtts_us, bandwidths })
    }

    pub fn from_gbps(rtts_us: Vec<f64>, gbps: Vec<f64>) -> Result<Self, SolverError> {
        Self::new(rtts_us, gbps.into_iter().map(gbps_to_bytes_per_us).collect())
    }

    /// RTT {1, 5, 10, 20, 50, 100} us by {1, 10, 40, 100, 200} Gbps.
    pub fn standard() -> Self {
        Self::from_gbps(
            vec![1.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            vec![1.0, 10.0, 40.0, 100.0, 200.0],
        )
        .expect("standard grid is valid")
    }

    /// Parses `rtt=1,5,10;gbps=1,10,40`.
    pub fn parse(spec: &str) -> Result<Self, SolverError> {
        let mut rtts = None;
        let mut gbps = None;
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| SolverError::Grid(format!("expected key=values, got {part:?}")))?;
            let values = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| SolverError::Grid(format!("{key}: {e}")))?;
            match key.trim() {
                "rtt" => rtts = Some(values),
                "gbps" => gbps = Some(values),
                other => return Err(SolverError::Grid(format!("unknown axis {other:?}"))),
            }
        }
        match (rtts, gbps) {
            (Some(r), Some(g)) => Self::from_gbps(r, g),
            _ => Err(SolverError::Grid("both rtt= and gbps= are required".into())),
        }
    }

    pub fn rtts_us(&self) -> &[f64] {
        &self.rtts_us
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn bandwidths_gbps(&self) -> Vec<f64> {
        self.bandwidths.iter().map(|&b| bytes_per_us_to_gbps(b)).collect()
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        (0..self.rtts_us.len())
            .flat_map(|i| (0..self.bandwidths.len()).map(move |j| (i, j)))
            .collect()
    }
}

fn check_axis(name: &str, values: &[f64], ok: impl Fn(f64) -> bool) -> Result<(), SolverError> {
    if values.is_empty() {
        return Err(SolverError::Grid(format!("{name} axis is empty")));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite() || !ok(**v)) {
        return Err(SolverError::Grid(format!("{name} value {v} out of range")));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SolverError::Grid(format!("{name} axis must be strictly increasing")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub rtt_us: f64,
    pub bandwidth_gbps: f64,
    pub total_cost_us: f64,
    pub degradation: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementFrontier {
    pub budget: Budget,
    /// Every grid point, RTT-major in grid order.
    pub points: Vec<GridPoint>,
    /// Satisfying points not dominated by a looser satisfying point.
    pub pareto: Vec<GridPoint>,
    pub diagnostic: Option<String>,
}

impl RequirementFrontier {
    pub fn point(&self, rtt_us: f64, bandwidth_gbps: f64) -> Option<&GridPoint> {
        self.points
            .iter()
            .find(|p| p.rtt_us == rtt_us && p.bandwidth_gbps == bandwidth_gbps)
    }

    pub fn satisfies(&self, rtt_us: f64, bandwidth_gbps: f64) -> bool {
        self.point(rtt_us, bandwidth_gbps).is_some_and(|p| p.satisfied)
    }
}

/// Frontier over an arbitrary cost function `cost(rtt_us, bandwidth)`.
pub fn derive_requirements_with<F>(grid: &Grid, budget: Budget, cost: F) -> RequirementFrontier
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    let eps = budget.epsilon_us();
    let points: Vec<GridPoint> = grid
        .cells()
        .par_iter()
        .map(|&(i, j)| {
            let (rtt, bw) = (grid.rtts_us[i], grid.bandwidths[j]);
            let c = cost(rtt, bw);
            GridPoint {
                rtt_us: rtt,
                bandwidth_gbps: bytes_per_us_to_gbps(bw),
                total_cost_us: c,
                degradation: c / budget.baseline_us,
                satisfied: c <= eps,
            }
        })
        .collect();
    let pareto: Vec<GridPoint> = points
        .iter()
        .filter(|p| p.satisfied)
        .filter(|p| {
            !points.iter().any(|q| {
                q.satisfied
                    && q.rtt_us >= p.rtt_us
                    && q.bandwidth_gbps <= p.bandwidth_gbps
                    && (q.rtt_us > p.rtt_us || q.bandwidth_gbps < p.bandwidth_gbps)
            })
        })
        .copied()
        .collect();
    let diagnostic = pareto.is_empty().then(|| {
        let best = points
            .iter()
            .map(|p| p.total_cost_us)
            .fold(f64::INFINITY, f64::min);
        format!(
            "no grid point meets the budget of {:.3} us; the cheapest costs {:.3} us ({:.2}% of baseline)",
            eps,
            best,
            100.0 * best / budget.baseline_us
        )
    });
    RequirementFrontier {
        budget,
        points,
        pareto,
        diagnostic,
    }
}

/// Prices `trace` at every grid point with the start overhead of `base`.
pub fn derive_requirements(
    trace: &Trace,
    base: &NetworkConfig,
    budget: Budget,
    grid: &Grid,
) -> RequirementFrontier {
    derive_requirements_with(grid, budget, |rtt, bw| {
        let net = NetworkConfig {
            rtt_us: rtt,
            bandwidth: bw,
            start: base.start.clone(),
        };
        total_cost(trace, &net).total_cost
    })
}

/// d(total cost)/d(RTT): half an RTT per async call, a full one per sync.
pub fn rtt_slope(trace: &Trace) -> f64 {
    let [n_async, n_sync, _] = trace.class_counts();
    n_async as f64 / 2.0 + n_sync as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest |residual| divided by the largest |sample|.
    pub max_relative_residual: f64,
}

/// Least-squares line through `(x, y)` samples.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "a line needs two samples");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let scale = ys.iter().map(|y| y.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let worst = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (intercept + slope * x)).abs())
        .fold(0.0, f64::max);
    LinearFit {
        slope,
        intercept,
        max_relative_residual: worst / scale,
    }
}

/// Samples total cost at `rtts_us` with bandwidth fixed and fits a line.
pub fn rtt_fit(trace: &Trace, base: &NetworkConfig, rtts_us: &[f64]) -> LinearFit {
    let ys: Vec<f64> = rtts_us
        .iter()
        .map(|&r| total_cost(trace, &base.with_rtt(r)).total_cost)
        .collect();
    fit_line(rtts_us, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub rtts_us: Vec<f64>,
    pub bandwidths_gbps: Vec<f64>,
    /// `cells[i][j]`: degradation at `rtts_us[i]`, `bandwidths_gbps[j]`.
    pub cells: Vec<Vec<f64>>,
}

pub fn sweep(trace: &Trace, base: &NetworkConfig, grid: &Grid, baseline_us: f64) -> Sweep {
    let flat: Vec<f64> = grid
        .cells()
        .par_iter()
        .map(|&(i, j)| {
            let net = NetworkConfig {
                rtt_us: grid.rtts_us[i],
                bandwidth: grid.bandwidths[j],
                start: base.start.clone(),
            };
            total_cost(trace, &net).total_cost / baseline_us
        })
        .collect();
    let cols = grid.bandwidths.len();
    Sweep {
        rtts_us: grid.rtts_us.clone(),
        bandwidths_gbps: grid.bandwidths_gbps(),
        cells: flat.chunks(cols).map(<[f64]>::to_vec).collect(),
    }
}

impl Sweep {
    /// Header row of bandwidths (Gbps), one row per RTT.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["rtt_us".to_string()];
        header.extend(self.bandwidths_gbps.iter().map(|b| b.to_string()));
        w.write_record(&header)?;
        for (rtt, row) in self.rtts_us.iter().zip(&self.cells) {
            let mut rec = vec![rtt.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{ApiCall, ApiClass, TraceMeta};

    fn small() -> Trace {
        let mut calls: Vec<_> = (0..4)
            .map(|_| ApiCall::new("LaunchKernel", ApiClass::Async).with_payload(1000, 0).with_exec(1.0, 0.0))
            .collect();
        calls.push(ApiCall::new("MemcpyD2H", ApiClass::Sync).with_payload(0, 4000));
        calls.push(ApiCall::new("MemcpyD2H", ApiClass::Sync));
        Trace::from_calls(calls, TraceMeta::default()).unwrap()
    }

    #[test]
    fn slope_examples() {
        assert_eq!(rtt_slope(&small()), 4.0);
        assert_eq!(rtt_slope(&Trace::empty()), 0.0);
    }

    #[test]
    fn fit_recovers_slope() {
        let base = NetworkConfig::from_gbps(1.0, 10.0, 0.5).unwrap();
        let fit = rtt_fit(&small(), &base, &[1.0, 5.0, 10.0, 50.0]);
        assert!((fit.slope - 4.0).abs() < 1e-12);
        assert!(fit.max_relative_residual < 1e-12);
    }

    #[test]
    fn generous_budget_nonempty() {
        let base = NetworkConfig::ideal();
        let f = derive_requirements(&small(), &base, Budget::new(1.0, 1000.0).unwrap(), &Grid::standard());
        assert!(!f.pareto.is_empty());
        assert!(f.diagnostic.is_none());
    }

    #[test]
    fn tiny_budget_empty_with_diagnostic() {
        let base = NetworkConfig::ideal().with_start(crate::StartOverhead::constant(1.0));
        let f = derive_requirements(&small(), &base, Budget::new(1e-9, 1000.0).unwrap(), &Grid::standard());
        assert!(f.pareto.is_empty());
        assert!(f.diagnostic.unwrap().contains("no grid point"));
    }

    #[test]
    fn one_by_one_sweep_matches_degradation() {
        let base = NetworkConfig::ideal();
        let grid = Grid::from_gbps(vec![10.0], vec![40.0]).unwrap();
        let s = sweep(&small(), &base, &grid, 500.0);
        let net = NetworkConfig::from_gbps(10.0, 40.0, 0.0).unwrap();
        assert_eq!(s.cells, vec![vec![crate::cost_model::degradation(&small(), &net, 500.0).unwrap()]]);
    }

    #[test]
    fn grid_parse_and_validate() {
        let g = Grid::parse("rtt=1,5;gbps=10,200").unwrap();
        assert_eq!(g.rtts_us(), &[1.0, 5.0]);
        assert_eq!(g.bandwidths(), &[1250.0, 25000.0]);
        assert!(Grid::parse("rtt=5,1;gbps=1").is_err());
        assert!(Grid::parse("rtt=1").is_err());
        assert!(Grid::parse("rtt=1;gbps=0").is_err());
        assert!(Grid::parse("rtt=1;mbps=3").is_err());
    }

    #[test]
    fn budget_bounds() {
        assert!(Budget::new(0.0, 1.0).is_err());
        assert!(Budget::new(1.5, 1.0).is_err());
        assert!(Budget::new(0.05, 0.0).is_err());
        assert_eq!(Budget::new(0.05, 4300.0).unwrap().epsilon_us(), 0.05 * 4300.0);
    }

    #[test]
    fn sweep_csv_shape() {
        let s = sweep(&small(), &NetworkConfig::ideal(), &Grid::standard(), 100.0);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "rtt_us,1,10,40,100,200");
        assert!(lines[1].starts_with("1,"));
    }
}
