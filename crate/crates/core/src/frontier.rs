//! Return/risk frontier over the TBP threshold grid and the threshold lookup
//! used for management.
//!
//! Each grid threshold θ yields a TBP backtest. Over a trailing window of
//! months the mean and SD of its returns give one (risk, return) point. A
//! least-squares cubic `return = c0 + c1·risk + c2·risk² + c3·risk³` smooths
//! the points. Lookups invert the piecewise-linear path through the grid
//! points in θ order.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::{forecast, predict_month, ForecastError, ForecastPanel};
use crate::market_data::{Month, MonthlyFeaturePanel};
use crate::portfolio::{
    assign_weights, backtest, select_tbp, BacktestResult, PortfolioError, Selector, TbpConfig,
};
use crate::rnn::RnnModel;
use crate::stats;

#[derive(Debug, Error)]
pub enum FrontierError {
    #[error("frontier window must span at least 2 months (got {0})")]
    WindowTooShort(usize),
    #[error("window of {window} months does not fit in {available} backtest months")]
    WindowTooLong { window: usize, available: usize },
    #[error("backtests for different thresholds cover different months")]
    MisalignedBacktests,
    #[error("empty threshold grid")]
    EmptyGrid,
    #[error("cubic fit needs at least 4 distinct risk values (got {0})")]
    RankDeficient(usize),
    #[error("target {target} outside the frontier; nearest point θ={} ({}, {})", nearest.theta, nearest.risk, nearest.ret)]
    TargetOutOfRange { target: f64, nearest: FrontierPoint },
    #[error("target {target} is bracketed by {} frontier segments", candidates.len())]
    NonBracketable {
        target: f64,
        candidates: Vec<ThetaEstimate>,
    },
    #[error("frontiers are on different threshold grids")]
    GridMismatch,
    #[error("target must be finite")]
    InvalidTarget,
    #[error(transparent)]
    Portfolio(#[from] PortfolioError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

pub type Result<T> = std::result::Result<T, FrontierError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub theta: f64,
    /// Population SD of monthly returns over the window.
    pub risk: f64,
    /// Mean monthly return over the window.
    pub ret: f64,
    /// First and last holding months of the window.
    pub window_start: Month,
    pub window_end: Month,
}

/// Frontier over the `window` months ending just before backtest index `end`.
pub fn build_frontier_at(
    backtests: &[(f64, BacktestResult)],
    window: usize,
    end: usize,
) -> Result<Vec<FrontierPoint>> {
    if window < 2 {
        return Err(FrontierError::WindowTooShort(window));
    }
    let first = &backtests.first().ok_or(FrontierError::EmptyGrid)?.1;
    let months: Vec<Month> = first.snapshots.iter().map(|s| s.month).collect();
    if backtests.iter().any(|(_, b)| {
        b.returns.len() != months.len()
            || b.snapshots
                .iter()
                .map(|s| s.month)
                .ne(months.iter().copied())
    }) {
        return Err(FrontierError::MisalignedBacktests);
    }
    if end > months.len() || end < window {
        return Err(FrontierError::WindowTooLong {
            window,
            available: end.min(months.len()),
        });
    }
    let span = end - window..end;
    let mut points: Vec<FrontierPoint> = backtests
        .iter()
        .map(|(theta, b)| {
            let r = &b.returns[span.clone()];
            FrontierPoint {
                theta: *theta,
                risk: stats::population_std(r).expect("window >= 2"),
                ret: stats::mean(r).expect("window >= 2"),
                window_start: months[span.start].succ(),
                window_end: months[span.end - 1].succ(),
            }
        })
        .collect();
    points.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    Ok(points)
}

/// Frontier over the trailing `window` months of the backtests.
pub fn build_frontier(
    backtests: &[(f64, BacktestResult)],
    window: usize,
) -> Result<Vec<FrontierPoint>> {
    let len = backtests.first().map_or(0, |(_, b)| b.returns.len());
    build_frontier_at(backtests, window, len)
}

/// Cubic `y = c0 + c1 x + c2 x² + c3 x³` in raw (unscaled) x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicFit {
    pub coeffs: [f64; 4],
    pub residual_rms: f64,
    /// Range of the fitted x values.
    pub domain: (f64, f64),
}

impl CubicFit {
    pub fn eval(&self, x: f64) -> f64 {
        let [c0, c1, c2, c3] = self.coeffs;
        ((c3 * x + c2) * x + c1) * x + c0
    }

    pub fn rms_residual(&self, xs: &[f64], ys: &[f64]) -> f64 {
        let ss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| (y - self.eval(x)).powi(2))
            .sum();
        (ss / xs.len().max(1) as f64).sqrt()
    }
}

fn distinct_count(xs: &[f64]) -> usize {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted.len()
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pivot_row = a[col];
        for row in col + 1..4 {
            let f = a[row][col] / pivot_row[col];
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Least-squares cubic through `(xs, ys)`. The normal equations are solved in
/// a centred and scaled variable for conditioning, then mapped back.
pub fn fit_cubic_xy(xs: &[f64], ys: &[f64]) -> Result<CubicFit> {
    assert_eq!(xs.len(), ys.len(), "x and y lengths differ");
    let distinct = distinct_count(xs);
    if distinct < 4 {
        return Err(FrontierError::RankDeficient(distinct));
    }
    let mu = stats::mean(xs).expect("non-empty");
    let scale = xs.iter().map(|x| (x - mu).abs()).fold(0.0, f64::max);
    let mut ata = [[0.0; 4]; 4];
    let mut aty = [0.0; 4];
    for (&x, &y) in xs.iter().zip(ys) {
        let u = (x - mu) / scale;
        let basis = [1.0, u, u * u, u * u * u];
        for i in 0..4 {
            aty[i] += basis[i] * y;
            for j in 0..4 {
                ata[i][j] += basis[i] * basis[j];
            }
        }
    }
    let a = solve4(ata, aty).ok_or(FrontierError::RankDeficient(distinct))?;

    // u = alpha x + beta; expand sum_k a_k u^k into powers of x.
    let (alpha, beta) = (1.0 / scale, -mu / scale);
    const BINOM: [[f64; 4]; 4] = [
        [1.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 0.0, 0.0],
        [1.0, 2.0, 1.0, 0.0],
        [1.0, 3.0, 3.0, 1.0],
    ];
    let mut coeffs = [0.0; 4];
    for (k, ak) in a.iter().enumerate() {
        for (j, c) in coeffs.iter_mut().enumerate().take(k + 1) {
            *c += ak * BINOM[k][j] * alpha.powi(j as i32) * beta.powi((k - j) as i32);
        }
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut fit = CubicFit {
        coeffs,
        residual_rms: 0.0,
        domain: (lo, hi),
    };
    fit.residual_rms = fit.rms_residual(xs, ys);
    Ok(fit)
}

/// Cubic of return against risk.
pub fn fit_cubic(points: &[FrontierPoint]) -> Result<CubicFit> {
    let xs: Vec<f64> = points.iter().map(|p| p.risk).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.ret).collect();
    fit_cubic_xy(&xs, &ys)
}

/// Grid points plus, when there are enough distinct risks, the cubic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierModel {
    pub points: Vec<FrontierPoint>,
    pub fit: Option<CubicFit>,
}

impl FrontierModel {
    pub fn new(points: Vec<FrontierPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(FrontierError::EmptyGrid);
        }
        let fit = match fit_cubic(&points) {
            Ok(fit) => Some(fit),
            Err(FrontierError::RankDeficient(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { points, fit })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Risk,
    Return,
}

impl Axis {
    fn of(self, p: &FrontierPoint) -> f64 {
        match self {
            Self::Risk => p.risk,
            Self::Return => p.ret,
        }
    }
}

/// Threshold for a target and the (risk, return) it is expected to achieve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta: f64,
    pub risk: f64,
    pub ret: f64,
}

/// Invert the frontier along `axis`. An exact grid hit returns that θ; else
/// the single segment strictly bracketing the target is interpolated
/// linearly. The expected return is read off the cubic at the interpolated
/// risk when a fit exists.
pub fn lookup_theta(model: &FrontierModel, axis: Axis, target: f64) -> Result<ThetaEstimate> {
    if !target.is_finite() {
        return Err(FrontierError::InvalidTarget);
    }
    let pts = &model.points;
    let hits: Vec<&FrontierPoint> = pts.iter().filter(|p| axis.of(p) == target).collect();
    if let [hit] = hits.as_slice() {
        return Ok(ThetaEstimate {
            theta: hit.theta,
            risk: hit.risk,
            ret: hit.ret,
        });
    }
    if hits.len() > 1 {
        let candidates = hits
            .iter()
            .map(|p| ThetaEstimate {
                theta: p.theta,
                risk: p.risk,
                ret: p.ret,
            })
            .collect();
        return Err(FrontierError::NonBracketable { target, candidates });
    }
    let candidates: Vec<ThetaEstimate> = pts
        .windows(2)
        .filter_map(|seg| {
            let (a, b) = (axis.of(&seg[0]), axis.of(&seg[1]));
            if !(a.min(b) < target && target < a.max(b)) {
                return None;
            }
            let frac = (target - a) / (b - a);
            let lerp = |x: f64, y: f64| x + frac * (y - x);
            let risk = lerp(seg[0].risk, seg[1].risk);
            let ret = match (axis, &model.fit) {
                (_, Some(fit)) => fit.eval(risk),
                (Axis::Return, None) => target,
                (Axis::Risk, None) => lerp(seg[0].ret, seg[1].ret),
            };
            Some(ThetaEstimate {
                theta: lerp(seg[0].theta, seg[1].theta),
                risk,
                ret,
            })
        })
        .collect();
    match candidates.len() {
        1 => Ok(candidates[0]),
        0 => {
            let nearest = *pts
                .iter()
                .min_by(|p, q| {
                    (axis.of(p) - target)
                        .abs()
                        .total_cmp(&(axis.of(q) - target).abs())
                })
                .expect("non-empty grid");
            Err(FrontierError::TargetOutOfRange { target, nearest })
        }
        _ => Err(FrontierError::NonBracketable { target, candidates }),
    }
}

/// Mean absolute change between an expected frontier and the one realized a
/// month later, pooled over thresholds and periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationRisk {
    pub ret: f64,
    pub risk: f64,
    pub periods: usize,
}

pub fn estimation_risk(
    pairs: &[(Vec<FrontierPoint>, Vec<FrontierPoint>)],
) -> Result<EstimationRisk> {
    let (mut d_ret, mut d_risk, mut n) = (0.0, 0.0, 0usize);
    for (expected, realized) in pairs {
        if expected.len() != realized.len()
            || expected
                .iter()
                .zip(realized)
                .any(|(e, r)| e.theta != r.theta)
        {
            return Err(FrontierError::GridMismatch);
        }
        for (e, r) in expected.iter().zip(realized) {
            d_ret += (e.ret - r.ret).abs();
            d_risk += (e.risk - r.risk).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(FrontierError::EmptyGrid);
    }
    Ok(EstimationRisk {
        ret: d_ret / n as f64,
        risk: d_risk / n as f64,
        periods: pairs.len(),
    })
}

/// Estimation risk over the last `periods` one-month-ahead frontier pairs.
pub fn rolling_estimation_risk(
    backtests: &[(f64, BacktestResult)],
    window: usize,
    periods: usize,
) -> Result<EstimationRisk> {
    let len = backtests.first().map_or(0, |(_, b)| b.returns.len());
    if periods == 0 || len < window + periods {
        return Err(FrontierError::WindowTooLong {
            window: window + periods,
            available: len,
        });
    }
    let pairs = (0..periods)
        .map(|k| {
            let end = len - k;
            Ok((
                build_frontier_at(backtests, window, end - 1)?,
                build_frontier_at(backtests, window, end)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    estimation_risk(&pairs)
}

/// One TBP backtest per grid threshold, ascending by θ.
pub fn backtest_grid(
    forecasts: &ForecastPanel,
    base: TbpConfig,
    thetas: &[f64],
) -> Result<Vec<(f64, BacktestResult)>> {
    if thetas.is_empty() {
        return Err(FrontierError::EmptyGrid);
    }
    let mut sorted = thetas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted
        .into_iter()
        .map(|theta| {
            Ok((
                theta,
                backtest(forecasts, &Selector::Threshold(base.with_theta(theta)?))?,
            ))
        })
        .collect()
}

/// What to manage towards and over which grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ManagePlan {
    pub axis: Axis,
    pub target: f64,
    pub thetas: Vec<f64>,
    pub window: usize,
    /// Mode and the θ applied to thresholds the grid does not drive.
    pub base: TbpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub asset: String,
    /// Signed; negative for shorts.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub decision_month: Month,
    pub holding_month: Month,
    pub axis: Axis,
    pub target: f64,
    pub estimate: ThetaEstimate,
    pub members: Vec<Allocation>,
    pub cash_weight: f64,
    pub frontier: FrontierModel,
    pub estimation_risk: Option<EstimationRisk>,
}

/// Frontier from past forecasts, θ for the target, and the TBP that θ picks
/// from the decision month's forecasts.
pub fn recommend(
    history: &ForecastPanel,
    decision_month: Month,
    decision_predictions: &[f64],
    plan: &ManagePlan,
) -> Result<Recommendation> {
    let backtests = backtest_grid(history, plan.base, &plan.thetas)?;
    let frontier = FrontierModel::new(build_frontier(&backtests, plan.window)?)?;
    let estimate = lookup_theta(&frontier, plan.axis, plan.target)?;
    let config = plan.base.with_theta(estimate.theta)?;
    let snapshot = assign_weights(decision_month, &select_tbp(decision_predictions, &config));
    let members = snapshot
        .members
        .iter()
        .map(|h| Allocation {
            asset: history.assets()[h.asset].clone(),
            weight: h.weight,
        })
        .collect();
    let available = history.num_months().saturating_sub(plan.window);
    let estimation_risk =
        rolling_estimation_risk(&backtests, plan.window, available.min(plan.window)).ok();
    Ok(Recommendation {
        decision_month,
        holding_month: decision_month.succ(),
        axis: plan.axis,
        target: plan.target,
        estimate,
        members,
        cash_weight: snapshot.cash_weight,
        frontier,
        estimation_risk,
    })
}

/// Full management step for a trained model: forecast `history` months,
/// build the frontier and pick the TBP for the panel's last month.
pub fn manage_step(
    model: &RnnModel,
    panel: &MonthlyFeaturePanel,
    history: Range<usize>,
    plan: &ManagePlan,
) -> Result<Recommendation> {
    let forecasts = forecast(model, panel, history)?;
    let decision = panel.num_months() - 1;
    let predictions = predict_month(model, panel, decision)?;
    recommend(&forecasts, panel.months()[decision], &predictions, plan)
}

/// `theta,risk,return,window_start,window_end`.
pub fn write_frontier_csv(points: &[FrontierPoint], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "theta,risk,return,window_start,window_end")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{}",
            p.theta, p.risk, p.ret, p.window_start, p.window_end
        )?;
    }
    Ok(())
}

/// `c0,c1,c2,c3,residual_rms,domain_lo,domain_hi`.
pub fn write_fit_csv(fit: &CubicFit, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "c0,c1,c2,c3,residual_rms,domain_lo,domain_hi")?;
    let [c0, c1, c2, c3] = fit.coeffs;
    writeln!(
        out,
        "{c0},{c1},{c2},{c3},{},{},{}",
        fit.residual_rms, fit.domain.0, fit.domain.1
    )
}
