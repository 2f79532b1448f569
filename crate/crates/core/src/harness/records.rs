use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// Metric names emitted by the harness. Indexed variants carry a Bohr index
/// or a mode count and print as `<base>_<suffix><index>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    TraceDistance,
    TraceDistanceMax,
    TraceDistanceFactorized,
    TraceDistanceFactorizedMax,
    CorrelatedVsFactorized,
    Floor,
    CorrelationNorm,
    InitialCorrelation,
    QPartNorm,
    CorrelationRatio,
    MethodDifference,
    KernelNorm(usize),
    GrowthExponent(usize),
    WeakQ,
    WeakQMax,
    WeakDistance,
    InitialDistance,
    PlateauRatio,
    SectorOverlapEqual,
    SectorOverlap(usize),
    SectorOverlapFockDiff,
    PerturbedOverlapFockDiff,
    WickFockDiff,
    TwoPointFockDiff,
    MixingPlateauRatio,
    DiagonalResidual(usize),
    DiagonalHalvingRatio,
    CesaroOffDiagonal(usize),
    CesaroScaling,
}

impl Metric {
    pub fn name(&self) -> String {
        use Metric::*;
        match *self {
            TraceDistance => "trace_distance".into(),
            TraceDistanceMax => "trace_distance_max".into(),
            TraceDistanceFactorized => "trace_distance_factorized".into(),
            TraceDistanceFactorizedMax => "trace_distance_factorized_max".into(),
            CorrelatedVsFactorized => "correlated_vs_factorized".into(),
            Floor => "floor".into(),
            CorrelationNorm => "correlation_norm".into(),
            InitialCorrelation => "initial_correlation".into(),
            QPartNorm => "q_part_norm".into(),
            CorrelationRatio => "correlation_ratio".into(),
            MethodDifference => "method_difference".into(),
            KernelNorm(m) => format!("kernel_norm_m{m}"),
            GrowthExponent(m) => format!("growth_exponent_m{m}"),
            WeakQ => "weak_q".into(),
            WeakQMax => "weak_q_max".into(),
            WeakDistance => "weak_distance".into(),
            InitialDistance => "initial_distance".into(),
            PlateauRatio => "plateau_ratio".into(),
            SectorOverlapEqual => "sector_overlap_equal".into(),
            SectorOverlap(n) => format!("sector_overlap_n{n}"),
            SectorOverlapFockDiff => "sector_overlap_fock_diff".into(),
            PerturbedOverlapFockDiff => "perturbed_overlap_fock_diff".into(),
            WickFockDiff => "wick_fock_diff".into(),
            TwoPointFockDiff => "two_point_fock_diff".into(),
            MixingPlateauRatio => "mixing_plateau_ratio".into(),
            DiagonalResidual(n) => format!("diagonal_residual_n{n}"),
            DiagonalHalvingRatio => "diagonal_halving_ratio".into(),
            CesaroOffDiagonal(n) => format!("cesaro_offdiag_s{n}"),
            CesaroScaling => "cesaro_scaling".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub metric: Metric,
    pub value: f64,
    pub fingerprint: String,
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    experiment: &'a str,
    lambda: Option<String>,
    tau: Option<String>,
    metric: String,
    value: String,
    fingerprint: &'a str,
}

pub const CSV_HEADER: &str = "experiment,lambda,tau,metric,value,fingerprint";

/// 17 significant digits, round-trip exact.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

fn cmp_opt(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(&y),
    }
}

impl ExperimentRecord {
    pub fn new(experiment: &str, lambda: Option<f64>, tau: Option<f64>, metric: Metric, value: f64) -> Self {
        Self { experiment: experiment.into(), lambda, tau, metric, value, fingerprint: String::new() }
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.experiment
            .cmp(&other.experiment)
            .then_with(|| self.metric.name().cmp(&other.metric.name()))
            .then_with(|| cmp_opt(self.lambda, other.lambda))
            .then_with(|| cmp_opt(self.tau, other.tau))
            .then_with(|| self.value.total_cmp(&other.value))
    }
}

/// Stamps the fingerprint, rejects non-finite values, sorts.
pub fn finalize(mut records: Vec<ExperimentRecord>, fingerprint: &str) -> Result<Vec<ExperimentRecord>> {
    for r in &mut records {
        if !r.value.is_finite() {
            return Err(Error::Numerical(format!("{} / {} produced {}", r.experiment, r.metric.name(), r.value)));
        }
        r.fingerprint = fingerprint.to_string();
    }
    records.sort_by(|a, b| a.key_cmp(b));
    Ok(records)
}

pub fn to_csv(records: &[ExperimentRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.experiment,
            fmt_opt(r.lambda),
            fmt_opt(r.tau),
            r.metric.name(),
            fmt_float(r.value),
            r.fingerprint
        );
    }
    s
}

/// Floats are strings so the JSON carries the same digits as the CSV.
pub fn to_json(records: &[ExperimentRecord]) -> String {
    let rows: Vec<JsonRecord> = records
        .iter()
        .map(|r| JsonRecord {
            experiment: &r.experiment,
            lambda: r.lambda.map(fmt_float),
            tau: r.tau.map(fmt_float),
            metric: r.metric.name(),
            value: fmt_float(r.value),
            fingerprint: &r.fingerprint,
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&rows).unwrap_or_else(|_| "[]".into());
    s.push('\n');
    s
}

/// First record matching experiment, metric and optionally λ.
pub fn lookup(records: &[ExperimentRecord], experiment: &str, metric: Metric, lambda: Option<f64>) -> Option<f64> {
    records
        .iter()
        .find(|r| r.experiment == experiment && r.metric == metric && (lambda.is_none() || r.lambda == lambda))
        .map(|r| r.value)
}
