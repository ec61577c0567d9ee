use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::{evaluate_pass, EvalError, Judge, TurnEvalResult};
use crate::dataset::DialogueSample;
use crate::pipeline::PassArtifacts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub csr: f64,
    pub isr: f64,
    pub drfr: f64,
    pub wcsr: f64,
    pub by_constraint_type: BTreeMap<String, f64>,
    pub samples: usize,
    pub instructions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_calls: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_latency_seconds: Option<f64>,
    pub passes: u32,
}

/// Exact metric values.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalMetrics {
    pub csr: BigRational,
    pub isr: BigRational,
    pub drfr: BigRational,
    pub wcsr: BigRational,
    pub by_constraint_type: BTreeMap<String, BigRational>,
}

fn ratio(n: usize, d: usize) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn exact(w: f64) -> BigRational {
    BigRational::from_float(w).expect("weights are finite")
}

fn real(r: &BigRational) -> f64 {
    r.to_f64().expect("metric fits in f64")
}

impl RationalMetrics {
    pub fn compute(results: &[TurnEvalResult]) -> Result<Self, EvalError> {
        if results.is_empty() {
            return Err(EvalError::EmptyResults);
        }
        let mut csr_sum = BigRational::zero();
        let mut all_ok = 0usize;
        let (mut satisfied, mut total) = (0usize, 0usize);
        let (mut w_sat, mut w_all) = (BigRational::zero(), BigRational::zero());
        let mut by_type: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for r in results {
            if r.outcomes.is_empty() {
                return Err(EvalError::EmptyOutcomes { sample: r.sample_id.clone(), turn: r.turn });
            }
            let ok = r.outcomes.iter().filter(|o| o.satisfied).count();
            csr_sum += ratio(ok, r.outcomes.len());
            all_ok += usize::from(ok == r.outcomes.len());
            satisfied += ok;
            total += r.outcomes.len();
            for o in &r.outcomes {
                let w = exact(o.weight);
                if o.satisfied {
                    w_sat += &w;
                }
                w_all += w;
                let e = by_type.entry(o.constraint_type.clone()).or_default();
                e.0 += usize::from(o.satisfied);
                e.1 += 1;
            }
        }
        let n = BigRational::from_integer(BigInt::from(results.len()));
        Ok(Self {
            csr: csr_sum / &n,
            isr: ratio(all_ok, results.len()),
            drfr: ratio(satisfied, total),
            wcsr: w_sat / w_all,
            by_constraint_type: by_type.into_iter().map(|(k, (s, t))| (k, ratio(s, t))).collect(),
        })
    }

    fn mean(items: &[Self]) -> Self {
        let n = BigRational::from_integer(BigInt::from(items.len()));
        let avg = |f: fn(&Self) -> &BigRational| items.iter().map(f).fold(BigRational::zero(), |a, b| a + b) / &n;
        let mut by_type: BTreeMap<String, (BigRational, usize)> = BTreeMap::new();
        for m in items {
            for (k, v) in &m.by_constraint_type {
                let e = by_type.entry(k.clone()).or_insert((BigRational::zero(), 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        Self {
            csr: avg(|m| &m.csr),
            isr: avg(|m| &m.isr),
            drfr: avg(|m| &m.drfr),
            wcsr: avg(|m| &m.wcsr),
            by_constraint_type: by_type
                .into_iter()
                .map(|(k, (sum, c))| (k, sum / BigRational::from_integer(BigInt::from(c))))
                .collect(),
        }
    }

    fn report(&self, samples: usize, instructions: usize, passes: u32) -> MetricsReport {
        MetricsReport {
            csr: real(&self.csr),
            isr: real(&self.isr),
            drfr: real(&self.drfr),
            wcsr: real(&self.wcsr),
            by_constraint_type: self.by_constraint_type.iter().map(|(k, v)| (k.clone(), real(v))).collect(),
            samples,
            instructions,
            avg_calls: None,
            avg_latency_seconds: None,
            passes,
        }
    }
}

fn distinct_samples(results: &[TurnEvalResult]) -> usize {
    let mut ids: Vec<&str> = results.iter().map(|r| r.sample_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.len()
}

pub fn compute_metrics(results: &[TurnEvalResult]) -> Result<MetricsReport, EvalError> {
    let m = RationalMetrics::compute(results)?;
    Ok(m.report(distinct_samples(results), results.len(), 1))
}

/// Metrics per pass, averaged. Also returns the per-pass outcomes.
pub fn evaluate_run(
    passes: &[PassArtifacts],
    dataset: &[DialogueSample],
    judge: Option<&Judge<'_>>,
) -> Result<(MetricsReport, Vec<Vec<TurnEvalResult>>), EvalError> {
    if passes.is_empty() {
        return Err(EvalError::NoPasses);
    }
    let mut per_pass = Vec::with_capacity(passes.len());
    let mut metrics = Vec::with_capacity(passes.len());
    let (mut calls, mut latency) = (Vec::new(), Vec::new());
    for pass in passes {
        let results = evaluate_pass(pass, dataset, judge)?;
        metrics.push(RationalMetrics::compute(&results)?);
        let turns: usize = dataset.iter().map(|s| s.turns.len()).sum();
        if turns > 0 {
            let total: u64 = pass
                .samples
                .values()
                .flat_map(|s| s.results.iter())
                .map(|r| r.total_calls())
                .sum();
            calls.push(total as f64 / turns as f64);
            if let Some(l) = &pass.ledger {
                latency.push(l.seconds() / turns as f64);
            }
        }
        per_pass.push(results);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut report = RationalMetrics::mean(&metrics).report(
        distinct_samples(&per_pass[0]),
        per_pass[0].len(),
        passes.len() as u32,
    );
    report.avg_calls = mean(&calls);
    report.avg_latency_seconds = if latency.len() == passes.len() { mean(&latency) } else { None };
    Ok((report, per_pass))
}

#[cfg(test)]
mod tests {
    use super::super::ConstraintOutcome;
    use super::*;

    fn turn(outcomes: &[(bool, f64)]) -> TurnEvalResult {
        TurnEvalResult {
            sample_id: "s".into(),
            turn: 1,
            outcomes: outcomes
                .iter()
                .enumerate()
                .map(|(i, &(satisfied, weight))| ConstraintOutcome {
                    id: format!("c{i}"),
                    constraint_type: if weight == 1.0 { "intra_turn" } else { "modify" }.into(),
                    weight,
                    satisfied,
                })
                .collect(),
        }
    }

    #[test]
    fn hand_fixture() {
        let r = compute_metrics(&[turn(&[(true, 1.0), (true, 1.0)]), turn(&[(true, 1.0), (false, 1.0)])]).unwrap();
        assert_eq!((r.csr, r.isr, r.drfr, r.wcsr), (0.75, 0.5, 0.75, 0.75));
    }

    #[test]
    fn weighted_fixture() {
        let m = RationalMetrics::compute(&[turn(&[(true, 1.0), (false, 2.0)])]).unwrap();
        assert_eq!(m.wcsr, ratio(1, 3));
        assert_eq!(m.csr, ratio(1, 2));
        assert_eq!(m.isr, ratio(0, 1));
        assert_eq!(m.drfr, ratio(1, 2));
        assert_eq!(m.by_constraint_type["modify"], ratio(0, 1));
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_metrics(&[]), Err(EvalError::EmptyResults)));
        assert!(matches!(compute_metrics(&[turn(&[])]), Err(EvalError::EmptyOutcomes { .. })));
    }
}
