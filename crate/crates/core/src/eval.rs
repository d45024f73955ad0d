//! Detection quality of a scored stream against simulator ground truth.

use std::fmt::Write as _;

use thiserror::Error;

use crate::scorer::AnomalyScore;
use crate::simulator::TruthRow;

/// Attack scores below this p-value count as "effectively zero".
pub const NEAR_ZERO_P: f64 = 1e-6;

/// Ambient false-positive budget for the reported operating point.
pub const FPR_BUDGET: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("ROC needs both attack and ambient scores (got {attack} attack, {ambient} ambient)")]
    OneClassOnly { attack: usize, ambient: usize },
    #[error("{0} scores but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("scores do not line up with ground truth: {0}")]
    Misaligned(String),
}

/// Splits scores by whether the predicted frame was injected.
pub fn label_scores(scores: &[AnomalyScore]) -> (Vec<AnomalyScore>, Vec<AnomalyScore>) {
    scores.iter().partition(|s| s.target_injected)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC by sweeping a threshold over every distinct score (higher = more
/// anomalous, `true` = attack). Tied scores move along the diagonal, so the
/// trapezoidal area equals the normalized Mann-Whitney statistic with ties
/// counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::OneClassOnly {
            attack: pos,
            ambient: neg,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]].total_cmp(&threshold).is_eq() {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (fpr, tpr) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        let (px, py) = *points.last().expect("starts with origin");
        auc += (fpr - px) * (tpr + py) / 2.0;
        points.push((fpr, tpr));
    }
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auc: f64,
    pub median_p_attack: f64,
    pub median_p_ambient: f64,
    pub min_p_attack: f64,
    pub min_p_ambient: f64,
    /// Share of attack-target scores with `p < NEAR_ZERO_P`.
    pub attack_near_zero_fraction: f64,
    /// Best TPR among thresholds whose ambient FPR is at most 1%.
    pub tpr_at_fpr1pct: f64,
    pub attack_count: usize,
    pub ambient_count: usize,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Summary statistics of a labeled score stream. The ROC ranks frames by
/// `−p`, which orders exactly like `1 − p` without losing resolution for
/// p-values below machine epsilon.
pub fn summarize(scores: &[AnomalyScore]) -> Result<EvalReport, EvalError> {
    let (attack, ambient) = label_scores(scores);
    if attack.is_empty() || ambient.is_empty() {
        return Err(EvalError::OneClassOnly {
            attack: attack.len(),
            ambient: ambient.len(),
        });
    }
    let ranking: Vec<f64> = scores.iter().map(|s| -s.p).collect();
    let labels: Vec<bool> = scores.iter().map(|s| s.target_injected).collect();
    let roc = roc_auc(&ranking, &labels)?;
    let tpr_at_fpr1pct = roc
        .points
        .iter()
        .filter(|(fpr, _)| *fpr <= FPR_BUDGET)
        .map(|&(_, tpr)| tpr)
        .fold(0.0, f64::max);
    let mut pa: Vec<f64> = attack.iter().map(|s| s.p).collect();
    let mut pb: Vec<f64> = ambient.iter().map(|s| s.p).collect();
    let near_zero = pa.iter().filter(|&&p| p < NEAR_ZERO_P).count();
    Ok(EvalReport {
        auc: roc.auc,
        median_p_attack: median(&mut pa),
        median_p_ambient: median(&mut pb),
        min_p_attack: pa[0],
        min_p_ambient: pb[0],
        attack_near_zero_fraction: near_zero as f64 / attack.len() as f64,
        tpr_at_fpr1pct,
        attack_count: attack.len(),
        ambient_count: ambient.len(),
    })
}

impl EvalReport {
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv("auc", format!("{:?}", self.auc));
        kv("median_p_attack", format!("{:e}", self.median_p_attack));
        kv("median_p_ambient", format!("{:e}", self.median_p_ambient));
        kv("min_p_attack", format!("{:e}", self.min_p_attack));
        kv("min_p_ambient", format!("{:e}", self.min_p_ambient));
        kv("attack_near_zero_fraction", format!("{:?}", self.attack_near_zero_fraction));
        kv("tpr_at_fpr1pct", format!("{:?}", self.tpr_at_fpr1pct));
        kv("attack_count", self.attack_count.to_string());
        kv("ambient_count", self.ambient_count.to_string());
        s
    }

    pub fn to_text(&self) -> String {
        format!(
            "scores: {} attack-target, {} ambient-target\n\
             AUC (rank by p): {:.6}\n\
             median p  attack {:.3e}  ambient {:.3e}\n\
             min p     attack {:.3e}  ambient {:.3e}\n\
             attack scores with p < {:e}: {:.1}%\n\
             TPR at ambient FPR <= {:.0}%: {:.4}\n",
            self.attack_count,
            self.ambient_count,
            self.auc,
            self.median_p_attack,
            self.median_p_ambient,
            self.min_p_attack,
            self.min_p_ambient,
            NEAR_ZERO_P,
            100.0 * self.attack_near_zero_fraction,
            100.0 * FPR_BUDGET,
            self.tpr_at_fpr1pct,
        )
    }
}

/// Copies ground-truth flags from the simulator sidecar onto scores.
///
/// Scores for an AID start at that AID's `window + 1`-th frame, so score
/// `i` lines up with the truth row `i + window`, where `window` is the
/// difference between the AID's truth and score counts. Timestamps must
/// agree at microsecond resolution.
pub fn align_truth(scores: &[AnomalyScore], truth: &[TruthRow]) -> Result<Vec<AnomalyScore>, EvalError> {
    let mut out = scores.to_vec();
    let mut aids: Vec<u16> = scores.iter().map(|s| s.aid).collect();
    aids.sort_unstable();
    aids.dedup();
    for aid in aids {
        let rows: Vec<&TruthRow> = truth.iter().filter(|r| r.aid == aid).collect();
        let idx: Vec<usize> = (0..out.len()).filter(|&i| out[i].aid == aid).collect();
        if rows.len() < idx.len() {
            return Err(EvalError::Misaligned(format!(
                "AID {aid:03X}: {} scores but only {} truth rows",
                idx.len(),
                rows.len()
            )));
        }
        let skip = rows.len() - idx.len();
        for (k, &i) in idx.iter().enumerate() {
            let row = rows[k + skip];
            let tol = 1e-6 + 1e-8 * row.timestamp.abs();
            if (row.timestamp - out[i].timestamp).abs() > tol {
                return Err(EvalError::Misaligned(format!(
                    "AID {aid:03X}: score at {} vs truth at {}",
                    out[i].timestamp, row.timestamp
                )));
            }
            out[i].target_injected = row.injected;
        }
    }
    Ok(out)
}
