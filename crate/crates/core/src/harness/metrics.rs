use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temporal IoU of two inclusive frame-index intervals, measured as the
/// half-open spans `[s, e + 1)`.
pub fn iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = (a.1.min(b.1) + 1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0 + 1) + (b.1 - b.0 + 1) - inter;
    inter as f64 / union as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub n: usize,
    pub m: f64,
    /// Percentage in [0, 100].
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub pred: (usize, usize),
    pub gt: (usize, usize),
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recalls: Vec<Recall>,
    pub miou: f64,
    pub instances: Vec<InstanceResult>,
}

impl EvalReport {
    pub fn recall(&self, n: usize, m: f64) -> Option<f64> {
        self.recalls.iter().find(|r| r.n == n && r.m == m).map(|r| r.value)
    }

    /// Plain-text table of every recall plus mIoU.
    pub fn table(&self) -> String {
        let mut out = String::new();
        for r in &self.recalls {
            out.push_str(&format!("R@{},IoU={:<4} {:>7.2}\n", r.n, r.m, r.value));
        }
        out.push_str(&format!("mIoU         {:>7.2}\n", 100.0 * self.miou));
        out
    }
}

/// `ranked[i]` holds the ranked predictions for instance `i` (best first).
/// Recall counts an instance when any of its top `n` predictions has IoU
/// strictly greater than `m`.
pub fn evaluate(
    ranked: &[Vec<(usize, usize)>],
    ground_truths: &[(usize, usize)],
    n_list: &[usize],
    m_list: &[f64],
) -> Result<EvalReport> {
    if ranked.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    if ranked.len() != ground_truths.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} ground truths",
            ranked.len(),
            ground_truths.len()
        )));
    }
    if ranked.iter().any(|r| r.is_empty()) {
        return Err(Error::Data("an instance has no prediction".into()));
    }
    let total = ranked.len() as f64;
    let mut recalls = Vec::new();
    for &n in n_list {
        for &m in m_list {
            let hits = ranked
                .iter()
                .zip(ground_truths)
                .filter(|(r, &gt)| r.iter().take(n).any(|&p| iou(p, gt) > m))
                .count();
            recalls.push(Recall {
                n,
                m,
                value: 100.0 * hits as f64 / total,
            });
        }
    }
    let instances: Vec<InstanceResult> = ranked
        .iter()
        .zip(ground_truths)
        .map(|(r, &gt)| InstanceResult {
            pred: r[0],
            gt,
            iou: iou(r[0], gt),
        })
        .collect();
    let miou = instances.iter().map(|i| i.iou).sum::<f64>() / total;
    Ok(EvalReport {
        recalls,
        miou,
        instances,
    })
}
