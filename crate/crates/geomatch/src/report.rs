//! Metrics report files: global and per-slice Recall@{1,3,5,20,50,100}
//! and MRR@{5,10}, tagged with the seed and config hash of the run.

use geomatch_core::eval::{Metrics, SliceMetrics};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    pub queries: usize,
    pub recall: Vec<AtK>,
    pub mrr: Vec<AtK>,
}

impl MetricsBlock {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|x| x.k == k).map(|x| x.value)
    }

    pub fn mrr_at(&self, k: usize) -> Option<f64> {
        self.mrr.iter().find(|x| x.k == k).map(|x| x.value)
    }
}

impl From<&Metrics> for MetricsBlock {
    fn from(m: &Metrics) -> Self {
        let at = |v: &[(usize, f64)]| v.iter().map(|&(k, value)| AtK { k, value }).collect();
        Self {
            queries: m.queries,
            recall: at(&m.recall),
            mrr: at(&m.mrr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub label: String,
    #[serde(flatten)]
    pub metrics: MetricsBlock,
}

impl From<&SliceMetrics> for Slice {
    fn from(s: &SliceMetrics) -> Self {
        Self {
            label: s.label.clone(),
            metrics: (&s.metrics).into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub split: String,
    /// `ranking` over each query's candidates or `retrieval` over every POI.
    pub task: String,
    pub seed: u64,
    pub config_hash: String,
    pub global: MetricsBlock,
    pub slices: Vec<Slice>,
}

impl MetricsReport {
    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_stable_and_parses_back() {
        let m = Metrics {
            queries: 3,
            recall: vec![(1, 0.5), (3, 2.0 / 3.0)],
            mrr: vec![(5, 0.25)],
        };
        let r = MetricsReport {
            model: "bi-gc".into(),
            split: "test".into(),
            task: "ranking".into(),
            seed: 17,
            config_hash: "00ff".into(),
            global: (&m).into(),
            slices: vec![Slice {
                label: "ADDRESS".into(),
                metrics: (&m).into(),
            }],
        };
        let text = r.render();
        assert_eq!(text, r.clone().render());
        assert_eq!(serde_json::from_str::<MetricsReport>(&text).unwrap(), r);
        assert_eq!(r.global.recall_at(3), Some(2.0 / 3.0));
        assert_eq!(r.global.mrr_at(10), None);
    }
}
