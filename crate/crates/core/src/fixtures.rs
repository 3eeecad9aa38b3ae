//! Deterministic fixtures for the mock judge.
//!
//! Fixture stories plant `QUALITY` marker lines that `judge::MockJudge` reads,
//! so every verdict, and therefore every pass count and metric, can be
//! enumerated by hand. Used by the test suites and by `--mock` demo runs.

use std::collections::BTreeMap;

use crate::domain::{EvalDataset, HumanScale, PlotEntry};

/// A fixture story whose judged quality is `base` on every test.
pub fn mock_story(base: f64) -> String {
    format!("QUALITY: {base}\nA small tale written for the deterministic judge.")
}

/// A fixture story with a base quality plus per-test overrides.
pub fn mock_story_with_overrides(base: f64, overrides: &[(u8, f64)]) -> String {
    let mut text = format!("QUALITY: {base}\n");
    for (test_id, quality) in overrides {
        text.push_str(&format!("QUALITY[{test_id}]: {quality}\n"));
    }
    text.push_str("A small tale written for the deterministic judge.");
    text
}

/// Spec for one fixture candidate: its system id, base quality, per-test
/// quality overrides, and its human score.
#[derive(Debug, Clone)]
pub struct CandidateSpec {
    pub system: String,
    pub base_quality: f64,
    pub overrides: Vec<(u8, f64)>,
    pub human_score: f64,
}

impl CandidateSpec {
    pub fn new(system: &str, base_quality: f64, human_score: f64) -> Self {
        CandidateSpec {
            system: system.to_string(),
            base_quality,
            overrides: Vec::new(),
            human_score,
        }
    }

    pub fn with_overrides(mut self, overrides: &[(u8, f64)]) -> Self {
        self.overrides = overrides.to_vec();
        self
    }
}

/// Builds a dataset of `n_plots` identical storylines from candidate specs,
/// with the reference system fixed at quality 0.5.
pub fn dataset_from_specs(dataset_id: &str, n_plots: usize, candidates: &[CandidateSpec]) -> EvalDataset {
    let plots = (1..=n_plots)
        .map(|i| {
            let mut texts = BTreeMap::new();
            texts.insert("reference".to_string(), mock_story(0.5));
            let mut human_scores = BTreeMap::new();
            for c in candidates {
                texts.insert(c.system.clone(), mock_story_with_overrides(c.base_quality, &c.overrides));
                human_scores.insert(c.system.clone(), c.human_score);
            }
            PlotEntry {
                plot_id: format!("plot-{i:02}"),
                plot_text: Some(format!("Storyline number {i}.")),
                reference_system: "reference".to_string(),
                texts,
                human_scores,
            }
        })
        .collect();
    EvalDataset {
        dataset_id: dataset_id.to_string(),
        scale: HumanScale::ttcw(),
        plots,
    }
}

/// A monotone-quality fixture: three candidates per plot whose planted pass
/// counts at cutoff -2 on the 5-point scale are strictly ordered 14 > 9 > 4,
/// matching the human-score order 12 > 8 > 3.
///
/// High-quality tests sit at 0.9 (each trial "significantly better", combined
/// +4, passes any cutoff <= +4); low-quality tests sit at 0.1 (combined -4,
/// fails any cutoff > -4).
pub fn monotone_dataset(dataset_id: &str, n_plots: usize) -> EvalDataset {
    let low: Vec<(u8, f64)> = (1..=14u8).map(|t| (t, 0.1)).collect();
    let candidates = [
        CandidateSpec::new("strong-model", 0.9, 12.0),
        CandidateSpec::new("middle-model", 0.9, 8.0).with_overrides(&low[9..]),
        CandidateSpec::new("weak-model", 0.9, 3.0).with_overrides(&low[4..]),
    ];
    dataset_from_specs(dataset_id, n_plots, &candidates)
}

/// One-plot fixture with three uniform-quality candidates (0.9 / 0.6 / 0.3)
/// against the 0.5-quality reference.
pub fn simple_dataset(dataset_id: &str) -> EvalDataset {
    let candidates = [
        CandidateSpec::new("model-high", 0.9, 12.0),
        CandidateSpec::new("model-mid", 0.6, 8.0),
        CandidateSpec::new("model-low", 0.3, 3.0),
    ];
    dataset_from_specs(dataset_id, 1, &candidates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_datasets_validate_cleanly() {
        assert_eq!(monotone_dataset("fix", 4).validate(), Vec::new());
        assert_eq!(simple_dataset("fix").validate(), Vec::new());
    }

    #[test]
    fn monotone_dataset_shape() {
        let ds = monotone_dataset("fix", 4);
        assert_eq!(ds.plots.len(), 4);
        for plot in &ds.plots {
            assert_eq!(plot.texts.len(), 4);
            assert_eq!(plot.candidate_systems().len(), 3);
            assert_eq!(plot.human_scores.len(), 3);
        }
    }

    #[test]
    fn override_lines_render_in_marker_syntax() {
        let story = mock_story_with_overrides(0.9, &[(10, 0.1), (11, 0.1)]);
        assert!(story.contains("QUALITY: 0.9"));
        assert!(story.contains("QUALITY[10]: 0.1"));
        assert!(story.contains("QUALITY[11]: 0.1"));
    }
}
