//! Dropout-permutation test: trains an auxiliary policy with input dropout,
//! then scores it with each channel in turn replaced by uniform draws from
//! its recorded range.
//!
//! `importance = (score - base) / base`, so a channel whose replacement hurts
//! the policy gets a negative importance and is kept. When `base <= 0` the
//! denominator becomes `|base| + 1` to keep the sign meaningful.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channels::ObservationSpace;
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::learner::{evaluate, train, ChannelOverride, TrainConfig, TrainedModel};
use crate::rng::{derive, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermTestConfig {
    pub dropout_rate: f64,
    /// Evaluation episodes for the base score and for every channel.
    pub eval_episodes: usize,
    pub keep_threshold: f64,
    /// Training steps of the auxiliary model; `None` means the search's K.
    pub aux_train_steps: Option<usize>,
}

impl Default for PermTestConfig {
    fn default() -> Self {
        PermTestConfig {
            dropout_rate: 0.1,
            eval_episodes: 100,
            keep_threshold: 0.05,
            aux_train_steps: None,
        }
    }
}

impl PermTestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) || !(self.keep_threshold > 0.0) || self.eval_episodes == 0 {
            return Err(Error::InvalidArgument(format!("invalid permutation test config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Essential,
    Neutral,
    Malicious,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Essential => "essential",
            Verdict::Neutral => "neutral",
            Verdict::Malicious => "malicious",
        }
    }
}

pub fn importance(score: f64, base: f64) -> f64 {
    if base > 0.0 {
        (score - base) / base
    } else {
        (score - base) / (base.abs() + 1.0)
    }
}

pub fn verdict(importance: f64, threshold: f64) -> Verdict {
    if importance <= -threshold {
        Verdict::Essential
    } else if importance >= threshold {
        Verdict::Malicious
    } else {
        Verdict::Neutral
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelImportance {
    pub channel: String,
    pub score: f64,
    pub importance: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub base_score: f64,
    pub channels: Vec<ChannelImportance>,
    pub dropout_rate: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl ImportanceReport {
    /// Builds a report from raw scores, one per channel.
    pub fn from_scores(base_score: f64, scores: &[(String, f64)], dropout_rate: f64, threshold: f64, seed: u64) -> Self {
        let channels = scores
            .iter()
            .map(|(name, score)| {
                let imp = importance(*score, base_score);
                ChannelImportance {
                    channel: name.clone(),
                    score: *score,
                    importance: imp,
                    verdict: verdict(imp, threshold),
                }
            })
            .collect();
        ImportanceReport {
            base_score,
            channels,
            dropout_rate,
            threshold,
            seed,
        }
    }

    pub fn get(&self, channel: &str) -> Option<&ChannelImportance> {
        self.channels.iter().find(|c| c.channel == channel)
    }
}

/// Scores a trained model against every channel of its space. Base and
/// permuted evaluations share evaluation seeds.
pub fn report_from_model(model: &TrainedModel, env: &mut dyn Env, config: &PermTestConfig, seed: u64) -> Result<ImportanceReport> {
    config.validate()?;
    let eval_seed = derive(seed, Stream::Eval, 0);
    let base = evaluate(model, env, config.eval_episodes, None, eval_seed)?;
    let mut scores = Vec::with_capacity(model.space.channels.len());
    for name in model.space.channel_names() {
        let ov = ChannelOverride { channel: name.clone() };
        scores.push((name, evaluate(model, env, config.eval_episodes, Some(&ov), eval_seed)?));
    }
    Ok(ImportanceReport::from_scores(
        base,
        &scores,
        model.dropout_rate,
        config.keep_threshold,
        seed,
    ))
}

/// Trains the auxiliary dropout model for `steps` and reports importances.
/// Returns the model as well; callers usually drop it.
pub fn run_permtest(
    env: &mut dyn Env,
    space: &ObservationSpace,
    train_config: &TrainConfig,
    config: &PermTestConfig,
    steps: usize,
    seed: u64,
) -> Result<(ImportanceReport, TrainedModel)> {
    config.validate()?;
    let steps = config.aux_train_steps.unwrap_or(steps);
    let mut space = space.clone();
    space.clear_ranges();
    let model = train(env, &space, steps, train_config, config.dropout_rate, derive(seed, Stream::Permtest, 0))?;
    let report = report_from_model(&model, env, config, seed)?;
    Ok((report, model))
}

/// Keeps the essential channels. When none is essential the single channel
/// with the lowest importance survives.
pub fn prune(space: &ObservationSpace, report: &ImportanceReport) -> Result<ObservationSpace> {
    let mut entries = Vec::with_capacity(space.channels.len());
    for name in space.channel_names() {
        let entry = report
            .get(&name)
            .ok_or_else(|| Error::InvalidArgument(format!("report has no entry for channel `{name}`")))?;
        entries.push(entry);
    }
    let mut keep: Vec<String> = entries
        .iter()
        .filter(|e| e.verdict == Verdict::Essential)
        .map(|e| e.channel.clone())
        .collect();
    if keep.is_empty() {
        let best = entries
            .iter()
            .min_by(|a, b| a.importance.total_cmp(&b.importance))
            .ok_or_else(|| Error::InvalidArgument("cannot prune an empty space".into()))?;
        log::warn!("no channel of {} is essential; keeping `{}`", space.name, best.channel);
        keep.push(best.channel.clone());
    }
    let mut out = space.clone();
    out.channels.retain(|c| keep.contains(&c.name));
    Ok(out)
}

/// Channels of `space` that [`prune`] removes.
pub fn pruned_channels(space: &ObservationSpace, pruned: &ObservationSpace) -> Vec<String> {
    space
        .channel_names()
        .into_iter()
        .filter(|n| !pruned.contains(n))
        .collect()
}

pub fn report_csv(report: &ImportanceReport) -> String {
    let mut out = String::from("channel,importance,verdict\n");
    for c in &report.channels {
        let _ = writeln!(out, "{},{},{}", c.channel, c.importance, c.verdict.as_str());
    }
    out
}

/// Diverging colour: green for negative, white at zero, red for positive.
pub fn importance_color(importance: f64, scale: f64) -> String {
    let t = if scale > 0.0 { (importance / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |k: f64| (255.0 * (1.0 - k.abs())).round() as u8;
    let (r, g, b) = if t >= 0.0 {
        (255, fade(t), fade(t))
    } else {
        (fade(t), (255.0 - 95.0 * t.abs()).round() as u8, fade(t))
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Heatmap with one row per report (e.g. per dropout rate) and one column per
/// channel.
pub fn heatmap_svg(rows: &[(String, &ImportanceReport)]) -> String {
    let mut channels: Vec<&str> = Vec::new();
    for (_, r) in rows {
        for c in &r.channels {
            if !channels.contains(&c.channel.as_str()) {
                channels.push(&c.channel);
            }
        }
    }
    let scale = rows
        .iter()
        .flat_map(|(_, r)| r.channels.iter().map(|c| c.importance.abs()))
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let (cell_w, cell_h, left, top) = (70.0, 28.0, 110.0, 90.0);
    let width = left + cell_w * channels.len() as f64 + 20.0;
    let height = top + cell_h * rows.len() as f64 + 20.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    for (j, ch) in channels.iter().enumerate() {
        let x = left + cell_w * (j as f64 + 0.5);
        let _ = writeln!(
            svg,
            "<text x=\"{x}\" y=\"{}\" transform=\"rotate(-40 {x} {})\">{}</text>",
            top - 8.0,
            top - 8.0,
            xml_escape(ch)
        );
    }
    for (i, (label, report)) in rows.iter().enumerate() {
        let y = top + cell_h * i as f64;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            left - 6.0,
            y + cell_h * 0.65,
            xml_escape(label)
        );
        for (j, ch) in channels.iter().enumerate() {
            let Some(entry) = report.get(ch) else { continue };
            let x = left + cell_w * j as f64;
            let _ = writeln!(
                svg,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell_w}\" height=\"{cell_h}\" fill=\"{}\" stroke=\"#888\"/>\
                 <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.3}</text>",
                importance_color(entry.importance, scale),
                x + cell_w / 2.0,
                y + cell_h * 0.65,
                entry.importance
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

pub(crate) fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `path` as CSV and a heatmap image next to it (`.svg`).
pub fn heatmap_export(report: &ImportanceReport, path: &Path) -> Result<()> {
    std::fs::write(path, report_csv(report)).map_err(|e| Error::io(path, e))?;
    let label = format!("d={}", report.dropout_rate);
    let svg_path = path.with_extension("svg");
    let svg = heatmap_svg(&[(label, report)]);
    std::fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::preset;
    use crate::envs::make_env;

    fn report(imps: &[(&str, f64)]) -> ImportanceReport {
        let scores: Vec<(String, f64)> = imps.iter().map(|(n, i)| (n.to_string(), 100.0 * (1.0 + i))).collect();
        ImportanceReport::from_scores(100.0, &scores, 0.1, 0.05, 0)
    }

    #[test]
    fn verdict_thresholds() {
        let r = report(&[("a", -0.3), ("b", 0.0), ("c", 0.2)]);
        let v: Vec<_> = r.channels.iter().map(|c| c.verdict).collect();
        assert_eq!(v, [Verdict::Essential, Verdict::Neutral, Verdict::Malicious]);
        assert_eq!(verdict(-0.05, 0.05), Verdict::Essential);
        assert_eq!(verdict(0.05, 0.05), Verdict::Malicious);
    }

    #[test]
    fn non_positive_base_keeps_sign() {
        assert!(importance(-5.0, -2.0) < 0.0);
        assert!(importance(1.0, 0.0) > 0.0);
        assert_eq!(importance(1.0, 0.0), 1.0);
    }

    #[test]
    fn prune_rules() {
        let env = make_env("diagnostic").unwrap();
        let space = preset("Ours+x", env.spec()).unwrap();
        let all: Vec<(&str, f64)> = vec![("core_rate", -0.5), ("signal_1", -0.4), ("signal_2", -0.3), ("deceptive", -0.2)];
        assert_eq!(prune(&space, &report(&all)).unwrap(), space);

        let mal = report(&[("core_rate", -0.5), ("signal_1", -0.4), ("signal_2", -0.3), ("deceptive", 0.2)]);
        let pruned = prune(&space, &mal).unwrap();
        assert_eq!(pruned.channel_names(), ["core_rate", "signal_1", "signal_2"]);
        assert_eq!(pruned_channels(&space, &pruned), ["deceptive"]);
        assert_eq!(prune(&pruned, &mal).unwrap(), pruned);

        let none = report(&[("core_rate", 0.01), ("signal_1", -0.02), ("signal_2", 0.0), ("deceptive", 0.3)]);
        let single = prune(&space, &none).unwrap();
        assert_eq!(single.channel_names(), ["signal_1"]);
        assert_eq!(prune(&single, &none).unwrap(), single);

        let partial = report(&[("core_rate", -0.5)]);
        assert!(prune(&space, &partial).is_err());
    }

    #[test]
    fn csv_and_colors() {
        let empty = ImportanceReport::from_scores(1.0, &[], 0.1, 0.05, 0);
        assert_eq!(report_csv(&empty), "channel,importance,verdict\n");
        let r = report(&[("a", -0.3), ("b", 0.0), ("c", 0.2)]);
        let csv = report_csv(&r);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(3).unwrap().ends_with(",malicious"));
        assert_eq!(importance_color(0.0, 1.0), "#ffffff");
        assert_eq!(importance_color(1.0, 1.0), "#ff0000");
        assert!(importance_color(-1.0, 1.0).starts_with("#00"));
    }
}
