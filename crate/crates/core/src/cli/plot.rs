use std::fmt::Write as _;

use crate::pipeline::{TrialReport, STAGE_CRITICAL, STAGE_FINAL, STAGE_KINEMATIC, STAGE_VISION};

const WIDTH: f64 = 1000.0;
const MARGIN: f64 = 130.0;
const PANEL_H: f64 = 60.0;
const LANE_H: f64 = 24.0;

const STAGE_COLOURS: [(&str, &str); 4] = [
    (STAGE_CRITICAL, "#999999"),
    (STAGE_KINEMATIC, "#1f77b4"),
    (STAGE_VISION, "#2ca02c"),
    (STAGE_FINAL, "#d62728"),
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Static SVG of a report: one panel per stored profile, then one lane of
/// vertical markers per stage and for the ground truth when present. Every
/// marker carries the `marker` class.
pub fn render_svg(report: &TrialReport) -> String {
    let len = report.trial_length.max(2) as f64;
    let x_of = |frame: f64| MARGIN + frame / (len - 1.0) * (WIDTH - MARGIN - 10.0);

    let profiles: Vec<(&String, &Vec<f64>)> = report.profiles.iter().flatten().collect();
    let mut lanes: Vec<(String, &str, &[usize])> = Vec::new();
    if let Some(truth) = &report.ground_truth {
        lanes.push(("ground_truth".to_string(), "#000000", truth));
    }
    for (stage, colour) in STAGE_COLOURS {
        if let Some(s) = report.stage(stage) {
            lanes.push((stage.to_string(), colour, &s.points));
        }
    }
    // stages outside the fixed set still get a lane
    for (name, s) in &report.stages {
        if !STAGE_COLOURS.iter().any(|(n, _)| n == name) {
            lanes.push((name.clone(), "#7f7f7f", &s.points));
        }
    }

    let height = 40.0 + profiles.len() as f64 * (PANEL_H + 10.0) + lanes.len() as f64 * LANE_H + 20.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    let _ = writeln!(
        out,
        r#"<text x="10" y="20" font-family="sans-serif" font-size="14">{} ({} frames)</text>"#,
        escape(&report.trial_id),
        report.trial_length
    );

    let mut y = 40.0;
    for (name, values) in &profiles {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let _ = writeln!(
            out,
            r#"<text x="10" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            y + PANEL_H / 2.0,
            escape(name)
        );
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", x_of(i as f64), y + PANEL_H - (v - lo) / span * PANEL_H))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline class="profile" fill="none" stroke="#444444" stroke-width="0.8" points="{}"/>"##,
            pts.join(" ")
        );
        y += PANEL_H + 10.0;
    }

    for (name, colour, points) in &lanes {
        let _ = writeln!(
            out,
            r#"<text x="10" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            y + LANE_H * 0.7,
            escape(name)
        );
        for &p in points.iter() {
            let x = x_of(p as f64);
            let _ = writeln!(
                out,
                r#"<line class="marker" data-stage="{}" data-frame="{p}" x1="{x:.2}" x2="{x:.2}" y1="{:.1}" y2="{:.1}" stroke="{colour}" stroke-width="1.5"/>"#,
                escape(name),
                y + 2.0,
                y + LANE_H - 2.0
            );
        }
        y += LANE_H;
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Provenance, StageReport, REPORT_SCHEMA};
    use std::collections::BTreeMap;

    fn report(truth: Option<Vec<usize>>) -> TrialReport {
        let mut stages = BTreeMap::new();
        stages.insert(
            STAGE_FINAL.to_string(),
            StageReport {
                points: vec![10, 50],
                provenance: vec![Provenance::Fused; 2],
            },
        );
        let mut profiles = BTreeMap::new();
        profiles.insert("left<&>".to_string(), vec![0.0, 1.0, 0.5]);
        TrialReport {
            schema: REPORT_SCHEMA.to_string(),
            trial_id: "t&1".into(),
            trial_length: 100,
            seed: 0,
            stages,
            profiles: Some(profiles),
            ground_truth: truth,
        }
    }

    #[test]
    fn markers_follow_points_and_truth() {
        let svg = render_svg(&report(Some(vec![12])));
        assert_eq!(svg.matches(r#"class="marker""#).count(), 3);
        assert!(svg.contains("t&amp;1"));
        assert!(svg.contains("left&lt;&amp;&gt;"));
        let svg = render_svg(&report(None));
        assert_eq!(svg.matches(r#"class="marker""#).count(), 2);
        assert!(!svg.contains("ground_truth"));
    }

    #[test]
    fn constant_profiles_do_not_divide_by_zero() {
        let mut r = report(None);
        r.profiles = Some(BTreeMap::from([("flat".to_string(), vec![2.0; 4])]));
        assert!(!render_svg(&r).contains("NaN"));
    }
}
