//! Reliability-diagram reporting: pure post-processing of the sweep's curves
//! CSV into per-method curve CSVs and line-plot SVGs with a diagonal
//! reference. No model evaluation happens here, so reporting twice over the
//! same inputs is byte-identical.

use crate::error::{HarnessError, Result};
use crate::sweep::CURVES_HEADER;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub nominal: f64,
    pub empirical: f64,
    pub method: String,
    pub alpha: String,
}

/// Parse a curves CSV (schema `nominal,empirical,method,alpha`), reporting
/// the offending line on malformed input.
pub fn parse_curves(path_label: &str, text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CURVES_HEADER => {}
        Some((_, header)) => {
            return Err(HarnessError::Parse {
                path: path_label.to_string(),
                line: 1,
                msg: format!("expected header {CURVES_HEADER:?}, found {header:?}"),
            })
        }
        None => {
            return Err(HarnessError::Parse {
                path: path_label.to_string(),
                line: 1,
                msg: "empty file".to_string(),
            })
        }
    }
    let mut points = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(HarnessError::Parse {
                path: path_label.to_string(),
                line: idx + 1,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|e| HarnessError::Parse {
                path: path_label.to_string(),
                line: idx + 1,
                msg: format!("bad {what} {s:?}: {e}"),
            })
        };
        points.push(CurvePoint {
            nominal: parse(fields[0], "nominal")?,
            empirical: parse(fields[1], "empirical")?,
            method: fields[2].to_string(),
            alpha: fields[3].to_string(),
        });
    }
    Ok(points)
}

/// Write `reliability_<method>.csv` and `reliability_<method>.svg` for every
/// method present in the curves file. Returns the written file names.
pub fn report(curves_path: &Path, out_dir: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(curves_path)
        .map_err(|e| HarnessError::Io(format!("cannot read {}: {e}", curves_path.display())))?;
    let points = parse_curves(&curves_path.display().to_string(), &text)?;
    std::fs::create_dir_all(out_dir)?;

    // method -> alpha label -> curve, keyed by the CSV's own string forms so
    // grouping never re-rounds anything.
    let mut grouped: BTreeMap<String, BTreeMap<String, Vec<(f64, f64)>>> = BTreeMap::new();
    for p in &points {
        grouped
            .entry(p.method.clone())
            .or_default()
            .entry(p.alpha.clone())
            .or_default()
            .push((p.nominal, p.empirical));
    }

    let mut written = Vec::new();
    for (method, curves) in &grouped {
        let csv_name = format!("reliability_{method}.csv");
        let mut csv = String::from(CURVES_HEADER);
        csv.push('\n');
        let mut alphas: Vec<&String> = curves.keys().collect();
        alphas.sort_by(|a, b| {
            let fa: f64 = a.parse().unwrap_or(f64::NAN);
            let fb: f64 = b.parse().unwrap_or(f64::NAN);
            fa.partial_cmp(&fb).unwrap_or(std::cmp::Ordering::Equal)
        });
        for alpha in &alphas {
            for (n, e) in &curves[*alpha] {
                csv.push_str(&format!("{n},{e},{method},{alpha}\n"));
            }
        }
        std::fs::write(out_dir.join(&csv_name), csv)?;
        written.push(csv_name);

        let svg_name = format!("reliability_{method}.svg");
        let svg = render_svg(method, &alphas, curves);
        std::fs::write(out_dir.join(&svg_name), svg)?;
        written.push(svg_name);
    }
    Ok(written)
}

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#ad494a",
];

fn render_svg(
    method: &str,
    alphas: &[&String],
    curves: &BTreeMap<String, Vec<(f64, f64)>>,
) -> String {
    let size = 560.0;
    let margin = 60.0;
    let span = size - 2.0 * margin;
    let x = |v: f64| margin + v * span;
    let y = |v: f64| size - margin - v * span;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n<text x=\"{:.1}\" y=\"30\" font-family=\"monospace\" font-size=\"16\">reliability: {method}</text>\n",
        margin
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        x(0.0),
        y(0.0),
        x(1.0),
        y(0.0)
    ));
    svg.push_str(&format!(
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        x(0.0),
        y(0.0),
        x(0.0),
        y(1.0)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\">nominal</text>\n",
        x(0.42),
        y(0.0) + 35.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\" transform=\"rotate(-90 {:.1} {:.1})\">empirical</text>\n",
        x(0.0) - 35.0,
        y(0.42),
        x(0.0) - 35.0,
        y(0.42)
    ));
    // perfect-calibration diagonal
    svg.push_str(&format!(
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n",
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    ));
    for (i, alpha) in alphas.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> =
            curves[*alpha].iter().map(|(n, e)| format!("{:.2},{:.2}", x(*n), y(*e))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" fill=\"{color}\">alpha={alpha}</text>\n",
            x(1.0) - 110.0,
            y(1.0) + 14.0 * (i as f64 + 1.0)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_csv() -> String {
        let mut s = String::from(CURVES_HEADER);
        s.push('\n');
        for i in 1..=9 {
            let n = i as f64 / 10.0;
            s.push_str(&format!("{n},{},LL,1\n", n * n));
            s.push_str(&format!("{n},{n},sTS,1\n"));
        }
        s
    }

    #[test]
    fn parse_roundtrip() {
        let parsed = parse_curves("mem", &sample_csv()).unwrap();
        assert_eq!(parsed.len(), 18);
        assert_eq!(parsed[0].method, "LL");
    }

    #[test]
    fn parse_error_carries_line_number() {
        let mut bad = sample_csv();
        bad.push_str("0.5,oops,LL,1\n");
        match parse_curves("mem", &bad) {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 20),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn report_twice_is_byte_identical() {
        let dir = std::env::temp_dir().join(format!("alphacal-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let curves = dir.join("curves.csv");
        std::fs::write(&curves, sample_csv()).unwrap();
        let out_a = dir.join("a");
        let out_b = dir.join("b");
        let files_a = report(&curves, &out_a).unwrap();
        let files_b = report(&curves, &out_b).unwrap();
        assert_eq!(files_a, files_b);
        for f in &files_a {
            assert_eq!(
                std::fs::read(out_a.join(f)).unwrap(),
                std::fs::read(out_b.join(f)).unwrap(),
                "{f} differs"
            );
        }
        assert!(files_a.contains(&"reliability_LL.svg".to_string()));
    }

    #[test]
    fn overconfident_curve_renders_below_diagonal() {
        // For an empirical-below-nominal curve, the polyline's y coordinates
        // sit below (greater pixel y than) the diagonal's at matching x.
        let dir = std::env::temp_dir().join(format!("alphacal-report-oc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let curves = dir.join("curves.csv");
        std::fs::write(&curves, sample_csv()).unwrap();
        report(&curves, &dir).unwrap();
        let svg = std::fs::read_to_string(dir.join("reliability_LL.svg")).unwrap();
        let poly = svg
            .lines()
            .find(|l| l.starts_with("<polyline"))
            .expect("polyline missing");
        let coords: Vec<(f64, f64)> = poly
            .split('"')
            .nth(1)
            .unwrap()
            .split(' ')
            .map(|p| {
                let mut it = p.split(',');
                (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
            })
            .collect();
        // Diagonal at pixel x has pixel y = 560 - x (margins symmetric).
        for (px, py) in coords {
            let diag_y = 560.0 - px;
            assert!(py >= diag_y - 0.5, "point ({px},{py}) above the diagonal");
        }
    }
}
