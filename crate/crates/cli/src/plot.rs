//! Minimal SVG line chart: mean |d| against log10(λ), with a dashed
//! horizontal baseline at the unmodified model's mean |d|.

use biasvec_core::seat::SweepAggregate;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn fmt(x: f64) -> String {
    format!("{x:.2}")
}

/// Render aggregates (sorted by λ, positive λ only — log axis) to SVG.
pub fn sweep_svg(aggregates: &[SweepAggregate], baseline: f64) -> String {
    let points: Vec<(f64, f64)> = aggregates
        .iter()
        .filter(|a| a.lambda > 0.0)
        .map(|a| (a.lambda.log10(), a.mean_abs_d))
        .collect();

    let (x_min, x_max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)));
    let (x_min, x_max) =
        if points.len() < 2 { (x_min.min(0.0) - 1.0, x_max.max(0.0) + 1.0) } else { (x_min, x_max) };
    let y_max = points
        .iter()
        .map(|&(_, y)| y)
        .chain([baseline])
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.1;

    let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min).max(1e-9) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - y / y_max * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // axes
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN),
        fmt(H - MARGIN),
        fmt(W - MARGIN),
        fmt(H - MARGIN)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN),
        fmt(MARGIN),
        fmt(MARGIN),
        fmt(H - MARGIN)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">log10(lambda)</text>\n",
        fmt(W / 2.0),
        fmt(H - 12.0)
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 14 {})\">mean |d|</text>\n",
        fmt(H / 2.0),
        fmt(H / 2.0)
    ));
    // dashed baseline of the unmodified model
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"gray\" \
         stroke-dasharray=\"6,4\"/>\n",
        fmt(MARGIN),
        fmt(sy(baseline)),
        fmt(W - MARGIN),
        fmt(sy(baseline))
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"gray\">baseline {}</text>\n",
        fmt(W - MARGIN - 80.0),
        fmt(sy(baseline) - 4.0),
        fmt(baseline)
    ));
    // sweep polyline and markers
    if !points.is_empty() {
        let path: Vec<String> =
            points.iter().map(|&(x, y)| format!("{},{}", fmt(sx(x)), fmt(sy(y)))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in &points {
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"steelblue\"/>\n",
                fmt(sx(x)),
                fmt(sy(y))
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_points_and_baseline() {
        let aggs = vec![
            SweepAggregate { lambda: 0.1, mean_abs_d: 0.8, std_over_seeds: 0.1, mean_neutral_loss: 3.0 },
            SweepAggregate { lambda: 1.0, mean_abs_d: 0.3, std_over_seeds: 0.1, mean_neutral_loss: 3.5 },
            SweepAggregate { lambda: 10.0, mean_abs_d: 0.1, std_over_seeds: 0.1, mean_neutral_loss: 9.0 },
        ];
        let svg = sweep_svg(&aggs, 0.6);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("stroke-dasharray"));
        assert_eq!(svg.matches("<circle").count(), 3);
        // deterministic output
        assert_eq!(svg, sweep_svg(&aggs, 0.6));
    }

    #[test]
    fn nonpositive_lambdas_are_skipped() {
        let aggs = vec![SweepAggregate {
            lambda: 0.0,
            mean_abs_d: 0.8,
            std_over_seeds: 0.0,
            mean_neutral_loss: 3.0,
        }];
        let svg = sweep_svg(&aggs, 0.5);
        assert_eq!(svg.matches("<circle").count(), 0);
    }
}
