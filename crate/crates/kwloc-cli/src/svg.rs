//! Static SVG rendering of one localisation: the feature heatmap, the true
//! word spans, the relevance curve, and the proposed frame. Output bytes are
//! a pure function of the inputs.

use kwloc_core::corpus::Utterance;
use kwloc_core::eval::Category;
use kwloc_core::model::Proposal;
use std::fmt::Write;

const WIDTH: f64 = 960.0;
const MARGIN: f64 = 40.0;
const HEAT_TOP: f64 = 60.0;
const HEAT_HEIGHT: f64 = 130.0;
const CURVE_TOP: f64 = 210.0;
const CURVE_HEIGHT: f64 = 110.0;
const TOTAL_HEIGHT: f64 = 360.0;

fn gray(level: f64) -> String {
    let v = (level.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{v:02x}{v:02x}{v:02x}")
}

pub fn render_localisation(
    utterance: &Utterance<f32>,
    keyword: &str,
    proposal: &Proposal<f32>,
    category: Category,
    theta: f64,
) -> String {
    let (t, f) = (
        utterance.features.shape()[0],
        utterance.features.shape()[1],
    );
    let plot_w = WIDTH - 2.0 * MARGIN;
    let cell_w = plot_w / t as f64;
    let cell_h = HEAT_HEIGHT / f as f64;
    let frame_x = |frame: f64| MARGIN + frame * cell_w;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{TOTAL_HEIGHT}" viewBox="0 0 {WIDTH} {TOTAL_HEIGHT}">"#
    );
    let _ = write!(
        svg,
        r#"<rect width="{WIDTH}" height="{TOTAL_HEIGHT}" fill="white"/>"#
    );

    // Header: utterance, keyword, score, decision.
    let decision = match proposal.frame {
        Some(frame) => format!("frame {frame} ({})", category.as_str()),
        None => "no proposal".to_string(),
    };
    let _ = write!(
        svg,
        r#"<text x="{MARGIN}" y="24" font-family="monospace" font-size="15">{} / keyword '{}'</text>"#,
        utterance.id, keyword
    );
    let _ = write!(
        svg,
        r#"<text x="{MARGIN}" y="44" font-family="monospace" font-size="13">score {:.4} vs theta {:.2} - {}</text>"#,
        proposal.score, theta, decision
    );

    // Feature heatmap, min-max normalized.
    let data = utterance.features.data();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in data {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    let range = if hi > lo { hi - lo } else { 1.0 };
    for frame in 0..t {
        for feat in 0..f {
            let v = (data[frame * f + feat] as f64 - lo) / range;
            let _ = write!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                frame_x(frame as f64),
                HEAT_TOP + feat as f64 * cell_h,
                cell_w + 0.05,
                cell_h + 0.05,
                gray(v)
            );
        }
    }

    // Span boundaries and word labels.
    for span in &utterance.spans {
        let x0 = frame_x(span.start as f64);
        let x1 = frame_x(span.end as f64 + 1.0);
        let _ = write!(
            svg,
            r##"<line x1="{x0:.2}" y1="{:.2}" x2="{x0:.2}" y2="{:.2}" stroke="#2060c0" stroke-width="1"/>"##,
            HEAT_TOP - 4.0,
            CURVE_TOP + CURVE_HEIGHT + 4.0
        );
        let cx = (x0 + x1) / 2.0;
        let _ = write!(
            svg,
            r#"<text x="{cx:.2}" y="{:.2}" font-family="monospace" font-size="11" text-anchor="middle">{}</text>"#,
            HEAT_TOP + HEAT_HEIGHT + 16.0,
            span.word
        );
    }
    let right = frame_x(t as f64);
    let _ = write!(
        svg,
        r##"<line x1="{right:.2}" y1="{:.2}" x2="{right:.2}" y2="{:.2}" stroke="#2060c0" stroke-width="1"/>"##,
        HEAT_TOP - 4.0,
        CURVE_TOP + CURVE_HEIGHT + 4.0
    );

    // Relevance curve at input-frame resolution.
    let weights: Vec<f64> = proposal.curve.iter().map(|&v| v.max(0.0) as f64).collect();
    let total: f64 = weights.iter().sum();
    let peak = weights.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let mut points = String::new();
    for (i, &wv) in weights.iter().enumerate() {
        let input_frame = proposal.frame_map.input_frame(i);
        let x = frame_x(input_frame as f64 + 0.5);
        let y = CURVE_TOP + CURVE_HEIGHT * (1.0 - wv / peak);
        let _ = write!(points, "{x:.2},{y:.2} ");
    }
    let _ = write!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#c03020" stroke-width="1.5"/>"##,
        points.trim_end()
    );
    let _ = write!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-family="monospace" font-size="12" text-anchor="end">curve mass = {:.3}</text>"#,
        WIDTH - MARGIN,
        CURVE_TOP - 8.0,
        total
    );

    // Proposed frame marker.
    if let Some(frame) = proposal.frame {
        let x = frame_x(frame as f64 + 0.5);
        let _ = write!(
            svg,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#c03020" stroke-width="2" stroke-dasharray="4 3"/>"##,
            HEAT_TOP - 8.0,
            CURVE_TOP + CURVE_HEIGHT
        );
    }

    let _ = write!(
        svg,
        r#"<text x="{MARGIN}" y="{:.2}" font-family="monospace" font-size="11">frames 0..{}</text>"#,
        TOTAL_HEIGHT - 12.0,
        t - 1
    );
    svg.push_str("</svg>\n");
    svg
}
