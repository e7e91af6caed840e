//! Static SVG rendering of recovered floor-level lines.

use std::fmt::Write;

use crate::io::LinesDocument;

/// Stroke color for a floor order: orange for 1, green for 2, then a fixed
/// cycle for higher orders.
pub fn order_color(order: u8) -> &'static str {
    const CYCLE: [&str; 8] = ["#1f77b4", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"];
    match order {
        1 => "#ff7f0e",
        2 => "#2ca02c",
        o => CYCLE[(o as usize).saturating_sub(3) % CYCLE.len()],
    }
}

/// Renders each line as a colored segment with its order next to the left
/// endpoint; finite vanishing points inside the canvas get a small marker.
pub fn render_svg(doc: &LinesDocument, width: usize, height: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"  <rect width="{width}" height="{height}" fill="black" fill-opacity="0.05"/>"#);
    for facade in &doc.facades {
        let _ = writeln!(s, r#"  <g id="facade-{}" data-orientation="{}">"#, facade.id, facade.orientation);
        for line in &facade.lines {
            let color = order_color(line.order());
            let _ = writeln!(
                s,
                r#"    <line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="3" stroke-linecap="round"/>"#,
                line.xs(),
                line.ys(),
                line.xe(),
                line.ye()
            );
            let _ = writeln!(
                s,
                r#"    <text x="{:.2}" y="{:.2}" fill="{color}" font-family="sans-serif" font-size="12">{}</text>"#,
                line.xs() + 2.0,
                line.ys() - 4.0,
                line.order()
            );
        }
        if let Some(vp) = facade.vp {
            if vp.x >= 0.0 && vp.y >= 0.0 && vp.x <= width as f64 && vp.y <= height as f64 {
                let _ = writeln!(s, r#"    <circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="white"/>"#, vp.x, vp.y);
            }
        }
        s.push_str("  </g>\n");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Line5Tuple, Orientation, Point2};
    use crate::io::FacadeLines;

    #[test]
    fn first_two_orders_are_orange_and_green() {
        let doc = LinesDocument {
            image: "x".into(),
            facades: vec![FacadeLines {
                id: 0,
                orientation: Orientation::Left,
                vp: Some(Point2::new(10.0, 10.0)),
                lines: vec![
                    Line5Tuple::new(0.0, 50.0, 40.0, 45.0, 1).unwrap(),
                    Line5Tuple::new(0.0, 30.0, 40.0, 28.0, 2).unwrap(),
                ],
            }],
        };
        let svg = render_svg(&doc, 64, 64);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(r##"stroke="#ff7f0e""##));
        assert!(svg.contains(r##"stroke="#2ca02c""##));
        assert_eq!(svg.matches("<line ").count(), 2);
        assert!(svg.contains("<circle"));
    }
}
