//! F1/F2 vowel chart: 2σ ellipses for the ADS categories and the teaching
//! samples, with the corner-vowel triangle of each.

use std::fmt::Write;

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use pedagogue::phoneme::{CategoryModel, CORNER_VOWELS};

use crate::config::CliError;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 60.0;
const ADS_COLOR: &str = "#1f77b4";
const TEACH_COLOR: &str = "#d62728";

/// Pixel-space ellipse: centre, semi-axes and rotation in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
}

/// Maps (F2, F1) in Hz to pixels; F2 grows leftwards, F1 downwards.
struct Frame {
    f2: (f64, f64),
    f1: (f64, f64),
}

impl Frame {
    fn fit(stats: &[(DVector<f64>, DMatrix<f64>)]) -> Self {
        let mut f1 = (f64::INFINITY, f64::NEG_INFINITY);
        let mut f2 = f1;
        for (m, c) in stats {
            let (s1, s2) = (2.5 * c[(0, 0)].sqrt(), 2.5 * c[(1, 1)].sqrt());
            f1 = (f1.0.min(m[0] - s1), f1.1.max(m[0] + s1));
            f2 = (f2.0.min(m[1] - s2), f2.1.max(m[1] + s2));
        }
        Frame { f2, f1 }
    }

    fn sx(&self) -> f64 {
        (WIDTH - 2.0 * MARGIN) / (self.f2.1 - self.f2.0)
    }

    fn sy(&self) -> f64 {
        (HEIGHT - 2.0 * MARGIN) / (self.f1.1 - self.f1.0)
    }

    fn point(&self, f1: f64, f2: f64) -> (f64, f64) {
        (MARGIN + (self.f2.1 - f2) * self.sx(), MARGIN + (f1 - self.f1.0) * self.sy())
    }

    fn ellipse(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Ellipse {
        let (cx, cy) = self.point(mean[0], mean[1]);
        // (F2, F1) covariance pushed through the axis map before decomposing
        let j = Matrix2::new(-self.sx(), 0.0, 0.0, self.sy());
        let c = Matrix2::new(cov[(1, 1)], cov[(1, 0)], cov[(0, 1)], cov[(0, 0)]);
        let eig = SymmetricEigen::new(j * c * j.transpose());
        let (major, minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
        let v = eig.eigenvectors.column(major);
        Ellipse {
            cx,
            cy,
            rx: 2.0 * eig.eigenvalues[major].max(0.0).sqrt(),
            ry: 2.0 * eig.eigenvalues[minor].max(0.0).sqrt(),
            angle: v[1].atan2(v[0]).to_degrees(),
        }
    }
}

fn ads_stats(model: &CategoryModel) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    model.phonemes().iter().map(|p| (p.mean.clone(), p.cov.clone())).collect()
}

/// One row per category and source with the pixel-space ellipse.
pub fn ellipse_csv(model: &CategoryModel, teach: &[(DVector<f64>, DMatrix<f64>)]) -> String {
    let ads = ads_stats(model);
    let frame = Frame::fit(&ads.iter().chain(teach).cloned().collect::<Vec<_>>());
    let mut out = String::from("label,source,f1,f2,cx,cy,rx,ry,angle_deg\n");
    for (source, stats) in [("ADS", &ads[..]), ("TEACHING", teach)] {
        for (p, (m, c)) in model.phonemes().iter().zip(stats) {
            let e = frame.ellipse(m, c);
            let _ = writeln!(
                out,
                "{},{source},{},{},{:.3},{:.3},{:.3},{:.3},{:.3}",
                p.label, m[0], m[1], e.cx, e.cy, e.rx, e.ry, e.angle
            );
        }
    }
    out
}

pub fn chart(model: &CategoryModel, teach: &[(DVector<f64>, DMatrix<f64>)]) -> Result<String, CliError> {
    if model.dim() < 2 {
        return Err(CliError::data("the chart needs F1 and F2"));
    }
    let ads = ads_stats(model);
    let frame = Frame::fit(&ads.iter().chain(teach).cloned().collect::<Vec<_>>());
    let corners: Vec<usize> = CORNER_VOWELS
        .iter()
        .map(|c| model.index_of(c).ok_or_else(|| CliError::data(format!("missing corner vowel {c}"))))
        .collect::<Result<_, _>>()?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, y0) = (MARGIN, MARGIN);
    let (x1, y1) = (WIDTH - MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#999"/>"##, x1 - x0, y1 - y0);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">F2 (Hz) {:.0} ← {:.0}</text>"#,
        WIDTH / 2.0,
        MARGIN - 20.0,
        frame.f2.0,
        frame.f2.1
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" transform="rotate(90 {} {})">F1 (Hz) {:.0} → {:.0}</text>"#,
        WIDTH - MARGIN + 25.0,
        HEIGHT / 2.0,
        WIDTH - MARGIN + 25.0,
        HEIGHT / 2.0,
        frame.f1.0,
        frame.f1.1
    );

    for (source, stats, color) in [("ADS", &ads[..], ADS_COLOR), ("TEACHING", teach, TEACH_COLOR)] {
        let _ = writeln!(s, r#"<g class="{}" stroke="{color}" fill="none">"#, source.to_lowercase());
        for (p, (m, c)) in model.phonemes().iter().zip(stats) {
            let e = frame.ellipse(m, c);
            let _ = writeln!(
                s,
                r#"<ellipse cx="{:.2}" cy="{:.2}" rx="{:.2}" ry="{:.2}" transform="rotate({:.2} {:.2} {:.2})"><title>{} {source}</title></ellipse>"#,
                e.cx, e.cy, e.rx, e.ry, e.angle, e.cx, e.cy, p.label
            );
        }
        let pts: Vec<String> = corners
            .iter()
            .map(|&i| {
                let (x, y) = frame.point(stats[i].0[0], stats[i].0[1]);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(s, r#"<polygon points="{}" stroke-dasharray="4 3"/>"#, pts.join(" "));
        let _ = writeln!(s, "</g>");
    }
    for (p, (m, _)) in model.phonemes().iter().zip(&ads) {
        let (x, y) = frame.point(m[0], m[1]);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="middle" fill="{ADS_COLOR}">{}</text>"#, p.label);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" fill="{ADS_COLOR}">ADS</text><text x="{}" y="{}" fill="{TEACH_COLOR}">TEACHING</text>"#,
        MARGIN,
        HEIGHT - 20.0,
        MARGIN + 60.0,
        HEIGHT - 20.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}
