//! Score-versus-SNR line charts drawn directly into an RGB raster.
//!
//! Colors identify schemes (`deepssc` blue, `no_ii` red, `integrated`
//! green). Bob is a solid line with filled markers, Eve a dashed line with
//! hollow markers. The y axis spans [0, 1] with gridlines every 0.1 and the
//! x axis spans the sweep with a gridline at each SNR point.

use image::{Rgb, RgbImage};

use super::{Scheme, SweepResult, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Bob and Eve 1-gram BLEU.
    Bleu1,
    /// Bob and Eve 3-gram BLEU.
    Bleu3,
    /// 1-gram (solid) and 3-gram (dashed) S-BLEU.
    Sbleu,
}

const WIDTH: u32 = 640;
const HEIGHT: u32 = 480;
const MARGIN: f64 = 48.0;

fn color(scheme: Scheme) -> Rgb<u8> {
    match scheme {
        Scheme::Deepssc => Rgb([31, 89, 200]),
        Scheme::NoIi => Rgb([210, 45, 40]),
        Scheme::Integrated => Rgb([40, 150, 60]),
    }
}

struct Canvas {
    img: RgbImage,
    x_range: (f64, f64),
}

impl Canvas {
    fn to_px(&self, snr: f64, score: f64) -> (f64, f64) {
        let (lo, hi) = self.x_range;
        let span = if hi > lo { hi - lo } else { 1.0 };
        let w = f64::from(WIDTH) - 2.0 * MARGIN;
        let h = f64::from(HEIGHT) - 2.0 * MARGIN;
        let fx = if hi > lo { (snr - lo) / span } else { 0.5 };
        (MARGIN + fx * w, MARGIN + (1.0 - score.clamp(0.0, 1.0)) * h)
    }

    fn dot(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && x < i64::from(WIDTH) && y < i64::from(HEIGHT) {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb<u8>, thick: i64, dash: Option<f64>) {
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let steps = len.ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            if let Some(d) = dash {
                if ((t * len) / d) as i64 % 2 == 1 {
                    continue;
                }
            }
            let x = (a.0 + t * (b.0 - a.0)).round() as i64;
            let y = (a.1 + t * (b.1 - a.1)).round() as i64;
            for dx in 0..thick {
                for dy in 0..thick {
                    self.dot(x + dx - thick / 2, y + dy - thick / 2, c);
                }
            }
        }
    }

    fn marker(&mut self, p: (f64, f64), c: Rgb<u8>, filled: bool) {
        let (cx, cy) = (p.0.round() as i64, p.1.round() as i64);
        for dx in -4..=4i64 {
            for dy in -4..=4i64 {
                if filled || dx.abs() == 4 || dy.abs() == 4 {
                    self.dot(cx + dx, cy + dy, c);
                }
            }
        }
    }

    fn series(&mut self, points: &[(f64, f64)], c: Rgb<u8>, dashed: bool) {
        let px: Vec<_> = points.iter().map(|&(x, y)| self.to_px(x, y)).collect();
        for w in px.windows(2) {
            self.line(w[0], w[1], c, 2, dashed.then_some(6.0));
        }
        for &p in &px {
            self.marker(p, c, !dashed);
        }
    }
}

fn series_for(rows: &[&SweepRow], kind: PlotKind) -> [Vec<(f64, f64)>; 2] {
    let pick = |f: fn(&SweepRow) -> f64| rows.iter().map(|r| (r.snr_db, f(r))).collect::<Vec<_>>();
    match kind {
        PlotKind::Bleu1 => [pick(|r| r.bleu1_bob), pick(|r| r.bleu1_eve)],
        PlotKind::Bleu3 => [pick(|r| r.bleu3_bob), pick(|r| r.bleu3_eve)],
        PlotKind::Sbleu => [pick(|r| r.sbleu1), pick(|r| r.sbleu3)],
    }
}

pub fn plot_scores(result: &SweepResult, kind: PlotKind) -> RgbImage {
    let lo = result.rows.iter().map(|r| r.snr_db).fold(f64::INFINITY, f64::min);
    let hi = result.rows.iter().map(|r| r.snr_db).fold(f64::NEG_INFINITY, f64::max);
    let mut canvas = Canvas {
        img: RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255])),
        x_range: (lo, hi),
    };
    let grid = Rgb([225, 225, 225]);
    let axis = Rgb([0, 0, 0]);
    for k in 0..=10 {
        let y = f64::from(k) / 10.0;
        let a = canvas.to_px(lo, y);
        let b = canvas.to_px(hi, y);
        canvas.line((MARGIN, a.1), (f64::from(WIDTH) - MARGIN, b.1), grid, 1, None);
    }
    let mut snrs: Vec<f64> = result.rows.iter().map(|r| r.snr_db).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    for &s in &snrs {
        let top = canvas.to_px(s, 1.0);
        let bottom = canvas.to_px(s, 0.0);
        canvas.line(top, bottom, grid, 1, None);
    }
    let bottom = f64::from(HEIGHT) - MARGIN;
    canvas.line((MARGIN, MARGIN), (MARGIN, bottom), axis, 2, None);
    canvas.line((MARGIN, bottom), (f64::from(WIDTH) - MARGIN, bottom), axis, 2, None);

    for scheme in result.schemes() {
        let rows = result.scheme_rows(scheme);
        let [solid, dashed] = series_for(&rows, kind);
        canvas.series(&dashed, color(scheme), true);
        canvas.series(&solid, color(scheme), false);
    }
    canvas.img
}
