//! Training-curve CSV and SVG line charts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::optim::EpochRecord;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurveFiles {
    pub csv: PathBuf,
    pub accuracy_svg: PathBuf,
    pub loss_svg: PathBuf,
}

impl CurveFiles {
    pub fn all(&self) -> [&Path; 3] {
        [&self.csv, &self.accuracy_svg, &self.loss_svg]
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// `epoch,train_loss,val_loss,train_acc,val_acc`; absent validation
/// values are empty fields.
pub fn curves_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,train_acc,val_acc\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.epoch,
            r.train_loss,
            opt(r.val_loss),
            r.train_acc,
            opt(r.val_acc)
        );
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

/// Line chart of one or two series over epochs.
pub fn line_chart_svg(title: &str, series: &[(&str, &str, Vec<(f64, f64)>)]) -> String {
    let points = series.iter().flat_map(|(_, _, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        W / 2.0
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{PAD},{PAD} {PAD},{} {},{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{y0:.3}</text>"#,
        H - PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{PAD}" font-family="sans-serif" font-size="11" text-anchor="end">{y1:.3}</text>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">epoch</text>"#,
        W / 2.0,
        H - 15.0
    );
    for (i, (name, color, pts)) in series.iter().enumerate() {
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            coords.join(" ")
        );
        let ly = PAD + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="12" fill="{color}">{name}</text>"#,
            W - PAD - 90.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn series(records: &[EpochRecord], f: impl Fn(&EpochRecord) -> Option<f64>) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter_map(|r| f(r).map(|v| (r.epoch as f64, v)))
        .collect()
}

/// Writes `<stem>_curves.csv`, `<stem>_accuracy.svg` and `<stem>_loss.svg`
/// under `dir`.
pub fn emit_curves(records: &[EpochRecord], dir: &Path, stem: &str) -> Result<CurveFiles> {
    if records.is_empty() {
        return Err(Error::InvalidParam("no epoch records to emit".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = CurveFiles {
        csv: dir.join(format!("{stem}_curves.csv")),
        accuracy_svg: dir.join(format!("{stem}_accuracy.svg")),
        loss_svg: dir.join(format!("{stem}_loss.svg")),
    };
    let acc = line_chart_svg(
        &format!("{stem}: accuracy"),
        &[
            ("train", "#1f77b4", series(records, |r| Some(r.train_acc))),
            ("validation", "#ff7f0e", series(records, |r| r.val_acc)),
        ],
    );
    let loss = line_chart_svg(
        &format!("{stem}: loss"),
        &[
            ("train", "#1f77b4", series(records, |r| Some(r.train_loss))),
            ("validation", "#ff7f0e", series(records, |r| r.val_loss)),
        ],
    );
    for (path, body) in [
        (&files.csv, curves_csv(records)),
        (&files.accuracy_svg, acc),
        (&files.loss_svg, loss),
    ] {
        std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize) -> Vec<EpochRecord> {
        (0..n)
            .map(|e| EpochRecord {
                epoch: e,
                train_loss: 1.0 / (1.0 + e as f64),
                val_loss: Some(1.2 / (1.0 + e as f64)),
                train_acc: 0.5 + 0.003 * e as f64,
                val_acc: None,
            })
            .collect()
    }

    #[test]
    fn csv_has_header_and_one_row_per_epoch() {
        let csv = curves_csv(&records(150));
        assert_eq!(csv.lines().count(), 151);
        assert!(csv.starts_with("epoch,train_loss,val_loss,train_acc,val_acc\n0,1,1.2,0.5,\n"));
    }

    #[test]
    fn files_written() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_curves(&records(20), dir.path(), "text").unwrap();
        for p in files.all() {
            assert!(std::fs::metadata(p).unwrap().len() > 0, "{}", p.display());
        }
        let svg = std::fs::read_to_string(&files.loss_svg).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }

    #[test]
    fn empty_records_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_curves(&[], dir.path(), "x").is_err());
    }

    #[test]
    fn unwritable_path_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = emit_curves(&records(2), &blocker.join("sub"), "x").unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
