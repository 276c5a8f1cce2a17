//! CSV and SVG renderings of matrices and profiles.
//!
//! Values in `mi_matrix.csv` and `ie_profile.csv` use the shortest decimal
//! form that parses back to the same `f64`, so recomputation from the files
//! is exact. Report tables round to four decimals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CellOutcome, Level, MiMatrix};
use crate::error::{Error, Result};
use crate::types::{IEProfile, MIEstimate, ShotStat};

/// Row labels of `shot_report.csv`, after the `Statistics,shot1,…` header.
pub const SHOT_REPORT_ROWS: [&str; 6] = ["value", "SD", "SD_positions", "SD_bootstrap", "delta", "direction"];

/// First header cell of the source comparison table.
pub const COMPARE_FIRST_COLUMN: &str = "Text+Estimator";

#[derive(Debug, Serialize, Deserialize)]
struct MiRow {
    level: Level,
    l: usize,
    t: usize,
    bits: Option<f64>,
    epochs: Option<usize>,
    best_epoch: Option<usize>,
    seed: Option<u64>,
    status: String,
    note: String,
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// `level,l,t,bits,epochs,best_epoch,seed,status,note`, one row per cell.
pub fn render_mi_matrix(matrices: &[&MiMatrix]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in matrices {
        for l in 0..m.layer_pairs {
            for t in 0..m.tokens {
                let row = match m.get(l, t) {
                    CellOutcome::Done(e) => MiRow {
                        level: m.level,
                        l,
                        t,
                        bits: Some(e.value_bits),
                        epochs: Some(e.epochs_run),
                        best_epoch: Some(e.best_epoch),
                        seed: Some(e.seed),
                        status: "ok".into(),
                        note: String::new(),
                    },
                    CellOutcome::Failed { reason, .. } => MiRow {
                        level: m.level,
                        l,
                        t,
                        bits: None,
                        epochs: None,
                        best_epoch: None,
                        seed: None,
                        status: "failed".into(),
                        note: reason.clone(),
                    },
                    CellOutcome::Skipped => MiRow {
                        level: m.level,
                        l,
                        t,
                        bits: None,
                        epochs: None,
                        best_epoch: None,
                        seed: None,
                        status: "skipped".into(),
                        note: String::new(),
                    },
                };
                w.serialize(row).map_err(csv_error)?;
            }
        }
    }
    finish(w)
}

/// Parses `mi_matrix.csv` back into one matrix per level present.
pub fn read_mi_matrix(path: impl AsRef<Path>) -> Result<BTreeMap<&'static str, MiMatrix>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let rows: Vec<MiRow> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_error)?;
    let mut out = BTreeMap::new();
    for level in [Level::Macro, Level::Micro] {
        let mine: Vec<&MiRow> = rows.iter().filter(|r| r.level == level).collect();
        if mine.is_empty() {
            continue;
        }
        let pairs = mine.iter().map(|r| r.l).max().expect("non-empty") + 1;
        let tokens = mine.iter().map(|r| r.t).max().expect("non-empty") + 1;
        let mut cells = vec![CellOutcome::Skipped; pairs * tokens];
        for r in mine {
            cells[r.l * tokens + r.t] = match r.status.as_str() {
                "ok" => CellOutcome::Done(MIEstimate {
                    value_bits: r
                        .bits
                        .ok_or_else(|| Error::CorruptHeader(format!("cell ({},{}) has no bits", r.l, r.t)))?,
                    layer_pair: r.l,
                    token: r.t,
                    epochs_run: r.epochs.unwrap_or(0),
                    best_epoch: r.best_epoch.unwrap_or(0),
                    seed: r.seed.unwrap_or(0),
                }),
                "failed" => CellOutcome::Failed {
                    layer_pair: r.l,
                    token: r.t,
                    reason: r.note.clone(),
                },
                _ => CellOutcome::Skipped,
            };
        }
        out.insert(
            level.as_str(),
            MiMatrix {
                level,
                layer_pairs: pairs,
                tokens,
                cells,
            },
        );
    }
    Ok(out)
}

fn exact(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v}"))
}

fn rounded(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.4}"))
}

/// `t,e_hat,E_l0,…,E_l{L−2}`; gaps are empty fields.
pub fn render_ie_profile(profile: &IEProfile) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string(), "e_hat".to_string()];
    header.extend((0..profile.layer_pairs()).map(|l| format!("E_l{l}")));
    w.write_record(&header).map_err(csv_error)?;
    for t in 0..profile.tokens() {
        let mut rec = vec![t.to_string(), exact(profile.e_hat_by_token[t])];
        rec.extend(profile.e_by_layer.iter().map(|row| exact(row[t])));
        w.write_record(&rec).map_err(csv_error)?;
    }
    finish(w)
}

/// Parses `ie_profile.csv`; shot statistics are not part of the file.
pub fn read_ie_profile(path: impl AsRef<Path>) -> Result<IEProfile> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?.clone();
    if header.get(0) != Some("t") || header.get(1) != Some("e_hat") {
        return Err(Error::CorruptHeader(format!(
            "{} is not an ie_profile.csv",
            path.display()
        )));
    }
    let pairs = header.len() - 2;
    let mut e_by_layer = vec![Vec::new(); pairs];
    let mut e_hat_by_token = Vec::new();
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse()
            .map(Some)
            .map_err(|_| Error::CorruptHeader(format!("bad value {s:?} in {}", path.display())))
    };
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        e_hat_by_token.push(parse(&rec[1])?);
        for (l, row) in e_by_layer.iter_mut().enumerate() {
            row.push(parse(&rec[l + 2])?);
        }
    }
    Ok(IEProfile {
        e_by_layer,
        e_hat_by_token,
        shot_stats: None,
    })
}

/// Per-shot table in the layout `Statistics,shot1,shot2,…`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotReport {
    pub shots: Vec<ShotStat>,
}

impl ShotReport {
    /// Combined s.d.: root-sum-square of the positional and bootstrap parts.
    pub fn combined_sd(s: &ShotStat) -> f64 {
        let b = s.sd_bootstrap.unwrap_or(0.0);
        (s.sd_positions * s.sd_positions + b * b).sqrt()
    }

    /// Change of each shot's mean from the previous shot, if both exist.
    pub fn deltas(&self) -> Vec<Option<f64>> {
        self.shots
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let prev = i.checked_sub(1).map(|j| &self.shots[j])?;
                (prev.shot + 1 == s.shot).then_some(s.mean - prev.mean)
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["Statistics".to_string()];
        header.extend(self.shots.iter().map(|s| format!("shot{}", s.shot)));
        w.write_record(&header).map_err(csv_error)?;
        let deltas = self.deltas();
        let rows: [Vec<String>; 6] = [
            self.shots.iter().map(|s| rounded(Some(s.mean))).collect(),
            self.shots.iter().map(|s| rounded(Some(Self::combined_sd(s)))).collect(),
            self.shots.iter().map(|s| rounded(Some(s.sd_positions))).collect(),
            self.shots.iter().map(|s| rounded(s.sd_bootstrap)).collect(),
            deltas.iter().map(|d| rounded(*d)).collect(),
            deltas
                .iter()
                .map(|d| match d {
                    Some(d) if *d < 0.0 => "down".to_string(),
                    Some(_) => "up".to_string(),
                    None => String::new(),
                })
                .collect(),
        ];
        for (label, cells) in SHOT_REPORT_ROWS.iter().zip(rows) {
            let mut rec = vec![label.to_string()];
            rec.extend(cells);
            w.write_record(&rec).map_err(csv_error)?;
        }
        finish(w)
    }
}

/// The per-shot table of a profile that carries shot statistics.
pub fn shot_report(profile: &IEProfile) -> Result<ShotReport> {
    let shots = profile
        .shot_stats
        .clone()
        .ok_or_else(|| Error::InvalidArgument("profile has no shot statistics (not an ICL run)".into()))?;
    Ok(ShotReport { shots })
}

fn mean(values: &[Option<f64>]) -> Option<f64> {
    let mut sum = 0.0;
    for v in values {
        sum += (*v)?;
    }
    (!values.is_empty()).then(|| sum / values.len() as f64)
}

/// One row per labelled profile: `Text+Estimator,token0,…,mean`, plus
/// `delta_mean` against the first row when there is more than one profile.
pub fn compare_sources(profiles: &[(&str, &IEProfile)]) -> Result<String> {
    let Some((_, first)) = profiles.first() else {
        return Err(Error::InvalidArgument("no profiles to compare".into()));
    };
    let tokens = first.tokens();
    if let Some((label, p)) = profiles.iter().find(|(_, p)| p.tokens() != tokens) {
        return Err(Error::Shape(format!(
            "{label} has T = {}, expected {tokens}",
            p.tokens()
        )));
    }
    let comparing = profiles.len() > 1;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![COMPARE_FIRST_COLUMN.to_string()];
    header.extend((0..tokens).map(|t| format!("token{t}")));
    header.push("mean".into());
    if comparing {
        header.push("delta_mean".into());
    }
    w.write_record(&header).map_err(csv_error)?;
    let base = mean(&first.e_hat_by_token);
    for (label, p) in profiles {
        let m = mean(&p.e_hat_by_token);
        let mut rec = vec![label.to_string()];
        rec.extend(p.e_hat_by_token.iter().map(|v| rounded(*v)));
        rec.push(rounded(m));
        if comparing {
            rec.push(rounded(m.zip(base).map(|(a, b)| a - b)));
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    finish(w)
}

/// A line plot of `Ê(t)` for each labelled profile.
pub fn render_svg(profiles: &[(&str, &IEProfile)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 300.0;
    const PAD: f64 = 40.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let values: Vec<f64> = profiles
        .iter()
        .flat_map(|(_, p)| p.e_hat_by_token.iter().flatten().copied())
        .collect();
    let lo = values.iter().copied().fold(0.0f64, f64::min);
    let hi = values.iter().copied().fold(lo + 1e-9, f64::max);
    let tokens = profiles.iter().map(|(_, p)| p.tokens()).max().unwrap_or(1).max(2);
    let x = |t: usize| PAD + (W - 2.0 * PAD) * t as f64 / (tokens - 1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{0}" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}">token t</text>"#, W / 2.0 - 20.0, H - 8.0);
    let _ = writeln!(
        svg,
        r#"<text x="4" y="{}">{hi:.3}</text><text x="4" y="{}">{lo:.3}</text>"#,
        PAD,
        H - PAD
    );
    for (i, (label, p)) in profiles.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = p
            .e_hat_by_token
            .iter()
            .enumerate()
            .filter_map(|(t, v)| v.map(|v| format!("{:.2},{:.2}", x(t), y(v))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 100.0,
            PAD + 14.0 * i as f64,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::super::{compute_ie, MicroProtocol};
    use super::*;

    fn profile(values: &[f64]) -> IEProfile {
        IEProfile {
            e_by_layer: vec![values.iter().map(|&v| Some(v)).collect()],
            e_hat_by_token: values.iter().map(|&v| Some(v)).collect(),
            shot_stats: None,
        }
    }

    #[test]
    fn mi_matrix_roundtrips_exactly() {
        let est = |l, t, v| {
            CellOutcome::Done(MIEstimate {
                value_bits: v,
                layer_pair: l,
                token: t,
                epochs_run: 10,
                best_epoch: 3,
                seed: u64::MAX,
            })
        };
        let m = MiMatrix {
            level: Level::Macro,
            layer_pairs: 2,
            tokens: 2,
            cells: vec![
                est(0, 0, 0.1 + 0.2),
                CellOutcome::Failed {
                    layer_pair: 0,
                    token: 1,
                    reason: "divergent loss, epoch 3".into(),
                },
                est(1, 0, -1e-300),
                CellOutcome::Skipped,
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mi.csv");
        let text = render_mi_matrix(&[&m]).unwrap();
        assert!(text.starts_with("level,l,t,bits,epochs,best_epoch,seed,status,note\n"));
        std::fs::write(&path, &text).unwrap();
        assert_eq!(read_mi_matrix(&path).unwrap()["macro"], m);
    }

    #[test]
    fn profile_csv_layout() {
        let p = IEProfile {
            e_by_layer: vec![vec![Some(1.0), None], vec![Some(0.5), Some(2.0)]],
            e_hat_by_token: vec![Some(0.75), None],
            shot_stats: None,
        };
        let text = render_ie_profile(&p).unwrap();
        assert_eq!(text, "t,e_hat,E_l0,E_l1\n0,0.75,1,0.5\n1,,,2\n");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, text).unwrap();
        assert_eq!(read_ie_profile(&path).unwrap(), p);
    }

    #[test]
    fn shot_report_rows_and_deltas() {
        let report = ShotReport {
            shots: vec![
                ShotStat {
                    shot: 1,
                    mean: 4.0,
                    sd_positions: 0.0,
                    sd_bootstrap: None,
                },
                ShotStat {
                    shot: 2,
                    mean: 8.5,
                    sd_positions: 3.0,
                    sd_bootstrap: Some(4.0),
                },
                ShotStat {
                    shot: 3,
                    mean: 7.0,
                    sd_positions: 1.0,
                    sd_bootstrap: Some(0.0),
                },
            ],
        };
        let csv = report.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "Statistics,shot1,shot2,shot3");
        assert_eq!(lines[1], "value,4.0000,8.5000,7.0000");
        assert_eq!(lines[2], "SD,0.0000,5.0000,1.0000");
        assert_eq!(lines[5], "delta,,4.5000,-1.5000");
        assert_eq!(lines[6], "direction,,up,down");
    }

    #[test]
    fn two_shot_profile_gives_two_columns() {
        let ma = profile(&[1.0, 1.0, 2.0, 2.0]);
        let stats = super::super::shot_stats(&ma, 2, &[]).unwrap();
        let report = ShotReport { shots: stats };
        assert_eq!(
            report.to_csv().unwrap().lines().next().unwrap(),
            "Statistics,shot1,shot2"
        );
        assert!(shot_report(&ma).is_err());
    }

    #[test]
    fn compare_layout() {
        let a = profile(&[1.0, 2.0]);
        let single = compare_sources(&[("Human+toy", &a)]).unwrap();
        assert_eq!(
            single,
            "Text+Estimator,token0,token1,mean\nHuman+toy,1.0000,2.0000,1.5000\n"
        );
        let both = compare_sources(&[("Human+toy", &a), ("Model+toy", &a)]).unwrap();
        let lines: Vec<&str> = both.lines().collect();
        assert_eq!(
            lines[1].rsplit_once(',').unwrap().0,
            lines[2].rsplit_once(',').unwrap().0.replace("Model", "Human")
        );
        assert!(compare_sources(&[("a", &a), ("b", &profile(&[1.0]))]).is_err());
    }

    #[test]
    fn svg_has_one_line_per_profile() {
        let m = MiMatrix {
            level: Level::Macro,
            layer_pairs: 0,
            tokens: 0,
            cells: vec![],
        };
        assert!(compute_ie(&m, &m, MicroProtocol::FirstEntity).is_err());
        let svg = render_svg(&[("a", &profile(&[0.0, 1.0])), ("b<c", &profile(&[1.0, 0.5]))]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;c"));
    }
}
