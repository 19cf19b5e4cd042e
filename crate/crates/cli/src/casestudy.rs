//! Disentanglement report on labelled synthetic windows: a 2-D PCA scatter
//! of each mode half and linear-probe accuracy of both dependency labels
//! from both halves.
//!
//! `casestudy_probe.csv` columns, in order:
//! `representation,label_mode,acc,lambda,chance`.

use std::fmt::Write as _;
use std::path::Path;

use most_core::encoder::forward;
use most_core::probes::{classify, max_pool_time, to_matrix, ProbeConfig};
use most_core::ttsdata::SyntheticLabel;
use most_core::MostModel;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{CliError, PathContext, Result};

/// Max-pooled mode halves of every window.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeFeatures {
    pub mode1: Vec<Vec<f64>>,
    pub mode2: Vec<Vec<f64>>,
}

pub fn mode_features(model: &MostModel, ds: &Dataset) -> Result<ModeFeatures> {
    let mut mode1 = Vec::with_capacity(ds.windows.len());
    let mut mode2 = Vec::with_capacity(ds.windows.len());
    for x in &ds.windows {
        let r = forward(model, x, 0)?;
        mode1.push(max_pool_time(&r.v_mode1));
        mode2.push(max_pool_time(&r.v_mode2));
    }
    Ok(ModeFeatures { mode1, mode2 })
}

/// Per-window `(mode-1, mode-2)` dependency labels decoded from the class id.
pub fn dependency_labels(ds: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut g = Vec::with_capacity(ds.windows.len());
    let mut h = Vec::with_capacity(ds.windows.len());
    for (k, x) in ds.windows.iter().enumerate() {
        let class = x
            .label
            .ok_or_else(|| CliError::Data(format!("window {k} has no label")))?;
        if class >= 9 {
            return Err(CliError::Data(format!("label {class} is not a 3x3 dependency class")));
        }
        let l = SyntheticLabel::from_class_id(class);
        g.push(l.mode1);
        h.push(l.mode2);
    }
    Ok((g, h))
}

/// Projection onto the two leading principal components. Component signs
/// are fixed so the largest-magnitude loading is positive.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let x = to_matrix(rows)?;
    let (n, p) = (x.nrows(), x.ncols());
    if n == 0 {
        return Ok(Vec::new());
    }
    let mean = x.row_mean();
    let xc = DMatrix::from_fn(n, p, |r, c| x[(r, c)] - mean[c]);
    let cov = xc.transpose() * &xc / (n.max(2) - 1) as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut comps = Vec::with_capacity(2);
    for k in 0..2 {
        let mut v = match order.get(k) {
            Some(&c) => eig.eigenvectors.column(c).into_owned(),
            None => nalgebra::DVector::zeros(p),
        };
        if let Some(big) = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())) {
            if big < 0.0 {
                v.neg_mut();
            }
        }
        comps.push(v);
    }
    Ok((0..n)
        .map(|r| {
            let row = xc.row(r);
            [row.dot(&comps[0].transpose()), row.dot(&comps[1].transpose())]
        })
        .collect())
}

const PALETTE: [&str; 3] = ["#1b9e77", "#d95f02", "#7570b3"];
const PANEL: f64 = 360.0;
const PAD: f64 = 30.0;

/// Panel title, points and per-point labels.
pub type Panel<'a> = (&'a str, &'a [[f64; 2]], &'a [usize]);

/// Static scatter panels side by side, one circle per point, colored by
/// label.
pub fn scatter_svg(panels: &[Panel<'_>]) -> String {
    let width = panels.len() as f64 * (PANEL + 2.0 * PAD);
    let height = PANEL + 2.0 * PAD + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, (title, pts, labels)) in panels.iter().enumerate() {
        let x0 = k as f64 * (PANEL + 2.0 * PAD) + PAD;
        let y0 = PAD + 20.0;
        let _ = writeln!(s, r#"<g class="panel" id="panel-{k}">"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            x0 + PANEL / 2.0,
            PAD,
            xml_escape(title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y0}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#
        );
        let span = |i: usize| {
            let lo = pts.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
            (lo, if hi > lo { hi - lo } else { 1.0 })
        };
        let ((lx, wx), (ly, wy)) = (span(0), span(1));
        for (p, &l) in pts.iter().zip(labels.iter()) {
            let cx = x0 + 10.0 + (p[0] - lx) / wx * (PANEL - 20.0);
            let cy = y0 + PANEL - 10.0 - (p[1] - ly) / wy * (PANEL - 20.0);
            let _ = writeln!(
                s,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{}" data-label="{l}"/>"#,
                PALETTE[l % PALETTE.len()]
            );
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub representation: String,
    pub label_mode: String,
    pub acc: f64,
    pub lambda: f64,
    pub chance: f64,
}

/// Logistic probe accuracy of `labels` from `features` on the dataset's
/// splits.
pub fn probe_accuracy(features: &[Vec<f64>], labels: &[usize], ds: &Dataset, cfg: &ProbeConfig) -> Result<(f64, f64)> {
    let part = |r: &std::ops::Range<usize>| -> Result<(DMatrix<f64>, Vec<usize>)> {
        Ok((to_matrix(&features[r.clone()])?, labels[r.clone()].to_vec()))
    };
    let (xtr, ytr) = part(&ds.train)?;
    let (xva, yva) = part(&ds.valid)?;
    let (xte, yte) = part(&ds.test)?;
    if yte.is_empty() {
        return Err(CliError::Data("case study needs a non-empty test split".into()));
    }
    let valid = (!yva.is_empty()).then_some((&xva, yva.as_slice()));
    let m = classify((&xtr, &ytr), valid, (&xte, &yte), cfg)?;
    Ok((m.acc.unwrap_or(0.0), m.lambda))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseStudy {
    pub probes: Vec<ProbeRow>,
    pub svg: String,
    pub points_per_panel: usize,
}

impl CaseStudy {
    /// Accuracy of `label_mode` labels from the `representation` half.
    pub fn acc(&self, representation: &str, label_mode: &str) -> Option<f64> {
        self.probes
            .iter()
            .find(|r| r.representation == representation && r.label_mode == label_mode)
            .map(|r| r.acc)
    }

    pub fn write(&self, reports: &Path) -> Result<()> {
        let svg = reports.join("casestudy_pca.svg");
        std::fs::write(&svg, &self.svg).at(&svg)?;
        let csv_path = reports.join("casestudy_probe.csv");
        let mut w = csv::Writer::from_path(&csv_path).at(&csv_path)?;
        for r in &self.probes {
            w.serialize(r)?;
        }
        w.flush().at(&csv_path)?;
        Ok(())
    }
}

pub fn case_study(model: &MostModel, ds: &Dataset, cfg: &ProbeConfig) -> Result<CaseStudy> {
    let feats = mode_features(model, ds)?;
    let (g, h) = dependency_labels(ds)?;
    let mut probes = Vec::new();
    for (rep, x) in [("v_mode1", &feats.mode1), ("v_mode2", &feats.mode2)] {
        for (mode, y) in [("mode1", &g), ("mode2", &h)] {
            let (acc, lambda) = probe_accuracy(x, y, ds, cfg).map_err(|e| e.context(format!("{rep} -> {mode}")))?;
            probes.push(ProbeRow {
                representation: rep.to_string(),
                label_mode: mode.to_string(),
                acc,
                lambda,
                chance: 1.0 / 3.0,
            });
        }
    }
    let p1 = pca_2d(&feats.mode1)?;
    let p2 = pca_2d(&feats.mode2)?;
    let svg = scatter_svg(&[
        ("V(d1) by mode-1 dependency", &p1, &g),
        ("V(d2) by mode-2 dependency", &p2, &h),
    ]);
    Ok(CaseStudy {
        probes,
        svg,
        points_per_panel: ds.windows.len(),
    })
}
