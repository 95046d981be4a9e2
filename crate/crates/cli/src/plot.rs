//! Hand-written SVG for convergence curves and filling histograms.

use std::collections::HashSet;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use arnnsci::driver::RECORDS_HEADER;
use arnnsci::CHEMICAL_ACCURACY;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const FLOOR: f64 = 1e-10;

pub struct Row {
    pub index: usize,
    pub energy: f64,
    pub delta_e: Option<f64>,
}

pub fn parse_records(text: &str) -> Result<Vec<Row>> {
    let mut lines = text.lines();
    if lines.next() != Some(RECORDS_HEADER) {
        bail!("unexpected records header (want `{RECORDS_HEADER}`)");
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() < 3 {
                bail!("short records row `{l}`");
            }
            Ok(Row {
                index: f[0].parse().with_context(|| format!("bad index in `{l}`"))?,
                energy: f[1].parse().with_context(|| format!("bad energy in `{l}`"))?,
                delta_e: if f[2].is_empty() { None } else { Some(f[2].parse().with_context(|| format!("bad ΔE in `{l}`"))?) },
            })
        })
        .collect()
}

struct Curve {
    label: String,
    rows: Vec<Row>,
}

fn label_for(dir: &Path) -> String {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| ".".into());
    let kind = std::fs::read_to_string(dir.join("config.cfg")).ok().and_then(|t| {
        t.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == "seed_kind")
            .map(|(_, v)| v.trim().to_string())
    });
    match kind {
        Some(k) => format!("{k} ({name})"),
        None => name,
    }
}

fn collect(paths: &[PathBuf]) -> Result<Vec<Curve>> {
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    for p in paths {
        if p.is_file() {
            let dir = p.parent().unwrap_or(Path::new("."));
            files.push((p.clone(), label_for(dir)));
        } else if p.join("records.csv").is_file() {
            files.push((p.join("records.csv"), label_for(p)));
        } else if p.is_dir() {
            let mut subs: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|d| d.join("records.csv").is_file())
                .collect();
            if subs.is_empty() {
                bail!("no records.csv under {}", p.display());
            }
            subs.sort();
            files.extend(subs.into_iter().map(|d| (d.join("records.csv"), label_for(&d))));
        } else {
            bail!("records not found: {}", p.display());
        }
    }
    files
        .into_iter()
        .map(|(f, label)| {
            let text = std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
            Ok(Curve { label, rows: parse_records(&text).with_context(|| f.display().to_string())? })
        })
        .collect()
}

fn svg_open(s: &mut String, title: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{title}</text>"#, LEFT + (W - LEFT - RIGHT) / 2.0);
}

fn axes(s: &mut String, xlabel: &str, ylabel: &str) {
    let (x0, y0, x1, y1) = (LEFT, H - BOTTOM, W - RIGHT, TOP);
    let _ = writeln!(s, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, (x0 + x1) / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{ylabel}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

/// Log-scale ΔE against iteration with the chemical-accuracy line.
pub fn convergence(paths: &[PathBuf], out: &Path) -> Result<()> {
    let curves = collect(paths)?;
    let with_de: Vec<&Curve> = curves.iter().filter(|c| c.rows.iter().any(|r| r.delta_e.is_some())).collect();
    if with_de.is_empty() {
        bail!("no ΔE column values; the runs had no exact reference");
    }
    let max_i = with_de.iter().flat_map(|c| c.rows.iter().map(|r| r.index)).max().unwrap_or(1).max(1);
    let values = with_de.iter().flat_map(|c| c.rows.iter().filter_map(|r| r.delta_e)).map(|d| d.max(FLOOR));
    let (lo, hi) = values.fold((CHEMICAL_ACCURACY, CHEMICAL_ACCURACY), |(a, b), v| (a.min(v), b.max(v)));
    let (dec_lo, dec_hi) = (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0));
    let x = |i: f64| LEFT + i / max_i as f64 * (W - LEFT - RIGHT);
    let y = |v: f64| (H - BOTTOM) - (v.max(FLOOR).log10() - dec_lo) / (dec_hi - dec_lo) * (H - BOTTOM - TOP);

    let mut s = String::new();
    svg_open(&mut s, "Energy error against iteration");
    axes(&mut s, "iteration", "ΔE (Ha)");
    for d in dec_lo as i32..=dec_hi as i32 {
        let yy = y(10f64.powi(d));
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{yy}" x2="{}" y2="{yy}" stroke="#e0e0e0"/>"##, W - RIGHT);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">1e{d}</text>"#, LEFT - 6.0, yy + 4.0);
    }
    let step = (max_i as f64 / 10.0).ceil().max(1.0) as usize;
    for i in (0..=max_i).step_by(step) {
        let xx = x(i as f64);
        let _ = writeln!(s, r#"<text x="{xx}" y="{}" text-anchor="middle">{i}</text>"#, H - BOTTOM + 16.0);
    }
    let yca = y(CHEMICAL_ACCURACY);
    let _ = writeln!(
        s,
        r#"<line class="chemical-accuracy" x1="{LEFT}" y1="{yca}" x2="{}" y2="{yca}" stroke="black" stroke-dasharray="6,4"/>"#,
        W - RIGHT
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">1.6 mHa</text>"#, W - RIGHT - 4.0, yca - 4.0);
    for (k, c) in with_de.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> =
            c.rows.iter().filter_map(|r| r.delta_e.map(|d| format!("{:.2},{:.2}", x(r.index as f64), y(d)))).collect();
        let _ = writeln!(s, r#"<polyline class="curve" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        for p in &pts {
            let (px, py) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>"#);
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="14" height="4" fill="{color}"/>"#, W - RIGHT + 12.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - RIGHT + 32.0, escape(&c.label));
    }
    s.push_str("</svg>\n");
    std::fs::write(out, s).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} ({} curve(s))", out.display(), with_de.len());
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bitstrings(path: &Path, column: usize) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',').nth(column).map(str::to_string).with_context(|| format!("{}: short row `{l}`", path.display()))
        })
        .collect()
}

/// Fraction of each bin of leading Born-table configurations present in each state.
pub fn filling(born: &Path, states: &[PathBuf], top: Option<usize>, bins: usize, out: &Path) -> Result<()> {
    if bins == 0 {
        bail!("bins must be ≥ 1");
    }
    let ranked = bitstrings(born, 1)?;
    let top = top.unwrap_or(ranked.len()).min(ranked.len());
    if top == 0 {
        bail!("Born table {} is empty", born.display());
    }
    let bins = bins.min(top);
    let per_bin = top.div_ceil(bins);
    let bins = top.div_ceil(per_bin);
    let mut series = Vec::new();
    for p in states {
        let present: HashSet<String> = bitstrings(p, 0)?.into_iter().collect();
        let fill: Vec<f64> = (0..bins)
            .map(|b| {
                let chunk = &ranked[b * per_bin..((b + 1) * per_bin).min(top)];
                chunk.iter().filter(|c| present.contains(*c)).count() as f64 / chunk.len() as f64
            })
            .collect();
        let label = p
            .parent()
            .and_then(|d| d.file_name())
            .map(|n| format!("{}/{}", n.to_string_lossy(), p.file_name().unwrap_or_default().to_string_lossy()))
            .unwrap_or_else(|| p.display().to_string());
        series.push((label, fill));
    }

    let mut s = String::new();
    svg_open(&mut s, &format!("Filling of the {top} leading configurations ({bins} bins of {per_bin})"));
    axes(&mut s, "bin (most probable first)", "fraction present");
    let pw = W - LEFT - RIGHT;
    let ph = H - BOTTOM - TOP;
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let yy = H - BOTTOM - v * ph;
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{yy}" x2="{}" y2="{yy}" stroke="#e0e0e0"/>"##, W - RIGHT);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#, LEFT - 6.0, yy + 4.0);
    }
    let bw = pw / bins as f64;
    let opacity = if series.len() > 1 { 0.5 } else { 0.9 };
    for (k, (label, fill)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        for (b, f) in fill.iter().enumerate() {
            let h = f * ph;
            let _ = writeln!(
                s,
                r#"<rect class="bin" x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{color}" fill-opacity="{opacity}"/>"#,
                LEFT + b as f64 * bw,
                H - BOTTOM - h,
                bw.max(0.5)
            );
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="14" height="8" fill="{color}"/>"#, W - RIGHT + 12.0, ly - 8.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - RIGHT + 32.0, escape(label));
    }
    s.push_str("</svg>\n");
    std::fs::write(out, s).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} ({bins} bins)", out.display());
    Ok(())
}
