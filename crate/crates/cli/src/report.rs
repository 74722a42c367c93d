//! Static HTML report of a run directory.
//!
//! The page depends only on the files in the directory, so regenerating it
//! with unchanged inputs gives the same bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::manifest::{RunManifest, MANIFEST};

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Files under `root`, relative and sorted, skipping `reports/`.
fn files(root: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            let rel: Vec<String> = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect();
            if rel.first().map(String::as_str) == Some("reports") {
                continue;
            }
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.push(rel.join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}

/// Per-epoch means of the named columns of a loss log.
pub fn epoch_means(csv: &str, columns: &[&str]) -> Vec<(usize, Vec<f64>)> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let Some(epoch_col) = header.iter().position(|&h| h == "epoch") else {
        return Vec::new();
    };
    let idx: Vec<Option<usize>> = columns.iter().map(|c| header.iter().position(|h| h == c)).collect();
    let mut out: Vec<(usize, Vec<f64>, usize)> = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let Some(epoch) = fields.get(epoch_col).and_then(|e| e.parse::<usize>().ok()) else {
            continue;
        };
        let vals: Vec<f64> = idx
            .iter()
            .map(|i| i.and_then(|i| fields.get(i)?.parse().ok()).unwrap_or(f64::NAN))
            .collect();
        match out.last_mut() {
            Some((e, sums, n)) if *e == epoch => {
                sums.iter_mut().zip(&vals).for_each(|(s, v)| *s += v);
                *n += 1;
            }
            _ => out.push((epoch, vals, 1)),
        }
    }
    out.into_iter()
        .map(|(e, sums, n)| (e, sums.into_iter().map(|s| s / n as f64).collect()))
        .collect()
}

fn chart(title: &str, points: &[(usize, f64)]) -> String {
    let (w, h, pad) = (560.0, 180.0, 30.0);
    let finite: Vec<(usize, f64)> = points.iter().copied().filter(|p| p.1.is_finite()).collect();
    if finite.is_empty() {
        return String::new();
    }
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let e0 = finite[0].0 as f64;
    let e_span = (finite[finite.len() - 1].0 as f64 - e0).max(1.0);
    let mut path = String::new();
    for (e, v) in &finite {
        let x = pad + (*e as f64 - e0) / e_span * (w - 2.0 * pad);
        let y = h - pad - (v - lo) / span * (h - 2.0 * pad);
        let _ = write!(path, "{x:.1},{y:.1} ");
    }
    format!(
        "<figure><svg width=\"{w}\" height=\"{h}\" xmlns=\"http://www.w3.org/2000/svg\">\
<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"#fafafa\" stroke=\"#ccc\"/>\
<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.5\" points=\"{}\"/>\
<text x=\"4\" y=\"14\" font-size=\"11\">{hi:.4}</text>\
<text x=\"4\" y=\"{}\" font-size=\"11\">{lo:.4}</text></svg>\
<figcaption>{} per epoch</figcaption></figure>\n",
        path.trim_end(),
        h - 4.0,
        escape(title)
    )
}

fn json_block(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(serde_json::to_string_pretty(&value)?)
}

/// Render the report page for `run`.
pub fn render(run: &Path) -> Result<String> {
    let manifest = RunManifest::load(&run.join(MANIFEST))?;
    let name = run
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| run.display().to_string());
    let all = files(run)?;
    let mut html = String::new();
    let _ = write!(
        html,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{0}</title>\
<style>body{{font-family:sans-serif;max-width:70em;margin:1em auto}}td,th{{padding:2px 8px;text-align:left}}\
img{{image-rendering:pixelated;max-width:100%}}figure{{display:inline-block;margin:6px}}\
.pass{{color:#16791d}}.fail{{color:#b3261e}}</style></head><body>\n<h1>{0}</h1>\n",
        escape(&name)
    );

    html.push_str("<h2>Run</h2>\n<table>\n");
    let finished = manifest.finished.clone().unwrap_or_else(|| "(incomplete)".into());
    for (k, v) in [
        ("command", manifest.command.clone()),
        ("arguments", manifest.args.join(" ")),
        ("tool version", manifest.tool_version.clone()),
        ("seed", manifest.seed.to_string()),
        ("started", manifest.started.clone()),
        ("finished", finished),
    ] {
        let _ = writeln!(html, "<tr><th>{k}</th><td>{}</td></tr>", escape(&v));
    }
    html.push_str("</table>\n<h3>Configuration</h3>\n<pre>");
    html.push_str(&escape(&serde_json::to_string_pretty(&manifest.config)?));
    html.push_str("</pre>\n<h3>Inputs</h3>\n<table><tr><th>file</th><th>sha256</th></tr>\n");
    for d in &manifest.inputs {
        let _ = writeln!(html, "<tr><td>{}</td><td><code>{}</code></td></tr>", escape(&d.path), d.sha256);
    }
    html.push_str("</table>\n");

    if let Ok(csv) = fs::read_to_string(run.join("losses.csv")) {
        let cols = ["critic_loss", "gen_loss", "w_estimate", "gp", "info"];
        let means = epoch_means(&csv, &cols);
        html.push_str("<h2>Losses</h2>\n");
        for (i, c) in cols.iter().enumerate() {
            let pts: Vec<(usize, f64)> = means.iter().map(|(e, v)| (*e, v[i])).collect();
            html.push_str(&chart(c, &pts));
        }
    }

    let checkpoints: Vec<&String> = all.iter().filter(|f| f.ends_with(".ckpt")).collect();
    if !checkpoints.is_empty() {
        html.push_str("<h2>Checkpoints</h2>\n<ul>\n");
        for c in checkpoints {
            let _ = writeln!(html, "<li>{}</li>", escape(c));
        }
        html.push_str("</ul>\n");
    }

    for (title, file) in [("Validation", "verdict.json"), ("Conditioning", "summary.json")] {
        let found: Vec<&String> = all
            .iter()
            .filter(|f| f.as_str() == file || f.ends_with(&format!("/{file}")))
            .collect();
        if found.is_empty() {
            continue;
        }
        let _ = writeln!(html, "<h2>{title}</h2>");
        for f in found {
            let path: PathBuf = run.join(f);
            let block = json_block(&path)?;
            let verdict = serde_json::from_str::<serde_json::Value>(&block)
                .ok()
                .and_then(|v| v.get("pass").and_then(|p| p.as_bool()));
            let badge = match verdict {
                Some(true) => " <span class=\"pass\">PASS</span>",
                Some(false) => " <span class=\"fail\">FAIL</span>",
                None => "",
            };
            let _ = writeln!(html, "<h3>{}{badge}</h3>\n<pre>{}</pre>", escape(f), escape(&block));
        }
    }

    let images: Vec<&String> = all.iter().filter(|f| f.ends_with(".png")).collect();
    if !images.is_empty() {
        html.push_str("<h2>Images</h2>\n");
        for img in images {
            let _ = writeln!(
                html,
                "<figure><img src=\"../{0}\" alt=\"{0}\"><figcaption>{0}</figcaption></figure>",
                escape(img)
            );
        }
    }
    html.push_str("</body></html>\n");
    Ok(html)
}
