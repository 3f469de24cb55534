//! Snapshot evaluation, curve smoothing and CSV emission.

use std::fmt::Write as _;
use std::path::Path;

use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::orchestrator::{list_snapshots, load_snapshot};
use crate::seed::{derive_seed, streams};
use crate::types::normalize;

pub const REPORT_HEADER: &str = "snapshot_episode,task,mean,std,n_eval";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub snapshot_episode: usize,
    pub task: String,
    pub mean: f64,
    pub std: f64,
    pub n_eval: usize,
}

/// Rows sorted by (snapshot, task). Snapshots that failed to load are listed in
/// `skipped` and emitted as rows with task `skipped` and empty statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub skipped: Vec<usize>,
}

impl EvalReport {
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (a.snapshot_episode, &a.task).cmp(&(b.snapshot_episode, &b.task))
        });
        self.skipped.sort_unstable();
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.snapshot_episode, r.task, r.mean, r.std, r.n_eval);
        }
        for ep in &self.skipped {
            let _ = writeln!(out, "{ep},skipped,,,0");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Csv(e.to_string()))?;
        if header.iter().collect::<Vec<_>>().join(",") != REPORT_HEADER {
            return Err(Error::Csv(format!("expected header {REPORT_HEADER:?}")));
        }
        let mut report = Self::default();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
            let field = |i: usize| rec.get(i).unwrap_or_default();
            let num = |i: usize| -> Result<f64> {
                field(i)
                    .parse()
                    .map_err(|_| Error::Csv(format!("bad number {:?} in report row {rec:?}", field(i))))
            };
            let episode: usize = field(0)
                .parse()
                .map_err(|_| Error::Csv(format!("bad snapshot index in {rec:?}")))?;
            if field(1) == "skipped" {
                report.skipped.push(episode);
                continue;
            }
            report.rows.push(EvalRow {
                snapshot_episode: episode,
                task: field(1).to_string(),
                mean: num(2)?,
                std: num(3)?,
                n_eval: field(4)
                    .parse()
                    .map_err(|_| Error::Csv(format!("bad n_eval in {rec:?}")))?,
            });
        }
        Ok(report)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every snapshot in `dir` for `n_eval` episodes with the mean action and
/// reports per-task return statistics. Episode `i` uses the same reset seed for
/// every snapshot.
pub fn eval_snapshots(dir: &Path, env_name: &str, tasks: &[String], n_eval: usize, seed: u64) -> Result<EvalReport> {
    if n_eval == 0 {
        return Err(Error::InvalidInput("n_eval must be >= 1".into()));
    }
    let mut env = make_env(env_name)?;
    if let Some(t) = tasks.iter().find(|t| !env.task_names().contains(&t.as_str())) {
        return Err(Error::Config(format!("task {t:?} not offered by {env_name}")));
    }
    let spec = env.spec().clone();
    let mut report = EvalReport::default();
    for (episode, stem) in list_snapshots(dir)? {
        let policy = match load_snapshot(&stem) {
            Ok(s) if s.policy.state_dim() == spec.state_dim && s.policy.action_dim() == spec.action_dim => s.policy,
            Ok(_) => {
                log::warn!("snapshot {} does not fit {env_name}; skipped", stem.display());
                report.skipped.push(episode);
                continue;
            }
            Err(e) => {
                log::warn!("snapshot {} unreadable ({e}); skipped", stem.display());
                report.skipped.push(episode);
                continue;
            }
        };
        let mut returns = vec![Vec::with_capacity(n_eval); tasks.len()];
        for i in 0..n_eval {
            let reset = derive_seed(derive_seed(seed, streams::EVAL), i as u64);
            let mut s = normalize(&env.reset(reset), &spec)?;
            let mut totals = vec![0.0; tasks.len()];
            loop {
                let step = env.step(&policy.act_deterministic(&s)?)?;
                let r = env.eval_rewards();
                for (tot, t) in totals.iter_mut().zip(tasks) {
                    *tot += r[t.as_str()];
                }
                if step.done() {
                    break;
                }
                s = normalize(&step.observation, &spec)?;
            }
            for (col, tot) in returns.iter_mut().zip(totals) {
                col.push(tot);
            }
        }
        for (task, col) in tasks.iter().zip(&returns) {
            let (mean, std) = mean_std(col);
            report.rows.push(EvalRow {
                snapshot_episode: episode,
                task: task.clone(),
                mean,
                std,
                n_eval,
            });
        }
    }
    report.sort();
    Ok(report)
}

/// Gaussian kernel smoothing in units of sample index. The kernel is truncated
/// at 4 sigma and renormalized where it overhangs the ends.
pub fn smooth(series: &[f64], sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return series.to_vec();
    }
    let radius = (4.0 * sigma).ceil() as usize;
    let kernel: Vec<f64> = (0..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp())
        .collect();
    let n = series.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n.saturating_sub(1));
            let (mut num, mut den) = (0.0, 0.0);
            for (j, &x) in series.iter().enumerate().take(hi + 1).skip(lo) {
                let w = kernel[i.abs_diff(j)];
                num += w * x;
                den += w;
            }
            num / den
        })
        .collect()
}

/// One named curve for [`plot_svg`].
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];

/// Line chart with axes, tick labels and a legend.
pub fn plot_svg(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const L: f64 = 70.0;
    const R: f64 = 170.0;
    const T: f64 = 40.0;
    const B: f64 = 55.0;
    let pts = series.iter().flat_map(|s| &s.points).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
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
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, (W - R + L) / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{L},{T} L{L},{} L{},{}" fill="none" stroke="black"/>"#,
        H - B,
        W - R,
        H - B
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/><text x="{0}" y="{3}" text-anchor="middle">{4}</text>"#,
            sx(xv),
            H - B,
            H - B + 5.0,
            H - B + 19.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/><text x="{3}" y="{4}" text-anchor="end">{5}</text>"#,
            L - 5.0,
            sy(yv),
            L,
            L - 8.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (W - R + L) / 2.0, H - 15.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (H - B + T) / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
        let ly = T + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{color}" stroke-width="2"/><text x="{3}" y="{4}">{5}</text>"#,
            W - R + 15.0,
            ly,
            W - R + 35.0,
            W - R + 40.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v == v.round() && v.abs() < 1e6 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Reads any of the curve CSVs written by this crate (learning curves, eval
/// reports, run metrics) into named series, smoothing each with `sigma`.
pub fn curves_from_csv(text: &str, sigma: f64) -> Result<(Vec<Series>, &'static str, &'static str)> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let (x_col, y_col, key_cols, x_label, y_label): (usize, usize, Vec<usize>, _, _) =
        match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            ["episode", "task_return", "mode", "seed"] => (0, 1, vec![2, 3], "episode", "task return"),
            ["snapshot_episode", "task", "mean", "std", "n_eval"] => (0, 2, vec![1], "snapshot episode", "mean return"),
            ["episode", "curiosity_return", ..] => (0, 1, vec![], "episode", "curiosity return"),
            other => return Err(Error::Csv(format!("unrecognized curve header {other:?}"))),
        };
    let mut groups: Vec<Series> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let key: Vec<&str> = key_cols.iter().map(|&i| rec.get(i).unwrap_or_default()).collect();
        if key.first() == Some(&"skipped") {
            continue;
        }
        let name = if key.is_empty() { y_label.to_string() } else { key.join(" seed ") };
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Csv(format!("bad number in column {i} of {rec:?}")))
        };
        let point = (parse(x_col)?, parse(y_col)?);
        match groups.iter_mut().find(|g| g.name == name) {
            Some(g) => g.points.push(point),
            None => groups.push(Series {
                name,
                points: vec![point],
            }),
        }
    }
    for g in &mut groups {
        let ys: Vec<f64> = g.points.iter().map(|p| p.1).collect();
        for (p, y) in g.points.iter_mut().zip(smooth(&ys, sigma)) {
            p.1 = y;
        }
    }
    Ok((groups, x_label, y_label))
}
