//! Energy-trace statistics and plots.
//!
//! Lags are reported in compute units: one lag of a trace thinned by `r`
//! whose moves cost `c` each (and were recorded every `s` moves) spans
//! `r * s * c` units. Traces are comparable when those units agree to 5%.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest relative mismatch of compute-normalized lag units that may be
/// overlaid.
pub const LAG_UNIT_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub sampler: String,
    pub beta: f64,
    pub gamma: Option<f64>,
    pub seed: u64,
    pub trial: u64,
    /// Moves between recorded energies.
    pub record_stride: u64,
    /// Thinning applied after recording.
    pub subsample_stride: u64,
    /// Compute cost of one move.
    pub cost_per_move: f64,
    /// Additional `key=value` header entries, kept verbatim.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl TraceMeta {
    /// Compute units spanned by one lag.
    pub fn lag_unit(&self) -> f64 {
        (self.record_stride.max(1) * self.subsample_stride.max(1)) as f64 * self.cost_per_move
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub energies: Vec<f64>,
    pub meta: TraceMeta,
}

impl EnergyTrace {
    pub fn new(energies: Vec<f64>, meta: TraceMeta) -> Self {
        Self { energies, meta }
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Drops the leading `fraction` of the trace.
    pub fn discard_burn_in(&self, fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Argument(format!("burn-in fraction {fraction} outside [0, 1)")));
        }
        let skip = (self.energies.len() as f64 * fraction).floor() as usize;
        Ok(Self {
            energies: self.energies[skip..].to_vec(),
            meta: self.meta.clone(),
        })
    }
}

/// Biased single-mean autocorrelation estimate
/// `rho(t) = sum_{s<T-t} (E_s - m)(E_{s+t} - m) / sum_s (E_s - m)^2` for
/// `t = 0..=max_lag`.
pub fn acf(energies: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let t = energies.len();
    if t < max_lag + 2 {
        return Err(Error::Argument(format!(
            "trace of length {t} is too short for max_lag {max_lag}"
        )));
    }
    let mean = energies.iter().sum::<f64>() / t as f64;
    let centered: Vec<f64> = energies.iter().map(|e| e - mean).collect();
    let denom: f64 = centered.iter().map(|x| x * x).sum();
    let scale = centered.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if !(denom > 0.0) || scale <= 1e-12 * mean.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateTrace("trace has zero variance".into()));
    }
    Ok((0..=max_lag)
        .map(|lag| {
            if lag == 0 {
                return 1.0;
            }
            let num: f64 = centered[..t - lag]
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum();
            num / denom
        })
        .collect())
}

/// Keeps entries `0, r, 2r, ...` and records the thinning in the metadata.
pub fn subsample(trace: &EnergyTrace, stride: usize) -> Result<EnergyTrace> {
    if stride < 1 {
        return Err(Error::Argument("subsample stride must be at least 1".into()));
    }
    let mut meta = trace.meta.clone();
    meta.subsample_stride = meta.subsample_stride.max(1) * stride as u64;
    Ok(EnergyTrace {
        energies: trace.energies.iter().step_by(stride).copied().collect(),
        meta,
    })
}

/// Thinning stride that makes a trace of per-move cost `cost` commensurate
/// with one of cost `reference_cost`: `round(reference_cost / cost)`, at least 1.
pub fn fairness_stride(reference_cost: f64, cost: f64) -> usize {
    ((reference_cost / cost).round() as usize).max(1)
}

/// Trial-averaged autocorrelation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcfCurve {
    pub label: String,
    /// Lags in compute units.
    pub lags: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population variance across trials.
    pub variance: Vec<f64>,
    pub trials: usize,
    pub lag_unit: f64,
}

impl AcfCurve {
    /// First lag (in compute units) where the mean drops below `threshold`.
    pub fn first_lag_below(&self, threshold: f64) -> Option<f64> {
        self.mean
            .iter()
            .position(|&v| v < threshold)
            .map(|k| self.lags[k])
    }

    /// Writes `lag,mean,variance` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lag,mean,variance\n");
        for ((l, m), v) in self.lags.iter().zip(&self.mean).zip(&self.variance) {
            let _ = writeln!(out, "{},{},{}", fmt17(*l), fmt17(*m), fmt17(*v));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `x` with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Per-lag mean and population variance over equally long per-trial curves.
/// `lag_unit` scales lag indices into compute units.
pub fn average_acf(label: &str, curves: &[Vec<f64>], lag_unit: f64) -> Result<AcfCurve> {
    if curves.len() < 2 {
        return Err(Error::Argument(format!(
            "averaging needs at least 2 trials, got {}",
            curves.len()
        )));
    }
    let len = curves[0].len();
    if let Some(k) = curves.iter().position(|c| c.len() != len) {
        return Err(Error::Argument(format!(
            "trial {k} has {} lags, expected {len}",
            curves[k].len()
        )));
    }
    let trials = curves.len() as f64;
    let mut mean = vec![0.0; len];
    let mut variance = vec![0.0; len];
    for lag in 0..len {
        let m = curves.iter().map(|c| c[lag]).sum::<f64>() / trials;
        mean[lag] = m;
        variance[lag] = curves.iter().map(|c| (c[lag] - m).powi(2)).sum::<f64>() / trials;
    }
    Ok(AcfCurve {
        label: label.to_string(),
        lags: (0..len).map(|k| k as f64 * lag_unit).collect(),
        mean,
        variance,
        trials: curves.len(),
        lag_unit,
    })
}

/// `1 + 2 sum_{t>=1} rho(t)`, summed up to (excluding) the first
/// non-positive value. Measured in lag steps.
pub fn integrated_time(rho: &[f64]) -> f64 {
    1.0 + 2.0 * rho.iter().skip(1).take_while(|&&r| r > 0.0).sum::<f64>()
}

/// Fails when lag units differ by more than [`LAG_UNIT_TOLERANCE`].
pub fn check_commensurate(units: &[(String, f64)]) -> Result<()> {
    let Some(&(_, first)) = units.first() else {
        return Ok(());
    };
    for (label, unit) in units {
        let rel = (unit - first).abs() / first.abs().max(f64::MIN_POSITIVE);
        if rel > LAG_UNIT_TOLERANCE {
            log::warn!("lag unit of {label} ({unit}) differs from {first} by {:.1}%", rel * 100.0);
            return Err(Error::Config(format!(
                "compute-normalized lag units differ by {:.1}% (> 5%): {units:?}",
                rel * 100.0
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

/// One recorded chain as stored on disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceFile {
    pub meta: TraceMeta,
    pub steps: Vec<u64>,
    pub energies: Vec<f64>,
    pub accepted: Vec<bool>,
    pub ks: Vec<u32>,
}

impl TraceFile {
    pub fn from_record(rec: &crate::samplers::ChainRecord, meta: TraceMeta) -> Self {
        Self {
            meta,
            steps: rec.steps.clone(),
            energies: rec.energies.clone(),
            accepted: rec.accepted.clone(),
            ks: rec.ks.clone(),
        }
    }

    pub fn trace(&self) -> EnergyTrace {
        EnergyTrace::new(self.energies.clone(), self.meta.clone())
    }

    /// `# key=value` header lines followed by `step,energy,accepted,k` rows.
    pub fn to_csv(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        let _ = writeln!(out, "# sampler={}", m.sampler);
        let _ = writeln!(out, "# beta={}", fmt17(m.beta));
        if let Some(g) = m.gamma {
            let _ = writeln!(out, "# gamma={}", fmt17(g));
        }
        let _ = writeln!(out, "# seed={}", m.seed);
        let _ = writeln!(out, "# trial={}", m.trial);
        let _ = writeln!(out, "# record_stride={}", m.record_stride);
        let _ = writeln!(out, "# subsample_stride={}", m.subsample_stride);
        let _ = writeln!(out, "# cost_per_move={}", fmt17(m.cost_per_move));
        for (k, v) in &m.extra {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str("step,energy,accepted,k\n");
        for t in 0..self.steps.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.steps[t],
                fmt17(self.energies[t]),
                self.accepted[t] as u8,
                self.ks[t]
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut file = TraceFile::default();
        file.meta.record_stride = 1;
        file.meta.subsample_stride = 1;
        file.meta.cost_per_move = 1.0;
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.trim().split_once('=').ok_or_else(|| bad("expected `# key=value`"))?;
                let (k, v) = (k.trim(), v.trim());
                let num = |v: &str| v.parse::<f64>().map_err(|_| bad(&format!("{k}: not a number")));
                let int = |v: &str| v.parse::<u64>().map_err(|_| bad(&format!("{k}: not an integer")));
                match k {
                    "sampler" => file.meta.sampler = v.to_string(),
                    "beta" => file.meta.beta = num(v)?,
                    "gamma" => file.meta.gamma = Some(num(v)?),
                    "seed" => file.meta.seed = int(v)?,
                    "trial" => file.meta.trial = int(v)?,
                    "record_stride" => file.meta.record_stride = int(v)?,
                    "subsample_stride" => file.meta.subsample_stride = int(v)?,
                    "cost_per_move" => file.meta.cost_per_move = num(v)?,
                    _ => {
                        file.meta.extra.insert(k.to_string(), v.to_string());
                    }
                }
                continue;
            }
            if !header_seen {
                if line != "step,energy,accepted,k" {
                    return Err(bad("expected header `step,energy,accepted,k`"));
                }
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(bad(&format!("expected 4 columns, found {}", cols.len())));
            }
            file.steps.push(cols[0].parse().map_err(|_| bad("bad step"))?);
            file.energies.push(cols[1].parse().map_err(|_| bad("bad energy"))?);
            file.accepted.push(match cols[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("accepted must be 0 or 1")),
            });
            file.ks.push(cols[3].parse().map_err(|_| bad("bad k"))?);
        }
        if !header_seen {
            return Err(Error::Parse("missing header `step,energy,accepted,k`".into()));
        }
        Ok(file)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

/// One line on a chart, with optional per-point variance bars.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub variance: Option<Vec<f64>>,
}

impl From<&AcfCurve> for Series {
    fn from(c: &AcfCurve) -> Self {
        Series {
            label: c.label.clone(),
            x: c.lags.clone(),
            y: c.mean.clone(),
            variance: Some(c.variance.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: f64,
    pub height: f64,
    /// Draw a variance bar every this many points.
    pub bar_every: usize,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            title: String::new(),
            x_label: "computational time lag".into(),
            y_label: "energy ACF".into(),
            width: 640.0,
            height: 400.0,
            bar_every: 10,
        }
    }
}

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        let pad = lo.abs().max(1.0) * 0.5;
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

fn panel(out: &mut String, series: &[Series], style: &PlotStyle, dx: f64, dy: f64) {
    let (w, h) = (style.width, style.height);
    let (pw, ph) = (w - MARGIN_L - MARGIN_R, h - MARGIN_T - MARGIN_B);
    let (x0, x1) = range(series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = range(series.iter().flat_map(|s| {
        let var = s.variance.clone().unwrap_or_default();
        s.y.iter()
            .enumerate()
            .flat_map(move |(k, &y)| {
                let v = var.get(k).copied().unwrap_or(0.0);
                [y - v, y + v]
            })
            .collect::<Vec<_>>()
    }));
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

    let _ = writeln!(out, r#"<g transform="translate({dx:.0},{dy:.0})">"#);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    for t in 0..=4 {
        let fx = x0 + (x1 - x0) * t as f64 / 4.0;
        let fy = y0 + (y1 - y0) * t as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            sx(fx),
            MARGIN_T + ph + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
            MARGIN_L - 6.0,
            sy(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        h - 12.0,
        escape(&style.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(&style.y_label)
    );
    if !style.title.is_empty() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="22" font-size="14" text-anchor="middle">{}</text>"#,
            w / 2.0,
            escape(&style.title)
        );
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .x
            .iter()
            .zip(&s.y)
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        if let Some(var) = &s.variance {
            let every = style.bar_every.max(1);
            for j in (0..s.x.len()).step_by(every) {
                let (x, y, v) = (s.x[j], s.y[j], var.get(j).copied().unwrap_or(0.0));
                let _ = writeln!(
                    out,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1"/>"#,
                    sx(x),
                    sy(y - v),
                    sx(x),
                    sy(y + v)
                );
            }
        }
        let ly = MARGIN_T + 14.0 + 16.0 * k as f64;
        let lx = MARGIN_L + pw - 130.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</g>\n");
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-3..1e5).contains(&v.abs()) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

/// Standalone single-chart SVG.
pub fn emit_svg(series: &[Series], style: &PlotStyle) -> Result<String> {
    emit_figure(&[(series.to_vec(), style.clone())])
}

/// Stacks several charts vertically in one SVG document.
pub fn emit_figure(panels: &[(Vec<Series>, PlotStyle)]) -> Result<String> {
    if panels.is_empty() || panels.iter().any(|(s, _)| s.is_empty()) {
        return Err(Error::Argument("nothing to plot".into()));
    }
    for (series, _) in panels {
        for s in series {
            if s.x.len() != s.y.len() || s.x.is_empty() {
                return Err(Error::Argument(format!(
                    "series {:?} has {} x and {} y values",
                    s.label,
                    s.x.len(),
                    s.y.len()
                )));
            }
        }
    }
    let width = panels.iter().map(|(_, st)| st.width).fold(0.0, f64::max);
    let height: f64 = panels.iter().map(|(_, st)| st.height).sum();
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let mut dy = 0.0;
    for (series, style) in panels {
        panel(&mut out, series, style, 0.0, dy);
        dy += style.height;
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn ar1(coeff: f64, len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: f64 = StandardNormal.sample(&mut rng);
        x /= (1.0 - coeff * coeff).sqrt();
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(x);
            let z: f64 = StandardNormal.sample(&mut rng);
            x = coeff * x + z;
        }
        out
    }

    fn white(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn acf_basics() {
        let w = white(100_000, 1);
        let r = acf(&w, 50).unwrap();
        assert_eq!(r[0], 1.0);
        assert!(r[1..].iter().all(|v| v.abs() < 0.02));
        assert!((integrated_time(&r) - 1.0).abs() < 0.1);
        assert!(matches!(acf(&[2.0; 10], 3), Err(Error::DegenerateTrace(_))));
        assert!(acf(&[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn acf_of_ar1_matches_closed_form() {
        let x = ar1(0.9, 1_000_000, 7);
        let r = acf(&x, 20).unwrap();
        for (t, v) in r.iter().enumerate() {
            assert!((v - 0.9f64.powi(t as i32)).abs() < 0.01, "lag {t}: {v}");
        }
        let tau = integrated_time(&acf(&x, 400).unwrap());
        assert!((tau - 19.0).abs() < 1.9, "tau = {tau}");

        let trace = EnergyTrace::new(x, TraceMeta::default());
        let thin = subsample(&trace, 2).unwrap();
        let r2 = acf(&thin.energies, 10).unwrap();
        for (t, v) in r2.iter().enumerate() {
            assert!((v - 0.81f64.powi(t as i32)).abs() < 0.015, "lag {t}: {v}");
        }
        assert_eq!(thin.meta.subsample_stride, 2);
    }

    #[test]
    fn acf_invariant_under_affine_maps() {
        let x = ar1(0.5, 5000, 3);
        let base = acf(&x, 30).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + 1234.5).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * 7.25).collect();
        for (a, b) in base.iter().zip(acf(&shifted, 30).unwrap()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in base.iter().zip(acf(&scaled, 30).unwrap()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn subsample_examples() {
        let t = EnergyTrace::new((0..100).map(f64::from).collect(), TraceMeta::default());
        assert_eq!(subsample(&t, 1).unwrap().energies, t.energies);
        let s = subsample(&t, 10).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.energies[3], 30.0);
        assert!(subsample(&t, 0).is_err());
    }

    #[test]
    fn averaging() {
        let a = vec![1.0, 0.5, 0.2];
        let c = average_acf("x", &[a.clone(), a.clone(), a.clone()], 1.0).unwrap();
        assert!(c.variance.iter().all(|&v| v < 1e-30));
        let c = average_acf("x", &[vec![1.0, 0.6], vec![1.0, 0.2]], 2.0).unwrap();
        assert!((c.mean[1] - 0.4).abs() < 1e-15);
        assert!((c.variance[1] - 0.04).abs() < 1e-15);
        assert_eq!(c.lags, vec![0.0, 2.0]);
        assert!(average_acf("x", std::slice::from_ref(&a), 1.0).is_err());
        assert!(average_acf("x", &[a, vec![1.0]], 1.0).is_err());

        let curves: Vec<Vec<f64>> = (0..10).map(|s| acf(&ar1(0.9, 100_000, 100 + s), 10).unwrap()).collect();
        let c = average_acf("ar1", &curves, 1.0).unwrap();
        for t in 0..=10 {
            assert!((c.mean[t] - 0.9f64.powi(t as i32)).abs() < 0.02);
        }
    }

    #[test]
    fn geometric_integrated_time() {
        let rho: Vec<f64> = (0..2000).map(|t| 0.5f64.powi(t)).collect();
        assert!((integrated_time(&rho) - 3.0).abs() < 1e-12);
        assert_eq!(integrated_time(&[1.0, -0.1, 0.5]), 1.0);
    }

    #[test]
    fn commensurability() {
        assert!(check_commensurate(&[("a".into(), 100.0), ("b".into(), 104.0)]).is_ok());
        assert!(check_commensurate(&[("a".into(), 100.0), ("b".into(), 110.0)]).is_err());
        assert_eq!(fairness_stride(50.0, 2.0), 25);
        assert_eq!(fairness_stride(1.0, 2.0), 1);
    }

    #[test]
    fn trace_file_round_trip() {
        let mut meta = TraceMeta {
            sampler: "im".into(),
            beta: 1.0 / 2.27,
            gamma: Some(0.1),
            seed: 7,
            trial: 2,
            record_stride: 3,
            subsample_stride: 1,
            cost_per_move: 12.5,
            extra: BTreeMap::new(),
        };
        meta.extra.insert("n".into(), "128".into());
        let f = TraceFile {
            meta,
            steps: vec![0, 3, 6],
            energies: vec![-1.0 / 3.0, 2.0, 1e-300],
            accepted: vec![true, false, true],
            ks: vec![4, 1, 2],
        };
        assert_eq!(TraceFile::parse(&f.to_csv()).unwrap(), f);
        assert!(TraceFile::parse("step,energy,accepted,k\n1,2,3\n").is_err());
        assert!(TraceFile::parse("# beta=x\nstep,energy,accepted,k\n").is_err());
        assert!(TraceFile::parse("").is_err());
    }

    #[test]
    fn svg_output() {
        let flat = Series {
            label: "flat".into(),
            x: vec![0.0, 1.0, 2.0],
            y: vec![0.5; 3],
            variance: None,
        };
        let svg = emit_svg(std::slice::from_ref(&flat), &PlotStyle::default()).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let lines: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("polyline")).collect();
        assert_eq!(lines.len(), 1);
        let ys: Vec<&str> = lines[0]
            .attribute("points")
            .unwrap()
            .split(' ')
            .map(|p| p.split(',').nth(1).unwrap())
            .collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]));

        let other = Series {
            label: "a<b".into(),
            x: vec![0.0, 1.0],
            y: vec![1.0, 0.0],
            variance: Some(vec![0.1, 0.1]),
        };
        let svg = emit_svg(&[flat.clone(), other.clone()], &PlotStyle::default()).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
        let texts: Vec<_> = doc.descendants().filter_map(|n| n.text()).collect();
        assert!(texts.contains(&"flat") && texts.contains(&"a<b"));
        assert_eq!(svg, emit_svg(&[flat, other], &PlotStyle::default()).unwrap());
        assert!(emit_svg(&[], &PlotStyle::default()).is_err());
    }
}
