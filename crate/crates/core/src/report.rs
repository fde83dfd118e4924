//! The two-arm analysis report, its figures, and run manifests.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::AnalysisConfig;
use crate::crossfit::{crossfit_many, Estimand, LibraryProvider};
use crate::data::{check_markers_available, Dataset, MissingnessMode};
use crate::error::{estimation, Error, Result};
use crate::estimators::{contrast, kaplan_meier_greenwood, unadjusted_eta_point, EstimateReport};
use crate::inference::{
    clip_to_simplex, confidence_ellipse, cross_cov, eta_curve, se_ci, simplex_point, two_sided_p, utility_test,
    wald_equality, CurvePoint, SimplexSummary, UtilityResult, WaldResult,
};
use crate::numeric::{stable_mean, stable_sum};

pub const SCHEMA_VERSION: u32 = 1;
/// Bootstrap resamples behind the unadjusted `η` standard errors.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimand: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Two-sided p-value, reported for differences only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_value: Option<f64>,
}

impl EstimateRow {
    fn new(estimand: &str, r: &EstimateReport, with_p: bool) -> Self {
        Self {
            estimand: estimand.into(),
            estimate: r.estimate,
            se: r.std_error,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            p_value: with_p.then(|| two_sided_p(r)),
        }
    }
}

/// Arm 0, arm 1 and their difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub title: String,
    pub rows: Vec<EstimateRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Warnings {
    /// Denominators raised to the positivity floor.
    pub floored: usize,
    /// Simplex points or region vertices moved into the simplex for drawing.
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub n: usize,
    pub t: f64,
    pub y: f64,
    pub level: f64,
    pub folds: usize,
    pub seed: u64,
    pub missingness: MissingnessMode,
    pub adjusted_eta: Block,
    pub unadjusted_eta: Block,
    pub adjusted_surv: Block,
    pub unadjusted_surv: Block,
    /// Arm 0 then arm 1.
    pub simplex: Vec<SimplexSummary>,
    pub wald: WaldResult,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub utility: Option<UtilityResult>,
    pub warnings: Warnings,
}

fn diff_report(r1: &EstimateReport, r0: &EstimateReport, se: f64, level: f64) -> EstimateReport {
    EstimateReport::wald(r1.estimate - r0.estimate, se, level)
}

/// Arm-wise IPCW `η` with the marker-observed fraction among arm-`a`
/// subjects alive at `t` dividing out under MAR.
fn unadjusted_point(data: &Dataset, rows: &[usize], a: u8, t: f64, y: f64, mar: bool) -> Result<f64> {
    let p = unadjusted_eta_point(data, rows, a, t, y)?;
    if !mar {
        return Ok(p);
    }
    let (mut alive, mut seen) = (0usize, 0usize);
    for &i in rows {
        let r = data.get(i);
        if r.treatment == a && r.alive_at(t) {
            alive += 1;
            seen += r.r() as usize;
        }
    }
    if seen == 0 {
        return Err(estimation(format!(
            "arm {a}: no marker observed among subjects alive at t = {t}"
        )));
    }
    Ok(p * alive as f64 / seen as f64)
}

/// Unadjusted `η_0`, `η_1` and their difference with bootstrap SEs from
/// shared resamples.
pub fn unadjusted_eta_block(
    data: &Dataset,
    t: f64,
    y: f64,
    mar: bool,
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<[EstimateReport; 3]> {
    let all = data.all_rows();
    let p0 = unadjusted_point(data, &all, 0, t, y, mar)?;
    let p1 = unadjusted_point(data, &all, 1, t, y, mar)?;
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: [Vec<f64>; 3] = Default::default();
    let mut rows = vec![0usize; n];
    let mut failed = 0;
    for _ in 0..resamples {
        for r in rows.iter_mut() {
            *r = rng.random_range(0..n);
        }
        match (
            unadjusted_point(data, &rows, 0, t, y, mar),
            unadjusted_point(data, &rows, 1, t, y, mar),
        ) {
            (Ok(a), Ok(b)) => {
                draws[0].push(a);
                draws[1].push(b);
                draws[2].push(b - a);
            }
            _ => failed += 1,
        }
    }
    if failed > 0 {
        log::warn!("unadjusted bootstrap: {failed} of {resamples} resamples lacked usable data in an arm");
    }
    if draws[0].len() < 2 {
        return Err(estimation("unadjusted bootstrap: fewer than two usable resamples"));
    }
    let sd = |v: &[f64]| {
        let m = stable_mean(v);
        let ss: Vec<f64> = v.iter().map(|x| (x - m).powi(2)).collect();
        (stable_sum(&ss) / (v.len() - 1) as f64).sqrt()
    };
    Ok([
        EstimateReport::wald(p0, sd(&draws[0]), level),
        EstimateReport::wald(p1, sd(&draws[1]), level),
        EstimateReport::wald(p1 - p0, sd(&draws[2]), level),
    ])
}

/// The full two-arm analysis at the first configured threshold.
pub fn analyze(data: &Dataset, config: &AnalysisConfig) -> Result<AnalysisReport> {
    config.validate()?;
    let (t, y, level) = (config.landmark_t, config.threshold_y[0], config.level);
    let mar = config.missingness_mode == MissingnessMode::Mar;
    check_markers_available(data, t, config.missingness_mode)?;
    for a in 0..=1u8 {
        if data.arm_count(a) == 0 {
            return Err(Error::Validation(format!("treatment arm {a} has no subjects")));
        }
    }
    let provider = LibraryProvider::from_config(config, data.dim());
    let estimands = [
        Estimand::Eta { a: 0, y },
        Estimand::Eta { a: 1, y },
        Estimand::Surv { a: 0, u: t },
        Estimand::Surv { a: 1, u: t },
    ];
    let s = crossfit_many(data, &provider, config.folds, config.seed, t, mar, &estimands)?;
    let eta_c = contrast(&s[1], &s[0])?;
    let surv_c = contrast(&s[3], &s[2])?;
    let r: Vec<EstimateReport> = s.iter().map(|e| se_ci(e, level)).collect::<Result<_>>()?;
    let adjusted_eta = Block {
        title: "P(Y(t) > y, T > t): adjusted analysis".into(),
        rows: vec![
            EstimateRow::new("eta0(y)", &r[0], false),
            EstimateRow::new("eta1(y)", &r[1], false),
            EstimateRow::new("eta1(y) - eta0(y)", &se_ci(&eta_c, level)?, true),
        ],
    };
    let adjusted_surv = Block {
        title: "P(T > t): adjusted analysis".into(),
        rows: vec![
            EstimateRow::new("S0(t)", &r[2], false),
            EstimateRow::new("S1(t)", &r[3], false),
            EstimateRow::new("S1(t) - S0(t)", &se_ci(&surv_c, level)?, true),
        ],
    };

    let ue = unadjusted_eta_block(data, t, y, mar, BOOTSTRAP_RESAMPLES, config.seed, level)?;
    let unadjusted_eta = Block {
        title: "P(Y(t) > y, T > t): unadjusted analysis".into(),
        rows: vec![
            EstimateRow::new("eta0(y)", &ue[0], false),
            EstimateRow::new("eta1(y)", &ue[1], false),
            EstimateRow::new("eta1(y) - eta0(y)", &ue[2], true),
        ],
    };
    let all = data.all_rows();
    let km: Vec<EstimateReport> = (0..=1u8)
        .map(|a| kaplan_meier_greenwood(data, &all, a, t).map(|(s, se)| EstimateReport::wald(s, se, level)))
        .collect::<Result<_>>()?;
    let km_diff = diff_report(&km[1], &km[0], km[0].std_error.hypot(km[1].std_error), level);
    let unadjusted_surv = Block {
        title: "P(T > t): unadjusted analysis".into(),
        rows: vec![
            EstimateRow::new("S0(t)", &km[0], false),
            EstimateRow::new("S1(t)", &km[1], false),
            EstimateRow::new("S1(t) - S0(t)", &km_diff, true),
        ],
    };

    let sp0 = simplex_point(&s[0], &s[2], 0, level)?;
    let sp1 = simplex_point(&s[1], &s[3], 1, level)?;
    let wald = wald_equality(&sp1, &sp0, &cross_cov(&s[1], &s[3], &s[0], &s[2])?)?;
    let utility = match config.utility_weight {
        Some(w) => Some(utility_test(&eta_c, &s[3], &s[2], w)?),
        None => None,
    };
    let mut clipped = 0;
    for sp in [&sp0, &sp1] {
        clipped += sp.render_coords().1 as usize;
        clipped += confidence_ellipse(sp, ELLIPSE_POINTS).clipped as usize;
    }
    let report = AnalysisReport {
        schema_version: SCHEMA_VERSION,
        n: data.len(),
        t,
        y,
        level,
        folds: config.folds,
        seed: config.seed,
        missingness: config.missingness_mode,
        adjusted_eta,
        unadjusted_eta,
        adjusted_surv,
        unadjusted_surv,
        simplex: vec![sp0, sp1],
        wald,
        utility,
        warnings: Warnings {
            floored: s.iter().map(|e| e.floored).sum(),
            clipped,
        },
    };
    report.check_finite()?;
    Ok(report)
}

fn all_numbers_finite(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Null => false,
        serde_json::Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
        serde_json::Value::Array(a) => a.iter().all(all_numbers_finite),
        serde_json::Value::Object(o) => o.values().all(all_numbers_finite),
        _ => true,
    }
}

impl AnalysisReport {
    /// Fails when any reported number is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        // absent optionals are skipped, so a null can only be a NaN
        if all_numbers_finite(&serde_json::to_value(self)?) {
            Ok(())
        } else {
            Err(estimation("report contains a non-finite value"))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: AnalysisReport = serde_json::from_str(text)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "report schema version {} is not supported (expected {SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        Ok(r)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let pct = (self.level * 100.0).round();
        for b in [
            &self.adjusted_eta,
            &self.unadjusted_eta,
            &self.adjusted_surv,
            &self.unadjusted_surv,
        ] {
            let _ = writeln!(s, "{}", b.title);
            let _ = writeln!(
                s,
                "{:<20} {:>9} {:>8} {:>20} {:>8}",
                "Estimand",
                "Estimate",
                "SE",
                format!("{pct}% CI"),
                "P-value"
            );
            for r in &b.rows {
                let p = r.p_value.map_or("-".to_string(), |p| format!("{p:.4}"));
                let _ = writeln!(
                    s,
                    "{:<20} {:>9.4} {:>8.4} {:>20} {:>8}",
                    r.estimand,
                    r.estimate,
                    r.se,
                    format!("[{:.4}; {:.4}]", r.ci_low, r.ci_high),
                    p
                );
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "Wald test of equal (Q1, QD): W = {:.4}, df = {}, p = {:.4}",
            self.wald.statistic, self.wald.df, self.wald.p_value
        );
        if let Some(u) = &self.utility {
            let _ = writeln!(
                s,
                "Utility w = {}: estimate {:.4} (SE {:.4}), z = {:.4}, one-sided p = {:.4}",
                u.weight, u.estimate, u.std_error, u.z, u.p_value
            );
        }
        s
    }
}

/// Pointwise `η₁(y) − η₀(y)` curve under `config` over `grid`.
pub fn analyze_curve(data: &Dataset, config: &AnalysisConfig, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    config.validate()?;
    let provider = LibraryProvider::from_config(config, data.dim());
    let mar = config.missingness_mode == MissingnessMode::Mar;
    eta_curve(
        data,
        &provider,
        config.folds,
        config.seed,
        config.landmark_t,
        grid,
        mar,
        config.level,
    )
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("y,eta1,eta0,difference,se,ci_low,ci_high\n");
    for p in points {
        let c = &p.contrast;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.y, p.eta1, p.eta0, c.estimate, c.std_error, c.ci_low, c.ci_high
        );
    }
    s
}

pub const SVG_WIDTH: f64 = 800.0;
pub const SVG_HEIGHT: f64 = 700.0;
const ELLIPSE_POINTS: usize = 96;
const ARM_COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

/// Triangle corners: `Q0 = 1` lower-left, `Q1 = 1` lower-right, `QD = 1` top.
pub const SIMPLEX_VERTICES: [[f64; 2]; 3] = [[100.0, 610.0], [700.0, 610.0], [400.0, 90.384_757_729_336_8]];

/// Canvas position of barycentric `(Q0, Q1, QD)`.
pub fn simplex_xy(p: [f64; 3]) -> [f64; 2] {
    let v = SIMPLEX_VERTICES;
    [
        p[0] * v[0][0] + p[1] * v[1][0] + p[2] * v[2][0],
        p[0] * v[0][1] + p[1] * v[1][1] + p[2] * v[2][1],
    ]
}

fn xy(p: [f64; 2]) -> String {
    format!("{:.2},{:.2}", p[0], p[1])
}

/// Simplex figure with each arm's point and confidence region. Returns the
/// SVG and the number of clipped points or regions.
pub fn render_simplex(arms: &[SimplexSummary]) -> (String, usize) {
    let mut clipped = 0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let v = SIMPLEX_VERTICES;
    let _ = writeln!(
        s,
        "<polygon points=\"{} {} {}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>",
        xy(v[0]),
        xy(v[1]),
        xy(v[2])
    );
    for k in 1..10 {
        let f = k as f64 / 10.0;
        for (a, b) in [
            ([f, 1.0 - f, 0.0], [f, 0.0, 1.0 - f]),
            ([1.0 - f, f, 0.0], [0.0, f, 1.0 - f]),
            ([1.0 - f, 0.0, f], [0.0, 1.0 - f, f]),
        ] {
            let (p, q) = (simplex_xy(a), simplex_xy(b));
            let _ = writeln!(
                s,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\" stroke-width=\"0.7\"/>",
                p[0], p[1], q[0], q[1]
            );
        }
    }
    let label = |s: &mut String, x: f64, y: f64, anchor: &str, text: &str| {
        let _ = writeln!(
            s,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"{anchor}\">{text}</text>"
        );
    };
    label(
        &mut s,
        v[0][0] - 10.0,
        v[0][1] + 28.0,
        "middle",
        "Q0 = 1 (alive, Y &#8804; y)",
    );
    label(
        &mut s,
        v[1][0] + 10.0,
        v[1][1] + 28.0,
        "middle",
        "Q1 = 1 (alive, Y &gt; y)",
    );
    label(&mut s, v[2][0], v[2][1] - 14.0, "middle", "QD = 1 (dead)");
    for sp in arms {
        let color = ARM_COLORS[(sp.arm as usize).min(1)];
        let e = confidence_ellipse(sp, ELLIPSE_POINTS);
        clipped += e.clipped as usize;
        let pts: Vec<String> = e
            .barycentric
            .iter()
            .map(|&p| xy(simplex_xy(clip_to_simplex(p).0)))
            .collect();
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"{color}\" stroke-width=\"1.2\"/>",
            pts.join(" ")
        );
        let (c, was) = sp.render_coords();
        clipped += was as usize;
        let p = simplex_xy(c);
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"/>",
            p[0], p[1]
        );
    }
    for (k, sp) in arms.iter().enumerate() {
        let color = ARM_COLORS[(sp.arm as usize).min(1)];
        let y = 40.0 + 22.0 * k as f64;
        let _ = writeln!(
            s,
            "<circle cx=\"600.00\" cy=\"{:.2}\" r=\"5\" fill=\"{color}\"/>",
            y - 5.0
        );
        label(&mut s, 612.0, y, "start", &format!("A = {}", sp.arm));
    }
    s.push_str("</svg>\n");
    (s, clipped)
}

/// `η₁(y) − η₀(y)` against `y` with a pointwise band.
pub fn render_curve(points: &[CurvePoint]) -> String {
    let (x0, x1, y0, y1) = (90.0, 760.0, 620.0, 60.0);
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let (ymin, ymax) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut lo = points.iter().map(|p| p.contrast.ci_low).fold(0.0_f64, f64::min);
    let mut hi = points.iter().map(|p| p.contrast.ci_high).fold(0.0_f64, f64::max);
    if hi - lo <= 0.0 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let span = if ymax > ymin { ymax - ymin } else { 1.0 };
    let px = |y: f64| x0 + (x1 - x0) * (y - ymin) / span;
    let py = |v: f64| y0 + (y1 - y0) * (v - lo) / (hi - lo);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        s,
        "<polyline points=\"{x0:.2},{y1:.2} {x0:.2},{y0:.2} {x1:.2},{y0:.2}\" fill=\"none\" stroke=\"black\"/>"
    );
    let zero = py(0.0);
    let _ = writeln!(
        s,
        "<line x1=\"{x0:.2}\" y1=\"{zero:.2}\" x2=\"{x1:.2}\" y2=\"{zero:.2}\" stroke=\"#888888\" stroke-dasharray=\"4 4\"/>"
    );
    let mut band: Vec<String> = points.iter().map(|p| xy([px(p.y), py(p.contrast.ci_high)])).collect();
    band.extend(points.iter().rev().map(|p| xy([px(p.y), py(p.contrast.ci_low)])));
    let _ = writeln!(
        s,
        "<polygon points=\"{}\" fill=\"#1f77b4\" fill-opacity=\"0.2\" stroke=\"none\"/>",
        band.join(" ")
    );
    let line: Vec<String> = points.iter().map(|p| xy([px(p.y), py(p.contrast.estimate)])).collect();
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>",
        line.join(" ")
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let yv = ymin + f * span;
        let v = lo + f * (hi - lo);
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{yv:.1}</text>",
            px(yv),
            y0 + 20.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"end\">{v:.3}</text>",
            x0 - 8.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"425.00\" y=\"670.00\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">threshold y</text>"
    );
    let _ = writeln!(
        s,
        "<text x=\"425.00\" y=\"35.00\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">eta1(y) - eta0(y) with pointwise {}% band</text>",
        points.first().map_or(95.0, |p| (p.contrast.level * 100.0).round())
    );
    s.push_str("</svg>\n");
    s
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one run. Timestamps live in a sidecar so the manifest
/// itself is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub input_sha256: Option<String>,
    pub seed: u64,
    pub warnings: Warnings,
    #[serde(default)]
    pub calibration: Vec<String>,
    pub outputs: Vec<OutputFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, config_json: &str, seed: u64) -> Self {
        Self {
            tool: "landmark-dl".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_sha256: sha256_hex(config_json.as_bytes()),
            input_sha256: None,
            seed,
            warnings: Warnings::default(),
            calibration: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Writes `contents` to `dir/name` and records its hash.
    pub fn write_output(&mut self, dir: &Path, name: &str, contents: &str) -> Result<()> {
        std::fs::write(dir.join(name), contents)?;
        self.outputs.push(OutputFile {
            path: name.into(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    /// Writes `manifest.json` and `manifest.timestamps.json` into `dir`.
    pub fn save(&self, dir: &Path, stamps: &Timestamps) -> Result<()> {
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        std::fs::write(
            dir.join("manifest.timestamps.json"),
            serde_json::to_string_pretty(stamps)? + "\n",
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(arm: u8, q: [f64; 3]) -> SimplexSummary {
        SimplexSummary {
            arm,
            q0: q[0],
            q1: q[1],
            qd: q[2],
            cov_q1_qd: [[1e-4, 0.0], [0.0, 1e-4]],
            level: 0.95,
        }
    }

    #[test]
    fn vertices_and_centroid() {
        assert_eq!(simplex_xy([0.0, 1.0, 0.0]), SIMPLEX_VERTICES[1]);
        assert_eq!(simplex_xy([1.0, 0.0, 0.0]), SIMPLEX_VERTICES[0]);
        let c = simplex_xy([1.0 / 3.0; 3]);
        let v = SIMPLEX_VERTICES;
        assert!((c[0] - (v[0][0] + v[1][0] + v[2][0]) / 3.0).abs() < 1e-9);
        assert!((c[1] - (v[0][1] + v[1][1] + v[2][1]) / 3.0).abs() < 1e-9);
        let side = (v[1][0] - v[0][0]).hypot(v[1][1] - v[0][1]);
        assert!(((v[2][0] - v[0][0]).hypot(v[2][1] - v[0][1]) - side).abs() < 1e-9);
    }

    #[test]
    fn simplex_svg_is_deterministic() {
        let arms = [summary(0, [0.5, 0.3, 0.2]), summary(1, [0.5, 0.3, 0.2])];
        let (a, clipped) = render_simplex(&arms);
        let (b, _) = render_simplex(&arms);
        assert_eq!(a, b);
        assert_eq!(clipped, 0);
        assert!(a.contains("viewBox=\"0 0 800 700\""));
    }

    #[test]
    fn outside_point_is_clipped() {
        let (_, clipped) = render_simplex(&[summary(0, [-0.02, 0.52, 0.5])]);
        assert!(clipped >= 1);
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
