//! Experiment plumbing: configs, instance generation, protocol sweeps,
//! result files and reports.
//!
//! Every artifact written from here embeds the config it came from,
//! including the master seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::ProtocolId;
use crate::bounds::BoundReport;
use crate::graph::BipartiteGraph;
use crate::mu::{sidecar_with_provenance, InstanceBundle, MuSampler};
use crate::params::{BlockCounts, ParamsTable};
use crate::protocol::{evaluate, InstanceSampler, RandomGraphSampler, RunError};

pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("refused: {0}")]
    Resource(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl ExperimentError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Resource(_) => 3,
            ExperimentError::Invariant(_) => 4,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Canonical {
        l: u64,
        r: usize,
    },
    Generalized {
        base: u64,
        levels: Vec<BlockCounts>,
    },
    /// Independent edges; not a hard distribution, used for sanity sweeps.
    RandomGraph {
        bidders: usize,
        items: usize,
        edge_prob: f64,
    },
}

impl DistributionSpec {
    pub fn params(&self) -> Result<Option<ParamsTable>, ExperimentError> {
        match self {
            DistributionSpec::Canonical { l, r } => ParamsTable::canonical(*l, *r).map(Some).map_err(config_err),
            DistributionSpec::Generalized { base, levels } => {
                ParamsTable::generalized(*base, levels).map(Some).map_err(config_err)
            }
            DistributionSpec::RandomGraph { edge_prob, .. } => {
                if !(0.0..=1.0).contains(edge_prob) {
                    return Err(config_err(format!("edge_prob {edge_prob} outside [0, 1]")));
                }
                Ok(None)
            }
        }
    }

    /// Compact label for result rows, e.g. `generalized:base=3,levels=2x2`.
    pub fn label(&self) -> String {
        match self {
            DistributionSpec::Canonical { l, r } => format!("canonical:l={l},r={r}"),
            DistributionSpec::Generalized { base, levels } => {
                let lv: Vec<String> = levels
                    .iter()
                    .map(|b| format!("{}x{}", b.bidder_blocks, b.fooling_blocks))
                    .collect();
                format!("generalized:base={base},levels={}", lv.join("/"))
            }
            DistributionSpec::RandomGraph {
                bidders,
                items,
                edge_prob,
            } => {
                format!("random:n={bidders},m={items},p={edge_prob}")
            }
        }
    }
}

fn default_budget() -> u64 {
    DEFAULT_MEMORY_BUDGET
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub distribution: DistributionSpec,
    /// Protocol ids such as `iterated:r=3`.
    #[serde(default)]
    pub protocols: Vec<String>,
    /// Optional sweep over each protocol's round parameter.
    #[serde(default)]
    pub rounds: Vec<usize>,
    /// Optional sweep over per-player, per-round bit caps; `null` is uncapped.
    #[serde(default)]
    pub bandwidth_caps: Vec<Option<usize>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default = "default_budget")]
    pub memory_budget_bytes: u64,
}

fn default_trials() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn new(distribution: DistributionSpec) -> Self {
        Self {
            distribution,
            protocols: Vec::new(),
            rounds: Vec::new(),
            bandwidth_caps: Vec::new(),
            trials: default_trials(),
            seed: 0,
            output: None,
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn from_json(input: &[u8]) -> Result<Self, ExperimentError> {
        serde_json::from_slice(input).map_err(config_err)
    }

    /// The config as embedded in artifacts. The output path is left out so
    /// that the same experiment written to two places is byte-identical.
    pub fn to_json_value(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("struct").remove("output");
        v
    }

    /// Protocol ids to run, after expanding the round sweep.
    pub fn protocol_ids(&self) -> Result<Vec<ProtocolId>, ExperimentError> {
        let mut out = Vec::new();
        for raw in &self.protocols {
            let id: ProtocolId = raw.parse().map_err(config_err)?;
            id.build().map_err(config_err)?;
            if self.rounds.is_empty() {
                out.push(id);
                continue;
            }
            let key = id
                .rounds_key()
                .ok_or_else(|| config_err(format!("protocol `{raw}` has no round parameter to sweep")))?;
            for &r in &self.rounds {
                let swept = id.clone().with_param(key, r);
                swept.build().map_err(config_err)?;
                out.push(swept);
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.trials == 0 {
            return Err(config_err("trials must be positive"));
        }
        if self.bandwidth_caps.contains(&Some(0)) {
            return Err(config_err("bandwidth caps must be positive"));
        }
        self.distribution.params()?;
        self.protocol_ids()?;
        Ok(())
    }
}

/// Refuses distributions whose instances would not fit the memory budget.
fn check_budget(params: &ParamsTable, budget: u64) -> Result<(), ExperimentError> {
    let need = params.estimated_bytes();
    if need > BigUint::from(budget) {
        let shown = match need.to_u64() {
            Some(b) => format!("{b} bytes"),
            None => format!("~10^{:.1} bytes", crate::bounds::log10_biguint(&need)),
        };
        return Err(ExperimentError::Resource(format!(
            "instance would need {shown} ({} edges), over the budget of {budget} bytes",
            params.total_edges()
        )));
    }
    Ok(())
}

pub fn build_sampler(cfg: &ExperimentConfig) -> Result<Box<dyn InstanceSampler>, ExperimentError> {
    match (&cfg.distribution, cfg.distribution.params()?) {
        (_, Some(params)) => {
            check_budget(&params, cfg.memory_budget_bytes)?;
            Ok(Box::new(MuSampler::new(params).map_err(config_err)?))
        }
        (
            &DistributionSpec::RandomGraph {
                bidders,
                items,
                edge_prob,
            },
            None,
        ) => Ok(Box::new(RandomGraphSampler {
            bidders,
            items,
            edge_prob,
        })),
        _ => unreachable!("only random graphs lack parameters"),
    }
}

/// A generated instance, with its bundle when drawn from `μ`.
pub struct Generated {
    pub graph: BipartiteGraph,
    pub bundle: Option<InstanceBundle>,
}

pub fn generate_instance(cfg: &ExperimentConfig) -> Result<Generated, ExperimentError> {
    match cfg.distribution.params()? {
        Some(params) => {
            check_budget(&params, cfg.memory_budget_bytes)?;
            let sampler = MuSampler::new(params).map_err(config_err)?;
            let bundle = sampler.sample(cfg.seed);
            let report = crate::mu::verify_bundle(&bundle);
            if !report.is_pass() {
                return Err(ExperimentError::Invariant(report.to_string()));
            }
            Ok(Generated {
                graph: bundle.graph.clone(),
                bundle: Some(bundle),
            })
        }
        None => Ok(Generated {
            graph: build_sampler(cfg)?.sample(cfg.seed).graph,
            bundle: None,
        }),
    }
}

/// Instance and sidecar bytes for `gen`.
pub fn generated_files(cfg: &ExperimentConfig, g: &Generated, json: bool) -> (Vec<u8>, Option<Vec<u8>>) {
    let prov = cfg.to_json_value();
    let instance = if json {
        crate::format::graph_to_json(&g.graph, Some(prov.clone()))
    } else {
        crate::format::graph_to_binary(&g.graph)
    };
    let sidecar = g.bundle.as_ref().map(|b| sidecar_with_provenance(b, Some(prov)));
    (instance, sidecar)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub protocol: String,
    pub params: String,
    pub rounds: usize,
    pub cap: Option<usize>,
    pub trials: usize,
    pub mean_score: f64,
    pub stderr: f64,
    /// `E[max matching] / E[matched]`; empty when nothing was matched.
    pub ratio: Option<f64>,
    pub seed: u64,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, ExperimentError> {
    cfg.validate()?;
    let ids = cfg.protocol_ids()?;
    if ids.is_empty() {
        return Err(config_err("no protocols to run"));
    }
    let sampler = build_sampler(cfg)?;
    let caps = if cfg.bandwidth_caps.is_empty() {
        vec![None]
    } else {
        cfg.bandwidth_caps.clone()
    };
    let mut rows = Vec::new();
    for id in &ids {
        let p = id.build().map_err(config_err)?;
        for &cap in &caps {
            let ev = evaluate(p.as_ref(), sampler.as_ref(), cfg.trials, cfg.seed, cap).map_err(|e| match e {
                RunError::Bandwidth { .. } => ExperimentError::Invariant(format!(
                    "{} on {} (seed {}): {e}",
                    p.id(),
                    cfg.distribution.label(),
                    cfg.seed
                )),
                other => ExperimentError::Invariant(format!("{}: {other}", p.id())),
            })?;
            rows.push(ResultRow {
                protocol: p.id(),
                params: cfg.distribution.label(),
                rounds: p.num_rounds(),
                cap,
                trials: cfg.trials,
                mean_score: ev.matched.mean,
                stderr: ev.matched.stderr,
                ratio: ev.ratio.is_finite().then_some(ev.ratio),
                seed: cfg.seed,
            });
        }
    }
    Ok(rows)
}

const CONFIG_PREFIX: &str = "# config=";

pub fn results_to_csv(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Vec<u8> {
    let mut out = format!("{CONFIG_PREFIX}{}\n", cfg.to_json_value()).into_bytes();
    let mut w = csv::Writer::from_writer(&mut out);
    if rows.is_empty() {
        w.write_record([
            "protocol",
            "params",
            "rounds",
            "cap",
            "trials",
            "mean_score",
            "stderr",
            "ratio",
            "seed",
        ])
        .expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    w.flush().expect("in-memory write");
    drop(w);
    out
}

#[derive(Serialize, Deserialize)]
struct ResultsFile {
    config: serde_json::Value,
    rows: Vec<ResultRow>,
}

pub fn results_to_json(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Vec<u8> {
    let f = ResultsFile {
        config: cfg.to_json_value(),
        rows: rows.to_vec(),
    };
    let mut out = serde_json::to_vec_pretty(&f).expect("results serialize");
    out.push(b'\n');
    out
}

/// Reads a results file written by [`results_to_csv`] or [`results_to_json`].
pub fn read_results(input: &[u8]) -> Result<(Option<serde_json::Value>, Vec<ResultRow>), ExperimentError> {
    let schema = |e: &dyn std::fmt::Display| config_err(format!("results file: {e}"));
    if input.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{') {
        let f: ResultsFile = serde_json::from_slice(input).map_err(|e| schema(&e))?;
        return Ok((Some(f.config), f.rows));
    }
    let text = std::str::from_utf8(input).map_err(|e| schema(&e))?;
    let config = text
        .lines()
        .find_map(|l| l.strip_prefix(CONFIG_PREFIX))
        .map(serde_json::from_str)
        .transpose()
        .map_err(|e| schema(&e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let headers = rdr.headers().map_err(|e| schema(&e))?.clone();
    let want = [
        "protocol",
        "params",
        "rounds",
        "cap",
        "trials",
        "mean_score",
        "stderr",
        "ratio",
        "seed",
    ];
    if !headers.is_empty() && headers.iter().ne(want) {
        return Err(schema(&format!(
            "unexpected columns {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let rows = rdr
        .deserialize()
        .collect::<Result<Vec<ResultRow>, _>>()
        .map_err(|e| schema(&e))?;
    Ok((config, rows))
}

#[derive(Serialize, Deserialize)]
pub struct BoundsFile {
    pub config: serde_json::Value,
    pub reports: Vec<BoundReport>,
}

/// Reads `bounds` output: a [`BoundsFile`], one bare report, or a list.
pub fn read_bounds(input: &[u8]) -> Result<Vec<BoundReport>, ExperimentError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Shape {
        File(BoundsFile),
        One(Box<BoundReport>),
        Many(Vec<BoundReport>),
    }
    match serde_json::from_slice(input).map_err(|e| config_err(format!("bounds file: {e}")))? {
        Shape::File(f) => Ok(f.reports),
        Shape::One(b) => Ok(vec![*b]),
        Shape::Many(v) => Ok(v),
    }
}

/// The curve a row belongs to: its protocol without the round parameter,
/// the distribution, and the cap.
fn series_key(r: &ResultRow) -> String {
    let proto = match r.protocol.parse::<ProtocolId>() {
        Ok(mut id) => {
            if let Some(k) = id.rounds_key() {
                id.params.remove(k);
            }
            id.to_string()
        }
        Err(_) => r.protocol.clone(),
    };
    match r.cap {
        Some(c) => format!("{proto} | {} | cap={c}", r.params),
        None => format!("{proto} | {}", r.params),
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

pub fn render_table(rows: &[ResultRow], bounds: &[BoundReport], provenance: Option<&serde_json::Value>) -> String {
    let mut s = String::new();
    if let Some(p) = provenance {
        let _ = writeln!(s, "{CONFIG_PREFIX}{p}");
    }
    let header = [
        "protocol", "params", "rounds", "cap", "trials", "mean", "stderr", "ratio",
    ];
    let cells: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.protocol.clone(),
                r.params.clone(),
                r.rounds.to_string(),
                r.cap.map_or_else(|| "-".into(), |c| c.to_string()),
                r.trials.to_string(),
                format!("{:.4}", r.mean_score),
                format!("{:.4}", r.stderr),
                fmt_opt(r.ratio),
            ]
        })
        .collect();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for c in &cells {
        for (w, x) in width.iter_mut().zip(c) {
            *w = (*w).max(x.chars().count());
        }
    }
    let line = |s: &mut String, xs: &[String]| {
        let parts: Vec<String> = xs.iter().zip(&width).map(|(x, &w)| format!("{x:<w$}")).collect();
        let _ = writeln!(s, "{}", parts.join("  ").trim_end());
    };
    line(&mut s, &header.map(String::from));
    for c in &cells {
        line(&mut s, c);
    }
    if !bounds.is_empty() {
        let _ = writeln!(s, "\nbounds");
        let _ = writeln!(
            s,
            "{:<4} {:<3} {:>14} {:>14} {:>14} {:>8}",
            "l", "r", "log10 n_r", "log10 t(r)", "log10 env", "l/5"
        );
        for b in bounds {
            let _ = writeln!(
                s,
                "{:<4} {:<3} {:>14.4} {:>14.4} {:>14.4} {:>8.2}",
                b.l,
                b.r,
                b.n.log10.unwrap_or(0.0),
                b.t.log10,
                b.envelope.log10.unwrap_or(0.0),
                b.ratio_floor
            );
        }
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Ratio-versus-rounds line chart, one curve per series, with a dashed
/// `l/5` reference line per bound report. `None` when there is nothing to
/// plot.
pub fn render_svg(
    rows: &[ResultRow],
    bounds: &[BoundReport],
    provenance: Option<&serde_json::Value>,
) -> Option<String> {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if let Some(y) = r.ratio {
            series.entry(series_key(r)).or_default().push((r.rounds as f64, y));
        }
    }
    if series.is_empty() {
        return None;
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let refs: BTreeMap<u64, f64> = bounds.iter().map(|b| (b.l, b.ratio_floor)).collect();

    let xs = series.values().flatten().map(|p| p.0);
    let ys = series.values().flatten().map(|p| p.1).chain(refs.values().copied());
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 1.0, x1 + 1.0) };
    let y0 = y0.min(1.0).min(0.0);
    let y1 = if y1 > y0 { y1 * 1.1 } else { y0 + 1.0 };

    let (w, h) = (720.0, 420.0);
    let (ml, mr, mt, mb) = (60.0, 250.0, 20.0, 50.0);
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    if let Some(p) = provenance {
        let _ = writeln!(s, "<metadata>{}</metadata>", escape(&p.to_string()));
    }
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (bx, by) = (h - mb, w - mr);
    let _ = writeln!(s, r#"<line x1="{ml}" y1="{bx}" x2="{by}" y2="{bx}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{bx}" stroke="black"/>"#);
    for i in 0..=4 {
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let yv = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.2}</text>"#,
            px(xv),
            bx + 16.0,
            xv
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            ml - 6.0,
            py(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">rounds</text>"#,
        (ml + by) / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">approximation ratio</text>"#,
        (mt + bx) / 2.0,
        (mt + bx) / 2.0
    );

    let mut legend_y = mt + 10.0;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                px(x),
                py(y)
            );
        }
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{legend_y:.1}" x2="{:.1}" y2="{legend_y:.1}" stroke="{color}" stroke-width="2"/>"#,
            by + 10.0,
            by + 30.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            by + 36.0,
            legend_y + 4.0,
            escape(name)
        );
        legend_y += 16.0;
    }
    for (l, y) in &refs {
        let _ = writeln!(
            s,
            r#"<line x1="{ml}" y1="{0:.1}" x2="{by}" y2="{0:.1}" stroke="gray" stroke-dasharray="6 4"/>"#,
            py(*y)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="gray">{}</text>"#,
            by + 36.0,
            legend_y + 4.0,
            escape(&format!("floor l/5 (l={l})"))
        );
        legend_y += 16.0;
    }
    s.push_str("</svg>\n");
    Some(s)
}
