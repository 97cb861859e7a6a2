//! `lidar` command-line driver.
//!
//! Every result is printed twice: a human-readable line and a
//! `#RESULT key=value ...` line for scripts. Exit codes: 0 success, 1 data
//! error (or bound violations for `prop1-check`), 2 usage error.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::metrics::{self, DegeneratePolicy, MetricConfig, MetricKind, MetricScore};
use crate::pipeline::registry::{self, ORACLE_ACCURACY};
use crate::pipeline::{csv_batch, emb1, thread_count};
use crate::rankstats::{self, CorrelationMethod, PairedSeries};
use crate::scatter::{EmbeddingBatch, DEFAULT_DELTA};
use crate::spectra::DEFAULT_EPS;
use crate::synth::{self, PlantedSpec};

#[derive(Debug, Parser)]
#[command(
    name = "lidar",
    version,
    about = "LDA-based representation quality scores and label-free model selection",
    long_about = "Scores embedding dumps with LiDAR (smooth rank of the whitened \
between-class scatter over surrogate classes), RankMe and augmented RankMe, then \
correlates scores with oracle accuracies and picks the top model.\n\n\
Suggested sampling: n=1000 surrogate classes with q=50 views each for ViT-scale \
embeddings; n=5000 or n=10000 with q=10 for wide projector outputs.\n\n\
LIDAR_THREADS caps worker threads (0 or unset = one per core)."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score an embedding dump (EMB1, CSV, or a directory of .emb1 files).
    Score(ScoreArgs),
    /// Rank-correlate a registry metric with an oracle field.
    Correlate(CorrelateArgs),
    /// Pick the model with the highest metric and compare with the oracle best.
    Select(SelectArgs),
    /// Write a planted synthetic batch.
    Synth(SynthArgs),
    /// Check the noise-append smooth-rank bound on fresh noise draws.
    #[command(name = "prop1-check")]
    Prop1Check(Prop1Args),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Lidar,
    Rankme,
    #[value(name = "rankme-aug", alias = "rankme_aug")]
    RankmeAug,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Lidar => MetricKind::Lidar,
            MetricArg::Rankme => MetricKind::Rankme,
            MetricArg::RankmeAug => MetricKind::RankmeAug,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Spearman,
    #[value(name = "tau-a")]
    TauA,
    #[value(name = "tau-b")]
    TauB,
    #[value(name = "tau-abs")]
    TauAbs,
}

impl From<MethodArg> for CorrelationMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Spearman => CorrelationMethod::Spearman,
            MethodArg::TauA => CorrelationMethod::KendallTauA,
            MethodArg::TauB => CorrelationMethod::KendallTauB,
            MethodArg::TauAbs => CorrelationMethod::KendallAbs,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DegenerateArg {
    Flag,
    Error,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// EMB1 file, CSV file (needs --classes/--samples), or directory of .emb1 files.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "lidar")]
    metric: MetricArg,
    /// Ridge added to the within-class scatter.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Additive constant in the normalized spectrum.
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    /// Project onto this many principal directions before whitening.
    #[arg(long)]
    reduce: Option<usize>,
    /// Center columns before vanilla RankMe.
    #[arg(long)]
    center_rankme: bool,
    #[arg(long, value_enum, default_value = "flag")]
    degenerate: DegenerateArg,
    /// Surrogate class count for CSV input.
    #[arg(long)]
    classes: Option<usize>,
    /// Views per class for CSV input.
    #[arg(long)]
    samples: Option<usize>,
    /// Branch tag for CSV input, e.g. student or teacher.
    #[arg(long)]
    branch: Option<String>,
    /// JSON-lines registry to merge the score into.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Model id for single-file input (directory input uses file stems).
    #[arg(long)]
    model_id: Option<String>,
    /// Replace existing scores under the same key.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    #[arg(long)]
    registry: PathBuf,
    /// Score key, e.g. lidar, rankme_aug or lidar:student.
    #[arg(long)]
    metric: String,
    #[arg(long, default_value = ORACLE_ACCURACY)]
    oracle_field: String,
    #[arg(long, value_enum, default_value = "tau-b")]
    method: MethodArg,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    metric: String,
    #[arg(long, default_value = ORACLE_ACCURACY)]
    oracle_field: String,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON planted-batch spec.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Prop1Args {
    #[arg(long = "in")]
    input: PathBuf,
    /// Appended noise dimensions.
    #[arg(long)]
    r: usize,
    #[arg(long)]
    noise_scale: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build();
    let result = match pool {
        Ok(pool) => pool.install(|| dispatch(cli.command)),
        Err(e) => Err(Error::InvalidArgument(format!("thread pool: {e}"))),
    };
    match result {
        Ok(outcome) => {
            let _ = out.write_all(outcome.stdout.as_bytes());
            let _ = err.write_all(outcome.stderr.as_bytes());
            outcome.code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

struct Outcome {
    stdout: String,
    stderr: String,
    code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self {
            stdout,
            stderr: String::new(),
            code: 0,
        }
    }
}

fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Score(a) => score(a),
        Command::Correlate(a) => correlate(a),
        Command::Select(a) => select(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Prop1Check(a) => prop1(a),
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_owned(), |v| v.to_string())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn load_batch(path: &Path, a: &ScoreArgs) -> Result<EmbeddingBatch> {
    if is_csv(path) {
        let (Some(n), Some(q)) = (a.classes, a.samples) else {
            return Err(Error::InvalidArgument("CSV input needs --classes and --samples".into()));
        };
        Ok(csv_batch::read_csv_batch(path, n, q)?.with_branch_label(a.branch.clone()))
    } else {
        emb1::read_emb1(path)
    }
}

fn model_id_from(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn score(a: ScoreArgs) -> Result<Outcome> {
    let cfg = MetricConfig {
        delta: a.delta,
        eps: a.eps,
        reduce_before_invert: a.reduce,
        degenerate_policy: match a.degenerate {
            DegenerateArg::Flag => DegeneratePolicy::ReturnOneAndFlag,
            DegenerateArg::Error => DegeneratePolicy::Error,
        },
        center_rankme: a.center_rankme,
    };
    cfg.validate()?;
    let kind = MetricKind::from(a.metric);

    let batches: Vec<(String, EmbeddingBatch)> = if a.input.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&a.input)
            .map_err(|e| Error::io(&a.input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "emb1"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::InvalidArgument(format!("no .emb1 files in {}", a.input.display())));
        }
        paths
            .iter()
            .map(|p| Ok((model_id_from(p), emb1::read_emb1(p)?)))
            .collect::<Result<_>>()?
    } else {
        let id = a.model_id.clone().unwrap_or_else(|| model_id_from(&a.input));
        vec![(id, load_batch(&a.input, &a)?)]
    };
    if a.registry.is_some() && !a.input.is_dir() && a.model_id.is_none() {
        return Err(Error::InvalidArgument("--registry with a single file needs --model-id".into()));
    }

    let kinds: BTreeSet<MetricKind> = [kind].into_iter().collect();
    let scores = metrics::score_sweep(&batches, &cfg, &kinds)?;

    let mut stdout = String::new();
    let mut stderr = String::new();
    let mut records = match &a.registry {
        Some(path) => Some(registry::read_registry_or_empty(path)?),
        None => None,
    };
    for (id, s) in &scores {
        let batch = &batches.iter().find(|(b, _)| b == id).expect("scored batch").1;
        let merge = records
            .as_mut()
            .map(|recs| registry::merge_score(recs, id, &s.key(), s.value, a.overwrite));
        if let Some(registry::MergeOutcome::KeptExisting) = merge {
            let _ = writeln!(stderr, "note: {id} already has a different {} score; pass --overwrite to replace it", s.key());
        }
        write_score(&mut stdout, id, s, batch, merge.map(|m| m.as_str()));
    }
    if let (Some(path), Some(recs)) = (&a.registry, &records) {
        registry::write_registry(path, recs)?;
    }
    Ok(Outcome {
        stdout,
        stderr,
        code: 0,
    })
}

fn write_score(out: &mut String, id: &str, s: &MetricScore, b: &EmbeddingBatch, merge: Option<&str>) {
    let flag = if s.degenerate { " [degenerate]" } else { "" };
    let _ = writeln!(
        out,
        "{id}: {} = {:.6}{flag} (n={}, q={}, p={}, delta={}, eps={})",
        s.key(),
        s.value,
        b.n(),
        b.q(),
        b.p(),
        s.config.delta,
        s.config.eps
    );
    let _ = writeln!(
        out,
        "#RESULT model={id} metric={} value={} degenerate={} n={} q={} p={} delta={} eps={} reduce={} registry={}",
        s.key(),
        s.value,
        s.degenerate,
        b.n(),
        b.q(),
        b.p(),
        s.config.delta,
        s.config.eps,
        opt(s.config.reduce_before_invert),
        merge.unwrap_or("none")
    );
}

fn correlate(a: CorrelateArgs) -> Result<Outcome> {
    let records = registry::read_registry(&a.registry)?;
    let series = PairedSeries::from_records(&records, &a.metric, &a.oracle_field)?;
    let method = CorrelationMethod::from(a.method);
    let report = match rankstats::correlate(&series, method) {
        Ok(r) => r,
        Err(e @ (Error::ZeroVariance(_) | Error::AllPairsTied)) => {
            let reason = match &e {
                Error::ZeroVariance(which) => format!("zero-variance-{which}"),
                _ => "all-pairs-tied".into(),
            };
            return Ok(Outcome {
                stdout: format!(
                    "#RESULT method={method} metric={} oracle_field={} n={} coefficient=undefined reason={reason}\n",
                    a.metric,
                    a.oracle_field,
                    series.len()
                ),
                stderr: format!("error: {e}\n"),
                code: 1,
            });
        }
        Err(e) => return Err(e),
    };
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {}", "method", method);
    let _ = writeln!(out, "{:<14} {} vs {}", "series", a.metric, a.oracle_field);
    let _ = writeln!(out, "{:<14} {}", "n", report.n);
    let _ = writeln!(out, "{:<14} {:.6}", "coefficient", report.coefficient);
    let _ = writeln!(out, "{:<14} x={} y={}", "tie groups", report.tie_groups_x, report.tie_groups_y);
    if let (Some(c), Some(d)) = (report.concordant, report.discordant) {
        let _ = writeln!(out, "{:<14} C={c} D={d}", "pairs");
    }
    let _ = writeln!(
        out,
        "#RESULT method={method} metric={} oracle_field={} n={} coefficient={} tie_groups_x={} tie_groups_y={} concordant={} discordant={}",
        a.metric,
        a.oracle_field,
        report.n,
        report.coefficient,
        report.tie_groups_x,
        report.tie_groups_y,
        opt(report.concordant),
        opt(report.discordant)
    );
    Ok(Outcome::ok(out))
}

fn select(a: SelectArgs) -> Result<Outcome> {
    let records = registry::read_registry(&a.registry)?;
    let r = rankstats::select_top(&records, &a.metric, &a.oracle_field)?;
    let mut out = String::new();
    let tie = if r.metric_tie { " (tied, smallest id taken)" } else { "" };
    let _ = writeln!(
        out,
        "top by {}: {} ({} = {:.6}{tie}) -> {} = {:.4}",
        a.metric, r.chosen_id, a.metric, r.chosen_metric, a.oracle_field, r.chosen_oracle
    );
    let _ = writeln!(out, "oracle best: {} ({} = {:.4})", r.oracle_best_id, a.oracle_field, r.oracle_best);
    let _ = writeln!(out, "gap: {:.4} over {} eligible models", r.gap, r.eligible);
    let _ = writeln!(
        out,
        "#RESULT metric={} oracle_field={} chosen={} chosen_metric={} chosen_oracle={} oracle_best={} oracle_best_value={} gap={} metric_tie={} eligible={}",
        a.metric,
        a.oracle_field,
        r.chosen_id,
        r.chosen_metric,
        r.chosen_oracle,
        r.oracle_best_id,
        r.oracle_best,
        r.gap,
        r.metric_tie,
        r.eligible
    );
    Ok(Outcome::ok(out))
}

fn synth_cmd(a: SynthArgs) -> Result<Outcome> {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| Error::io(&a.spec, e))?;
    let spec: PlantedSpec = serde_json::from_str(&text).map_err(|e| Error::BadSpec(e.to_string()))?;
    let batch = synth::gen_planted(&spec)?;
    emb1::write_emb1(&batch, &a.out)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "wrote {} (n={}, q={}, p={}, k_signal={}, r_nuisance={})",
        a.out.display(),
        spec.n,
        spec.q,
        spec.p,
        spec.k_signal,
        spec.r_nuisance
    );
    let _ = writeln!(
        out,
        "#RESULT out={} n={} q={} p={} k_signal={} r_nuisance={} seed={}",
        a.out.display(),
        spec.n,
        spec.q,
        spec.p,
        spec.k_signal,
        spec.r_nuisance,
        spec.seed
    );
    Ok(Outcome::ok(out))
}

fn prop1(a: Prop1Args) -> Result<Outcome> {
    let batch = emb1::read_emb1(&a.input)?;
    let cfg = MetricConfig {
        delta: a.delta,
        eps: a.eps,
        ..Default::default()
    };
    let rep = synth::prop1_check(&batch, a.r, a.noise_scale, &cfg, a.trials, a.seed)?;
    let unmet: Vec<&str> = rep.unmet.iter().map(|p| p.as_str()).collect();
    let unmet = if unmet.is_empty() { "none".to_owned() } else { unmet.join(",") };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "trials {} checked {} skipped {} violations {}",
        rep.trials, rep.checked, rep.precondition_skips, rep.violations
    );
    let _ = writeln!(out, "base LiDAR {:.6}, bound {}", rep.base_lidar, opt(rep.bound.map(|b| format!("{b:.6}"))));
    if let (Some(lo), Some(mean), Some(hi)) = (rep.min_margin(), rep.mean_margin(), rep.max_margin()) {
        let _ = writeln!(out, "margin min {lo:.3e} mean {mean:.3e} max {hi:.3e}");
    }
    if rep.precondition_skips > 0 {
        let _ = writeln!(out, "unmet preconditions: {unmet}");
    }
    let _ = writeln!(
        out,
        "#RESULT trials={} checked={} skipped={} violations={} base_lidar={} bound={} min_margin={} mean_margin={} max_margin={} unmet={unmet}",
        rep.trials,
        rep.checked,
        rep.precondition_skips,
        rep.violations,
        rep.base_lidar,
        opt(rep.bound),
        opt(rep.min_margin()),
        opt(rep.mean_margin()),
        opt(rep.max_margin())
    );
    Ok(Outcome {
        stdout: out,
        stderr: String::new(),
        code: i32::from(rep.violations > 0),
    })
}
