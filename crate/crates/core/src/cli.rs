//! The `udtw` command-line tool.
//!
//! Every result file starts with `# ` header lines giving the tool version,
//! the command line and the run configuration; `--threads` is left out of
//! both so that outputs do not depend on it. Summaries go to stdout as
//! `metric,value` lines and to `summary.csv` in the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{pairwise_cost, udtw_evaluate, CostMatrix, GibbsParams, VarianceField, VarianceMode};
use crate::barycenter::{frechet_mean, BarycenterVariance, FrechetConfig};
use crate::data_io::{
    format_number, read_csv_matrix, read_csv_sequence, read_dataset, write_coupling, write_csv_sequence, write_text,
    write_ucr_tsv, CouplingFormat,
};
use crate::error::{Error, Result};
use crate::selftest::{run_all, SelftestConfig};
use crate::sequence::Sequence;
use crate::synth;
use crate::tasks::{
    centroid_classify, class_centroids, dict_update, euclidean_nn_classify, forecast_mse, forecast_predict,
    forecast_train, knn_classify, lcsa_code, split_series, Dictionary, ForecastConfig, ForecastModel, LabeledSet,
    Scorer,
};
use crate::uncertainty::{UncertaintyModel, UncertaintyVariant, VarianceSource};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "udtw", version, about = "Uncertainty-aware soft dynamic time warping")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VarianceArg {
    Unit,
    PerToken,
    Pairwise,
    Free,
}

impl VarianceArg {
    fn as_str(self) -> &'static str {
        match self {
            Self::Unit => "unit",
            Self::PerToken => "per-token",
            Self::Pairwise => "pairwise",
            Self::Free => "free",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Gibbs temperature (> 0).
    #[arg(long, global = true, default_value_t = 1.0)]
    pub gamma: f64,
    /// Weight of the log-variance regulariser.
    #[arg(long, global = true, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long, global = true, value_enum, default_value_t = VarianceArg::Unit)]
    pub variance: VarianceArg,
    /// Shorthand for `--variance unit`.
    #[arg(long, global = true)]
    pub unit_variance: bool,
    /// Neighbours for kNN.
    #[arg(long, global = true, default_value_t = 1)]
    pub k: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Largest side length enumerated by the exact oracles.
    #[arg(long, global = true, default_value_t = crate::align::DEFAULT_ORACLE_LIMIT)]
    pub oracle_limit: usize,
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// Write PGM couplings as round(255 * c^0.1).
    #[arg(long, global = true)]
    pub power_normalize: bool,
    /// Divide dist and omega by the summed sequence lengths.
    #[arg(long, global = true)]
    pub length_normalize: bool,
    /// Saved variance head for per-token or pairwise variances. Without it a
    /// head is initialised from the seed.
    #[arg(long, global = true)]
    pub sigma_model: Option<PathBuf>,
    /// Hidden width of a seeded variance head.
    #[arg(long, global = true, default_value_t = 8)]
    pub sigma_hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CouplingArg {
    Csv,
    Pgm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Cbf,
    SineStep,
    ShiftedBell,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align two sequence CSVs (rows = features) or a cost matrix.
    Dist {
        a: Option<PathBuf>,
        b: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["a", "b"])]
        cost_matrix: Option<PathBuf>,
        /// Pairwise variances for `--cost-matrix`.
        #[arg(long, requires = "cost_matrix")]
        variance_matrix: Option<PathBuf>,
        /// Also write the coupling to the output directory.
        #[arg(long, value_enum)]
        coupling: Option<CouplingArg>,
    },
    /// Check the alignment identities on random instances.
    Selftest {
        /// Instances per suite (defaults differ per suite).
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Write a synthetic dataset in UCR TSV format.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        /// Series (per class for CBF training data).
        #[arg(long)]
        count: Option<usize>,
        /// CBF test series per class.
        #[arg(long, default_value_t = 50)]
        test_count: usize,
        #[arg(long)]
        length: Option<usize>,
    },
    /// Fréchet mean of the first `--count` series of a dataset.
    Barycenter {
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Length of the mean; defaults to the mean input length.
        #[arg(long)]
        length: Option<usize>,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        /// Pull of free variances toward one.
        #[arg(long, default_value_t = 0.0)]
        unit_penalty: f64,
    },
    /// k-nearest-neighbour classification.
    Knn { train: PathBuf, test: PathBuf },
    /// Nearest-centroid classification against per-class Fréchet means.
    Centroid {
        train: PathBuf,
        test: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
    },
    /// Train a forecaster on prefixes of a dataset's series.
    Forecast {
        data: PathBuf,
        /// Fraction of each series used as input.
        #[arg(long, default_value_t = 0.6)]
        split: f64,
        /// Fraction of the series used for training; the rest are held out.
        #[arg(long, default_value_t = 2.0 / 3.0)]
        train_fraction: f64,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 3e-3)]
        step: f64,
        #[arg(long, default_value_t = crate::tasks::DEFAULT_HIDDEN_WIDTH)]
        hidden: usize,
    },
    /// Learn a dictionary and code every series of a dataset.
    Dictlearn {
        data: PathBuf,
        #[arg(long, default_value_t = 4)]
        atoms: usize,
        #[arg(long, default_value_t = 2)]
        k_nearest: usize,
        #[arg(long, default_value_t = crate::tasks::DEFAULT_GAMMA_PRIME)]
        gamma_prime: f64,
        #[arg(long, default_value_t = crate::tasks::DEFAULT_LAMBDA_DL)]
        lambda_dl: f64,
        #[arg(long, default_value_t = crate::tasks::DEFAULT_DICT_ITERS)]
        dict_iters: usize,
    },
}

/// The settings echoed into every result file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub gamma: f64,
    pub beta: f64,
    pub variance_mode: String,
    pub oracle_limit: usize,
    pub output_dir: PathBuf,
}

impl RunConfig {
    fn from_args(g: &GlobalArgs) -> Self {
        Self {
            seed: g.seed,
            gamma: g.gamma,
            beta: g.beta,
            variance_mode: g.variance_mode().as_str().to_string(),
            oracle_limit: g.oracle_limit,
            output_dir: g.output_dir.clone(),
        }
    }

    pub fn header_line(&self) -> String {
        format!(
            "config: seed={} gamma={} beta={} variance_mode={} oracle_limit={} output_dir={}",
            self.seed,
            self.gamma,
            self.beta,
            self.variance_mode,
            self.oracle_limit,
            self.output_dir.display()
        )
    }
}

impl GlobalArgs {
    fn variance_mode(&self) -> VarianceArg {
        if self.unit_variance {
            VarianceArg::Unit
        } else {
            self.variance
        }
    }

    fn gibbs(&self) -> Result<GibbsParams> {
        GibbsParams::new(self.gamma, self.beta)
    }
}

/// Command line with `--threads` removed.
fn echoed_command(args: &[String]) -> String {
    let mut out = vec!["udtw".to_string()];
    let mut skip = false;
    for a in args.iter().skip(1) {
        if skip {
            skip = false;
            continue;
        }
        if a == "--threads" {
            skip = true;
            continue;
        }
        if a.starts_with("--threads=") {
            continue;
        }
        out.push(a.clone());
    }
    out.join(" ")
}

struct Context {
    global: GlobalArgs,
    header: Vec<String>,
    summary: Vec<(String, String)>,
}

impl Context {
    fn out(&self, name: &str) -> Result<PathBuf> {
        let dir = &self.global.output_dir;
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(dir.join(name))
    }

    fn write(&self, name: &str, body: &str) -> Result<()> {
        write_text(&self.out(name)?, &self.header, body)
    }

    fn metric(&mut self, name: &str, value: impl ToString) {
        self.summary.push((name.to_string(), value.to_string()));
    }

    fn finish(&self, write_summary: bool) -> Result<String> {
        let mut body = String::from("metric,value\n");
        for (k, v) in &self.summary {
            let _ = writeln!(body, "{k},{v}");
        }
        if write_summary {
            self.write("summary.csv", &body)?;
        }
        Ok(body)
    }

    fn sigma_model(&self, variant: UncertaintyVariant, features: usize) -> Result<UncertaintyModel> {
        let m = match &self.global.sigma_model {
            Some(p) => UncertaintyModel::load(p)?,
            None => {
                let d_in = match variant {
                    UncertaintyVariant::PerToken => features,
                    UncertaintyVariant::Pairwise => 2 * features,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(self.global.seed ^ 0x5151);
                UncertaintyModel::random(d_in, self.global.sigma_hidden, variant, &mut rng)?
            }
        };
        if m.variant() != variant {
            return Err(Error::InvalidParameter(format!(
                "variance head is {}, expected {}",
                m.variant().as_str(),
                variant.as_str()
            )));
        }
        Ok(m)
    }

    /// The variance head required by the mode, if any. `free` is rejected
    /// unless `allow_free` is set.
    fn head_for(&self, features: usize, allow_free: bool) -> Result<Option<UncertaintyModel>> {
        match self.global.variance_mode() {
            VarianceArg::Unit => Ok(None),
            VarianceArg::PerToken => Ok(Some(self.sigma_model(UncertaintyVariant::PerToken, features)?)),
            VarianceArg::Pairwise => Ok(Some(self.sigma_model(UncertaintyVariant::Pairwise, features)?)),
            VarianceArg::Free if allow_free => Ok(None),
            VarianceArg::Free => Err(Error::InvalidParameter(
                "free variances apply to barycenters and centroids only".into(),
            )),
        }
    }

    fn scorer<'a>(&self, head: Option<&'a UncertaintyModel>) -> Result<Scorer<'a>> {
        let source = match head {
            None => VarianceSource::Unit,
            Some(m) if m.variant() == UncertaintyVariant::PerToken => VarianceSource::PerToken(m),
            Some(m) => VarianceSource::Pairwise(m),
        };
        Ok(Scorer::new(self.global.gibbs()?)
            .with_variances(source)
            .with_length_normalize(self.global.length_normalize))
    }
}

fn sequences_csv(rows: &[&Sequence]) -> String {
    let mut body = String::new();
    for s in rows {
        let line: Vec<String> = s.as_slice().iter().map(|v| format_number(*v)).collect();
        body.push_str(&line.join(","));
        body.push('\n');
    }
    body
}

fn cmd_dist(
    ctx: &mut Context,
    a: Option<&Path>,
    b: Option<&Path>,
    cost_matrix: Option<&Path>,
    variance_matrix: Option<&Path>,
    coupling: Option<CouplingArg>,
) -> Result<()> {
    let gibbs = ctx.global.gibbs()?;
    let (cost, var) = match (cost_matrix, a, b) {
        (Some(path), _, _) => {
            let cost = CostMatrix::new(read_csv_matrix(path)?)?;
            let (rows, cols) = cost.shape();
            let var = match (variance_matrix, ctx.global.variance_mode()) {
                (Some(v), _) => VarianceField::new(read_csv_matrix(v)?, VarianceMode::JointPairwise)?,
                (None, VarianceArg::Unit) => VarianceField::unit(rows, cols),
                (None, _) => {
                    return Err(Error::InvalidParameter(
                        "with --cost-matrix, variances come from --variance-matrix".into(),
                    ))
                }
            };
            (cost, var)
        }
        (None, Some(a), Some(b)) => {
            let (a, b) = (read_csv_sequence(a)?, read_csv_sequence(b)?);
            let head = ctx.head_for(a.dim(), false)?;
            let var = ctx.scorer(head.as_ref())?.variances.field(&a, &b)?;
            (pairwise_cost(&a, &b)?, var)
        }
        _ => {
            return Err(Error::InvalidParameter(
                "give two sequence files or --cost-matrix".into(),
            ))
        }
    };
    let out = udtw_evaluate(&cost, &var, &gibbs)?;
    let scale = if ctx.global.length_normalize {
        1.0 / (cost.shape().0 + cost.shape().1) as f64
    } else {
        1.0
    };
    ctx.metric("dist", out.dist * scale);
    ctx.metric("omega", out.omega * scale);
    ctx.metric("softmin_value", out.softmin_value);
    if let Some(fmt) = coupling {
        let (name, format) = match fmt {
            CouplingArg::Csv => ("coupling.csv", CouplingFormat::Csv),
            CouplingArg::Pgm => ("coupling.pgm", CouplingFormat::Pgm),
        };
        write_coupling(
            &out.coupling,
            &ctx.out(name)?,
            format,
            ctx.global.power_normalize,
            &ctx.header,
        )?;
    }
    Ok(())
}

fn cmd_selftest(ctx: &mut Context, trials: Option<usize>) -> Result<bool> {
    let cfg = SelftestConfig {
        seed: ctx.global.seed,
        trials,
        oracle_limit: ctx.global.oracle_limit,
    };
    let reports = run_all(&cfg)?;
    println!("suite,cases,failures,worst,tolerance,status");
    for r in &reports {
        println!(
            "{},{},{},{:e},{:e},{}",
            r.name,
            r.cases,
            r.failures,
            r.worst,
            r.tolerance,
            if r.passed() { "pass" } else { "FAIL" }
        );
        eprintln!("{}: {:.2?}", r.name, r.elapsed);
    }
    Ok(reports.iter().all(|r| r.passed()))
}

fn cmd_synth(
    ctx: &mut Context,
    kind: SynthKind,
    count: Option<usize>,
    test_count: usize,
    length: Option<usize>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.global.seed);
    let unlabeled = |v: Vec<Sequence>| LabeledSet::new(v.into_iter().map(|s| (s, 0)).collect());
    match kind {
        SynthKind::Cbf => {
            let len = length.unwrap_or(128);
            let train = LabeledSet::new(synth::cbf(count.unwrap_or(10), len, &mut rng)?)?;
            let test = LabeledSet::new(synth::cbf(test_count, len, &mut rng)?)?;
            write_ucr_tsv(&ctx.out("cbf_TRAIN.tsv")?, &train, &ctx.header)?;
            write_ucr_tsv(&ctx.out("cbf_TEST.tsv")?, &test, &ctx.header)?;
            ctx.metric("train_series", train.len());
            ctx.metric("test_series", test.len());
        }
        SynthKind::SineStep => {
            let set = unlabeled(synth::sine_with_step(
                count.unwrap_or(60),
                length.unwrap_or(50),
                &mut rng,
            )?)?;
            write_ucr_tsv(&ctx.out("sine_step.tsv")?, &set, &ctx.header)?;
            ctx.metric("series", set.len());
        }
        SynthKind::ShiftedBell => {
            let set = unlabeled(synth::shifted_bell(
                count.unwrap_or(10),
                length.unwrap_or(40),
                &mut rng,
            )?)?;
            write_ucr_tsv(&ctx.out("shifted_bell.tsv")?, &set, &ctx.header)?;
            ctx.metric("series", set.len());
        }
    }
    Ok(())
}

fn frechet_config(ctx: &Context, length: Option<usize>, max_iters: usize, unit_penalty: f64) -> Result<FrechetConfig> {
    let variance_mode = match ctx.global.variance_mode() {
        VarianceArg::Unit => BarycenterVariance::FixedUnit,
        VarianceArg::Free => BarycenterVariance::FreePerTimestep,
        other => {
            return Err(Error::InvalidParameter(format!(
                "barycenters support unit or free variances, not {}",
                other.as_str()
            )))
        }
    };
    Ok(FrechetConfig {
        target_length: length,
        gibbs: ctx.global.gibbs()?,
        max_iters,
        variance_mode,
        unit_penalty,
        ..FrechetConfig::default()
    })
}

fn cmd_barycenter(
    ctx: &mut Context,
    data: &Path,
    count: usize,
    length: Option<usize>,
    max_iters: usize,
    unit_penalty: f64,
) -> Result<()> {
    let set = read_dataset(data)?.items;
    let series: Vec<Sequence> = set.sequences().take(count).cloned().collect();
    if series.is_empty() || count == 0 {
        return Err(Error::InvalidParameter("--count must be at least 1".into()));
    }
    let cfg = frechet_config(ctx, length, max_iters, unit_penalty)?;
    let res = frechet_mean(&series, &cfg)?;
    write_csv_sequence(&ctx.out("barycenter.csv")?, &res.mean, &ctx.header)?;
    let mut trace = String::from("iteration,objective\n");
    for (i, v) in res.trace.iter().enumerate() {
        let _ = writeln!(trace, "{i},{}", format_number(*v));
    }
    ctx.write("trace.csv", &trace)?;
    ctx.metric("series", series.len());
    ctx.metric("initial_objective", res.trace[0]);
    ctx.metric("final_objective", res.objective());
    ctx.metric("iterations", res.iterations);
    ctx.metric("converged", u8::from(res.converged));
    ctx.metric("warning", u8::from(res.warning));
    if let Some(v) = &res.variances {
        let mut body = String::from("timestep,variance\n");
        for (t, x) in v.iter().enumerate() {
            let _ = writeln!(body, "{t},{}", format_number(*x));
        }
        ctx.write("variances.csv", &body)?;
        ctx.metric("mean_variance", v.iter().sum::<f64>() / v.len() as f64);
    }
    Ok(())
}

fn write_predictions(ctx: &Context, test: &LabeledSet, predicted: &[i64]) -> Result<f64> {
    let mut body = String::from("index,label,predicted\n");
    let mut correct = 0usize;
    for (i, ((_, label), p)) in test.items().iter().zip(predicted).enumerate() {
        let _ = writeln!(body, "{i},{label},{p}");
        correct += usize::from(label == p);
    }
    ctx.write("predictions.csv", &body)?;
    Ok(correct as f64 / test.len() as f64)
}

fn cmd_knn(ctx: &mut Context, train: &Path, test: &Path) -> Result<()> {
    let train = read_dataset(train)?.items;
    let test = read_dataset(test)?.items;
    let head = ctx.head_for(train.dim(), false)?;
    let scorer = ctx.scorer(head.as_ref())?;
    let k = ctx.global.k;
    let predicted: Vec<i64> = test
        .sequences()
        .map(|q| knn_classify(&train, q, k, &scorer))
        .collect::<Result<_>>()?;
    let acc = write_predictions(ctx, &test, &predicted)?;
    ctx.metric("k", k);
    ctx.metric("accuracy", acc);
    let same_shape = |s: &Sequence| s.len() == test.items()[0].0.len();
    if train.sequences().chain(test.sequences()).all(same_shape) {
        let hits = test
            .items()
            .iter()
            .map(|(q, l)| euclidean_nn_classify(&train, q).map(|p| usize::from(p == *l)))
            .sum::<Result<usize>>()?;
        ctx.metric("euclidean_accuracy", hits as f64 / test.len() as f64);
    }
    Ok(())
}

fn cmd_centroid(ctx: &mut Context, train: &Path, test: &Path, max_iters: usize) -> Result<()> {
    let train = read_dataset(train)?.items;
    let test = read_dataset(test)?.items;
    let cfg = frechet_config(ctx, None, max_iters, 0.0)?;
    let centroids = class_centroids(&train, &cfg)?;
    let scorer = ctx.scorer(None)?;
    let predicted: Vec<i64> = test
        .sequences()
        .map(|q| centroid_classify(&centroids, q, &scorer))
        .collect::<Result<_>>()?;
    let means: Vec<&Sequence> = centroids.iter().map(|c| &c.mean).collect();
    let mut body = String::from("# one row per class in ascending label order\n");
    body.push_str(&sequences_csv(&means));
    ctx.write("centroids.csv", &body)?;
    let acc = write_predictions(ctx, &test, &predicted)?;
    ctx.metric("classes", centroids.len());
    ctx.metric("accuracy", acc);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_forecast(
    ctx: &mut Context,
    data: &Path,
    split: f64,
    train_fraction: f64,
    epochs: usize,
    step: f64,
    hidden: usize,
) -> Result<()> {
    let set = read_dataset(data)?.items;
    let series: Vec<Sequence> = set.sequences().cloned().collect();
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter("--train-fraction must be in (0, 1)".into()));
    }
    let pairs = split_series(&series, split)?;
    let n_train = ((train_fraction * pairs.len() as f64).round() as usize).clamp(1, pairs.len().saturating_sub(1));
    if pairs.len() < 2 {
        return Err(Error::InvalidParameter("forecasting needs at least two series".into()));
    }
    let (train, test) = pairs.split_at(n_train);
    let dim = set.dim();
    let (t_in, t_out) = (train[0].prefix.len(), train[0].target.len());
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.global.seed);
    let model = ForecastModel::random(dim, t_in, t_out, hidden, &mut rng)?;
    let head = match ctx.global.variance_mode() {
        VarianceArg::Unit => None,
        VarianceArg::PerToken => Some(ctx.sigma_model(UncertaintyVariant::PerToken, dim)?),
        other => {
            return Err(Error::InvalidParameter(format!(
                "forecasting supports unit or per-token variances, not {}",
                other.as_str()
            )))
        }
    };
    let untrained = forecast_mse(&model, test)?;
    let cfg = ForecastConfig {
        gibbs: ctx.global.gibbs()?,
        epochs,
        step,
    };
    let report = forecast_train(train, model, head, &cfg)?;
    let predictions: Vec<Sequence> = test
        .iter()
        .map(|p| forecast_predict(&report.model, &p.prefix))
        .collect::<Result<_>>()?;
    let mut body = format!("# one row per held-out series; {t_out} steps, features interleaved per step\n");
    body.push_str(&sequences_csv(&predictions.iter().collect::<Vec<_>>()));
    ctx.write("predictions.csv", &body)?;
    let mut trace = String::from("epoch,loss\n");
    for (i, v) in report.trace.iter().enumerate() {
        let _ = writeln!(trace, "{i},{}", format_number(*v));
    }
    ctx.write("trace.csv", &trace)?;
    if let Some(h) = &report.sigma {
        write_text(&ctx.out("sigma_model.txt")?, &ctx.header, &h.to_text())?;
    }
    ctx.metric("train_series", train.len());
    ctx.metric("test_series", test.len());
    ctx.metric("input_length", t_in);
    ctx.metric("output_length", t_out);
    ctx.metric("train_loss_initial", report.trace[0]);
    ctx.metric("train_loss_final", report.trace[report.trace.len() - 1]);
    ctx.metric("test_mse_untrained", untrained);
    ctx.metric("test_mse_trained", forecast_mse(&report.model, test)?);
    Ok(())
}

fn cmd_dictlearn(
    ctx: &mut Context,
    data: &Path,
    atoms: usize,
    k_nearest: usize,
    gamma_prime: f64,
    lambda_dl: f64,
    dict_iters: usize,
) -> Result<()> {
    let set = read_dataset(data)?.items;
    let series: Vec<Sequence> = set.sequences().cloned().collect();
    let head = ctx.head_for(set.dim(), false)?;
    let scorer = ctx.scorer(head.as_ref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.global.seed);
    let mut dict = Dictionary::from_samples(&series, atoms, k_nearest, &mut rng)?;
    dict.gamma_prime = gamma_prime;
    dict.lambda_dl = lambda_dl;
    dict.dict_iters = dict_iters;
    dict.validate()?;
    let res = dict_update(&series, &dict, &scorer)?;
    let learned = &res.dictionary;
    let atom_refs: Vec<&Sequence> = learned.atoms().iter().collect();
    ctx.write("atoms.csv", &sequences_csv(&atom_refs))?;
    let mut codes = String::new();
    for s in &series {
        let alpha = lcsa_code(s, learned, &scorer)?;
        let line: Vec<String> = alpha.iter().map(|v| format_number(*v)).collect();
        codes.push_str(&line.join(","));
        codes.push('\n');
    }
    ctx.write("codes.csv", &codes)?;
    let mut trace = String::from("iteration,mean_reconstruction_dist\n");
    for (i, v) in res.trace.iter().enumerate() {
        let _ = writeln!(trace, "{i},{}", format_number(*v));
    }
    ctx.write("trace.csv", &trace)?;
    ctx.metric("atoms", learned.len());
    ctx.metric("k_nearest", learned.k_nearest);
    ctx.metric("reconstruction_initial", res.trace[0]);
    ctx.metric("reconstruction_final", res.trace[res.trace.len() - 1]);
    Ok(())
}

fn dispatch(ctx: &mut Context, command: &Command) -> Result<bool> {
    match command {
        Command::Dist {
            a,
            b,
            cost_matrix,
            variance_matrix,
            coupling,
        } => cmd_dist(
            ctx,
            a.as_deref(),
            b.as_deref(),
            cost_matrix.as_deref(),
            variance_matrix.as_deref(),
            *coupling,
        )
        .map(|_| true),
        Command::Selftest { trials } => cmd_selftest(ctx, *trials),
        Command::Synth {
            kind,
            count,
            test_count,
            length,
        } => cmd_synth(ctx, *kind, *count, *test_count, *length).map(|_| true),
        Command::Barycenter {
            data,
            count,
            length,
            max_iters,
            unit_penalty,
        } => cmd_barycenter(ctx, data, *count, *length, *max_iters, *unit_penalty).map(|_| true),
        Command::Knn { train, test } => cmd_knn(ctx, train, test).map(|_| true),
        Command::Centroid { train, test, max_iters } => cmd_centroid(ctx, train, test, *max_iters).map(|_| true),
        Command::Forecast {
            data,
            split,
            train_fraction,
            epochs,
            step,
            hidden,
        } => cmd_forecast(ctx, data, *split, *train_fraction, *epochs, *step, *hidden).map(|_| true),
        Command::Dictlearn {
            data,
            atoms,
            k_nearest,
            gamma_prime,
            lambda_dl,
            dict_iters,
        } => cmd_dictlearn(ctx, data, *atoms, *k_nearest, *gamma_prime, *lambda_dl, *dict_iters).map(|_| true),
    }
}

/// Failures caused by the input or flags exit with 2, everything else with 1.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged(_) => 1,
        _ => 2,
    }
}

/// Runs the tool on `args` (including the program name) and returns the
/// process exit code.
pub fn run(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let header = vec![
        format!("udtw {VERSION}"),
        format!("command: {}", echoed_command(&args)),
        RunConfig::from_args(&cli.global).header_line(),
    ];
    let mut ctx = Context {
        global: cli.global.clone(),
        header,
        summary: Vec::new(),
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 1;
        }
    };
    let writes_summary = !matches!(cli.command, Command::Dist { .. } | Command::Selftest { .. });
    let outcome = pool.install(|| {
        let ok = dispatch(&mut ctx, &cli.command)?;
        let summary = ctx.finish(writes_summary)?;
        Ok::<_, Error>((ok, summary))
    });
    match outcome {
        Ok((ok, summary)) => {
            if !ctx.summary.is_empty() {
                print!("{summary}");
            }
            if ok {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
