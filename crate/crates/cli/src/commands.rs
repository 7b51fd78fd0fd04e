use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use tbp_core::evaluation::{
    hit_ratios_by_asset, threshold_accuracy, write_accuracy_csv, write_hit_ratio_csv,
    HitRatioSummary,
};
use tbp_core::fixture::{write_fixture, FixtureSpec};
use tbp_core::forecast::{forecast, ForecastError, ForecastPanel};
use tbp_core::frontier::{
    backtest_grid, build_frontier, manage_step, write_fit_csv, write_frontier_csv, Axis,
    FrontierError, FrontierModel, ManagePlan,
};
use tbp_core::market_data::{
    aggregate_monthly, build_panel, make_windows, parse_daily_csv, read_panel_csv, split_panel,
    summarize_split, write_panel_csv, DatasetSplit, MonthlyFeaturePanel, FEATURE_NAMES,
};
use tbp_core::portfolio::{
    backtest, ewp_backtest, write_backtest_csv, write_stats_csv, BacktestResult, PortfolioError,
    Selector, TbpConfig,
};
use tbp_core::rnn::{
    grid_search, load_checkpoint, train, write_checkpoint, EpochRecord, ModelCheckpoint, RnnError,
    RnnModel, TrainingMeta,
};

use crate::artifacts::OutputDir;
use crate::config::{parse_theta_grid, RunConfig};
use crate::{
    BacktestArgs, CliError, CliResult, Command, EvaluateArgs, FailureKind, FixtureArgs,
    FrontierArgs, IngestArgs, ManageArgs, SplitName, TrainArgs,
};

pub const PANEL: &str = "panel.csv";
pub const SPLIT: &str = "split.json";
pub const CHECKPOINT: &str = "model.ckpt";
const SPLIT_SCHEMA: u32 = 1;

fn input(e: impl Into<anyhow::Error>) -> CliError {
    CliError::new(FailureKind::Input, e)
}

fn rnn_failure(e: RnnError) -> CliError {
    match e {
        RnnError::Diverged { .. } => CliError::new(FailureKind::Numerical, e),
        e => input(e),
    }
}

fn portfolio_failure(e: PortfolioError) -> CliError {
    match e {
        PortfolioError::ReturnBelowMinusOne { .. } => CliError::new(FailureKind::Numerical, e),
        e => input(e),
    }
}

fn forecast_failure(e: ForecastError) -> CliError {
    match e {
        ForecastError::Rnn(e) => rnn_failure(e),
        e => input(e),
    }
}

fn frontier_failure(e: FrontierError) -> CliError {
    match e {
        FrontierError::TargetOutOfRange { .. } | FrontierError::NonBracketable { .. } => {
            CliError::new(FailureKind::OutOfRange, e)
        }
        FrontierError::Portfolio(e) => portfolio_failure(e),
        FrontierError::Forecast(e) => forecast_failure(e),
        e => input(e),
    }
}

pub fn dispatch(command: Command, mut config: RunConfig) -> CliResult<()> {
    match command {
        Command::Fixture(args) => {
            if let Some(dir) = args.data_dir.clone() {
                config.data.dir = dir;
            }
            config.validate()?;
            cmd_fixture(&args, &config)
        }
        Command::Ingest(args) => {
            if let Some(dir) = &args.data_dir {
                config.data.dir = dir.clone();
            }
            if let Some(agg) = &args.agg {
                config.data.aggregation = agg.parse().map_err(|e: String| anyhow!(e))?;
            }
            config.validate()?;
            cmd_ingest(&args, &config)
        }
        Command::Train(args) => {
            if let Some(cell) = &args.cell {
                config.network.cell = cell.parse().map_err(|e: String| anyhow!(e))?;
            }
            if let Some(epochs) = args.epochs {
                config.network.max_epochs = epochs;
            }
            config.validate()?;
            cmd_train(&args, &config)
        }
        Command::Evaluate(args) => {
            config.validate()?;
            cmd_evaluate(&args, &config)
        }
        Command::Backtest(args) => {
            if let Some(mode) = &args.mode {
                config.portfolio.mode = mode.parse().map_err(|e: String| anyhow!(e))?;
            }
            if let Some(t) = args.theta_minus {
                config.portfolio.theta_minus = t;
            }
            let all = match args.theta_plus.as_deref() {
                Some("all") => true,
                Some(t) => {
                    config.portfolio.theta_plus = t.parse().with_context(|| {
                        format!("--theta-plus must be a number or `all`, got `{t}`")
                    })?;
                    false
                }
                None => false,
            };
            config.validate()?;
            cmd_backtest(&args, all, &config)
        }
        Command::Frontier(args) => {
            if let Some(t) = &args.thetas {
                config.portfolio.thetas = t.clone();
            }
            if let Some(w) = args.window {
                config.portfolio.window = w;
            }
            config.validate()?;
            cmd_frontier(&args, &config)
        }
        Command::Manage(args) => {
            if let Some(t) = &args.thetas {
                config.portfolio.thetas = t.clone();
            }
            if let Some(w) = args.window {
                config.portfolio.window = w;
            }
            config.validate()?;
            cmd_manage(&args, &config)
        }
        Command::Report => cmd_report(&config),
    }
}

fn out_dir(config: &RunConfig) -> &Path {
    &config.run.output_dir
}

fn cmd_fixture(args: &FixtureArgs, config: &RunConfig) -> CliResult<()> {
    if args.assets == 0 || args.months == 0 {
        return Err(input(anyhow!(
            "fixture needs at least one asset and one month"
        )));
    }
    let spec = FixtureSpec {
        assets: args.assets,
        months: args.months,
        seed: config.run.seed,
        ..FixtureSpec::default()
    };
    let paths = write_fixture(&config.data.dir, &spec)
        .with_context(|| format!("writing fixture to {}", config.data.dir.display()))?;
    println!(
        "wrote {} daily files to {}",
        paths.len(),
        config.data.dir.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitRange {
    start: usize,
    end: usize,
    first_month: Option<String>,
    last_month: Option<String>,
}

/// Split description written next to the panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitManifest {
    schema_version: u32,
    aggregation: String,
    assets: Vec<String>,
    months: usize,
    window: usize,
    train: SplitRange,
    validation: SplitRange,
    test: SplitRange,
}

impl SplitManifest {
    fn split(&self) -> DatasetSplit {
        DatasetSplit {
            train: self.train.start..self.train.end,
            validation: self.validation.start..self.validation.end,
            test: self.test.start..self.test.end,
        }
    }
}

fn data_files(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir)
        .with_context(|| format!("reading data directory {}", dir.display()))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .context("non UTF-8 file name")?;
            files.push((name.to_string(), path.clone()));
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no .csv files in {}", dir.display());
    }
    Ok(files)
}

fn cmd_ingest(_args: &IngestArgs, config: &RunConfig) -> CliResult<()> {
    let mut monthly = Vec::new();
    for (name, path) in data_files(&config.data.dir)? {
        let daily =
            parse_daily_csv(&path).with_context(|| format!("parsing {}", path.display()))?;
        monthly.push((name, aggregate_monthly(&daily, config.data.aggregation)));
    }
    let panel = build_panel(&monthly).map_err(input)?;
    let window = config.network.seq_len;
    let split = split_panel(
        &panel,
        config.data.train_fraction,
        config.data.validation_fraction,
        window,
    )
    .map_err(input)?;

    let range = |r: &Range<usize>| SplitRange {
        start: r.start,
        end: r.end,
        first_month: panel
            .months()
            .get(r.start)
            .filter(|_| !r.is_empty())
            .map(ToString::to_string),
        last_month: r
            .end
            .checked_sub(1)
            .filter(|_| !r.is_empty())
            .map(|i| panel.months()[i].to_string()),
    };
    let manifest = SplitManifest {
        schema_version: SPLIT_SCHEMA,
        aggregation: config.data.aggregation.to_string(),
        assets: panel.assets().to_vec(),
        months: panel.num_months(),
        window,
        train: range(&split.train),
        validation: range(&split.validation),
        test: range(&split.test),
    };

    let mut out = OutputDir::new(out_dir(config));
    out.write(PANEL, |w| write_panel_csv(&panel, w))?;
    let json = serde_json::to_string_pretty(&manifest).map_err(input)?;
    out.write(SPLIT, |w| writeln!(w, "{json}"))?;
    out.write("summary.csv", |w| {
        writeln!(w, "split,asset,feature,mean,std,min,max")?;
        for (name, r) in [
            ("train", &split.train),
            ("validation", &split.validation),
            ("test", &split.test),
        ] {
            for s in summarize_split(&panel, r.clone()) {
                for (feature, v) in FEATURE_NAMES.iter().zip(&s.features) {
                    writeln!(
                        w,
                        "{name},{},{feature},{},{},{},{}",
                        s.asset, v.mean, v.std, v.min, v.max
                    )?;
                }
            }
        }
        Ok(())
    })?;
    out.finish("ingest", config)?;
    println!(
        "panel: {} assets x {} months; train {} / validation {} / test {} months",
        panel.num_assets(),
        panel.num_months(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(())
}

fn load_panel(config: &RunConfig) -> CliResult<(MonthlyFeaturePanel, DatasetSplit)> {
    let dir = out_dir(config);
    let panel_path = dir.join(PANEL);
    let file = std::fs::File::open(&panel_path)
        .with_context(|| format!("opening {} (run `tbp ingest` first)", panel_path.display()))?;
    let panel = read_panel_csv(std::io::BufReader::new(file))
        .with_context(|| format!("loading {}", panel_path.display()))?;
    let text = std::fs::read_to_string(dir.join(SPLIT))
        .with_context(|| format!("reading {}", dir.join(SPLIT).display()))?;
    let manifest: SplitManifest = serde_json::from_str(&text).context("parsing split manifest")?;
    if manifest.schema_version != SPLIT_SCHEMA {
        return Err(input(anyhow!(
            "split manifest schema {} unsupported",
            manifest.schema_version
        )));
    }
    if manifest.assets != panel.assets() || manifest.months != panel.num_months() {
        return Err(input(anyhow!("split manifest does not describe {}", PANEL)));
    }
    Ok((panel, manifest.split()))
}

fn write_history(w: &mut dyn Write, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_loss")?;
    for r in history {
        writeln!(w, "{},{},{}", r.epoch, r.train_loss, r.val_loss)?;
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs, config: &RunConfig) -> CliResult<()> {
    let (panel, split) = load_panel(config)?;
    let base = config.network_config();
    let train_set = make_windows(&panel, split.train.clone(), base.seq_len);
    let val_set = make_windows(&panel, split.validation.clone(), base.seq_len);
    let mut out = OutputDir::new(out_dir(config));

    let (outcome, label) = if args.grid {
        let points = config.grid.points();
        let search = grid_search(&base, &points, &train_set, &val_set).map_err(rnn_failure)?;
        for (idx, entry) in search.entries.iter().enumerate() {
            out.write(&format!("histories/grid_{idx:02}.csv"), |w| {
                write_history(w, &entry.outcome.history)
            })?;
        }
        out.write("grid.csv", |w| {
            writeln!(
                w,
                "index,layers,hidden,dropout,epochs_run,best_epoch,best_val_loss,best"
            )?;
            for (idx, e) in search.entries.iter().enumerate() {
                writeln!(
                    w,
                    "{idx},{},{},{},{},{},{},{}",
                    e.point.layers,
                    e.point.hidden,
                    e.config.dropout,
                    e.outcome.epochs_run(),
                    e.outcome.best_epoch,
                    e.outcome.best_val_loss,
                    u8::from(idx == search.best)
                )?;
            }
            Ok(())
        })?;
        let best = search.best();
        let label = format!(
            "grid point {} ({} layers, {} units, dropout {})",
            search.best, best.point.layers, best.point.hidden, best.config.dropout
        );
        (best.outcome.clone(), label)
    } else {
        let model = RnnModel::new(base).map_err(rnn_failure)?;
        (
            train(model, &train_set, &val_set).map_err(rnn_failure)?,
            "single configuration".to_string(),
        )
    };

    let ckpt = ModelCheckpoint {
        meta: TrainingMeta {
            epochs_run: outcome.epochs_run(),
            best_epoch: outcome.best_epoch,
            best_val_loss: outcome.best_val_loss,
        },
        model: outcome.model,
    };
    out.write(CHECKPOINT, |w| write_checkpoint(&ckpt, w))?;
    out.write("history.csv", |w| write_history(w, &outcome.history))?;
    out.finish("train", config)?;
    println!(
        "{} {label}: {} epochs, best epoch {} with validation loss {}",
        ckpt.model.config().cell,
        ckpt.meta.epochs_run,
        ckpt.meta.best_epoch,
        ckpt.meta.best_val_loss
    );
    Ok(())
}

fn load_model(config: &RunConfig, checkpoint: Option<&Path>) -> CliResult<RnnModel> {
    let path = checkpoint.map_or_else(|| out_dir(config).join(CHECKPOINT), Path::to_path_buf);
    let ckpt = load_checkpoint(&path).map_err(|e| {
        input(anyhow::Error::new(e).context(format!("loading checkpoint {}", path.display())))
    })?;
    Ok(ckpt.model)
}

fn forecasts_for(
    model: &RnnModel,
    panel: &MonthlyFeaturePanel,
    range: Range<usize>,
) -> CliResult<ForecastPanel> {
    let fp = forecast(model, panel, range).map_err(forecast_failure)?;
    if fp.num_months() == 0 {
        return Err(input(anyhow!(
            "no month in the split has a full {}-month window and a realized return",
            model.config().seq_len
        )));
    }
    Ok(fp)
}

fn cmd_evaluate(args: &EvaluateArgs, config: &RunConfig) -> CliResult<()> {
    let (panel, split) = load_panel(config)?;
    let model = load_model(config, args.checkpoint.as_deref())?;
    let range = match args.split {
        SplitName::Train => split.train,
        SplitName::Validation => split.validation,
        SplitName::Test => split.test,
    };
    let records = forecasts_for(&model, &panel, range)?.records();
    let per_asset = hit_ratios_by_asset(&records);
    let ratios: Vec<f64> = per_asset.iter().map(|(_, h)| *h).collect();
    let summary =
        HitRatioSummary::of(&ratios).ok_or_else(|| input(anyhow!("no assets to evaluate")))?;
    let thetas = parse_theta_grid(&config.portfolio.thetas)?;
    let accuracy = threshold_accuracy(&records, &thetas);

    let mut out = OutputDir::new(out_dir(config));
    out.write("hit_ratios.csv", |w| write_hit_ratio_csv(&per_asset, w))?;
    out.write("accuracy.csv", |w| write_accuracy_csv(&accuracy, w))?;
    out.write("predictions.csv", |w| {
        writeln!(w, "asset,month,predicted,realized")?;
        for r in &records {
            writeln!(w, "{},{},{},{}", r.asset, r.month, r.predicted, r.realized)?;
        }
        Ok(())
    })?;
    out.finish("evaluate", config)?;
    println!("hit ratio mean, sd: {summary}");
    Ok(())
}

fn cmd_backtest(args: &BacktestArgs, all: bool, config: &RunConfig) -> CliResult<()> {
    let (panel, split) = load_panel(config)?;
    let model = load_model(config, args.checkpoint.as_deref())?;
    let forecasts = forecasts_for(&model, &panel, split.test)?;
    let p = &config.portfolio;
    let (selector, theta) = if all {
        (Selector::All, None)
    } else {
        let cfg = TbpConfig::new(p.mode, p.theta_plus, p.theta_minus).map_err(input)?;
        (Selector::Threshold(cfg), Some(p.theta_plus))
    };
    let tbp = backtest(&forecasts, &selector).map_err(portfolio_failure)?;
    let ewp = ewp_backtest(&forecasts).map_err(portfolio_failure)?;
    let singles = (0..panel.num_assets())
        .map(|a| backtest(&forecasts, &Selector::Asset(a)))
        .collect::<Result<Vec<BacktestResult>, _>>()
        .map_err(portfolio_failure)?;

    let assets = panel.assets();
    let mut out = OutputDir::new(out_dir(config));
    out.write("backtest/tbp.csv", |w| write_backtest_csv(&tbp, assets, w))?;
    out.write("backtest/ewp.csv", |w| write_backtest_csv(&ewp, assets, w))?;
    let mut rows = vec![
        (format!("tbp-{}", p.mode), theta, tbp.stats()),
        ("ewp".to_string(), None, ewp.stats()),
    ];
    for (name, result) in assets.iter().zip(&singles) {
        out.write(&format!("backtest/assets/{name}.csv"), |w| {
            write_backtest_csv(result, assets, w)
        })?;
        rows.push((name.clone(), None, result.stats()));
    }
    out.write("backtest/stats.csv", |w| write_stats_csv(&rows, w))?;
    out.finish("backtest", config)?;

    println!("portfolio: mean / SD / mean/SD / average assets, final wealth");
    for ((name, _, stats), result) in rows.iter().zip([&tbp, &ewp].into_iter().chain(&singles)) {
        println!("{name}: {stats}, {:.4}", result.final_wealth());
    }
    Ok(())
}

fn base_config(config: &RunConfig) -> CliResult<TbpConfig> {
    let p = &config.portfolio;
    TbpConfig::new(p.mode, p.theta_plus, p.theta_minus).map_err(input)
}

fn cmd_frontier(args: &FrontierArgs, config: &RunConfig) -> CliResult<()> {
    let (panel, split) = load_panel(config)?;
    let model = load_model(config, args.checkpoint.as_deref())?;
    let forecasts = forecasts_for(&model, &panel, split.test)?;
    let thetas = parse_theta_grid(&config.portfolio.thetas)?;
    let backtests =
        backtest_grid(&forecasts, base_config(config)?, &thetas).map_err(frontier_failure)?;
    let points = build_frontier(&backtests, config.portfolio.window).map_err(frontier_failure)?;
    let frontier = FrontierModel::new(points).map_err(frontier_failure)?;

    let mut out = OutputDir::new(out_dir(config));
    out.write("frontier.csv", |w| write_frontier_csv(&frontier.points, w))?;
    out.write("frontier_fit.csv", |w| match &frontier.fit {
        Some(fit) => write_fit_csv(fit, w),
        None => writeln!(
            w,
            "c0,c1,c2,c3,residual_rms,domain_lo,domain_hi\nNA,NA,NA,NA,NA,NA,NA"
        ),
    })?;
    out.finish("frontier", config)?;
    println!("theta, risk, return");
    for p in &frontier.points {
        println!("{:.4}, {:.4}, {:.4}", p.theta, p.risk, p.ret);
    }
    if frontier.fit.is_none() {
        println!("fewer than 4 distinct risks: no cubic fit");
    }
    Ok(())
}

fn cmd_manage(args: &ManageArgs, config: &RunConfig) -> CliResult<()> {
    let (panel, split) = load_panel(config)?;
    let model = load_model(config, args.checkpoint.as_deref())?;
    let (axis, target) = match (args.target_risk, args.target_return) {
        (Some(r), None) => (Axis::Risk, r),
        (None, Some(r)) => (Axis::Return, r),
        _ => {
            return Err(input(anyhow!(
                "give exactly one of --target-risk or --target-return"
            )))
        }
    };
    let plan = ManagePlan {
        axis,
        target,
        thetas: parse_theta_grid(&config.portfolio.thetas)?,
        window: config.portfolio.window,
        base: base_config(config)?,
    };
    let rec = match manage_step(&model, &panel, split.test, &plan) {
        Ok(rec) => rec,
        Err(FrontierError::TargetOutOfRange { target, nearest }) => {
            println!(
                "nearest achievable point: theta {}, risk {}, return {}",
                nearest.theta, nearest.risk, nearest.ret
            );
            return Err(frontier_failure(FrontierError::TargetOutOfRange {
                target,
                nearest,
            }));
        }
        Err(FrontierError::NonBracketable { target, candidates }) => {
            for c in &candidates {
                println!(
                    "candidate: theta {}, risk {}, return {}",
                    c.theta, c.risk, c.ret
                );
            }
            return Err(frontier_failure(FrontierError::NonBracketable {
                target,
                candidates,
            }));
        }
        Err(e) => return Err(frontier_failure(e)),
    };

    let json = serde_json::to_string_pretty(&rec).map_err(input)?;
    let mut out = OutputDir::new(out_dir(config));
    out.write("recommendation.json", |w| writeln!(w, "{json}"))?;
    out.finish("manage", config)?;
    let members: Vec<&str> = rec.members.iter().map(|m| m.asset.as_str()).collect();
    println!(
        "theta {} for {}: expected risk {:.4}, return {:.4}; hold [{}] in {}",
        rec.estimate.theta,
        rec.decision_month,
        rec.estimate.risk,
        rec.estimate.ret,
        members.join(", "),
        rec.holding_month
    );
    Ok(())
}

fn cmd_report(config: &RunConfig) -> CliResult<()> {
    let dir = out_dir(config);
    let sections = [
        ("Split", SPLIT),
        ("Hit ratios", "hit_ratios.csv"),
        ("Threshold accuracy", "accuracy.csv"),
        ("Backtest statistics", "backtest/stats.csv"),
        ("Frontier", "frontier.csv"),
        ("Frontier fit", "frontier_fit.csv"),
        ("Recommendation", "recommendation.json"),
    ];
    let mut text = String::new();
    for (title, rel) in sections {
        if let Ok(body) = std::fs::read_to_string(dir.join(rel)) {
            text.push_str(&format!("== {title} ({rel})\n{body}\n"));
        }
    }
    if text.is_empty() {
        return Err(input(anyhow!("nothing to report in {}", dir.display())));
    }
    let mut out = OutputDir::new(dir);
    out.write("report.txt", |w| w.write_all(text.as_bytes()))?;
    out.finish("report", config)?;
    print!("{text}");
    Ok(())
}
