use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use foodprox::analyze::{report, run_naive, AnalysisSpec, ReportOptions};
use foodprox::data::{read_neighborhoods, read_proximity, read_stores, write_proximity};
use foodprox::geodistance::{
    build_proximity_table, DistanceProvider, FileProvider, ProximityOptions, RecordingProvider, RemoteConfig,
    RemoteProvider, SyntheticProvider, DEFAULT_CANDIDATE_PERCENTILE, EARTH_RADIUS_MILES,
};
use foodprox::impute::{completed_datasets, ParameterDraw, Reference, DEFAULT_IMPUTATIONS};
use foodprox::simlab::{aggregate, dump_datasets, parse_grid, run_replicates, write_metrics_csv, write_replicates_csv};
use foodprox::spatial::{morans_i, residuals_naive, AdjacencyGraph, Inference, Weighting};
use foodprox::synth::stratified_query_sample;
use foodprox::{rng, Error, ImputationOptions, ImputationSpec, Site, TwoPhaseData};
use serde::Serialize;

use crate::config::{name_list, pick, pick_flag, FileConfig};
use crate::manifest::RunManifest;
use crate::{AnalyzeArgs, DatasetArgs, DistancesArgs, ExampleArgs, ImputationArgs, ImputeArgs, SimulateArgs};

const DEFAULT_SEED: u64 = 1;
const DEFAULT_PERMUTATIONS: usize = 9999;

#[derive(Debug)]
pub enum Failure {
    /// Bad input files, flags or configuration. Exit code 2.
    Input(String),
    /// Distance provider or query budget. Exit code 3.
    Provider(String),
    Internal(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Provider(_) => 3,
            Failure::Internal(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) | Failure::Provider(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Provider(_)
            | Error::BudgetExhausted { .. }
            | Error::MissingDistance { .. }
            | Error::PartialResult { .. } => Failure::Provider(msg),
            Error::InvalidInput(_)
            | Error::InvalidConfig(_)
            | Error::InvalidGraph(_)
            | Error::ZeroCount { .. }
            | Error::InsufficientValidation { .. }
            | Error::UnknownCoefficient(_)
            | Error::Io(_)
            | Error::Csv(_) => Failure::Input(msg),
            _ => Failure::Internal(msg),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Input(format!("cannot create {}: {e}", path.display())))
}

fn finish(manifest: RunManifest) -> CmdResult {
    let path = manifest.finish()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

enum ProviderSpec {
    Synthetic(f64),
    File(PathBuf),
    Remote(String),
}

fn parse_provider(s: &str) -> Result<ProviderSpec, Failure> {
    let bad =
        || Failure::Input(format!("unrecognized provider `{s}`; use synthetic:factor=F, file:PATH or remote:URL"));
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    match kind {
        "synthetic" => {
            let factor = rest.strip_prefix("factor=").ok_or_else(bad)?;
            let factor =
                factor.parse().map_err(|_| Failure::Input(format!("provider factor `{factor}` is not a number")))?;
            Ok(ProviderSpec::Synthetic(factor))
        }
        "file" if !rest.is_empty() => Ok(ProviderSpec::File(PathBuf::from(rest))),
        "remote" if !rest.is_empty() => Ok(ProviderSpec::Remote(rest.to_string())),
        _ => Err(bad()),
    }
}

enum Provider {
    Local(Box<dyn DistanceProvider>),
    Remote(Box<RemoteProvider>),
}

impl Provider {
    fn get(&self) -> &dyn DistanceProvider {
        match self {
            Provider::Local(p) => p.as_ref(),
            Provider::Remote(r) => r.as_ref(),
        }
    }
}

enum QuerySpec {
    All,
    None,
    File(PathBuf),
    Stratified(usize),
}

fn parse_query(s: &str) -> Result<QuerySpec, Failure> {
    match s {
        "all" => Ok(QuerySpec::All),
        "none" => Ok(QuerySpec::None),
        _ => match s.split_once(':') {
            Some(("file", path)) if !path.is_empty() => Ok(QuerySpec::File(PathBuf::from(path))),
            Some(("stratified", k)) => k
                .parse()
                .ok()
                .filter(|&k| k > 0)
                .map(QuerySpec::Stratified)
                .ok_or_else(|| Failure::Input(format!("stratified count `{k}` must be a positive integer"))),
            _ => Err(Failure::Input(format!("unrecognized query set `{s}`; use all, none, file:PATH or stratified:K"))),
        },
    }
}

#[derive(Serialize)]
struct DistancesConfig {
    neighborhoods: PathBuf,
    stores: PathBuf,
    out: PathBuf,
    provider: Option<String>,
    query: String,
    percentile: f64,
    radius: f64,
    seed: u64,
    budget: usize,
    throttle_ms: u64,
    timeout_secs: u64,
    cache: Option<PathBuf>,
    pairs_out: Option<PathBuf>,
}

pub fn distances(a: &DistancesArgs, file: &FileConfig) -> CmdResult {
    let remote_defaults = RemoteConfig::default();
    let cfg = DistancesConfig {
        neighborhoods: a.neighborhoods.clone(),
        stores: a.stores.clone(),
        out: a.out.clone(),
        provider: a.provider.clone().or_else(|| file.provider.clone()),
        query: pick(a.query.clone(), file.query.clone(), "all".into()),
        percentile: pick(a.percentile, file.percentile, DEFAULT_CANDIDATE_PERCENTILE),
        radius: pick(a.radius, file.radius, EARTH_RADIUS_MILES),
        seed: pick(a.seed, file.seed, DEFAULT_SEED),
        budget: pick(a.budget, file.budget, remote_defaults.budget),
        throttle_ms: pick(a.throttle_ms, file.throttle_ms, remote_defaults.min_interval.as_millis() as u64),
        timeout_secs: pick(a.timeout_secs, file.timeout_secs, 30),
        cache: a.cache.clone().or_else(|| file.cache.clone()),
        pairs_out: a.pairs_out.clone(),
    };
    let mut manifest = RunManifest::new("distances");
    manifest.config(&cfg);
    manifest.seed = Some(cfg.seed);

    let hoods = read_neighborhoods(&manifest.read(&cfg.neighborhoods)?[..])?;
    let stores = read_stores(&manifest.read(&cfg.stores)?[..])?;
    let hood_sites = hoods.iter().map(|r| r.site()).collect::<Result<Vec<Site>, _>>()?;
    let store_sites = stores.iter().map(|r| r.site()).collect::<Result<Vec<Site>, _>>()?;

    let query_set: BTreeSet<String> = match parse_query(&cfg.query)? {
        QuerySpec::All => hoods.iter().map(|r| r.id.clone()).collect(),
        QuerySpec::None => BTreeSet::new(),
        QuerySpec::File(path) => {
            let bytes = manifest.read(&path)?;
            String::from_utf8_lossy(&bytes)
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && *l != "id")
                .map(String::from)
                .collect()
        }
        QuerySpec::Stratified(k) => stratified_query_sample(
            hoods.iter().map(|r| (r.id.as_str(), r.county.as_str())),
            k,
            &mut rng::seeded(cfg.seed),
        )?,
    };

    let spec = cfg.provider.as_deref().map(parse_provider).transpose()?;
    let provider = match spec {
        None if !query_set.is_empty() => {
            return Err(Failure::Input("--provider is required when any neighborhood is queried".into()));
        }
        // never asked for a distance
        None => Provider::Local(Box::new(SyntheticProvider::new(1.0)?)),
        Some(ProviderSpec::Synthetic(factor)) => {
            Provider::Local(Box::new(SyntheticProvider::with_radius(factor, cfg.radius)?))
        }
        Some(ProviderSpec::File(path)) => {
            Provider::Local(Box::new(FileProvider::from_reader(&manifest.read(&path)?[..])?))
        }
        Some(ProviderSpec::Remote(url)) => {
            let config = RemoteConfig {
                budget: cfg.budget,
                min_interval: Duration::from_millis(cfg.throttle_ms),
                cache_path: cfg.cache.clone(),
            };
            Provider::Remote(Box::new(RemoteProvider::http(url, Duration::from_secs(cfg.timeout_secs), config)?))
        }
    };

    let opts = ProximityOptions { percentile: cfg.percentile, radius: cfg.radius, ..ProximityOptions::default() };
    let table = match &cfg.pairs_out {
        Some(path) => {
            let recorder = RecordingProvider::new(provider.get())?;
            let table = build_proximity_table(&hood_sites, &store_sites, &recorder, &query_set, &opts)?;
            let mut records = recorder.into_records();
            records.sort_by(|x, y| (&x.origin_id, &x.store_id).cmp(&(&y.origin_id, &y.store_id)));
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(path)?);
            for r in &records {
                w.serialize(r).map_err(Error::from)?;
            }
            w.flush().map_err(Error::from)?;
            manifest.output(path);
            table
        }
        None => build_proximity_table(&hood_sites, &store_sites, provider.get(), &query_set, &opts)?,
    };
    if let Provider::Remote(r) = &provider {
        log::info!("remote provider used {} of {} requests", r.requests_used(), r.budget());
    }

    let mut out = create(&cfg.out)?;
    write_proximity(&table.pairs, &mut out)?;
    out.flush().map_err(Error::from)?;
    manifest.outputs.insert(0, cfg.out.display().to_string());
    manifest.warnings = table.warnings;
    finish(manifest)
}

fn load_dataset(a: &DatasetArgs, manifest: &mut RunManifest) -> Result<TwoPhaseData, Failure> {
    let pairs = read_proximity(&manifest.read(&a.proximity)?[..])?;
    let hoods = read_neighborhoods(&manifest.read(&a.neighborhoods)?[..])?;
    Ok(TwoPhaseData::from_records(&pairs, &hoods)?)
}

#[derive(Serialize)]
struct ImputationConfig {
    b: usize,
    seed: u64,
    improper: bool,
    log_shift: Option<f64>,
    impute_interaction: bool,
    covariates: Option<Vec<String>>,
}

impl ImputationConfig {
    fn resolve(a: &ImputationArgs, file: &FileConfig) -> Self {
        Self {
            b: pick(a.b, file.b, DEFAULT_IMPUTATIONS),
            seed: pick(a.seed, file.seed, DEFAULT_SEED),
            improper: pick_flag(a.improper, file.improper, false),
            log_shift: a.log_shift.or(file.log_shift),
            impute_interaction: if a.no_impute_interaction { false } else { file.impute_interaction.unwrap_or(true) },
            covariates: a.covariates.as_deref().map(name_list).or_else(|| file.covariates.clone()),
        }
    }

    fn covariates(&self, data: &TwoPhaseData) -> Result<Vec<String>, Failure> {
        let names = match &self.covariates {
            Some(names) => names.clone(),
            None => data.covariates.iter().map(|c| c.name.clone()).collect(),
        };
        for n in &names {
            data.covariate(n)?;
        }
        Ok(names)
    }

    fn options(&self, covariates: Vec<String>) -> ImputationOptions {
        ImputationOptions {
            b: self.b,
            spec: ImputationSpec { covariates, interact: self.impute_interaction, log_y_shift: self.log_shift },
            parameter_draw: if self.improper { ParameterDraw::Fixed } else { ParameterDraw::Posterior },
        }
    }
}

#[derive(Serialize)]
struct ImputeConfig<'a> {
    proximity: &'a Path,
    neighborhoods: &'a Path,
    out: &'a Path,
    imputation: &'a ImputationConfig,
}

pub fn impute(a: &ImputeArgs, file: &FileConfig) -> CmdResult {
    let icfg = ImputationConfig::resolve(&a.imputation, file);
    if icfg.b == 0 {
        return Err(Failure::Input("--b must be at least 1".into()));
    }
    let mut manifest = RunManifest::new("impute");
    manifest.config(&ImputeConfig {
        proximity: &a.data.proximity,
        neighborhoods: &a.data.neighborhoods,
        out: &a.out,
        imputation: &icfg,
    });
    manifest.seed = Some(icfg.seed);
    let data = load_dataset(&a.data, &mut manifest)?;
    let opts = icfg.options(icfg.covariates(&data)?);
    let completed = completed_datasets(&data, &opts, &mut rng::seeded(icfg.seed))?;

    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(&a.out)?);
    let mut write = || -> csv::Result<()> {
        w.write_record(["imputation", "id", "x_star", "x", "queried"])?;
        for (b, x) in completed.iter().enumerate() {
            for (i, xi) in x.iter().enumerate() {
                let queried = u8::from(data.x[i].is_some()).to_string();
                w.write_record([
                    (b + 1).to_string(),
                    data.ids[i].clone(),
                    data.x_star[i].to_string(),
                    xi.to_string(),
                    queried,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(Error::from)?;
    manifest.output(&a.out);
    finish(manifest)
}

fn parse_reference(s: &str) -> Result<Reference, Failure> {
    match s {
        "normal" => Ok(Reference::Normal),
        "barnard-rubin" | "barnard_rubin" => Ok(Reference::BarnardRubin),
        _ => Err(Failure::Input(format!("unknown reference `{s}`; use normal or barnard-rubin"))),
    }
}

fn parse_weighting(s: &str) -> Result<Weighting, Failure> {
    match s {
        "row" | "row-standardized" => Ok(Weighting::RowStandardized),
        "binary" => Ok(Weighting::Binary),
        _ => Err(Failure::Input(format!("unknown weighting `{s}`; use row or binary"))),
    }
}

fn parse_inference(s: &str, seed: u64) -> Result<Inference, Failure> {
    let permutation = |permutations| Inference::Permutation { permutations, seed: rng::derive_seed(seed, 1) };
    match s {
        "randomization" => Ok(Inference::Randomization),
        "normality" => Ok(Inference::Normality),
        "permutation" => Ok(permutation(DEFAULT_PERMUTATIONS)),
        _ => match s.strip_prefix("permutation:").map(str::parse) {
            Some(Ok(n)) => Ok(permutation(n)),
            _ => {
                Err(Failure::Input(format!("unknown inference `{s}`; use randomization, normality or permutation[:N]")))
            }
        },
    }
}

#[derive(Serialize)]
struct AnalyzeConfig<'a> {
    proximity: &'a Path,
    neighborhoods: &'a Path,
    adjacency: Option<&'a Path>,
    out: &'a Path,
    imputation: &'a ImputationConfig,
    interactions: Option<Vec<String>>,
    weighting: String,
    inference: String,
    level: f64,
    reference: String,
}

pub fn analyze(a: &AnalyzeArgs, file: &FileConfig) -> CmdResult {
    let icfg = ImputationConfig::resolve(&a.imputation, file);
    let cfg = AnalyzeConfig {
        proximity: &a.data.proximity,
        neighborhoods: &a.data.neighborhoods,
        adjacency: a.adjacency.as_deref(),
        out: &a.out,
        imputation: &icfg,
        interactions: a.interactions.as_deref().map(name_list).or_else(|| file.interactions.clone()),
        weighting: pick(a.weighting.clone(), file.weighting.clone(), "row".into()),
        inference: pick(a.inference.clone(), file.inference.clone(), "randomization".into()),
        level: pick(a.level, file.level, 0.95),
        reference: pick(a.reference.clone(), file.reference.clone(), "normal".into()),
    };
    let weighting = parse_weighting(&cfg.weighting)?;
    let inference = parse_inference(&cfg.inference, icfg.seed)?;
    let reference = parse_reference(&cfg.reference)?;
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Failure::Input(format!("--level {} is not in (0, 1)", cfg.level)));
    }
    let mut manifest = RunManifest::new("analyze");
    manifest.config(&cfg);
    manifest.seed = Some(icfg.seed);

    let data = load_dataset(&a.data, &mut manifest)?;
    let covariates = icfg.covariates(&data)?;
    let spec = AnalysisSpec {
        interactions: cfg.interactions.clone().unwrap_or_else(|| covariates.clone()),
        covariates: covariates.clone(),
    };
    spec.validate()?;
    let opts = ReportOptions { imputation: icfg.options(covariates), level: cfg.level, reference };
    let mut rep = report(&data, &spec, &opts, icfg.seed)?;

    match cfg.adjacency {
        Some(path) => {
            let graph = AdjacencyGraph::read_csv(&data.ids, &manifest.read(path)?[..])?;
            let isolated = graph.isolated();
            if !isolated.is_empty() {
                let w = format!("{} neighborhoods have no neighbors: {}", isolated.len(), isolated.join(", "));
                log::warn!("{w}");
                manifest.warnings.push(w);
            }
            let naive = run_naive(&data, &spec)?;
            let e = residuals_naive(&data, &spec, &naive)?;
            rep.spatial = Some(morans_i(&e, &graph, weighting, inference)?);
        }
        None => {
            let w = "no --adjacency given; the Moran's I residual diagnostic is omitted".to_string();
            log::warn!("{w}");
            manifest.warnings.push(w);
        }
    }

    let mut out = create(&a.out)?;
    rep.write_csv(&mut out)?;
    out.flush().map_err(Error::from)?;
    print!("{}", rep.to_text());
    manifest.output(&a.out);
    finish(manifest)
}

const BUNDLED_GRIDS: [(&str, &str); 5] = [
    ("table1", include_str!("../assets/grids/table1.grid")),
    ("table2", include_str!("../assets/grids/table2.grid")),
    ("table3", include_str!("../assets/grids/table3.grid")),
    ("table4", include_str!("../assets/grids/table4.grid")),
    ("smoke", include_str!("../assets/grids/smoke.grid")),
];

#[derive(Serialize)]
struct SimulateConfig<'a> {
    grid: &'a str,
    out: &'a Path,
    replicates: Option<usize>,
    improper: Option<bool>,
    reference: Option<String>,
    scenarios: Vec<foodprox::ScenarioConfig>,
}

pub fn simulate(a: &SimulateArgs, file: &FileConfig) -> CmdResult {
    let mut manifest = RunManifest::new("simulate");
    let path = Path::new(&a.grid);
    let text = if path.is_file() {
        String::from_utf8(manifest.read(path)?).map_err(|_| Failure::Input(format!("{} is not UTF-8", a.grid)))?
    } else if let Some((name, text)) = BUNDLED_GRIDS.iter().find(|(n, _)| *n == a.grid) {
        manifest.record(format!("bundled:{name}"), text.as_bytes());
        text.to_string()
    } else {
        let names: Vec<&str> = BUNDLED_GRIDS.iter().map(|(n, _)| *n).collect();
        return Err(Failure::Input(format!(
            "no grid file `{}` and no bundled grid of that name ({})",
            a.grid,
            names.join(", ")
        )));
    };
    let mut grid = parse_grid(&text)?;

    let replicates = a.replicates.or(file.replicates);
    let improper = if a.improper { Some(true) } else { file.improper };
    let reference = a.reference.clone().or_else(|| file.reference.clone());
    for s in &mut grid {
        if let Some(r) = replicates {
            s.sim.n_replicates = r;
        }
        if let Some(improper) = improper {
            s.parameter_draw = if improper { ParameterDraw::Fixed } else { ParameterDraw::Posterior };
        }
        if let Some(r) = &reference {
            s.reference = parse_reference(r)?;
        }
        s.sim.validate().map_err(|e| Failure::Input(format!("scenario `{}`: {e}", s.name)))?;
    }
    manifest.config(&SimulateConfig {
        grid: &a.grid,
        out: &a.out,
        replicates,
        improper,
        reference: reference.clone(),
        scenarios: grid.clone(),
    });

    let mut rows = Vec::with_capacity(grid.len());
    for s in &grid {
        log::info!("scenario {} ({} replicates)", s.name, s.sim.n_replicates);
        if let Some(dir) = &a.dump {
            dump_datasets(&s.sim, &dir.join(&s.name))?;
        }
        let outcomes = run_replicates(s)?;
        for o in outcomes.iter().filter(|o| o.failure.is_some()) {
            log::warn!("{} replicate {} failed: {}", s.name, o.index, o.failure.as_deref().unwrap_or(""));
        }
        if let Some(dir) = &a.replicates_dir {
            std::fs::create_dir_all(dir).map_err(Error::from)?;
            let path = dir.join(format!("{}.csv", s.name));
            let mut w = create(&path)?;
            write_replicates_csv(&outcomes, &mut w)?;
            w.flush().map_err(Error::from)?;
            manifest.output(&path);
        }
        match aggregate(s, &outcomes) {
            Ok(row) => rows.push(row),
            Err(e) => {
                let w = format!("scenario `{}` omitted: {e}", s.name);
                log::error!("{w}");
                manifest.warnings.push(w);
            }
        }
    }

    let mut out = create(&a.out)?;
    write_metrics_csv(&rows, &mut out)?;
    out.flush().map_err(Error::from)?;
    manifest.outputs.insert(0, a.out.display().to_string());
    finish(manifest)
}

const EXAMPLE_FILES: [(&str, &str); 4] = [
    ("neighborhoods.csv", include_str!("../assets/example/neighborhoods.csv")),
    ("stores.csv", include_str!("../assets/example/stores.csv")),
    ("adjacency.csv", include_str!("../assets/example/adjacency.csv")),
    ("routes.csv", include_str!("../assets/example/routes.csv")),
];

pub fn example(a: &ExampleArgs) -> CmdResult {
    std::fs::create_dir_all(&a.dir).map_err(|e| Failure::Input(format!("cannot create {}: {e}", a.dir.display())))?;
    for (name, text) in EXAMPLE_FILES {
        let path = a.dir.join(name);
        std::fs::write(&path, text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
        println!("{}", path.display());
    }
    Ok(())
}
