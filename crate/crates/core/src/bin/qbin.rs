use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qbin::audit::{check_partitioned_security, size_attack, surviving_graph, workload_skew_attack, AdversarialView, Granularity, OracleOptions};
use qbin::binning::{create_bins, BinLayout, BinStrategy};
use qbin::costmodel::{calibrate, eta_curve, log_space, write_curve_csv, CounterSample, UnitCosts};
use qbin::crypto::Keys;
use qbin::executor::{Client, Mechanism};
use qbin::io::{read_rows, write_rows};
use qbin::model::{ingest_named, AttributeValue, OwnerMetadata, PartitionedRelation};
use qbin::seed::SEED_ENV;
use qbin::stores::{upload, write_ndjson, ScanCharging, Stores};
use qbin::workload::{generate, run_queries, BenchReport, DatasetSpec, QueryDistribution, RunOptions, WorkloadSpec};
use qbin::Seed;

const EXIT_VERIFY: u8 = 2;
const EXIT_AUDIT: u8 = 3;

#[derive(Parser)]
#[command(name = "qbin", version, about = "Query binning over encrypted and plaintext partitions")]
struct Cli {
    /// Root seed. Keys, permutations and workloads all derive from it.
    #[arg(long, global = true, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic relation as NDJSON.
    Generate(GenerateArgs),
    /// Split a relation by sensitivity and print its owner metadata.
    Ingest(InputArgs),
    /// Build the secret bin layout.
    Plan(PlanArgs),
    /// Encrypt and place a relation into a store directory.
    Upload(UploadArgs),
    /// Answer one selection through the stores.
    Query(QueryArgs),
    /// Run a query workload end to end.
    Workload(WorkloadArgs),
    /// Analyse an adversarial view.
    Audit(AuditArgs),
    /// Evaluate the analytical cost model.
    Model(ModelArgs),
    /// Run a workload and emit only counters.
    Bench(WorkloadArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Distinct values per side, summed over both sides.
    #[arg(long)]
    values: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    shared: usize,
    /// Tuples per sensitive value, e.g. `1`, `10..90:10`, `uniform:1:5`, `zipf:1.2:100`.
    #[arg(long, default_value = "1")]
    sensitive_mult: String,
    #[arg(long, default_value = "1")]
    nonsensitive_mult: String,
    /// Rescale multiplicities to exactly this many rows.
    #[arg(long)]
    rows: Option<u64>,
    #[arg(long, default_value = "c_custkey")]
    attribute: String,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InputArgs {
    /// NDJSON or CSV rows.
    #[arg(long, short)]
    input: PathBuf,
    /// The searchable attribute.
    #[arg(long, short)]
    attribute: String,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Base,
    NearSquare,
    General,
}

impl From<StrategyArg> for BinStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Base => BinStrategy::Base,
            StrategyArg::NearSquare => BinStrategy::NearSquare,
            StrategyArg::General => BinStrategy::General,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Binned,
    Naive,
    RandomPairing,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Binned => Mechanism::Binned,
            MechanismArg::Naive => Mechanism::Naive,
            MechanismArg::RandomPairing => Mechanism::RandomPairing,
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    attribute: String,
    #[arg(long, value_enum, default_value = "general")]
    strategy: StrategyArg,
    /// Where to keep the layout. Owner-side only.
    #[arg(long, short)]
    out: PathBuf,
    /// Also print the retrieval plan for these values.
    #[arg(long)]
    explain: Vec<String>,
}

#[derive(Args)]
struct UploadArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    attribute: String,
    #[arg(long, short)]
    layout: PathBuf,
    /// The cloud-side directory.
    #[arg(long, short)]
    stores: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long, short)]
    layout: PathBuf,
    #[arg(long, short)]
    stores: PathBuf,
    /// The value to select; integers are read as integers.
    #[arg(long)]
    value: String,
    #[arg(long, value_enum, default_value = "binned")]
    mechanism: MechanismArg,
    /// Append what the stores saw to this view file.
    #[arg(long)]
    view: Option<PathBuf>,
}

#[derive(Args)]
struct WorkloadArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    attribute: String,
    #[arg(long, value_enum, default_value = "general")]
    strategy: StrategyArg,
    /// `uniform`, `zipf:<exponent>`, `sweep` or `list:<v>,<v>,...`.
    #[arg(long, default_value = "sweep")]
    dist: String,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, value_enum, default_value = "binned")]
    mechanism: MechanismArg,
    /// Check every answer against a brute-force scan.
    #[arg(long)]
    verify: bool,
    /// Charge one store scan per token instead of per query.
    #[arg(long)]
    per_token_scans: bool,
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    view: PathBuf,
    /// Run the exhaustive security oracle.
    #[arg(long)]
    oracle: bool,
    /// The view is a sweep over every domain value.
    #[arg(long)]
    covers_domain: bool,
    /// Write the surviving-matches graph as CSV.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bins")]
    granularity: GranularityArg,
    /// Run the size and workload-skew attacks.
    #[arg(long)]
    attacks: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Bins,
    Values,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    /// `lo:hi:points`, log-spaced.
    #[arg(long, default_value = "10:100000:25")]
    gamma_range: String,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    ns: u64,
    /// Compare a bench `stats.json` against the model instead.
    #[arg(long)]
    calibrate: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn output(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_relation(input: &Path, attribute: &str) -> anyhow::Result<PartitionedRelation> {
    let rows = read_rows(input).with_context(|| format!("reading {}", input.display()))?;
    let name = input.file_stem().and_then(|s| s.to_str()).unwrap_or("relation");
    Ok(ingest_named(name, rows, attribute)?)
}

fn load_layout(path: &Path) -> anyhow::Result<BinLayout> {
    let f = File::open(path).with_context(|| format!("opening layout {}", path.display()))?;
    Ok(BinLayout::read_ndjson(BufReader::new(f))?)
}

fn parse_value(s: &str) -> AttributeValue {
    s.parse::<i64>().map(AttributeValue::Int).unwrap_or_else(|_| s.into())
}

fn parse_dist(s: &str) -> anyhow::Result<QueryDistribution> {
    Ok(match s {
        "uniform" => QueryDistribution::Uniform,
        "sweep" => QueryDistribution::Sweep,
        _ => {
            if let Some(e) = s.strip_prefix("zipf:") {
                QueryDistribution::Zipf { exponent: e.parse()? }
            } else if let Some(vs) = s.strip_prefix("list:") {
                QueryDistribution::List {
                    values: vs.split(',').map(parse_value).collect(),
                }
            } else {
                bail!("unknown workload distribution `{s}`")
            }
        }
    })
}

/// True when `inner` is `outer` or lies under it.
fn within(inner: &Path, outer: &Path) -> bool {
    match (inner.canonicalize(), outer.canonicalize()) {
        (Ok(i), Ok(o)) => i.starts_with(o),
        _ => false,
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let seed = Seed(cli.seed);
    match cli.cmd {
        Cmd::Generate(a) => {
            let spec = DatasetSpec {
                values: a.values,
                alpha: a.alpha,
                shared: a.shared,
                sensitive_multiplicity: a.sensitive_mult.parse()?,
                nonsensitive_multiplicity: a.nonsensitive_mult.parse()?,
                rows: a.rows,
                attribute: a.attribute,
                seed,
            };
            let rows = generate(&spec)?;
            let sensitive = rows.iter().filter(|r| r.sensitive).count();
            write_rows(&rows, output(&a.out)?)?;
            eprintln!("generated {} rows ({sensitive} sensitive)", rows.len());
        }
        Cmd::Ingest(a) => {
            let rel = load_relation(&a.input, &a.attribute)?;
            let meta = OwnerMetadata::build(&rel);
            let mut out = output(&a.out)?;
            serde_json::to_writer_pretty(&mut out, &meta)?;
            writeln!(out)?;
            eprintln!(
                "{} sensitive rows, {} plaintext rows; |S| = {}, |NS| = {}, {} shared values",
                rel.sensitive_rows.len(),
                rel.nonsensitive_rows.len(),
                meta.s_len(),
                meta.ns_len(),
                meta.association.len()
            );
        }
        Cmd::Plan(a) => {
            let rel = load_relation(&a.input, &a.attribute)?;
            let meta = OwnerMetadata::build(&rel);
            let layout = create_bins(&meta, seed, a.strategy.into())?;
            layout.check_invariants(&meta).map_err(anyhow::Error::msg)?;
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut f = BufWriter::new(File::create(&a.out)?);
            layout.write_ndjson(&mut f)?;
            f.flush()?;
            let client = Client::new(Keys::derive(seed), layout.clone(), &rel.searchable_attribute);
            for v in &a.explain {
                let p = client.plan(&parse_value(v));
                println!("{}", serde_json::json!({"value": v, "sensitive_bin": p.sensitive_bin, "nonsensitive_bin": p.nonsensitive_bin}));
            }
            eprintln!(
                "{:?} layout: {} sensitive bins, {} non-sensitive bins, {} fake tuples; keep {} private",
                layout.mode,
                layout.sb_count(),
                layout.nsb_count(),
                layout.total_fakes(),
                a.out.display()
            );
        }
        Cmd::Upload(a) => {
            fs::create_dir_all(&a.stores)?;
            if within(&a.layout, &a.stores) {
                bail!("the layout {} lies inside the store directory; it must stay with the owner", a.layout.display());
            }
            let rel = load_relation(&a.input, &a.attribute)?;
            let layout = load_layout(&a.layout)?;
            layout
                .check_invariants(&OwnerMetadata::build(&rel))
                .map_err(|e| anyhow::anyhow!("layout does not match the relation: {e}"))?;
            let stores = upload(&rel, &layout, &Keys::derive(seed), seed)?;
            stores.save(&a.stores)?;
            eprintln!(
                "uploaded {} encrypted and {} plaintext tuples to {}",
                stores.encrypted.len(),
                stores.plaintext.len(),
                a.stores.display()
            );
        }
        Cmd::Query(a) => {
            let layout = load_layout(&a.layout)?;
            let mut stores = Stores::load(&a.stores)?;
            let client = Client::new(Keys::derive(seed), layout, &stores.public.attribute.clone());
            let w = parse_value(&a.value);
            let r = match Mechanism::from(a.mechanism) {
                Mechanism::Binned => client.execute(&mut stores, &w)?,
                Mechanism::Naive => client.execute_naive(&mut stores, &w)?,
                Mechanism::RandomPairing => {
                    client.execute_random_pairing(&mut stores, &w, &mut seed.derive("pairing").rng())?
                }
            };
            write_ndjson(&r.rows, io::stdout().lock())?;
            if let Some(path) = &a.view {
                let mut av = if path.exists() {
                    AdversarialView::read_ndjson(BufReader::new(File::open(path)?))?
                } else {
                    AdversarialView::new(&stores)
                };
                if let Some(o) = r.observation {
                    av.push(o);
                }
                av.write_ndjson(BufWriter::new(File::create(path)?))?;
            }
            eprintln!("{} matching rows, {} fakes discarded", r.rows.len(), r.fakes_discarded);
        }
        Cmd::Workload(a) => return workload(a, seed, true),
        Cmd::Bench(a) => return workload(a, seed, false),
        Cmd::Audit(a) => return audit(a),
        Cmd::Model(a) => model(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn workload(a: WorkloadArgs, seed: Seed, full: bool) -> anyhow::Result<ExitCode> {
    let rel = load_relation(&a.input, &a.attribute)?;
    let meta = OwnerMetadata::build(&rel);
    let layout = create_bins(&meta, seed, a.strategy.into())?;
    let keys = Keys::derive(seed);
    let mut stores = upload(&rel, &layout, &keys, seed)?;
    if a.per_token_scans {
        stores.encrypted.charging = ScanCharging::PerToken;
    }
    let client = Client::new(keys, layout, &rel.searchable_attribute);
    let spec = WorkloadSpec {
        distribution: parse_dist(&a.dist)?,
        queries: a.queries,
        seed: seed.derive("workload"),
    };
    let queries = spec.queries(&rel.domain())?;
    let opts = RunOptions {
        strategy: a.strategy.into(),
        mechanism: a.mechanism.into(),
        verify: a.verify,
        charging: stores.encrypted.charging,
        seed,
    };
    let out = run_queries(&rel, &client, &mut stores, &queries, &opts)?;
    fs::create_dir_all(&a.out_dir)?;
    let report: &BenchReport = &out.report;
    if full {
        write_ndjson(&out.results, File::create(a.out_dir.join("results.ndjson"))?)?;
        out.view.write_ndjson(BufWriter::new(File::create(a.out_dir.join("view.ndjson"))?))?;
    }
    let mut f = BufWriter::new(File::create(a.out_dir.join("report.json"))?);
    serde_json::to_writer_pretty(&mut f, report)?;
    f.flush()?;
    let mut f = BufWriter::new(File::create(a.out_dir.join("stats.json"))?);
    serde_json::to_writer_pretty(&mut f, &report.sample)?;
    f.flush()?;
    let agg = &report.aggregate;
    eprintln!(
        "{} queries: {} encrypted rows scanned, {} plaintext rows fetched, {} bytes, {} tuples discarded",
        report.per_query.len(),
        agg.encrypted_rows_scanned,
        agg.plaintext_rows_fetched,
        agg.bytes_transferred,
        agg.tuples_discarded
    );
    if a.verify {
        eprintln!("verification: {} mismatches", report.mismatches);
        if report.mismatches > 0 {
            return Ok(ExitCode::from(EXIT_VERIFY));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn audit(a: AuditArgs) -> anyhow::Result<ExitCode> {
    let av = AdversarialView::read_ndjson(BufReader::new(
        File::open(&a.view).with_context(|| format!("opening {}", a.view.display()))?,
    ))?;
    let mut failed = false;
    let gran = match a.granularity {
        GranularityArg::Bins => Granularity::Bins,
        GranularityArg::Values => Granularity::Values,
    };
    let graph = surviving_graph(&av, gran);
    eprintln!(
        "surviving graph: {} x {} nodes, {} edges, complete: {}",
        graph.left.len(),
        graph.right.len(),
        graph.edges.len(),
        graph.is_complete()
    );
    if let Some(p) = &a.graph {
        graph.write_csv(File::create(p)?)?;
    }
    let mut stdout = io::stdout().lock();
    if a.oracle {
        let opts = OracleOptions {
            covers_domain: a.covers_domain,
            ..OracleOptions::default()
        };
        let v = check_partitioned_security(&av, &opts)?;
        serde_json::to_writer(&mut stdout, &serde_json::json!({"verdict": v}))?;
        writeln!(stdout)?;
        eprintln!(
            "condition 1: {}, condition 2: {}, {} witnesses",
            v.condition1_holds,
            v.condition2_holds,
            v.witnesses.len()
        );
        failed |= !v.holds();
    }
    if a.attacks {
        let size = size_attack(&av);
        let skew = workload_skew_attack(&av);
        serde_json::to_writer(&mut stdout, &serde_json::json!({"size_attack": size, "skew_attack": skew}))?;
        writeln!(stdout)?;
        eprintln!("size attack succeeded: {}", size.succeeded());
        failed |= size.succeeded();
    }
    Ok(if failed { ExitCode::from(EXIT_AUDIT) } else { ExitCode::SUCCESS })
}

fn model(a: ModelArgs) -> anyhow::Result<()> {
    if let Some(path) = &a.calibrate {
        let sample: CounterSample = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let c = calibrate(&sample, &UnitCosts::default())?;
        serde_json::to_writer_pretty(io::stdout().lock(), &c)?;
        println!();
        eprintln!(
            "eta empirical {:.4}, simplified {:.4}, full {:.4}",
            c.eta_empirical, c.eta_simplified, c.eta_full
        );
        return Ok(());
    }
    let parts: Vec<&str> = a.gamma_range.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        bail!("--gamma-range takes lo:hi:points")
    };
    let gammas = log_space(lo.parse()?, hi.parse()?, n.parse()?);
    let points = eta_curve(a.rho, a.ns, &a.alphas, &gammas)?;
    write_curve_csv(&points, io::stdout().lock())?;
    Ok(())
}
