use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tnet::analyzer::{classify, classify_spec, SEMANTICS};
use tnet::causality::{build_graph, check_coordination_freeness, detect_coordination_pattern, Freeness};
use tnet::harness::{check_entry, corpus, load_config, load_instance, spec_inputs};
use tnet::network::{
    check_eventual_consistency, check_independence, run, Budget, Config, Consistency, Dimension, Independence,
};
use tnet::rewriter::{rewrite_query, Query, Target};
use tnet::{Error, Instance, TransducerSpec};

#[derive(Parser)]
#[command(name = "tnet", version, about = "Simulate and analyze Datalog transducer networks")]
struct Cli {
    /// Delivery seed, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Round limit, overriding the config file.
    #[arg(long, global = true)]
    max_rounds: Option<u32>,
    /// Number of seeds per seeded enumeration position.
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a spec on one configuration and print its trace.
    Run {
        spec: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Classify a query file or the query a spec computes.
    Analyze {
        file: PathBuf,
        /// Semantics for the summary line.
        #[arg(long, default_value = "rsfd")]
        semantics: String,
        /// `text` prints the summary line, `structured` one record per field.
        #[arg(long, default_value = "text", value_parser = ["text", "structured"])]
        format: String,
    },
    /// Rewrite a query into a spec.
    Rewrite {
        query: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
    /// Compare out(*) of two runs.
    CheckConsistency {
        spec: PathBuf,
        /// Second spec; defaults to the first.
        other: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Config of the second run; defaults to the first.
        #[arg(long)]
        other_config: Option<PathBuf>,
    },
    /// Check that out(*) does not depend on one configuration dimension.
    CheckIndependence {
        spec: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        dimension: String,
    },
    /// Look for coordination patterns in one run and for a coordination-free
    /// configuration.
    Coordination {
        spec: PathBuf,
        /// Fact file; may also be given with `--input`.
        #[arg(conflicts_with = "input")]
        facts: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also print the syncausality graph of the run.
        #[arg(long)]
        graph: bool,
    },
    /// Check the bundled example corpus.
    Corpus {
        /// Check every entry.
        #[arg(long, conflicts_with = "name")]
        all: bool,
        /// List entry names and summaries.
        #[arg(long)]
        list: bool,
        name: Option<String>,
    },
}

enum Failure {
    /// Exit 1: the command ran and its verdict is negative.
    Negative,
    /// Exit 2: bad arguments or unreadable input.
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = std::io::stdout().lock();
    match execute(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Negative) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            let _ = out.flush();
            eprintln!("tnet: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_spec(path: &Path) -> Result<TransducerSpec, Failure> {
    TransducerSpec::parse(&read(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn input_for(spec: &TransducerSpec, path: &Path) -> Result<Instance, Failure> {
    load_instance(path, Some(&spec_inputs(spec))).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn config(cli: &Cli, path: Option<&Path>) -> Result<Config, Failure> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => Config::new(1),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.max_rounds {
        cfg.max_rounds = m;
    }
    Ok(cfg)
}

fn budget(cli: &Cli) -> Budget {
    let mut b = cli.budget.map(Budget::scaled).unwrap_or_default();
    if let Some(m) = cli.max_rounds {
        b.max_rounds = m;
    }
    b
}

fn facts(i: &Instance) -> String {
    let items: Vec<String> = i.facts().map(|f| f.to_string()).collect();
    format!("{{{}}}", items.join(", "))
}

fn outcome(o: &Option<Instance>) -> String {
    o.as_ref().map(facts).unwrap_or_else(|| "bottom".into())
}

fn io(e: std::io::Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn execute(cli: &Cli, out: &mut impl Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Run {
            spec,
            input,
            config: cfg,
        } => {
            let s = load_spec(spec)?;
            let i = input_for(&s, input)?;
            let trace = run(&s, &config(cli, cfg.as_deref())?, &i)?;
            write!(out, "{trace}").map_err(io)?;
            match trace.output() {
                Some(o) => writeln!(out, "out(*): {}", facts(o)).map_err(io),
                None => {
                    writeln!(out, "out(*): bottom").map_err(io)?;
                    Err(Failure::Negative)
                }
            }
        }
        Command::Analyze {
            file,
            semantics,
            format,
        } => {
            if !SEMANTICS.contains(&semantics.as_str()) {
                return Err(Failure::Usage(format!("unknown semantics {semantics:?}")));
            }
            let text = read(file)?;
            let report = match TransducerSpec::parse(&text) {
                Ok(spec) => classify_spec(&spec)?,
                Err(spec_err) => match Query::parse(&text) {
                    Ok(q) => classify(&q.program)?,
                    Err(query_err) => {
                        return Err(Failure::Usage(format!(
                            "{}: not a spec ({spec_err}) nor a query ({query_err})",
                            file.display()
                        )))
                    }
                },
            };
            if format == "structured" {
                write!(out, "{}", report.structured()).map_err(io)?;
                writeln!(out, "summary {}", report.summary(semantics)).map_err(io)
            } else {
                writeln!(out, "{}", report.summary(semantics)).map_err(io)
            }
        }
        Command::Rewrite { query, target, output } => {
            let t = Target::parse(target).ok_or_else(|| Failure::Usage(format!("unknown target {target:?}")))?;
            let q = Query::parse(&read(query)?).map_err(|e| Failure::Usage(format!("{}: {e}", query.display())))?;
            let spec = rewrite_query(&q, t)?.to_string();
            match output {
                Some(p) => fs::write(p, spec).map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))),
                None => write!(out, "{spec}").map_err(io),
            }
        }
        Command::CheckConsistency {
            spec,
            other,
            input,
            config: cfg,
            other_config,
        } => {
            let a = load_spec(spec)?;
            let b = match other {
                Some(p) => load_spec(p)?,
                None => a.clone(),
            };
            let i = input_for(&a, input)?;
            let ca = config(cli, cfg.as_deref())?;
            let cb = match other_config {
                Some(p) => config(cli, Some(p))?,
                None => ca.clone(),
            };
            let (ta, tb) = (run(&a, &ca, &i)?, run(&b, &cb, &i)?);
            let verdict = check_eventual_consistency(&ta, &tb)?;
            let name = match verdict {
                Consistency::Consistent => "consistent",
                Consistency::Inconsistent => "inconsistent",
                Consistency::NotQuiescent => "not-quiescent",
            };
            writeln!(out, "run label=a config=[{ca}] out={}", outcome(&ta.output().cloned())).map_err(io)?;
            writeln!(out, "run label=b config=[{cb}] out={}", outcome(&tb.output().cloned())).map_err(io)?;
            writeln!(out, "consistency verdict={name}").map_err(io)?;
            if verdict == Consistency::Consistent {
                Ok(())
            } else {
                Err(Failure::Negative)
            }
        }
        Command::CheckIndependence {
            spec,
            input,
            config: cfg,
            dimension,
        } => {
            let s = load_spec(spec)?;
            let i = input_for(&s, input)?;
            let dim = Dimension::parse(dimension)
                .ok_or_else(|| Failure::Usage(format!("unknown dimension {dimension:?}")))?;
            match check_independence(&s, &i, &config(cli, cfg.as_deref())?, dim, &budget(cli))? {
                Independence::Convergent { runs, output } => writeln!(
                    out,
                    "independence verdict=convergent runs={runs} out={}",
                    facts(&output)
                )
                .map_err(io),
                Independence::Divergent { first, second } => {
                    writeln!(out, "independence verdict=divergent").map_err(io)?;
                    for (label, (cfg, o)) in [("first", *first), ("second", *second)] {
                        writeln!(out, "witness label={label} config=[{cfg}] out={}", outcome(&o)).map_err(io)?;
                    }
                    Err(Failure::Negative)
                }
            }
        }
        Command::Coordination {
            spec,
            facts,
            input,
            config: cfg,
            graph,
        } => {
            let s = load_spec(spec)?;
            let path = facts
                .as_ref()
                .or(input.as_ref())
                .ok_or_else(|| Failure::Usage("missing input facts".into()))?;
            let i = input_for(&s, path)?;
            let cfg = config(cli, cfg.as_deref())?;
            let trace = run(&s, &cfg, &i)?;
            if trace.output().is_some() {
                let g = build_graph(&trace, &s)?;
                if *graph {
                    write!(out, "{g}").map_err(io)?;
                }
                match detect_coordination_pattern(&g, &trace, &trace.active)? {
                    Some(p) => writeln!(out, "pattern master={} relation={}", p.master, p.relation),
                    None => writeln!(out, "pattern none"),
                }
                .map_err(io)?;
            } else {
                writeln!(out, "pattern unknown reason=not-quiescent").map_err(io)?;
            }
            match check_coordination_freeness(&s, &i, &cfg, &budget(cli))? {
                Freeness::Free(w) => writeln!(out, "freeness verdict=free witness=[{w}]").map_err(io),
                Freeness::NotFree { runs } => {
                    writeln!(out, "freeness verdict=not-free runs={runs}").map_err(io)?;
                    Err(Failure::Negative)
                }
            }
        }
        Command::Corpus { all, list, name } => {
            let entries = corpus()?;
            if *list {
                for e in &entries {
                    writeln!(out, "entry name={} class={} summary={:?}", e.name, e.class, e.summary).map_err(io)?;
                }
                return Ok(());
            }
            let selected: Vec<_> = match (all, name) {
                (true, _) => entries.iter().collect(),
                (false, Some(n)) => entries.iter().filter(|e| &e.name == n).collect(),
                (false, None) => return Err(Failure::Usage("pass --all, --list or an entry name".into())),
            };
            if selected.is_empty() {
                return Err(Failure::Usage(format!(
                    "no corpus entry named {:?}",
                    name.as_deref().unwrap_or("")
                )));
            }
            let b = budget(cli);
            let (mut passed, mut failed) = (0, 0);
            for e in selected {
                for r in check_entry(e, &b) {
                    writeln!(out, "{r}").map_err(io)?;
                    if r.pass {
                        passed += 1;
                    } else {
                        failed += 1;
                    }
                }
            }
            writeln!(out, "total passed={passed} failed={failed}").map_err(io)?;
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure::Negative)
            }
        }
    }
}
