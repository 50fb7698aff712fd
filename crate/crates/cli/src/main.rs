//! Command-line front end: atlases, instances, analyses, and harnesses with
//! stable file formats and exit codes.
//!
//! Exit codes: 0 done or satisfiable, 10 unsatisfiable or trivial,
//! 11 unknown, 2 capability bound exceeded, 3 format or parse error,
//! 1 any other failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use relwidth_core::acceptance;
use relwidth_core::algebra;
use relwidth_core::atlas::{builtin, io as atlas_io, PatternAtlas};
use relwidth_core::engine::{self, EngineError};
use relwidth_core::mmsnp;
use relwidth_core::reduction::{self, SolveMode, Verdict};

const EXIT_OK: u8 = 0;
const EXIT_UNSAT: u8 = 10;
const EXIT_UNKNOWN: u8 = 11;
const EXIT_CAPABILITY: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_FAIL: u8 = 1;

#[derive(Parser)]
#[command(
    name = "relwidth",
    version,
    about = "Local-consistency solving over finitely presented templates"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct AtlasArg {
    /// Builtin atlas name (equality, equivalence, henson<N>, random-graph,
    /// random-graph-fourary, partition:1,inf,..) or a path to an atlas file.
    #[arg(long)]
    atlas: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the equivalent (k, l)-minimal instance.
    Minimize {
        #[command(flatten)]
        atlas: AtlasArg,
        #[arg(long)]
        instance: PathBuf,
        #[arg(short)]
        k: usize,
        #[arg(short)]
        l: usize,
        /// Skip the front-end capability pre-check (the engine still enforces
        /// its own bound).
        #[arg(long, default_value_t = false)]
        r#unsafe: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the two minimality conditions, reporting a witness on failure.
    CheckMinimal {
        #[command(flatten)]
        atlas: AtlasArg,
        #[arg(long)]
        instance: PathBuf,
        #[arg(short)]
        k: usize,
        #[arg(short)]
        l: usize,
    },
    /// Emit the finite orbit instance of an instance.
    Reduce {
        #[command(flatten)]
        atlas: AtlasArg,
        #[arg(long)]
        instance: PathBuf,
        /// Orbit level; defaults to the atlas homogeneity arity.
        #[arg(short)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimize, reduce, search, and lift a solution.
    Solve {
        #[command(flatten)]
        atlas: AtlasArg,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Ts)]
        mode: ModeArg,
        #[arg(long)]
        emit_witness: Option<PathBuf>,
        /// Skip the template certificate search.
        #[arg(long, default_value_t = false)]
        no_certificate: bool,
    },
    /// Re-check an emitted witness against its instance.
    VerifyWitness {
        #[command(flatten)]
        atlas: AtlasArg,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        witness: PathBuf,
    },
    /// Bounded-width, total-symmetry, or core analysis of a finite structure.
    AnalyzeStructure {
        /// Path to a structure file, or builtin:k2 | builtin:z2 | builtin:k3
        /// | builtin:semilattice | builtin:point.
        #[arg(long)]
        structure: String,
        #[arg(long, default_value_t = false)]
        bounded_width: bool,
        #[arg(long, default_value_t = false)]
        ts: bool,
        #[arg(long, default_value_t = false)]
        core: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide Datalog rewritability of an obstruction set.
    AnalyzeMmsnp {
        #[arg(long)]
        obstructions: PathBuf,
        /// Certify that the obstruction set is in normal form; verdicts are
        /// undefined without it.
        #[arg(long, default_value_t = false)]
        assert_normal_form: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the forbidden-pattern problem for an input structure.
    FppSolve {
        #[arg(long)]
        obstructions: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = false)]
        assert_normal_form: bool,
        #[arg(long, value_enum, default_value_t = RouteArg::Color)]
        route: RouteArg,
    },
    /// Random closure trials: linked closures must contain loops.
    LoopHarness {
        #[arg(long)]
        structure: String,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = algebra::DEFAULT_CAP)]
        cap: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a reproducible random instance.
    Gen {
        #[command(flatten)]
        atlas: AtlasArg,
        #[arg(long)]
        vars: usize,
        #[arg(long)]
        constraints: usize,
        #[arg(long)]
        seed: u64,
        /// Comma-separated relation names to sample from.
        #[arg(long)]
        relations: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a builtin atlas as a versioned document.
    ExportAtlas {
        #[command(flatten)]
        atlas: AtlasArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate the verification table.
    Repro {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Wnu,
    Ts,
}

impl From<ModeArg> for SolveMode {
    fn from(m: ModeArg) -> SolveMode {
        match m {
            ModeArg::Wnu => SolveMode::Wnu,
            ModeArg::Ts => SolveMode::Ts,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RouteArg {
    Color,
    Orbit,
}

fn load_atlas(spec: &str) -> Result<Arc<PatternAtlas>> {
    if Path::new(spec).exists() {
        let text = fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
        return Ok(Arc::new(atlas_io::atlas_from_json(&text)?));
    }
    Ok(Arc::new(builtin::by_name(spec)?))
}

fn load_instance(
    atlas: &Arc<PatternAtlas>,
    path: &Path,
) -> Result<relwidth_core::engine::Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (instance, notes) = engine::instance_from_json(atlas, &text)?;
    for note in notes {
        eprintln!("note: {note}");
    }
    Ok(instance)
}

fn load_structure(spec: &str) -> Result<algebra::FiniteStructure> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return algebra::fixtures::by_name(name)
            .ok_or_else(|| anyhow!("unknown builtin structure `{name}`"));
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
    Ok(algebra::structure_from_json(&text)?)
}

fn load_obstructions(path: &Path, assert_normal_form: bool) -> Result<mmsnp::ObstructionSet> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let set = mmsnp::parse_obstruction_set(&text)?;
    Ok(if assert_normal_form {
        set.assert_normal_form()
    } else {
        set
    })
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Minimize {
            atlas,
            instance,
            k,
            l,
            r#unsafe,
            out,
        } => {
            let atlas = load_atlas(&atlas.atlas)?;
            if !r#unsafe && l > atlas.capability_bound() {
                eprintln!(
                    "levels ({k}, {l}) exceed the atlas capability bound {}",
                    atlas.capability_bound()
                );
                return Ok(EXIT_CAPABILITY);
            }
            let inst = load_instance(&atlas, &instance)?;
            let min = engine::establish_minimality(&inst, k, l)?;
            let trivial = min.is_trivial();
            eprintln!(
                "minimized at ({k}, {l}): {} constraints, {}",
                min.constraints().len(),
                if trivial { "trivial" } else { "non-trivial" }
            );
            emit(&out, &engine::instance_to_json(&min))?;
            Ok(if trivial { EXIT_UNSAT } else { EXIT_OK })
        }
        Cmd::CheckMinimal {
            atlas,
            instance,
            k,
            l,
        } => {
            let atlas = load_atlas(&atlas.atlas)?;
            let inst = load_instance(&atlas, &instance)?;
            match engine::is_minimal(&inst, k, l) {
                engine::MinimalityVerdict::Minimal => {
                    println!("instance is ({k}, {l})-minimal");
                    Ok(EXIT_OK)
                }
                engine::MinimalityVerdict::ScopeUncovered(s) => {
                    let names: Vec<&str> =
                        s.iter().map(|&v| inst.variables()[v].as_str()).collect();
                    println!("not minimal: no constraint covers {{{}}}", names.join(", "));
                    Ok(EXIT_FAIL)
                }
                engine::MinimalityVerdict::ProjectionMismatch {
                    subset,
                    first,
                    second,
                } => {
                    let names: Vec<&str> = subset
                        .iter()
                        .map(|&v| inst.variables()[v].as_str())
                        .collect();
                    println!(
                        "not minimal: constraints {first} and {second} disagree on {{{}}}",
                        names.join(", ")
                    );
                    Ok(EXIT_FAIL)
                }
            }
        }
        Cmd::Reduce {
            atlas,
            instance,
            k,
            out,
        } => {
            let atlas = load_atlas(&atlas.atlas)?;
            let inst = load_instance(&atlas, &instance)?;
            let level = k.unwrap_or(atlas.k());
            let orbit = reduction::build_orbit_instance(&inst, level)?;
            eprintln!(
                "orbit instance at level {level}: {} variables over {} labels, {} constraints",
                orbit.finite.var_names.len(),
                orbit.finite.alphabet.len(),
                orbit.finite.constraints.len()
            );
            emit(&out, &engine::finite_to_json(&orbit.finite))?;
            Ok(EXIT_OK)
        }
        Cmd::Solve {
            atlas,
            instance,
            mode,
            emit_witness,
            no_certificate,
        } => {
            let atlas = load_atlas(&atlas.atlas)?;
            let inst = load_instance(&atlas, &instance)?;
            let mode = SolveMode::from(mode);
            let cert = if no_certificate {
                None
            } else {
                reduction::template_certificate(&atlas, mode)?
            };
            let solved = reduction::solve(&inst, mode, cert.as_ref())?;
            match &solved.verdict {
                Verdict::Sat(witness) => {
                    println!(
                        "SAT: {} classes over {} variables",
                        witness.classes,
                        inst.variables().len()
                    );
                    if let Some(path) = emit_witness {
                        fs::write(
                            &path,
                            reduction::witness_to_json(&solved.minimized, witness),
                        )
                        .with_context(|| format!("writing {}", path.display()))?;
                        println!("wrote {}", path.display());
                    }
                    Ok(EXIT_OK)
                }
                Verdict::Unsat => {
                    println!("UNSAT");
                    Ok(EXIT_UNSAT)
                }
                Verdict::Unknown(reason) => {
                    println!("UNKNOWN: {reason}");
                    Ok(EXIT_UNKNOWN)
                }
            }
        }
        Cmd::VerifyWitness {
            atlas,
            instance,
            witness,
        } => {
            let atlas = load_atlas(&atlas.atlas)?;
            let inst = load_instance(&atlas, &instance)?;
            let text = fs::read_to_string(&witness)
                .with_context(|| format!("reading {}", witness.display()))?;
            let (w, vars) = reduction::witness_from_json(&atlas, &text)?;
            if vars != inst.variables() {
                println!("witness was emitted for different variables");
                return Ok(EXIT_FAIL);
            }
            match reduction::verify_witness(&inst, &w) {
                Ok(()) => {
                    println!("witness verifies");
                    Ok(EXIT_OK)
                }
                Err(e) => {
                    println!("witness rejected: {e}");
                    Ok(EXIT_FAIL)
                }
            }
        }
        Cmd::AnalyzeStructure {
            structure,
            bounded_width,
            ts,
            core,
            out,
        } => {
            let s = load_structure(&structure)?;
            if !(bounded_width || ts || core) {
                return Err(anyhow!("pick at least one of --bounded-width, --ts, --core"));
            }
            let mut report = serde_json::Map::new();
            report.insert("domain".into(), serde_json::json!(s.domain));
            if core {
                let (retract, map) = algebra::core_of(&s)?;
                println!(
                    "core: {} of {} elements (retraction {map:?})",
                    retract.size(),
                    s.size()
                );
                report.insert(
                    "core".into(),
                    serde_json::json!({ "size": retract.size(), "retraction": map }),
                );
            }
            if bounded_width {
                let (expanded, _) = algebra::core_of(&s)?;
                let pair = algebra::find_linked_wnu_pair(&expanded)?;
                println!(
                    "bounded width: {}",
                    if pair.is_some() {
                        "certified by a linked pair"
                    } else {
                        "no linked pair"
                    }
                );
                report.insert(
                    "bounded_width".into(),
                    serde_json::to_value(&pair).expect("table serialization"),
                );
            }
            if ts {
                let (expanded, _) = algebra::core_of(&s)?;
                let set_fn = algebra::has_ts_all_arities(&expanded)?;
                println!(
                    "totally symmetric of all arities: {}",
                    if set_fn.is_some() { "yes" } else { "no" }
                );
                report.insert(
                    "totally_symmetric".into(),
                    serde_json::to_value(&set_fn).expect("table serialization"),
                );
            }
            if out.is_some() {
                emit(
                    &out,
                    &serde_json::to_string_pretty(&report).expect("report serialization"),
                )?;
            }
            Ok(EXIT_OK)
        }
        Cmd::AnalyzeMmsnp {
            obstructions,
            assert_normal_form,
            out,
        } => {
            let set = load_obstructions(&obstructions, assert_normal_form)?;
            let verdict = mmsnp::datalog_rewritable(&set)?;
            println!(
                "verdict: {}",
                if verdict.datalog {
                    "datalog (certificate attached)"
                } else {
                    "not-datalog (search exhausted)"
                }
            );
            if out.is_some() {
                emit(
                    &out,
                    &serde_json::to_string_pretty(&verdict).expect("verdict serialization"),
                )?;
            }
            Ok(EXIT_OK)
        }
        Cmd::FppSolve {
            obstructions,
            input,
            assert_normal_form,
            route,
        } => {
            let set = load_obstructions(&obstructions, assert_normal_form)?;
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let tau = mmsnp::tau_from_json(&text)?;
            let route = match route {
                RouteArg::Color => mmsnp::FppRoute::ColorLevel,
                RouteArg::Orbit => mmsnp::FppRoute::OrbitLevel,
            };
            match mmsnp::fpp_solve(&set, &tau, route)? {
                mmsnp::FppOutcome::Sat(coloring) => {
                    println!("SAT");
                    for (v, c) in coloring {
                        println!("  {v}: {c}");
                    }
                    Ok(EXIT_OK)
                }
                mmsnp::FppOutcome::Unsat => {
                    println!("UNSAT");
                    Ok(EXIT_UNSAT)
                }
            }
        }
        Cmd::LoopHarness {
            structure,
            trials,
            seed,
            cap,
            out,
        } => {
            let s = load_structure(&structure)?.with_singletons();
            let generator = algebra::find_polymorphism(&s, &algebra::PolymorphismSpec::Wnu, 3)?
                .ok_or_else(|| {
                    anyhow!("structure carries no ternary weak near-unanimity generator")
                })?;
            let report = algebra::loop_lemma_harness(s.size(), &[generator], trials, seed, cap)?;
            println!(
                "{} trials: {} linked closures, {} loops, {} skipped at the cap, {} counterexamples",
                report.trials,
                report.linked,
                report.loops_found,
                report.skipped_cap,
                report.counterexamples.len()
            );
            if out.is_some() {
                emit(
                    &out,
                    &serde_json::to_string_pretty(&report).expect("report serialization"),
                )?;
            }
            Ok(if report.counterexamples.is_empty() {
                EXIT_OK
            } else {
                EXIT_FAIL
            })
        }
        Cmd::Gen {
            atlas,
            vars,
            constraints,
            seed,
            relations,
            out,
        } => {
            let atlas = load_atlas(&atlas.atlas)?;
            let storage = relations.unwrap_or_default();
            let rel_list: Option<Vec<&str>> = if storage.is_empty() {
                None
            } else {
                Some(storage.split(',').map(|s| s.trim()).collect())
            };
            let raw =
                engine::gen_random_instance(&atlas, vars, constraints, seed, rel_list.as_deref())?;
            emit(&out, &engine::raw_to_json(&atlas, &raw))?;
            Ok(EXIT_OK)
        }
        Cmd::ExportAtlas { atlas, out } => {
            let atlas = load_atlas(&atlas.atlas)?;
            emit(&out, &atlas_io::atlas_to_json(&atlas))?;
            Ok(EXIT_OK)
        }
        Cmd::Repro { out } => {
            let outcomes = acceptance::run_all();
            let table = acceptance::render_table(&outcomes);
            emit(&out, &table)?;
            Ok(if outcomes.iter().all(|o| o.pass) {
                EXIT_OK
            } else {
                EXIT_FAIL
            })
        }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<EngineError>() {
            return match e {
                EngineError::CapabilityExceeded(..) => EXIT_CAPABILITY,
                EngineError::Format(_) | EngineError::Atlas(_) => EXIT_FORMAT,
                _ => EXIT_FAIL,
            };
        }
        if let Some(e) = cause.downcast_ref::<reduction::ReductionError>() {
            return match e {
                reduction::ReductionError::Engine(EngineError::CapabilityExceeded(..)) => {
                    EXIT_CAPABILITY
                }
                reduction::ReductionError::Format(_) => EXIT_FORMAT,
                _ => EXIT_FAIL,
            };
        }
        if let Some(e) = cause.downcast_ref::<mmsnp::MmsnpError>() {
            return match e {
                mmsnp::MmsnpError::Parse { .. } | mmsnp::MmsnpError::Input(_) => EXIT_FORMAT,
                mmsnp::MmsnpError::Engine(EngineError::CapabilityExceeded(..)) => EXIT_CAPABILITY,
                _ => EXIT_FAIL,
            };
        }
        if cause
            .downcast_ref::<relwidth_core::atlas::AtlasError>()
            .is_some()
        {
            return EXIT_FORMAT;
        }
    }
    EXIT_FAIL
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
