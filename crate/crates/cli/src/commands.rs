use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};

use ie_core::parity::{oracle_table, write_oracle_csv};
use ie_core::pipeline::{
    compare_sources, estimate_range, read_ie_profile, render_mi_matrix, run_pipeline, shot_report, shot_stats,
    EstimateOptions, PipelineConfig, Repr1Source,
};
use ie_core::repr_io::{describe, validate_file, write_store};
use ie_core::synth::icl::PatternKind;
use ie_core::synth::{
    score_icl_generations, select_natural, synth_ablation, synth_arithmetic, synth_icl, synth_pattern, Corpus,
    EntityCatalog, Pattern,
};
use ie_core::tokenizer::Vocabulary;
use ie_core::toy::{run_macro, run_micro, MicroPositions, ToyModel, ToyModelConfig};
use ie_core::DomainTag;

use crate::args::{
    parse_range, Common, ExtractArgs, IeArgs, MiArgs, OracleArgs, ReportArgs, ScoreArgs, StoreArgs, SynthArgs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The input failed validation.
    Invalid,
    /// Some cells failed; the rest were written.
    Partial,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Invalid => 2,
            Status::Partial => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Invalid => "invalid",
            Status::Partial => "partial",
        }
    }
}

/// What a subcommand did, for the run manifest.
pub struct Done {
    pub status: Status,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Where the manifest goes; `None` for read-only subcommands.
    pub manifest_dir: Option<PathBuf>,
}

fn require_out(common: &Common) -> anyhow::Result<&Path> {
    common.out.as_deref().ok_or_else(|| anyhow!("--out is required"))
}

/// Directory holding a file output.
fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn workers(common: &Common) -> usize {
    common
        .workers
        .or_else(|| std::env::var("IE_WORKERS").ok()?.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
        .max(1)
}

pub fn synth(args: &SynthArgs, common: &Common) -> anyhow::Result<Done> {
    let out = require_out(common)?;
    let seed = common.seed.unwrap_or(0);
    let domain: DomainTag = args.domain.parse()?;
    let mut inputs = Vec::new();
    let catalog = match &args.entities {
        Some(p) => {
            inputs.push(p.clone());
            EntityCatalog::load(p)?
        }
        None => EntityCatalog::builtin(),
    };
    let corpus = match domain {
        DomainTag::Arithmetic => {
            let task = args
                .task
                .as_deref()
                .ok_or_else(|| anyhow!("--task is required for arithmetic"))?;
            synth_arithmetic(task.parse()?, args.count.unwrap_or(1000), seed)?
        }
        DomainTag::Natural => {
            let input = args
                .input
                .as_ref()
                .ok_or_else(|| anyhow!("--input is required for natural"))?;
            let rule = args.rule.as_deref().unwrap_or("sentence_start").parse()?;
            let tokens = args.tokens.ok_or_else(|| anyhow!("--T is required for natural"))?;
            let sequences = args
                .sequences
                .ok_or_else(|| anyhow!("--sequences is required for natural"))?;
            let file = std::fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
            inputs.push(input.clone());
            let sel = select_natural(BufReader::new(file), rule, tokens, sequences)?;
            if sel.exhausted {
                eprintln!("input exhausted: found {} of {} sequences", sel.found(), sel.requested);
            }
            sel.corpus
        }
        DomainTag::Custom => bail!("custom corpora are not generated; supply the text directly"),
        icl => {
            let vocab = catalog.vocabulary(icl)?;
            let shots = args.shots.ok_or_else(|| anyhow!("--shots is required for {icl}"))?;
            match (&args.pattern, &args.variant) {
                (Some(_), Some(_)) => bail!("--pattern and --variant are exclusive"),
                (Some(p), None) => {
                    let kind: PatternKind = p.parse()?;
                    synth_pattern(&vocab, &Pattern::resolve(kind, &catalog)?, shots)?
                }
                (None, Some(v)) => synth_ablation(&synth_icl(&vocab, shots)?, v.parse()?, &catalog, seed)?,
                (None, None) => synth_icl(&vocab, shots)?,
            }
        }
    };
    corpus.write(out)?;
    eprintln!(
        "{} sequences × {} tokens → {}",
        corpus.len(),
        corpus.spec.token_count,
        out.display()
    );
    Ok(Done {
        status: Status::Ok,
        inputs,
        outputs: vec![out.to_path_buf(), Corpus::manifest_path(out)],
        manifest_dir: Some(parent_dir(out)),
    })
}

pub fn extract(args: &ExtractArgs, common: &Common) -> anyhow::Result<Done> {
    let out = require_out(common)?;
    std::fs::create_dir_all(out)?;
    let lines = ie_core::synth::read_lines(&args.corpus)?;
    let mut inputs = vec![args.corpus.clone()];
    let vocab = match &args.vocab {
        Some(p) => {
            inputs.push(p.clone());
            Vocabulary::load(p)?
        }
        None => Vocabulary::from_corpus(lines.iter().map(String::as_str)),
    };
    let model = match &args.weights {
        Some(p) => {
            inputs.push(p.clone());
            ToyModel::load(p)?
        }
        None => {
            let mut cfg = ToyModelConfig::new(vocab.len(), common.seed.unwrap_or(0));
            cfg.layers = args.blocks;
            cfg.width = args.width;
            cfg.heads = args.heads;
            cfg.mlp_width = 4 * args.width;
            ToyModel::new(cfg)?
        }
    };
    let positions: MicroPositions = args.micro.parse()?;
    let macro_store = run_macro(&model, &vocab, &lines)?;
    let micro_store = run_micro(&model, &vocab, &lines, &positions)?;
    let paths = [
        out.join("macro.repr1"),
        out.join("micro.repr1"),
        out.join("vocab.json"),
        out.join("weights.toyw"),
    ];
    write_store(&macro_store, &paths[0])?;
    write_store(&micro_store, &paths[1])?;
    vocab.save(&paths[2])?;
    model.save(&paths[3])?;
    Ok(Done {
        status: Status::Ok,
        inputs,
        outputs: paths.to_vec(),
        manifest_dir: Some(out.to_path_buf()),
    })
}

pub fn mi(args: &MiArgs, common: &Common) -> anyhow::Result<Done> {
    let out = require_out(common)?;
    let source = Repr1Source::open(&args.store)?;
    let opts = EstimateOptions {
        train: args.train.resolve()?,
        run_seed: common.seed.unwrap_or(0),
        workers: workers(common),
        cell_dir: Some(out.join("cells")),
        resume: common.resume,
    };
    let matrix = estimate_range(
        &source,
        &opts,
        parse_range(args.layers.as_deref())?,
        parse_range(args.tokens.as_deref())?,
    )?;
    std::fs::create_dir_all(out)?;
    let path = out.join("mi_matrix.csv");
    std::fs::write(&path, render_mi_matrix(&[&matrix])?)?;
    let failed = matrix.failures().count();
    for (l, t, reason) in matrix.failures() {
        eprintln!("cell ({l},{t}) failed: {reason}");
    }
    Ok(Done {
        status: if failed > 0 { Status::Partial } else { Status::Ok },
        inputs: vec![args.store.clone()],
        outputs: vec![path],
        manifest_dir: Some(out.to_path_buf()),
    })
}

pub fn ie(args: &IeArgs, common: &Common) -> anyhow::Result<Done> {
    let out = require_out(common)?;
    let cfg = PipelineConfig {
        macro_store: args.macro_store.clone(),
        micro_store: args.micro_store.clone(),
        micro_protocol: args.protocol.parse()?,
        train: args.train.resolve()?,
        tokens: parse_range(args.tokens.as_deref())?,
        layer_pairs: parse_range(args.layers.as_deref())?,
        out_dir: out.to_path_buf(),
        seed: common.seed.unwrap_or(0),
        bootstrap: if args.shot_length.is_some() { args.bootstrap } else { 0 },
        shot_length: args.shot_length,
    };
    let run = run_pipeline(&cfg, workers(common), common.resume)?;
    for (l, t, reason) in run.macro_mi.failures().chain(run.micro_mi.failures()) {
        eprintln!("cell ({l},{t}) failed: {reason}");
    }
    Ok(Done {
        status: if run.failed_cells() > 0 {
            Status::Partial
        } else {
            Status::Ok
        },
        inputs: vec![args.macro_store.clone(), args.micro_store.clone()],
        outputs: run.outputs,
        manifest_dir: Some(out.to_path_buf()),
    })
}

pub fn oracle(args: &OracleArgs, common: &Common) -> anyhow::Result<Done> {
    let rows = oracle_table(args.tokens, &args.gamma)?;
    match &common.out {
        Some(out) => {
            let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
            write_oracle_csv(std::io::BufWriter::new(file), &rows)?;
            Ok(Done {
                status: Status::Ok,
                inputs: vec![],
                outputs: vec![out.clone()],
                manifest_dir: Some(parent_dir(out)),
            })
        }
        None => {
            write_oracle_csv(std::io::stdout().lock(), &rows)?;
            Ok(Done {
                status: Status::Ok,
                inputs: vec![],
                outputs: vec![],
                manifest_dir: None,
            })
        }
    }
}

pub fn validate(args: &StoreArgs) -> anyhow::Result<Done> {
    let report = validate_file(&args.store)?;
    if report.is_valid() {
        println!("{}: valid", args.store.display());
    } else {
        println!(
            "{}: {} violation(s)\n{report}",
            args.store.display(),
            report.violations.len()
        );
    }
    Ok(Done {
        status: if report.is_valid() { Status::Ok } else { Status::Invalid },
        inputs: vec![args.store.clone()],
        outputs: vec![],
        manifest_dir: None,
    })
}

pub fn describe_store(args: &StoreArgs) -> anyhow::Result<Done> {
    println!("{}", describe(&args.store)?);
    Ok(Done {
        status: Status::Ok,
        inputs: vec![args.store.clone()],
        outputs: vec![],
        manifest_dir: None,
    })
}

/// `label=path` or bare `path`; a directory means its `ie_profile.csv`.
fn profile_spec(spec: &str) -> (String, PathBuf) {
    let (label, path) = match spec.split_once('=') {
        Some((l, p)) => (l.to_string(), PathBuf::from(p)),
        None => (spec.to_string(), PathBuf::from(spec)),
    };
    let path = if path.is_dir() {
        path.join("ie_profile.csv")
    } else {
        path
    };
    (label, path)
}

pub fn report(args: &ReportArgs, common: &Common) -> anyhow::Result<Done> {
    let out = require_out(common)?;
    let specs: Vec<(String, PathBuf)> = args.profile.iter().map(|s| profile_spec(s)).collect();
    let profiles = specs
        .iter()
        .map(|(_, p)| read_ie_profile(p))
        .collect::<ie_core::Result<Vec<_>>>()?;
    let body = match args.kind.as_str() {
        "shot" => {
            anyhow::ensure!(profiles.len() == 1, "a shot report takes exactly one profile");
            let shot = args
                .shot_length
                .ok_or_else(|| anyhow!("--shot-length is required for a shot report"))?;
            let mut profile = profiles[0].clone();
            profile.shot_stats = Some(shot_stats(&profile, shot, &[])?);
            shot_report(&profile)?.to_csv()?
        }
        "compare" => {
            let labelled: Vec<(&str, &ie_core::IEProfile)> =
                specs.iter().zip(&profiles).map(|((l, _), p)| (l.as_str(), p)).collect();
            compare_sources(&labelled)?
        }
        other => bail!("unknown report kind {other:?} (shot or compare)"),
    };
    std::fs::write(out, body).with_context(|| format!("writing {}", out.display()))?;
    Ok(Done {
        status: Status::Ok,
        inputs: specs.into_iter().map(|(_, p)| p).collect(),
        outputs: vec![out.to_path_buf()],
        manifest_dir: Some(parent_dir(out)),
    })
}

pub fn score(args: &ScoreArgs) -> anyhow::Result<Done> {
    let vocab = EntityCatalog::builtin().vocabulary(args.domain.parse()?)?;
    let lines = ie_core::synth::read_lines(&args.generations)?;
    let generations: Vec<&str> = lines.iter().map(String::as_str).collect();
    let context: Vec<String> = ie_core::tokenizer::tokenize(&args.context)
        .into_iter()
        .filter(|t| vocab.contains(t.trim()))
        .collect();
    let context: Vec<&str> = context.iter().map(String::as_str).collect();
    println!("{:.4}", score_icl_generations(&generations, &vocab, &context));
    Ok(Done {
        status: Status::Ok,
        inputs: vec![args.generations.clone()],
        outputs: vec![],
        manifest_dir: None,
    })
}
