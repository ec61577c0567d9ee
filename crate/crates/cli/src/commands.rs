use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use graphif::backend::{CallLedger, LlmClient};
use graphif::dataset::{import_chat_jsonl, load_dataset, save_dataset, synthesize, GraphTemplate};
use graphif::eval::{evaluate_run, outcomes_csv, EvalError, Judge};
use graphif::graph::{ExportFormat, RelationGraph};
use graphif::pipeline::{load_pass, load_session, write_atomic, write_sample_artifacts, Backends, Pipeline, Session};
use graphif::testkit::write_fixture_dir;

use crate::config::{EndpointConfig, FileConfig, Overrides, RunConfig};

/// Directory name for a sample id.
pub fn sample_dir_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

pub fn pass_dir(run: &Path, pass: u32) -> PathBuf {
    run.join(format!("pass-{pass}"))
}

pub fn run(config: Option<&Path>, flags: Overrides, resume: bool) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(FileConfig::load(config)?, flags)?;
    let Some(dataset_path) = &cfg.dataset else { bail!("no dataset given (use --dataset FILE or `dataset` in the config file)") };
    let Some(out) = &cfg.out else { bail!("no output directory given (use --out DIR or `out` in the config file)") };
    let samples = load_dataset(dataset_path).with_context(|| format!("loading dataset {}", dataset_path.display()))?;
    let backend = cfg.backend.build()?;
    let pipeline = Pipeline::new(cfg.mode, cfg.pipeline.clone()).with_templates(cfg.templates()?);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(&out.join("run.json"), (serde_json::to_string_pretty(&cfg)? + "\n").as_bytes())?;

    let mut failed = Vec::new();
    let mut all_turns = 0u64;
    let mut all_calls = 0u64;
    for pass in 1..=cfg.passes {
        let dir = pass_dir(out, pass);
        let ledger = Arc::new(CallLedger::new());
        let mut sampling = cfg.sampling.clone();
        sampling.seed = cfg.seed.map(|s| s + u64::from(pass) - 1);
        let client = LlmClient::new(Arc::clone(&backend), sampling).with_ledger(Arc::clone(&ledger));
        let backends = Backends::shared(client);
        let start = |sample: &graphif::dataset::DialogueSample| {
            let sdir = dir.join(sample_dir_name(&sample.sample_id));
            if resume {
                match load_session(&sdir) {
                    Ok(Some(s)) if s.id == sample.sample_id && s.mode == cfg.mode => return s,
                    Ok(Some(_)) => log::warn!("{}: checkpoint does not match this run; starting over", sample.sample_id),
                    Ok(None) => {}
                    Err(e) => log::warn!("{}: unreadable checkpoint ({e}); starting over", sample.sample_id),
                }
            }
            Session::new(sample.sample_id.clone(), cfg.mode)
        };
        let on_turn = |session: &Session, _: &graphif::pipeline::TurnResult| {
            if let Err(e) = write_sample_artifacts(&dir.join(sample_dir_name(&session.id)), session) {
                log::error!("{}: writing artifacts failed: {e}", session.id);
            }
        };
        let runs = pipeline.run_many(&samples, &backends, cfg.parallel, start, on_turn);
        for r in &runs {
            write_sample_artifacts(&dir.join(sample_dir_name(&r.session.id)), &r.session)?;
            all_turns += r.session.results.len() as u64;
            all_calls += r.session.results.iter().map(|t| t.total_calls()).sum::<u64>();
            if let Some(e) = &r.error {
                failed.push(format!("pass {pass}: {}: {e}", r.session.id));
            }
        }
        write_atomic(&dir.join("ledger.json"), (serde_json::to_string_pretty(&ledger.snapshot())? + "\n").as_bytes())?;
    }
    let avg = if all_turns == 0 { 0.0 } else { all_calls as f64 / all_turns as f64 };
    println!(
        "{} sample(s) x {} pass(es), {all_turns} turns, {avg:.3} calls per turn -> {}",
        samples.len(),
        cfg.passes,
        out.display()
    );
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} sample run(s) failed:", failed.len());
        for f in &failed {
            eprintln!("  {f}");
        }
        Ok(ExitCode::FAILURE)
    }
}

fn pass_dirs(run: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for pass in 1.. {
        let d = pass_dir(run, pass);
        if !d.is_dir() {
            break;
        }
        dirs.push(d);
    }
    if dirs.is_empty() {
        bail!("{} holds no pass-1 directory; is it a run output directory?", run.display());
    }
    Ok(dirs)
}

pub fn eval(
    config: Option<&Path>,
    run: &Path,
    dataset: &Path,
    out: Option<&Path>,
    judge_flags: EndpointConfig,
) -> Result<ExitCode> {
    let file = FileConfig::load(config)?;
    let judge_cfg = if judge_flags.is_configured() { judge_flags } else { file.judge.clone() };
    let samples = load_dataset(dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
    let passes = pass_dirs(run)?
        .iter()
        .map(|d| load_pass(d).with_context(|| format!("loading {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    let templates = graphif::prompt::TemplateSet::builtin();
    let judge_client = if judge_cfg.is_configured() {
        Some(LlmClient::new(judge_cfg.build()?, file.sampling.clone().unwrap_or_default()))
    } else {
        None
    };
    let judge = judge_client.as_ref().map(|client| Judge { client, templates: &templates });
    let (report, outcomes) = match evaluate_run(&passes, &samples, judge.as_ref()) {
        Ok(r) => r,
        Err(e @ EvalError::CoverageGap(_)) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::FAILURE);
        }
        Err(e @ EvalError::JudgeUnavailable(_)) => {
            bail!("{e}; pass --judge-fixtures DIR or --judge-base-url/--judge-model, or a [judge] config section")
        }
        Err(e) => return Err(e.into()),
    };
    let out = out.unwrap_or(run);
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_atomic(&out.join("report.json"), json.as_bytes())?;
    write_atomic(&out.join("outcomes.csv"), outcomes_csv(&outcomes).as_bytes())?;
    print!("{json}");
    Ok(ExitCode::SUCCESS)
}

pub fn synth(template: &str, seed: u64, samples: u32, out: &Path, fixtures: Option<&Path>) -> Result<ExitCode> {
    let t = GraphTemplate::by_name(template)?;
    let generated = (0..u64::from(samples.max(1)))
        .map(|i| synthesize(&t, seed + i))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_dataset(out, &generated)?;
    if let Some(dir) = fixtures {
        write_fixture_dir(dir, &generated).with_context(|| format!("writing fixtures to {}", dir.display()))?;
    }
    let turns: usize = generated.iter().map(|s| s.turns.len()).sum();
    println!("{} sample(s), {turns} turns -> {}", generated.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn graph(run: &Path, sample: &str, format: ExportFormat, pass: u32) -> Result<ExitCode> {
    let path = pass_dir(run, pass).join(sample_dir_name(sample)).join("graph.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let graph = RelationGraph::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    let text = graph.export(format);
    print!("{text}");
    if !text.ends_with('\n') {
        println!();
    }
    Ok(ExitCode::SUCCESS)
}

pub fn import(input: &Path, out: &Path) -> Result<ExitCode> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let samples = import_chat_jsonl(&text).with_context(|| format!("importing {}", input.display()))?;
    save_dataset(out, &samples)?;
    println!("{} sample(s) -> {}", samples.len(), out.display());
    Ok(ExitCode::SUCCESS)
}
