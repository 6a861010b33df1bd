//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use council_core::agents::{AgentBackend, HttpBackend, MockBackend, StochasticParams, StochasticProfile, TemplateStore};
use council_core::consistency::{aggregate as aggregate_runs, RunSet};
use council_core::council::{to_predictions, Council, CouncilResult, Dispatch};
use council_core::data::{
    balanced_sample, class_distribution, dense_labels, group_kfold, load_dataset, load_predictions, write_predictions,
    Prediction,
};
use council_core::metrics::{ablation_delta, attractor_report, evaluate as evaluate_preds, stability as stability_report};
use council_core::overrides::{
    apply, build_proposals, outcome_counts, regression_guard, verify_all, EvidenceStore, GuardPolicy, OverrideProposal,
    ProposalStatus,
};
use council_core::retrieval::{majority_fraction, mmr_select, top_k_relevance, HttpSimilarity, SimilarityBackend, TfIdfCosine, TfIdfIndex};
use council_core::synth::{synthetic_corpus, CorpusConfig, EvidenceFixture};
use council_core::DmrsLabel;

use crate::config::{BackendKind, ConfigError, MockProfile, RunConfig};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_GUARD_REJECTED: u8 = 3;

/// A failed command: exit code plus the JSON written to stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
    pub details: Option<Value>,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_FAILURE,
            kind,
            message: message.into(),
            details: None,
        }
    }

    pub fn config(e: ConfigError) -> Self {
        Failure::new("config", e.to_string())
    }

    pub fn to_json(&self) -> String {
        let mut v = json!({"error": self.kind, "message": self.message});
        if let Some(d) = &self.details {
            v["details"] = d.clone();
        }
        v.to_string()
    }
}

macro_rules! failure_from {
    ($($ty:ty => $kind:literal),* $(,)?) => {
        $(impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Failure::new($kind, e.to_string())
            }
        })*
    };
}

failure_from! {
    ConfigError => "config",
    council_core::data::DataError => "data",
    council_core::retrieval::RetrievalError => "retrieval",
    council_core::agents::AgentError => "agent",
    council_core::agents::BackendError => "backend",
    council_core::council::CouncilError => "council",
    council_core::consistency::ConsistencyError => "consistency",
    council_core::overrides::OverrideError => "override",
    council_core::metrics::MetricsError => "metrics",
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new("io", format!("{}: {e}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    out
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let file = fs::File::open(path).map_err(|e| io_failure(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_failure(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Failure::new("data", format!("{}: line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

/// Gold labels from a dataset (`turns` records) or a prediction file.
pub fn load_golds(path: &Path) -> Result<Vec<DmrsLabel>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let is_dataset = serde_json::from_str::<Value>(first)
        .map(|v| v.get("turns").is_some())
        .unwrap_or(false);
    if is_dataset {
        Ok(load_dataset(path)?.golds()?)
    } else {
        let preds = load_predictions(path)?;
        Ok(dense_labels(&preds, preds.len())?)
    }
}

fn load_labels(path: &Path, n: usize) -> Result<Vec<DmrsLabel>, Failure> {
    Ok(dense_labels(&load_predictions(path)?, n)?)
}

pub fn load_run_config(path: Option<&Path>, corpus: Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(c) = corpus {
        cfg.data.corpus = Some(c);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.check_paths()?;
    Ok(cfg)
}

pub fn load_policy(policy: Option<&Path>, config: Option<&Path>) -> Result<GuardPolicy, Failure> {
    match (policy, config) {
        (Some(p), _) => Ok(GuardPolicy::load(p)?),
        (None, Some(c)) => Ok(RunConfig::load(Some(c))?.policy),
        (None, None) => Ok(GuardPolicy::default()),
    }
}

fn build_index(cfg: &RunConfig) -> Result<TfIdfIndex, Failure> {
    let path = cfg
        .data
        .corpus
        .as_deref()
        .ok_or_else(|| Failure::new("config", "a retrieval corpus is required (data.corpus or --corpus)"))?;
    Ok(TfIdfIndex::build(&load_dataset(path)?, &cfg.retrieval.tokenizer())?)
}

pub fn data_stats(input: &Path, as_json: bool) -> Result<(), Failure> {
    let ds = load_dataset(input)?;
    let hist = class_distribution(&ds)?;
    if as_json {
        let counts: Vec<Value> = DmrsLabel::all()
            .map(|c| json!({"class": c.to_string(), "count": hist.count(c), "fraction": hist.fraction(c)}))
            .collect();
        print_json(&json!({"n": ds.len(), "majority": hist.majority().to_string(), "classes": counts}));
    } else {
        let mut out = String::new();
        let _ = writeln!(out, "{:<6} {:>6} {:>7}", "Class", "Count", "%");
        for c in DmrsLabel::all() {
            let _ = writeln!(out, "{:<6} {:>6} {:>7.1}", c.to_string(), hist.count(c), hist.fraction(c) * 100.0);
        }
        let _ = writeln!(out, "{:<6} {:>6}", "Total", ds.len());
        print!("{out}");
    }
    Ok(())
}

pub fn data_split(input: &Path, k: usize, seed: u64, out_dir: &Path) -> Result<(), Failure> {
    let ds = load_dataset(input)?;
    let folds = group_kfold(&ds, k, seed)?;
    fs::create_dir_all(out_dir).map_err(|e| io_failure(out_dir, e))?;
    for (i, f) in folds.iter().enumerate() {
        f.train.write_jsonl(&out_dir.join(format!("fold{i}.train.jsonl")))?;
        f.val.write_jsonl(&out_dir.join(format!("fold{i}.val.jsonl")))?;
        println!("fold {i}: train {} val {}", f.train.len(), f.val.len());
    }
    Ok(())
}

pub fn data_balance(input: &Path, cap: usize, floor: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let ds = load_dataset(input)?;
    let balanced = balanced_sample(&ds, cap, floor, seed)?;
    balanced.write_jsonl(out)?;
    println!("{} -> {} samples", ds.len(), balanced.len());
    Ok(())
}

pub fn data_synth(out: &Path, n: Option<usize>, dialogues: usize, seed: u64, prefix: String) -> Result<(), Failure> {
    let mut cfg = match n {
        Some(n) => CorpusConfig::proportional(n, dialogues, seed),
        None => CorpusConfig {
            dialogues,
            seed,
            ..Default::default()
        },
    };
    cfg.dialogue_prefix = prefix;
    let ds = synthetic_corpus(&cfg);
    ds.write_jsonl(out)?;
    println!("wrote {} samples", ds.len());
    Ok(())
}

pub fn data_fixture(out_dir: &Path, seed: u64) -> Result<(), Failure> {
    let fx = EvidenceFixture::new(seed);
    fx.write(out_dir)?;
    println!("wrote {}-sample evidence fixture to {}", fx.len(), out_dir.display());
    Ok(())
}

pub struct RetrieveOptions {
    pub input: PathBuf,
    pub samples: Vec<usize>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub top_k: bool,
    pub exclude: bool,
    pub out: Option<PathBuf>,
}

pub fn retrieve(cfg: &RunConfig, opts: &RetrieveOptions) -> Result<(), Failure> {
    let index = build_index(cfg)?;
    let queries = load_dataset(&opts.input)?;
    let k = opts.k.unwrap_or(cfg.retrieval.k_phase1);
    let lambda = opts.lambda.unwrap_or(cfg.retrieval.lambda);
    let ids: Vec<usize> = if opts.samples.is_empty() {
        (0..queries.len()).collect()
    } else {
        opts.samples.clone()
    };
    let mut out = String::new();
    for i in ids {
        let q = queries
            .samples
            .get(i)
            .ok_or_else(|| Failure::new("data", format!("sample {i} out of range for {} samples", queries.len())))?;
        let set = if opts.top_k {
            top_k_relevance(&index, q, k, opts.exclude)?
        } else {
            mmr_select(&index, q, k, lambda, opts.exclude)?
        };
        let exemplars: Vec<Value> = set
            .items
            .iter()
            .map(|e| {
                let m = index.meta(e.row);
                json!({"row": e.row, "score": e.score, "dialogue_id": m.dialogue_id, "label": m.gold})
            })
            .collect();
        let row = json!({
            "sample_id": i,
            "dialogue_id": q.dialogue_id,
            "exemplars": exemplars,
            "majority_fraction": majority_fraction(&set, &index)?,
        });
        out.push_str(&row.to_string());
        out.push('\n');
    }
    match &opts.out {
        Some(p) => write_file(p, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

pub fn classify(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), Failure> {
    let index = build_index(cfg)?;
    let ds = load_dataset(input)?;
    let templates = match &cfg.backend.templates {
        Some(dir) => TemplateStore::from_dir(dir)?,
        None => TemplateStore::builtin(),
    };
    let backend: Box<dyn AgentBackend> = match cfg.backend.kind {
        BackendKind::Http => Box::new(HttpBackend::new(
            cfg.backend.url.as_deref().expect("checked at load"),
            cfg.backend.timeout(),
        )),
        BackendKind::Mock => match cfg.backend.profile {
            MockProfile::Stochastic => {
                let golds = ds.iter().map(|s| s.gold).collect();
                let profile = StochasticProfile::new(StochasticParams::default(), golds, cfg.backend.profile_seed);
                Box::new(MockBackend::stochastic(profile, cfg.seed))
            }
            MockProfile::Scripted => Box::new(
                MockBackend::scripted()
                    .with_seed(cfg.seed)
                    .load_script(cfg.backend.script.as_deref().expect("checked at load"))?,
            ),
        },
    };
    let tfidf = TfIdfCosine::new(&index);
    let http_similarity = cfg
        .backend
        .similarity_url
        .as_deref()
        .map(|u| HttpSimilarity::new(u, cfg.backend.timeout()));
    let similarity: &dyn SimilarityBackend = match &http_similarity {
        Some(h) => h,
        None => &tfidf,
    };
    let council = Council::new(&*backend, &index, similarity, &templates, cfg.council_config())?.with_dispatch(
        Dispatch::Threaded {
            threads: cfg.parallelism,
        },
    );
    let results = council.classify_batch(&ds);

    write_predictions(out, &to_predictions(&results))?;
    let failures: Vec<Value> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| json!({"sample_id": i, "error": e.to_string()})))
        .collect();
    let failures_path = with_suffix(out, ".failures.jsonl");
    if failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path).map_err(|e| io_failure(&failures_path, e))?;
        }
    } else {
        write_file(&failures_path, &to_jsonl(&failures))?;
    }
    if let Some(dir) = &cfg.output.trace_dir {
        let traces: Vec<&CouncilResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        write_file(&dir.join("traces.jsonl"), &to_jsonl(&traces))?;
    }
    if !failures.is_empty() {
        let mut f = Failure::new(
            "classify",
            format!(
                "{} of {} samples failed; see {}",
                failures.len(),
                ds.len(),
                failures_path.display()
            ),
        );
        f.details = Some(json!({"failed": failures.len(), "total": ds.len()}));
        return Err(f);
    }
    println!("classified {} samples", ds.len());
    Ok(())
}

pub fn aggregate(runs: Option<&Path>, predictions: &[PathBuf], name: &str, out: &Path) -> Result<(), Failure> {
    let rs = match runs {
        Some(path) => RunSet::load(path, name)?,
        None => {
            let first = predictions
                .first()
                .ok_or_else(|| Failure::new("usage", "give --runs or at least one --predictions file"))?;
            let n = load_predictions(first)?.len();
            let labels = predictions.iter().map(|p| load_labels(p, n)).collect::<Result<Vec<_>, _>>()?;
            RunSet::new(name, labels)?
        }
    };
    let preds: Vec<Prediction> = aggregate_runs(&rs)
        .into_iter()
        .map(|p| Prediction {
            sample_id: p.sample_id,
            label: p.label,
            confidence: Some(p.agreement),
            source: p.source_name,
        })
        .collect();
    write_predictions(out, &preds)?;
    println!("aggregated {} runs over {} samples", rs.num_runs(), rs.num_samples());
    Ok(())
}

fn count_gates(proposals: &[OverrideProposal]) -> (usize, usize) {
    let a = proposals
        .iter()
        .filter(|p| p.gate == council_core::overrides::Gate::TypeA)
        .count();
    (a, proposals.len() - a)
}

pub fn override_build(
    policy: &GuardPolicy,
    evidence_dir: &Path,
    base: &Path,
    out: &Path,
    audit: Option<PathBuf>,
) -> Result<(), Failure> {
    let store = EvidenceStore::load_with_base_file(evidence_dir, base)?;
    let built = build_proposals(&store, policy)?;
    write_file(out, &to_jsonl(&built.proposals))?;
    let audit = audit.unwrap_or_else(|| with_suffix(out, ".audit.jsonl"));
    write_file(&audit, &to_jsonl(&built.audit))?;
    let (a, b) = count_gates(&built.proposals);
    print_json(&json!({
        "samples": store.len(),
        "evaluations": built.audit.len(),
        "proposals": built.proposals.len(),
        "type_a": a,
        "type_b": b,
    }));
    Ok(())
}

pub fn override_verify(
    policy: &GuardPolicy,
    evidence_dir: &Path,
    base: &Path,
    proposals: &Path,
    out: &Path,
) -> Result<(), Failure> {
    let store = EvidenceStore::load_with_base_file(evidence_dir, base)?;
    let proposals: Vec<OverrideProposal> = read_jsonl(proposals)?;
    let (verified, rejected): (Vec<_>, Vec<_>) = verify_all(&proposals, &store, policy)
        .into_iter()
        .partition(|p| p.status == ProposalStatus::Verified);
    write_file(out, &to_jsonl(&verified))?;
    write_file(&with_suffix(out, ".rejected.jsonl"), &to_jsonl(&rejected))?;
    print_json(&json!({"verified": verified.len(), "rejected": rejected.len()}));
    Ok(())
}

pub fn override_guard(policy: &GuardPolicy, base: &Path, proposals: &Path, out: &Path) -> Result<(), Failure> {
    let base = load_predictions(base)?;
    let labels = dense_labels(&base, base.len())?;
    let proposals: Vec<OverrideProposal> = read_jsonl(proposals)?;
    match regression_guard(&proposals, policy, &labels) {
        Ok(accepted) => {
            write_file(out, &to_jsonl(&accepted))?;
            print_json(&json!({"accepted": accepted.len()}));
            Ok(())
        }
        Err(rejection) => {
            if out.exists() {
                fs::remove_file(out).map_err(|e| io_failure(out, e))?;
            }
            Err(Failure {
                code: EXIT_GUARD_REJECTED,
                kind: "guard_rejected",
                message: rejection.to_string(),
                details: Some(serde_json::to_value(&rejection).expect("rejection serializes")),
            })
        }
    }
}

pub fn override_apply(
    base: &Path,
    accepted: &Path,
    out: &Path,
    diff: Option<PathBuf>,
    gold: Option<&Path>,
) -> Result<(), Failure> {
    let base = load_predictions(base)?;
    let accepted: Vec<OverrideProposal> = read_jsonl(accepted)?;
    let (preds, report) = apply(&base, &accepted)?;
    write_predictions(out, &preds)?;
    let mut summary = serde_json::to_value(&report).expect("diff serializes");
    if let Some(g) = gold {
        let golds = load_golds(g)?;
        if golds.len() != base.len() {
            return Err(Failure::new(
                "data",
                format!("{} gold labels for {} predictions", golds.len(), base.len()),
            ));
        }
        let outcomes = outcome_counts(&report.changes, &golds);
        summary["outcomes"] = json!({
            "corrected": outcomes.corrected,
            "regressed": outcomes.regressed,
            "lateral": outcomes.lateral,
            "net": outcomes.net(),
        });
    }
    let diff = diff.unwrap_or_else(|| with_suffix(out, ".diff.json"));
    write_file(&diff, &serde_json::to_string_pretty(&summary).expect("diff serializes"))?;
    let mut line = json!({"changed": report.changed, "total": report.total});
    if let Some(o) = summary.get("outcomes") {
        line["outcomes"] = o.clone();
    }
    println!("{line}");
    Ok(())
}

pub fn evaluate(pred: &Path, gold: &Path, base: Option<&Path>, as_json: bool) -> Result<(), Failure> {
    let golds = load_golds(gold)?;
    let report = evaluate_preds(&load_labels(pred, golds.len())?, &golds)?;
    let delta = match base {
        Some(b) => {
            let reference = evaluate_preds(&load_labels(b, golds.len())?, &golds)?;
            Some(ablation_delta(&reference.summary(), &report.summary()))
        }
        None => None,
    };
    if as_json {
        let mut v = serde_json::to_value(&report).expect("report serializes");
        if let Some(d) = &delta {
            v["delta"] = serde_json::to_value(d).expect("delta serializes");
        }
        print_json(&v);
    } else {
        print!("{}", report.render_table());
        if let Some(d) = &delta {
            println!("Delta vs base: {}", d.render());
        }
    }
    Ok(())
}

pub fn stability(predictions: &[PathBuf], gold: &Path, as_json: bool) -> Result<(), Failure> {
    let golds = load_golds(gold)?;
    let runs = predictions
        .iter()
        .map(|p| load_labels(p, golds.len()))
        .collect::<Result<Vec<_>, _>>()?;
    let report = stability_report(&runs, &golds)?;
    if as_json {
        print_json(&report);
    } else {
        print!("{}", report.render_table());
    }
    Ok(())
}

pub fn report(traces: &Path, gold: &Path, top: usize, as_json: bool) -> Result<(), Failure> {
    let golds = load_golds(gold)?;
    let traces: Vec<CouncilResult> = read_jsonl(traces)?;
    let aligned = traces
        .iter()
        .map(|t| {
            golds
                .get(t.sample_id)
                .copied()
                .ok_or_else(|| Failure::new("data", format!("trace sample {} has no gold label", t.sample_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = attractor_report(&traces, &aligned)?;
    if as_json {
        print_json(&report);
    } else {
        print!("{}", report.render_table(top));
    }
    Ok(())
}
