//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any criterion fails. Runs entirely on mock providers.

mod common;
#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::sync::Arc;
use std::time::Instant;

use common::{assert_gapless, cursors, envelopes, mock_config, spawn, ScriptedFactory};
use cpduet_core::experiment::headline;
use cpduet_core::provider::{MockProvider, MockScript};
use cpduet_core::session::{
    parse_log, replay_log, PromptBundle, PromptTemplate, ALGORITHM_HEADER, CPP_DIRECTIVE, REFERENCE_HEADER,
};
use cpduet_core::{
    dispatch, rank_chapters, ChatMessage, Condition, CorpusChapter, CorpusIndex, EventKind, ModelClient, ModelConfig,
    OutboundRequest, StreamEvent, TableFormat, TimingRecord, TimingStore, Transcript,
};
use futures::StreamExt;
use oracles::schedule::{completion_order, simulate, Expected};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use serde_json::json;

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn real_runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

fn virtual_runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_time()
        .start_paused(true)
        .build()
        .unwrap()
}

fn timing_summary() -> Outcome {
    let mut store = TimingStore::new();
    for (p, solo, ai) in [("Problem 1", 23.0, 45.0), ("Problem 2", 66.0, 21.0), ("Problem 3", 32.0, 26.0)] {
        store.record(TimingRecord::new(p, Condition::Solo, solo)).map_err(|e| e.to_string())?;
        store.record(TimingRecord::new(p, Condition::Assisted, ai)).map_err(|e| e.to_string())?;
    }
    let s = store.summarize().map_err(|e| e.to_string())?;
    ensure!(s.total_solo == 121.0, "total_solo {}", s.total_solo);
    ensure!(s.total_assisted == 92.0, "total_assisted {}", s.total_assisted);
    ensure!((s.total_change_pct - -23.97).abs() <= 0.01, "total change {}", s.total_change_pct);
    ensure!(
        (s.per_problem_mean_change_pct - 2.91).abs() <= 0.01,
        "mean change {}",
        s.per_problem_mean_change_pct
    );
    let rows = [45.0 / 23.0, 21.0 / 66.0, 26.0 / 32.0].map(|r| (r - 1.0) * 100.0);
    let mean = rows.iter().sum::<f64>() / 3.0;
    ensure!((mean - s.per_problem_mean_change_pct).abs() < 1e-9, "row arithmetic {mean}");
    ensure!(
        headline(s.total_change_pct) == "24% decrease in implementation time",
        "headline `{}`",
        headline(s.total_change_pct)
    );
    let md = store.export_table(TableFormat::Markdown).map_err(|e| e.to_string())?;
    ensure!(md.lines().count() == 5, "markdown table:\n{md}");
    ensure!(md.contains("| Problem 2 | 66 | 21 |"), "markdown table:\n{md}");
    Ok(())
}

fn gating() -> Outcome {
    real_runtime().block_on(async {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("corpus");
        std::fs::create_dir_all(&root).unwrap();
        std::fs::write(root.join("dsu.md"), "# DSU\nunion find with path compression").unwrap();
        let mut cfg = mock_config(&dir.path().join("data"), &["m1", "m2", "m3"]);
        cfg.corpus_root = Some(root);
        let factory = ScriptedFactory::new([]);
        let api = spawn(cfg, factory.clone()).await;

        let id = api.create().await;
        let (status, err) = api.post(&format!("/sessions/{id}/start"), json!({})).await;
        ensure!(status == 409, "start without problem gave {status}");
        ensure!(err["error"] == "precondition_failed", "code {}", err["error"]);
        ensure!(err["message"] == "problem text required", "message {}", err["message"]);
        let (_, s) = api.get(&format!("/sessions/{id}")).await;
        ensure!(s["state"] == "Draft", "rejected start changed state");

        // Problem only.
        api.input(&id, "problem", "Count connected components.").await;
        let (status, _) = api.post(&format!("/sessions/{id}/start"), json!({})).await;
        ensure!(status == 202, "start with problem only gave {status}");
        api.wait_idle(&id).await;
        let prompt = factory.provider("m1").captured()[0].chat.messages[0].content.clone();
        ensure!(!prompt.contains(ALGORITHM_HEADER), "algorithm section present without input");
        ensure!(!prompt.contains(REFERENCE_HEADER), "reference section present without input");

        // Problem plus both optional inputs.
        let id = api.create().await;
        api.input(&id, "problem", "Count connected components.").await;
        api.input(&id, "algorithm", "Union all edges, count roots.").await;
        let (status, _) = api.input(&id, "reference", "dsu").await;
        ensure!(status == 200, "reference input gave {status}");
        let (status, _) = api.post(&format!("/sessions/{id}/start"), json!({})).await;
        ensure!(status == 202, "start with all inputs gave {status}");
        api.wait_idle(&id).await;
        let prompt = factory.provider("m1").captured()[0].chat.messages[0].content.clone();
        ensure!(prompt.contains("Union all edges"), "algorithm missing from prompt");
        ensure!(prompt.contains("### dsu\n# DSU"), "reference missing from prompt");
        Ok(())
    })
}

fn ask(text: &str) -> Transcript {
    [ChatMessage::user(text)].into_iter().collect()
}

/// Runs one round on the virtual clock; returns `(ms since open, event)`.
fn run_round(scripts: &[MockScript]) -> Vec<(u64, StreamEvent)> {
    virtual_runtime().block_on(async {
        let clients: BTreeMap<String, ModelClient> = scripts
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let id = format!("m{i}");
                let p = Arc::new(MockProvider::new(s.clone()));
                (id.clone(), ModelClient::new(ModelConfig::mock(id), p))
            })
            .collect();
        let requests: Vec<OutboundRequest> = clients
            .keys()
            .map(|id| OutboundRequest {
                model_id: id.clone(),
                transcript: ask("solve"),
                first_seq: 0,
            })
            .collect();
        let t0 = tokio::time::Instant::now();
        let mut merged = dispatch(&clients, "s", &requests);
        let mut out = Vec::new();
        while let Some(ev) = merged.next().await {
            out.push((t0.elapsed().as_millis() as u64, ev));
        }
        out
    })
}

fn check_against_schedule(scripts: &[MockScript], got: &[(u64, StreamEvent)]) -> Outcome {
    let mut want: BTreeMap<String, Vec<(u64, u64, Expected)>> = BTreeMap::new();
    for (t, m, seq, e) in simulate(scripts) {
        want.entry(format!("m{m}")).or_default().push((t, seq, e));
    }
    let mut have: BTreeMap<String, Vec<(u64, u64, Expected)>> = BTreeMap::new();
    for (t, ev) in got {
        let e = match &ev.kind {
            EventKind::Delta { text } => Expected::Delta(text.clone()),
            EventKind::Done => Expected::Done,
            EventKind::Error { message } => Expected::Error(message.clone()),
        };
        have.entry(ev.model_id.clone()).or_default().push((*t, ev.seq, e));
    }
    ensure!(have == want, "delivery differs from schedule:\n got {have:?}\nwant {want:?}");
    for (model, events) in &have {
        ensure!(
            events.iter().enumerate().all(|(i, (_, seq, _))| *seq == i as u64),
            "{model}: seq not gapless"
        );
    }
    Ok(())
}

fn terminal_order(got: &[(u64, StreamEvent)]) -> Vec<String> {
    got.iter()
        .filter(|(_, e)| e.kind.is_terminal())
        .map(|(_, e)| e.model_id.clone())
        .collect()
}

fn streaming_contract() -> Outcome {
    let wall = Instant::now();
    // Listed slow first so completion order cannot follow list order.
    let scripts = vec![
        MockScript::split_evenly("for (int i = 0; i < n; i++)", 3, 10),
        MockScript::split_evenly("int main()", 2, 5),
        MockScript::split_evenly("std::sort(a.begin(), a.end());", 4, 5),
    ];
    let ends: Vec<u64> = scripts.iter().map(MockScript::completion_ms).collect();
    ensure!(ends == [30, 10, 20], "fixture completion times {ends:?}");
    let got = run_round(&scripts);
    ensure!(terminal_order(&got) == ["m1", "m2", "m0"], "terminal order {:?}", terminal_order(&got));
    ensure!(completion_order(&scripts) == [1, 2, 0], "oracle order");
    check_against_schedule(&scripts, &got)?;
    let done_at: Vec<u64> = got.iter().filter(|(_, e)| e.kind.is_terminal()).map(|(t, _)| *t).collect();
    ensure!(done_at == [10, 20, 30], "terminal times {done_at:?}");

    let mut failing = scripts.clone();
    failing[2] = MockScript::chunks([(5, "std::"), (10, "sort")]).then_fail("provider returned 503");
    let got = run_round(&failing);
    check_against_schedule(&failing, &got)?;
    let evs: Vec<StreamEvent> = got.into_iter().map(|(_, e)| e).collect();
    let mut t: BTreeMap<&str, String> = BTreeMap::new();
    for e in &evs {
        if let EventKind::Delta { text } = &e.kind {
            t.entry(&e.model_id).or_default().push_str(text);
        }
    }
    ensure!(t["m0"] == "for (int i = 0; i < n; i++)", "m0 text {}", t["m0"]);
    ensure!(t["m1"] == "int main()", "m1 text {}", t["m1"]);
    let last = |m: &str| evs.iter().rev().find(|e| e.model_id == m).map(|e| e.kind.clone());
    ensure!(last("m0") == Some(EventKind::Done), "m0 did not finish");
    ensure!(last("m1") == Some(EventKind::Done), "m1 did not finish");
    ensure!(matches!(last("m2"), Some(EventKind::Error { .. })), "m2 did not error");

    let elapsed = wall.elapsed();
    ensure!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    Ok(())
}

fn prompt_corpus() -> CorpusIndex {
    CorpusIndex::from_chapters((0..12).map(|i| {
        CorpusChapter::new(format!("topic/{i:02}"), format!("# Topic {i}\nbody of chapter {i}\nwith détails ✓"))
    }))
    .unwrap()
}

fn prompt_determinism() -> Outcome {
    let index = prompt_corpus();
    let template = PromptTemplate::default();
    let strategy = (
        "[ -~\n\té✓]{1,200}",
        proptest::option::of("[ -~\n]{0,80}"),
        proptest::sample::subsequence((0..12).map(|i| format!("topic/{i:02}")).collect::<Vec<_>>(), 0..=5),
    );
    let mut runner = runner(1000);
    let mut checked = 0;
    for _ in 0..1000 {
        let (problem, algorithm, aliases) = strategy.new_tree(&mut runner).map_err(|e| e.to_string())?.current();
        if problem.trim().is_empty() {
            continue;
        }
        let render = || {
            PromptBundle::assemble(&template, &problem, algorithm.as_deref(), &aliases, &index)
                .map(|b| b.render())
                .map_err(|e| e.to_string())
        };
        let a = render()?;
        let b = render()?;
        ensure!(a == b, "prompt differs between calls for {problem:?}");
        ensure!(a.contains(CPP_DIRECTIVE), "prompt lacks the C++ instruction");
        let has_algo = algorithm.as_deref().is_some_and(|s| !s.trim().is_empty());
        ensure!(a.contains(ALGORITHM_HEADER) == has_algo, "algorithm section presence wrong");
        ensure!(a.contains(REFERENCE_HEADER) == !aliases.is_empty(), "reference section presence wrong");
        checked += 1;
    }
    ensure!(checked >= 990, "only {checked} usable triples");
    Ok(())
}

fn token_budget() -> Outcome {
    let round = |budgets: [u32; 3]| -> Vec<(String, Vec<u32>)> {
        virtual_runtime().block_on(async {
            let mut out = Vec::new();
            for (i, budget) in budgets.into_iter().enumerate() {
                let p = Arc::new(MockProvider::echo());
                let id = format!("m{i}");
                let client = ModelClient::new(ModelConfig::mock(&id).with_budget(budget), p.clone());
                let mut t = ask("first");
                let _: Vec<_> = client.send_chat("s", &t, 0).collect().await;
                t.push(ChatMessage::assistant("hello"));
                t.push(ChatMessage::user("second"));
                let _: Vec<_> = client.send_chat("s", &t, 2).collect().await;
                out.push((id, p.captured().iter().map(|r| r.max_output_tokens).collect()));
            }
            out
        })
    };
    let base = round([512, 2048, 8192]);
    for ((id, seen), want) in base.iter().zip([512, 2048, 8192]) {
        ensure!(seen == &vec![want, want], "{id}: captured {seen:?}, configured {want}");
    }
    let changed = round([512, 1000, 8192]);
    ensure!(changed[0] == base[0] && changed[2] == base[2], "other models' requests changed");
    ensure!(changed[1].1 == vec![1000, 1000], "m1 captured {:?}", changed[1].1);
    Ok(())
}

fn bm25_oracle() -> Outcome {
    let strategy = proptest::collection::vec("[a-z]{1,6}", 1..=50).prop_flat_map(|vocab| {
        let word = proptest::sample::select(vocab.clone());
        let body = proptest::collection::vec((word.clone(), proptest::sample::select(vec![" ", ", ", "\n", "-"])), 1..40)
            .prop_map(|ws| ws.into_iter().map(|(w, s)| format!("{w}{s}")).collect::<String>());
        let docs = proptest::collection::vec(body, 1..=10);
        let query = proptest::collection::vec(word, 0..6).prop_map(|q| q.join(" "));
        (docs, query)
    });
    let mut runner = runner(100);
    for case in 0..100 {
        let (bodies, query) = strategy.new_tree(&mut runner).map_err(|e| e.to_string())?.current();
        let docs: Vec<(String, String)> =
            bodies.into_iter().enumerate().map(|(i, b)| (format!("ch/{i:02}"), b)).collect();
        let index = CorpusIndex::from_chapters(docs.iter().map(|(a, b)| CorpusChapter::new(a.clone(), b.clone())))
            .map_err(|e| e.to_string())?;
        let got = rank_chapters(&index, &query, docs.len());
        let want = oracles::bm25::rank(&docs, &query);
        ensure!(got.len() == want.len(), "case {case}: {} vs {} results", got.len(), want.len());
        for (g, (alias, score)) in got.iter().zip(&want) {
            ensure!(&g.alias == alias, "case {case}: order differs for {query:?}");
            ensure!((g.score - score).abs() <= 1e-9, "case {case}: {alias} {} vs {score}", g.score);
        }
    }
    Ok(())
}

fn log_replay() -> Outcome {
    real_runtime().block_on(async {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mock_config(dir.path(), &["m1", "m2", "m3"]);
        let factory = ScriptedFactory::new([
            ("m1", MockScript::split_evenly(&"x = y + 1;\n".repeat(8), 24, 2)),
            ("m2", MockScript::split_evenly("dp[i] = max(dp[i-1], dp[i-2] + a[i]);", 12, 3)),
            ("m3", MockScript::split_evenly("int n; cin >> n;", 6, 4).then_fail("rate limited")),
        ]);
        let api = spawn(cfg.clone(), factory).await;
        let id = api.create().await;
        api.input(&id, "problem", "House robber.").await;
        api.input(&id, "algorithm", "Linear dp.").await;
        api.post(&format!("/sessions/{id}/start"), json!({})).await;

        // Forced disconnects every 5 envelopes, each reconnect resuming
        // from the last seen seq per model.
        let mut seen = Vec::new();
        for _ in 0..4 {
            seen.extend(envelopes(&api.events(&id, &cursors(&seen), true, Some(5)).await));
        }
        seen.extend(envelopes(&api.events(&id, &cursors(&seen), false, None).await));
        api.post(&format!("/sessions/{id}/messages"), json!({"target": "all", "text": "use long long"}))
            .await;
        seen.extend(envelopes(&api.events(&id, &cursors(&seen), true, Some(3)).await));
        seen.extend(envelopes(&api.events(&id, &cursors(&seen), false, None).await));
        let live = api.wait_idle(&id).await;

        let mut by_model = seen.clone();
        by_model.sort_by(|a, b| a.model_id.cmp(&b.model_id).then(a.seq.cmp(&b.seq)));
        let result = std::panic::catch_unwind(|| assert_gapless(&by_model));
        ensure!(result.is_ok(), "resumed streams have a gap or duplicate");

        let uninterrupted = envelopes(&api.events(&id, "", false, None).await);
        ensure!(seen == uninterrupted, "resumed envelopes differ from an uninterrupted stream");

        let text = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
        let replayed = replay_log(&parse_log(&text).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let mut replayed = serde_json::to_value(&replayed).unwrap();
        replayed["can_start"] = live["can_start"].clone();
        replayed["streaming"] = live["streaming"].clone();
        ensure!(replayed == live, "replayed session differs:\n{replayed}\nvs\n{live}");
        ensure!(
            live["transcripts"]["m3"].as_array().map(Vec::len) == Some(2),
            "failed replies must not enter the transcript"
        );

        let restarted = spawn(cfg, ScriptedFactory::new([])).await;
        let (_, after) = restarted.get(&format!("/sessions/{id}")).await;
        ensure!(after == live, "session restored from log differs");
        let replay_stream = envelopes(&restarted.events(&id, "", false, None).await);
        ensure!(replay_stream == uninterrupted, "log-replay stream differs from live stream");
        Ok(())
    })
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("timing summary on the three-problem fixture", timing_summary),
        ("start gating", gating),
        ("streaming contract on the virtual clock", streaming_contract),
        ("prompt determinism over 1000 triples", prompt_determinism),
        ("per-model token budget", token_budget),
        ("BM25 oracle equivalence over 100 corpora", bm25_oracle),
        ("log replay and stream resumption", log_replay),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(()) => println!("PASS criterion {}: {name}", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why}", n + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
