use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn lexlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lexlab"))
        .args(args)
        .env_remove("LEXLAB_LLM_API_KEY")
        .env_remove("LEXLAB_LLM_BASE_URL")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = lexlab(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Self { dir: tempfile::tempdir().unwrap() };
        let stats: Value = serde_json::from_str(&ok(&[
            "ingest",
            "--statutes",
            fixture("statutes_zh.jsonl").to_str().unwrap(),
            "--aliases",
            fixture("aliases.json").to_str().unwrap(),
            "--out",
            w.path("idx.json").to_str().unwrap(),
        ]))
        .unwrap();
        assert_eq!(stats["ingested"], 28);
        assert_eq!(stats["rejected"], 0);
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
}

fn f(name: &str) -> String {
    fixture(name).to_str().unwrap().to_string()
}

#[test]
fn retrieve_and_recall() {
    let w = Work::new();
    let r: Value = serde_json::from_str(&ok(&["retrieve", "--index", &w.s("idx.json"), "-q", "过失放火致人重伤", "-k", "2"])).unwrap();
    assert_eq!(r["ranked"].as_array().unwrap().len(), 2);
    assert_eq!(r["ranked"][0]["key"]["article_no"], 115);

    let m: Value = serde_json::from_str(&ok(&["retriever-eval", "--index", &w.s("idx.json"), "--gold", &f("gold.jsonl"), "--k", "3,5"])).unwrap();
    assert_eq!(m, serde_json::json!({"3": 1.0, "5": 1.0}));

    // the short gold schema
    std::fs::write(w.path("g.jsonl"), "{\"query\": \"男方多大年龄可以结婚\", \"gold\": [{\"title\": \"民法典\", \"article\": 1047}]}\n").unwrap();
    let m: Value = serde_json::from_str(&ok(&["retriever-eval", "--index", &w.s("idx.json"), "--gold", &w.s("g.jsonl"), "--k", "1"])).unwrap();
    assert_eq!(m["1"], 1.0);
}

#[test]
fn transform_and_distill() {
    let w = Work::new();
    let out = ok(&["forge", "transform", "--items", &f("mcq.jsonl"), "--exemplars", &f("exemplars.json"), "--out", &w.s("tf.jsonl")]);
    assert!(out.contains("16 pairs: 12 transformed, 4 without pattern, 0 dropped"), "{out}");
    let recs = lines(&w.path("tf.jsonl"));
    assert_eq!(recs.iter().filter(|r| r["kind"] == "true_false_query").count(), 12);
    assert_eq!(recs.iter().filter(|r| r["kind"] == "prompt").count(), 4);
    let q = recs.iter().find(|r| r["source_id"] == "jec-002" && r["option_label"] == "B").unwrap();
    assert_eq!(q["query_text"], "关于结婚年龄，女不得早于十八周岁，这一说法是否错误？");
    assert_eq!(q["gold"], true);

    ok(&["forge", "distill", "--queries", &w.s("tf.jsonl"), "--mode", "qa2e", "--out", &w.s("p.jsonl")]);
    let p = lines(&w.path("p.jsonl"));
    assert_eq!(p.len(), 12);
    assert!(p.iter().all(|r| r["purpose"] == "qa2e"));
    ok(&["forge", "qa2e", "--in", &w.s("tf.jsonl"), "--out", &w.s("p2.jsonl")]);
    assert_eq!(std::fs::read(w.path("p.jsonl")).unwrap(), std::fs::read(w.path("p2.jsonl")).unwrap());

    ok(&["forge", "q2ea", "--in", &w.s("tf.jsonl"), "--backend", &f("backend_chat.json"), "--out", &w.s("s.jsonl")]);
    let s = lines(&w.path("s.jsonl"));
    assert!(s.iter().all(|r| r["kind"] == "Q2EA" && r["target_text"].as_str().unwrap().contains("第一千零四十七条")));
}

#[test]
fn consult_sft_is_seeded() {
    let w = Work::new();
    let args = |out: &str| {
        vec![
            "forge".to_string(),
            "consult".into(),
            "--index".into(),
            w.s("idx.json"),
            "--seeds".into(),
            f("consult_seeds.jsonl"),
            "--distractors".into(),
            "2".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            w.s(out),
        ]
    };
    let a = args("a.jsonl");
    let b = args("b.jsonl");
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(std::fs::read(w.path("a.jsonl")).unwrap(), std::fs::read(w.path("b.jsonl")).unwrap());
    for ex in lines(&w.path("a.jsonl")) {
        let ctx = ex["context_articles"].as_array().unwrap();
        assert_eq!(ctx.len(), 3);
        assert_eq!(ctx.iter().filter(|c| c["relevant"] == true).count(), 1);
    }
}

#[test]
fn jem_eval_and_accuracy_table() {
    let w = Work::new();
    assert!(ok(&["forge", "jem", "--items", &f("mcq.jsonl"), "--out", &w.s("jem.jsonl")]).contains("16 items"));
    let out = ok(&[
        "eval", "--items", &w.s("jem.jsonl"), "--backend", &f("backend_score.json"), "--meta", "stage=s3,retrieval=false", "--out", &w.s("r.json"),
    ]);
    // ties go to "正确" except the one tabled item, so correct = gold-0 items + 1
    assert!(out.contains("accuracy 0.5000 (8 / 16"), "{out}");
    let table = ok(&["report", "accuracy", &w.s("r.json")]);
    assert!(table.contains("| s3 (run) | 50.0 |"), "{table}");
}

#[test]
fn charge_benchmark() {
    let w = Work::new();
    let out = ok(&["forge", "charges", "--docs", &f("charge_docs.jsonl"), "--per-charge", "3", "--out", &w.s("ch.jsonl")]);
    assert!(out.contains("| 失火罪 | Arson by negligence | 3 |"));
    let items = lines(&w.path("ch.jsonl"));
    assert_eq!(items.len(), 27);
    assert!(items.iter().all(|i| i["choices"].as_array().unwrap().len() == 9));
    assert!(!items.iter().any(|i| i["id"] == "multi-1"));

    let out = lexlab(&["forge", "charges", "--docs", &f("charge_docs.jsonl"), "--per-charge", "5", "--out", &w.s("x.jsonl")]);
    assert!(!out.status.success());
}

#[test]
fn human_reports() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let r = ok(&["report", "rankings", "--in", &f("ballots.jsonl"), "--out", json.to_str().unwrap()]);
    assert!(r.contains("| with_retrieval | 50.00% | 25.00% | 25.00% |"), "{r}");
    assert!(std::fs::read_to_string(&json).unwrap().contains("with_retrieval"));
    let p = ok(&["report", "pairwise", "--records", &f("pairwise.jsonl")]);
    assert!(p.contains("| 60.00% | 20.00% | 20.00% |"), "{p}");
}

#[test]
fn batch_audit_and_hallucination_report() {
    let w = Work::new();
    let out = ok(&["consult-batch", "--index", &w.s("idx.json"), "--backend", &f("backend_chat.json"), "--questions", &f("questions.txt"), "--out", &w.s("b.jsonl")]);
    assert!(out.contains("20 responses, 0 failed"));
    let rows = lines(&w.path("b.jsonl"));
    let r0: Vec<&Value> = rows.iter().filter(|r| r["condition"] == "r0").collect();
    assert_eq!(r0.len(), 10);
    assert!(r0.iter().all(|r| !r["prompt"].as_str().unwrap().contains("Reference articles:")));
    assert!(rows.iter().filter(|r| r["condition"] == "r1").all(|r| r["prompt"].as_str().unwrap().contains("[3] ")));
    let h = ok(&["report", "hallu", "--in", &format!("all={}", w.s("b.jsonl")), "--out", &w.s("h.json")]);
    assert!(h.contains("| all | 0.0 | 0.0 | 20/20 |"), "{h}");
    let hj: Value = serde_json::from_str(&std::fs::read_to_string(w.path("h.json")).unwrap()).unwrap();
    assert_eq!(hj["all"]["citing"], 20);

    std::fs::write(w.path("resp.txt"), "依据《民法典》第九千条，以及《刑法》第二百六十四条：结婚年龄，男不得早于二十二周岁。《刑法》第二百六十五条规定，盗窃公私财物，数额较大的，处三年以下有期徒刑。").unwrap();
    let a: Value = serde_json::from_str(&ok(&["audit", "--index", &w.s("idx.json"), "--input", &w.s("resp.txt")])).unwrap();
    let v: Vec<&str> = a["findings"].as_array().unwrap().iter().map(|f| f["verdict"].as_str().unwrap()).collect();
    assert_eq!(v, ["H1", "VALID", "H2"]);
    assert!(a["findings"][1]["warning"].is_string());
    assert_eq!(a["findings"][2]["matched_key"]["article_no"], 264);
}

#[test]
fn audit_responses_to_findings_file() {
    let w = Work::new();
    let responses = [
        serde_json::json!({"id": "a", "text": "依据《民法典》第九千条，以及《刑法》第二百六十四条。"}),
        serde_json::json!({"id": "b", "text": "根据《婚姻家庭管理条例》第三十二条规定，结婚年龄，男不得早于二十二周岁，女不得早于二十周岁。"}),
        serde_json::json!({"id": "c", "text": "这个问题要看具体情况。"}),
    ];
    let body: String = responses.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(w.path("resp.jsonl"), body).unwrap();
    let out = ok(&["audit", "--responses", &w.s("resp.jsonl"), "--index", &w.s("idx.json"), "--threshold", "0.35", "--out", &w.s("f.jsonl")]);
    assert!(out.contains("3 findings over 3 responses"), "{out}");
    let f = lines(&w.path("f.jsonl"));
    assert_eq!(f.len(), 4);
    let verdicts: Vec<(&str, &str)> =
        f[..3].iter().map(|l| (l["response_id"].as_str().unwrap(), l["verdict"].as_str().unwrap())).collect();
    assert_eq!(verdicts, [("a", "H1"), ("a", "VALID"), ("b", "H2")]);
    assert_eq!(f[2]["matched_key"]["article_no"], 1047);
    let s = &f[3];
    assert_eq!(s["record"], "summary");
    assert_eq!((s["responses"].as_u64(), s["h1"].as_u64(), s["h2"].as_u64(), s["citing"].as_u64()), (Some(3), Some(1), Some(1), Some(2)));
    assert_eq!(s["h1_pct"], 50.0);
}

#[test]
fn one_shot_consult() {
    let w = Work::new();
    let out = lexlab(&["consult", "-q", "男方多大年龄可以结婚？", "--index", &w.s("idx.json"), "--backend", &f("backend_chat.json")]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("二十二周岁"));
    assert!(String::from_utf8(out.stderr).unwrap().contains("Valid"));
}

#[test]
fn chat_session_over_stdin() {
    let w = Work::new();
    let mut child = Command::new(env!("CARGO_BIN_EXE_lexlab"))
        .args(["chat", "--index", &w.s("idx.json"), "--backend", &f("backend_chat.json")])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child.stdin.take().unwrap().write_all("男方多大可以结婚？\n\n那女方呢？\n".as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
}

#[test]
fn errors_are_reported() {
    let w = Work::new();
    let out = lexlab(&["eval", "--items", &f("mcq.jsonl"), "--backend", &f("backend_http.json")]);
    assert!(!out.status.success());
    let out = lexlab(&["eval", "--items", &w.s("missing.jsonl"), "--backend", &f("backend_score.json")]);
    assert!(!out.status.success());
    let out = lexlab(&["ingest", "--statutes", &w.s("idx.json"), "--out", &w.s("x.json")]);
    assert!(!out.status.success());
    // a chat-only backend cannot score
    ok(&["forge", "jem", "--items", &f("mcq.jsonl"), "--out", &w.s("jem.jsonl")]);
    std::fs::write(
        w.path("chat_http.json"),
        r#"{"kind":"HTTP_CHAT","endpoint":"http://127.0.0.1:9","model_name":"m"}"#,
    )
    .unwrap();
    let out = lexlab(&["eval", "--items", &w.s("jem.jsonl"), "--backend", &w.s("chat_http.json")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not support score"));
}
