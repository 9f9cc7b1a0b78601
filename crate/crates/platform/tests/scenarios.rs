use std::path::Path;

use platform::harness::{run_scenario, Scenario};

async fn run_file(name: &str) -> Vec<(String, bool)> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name);
    let scenario = Scenario::load(&path).unwrap();
    let report = run_scenario(&scenario).await.unwrap();
    assert!(report.passed, "{}", report.render());
    report
        .steps
        .into_iter()
        .map(|s| (s.name, s.passed))
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn option_a() {
    run_file("option-A.json").await;
}

#[tokio::test(flavor = "multi_thread")]
async fn option_b() {
    run_file("option-B.json").await;
}

#[tokio::test(flavor = "multi_thread")]
async fn dynamic_update() {
    run_file("dynamic-update.json").await;
}

#[tokio::test(flavor = "multi_thread")]
async fn outcomes_are_deterministic() {
    assert_eq!(
        run_file("option-B.json").await,
        run_file("option-B.json").await
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn mismatches_fail_with_a_diff() {
    let scenario = Scenario::from_json(
        r#"{"name":"wrong","steps":[{"name":"unknown","request":{"path":"/nothing"},"expect":{"status":200}}]}"#,
    )
    .unwrap();
    let report = run_scenario(&scenario).await.unwrap();
    assert!(!report.passed);
    assert!(
        report.steps[0].diffs[0].contains("expected 200, got 404"),
        "{:?}",
        report.steps[0].diffs
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn infrastructure_errors_are_not_failures() {
    let scenario = Scenario::from_json(
        r#"{"name":"bad","fixtures":{"routes":[{"path_prefix":"/x","upstream_url":"stub:missing"}]},"steps":[]}"#,
    )
    .unwrap();
    assert!(run_scenario(&scenario).await.is_err());
}
