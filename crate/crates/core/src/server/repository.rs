use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::canonical;
use crate::engine::{validate_graph, TestGraph};

/// Why one repository file was skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedTest {
    pub path: PathBuf,
    /// Rule codes or the parse error, e.g. `CYCLE(q1,q2)`.
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct TestRepository {
    pub tests: BTreeMap<String, TestGraph>,
    pub rejected: Vec<RejectedTest>,
}

/// Loads every `*.json` file in `dir` as a test graph.
///
/// Files need not be canonical (hand-edited tests are fine) but must match
/// the schema and pass validation. A file whose `test_id` differs from its
/// stem is rejected.
pub fn load_test_repository(dir: &Path) -> io::Result<TestRepository> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();

    let mut repo = TestRepository::default();
    for path in paths {
        let bytes = fs::read(&path)?;
        let reject = |reasons: Vec<String>| RejectedTest {
            path: path.clone(),
            reasons,
        };
        let graph: TestGraph = match serde_json::from_slice(&bytes) {
            Ok(g) => g,
            Err(e) => {
                repo.rejected.push(reject(vec![format!("SCHEMA_VIOLATION: {e}")]));
                continue;
            }
        };
        let report = validate_graph(&graph);
        if !report.is_ok() {
            let reasons = report.violations.iter().map(|v| v.to_string()).collect();
            repo.rejected.push(reject(reasons));
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        if stem != graph.test_id {
            repo.rejected.push(reject(vec![format!(
                "ID_MISMATCH: file {stem} holds test {}",
                graph.test_id
            )]));
            continue;
        }
        repo.tests.insert(graph.test_id.clone(), graph);
    }
    for r in &repo.rejected {
        log::warn!("skipped test file {}: {}", r.path.display(), r.reasons.join(", "));
    }
    Ok(repo)
}

/// Writes a test in canonical form under `dir/<test_id>.json`.
pub fn store_test(dir: &Path, graph: &TestGraph) -> io::Result<PathBuf> {
    let path = dir.join(format!("{}.json", graph.test_id));
    crate::fsutil::atomic_write(&path, &canonical::to_bytes(graph))?;
    Ok(path)
}
