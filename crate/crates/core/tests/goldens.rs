//! Golden-file regression tests for rendered observations.
//!
//! Two layers: the initial observation of every fixture task, and the bare
//! accessibility tree of every page in the fixture corpus. Run with
//! `UPDATE_GOLDEN=1` to rewrite the committed files after an intentional
//! rendering change.

mod common;

use std::path::{Path, PathBuf};

use arena_kit::{derive_axtree, render_axtree, Viewport};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn check_golden(path: &Path, actual: &str) -> Result<(), String> {
    if std::env::var("UPDATE_GOLDEN").is_ok() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, actual).unwrap();
        return Ok(());
    }
    let expected = std::fs::read_to_string(path)
        .map_err(|e| format!("missing golden {} ({e}); run with UPDATE_GOLDEN=1", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("golden mismatch for {}", path.display()))
    }
}

fn slug(site: &str, url: &str) -> String {
    let path = url.splitn(4, '/').nth(3).unwrap_or("");
    let mut s = format!("{site}-{path}");
    s = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    while s.ends_with('-') {
        s.pop();
    }
    s
}

/// The initial observation of every fixture task is byte-stable.
#[test]
fn task_initial_observations_match_goldens() {
    let sites = common::load_sites();
    let mut failures = Vec::new();
    for task in common::load_suite() {
        let env = common::env_at(&sites[&task.site], &task.start_url);
        let path = golden_dir().join(format!("{}.obs.txt", task.task_id));
        if let Err(e) = check_golden(&path, &env.observation().text) {
            failures.push(e);
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

/// Every corpus page renders a byte-stable accessibility tree, and ids are
/// exactly 1..N in pre-order before viewport clipping.
#[test]
fn corpus_axtrees_match_goldens_with_dense_ids() {
    let sites = common::load_sites();
    let mut failures = Vec::new();
    for (site, url) in common::corpus_pages() {
        let backend = arena_kit::SimSite::new(sites[site].clone());
        use arena_kit::SiteBackend;
        let mut session = backend.open_session(url).unwrap();
        let page = session.current_page().unwrap();
        let snapshot = arena_kit::parse_html(&page.html, &page.url);
        let tree = derive_axtree(&snapshot, Viewport { offset: 0, limit: None });
        let ids: Vec<u32> = tree.nodes.iter().map(|n| n.id).collect();
        let want: Vec<u32> = (1..=tree.nodes.len() as u32).collect();
        assert_eq!(ids, want, "ids not dense pre-order for {url}");
        assert_eq!(tree.total_nodes, tree.nodes.len(), "total mismatch for {url}");
        let rendered = render_axtree(&tree);
        let path = golden_dir().join(format!("{}.axtree.txt", slug(site, url)));
        if let Err(e) = check_golden(&path, &rendered) {
            failures.push(e);
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
