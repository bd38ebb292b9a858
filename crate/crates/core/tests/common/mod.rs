//! Shared helpers for integration tests: fixture loading and backends.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use arena_kit::{BackendError, Env, SimSite, SimSiteDefinition, SiteBackend, TaskInstance, Viewport};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

pub fn load_sites() -> BTreeMap<String, Arc<SimSiteDefinition>> {
    let dir = repo_root().join("sites");
    let mut sites = BTreeMap::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".site.json"))
        .collect();
    paths.sort();
    for path in paths {
        let def =
            SimSiteDefinition::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        sites.insert(def.site_id.clone(), Arc::new(def));
    }
    sites
}

pub fn load_suite() -> Vec<TaskInstance> {
    let tasks = arena_kit::load_tasks(&repo_root().join("tasks")).unwrap();
    arena_kit::validate_tasks(&tasks, &load_sites()).unwrap();
    tasks
}

/// Backend factory closure for the runner: fresh SimSite per task.
#[allow(dead_code)] // not every test target drives the runner
pub fn sim_factory(
    sites: BTreeMap<String, Arc<SimSiteDefinition>>,
) -> impl Fn(&TaskInstance) -> Result<Box<dyn SiteBackend>, BackendError> + Sync {
    move |task: &TaskInstance| {
        let def = sites
            .get(&task.site)
            .ok_or_else(|| BackendError::Config(format!("unknown site {:?}", task.site)))?;
        Ok(Box::new(SimSite::new(def.clone())))
    }
}

pub fn env_at(site: &Arc<SimSiteDefinition>, url: &str) -> Env {
    let backend: Box<dyn SiteBackend> = Box::new(SimSite::new(site.clone()));
    Env::reset(backend, url, Viewport::default()).unwrap()
}

/// Every concrete page of the fixture corpus, as (site_id, url) pairs.
pub fn corpus_pages() -> Vec<(&'static str, &'static str)> {
    vec![
        ("shop", "http://shop.sim/"),
        ("shop", "http://shop.sim/search?q=beach"),
        ("shop", "http://shop.sim/search?q=mouse"),
        ("shop", "http://shop.sim/product/1"),
        ("shop", "http://shop.sim/product/2"),
        ("shop", "http://shop.sim/product/3"),
        ("shop", "http://shop.sim/product/4"),
        ("shop", "http://shop.sim/product/5"),
        ("shop", "http://shop.sim/cart"),
        ("shop", "http://shop.sim/orders"),
        ("shop", "http://shop.sim/order/1001"),
        ("shop", "http://shop.sim/order/1002"),
        ("forum", "http://forum.sim/"),
        ("forum", "http://forum.sim/f/nyc"),
        ("forum", "http://forum.sim/f/pittsburgh"),
        ("forum", "http://forum.sim/f/books"),
        ("forum", "http://forum.sim/f/nyc/submit"),
        ("forum", "http://forum.sim/f/books/submit"),
        ("forum", "http://forum.sim/f/pittsburgh/1"),
        ("forum", "http://forum.sim/f/books/2"),
        ("gitlab", "http://gitlab.sim/"),
        ("gitlab", "http://gitlab.sim/merge_requests"),
        ("gitlab", "http://gitlab.sim/merge_requests?assignee_username=byteblaze"),
    ]
}
