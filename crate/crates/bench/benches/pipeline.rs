//! Benchmarks over the hot paths: HTML parsing, tree derivation/rendering,
//! the action grammar, and a full simulated episode.

use std::path::PathBuf;
use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use arena_kit::{
    derive_axtree, extract_action, parse_action, parse_html, render_axtree, serialize, Action,
    ElementRef, Env, ExtractMode, SimSite, SimSiteDefinition, SiteBackend, Viewport,
};

fn shop() -> Arc<SimSiteDefinition> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../sites/mini-shop.site.json");
    Arc::new(SimSiteDefinition::from_json(&std::fs::read_to_string(path).unwrap()).unwrap())
}

fn shop_home_html() -> String {
    let backend = SimSite::new(shop());
    let mut session = backend.open_session("http://shop.sim/").unwrap();
    session.current_page().unwrap().html
}

fn bench_observation(c: &mut Criterion) {
    let html = shop_home_html();
    c.bench_function("parse_html shop home", |b| {
        b.iter(|| parse_html(black_box(&html), "http://shop.sim/"))
    });
    let snapshot = parse_html(&html, "http://shop.sim/");
    c.bench_function("derive+render axtree", |b| {
        b.iter(|| {
            let tree = derive_axtree(black_box(&snapshot), Viewport { offset: 0, limit: None });
            render_axtree(&tree)
        })
    });
}

fn bench_actions(c: &mut Criterion) {
    let action = Action::Type {
        target: ElementRef::Id(164),
        text: "restaurants near CMU".to_string(),
        press_enter: true,
    };
    c.bench_function("action serialize+parse", |b| {
        b.iter(|| parse_action(&serialize(black_box(&action))).unwrap())
    });
    let completion = "Let's think step-by-step. The search field is focused. \
In summary, the next action I will perform is ```type [164] [restaurants near CMU] [1]```";
    c.bench_function("extract_action cot", |b| {
        b.iter(|| extract_action(black_box(completion), ExtractMode::Cot).unwrap())
    });
}

fn bench_episode(c: &mut Criterion) {
    let def = shop();
    // Search for a product, open it, stop with its price: 4 full env steps
    // including observation re-assembly.
    let steps: Vec<Action> = vec![
        parse_action("type [3] [beach] [1]").unwrap(),
        parse_action("click [4]").unwrap(),
        parse_action("go_back").unwrap(),
        parse_action("stop [$4.00]").unwrap(),
    ];
    c.bench_function("simsite episode (4 steps)", |b| {
        b.iter(|| {
            let backend: Box<dyn SiteBackend> = Box::new(SimSite::new(def.clone()));
            let mut env = Env::reset(backend, "http://shop.sim/", Viewport::default()).unwrap();
            for action in &steps {
                let result = env.step(action.clone(), "```bench```");
                assert!(result.observation.error.is_none());
            }
            env.into_trace()
        })
    });
}

criterion_group!(benches, bench_observation, bench_actions, bench_episode);
criterion_main!(benches);
