use std::path::Path;

use npprompt::config::RunConfig;
use npprompt::eval::EvalMetric;
use npprompt::prompting::parse_template;
use npprompt::verbalizer::KeywordResolution;

const EXPECTED: [(&str, usize, usize, EvalMetric); 13] = [
    ("ag_news", 12, 4, EvalMetric::Accuracy),
    ("dbpedia", 7, 14, EvalMetric::Accuracy),
    ("imdb", 500, 2, EvalMetric::Accuracy),
    ("amazon", 170, 2, EvalMetric::Accuracy),
    ("sst2", 9, 2, EvalMetric::Accuracy),
    ("mnli", 4, 3, EvalMetric::Accuracy),
    ("mnli_mm", 4, 3, EvalMetric::Accuracy),
    ("qnli", 3, 2, EvalMetric::Accuracy),
    ("rte", 10, 2, EvalMetric::Accuracy),
    ("mrpc", 9, 2, EvalMetric::F1Binary),
    ("qqp", 9, 2, EvalMetric::F1Binary),
    ("cola", 7, 2, EvalMetric::Matthews),
    ("cqa", 15, 0, EvalMetric::Accuracy),
];

#[test]
fn presets_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for (name, k, n_classes, metric) in EXPECTED {
        let cfg = RunConfig::load(dir.join(format!("{name}.json"))).unwrap();
        assert_eq!(cfg.k, k, "{name}");
        assert_eq!(cfg.classes.len(), n_classes, "{name}");
        assert_eq!(cfg.eval_metric, metric, "{name}");
        assert_eq!(cfg.keyword_resolution, KeywordResolution::LeadingSpaceFirst);
        parse_template(cfg.template.as_deref().unwrap()).unwrap();
        for class in &cfg.classes {
            class.validate().unwrap();
        }
    }
}

#[test]
fn dbpedia_natural_place_has_three_keywords() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/dbpedia.json");
    let cfg = RunConfig::load(path).unwrap();
    assert_eq!(cfg.classes[7].keywords, ["river", "lake", "mountain"]);
    assert!(parse_template(cfg.template.as_deref().unwrap()).unwrap().is_pair());
}
