mod common;

use common::check_golden;
use langlab::harness::{export, run_experiment, ExperimentConfig};
use langlab::icl::{build_prompt, QueryMode};
use langlab::langgen::{generate_compositional, synthesize_suite, GeneratorSpec};
use langlab::neuralnet::AgentConfig;

fn header(path: &std::path::Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string() + "\n"
}

#[test]
fn output_field_names_are_stable() {
    let mut c = ExperimentConfig::new(synthesize_suite(&GeneratorSpec::default(), &[0.3, 0.8], 1).unwrap());
    c.agents_per_language = 2;
    c.trainer.rounds = 2;
    c.trainer.agent = AgentConfig::with_dims(8);
    c.analysis.resamples = 100;
    let dir = tempfile::tempdir().unwrap();
    c.out_dir = Some(dir.path().to_path_buf());
    let result = run_experiment(&c).unwrap();

    let value = serde_json::to_value(&result.records[0]).unwrap();
    let mut fields: Vec<String> = value.as_object().unwrap().keys().cloned().collect();
    let production = value["memorization"][0].as_object().unwrap();
    fields.extend(production.keys().map(|k| format!("memorization[].{k}")));
    check_golden("record_fields.txt", &(fields.join("\n") + "\n"));

    check_golden("summary_header.csv", &header(&dir.path().join(export::SUMMARY_FILE)));
    check_golden("plot_header.csv", &header(&dir.path().join(export::PLOT_FILE)));
    check_golden("trends_header.csv", &header(&dir.path().join(export::TRENDS_FILE)));
}

#[test]
fn prompts_match_golden_files() {
    let lang = generate_compositional(&GeneratorSpec::default(), 1).unwrap();
    let mem = build_prompt(&lang, lang.train_scenes()[0], QueryMode::Memorization).unwrap();
    let gen = build_prompt(&lang, lang.test_scenes()[0], QueryMode::Generalization).unwrap();
    check_golden("prompt_memorization.txt", &mem);
    check_golden("prompt_generalization.txt", &gen);
}
