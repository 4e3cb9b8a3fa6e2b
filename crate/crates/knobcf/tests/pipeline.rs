use knobcf::pipeline::{pretrain, simulated_task, PretrainConfig, PretrainOutput, PretrainTask, SimulatedTask};
use knobcf_core::classifier::{finetune, KnobClassifier, TrainingRow, TrainingSet};
use knobcf_core::gmm::assign_label;
use knobcf_core::orchestrator::{labeled_training_set, run_full_eval_baseline, NoClock, TuningParams};
use knobcf_core::sim::{standard_space, GeneratorParams};
use knobcf_core::tuner::RandomTuner;

const WIDTH: usize = 8;
const TAU: f64 = 0.2;

fn task(seed: u64) -> SimulatedTask {
    let params = GeneratorParams {
        seed,
        queries: 4,
        ..GeneratorParams::default()
    };
    simulated_task(&format!("t{seed}"), standard_space(), &params).unwrap()
}

fn config() -> PretrainConfig {
    PretrainConfig {
        width: WIDTH,
        seed: 1,
        ..PretrainConfig::default()
    }
}

fn model_for(task: &SimulatedTask) -> PretrainOutput {
    pretrain(&[task.pretrain_task(150, 1).unwrap()], &config()).unwrap()
}

/// GMM-labeled rows from `rows` fresh LHS configurations of `task`.
fn labeled(task: &SimulatedTask, clf: &KnobClassifier, rows: usize, seed: u64) -> TrainingSet {
    let params = TuningParams {
        task: task.name.clone(),
        iterations: 0,
        init_count: rows,
        seed,
        width: WIDTH,
        m_min: 2,
    };
    let mut tuner = RandomTuner::new(task.space.clone(), seed);
    let out = run_full_eval_baseline(&task.query_ids(), &task.simulator, &mut tuner, params, &NoClock).unwrap();
    labeled_training_set(&out.dataset, &task.space, &clf.embeddings, WIDTH, TAU, seed).unwrap()
}

/// The pretraining rows of `task`, labeled by the mixtures pretraining fitted.
fn pretraining_rows(task: &PretrainTask, out: &PretrainOutput, clf: &KnobClassifier) -> TrainingSet {
    let mut rows = Vec::new();
    for (query, latencies) in &task.samples.latencies {
        let mixture = &out.mixtures[&(task.name.clone(), query.clone())];
        for (config, &latency) in task.samples.configs.iter().zip(latencies) {
            rows.push(TrainingRow {
                embedding: clf.embeddings[query].clone(),
                encoding: out.space.encode(config).unwrap(),
                label: assign_label(mixture, latency, WIDTH, TAU).unwrap(),
            });
        }
    }
    TrainingSet::new(rows)
}

#[test]
fn finetuning_on_the_pretraining_set_keeps_accuracy() {
    let t = task(1);
    let samples = t.pretrain_task(150, 1).unwrap();
    let out = pretrain(std::slice::from_ref(&samples), &config()).unwrap();
    let mut clf = out.classifier_for(&t.workload).unwrap();
    let set = pretraining_rows(&samples, &out, &clf);
    assert_eq!(set.len(), 150 * 4);
    let before = clf.evaluate(&set).unwrap().accuracy;
    finetune(&mut clf.model, &set, &config().classifier, &t.name).unwrap();
    let after = clf.evaluate(&set).unwrap().accuracy;
    assert!(after >= before - 0.02, "accuracy {before} -> {after}");
    assert_eq!(clf.model.provenance.finetune_task.as_deref(), Some(t.name.as_str()));
}

#[test]
fn finetuning_rejects_an_empty_set() {
    let t = task(1);
    let out = model_for(&t);
    let mut clf = out.classifier_for(&t.workload).unwrap();
    assert!(finetune(&mut clf.model, &TrainingSet::new(Vec::new()), &config().classifier, &t.name).is_err());
}

#[test]
fn finetuning_adapts_to_a_shifted_task() {
    let source = task(1);
    let out = model_for(&source);
    // Same plans, different latency behaviour.
    let mut shifted = task(2);
    shifted.workload = source.workload.clone();
    let mut clf = out.classifier_for(&shifted.workload).unwrap();
    let probe = labeled(&shifted, &clf, 80, 11);
    let zero_shot = clf.evaluate(&probe).unwrap().accuracy;
    let recent = labeled(&shifted, &clf, 30, 12);
    finetune(&mut clf.model, &recent, &config().classifier, &shifted.name).unwrap();
    let adapted = clf.evaluate(&probe).unwrap().accuracy;
    if zero_shot < 0.9 {
        assert!(adapted >= zero_shot + 0.02, "accuracy {zero_shot} -> {adapted}");
    } else {
        assert!(adapted >= zero_shot - 0.02, "accuracy {zero_shot} -> {adapted}");
    }
}
