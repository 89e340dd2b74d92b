use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use owrlab::datagen::{build_schedule, generate_benchmark, BenchmarkParams, Dataset, EpisodeSchedule, ImageShape, Sample};
use owrlab::dg::{DgConfig, DgMethod, DgPlugin, MAX_CHAIN};
use owrlab::eval::{run_experiment, split_domain, train_model, validate_hyperparameters, RunSpec, SearchGrid};
use owrlab::owr::{MethodConfig, OwrModel, Variant};
use owrlab::Error;

fn small_data() -> Dataset {
    generate_benchmark(&BenchmarkParams {
        num_classes: 8,
        instances_per_class: 3,
        samples_per_instance: 4,
        shape: ImageShape::new(8, 8, 3),
        seed: 5,
    })
    .unwrap()
}

fn small_method(variant: Variant) -> MethodConfig {
    MethodConfig {
        epochs_base: 3,
        epochs_incremental: 2,
        tau_epochs: 10,
        hidden: vec![24],
        feature_dim: 8,
        ..MethodConfig::new(variant)
    }
}

fn schedule(seed: u64) -> EpisodeSchedule {
    let classes: Vec<u32> = (0..8).collect();
    build_schedule(&classes, 0.75, 2, 2, seed).unwrap()
}

fn train_split(ds: &Dataset) -> Vec<Sample> {
    split_domain(ds).train
}

#[test]
fn same_seed_gives_identical_weights() {
    let ds = small_data();
    let train = train_split(&ds);
    for v in Variant::ALL {
        for dg in [DgMethod::None, DgMethod::Sc, DgMethod::Rr, DgMethod::Rsda] {
            let cfg = DgConfig::with_method(dg);
            let (a, pa) = train_model(&small_method(v), &cfg, &schedule(1), &train, ds.shape(), 9).unwrap();
            let (b, pb) = train_model(&small_method(v), &cfg, &schedule(1), &train, ds.shape(), 9).unwrap();
            assert_eq!(a, b, "{v} with {dg:?}");
            assert_eq!(pa, pb);
        }
    }
}

#[test]
fn neutral_plugins_match_the_plain_method() {
    let ds = small_data();
    let train = train_split(&ds);
    let mut neutral = Vec::new();
    let mut rsda = DgConfig::with_method(DgMethod::Rsda);
    rsda.rsda.update_frequency = 0;
    neutral.push(rsda);
    let mut rr = DgConfig::with_method(DgMethod::Rr);
    rr.rr.xi = 0.0;
    neutral.push(rr);
    let mut sc = DgConfig::with_method(DgMethod::Sc);
    sc.sc.batch_ratio = 0.0;
    neutral.push(sc);
    for v in Variant::ALL {
        let (plain, _) = train_model(&small_method(v), &DgConfig::none(), &schedule(2), &train, ds.shape(), 4).unwrap();
        for cfg in &neutral {
            let (m, _) = train_model(&small_method(v), cfg, &schedule(2), &train, ds.shape(), 4).unwrap();
            assert_eq!(m.extractor, plain.extractor, "{v} with {:?}", cfg.method);
            assert_eq!(m.classes, plain.classes, "{v} with {:?}", cfg.method);
        }
    }
}

#[test]
fn known_set_grows_by_disjoint_steps() {
    let ds = small_data();
    let train = train_split(&ds);
    let s = schedule(3);
    for v in Variant::ALL {
        let mut model = OwrModel::new(small_method(v), ds.shape(), 3).unwrap();
        let mut expected = BTreeSet::new();
        for classes in s.steps() {
            let step: Vec<Sample> = train.iter().filter(|x| classes.contains(&x.class_id)).cloned().collect();
            model.incremental_step(classes, &step, None).unwrap();
            expected.extend(classes.iter().copied());
            assert_eq!(model.known, expected);
            let centroid_keys: BTreeSet<u32> = model.classes.centroids.keys().copied().collect();
            assert_eq!(centroid_keys, expected);
        }
        let again: Vec<Sample> = train.iter().filter(|x| x.class_id == s.base_classes[0]).cloned().collect();
        assert!(matches!(
            model.incremental_step(&s.base_classes[..1], &again, None),
            Err(Error::Contract(_))
        ));
    }
}

fn exemplar_drift(lambda: f64) -> f64 {
    let ds = small_data();
    let train = train_split(&ds);
    let s = schedule(6);
    let cfg = MethodConfig {
        lambda,
        epochs_incremental: 6,
        ..small_method(Variant::DeepNno)
    };
    let mut model = OwrModel::new(cfg, ds.shape(), 6).unwrap();
    let base: Vec<Sample> = train.iter().filter(|x| s.base_classes.contains(&x.class_id)).cloned().collect();
    model.incremental_step(&s.base_classes, &base, None).unwrap();
    let exemplars: Vec<Sample> = model.memory.samples().cloned().collect();
    let before = model.features(&exemplars).unwrap();
    let next = &s.incremental_steps[0];
    let step: Vec<Sample> = train.iter().filter(|x| next.contains(&x.class_id)).cloned().collect();
    model.incremental_step(next, &step, None).unwrap();
    let after = model.features(&exemplars).unwrap();
    let d = model.feature_dim();
    let total: f64 = before
        .chunks(d)
        .zip(after.chunks(d))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .sum();
    total / exemplars.len() as f64
}

#[test]
fn distillation_anchors_old_features() {
    let free = exemplar_drift(0.0);
    let anchored = exemplar_drift(50.0);
    assert!(anchored < free, "drift with distillation {anchored} vs without {free}");
}

#[test]
fn rsda_pool_only_grows_with_valid_chains() {
    let ds = small_data();
    let train = train_split(&ds);
    let s = schedule(8);
    let mut cfg = DgConfig::with_method(DgMethod::Rsda);
    cfg.rsda.update_frequency = 2;
    let method = small_method(Variant::Bdoc);
    let mut model = OwrModel::new(method, ds.shape(), 8).unwrap();
    let mut plugin = DgPlugin::new(cfg, model.feature_dim(), 8).unwrap();
    let mut sizes = vec![plugin.pool.transforms.len()];
    for classes in s.steps() {
        let step: Vec<Sample> = train.iter().filter(|x| classes.contains(&x.class_id)).cloned().collect();
        model.incremental_step(classes, &step, Some(&mut plugin)).unwrap();
        sizes.push(plugin.pool.transforms.len());
        for t in &plugin.pool.transforms {
            assert!(t.chain.len() <= MAX_CHAIN);
            t.validate().unwrap();
        }
    }
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]), "{sizes:?}");
    assert!(sizes.last() > sizes.first(), "{sizes:?}");
}

#[test]
fn validation_keeps_stage_one_choices() {
    let ds = small_data();
    let train = Dataset::from_samples(ds.shape(), train_split(&ds)).unwrap();
    let grid = SearchGrid {
        lr: vec![0.02, 0.05],
        weight_decay: vec![0.0],
        lambda: vec![0.5, 2.0],
        gamma: vec![0.5],
        tau_grid_points: vec![0, 4],
        neg_weight: vec![1.0, 3.0],
        tau_lr: vec![0.5, 1.0],
    };
    let classes: Vec<u32> = (0..8).collect();
    for v in Variant::ALL {
        let r = validate_hyperparameters(&small_method(v), &train, &classes, &grid, 1, 2).unwrap();
        assert_eq!(r.stage1.len(), 4);
        let best1 = r
            .stage1
            .iter()
            .fold(&r.stage1[0], |b, c| if c.score > b.score { c } else { b });
        let (a, b) = (&r.best, &best1.config);
        assert_eq!((a.lr, a.weight_decay, a.lambda, a.gamma), (b.lr, b.weight_decay, b.lambda, b.gamma));
        for c in &r.stage2 {
            assert_eq!((c.config.lr, c.config.lambda), (b.lr, b.lambda));
        }
    }
}

fn run_spec(seed: u64) -> (RunSpec, BTreeMap<u32, Dataset>) {
    let ds = small_data();
    let spec = RunSpec {
        method: small_method(Variant::Bdoc),
        dg: DgConfig::with_method(DgMethod::Rr),
        train_domain: 0,
        test_domains: vec![0],
        seed,
    };
    (spec, BTreeMap::from([(0, ds)]))
}

#[test]
fn interrupted_runs_resume_to_the_same_results() {
    let (spec, domains) = run_spec(11);
    let s = schedule(11);
    let full = run_experiment(&spec, &s, &domains, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    run_experiment(&spec, &s, &domains, Some(dir.path())).unwrap();
    // drop everything after the first step, as if the run had died there
    for entry in fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if !name.starts_with("step_0.") {
            fs::remove_file(path).unwrap();
        }
    }
    let resumed = run_experiment(&spec, &s, &domains, Some(dir.path())).unwrap();
    assert_eq!(resumed.results, full.results);
    assert_eq!(resumed.transform_pool, full.transform_pool);
}

#[test]
fn checkpoints_of_another_configuration_are_refused() {
    let (spec, domains) = run_spec(12);
    let s = schedule(12);
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&spec, &s, &domains, Some(dir.path())).unwrap();
    fs::remove_file(dir.path().join(format!("step_{}.json", s.num_steps() - 1))).unwrap();
    let other = RunSpec {
        method: MethodConfig {
            lr: 0.01,
            ..spec.method.clone()
        },
        ..spec
    };
    match run_experiment(&other, &s, &domains, Some(dir.path())) {
        Err(Error::Config(msg)) => assert!(msg.contains("different run configuration"), "{msg}"),
        other => panic!("expected a configuration error, got {other:?}"),
    }
}
