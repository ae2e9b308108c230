use certun_core::accountant::PrivacyBudget;
use certun_core::data::{load_idx, synth_blobs, write_idx, Dataset};
use certun_core::experiment::{
    default_mnist_dir, load_mnist_subset, output_perturbation_schedule, DeskExperiment,
    DeskOptions, GradientClippingPlan,
};
use certun_core::method::Method;
use certun_core::nn::NetworkSpec;
use certun_core::unlearn::{NoisyAccounting, RunTrace};

fn experiment(data: &Dataset) -> DeskExperiment {
    let spec = NetworkSpec::mlp(data.feature_shape().to_vec(), 16, data.num_classes()).unwrap();
    let opts = DeskOptions {
        test_size: 100,
        pretrain_epochs: 3,
        batch_size: 32,
        peak_lr: 0.1,
        ..DeskOptions::default()
    };
    DeskExperiment::prepare_with_spec(data, spec, opts).unwrap()
}

fn gradient_clipping(exp: &DeskExperiment, budget: usize, seed: u64) -> RunTrace {
    let plan = GradientClippingPlan {
        steps: 3,
        gamma: 0.01,
        lambda: 0.0,
        c0: 1.0,
        c1: 1.0,
    };
    let sched = plan.schedule(&PrivacyBudget::default()).unwrap();
    let cfg = exp.pipeline_config(
        Method::GradientClipping,
        Some(sched),
        budget,
        seed,
        NoisyAccounting::Steps,
    );
    exp.run(&cfg).unwrap()
}

#[test]
fn every_method_unlearns_without_touching_the_forget_set() {
    let data = synth_blobs(600, 12, 4, 0.3, 5).unwrap();
    let exp = experiment(&data);
    let budget = PrivacyBudget::default();
    let runs = [
        (Method::Retrain, None),
        (Method::FinetuneOnly, None),
        (
            Method::OutputPerturbation,
            Some(output_perturbation_schedule(&budget, 0.5).unwrap()),
        ),
    ];
    for (method, sched) in runs {
        let trace = exp
            .run(&exp.pipeline_config(method, sched, 2, 0, NoisyAccounting::Steps))
            .unwrap();
        assert_eq!(trace.method, method);
        assert_eq!(trace.epochs.len(), 2, "{method}");
        let acc = trace.final_test_accuracy().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    let gc = gradient_clipping(&exp, 2, 0);
    assert_eq!(gc.noisy_steps(), 3);
    let tag = gc.certified.unwrap();
    assert_eq!((tag.epsilon, tag.delta), (budget.epsilon, budget.delta));
    assert_eq!(exp.forget_reads(), 0);
}

#[test]
fn runs_are_reproducible_per_seed() {
    let data = synth_blobs(400, 8, 3, 0.4, 9).unwrap();
    let exp = experiment(&data);
    let a = gradient_clipping(&exp, 1, 4);
    let b = gradient_clipping(&exp, 1, 4);
    let c = gradient_clipping(&exp, 1, 5);
    assert_eq!(a, b);
    assert_ne!(a.steps[0].loss, c.steps[0].loss);
}

#[test]
fn bundled_subset_loads_and_round_trips() {
    let data = load_mnist_subset(default_mnist_dir()).unwrap();
    assert_eq!(data.len(), 5000);
    assert_eq!(data.num_classes(), 10);
    assert_eq!(data.feature_shape(), &[1, 28, 28]);

    let first: Vec<usize> = (0..64).collect();
    let part = data.subset(&first, "part").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = (dir.path().join("images.gz"), dir.path().join("labels.gz"));
    write_idx(&part, &images, &labels).unwrap();
    let back = load_idx(&images, &labels).unwrap();
    assert_eq!(back.labels(), part.labels());
    assert_eq!(back.features(), part.features());
}
