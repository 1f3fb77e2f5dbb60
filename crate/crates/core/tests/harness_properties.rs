use proptest::prelude::*;
use rain_core::adversary::AttackKind;
use rain_core::config::{ExecMode, ExperimentConfig};
use rain_core::harness::{run_experiment, Experiment};

fn quick(seed: u64, rounds: usize, clients: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::example();
    c.seed = seed;
    c.rounds = rounds;
    c.task.clients = clients;
    c.task.samples_per_client = 60;
    c.task.test_size = 500;
    c
}

#[test]
fn clean_training_converges() {
    let r = run_experiment(ExperimentConfig::example()).unwrap();
    assert!(r.summary.final_accuracy >= 0.9, "{}", r.summary.final_accuracy);
}

#[test]
fn upload_bytes_at_d_128() {
    let mut c = quick(1, 1, 8);
    c.task.classes = 8;
    c.task.d_feat = 15;
    c.task.q = 0.5;
    c.mode = ExecMode::Mpc;
    assert_eq!(c.model_dim(), 128);
    let out = Experiment::new(c).unwrap().step().unwrap();
    assert_eq!(out.metrics.upload_bytes_per_client, Some(2056));
}

#[test]
fn malicious_clients_get_less_trust() {
    let (mut benign, mut malicious) = (0.0, 0.0);
    for seed in 0..50 {
        let mut c = quick(seed, 3, 20);
        c.attack.kind = AttackKind::LabelFlip;
        c.attack.malicious_fraction = 0.3;
        let s = run_experiment(c).unwrap().summary;
        benign += s.mean_alpha_benign.unwrap();
        malicious += s.mean_alpha_malicious.unwrap();
    }
    assert!(malicious < benign, "malicious {malicious} vs benign {benign}");
}

#[test]
fn stronger_noise_does_not_raise_asr() {
    let mean_asr = |eps: f64| {
        (0..20)
            .map(|seed| {
                let mut c = quick(seed, 60, 30);
                c.rain.epsilon = eps;
                c.attack.kind = AttackKind::Scaling;
                c.attack.malicious_fraction = 0.8;
                run_experiment(c).unwrap().summary.final_asr.unwrap()
            })
            .sum::<f64>()
            / 20.0
    };
    let (strong, weak) = (mean_asr(0.5), mean_asr(2.0));
    assert!(strong <= weak, "eps=0.5 ASR {strong} > eps=2 ASR {weak}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn secure_output_matches_plaintext(seed in 0u64..1000, rho in 0.0f64..0.6, kind in 0usize..3) {
        let mut c = quick(seed, 3, 10);
        c.attack.kind = [AttackKind::LabelFlip, AttackKind::Scaling, AttackKind::TrimAttack][kind];
        c.attack.malicious_fraction = rho;
        let mut secure = c.clone();
        secure.mode = ExecMode::Mpc;
        let (mut a, mut b) = (Experiment::new(c).unwrap(), Experiment::new(secure).unwrap());
        for _ in 0..3 {
            let (ra, rb) = (a.step().unwrap(), b.step().unwrap());
            prop_assert_eq!(ra.aggregate, rb.aggregate);
            prop_assert_eq!(rb.metrics.oracle_match, Some(true));
        }
    }
}
