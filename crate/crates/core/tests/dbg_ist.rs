use pobounds::bp::LossP;
use pobounds::datagen::{ConfoundRule, DgpSpec};
use pobounds::evaluation::{benchmark, BenchmarkConfig, MethodSpec};
use pobounds::kernels::KernelKind;

#[test]
fn dbg_ist_metrics() {
    let config = BenchmarkConfig {
        dgp: DgpSpec::IstLike { n: 3000, seed: 0 },
        confound: Some(ConfoundRule::ist_default()),
        n_test: 3000,
        seeds: (0..5).collect(),
        levels: vec![0.01],
        kernel_kind: KernelKind::Linear,
        alphas: vec![1e-2],
        betas: vec![0.005],
        gamma_multipliers: (0..=30).map(|i| i as f64 * 0.1).collect(),
        anchor_cap: 4,
        solver_tolerance: 1e-4,
        solver_max_iter: 60_000,
        methods: vec![
            MethodSpec::Bp { loss_p: LossP::L1, coupled: false },
            MethodSpec::Bp { loss_p: LossP::L2, coupled: false },
            MethodSpec::Bp { loss_p: LossP::Linf, coupled: false },
            MethodSpec::KrConformal,
        ],
        ..BenchmarkConfig::default()
    };
    let report = benchmark(&config).unwrap();
    let summary = report.summary();
    let mut keys: Vec<_> = summary.keys().collect();
    keys.sort();
    for k in keys {
        if k.ends_with("|achieved_fcr") || k.ends_with("|mean_iw") || k.ends_with("|max_iw") {
            let s = &summary[k];
            println!("{k}: mean {:.4} sd {:.4}", s.mean, s.sd);
        }
    }
}
