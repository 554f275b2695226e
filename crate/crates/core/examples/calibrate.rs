//! Scratch calibration runs for the replication benchmarks.

use lope_core::envs::SyntheticEnvConfig;
use lope_core::estimators::EstimatorKind;
use lope_core::harness::{
    run_evaluation_sweep, run_opl_experiment, run_selection_experiment, LearnerKind, OplConfig,
    SelectionConfig, SweepConfig, SweptParameter,
};

fn main() {
    let r: usize = std::env::args()
        .nth(1)
        .and_then(|v| v.parse().ok())
        .unwrap_or(50);
    let what = std::env::args().nth(2).unwrap_or_else(|| "all".to_string());
    let clf_epochs: usize = std::env::args()
        .nth(3)
        .and_then(|v| v.parse().ok())
        .unwrap_or(500);
    let clf_lr: f64 = std::env::args()
        .nth(4)
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.1);
    let env = SyntheticEnvConfig::default();
    let mut nuisance = lope_core::estimators::NuisanceConfig::default();
    nuisance.classifier.epochs = clf_epochs;
    nuisance.classifier.learning_rate = clf_lr;
    if std::env::var("USE_DS").as_deref() == Ok("1") {
        nuisance.use_short_experiment_for_weights = true;
    }
    if let Ok(l2) = std::env::var("L2") {
        let l2: f64 = l2.parse().unwrap();
        nuisance.q_family = lope_core::models::RegressorKind::Ridge { l2 };
        nuisance.h_family = lope_core::models::RegressorKind::Ridge { l2 };
    }

    if what == "all" || what == "n" {
        let mut cfg = SweepConfig::new(SweptParameter::N, vec![200.0, 500.0, 1000.0]);
        cfg.env = env;
        cfg.replications = r;
        cfg.workers = 0;
        cfg.nuisance = nuisance;
        cfg.seed = 1;
        let t = std::time::Instant::now();
        let report = run_evaluation_sweep(&cfg).unwrap();
        println!("== n sweep (R={r}) in {:.1?} ==", t.elapsed());
        for row in &report.rows {
            println!(
                "{:>5} n={:<6} mse={:<12.5e} bias2={:<12.5e} var={:<12.5e} R={} fail={}",
                row.estimator, row.parameter_value, row.mse, row.squared_bias, row.variance,
                row.n_replications, row.failures
            );
        }
        for n in [200.0, 500.0, 1000.0] {
            let lope = report.row(EstimatorKind::Lope, n).unwrap().mse;
            let dr = report.row(EstimatorKind::Dr, n).unwrap().mse;
            let lci = report.row(EstimatorKind::Lci, n).unwrap().mse;
            let ips = report.row(EstimatorKind::Ips, n).unwrap().mse;
            println!(
                "n={n}: lope/dr={:.3} lope/lci={:.3} lope/ips={:.3}",
                lope / dr,
                lope / lci,
                lope / ips
            );
        }
    }

    if what == "all" || what == "lambda" {
        let mut cfg = SweepConfig::new(SweptParameter::Lambda, vec![0.0, 0.5, 1.0]);
        cfg.env = env;
        cfg.replications = r;
        cfg.workers = 0;
        cfg.nuisance = nuisance;
        cfg.seed = 2;
        let t = std::time::Instant::now();
        let report = run_evaluation_sweep(&cfg).unwrap();
        println!("== lambda sweep (R={r}) in {:.1?} ==", t.elapsed());
        for row in &report.rows {
            println!(
                "{:>5} lambda={:<4} mse={:<12.5e} bias2={:<12.5e} var={:<12.5e}",
                row.estimator, row.parameter_value, row.mse, row.squared_bias, row.variance
            );
        }
        let lci0 = report.row(EstimatorKind::Lci, 0.0).unwrap().squared_bias;
        let lci1 = report.row(EstimatorKind::Lci, 1.0).unwrap().squared_bias;
        let lope1 = report.row(EstimatorKind::Lope, 1.0).unwrap().squared_bias;
        println!(
            "LCI bias2 ratio lambda1/lambda0 = {:.3}; LOPE bias2(1)={:.3e} < LCI bias2(1)={:.3e}: {}",
            lci1 / lci0,
            lope1,
            lci1,
            lope1 < lci1
        );
    }

    if what == "all" || what == "sigma" {
        let mut cfg = SweepConfig::new(SweptParameter::SigmaR, vec![1.0, 9.0]);
        cfg.env = env;
        cfg.replications = r;
        cfg.workers = 0;
        cfg.nuisance = nuisance;
        cfg.seed = 3;
        let t = std::time::Instant::now();
        let report = run_evaluation_sweep(&cfg).unwrap();
        println!("== sigma_r sweep (R={r}) in {:.1?} ==", t.elapsed());
        for row in &report.rows {
            println!(
                "{:>5} sigma_r={:<4} mse={:<12.5e} bias2={:<12.5e} var={:<12.5e}",
                row.estimator, row.parameter_value, row.mse, row.squared_bias, row.variance
            );
        }
        let lope = report.row(EstimatorKind::Lope, 9.0).unwrap().mse;
        let dr = report.row(EstimatorKind::Dr, 9.0).unwrap().mse;
        println!("sigma_r=9: lope/dr = {:.3}", lope / dr);
    }

    if what == "all" || what == "select" {
        let mut cfg = SelectionConfig::new(SweptParameter::SigmaR, vec![1.0, 9.0]);
        cfg.env = env;
        cfg.replications = r;
        cfg.workers = 0;
        cfg.nuisance = nuisance;
        cfg.seed = 4;
        let t = std::time::Instant::now();
        let report = run_selection_experiment(&cfg).unwrap();
        println!("== selection sigma_r (R={r}) in {:.1?} ==", t.elapsed());
        for row in &report.rows {
            println!(
                "{:>5} sigma_r={:<4} accuracy={:.3}",
                row.estimator, row.parameter_value, row.accuracy
            );
        }
        let mut cfg2 = SelectionConfig::new(SweptParameter::Epsilon, vec![0.0, 0.5]);
        cfg2.env = env;
        cfg2.env.sigma_r = 1.0;
        cfg2.replications = r;
        cfg2.workers = 0;
        cfg2.nuisance = nuisance;
        cfg2.seed = 5;
        let report2 = run_selection_experiment(&cfg2).unwrap();
        println!("== selection epsilon (sigma_r=1) ==");
        for row in &report2.rows {
            println!(
                "{:>5} eps={:<4} accuracy={:.3}",
                row.estimator, row.parameter_value, row.accuracy
            );
        }
    }

    if what == "all" || what == "opl" {
        let mut cfg = OplConfig::new(SweptParameter::N, vec![500.0]);
        cfg.env = env;
        cfg.replications = r.min(50);
        cfg.workers = 0;
        cfg.learner.nuisance = nuisance;
        cfg.seed = 6;
        let t = std::time::Instant::now();
        let report = run_opl_experiment(&cfg).unwrap();
        println!("== opl n=500 (R={}) in {:.1?} ==", cfg.replications, t.elapsed());
        for row in &report.rows {
            println!(
                "{:>9} mean_value={:.4} relative={:.3} fail={}",
                row.learner, row.mean_value, row.relative_to_lope_pg, row.failures
            );
        }
        let mut cfg2 = OplConfig::new(SweptParameter::SigmaR, vec![9.0]);
        cfg2.env = env;
        cfg2.replications = r.min(50);
        cfg2.workers = 0;
        cfg2.learner.nuisance = nuisance;
        cfg2.seed = 7;
        let report2 = run_opl_experiment(&cfg2).unwrap();
        println!("== opl sigma_r=9 ==");
        for row in &report2.rows {
            println!(
                "{:>9} mean_value={:.4} relative={:.3} fail={}",
                row.learner, row.mean_value, row.relative_to_lope_pg, row.failures
            );
        }
        let _ = LearnerKind::LopePg;
    }
}
