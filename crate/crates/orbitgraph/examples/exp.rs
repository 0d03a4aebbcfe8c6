// Experiment: does a harder regime (larger nt per step) produce rising
// horizon tails that the physics arm stabilizes?
use orbitgraph::eval::evaluate_model;
use orbitgraph::loss::LossConfig;
use orbitgraph::model::ModelConfig;
use orbitgraph::scenario::{generate_dataset, ScenarioConfig};
use orbitgraph::train::{fit, FitOutputs, TrainConfig};

fn main() {
    for dt in [180.0f64, 300.0] {
        let scenario = ScenarioConfig {
            agent_count_range: [3, 3],
            step_count: 40,
            trajectory_count: 20,
            dt,
            seed: 7,
            ..ScenarioConfig::default()
        };
        let dataset = generate_dataset(&scenario, 1).unwrap();
        let model_cfg = ModelConfig::default();
        println!("=== dt {dt} ===");
        for seed in 0..3u64 {
            let mut tails = Vec::new();
            for (label, physics) in [("np", false), ("ph", true)] {
                let mut loss = LossConfig::default();
                if !physics { loss.lambda_phys_start = 0.0; loss.lambda_phys_max = 0.0; }
                let train_cfg = TrainConfig { epochs: 150, seed: seed * 2 + 1, model_seed: seed * 2 + 2, ..TrainConfig::default() };
                let result = fit(&dataset, &model_cfg, &train_cfg, &loss, FitOutputs::default()).unwrap();
                let m = evaluate_model(&result.model, &dataset.test, &loss, label, false).unwrap();
                let c: Vec<String> = m.curve.rmse_km.iter().map(|v| format!("{v:.3}")).collect();
                println!("seed {seed} {label}: [{}] tail2 {:+.4} maxRMSE {:.3}", c.join(", "), m.curve.tail_slope(),
                    m.axis_rmse.iter().map(|r| r.rmse_km).fold(0.0f64, f64::max));
                tails.push(m.curve.tail_slope());
            }
            println!("  -> physics steadier: {}", tails[1] < tails[0]);
        }
    }
}
