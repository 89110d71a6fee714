use saapde_core::experiments::{run_mesh_experiment, ExperimentConfig};

fn main() {
    // Supplementary evidence: the mesh-independence claim in the regime
    // where the random fields are resolved (n >= 16).
    let mut cfg = ExperimentConfig::desk_mesh();
    cfg.mesh_grid = vec![16, 32, 64];
    cfg.record_walltime = false;
    let out = run_mesh_experiment(&cfg).unwrap();
    println!("means: {:?}", out.means);
    if let Some(fit) = out.fit {
        println!("slope: {:.4}", fit.slope);
    }
    let lo = out.means.iter().map(|&(_, m)| m).fold(f64::INFINITY, f64::min);
    let hi = out.means.iter().map(|&(_, m)| m).fold(0.0f64, f64::max);
    println!("ratio: {:.4}", hi / lo);
    println!("failures: {}", out.rows.iter().filter(|r| r.status != "ok").count());
}
