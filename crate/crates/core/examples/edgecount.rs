use vascreg_core::synth::{generate_tree, build_gvg, TreeSpec};
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let step: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(12.0);
    let spread: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let mut total = 0usize;
    for seed in 1..=10u64 {
        let mut spec = TreeSpec::new(seed);
        spec.branch_step = step;
        spec.branch_angle_spread = spread;
        let tree = generate_tree(&spec).unwrap();
        let gvg = build_gvg(&tree, 35.0).unwrap();
        total += gvg.edge_count();
        if seed <= 3 {
            let bb = gvg.node_bbox().unwrap();
            println!("seed {seed}: edges {} diag {:.1}", gvg.edge_count(), bb.diagonal());
        }
    }
    println!("step {step} spread {spread}: mean edges {}", total / 10);
}
