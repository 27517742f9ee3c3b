use std::time::Instant;
use vascreg_core::affinity::{build_affinity, AffinityConfig, AffinityWeights};
use vascreg_core::synth::{build_gvg, deform, generate_tree, TreeSpec};

fn main() {
    let tree = generate_tree(&TreeSpec::new(1)).unwrap();
    let gvg = build_gvg(&tree, 35.0).unwrap();
    let warped = deform(&gvg, 0.3, 7).unwrap();
    println!("edges: {} vs {}", gvg.edge_count(), warped.edge_count());
    for samples in [50usize, 16] {
        let cfg = AffinityConfig { path_samples: samples, ..Default::default() };
        let t0 = Instant::now();
        let f = build_affinity(&gvg, &warped, &AffinityWeights::default(), &cfg, None).unwrap();
        let build = t0.elapsed();
        let x = nalgebra::DMatrix::from_element(f.dims().0, f.dims().1, 1.0 / 80.0);
        let t1 = Instant::now();
        let mut acc = 0.0;
        for _ in 0..20 { acc += f.k_matvec(&x)[(0, 0)]; }
        let mv = t1.elapsed() / 20;
        println!("samples {samples}: build {:?}, matvec {:?} (acc {acc:.3})", build, mv);
    }
}
