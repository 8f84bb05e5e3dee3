use escape_bench_core::harness::fixtures::{escape_double_well, hetero_quad_k8};

fn main() {
    let quad = hetero_quad_k8();
    std::fs::write(
        "configs/hetero-quad-k8.json",
        serde_json::to_string_pretty(&quad).unwrap() + "\n",
    )
    .unwrap();
    let escape = escape_double_well(0.15, 8, 512);
    std::fs::write(
        "configs/escape-double-well.json",
        serde_json::to_string_pretty(&escape).unwrap() + "\n",
    )
    .unwrap();
}
