#![allow(dead_code)]

use std::path::PathBuf;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
        .join(name)
}

/// `(H, z, F(H-1/2, 1/2-H, H+1/2, z))` rows frozen from an mpmath oracle.
pub fn hyp2f1_oracle() -> Vec<(f64, f64, f64)> {
    let text = std::fs::read_to_string(data_path("hyp2f1_oracle.csv")).unwrap();
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.trim().parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect()
}
