#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random circuit text: `nq` qubits, the first `nio` of them I/O, `n` instructions.
pub fn random_circuit(rng: &mut ChaCha8Rng, nq: usize, nio: usize, n: usize) -> String {
    let mut s = String::new();
    for q in 0..nq {
        s += &format!("QUBIT q{q}, 0{}\n", if q < nio { " io" } else { "" });
    }
    for _ in 0..n {
        if nq > 1 && rng.random_bool(0.5) {
            let a = rng.random_range(0..nq);
            let mut b = rng.random_range(0..nq);
            while b == a {
                b = rng.random_range(0..nq);
            }
            s += &format!("CNOT q{a}, q{b}\n");
        } else {
            let ops = ["H", "X", "T", "Tdag"];
            s += &format!("{} q{}\n", ops[rng.random_range(0..4)], rng.random_range(0..nq));
        }
    }
    s
}

pub fn samples_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

pub fn sample(name: &str) -> String {
    std::fs::read_to_string(samples_dir().join(name)).unwrap()
}

/// Every `.qasm` file under `samples/`, by relative name.
pub fn sample_corpus() -> Vec<(String, String)> {
    let mut out = Vec::new();
    for sub in ["", "ops"] {
        let dir = samples_dir().join(sub);
        let mut names: Vec<_> = std::fs::read_dir(&dir)
            .unwrap()
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "qasm"))
            .collect();
        names.sort();
        for p in names {
            let name = p.strip_prefix(samples_dir()).unwrap().display().to_string();
            out.push((name, std::fs::read_to_string(&p).unwrap()));
        }
    }
    out
}
