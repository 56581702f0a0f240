//! Self-check suites run by `hetpart verify`.

use std::str::FromStr;

use hetpart_core::graph::cartpole_network;
use hetpart_core::numerics::{bf16_to_f32, f16_to_f32, f32_to_bf16, f32_to_f16, Bf16Value, Fp16Value};
use hetpart_core::partition::{brute_force_optimum, partition, RandomInstance};
use hetpart_core::train::gradcheck::{grad_check, random_mlp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::CliError;

pub const VERIFY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    SmallIlp,
    Formats,
    Gradients,
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "small-ilp" => Ok(Suite::SmallIlp),
            "formats" => Ok(Suite::Formats),
            "gradients" => Ok(Suite::Gradients),
            other => Err(CliError::Input(format!(
                "unknown suite {other:?} (expected small-ilp, formats or gradients)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyResult {
    pub schema_version: u32,
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn check(name: &str, failures: Vec<String>, ok_detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            ok_detail
        } else {
            let shown: Vec<_> = failures.iter().take(5).cloned().collect();
            format!("{} failures, first: {}", failures.len(), shown.join("; "))
        },
    }
}

fn small_ilp() -> Vec<Check> {
    let mut failures = Vec::new();
    for seed in 0..200 {
        let inst = RandomInstance::generate(seed, 12);
        let solved = partition(&inst.graph, &inst.cost, &inst.capacities);
        let brute = brute_force_optimum(&inst.graph, &inst.cost, &inst.capacities);
        match (solved, brute) {
            (Ok(s), Ok((_, t))) if s.makespan_s == t => {}
            (Ok(s), Ok((_, t))) => failures.push(format!("seed {seed}: {} != {t}", s.makespan_s)),
            (s, b) => failures.push(format!("seed {seed}: {:?} / {:?}", s.err(), b.err())),
        }
    }
    vec![check(
        "solver-matches-enumeration",
        failures,
        "200 random graphs with up to 12 MM nodes".into(),
    )]
}

fn formats() -> Vec<Check> {
    let mut bf = Vec::new();
    let mut fp = Vec::new();
    for bits in 0..=u16::MAX {
        let b = Bf16Value::from_bits(bits);
        let back = f32_to_bf16(bf16_to_f32(b)).to_bits();
        if back != if b.is_nan() { 0x7FC0 } else { bits } {
            bf.push(format!("{bits:#06x} -> {back:#06x}"));
        }
        let h = Fp16Value::from_bits(bits);
        let back = f32_to_f16(f16_to_f32(h)).to_bits();
        if back != if h.is_nan() { 0x7E00 } else { bits } {
            fp.push(format!("{bits:#06x} -> {back:#06x}"));
        }
    }
    let mut edge = Vec::new();
    for b in 65504f32.to_bits()..=65536f32.to_bits() {
        let x = f32::from_bits(b);
        let want = if x < 65520.0 { 0x7BFF } else { 0x7C00 };
        let got = f32_to_f16(x).to_bits();
        if got != want {
            edge.push(format!("{x} -> {got:#06x}"));
        }
    }
    vec![
        check("bf16-round-trip", bf, "65536 patterns".into()),
        check("fp16-round-trip", fp, "65536 patterns".into()),
        check("fp16-overflow-boundary", edge, "65504 finite, 65520 and above infinite".into()),
    ]
}

fn gradients() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..20 {
        let specs = random_mlp(&mut rng);
        let g = grad_check(&specs, 4, 1e-3, 1e-2, &mut rng);
        worst = worst.max(g.max_rel_error);
        if g.max_rel_error > 1e-4 {
            failures.push(format!("net {i}: {:.3e}", g.max_rel_error));
        }
    }
    let random = check("random-mlps", failures, format!("20 nets, max relative error {worst:.3e}"));
    let g = grad_check(&cartpole_network(), 4, 1e-3, 1e-2, &mut rng);
    let failures = if g.max_rel_error > 1e-4 {
        vec![format!("{:.3e}", g.max_rel_error)]
    } else {
        Vec::new()
    };
    let cart = check(
        "cartpole-network",
        failures,
        format!("{} coordinates, max relative error {:.3e}", g.checked, g.max_rel_error),
    );
    vec![random, cart]
}

pub fn run(suite: Suite) -> VerifyResult {
    let checks = match suite {
        Suite::SmallIlp => small_ilp(),
        Suite::Formats => formats(),
        Suite::Gradients => gradients(),
    };
    VerifyResult {
        schema_version: VERIFY_SCHEMA_VERSION,
        suite,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names() {
        assert_eq!("small-ilp".parse::<Suite>().unwrap(), Suite::SmallIlp);
        assert!(matches!("nope".parse::<Suite>(), Err(CliError::Input(_))));
        assert_eq!(serde_json::to_string(&Suite::SmallIlp).unwrap(), "\"small-ilp\"");
    }

    #[test]
    fn formats_suite_passes() {
        assert!(run(Suite::Formats).passed);
    }
}
