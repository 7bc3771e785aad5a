//! The gradient-check suite: every differentiable op over a set of random
//! shape cases, checked against central differences.

use rand::Rng;

use super::gradcheck::grad_check_with_reference;
use super::{grad_check, ConvParams, Element, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::train::loss::LossConfig;

pub const OPS: &[&str] = &[
    "conv2d",
    "relu",
    "leaky_relu",
    "sigmoid",
    "mul",
    "add",
    "concat",
    "upsample",
    "bilinear_sample",
    "deform_conv2d",
    "mu_law",
    "l1_loss",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub op: &'static str,
    pub case: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Step sizes by how the op depends on each individual input element.
#[derive(Clone, Copy, Debug)]
pub struct StepSizes {
    /// Smooth nonlinear ops (sigmoid, μ-law).
    pub smooth: f64,
    /// Piecewise-linear ops whose test inputs stay at least 0.05 away from
    /// every kink (relu, bilinear sampling, deformable conv, L1).
    pub piecewise: f64,
    /// Ops linear in each input (conv, products, sums, upsampling).
    pub linear: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteConfig {
    pub cases: usize,
    pub steps: StepSizes,
    pub tolerance: f64,
    pub seed: u64,
}

impl SuiteConfig {
    pub fn double() -> Self {
        SuiteConfig {
            cases: 20,
            steps: StepSizes {
                smooth: 1e-5,
                piecewise: 1e-5,
                linear: 1e-5,
            },
            tolerance: 1e-6,
            seed: 2021,
        }
    }

    /// Single-precision backward passes, checked against an `f64`
    /// central-difference reference.
    pub fn single() -> Self {
        SuiteConfig {
            tolerance: 1e-4,
            ..Self::double()
        }
    }

    pub fn step_for(&self, op: &str) -> f64 {
        match op {
            "sigmoid" | "mu_law" | "concat" => self.steps.smooth,
            "relu" | "leaky_relu" | "bilinear_sample" | "deform_conv2d" | "l1_loss" => {
                self.steps.piecewise
            }
            _ => self.steps.linear,
        }
    }
}

pub fn resolve_op(name: &str) -> Result<&'static str> {
    OPS.iter()
        .copied()
        .find(|&o| o == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown op {name:?}")))
}

/// Value in `[lo, hi)` with a random sign.
fn signed<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let v = rng.random_range(lo..hi);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

fn dims<R: Rng>(rng: &mut R) -> [usize; 4] {
    [
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(2..=5),
        rng.random_range(2..=5),
    ]
}

fn fmt_dims(d: [usize; 4]) -> String {
    format!("{}x{}x{}x{}", d[0], d[1], d[2], d[3])
}

fn conv_case<R: Rng>(rng: &mut R) -> ([usize; 4], [usize; 4], ConvParams) {
    loop {
        let k = rng.random_range(1..=3);
        let p = ConvParams::new(
            rng.random_range(1..=2),
            rng.random_range(0..=2),
            rng.random_range(1..=2),
        );
        let input = [
            rng.random_range(1..=2),
            rng.random_range(1..=3),
            rng.random_range(3..=6),
            rng.random_range(3..=6),
        ];
        let weight = [rng.random_range(1..=3), input[1], k, k];
        let span = p.dilation * (k - 1) + 1;
        if input[2] + 2 * p.padding >= span && input[3] + 2 * p.padding >= span {
            return (input, weight, p);
        }
    }
}

type CaseOp<T> = Box<dyn Fn(&mut Graph<T>, &[Var]) -> Result<Var>>;

/// Builds the inputs, the op closure and a label for one random case.
fn build_case<T: Element, R: Rng>(
    op: &'static str,
    rng: &mut R,
) -> (Vec<Tensor<T>>, CaseOp<T>, String) {
    match op {
        "conv2d" => {
            let (xi, wi, p) = conv_case(rng);
            let x = Tensor::uniform(xi, -1.0, 1.0, rng);
            let w = Tensor::uniform(wi, -1.0, 1.0, rng);
            let b = Tensor::uniform([1, wi[0], 1, 1], -1.0, 1.0, rng);
            let label = format!("in {} w {} {:?}", fmt_dims(xi), fmt_dims(wi), p);
            (
                vec![x, w, b],
                Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), p)),
                label,
            )
        }
        "relu" | "leaky_relu" | "sigmoid" => {
            let d = dims(rng);
            let x = Tensor::from_fn(d, |_| T::from_f64(signed(rng, 0.05, 2.0)));
            let label = fmt_dims(d);
            let f: CaseOp<T> = match op {
                "relu" => Box::new(|g, v| Ok(g.relu(v[0]))),
                "leaky_relu" => Box::new(|g, v| Ok(g.leaky_relu(v[0], 0.1))),
                _ => Box::new(|g, v| Ok(g.sigmoid(v[0]))),
            };
            (vec![x], f, label)
        }
        "mul" | "add" => {
            let d = dims(rng);
            let a = Tensor::uniform(d, -1.0, 1.0, rng);
            let b = Tensor::uniform(d, -1.0, 1.0, rng);
            let f: CaseOp<T> = if op == "mul" {
                Box::new(|g, v| g.mul(v[0], v[1]))
            } else {
                Box::new(|g, v| g.add(v[0], v[1]))
            };
            (vec![a, b], f, fmt_dims(d))
        }
        "concat" => {
            let d = dims(rng);
            let parts = rng.random_range(2..=3);
            let inputs: Vec<Tensor<T>> = (0..parts)
                .map(|_| {
                    let c = rng.random_range(1..=3);
                    Tensor::uniform([d[0], c, d[2], d[3]], -1.0, 1.0, rng)
                })
                .collect();
            let label = inputs
                .iter()
                .map(|t| t.shape().to_string())
                .collect::<Vec<_>>()
                .join(" + ");
            // A nonlinearity after the concat makes the check sensitive to
            // which part each gradient slice is routed to.
            (
                inputs,
                Box::new(|g, v| {
                    let c = g.concat(v)?;
                    Ok(g.sigmoid(c))
                }),
                label,
            )
        }
        "upsample" => {
            let d = dims(rng);
            let scale = rng.random_range(1..=3);
            let x = Tensor::uniform(d, -1.0, 1.0, rng);
            (
                vec![x],
                Box::new(move |g, v| g.upsample_bilinear(v[0], scale)),
                format!("{} x{scale}", fmt_dims(d)),
            )
        }
        "bilinear_sample" => {
            let d = dims(rng);
            let (oh, ow) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let x = Tensor::uniform(d, -1.0, 1.0, rng);
            // integer part spans slightly beyond the border; fractional part
            // stays clear of the interpolation kinks
            let coords = Tensor::from_fn([d[0], 2, oh, ow], |[_, c, _, _]| {
                let extent = if c == 0 { d[2] } else { d[3] } as i64;
                let base = rng.random_range(-2..=extent) as f64;
                T::from_f64(base + rng.random_range(0.1..0.9))
            });
            (
                vec![x, coords],
                Box::new(|g, v| g.bilinear_sample(v[0], v[1])),
                format!("{} -> {oh}x{ow}", fmt_dims(d)),
            )
        }
        "deform_conv2d" => {
            let (xi, wi, p) = conv_case(rng);
            let oh = super::conv_output_size(xi[2], wi[2], p).expect("valid case");
            let ow = super::conv_output_size(xi[3], wi[3], p).expect("valid case");
            let taps = wi[2] * wi[3];
            let x = Tensor::uniform(xi, -1.0, 1.0, rng);
            let offsets = Tensor::from_fn([xi[0], 2 * taps, oh, ow], |_| {
                let whole = rng.random_range(-2..=1) as f64;
                T::from_f64(whole + rng.random_range(0.1..0.9))
            });
            let mask = Tensor::uniform([xi[0], taps, oh, ow], 0.05, 1.0, rng);
            let w = Tensor::uniform(wi, -1.0, 1.0, rng);
            let b = Tensor::uniform([1, wi[0], 1, 1], -1.0, 1.0, rng);
            let label = format!("in {} w {} {:?}", fmt_dims(xi), fmt_dims(wi), p);
            (
                vec![x, offsets, mask, w, b],
                Box::new(move |g, v| g.deform_conv2d(v[0], v[1], v[2], v[3], Some(v[4]), p)),
                label,
            )
        }
        "mu_law" => {
            let d = dims(rng);
            let x = Tensor::uniform(d, 0.05, 1.0, rng);
            let cfg = LossConfig::default();
            (
                vec![x],
                Box::new(move |g, v| Ok(g.mu_law(v[0], cfg.mu, cfg.denom()))),
                fmt_dims(d),
            )
        }
        "l1_loss" => {
            let d = dims(rng);
            let pred = Tensor::uniform(d, 0.0, 1.0, rng);
            let target = pred.map(|p| p + T::from_f64(signed(rng, 0.05, 0.5)));
            (
                vec![pred, target],
                Box::new(|g, v| g.l1_mean(v[0], v[1])),
                fmt_dims(d),
            )
        }
        other => unreachable!("op list and builder out of sync: {other}"),
    }
}

/// Runs `cfg.cases` random cases of one op.
pub fn check_op<T: Element>(op: &'static str, cfg: &SuiteConfig) -> Result<Vec<CaseResult>> {
    let op_index = OPS.iter().position(|&o| o == op).expect("known op") as u64;
    let mut results = Vec::with_capacity(cfg.cases);
    for case in 0..cfg.cases {
        let seed = [op_index, case as u64];
        let (inputs, f, label) = build_case::<T, _>(op, &mut stream(cfg.seed, &seed));
        let report = if T::NAME == "f64" {
            grad_check(f, &inputs, cfg.step_for(op))?
        } else {
            let (_, reference, _) = build_case::<f64, _>(op, &mut stream(cfg.seed, &seed));
            grad_check_with_reference(f, reference, &inputs, cfg.step_for(op))?
        };
        results.push(CaseResult {
            op,
            case: label,
            max_rel_error: report.max_rel_error,
            passed: report.max_rel_error < cfg.tolerance,
        });
    }
    Ok(results)
}

pub fn check_all<T: Element>(cfg: &SuiteConfig) -> Result<Vec<CaseResult>> {
    let mut all = Vec::new();
    for &op in OPS {
        all.extend(check_op::<T>(op, cfg)?);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_op_rejected() {
        assert!(resolve_op("softmax").is_err());
        assert_eq!(resolve_op("conv2d").unwrap(), "conv2d");
    }

    #[test]
    fn single_precision_suite_within_tolerance() {
        let results = check_all::<f32>(&SuiteConfig::single()).unwrap();
        assert_eq!(results.len(), OPS.len() * 20);
        let failures: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert!(failures.is_empty(), "{failures:#?}");
    }

    #[test]
    fn double_precision_suite_within_tolerance() {
        let results = check_all::<f64>(&SuiteConfig::double()).unwrap();
        let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        let failures: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert!(failures.is_empty(), "worst {worst}: {failures:#?}");
    }
}
