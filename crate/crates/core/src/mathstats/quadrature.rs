use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// 15-point Kronrod abscissae and weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 0.0,
            max_panels: 4000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
    pub evaluations: usize,
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if fc.is_nan() {
        return Err(Error::Evaluation(format!("integrand is NaN at {center}")));
    }
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        if f1.is_nan() || f2.is_nan() {
            return Err(Error::Evaluation(format!(
                "integrand is NaN near {}",
                if f1.is_nan() { center - dx } else { center + dx }
            )));
        }
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Ok((value, error))
}

/// Globally adaptive Gauss–Kronrod (7/15) integration on a finite interval.
fn integrate_finite<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            converged: true,
            evaluations: 0,
        });
    }
    let (value, error) = gk15(&mut f, a, b)?;
    let mut evaluations = 15;
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value, error });
    let mut total = value;
    let mut total_err = error;
    let target = |v: f64| opts.abs_tol.max(opts.rel_tol * v.abs());

    while total_err > target(total) && heap.len() < opts.max_panels {
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval can no longer be split in floating point.
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid)?;
        let (v2, e2) = gk15(&mut f, mid, worst.b)?;
        evaluations += 30;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // Resum to shed drift from the running updates.
    let mut panels: Vec<Panel> = heap.into_vec();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    let value: f64 = panels.iter().map(|p| p.value).sum();
    let error: f64 = panels.iter().map(|p| p.error).sum();
    Ok(QuadResult {
        value,
        error,
        converged: error <= target(value),
        evaluations,
    })
}

/// Integrates `f` over `[lower, upper]`, either of which may be infinite.
///
/// Infinite ranges are mapped onto finite ones with `x = t / (1 - t^2)`
/// (both ends open) or `x = a + t / (1 - t)` (one end open).
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, lower: f64, upper: f64, opts: &QuadOptions) -> Result<QuadResult> {
    if lower.is_nan() || upper.is_nan() {
        return Err(Error::domain("integration bounds must not be NaN"));
    }
    if lower > upper {
        let r = integrate(f, upper, lower, opts)?;
        return Ok(QuadResult { value: -r.value, ..r });
    }
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => integrate_finite(f, lower, upper, opts),
        (false, false) => integrate_finite(
            |t| {
                let d = 1.0 - t * t;
                let w = (1.0 + t * t) / (d * d);
                let y = f(t / d) * w;
                if w.is_infinite() { 0.0 } else { y }
            },
            -1.0,
            1.0,
            opts,
        ),
        (true, false) => integrate_finite(
            |t| {
                let d = 1.0 - t;
                let w = 1.0 / (d * d);
                if w.is_infinite() { 0.0 } else { f(lower + t / d) * w }
            },
            0.0,
            1.0,
            opts,
        ),
        (false, true) => integrate_finite(
            |t| {
                let w = 1.0 / (t * t);
                if w.is_infinite() { 0.0 } else { f(upper - (1.0 - t) / t) * w }
            },
            0.0,
            1.0,
            opts,
        ),
    }
}

/// Integrates with absolute tolerance `tol`, returning `(value, error_estimate)`.
///
/// Non-convergence is reported as [`Error::NotConverged`].
pub fn adaptive_quadrature<F: FnMut(f64) -> f64>(f: F, lower: f64, upper: f64, tol: f64) -> Result<(f64, f64)> {
    let opts = QuadOptions {
        abs_tol: tol,
        ..QuadOptions::default()
    };
    let r = integrate(f, lower, upper, &opts)?;
    if r.converged {
        Ok((r.value, r.error))
    } else {
        Err(Error::NotConverged {
            value: r.value,
            error: r.error,
        })
    }
}
