//! Finite-difference checks over the whole primitive catalog.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{grad_check, GradCheckReport, DEFAULT_EPS};
use super::tape::{Axis, Tape, Var};
use super::Tensor;
use crate::error::Result;

/// How a case's random inputs are drawn.
#[derive(Clone, Copy, Debug)]
enum Draw {
    /// `±[0.1, 1]`, away from the kinks of relu, abs and friends.
    Smooth,
    /// `[0.5, 1.5]`, for ln, division and row-sum normalization.
    Positive,
}

type CaseFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    shapes: Vec<[usize; 2]>,
    draw: Draw,
    f: CaseFn,
}

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

fn draw(shape: [usize; 2], how: Draw, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape[0] * shape[1])
        .map(|_| match how {
            Draw::Smooth => {
                let m = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            }
            Draw::Positive => rng.gen_range(0.5..1.5),
        })
        .collect();
    Tensor::matrix(shape[0], shape[1], data).expect("shape matches data")
}

/// Reduces any output to a scalar with fixed, non-uniform weights so every
/// output entry contributes a distinct amount.
fn weigh(tape: &mut Tape, out: Var) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(
        shape,
        (0..n).map(|i| 0.3 + 0.17 * ((i * 7 % 11) as f64)).collect(),
    )?;
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum_all(prod))
}

macro_rules! case {
    ($name:expr, $shapes:expr, $draw:expr, |$t:ident, $v:ident| $body:expr) => {
        Case {
            name: $name,
            shapes: $shapes,
            draw: $draw,
            f: Box::new(move |$t: &mut Tape, $v: &[Var]| {
                let out: Var = $body;
                weigh($t, out)
            }),
        }
    };
}

fn catalog() -> Vec<Case> {
    use Draw::{Positive, Smooth};
    vec![
        case!("matmul", vec![[3, 4], [4, 2]], Smooth, |t, v| t
            .matmul(v[0], v[1])?),
        case!("transpose", vec![[3, 4]], Smooth, |t, v| t
            .transpose(v[0])?),
        case!("add", vec![[3, 4], [3, 4]], Smooth, |t, v| t
            .add(v[0], v[1])?),
        case!("add_row_broadcast", vec![[3, 4], [1, 4]], Smooth, |t, v| t
            .add(v[0], v[1])?),
        case!("sub", vec![[3, 4], [3, 4]], Smooth, |t, v| t
            .sub(v[0], v[1])?),
        case!("sub_col_broadcast", vec![[3, 4], [3, 1]], Smooth, |t, v| t
            .sub(v[0], v[1])?),
        case!("mul", vec![[3, 4], [3, 4]], Smooth, |t, v| t
            .mul(v[0], v[1])?),
        case!("mul_col_broadcast", vec![[3, 4], [3, 1]], Smooth, |t, v| t
            .mul(v[0], v[1])?),
        case!("mul_row_broadcast", vec![[3, 4], [1, 4]], Smooth, |t, v| t
            .mul(v[0], v[1])?),
        case!(
            "mul_scalar_broadcast",
            vec![[3, 4], [1, 1]],
            Smooth,
            |t, v| t.mul(v[0], v[1])?
        ),
        case!("div", vec![[3, 4], [3, 4]], Positive, |t, v| t
            .div(v[0], v[1])?),
        case!(
            "div_col_broadcast",
            vec![[3, 4], [3, 1]],
            Positive,
            |t, v| t.div(v[0], v[1])?
        ),
        case!("scalar_mul", vec![[3, 4]], Smooth, |t, v| t
            .scalar_mul(v[0], -1.7)),
        case!("add_scalar", vec![[3, 4]], Smooth, |t, v| t
            .add_scalar(v[0], 0.4)),
        case!("neg", vec![[3, 4]], Smooth, |t, v| t.neg(v[0])),
        case!("concat_rows", vec![[2, 3], [4, 3]], Smooth, |t, v| t
            .concat(&[v[0], v[1]], Axis::Rows)?),
        case!("concat_cols", vec![[3, 2], [3, 5]], Smooth, |t, v| t
            .concat(&[v[0], v[1]], Axis::Cols)?),
        case!("slice", vec![[4, 5]], Smooth, |t, v| t.slice(
            v[0],
            Axis::Cols,
            1,
            4
        )?),
        case!("split", vec![[5, 3]], Smooth, |t, v| {
            let parts = t.split(v[0], Axis::Rows, &[2, 3])?;
            let a = t.scalar_mul(parts[0], 2.0);
            let a = t.sum_all(a);
            let b = t.sum_all(parts[1]);
            t.sub(a, b)?
        }),
        case!("row_l2_norm", vec![[3, 4]], Smooth, |t, v| t
            .row_l2_norm(v[0])?),
        case!("row_unit", vec![[3, 4]], Smooth, |t, v| t.row_unit(v[0])?),
        case!("row_normalize_sum", vec![[3, 4]], Positive, |t, v| t
            .row_normalize_sum(v[0])?),
        case!("softmax_cols", vec![[3, 4]], Smooth, |t, v| t
            .softmax(v[0], Axis::Cols)?),
        case!("softmax_rows", vec![[3, 4]], Smooth, |t, v| t
            .softmax(v[0], Axis::Rows)?),
        case!("log_softmax", vec![[3, 4]], Smooth, |t, v| t
            .log_softmax(v[0], Axis::Cols)?),
        case!("sigmoid", vec![[3, 4]], Smooth, |t, v| t.sigmoid(v[0])),
        case!("relu", vec![[3, 4]], Smooth, |t, v| t.relu(v[0])),
        case!("exp", vec![[3, 4]], Smooth, |t, v| t.exp(v[0])),
        case!("ln", vec![[3, 4]], Positive, |t, v| t.ln(v[0])),
        case!("abs", vec![[3, 4]], Smooth, |t, v| t.abs(v[0])),
        case!("square", vec![[3, 4]], Smooth, |t, v| t.square(v[0])),
        case!("mean_rows", vec![[3, 4]], Smooth, |t, v| t
            .mean(v[0], Axis::Rows)?),
        case!("mean_cols", vec![[3, 4]], Smooth, |t, v| t
            .mean(v[0], Axis::Cols)?),
        case!("sum_rows", vec![[3, 4]], Smooth, |t, v| t
            .sum(v[0], Axis::Rows)?),
        case!("sum_cols", vec![[3, 4]], Smooth, |t, v| t
            .sum(v[0], Axis::Cols)?),
        case!("mean_pool_time", vec![[5, 3]], Smooth, |t, v| t
            .mean_pool_time(v[0])?),
        case!("sum_all", vec![[3, 4]], Smooth, |t, v| t.sum_all(v[0])),
        case!("mean_all", vec![[3, 4]], Smooth, |t, v| t.mean_all(v[0])?),
        case!("minimum", vec![[3, 4], [3, 4]], Smooth, |t, v| t
            .minimum(v[0], v[1])?),
        case!("maximum", vec![[3, 4], [3, 4]], Smooth, |t, v| t
            .maximum(v[0], v[1])?),
        case!("clamp", vec![[3, 4]], Smooth, |t, v| t
            .clamp(v[0], -0.55, 0.45)),
        case!("reshape", vec![[3, 4]], Smooth, |t, v| t
            .reshape(v[0], &[2, 6])?),
        case!("affine", vec![[3, 4], [4, 2], [1, 2]], Smooth, |t, v| t
            .affine(v[0], v[1], v[2])?),
        case!("composite_depth5", vec![[3, 4], [4, 4]], Smooth, |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.sigmoid(h);
            let h = t.row_unit(h)?;
            let h = t.softmax(h, Axis::Cols)?;
            t.mean_pool_time(h)?
        }),
    ]
}

/// Names of the checked primitives, in suite order.
pub fn primitive_names() -> Vec<&'static str> {
    catalog().iter().map(|c| c.name).collect()
}

/// Runs every catalog case at `points` random points and keeps the worst
/// report per case.
pub fn primitive_suite(points: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in catalog() {
        let mut worst = GradCheckReport {
            max_relative_error: 0.0,
            checked: 0,
            excluded: 0,
        };
        for _ in 0..points {
            let inputs: Vec<Tensor> = case
                .shapes
                .iter()
                .map(|&s| draw(s, case.draw, &mut rng))
                .collect();
            let r = grad_check(&case.f, &inputs, DEFAULT_EPS)?;
            worst.max_relative_error = worst.max_relative_error.max(r.max_relative_error);
            worst.checked += r.checked;
            worst.excluded += r.excluded;
        }
        out.push(SuiteEntry {
            name: case.name.to_string(),
            report: worst,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes_at_ten_points() {
        for e in primitive_suite(10, 11).unwrap() {
            assert!(
                e.report.max_relative_error < 1e-5,
                "{}: {:?}",
                e.name,
                e.report
            );
            assert!(e.report.checked > 0, "{}", e.name);
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let a: Vec<f64> = primitive_suite(2, 3)
            .unwrap()
            .iter()
            .map(|e| e.report.max_relative_error)
            .collect();
        let b: Vec<f64> = primitive_suite(2, 3)
            .unwrap()
            .iter()
            .map(|e| e.report.max_relative_error)
            .collect();
        assert_eq!(a, b);
    }
}
