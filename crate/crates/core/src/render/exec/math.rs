//! Built-in math functions.

use naga::MathFunction as M;

use super::ops::{broadcast, map4, zip4};
use super::value::{Lanes, Mat, Num, Value};
use super::ExecError;

fn bad(fun: M) -> ExecError {
    ExecError::Type(format!("invalid operands for {fun:?}"))
}

fn fmap(fun: M, v: &Value, f: impl Fn(f32) -> f32) -> Result<Value, ExecError> {
    let n = v.num()?;
    match n.lanes {
        Lanes::F(a) => Ok(Value::Num(Num { lanes: Lanes::F(map4(a, n.len, f)), ..n })),
        _ => Err(bad(fun)),
    }
}

fn fzip(fun: M, a: &Value, b: &Value, f: impl Fn(f32, f32) -> f32) -> Result<Value, ExecError> {
    let (a, b) = broadcast(a.num()?, b.num()?);
    match (a.lanes, b.lanes) {
        (Lanes::F(x), Lanes::F(y)) => Ok(Value::Num(Num { lanes: Lanes::F(zip4(x, y, a.len, f)), ..a })),
        _ => Err(bad(fun)),
    }
}

fn fzip3(fun: M, a: &Value, b: &Value, c: &Value, f: impl Fn(f32, f32, f32) -> f32) -> Result<Value, ExecError> {
    let (a, b, c) = (a.num()?, b.num()?, c.num()?);
    let len = a.len.max(b.len).max(c.len);
    let widen = |n: Num| if n.vector || len == 1 { n } else { n.splat(len) };
    let (a, b, c) = (widen(a), widen(b), widen(c));
    match (a.lanes, b.lanes, c.lanes) {
        (Lanes::F(x), Lanes::F(y), Lanes::F(z)) => {
            let mut out = [0.0; 4];
            for i in 0..len as usize {
                out[i] = f(x[i], y[i], z[i]);
            }
            Ok(Value::Num(Num { lanes: Lanes::F(out), len, vector: a.vector || b.vector || c.vector }))
        }
        _ => Err(bad(fun)),
    }
}

fn dot(a: &Num, b: &Num) -> Result<f32, ExecError> {
    let (x, y) = (a.floats()?, b.floats()?);
    Ok((0..a.len as usize).map(|i| x[i] * y[i]).sum())
}

fn length(a: &Num) -> Result<f32, ExecError> {
    Ok(dot(a, a)?.sqrt())
}

fn scale(n: &Num, s: f32) -> Result<Num, ExecError> {
    let x = n.floats()?;
    Ok(Num { lanes: Lanes::F(map4(x, n.len, |v| v * s)), ..*n })
}

fn sub(a: &Num, b: &Num) -> Result<Num, ExecError> {
    let (x, y) = (a.floats()?, b.floats()?);
    Ok(Num { lanes: Lanes::F(zip4(x, y, a.len, |p, q| p - q)), ..*a })
}

fn arg(args: &[Value], i: usize, fun: M) -> Result<&Value, ExecError> {
    args.get(i).ok_or_else(|| bad(fun))
}

pub fn call(fun: M, args: &[Value]) -> Result<Value, ExecError> {
    let a0 = arg(args, 0, fun)?;
    match fun {
        M::Abs => {
            let n = a0.num()?;
            let lanes = match n.lanes {
                Lanes::F(a) => Lanes::F(map4(a, n.len, f32::abs)),
                Lanes::I(a) => Lanes::I(map4(a, n.len, i32::wrapping_abs)),
                Lanes::U(a) => Lanes::U(a),
                Lanes::B(_) => return Err(bad(fun)),
            };
            Ok(Value::Num(Num { lanes, ..n }))
        }
        M::Min | M::Max => {
            let (a, b) = broadcast(a0.num()?, arg(args, 1, fun)?.num()?);
            let min = fun == M::Min;
            let lanes = match (a.lanes, b.lanes) {
                (Lanes::F(x), Lanes::F(y)) => Lanes::F(zip4(x, y, a.len, |p, q| if min { p.min(q) } else { p.max(q) })),
                (Lanes::I(x), Lanes::I(y)) => Lanes::I(zip4(x, y, a.len, |p, q| if min { p.min(q) } else { p.max(q) })),
                (Lanes::U(x), Lanes::U(y)) => Lanes::U(zip4(x, y, a.len, |p, q| if min { p.min(q) } else { p.max(q) })),
                _ => return Err(bad(fun)),
            };
            Ok(Value::Num(Num { lanes, ..a }))
        }
        M::Clamp => {
            let x = a0.num()?;
            let (x, lo) = broadcast(x, arg(args, 1, fun)?.num()?);
            let (x, hi) = broadcast(x, arg(args, 2, fun)?.num()?);
            let (_, lo) = broadcast(x, lo);
            let lanes = match (x.lanes, lo.lanes, hi.lanes) {
                (Lanes::F(v), Lanes::F(l), Lanes::F(h)) => {
                    Lanes::F(std::array::from_fn(|i| v[i].max(l[i]).min(h[i])))
                }
                (Lanes::I(v), Lanes::I(l), Lanes::I(h)) => {
                    Lanes::I(std::array::from_fn(|i| v[i].max(l[i]).min(h[i])))
                }
                (Lanes::U(v), Lanes::U(l), Lanes::U(h)) => {
                    Lanes::U(std::array::from_fn(|i| v[i].max(l[i]).min(h[i])))
                }
                _ => return Err(bad(fun)),
            };
            Ok(Value::Num(Num { lanes, ..x }))
        }
        M::Saturate => fmap(fun, a0, |x| x.clamp(0.0, 1.0)),
        M::Cos => fmap(fun, a0, f32::cos),
        M::Cosh => fmap(fun, a0, f32::cosh),
        M::Sin => fmap(fun, a0, f32::sin),
        M::Sinh => fmap(fun, a0, f32::sinh),
        M::Tan => fmap(fun, a0, f32::tan),
        M::Tanh => fmap(fun, a0, f32::tanh),
        M::Acos => fmap(fun, a0, f32::acos),
        M::Asin => fmap(fun, a0, f32::asin),
        M::Atan => fmap(fun, a0, f32::atan),
        M::Atan2 => fzip(fun, a0, arg(args, 1, fun)?, f32::atan2),
        M::Asinh => fmap(fun, a0, f32::asinh),
        M::Acosh => fmap(fun, a0, f32::acosh),
        M::Atanh => fmap(fun, a0, f32::atanh),
        M::Radians => fmap(fun, a0, f32::to_radians),
        M::Degrees => fmap(fun, a0, f32::to_degrees),
        M::Ceil => fmap(fun, a0, f32::ceil),
        M::Floor => fmap(fun, a0, f32::floor),
        M::Round => fmap(fun, a0, f32::round_ties_even),
        M::Fract => fmap(fun, a0, |x| x - x.floor()),
        M::Trunc => fmap(fun, a0, f32::trunc),
        M::Ldexp => {
            let (x, e) = (a0.num()?, arg(args, 1, fun)?.num()?);
            let (x, e) = broadcast(x, e);
            match (x.lanes, e.lanes) {
                (Lanes::F(v), Lanes::I(p)) => Ok(Value::Num(Num {
                    lanes: Lanes::F(zip4(v, p, x.len, |v, p| v * 2f32.powi(p))),
                    ..x
                })),
                _ => Err(bad(fun)),
            }
        }
        M::Exp => fmap(fun, a0, f32::exp),
        M::Exp2 => fmap(fun, a0, f32::exp2),
        M::Log => fmap(fun, a0, f32::ln),
        M::Log2 => fmap(fun, a0, f32::log2),
        M::Pow => fzip(fun, a0, arg(args, 1, fun)?, f32::powf),
        M::Sqrt => fmap(fun, a0, f32::sqrt),
        M::InverseSqrt => fmap(fun, a0, |x| 1.0 / x.sqrt()),
        M::Dot => {
            let (a, b) = (a0.num()?, arg(args, 1, fun)?.num()?);
            match (a.lanes, b.lanes) {
                (Lanes::F(_), Lanes::F(_)) => Ok(Value::Num(Num::f(dot(&a, &b)?))),
                (Lanes::I(x), Lanes::I(y)) => {
                    let s = (0..a.len as usize).fold(0i32, |acc, i| acc.wrapping_add(x[i].wrapping_mul(y[i])));
                    Ok(Value::Num(Num::i(s)))
                }
                (Lanes::U(x), Lanes::U(y)) => {
                    let s = (0..a.len as usize).fold(0u32, |acc, i| acc.wrapping_add(x[i].wrapping_mul(y[i])));
                    Ok(Value::Num(Num::u(s)))
                }
                _ => Err(bad(fun)),
            }
        }
        M::Outer => {
            let (a, b) = (a0.num()?, arg(args, 1, fun)?.num()?);
            let (x, y) = (a.floats()?, b.floats()?);
            let mut m = Mat::zero(b.len, a.len);
            for c in 0..b.len as usize {
                for r in 0..a.len as usize {
                    m.set(c, r, x[r] * y[c]);
                }
            }
            Ok(Value::Mat(m))
        }
        M::Cross => {
            let (a, b) = (a0.num()?.floats()?, arg(args, 1, fun)?.num()?.floats()?);
            Ok(Value::Num(Num::fvec(&[
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ])))
        }
        M::Distance => {
            let (a, b) = broadcast(a0.num()?, arg(args, 1, fun)?.num()?);
            Ok(Value::Num(Num::f(length(&sub(&a, &b)?)?)))
        }
        M::Length => Ok(Value::Num(Num::f(length(&a0.num()?)?))),
        M::Normalize => {
            let n = a0.num()?;
            let l = length(&n)?;
            Ok(Value::Num(scale(&n, 1.0 / l)?))
        }
        M::FaceForward => {
            let n = a0.num()?;
            let i = arg(args, 1, fun)?.num()?;
            let nref = arg(args, 2, fun)?.num()?;
            Ok(Value::Num(if dot(&nref, &i)? < 0.0 { n } else { scale(&n, -1.0)? }))
        }
        M::Reflect => {
            let i = a0.num()?;
            let n = arg(args, 1, fun)?.num()?;
            let d = dot(&n, &i)?;
            Ok(Value::Num(sub(&i, &scale(&n, 2.0 * d)?)?))
        }
        M::Refract => {
            let i = a0.num()?;
            let n = arg(args, 1, fun)?.num()?;
            let eta = arg(args, 2, fun)?.num()?.as_f32()?;
            let d = dot(&n, &i)?;
            let k = 1.0 - eta * eta * (1.0 - d * d);
            if k < 0.0 {
                Ok(Value::Num(scale(&i, 0.0)?))
            } else {
                Ok(Value::Num(sub(&scale(&i, eta)?, &scale(&n, eta * d + k.sqrt())?)?))
            }
        }
        M::Sign => {
            let n = a0.num()?;
            let lanes = match n.lanes {
                Lanes::F(a) => Lanes::F(map4(a, n.len, |x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })),
                Lanes::I(a) => Lanes::I(map4(a, n.len, i32::signum)),
                _ => return Err(bad(fun)),
            };
            Ok(Value::Num(Num { lanes, ..n }))
        }
        M::Fma => fzip3(fun, a0, arg(args, 1, fun)?, arg(args, 2, fun)?, |a, b, c| a.mul_add(b, c)),
        M::Mix => fzip3(fun, a0, arg(args, 1, fun)?, arg(args, 2, fun)?, |x, y, a| x * (1.0 - a) + y * a),
        M::Step => fzip(fun, a0, arg(args, 1, fun)?, |edge, x| if x < edge { 0.0 } else { 1.0 }),
        M::SmoothStep => fzip3(fun, a0, arg(args, 1, fun)?, arg(args, 2, fun)?, |e0, e1, x| {
            let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
            t * t * (3.0 - 2.0 * t)
        }),
        M::Transpose => match a0 {
            Value::Mat(m) => {
                let mut out = Mat::zero(m.rows, m.cols);
                for c in 0..m.cols as usize {
                    for r in 0..m.rows as usize {
                        out.set(r, c, m.get(c, r));
                    }
                }
                Ok(Value::Mat(out))
            }
            _ => Err(bad(fun)),
        },
        M::Determinant => match a0 {
            Value::Mat(m) if m.cols == m.rows => Ok(Value::Num(Num::f(determinant(m)))),
            _ => Err(bad(fun)),
        },
        M::Inverse => match a0 {
            Value::Mat(m) if m.cols == m.rows => Ok(Value::Mat(inverse(m))),
            _ => Err(bad(fun)),
        },
        M::CountTrailingZeros | M::CountLeadingZeros | M::CountOneBits | M::ReverseBits => {
            let n = a0.num()?;
            let op = |x: u32| match fun {
                M::CountTrailingZeros => x.trailing_zeros(),
                M::CountLeadingZeros => x.leading_zeros(),
                M::CountOneBits => x.count_ones(),
                _ => x.reverse_bits(),
            };
            let lanes = match n.lanes {
                Lanes::I(a) => Lanes::I(map4(a, n.len, |x| op(x as u32) as i32)),
                Lanes::U(a) => Lanes::U(map4(a, n.len, op)),
                _ => return Err(bad(fun)),
            };
            Ok(Value::Num(Num { lanes, ..n }))
        }
        M::FirstTrailingBit => {
            let n = a0.num()?;
            let lsb = |x: u32| if x == 0 { u32::MAX } else { x.trailing_zeros() };
            let lanes = match n.lanes {
                Lanes::I(a) => Lanes::I(map4(a, n.len, |x| lsb(x as u32) as i32)),
                Lanes::U(a) => Lanes::U(map4(a, n.len, lsb)),
                _ => return Err(bad(fun)),
            };
            Ok(Value::Num(Num { lanes, ..n }))
        }
        M::FirstLeadingBit => {
            let n = a0.num()?;
            let msb = |x: u32| if x == 0 { u32::MAX } else { 31 - x.leading_zeros() };
            let lanes = match n.lanes {
                // for negative inputs the first bit differing from the sign bit
                Lanes::I(a) => Lanes::I(map4(a, n.len, |x| {
                    let v = if x < 0 { !x } else { x };
                    msb(v as u32) as i32
                })),
                Lanes::U(a) => Lanes::U(map4(a, n.len, msb)),
                _ => return Err(bad(fun)),
            };
            Ok(Value::Num(Num { lanes, ..n }))
        }
        M::ExtractBits => {
            let n = a0.num()?;
            let offset = arg(args, 1, fun)?.num()?.as_index()?.min(32);
            let count = arg(args, 2, fun)?.num()?.as_index()?.min(32 - offset);
            let lanes = match n.lanes {
                Lanes::U(a) => Lanes::U(map4(a, n.len, |x| {
                    if count == 0 {
                        0
                    } else {
                        (x >> offset) & (u32::MAX >> (32 - count))
                    }
                })),
                Lanes::I(a) => Lanes::I(map4(a, n.len, |x| {
                    if count == 0 {
                        0
                    } else {
                        ((x << (32 - count - offset)) as i64 >> (32 - count)) as i32
                    }
                })),
                _ => return Err(bad(fun)),
            };
            Ok(Value::Num(Num { lanes, ..n }))
        }
        M::InsertBits => {
            let (n, ins) = broadcast(a0.num()?, arg(args, 1, fun)?.num()?);
            let offset = arg(args, 2, fun)?.num()?.as_index()?.min(32);
            let count = arg(args, 3, fun)?.num()?.as_index()?.min(32 - offset);
            let mask = if count == 0 { 0 } else { (u32::MAX >> (32 - count)) << offset };
            let put = |e: u32, b: u32| (e & !mask) | ((b << offset) & mask);
            let lanes = match (n.lanes, ins.lanes) {
                (Lanes::U(a), Lanes::U(b)) => Lanes::U(zip4(a, b, n.len, put)),
                (Lanes::I(a), Lanes::I(b)) => Lanes::I(zip4(a, b, n.len, |e, b| put(e as u32, b as u32) as i32)),
                _ => return Err(bad(fun)),
            };
            Ok(Value::Num(Num { lanes, ..n }))
        }
        other => Err(ExecError::Unsupported(format!("math function {other:?}"))),
    }
}

/// Functions this device cannot evaluate; rejected at compile time.
pub fn is_supported(fun: M) -> bool {
    !matches!(
        fun,
        M::Modf
            | M::Frexp
            | M::Dot4I8Packed
            | M::Dot4U8Packed
            | M::QuantizeToF16
            | M::Pack4x8snorm
            | M::Pack4x8unorm
            | M::Pack2x16snorm
            | M::Pack2x16unorm
            | M::Pack2x16float
            | M::Pack4xI8
            | M::Pack4xU8
            | M::Pack4xI8Clamp
            | M::Pack4xU8Clamp
            | M::Unpack4x8snorm
            | M::Unpack4x8unorm
            | M::Unpack2x16snorm
            | M::Unpack2x16unorm
            | M::Unpack2x16float
            | M::Unpack4xI8
            | M::Unpack4xU8
    )
}

fn minor(m: &Mat, skip_col: usize, skip_row: usize) -> Mat {
    let n = m.cols as usize;
    let mut out = Mat::zero(m.cols - 1, m.rows - 1);
    let mut oc = 0;
    for c in (0..n).filter(|&c| c != skip_col) {
        let mut or = 0;
        for r in (0..n).filter(|&r| r != skip_row) {
            out.set(oc, or, m.get(c, r));
            or += 1;
        }
        oc += 1;
    }
    out
}

fn determinant(m: &Mat) -> f32 {
    match m.cols {
        1 => m.get(0, 0),
        2 => m.get(0, 0) * m.get(1, 1) - m.get(1, 0) * m.get(0, 1),
        n => (0..n as usize)
            .map(|c| {
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                sign * m.get(c, 0) * determinant(&minor(m, c, 0))
            })
            .sum(),
    }
}

fn inverse(m: &Mat) -> Mat {
    let n = m.cols as usize;
    let det = determinant(m);
    let mut out = Mat::zero(m.cols, m.rows);
    for c in 0..n {
        for r in 0..n {
            // adjugate: transpose of the cofactor matrix
            let sign = if (c + r) % 2 == 0 { 1.0 } else { -1.0 };
            let cof = if n == 1 { 1.0 } else { sign * determinant(&minor(m, c, r)) };
            out.set(r, c, cof / det);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: Value) -> f32 {
        v.num().unwrap().as_f32().unwrap()
    }

    #[test]
    fn smoothstep_endpoints() {
        let e0 = Value::Num(Num::f(0.0));
        let e1 = Value::Num(Num::f(1.0));
        assert_eq!(scalar(call(M::SmoothStep, &[e0.clone(), e1.clone(), Value::Num(Num::f(-1.0))]).unwrap()), 0.0);
        assert_eq!(scalar(call(M::SmoothStep, &[e0.clone(), e1.clone(), Value::Num(Num::f(0.5))]).unwrap()), 0.5);
        assert_eq!(scalar(call(M::SmoothStep, &[e0, e1, Value::Num(Num::f(2.0))]).unwrap()), 1.0);
    }

    #[test]
    fn mix_with_scalar_selector() {
        let out = call(
            M::Mix,
            &[Value::Num(Num::fvec(&[0.0, 10.0])), Value::Num(Num::fvec(&[1.0, 20.0])), Value::Num(Num::f(0.5))],
        )
        .unwrap();
        assert_eq!(out, Value::Num(Num::fvec(&[0.5, 15.0])));
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let mut m = Mat::zero(3, 3);
        let vals = [2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0];
        for (i, v) in vals.iter().enumerate() {
            m.set(i / 3, i % 3, *v);
        }
        let inv = match call(M::Inverse, &[Value::Mat(m)]).unwrap() {
            Value::Mat(x) => x,
            _ => unreachable!(),
        };
        let prod = super::super::ops::mat_mul(&m, &inv).unwrap();
        for c in 0..3 {
            for r in 0..3 {
                let want = if c == r { 1.0 } else { 0.0 };
                assert!((prod.get(c, r) - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn fract_of_negative() {
        assert!((scalar(call(M::Fract, &[Value::Num(Num::f(-0.25))]).unwrap()) - 0.75).abs() < 1e-7);
    }

    #[test]
    fn extract_bits_signed_extends() {
        let v = call(M::ExtractBits, &[Value::Num(Num::i(0b1100)), Value::Num(Num::u(2)), Value::Num(Num::u(2))]).unwrap();
        assert_eq!(v, Value::Num(Num::i(-1)));
    }
}
