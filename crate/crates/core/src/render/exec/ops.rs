//! Operators: unary, binary (including matrix algebra), select, casts.

use naga::{BinaryOperator as Bin, ScalarKind, UnaryOperator};

use super::value::{Lanes, Mat, Num, Value};
use super::ExecError;

#[inline]
pub fn zip4<T: Copy, U: Copy, R: Copy + Default>(x: [T; 4], y: [U; 4], len: u8, f: impl Fn(T, U) -> R) -> [R; 4] {
    let mut out = [R::default(); 4];
    for i in 0..len as usize {
        out[i] = f(x[i], y[i]);
    }
    out
}

#[inline]
pub fn map4<T: Copy, R: Copy + Default>(x: [T; 4], len: u8, f: impl Fn(T) -> R) -> [R; 4] {
    let mut out = [R::default(); 4];
    for i in 0..len as usize {
        out[i] = f(x[i]);
    }
    out
}

/// Promote a scalar operand to the other operand's vector width.
pub fn broadcast(a: Num, b: Num) -> (Num, Num) {
    match (a.vector, b.vector) {
        (true, false) => (a, b.splat(a.len)),
        (false, true) => (a.splat(b.len), b),
        _ => (a, b),
    }
}

fn mismatch(op: &str) -> ExecError {
    ExecError::Type(format!("operand kinds do not match for {op}"))
}

pub fn unary(op: UnaryOperator, v: Value) -> Result<Value, ExecError> {
    match v {
        Value::Mat(mut m) if op == UnaryOperator::Negate => {
            m.data.iter_mut().for_each(|x| *x = -*x);
            Ok(Value::Mat(m))
        }
        Value::Num(n) => {
            let lanes = match (op, n.lanes) {
                (UnaryOperator::Negate, Lanes::F(a)) => Lanes::F(map4(a, n.len, |x| -x)),
                (UnaryOperator::Negate, Lanes::I(a)) => Lanes::I(map4(a, n.len, |x: i32| x.wrapping_neg())),
                (UnaryOperator::Negate, Lanes::U(a)) => Lanes::U(map4(a, n.len, |x: u32| x.wrapping_neg())),
                (UnaryOperator::LogicalNot, Lanes::B(a)) => Lanes::B(map4(a, n.len, |x: bool| !x)),
                (UnaryOperator::BitwiseNot, Lanes::I(a)) => Lanes::I(map4(a, n.len, |x: i32| !x)),
                (UnaryOperator::BitwiseNot, Lanes::U(a)) => Lanes::U(map4(a, n.len, |x: u32| !x)),
                (UnaryOperator::BitwiseNot, Lanes::B(a)) => Lanes::B(map4(a, n.len, |x: bool| !x)),
                _ => return Err(mismatch("unary operator")),
            };
            Ok(Value::Num(Num { lanes, ..n }))
        }
        other => Err(ExecError::Type(format!("unary operator on {}", other.kind_name()))),
    }
}

pub fn binary(op: Bin, left: Value, right: Value) -> Result<Value, ExecError> {
    match (left, right) {
        (Value::Num(a), Value::Num(b)) => num_binary(op, a, b).map(Value::Num),
        (Value::Mat(a), Value::Mat(b)) => match op {
            Bin::Multiply => Ok(Value::Mat(mat_mul(&a, &b)?)),
            Bin::Add | Bin::Subtract | Bin::Divide => {
                let mut out = a;
                for c in 0..a.cols as usize {
                    for r in 0..a.rows as usize {
                        let (x, y) = (a.get(c, r), b.get(c, r));
                        out.set(c, r, float_arith(op, x, y));
                    }
                }
                Ok(Value::Mat(out))
            }
            _ => Err(mismatch("matrix operator")),
        },
        (Value::Mat(m), Value::Num(v)) => {
            if v.vector && op == Bin::Multiply {
                mat_vec(&m, &v).map(Value::Num)
            } else if !v.vector {
                let s = v.as_f32()?;
                Ok(Value::Mat(mat_scalar(m, |x| float_arith(op, x, s))))
            } else {
                Err(mismatch("matrix-vector operator"))
            }
        }
        (Value::Num(v), Value::Mat(m)) => {
            if v.vector && op == Bin::Multiply {
                vec_mat(&v, &m).map(Value::Num)
            } else if !v.vector {
                let s = v.as_f32()?;
                Ok(Value::Mat(mat_scalar(m, |x| float_arith(op, s, x))))
            } else {
                Err(mismatch("vector-matrix operator"))
            }
        }
        (l, r) => Err(ExecError::Type(format!("binary operator on {} and {}", l.kind_name(), r.kind_name()))),
    }
}

#[inline]
fn float_arith(op: Bin, x: f32, y: f32) -> f32 {
    match op {
        Bin::Add => x + y,
        Bin::Subtract => x - y,
        Bin::Multiply => x * y,
        Bin::Divide => x / y,
        // truncated remainder, matching `%` semantics in the IR
        Bin::Modulo => x % y,
        _ => f32::NAN,
    }
}

fn mat_scalar(mut m: Mat, f: impl Fn(f32) -> f32) -> Mat {
    for c in 0..m.cols as usize {
        for r in 0..m.rows as usize {
            let v = f(m.get(c, r));
            m.set(c, r, v);
        }
    }
    m
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Result<Mat, ExecError> {
    if a.cols != b.rows {
        return Err(mismatch("matrix product"));
    }
    let mut out = Mat::zero(b.cols, a.rows);
    for c in 0..b.cols as usize {
        for r in 0..a.rows as usize {
            let mut acc = 0.0;
            for k in 0..a.cols as usize {
                acc += a.get(k, r) * b.get(c, k);
            }
            out.set(c, r, acc);
        }
    }
    Ok(out)
}

fn mat_vec(m: &Mat, v: &Num) -> Result<Num, ExecError> {
    if v.len != m.cols {
        return Err(mismatch("matrix * vector"));
    }
    let x = v.floats()?;
    let mut out = [0.0f32; 4];
    for (r, o) in out.iter_mut().enumerate().take(m.rows as usize) {
        let mut acc = 0.0;
        for (c, xc) in x.iter().enumerate().take(m.cols as usize) {
            acc += m.get(c, r) * xc;
        }
        *o = acc;
    }
    Ok(Num { lanes: Lanes::F(out), len: m.rows, vector: true })
}

fn vec_mat(v: &Num, m: &Mat) -> Result<Num, ExecError> {
    if v.len != m.rows {
        return Err(mismatch("vector * matrix"));
    }
    let x = v.floats()?;
    let mut out = [0.0f32; 4];
    for (c, o) in out.iter_mut().enumerate().take(m.cols as usize) {
        let mut acc = 0.0;
        for (r, xr) in x.iter().enumerate().take(m.rows as usize) {
            acc += m.get(c, r) * xr;
        }
        *o = acc;
    }
    Ok(Num { lanes: Lanes::F(out), len: m.cols, vector: true })
}

fn num_binary(op: Bin, a: Num, b: Num) -> Result<Num, ExecError> {
    // Shifts keep the left operand's kind; the amount may be signed or unsigned.
    if matches!(op, Bin::ShiftLeft | Bin::ShiftRight) {
        let (a, b) = broadcast(a, b);
        let amounts: [u32; 4] = match b.lanes {
            Lanes::U(s) => s,
            Lanes::I(s) => map4(s, b.len, |x: i32| x as u32),
            _ => return Err(mismatch("shift")),
        };
        let left = op == Bin::ShiftLeft;
        let lanes = match a.lanes {
            Lanes::I(x) => Lanes::I(zip4(x, amounts, a.len, |p, s| {
                let s = s & 31;
                if left { p.wrapping_shl(s) } else { p.wrapping_shr(s) }
            })),
            Lanes::U(x) => Lanes::U(zip4(x, amounts, a.len, |p, s| {
                let s = s & 31;
                if left { p.wrapping_shl(s) } else { p.wrapping_shr(s) }
            })),
            _ => return Err(mismatch("shift")),
        };
        return Ok(Num { lanes, ..a });
    }

    let (a, b) = broadcast(a, b);
    let len = a.len;
    let shape = |lanes| Num { lanes, len, vector: a.vector };
    let cmp = |lanes| Num { lanes: Lanes::B(lanes), len, vector: a.vector };

    macro_rules! compare {
        ($x:expr, $y:expr) => {
            match op {
                Bin::Equal => Some(cmp(zip4($x, $y, len, |p, q| p == q))),
                Bin::NotEqual => Some(cmp(zip4($x, $y, len, |p, q| p != q))),
                Bin::Less => Some(cmp(zip4($x, $y, len, |p, q| p < q))),
                Bin::LessEqual => Some(cmp(zip4($x, $y, len, |p, q| p <= q))),
                Bin::Greater => Some(cmp(zip4($x, $y, len, |p, q| p > q))),
                Bin::GreaterEqual => Some(cmp(zip4($x, $y, len, |p, q| p >= q))),
                _ => None,
            }
        };
    }

    match (a.lanes, b.lanes) {
        (Lanes::F(x), Lanes::F(y)) => {
            if let Some(r) = compare!(x, y) {
                return Ok(r);
            }
            let out = match op {
                Bin::Add => zip4(x, y, len, |p, q| p + q),
                Bin::Subtract => zip4(x, y, len, |p, q| p - q),
                Bin::Multiply => zip4(x, y, len, |p, q| p * q),
                Bin::Divide => zip4(x, y, len, |p, q| p / q),
                Bin::Modulo => zip4(x, y, len, |p, q| p % q),
                _ => return Err(mismatch("float operator")),
            };
            Ok(shape(Lanes::F(out)))
        }
        (Lanes::I(x), Lanes::I(y)) => {
            if let Some(r) = compare!(x, y) {
                return Ok(r);
            }
            let out = match op {
                Bin::Add => zip4(x, y, len, |p: i32, q| p.wrapping_add(q)),
                Bin::Subtract => zip4(x, y, len, |p: i32, q| p.wrapping_sub(q)),
                Bin::Multiply => zip4(x, y, len, |p: i32, q| p.wrapping_mul(q)),
                Bin::Divide => zip4(x, y, len, |p: i32, q| if q == 0 { 0 } else { p.wrapping_div(q) }),
                Bin::Modulo => zip4(x, y, len, |p: i32, q| if q == 0 { 0 } else { p.wrapping_rem(q) }),
                Bin::And => zip4(x, y, len, |p, q| p & q),
                Bin::InclusiveOr => zip4(x, y, len, |p, q| p | q),
                Bin::ExclusiveOr => zip4(x, y, len, |p, q| p ^ q),
                _ => return Err(mismatch("int operator")),
            };
            Ok(shape(Lanes::I(out)))
        }
        (Lanes::U(x), Lanes::U(y)) => {
            if let Some(r) = compare!(x, y) {
                return Ok(r);
            }
            let out = match op {
                Bin::Add => zip4(x, y, len, |p: u32, q| p.wrapping_add(q)),
                Bin::Subtract => zip4(x, y, len, |p: u32, q| p.wrapping_sub(q)),
                Bin::Multiply => zip4(x, y, len, |p: u32, q| p.wrapping_mul(q)),
                Bin::Divide => zip4(x, y, len, |p: u32, q| p.checked_div(q).unwrap_or(0)),
                Bin::Modulo => zip4(x, y, len, |p: u32, q| p.checked_rem(q).unwrap_or(0)),
                Bin::And => zip4(x, y, len, |p, q| p & q),
                Bin::InclusiveOr => zip4(x, y, len, |p, q| p | q),
                Bin::ExclusiveOr => zip4(x, y, len, |p, q| p ^ q),
                _ => return Err(mismatch("uint operator")),
            };
            Ok(shape(Lanes::U(out)))
        }
        (Lanes::B(x), Lanes::B(y)) => {
            let out = match op {
                Bin::Equal => zip4(x, y, len, |p, q| p == q),
                Bin::NotEqual => zip4(x, y, len, |p, q| p != q),
                Bin::LogicalAnd | Bin::And => zip4(x, y, len, |p, q| p && q),
                Bin::LogicalOr | Bin::InclusiveOr => zip4(x, y, len, |p, q| p || q),
                Bin::ExclusiveOr => zip4(x, y, len, |p, q| p != q),
                _ => return Err(mismatch("bool operator")),
            };
            Ok(shape(Lanes::B(out)))
        }
        _ => Err(mismatch("binary operator")),
    }
}

pub fn select(cond: Num, accept: Value, reject: Value) -> Result<Value, ExecError> {
    if !cond.vector {
        return Ok(if cond.as_bool()? { accept } else { reject });
    }
    let c = match cond.lanes {
        Lanes::B(c) => c,
        _ => return Err(mismatch("select")),
    };
    let (a, r) = broadcast(accept.num()?, reject.num()?);
    let lanes = match (a.lanes, r.lanes) {
        (Lanes::F(x), Lanes::F(y)) => Lanes::F(std::array::from_fn(|i| if c[i] { x[i] } else { y[i] })),
        (Lanes::I(x), Lanes::I(y)) => Lanes::I(std::array::from_fn(|i| if c[i] { x[i] } else { y[i] })),
        (Lanes::U(x), Lanes::U(y)) => Lanes::U(std::array::from_fn(|i| if c[i] { x[i] } else { y[i] })),
        (Lanes::B(x), Lanes::B(y)) => Lanes::B(std::array::from_fn(|i| if c[i] { x[i] } else { y[i] })),
        _ => return Err(mismatch("select")),
    };
    Ok(Value::Num(Num { lanes, ..a }))
}

/// Numeric conversion (`convert == true`) or bit reinterpretation.
pub fn cast(v: Value, kind: ScalarKind, convert: bool) -> Result<Value, ExecError> {
    let n = match v {
        Value::Num(n) => n,
        Value::Mat(m) if matches!(kind, ScalarKind::Float) => return Ok(Value::Mat(m)),
        other => return Err(ExecError::Type(format!("cast of {}", other.kind_name()))),
    };
    let len = n.len;
    let lanes = if convert {
        match (n.lanes, kind) {
            (Lanes::F(a), ScalarKind::Float | ScalarKind::AbstractFloat) => Lanes::F(a),
            (Lanes::F(a), ScalarKind::Sint | ScalarKind::AbstractInt) => Lanes::I(map4(a, len, |x| x as i32)),
            (Lanes::F(a), ScalarKind::Uint) => Lanes::U(map4(a, len, |x| x as u32)),
            (Lanes::F(a), ScalarKind::Bool) => Lanes::B(map4(a, len, |x| x != 0.0)),
            (Lanes::I(a), ScalarKind::Float | ScalarKind::AbstractFloat) => Lanes::F(map4(a, len, |x| x as f32)),
            (Lanes::I(a), ScalarKind::Sint | ScalarKind::AbstractInt) => Lanes::I(a),
            (Lanes::I(a), ScalarKind::Uint) => Lanes::U(map4(a, len, |x| x as u32)),
            (Lanes::I(a), ScalarKind::Bool) => Lanes::B(map4(a, len, |x| x != 0)),
            (Lanes::U(a), ScalarKind::Float | ScalarKind::AbstractFloat) => Lanes::F(map4(a, len, |x| x as f32)),
            (Lanes::U(a), ScalarKind::Sint | ScalarKind::AbstractInt) => Lanes::I(map4(a, len, |x| x as i32)),
            (Lanes::U(a), ScalarKind::Uint) => Lanes::U(a),
            (Lanes::U(a), ScalarKind::Bool) => Lanes::B(map4(a, len, |x| x != 0)),
            (Lanes::B(a), ScalarKind::Float | ScalarKind::AbstractFloat) => {
                Lanes::F(map4(a, len, |x| if x { 1.0 } else { 0.0 }))
            }
            (Lanes::B(a), ScalarKind::Sint | ScalarKind::AbstractInt) => Lanes::I(map4(a, len, i32::from)),
            (Lanes::B(a), ScalarKind::Uint) => Lanes::U(map4(a, len, u32::from)),
            (Lanes::B(a), ScalarKind::Bool) => Lanes::B(a),
        }
    } else {
        let bits: [u32; 4] = match n.lanes {
            Lanes::F(a) => map4(a, len, f32::to_bits),
            Lanes::I(a) => map4(a, len, |x| x as u32),
            Lanes::U(a) => a,
            Lanes::B(_) => return Err(mismatch("bitcast")),
        };
        match kind {
            ScalarKind::Float | ScalarKind::AbstractFloat => Lanes::F(map4(bits, len, f32::from_bits)),
            ScalarKind::Sint | ScalarKind::AbstractInt => Lanes::I(map4(bits, len, |x| x as i32)),
            ScalarKind::Uint => Lanes::U(bits),
            ScalarKind::Bool => return Err(mismatch("bitcast")),
        }
    };
    Ok(Value::Num(Num { lanes, ..n }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(v: Value) -> Vec<f32> {
        let n = v.num().unwrap();
        n.floats().unwrap()[..n.len as usize].to_vec()
    }

    #[test]
    fn scalar_vector_broadcast() {
        let v = binary(Bin::Multiply, Value::Num(Num::fvec(&[1.0, 2.0, 3.0])), Value::Num(Num::f(2.0))).unwrap();
        assert_eq!(f(v), vec![2.0, 4.0, 6.0]);
        let v = binary(Bin::Subtract, Value::Num(Num::f(1.0)), Value::Num(Num::fvec(&[0.25, 0.5]))).unwrap();
        assert_eq!(f(v), vec![0.75, 0.5]);
    }

    #[test]
    fn matrix_times_vector_is_column_major() {
        // columns (1,2) and (3,4): M * (1,1) = (4,6); (1,1) * M = (3,7)
        let mut m = Mat::zero(2, 2);
        m.set(0, 0, 1.0);
        m.set(0, 1, 2.0);
        m.set(1, 0, 3.0);
        m.set(1, 1, 4.0);
        let v = Value::Num(Num::fvec(&[1.0, 1.0]));
        assert_eq!(f(binary(Bin::Multiply, Value::Mat(m), v.clone()).unwrap()), vec![4.0, 6.0]);
        assert_eq!(f(binary(Bin::Multiply, v, Value::Mat(m)).unwrap()), vec![3.0, 7.0]);
    }

    #[test]
    fn integer_division_by_zero_is_zero() {
        let v = binary(Bin::Divide, Value::Num(Num::i(7)), Value::Num(Num::i(0))).unwrap();
        assert_eq!(v, Value::Num(Num::i(0)));
    }

    #[test]
    fn float_to_int_truncates() {
        let v = cast(Value::Num(Num::f(-2.7)), ScalarKind::Sint, true).unwrap();
        assert_eq!(v, Value::Num(Num::i(-2)));
    }

    #[test]
    fn vector_select() {
        let cond = Num { lanes: Lanes::B([true, false, true, false]), len: 3, vector: true };
        let out = select(cond, Value::Num(Num::fvec(&[1.0, 1.0, 1.0])), Value::Num(Num::f(0.0))).unwrap();
        assert_eq!(f(out), vec![1.0, 0.0, 1.0]);
    }
}
