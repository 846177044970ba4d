//! Bytecode over a flat word memory. Addresses are word offsets; every
//! function owns a fixed region, which is sound because GLSL has no
//! recursion.

use naga::{Expression, Handle};
use smallvec::SmallVec;

use super::layout::{read_value, write_value, Kind, Shape};
use super::{eval_pure, Budget, ExecError};

/// Bit 0 marks the first operand as a broadcast scalar, bit 1 the second,
/// bit 2 the third.
pub type Splat = u8;

#[derive(Debug, Clone, Copy)]
pub enum FBin {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Min,
    Max,
    Pow,
    Atan2,
    Step,
}

#[derive(Debug, Clone, Copy)]
pub enum FTri {
    Mix,
    Clamp,
    SmoothStep,
    Fma,
}

#[derive(Debug, Clone, Copy)]
pub enum IBin {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
}

#[derive(Debug, Clone, Copy)]
pub enum BBin {
    And,
    Or,
    Eq,
    Ne,
}

#[derive(Debug, Clone, Copy)]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy)]
pub enum FUn {
    Neg,
    Abs,
    Sin,
    Cos,
    Tan,
    Asin,
    Acos,
    Atan,
    Sinh,
    Cosh,
    Tanh,
    Asinh,
    Acosh,
    Atanh,
    Radians,
    Degrees,
    Ceil,
    Floor,
    Round,
    Fract,
    Trunc,
    Exp,
    Exp2,
    Log,
    Log2,
    Sqrt,
    InverseSqrt,
    Sign,
    Saturate,
    Zero,
}

/// An expression evaluated through the value-level evaluator.
#[derive(Debug)]
pub struct Generic {
    pub expr: Expression,
    pub dst: u32,
    pub operands: SmallVec<[(Handle<Expression>, u32, Shape); 4]>,
}

#[derive(Debug)]
pub enum Op {
    Copy { dst: u32, src: u32, n: u32 },
    Zero { dst: u32, n: u32 },
    Set { dst: u32, word: u32 },
    Splat { dst: u32, src: u32, n: u8 },
    Swizzle { dst: u32, src: u32, n: u8, pattern: [u8; 4] },
    /// `dst = base + clamp(idx) * stride`, where `base` is read from memory
    /// when `indirect`.
    Addr { dst: u32, base: u32, indirect: bool, idx: u32, signed: bool, stride: u32, count: u32 },
    Offset { dst: u32, ptr: u32, off: u32 },
    Load { dst: u32, ptr: u32, n: u32 },
    Store { ptr: u32, src: u32, n: u32 },
    F { op: FBin, dst: u32, a: u32, b: u32, n: u8, s: Splat },
    FCmp { op: Cmp, dst: u32, a: u32, b: u32, n: u8, s: Splat },
    F3 { op: FTri, dst: u32, a: u32, b: u32, c: u32, n: u8, s: Splat },
    FUn { op: FUn, dst: u32, a: u32, n: u8 },
    I { op: IBin, unsigned: bool, dst: u32, a: u32, b: u32, n: u8, s: Splat },
    ICmp { op: Cmp, unsigned: bool, dst: u32, a: u32, b: u32, n: u8, s: Splat },
    B { op: BBin, dst: u32, a: u32, b: u32, n: u8, s: Splat },
    Not { dst: u32, a: u32, n: u8 },
    Dot { dst: u32, a: u32, b: u32, n: u8 },
    Length { dst: u32, a: u32, n: u8 },
    Distance { dst: u32, a: u32, b: u32, n: u8 },
    Normalize { dst: u32, a: u32, n: u8 },
    Cross { dst: u32, a: u32, b: u32 },
    MatVec { dst: u32, m: u32, v: u32, cols: u8, rows: u8 },
    VecMat { dst: u32, v: u32, m: u32, cols: u8, rows: u8 },
    Convert { dst: u32, src: u32, from: Kind, to: Kind, n: u8 },
    Select { dst: u32, cond: u32, a: u32, b: u32, n: u32 },
    Jump { to: u32 },
    JumpIf { cond: u32, to: u32 },
    JumpUnless { cond: u32, to: u32 },
    JumpEq { sel: u32, value: u32, to: u32 },
    Call { to: u32 },
    Ret,
    Kill,
    Tick,
    Generic(Box<Generic>),
}

/// GLSL forbids recursion; this only guards against malformed IR.
const MAX_DEPTH: usize = 64;

#[inline(always)]
fn f(mem: &[u32], a: u32) -> f32 {
    f32::from_bits(mem[a as usize])
}

#[inline(always)]
fn step(s: Splat, bit: u8) -> u32 {
    u32::from(s & bit == 0)
}

#[inline(always)]
fn lanes2<T, R>(
    mem: &mut [u32],
    dst: u32,
    a: u32,
    b: u32,
    n: u8,
    s: Splat,
    get: impl Fn(u32) -> T,
    put: impl Fn(R) -> u32,
    op: impl Fn(T, T) -> R,
) {
    let (da, db) = (step(s, 1), step(s, 2));
    for i in 0..n as u32 {
        let x = get(mem[(a + i * da) as usize]);
        let y = get(mem[(b + i * db) as usize]);
        mem[(dst + i) as usize] = put(op(x, y));
    }
}

#[inline(always)]
fn fl2(mem: &mut [u32], dst: u32, a: u32, b: u32, n: u8, s: Splat, op: impl Fn(f32, f32) -> f32) {
    lanes2(mem, dst, a, b, n, s, f32::from_bits, f32::to_bits, op)
}

#[inline(always)]
fn cmp<T: PartialOrd>(op: Cmp, x: T, y: T) -> u32 {
    u32::from(match op {
        Cmp::Eq => x == y,
        Cmp::Ne => x != y,
        Cmp::Lt => x < y,
        Cmp::Le => x <= y,
        Cmp::Gt => x > y,
        Cmp::Ge => x >= y,
    })
}

fn fun(op: FUn) -> fn(f32) -> f32 {
    match op {
        FUn::Neg => |x| -x,
        FUn::Abs => f32::abs,
        FUn::Sin => f32::sin,
        FUn::Cos => f32::cos,
        FUn::Tan => f32::tan,
        FUn::Asin => f32::asin,
        FUn::Acos => f32::acos,
        FUn::Atan => f32::atan,
        FUn::Sinh => f32::sinh,
        FUn::Cosh => f32::cosh,
        FUn::Tanh => f32::tanh,
        FUn::Asinh => f32::asinh,
        FUn::Acosh => f32::acosh,
        FUn::Atanh => f32::atanh,
        FUn::Radians => f32::to_radians,
        FUn::Degrees => f32::to_degrees,
        FUn::Ceil => f32::ceil,
        FUn::Floor => f32::floor,
        FUn::Round => f32::round_ties_even,
        FUn::Fract => |x| x - x.floor(),
        FUn::Trunc => f32::trunc,
        FUn::Exp => f32::exp,
        FUn::Exp2 => f32::exp2,
        FUn::Log => f32::ln,
        FUn::Log2 => f32::log2,
        FUn::Sqrt => f32::sqrt,
        FUn::InverseSqrt => |x| 1.0 / x.sqrt(),
        FUn::Sign => |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        },
        FUn::Saturate => |x| x.clamp(0.0, 1.0),
        FUn::Zero => |_| 0.0,
    }
}

#[inline(always)]
fn dot(mem: &[u32], a: u32, b: u32, n: u8) -> f32 {
    let mut acc = 0.0f32;
    for i in 0..n as u32 {
        acc += f(mem, a + i) * f(mem, b + i);
    }
    acc
}

#[inline(always)]
fn index(mem: &[u32], idx: u32, signed: bool, count: u32) -> u32 {
    let raw = mem[idx as usize];
    let i = if signed { (raw as i32).max(0) as u32 } else { raw };
    i.min(count.saturating_sub(1))
}

fn convert(w: u32, from: Kind, to: Kind) -> u32 {
    match (from, to) {
        (Kind::F, Kind::I) => (f32::from_bits(w) as i32) as u32,
        (Kind::F, Kind::U) => f32::from_bits(w) as u32,
        (Kind::F, Kind::B) => u32::from(f32::from_bits(w) != 0.0),
        (Kind::I, Kind::F) => (w as i32 as f32).to_bits(),
        (Kind::U, Kind::F) => (w as f32).to_bits(),
        (Kind::B, Kind::F) => if w != 0 { 1.0f32 } else { 0.0 }.to_bits(),
        (Kind::I | Kind::U | Kind::B, Kind::B) => u32::from(w != 0),
        _ => w,
    }
}

/// Execute from `pc` until the outermost return.
pub fn run(
    code: &[Op],
    module: &naga::Module,
    mem: &mut [u32],
    stack: &mut Vec<u32>,
    budget: &mut Budget<'_>,
    pc: u32,
) -> Result<(), ExecError> {
    stack.clear();
    let mut pc = pc as usize;
    loop {
        let op = &code[pc];
        pc += 1;
        match *op {
            Op::Copy { dst, src, n } => {
                let (d, s, n) = (dst as usize, src as usize, n as usize);
                mem.copy_within(s..s + n, d);
            }
            Op::Zero { dst, n } => mem[dst as usize..(dst + n) as usize].fill(0),
            Op::Set { dst, word } => mem[dst as usize] = word,
            Op::Splat { dst, src, n } => {
                let w = mem[src as usize];
                mem[dst as usize..dst as usize + n as usize].fill(w);
            }
            Op::Swizzle { dst, src, n, pattern } => {
                for i in 0..n as usize {
                    mem[dst as usize + i] = mem[src as usize + pattern[i] as usize];
                }
            }
            Op::Addr { dst, base, indirect, idx, signed, stride, count } => {
                let base = if indirect { mem[base as usize] } else { base };
                mem[dst as usize] = base + index(mem, idx, signed, count) * stride;
            }
            Op::Offset { dst, ptr, off } => mem[dst as usize] = mem[ptr as usize] + off,
            Op::Load { dst, ptr, n } => {
                let s = mem[ptr as usize] as usize;
                mem.copy_within(s..s + n as usize, dst as usize);
            }
            Op::Store { ptr, src, n } => {
                let d = mem[ptr as usize] as usize;
                mem.copy_within(src as usize..(src + n) as usize, d);
            }
            Op::F { op, dst, a, b, n, s } => match op {
                FBin::Add => fl2(mem, dst, a, b, n, s, |x, y| x + y),
                FBin::Sub => fl2(mem, dst, a, b, n, s, |x, y| x - y),
                FBin::Mul => fl2(mem, dst, a, b, n, s, |x, y| x * y),
                FBin::Div => fl2(mem, dst, a, b, n, s, |x, y| x / y),
                FBin::Rem => fl2(mem, dst, a, b, n, s, |x, y| x % y),
                FBin::Min => fl2(mem, dst, a, b, n, s, f32::min),
                FBin::Max => fl2(mem, dst, a, b, n, s, f32::max),
                FBin::Pow => fl2(mem, dst, a, b, n, s, f32::powf),
                FBin::Atan2 => fl2(mem, dst, a, b, n, s, f32::atan2),
                FBin::Step => fl2(mem, dst, a, b, n, s, |e, x| if x < e { 0.0 } else { 1.0 }),
            },
            Op::FCmp { op, dst, a, b, n, s } => {
                lanes2(mem, dst, a, b, n, s, f32::from_bits, |r| r, |x, y| cmp(op, x, y))
            }
            Op::F3 { op, dst, a, b, c, n, s } => {
                let (da, db, dc) = (step(s, 1), step(s, 2), step(s, 4));
                for i in 0..n as u32 {
                    let (x, y, z) = (f(mem, a + i * da), f(mem, b + i * db), f(mem, c + i * dc));
                    let r = match op {
                        FTri::Mix => x * (1.0 - z) + y * z,
                        FTri::Clamp => x.max(y).min(z),
                        FTri::SmoothStep => {
                            let t = ((z - x) / (y - x)).clamp(0.0, 1.0);
                            t * t * (3.0 - 2.0 * t)
                        }
                        FTri::Fma => x.mul_add(y, z),
                    };
                    mem[(dst + i) as usize] = r.to_bits();
                }
            }
            Op::FUn { op, dst, a, n } => {
                let g = fun(op);
                for i in 0..n as u32 {
                    mem[(dst + i) as usize] = g(f(mem, a + i)).to_bits();
                }
            }
            Op::I { op, unsigned, dst, a, b, n, s } => {
                let id = |w: u32| w;
                match (op, unsigned) {
                    (IBin::Add, _) => lanes2(mem, dst, a, b, n, s, id, id, u32::wrapping_add),
                    (IBin::Sub, _) => lanes2(mem, dst, a, b, n, s, id, id, u32::wrapping_sub),
                    (IBin::Mul, _) => lanes2(mem, dst, a, b, n, s, id, id, u32::wrapping_mul),
                    (IBin::And, _) => lanes2(mem, dst, a, b, n, s, id, id, |x, y| x & y),
                    (IBin::Or, _) => lanes2(mem, dst, a, b, n, s, id, id, |x, y| x | y),
                    (IBin::Xor, _) => lanes2(mem, dst, a, b, n, s, id, id, |x, y| x ^ y),
                    (IBin::Div, true) => lanes2(mem, dst, a, b, n, s, id, id, |x, y| x.checked_div(y).unwrap_or(0)),
                    (IBin::Rem, true) => lanes2(mem, dst, a, b, n, s, id, id, |x, y| x.checked_rem(y).unwrap_or(0)),
                    (IBin::Div, false) => lanes2(mem, dst, a, b, n, s, |w| w as i32, |r| r as u32, |x, y| {
                        if y == 0 {
                            0
                        } else {
                            x.wrapping_div(y)
                        }
                    }),
                    (IBin::Rem, false) => lanes2(mem, dst, a, b, n, s, |w| w as i32, |r| r as u32, |x, y| {
                        if y == 0 {
                            0
                        } else {
                            x.wrapping_rem(y)
                        }
                    }),
                }
            }
            Op::ICmp { op, unsigned, dst, a, b, n, s } => {
                if unsigned {
                    lanes2(mem, dst, a, b, n, s, |w| w, |r| r, |x, y| cmp(op, x, y))
                } else {
                    lanes2(mem, dst, a, b, n, s, |w| w as i32, |r| r, |x, y| cmp(op, x, y))
                }
            }
            Op::B { op, dst, a, b, n, s } => {
                let get = |w: u32| w != 0;
                match op {
                    BBin::And => lanes2(mem, dst, a, b, n, s, get, u32::from, |x, y| x && y),
                    BBin::Or => lanes2(mem, dst, a, b, n, s, get, u32::from, |x, y| x || y),
                    BBin::Eq => lanes2(mem, dst, a, b, n, s, get, u32::from, |x, y| x == y),
                    BBin::Ne => lanes2(mem, dst, a, b, n, s, get, u32::from, |x, y| x != y),
                }
            }
            Op::Not { dst, a, n } => {
                for i in 0..n as u32 {
                    mem[(dst + i) as usize] = u32::from(mem[(a + i) as usize] == 0);
                }
            }
            Op::Dot { dst, a, b, n } => mem[dst as usize] = dot(mem, a, b, n).to_bits(),
            Op::Length { dst, a, n } => mem[dst as usize] = dot(mem, a, a, n).sqrt().to_bits(),
            Op::Distance { dst, a, b, n } => {
                let mut acc = 0.0f32;
                for i in 0..n as u32 {
                    let d = f(mem, a + i) - f(mem, b + i);
                    acc += d * d;
                }
                mem[dst as usize] = acc.sqrt().to_bits();
            }
            Op::Normalize { dst, a, n } => {
                let inv = 1.0 / dot(mem, a, a, n).sqrt();
                for i in 0..n as u32 {
                    mem[(dst + i) as usize] = (f(mem, a + i) * inv).to_bits();
                }
            }
            Op::Cross { dst, a, b } => {
                let x: [f32; 3] = std::array::from_fn(|i| f(mem, a + i as u32));
                let y: [f32; 3] = std::array::from_fn(|i| f(mem, b + i as u32));
                let r = [x[1] * y[2] - x[2] * y[1], x[2] * y[0] - x[0] * y[2], x[0] * y[1] - x[1] * y[0]];
                for (i, v) in r.iter().enumerate() {
                    mem[dst as usize + i] = v.to_bits();
                }
            }
            Op::MatVec { dst, m, v, cols, rows } => {
                let mut out = [0.0f32; 4];
                for (r, o) in out.iter_mut().enumerate().take(rows as usize) {
                    let mut acc = 0.0f32;
                    for c in 0..cols as u32 {
                        acc += f(mem, m + c * rows as u32 + r as u32) * f(mem, v + c);
                    }
                    *o = acc;
                }
                for (i, o) in out.iter().enumerate().take(rows as usize) {
                    mem[dst as usize + i] = o.to_bits();
                }
            }
            Op::VecMat { dst, v, m, cols, rows } => {
                let mut out = [0.0f32; 4];
                for (c, o) in out.iter_mut().enumerate().take(cols as usize) {
                    let mut acc = 0.0f32;
                    for r in 0..rows as u32 {
                        acc += f(mem, m + c as u32 * rows as u32 + r) * f(mem, v + r);
                    }
                    *o = acc;
                }
                for (i, o) in out.iter().enumerate().take(cols as usize) {
                    mem[dst as usize + i] = o.to_bits();
                }
            }
            Op::Convert { dst, src, from, to, n } => {
                for i in 0..n as usize {
                    mem[dst as usize + i] = convert(mem[src as usize + i], from, to);
                }
            }
            Op::Select { dst, cond, a, b, n } => {
                let src = if mem[cond as usize] != 0 { a } else { b } as usize;
                mem.copy_within(src..src + n as usize, dst as usize);
            }
            Op::Jump { to } => pc = to as usize,
            Op::JumpIf { cond, to } => {
                if mem[cond as usize] != 0 {
                    pc = to as usize;
                }
            }
            Op::JumpUnless { cond, to } => {
                if mem[cond as usize] == 0 {
                    pc = to as usize;
                }
            }
            Op::JumpEq { sel, value, to } => {
                if mem[sel as usize] == value {
                    pc = to as usize;
                }
            }
            Op::Call { to } => {
                if stack.len() >= MAX_DEPTH {
                    return Err(ExecError::Unsupported("call depth limit".into()));
                }
                budget.tick()?;
                stack.push(pc as u32);
                pc = to as usize;
            }
            Op::Ret => match stack.pop() {
                Some(back) => pc = back as usize,
                None => return Ok(()),
            },
            Op::Kill => return Err(ExecError::Discard),
            Op::Tick => budget.tick()?,
            Op::Generic(ref g) => {
                let v = eval_pure(&g.expr, module, &[], |h| {
                    let (_, addr, shape) = g
                        .operands
                        .iter()
                        .find(|o| o.0 == h)
                        .ok_or_else(|| ExecError::Type("missing operand".into()))?;
                    read_value(mem, *addr, shape)
                })?
                .ok_or_else(|| ExecError::Unsupported(format!("expression {:?}", g.expr)))?;
                write_value(mem, g.dst, &v)?;
            }
        }
    }
}
