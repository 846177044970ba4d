//! Flat memory layout. Every value occupies a run of 32-bit words: scalars
//! one word, vectors one per lane, matrices column-major with no padding,
//! arrays and structs their elements in order. Pointers are one word
//! holding an address.

use std::sync::Arc;

use naga::{ScalarKind, TypeInner, UniqueArena};

use super::value::{scalar_len, Lanes, Mat, Num, Value};
use super::ExecError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    F,
    I,
    U,
    B,
}

impl Kind {
    pub fn of(k: ScalarKind) -> Self {
        match k {
            ScalarKind::Float | ScalarKind::AbstractFloat => Kind::F,
            ScalarKind::Sint | ScalarKind::AbstractInt => Kind::I,
            ScalarKind::Uint => Kind::U,
            ScalarKind::Bool => Kind::B,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Scalar(Kind),
    Vector(Kind, u8),
    Matrix { cols: u8, rows: u8 },
    Array(Box<Shape>, u32),
    Struct(Vec<Shape>),
    Pointer(Box<Shape>),
}

impl Shape {
    pub fn of(types: &UniqueArena<naga::Type>, inner: &TypeInner) -> Result<Shape, ExecError> {
        Ok(match inner {
            TypeInner::Scalar(s) => Shape::Scalar(Kind::of(s.kind)),
            TypeInner::Vector { size, scalar } => Shape::Vector(Kind::of(scalar.kind), scalar_len(*size)),
            TypeInner::Matrix { columns, rows, .. } => {
                Shape::Matrix { cols: scalar_len(*columns), rows: scalar_len(*rows) }
            }
            TypeInner::Array { base, size: naga::ArraySize::Constant(n), .. } => {
                Shape::Array(Box::new(Shape::of(types, &types[*base].inner)?), n.get())
            }
            TypeInner::Struct { members, .. } => Shape::Struct(
                members.iter().map(|m| Shape::of(types, &types[m.ty].inner)).collect::<Result<_, _>>()?,
            ),
            TypeInner::Pointer { base, .. } => Shape::Pointer(Box::new(Shape::of(types, &types[*base].inner)?)),
            TypeInner::ValuePointer { size, scalar, .. } => Shape::Pointer(Box::new(match size {
                None => Shape::Scalar(Kind::of(scalar.kind)),
                Some(s) => Shape::Vector(Kind::of(scalar.kind), scalar_len(*s)),
            })),
            other => return Err(ExecError::Unsupported(format!("type {other:?}"))),
        })
    }

    pub fn of_type(types: &UniqueArena<naga::Type>, ty: naga::Handle<naga::Type>) -> Result<Shape, ExecError> {
        Shape::of(types, &types[ty].inner)
    }

    pub fn words(&self) -> u32 {
        match self {
            Shape::Scalar(_) | Shape::Pointer(_) => 1,
            Shape::Vector(_, n) => *n as u32,
            Shape::Matrix { cols, rows } => *cols as u32 * *rows as u32,
            Shape::Array(e, n) => e.words() * n,
            Shape::Struct(ms) => ms.iter().map(Shape::words).sum(),
        }
    }

    /// Kind and lane count of a scalar or vector.
    pub fn lanes(&self) -> Option<(Kind, u8)> {
        match self {
            Shape::Scalar(k) => Some((*k, 1)),
            Shape::Vector(k, n) => Some((*k, *n)),
            _ => None,
        }
    }

    pub fn pointee(&self) -> Option<&Shape> {
        match self {
            Shape::Pointer(s) => Some(s),
            _ => None,
        }
    }

    /// Word offset and shape of component `i`, clamped to the last one.
    pub fn component(&self, i: u32) -> Result<(u32, Shape), ExecError> {
        Ok(match self {
            Shape::Vector(k, n) => (i.min(*n as u32 - 1), Shape::Scalar(*k)),
            Shape::Matrix { cols, rows } => (i.min(*cols as u32 - 1) * *rows as u32, Shape::Vector(Kind::F, *rows)),
            Shape::Array(e, n) => (i.min(n - 1) * e.words(), (**e).clone()),
            Shape::Struct(ms) => {
                let i = (i as usize).min(ms.len().saturating_sub(1));
                let m = ms.get(i).ok_or_else(|| ExecError::Type("index into empty struct".into()))?;
                (ms[..i].iter().map(Shape::words).sum(), m.clone())
            }
            other => return Err(ExecError::Type(format!("cannot index {other:?}"))),
        })
    }

    /// Element stride and count for dynamic indexing.
    pub fn stride(&self) -> Result<(u32, u32), ExecError> {
        Ok(match self {
            Shape::Vector(_, n) => (1, *n as u32),
            Shape::Matrix { cols, rows } => (*rows as u32, *cols as u32),
            Shape::Array(e, n) => (e.words(), *n),
            other => return Err(ExecError::Type(format!("cannot index {other:?}"))),
        })
    }
}

#[inline]
fn lane_word(lanes: &Lanes, i: usize) -> u32 {
    match lanes {
        Lanes::F(a) => a[i].to_bits(),
        Lanes::I(a) => a[i] as u32,
        Lanes::U(a) => a[i],
        Lanes::B(a) => a[i] as u32,
    }
}

fn read_num(mem: &[u32], addr: usize, kind: Kind, len: u8, vector: bool) -> Num {
    let w = |i: usize| if i < len as usize { mem[addr + i] } else { 0 };
    let lanes = match kind {
        Kind::F => Lanes::F(std::array::from_fn(|i| f32::from_bits(w(i)))),
        Kind::I => Lanes::I(std::array::from_fn(|i| w(i) as i32)),
        Kind::U => Lanes::U(std::array::from_fn(w)),
        Kind::B => Lanes::B(std::array::from_fn(|i| w(i) != 0)),
    };
    Num { lanes, len, vector }
}

pub fn read_value(mem: &[u32], addr: u32, shape: &Shape) -> Result<Value, ExecError> {
    let a = addr as usize;
    Ok(match shape {
        Shape::Scalar(k) => Value::Num(read_num(mem, a, *k, 1, false)),
        Shape::Vector(k, n) => Value::Num(read_num(mem, a, *k, *n, true)),
        Shape::Matrix { cols, rows } => {
            let mut m = Mat::zero(*cols, *rows);
            for c in 0..*cols as usize {
                for r in 0..*rows as usize {
                    m.set(c, r, f32::from_bits(mem[a + c * *rows as usize + r]));
                }
            }
            Value::Mat(m)
        }
        Shape::Array(e, n) => {
            let w = e.words();
            let items = (0..*n).map(|i| read_value(mem, addr + i * w, e)).collect::<Result<_, _>>()?;
            Value::Composite(Arc::new(items))
        }
        Shape::Struct(ms) => {
            let mut off = addr;
            let mut items = Vec::with_capacity(ms.len());
            for m in ms {
                items.push(read_value(mem, off, m)?);
                off += m.words();
            }
            Value::Composite(Arc::new(items))
        }
        Shape::Pointer(_) => return Err(ExecError::Type("pointer read as a value".into())),
    })
}

/// Write `v` at `addr`; returns the number of words written.
pub fn write_value(mem: &mut [u32], addr: u32, v: &Value) -> Result<u32, ExecError> {
    let a = addr as usize;
    match v {
        Value::Num(n) => {
            for i in 0..n.len as usize {
                mem[a + i] = lane_word(&n.lanes, i);
            }
            Ok(n.len as u32)
        }
        Value::Mat(m) => {
            let rows = m.rows as usize;
            for c in 0..m.cols as usize {
                for r in 0..rows {
                    mem[a + c * rows + r] = m.get(c, r).to_bits();
                }
            }
            Ok(m.cols as u32 * m.rows as u32)
        }
        Value::Composite(items) => {
            let mut off = addr;
            for item in items.iter() {
                off += write_value(mem, off, item)?;
            }
            Ok(off - addr)
        }
        other => Err(ExecError::Type(format!("cannot store a {}", other.kind_name()))),
    }
}
