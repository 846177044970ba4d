use std::sync::Arc;

use naga::{ScalarKind, TypeInner, UniqueArena};

use super::ExecError;

/// Up to four lanes of one scalar kind. Scalars are single-lane values
/// with `vector == false` on the owning [`Num`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lanes {
    F([f32; 4]),
    I([i32; 4]),
    U([u32; 4]),
    B([bool; 4]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num {
    pub lanes: Lanes,
    pub len: u8,
    pub vector: bool,
}

/// Column-major float matrix; element (col, row) lives at `col * 4 + row`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat {
    pub cols: u8,
    pub rows: u8,
    pub data: [f32; 16],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum Value {
    #[default]
    Undef,
    Num(Num),
    Mat(Mat),
    Composite(Arc<Vec<Value>>),
}

impl Num {
    pub fn f(x: f32) -> Self {
        Num { lanes: Lanes::F([x, 0.0, 0.0, 0.0]), len: 1, vector: false }
    }

    pub fn i(x: i32) -> Self {
        Num { lanes: Lanes::I([x, 0, 0, 0]), len: 1, vector: false }
    }

    pub fn u(x: u32) -> Self {
        Num { lanes: Lanes::U([x, 0, 0, 0]), len: 1, vector: false }
    }

    pub fn b(x: bool) -> Self {
        Num { lanes: Lanes::B([x, false, false, false]), len: 1, vector: false }
    }

    pub fn fvec(xs: &[f32]) -> Self {
        let mut data = [0.0; 4];
        data[..xs.len()].copy_from_slice(xs);
        Num { lanes: Lanes::F(data), len: xs.len() as u8, vector: true }
    }

    pub fn splat(self, len: u8) -> Self {
        let l = match self.lanes {
            Lanes::F(a) => Lanes::F([a[0]; 4]),
            Lanes::I(a) => Lanes::I([a[0]; 4]),
            Lanes::U(a) => Lanes::U([a[0]; 4]),
            Lanes::B(a) => Lanes::B([a[0]; 4]),
        };
        Num { lanes: l, len, vector: true }
    }

    pub fn zero(kind: ScalarKind, len: u8, vector: bool) -> Self {
        let lanes = match kind {
            ScalarKind::Float | ScalarKind::AbstractFloat => Lanes::F([0.0; 4]),
            ScalarKind::Sint | ScalarKind::AbstractInt => Lanes::I([0; 4]),
            ScalarKind::Uint => Lanes::U([0; 4]),
            ScalarKind::Bool => Lanes::B([false; 4]),
        };
        Num { lanes, len, vector }
    }

    pub fn is_scalar(&self) -> bool {
        !self.vector
    }

    pub fn floats(&self) -> Result<[f32; 4], ExecError> {
        match self.lanes {
            Lanes::F(a) => Ok(a),
            _ => Err(ExecError::Type("expected float operand".into())),
        }
    }

    pub fn as_f32(&self) -> Result<f32, ExecError> {
        Ok(self.floats()?[0])
    }

    pub fn as_bool(&self) -> Result<bool, ExecError> {
        match self.lanes {
            Lanes::B(a) => Ok(a[0]),
            _ => Err(ExecError::Type("expected bool operand".into())),
        }
    }

    /// Interpret lane 0 as an index; negative values clamp to zero.
    pub fn as_index(&self) -> Result<u32, ExecError> {
        match self.lanes {
            Lanes::I(a) => Ok(a[0].max(0) as u32),
            Lanes::U(a) => Ok(a[0]),
            _ => Err(ExecError::Type("index must be an integer".into())),
        }
    }

    pub fn lane(&self, i: usize) -> Num {
        let lanes = match self.lanes {
            Lanes::F(a) => Lanes::F([a[i], 0.0, 0.0, 0.0]),
            Lanes::I(a) => Lanes::I([a[i], 0, 0, 0]),
            Lanes::U(a) => Lanes::U([a[i], 0, 0, 0]),
            Lanes::B(a) => Lanes::B([a[i], false, false, false]),
        };
        Num { lanes, len: 1, vector: false }
    }

    pub fn set_lane(&mut self, i: usize, v: Num) -> Result<(), ExecError> {
        match (&mut self.lanes, v.lanes) {
            (Lanes::F(a), Lanes::F(b)) => a[i] = b[0],
            (Lanes::I(a), Lanes::I(b)) => a[i] = b[0],
            (Lanes::U(a), Lanes::U(b)) => a[i] = b[0],
            (Lanes::B(a), Lanes::B(b)) => a[i] = b[0],
            _ => return Err(ExecError::Type("lane store kind mismatch".into())),
        }
        Ok(())
    }
}

impl Mat {
    pub fn zero(cols: u8, rows: u8) -> Self {
        Mat { cols, rows, data: [0.0; 16] }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.data[col * 4 + row]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f32) {
        self.data[col * 4 + row] = v;
    }

    pub fn column(&self, col: usize) -> Num {
        let mut d = [0.0; 4];
        d[..self.rows as usize].copy_from_slice(&self.data[col * 4..col * 4 + self.rows as usize]);
        Num { lanes: Lanes::F(d), len: self.rows, vector: true }
    }

    pub fn set_column(&mut self, col: usize, v: &Num) -> Result<(), ExecError> {
        let f = v.floats()?;
        for r in 0..self.rows as usize {
            self.set(col, r, f[r]);
        }
        Ok(())
    }
}

impl Value {
    pub fn num(&self) -> Result<Num, ExecError> {
        match self {
            Value::Num(n) => Ok(*n),
            Value::Undef => Err(ExecError::Type("read of an unevaluated expression".into())),
            other => Err(ExecError::Type(format!("expected scalar or vector, got {}", other.kind_name()))),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Undef => "undefined",
            Value::Num(n) if n.vector => "vector",
            Value::Num(_) => "scalar",
            Value::Mat(_) => "matrix",
            Value::Composite(_) => "composite",
        }
    }

    /// Component `index` of a vector, matrix column, or composite element.
    /// Out-of-range indices clamp to the last element.
    pub fn index(&self, index: u32) -> Result<Value, ExecError> {
        let i = index as usize;
        match self {
            Value::Num(n) if n.vector => Ok(Value::Num(n.lane(i.min(n.len as usize - 1)))),
            Value::Mat(m) => Ok(Value::Num(m.column(i.min(m.cols as usize - 1)))),
            Value::Composite(items) => items
                .get(i.min(items.len().saturating_sub(1)))
                .cloned()
                .ok_or_else(|| ExecError::Type("index into empty composite".into())),
            other => Err(ExecError::Type(format!("cannot index a {}", other.kind_name()))),
        }
    }
}

pub fn scalar_len(size: naga::VectorSize) -> u8 {
    size as u8
}

/// The zero value for a type, used for uninitialized locals and privates.
pub fn zero_value(types: &UniqueArena<naga::Type>, ty: naga::Handle<naga::Type>) -> Result<Value, ExecError> {
    Ok(match &types[ty].inner {
        TypeInner::Scalar(s) => Value::Num(Num::zero(s.kind, 1, false)),
        TypeInner::Vector { size, scalar } => Value::Num(Num::zero(scalar.kind, scalar_len(*size), true)),
        TypeInner::Matrix { columns, rows, .. } => Value::Mat(Mat::zero(scalar_len(*columns), scalar_len(*rows))),
        TypeInner::Array { base, size, .. } => {
            let n = match size {
                naga::ArraySize::Constant(n) => n.get() as usize,
                _ => return Err(ExecError::Unsupported("runtime-sized array".into())),
            };
            let elem = zero_value(types, *base)?;
            Value::Composite(Arc::new(vec![elem; n]))
        }
        TypeInner::Struct { members, .. } => {
            let items = members
                .iter()
                .map(|m| zero_value(types, m.ty))
                .collect::<Result<Vec<_>, _>>()?;
            Value::Composite(Arc::new(items))
        }
        other => return Err(ExecError::Unsupported(format!("type {other:?}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_clamps() {
        let v = Value::Num(Num::fvec(&[1.0, 2.0]));
        assert_eq!(v.index(9).unwrap(), Value::Num(Num::f(2.0)));
    }
}
