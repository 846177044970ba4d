//! Lowering of validated naga IR to bytecode.
//!
//! Each expression gets a fixed memory slot when its `Emit` is reached.
//! Expressions outside any `Emit` range are constant, arguments, or
//! variable references; constants are evaluated once into the memory image.

use naga::{
    valid::FunctionInfo, BinaryOperator as B, Block, Expression, Handle, MathFunction as M, Statement,
    UnaryOperator,
};
use smallvec::SmallVec;

use super::layout::{write_value, Kind, Shape};
use super::value::Value;
use super::vm::{BBin, Cmp, FBin, FTri, FUn, Generic, IBin, Op};
use super::{eval_pure, mark_emitted, ExecError};

#[derive(Debug, Clone, Copy)]
enum Place {
    /// A value stored at this address.
    Val(u32),
    /// A pointer whose target address is known.
    Ptr(u32),
    /// A pointer whose target address is stored at this address.
    PtrAt(u32),
}

#[derive(Debug)]
pub struct Signature {
    pub pc: u32,
    pub args: Vec<(u32, bool)>,
    pub ret: Option<(u32, u32)>,
}

pub struct Builder<'a> {
    pub module: &'a naga::Module,
    pub constants: &'a [Value],
    pub code: Vec<Op>,
    pub mem: Vec<u32>,
    pub globals: Vec<u32>,
    pub sigs: Vec<Signature>,
}

enum Scope {
    Loop { breaks: Vec<usize>, continues: Vec<usize> },
    Switch { breaks: Vec<usize> },
}

struct FnCompiler<'a, 'b> {
    b: &'b mut Builder<'a>,
    func: &'a naga::Function,
    info: &'a FunctionInfo,
    places: Vec<Option<Place>>,
    locals: Vec<u32>,
    ret: Option<(u32, u32)>,
    scopes: Vec<Scope>,
    consts: Vec<Option<Value>>,
    late_inits: Vec<(Handle<Expression>, u32, u32)>,
}

fn unsupported(what: impl Into<String>) -> ExecError {
    ExecError::Unsupported(what.into())
}

impl<'a> Builder<'a> {
    pub fn new(module: &'a naga::Module, constants: &'a [Value]) -> Self {
        Self { module, constants, code: Vec::new(), mem: Vec::new(), globals: Vec::new(), sigs: Vec::new() }
    }

    pub fn alloc(&mut self, words: u32) -> u32 {
        let at = self.mem.len() as u32;
        self.mem.resize(self.mem.len() + words as usize, 0);
        at
    }

    pub fn shape(&self, ty: Handle<naga::Type>) -> Result<Shape, ExecError> {
        Shape::of_type(&self.module.types, ty)
    }

    pub fn function(&mut self, func: &'a naga::Function, info: &'a FunctionInfo) -> Result<Signature, ExecError> {
        let mut args = Vec::with_capacity(func.arguments.len());
        for a in &func.arguments {
            let shape = self.shape(a.ty)?;
            let addr = self.alloc(shape.words());
            args.push((addr, matches!(shape, Shape::Pointer(_))));
        }
        let ret = match &func.result {
            Some(r) => {
                let w = self.shape(r.ty)?.words();
                Some((self.alloc(w), w))
            }
            None => None,
        };
        let mut locals = Vec::with_capacity(func.local_variables.len());
        for (_, l) in func.local_variables.iter() {
            let w = self.shape(l.ty)?.words();
            locals.push(self.alloc(w));
        }
        let pc = self.code.len() as u32;
        let mut fc = FnCompiler {
            b: self,
            func,
            info,
            places: vec![None; func.expressions.len()],
            locals,
            ret,
            scopes: Vec::new(),
            consts: vec![None; func.expressions.len()],
            late_inits: Vec::new(),
        };
        fc.prologue(&args)?;
        fc.block(&func.body)?;
        fc.b.code.push(Op::Ret);
        Ok(Signature { pc, args, ret })
    }
}

impl<'a> FnCompiler<'a, '_> {
    fn shape(&self, h: Handle<Expression>) -> Result<Shape, ExecError> {
        Shape::of(&self.b.module.types, self.info[h].ty.inner_with(&self.b.module.types))
    }

    fn place(&self, h: Handle<Expression>) -> Result<Place, ExecError> {
        self.places[h.index()].ok_or_else(|| ExecError::Type(format!("expression {h:?} used before evaluation")))
    }

    fn val(&self, h: Handle<Expression>) -> Result<u32, ExecError> {
        match self.place(h)? {
            Place::Val(a) => Ok(a),
            _ => Err(ExecError::Type("pointer used as a value".into())),
        }
    }

    fn emit(&mut self, op: Op) {
        self.b.code.push(op);
    }

    fn here(&self) -> u32 {
        self.b.code.len() as u32
    }

    fn patch(&mut self, at: usize, target: u32) {
        match &mut self.b.code[at] {
            Op::Jump { to } | Op::JumpIf { to, .. } | Op::JumpUnless { to, .. } | Op::JumpEq { to, .. } => {
                *to = target
            }
            _ => unreachable!("patching a non-jump"),
        }
    }

    fn prologue(&mut self, args: &[(u32, bool)]) -> Result<(), ExecError> {
        let func = self.func;
        let mut emitted = vec![false; func.expressions.len()];
        mark_emitted(&func.body, &mut emitted);
        let mut deferred = Vec::new();
        for (h, e) in func.expressions.iter() {
            let i = h.index();
            if emitted[i] {
                continue;
            }
            let place = match e {
                Expression::FunctionArgument(a) => {
                    let (addr, pointer) = args[*a as usize];
                    Some(if pointer { Place::PtrAt(addr) } else { Place::Val(addr) })
                }
                Expression::LocalVariable(l) => Some(Place::Ptr(self.locals[l.index()])),
                Expression::GlobalVariable(g) => Some(Place::Ptr(self.b.globals[g.index()])),
                Expression::CallResult(_) => None,
                _ => {
                    match self.fold(h) {
                        Some(v) => {
                            let addr = self.b.alloc(self.shape(h)?.words());
                            write_value(&mut self.b.mem, addr, &v)?;
                            self.consts[i] = Some(v);
                            Some(Place::Val(addr))
                        }
                        None => {
                            deferred.push(h);
                            None
                        }
                    }
                }
            };
            self.places[i] = place;
        }
        for h in deferred {
            self.expr(h)?;
        }
        for (l, local) in func.local_variables.iter() {
            let dst = self.locals[l.index()];
            let n = self.b.shape(local.ty)?.words();
            let Some(init) = local.init else {
                self.emit(Op::Zero { dst, n });
                continue;
            };
            if let Some(Place::Val(src)) = self.places[init.index()] {
                self.emit(Op::Copy { dst, src, n });
            } else if let Some(v) = self.fold(init) {
                let src = self.b.alloc(n);
                write_value(&mut self.b.mem, src, &v)?;
                self.emit(Op::Copy { dst, src, n });
            } else {
                // Runtime initializers take effect once their value is emitted.
                self.emit(Op::Zero { dst, n });
                self.late_inits.push((init, dst, n));
            }
        }
        Ok(())
    }

    /// Constant-fold an expression whose operands are all constant.
    fn fold(&mut self, h: Handle<Expression>) -> Option<Value> {
        if let Some(v) = &self.consts[h.index()] {
            return Some(v.clone());
        }
        let e = &self.func.expressions[h];
        if matches!(
            e,
            Expression::FunctionArgument(_)
                | Expression::LocalVariable(_)
                | Expression::GlobalVariable(_)
                | Expression::CallResult(_)
                | Expression::Load { .. }
        ) {
            return None;
        }
        for o in operands_of(e) {
            self.fold(o)?;
        }
        let consts = &self.consts;
        let v = eval_pure(e, self.b.module, self.b.constants, |o| {
            consts[o.index()].clone().ok_or_else(|| ExecError::Type("runtime operand".into()))
        })
        .ok()
        .flatten()?;
        self.consts[h.index()] = Some(v.clone());
        Some(v)
    }

    fn block(&mut self, block: &'a Block) -> Result<(), ExecError> {
        for stmt in block.iter() {
            self.statement(stmt)?;
        }
        Ok(())
    }

    fn statement(&mut self, stmt: &'a Statement) -> Result<(), ExecError> {
        match stmt {
            Statement::Emit(range) => {
                for h in range.clone() {
                    self.expr(h)?;
                }
            }
            Statement::Block(b) => self.block(b)?,
            Statement::If { condition, accept, reject } => {
                let cond = self.val(*condition)?;
                let skip = self.b.code.len();
                self.emit(Op::JumpUnless { cond, to: 0 });
                self.block(accept)?;
                if reject.is_empty() {
                    let end = self.here();
                    self.patch(skip, end);
                } else {
                    let exit = self.b.code.len();
                    self.emit(Op::Jump { to: 0 });
                    let other = self.here();
                    self.patch(skip, other);
                    self.block(reject)?;
                    let end = self.here();
                    self.patch(exit, end);
                }
            }
            Statement::Switch { selector, cases } => {
                let sel = self.val(*selector)?;
                let mut tests = Vec::with_capacity(cases.len());
                for c in cases.iter() {
                    let value = match c.value {
                        naga::SwitchValue::I32(v) => v as u32,
                        naga::SwitchValue::U32(v) => v,
                        naga::SwitchValue::Default => continue,
                    };
                    tests.push(self.b.code.len());
                    self.emit(Op::JumpEq { sel, value, to: 0 });
                }
                let fallback = self.b.code.len();
                self.emit(Op::Jump { to: 0 });
                self.scopes.push(Scope::Switch { breaks: vec![fallback] });
                let mut next_test = tests.into_iter();
                for c in cases.iter() {
                    let start = self.here();
                    match c.value {
                        naga::SwitchValue::Default => {
                            self.patch(fallback, start);
                            if let Some(Scope::Switch { breaks }) = self.scopes.last_mut() {
                                breaks.retain(|&b| b != fallback);
                            }
                        }
                        _ => {
                            let t = next_test.next().expect("one test per valued case");
                            self.patch(t, start);
                        }
                    }
                    self.block(&c.body)?;
                    if !c.fall_through {
                        self.jump_out()?;
                    }
                }
                let end = self.here();
                let Some(Scope::Switch { breaks }) = self.scopes.pop() else { unreachable!() };
                for b in breaks {
                    self.patch(b, end);
                }
            }
            Statement::Loop { body, continuing, break_if } => {
                let top = self.here();
                self.emit(Op::Tick);
                self.scopes.push(Scope::Loop { breaks: Vec::new(), continues: Vec::new() });
                self.block(body)?;
                let cont = self.here();
                if let Some(Scope::Loop { continues, .. }) = self.scopes.last_mut() {
                    let continues = std::mem::take(continues);
                    for c in continues {
                        self.patch(c, cont);
                    }
                }
                self.block(continuing)?;
                if let Some(b) = break_if {
                    let cond = self.val(*b)?;
                    let at = self.b.code.len();
                    self.emit(Op::JumpIf { cond, to: 0 });
                    if let Some(Scope::Loop { breaks, .. }) = self.scopes.last_mut() {
                        breaks.push(at);
                    }
                }
                self.emit(Op::Jump { to: top });
                let end = self.here();
                let Some(Scope::Loop { breaks, .. }) = self.scopes.pop() else { unreachable!() };
                for b in breaks {
                    self.patch(b, end);
                }
            }
            Statement::Break => self.jump_out()?,
            Statement::Continue => {
                let at = self.b.code.len();
                self.emit(Op::Jump { to: 0 });
                let scope = self.scopes.iter_mut().rev().find(|s| matches!(s, Scope::Loop { .. }));
                match scope {
                    Some(Scope::Loop { continues, .. }) => continues.push(at),
                    _ => return Err(ExecError::Type("continue outside a loop".into())),
                }
            }
            Statement::Return { value } => {
                if let (Some(v), Some((dst, n))) = (value, self.ret) {
                    let src = self.val(*v)?;
                    self.emit(Op::Copy { dst, src, n });
                }
                self.emit(Op::Ret);
            }
            Statement::Kill => self.emit(Op::Kill),
            Statement::ControlBarrier(_) | Statement::MemoryBarrier(_) => {}
            Statement::Store { pointer, value } => {
                let src = self.val(*value)?;
                let n = self.shape(*value)?.words();
                match self.place(*pointer)? {
                    Place::Ptr(dst) => self.emit(Op::Copy { dst, src, n }),
                    Place::PtrAt(ptr) => self.emit(Op::Store { ptr, src, n }),
                    Place::Val(_) => return Err(ExecError::Type("store through a value".into())),
                }
            }
            Statement::Call { function, arguments, result } => {
                let sig = self
                    .b
                    .sigs
                    .get(function.index())
                    .ok_or_else(|| ExecError::Type("call to an undefined function".into()))?;
                let (to, params, ret) = (sig.pc, sig.args.clone(), sig.ret);
                for (&(dst, _), arg) in params.iter().zip(arguments) {
                    match self.place(*arg)? {
                        Place::Val(src) => {
                            let n = self.shape(*arg)?.words();
                            self.emit(Op::Copy { dst, src, n });
                        }
                        Place::Ptr(target) => self.emit(Op::Set { dst, word: target }),
                        Place::PtrAt(src) => self.emit(Op::Copy { dst, src, n: 1 }),
                    }
                }
                self.emit(Op::Call { to });
                if let (Some(r), Some((src, n))) = (result, ret) {
                    let dst = self.b.alloc(n);
                    self.emit(Op::Copy { dst, src, n });
                    self.places[r.index()] = Some(Place::Val(dst));
                }
            }
            other => return Err(unsupported(format!("statement {other:?}"))),
        }
        Ok(())
    }

    fn jump_out(&mut self) -> Result<(), ExecError> {
        let at = self.b.code.len();
        self.emit(Op::Jump { to: 0 });
        match self.scopes.last_mut() {
            Some(Scope::Loop { breaks, .. } | Scope::Switch { breaks }) => {
                breaks.push(at);
                Ok(())
            }
            None => Err(ExecError::Type("break outside a loop or switch".into())),
        }
    }

    fn expr(&mut self, h: Handle<Expression>) -> Result<(), ExecError> {
        if self.places[h.index()].is_some() {
            return Ok(());
        }
        let place = self.lower(h)?;
        self.places[h.index()] = Some(place);
        if let Place::Val(src) = place {
            let inits: Vec<_> = self.late_inits.iter().filter(|l| l.0 == h).map(|l| (l.1, l.2)).collect();
            for (dst, n) in inits {
                self.emit(Op::Copy { dst, src, n });
            }
        }
        Ok(())
    }

    fn slot(&mut self, h: Handle<Expression>) -> Result<u32, ExecError> {
        let w = self.shape(h)?.words();
        Ok(self.b.alloc(w))
    }

    fn lower(&mut self, h: Handle<Expression>) -> Result<Place, ExecError> {
        let func = self.func;
        let e = &func.expressions[h];
        match e {
            Expression::Literal(_) | Expression::Constant(_) | Expression::ZeroValue(_) => {
                let v = eval_pure(e, self.b.module, self.b.constants, |_| Err(ExecError::Type("operand".into())))?
                    .ok_or_else(|| unsupported(format!("expression {e:?}")))?;
                let dst = self.slot(h)?;
                write_value(&mut self.b.mem, dst, &v)?;
                return Ok(Place::Val(dst));
            }
            Expression::Compose { components, .. } => {
                let dst = self.slot(h)?;
                let mut off = 0;
                for c in components {
                    let src = self.val(*c)?;
                    let n = self.shape(*c)?.words();
                    self.emit(Op::Copy { dst: dst + off, src, n });
                    off += n;
                }
                return Ok(Place::Val(dst));
            }
            Expression::Splat { size, value } => {
                let src = self.val(*value)?;
                let dst = self.slot(h)?;
                self.emit(Op::Splat { dst, src, n: *size as u8 });
                return Ok(Place::Val(dst));
            }
            Expression::Swizzle { size, vector, pattern } => {
                let src = self.val(*vector)?;
                let dst = self.slot(h)?;
                let pattern = pattern.map(|c| c as u8);
                self.emit(Op::Swizzle { dst, src, n: *size as u8, pattern });
                return Ok(Place::Val(dst));
            }
            Expression::AccessIndex { base, index } => {
                let shape = self.shape(*base)?;
                return match self.place(*base)? {
                    Place::Val(a) => Ok(Place::Val(a + shape.component(*index)?.0)),
                    Place::Ptr(a) => Ok(Place::Ptr(a + pointee(&shape)?.component(*index)?.0)),
                    Place::PtrAt(p) => {
                        let off = pointee(&shape)?.component(*index)?.0;
                        let dst = self.b.alloc(1);
                        self.emit(Op::Offset { dst, ptr: p, off });
                        Ok(Place::PtrAt(dst))
                    }
                };
            }
            Expression::Access { base, index } => {
                let shape = self.shape(*base)?;
                let idx = self.val(*index)?;
                let signed = !matches!(self.shape(*index)?.lanes(), Some((Kind::U, _)));
                let addr = self.b.alloc(1);
                return match self.place(*base)? {
                    Place::Val(a) => {
                        let (stride, count) = shape.stride()?;
                        self.emit(Op::Addr { dst: addr, base: a, indirect: false, idx, signed, stride, count });
                        let dst = self.slot(h)?;
                        let n = self.shape(h)?.words();
                        self.emit(Op::Load { dst, ptr: addr, n });
                        Ok(Place::Val(dst))
                    }
                    Place::Ptr(a) => {
                        let (stride, count) = pointee(&shape)?.stride()?;
                        self.emit(Op::Addr { dst: addr, base: a, indirect: false, idx, signed, stride, count });
                        Ok(Place::PtrAt(addr))
                    }
                    Place::PtrAt(p) => {
                        let (stride, count) = pointee(&shape)?.stride()?;
                        self.emit(Op::Addr { dst: addr, base: p, indirect: true, idx, signed, stride, count });
                        Ok(Place::PtrAt(addr))
                    }
                };
            }
            Expression::Load { pointer } => {
                let dst = self.slot(h)?;
                let n = self.shape(h)?.words();
                match self.place(*pointer)? {
                    Place::Ptr(src) => self.emit(Op::Copy { dst, src, n }),
                    Place::PtrAt(ptr) => self.emit(Op::Load { dst, ptr, n }),
                    Place::Val(_) => return Err(ExecError::Type("load from a value".into())),
                }
                return Ok(Place::Val(dst));
            }
            Expression::FunctionArgument(_)
            | Expression::LocalVariable(_)
            | Expression::GlobalVariable(_)
            | Expression::CallResult(_) => {
                return Err(ExecError::Type(format!("{e:?} has no place")));
            }
            _ => {}
        }
        let dst = self.slot(h)?;
        if let Some(op) = self.fast(e, dst)? {
            self.emit(op);
        } else {
            self.generic(e, dst)?;
        }
        Ok(Place::Val(dst))
    }

    fn lanes(&self, h: Handle<Expression>) -> Result<Option<(Kind, u8, u32)>, ExecError> {
        Ok(match self.shape(h)?.lanes() {
            Some((k, n)) => Some((k, n, self.val(h)?)),
            None => None,
        })
    }

    /// A specialized instruction, or `None` when the generic path applies.
    fn fast(&self, e: &Expression, dst: u32) -> Result<Option<Op>, ExecError> {
        Ok(match *e {
            Expression::Binary { op, left, right } => {
                let (ls, rs) = (self.shape(left)?, self.shape(right)?);
                match (&ls, &rs) {
                    (Shape::Matrix { cols, rows }, Shape::Vector(Kind::F, n)) if op == B::Multiply && n == cols => {
                        let (m, v) = (self.val(left)?, self.val(right)?);
                        return Ok(Some(Op::MatVec { dst, m, v, cols: *cols, rows: *rows }));
                    }
                    (Shape::Vector(Kind::F, n), Shape::Matrix { cols, rows }) if op == B::Multiply && n == rows => {
                        let (v, m) = (self.val(left)?, self.val(right)?);
                        return Ok(Some(Op::VecMat { dst, v, m, cols: *cols, rows: *rows }));
                    }
                    _ => {}
                }
                let (Some((lk, ln, a)), Some((rk, rn, b))) = (self.lanes(left)?, self.lanes(right)?) else {
                    return Ok(None);
                };
                if lk != rk || (ln != rn && ln != 1 && rn != 1) {
                    return Ok(None);
                }
                let n = ln.max(rn);
                let s = u8::from(ln == 1 && n > 1) | (u8::from(rn == 1 && n > 1) << 1);
                let cmp = match op {
                    B::Equal => Some(Cmp::Eq),
                    B::NotEqual => Some(Cmp::Ne),
                    B::Less => Some(Cmp::Lt),
                    B::LessEqual => Some(Cmp::Le),
                    B::Greater => Some(Cmp::Gt),
                    B::GreaterEqual => Some(Cmp::Ge),
                    _ => None,
                };
                match lk {
                    Kind::F => match cmp {
                        Some(c) => Some(Op::FCmp { op: c, dst, a, b, n, s }),
                        None => {
                            let f = match op {
                                B::Add => FBin::Add,
                                B::Subtract => FBin::Sub,
                                B::Multiply => FBin::Mul,
                                B::Divide => FBin::Div,
                                B::Modulo => FBin::Rem,
                                _ => return Ok(None),
                            };
                            Some(Op::F { op: f, dst, a, b, n, s })
                        }
                    },
                    Kind::I | Kind::U => {
                        let unsigned = lk == Kind::U;
                        match cmp {
                            Some(c) => Some(Op::ICmp { op: c, unsigned, dst, a, b, n, s }),
                            None => {
                                let i = match op {
                                    B::Add => IBin::Add,
                                    B::Subtract => IBin::Sub,
                                    B::Multiply => IBin::Mul,
                                    B::Divide => IBin::Div,
                                    B::Modulo => IBin::Rem,
                                    B::And => IBin::And,
                                    B::InclusiveOr => IBin::Or,
                                    B::ExclusiveOr => IBin::Xor,
                                    _ => return Ok(None),
                                };
                                Some(Op::I { op: i, unsigned, dst, a, b, n, s })
                            }
                        }
                    }
                    Kind::B => {
                        let o = match op {
                            B::LogicalAnd | B::And => BBin::And,
                            B::LogicalOr | B::InclusiveOr => BBin::Or,
                            B::Equal => BBin::Eq,
                            B::NotEqual | B::ExclusiveOr => BBin::Ne,
                            _ => return Ok(None),
                        };
                        Some(Op::B { op: o, dst, a, b, n, s })
                    }
                }
            }
            Expression::Unary { op, expr } => match (op, self.lanes(expr)?) {
                (UnaryOperator::Negate, Some((Kind::F, n, a))) => Some(Op::FUn { op: FUn::Neg, dst, a, n }),
                (UnaryOperator::LogicalNot | UnaryOperator::BitwiseNot, Some((Kind::B, n, a))) => {
                    Some(Op::Not { dst, a, n })
                }
                _ => None,
            },
            Expression::Select { condition, accept, reject } => {
                let cond_scalar = matches!(self.shape(condition)?, Shape::Scalar(_));
                let (sa, sr) = (self.shape(accept)?, self.shape(reject)?);
                if !cond_scalar || sa != sr {
                    return Ok(None);
                }
                let (cond, a, b) = (self.val(condition)?, self.val(accept)?, self.val(reject)?);
                Some(Op::Select { dst, cond, a, b, n: sa.words() })
            }
            Expression::As { expr, kind, convert } => {
                let Some((from, n, src)) = self.lanes(expr)? else { return Ok(None) };
                let to = Kind::of(kind);
                match convert {
                    Some(_) => Some(Op::Convert { dst, src, from, to, n }),
                    None if from != Kind::B && to != Kind::B => Some(Op::Copy { dst, src, n: n as u32 }),
                    None => None,
                }
            }
            Expression::Derivative { expr, .. } => {
                self.lanes(expr)?.map(|(_, n, a)| Op::FUn { op: FUn::Zero, dst, a, n })
            }
            Expression::Math { fun, arg, arg1, arg2, .. } => self.math(fun, arg, arg1, arg2, dst)?,
            _ => None,
        })
    }

    fn math(
        &self,
        fun: M,
        arg: Handle<Expression>,
        arg1: Option<Handle<Expression>>,
        arg2: Option<Handle<Expression>>,
        dst: u32,
    ) -> Result<Option<Op>, ExecError> {
        let Some((Kind::F, n0, a)) = self.lanes(arg)? else { return Ok(None) };
        let float = |h: Option<Handle<Expression>>| -> Result<Option<(u8, u32)>, ExecError> {
            match h {
                Some(h) => match self.lanes(h)? {
                    Some((Kind::F, n, x)) => Ok(Some((n, x))),
                    _ => Ok(None),
                },
                None => Ok(None),
            }
        };
        let un = match fun {
            M::Abs => Some(FUn::Abs),
            M::Sin => Some(FUn::Sin),
            M::Cos => Some(FUn::Cos),
            M::Tan => Some(FUn::Tan),
            M::Asin => Some(FUn::Asin),
            M::Acos => Some(FUn::Acos),
            M::Atan => Some(FUn::Atan),
            M::Sinh => Some(FUn::Sinh),
            M::Cosh => Some(FUn::Cosh),
            M::Tanh => Some(FUn::Tanh),
            M::Asinh => Some(FUn::Asinh),
            M::Acosh => Some(FUn::Acosh),
            M::Atanh => Some(FUn::Atanh),
            M::Radians => Some(FUn::Radians),
            M::Degrees => Some(FUn::Degrees),
            M::Ceil => Some(FUn::Ceil),
            M::Floor => Some(FUn::Floor),
            M::Round => Some(FUn::Round),
            M::Fract => Some(FUn::Fract),
            M::Trunc => Some(FUn::Trunc),
            M::Exp => Some(FUn::Exp),
            M::Exp2 => Some(FUn::Exp2),
            M::Log => Some(FUn::Log),
            M::Log2 => Some(FUn::Log2),
            M::Sqrt => Some(FUn::Sqrt),
            M::InverseSqrt => Some(FUn::InverseSqrt),
            M::Sign => Some(FUn::Sign),
            M::Saturate => Some(FUn::Saturate),
            _ => None,
        };
        if let Some(op) = un {
            return Ok(Some(Op::FUn { op, dst, a, n: n0 }));
        }
        match fun {
            M::Length => return Ok(Some(Op::Length { dst, a, n: n0 })),
            M::Normalize => return Ok(Some(Op::Normalize { dst, a, n: n0 })),
            _ => {}
        }
        let Some((n1, b)) = float(arg1)? else { return Ok(None) };
        let bin = match fun {
            M::Min => Some(FBin::Min),
            M::Max => Some(FBin::Max),
            M::Pow => Some(FBin::Pow),
            M::Atan2 => Some(FBin::Atan2),
            M::Step => Some(FBin::Step),
            _ => None,
        };
        if let Some(op) = bin {
            if n0 != n1 && n0 != 1 && n1 != 1 {
                return Ok(None);
            }
            let n = n0.max(n1);
            let s = u8::from(n0 == 1 && n > 1) | (u8::from(n1 == 1 && n > 1) << 1);
            return Ok(Some(Op::F { op, dst, a, b, n, s }));
        }
        match fun {
            M::Dot if n0 == n1 => return Ok(Some(Op::Dot { dst, a, b, n: n0 })),
            M::Distance if n0 == n1 => return Ok(Some(Op::Distance { dst, a, b, n: n0 })),
            M::Cross if n0 == 3 && n1 == 3 => return Ok(Some(Op::Cross { dst, a, b })),
            _ => {}
        }
        let Some((n2, c)) = float(arg2)? else { return Ok(None) };
        let tri = match fun {
            M::Mix => FTri::Mix,
            M::Clamp => FTri::Clamp,
            M::SmoothStep => FTri::SmoothStep,
            M::Fma => FTri::Fma,
            _ => return Ok(None),
        };
        let n = n0.max(n1).max(n2);
        if [n0, n1, n2].iter().any(|&k| k != n && k != 1) {
            return Ok(None);
        }
        let s = u8::from(n0 == 1 && n > 1) | (u8::from(n1 == 1 && n > 1) << 1) | (u8::from(n2 == 1 && n > 1) << 2);
        Ok(Some(Op::F3 { op: tri, dst, a, b, c, n, s }))
    }

    fn generic(&mut self, e: &Expression, dst: u32) -> Result<(), ExecError> {
        let mut operands = SmallVec::new();
        for o in operands_of(e) {
            if operands.iter().any(|(h, _, _): &(Handle<Expression>, u32, Shape)| *h == o) {
                continue;
            }
            operands.push((o, self.val(o)?, self.shape(o)?));
        }
        self.emit(Op::Generic(Box::new(Generic { expr: e.clone(), dst, operands })));
        Ok(())
    }
}

fn pointee(shape: &Shape) -> Result<&Shape, ExecError> {
    shape.pointee().ok_or_else(|| ExecError::Type("expected a pointer".into()))
}

fn operands_of(e: &Expression) -> SmallVec<[Handle<Expression>; 4]> {
    let mut out = SmallVec::new();
    match e {
        Expression::Compose { components, .. } => out.extend(components.iter().copied()),
        Expression::Splat { value, .. } => out.push(*value),
        Expression::Swizzle { vector, .. } => out.push(*vector),
        Expression::Access { base, index } => out.extend([*base, *index]),
        Expression::AccessIndex { base, .. } => out.push(*base),
        Expression::Unary { expr, .. }
        | Expression::As { expr, .. }
        | Expression::Derivative { expr, .. }
        | Expression::Relational { argument: expr, .. } => out.push(*expr),
        Expression::Binary { left, right, .. } => out.extend([*left, *right]),
        Expression::Select { condition, accept, reject } => out.extend([*condition, *accept, *reject]),
        Expression::Math { arg, arg1, arg2, arg3, .. } => {
            out.push(*arg);
            out.extend([arg1, arg2, arg3].into_iter().flatten().copied());
        }
        _ => {}
    }
    out
}
