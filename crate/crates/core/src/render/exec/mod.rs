//! Software execution of fragment shaders.
//!
//! GLSL is parsed and validated by naga, lowered to a bytecode over a flat
//! word memory, and run once per pixel. Operations without a specialized
//! instruction fall back to a value-level evaluator with the same
//! semantics.

mod compile;
mod layout;
mod math;
mod ops;
mod value;
mod vm;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use naga::{
    front::glsl::{Frontend, Options},
    valid::{Capabilities, ModuleInfo, ValidationFlags, Validator},
    AddressSpace, Binding, Block, BuiltIn, Expression, Handle, Literal, ShaderStage, Statement, TypeInner,
};
use smallvec::SmallVec;
use thiserror::Error;

use layout::{Kind, Shape};
pub use value::{Lanes, Mat, Num, Value};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExecError {
    #[error("unsupported by the software device: {0}")]
    Unsupported(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("frame time budget exceeded")]
    Timeout,
    #[error("aborted")]
    Aborted,
    #[error("fragment discarded")]
    Discard,
}

/// Uniform values supplied to every invocation of a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inputs {
    pub time: f32,
    pub resolution: [f32; 2],
}

#[derive(Debug, Clone, Copy)]
enum EntryArg {
    FragCoord(u32),
    FrontFacing(u32),
}

/// Uniform words for one frame, as `(address, word)` pairs.
#[derive(Debug, Clone, Default)]
pub struct Uniforms(Vec<(u32, u32)>);

/// A compiled, immutable shader program. Shareable across threads; the
/// mutable per-invocation state lives in [`Invocation`].
#[derive(Debug)]
pub struct Program {
    module: naga::Module,
    code: Vec<vm::Op>,
    entry_pc: u32,
    image: Vec<u32>,
    privates: std::ops::Range<usize>,
    uniform_blocks: Vec<(u32, Handle<naga::Type>)>,
    entry_args: Vec<EntryArg>,
    output: Option<(u32, u8)>,
}

/// Compile GLSL fragment-shader source. On failure returns the compiler
/// log text.
pub fn compile(source: &str) -> Result<Program, String> {
    let mut frontend = Frontend::default();
    let module = frontend
        .parse(&Options::from(ShaderStage::Fragment), source)
        .map_err(|e| e.emit_to_string(source))?;
    let info = Validator::new(ValidationFlags::all(), Capabilities::all())
        .validate(&module)
        .map_err(|e| e.emit_to_string(source))?;
    Program::build(module, &info)
}

impl Program {
    fn build(module: naga::Module, info: &ModuleInfo) -> Result<Self, String> {
        let fail = |e: ExecError| format!("error: {e}");
        let entry = module
            .entry_points
            .iter()
            .position(|ep| ep.stage == ShaderStage::Fragment)
            .ok_or_else(|| "error: no fragment entry point".to_string())?;
        check_supported(&module).map_err(fail)?;
        let constants = eval_global_expressions(&module).map_err(fail)?;

        let mut b = compile::Builder::new(&module, &constants);
        let mut uniform_blocks = Vec::new();
        b.globals = vec![0; module.global_variables.len()];
        let private_start = b.mem.len();
        for (h, g) in module.global_variables.iter() {
            if g.space == AddressSpace::Uniform {
                continue;
            }
            let addr = b.alloc(b.shape(g.ty).map_err(fail)?.words());
            b.globals[h.index()] = addr;
            if let Some(init) = g.init {
                layout::write_value(&mut b.mem, addr, &constants[init.index()]).map_err(fail)?;
            }
        }
        let private_end = b.mem.len();
        for (h, g) in module.global_variables.iter() {
            if g.space == AddressSpace::Uniform {
                let addr = b.alloc(b.shape(g.ty).map_err(fail)?.words());
                b.globals[h.index()] = addr;
                uniform_blocks.push((addr, g.ty));
            }
        }

        for (h, f) in module.functions.iter() {
            let sig = b.function(f, &info[h]).map_err(fail)?;
            b.sigs.push(sig);
        }
        let ep = &module.entry_points[entry].function;
        let sig = b.function(ep, info.get_entry_point(entry)).map_err(fail)?;

        let mut entry_args = Vec::new();
        for (a, &(addr, _)) in ep.arguments.iter().zip(&sig.args) {
            match a.binding {
                Some(Binding::BuiltIn(BuiltIn::Position { .. })) => entry_args.push(EntryArg::FragCoord(addr)),
                Some(Binding::BuiltIn(BuiltIn::FrontFacing)) => entry_args.push(EntryArg::FrontFacing(addr)),
                _ => {}
            }
        }
        let output = match (&ep.result, sig.ret) {
            (Some(r), Some((addr, _))) => {
                let shape = b.shape(r.ty).map_err(fail)?;
                let at_location_0 = |binding: &Option<Binding>| matches!(binding, Some(Binding::Location { location: 0, .. }));
                let found = if at_location_0(&r.binding) {
                    Some((0, shape))
                } else {
                    match &module.types[r.ty].inner {
                        TypeInner::Struct { members, .. } => match members.iter().position(|m| at_location_0(&m.binding)) {
                            Some(i) => Some(shape.component(i as u32).map_err(fail)?),
                            None => None,
                        },
                        _ => None,
                    }
                };
                match found {
                    Some((off, s)) => match s.lanes() {
                        Some((Kind::F, n)) => Some((addr + off, n)),
                        _ => None,
                    },
                    None => None,
                }
            }
            _ => None,
        };

        let code = std::mem::take(&mut b.code);
        let image = std::mem::take(&mut b.mem);
        drop(b);
        Ok(Program {
            module,
            code,
            entry_pc: sig.pc,
            image,
            privates: private_start..private_end,
            uniform_blocks,
            entry_args,
            output,
        })
    }

    /// Uniform storage for one frame. Block members named `time`/`iTime`
    /// and `resolution`/`iResolution` receive the frame inputs; a vec3
    /// resolution gets 1 in z. Anything else is zero.
    pub fn uniforms(&self, inputs: &Inputs) -> Uniforms {
        let types = &self.module.types;
        let mut words = Vec::new();
        for &(addr, ty) in &self.uniform_blocks {
            let TypeInner::Struct { members, .. } = &types[ty].inner else { continue };
            let mut off = addr;
            for m in members {
                let Ok(shape) = Shape::of_type(types, m.ty) else { break };
                match (m.name.as_deref(), &shape) {
                    (Some("time" | "iTime"), Shape::Scalar(_)) => words.push((off, inputs.time.to_bits())),
                    (Some("resolution" | "iResolution"), Shape::Vector(_, n)) => {
                        let [w, h] = inputs.resolution;
                        for (i, v) in [w, h, 1.0, 1.0].iter().take(*n as usize).enumerate() {
                            words.push((off + i as u32, v.to_bits()));
                        }
                    }
                    _ => {}
                }
                off += shape.words();
            }
        }
        Uniforms(words)
    }

    pub fn invocation<'p>(&'p self, uniforms: &Uniforms, budget: Budget<'p>) -> Invocation<'p> {
        let mut mem = self.image.clone();
        for &(addr, w) in &uniforms.0 {
            mem[addr as usize] = w;
        }
        Invocation { prog: self, mem, stack: Vec::new(), budget }
    }
}

fn mark_emitted(block: &Block, emitted: &mut [bool]) {
    for stmt in block.iter() {
        match stmt {
            Statement::Emit(range) => {
                for h in range.clone() {
                    emitted[h.index()] = true;
                }
            }
            Statement::Block(b) => mark_emitted(b, emitted),
            Statement::If { accept, reject, .. } => {
                mark_emitted(accept, emitted);
                mark_emitted(reject, emitted);
            }
            Statement::Switch { cases, .. } => cases.iter().for_each(|c| mark_emitted(&c.body, emitted)),
            Statement::Loop { body, continuing, .. } => {
                mark_emitted(body, emitted);
                mark_emitted(continuing, emitted);
            }
            Statement::Call { result: Some(r), .. } => emitted[r.index()] = true,
            _ => {}
        }
    }
}

fn check_supported(module: &naga::Module) -> Result<(), ExecError> {
    for (_, g) in module.global_variables.iter() {
        if matches!(g.space, AddressSpace::Handle) {
            return Err(ExecError::Unsupported(format!(
                "texture or sampler input `{}`",
                g.name.as_deref().unwrap_or("?")
            )));
        }
    }
    let funcs = module.functions.iter().map(|(_, f)| f).chain(module.entry_points.iter().map(|e| &e.function));
    for f in funcs {
        for (_, e) in f.expressions.iter() {
            let ok = match e {
                Expression::Math { fun, .. } => math::is_supported(*fun),
                Expression::Literal(_)
                | Expression::Constant(_)
                | Expression::ZeroValue(_)
                | Expression::Compose { .. }
                | Expression::Access { .. }
                | Expression::AccessIndex { .. }
                | Expression::Splat { .. }
                | Expression::Swizzle { .. }
                | Expression::FunctionArgument(_)
                | Expression::GlobalVariable(_)
                | Expression::LocalVariable(_)
                | Expression::Load { .. }
                | Expression::Unary { .. }
                | Expression::Binary { .. }
                | Expression::Select { .. }
                | Expression::Derivative { .. }
                | Expression::Relational { .. }
                | Expression::As { .. }
                | Expression::CallResult(_) => true,
                _ => false,
            };
            if !ok {
                return Err(ExecError::Unsupported(format!("expression {e:?}")));
            }
        }
        check_block(&f.body)?;
    }
    Ok(())
}

fn check_block(block: &Block) -> Result<(), ExecError> {
    for stmt in block.iter() {
        match stmt {
            Statement::Emit(_)
            | Statement::Break
            | Statement::Continue
            | Statement::Return { .. }
            | Statement::Kill
            | Statement::ControlBarrier(_)
            | Statement::MemoryBarrier(_)
            | Statement::Store { .. }
            | Statement::Call { .. } => {}
            Statement::Block(b) => check_block(b)?,
            Statement::If { accept, reject, .. } => {
                check_block(accept)?;
                check_block(reject)?;
            }
            Statement::Switch { cases, .. } => cases.iter().try_for_each(|c| check_block(&c.body))?,
            Statement::Loop { body, continuing, .. } => {
                check_block(body)?;
                check_block(continuing)?;
            }
            other => return Err(ExecError::Unsupported(format!("statement {other:?}"))),
        }
    }
    Ok(())
}

fn eval_global_expressions(module: &naga::Module) -> Result<Vec<Value>, ExecError> {
    let mut out: Vec<Value> = Vec::with_capacity(module.global_expressions.len());
    for (_, expr) in module.global_expressions.iter() {
        let v = eval_pure(expr, module, &out, |h| Ok(out[h.index()].clone()))?
            .ok_or_else(|| ExecError::Unsupported(format!("global expression {expr:?}")))?;
        out.push(v);
    }
    Ok(out)
}

fn literal(l: &Literal) -> Result<Value, ExecError> {
    Ok(Value::Num(match *l {
        Literal::F32(x) => Num::f(x),
        Literal::F64(x) | Literal::AbstractFloat(x) => Num::f(x as f32),
        Literal::I32(x) => Num::i(x),
        Literal::I64(x) | Literal::AbstractInt(x) => Num::i(x as i32),
        Literal::U32(x) => Num::u(x),
        Literal::U64(x) => Num::u(x as u32),
        Literal::Bool(x) => Num::b(x),
        Literal::I16(x) => Num::i(x as i32),
        Literal::U16(x) => Num::u(x as u32),
        Literal::F16(x) => Num::f(f32::from(x)),
    }))
}

fn compose(module: &naga::Module, ty: Handle<naga::Type>, parts: Vec<Value>) -> Result<Value, ExecError> {
    match &module.types[ty].inner {
        TypeInner::Vector { size, scalar } => {
            let len = value::scalar_len(*size);
            let mut out = Num::zero(scalar.kind, len, true);
            let mut i = 0usize;
            for p in parts {
                let n = p.num()?;
                for k in 0..n.len as usize {
                    if i < len as usize {
                        out.set_lane(i, n.lane(k))?;
                    }
                    i += 1;
                }
            }
            Ok(Value::Num(out))
        }
        TypeInner::Matrix { columns, rows, .. } => {
            let mut m = Mat::zero(value::scalar_len(*columns), value::scalar_len(*rows));
            let all_scalar = parts.iter().all(|p| matches!(p, Value::Num(n) if !n.vector));
            if all_scalar {
                for (i, p) in parts.iter().enumerate() {
                    m.set(i / m.rows as usize, i % m.rows as usize, p.num()?.as_f32()?);
                }
            } else {
                for (c, p) in parts.iter().enumerate().take(m.cols as usize) {
                    m.set_column(c, &p.num()?)?;
                }
            }
            Ok(Value::Mat(m))
        }
        TypeInner::Array { .. } | TypeInner::Struct { .. } => Ok(Value::Composite(Arc::new(parts))),
        TypeInner::Scalar(_) => parts.into_iter().next().ok_or_else(|| ExecError::Type("empty compose".into())),
        other => Err(ExecError::Unsupported(format!("compose of {other:?}"))),
    }
}

/// Evaluate an expression that needs no invocation state. Returns
/// `Ok(None)` for expressions that do (pointers, loads, arguments).
fn eval_pure(
    expr: &Expression,
    module: &naga::Module,
    constants: &[Value],
    mut operand: impl FnMut(Handle<Expression>) -> Result<Value, ExecError>,
) -> Result<Option<Value>, ExecError> {
    let v = match expr {
        Expression::Literal(l) => literal(l)?,
        Expression::Constant(c) => constants
            .get(module.constants[*c].init.index())
            .cloned()
            .ok_or_else(|| ExecError::Type("constant out of order".into()))?,
        Expression::ZeroValue(ty) => value::zero_value(&module.types, *ty)?,
        Expression::Compose { ty, components } => {
            let parts = components.iter().map(|h| operand(*h)).collect::<Result<Vec<_>, _>>()?;
            compose(module, *ty, parts)?
        }
        Expression::Splat { size, value } => Value::Num(operand(*value)?.num()?.splat(value::scalar_len(*size))),
        Expression::Swizzle { size, vector, pattern } => {
            let n = operand(*vector)?.num()?;
            let len = value::scalar_len(*size);
            let mut out = Num { len, vector: true, ..n };
            for (i, c) in pattern.iter().take(len as usize).enumerate() {
                out.set_lane(i, n.lane(*c as usize))?;
            }
            Value::Num(out)
        }
        Expression::AccessIndex { base, index } => operand(*base)?.index(*index)?,
        Expression::Access { base, index } => {
            let i = operand(*index)?.num()?.as_index()?;
            operand(*base)?.index(i)?
        }
        Expression::Unary { op, expr } => ops::unary(*op, operand(*expr)?)?,
        Expression::Binary { op, left, right } => {
            let l = operand(*left)?;
            let r = operand(*right)?;
            ops::binary(*op, l, r)?
        }
        Expression::Select { condition, accept, reject } => {
            let c = operand(*condition)?.num()?;
            let a = operand(*accept)?;
            let r = operand(*reject)?;
            ops::select(c, a, r)?
        }
        Expression::Relational { fun, argument } => {
            use naga::RelationalFunction as R;
            let n = operand(*argument)?.num()?;
            match (fun, n.lanes) {
                (R::All, Lanes::B(b)) => Value::Num(Num::b(b[..n.len as usize].iter().all(|x| *x))),
                (R::Any, Lanes::B(b)) => Value::Num(Num::b(b[..n.len as usize].iter().any(|x| *x))),
                (R::IsNan, Lanes::F(f)) => {
                    Value::Num(Num { lanes: Lanes::B(ops::map4(f, n.len, f32::is_nan)), ..n })
                }
                (R::IsInf, Lanes::F(f)) => {
                    Value::Num(Num { lanes: Lanes::B(ops::map4(f, n.len, f32::is_infinite)), ..n })
                }
                _ => return Err(ExecError::Type(format!("relational {fun:?}"))),
            }
        }
        Expression::Math { fun, arg, arg1, arg2, arg3 } => {
            let mut args: SmallVec<[Value; 4]> = SmallVec::new();
            args.push(operand(*arg)?);
            for a in [arg1, arg2, arg3].into_iter().flatten() {
                args.push(operand(*a)?);
            }
            math::call(*fun, &args)?
        }
        Expression::As { expr, kind, convert } => ops::cast(operand(*expr)?, *kind, convert.is_some())?,
        // Screen-space derivatives need neighbouring invocations; a single
        // invocation sees a locally constant field.
        Expression::Derivative { expr, .. } => match operand(*expr)? {
            Value::Num(n) => Value::Num(Num { lanes: Lanes::F([0.0; 4]), ..n }),
            other => return Err(ExecError::Type(format!("derivative of {}", other.kind_name()))),
        },
        _ => return Ok(None),
    };
    Ok(Some(v))
}

/// Per-frame execution budget shared by all invocations of a frame.
#[derive(Debug, Clone)]
pub struct Budget<'a> {
    deadline: Option<Instant>,
    abort: &'a AtomicBool,
    ticks: u32,
}

impl<'a> Budget<'a> {
    pub fn new(deadline: Option<Instant>, abort: &'a AtomicBool) -> Self {
        Self { deadline, abort, ticks: 0 }
    }

    #[inline]
    fn tick(&mut self) -> Result<(), ExecError> {
        self.ticks = self.ticks.wrapping_add(1);
        if self.ticks & 0x3ff == 0 {
            self.check()?;
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), ExecError> {
        if self.abort.load(Ordering::Relaxed) {
            return Err(ExecError::Aborted);
        }
        if let Some(d) = self.deadline {
            if Instant::now() > d {
                self.abort.store(true, Ordering::Relaxed);
                return Err(ExecError::Timeout);
            }
        }
        Ok(())
    }
}

/// Mutable state for running a [`Program`] on one thread. Reused across
/// pixels.
pub struct Invocation<'p> {
    prog: &'p Program,
    mem: Vec<u32>,
    stack: Vec<u32>,
    budget: Budget<'p>,
}

impl<'p> Invocation<'p> {
    pub fn budget(&self) -> &Budget<'p> {
        &self.budget
    }

    /// Run the entry point for one fragment. Returns `None` when the
    /// fragment is discarded.
    pub fn shade(&mut self, frag_coord: [f32; 4]) -> Result<Option<[f32; 4]>, ExecError> {
        let prog = self.prog;
        let r = prog.privates.clone();
        self.mem[r.clone()].copy_from_slice(&prog.image[r]);
        for a in &prog.entry_args {
            match *a {
                EntryArg::FragCoord(addr) => {
                    for (i, v) in frag_coord.iter().enumerate() {
                        self.mem[addr as usize + i] = v.to_bits();
                    }
                }
                EntryArg::FrontFacing(addr) => self.mem[addr as usize] = 1,
            }
        }
        match vm::run(&prog.code, &prog.module, &mut self.mem, &mut self.stack, &mut self.budget, prog.entry_pc) {
            Ok(()) => {}
            Err(ExecError::Discard) => return Ok(None),
            Err(e) => return Err(e),
        }
        let mut out = [0.0, 0.0, 0.0, 1.0];
        if let Some((addr, n)) = prog.output {
            for (i, o) in out.iter_mut().enumerate().take(n as usize) {
                *o = f32::from_bits(self.mem[addr as usize + i]);
            }
        }
        Ok(Some(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PREAMBLE: &str = "#version 450\n\
        layout(set = 0, binding = 0) uniform EngineInputs { float time; vec2 resolution; };\n\
        layout(location = 0) out vec4 fragColor;\n";

    fn run(body: &str, coord: [f32; 2], time: f32) -> [f32; 4] {
        let src = format!("{PREAMBLE}{body}");
        let prog = compile(&src).unwrap_or_else(|e| panic!("{e}"));
        let uniforms = prog.uniforms(&Inputs { time, resolution: [8.0, 8.0] });
        let abort = AtomicBool::new(false);
        let mut inv = prog.invocation(&uniforms, Budget::new(None, &abort));
        inv.shade([coord[0], coord[1], 0.5, 1.0]).unwrap().unwrap()
    }

    #[test]
    fn constant_color() {
        assert_eq!(run("void main(){ fragColor = vec4(0.25, 0.5, 1.0, 1.0); }", [0.5, 0.5], 0.0), [0.25, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn time_and_coords() {
        let c = run("void main(){ fragColor = vec4(gl_FragCoord.xy / resolution, fract(time), 1.); }", [2.5, 6.5], 3.25);
        assert_eq!(c, [2.5 / 8.0, 6.5 / 8.0, 0.25, 1.0]);
    }

    #[test]
    fn loops_functions_and_inout() {
        let body = "
            void bump(inout float a, float by) { a += by; }
            float sq(float x) { return x * x; }
            void main() {
                float acc = 0.;
                for (int i = 0; i < 4; i++) {
                    if (i == 2) continue;
                    bump(acc, sq(float(i)));
                }
                int k = 0;
                while (true) { k++; if (k >= 3) break; }
                fragColor = vec4(acc, float(k), mod(-1., 3.), 1.);
            }";
        // acc = 0 + 1 + 9 = 10
        assert_eq!(run(body, [0.5, 0.5], 0.0), [10.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn swizzle_assign_and_matrices() {
        let body = "
            mat2 rot(float a) { float c = cos(a), s = sin(a); return mat2(c, s, -s, c); }
            void main() {
                vec3 v = vec3(1., 2., 3.);
                v.zx = vec2(7., 8.);
                vec2 p = rot(0.) * vec2(1., 0.);
                mat3 m = mat3(2.0);
                vec3 w = m * v;
                fragColor = vec4(v.x, w.z, p.x + p.y, 1.);
            }";
        assert_eq!(run(body, [0.5, 0.5], 0.0), [8.0, 14.0, 1.0, 1.0]);
    }

    #[test]
    fn arrays_and_switch() {
        let body = "
            const float W[3] = float[3](0.5, 0.25, 0.125);
            void main() {
                float tab[3];
                for (int i = 0; i < 3; i++) tab[i] = W[i] * 2.;
                float s = 0.;
                int sel = 1;
                switch (sel) {
                    case 0: s = 100.; break;
                    case 1: s = tab[1];
                    case 2: s += tab[2]; break;
                    default: s = -1.;
                }
                fragColor = vec4(s, tab[0], 0., 1.);
            }";
        assert_eq!(run(body, [0.5, 0.5], 0.0), [0.75, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn discard_yields_none() {
        let src = format!("{PREAMBLE}void main(){{ if (gl_FragCoord.x < 1.) discard; fragColor = vec4(1.); }}");
        let prog = compile(&src).unwrap();
        let uniforms = prog.uniforms(&Inputs { time: 0.0, resolution: [8.0, 8.0] });
        let abort = AtomicBool::new(false);
        let mut inv = prog.invocation(&uniforms, Budget::new(None, &abort));
        assert_eq!(inv.shade([0.5, 0.5, 0.5, 1.0]).unwrap(), None);
        assert_eq!(inv.shade([1.5, 0.5, 0.5, 1.0]).unwrap(), Some([1.0; 4]));
    }

    #[test]
    fn syntax_error_reports_log() {
        let err = compile(&format!("{PREAMBLE}void main(){{ fragColor = vec4(1.) }}")).unwrap_err();
        assert!(!err.is_empty());
    }

    #[test]
    fn runaway_loop_times_out() {
        let src = format!("{PREAMBLE}void main(){{ float x = 0.; for (;;) {{ x += 1.; }} fragColor = vec4(x); }}");
        let prog = compile(&src).unwrap();
        let uniforms = prog.uniforms(&Inputs { time: 0.0, resolution: [8.0, 8.0] });
        let abort = AtomicBool::new(false);
        let deadline = Instant::now() + std::time::Duration::from_millis(50);
        let mut inv = prog.invocation(&uniforms, Budget::new(Some(deadline), &abort));
        assert_eq!(inv.shade([0.5, 0.5, 0.5, 1.0]), Err(ExecError::Timeout));
    }
}
