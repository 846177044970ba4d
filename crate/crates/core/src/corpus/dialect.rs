//! Source dialects and their normalization to standalone GLSL.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Version string emitted at the top of every normalized shader.
pub const GLSL_VERSION: &str = "450";

/// Engine uniforms as seen by TwiGL and raw GLSL sources.
pub const ENGINE_UNIFORMS: &str = "layout(set = 0, binding = 0) uniform EngineInputs { float time; vec2 resolution; };\n";

/// Identifiers that imply inputs other than time and resolution: texture
/// channels, audio, mouse, keyboard and multi-pass buffers.
pub const EXTERNAL_INPUTS: &[&str] = &[
    "iChannel0",
    "iChannel1",
    "iChannel2",
    "iChannel3",
    "iChannelResolution",
    "iChannelTime",
    "iMouse",
    "iSampleRate",
    "iKeyboard",
    "mainSound",
    "sampler2D",
    "sampler3D",
    "samplerCube",
    "texture",
    "texture2D",
    "textureLod",
    "texelFetch",
    "mouse",
    "backbuffer",
];

/// TwiGL abbreviations, expanded by macros in the preamble.
pub const TWIGL_MACROS: &[(&str, &str)] = &[
    ("t", "time"),
    ("r", "resolution"),
    ("FC", "gl_FragCoord"),
    ("o", "fragColor"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dialect {
    Twigl,
    Shadertoy,
    RawGlsl,
}

impl Dialect {
    pub fn name(self) -> &'static str {
        match self {
            Dialect::Twigl => "twigl",
            Dialect::Shadertoy => "shadertoy",
            Dialect::RawGlsl => "raw-glsl",
        }
    }

    /// Dialect implied by a snippet file extension.
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "twigl" | "tw" => Some(Dialect::Twigl),
            "shadertoy" | "st" => Some(Dialect::Shadertoy),
            "glsl" | "frag" | "fs" => Some(Dialect::RawGlsl),
            _ => None,
        }
    }
}

impl std::fmt::Display for Dialect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "twigl" => Ok(Dialect::Twigl),
            "shadertoy" => Ok(Dialect::Shadertoy),
            "raw-glsl" | "raw" | "glsl" => Ok(Dialect::RawGlsl),
            other => Err(format!("unknown dialect `{other}` (expected twigl, shadertoy or raw-glsl)")),
        }
    }
}

/// Why a source could not be turned into standalone GLSL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrepError {
    MissingEntryPoint,
    RequiresExternalInput(Vec<String>),
}

static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").unwrap());
static HAS_MAIN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bvoid\s+main\s*\(").unwrap());
static MAIN_IMAGE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\bvoid\s+mainImage\s*\(\s*(?:inout|out)\s+vec4\s+\w+\s*,\s*(?:const\s+)?(?:in\s+)?vec2\s+\w+\s*\)").unwrap()
});
static VERSION_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^[ \t]*#[ \t]*version\b.*$").unwrap());
static ENGINE_UNIFORM_DECL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\buniform\s+(?:(?:lowp|mediump|highp)\s+)?(?:float\s+time|vec2\s+resolution)\s*;").unwrap()
});
static OUT_DECL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^[ \t]*(?:layout\s*\([^)]*\)\s*)?out\s+(?:(?:lowp|mediump|highp)\s+)?vec4\s+(\w+)\s*;").unwrap()
});
static FRAG_COLOR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bgl_FragColor\b").unwrap());

/// Remove `//` and `/* */` comments, keeping line structure.
pub fn strip_comments(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, chars.peek()) {
            ('/', Some('/')) => {
                for c in chars.by_ref() {
                    if c == '\n' {
                        out.push('\n');
                        break;
                    }
                }
            }
            ('/', Some('*')) => {
                chars.next();
                let mut prev = '\0';
                for c in chars.by_ref() {
                    if c == '\n' {
                        out.push('\n');
                    }
                    if prev == '*' && c == '/' {
                        break;
                    }
                    prev = c;
                }
                out.push(' ');
            }
            _ => out.push(c),
        }
    }
    out
}

/// Identifiers from [`EXTERNAL_INPUTS`] used by `src`, sorted and unique.
pub fn external_inputs(src: &str) -> Vec<String> {
    let code = strip_comments(src);
    let found: BTreeSet<&str> = IDENT
        .find_iter(&code)
        .map(|m| m.as_str())
        .filter(|id| EXTERNAL_INPUTS.contains(id))
        .collect();
    found.into_iter().map(str::to_string).collect()
}

fn twigl_preamble() -> String {
    let mut s = format!("#version {GLSL_VERSION}\n{ENGINE_UNIFORMS}layout(location = 0) out vec4 fragColor;\n");
    for (short, long) in TWIGL_MACROS {
        s.push_str(&format!("#define {short} {long}\n"));
    }
    s
}

/// Expand a TwiGL body into a standalone shader. Bodies without a `main`
/// are wrapped in one; compile errors surface later, in validation.
pub fn transpile_twigl(source: &str) -> String {
    let mut out = twigl_preamble();
    if HAS_MAIN.is_match(&strip_comments(source)) {
        out.push_str(source);
    } else {
        out.push_str("void main() {\n");
        out.push_str(source);
        out.push_str("\n}");
    }
    out.push('\n');
    out
}

/// Wrap a Shadertoy `mainImage` program in a standalone shader.
pub fn adapt_shadertoy(source: &str) -> Result<String, PrepError> {
    let code = strip_comments(source);
    if !MAIN_IMAGE.is_match(&code) {
        return Err(PrepError::MissingEntryPoint);
    }
    let external = external_inputs(source);
    if !external.is_empty() {
        return Err(PrepError::RequiresExternalInput(external));
    }
    let src = VERSION_LINE.replace_all(source, "");
    Ok(format!(
        "#version {GLSL_VERSION}\n\
         layout(set = 0, binding = 0) uniform EngineInputs {{ float iTime; vec3 iResolution; }};\n\
         layout(location = 0) out vec4 engineFragColor;\n\
         #define iGlobalTime iTime\n\
         {src}\n\
         void main() {{\n    vec4 color = vec4(0.0, 0.0, 0.0, 1.0);\n    mainImage(color, gl_FragCoord.xy);\n    engineFragColor = color;\n}}\n"
    ))
}

/// Pin the version, bind the engine uniforms, and route the output color
/// of a complete GLSL fragment shader.
pub fn normalize_raw(source: &str) -> Result<String, PrepError> {
    if !HAS_MAIN.is_match(&strip_comments(source)) {
        return Err(PrepError::MissingEntryPoint);
    }
    let src = VERSION_LINE.replace_all(source, "");
    let src = ENGINE_UNIFORM_DECL.replace_all(&src, "");
    let mut head = format!("#version {GLSL_VERSION}\n{ENGINE_UNIFORMS}");
    let body = match OUT_DECL.captures(&src).map(|c| c[1].to_string()) {
        Some(name) => OUT_DECL
            .replace(&src, format!("layout(location = 0) out vec4 {name};").as_str())
            .into_owned(),
        None => {
            head.push_str("layout(location = 0) out vec4 fragColor;\n");
            FRAG_COLOR.replace_all(&src, "fragColor").into_owned()
        }
    };
    Ok(head + &body + "\n")
}

/// Normalize `source` of the given dialect. External-input references are
/// rejected for every dialect.
pub fn normalize(source: &str, dialect: Dialect) -> Result<String, PrepError> {
    match dialect {
        Dialect::Shadertoy => adapt_shadertoy(source),
        other => {
            let external = external_inputs(source);
            if !external.is_empty() {
                return Err(PrepError::RequiresExternalInput(external));
            }
            match other {
                Dialect::Twigl => Ok(transpile_twigl(source)),
                _ => normalize_raw(source),
            }
        }
    }
}
