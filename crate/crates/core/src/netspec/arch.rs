use std::fmt;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Shape3 { c, h, w }
    }

    pub fn flat(n: usize) -> Self {
        Shape3 { c: n, h: 1, w: 1 }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LayerSpec {
    Conv { filters: usize, kh: usize, kw: usize },
    /// Conv-patterned sparse connectivity with one weight per connection.
    LocalConv { filters: usize, kh: usize, kw: usize },
    Maxpool { size: usize, stride: usize },
    Drop { p: f64 },
    Full { units: usize },
    /// Adds the outputs of the two preceding layers.
    Sum,
    Output,
}

impl LayerSpec {
    pub fn has_weights(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv { .. } | LayerSpec::LocalConv { .. } | LayerSpec::Full { .. } | LayerSpec::Output
        )
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::LocalConv { .. } => "localconv",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Drop { .. } => "drop",
            LayerSpec::Full { .. } => "full",
            LayerSpec::Sum => "sum",
            LayerSpec::Output => "output",
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { filters, kh, kw } => write!(f, "Conv {filters} {kh}x{kw}"),
            LayerSpec::LocalConv { filters, kh, kw } => write!(f, "LocalConv {filters} {kh}x{kw}"),
            LayerSpec::Maxpool { size, stride } => write!(f, "Maxpool {size} stride {stride}"),
            LayerSpec::Drop { p } => write!(f, "Drop {p}"),
            LayerSpec::Full { units } => write!(f, "Full {units}"),
            LayerSpec::Sum => write!(f, "Sum"),
            LayerSpec::Output => write!(f, "Output"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetSpec {
    pub name: Option<String>,
    pub layers: Vec<LayerSpec>,
    pub input: Shape3,
    pub classes: usize,
}

impl NetSpec {
    /// The same network with every `Conv` replaced by its untied counterpart.
    pub fn untied(&self) -> NetSpec {
        let layers = self
            .layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Conv { filters, kh, kw } => LayerSpec::LocalConv { filters, kh, kw },
                ref other => other.clone(),
            })
            .collect();
        NetSpec {
            layers,
            ..self.clone()
        }
    }

    /// Architecture text only, without the optional `name:` prefix.
    pub fn arch_string(&self) -> String {
        self.layers
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    }
}

impl fmt::Display for NetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(name) = &self.name {
            write!(f, "{name}: ")?;
        }
        f.write_str(&self.arch_string())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseErrorKind {
    #[error("unknown layer keyword `{0}`")]
    UnknownKeyword(String),
    #[error("malformed numeral `{0}`")]
    BadNumber(String),
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("unexpected trailing token `{0}`")]
    Trailing(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("shape propagation failed: {0}")]
    Shape(String),
    #[error("empty architecture")]
    Empty,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("architecture parse error at byte {position}: {kind}")]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
}

fn err(position: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { position, kind }
}

pub const SIMPNET: &str = "simpnet: Conv 32 5x5; Maxpool 3; Drop .8; Full 500; Drop .3; Output";
pub const DEEPNET: &str = "deepnet: Conv 32 5x5; Maxpool 3; Conv 32 3x3; Conv 32 3x3; Maxpool 3; Drop .8; \
     Conv 32 3x3; Conv 32 3x3; Maxpool 3; Drop .3; Full 500; Output";
pub const DEEPERNET: &str = "deepernet: conv 16 3x3; conv 16 3x3; SUM; conv 32 3x3; conv 32 3x3; \
     SUM; maxpool 3; drop .5; conv 64 3x3; conv 64 3x3; SUM; maxpool 3; \
     conv 128 3x3; conv 128 3x3; SUM; maxpool 3; drop .8; \
     full conn. 500; output";
pub const DEEPNET_S: &str = "deepnet_s: conv 16 3x3; conv 16 3x3; \
     SUM;maxpool 3, stride 3; drop .5; \
     conv 64 3x3; conv 64 3x3; SUM; maxpool 2, stride 2; \
     conv 64 2x2; conv 64 2x2; SUM; maxpool 2, stride 2; drop .5; \
     full conn. 500; output";

/// Named architectures; `simpnet_lite` is the desk-scale variant of `simpnet`.
pub fn preset(name: &str) -> Option<&'static str> {
    match name.to_ascii_lowercase().as_str() {
        "simpnet" => Some(SIMPNET),
        "deepnet" => Some(DEEPNET),
        "deepernet" => Some(DEEPERNET),
        "deepnet_s" => Some(DEEPNET_S),
        "simpnet_lite" => Some("simpnet_lite: Conv 16 5x5; Maxpool 3; Full 128; Output"),
        _ => None,
    }
}

struct Tok<'a> {
    text: &'a str,
    pos: usize,
}

/// Whitespace- and comma-separated tokens with absolute byte offsets.
fn tokenize(item: &str, base: usize) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in item.char_indices() {
        let sep = ch.is_whitespace() || ch == ',';
        match (sep, start) {
            (true, Some(s)) => {
                out.push(Tok {
                    text: &item[s..i],
                    pos: base + s,
                });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Tok {
            text: &item[s..],
            pos: base + s,
        });
    }
    out
}

fn count(tok: Option<&Tok>, end: usize, what: &'static str) -> Result<usize, ParseError> {
    let tok = tok.ok_or_else(|| err(end, ParseErrorKind::Missing(what)))?;
    let v: usize = tok
        .text
        .parse()
        .map_err(|_| err(tok.pos, ParseErrorKind::BadNumber(tok.text.to_string())))?;
    if v == 0 {
        return Err(err(tok.pos, ParseErrorKind::Invalid(format!("{what} must be >= 1"))));
    }
    Ok(v)
}

fn kernel(tok: Option<&Tok>, end: usize) -> Result<(usize, usize), ParseError> {
    let tok = tok.ok_or_else(|| err(end, ParseErrorKind::Missing("kernel size HxW")))?;
    let lower = tok.text.to_ascii_lowercase();
    let (a, b) = lower
        .split_once('x')
        .ok_or_else(|| err(tok.pos, ParseErrorKind::BadNumber(tok.text.to_string())))?;
    let parse = |s: &str| -> Result<usize, ParseError> {
        match s.parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v),
            Ok(_) => Err(err(tok.pos, ParseErrorKind::Invalid("kernel extent must be >= 1".into()))),
            Err(_) => Err(err(tok.pos, ParseErrorKind::BadNumber(tok.text.to_string()))),
        }
    };
    Ok((parse(a)?, parse(b)?))
}

fn parse_item(toks: &[Tok], end: usize) -> Result<LayerSpec, ParseError> {
    let head = &toks[0];
    let kw = head.text.to_ascii_lowercase();
    let mut rest = toks[1..].iter();
    let spec = match kw.as_str() {
        "conv" | "localconv" => {
            let filters = count(rest.next(), end, "filter count")?;
            let (kh, kw_) = kernel(rest.next(), end)?;
            if kw == "conv" {
                LayerSpec::Conv { filters, kh, kw: kw_ }
            } else {
                LayerSpec::LocalConv { filters, kh, kw: kw_ }
            }
        }
        "maxpool" => {
            let size = count(rest.next(), end, "pool size")?;
            let mut stride = 2;
            let mut peek = rest.clone();
            if let Some(t) = peek.next() {
                if t.text.eq_ignore_ascii_case("stride") {
                    rest.next();
                    stride = count(rest.next(), end, "stride")?;
                }
            }
            LayerSpec::Maxpool { size, stride }
        }
        "drop" => {
            let tok = rest.next().ok_or_else(|| err(end, ParseErrorKind::Missing("drop probability")))?;
            let p: f64 = tok
                .text
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(tok.pos, ParseErrorKind::BadNumber(tok.text.to_string())))?;
            if !(0.0..1.0).contains(&p) {
                return Err(err(tok.pos, ParseErrorKind::Invalid(format!("drop probability {p} not in [0,1)"))));
            }
            LayerSpec::Drop { p }
        }
        "full" => {
            let mut peek = rest.clone();
            if let Some(t) = peek.next() {
                let l = t.text.to_ascii_lowercase();
                if l == "conn." || l == "conn" {
                    rest.next();
                }
            }
            LayerSpec::Full {
                units: count(rest.next(), end, "unit count")?,
            }
        }
        "sum" => LayerSpec::Sum,
        "output" => LayerSpec::Output,
        _ => return Err(err(head.pos, ParseErrorKind::UnknownKeyword(head.text.to_string()))),
    };
    if let Some(t) = rest.next() {
        return Err(err(t.pos, ParseErrorKind::Trailing(t.text.to_string())));
    }
    Ok(spec)
}

/// Parse `item (';' item)*`, optionally prefixed by `name:`.
pub fn parse_arch(text: &str, input: Shape3, classes: usize) -> Result<NetSpec, ParseError> {
    let (name, body, offset) = match text.find(':') {
        Some(i) if !text[..i].contains(';') => {
            let n = text[..i].trim();
            (Some(n.to_string()).filter(|s| !s.is_empty()), &text[i + 1..], i + 1)
        }
        _ => (None, text, 0),
    };
    let mut layers = Vec::new();
    let mut positions = Vec::new();
    let mut base = offset;
    for item in body.split(';') {
        let toks = tokenize(item, base);
        let end = base + item.len();
        if toks.is_empty() {
            // tolerate a trailing separator, nothing else
            if end < text.len() || layers.is_empty() {
                return Err(err(base, ParseErrorKind::Empty));
            }
        } else {
            positions.push(toks[0].pos);
            layers.push(parse_item(&toks, end)?);
        }
        base = end + 1;
    }
    if classes < 1 {
        return Err(err(0, ParseErrorKind::Invalid("class count must be >= 1".into())));
    }
    let spec = NetSpec {
        name,
        layers,
        input,
        classes,
    };
    check_structure(&spec).map_err(|(idx, kind)| err(positions.get(idx).copied().unwrap_or(0), kind))?;
    Ok(spec)
}

fn check_structure(spec: &NetSpec) -> Result<(), (usize, ParseErrorKind)> {
    let n = spec.layers.len();
    if n == 0 {
        return Err((0, ParseErrorKind::Empty));
    }
    for (i, l) in spec.layers.iter().enumerate() {
        if *l == LayerSpec::Output && i + 1 != n {
            return Err((i, ParseErrorKind::Invalid("Output must be the last layer".into())));
        }
    }
    if spec.layers[n - 1] != LayerSpec::Output {
        return Err((n - 1, ParseErrorKind::Missing("final Output layer")));
    }
    shape_walk(spec).map(|_| ())
}

fn shape_walk(spec: &NetSpec) -> Result<Vec<Shape3>, (usize, ParseErrorKind)> {
    if spec.input.is_empty() {
        return Err((0, ParseErrorKind::Shape(format!("empty input shape {}", spec.input))));
    }
    // nodes[0] is the input, nodes[i + 1] the output of layer i
    let mut nodes = vec![spec.input];
    for (i, l) in spec.layers.iter().enumerate() {
        let x = nodes[i];
        let out = match *l {
            LayerSpec::Conv { filters, .. } | LayerSpec::LocalConv { filters, .. } => Shape3::new(filters, x.h, x.w),
            LayerSpec::Maxpool { stride, .. } => Shape3::new(x.c, x.h.div_ceil(stride), x.w.div_ceil(stride)),
            LayerSpec::Drop { .. } => x,
            LayerSpec::Full { units } => Shape3::flat(units),
            LayerSpec::Output => Shape3::flat(spec.classes),
            LayerSpec::Sum => {
                if i == 0 {
                    return Err((i, ParseErrorKind::Shape("Sum needs two predecessors".into())));
                }
                let y = nodes[i - 1];
                if x != y {
                    return Err((i, ParseErrorKind::Shape(format!("Sum of mismatched shapes {y} and {x}"))));
                }
                x
            }
        };
        if out.is_empty() {
            return Err((i, ParseErrorKind::Shape(format!("layer {i} has empty output {out}"))));
        }
        nodes.push(out);
    }
    Ok(nodes.split_off(1))
}

/// Output shape of every layer, in order.
pub fn infer_shapes(spec: &NetSpec) -> Result<Vec<Shape3>, ParseError> {
    shape_walk(spec).map_err(|(_, kind)| err(0, kind))
}
