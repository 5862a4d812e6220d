//! Model-formula frontend: `resp ~ term (+ term)*` where a term is a bare
//! covariate name, `s(name[, k=INT])`, or `te(name, name[, k=INT])`.

use thiserror::Error;

pub const DEFAULT_K_UNIVARIATE: usize = 10;
pub const DEFAULT_K_TENSOR: usize = 5;
pub const MIN_K: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at byte {offset}: expected s(...) or te(...)")]
    UnknownFunction { name: String, offset: usize },
    #[error("unknown named argument `{name}` at byte {offset}: only `k` is supported")]
    UnknownArgument { name: String, offset: usize },
    #[error("k={k} at byte {offset} is below the minimum of 4")]
    KTooSmall { k: usize, offset: usize },
    #[error("intercept suppression (`-1`) at byte {offset} is not supported")]
    InterceptSuppression { offset: usize },
    #[error("duplicate smooth term {label}")]
    DuplicateSmooth { label: String },
    #[error("duplicate parametric term `{name}`")]
    DuplicateParametric { name: String },
    #[error("variable `{name}` appears in both a parametric term and a smooth term")]
    ParametricSmoothOverlap { name: String },
    #[error("te(...) at byte {offset} repeats variable `{name}`")]
    TensorRepeatedVariable { name: String, offset: usize },
    #[error("variable {name} not found in the data columns")]
    MissingVariable { name: String },
    #[error("{p} coefficients for {n} rows; the model is overparameterized (pass --force to proceed anyway)")]
    TooManyCoefficients { p: usize, n: usize },
    #[error("family {family} cannot use link {link}")]
    InvalidFamilyLink { family: String, link: String },
    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("unknown link `{0}`")]
    UnknownLink(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothKind {
    S,
    Te,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmoothSpec {
    pub kind: SmoothKind,
    pub variables: Vec<String>,
    /// Basis dimension per margin: one entry for `s`, two for `te`.
    pub k: Vec<usize>,
}

impl SmoothSpec {
    pub fn label(&self) -> String {
        let f = match self.kind {
            SmoothKind::S => "s",
            SmoothKind::Te => "te",
        };
        format!("{}({})", f, self.variables.join(","))
    }

    /// Basis dimension before the centering constraint.
    pub fn raw_dim(&self) -> usize {
        self.k.iter().product()
    }

    /// Coefficient count after the centering constraint absorbs one dimension.
    pub fn centered_dim(&self) -> usize {
        self.raw_dim() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormulaAst {
    pub response: String,
    pub intercept: bool,
    pub parametric: Vec<String>,
    pub smooths: Vec<SmoothSpec>,
}

impl FormulaAst {
    /// Canonical rendering; reparsing it yields a structurally equal AST.
    pub fn pretty(&self) -> String {
        let mut terms: Vec<String> = self.parametric.clone();
        for sm in &self.smooths {
            let f = match sm.kind {
                SmoothKind::S => "s",
                SmoothKind::Te => "te",
            };
            terms.push(format!(
                "{}({},k={})",
                f,
                sm.variables.join(","),
                sm.k[0]
            ));
        }
        format!("{} ~ {}", self.response, terms.join(" + "))
    }

    /// Total coefficient count of the assembled model: intercept, parametric
    /// terms, and one centered block per smooth.
    pub fn coefficient_count(&self) -> usize {
        1 + self.parametric.len() + self.smooths.iter().map(|s| s.centered_dim()).sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Gamma,
    Binomial,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Identity,
    Log,
    Logit,
}

/// Validated family/link pair. Only the canonical pairs are allowed:
/// GAUSSIAN+IDENTITY, GAMMA+LOG, BINOMIAL+LOGIT, POISSON+LOG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FamilySpec {
    pub family: Family,
    pub link: Link,
}

impl FamilySpec {
    pub fn new(family: Family, link: Link) -> Result<Self, FormulaError> {
        let ok = matches!(
            (family, link),
            (Family::Gaussian, Link::Identity)
                | (Family::Gamma, Link::Log)
                | (Family::Binomial, Link::Logit)
                | (Family::Poisson, Link::Log)
        );
        if ok {
            Ok(FamilySpec { family, link })
        } else {
            Err(FormulaError::InvalidFamilyLink {
                family: family_name(family).to_string(),
                link: link_name(link).to_string(),
            })
        }
    }

    pub fn default_link(family: Family) -> Link {
        match family {
            Family::Gaussian => Link::Identity,
            Family::Gamma => Link::Log,
            Family::Binomial => Link::Logit,
            Family::Poisson => Link::Log,
        }
    }

    pub fn parse_names(family: &str, link: Option<&str>) -> Result<Self, FormulaError> {
        let fam = match family.to_ascii_lowercase().as_str() {
            "gaussian" => Family::Gaussian,
            "gamma" => Family::Gamma,
            "binomial" => Family::Binomial,
            "poisson" => Family::Poisson,
            _ => return Err(FormulaError::UnknownFamily(family.to_string())),
        };
        let lnk = match link {
            None => Self::default_link(fam),
            Some(l) => match l.to_ascii_lowercase().as_str() {
                "identity" => Link::Identity,
                "log" => Link::Log,
                "logit" => Link::Logit,
                _ => return Err(FormulaError::UnknownLink(l.to_string())),
            },
        };
        Self::new(fam, lnk)
    }

    pub fn family_name(&self) -> &'static str {
        family_name(self.family)
    }

    pub fn link_name(&self) -> &'static str {
        link_name(self.link)
    }

    /// eta = g(mu)
    pub fn link_eval(&self, mu: f64) -> f64 {
        match self.link {
            Link::Identity => mu,
            Link::Log => mu.ln(),
            Link::Logit => (mu / (1.0 - mu)).ln(),
        }
    }

    /// mu = g^{-1}(eta)
    pub fn link_inverse(&self, eta: f64) -> f64 {
        match self.link {
            Link::Identity => eta,
            Link::Log => eta.exp(),
            Link::Logit => 1.0 / (1.0 + (-eta).exp()),
        }
    }

    /// g'(mu) = d eta / d mu
    pub fn link_deriv(&self, mu: f64) -> f64 {
        match self.link {
            Link::Identity => 1.0,
            Link::Log => 1.0 / mu,
            Link::Logit => 1.0 / (mu * (1.0 - mu)),
        }
    }

    /// Variance function V(mu) on the proportion scale.
    pub fn variance(&self, mu: f64) -> f64 {
        match self.family {
            Family::Gaussian => 1.0,
            Family::Gamma => mu * mu,
            Family::Binomial => mu * (1.0 - mu),
            Family::Poisson => mu,
        }
    }

    /// IRLS weight w / (V(mu) g'(mu)^2).
    pub fn irls_weight(&self, mu: f64, w: f64) -> f64 {
        let g1 = self.link_deriv(mu);
        w / (self.variance(mu) * g1 * g1)
    }
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Gaussian => "GAUSSIAN",
        Family::Gamma => "GAMMA",
        Family::Binomial => "BINOMIAL",
        Family::Poisson => "POISSON",
    }
}

fn link_name(l: Link) -> &'static str {
    match l {
        Link::Identity => "IDENTITY",
        Link::Log => "LOG",
        Link::Logit => "LOGIT",
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(usize),
    Tilde,
    Plus,
    Minus,
    LParen,
    RParen,
    Comma,
    Eq,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, FormulaError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'~' => {
                out.push((Tok::Tilde, i));
                i += 1;
            }
            b'+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                out.push((Tok::Minus, i));
                i += 1;
            }
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b',' => {
                out.push((Tok::Comma, i));
                i += 1;
            }
            b'=' => {
                out.push((Tok::Eq, i));
                i += 1;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let text = &src[start..i];
                let v: usize = text.parse().map_err(|_| FormulaError::Syntax {
                    offset: start,
                    message: format!("integer `{text}` out of range"),
                })?;
                out.push((Tok::Int(v), start));
            }
            _ if b.is_ascii_alphabetic() || b == b'.' || b == b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.' || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                return Err(FormulaError::Syntax {
                    offset: i,
                    message: format!("unexpected character `{}`", src[i..].chars().next().unwrap()),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn syntax(&self, message: &str) -> FormulaError {
        FormulaError::Syntax {
            offset: self.offset(),
            message: message.to_string(),
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, usize), FormulaError> {
        match self.next() {
            Some((Tok::Ident(name), off)) => Ok((name, off)),
            Some((_, off)) => Err(FormulaError::Syntax {
                offset: off,
                message: format!("expected {what}"),
            }),
            None => Err(FormulaError::Syntax {
                offset: self.end,
                message: format!("expected {what}"),
            }),
        }
    }

    fn expect_tok(&mut self, tok: Tok, what: &str) -> Result<usize, FormulaError> {
        match self.next() {
            Some((t, off)) if t == tok => Ok(off),
            Some((_, off)) => Err(FormulaError::Syntax {
                offset: off,
                message: format!("expected {what}"),
            }),
            None => Err(FormulaError::Syntax {
                offset: self.end,
                message: format!("expected {what}"),
            }),
        }
    }

    fn expect_k(&mut self) -> Result<usize, FormulaError> {
        match self.next() {
            Some((Tok::Int(k), off)) => {
                if k < MIN_K {
                    Err(FormulaError::KTooSmall { k, offset: off })
                } else {
                    Ok(k)
                }
            }
            Some((_, off)) => Err(FormulaError::Syntax {
                offset: off,
                message: "expected an integer value for k".to_string(),
            }),
            None => Err(FormulaError::Syntax {
                offset: self.end,
                message: "expected an integer value for k".to_string(),
            }),
        }
    }

    /// Optional `, k=INT` before the closing paren of a smooth call.
    fn optional_k(&mut self) -> Result<Option<usize>, FormulaError> {
        if self.peek() != Some(&Tok::Comma) {
            return Ok(None);
        }
        self.next();
        let (name, off) = self.expect_ident("a named argument")?;
        if self.peek() != Some(&Tok::Eq) {
            return Err(FormulaError::Syntax {
                offset: self.offset(),
                message: "expected `=` after argument name".to_string(),
            });
        }
        if name != "k" {
            return Err(FormulaError::UnknownArgument { name, offset: off });
        }
        self.next(); // `=`
        Ok(Some(self.expect_k()?))
    }
}

enum Term {
    Parametric(String),
    Smooth(SmoothSpec),
}

fn parse_term(p: &mut Parser) -> Result<Term, FormulaError> {
    match p.next() {
        Some((Tok::Minus, off)) => Err(FormulaError::InterceptSuppression { offset: off }),
        Some((Tok::Ident(name), off)) => {
            if p.peek() != Some(&Tok::LParen) {
                return Ok(Term::Parametric(name));
            }
            match name.as_str() {
                "s" => {
                    p.expect_tok(Tok::LParen, "`(`")?;
                    let (var, _) = p.expect_ident("a variable name")?;
                    let k = p.optional_k()?.unwrap_or(DEFAULT_K_UNIVARIATE);
                    p.expect_tok(Tok::RParen, "`)`")?;
                    Ok(Term::Smooth(SmoothSpec {
                        kind: SmoothKind::S,
                        variables: vec![var],
                        k: vec![k],
                    }))
                }
                "te" => {
                    p.expect_tok(Tok::LParen, "`(`")?;
                    let (v1, _) = p.expect_ident("a variable name")?;
                    p.expect_tok(Tok::Comma, "`,` (te takes two variables)")?;
                    let (v2, off2) = p.expect_ident("a second variable name")?;
                    let k = p.optional_k()?.unwrap_or(DEFAULT_K_TENSOR);
                    p.expect_tok(Tok::RParen, "`)`")?;
                    if v1 == v2 {
                        return Err(FormulaError::TensorRepeatedVariable {
                            name: v2,
                            offset: off2,
                        });
                    }
                    Ok(Term::Smooth(SmoothSpec {
                        kind: SmoothKind::Te,
                        variables: vec![v1, v2],
                        k: vec![k, k],
                    }))
                }
                _ => Err(FormulaError::UnknownFunction { name, offset: off }),
            }
        }
        Some((_, off)) => Err(FormulaError::Syntax {
            offset: off,
            message: "expected a term (a variable name, s(...), or te(...))".to_string(),
        }),
        None => Err(FormulaError::Syntax {
            offset: p.end,
            message: "expected a term after `~`".to_string(),
        }),
    }
}

pub fn parse_formula(text: &str) -> Result<FormulaAst, FormulaError> {
    if text.trim().is_empty() {
        return Err(FormulaError::Syntax {
            offset: 0,
            message: "empty formula".to_string(),
        });
    }
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };

    let (response, _) = p.expect_ident("a response variable")?;
    p.expect_tok(Tok::Tilde, "`~` after the response")?;

    let mut parametric = Vec::new();
    let mut smooths = Vec::new();
    loop {
        match parse_term(&mut p)? {
            Term::Parametric(name) => parametric.push(name),
            Term::Smooth(sm) => smooths.push(sm),
        }
        match p.peek() {
            Some(Tok::Plus) => {
                p.next();
            }
            None => break,
            Some(_) => return Err(p.syntax("expected `+` or end of formula")),
        }
    }

    for (i, a) in parametric.iter().enumerate() {
        if parametric[..i].contains(a) {
            return Err(FormulaError::DuplicateParametric { name: a.clone() });
        }
    }
    for (i, sm) in smooths.iter().enumerate() {
        let mut vs = sm.variables.clone();
        vs.sort();
        for prev in &smooths[..i] {
            let mut pv = prev.variables.clone();
            pv.sort();
            if prev.kind == sm.kind && pv == vs {
                return Err(FormulaError::DuplicateSmooth { label: sm.label() });
            }
        }
    }
    for name in &parametric {
        if smooths.iter().any(|sm| sm.variables.contains(name)) {
            return Err(FormulaError::ParametricSmoothOverlap { name: name.clone() });
        }
    }

    Ok(FormulaAst {
        response,
        intercept: true,
        parametric,
        smooths,
    })
}

/// The model plan: an AST annotated with column indices, checked against the
/// ingested data header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelPlan {
    pub ast: FormulaAst,
    pub response_col: usize,
    pub parametric_cols: Vec<usize>,
    pub smooth_cols: Vec<Vec<usize>>,
    pub coefficient_count: usize,
}

pub fn validate_against_data(
    ast: &FormulaAst,
    columns: &[String],
    n_rows: usize,
    allow_overparameterized: bool,
) -> Result<ModelPlan, FormulaError> {
    let find = |name: &str| -> Result<usize, FormulaError> {
        columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| FormulaError::MissingVariable {
                name: name.to_string(),
            })
    };
    let response_col = find(&ast.response)?;
    let parametric_cols = ast
        .parametric
        .iter()
        .map(|v| find(v))
        .collect::<Result<Vec<_>, _>>()?;
    let smooth_cols = ast
        .smooths
        .iter()
        .map(|sm| sm.variables.iter().map(|v| find(v)).collect())
        .collect::<Result<Vec<_>, _>>()?;

    let coefficient_count = ast.coefficient_count();
    if coefficient_count >= n_rows && !allow_overparameterized {
        return Err(FormulaError::TooManyCoefficients {
            p: coefficient_count,
            n: n_rows,
        });
    }

    Ok(ModelPlan {
        ast: ast.clone(),
        response_col,
        parametric_cols,
        smooth_cols,
        coefficient_count,
    })
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn name_strategy() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9_.]{0,6}".prop_filter("reserve fn names", |s| s != "s" && s != "te")
    }

    fn formula_strategy() -> impl Strategy<Value = FormulaAst> {
        (
            name_strategy(),
            proptest::collection::vec(name_strategy(), 0..3),
            proptest::collection::vec((name_strategy(), 4usize..25), 0..3),
            proptest::collection::vec(((name_strategy(), name_strategy()), 4usize..8), 0..2),
        )
            .prop_filter_map("distinct terms", |(resp, params, svars, tvars)| {
                let mut params: Vec<String> = params;
                params.sort();
                params.dedup();
                let mut smooths = Vec::new();
                let mut seen: Vec<(SmoothKind, Vec<String>)> = Vec::new();
                for (v, k) in svars {
                    let key = (SmoothKind::S, vec![v.clone()]);
                    if seen.contains(&key) {
                        continue;
                    }
                    seen.push(key);
                    smooths.push(SmoothSpec {
                        kind: SmoothKind::S,
                        variables: vec![v],
                        k: vec![k],
                    });
                }
                for ((a, b), k) in tvars {
                    if a == b {
                        continue;
                    }
                    let mut set = vec![a.clone(), b.clone()];
                    set.sort();
                    let key = (SmoothKind::Te, set);
                    if seen.contains(&key) {
                        continue;
                    }
                    seen.push(key);
                    smooths.push(SmoothSpec {
                        kind: SmoothKind::Te,
                        variables: vec![a, b],
                        k: vec![k, k],
                    });
                }
                let all_smooth_vars: Vec<&String> =
                    smooths.iter().flat_map(|s| s.variables.iter()).collect();
                let params: Vec<String> = params
                    .into_iter()
                    .filter(|p| !all_smooth_vars.contains(&p))
                    .collect();
                if params.is_empty() && smooths.is_empty() {
                    return None;
                }
                Some(FormulaAst {
                    response: resp,
                    intercept: true,
                    parametric: params,
                    smooths,
                })
            })
    }

    proptest! {
        #[test]
        fn pretty_print_round_trips(ast in formula_strategy()) {
            let text = ast.pretty();
            let back = parse_formula(&text).unwrap();
            prop_assert_eq!(back, ast);
        }

        #[test]
        fn parsing_never_panics(text in "[a-z0-9 ~+(),=._!-]{0,40}") {
            let _ = parse_formula(&text);
        }
    }
}
