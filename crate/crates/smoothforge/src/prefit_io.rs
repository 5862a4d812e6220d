//! Prefit persistence: a single self-describing text file, format tag
//! "smoothforge-prefit-v1". Key/value headers followed by dense arrays
//! written row-major with explicit dimensions; every token is
//! whitespace-delimited and floats use shortest round-trip decimals, so a
//! saved prefit reloads bit-exactly. Field layout is documented in the README.

use crate::assemble::{AssembleOptions, Prefit, SpPrior};
use crate::basis::{DiagRanges, KnotVector, PenaltyMatrix, Reparam, SmoothBlock};
use crate::error::Error;
use crate::formula::{parse_formula, FamilySpec, SmoothKind};
use crate::numfmt::fmt_f64;
use nalgebra::{DMatrix, DVector};

pub const FORMAT_TAG: &str = "smoothforge-prefit-v1";

const WRAP: usize = 8;

fn push_values(out: &mut String, values: impl Iterator<Item = f64>) {
    for (i, v) in values.enumerate() {
        if i > 0 {
            if i % WRAP == 0 {
                out.push('\n');
            } else {
                out.push(' ');
            }
        }
        out.push_str(&fmt_f64(v));
    }
    out.push('\n');
}

fn push_vector(out: &mut String, name: &str, v: &DVector<f64>) {
    out.push_str(&format!("{name} {}\n", v.len()));
    if v.len() > 0 {
        push_values(out, v.iter().copied());
    }
}

fn push_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    out.push_str(&format!("{name} {} {}\n", m.nrows(), m.ncols()));
    if m.nrows() * m.ncols() > 0 {
        push_values(out, m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
    }
}

pub fn render_prefit(prefit: &Prefit) -> String {
    let mut out = String::new();
    out.push_str(FORMAT_TAG);
    out.push('\n');
    // the compact formula has no spaces, so it reads back as one token
    out.push_str(&format!(
        "formula {}\n",
        prefit.formula.pretty().replace(' ', "")
    ));
    out.push_str(&format!(
        "family {} {}\n",
        prefit.family.family_name(),
        prefit.family.link_name()
    ));
    match prefit.options.sp_prior {
        SpPrior::Gamma => out.push_str("sp_prior GAMMA\n"),
        SpPrior::LogUniform { lo, hi } => {
            out.push_str(&format!("sp_prior LOGUNIFORM {} {}\n", fmt_f64(lo), fmt_f64(hi)))
        }
    }
    out.push_str(&format!("diagonalize {}\n", prefit.options.diagonalize));
    out.push_str(&format!("n_dropped {}\n", prefit.n_dropped));
    out.push_str(&format!("sp_count {}\n", prefit.sp_count));
    match prefit.tau_init {
        Some(t) => out.push_str(&format!("tau_init {}\n", fmt_f64(t))),
        None => out.push_str("tau_init none\n"),
    }
    out.push_str(&format!("parametric_idx {}\n", prefit.parametric_idx.len()));
    for (i, idx) in prefit.parametric_idx.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&idx.to_string());
    }
    out.push('\n');
    push_vector(&mut out, "param_prior_tau", &prefit.param_prior_tau);
    push_vector(&mut out, "lambda_init", &prefit.lambda_init);
    push_vector(&mut out, "b_init", &prefit.b_init);
    push_vector(&mut out, "y", &prefit.y);
    push_vector(&mut out, "w", &prefit.w);
    push_matrix(&mut out, "X", &prefit.x);

    out.push_str(&format!("terms {}\n", prefit.terms.len()));
    for block in &prefit.terms {
        out.push_str(&format!("term {}\n", block.label));
        out.push_str(&format!(
            "kind {}\n",
            match block.kind {
                SmoothKind::S => "S",
                SmoothKind::Te => "TE",
            }
        ));
        out.push_str(&format!(
            "variables {} {}\n",
            block.variables.len(),
            block.variables.join(" ")
        ));
        out.push_str(&format!(
            "k {} {}\n",
            block.k.len(),
            block
                .k
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        ));
        out.push_str(&format!("coef_offset {}\n", block.coef_offset));
        out.push_str(&format!("lambda_offset {}\n", block.lambda_offset));
        out.push_str(&format!("lambda_count {}\n", block.lambda_count));
        out.push_str(&format!("null_dim {}\n", block.null_dim));
        out.push_str(&format!("knots {}\n", block.knots.len()));
        for kv in &block.knots {
            out.push_str(&format!(
                "knotvec {} {} {}\n",
                kv.knots.len(),
                fmt_f64(kv.data_range.0),
                fmt_f64(kv.data_range.1)
            ));
            push_values(&mut out, kv.knots.iter().copied());
        }
        match &block.centering {
            Some(z) => push_matrix(&mut out, "centering", z),
            None => out.push_str("centering none\n"),
        }
        match &block.reparam {
            Some(rp) => {
                push_matrix(&mut out, "reparam", &rp.u);
                push_vector(&mut out, "d", &rp.d);
            }
            None => out.push_str("reparam none\n"),
        }
        match block.diag {
            Some(r) => out.push_str(&format!("diag {} {}\n", r.penalized, r.null)),
            None => out.push_str("diag none\n"),
        }
        out.push_str(&format!("penalties {}\n", block.penalties.len()));
        for pen in &block.penalties {
            out.push_str(&format!("penalty {} {}\n", pen.label, pen.rank));
            push_matrix(&mut out, "S", &pen.s);
        }
    }
    out
}

struct TokenReader<'a> {
    toks: std::str::SplitWhitespace<'a>,
    source: String,
}

impl<'a> TokenReader<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            file: self.source.clone(),
            detail: detail.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str, Error> {
        self.toks
            .next()
            .ok_or_else(|| self.err(format!("unexpected end of file, expected {what}")))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), Error> {
        let t = self.next(kw)?;
        if t == kw {
            Ok(())
        } else {
            Err(self.err(format!("expected `{kw}`, found `{t}`")))
        }
    }

    fn usize(&mut self, what: &str) -> Result<usize, Error> {
        let t = self.next(what)?;
        t.parse()
            .map_err(|_| self.err(format!("expected integer {what}, found `{t}`")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, Error> {
        let t = self.next(what)?;
        t.parse()
            .map_err(|_| self.err(format!("expected number {what}, found `{t}`")))
    }

    fn vector(&mut self, name: &str) -> Result<DVector<f64>, Error> {
        self.keyword(name)?;
        let len = self.usize("vector length")?;
        let mut v = DVector::zeros(len);
        for i in 0..len {
            v[i] = self.f64("vector element")?;
        }
        Ok(v)
    }

    fn matrix(&mut self, name: &str) -> Result<DMatrix<f64>, Error> {
        self.keyword(name)?;
        self.matrix_body()
    }

    fn matrix_body(&mut self) -> Result<DMatrix<f64>, Error> {
        let r = self.usize("matrix rows")?;
        let c = self.usize("matrix cols")?;
        let mut m = DMatrix::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                m[(i, j)] = self.f64("matrix element")?;
            }
        }
        Ok(m)
    }
}

pub fn parse_prefit(text: &str, source: &str) -> Result<Prefit, Error> {
    let mut r = TokenReader {
        toks: text.split_whitespace(),
        source: source.to_string(),
    };
    let tag = r.next("format tag")?;
    if tag != FORMAT_TAG {
        return Err(r.err(format!("expected format tag `{FORMAT_TAG}`, found `{tag}`")));
    }
    r.keyword("formula")?;
    let formula_text = r.next("formula string")?;
    let formula = parse_formula(formula_text).map_err(|e| r.err(format!("bad formula: {e}")))?;
    r.keyword("family")?;
    let fam = r.next("family")?.to_string();
    let link = r.next("link")?.to_string();
    let family = FamilySpec::parse_names(&fam, Some(&link))
        .map_err(|e| r.err(format!("bad family: {e}")))?;
    r.keyword("sp_prior")?;
    let sp_prior = match r.next("sp prior kind")? {
        "GAMMA" => SpPrior::Gamma,
        "LOGUNIFORM" => {
            let lo = r.f64("lo")?;
            let hi = r.f64("hi")?;
            SpPrior::LogUniform { lo, hi }
        }
        other => return Err(r.err(format!("unknown sp_prior `{other}`"))),
    };
    r.keyword("diagonalize")?;
    let diagonalize = match r.next("diagonalize flag")? {
        "true" => true,
        "false" => false,
        other => return Err(r.err(format!("bad diagonalize flag `{other}`"))),
    };
    r.keyword("n_dropped")?;
    let n_dropped = r.usize("n_dropped")?;
    r.keyword("sp_count")?;
    let sp_count = r.usize("sp_count")?;
    r.keyword("tau_init")?;
    let tau_tok = r.next("tau_init")?;
    let tau_init = if tau_tok == "none" {
        None
    } else {
        Some(
            tau_tok
                .parse()
                .map_err(|_| r.err(format!("bad tau_init `{tau_tok}`")))?,
        )
    };
    r.keyword("parametric_idx")?;
    let n_idx = r.usize("parametric_idx count")?;
    let mut parametric_idx = Vec::with_capacity(n_idx);
    for _ in 0..n_idx {
        parametric_idx.push(r.usize("parametric index")?);
    }
    let param_prior_tau = r.vector("param_prior_tau")?;
    let lambda_init = r.vector("lambda_init")?;
    let b_init = r.vector("b_init")?;
    let y = r.vector("y")?;
    let w = r.vector("w")?;
    let x = r.matrix("X")?;

    r.keyword("terms")?;
    let n_terms = r.usize("term count")?;
    let mut terms = Vec::with_capacity(n_terms);
    for _ in 0..n_terms {
        r.keyword("term")?;
        let label = r.next("term label")?.to_string();
        r.keyword("kind")?;
        let kind = match r.next("kind")? {
            "S" => SmoothKind::S,
            "TE" => SmoothKind::Te,
            other => return Err(r.err(format!("unknown smooth kind `{other}`"))),
        };
        r.keyword("variables")?;
        let nv = r.usize("variable count")?;
        let mut variables = Vec::with_capacity(nv);
        for _ in 0..nv {
            variables.push(r.next("variable name")?.to_string());
        }
        r.keyword("k")?;
        let nk = r.usize("k count")?;
        let mut k = Vec::with_capacity(nk);
        for _ in 0..nk {
            k.push(r.usize("k value")?);
        }
        r.keyword("coef_offset")?;
        let coef_offset = r.usize("coef_offset")?;
        r.keyword("lambda_offset")?;
        let lambda_offset = r.usize("lambda_offset")?;
        r.keyword("lambda_count")?;
        let lambda_count = r.usize("lambda_count")?;
        r.keyword("null_dim")?;
        let null_dim = r.usize("null_dim")?;
        r.keyword("knots")?;
        let nkv = r.usize("knot vector count")?;
        let mut knots = Vec::with_capacity(nkv);
        for _ in 0..nkv {
            r.keyword("knotvec")?;
            let len = r.usize("knot count")?;
            let lo = r.f64("range lo")?;
            let hi = r.f64("range hi")?;
            let mut kvals = Vec::with_capacity(len);
            for _ in 0..len {
                kvals.push(r.f64("knot")?);
            }
            knots.push(KnotVector {
                knots: kvals,
                data_range: (lo, hi),
            });
        }
        r.keyword("centering")?;
        let centering = {
            let t = r.next("centering")?;
            if t == "none" {
                None
            } else {
                let rows: usize = t
                    .parse()
                    .map_err(|_| r.err(format!("bad centering rows `{t}`")))?;
                let cols = r.usize("centering cols")?;
                let mut m = DMatrix::zeros(rows, cols);
                for i in 0..rows {
                    for j in 0..cols {
                        m[(i, j)] = r.f64("centering element")?;
                    }
                }
                Some(m)
            }
        };
        r.keyword("reparam")?;
        let reparam = {
            let t = r.next("reparam")?;
            if t == "none" {
                None
            } else {
                let rows: usize = t
                    .parse()
                    .map_err(|_| r.err(format!("bad reparam rows `{t}`")))?;
                let cols = r.usize("reparam cols")?;
                let mut u = DMatrix::zeros(rows, cols);
                for i in 0..rows {
                    for j in 0..cols {
                        u[(i, j)] = r.f64("reparam element")?;
                    }
                }
                let d = r.vector("d")?;
                Some(Reparam { u, d })
            }
        };
        r.keyword("diag")?;
        let diag = {
            let t = r.next("diag")?;
            if t == "none" {
                None
            } else {
                let penalized: usize = t
                    .parse()
                    .map_err(|_| r.err(format!("bad diag ranges `{t}`")))?;
                let null = r.usize("diag null")?;
                Some(DiagRanges { penalized, null })
            }
        };
        r.keyword("penalties")?;
        let np = r.usize("penalty count")?;
        let mut penalties = Vec::with_capacity(np);
        for _ in 0..np {
            r.keyword("penalty")?;
            let plabel = r.next("penalty label")?.to_string();
            let rank = r.usize("penalty rank")?;
            let s = r.matrix("S")?;
            penalties.push(PenaltyMatrix {
                s,
                rank,
                label: plabel,
            });
        }
        let p_c = if let Some(z) = &centering {
            z.ncols()
        } else if let Some(d) = diag {
            d.penalized + d.null
        } else if let Some(pen) = penalties.first() {
            pen.s.nrows()
        } else {
            return Err(r.err(format!("term `{label}` has no recoverable width")));
        };
        terms.push(SmoothBlock {
            label,
            kind,
            variables,
            k,
            x: x.view((0, coef_offset), (x.nrows(), p_c)).clone_owned(),
            penalties,
            null_dim,
            knots,
            centering,
            reparam,
            diag,
            coef_offset,
            lambda_offset,
            lambda_count,
        });
    }

    Ok(Prefit {
        formula,
        family,
        y,
        w,
        x,
        terms,
        parametric_idx,
        sp_count,
        b_init,
        lambda_init,
        tau_init,
        param_prior_tau,
        options: AssembleOptions {
            diagonalize,
            sp_prior,
        },
        n_dropped,
    })
}

pub fn load_prefit(path: &std::path::Path) -> Result<Prefit, Error> {
    let text = std::fs::read_to_string(path)?;
    parse_prefit(&text, &path.display().to_string())
}
