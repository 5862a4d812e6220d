//! The sampler's native data dump syntax: scalars as `"n" <- 230`, vectors
//! as `"y" <- c(...)`, matrices as `"X" <- structure(c(...), .Dim = c(r, c))`
//! with column-major element order. Values use shortest round-trip decimals
//! so re-parsing reproduces every f64 bit-exactly.

use crate::assemble::DumpValue;
use crate::numfmt::fmt_f64;

const WRAP: usize = 8;

fn join_wrapped(values: impl Iterator<Item = f64>) -> String {
    let mut out = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            out.push(',');
            if i % WRAP == 0 {
                out.push('\n');
            } else {
                out.push(' ');
            }
        }
        out.push_str(&fmt_f64(v));
    }
    out
}

pub fn render_dump(entries: &[(String, DumpValue)]) -> String {
    let mut out = String::new();
    for (name, value) in entries {
        match value {
            DumpValue::Int(v) => out.push_str(&format!("\"{name}\" <- {v}\n")),
            DumpValue::Real(v) => out.push_str(&format!("\"{name}\" <- {}\n", fmt_f64(*v))),
            DumpValue::Vector(v) => out.push_str(&format!(
                "\"{name}\" <- c({})\n",
                join_wrapped(v.iter().copied())
            )),
            DumpValue::Matrix(m) => out.push_str(&format!(
                "\"{name}\" <- structure(c({}), .Dim = c({}, {}))\n",
                join_wrapped(m.iter().copied()), // nalgebra iterates column-major
                m.nrows(),
                m.ncols()
            )),
        }
    }
    out
}
