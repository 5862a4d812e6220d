//! Emit the sampler-language model file: byte-reproducible for fixed inputs,
//! with auto-generated comments marking each component.

use crate::assemble::{Prefit, SpPrior};
use crate::formula::{Family, Link};
use crate::numfmt::{fmt_f64, fmt_sig6};
use std::fmt::Write;

/// Prior lines for one multivariate-normal smooth: the lambda-weighted sum of
/// slab slices builds the precision K, then a dmnorm statement covers the
/// smooth's coefficient range. Indices are 1-based; `lambda_start` and
/// `coef_start` point at the block's first smoothing parameter and
/// coefficient, `m` is the number of penalties in the slab.
pub fn smooth_prior_block(
    number: usize,
    p_c: usize,
    m: usize,
    lambda_start: usize,
    coef_start: usize,
) -> String {
    let terms: Vec<String> = (0..m)
        .map(|j| {
            format!(
                "S{number}[1:{p_c},{}:{}] * lambda[{}]",
                j * p_c + 1,
                (j + 1) * p_c,
                lambda_start + j
            )
        })
        .collect();
    let last = coef_start + p_c - 1;
    format!(
        "  K{number} <- {}\n  b[{coef_start}:{last}] ~ dmnorm(zero[{coef_start}:{last}],K{number})\n",
        terms.join(" + ")
    )
}

/// Smoothing-parameter prior loop. Empty when there is nothing to smooth.
pub fn sp_prior_block(sp_count: usize, sp_prior: &SpPrior) -> String {
    if sp_count == 0 {
        return String::new();
    }
    match sp_prior {
        SpPrior::Gamma => format!(
            "  ## smoothing parameter priors CHECK...\n  for (i in 1:{sp_count}) {{\n    lambda[i] ~ dgamma(.05,.005)\n    rho[i] <- log(lambda[i])\n  }}\n"
        ),
        SpPrior::LogUniform { lo, hi } => format!(
            "  ## smoothing parameter priors CHECK...\n  for (i in 1:{sp_count}) {{\n    rho[i] ~ dunif({},{})\n    lambda[i] <- exp(rho[i])\n  }}\n",
            fmt_f64(*lo),
            fmt_f64(*hi)
        ),
    }
}

pub fn emit_model(prefit: &Prefit) -> String {
    let mut out = String::new();
    let family = prefit.family;
    out.push_str("model {\n");

    if family.link == Link::Identity {
        out.push_str("  mu <- X %*% b ## expected response\n");
    } else {
        out.push_str("  eta <- X %*% b\n");
        let inv = match family.link {
            Link::Log => "exp",
            Link::Logit => "ilogit",
            Link::Identity => unreachable!(),
        };
        let _ = writeln!(
            out,
            "  for (i in 1:n) {{ mu[i] <- {inv}(eta[i]) }} ## expected response"
        );
    }

    match family.family {
        Family::Gamma => {
            out.push_str("  for (i in 1:n) { y[i] ~ dgamma(r,r/mu[i]) } ## response\n");
            out.push_str("  r ~ dgamma(.05,.005) ## scale parameter prior\n");
            out.push_str("  scale <- 1/r ## convert r to standard GLM scale\n");
        }
        Family::Binomial => {
            out.push_str("  for (i in 1:n) { y[i] ~ dbin(mu[i],w[i]) } ## response\n");
        }
        Family::Poisson => {
            out.push_str("  for (i in 1:n) { y[i] ~ dpois(mu[i]) } ## response\n");
        }
        Family::Gaussian => {
            out.push_str("  for (i in 1:n) { y[i] ~ dnorm(mu[i],tau) } ## response\n");
            out.push_str("  scale <- 1/tau ## convert tau to standard GLM scale\n");
            out.push_str("  tau ~ dgamma(.05,.005) ## precision parameter prior\n");
        }
    }

    // One shared constant for the parametric block, the vaguest of the
    // per-coefficient precisions.
    let np = prefit.parametric_idx.len();
    let tau_min = prefit
        .param_prior_tau
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    out.push_str("  ## Parameteric effect priors CHECK tau is appropriate!\n");
    let _ = writeln!(
        out,
        "  for (i in 1:{np}) {{ b[i] ~ dnorm(0,{}) }}",
        fmt_sig6(tau_min)
    );

    for (t, block) in prefit.terms.iter().enumerate() {
        let _ = writeln!(out, "  ## prior for {}...", block.label);
        if let Some(ranges) = block.diag {
            let start = block.coef_offset + 1;
            let pen_end = block.coef_offset + ranges.penalized;
            let _ = writeln!(
                out,
                "  for (i in {start}:{pen_end}) {{ b[i] ~ dnorm(0,lambda[{}]) }}",
                block.lambda_offset + 1
            );
            if ranges.null > 0 {
                let null_start = pen_end + 1;
                let null_end = block.coef_offset + block.p_c();
                let _ = writeln!(
                    out,
                    "  for (i in {null_start}:{null_end}) {{ b[i] ~ dnorm(0,lambda[{}]) }}",
                    block.lambda_offset + 2
                );
            }
        } else {
            out.push_str(&smooth_prior_block(
                t + 1,
                block.p_c(),
                block.penalties.len(),
                block.lambda_offset + 1,
                block.coef_offset + 1,
            ));
        }
    }

    out.push_str(&sp_prior_block(prefit.sp_count, &prefit.options.sp_prior));
    out.push_str("}\n");
    out
}
