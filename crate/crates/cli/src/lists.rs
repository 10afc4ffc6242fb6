//! Budget lists such as `4,8,16`, `4,8,...,512` or `10,20,…,100`.

use crate::error::CliError;

fn bad(s: &str, why: &str) -> CliError {
    CliError::Input(format!("malformed budget list {s:?}: {why}"))
}

fn number(s: &str, part: &str) -> Result<usize, CliError> {
    let n: usize = part
        .trim()
        .parse()
        .map_err(|_| bad(s, &format!("{part:?} is not a size")))?;
    if n == 0 {
        return Err(bad(s, "sizes must be at least 1"));
    }
    Ok(n)
}

fn is_ellipsis(part: &str) -> bool {
    matches!(part.trim(), "..." | "…")
}

/// Expands an ellipsis `a,b,...,c`: geometric when `b/a` is an integer ratio
/// of at least 2 that reaches `c` exactly, arithmetic otherwise.
fn expand(s: &str, a: usize, b: usize, c: usize) -> Result<Vec<usize>, CliError> {
    if b <= a || c < b {
        return Err(bad(s, "an ellipsis needs increasing endpoints"));
    }
    if b.is_multiple_of(a) && b / a >= 2 {
        let r = b / a;
        let mut out = vec![a];
        let mut x = a;
        while x < c {
            x = x.checked_mul(r).ok_or_else(|| bad(s, "sizes overflow"))?;
            out.push(x);
        }
        if x == c {
            return Ok(out);
        }
    }
    let step = b - a;
    if !(c - a).is_multiple_of(step) {
        return Err(bad(s, &format!("{c} is not reached from {a} in steps of {step}")));
    }
    Ok((a..=c).step_by(step).collect())
}

pub fn parse_budgets(s: &str) -> Result<Vec<usize>, CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    let out = match parts.iter().position(|p| is_ellipsis(p)) {
        None => parts.iter().map(|p| number(s, p)).collect::<Result<Vec<_>, _>>()?,
        Some(i) => {
            if i != 2 || parts.len() != 4 {
                return Err(bad(s, "use the form a,b,...,c"));
            }
            expand(s, number(s, parts[0])?, number(s, parts[1])?, number(s, parts[3])?)?
        }
    };
    if out.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad(s, "sizes must be strictly increasing"));
    }
    Ok(out)
}
