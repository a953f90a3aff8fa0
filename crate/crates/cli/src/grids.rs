//! Parsing of numeric grids given on the command line.

use anyhow::{bail, Context, Result};

/// Parse `a:b:Klog` (K log-spaced points), `a:b:log` (two points per
/// decade, endpoints included) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if let Some((range, spec)) = s.rsplit_once(':') {
        let (a, b) = range
            .split_once(':')
            .with_context(|| format!("grid '{s}' must look like a:b:log or a:b:Klog"))?;
        let a: f64 = a
            .trim()
            .parse()
            .with_context(|| format!("bad grid start in '{s}'"))?;
        let b: f64 = b
            .trim()
            .parse()
            .with_context(|| format!("bad grid end in '{s}'"))?;
        if !(a > 0.0 && b > 0.0) || a == b {
            bail!("log grid '{s}' needs two distinct positive endpoints");
        }
        let count = match spec.trim().strip_suffix("log") {
            Some("") => ((b / a).log10().abs() * 2.0).round() as usize + 1,
            Some(k) => k
                .parse::<usize>()
                .with_context(|| format!("bad point count in '{s}'"))?,
            None => bail!("grid '{s}' must end in 'log' or 'Klog'"),
        };
        if count < 2 {
            bail!("log grid '{s}' needs at least two points");
        }
        let (la, lb) = (a.ln(), b.ln());
        return Ok((0..count)
            .map(|i| match i {
                0 => a,
                i if i == count - 1 => b,
                i => (la + (lb - la) * i as f64 / (count - 1) as f64).exp(),
            })
            .collect());
    }
    let values = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number '{v}' in list '{s}'"))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        bail!("empty grid");
    }
    Ok(values)
}

/// Parse a comma-separated point such as `0,0,0`.
pub fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("bad coordinate '{v}' in '{s}'"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_decade_grid() {
        let g = parse_grid("1e-1:1e-3:log").unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[4], 1e-3);
        assert!((g[1] - 10f64.powf(-1.5)).abs() < 1e-15);
    }

    #[test]
    fn counted_and_listed_grids() {
        let g = parse_grid("0.02:0.5:8log").unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!((g[0], g[7]), (0.02, 0.5));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(parse_grid("0.1, 0.01").unwrap(), vec![0.1, 0.01]);
        assert!(parse_grid("0:1:log").is_err());
        assert!(parse_grid("1:2:3lin").is_err());
        assert!(parse_grid("a,b").is_err());
        assert_eq!(parse_point("0,1.5,-2").unwrap(), vec![0.0, 1.5, -2.0]);
    }
}
