//! Weight-grid specifications for the sweep command.
//!
//! A spec names the component to vary and either a range or a list:
//!
//! - `eps1=0.1:1.0:0.1` — start:stop:step (inclusive)
//! - `eps3=0,0.05,0.1,0.15,0.2` — explicit values

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridVar {
    Eps1,
    Eps3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub var: GridVar,
    pub values: Vec<f64>,
}

pub fn parse_grid(spec: &str) -> Result<GridSpec, String> {
    let (name, rest) = spec
        .split_once('=')
        .ok_or_else(|| format!("grid spec {spec:?} must look like eps1=start:stop:step"))?;
    let var = match name.trim() {
        "eps1" => GridVar::Eps1,
        "eps3" => GridVar::Eps3,
        other => return Err(format!("grid variable must be eps1 or eps3, got {other:?}")),
    };
    let values: Vec<f64> = if rest.contains(':') {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("range {rest:?} must be start:stop:step"));
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        let (start, stop, step) = (nums[0], nums[1], nums[2]);
        if !step.is_finite() || step <= 0.0 || stop < start {
            return Err(format!("range {rest:?} must have stop >= start and step > 0"));
        }
        let count = ((stop - start) / step).round() as usize + 1;
        (0..count).map(|i| start + i as f64 * step).collect()
    } else {
        rest.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        return Err("grid has no points".to_string());
    }
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(format!("grid values must lie in [0, 1]: {values:?}"));
    }
    Ok(GridSpec { var, values })
}
