//! Scenario configurations: named parameters with defaults, an optional
//! sweep over one real parameter, and dispatch to the scenario kernels.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioId {
    BmCdf,
    BmMean,
    Nonrev,
    LqControl,
    Queue,
    Vasicek,
    RateDrop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Real(f64),
    Flag(bool),
    /// Row-major rows.
    Matrix(Vec<Vec<f64>>),
}

impl ParamValue {
    fn kind(&self) -> &'static str {
        match self {
            ParamValue::Real(_) => "a number",
            ParamValue::Flag(_) => "a boolean",
            ParamValue::Matrix(_) => "a matrix",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub variable: String,
    pub values: Vec<f64>,
}

fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    let step = (stop - start) / (points - 1) as f64;
    (0..points).map(|i| start + step * i as f64).collect()
}

fn real(x: f64) -> ParamValue {
    ParamValue::Real(x)
}

fn matrix(rows: &[&[f64]]) -> ParamValue {
    ParamValue::Matrix(rows.iter().map(|r| r.to_vec()).collect())
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 7] = [
        ScenarioId::BmCdf,
        ScenarioId::BmMean,
        ScenarioId::Nonrev,
        ScenarioId::LqControl,
        ScenarioId::Queue,
        ScenarioId::Vasicek,
        ScenarioId::RateDrop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::BmCdf => "bm-cdf",
            ScenarioId::BmMean => "bm-mean",
            ScenarioId::Nonrev => "nonrev",
            ScenarioId::LqControl => "lq-control",
            ScenarioId::Queue => "queue",
            ScenarioId::Vasicek => "vasicek",
            ScenarioId::RateDrop => "rate-drop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == s)
    }

    /// Parameter names with their default values.
    pub fn defaults(self) -> Vec<(&'static str, ParamValue)> {
        match self {
            ScenarioId::BmCdf => {
                vec![("mu", real(1.0)), ("a", real(2.0)), ("alpha", real(0.2)), ("horizon", real(2.0))]
            }
            ScenarioId::BmMean => vec![("mu", real(1.0)), ("a", real(2.0)), ("alpha", real(0.2))],
            ScenarioId::Nonrev => vec![("strength", real(1.0))],
            ScenarioId::LqControl => vec![
                ("kappa", real(2.0)),
                ("alpha", real(0.5)),
                ("lambda", real(0.5)),
                ("b", matrix(&[&[2.0, 0.1], &[0.1, -1.0]])),
                ("d", matrix(&[&[1.0], &[0.0]])),
                ("q", matrix(&[&[1.0, 0.0], &[0.0, 1.0]])),
                ("r", matrix(&[&[1.0]])),
                ("sigma0", matrix(&[&[0.0, 0.0], &[0.0, 0.0]])),
                ("sigma", matrix(&[&[1.0, 0.0], &[0.0, 1.0]])),
            ],
            ScenarioId::Queue => {
                vec![("alpha", real(1.0)), ("rho", real(1.0)), ("delta", real(0.05)), ("epsilon", real(0.05))]
            }
            ScenarioId::Vasicek => vec![
                ("r", real(1.25)),
                ("sigma", real(4.0)),
                ("gamma", real(2.0)),
                ("sigma_tilde", real(1.0)),
                ("strike", real(1.0)),
                ("level", real(0.5)),
                ("x0", real(2.0)),
            ],
            ScenarioId::RateDrop => vec![
                ("r", real(2.0)),
                ("sigma", real(3.0)),
                ("strike", real(1.0)),
                ("level", real(0.5)),
                ("x0", real(2.0)),
                ("dr_plus", real(0.3)),
                ("t_f", real(1.0)),
                ("kappa_optimize", ParamValue::Flag(false)),
            ],
        }
    }

    /// Sweep used when none is configured.
    pub fn default_sweep(self) -> Option<Sweep> {
        let sweep = |variable: &str, values: Vec<f64>| Some(Sweep { variable: variable.to_string(), values });
        match self {
            ScenarioId::BmCdf => sweep("horizon", linspace(0.2, 10.0, 50)),
            ScenarioId::Nonrev => sweep("strength", linspace(0.0, 3.0, 13)),
            ScenarioId::LqControl => sweep("kappa", linspace(1.0, 6.0, 11)),
            ScenarioId::Vasicek => {
                let mut v = vec![1e-3];
                v.extend(linspace(0.25, 3.0, 12));
                sweep("sigma_tilde", v)
            }
            ScenarioId::RateDrop => sweep("t_f", linspace(0.0, 4.0, 17)),
            ScenarioId::BmMean | ScenarioId::Queue => None,
        }
    }

    /// Whether a Monte Carlo cross-check exists for this scenario.
    pub fn supports_validation(self) -> bool {
        !matches!(self, ScenarioId::Nonrev)
    }
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A fully specified scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub id: ScenarioId,
    pub params: BTreeMap<String, ParamValue>,
    pub sweep: Option<Sweep>,
    /// Multiplier on the relative-entropy budget; values other than 1 only
    /// serve as a negative control for validation.
    pub budget_scale: f64,
}

impl ScenarioConfig {
    /// Configuration with every parameter and the sweep at their defaults.
    pub fn new(id: ScenarioId) -> Self {
        let params = id.defaults().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        Self { id, params, sweep: id.default_sweep(), budget_scale: 1.0 }
    }

    pub fn set(&mut self, name: &str, value: ParamValue) -> Result<()> {
        let Some(current) = self.params.get(name) else {
            let known: Vec<&str> = self.params.keys().map(String::as_str).collect();
            return config_err(format!("unknown parameter `{name}` for {}; expected one of {known:?}", self.id));
        };
        let value = match (current, value) {
            (ParamValue::Flag(_), ParamValue::Real(x)) if x == 0.0 || x == 1.0 => ParamValue::Flag(x == 1.0),
            (ParamValue::Real(_), v @ ParamValue::Real(_))
            | (ParamValue::Flag(_), v @ ParamValue::Flag(_))
            | (ParamValue::Matrix(_), v @ ParamValue::Matrix(_)) => v,
            (cur, v) => {
                return config_err(format!("parameter `{name}` must be {}, got {}", cur.kind(), v.kind()));
            }
        };
        if let ParamValue::Matrix(rows) = &value {
            if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len() || r.is_empty()) {
                return config_err(format!("parameter `{name}` must be a rectangular nonempty matrix"));
            }
        }
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    pub fn set_sweep(&mut self, sweep: Option<Sweep>) -> Result<()> {
        if let Some(s) = &sweep {
            match self.params.get(&s.variable) {
                Some(ParamValue::Real(_)) => {}
                _ => {
                    return config_err(format!(
                        "sweep variable `{}` is not a real parameter of {}",
                        s.variable, self.id
                    ))
                }
            }
            check_grid(&s.values)?;
        }
        self.sweep = sweep;
        Ok(())
    }

    pub fn real(&self, name: &str) -> Result<f64> {
        match self.params.get(name) {
            Some(ParamValue::Real(x)) => Ok(*x),
            _ => config_err(format!("missing real parameter `{name}`")),
        }
    }

    pub fn flag(&self, name: &str) -> Result<bool> {
        match self.params.get(name) {
            Some(ParamValue::Flag(x)) => Ok(*x),
            _ => config_err(format!("missing boolean parameter `{name}`")),
        }
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        match self.params.get(name) {
            Some(ParamValue::Matrix(rows)) => {
                let (n, m) = (rows.len(), rows[0].len());
                Ok(DMatrix::from_row_iterator(n, m, rows.iter().flatten().copied()))
            }
            _ => config_err(format!("missing matrix parameter `{name}`")),
        }
    }

    /// Sweep values, or a single `None` point.
    pub fn points(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|v| Some(*v)).collect(),
            None => vec![None],
        }
    }

    /// The configuration at one sweep point.
    pub fn at(&self, point: Option<f64>) -> Self {
        let mut cfg = self.clone();
        if let (Some(s), Some(x)) = (&self.sweep, point) {
            cfg.params.insert(s.variable.clone(), ParamValue::Real(x));
        }
        cfg.sweep = None;
        cfg
    }

    fn scaled_alpha(&self) -> Result<f64> {
        Ok(self.real("alpha")? * self.budget_scale.sqrt())
    }

    fn require_unit_budget(&self) -> Result<()> {
        if self.budget_scale != 1.0 {
            return config_err(format!("budget scaling is not supported for {}", self.id));
        }
        Ok(())
    }

    pub fn market(&self) -> Result<OptionMarket> {
        Ok(OptionMarket {
            r: self.real("r")?,
            sigma: self.real("sigma")?,
            strike: self.real("strike")?,
            level: self.real("level")?,
            x0: self.real("x0")?,
        })
    }

    pub fn lq_problem(&self) -> Result<LqProblem> {
        let d = self.matrix("d")? * self.real("kappa")?;
        Ok(LqProblem::new(
            self.matrix("b")?,
            d,
            self.matrix("q")?,
            self.matrix("r")?,
            self.real("lambda")?,
            self.matrix("sigma0")?,
            self.matrix("sigma")?,
        )?)
    }

    /// Row for a configuration without a sweep.
    fn single_row(&self) -> Result<CurveRow> {
        if !(self.budget_scale.is_finite() && self.budget_scale >= 0.0) {
            return config_err(format!("budget scale must be finite and nonnegative, got {}", self.budget_scale));
        }
        let first = |t: CurveTable| t.rows.into_iter().next().expect("single-point table");
        match self.id {
            ScenarioId::BmCdf => Ok(first(bm_cdf_bounds(
                self.real("mu")?,
                self.real("a")?,
                self.scaled_alpha()?,
                &[self.real("horizon")?],
            )?)),
            ScenarioId::BmMean => Ok(first(bm_mean_bounds(self.real("mu")?, self.real("a")?, self.scaled_alpha()?)?)),
            ScenarioId::Nonrev => {
                self.require_unit_budget()?;
                Ok(first(nonrev_bounds(&[self.real("strength")?])?))
            }
            ScenarioId::LqControl => lq_row(&self.lq_problem()?, self.scaled_alpha()?, None),
            ScenarioId::Queue => {
                self.require_unit_budget()?;
                Ok(first(queue_bounds(
                    self.real("alpha")?,
                    self.real("rho")?,
                    &[self.real("delta")?],
                    &[self.real("epsilon")?],
                )?))
            }
            ScenarioId::Vasicek => {
                self.require_unit_budget()?;
                let p = VasicekParams {
                    market: self.market()?,
                    gamma: self.real("gamma")?,
                    sigma_tilde: self.real("sigma_tilde")?,
                };
                Ok(first(vasicek_bounds(&p, VasicekSweep::SigmaTilde, &[p.sigma_tilde])?))
            }
            ScenarioId::RateDrop => {
                self.require_unit_budget()?;
                let p = RateDrop { market: self.market()?, dr_plus: self.real("dr_plus")? };
                Ok(first(rate_drop_bounds(&p, &[self.real("t_f")?], self.flag("kappa_optimize")?)?))
            }
        }
    }
}

/// Evaluates every sweep point of a configuration; rows carry the sweep value.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<CurveTable> {
    if let Some(s) = &cfg.sweep {
        check_grid(&s.values)?;
    }
    let points = cfg.points();
    let rows = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let row = cfg.at(*p).single_row().map_err(|e| match p {
                Some(x) => e.at(i, *x),
                None => e,
            })?;
            Ok(CurveRow { sweep: *p, ..row })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CurveTable::new(rows))
}
