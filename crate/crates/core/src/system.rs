//! Compiled hybrid system data `(C, f, D, g)` plus the JSON document format
//! and the built-in scenarios.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_expr, EvalCtx, EvalError, Expr, ParseError, Ty, DEFAULT_EPS_EQ};

/// Hybrid system data: flow set, flow map, jump set, jump map over a state
/// of dimension `dim`. Immutable after compilation; evaluation is reentrant.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemData {
    pub name: String,
    pub dim: usize,
    pub params: BTreeMap<String, f64>,
    pub flow_set: Expr,
    pub jump_set: Expr,
    pub flow_map: Vec<Expr>,
    pub jump_map: Vec<Expr>,
    pub eps_eq: f64,
}

/// JSON document describing a hybrid system with expression strings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemSpec {
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub flow_set: String,
    pub jump_set: String,
    pub flow_map: Vec<String>,
    pub jump_map: Vec<String>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LoadError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("in field `{field}`: {source}")]
    Expr {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("field `{field}` references undeclared parameter `{name}`")]
    UndeclaredParameter { field: String, name: String },
    #[error("field `{field}` references x{index} but dim = {dim}")]
    StateVarOutOfRange {
        field: String,
        index: usize,
        dim: usize,
    },
    #[error("field `{field}` references inputs, but a system document has none")]
    UnexpectedInput { field: String },
    #[error("field `{field}` must be {expected:?}-valued")]
    WrongKind { field: String, expected: Ty },
}

fn compile_field(
    field: &str,
    src: &str,
    dim: usize,
    allow_inputs: usize,
    params: &BTreeMap<String, f64>,
    expected: Ty,
) -> Result<Expr, LoadError> {
    let e = parse_expr(src).map_err(|source| LoadError::Expr {
        field: field.to_string(),
        source,
    })?;
    if e.ty() != expected {
        return Err(LoadError::WrongKind {
            field: field.to_string(),
            expected,
        });
    }
    let max_x = e.max_state_var();
    if max_x > dim {
        return Err(LoadError::StateVarOutOfRange {
            field: field.to_string(),
            index: max_x,
            dim,
        });
    }
    let max_u = e.max_input_var();
    if max_u > allow_inputs {
        return Err(LoadError::UnexpectedInput {
            field: field.to_string(),
        });
    }
    for name in e.param_names() {
        if !params.contains_key(&name) {
            return Err(LoadError::UndeclaredParameter {
                field: field.to_string(),
                name,
            });
        }
    }
    Ok(e)
}

/// Compiles a system document into [`SystemData`], parsing and
/// dimension-checking every expression.
pub fn load_system(spec: &SystemSpec) -> Result<SystemData, LoadError> {
    if spec.dim == 0 {
        return Err(LoadError::Schema("dim must be at least 1".into()));
    }
    if spec.flow_map.len() != spec.dim {
        return Err(LoadError::Schema(format!(
            "flow_map has {} entries, dim = {}",
            spec.flow_map.len(),
            spec.dim
        )));
    }
    if spec.jump_map.len() != spec.dim {
        return Err(LoadError::Schema(format!(
            "jump_map has {} entries, dim = {}",
            spec.jump_map.len(),
            spec.dim
        )));
    }
    let flow_set = compile_field("flow_set", &spec.flow_set, spec.dim, 0, &spec.params, Ty::Bool)?;
    let jump_set = compile_field("jump_set", &spec.jump_set, spec.dim, 0, &spec.params, Ty::Bool)?;
    let mut flow_map = Vec::with_capacity(spec.dim);
    for (i, src) in spec.flow_map.iter().enumerate() {
        flow_map.push(compile_field(
            &format!("flow_map[{i}]"),
            src,
            spec.dim,
            0,
            &spec.params,
            Ty::Real,
        )?);
    }
    let mut jump_map = Vec::with_capacity(spec.dim);
    for (i, src) in spec.jump_map.iter().enumerate() {
        jump_map.push(compile_field(
            &format!("jump_map[{i}]"),
            src,
            spec.dim,
            0,
            &spec.params,
            Ty::Real,
        )?);
    }
    Ok(SystemData {
        name: spec.name.clone(),
        dim: spec.dim,
        params: spec.params.clone(),
        flow_set,
        jump_set,
        flow_map,
        jump_map,
        eps_eq: DEFAULT_EPS_EQ,
    })
}

impl SystemData {
    fn ctx<'a>(&'a self, x: &'a [f64]) -> EvalCtx<'a> {
        EvalCtx::new(x, &self.params).with_eps(self.eps_eq)
    }

    pub fn in_flow_set(&self, x: &[f64]) -> Result<bool, EvalError> {
        self.flow_set.eval_bool(&self.ctx(x))
    }

    pub fn in_jump_set(&self, x: &[f64]) -> Result<bool, EvalError> {
        self.jump_set.eval_bool(&self.ctx(x))
    }

    /// Velocity vector `f(x)`; membership of `x` in the flow set is the
    /// caller's contract.
    pub fn flow(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let ctx = self.ctx(x);
        self.flow_map.iter().map(|e| e.eval_real(&ctx)).collect()
    }

    /// Post-jump state `g(x)`, evaluated exactly once.
    pub fn jump(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let ctx = self.ctx(x);
        self.jump_map.iter().map(|e| e.eval_real(&ctx)).collect()
    }

    /// Serializes the compiled data back into the document form.
    pub fn to_spec(&self) -> SystemSpec {
        SystemSpec {
            name: self.name.clone(),
            dim: self.dim,
            params: self.params.clone(),
            flow_set: self.flow_set.to_string(),
            jump_set: self.jump_set.to_string(),
            flow_map: self.flow_map.iter().map(|e| e.to_string()).collect(),
            jump_map: self.jump_map.iter().map(|e| e.to_string()).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Built-in scenarios
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("parameter `{name}` = {value} outside its admissible range {range}")]
    ParamOutOfRange {
        name: String,
        value: f64,
        range: String,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct ScenarioParams {
    /// Restitution coefficient, must lie in (0, 1).
    pub lambda: f64,
    /// Gravitational acceleration.
    pub gravity: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            lambda: 0.5,
            gravity: 9.81,
        }
    }
}

pub const SCENARIO_NAMES: [&str; 3] = ["bouncing_ball", "two_balls", "example3"];

fn scenario_params(p: &ScenarioParams) -> Result<BTreeMap<String, f64>, ScenarioError> {
    if !(p.lambda > 0.0 && p.lambda < 1.0) {
        return Err(ScenarioError::ParamOutOfRange {
            name: "lambda".into(),
            value: p.lambda,
            range: "(0, 1)".into(),
        });
    }
    if p.gravity <= 0.0 {
        return Err(ScenarioError::ParamOutOfRange {
            name: "g".into(),
            value: p.gravity,
            range: "(0, inf)".into(),
        });
    }
    let mut m = BTreeMap::new();
    m.insert("lambda".to_string(), p.lambda);
    m.insert("g".to_string(), p.gravity);
    Ok(m)
}

/// Hand-written document for the built-in scenario `name`. These are kept as
/// plain documents so the compiled systems are exactly what a user file
/// would produce.
pub fn builtin_spec(name: &str, params: &ScenarioParams) -> Result<SystemSpec, ScenarioError> {
    let params = scenario_params(params)?;
    let spec = match name {
        "bouncing_ball" => SystemSpec {
            name: "bouncing_ball".into(),
            dim: 2,
            params,
            flow_set: "x1 > 0 || (x1 == 0 && x2 >= 0)".into(),
            jump_set: "x1 == 0 && x2 < 0".into(),
            flow_map: vec!["x2".into(), "-if(x1 == 0 && x2 == 0, 0, g)".into()],
            jump_map: vec!["x1".into(), "-lambda * x2".into()],
        },
        "two_balls" => SystemSpec {
            name: "two_balls".into(),
            dim: 4,
            params,
            flow_set: "(x1 > 0 || (x1 == 0 && x2 >= 0)) && (x3 > 0 || (x3 == 0 && x4 >= 0))"
                .into(),
            jump_set: "(x1 == 0 && x2 < 0) || (x3 == 0 && x4 < 0)".into(),
            flow_map: vec![
                "x2".into(),
                "-if(x1 == 0 && x2 == 0, 0, g)".into(),
                "x4".into(),
                "-if(x3 == 0 && x4 == 0, 0, g)".into(),
            ],
            jump_map: vec![
                "x1".into(),
                "if(x1 == 0 && x2 < 0, -lambda * x2, x2)".into(),
                "x3".into(),
                "if(x3 == 0 && x4 < 0, -lambda * x4, x4)".into(),
            ],
        },
        "example3" => SystemSpec {
            name: "example3".into(),
            dim: 3,
            params,
            flow_set: "x1 > 0 || (x1 == 0 && x2 >= 0)".into(),
            jump_set: "x1 == 0 && x2 < 0".into(),
            flow_map: vec![
                "x2".into(),
                "-if(x1 == 0 && x2 == 0, 0, g)".into(),
                "-x3".into(),
            ],
            jump_map: vec!["x1".into(), "-lambda * x2".into(), "-x3".into()],
        },
        other => return Err(ScenarioError::UnknownScenario(other.to_string())),
    };
    Ok(spec)
}

pub fn builtin_scenario(name: &str, params: &ScenarioParams) -> Result<SystemData, ScenarioError> {
    let spec = builtin_spec(name, params)?;
    Ok(load_system(&spec).expect("built-in scenario documents compile"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball() -> SystemData {
        builtin_scenario("bouncing_ball", &ScenarioParams::default()).unwrap()
    }

    #[test]
    fn ball_membership_examples() {
        let sys = ball();
        assert!(sys.in_flow_set(&[0.5, -1.0]).unwrap());
        assert!(!sys.in_jump_set(&[0.5, -1.0]).unwrap());
        assert!(!sys.in_flow_set(&[0.0, -1.0]).unwrap());
        assert!(sys.in_jump_set(&[0.0, -1.0]).unwrap());
        // the resting state flows
        assert!(sys.in_flow_set(&[0.0, 0.0]).unwrap());
        assert!(!sys.in_jump_set(&[0.0, 0.0]).unwrap());
    }

    #[test]
    fn ball_flow_examples() {
        let sys = ball();
        assert_eq!(sys.flow(&[1.0, 0.0]).unwrap(), vec![0.0, -9.81]);
        assert_eq!(sys.flow(&[0.0, 0.0]).unwrap(), vec![0.0, -0.0]);
        let e3 = builtin_scenario("example3", &ScenarioParams::default()).unwrap();
        assert_eq!(e3.flow(&[0.0, 0.0, 1.0]).unwrap(), vec![0.0, -0.0, -1.0]);
    }

    #[test]
    fn jump_examples() {
        let sys = ball();
        assert_eq!(sys.jump(&[0.0, -2.0]).unwrap(), vec![0.0, 1.0]);
        let two = builtin_scenario("two_balls", &ScenarioParams::default()).unwrap();
        assert_eq!(
            two.jump(&[0.0, -1.0, 2.0, 1.0]).unwrap(),
            vec![0.0, 0.5, 2.0, 1.0]
        );
        let e3 = builtin_scenario("example3", &ScenarioParams::default()).unwrap();
        assert_eq!(
            e3.jump(&[0.0, -1.0, 0.3]).unwrap(),
            vec![0.0, 0.5, -0.3]
        );
    }

    #[test]
    fn scenario_errors() {
        assert!(matches!(
            builtin_scenario("pendulum", &ScenarioParams::default()),
            Err(ScenarioError::UnknownScenario(_))
        ));
        assert!(matches!(
            builtin_scenario(
                "bouncing_ball",
                &ScenarioParams {
                    lambda: 1.0,
                    gravity: 9.81
                }
            ),
            Err(ScenarioError::ParamOutOfRange { .. })
        ));
    }

    #[test]
    fn ball_flow_and_jump_sets_partition_the_closed_halfplane() {
        let sys = ball();
        let mut seed = 1u64;
        for _ in 0..500 {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let h = ((seed >> 11) as f64 / (1u64 << 53) as f64) * 4.0;
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let v = ((seed >> 11) as f64 / (1u64 << 53) as f64) * 16.0 - 8.0;
            for x in [[h, v], [0.0, v]] {
                let c = sys.in_flow_set(&x).unwrap();
                let d = sys.in_jump_set(&x).unwrap();
                assert!(c || d, "{x:?} outside both sets");
                assert!(!(c && d), "{x:?} in both sets");
            }
        }
    }

    #[test]
    fn jump_contracts_velocity_exactly() {
        let sys = ball();
        for v in [-1.0, -0.3, -7.25, -1e-6] {
            let post = sys.jump(&[0.0, v]).unwrap();
            assert_eq!(post[1].abs(), 0.5 * v.abs());
        }
    }

    #[test]
    fn two_ball_jump_leaves_inactive_subsystem_unchanged() {
        let two = builtin_scenario("two_balls", &ScenarioParams::default()).unwrap();
        let x = [0.0, -1.0, 2.0, 1.0];
        let post = two.jump(&x).unwrap();
        assert_eq!(&post[2..], &x[2..]);
        // both guards active at once
        let post = two.jump(&[0.0, -1.0, 0.0, -2.0]).unwrap();
        assert_eq!(post, vec![0.0, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn schema_errors() {
        let mut spec = builtin_spec("two_balls", &ScenarioParams::default()).unwrap();
        spec.flow_map.pop();
        assert!(matches!(load_system(&spec), Err(LoadError::Schema(_))));

        let mut spec = builtin_spec("bouncing_ball", &ScenarioParams::default()).unwrap();
        spec.jump_map[1] = "-mu * x2".into();
        assert!(matches!(
            load_system(&spec),
            Err(LoadError::UndeclaredParameter { .. })
        ));

        let mut spec = builtin_spec("bouncing_ball", &ScenarioParams::default()).unwrap();
        spec.flow_map[0] = "x3".into();
        assert!(matches!(
            load_system(&spec),
            Err(LoadError::StateVarOutOfRange { .. })
        ));

        let mut spec = builtin_spec("bouncing_ball", &ScenarioParams::default()).unwrap();
        spec.flow_set = "x1 + 1".into();
        assert!(matches!(load_system(&spec), Err(LoadError::WrongKind { .. })));

        let mut spec = builtin_spec("bouncing_ball", &ScenarioParams::default()).unwrap();
        spec.flow_map[0] = "u1".into();
        assert!(matches!(
            load_system(&spec),
            Err(LoadError::UnexpectedInput { .. })
        ));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = builtin_spec("example3", &ScenarioParams::default()).unwrap();
        let text = serde_json::to_string_pretty(&spec).unwrap();
        let back: SystemSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
        let sys = load_system(&back).unwrap();
        assert_eq!(sys.dim, 3);
        assert!(sys.in_jump_set(&[0.0, -1.0, 0.0]).unwrap());
    }
}
