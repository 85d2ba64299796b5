//! Composition of two input-driven hybrid subsystems into a single closed
//! system: the flow set is the intersection of the subsystem flow
//! conditions, the jump set the union of the jump conditions, flows stack,
//! and each subsystem's jump map fires only while its own guard holds, the
//! other component passing through unchanged.
//!
//! The composition is performed by syntactic substitution of the output maps
//! into the subsystem expressions, so the result is an ordinary
//! [`SystemData`] the simulator can run without callbacks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, Ty};
use crate::system::{LoadError, SystemData, SystemSpec};

/// An input-driven hybrid subsystem: expressions range over its own state
/// `x1..xn` and inputs `u1..um`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub name: String,
    pub dim: usize,
    pub input_dim: usize,
    pub params: BTreeMap<String, f64>,
    pub flow_set: Expr,
    pub jump_set: Expr,
    pub flow_map: Vec<Expr>,
    pub jump_map: Vec<Expr>,
}

/// JSON document for a subsystem.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubsystemSpec {
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub flow_set: String,
    pub jump_set: String,
    pub flow_map: Vec<String>,
    pub jump_map: Vec<String>,
}

/// Output map feeding one subsystem's state to the partner's inputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputMap {
    pub exprs: Vec<Expr>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct OutputMapSpec {
    pub exprs: Vec<String>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum InterconnectError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("parameter `{name}` bound to different values ({a} vs {b})")]
    ParamConflict { name: String, a: f64, b: f64 },
    #[error("vacuous interconnection requires input-free subsystems")]
    NotInputFree,
    #[error(transparent)]
    Load(#[from] LoadError),
}

fn compile_sub_field(
    field: &str,
    src: &str,
    dim: usize,
    input_dim: usize,
    params: &BTreeMap<String, f64>,
    expected: Ty,
) -> Result<Expr, LoadError> {
    let e = crate::expr::parse_expr(src).map_err(|source| LoadError::Expr {
        field: field.to_string(),
        source,
    })?;
    if e.ty() != expected {
        return Err(LoadError::WrongKind {
            field: field.to_string(),
            expected,
        });
    }
    if e.max_state_var() > dim {
        return Err(LoadError::StateVarOutOfRange {
            field: field.to_string(),
            index: e.max_state_var(),
            dim,
        });
    }
    if e.max_input_var() > input_dim {
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

pub fn load_subsystem(spec: &SubsystemSpec) -> Result<Subsystem, LoadError> {
    if spec.dim == 0 {
        return Err(LoadError::Schema("dim must be at least 1".into()));
    }
    if spec.flow_map.len() != spec.dim || spec.jump_map.len() != spec.dim {
        return Err(LoadError::Schema(format!(
            "flow_map/jump_map must each have dim = {} entries",
            spec.dim
        )));
    }
    let f = |field: &str, src: &str, ty| {
        compile_sub_field(field, src, spec.dim, spec.input_dim, &spec.params, ty)
    };
    Ok(Subsystem {
        name: spec.name.clone(),
        dim: spec.dim,
        input_dim: spec.input_dim,
        params: spec.params.clone(),
        flow_set: f("flow_set", &spec.flow_set, Ty::Bool)?,
        jump_set: f("jump_set", &spec.jump_set, Ty::Bool)?,
        flow_map: spec
            .flow_map
            .iter()
            .enumerate()
            .map(|(i, s)| f(&format!("flow_map[{i}]"), s, Ty::Real))
            .collect::<Result<_, _>>()?,
        jump_map: spec
            .jump_map
            .iter()
            .enumerate()
            .map(|(i, s)| f(&format!("jump_map[{i}]"), s, Ty::Real))
            .collect::<Result<_, _>>()?,
    })
}

/// Loads an output map owned by a subsystem of dimension `owner_dim`; the
/// expressions may reference only the owner's state.
pub fn load_output_map(spec: &OutputMapSpec, owner_dim: usize) -> Result<OutputMap, LoadError> {
    let exprs = spec
        .exprs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            compile_sub_field(
                &format!("outputs[{i}]"),
                s,
                owner_dim,
                0,
                &BTreeMap::new(),
                Ty::Real,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OutputMap { exprs })
}

impl Subsystem {
    /// Views a closed system as an input-free subsystem, which lets
    /// compositions nest.
    pub fn from_system(sys: &SystemData) -> Subsystem {
        Subsystem {
            name: sys.name.clone(),
            dim: sys.dim,
            input_dim: 0,
            params: sys.params.clone(),
            flow_set: sys.flow_set.clone(),
            jump_set: sys.jump_set.clone(),
            flow_map: sys.flow_map.clone(),
            jump_map: sys.jump_map.clone(),
        }
    }
}

fn merge_params(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>, InterconnectError> {
    let mut out = a.clone();
    for (name, value) in b {
        if let Some(existing) = out.get(name) {
            if existing != value {
                return Err(InterconnectError::ParamConflict {
                    name: name.clone(),
                    a: *existing,
                    b: *value,
                });
            }
        } else {
            out.insert(name.clone(), *value);
        }
    }
    Ok(out)
}

/// Composes two subsystems under output feedback `u1 = h1(x_sub1)` into
/// subsystem 2 and `u2 = h2(x_sub2)` into subsystem 1. The composed state is
/// the stacked pair, the flow set the intersection, the jump set the union,
/// and each jump component is guarded by its own subsystem's condition with
/// identity otherwise.
pub fn interconnect(
    sub1: &Subsystem,
    sub2: &Subsystem,
    h1: &OutputMap,
    h2: &OutputMap,
) -> Result<SystemData, InterconnectError> {
    if h1.exprs.len() != sub2.input_dim {
        return Err(InterconnectError::DimensionMismatch(format!(
            "h1 produces {} outputs, subsystem `{}` takes {} inputs",
            h1.exprs.len(),
            sub2.name,
            sub2.input_dim
        )));
    }
    if h2.exprs.len() != sub1.input_dim {
        return Err(InterconnectError::DimensionMismatch(format!(
            "h2 produces {} outputs, subsystem `{}` takes {} inputs",
            h2.exprs.len(),
            sub1.name,
            sub1.input_dim
        )));
    }
    for (i, e) in h1.exprs.iter().enumerate() {
        if e.max_state_var() > sub1.dim || e.max_input_var() > 0 {
            return Err(InterconnectError::DimensionMismatch(format!(
                "h1[{i}] must be a function of subsystem 1's state only"
            )));
        }
    }
    for (i, e) in h2.exprs.iter().enumerate() {
        if e.max_state_var() > sub2.dim || e.max_input_var() > 0 {
            return Err(InterconnectError::DimensionMismatch(format!(
                "h2[{i}] must be a function of subsystem 2's state only"
            )));
        }
    }

    let n1 = sub1.dim;
    let params = merge_params(&sub1.params, &sub2.params)?;

    // inputs of subsystem 1 come from subsystem 2's state, shifted into the
    // composed coordinates
    let h2_global: Vec<Expr> = h2.exprs.iter().map(|e| e.substitute(n1, &[])).collect();
    // inputs of subsystem 2 come from subsystem 1's state, already global
    let h1_global: Vec<Expr> = h1.exprs.clone();

    let s1 = |e: &Expr| e.substitute(0, &h2_global);
    let s2 = |e: &Expr| e.substitute(n1, &h1_global);

    let guard1 = s1(&sub1.jump_set);
    let guard2 = s2(&sub2.jump_set);

    let flow_set = Expr::And(Box::new(s1(&sub1.flow_set)), Box::new(s2(&sub2.flow_set)));
    let jump_set = Expr::Or(Box::new(guard1.clone()), Box::new(guard2.clone()));

    let mut flow_map: Vec<Expr> = sub1.flow_map.iter().map(&s1).collect();
    flow_map.extend(sub2.flow_map.iter().map(&s2));

    let mut jump_map = Vec::with_capacity(n1 + sub2.dim);
    for (i, g) in sub1.jump_map.iter().enumerate() {
        jump_map.push(Expr::If(
            Box::new(guard1.clone()),
            Box::new(s1(g)),
            Box::new(Expr::StateVar(i)),
        ));
    }
    for (i, g) in sub2.jump_map.iter().enumerate() {
        jump_map.push(Expr::If(
            Box::new(guard2.clone()),
            Box::new(s2(g)),
            Box::new(Expr::StateVar(n1 + i)),
        ));
    }

    Ok(SystemData {
        name: format!("{}+{}", sub1.name, sub2.name),
        dim: n1 + sub2.dim,
        params,
        flow_set,
        jump_set,
        flow_map,
        jump_map,
        eps_eq: crate::expr::DEFAULT_EPS_EQ,
    })
}

/// Interconnection with no actual coupling; both subsystems must be
/// input-free.
pub fn vacuous_interconnection(
    sub1: &Subsystem,
    sub2: &Subsystem,
) -> Result<SystemData, InterconnectError> {
    if sub1.input_dim != 0 || sub2.input_dim != 0 {
        return Err(InterconnectError::NotInputFree);
    }
    interconnect(sub1, sub2, &OutputMap::default(), &OutputMap::default())
}

/// Subsystem document for a single bouncing ball (input-free).
pub fn ball_subsystem_spec(lambda: f64, gravity: f64) -> SubsystemSpec {
    let mut params = BTreeMap::new();
    params.insert("lambda".to_string(), lambda);
    params.insert("g".to_string(), gravity);
    SubsystemSpec {
        name: "ball".into(),
        dim: 2,
        input_dim: 0,
        params,
        flow_set: "x1 > 0 || (x1 == 0 && x2 >= 0)".into(),
        jump_set: "x1 == 0 && x2 < 0".into(),
        flow_map: vec!["x2".into(), "-if(x1 == 0 && x2 == 0, 0, g)".into()],
        jump_map: vec!["x1".into(), "-lambda * x2".into()],
    }
}

/// Subsystem document for a scalar exponential decay whose sign flips
/// whenever the partner ball hits the floor; the guard reads the partner
/// state through the inputs.
pub fn decay_subsystem_spec() -> SubsystemSpec {
    SubsystemSpec {
        name: "decay".into(),
        dim: 1,
        input_dim: 2,
        params: BTreeMap::new(),
        flow_set: "true".into(),
        jump_set: "u1 == 0 && u2 < 0".into(),
        flow_map: vec!["-x1".into()],
        jump_map: vec!["-x1".into()],
    }
}

impl SystemData {
    /// Document form of a composed system (same as [`SystemData::to_spec`],
    /// provided here for discoverability next to the builders).
    pub fn composed_spec(&self) -> SystemSpec {
        self.to_spec()
    }
}
