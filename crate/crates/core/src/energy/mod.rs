//! Cloth potentials and nodal forces.
//!
//! Every term is recorded on an [`autodiff::Tape`](crate::autodiff::Tape) as
//! a function of the `n×3` position tensor; forces are the negative gradient
//! of the summed energy, obtained from one reverse pass.
//!
//! Units are CGS: cm, g, s, erg, dyn.
//!
//! | term     | energy                                                     |
//! |----------|------------------------------------------------------------|
//! | stretch  | `k_s/(2A) Σ_e a_e (l(e) - l0(e))²`                         |
//! | bend     | `k_b/(2A) Σ_d a_e θ_d²`                                    |
//! | gravity  | `-(g/A) Σ_v a_v m_v z_v`, `m_v = ρ a_v`                    |
//! | contact  | `k_ec/A_ec Σ_v a_v φ_v`, `φ_v = max(margin - sdf(x_v), 0)`  |
//! | self     | `k_sc/A_sc Σ_(u,v) (a_u + a_v) ψ²`, `ψ = max(R - |x_u - x_v|, 0)` |
//!
//! `A_ec` and `A_sc` sum the weights of the active constraints only. They are
//! held constant while differentiating, and a term with no active
//! constraint contributes zero.

pub mod check;
pub mod hash;
pub mod sdf;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::mesh::{compute_area_weights, AreaWeights, Mesh, MeshError};

pub use sdf::SdfCollider;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("edge {0} has zero rest length")]
    ZeroRestLength(usize),
    #[error("dihedral {0} has a degenerate face normal")]
    DegenerateDihedral(usize),
    #[error("invalid material parameters: {0}")]
    InvalidParams(String),
    #[error("contact term enabled without a collider")]
    MissingCollider,
    #[error("unknown potential term '{0}' (expected stretch, bend, gravity, contact, self)")]
    UnknownTerm(String),
    #[error("expected {expected} positions, got {got}")]
    PositionCount { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, EnergyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Stretch,
    Bend,
    Gravity,
    Contact,
    SelfCollision,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Stretch, Term::Bend, Term::Gravity, Term::Contact, Term::SelfCollision];

    pub fn name(self) -> &'static str {
        match self {
            Term::Stretch => "stretch",
            Term::Bend => "bend",
            Term::Gravity => "gravity",
            Term::Contact => "contact",
            Term::SelfCollision => "self",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Term {
    type Err = EnergyError;
    fn from_str(s: &str) -> Result<Self> {
        Term::ALL.into_iter().find(|t| t.name() == s.trim()).ok_or_else(|| EnergyError::UnknownTerm(s.to_string()))
    }
}

/// Subset of enabled potential terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TermSet([bool; 5]);

impl TermSet {
    pub const fn empty() -> Self {
        TermSet([false; 5])
    }

    pub const fn all() -> Self {
        TermSet([true; 5])
    }

    /// Stretch and bend, the internal elastic terms.
    pub const fn elastic() -> Self {
        TermSet([true, true, false, false, false])
    }

    pub fn with(mut self, term: Term) -> Self {
        self.0[term.index()] = true;
        self
    }

    pub fn contains(&self, term: Term) -> bool {
        self.0[term.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = Term> + '_ {
        Term::ALL.into_iter().filter(|t| self.contains(*t))
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }
}

impl FromIterator<Term> for TermSet {
    fn from_iter<I: IntoIterator<Item = Term>>(iter: I) -> Self {
        iter.into_iter().fold(TermSet::empty(), TermSet::with)
    }
}

impl FromStr for TermSet {
    type Err = EnergyError;
    /// Comma-separated term names, e.g. `stretch,bend`.
    fn from_str(s: &str) -> Result<Self> {
        s.split(',').filter(|p| !p.trim().is_empty()).map(Term::from_str).collect()
    }
}

impl TryFrom<String> for TermSet {
    type Error = EnergyError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TermSet> for String {
    fn from(t: TermSet) -> String {
        t.to_string()
    }
}

impl fmt::Display for TermSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Term::name).collect();
        f.write_str(&names.join(","))
    }
}

/// Material and contact constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialParams {
    /// k_s (erg/cm²)
    pub stretch_stiffness: f64,
    /// k_b (erg)
    pub bend_stiffness: f64,
    /// k_ec (erg/cm²); `None` uses `stretch_stiffness`
    pub contact_stiffness: Option<f64>,
    /// k_sc (erg/cm²); `None` uses `stretch_stiffness`
    pub self_stiffness: Option<f64>,
    /// ρ (g/cm²)
    pub density: f64,
    /// g (cm/s²)
    pub gravity: f64,
    /// Unit direction gravity pulls towards; `z_v` is measured along it.
    pub gravity_direction: [f64; 3],
    /// R (cm); `None` uses twice the mean rest edge length
    pub self_rest_length: Option<f64>,
    /// d: vertices within this many edge hops never self-collide
    pub ring_exclusion: usize,
    /// Distance (cm) kept from collider surfaces.
    pub collision_margin: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            stretch_stiffness: 1e4,
            bend_stiffness: 10.0,
            contact_stiffness: None,
            self_stiffness: None,
            density: 0.0187,
            gravity: 981.0,
            gravity_direction: [0.0, 0.0, -1.0],
            self_rest_length: None,
            ring_exclusion: 2,
            collision_margin: 0.2,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EnergyError::InvalidParams(m.to_string()));
        let stiffnesses = [
            self.stretch_stiffness,
            self.bend_stiffness,
            self.contact_stiffness.unwrap_or(0.0),
            self.self_stiffness.unwrap_or(0.0),
        ];
        if stiffnesses.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
            return bad("stiffnesses must be finite and non-negative");
        }
        if let Some(r) = self.self_rest_length {
            if !(r > 0.0) {
                return bad("self-collision rest length must be positive");
            }
        }
        if self.ring_exclusion < 1 {
            return bad("ring exclusion must be at least 1");
        }
        if !(self.density >= 0.0) || !self.gravity.is_finite() || !self.collision_margin.is_finite() {
            return bad("density, gravity and margin must be finite, density non-negative");
        }
        let gd = self.gravity_direction;
        let len = (gd[0] * gd[0] + gd[1] * gd[1] + gd[2] * gd[2]).sqrt();
        if !((len - 1.0).abs() < 1e-9) {
            return bad("gravity direction must be a unit vector");
        }
        Ok(())
    }
}

/// Per-term energies (erg); disabled terms are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermEnergies {
    pub stretch: f64,
    pub bend: f64,
    pub gravity: f64,
    pub contact: f64,
    pub self_collision: f64,
}

impl TermEnergies {
    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::Stretch => self.stretch,
            Term::Bend => self.bend,
            Term::Gravity => self.gravity,
            Term::Contact => self.contact,
            Term::SelfCollision => self.self_collision,
        }
    }

    fn set(&mut self, term: Term, value: f64) {
        match term {
            Term::Stretch => self.stretch = value,
            Term::Bend => self.bend = value,
            Term::Gravity => self.gravity = value,
            Term::Contact => self.contact = value,
            Term::SelfCollision => self.self_collision = value,
        }
    }

    /// Sum in fixed term order.
    pub fn total(&self) -> f64 {
        Term::ALL.iter().map(|&t| self.get(t)).sum()
    }
}

/// Result of one force evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceReport {
    /// Φ (erg)
    pub total: f64,
    pub terms: TermEnergies,
    /// F = -∇Φ (dyn), unmasked
    pub forces: Vec<[f64; 3]>,
    pinned: Vec<bool>,
}

impl ForceReport {
    /// Forces with pinned vertices zeroed, as consumed by the solvers.
    pub fn masked_forces(&self) -> Vec<[f64; 3]> {
        self.forces
            .iter()
            .zip(&self.pinned)
            .map(|(f, &p)| if p { [0.0; 3] } else { *f })
            .collect()
    }

    pub fn max_force(&self) -> f64 {
        self.forces.iter().flat_map(|f| f.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Term energies as tape variables.
pub struct RecordedEnergy<'t> {
    pub total: Var<'t>,
    pub terms: Vec<(Term, Var<'t>)>,
}

struct Stretch {
    from: Vec<usize>,
    to: Vec<usize>,
    rest: Tensor,
    weight: Tensor,
}

impl Stretch {
    fn new(mesh: &Mesh, weights: &AreaWeights, k_s: f64) -> Result<Self> {
        let rest = mesh.rest_edge_lengths();
        if let Some(e) = rest.iter().position(|&l| !(l > 0.0)) {
            return Err(EnergyError::ZeroRestLength(e));
        }
        let scale = k_s / (2.0 * weights.total_area);
        Ok(Stretch {
            from: mesh.edges().iter().map(|e| e[0]).collect(),
            to: mesh.edges().iter().map(|e| e[1]).collect(),
            rest: Tensor::column(rest),
            weight: Tensor::column(weights.edge_area.iter().map(|a| scale * a).collect()),
        })
    }

    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        let d = x.gather_rows(&self.from) - x.gather_rows(&self.to);
        let strain = d.norm() - tape.constant(self.rest.clone());
        (tape.constant(self.weight.clone()) * strain.square()).sum()
    }
}

struct Bend {
    a: Vec<usize>,
    b: Vec<usize>,
    c: Vec<usize>,
    d: Vec<usize>,
    weight: Tensor,
}

impl Bend {
    fn new(mesh: &Mesh, weights: &AreaWeights, k_b: f64) -> Self {
        let scale = k_b / (2.0 * weights.total_area);
        let dih = mesh.dihedrals();
        let edge = |d: &crate::mesh::Dihedral| mesh.edges()[d.edge];
        Bend {
            a: dih.iter().map(|d| edge(d)[0]).collect(),
            b: dih.iter().map(|d| edge(d)[1]).collect(),
            c: dih.iter().map(|d| d.opposite[0]).collect(),
            d: dih.iter().map(|d| d.opposite[1]).collect(),
            weight: Tensor::column(dih.iter().map(|d| scale * weights.edge_area[d.edge]).collect()),
        }
    }

    /// Face normals are taken as `(b-a)×(c-a)` and `(a-b)×(d-b)`, which agree
    /// for a flat pair regardless of the stored triangle winding.
    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        if self.a.is_empty() {
            return Ok(tape.constant(Tensor::scalar(0.0)));
        }
        let (xa, xb) = (x.gather_rows(&self.a), x.gather_rows(&self.b));
        let (xc, xd) = (x.gather_rows(&self.c), x.gather_rows(&self.d));
        let n1 = (xb - xa).cross(xc - xa);
        let n2 = (xa - xb).cross(xd - xb);
        let (l1, l2) = (n1.norm(), n2.norm());
        for (i, (p, q)) in l1.value().data().iter().zip(l2.value().data()).enumerate() {
            if *p == 0.0 || *q == 0.0 {
                return Err(EnergyError::DegenerateDihedral(i));
            }
        }
        let cos = n1.div(l1)?.dot(n2.div(l2)?);
        let theta = cos.acos()?;
        Ok((tape.constant(self.weight.clone()) * theta.square()).sum())
    }
}

struct Gravity {
    /// `-(g ρ a_v² / A) ĝ` per vertex
    weight: Tensor,
}

impl Gravity {
    fn new(weights: &AreaWeights, density: f64, g: f64, direction: [f64; 3]) -> Self {
        let pts: Vec<[f64; 3]> = weights
            .vertex_area
            .iter()
            .map(|&a| {
                let s = -g * density * a * a / weights.total_area;
                [s * direction[0], s * direction[1], s * direction[2]]
            })
            .collect();
        Gravity { weight: Tensor::from_points(&pts) }
    }

    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        (tape.constant(self.weight.clone()) * x).sum()
    }
}

struct Contact {
    collider: SdfCollider,
    stiffness: f64,
    margin: f64,
    vertex_area: Vec<f64>,
}

impl Contact {
    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        let (values, jacobian) = {
            let pos = x.value();
            let mut values = Vec::with_capacity(pos.rows());
            let mut jac = Vec::with_capacity(pos.rows());
            for r in 0..pos.rows() {
                let p = pos.row(r);
                let (d, g) = self.collider.query([p[0], p[1], p[2]]);
                values.push(d);
                jac.push(g);
            }
            (Tensor::column(values), Tensor::from_points(&jac))
        };
        let sdf = x.row_function(values, jacobian);
        let margin = tape.constant(Tensor::scalar(self.margin));
        let depth = (margin - sdf).max0();
        let active_area: f64 = {
            let d = depth.value();
            d.data().iter().zip(&self.vertex_area).filter(|(p, _)| **p != 0.0).map(|(_, a)| a).sum()
        };
        if active_area == 0.0 {
            return tape.constant(Tensor::scalar(0.0));
        }
        let s = self.stiffness / active_area;
        let w = Tensor::column(self.vertex_area.iter().map(|a| s * a).collect());
        (tape.constant(w) * depth).sum()
    }
}

struct SelfCollision {
    stiffness: f64,
    radius: f64,
    vertex_area: Vec<f64>,
    /// sorted d-ring neighborhoods, including the vertex itself
    excluded: Vec<Vec<usize>>,
}

impl SelfCollision {
    fn active_pairs(&self, positions: &[[f64; 3]]) -> Vec<[usize; 2]> {
        hash::close_pairs(positions, self.radius)
            .into_iter()
            .filter(|[u, v]| self.excluded[*u].binary_search(v).is_err())
            .collect()
    }

    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        let pairs = self.active_pairs(&x.value().to_points());
        if pairs.is_empty() {
            return tape.constant(Tensor::scalar(0.0));
        }
        let us: Vec<usize> = pairs.iter().map(|p| p[0]).collect();
        let vs: Vec<usize> = pairs.iter().map(|p| p[1]).collect();
        let d = (x.gather_rows(&us) - x.gather_rows(&vs)).norm();
        let psi = (tape.constant(Tensor::scalar(self.radius)) - d).max0();
        let pair_area: Vec<f64> = pairs.iter().map(|[u, v]| self.vertex_area[*u] + self.vertex_area[*v]).collect();
        let active: f64 = {
            let p = psi.value();
            p.data().iter().zip(&pair_area).filter(|(v, _)| **v != 0.0).map(|(_, a)| a).sum()
        };
        if active == 0.0 {
            return tape.constant(Tensor::scalar(0.0));
        }
        let w = Tensor::column(pair_area.iter().map(|a| self.stiffness * a / active).collect());
        (tape.constant(w) * psi.square()).sum()
    }
}

/// A set of enabled potentials bound to one mesh topology and rest state.
///
/// All rest-state quantities (area weights, rest lengths, ring
/// neighborhoods) are computed once; [`PotentialSet::evaluate`] only takes
/// the current positions.
pub struct PotentialSet {
    terms: TermSet,
    params: MaterialParams,
    weights: AreaWeights,
    pinned: Vec<bool>,
    stretch: Option<Stretch>,
    bend: Option<Bend>,
    gravity: Option<Gravity>,
    contact: Option<Contact>,
    self_collision: Option<SelfCollision>,
}

impl PotentialSet {
    pub fn new(mesh: &Mesh, params: &MaterialParams, collider: Option<&SdfCollider>, terms: TermSet) -> Result<Self> {
        params.validate()?;
        let weights = compute_area_weights(mesh)?;
        let k_s = params.stretch_stiffness;
        let stretch = terms.contains(Term::Stretch).then(|| Stretch::new(mesh, &weights, k_s)).transpose()?;
        let bend = terms.contains(Term::Bend).then(|| Bend::new(mesh, &weights, params.bend_stiffness));
        let gravity = terms
            .contains(Term::Gravity)
            .then(|| Gravity::new(&weights, params.density, params.gravity, params.gravity_direction));
        let contact = if terms.contains(Term::Contact) {
            let collider = collider.ok_or(EnergyError::MissingCollider)?;
            collider.validate().map_err(|e| EnergyError::InvalidParams(e.to_string()))?;
            Some(Contact {
                collider: collider.clone(),
                stiffness: params.contact_stiffness.unwrap_or(k_s),
                margin: params.collision_margin,
                vertex_area: weights.vertex_area.clone(),
            })
        } else {
            None
        };
        let self_collision = terms.contains(Term::SelfCollision).then(|| SelfCollision {
            stiffness: params.self_stiffness.unwrap_or(k_s),
            radius: params.self_rest_length.unwrap_or_else(|| 2.0 * mesh.mean_rest_edge_length()),
            vertex_area: weights.vertex_area.clone(),
            excluded: mesh.ring_neighborhoods(params.ring_exclusion),
        });
        if let Some(sc) = &self_collision {
            if !(sc.radius > 0.0) {
                return Err(EnergyError::InvalidParams("self-collision rest length must be positive".into()));
            }
        }
        Ok(PotentialSet {
            terms,
            params: params.clone(),
            weights,
            pinned: mesh.pinned().to_vec(),
            stretch,
            bend,
            gravity,
            contact,
            self_collision,
        })
    }

    pub fn terms(&self) -> TermSet {
        self.terms
    }

    pub fn params(&self) -> &MaterialParams {
        &self.params
    }

    pub fn weights(&self) -> &AreaWeights {
        &self.weights
    }

    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    pub fn num_vertices(&self) -> usize {
        self.pinned.len()
    }

    /// Effective self-collision rest length, if that term is enabled.
    pub fn self_rest_length(&self) -> Option<f64> {
        self.self_collision.as_ref().map(|s| s.radius)
    }

    /// Active self-collision pairs at `positions` after d-ring exclusion.
    pub fn self_collision_pairs(&self, positions: &[[f64; 3]]) -> Vec<[usize; 2]> {
        self.self_collision.as_ref().map(|s| s.active_pairs(positions)).unwrap_or_default()
    }

    /// Records every enabled term on `tape` as a function of `x` (`n×3`).
    pub fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<RecordedEnergy<'t>> {
        let (rows, cols) = x.shape();
        if rows != self.num_vertices() || cols != 3 {
            return Err(EnergyError::PositionCount { expected: self.num_vertices(), got: rows });
        }
        let mut terms = Vec::new();
        if let Some(t) = &self.stretch {
            terms.push((Term::Stretch, t.record(tape, x)));
        }
        if let Some(t) = &self.bend {
            terms.push((Term::Bend, t.record(tape, x)?));
        }
        if let Some(t) = &self.gravity {
            terms.push((Term::Gravity, t.record(tape, x)));
        }
        if let Some(t) = &self.contact {
            terms.push((Term::Contact, t.record(tape, x)));
        }
        if let Some(t) = &self.self_collision {
            terms.push((Term::SelfCollision, t.record(tape, x)));
        }
        let total = terms
            .iter()
            .map(|(_, v)| *v)
            .reduce(|a, b| a + b)
            .unwrap_or_else(|| tape.constant(Tensor::scalar(0.0)));
        Ok(RecordedEnergy { total, terms })
    }

    fn check_len(&self, positions: &[[f64; 3]]) -> Result<()> {
        if positions.len() != self.num_vertices() {
            return Err(EnergyError::PositionCount { expected: self.num_vertices(), got: positions.len() });
        }
        Ok(())
    }

    /// Energy without forces.
    pub fn energy(&self, positions: &[[f64; 3]]) -> Result<TermEnergies> {
        self.check_len(positions)?;
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_points(positions));
        let rec = self.record(&tape, x)?;
        let mut out = TermEnergies::default();
        for (term, v) in rec.terms {
            out.set(term, v.item());
        }
        Ok(out)
    }

    /// Energies and forces `F = -∇Φ` from one reverse pass.
    pub fn evaluate(&self, positions: &[[f64; 3]]) -> Result<ForceReport> {
        self.check_len(positions)?;
        let tape = Tape::new();
        let x = tape.var(Tensor::from_points(positions));
        let rec = self.record(&tape, x)?;
        let mut terms = TermEnergies::default();
        for (term, v) in &rec.terms {
            terms.set(*term, v.item());
        }
        let mut grads = tape.backward(rec.total)?;
        let grad = grads.take(x);
        let forces = grad.data().chunks_exact(3).map(|g| [-g[0], -g[1], -g[2]]).collect();
        Ok(ForceReport { total: rec.total.item(), terms, forces, pinned: self.pinned.clone() })
    }
}

/// One-shot evaluation of the enabled terms at the mesh's current positions.
pub fn evaluate(
    mesh: &Mesh,
    params: &MaterialParams,
    collider: Option<&SdfCollider>,
    terms: TermSet,
) -> Result<ForceReport> {
    PotentialSet::new(mesh, params, collider, terms)?.evaluate(&mesh.positions)
}

fn single_term(mesh: &Mesh, params: MaterialParams, collider: Option<&SdfCollider>, term: Term) -> Result<f64> {
    let set = PotentialSet::new(mesh, &params, collider, TermSet::empty().with(term))?;
    Ok(set.energy(&mesh.positions)?.get(term))
}

/// Φ_s at the mesh's current positions.
pub fn stretch_energy(mesh: &Mesh, k_s: f64) -> Result<f64> {
    single_term(mesh, MaterialParams { stretch_stiffness: k_s, ..Default::default() }, None, Term::Stretch)
}

/// Φ_b at the mesh's current positions.
pub fn bend_energy(mesh: &Mesh, k_b: f64) -> Result<f64> {
    single_term(mesh, MaterialParams { bend_stiffness: k_b, ..Default::default() }, None, Term::Bend)
}

/// Φ_g with gravity pulling along `direction`.
pub fn gravity_energy(mesh: &Mesh, density: f64, g: f64, direction: [f64; 3]) -> Result<f64> {
    let params = MaterialParams { density, gravity: g, gravity_direction: direction, ..Default::default() };
    single_term(mesh, params, None, Term::Gravity)
}

/// Φ_ec against `collider` with the given stiffness and margin.
pub fn external_contact_energy(mesh: &Mesh, collider: &SdfCollider, k_ec: f64, margin: f64) -> Result<f64> {
    let params = MaterialParams { contact_stiffness: Some(k_ec), collision_margin: margin, ..Default::default() };
    single_term(mesh, params, Some(collider), Term::Contact)
}

/// Φ_sc with rest length `radius` and `ring_exclusion`-ring neighbors
/// excluded.
pub fn self_collision_energy(mesh: &Mesh, k_sc: f64, radius: f64, ring_exclusion: usize) -> Result<f64> {
    let params = MaterialParams {
        self_stiffness: Some(k_sc),
        self_rest_length: Some(radius),
        ring_exclusion,
        ..Default::default()
    };
    single_term(mesh, params, None, Term::SelfCollision)
}
