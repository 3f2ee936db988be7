//! Domain types, design matrices, and the linear Q-function.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A binary treatment coded as −1 / +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Minus,
    Plus,
}

impl Action {
    pub fn value(self) -> f64 {
        match self {
            Action::Minus => -1.0,
            Action::Plus => 1.0,
        }
    }

    pub fn from_sign(x: f64) -> Action {
        if x > 0.0 {
            Action::Plus
        } else {
            Action::Minus
        }
    }
}

impl TryFrom<f64> for Action {
    type Error = Error;

    fn try_from(v: f64) -> Result<Action> {
        if v == 1.0 {
            Ok(Action::Plus)
        } else if v == -1.0 {
            Ok(Action::Minus)
        } else {
            Err(Error::invalid(format!("action must be -1 or +1, got {v}")))
        }
    }
}

/// What was observed for one subject at one stage, already mapped to the
/// model's feature vectors. Intercepts are explicit leading entries.
#[derive(Debug, Clone, PartialEq)]
pub struct StageObservation {
    /// Main-effect features `S_t1`.
    pub s_main: Vec<f64>,
    /// Treatment-interaction features `S_t2`.
    pub s_interact: Vec<f64>,
    pub action: Action,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub subject_id: String,
    /// Stages in chronological order, stage 1 first.
    pub stages: Vec<StageObservation>,
}

/// Fitted coefficients `θ_t = (β_t, ψ_t)` of the stage-t Q-function
/// `Q_t = βᵀ s_main + (ψᵀ s_interact) · a`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageModel {
    pub stage: usize,
    pub beta: DVector<f64>,
    pub psi: DVector<f64>,
}

impl StageModel {
    pub fn new(stage: usize, beta: DVector<f64>, psi: DVector<f64>) -> Self {
        StageModel { stage, beta, psi }
    }

    pub fn zeros(stage: usize, p_main: usize, p_interact: usize) -> Self {
        StageModel::new(stage, DVector::zeros(p_main), DVector::zeros(p_interact))
    }

    /// Stacked `(β, ψ)`.
    pub fn theta(&self) -> DVector<f64> {
        let mut t = DVector::zeros(self.beta.len() + self.psi.len());
        t.rows_mut(0, self.beta.len()).copy_from(&self.beta);
        t.rows_mut(self.beta.len(), self.psi.len()).copy_from(&self.psi);
        t
    }

    pub fn from_theta(stage: usize, theta: &DVector<f64>, p_main: usize) -> Self {
        let p_interact = theta.len() - p_main;
        StageModel::new(
            stage,
            theta.rows(0, p_main).into_owned(),
            theta.rows(p_main, p_interact).into_owned(),
        )
    }
}

/// Stage design `Z = [X1 | X2]` with row i equal to `(S_t1,iᵀ, A_i·S_t2,iᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub z: DMatrix<f64>,
    /// Main-effect block, rows `S_t1,iᵀ`.
    pub x_main: DMatrix<f64>,
    /// Interaction block, rows `A_i·S_t2,iᵀ`.
    pub x_interact: DMatrix<f64>,
    /// Unsigned interaction features, rows `S_t2,iᵀ`.
    pub s_interact: DMatrix<f64>,
    pub actions: Vec<Action>,
}

impl DesignMatrix {
    pub fn from_parts(
        s_main: DMatrix<f64>,
        s_interact: DMatrix<f64>,
        actions: Vec<Action>,
    ) -> Result<DesignMatrix> {
        let n = s_main.nrows();
        if s_interact.nrows() != n {
            return Err(Error::Dimension {
                what: "interaction feature rows",
                got: s_interact.nrows(),
                expected: n,
            });
        }
        if actions.len() != n {
            return Err(Error::Dimension {
                what: "actions",
                got: actions.len(),
                expected: n,
            });
        }
        let mut x_interact = s_interact.clone();
        for (i, a) in actions.iter().enumerate() {
            if *a == Action::Minus {
                x_interact.row_mut(i).neg_mut();
            }
        }
        let (p1, p2) = (s_main.ncols(), s_interact.ncols());
        let mut z = DMatrix::zeros(n, p1 + p2);
        z.columns_mut(0, p1).copy_from(&s_main);
        z.columns_mut(p1, p2).copy_from(&x_interact);
        Ok(DesignMatrix {
            z,
            x_main: s_main,
            x_interact,
            s_interact,
            actions,
        })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p_main(&self) -> usize {
        self.x_main.ncols()
    }

    pub fn p_interact(&self) -> usize {
        self.x_interact.ncols()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    /// Rows selected (with repetition) by `idx`.
    pub fn subset(&self, idx: &[usize]) -> DesignMatrix {
        DesignMatrix {
            z: self.z.select_rows(idx),
            x_main: self.x_main.select_rows(idx),
            x_interact: self.x_interact.select_rows(idx),
            s_interact: self.s_interact.select_rows(idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
        }
    }

    /// `ψᵀ S_t2,i` for every subject.
    pub fn effects(&self, psi: &DVector<f64>) -> Vec<f64> {
        (&self.s_interact * psi).iter().copied().collect()
    }
}

/// Builds the stage design from `(subject_id, observation)` pairs.
pub fn build_design<'a, I>(rows: I) -> Result<DesignMatrix>
where
    I: IntoIterator<Item = (&'a str, &'a StageObservation)>,
{
    let rows: Vec<_> = rows.into_iter().collect();
    let Some((_, first)) = rows.first() else {
        return Err(Error::invalid("design needs at least one subject"));
    };
    let (p1, p2) = (first.s_main.len(), first.s_interact.len());
    let n = rows.len();
    let mut s_main = DMatrix::zeros(n, p1);
    let mut s_interact = DMatrix::zeros(n, p2);
    let mut actions = Vec::with_capacity(n);
    for (i, (id, obs)) in rows.iter().enumerate() {
        if obs.s_main.len() != p1 {
            return Err(Error::SubjectDimension {
                subject: id.to_string(),
                what: "main-effect features",
                got: obs.s_main.len(),
                expected: p1,
            });
        }
        if obs.s_interact.len() != p2 {
            return Err(Error::SubjectDimension {
                subject: id.to_string(),
                what: "interaction features",
                got: obs.s_interact.len(),
                expected: p2,
            });
        }
        s_main.row_mut(i).copy_from_slice(&obs.s_main);
        s_interact.row_mut(i).copy_from_slice(&obs.s_interact);
        actions.push(obs.action);
    }
    DesignMatrix::from_parts(s_main, s_interact, actions)
}

fn check_dims(model: &StageModel, s1: &[f64], s2: &[f64]) -> Result<()> {
    if s1.len() != model.beta.len() {
        return Err(Error::Dimension {
            what: "main-effect features",
            got: s1.len(),
            expected: model.beta.len(),
        });
    }
    check_interact(&model.psi, s2)
}

fn check_interact(psi: &DVector<f64>, s2: &[f64]) -> Result<()> {
    if s2.len() != psi.len() {
        return Err(Error::Dimension {
            what: "interaction features",
            got: s2.len(),
            expected: psi.len(),
        });
    }
    Ok(())
}

fn dot(v: &DVector<f64>, s: &[f64]) -> f64 {
    v.iter().zip(s).map(|(a, b)| a * b).sum()
}

/// `Q(s, a) = βᵀs1 + (ψᵀs2)·a`.
pub fn eval_q(model: &StageModel, s1: &[f64], s2: &[f64], a: Action) -> Result<f64> {
    check_dims(model, s1, s2)?;
    Ok(dot(&model.beta, s1) + dot(&model.psi, s2) * a.value())
}

/// `sgn(ψᵀs2)` with ties going to −1.
pub fn decision_rule(psi: &DVector<f64>, s2: &[f64]) -> Result<Action> {
    check_interact(psi, s2)?;
    Ok(Action::from_sign(dot(psi, s2)))
}

/// `max_a Q(s, a) = βᵀs1 + |ψᵀs2|`.
pub fn max_q(model: &StageModel, s1: &[f64], s2: &[f64]) -> Result<f64> {
    check_dims(model, s1, s2)?;
    Ok(dot(&model.beta, s1) + dot(&model.psi, s2).abs())
}
