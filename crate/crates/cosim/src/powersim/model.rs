//! State-space assembly and fixed-step trapezoidal integration.
//!
//! `build_state_space` runs modified nodal analysis on the netlist with
//! inductors treated as state-valued current sources and capacitors as
//! state-valued voltage branches. Eliminating the algebraic unknowns gives
//! the familiar form
//!
//! ```text
//!   x' = A x + B u        y = C x + D u
//! ```
//!
//! with `x = [inductor currents; capacitor voltages]` and `u` the source
//! values. Stepping uses the trapezoidal rule at the fixed native step:
//! A-stable and energy-preserving on lossless LC loops. Port-driven inputs
//! are handled first-order-hold: the previous delivered value is the left
//! endpoint of the trapezoid, the fresh one the right endpoint.

use nalgebra::{DMatrix, DVector};

use crate::port::{PortSpec, PortValues};
use crate::time::{SimDuration, SimInstant};

use super::netlist::{ElementKind, Netlist, Probe, SourceProfile};
use super::PowersimError;

/// Where a `u` vector entry takes its value from.
#[derive(Debug, Clone)]
enum InputBinding {
    Profile(SourceProfile),
    Port { name: String, initial: f64 },
}

/// Linear circuit in state-space form with a trapezoidal stepper.
#[derive(Debug, Clone)]
pub struct CircuitModel {
    netlist: Netlist,
    // x' = A x + B u ; y = C x + D u
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    // x_{k+1} = f_mat x_k + g_mat (u_k + u_{k+1})
    f_mat: DMatrix<f64>,
    g_mat: DMatrix<f64>,
    /// d y_{k+1} / d u_{k+1} = C g_mat + D, used for delay-free interface solves.
    step_sens: DMatrix<f64>,
    input_bindings: Vec<InputBinding>,
    input_ports: Vec<PortSpec>,
    output_ports: Vec<PortSpec>,
    x: DVector<f64>,
    u_prev: DVector<f64>,
    last_outputs: Vec<f64>,
    step_count: u64,
    dt: SimDuration,
    dt_s: f64,
}

/// Builds the state-space model for a validated netlist.
///
/// Fails with `SingularTopology` when the nodal system has no unique
/// solution (floating subcircuits, voltage-source loops, inductor cutsets).
pub fn build_state_space(netlist: &Netlist) -> Result<CircuitModel, PowersimError> {
    netlist.validate()?;

    // Node numbering; ground is eliminated.
    let mut node_index: std::collections::BTreeMap<&str, usize> = Default::default();
    for el in &netlist.elements {
        for node in [el.a.as_str(), el.b.as_str()] {
            if node != netlist.ground && !node_index.contains_key(node) {
                let next = node_index.len();
                node_index.insert(node, next);
            }
        }
    }
    let n_nodes = node_index.len();

    // Branch-current unknowns: voltage sources, capacitors, zero-ohm
    // resistors (ideal shorts, also used as ammeters).
    let mut branch_of_element: std::collections::BTreeMap<&str, usize> = Default::default();
    for el in &netlist.elements {
        let is_branch = matches!(
            &el.kind,
            ElementKind::VoltageSource { .. } | ElementKind::Capacitor { .. }
        ) || matches!(&el.kind, ElementKind::Resistor { ohms } if *ohms == 0.0);
        if is_branch {
            let next = n_nodes + branch_of_element.len();
            branch_of_element.insert(el.name.as_str(), next);
        }
    }
    let nz = n_nodes + branch_of_element.len();

    // States: inductor currents then capacitor voltages, element order.
    let mut state_of_element: std::collections::BTreeMap<&str, usize> = Default::default();
    for el in &netlist.elements {
        if matches!(el.kind, ElementKind::Inductor { .. }) {
            let next = state_of_element.len();
            state_of_element.insert(el.name.as_str(), next);
        }
    }
    for el in &netlist.elements {
        if matches!(el.kind, ElementKind::Capacitor { .. }) {
            let next = state_of_element.len();
            state_of_element.insert(el.name.as_str(), next);
        }
    }
    let nx = state_of_element.len();

    // Inputs: one entry per source element, element order.
    let mut input_bindings = Vec::new();
    let mut input_of_element: std::collections::BTreeMap<&str, usize> = Default::default();
    for el in &netlist.elements {
        if let Some(profile) = el.profile() {
            input_of_element.insert(el.name.as_str(), input_bindings.len());
            input_bindings.push(match profile {
                SourceProfile::Port { name, initial } => {
                    InputBinding::Port { name: name.clone(), initial: *initial }
                }
                p => InputBinding::Profile(p.clone()),
            });
        }
    }
    let nu = input_bindings.len();

    let col_of = |node: &str| node_index.get(node).copied();

    // M z = P x + Q u, with z = [node voltages; branch currents].
    let mut m = DMatrix::<f64>::zeros(nz, nz);
    let mut p = DMatrix::<f64>::zeros(nz, nx);
    let mut q = DMatrix::<f64>::zeros(nz, nu);
    // x' = s_z z
    let mut s_z = DMatrix::<f64>::zeros(nx, nz);

    for el in &netlist.elements {
        let ca = col_of(&el.a);
        let cb = col_of(&el.b);
        match &el.kind {
            ElementKind::Resistor { ohms } if *ohms > 0.0 => {
                let g = 1.0 / ohms;
                if let Some(a) = ca {
                    m[(a, a)] += g;
                    if let Some(b) = cb {
                        m[(a, b)] -= g;
                    }
                }
                if let Some(b) = cb {
                    m[(b, b)] += g;
                    if let Some(a) = ca {
                        m[(b, a)] -= g;
                    }
                }
            }
            ElementKind::Resistor { .. } => {
                // Zero-ohm resistor: ideal short with its own branch current.
                let row = branch_of_element[el.name.as_str()];
                stamp_voltage_branch(&mut m, row, ca, cb);
            }
            ElementKind::VoltageSource { .. } => {
                let row = branch_of_element[el.name.as_str()];
                stamp_voltage_branch(&mut m, row, ca, cb);
                q[(row, input_of_element[el.name.as_str()])] = 1.0;
            }
            ElementKind::Capacitor { farads } => {
                let row = branch_of_element[el.name.as_str()];
                stamp_voltage_branch(&mut m, row, ca, cb);
                p[(row, state_of_element[el.name.as_str()])] = 1.0;
                // C dv/dt = branch current (a -> b charges the a side).
                s_z[(state_of_element[el.name.as_str()], row)] = 1.0 / farads;
            }
            ElementKind::CurrentSource { .. } => {
                let u_idx = input_of_element[el.name.as_str()];
                if let Some(a) = ca {
                    q[(a, u_idx)] -= 1.0;
                }
                if let Some(b) = cb {
                    q[(b, u_idx)] += 1.0;
                }
            }
            ElementKind::Inductor { henries } => {
                let x_idx = state_of_element[el.name.as_str()];
                if let Some(a) = ca {
                    p[(a, x_idx)] -= 1.0;
                }
                if let Some(b) = cb {
                    p[(b, x_idx)] += 1.0;
                }
                // L di/dt = v_a - v_b
                if let Some(a) = ca {
                    s_z[(x_idx, a)] += 1.0 / henries;
                }
                if let Some(b) = cb {
                    s_z[(x_idx, b)] -= 1.0 / henries;
                }
            }
        }
    }

    // nalgebra's FullPivLU cannot handle 0-dimensional systems; an empty
    // system is trivially solvable, so short-circuit those.
    let (m_inv_p, m_inv_q) = if nz == 0 {
        (p.clone(), q.clone())
    } else {
        let lu = m.clone().full_piv_lu();
        if !lu.is_invertible() {
            return Err(PowersimError::SingularTopology(
                "nodal matrix is singular; the topology has no unique solution".into(),
            ));
        }
        (lu.solve(&p).expect("checked invertible"), lu.solve(&q).expect("checked invertible"))
    };

    let a_mat = &s_z * &m_inv_p;
    let b_mat = &s_z * &m_inv_q;

    // Outputs: y = T_z z + T_x x + T_u u.
    let ny = netlist.probes.len();
    let mut t_z = DMatrix::<f64>::zeros(ny, nz);
    let mut t_x = DMatrix::<f64>::zeros(ny, nx);
    let mut t_u = DMatrix::<f64>::zeros(ny, nu);
    let mut output_ports = Vec::with_capacity(ny);
    for (row, probe) in netlist.probes.iter().enumerate() {
        output_ports.push(PortSpec::new(probe.port(), probe.unit()));
        match probe {
            Probe::NodeVoltage { node, .. } => {
                if let Some(col) = col_of(node) {
                    t_z[(row, col)] = 1.0;
                }
            }
            Probe::BranchCurrent { element, .. } => {
                let el = netlist.element(element).expect("validated");
                match &el.kind {
                    ElementKind::Resistor { ohms } if *ohms > 0.0 => {
                        let g = 1.0 / ohms;
                        if let Some(a) = col_of(&el.a) {
                            t_z[(row, a)] += g;
                        }
                        if let Some(b) = col_of(&el.b) {
                            t_z[(row, b)] -= g;
                        }
                    }
                    ElementKind::Inductor { .. } => {
                        t_x[(row, state_of_element[element.as_str()])] = 1.0;
                    }
                    ElementKind::CurrentSource { .. } => {
                        t_u[(row, input_of_element[element.as_str()])] = 1.0;
                    }
                    _ => {
                        t_z[(row, branch_of_element[element.as_str()])] = 1.0;
                    }
                }
            }
        }
    }
    let c_mat = &t_z * &m_inv_p + t_x;
    let d_mat = &t_z * &m_inv_q + t_u;

    // Trapezoidal step matrices.
    let dt_s = netlist.dt.as_secs_f64();
    let identity = DMatrix::<f64>::identity(nx, nx);
    let (f_mat, g_mat) = if nx == 0 {
        (identity.clone(), DMatrix::<f64>::zeros(0, nu))
    } else {
        let left = &identity - &a_mat * (dt_s / 2.0);
        let left_lu = left.full_piv_lu();
        if !left_lu.is_invertible() {
            return Err(PowersimError::SingularTopology(
                "trapezoidal step matrix is singular".into(),
            ));
        }
        (
            left_lu
                .solve(&(&identity + &a_mat * (dt_s / 2.0)))
                .expect("checked invertible"),
            left_lu.solve(&(&b_mat * (dt_s / 2.0))).expect("checked invertible"),
        )
    };
    let step_sens = &c_mat * &g_mat + &d_mat;

    let input_ports = netlist.input_ports();
    let mut model = CircuitModel {
        netlist: netlist.clone(),
        a: a_mat,
        b: b_mat,
        c: c_mat,
        d: d_mat,
        f_mat,
        g_mat,
        step_sens,
        input_bindings,
        input_ports,
        output_ports,
        x: DVector::zeros(nx),
        u_prev: DVector::zeros(nu),
        last_outputs: vec![0.0; ny],
        step_count: 0,
        dt: netlist.dt,
        dt_s,
    };
    model.u_prev = model.eval_inputs(0.0, None)?;
    model.last_outputs = (&model.c * &model.x + &model.d * &model.u_prev)
        .iter()
        .copied()
        .collect();
    Ok(model)
}

fn stamp_voltage_branch(m: &mut DMatrix<f64>, row: usize, ca: Option<usize>, cb: Option<usize>) {
    if let Some(a) = ca {
        m[(row, a)] += 1.0; // branch current leaves node a
        m[(a, row)] += 1.0;
    }
    if let Some(b) = cb {
        m[(row, b)] -= 1.0;
        m[(b, row)] -= 1.0;
    }
}

impl CircuitModel {
    pub fn netlist(&self) -> &Netlist {
        &self.netlist
    }

    pub fn dt(&self) -> SimDuration {
        self.dt
    }

    /// Current grid time, `step_count * dt`.
    pub fn time(&self) -> SimInstant {
        SimInstant::ZERO + self.dt * self.step_count
    }

    pub fn input_ports(&self) -> &[PortSpec] {
        &self.input_ports
    }

    pub fn output_ports(&self) -> &[PortSpec] {
        &self.output_ports
    }

    pub fn state(&self) -> Vec<f64> {
        self.x.iter().copied().collect()
    }

    pub fn set_state(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.x.len(), "state vector length mismatch");
        self.x = DVector::from_column_slice(x);
        self.last_outputs = (&self.c * &self.x + &self.d * &self.u_prev)
            .iter()
            .copied()
            .collect();
    }

    /// `A` matrix (row-major copy), mainly for tests and diagnostics.
    pub fn a_matrix(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.a)
    }

    pub fn b_matrix(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.b)
    }

    /// Outputs at the current time, as of the latest step.
    pub fn outputs_now(&self) -> PortValues {
        self.output_ports
            .iter()
            .zip(&self.last_outputs)
            .map(|(spec, v)| (spec.name.clone(), *v))
            .collect()
    }

    /// Outputs at the current time in probe declaration order.
    pub fn outputs_ordered(&self) -> &[f64] {
        &self.last_outputs
    }

    /// Sensitivity of one output to one port-driven input over a single
    /// step, `d y_{k+1}[out] / d u_{k+1}[in]`. Constant for a fixed model.
    pub fn step_sensitivity(&self, output: &str, input: &str) -> Option<f64> {
        let row = self.output_ports.iter().position(|p| p.name == output)?;
        let col = self
            .input_bindings
            .iter()
            .position(|b| matches!(b, InputBinding::Port { name, .. } if name == input))?;
        Some(self.step_sens[(row, col)])
    }

    fn eval_inputs(&self, t: f64, ports: Option<&PortValues>) -> Result<DVector<f64>, PowersimError> {
        let mut u = DVector::zeros(self.input_bindings.len());
        for (i, binding) in self.input_bindings.iter().enumerate() {
            u[i] = match binding {
                InputBinding::Profile(SourceProfile::Dc(v)) => *v,
                InputBinding::Profile(SourceProfile::Sine { amplitude, omega, phase }) => {
                    amplitude * (omega * t + phase).sin()
                }
                InputBinding::Profile(SourceProfile::Port { .. }) => unreachable!("ports are bound"),
                InputBinding::Port { name, initial } => match ports {
                    Some(map) => *map
                        .get(name)
                        .ok_or_else(|| PowersimError::MissingInput(name.clone()))?,
                    None => *initial,
                },
            };
        }
        Ok(u)
    }

    /// Advances one native step and returns the outputs at the new time.
    ///
    /// `inputs` must contain every port-driven source value; they are used
    /// as the right endpoint of the trapezoid (the previously delivered
    /// values form the left endpoint).
    pub fn step(&mut self, inputs: &PortValues) -> Result<PortValues, PowersimError> {
        let (x_next, u_next, y) = self.compute_step(inputs)?;
        for v in y.iter().chain(x_next.iter()) {
            if !v.is_finite() {
                return Err(PowersimError::NonFinite {
                    t: self.time() + self.dt,
                });
            }
        }
        self.x = x_next;
        self.u_prev = u_next;
        self.step_count += 1;
        self.last_outputs = y.iter().copied().collect();
        Ok(self.outputs_now())
    }

    /// Computes one step without committing any state; identical arithmetic
    /// to `step`. Used by delay-free interface solves.
    pub fn trial_step(&self, inputs: &PortValues) -> Result<PortValues, PowersimError> {
        let (_, _, y) = self.compute_step(inputs)?;
        Ok(self
            .output_ports
            .iter()
            .zip(y.iter())
            .map(|(spec, v)| (spec.name.clone(), *v))
            .collect())
    }

    fn compute_step(
        &self,
        inputs: &PortValues,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), PowersimError> {
        let t_next = (self.step_count + 1) as f64 * self.dt_s;
        let u_next = self.eval_inputs(t_next, Some(inputs))?;
        let x_next = &self.f_mat * &self.x + &self.g_mat * (&self.u_prev + &u_next);
        let y = &self.c * &x_next + &self.d * &u_next;
        Ok((x_next, u_next, y))
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}
