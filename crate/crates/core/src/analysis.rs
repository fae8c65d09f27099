//! Trapping zones, node catalogs and ejection classification.

use std::collections::HashMap;

use crate::basis::BoundState;
use crate::error::{QhjError, Result};
use crate::momenta::HiddenVariables;
use crate::quantum::{EventKind, IntegratorConfig, QuantumModel, Trajectory, TrajectoryState};

/// Radial interval where E − V(r) − l(l+1)/2r² > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapZone {
    pub r1: f64,
    pub r2: f64,
    pub contains_origin: bool,
    pub state: BoundState,
}

impl TrapZone {
    pub fn contains(&self, r: f64) -> bool {
        r > self.r1 && r < self.r2
    }
}

/// Roots of E r² + r − λ/2 = 0 (the radial bracket times r²), by sign scan,
/// bisection and a Newton polish.
pub fn trap_zone(state: &BoundState) -> Result<TrapZone> {
    let e = state.energy;
    if !(e < 0.0) {
        return Err(QhjError::Unbound(format!("E = {e} is not negative")));
    }
    let half_lambda = 0.5 * state.lambda;
    let f = |r: f64| e * r * r + r - half_lambda;
    let df = |r: f64| 2.0 * e * r + 1.0;
    let r_max = 4.0 / (-e) + 10.0;
    let n = 20_000;
    let mut roots = Vec::new();
    let mut prev = f(0.0);
    if prev == 0.0 {
        roots.push(0.0);
    }
    for k in 1..=n {
        let (a, b) = (
            r_max * (k - 1) as f64 / n as f64,
            r_max * k as f64 / n as f64,
        );
        let fb = f(b);
        if prev * fb < 0.0 {
            roots.push(refine(&f, &df, a, b));
        } else if fb == 0.0 {
            roots.push(b);
        }
        prev = fb;
    }
    match (state.l, roots.as_slice()) {
        (0, [.., r2]) => Ok(TrapZone {
            r1: 0.0,
            r2: *r2,
            contains_origin: true,
            state: *state,
        }),
        (_, [r1, r2]) => Ok(TrapZone {
            r1: *r1,
            r2: *r2,
            contains_origin: false,
            state: *state,
        }),
        _ => Err(QhjError::Unbound(format!("no trapping zone for {state}"))),
    }
}

fn refine(f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a) <= 1e-15 * m.abs() {
            break;
        }
        if f(m) * fa > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let mut x = 0.5 * (a + b);
    for _ in 0..3 {
        let d = df(x);
        if d == 0.0 {
            break;
        }
        let nx = x - f(x) / d;
        if (nx - x).abs() > (b - a).abs().max(1e-14 * x.abs()) {
            break;
        }
        x = nx;
    }
    x
}

/// Expected number of nodes and their radii: {0, r2, r2} when the origin is
/// inside the zone, {r1, r2} otherwise.
pub fn expected_node_count(state: &BoundState) -> Result<(usize, Vec<f64>)> {
    let z = trap_zone(state)?;
    if z.contains_origin {
        Ok((3, vec![0.0, z.r2, z.r2]))
    } else {
        Ok((2, vec![z.r1, z.r2]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodePosition {
    Radial(f64),
    Spatial { r: f64, theta: f64, phi: f64 },
}

impl NodePosition {
    pub fn radius(&self) -> f64 {
        match *self {
            NodePosition::Radial(r) => r,
            NodePosition::Spatial { r, .. } => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub position: NodePosition,
    /// Number of distinct trajectories passing within tolerance.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeCatalog {
    pub nodes: Vec<Node>,
}

impl NodeCatalog {
    pub fn radii(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.position.radius()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeMode {
    /// Clusters turning radii and origin approaches from the event logs.
    Radial,
    /// Clusters points of the sampled paths on a spatial grid.
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeOptions {
    pub mode: NodeMode,
    pub node_tol: f64,
    /// Minimum number of distinct trajectories; defaults to the ensemble size.
    pub min_support: Option<usize>,
    /// Origin radius below which origin approaches form the r = 0 node.
    pub origin_radius: f64,
}

impl NodeOptions {
    pub fn radial() -> Self {
        Self {
            mode: NodeMode::Radial,
            node_tol: 1e-6,
            min_support: None,
            origin_radius: 1e-5,
        }
    }

    pub fn spatial() -> Self {
        Self {
            mode: NodeMode::Spatial,
            node_tol: 0.05,
            min_support: None,
            origin_radius: 1e-5,
        }
    }
}

/// Clusters points shared by the trajectories of an ensemble.
pub fn detect_nodes(ensemble: &[Trajectory], opts: &NodeOptions) -> Result<NodeCatalog> {
    if ensemble.is_empty() {
        return Err(QhjError::Domain("empty ensemble".into()));
    }
    if ensemble.len() < 2 {
        return Err(QhjError::Domain(
            "node detection needs at least two trajectories".into(),
        ));
    }
    let need = opts.min_support.unwrap_or(ensemble.len()).max(2);
    match opts.mode {
        NodeMode::Radial => Ok(radial_nodes(ensemble, opts, need)),
        NodeMode::Spatial => Ok(spatial_nodes(ensemble, opts, need)),
    }
}

fn radial_nodes(ensemble: &[Trajectory], opts: &NodeOptions, need: usize) -> NodeCatalog {
    // (radius, trajectory index)
    let mut pts: Vec<(f64, usize)> = Vec::new();
    for (i, tr) in ensemble.iter().enumerate() {
        for ev in &tr.events {
            match ev.kind {
                EventKind::RadialTurn => pts.push((ev.r, i)),
                EventKind::OriginApproach => pts.push((0.0, i)),
                _ => {}
            }
        }
        if let Some(min) = tr.samples.iter().map(|s| s.r).reduce(f64::min) {
            if min <= opts.origin_radius
                && !tr
                    .events
                    .iter()
                    .any(|e| e.kind == EventKind::OriginApproach)
            {
                pts.push((0.0, i));
            }
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut nodes = Vec::new();
    let mut k = 0;
    while k < pts.len() {
        let start = pts[k].0;
        let mut j = k;
        while j < pts.len() && pts[j].0 - start <= opts.node_tol {
            j += 1;
        }
        let cluster = &pts[k..j];
        let mut ids: Vec<usize> = cluster.iter().map(|p| p.1).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() >= need {
            let mean = cluster.iter().map(|p| p.0).sum::<f64>() / cluster.len() as f64;
            nodes.push(Node {
                position: NodePosition::Radial(mean),
                support: ids.len(),
            });
        }
        k = j;
    }
    NodeCatalog { nodes }
}

fn cartesian(s: &TrajectoryState) -> [f64; 3] {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    [s.r * st * cp, s.r * st * sp, s.r * ct]
}

fn spatial_nodes(ensemble: &[Trajectory], opts: &NodeOptions, need: usize) -> NodeCatalog {
    let h = opts.node_tol;
    // cell -> (trajectory ids, point sum, count)
    let mut grid: HashMap<[i64; 3], (Vec<usize>, [f64; 3], usize)> = HashMap::new();
    for (i, tr) in ensemble.iter().enumerate() {
        let mut add = |p: [f64; 3]| {
            let key = p.map(|v| (v / h).floor() as i64);
            let e = grid.entry(key).or_insert_with(|| (Vec::new(), [0.0; 3], 0));
            if e.0.last() != Some(&i) {
                e.0.push(i);
            }
            for (acc, v) in e.1.iter_mut().zip(p) {
                *acc += v;
            }
            e.2 += 1;
        };
        // resample the polyline so consecutive points are at most h/2 apart
        for w in tr.samples.windows(2) {
            let (p, q) = (cartesian(&w[0]), cartesian(&w[1]));
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            if !d.is_finite() {
                continue;
            }
            let k = ((2.0 * d / h).ceil() as usize).clamp(1, 100_000);
            for j in 0..k {
                let t = j as f64 / k as f64;
                add([
                    p[0] + t * (q[0] - p[0]),
                    p[1] + t * (q[1] - p[1]),
                    p[2] + t * (q[2] - p[2]),
                ]);
            }
        }
        if let Some(last) = tr.samples.last() {
            add(cartesian(last));
        }
    }
    // merge neighbouring qualifying cells
    let mut cells: Vec<([i64; 3], Vec<usize>, [f64; 3], usize)> = grid
        .into_iter()
        .map(|(k, (mut ids, s, c))| {
            ids.sort_unstable();
            ids.dedup();
            (k, ids, s, c)
        })
        .collect();
    cells.sort_by(|a, b| a.0.cmp(&b.0));
    let mut used = vec![false; cells.len()];
    let index: HashMap<[i64; 3], usize> = cells.iter().enumerate().map(|(i, c)| (c.0, i)).collect();
    let mut nodes = Vec::new();
    for start in 0..cells.len() {
        if used[start] || cells[start].1.len() < need {
            continue;
        }
        let mut stack = vec![start];
        used[start] = true;
        let mut ids: Vec<usize> = Vec::new();
        let mut sum = [0.0; 3];
        let mut count = 0usize;
        while let Some(c) = stack.pop() {
            ids.extend(&cells[c].1);
            for (a, v) in sum.iter_mut().zip(cells[c].2) {
                *a += v;
            }
            count += cells[c].3;
            let k = cells[c].0;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let nk = [k[0] + dx, k[1] + dy, k[2] + dz];
                        if let Some(&j) = index.get(&nk) {
                            if !used[j] && cells[j].1.len() >= need {
                                used[j] = true;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
        }
        ids.sort_unstable();
        ids.dedup();
        let c = sum.map(|v| v / count as f64);
        let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        let theta = if r > 0.0 {
            (c[2] / r).clamp(-1.0, 1.0).acos()
        } else {
            0.0
        };
        nodes.push(Node {
            position: NodePosition::Spatial {
                r,
                theta,
                phi: c[1].atan2(c[0]),
            },
            support: ids.len(),
        });
    }
    NodeCatalog { nodes }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EjectionClass {
    Trapped,
    /// Time at which r first exceeds the ejection radius.
    Ejected(f64),
}

/// Integrates forward from r0 (default angles) until the trajectory either
/// leaves through the ejection radius or completes a full radial period.
pub fn classify_ejection(
    state: &BoundState,
    hidden: &HiddenVariables,
    r0: f64,
    cfg: &IntegratorConfig,
) -> Result<EjectionClass> {
    if !(r0 > 0.0) {
        return Err(QhjError::Domain(format!("r0 = {r0} must be positive")));
    }
    let zone = trap_zone(state)?;
    if (r0 - zone.r2).abs() <= cfg.event_refine_tol
        || (!zone.contains_origin && (r0 - zone.r1).abs() <= cfg.event_refine_tol)
    {
        return Ok(EjectionClass::Trapped);
    }
    let model = QuantumModel::new(state, hidden)?;
    let mut c = cfg.clone();
    // a full period passes both extremities and returns
    c.max_radial_turns = Some(3);
    let init = TrajectoryState::at(r0, hidden);
    let tr = model
        .integrate_time(&init, &c)
        .map_err(|e| QhjError::Indeterminate(e.to_string()))?;
    if let Some(ev) = tr.events.iter().find(|e| e.kind == EventKind::Ejection) {
        return Ok(EjectionClass::Ejected(ev.t));
    }
    let turns = tr
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::RadialTurn | EventKind::OriginApproach))
        .count();
    let inside = tr
        .samples
        .iter()
        .all(|s| s.r <= zone.r2 + 1e-6 && s.r >= zone.r1 - 1e-6);
    if turns >= 3 && inside {
        Ok(EjectionClass::Trapped)
    } else {
        Err(QhjError::Indeterminate(format!(
            "{turns} turning events and no ejection before t = {}",
            tr.samples.last().map(|s| s.t).unwrap_or(0.0)
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momenta::Sign;

    fn st(n: u32, l: u32, m: i32) -> BoundState {
        BoundState::new(n, l, m).unwrap()
    }

    #[test]
    fn trap_zone_examples() {
        let z = trap_zone(&st(1, 0, 0)).unwrap();
        assert!(z.contains_origin);
        assert!((z.r2 - 2.0).abs() < 2e-9 * 2.0);
        let z = trap_zone(&st(2, 0, 0)).unwrap();
        assert!((z.r2 - 8.0).abs() < 8e-9);
        let z = trap_zone(&st(2, 1, 1)).unwrap();
        let s = 2.0 * 2f64.sqrt();
        assert!(!z.contains_origin);
        assert!((z.r1 - (4.0 - s)).abs() < 1e-9 * z.r1);
        assert!((z.r2 - (4.0 + s)).abs() < 1e-9 * z.r2);
    }

    /// Quadratic formula as an independent oracle for higher states.
    #[test]
    fn trap_zone_matches_quadratic_formula() {
        for n in 1..=6u32 {
            for l in 0..n {
                let s = st(n, l, 0);
                let z = trap_zone(&s).unwrap();
                let (e, lam) = (s.energy, s.lambda);
                let disc = (1.0 + 2.0 * e * lam).sqrt();
                let hi = (-1.0 - disc) / (2.0 * e);
                let lo = (-1.0 + disc) / (2.0 * e);
                assert!((z.r2 - hi).abs() < 1e-10 * hi, "{s}");
                if l > 0 {
                    assert!((z.r1 - lo).abs() < 1e-10 * hi, "{s}");
                }
                for k in 1..100 {
                    let r = z.r1 + (z.r2 - z.r1) * k as f64 / 100.0;
                    assert!(s.radial_bracket(r) > 0.0);
                }
                assert!(s.radial_bracket(z.r2 * 1.01) < 0.0);
            }
        }
    }

    #[test]
    fn expected_nodes() {
        assert_eq!(expected_node_count(&st(1, 0, 0)).unwrap().0, 3);
        assert_eq!(expected_node_count(&st(2, 0, 0)).unwrap().0, 3);
        let (c, pos) = expected_node_count(&st(2, 1, 1)).unwrap();
        assert_eq!(c, 2);
        assert!((pos[0] - (4.0 - 2.0 * 2f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn detect_nodes_preconditions() {
        assert!(detect_nodes(&[], &NodeOptions::radial()).is_err());
        let tr = Trajectory::empty(
            st(1, 0, 0),
            HiddenVariables::new(1.0, 0.0, 1.0, 0.0, 1.0, 0.0).unwrap(),
        );
        assert!(matches!(
            detect_nodes(&[tr], &NodeOptions::radial()),
            Err(QhjError::Domain(_))
        ));
    }

    fn fig11() -> HiddenVariables {
        HiddenVariables::new(1.5, -0.5, 1.0, 0.0, 1.0, 0.0).unwrap()
    }

    fn long() -> IntegratorConfig {
        IntegratorConfig {
            t_end: 1e4,
            ..Default::default()
        }
    }

    #[test]
    fn ejection_dichotomy() {
        let s = st(1, 0, 0);
        match classify_ejection(&s, &fig11(), 2.1, &long()).unwrap() {
            EjectionClass::Ejected(t) => assert!(t > 0.0),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            classify_ejection(&s, &fig11(), 1.0, &long()).unwrap(),
            EjectionClass::Trapped
        );
        assert_eq!(
            classify_ejection(&s, &fig11(), 2.0, &long()).unwrap(),
            EjectionClass::Trapped
        );
        assert!(classify_ejection(&s, &fig11(), -1.0, &long()).is_err());

        // heading outwards the escape is monotone
        let h = fig11().with_signs(Sign::Minus, Sign::Plus, Sign::Plus);
        let m = QuantumModel::new(&s, &h).unwrap();
        let tr = m
            .integrate_time(&TrajectoryState::at(2.1, &h), &long())
            .unwrap();
        assert_eq!(tr.termination, crate::quantum::Termination::Ejected);
        assert!(tr.samples.windows(2).all(|w| w[1].r > w[0].r));
        assert!(tr.samples.last().unwrap().r >= 100.0 - 1e-9);
    }

    #[test]
    fn radial_nodes_sit_on_the_roots() {
        let s = st(2, 1, 1);
        let zone = trap_zone(&s).unwrap();
        let cfg = IntegratorConfig {
            t_end: 1e4,
            max_radial_turns: Some(3),
            ..Default::default()
        };
        let ens: Vec<Trajectory> = [
            [3.1, -0.4, 0.6, -0.2, 1.0, 0.0],
            [1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            [0.5, 0.7, 1.4, 0.3, 0.8, -0.2],
            [2.2, 0.1, 0.9, -0.5, 1.1, 0.4],
            [0.8, -1.2, 0.4, 0.6, 1.5, 0.1],
        ]
        .iter()
        .map(|v| {
            let h = HiddenVariables::new(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
            let m = QuantumModel::new(&s, &h).unwrap();
            m.integrate_time(&TrajectoryState::at(3.0, &h), &cfg)
                .unwrap()
        })
        .collect();
        let cat = detect_nodes(&ens, &NodeOptions::radial()).unwrap();
        let radii = cat.radii();
        assert_eq!(radii.len(), 2, "{radii:?}");
        assert!((radii[0] - zone.r1).abs() < 1e-6);
        assert!((radii[1] - zone.r2).abs() < 1e-6);
        assert!(cat.nodes.iter().all(|n| n.support == 5));
    }

    #[test]
    fn origin_node_for_s_states() {
        let s = st(1, 0, 0);
        let cfg = IntegratorConfig {
            t_end: 1e4,
            max_radial_turns: Some(3),
            ..Default::default()
        };
        let ens: Vec<Trajectory> = [[0.36, 0.52], [1.0, 0.0], [0.7, -0.3]]
            .iter()
            .map(|v| {
                let h = HiddenVariables::new(v[0], v[1], 1.0, 0.0, 1.0, 0.0).unwrap();
                let m = QuantumModel::new(&s, &h).unwrap();
                m.integrate_time(&TrajectoryState::at(1.0, &h), &cfg)
                    .unwrap()
            })
            .collect();
        let radii = detect_nodes(&ens, &NodeOptions::radial()).unwrap().radii();
        assert_eq!(radii.len(), 2, "{radii:?}");
        assert_eq!(radii[0], 0.0);
        assert!((radii[1] - 2.0).abs() < 1e-6);
    }
}
