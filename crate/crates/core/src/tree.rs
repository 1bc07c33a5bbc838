//! Finite event-tree markets, where every statement about deflators,
//! hedging and completeness reduces to finite linear algebra and small
//! linear programs.
//!
//! A deflator on a tree is a density process `Y` with `E[Y_c | n] = Y_n` and
//! `E[Y_c P_c | n] = Y_n P_n`. Writing `q_c = p_c Y_c / Y_n`, the conditional
//! constraints at node `n` cut out the polytope
//! `Q_n = {q ≥ 0 : Σ q_c = 1, Σ q_c (P_c − P_n) = 0}` of one-step
//! martingale measures. Strictly positive deflators exist iff every `Q_n`
//! contains a strictly positive point, and the deflator is unique iff every
//! `Q_n` is a single point.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{eliminate, Mat};
use crate::lp::{LinearProgram, LpOutcome, Relation, Sense};
use crate::scalar::Real;

/// Node as written in a tree description.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec<T> {
    pub id: String,
    pub parent: Option<String>,
    /// Branch probability from the parent; ignored for the root.
    pub prob: T,
    pub prices: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode<T> {
    pub id: String,
    pub parent: Option<usize>,
    pub prob: T,
    /// Unconditional probability of reaching the node.
    pub reach: T,
    pub prices: Vec<T>,
    pub children: Vec<usize>,
}

/// Finite tree of asset prices. Nodes are stored parents first, with the
/// root at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeMarket<T> {
    nodes: Vec<TreeNode<T>>,
    assets: usize,
}

impl<T: Real> TreeMarket<T> {
    /// Validates probabilities (positive, summing to one at each node),
    /// prices (finite, one per asset) and the parent structure.
    pub fn from_nodes(specs: Vec<NodeSpec<T>>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidInput("tree has no nodes".into()));
        }
        let assets = specs[0].prices.len();
        if assets == 0 {
            return Err(Error::InvalidInput("tree nodes carry no prices".into()));
        }
        let index = |id: &str| specs.iter().position(|s| s.id == id);
        let mut roots = Vec::new();
        let mut parent_of = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if s.prices.len() != assets {
                return Err(Error::Dimension(format!("node {} has {} prices, expected {assets}", s.id, s.prices.len())));
            }
            if s.prices.iter().any(|p| !p.is_finite()) {
                return Err(Error::InvalidInput(format!("node {} has a non-finite price", s.id)));
            }
            if index(&s.id) != Some(i) {
                return Err(Error::InvalidInput(format!("duplicate node id {}", s.id)));
            }
            match &s.parent {
                None => {
                    roots.push(i);
                    parent_of.push(None);
                }
                Some(p) => {
                    let j = index(p).ok_or_else(|| Error::InvalidInput(format!("node {} has unknown parent {p}", s.id)))?;
                    if !(s.prob > T::zero()) || !s.prob.is_finite() {
                        return Err(Error::InvalidInput(format!("node {} has non-positive branch probability", s.id)));
                    }
                    parent_of.push(Some(j));
                }
            }
        }
        if roots.len() != 1 {
            return Err(Error::InvalidInput(format!("tree needs exactly one root, found {}", roots.len())));
        }
        // breadth-first order from the root; unreachable nodes indicate a cycle
        let mut order = vec![roots[0]];
        let mut head = 0;
        while head < order.len() {
            let n = order[head];
            head += 1;
            order.extend((0..specs.len()).filter(|&c| parent_of[c] == Some(n)));
        }
        if order.len() != specs.len() {
            return Err(Error::InvalidInput("tree contains a cycle".into()));
        }
        let mut new_index = vec![0; specs.len()];
        for (k, &old) in order.iter().enumerate() {
            new_index[old] = k;
        }
        let mut nodes: Vec<TreeNode<T>> = order
            .iter()
            .map(|&old| TreeNode {
                id: specs[old].id.clone(),
                parent: parent_of[old].map(|p| new_index[p]),
                prob: if parent_of[old].is_some() { specs[old].prob } else { T::one() },
                reach: T::one(),
                prices: specs[old].prices.clone(),
                children: Vec::new(),
            })
            .collect();
        for k in 1..nodes.len() {
            let p = nodes[k].parent.unwrap_or(0);
            nodes[p].children.push(k);
            nodes[k].reach = nodes[p].reach * nodes[k].prob;
        }
        for n in &nodes {
            if !n.children.is_empty() {
                let total: T = n.children.iter().map(|&c| nodes[c].prob).sum();
                if (total - T::one()).abs() > T::lit(1e-12) * T::from_count(n.children.len()) {
                    return Err(Error::InvalidInput(format!("branch probabilities at node {} sum to {total}", n.id)));
                }
            }
        }
        Ok(Self { nodes, assets })
    }

    /// Single-period market: root prices and `(probability, prices)` per
    /// branch.
    pub fn one_period(root: Vec<T>, branches: Vec<(T, Vec<T>)>) -> Result<Self> {
        let mut specs = vec![NodeSpec { id: "0".into(), parent: None, prob: T::one(), prices: root }];
        for (i, (p, prices)) in branches.into_iter().enumerate() {
            specs.push(NodeSpec { id: (i + 1).to_string(), parent: Some("0".into()), prob: p, prices });
        }
        Self::from_nodes(specs)
    }

    pub fn nodes(&self) -> &[TreeNode<T>] {
        &self.nodes
    }

    pub fn node(&self, n: usize) -> &TreeNode<T> {
        &self.nodes[n]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn is_leaf(&self, n: usize) -> bool {
        self.nodes[n].children.is_empty()
    }

    pub fn internal(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&n| !self.is_leaf(n))
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Values on the leaves given by `payoff(prices)`, zero elsewhere.
    pub fn terminal_claim(&self, payoff: impl Fn(&[T]) -> T) -> Vec<T> {
        (0..self.len()).map(|n| if self.is_leaf(n) { payoff(&self.nodes[n].prices) } else { T::zero() }).collect()
    }

    /// The subtree rooted at `n`, re-rooted with probability one.
    pub fn subtree(&self, n: usize) -> Self {
        let mut specs = Vec::new();
        let mut stack = vec![n];
        while let Some(m) = stack.pop() {
            let node = &self.nodes[m];
            specs.push(NodeSpec {
                id: node.id.clone(),
                parent: if m == n { None } else { node.parent.map(|p| self.nodes[p].id.clone()) },
                prob: node.prob,
                prices: node.prices.clone(),
            });
            stack.extend(node.children.iter().rev());
        }
        Self::from_nodes(specs).expect("subtree of a valid tree is valid")
    }

    /// Restricts `values` (indexed by node) to the nodes of `subtree(n)`.
    pub fn restrict_values(&self, n: usize, values: &[T]) -> Vec<T> {
        let sub = self.subtree(n);
        sub.nodes.iter().map(|s| values[self.index_of(&s.id).unwrap_or(0)]).collect()
    }

    fn increments(&self, n: usize) -> Vec<Vec<T>> {
        let pn = &self.nodes[n].prices;
        self.nodes[n].children.iter().map(|&c| self.nodes[c].prices.iter().zip(pn).map(|(&a, &b)| a - b).collect()).collect()
    }

    fn check_values(&self, values: &[T], what: &str) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Dimension(format!("{what} needs one value per node ({}), got {}", self.len(), values.len())));
        }
        Ok(())
    }
}

/// Tolerance for vertex feasibility and constraint residuals.
const VERTEX_TOL: f64 = 1e-12;
/// Relative tolerance for consistency of linear systems on trees.
const SOLVE_TOL: f64 = 1e-10;

/// One-step martingale measures at an internal node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePolytope<T> {
    pub node: usize,
    /// Rank of the constraint system `[1ᵀ; ΔPᵀ]`.
    pub rank: usize,
    /// `#children − rank`.
    pub dimension: usize,
    /// Vertices `q` over the children; empty when the polytope is empty.
    pub vertices: Vec<Vec<T>>,
}

impl<T: Real> NodePolytope<T> {
    /// True when some `q` in the polytope is strictly positive, i.e. every
    /// child carries weight at some vertex.
    pub fn has_positive_point(&self) -> bool {
        let m = self.vertices.first().map_or(0, |v| v.len());
        !self.vertices.is_empty() && (0..m).all(|c| self.vertices.iter().any(|v| v[c] > T::lit(VERTEX_TOL)))
    }

    /// Vertex average, strictly positive whenever possible.
    pub fn barycenter(&self) -> Vec<T> {
        let k = T::from_count(self.vertices.len());
        let m = self.vertices[0].len();
        (0..m).map(|c| self.vertices.iter().map(|v| v[c]).sum::<T>() / k).collect()
    }

    /// Largest and smallest `Σ q_c u_c` over the polytope.
    pub fn extremes(&self, u: &[T]) -> (T, T) {
        self.vertices.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), q| {
            let v = q.iter().zip(u).fold(T::zero(), |s, (&a, &b)| s + a * b);
            (lo.min(v), hi.max(v))
        })
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Upper bound on children per node for vertex enumeration.
pub const MAX_BRANCHING: usize = 16;

fn node_polytope<T: Real>(tree: &TreeMarket<T>, n: usize) -> Result<NodePolytope<T>> {
    let inc = tree.increments(n);
    let m = inc.len();
    if m > MAX_BRANCHING {
        return Err(Error::InvalidInput(format!("node {} has {m} children; vertex enumeration is capped at {MAX_BRANCHING}", tree.node(n).id)));
    }
    let d = tree.assets();
    let e = Mat::from_fn(d + 1, m, |i, c| if i == 0 { T::one() } else { inc[c][i - 1] });
    let mut rhs = vec![T::zero(); d + 1];
    rhs[0] = T::one();
    let tol = T::lit(SOLVE_TOL);
    let rank = eliminate(&e, &rhs, tol).rank;
    let vtol = T::lit(VERTEX_TOL);
    let mut vertices: Vec<Vec<T>> = Vec::new();
    for subset in combinations(m, rank) {
        let sub = e.select(&(0..d + 1).collect::<Vec<_>>(), &subset);
        let r = eliminate(&sub, &rhs, tol);
        let Some(sol) = r.solution else { continue };
        if r.rank != rank || sol.iter().any(|&v| v < -vtol) {
            continue;
        }
        let mut q = vec![T::zero(); m];
        for (&c, &v) in subset.iter().zip(&sol) {
            q[c] = v.max(T::zero());
        }
        // constraint residual of the clamped vertex
        let resid = (0..d + 1).fold(T::zero(), |acc, i| {
            let s = (0..m).fold(T::zero(), |s, c| s + e[(i, c)] * q[c]);
            acc.max((s - rhs[i]).abs())
        });
        let scale = T::one().max(e.max_abs());
        if resid > vtol * scale {
            continue;
        }
        if !vertices.iter().any(|v| v.iter().zip(&q).all(|(&a, &b)| (a - b).abs() <= vtol)) {
            vertices.push(q);
        }
    }
    Ok(NodePolytope { node: n, rank, dimension: m - rank, vertices })
}

/// All one-step polytopes of a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct DeflatorPolytope<T> {
    /// Indexed by node; `None` at leaves.
    pub nodes: Vec<Option<NodePolytope<T>>>,
    /// Dimension of the set of deflators, `#non-root nodes − rank` of the
    /// global equality system.
    pub dimension: usize,
}

impl<T: Real> DeflatorPolytope<T> {
    /// Unique deflator, equivalently a complete market.
    pub fn is_complete(&self) -> bool {
        self.dimension == 0
    }

    pub fn node(&self, n: usize) -> Option<&NodePolytope<T>> {
        self.nodes[n].as_ref()
    }

    /// The strictly positive deflator built from vertex barycenters; the
    /// unique deflator when the market is complete.
    pub fn canonical_deflator(&self, tree: &TreeMarket<T>) -> Vec<T> {
        self.deflator_from(tree, |p| p.barycenter())
    }

    /// Deflator assembled from a choice of `q` at every internal node.
    pub fn deflator_from(&self, tree: &TreeMarket<T>, mut choose: impl FnMut(&NodePolytope<T>) -> Vec<T>) -> Vec<T> {
        let mut y = vec![T::one(); tree.len()];
        for n in 0..tree.len() {
            if let Some(p) = self.node(n) {
                let q = choose(p);
                for (&c, &qc) in tree.node(n).children.iter().zip(&q) {
                    y[c] = y[n] * qc / tree.node(c).prob;
                }
            }
        }
        y
    }
}

/// Linear equality system `A y = b` over the non-root nodes (in node order
/// `1..len`) that characterises deflators with `Y_root = 1`: for every
/// internal node `E[Y_c | n] = Y_n` and `E[Y_c (P_c − P_n) | n] = 0`.
pub fn deflator_equalities<T: Real>(tree: &TreeMarket<T>) -> (Mat<T>, Vec<T>) {
    let d = tree.assets();
    let vars = tree.len() - 1;
    let internal: Vec<usize> = tree.internal().collect();
    let mut a = Mat::zeros(internal.len() * (d + 1), vars);
    let mut b = vec![T::zero(); internal.len() * (d + 1)];
    for (r, &n) in internal.iter().enumerate() {
        let base = r * (d + 1);
        let node = tree.node(n);
        if n == 0 {
            b[base] = T::one();
        } else {
            a[(base, n - 1)] = -T::one();
        }
        for &c in &node.children {
            let child = tree.node(c);
            a[(base, c - 1)] = child.prob;
            for i in 0..d {
                a[(base + 1 + i, c - 1)] = child.prob * (child.prices[i] - node.prices[i]);
            }
        }
    }
    (a, b)
}

/// Builds all one-step polytopes; `NoDeflator` when some node admits no
/// strictly positive martingale measure.
pub fn deflator_polytope<T: Real>(tree: &TreeMarket<T>) -> Result<DeflatorPolytope<T>> {
    let mut nodes = vec![None; tree.len()];
    for n in tree.internal() {
        let p = node_polytope(tree, n)?;
        if !p.has_positive_point() {
            return Err(Error::NoDeflator);
        }
        nodes[n] = Some(p);
    }
    let (a, b) = deflator_equalities(tree);
    let rank = eliminate(&a, &b, T::lit(SOLVE_TOL)).rank;
    Ok(DeflatorPolytope { nodes, dimension: tree.len() - 1 - rank })
}

/// Backward-induction replication of a withdrawal stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication<T> {
    /// Initial capital `V_root`.
    pub cost: T,
    /// Holdings chosen at each internal node; `None` at leaves.
    pub hedges: Vec<Option<Vec<T>>>,
    /// Wealth `V_n` at each node before the withdrawal `ΔK_n`.
    pub values: Vec<T>,
}

impl<T: Real> Replication<T> {
    /// Forward wealth from `cost` and the hedges: `V_c = V_n − ΔK_n + h_n·(P_c − P_n)`.
    pub fn forward_wealth(&self, tree: &TreeMarket<T>, k: &[T]) -> Vec<T> {
        let mut v = vec![T::zero(); tree.len()];
        v[0] = self.cost;
        for n in 0..tree.len() {
            if let Some(h) = &self.hedges[n] {
                let node = tree.node(n);
                for &c in &node.children {
                    let gain = (0..tree.assets()).fold(T::zero(), |s, i| s + h[i] * (tree.node(c).prices[i] - node.prices[i]));
                    v[c] = v[n] - k[n] + gain;
                }
            }
        }
        v
    }
}

/// Replicates the stream `k` (one withdrawal per node) by solving
/// `v_n + h_n·(P_c − P_n) = V_c` at every internal node, from the leaves up.
/// Fails with `Incomplete` at the first node where the system has no
/// solution.
pub fn replicate_backward<T: Real>(tree: &TreeMarket<T>, k: &[T]) -> Result<Replication<T>> {
    tree.check_values(k, "withdrawal stream")?;
    let d = tree.assets();
    let mut values = k.to_vec();
    let mut hedges = vec![None; tree.len()];
    for n in (0..tree.len()).rev() {
        if tree.is_leaf(n) {
            continue;
        }
        let inc = tree.increments(n);
        let children = &tree.node(n).children;
        let a = Mat::from_fn(children.len(), d + 1, |r, j| if j == 0 { T::one() } else { inc[r][j - 1] });
        let rhs: Vec<T> = children.iter().map(|&c| values[c]).collect();
        let sol = eliminate(&a, &rhs, T::lit(SOLVE_TOL)).solution.ok_or(Error::Incomplete { node: n })?;
        // guard against rank-deficient round-off: the solution must reproduce every child
        let scale = rhs.iter().fold(T::one(), |m, v| m.max(v.abs()));
        let resid = (0..children.len()).fold(T::zero(), |m, r| {
            let s = (0..=d).fold(T::zero(), |s, j| s + a[(r, j)] * sol[j]);
            m.max((s - rhs[r]).abs())
        });
        if resid > T::lit(SOLVE_TOL) * scale {
            return Err(Error::Incomplete { node: n });
        }
        values[n] = k[n] + sol[0];
        hedges[n] = Some(sol[1..].to_vec());
    }
    Ok(Replication { cost: values[0], hedges, values })
}

/// Primal and dual hedging values of a withdrawal stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Duality<T> {
    /// Smallest initial capital of a strategy that covers every withdrawal.
    pub primal: T,
    /// Largest `E[Σ Y_n ΔK_n]` over the closure of the deflator polytope.
    pub dual: T,
    /// `primal − dual`.
    pub gap: T,
    /// Vertex dynamic programme `U_n = ΔK_n + max_q Σ q_c U_c`.
    pub dp_values: Vec<T>,
    /// Optimal holdings per internal node from the primal programme.
    pub hedges: Vec<Option<Vec<T>>>,
    /// Optimal deflator from the dual programme (node order, root = 1).
    pub deflator: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityOptions {
    /// Cap on LP variables; larger trees are rejected.
    pub max_variables: usize,
    pub max_iterations: usize,
}

impl Default for DualityOptions {
    fn default() -> Self {
        Self { max_variables: 10_000, max_iterations: 200_000 }
    }
}

/// `U_n = ΔK_n + max (or min) over q ∈ Q_n of Σ q_c U_c`.
pub fn hedge_value_dp<T: Real>(tree: &TreeMarket<T>, poly: &DeflatorPolytope<T>, k: &[T], upper: bool) -> Result<Vec<T>> {
    tree.check_values(k, "withdrawal stream")?;
    let mut u = k.to_vec();
    for n in (0..tree.len()).rev() {
        if let Some(p) = poly.node(n) {
            let cont: Vec<T> = tree.node(n).children.iter().map(|&c| u[c]).collect();
            let (lo, hi) = p.extremes(&cont);
            u[n] = k[n] + if upper { hi } else { lo };
        }
    }
    Ok(u)
}

/// Sub- and superhedging prices `(min, max)` of `k` over the deflator
/// polytope; they coincide exactly when `k` is replicable.
pub fn price_bounds<T: Real>(tree: &TreeMarket<T>, k: &[T]) -> Result<(T, T)> {
    let poly = deflator_polytope(tree)?;
    Ok((hedge_value_dp(tree, &poly, k, false)?[0], hedge_value_dp(tree, &poly, k, true)?[0]))
}

/// Solves the superhedging programme and its dual over the deflator
/// polytope, and the vertex dynamic programme as a third opinion.
pub fn superhedge_duality<T: Real>(tree: &TreeMarket<T>, k: &[T], opts: &DualityOptions) -> Result<Duality<T>> {
    tree.check_values(k, "withdrawal stream")?;
    let poly = deflator_polytope(tree)?;
    let d = tree.assets();
    let internal: Vec<usize> = tree.internal().collect();
    let n_vars = 1 + d * internal.len();
    if 2 * n_vars > opts.max_variables || tree.len() > opts.max_variables {
        return Err(Error::InvalidInput(format!("tree needs {n_vars} hedge variables, above the cap {}", opts.max_variables)));
    }
    let slot: Vec<Option<usize>> = {
        let mut s = vec![None; tree.len()];
        for (i, &n) in internal.iter().enumerate() {
            s[n] = Some(1 + d * i);
        }
        s
    };

    // primal: min x s.t. x + gains(n) − K(n) ≥ 0 at every node
    let mut obj = vec![T::zero(); n_vars];
    obj[0] = T::one();
    let mut primal = LinearProgram::new(Sense::Minimize, obj);
    for j in 0..n_vars {
        primal.set_free(j);
    }
    let mut k_cum = vec![T::zero(); tree.len()];
    for n in 0..tree.len() {
        let node = tree.node(n);
        k_cum[n] = k[n] + node.parent.map_or(T::zero(), |p| k_cum[p]);
        let mut row = vec![T::zero(); n_vars];
        row[0] = T::one();
        let mut c = n;
        while let Some(p) = tree.node(c).parent {
            let s = slot[p].unwrap_or(0);
            for i in 0..d {
                row[s + i] += tree.node(c).prices[i] - tree.node(p).prices[i];
            }
            c = p;
        }
        primal.constrain(row, Relation::Ge, k_cum[n])?;
    }
    let ps = match primal.solve(opts.max_iterations)? {
        LpOutcome::Optimal(s) => s,
        LpOutcome::Unbounded => return Err(Error::NoDeflator),
        LpOutcome::Infeasible => return Err(Error::LpFail("superhedging programme infeasible".into())),
    };
    let hedges = (0..tree.len()).map(|n| slot[n].map(|s| ps.x[s..s + d].to_vec())).collect();

    // dual: max Σ reach·Y·ΔK over Y ≥ 0 satisfying the deflator equalities
    let (a, b) = deflator_equalities(tree);
    let obj: Vec<T> = (1..tree.len()).map(|n| tree.node(n).reach * k[n]).collect();
    let mut dual = LinearProgram::new(Sense::Maximize, obj);
    for r in 0..a.rows() {
        dual.constrain(a.row(r).to_vec(), Relation::Eq, b[r])?;
    }
    let ds = dual.solve(opts.max_iterations)?.optimal()?;
    let mut deflator = vec![T::one()];
    deflator.extend(ds.x.iter().copied());
    let dual_value = k[0] + ds.value;

    let dp_values = hedge_value_dp(tree, &poly, k, true)?;
    Ok(Duality { primal: ps.value, dual: dual_value, gap: ps.value - dual_value, dp_values, hedges, deflator })
}

/// Recovered optional decomposition `X = X(root) + gains − K`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionalDecomposition<T> {
    pub hedges: Vec<Option<Vec<T>>>,
    /// `ΔK_n` paid on arrival at node `n`; zero at the root.
    pub withdrawals: Vec<T>,
    /// Cumulative `K` along each node's history.
    pub cumulative: Vec<T>,
    /// `max(0, −min ΔK)`.
    pub residual: T,
}

/// Checks that `Y X` is a supermartingale under every vertex deflator, then
/// recovers holdings and a nondecreasing `K` with `X = x + gains − K`.
/// Holdings come from the probability-weighted least-squares projection of
/// `ΔX` on `ΔP`; a node where that leaves a negative withdrawal falls back
/// to the linear programme `min Σ p_c ΔK_c` over `ΔK ≥ 0`.
pub fn optional_decomposition_check<T: Real>(tree: &TreeMarket<T>, x: &[T]) -> Result<OptionalDecomposition<T>> {
    tree.check_values(x, "process")?;
    let poly = deflator_polytope(tree)?;
    let d = tree.assets();
    let scale = x.iter().fold(T::one(), |m, v| m.max(v.abs()));
    let tol = T::lit(SOLVE_TOL) * scale;
    for n in tree.internal() {
        let p = poly.node(n).expect("internal node has a polytope");
        let xc: Vec<T> = tree.node(n).children.iter().map(|&c| x[c]).collect();
        for q in &p.vertices {
            let excess = q.iter().zip(&xc).fold(T::zero(), |s, (&a, &b)| s + a * b) - x[n];
            if excess > tol {
                return Err(Error::NotSupermartingale {
                    node: n,
                    vertex: q.iter().map(|v| v.as_f64()).collect(),
                    excess: excess.as_f64(),
                });
            }
        }
    }
    let mut hedges = vec![None; tree.len()];
    let mut withdrawals = vec![T::zero(); tree.len()];
    for n in tree.internal() {
        let node = tree.node(n);
        let inc = tree.increments(n);
        let dx: Vec<T> = node.children.iter().map(|&c| x[c] - x[n]).collect();
        let probs: Vec<T> = node.children.iter().map(|&c| tree.node(c).prob).collect();
        // normal equations of Σ p_c (ΔX_c − a − h·ΔP_c)²
        let feat = |c: usize, j: usize| if j == 0 { T::one() } else { inc[c][j - 1] };
        let m = node.children.len();
        let gram = Mat::from_fn(d + 1, d + 1, |i, j| (0..m).fold(T::zero(), |s, c| s + probs[c] * feat(c, i) * feat(c, j)));
        let rhs: Vec<T> = (0..=d).map(|i| (0..m).fold(T::zero(), |s, c| s + probs[c] * feat(c, i) * dx[c])).collect();
        let sol = eliminate(&gram, &rhs, T::lit(SOLVE_TOL)).solution.unwrap_or_else(|| vec![T::zero(); d + 1]);
        let mut h = sol[1..].to_vec();
        let dk = |h: &[T]| -> Vec<T> { (0..m).map(|c| (0..d).fold(T::zero(), |s, i| s + h[i] * inc[c][i]) - dx[c]).collect() };
        if dk(&h).iter().any(|&v| v < -tol) {
            let obj: Vec<T> = (0..d).map(|i| (0..m).fold(T::zero(), |s, c| s + probs[c] * inc[c][i])).collect();
            let mut lp = LinearProgram::new(Sense::Minimize, obj);
            for i in 0..d {
                lp.set_free(i);
            }
            for c in 0..m {
                lp.constrain(inc[c].clone(), Relation::Ge, dx[c])?;
            }
            h = lp.solve(10_000)?.optimal()?.x;
        }
        for (&c, v) in node.children.iter().zip(dk(&h)) {
            withdrawals[c] = v;
        }
        hedges[n] = Some(h);
    }
    let mut cumulative = vec![T::zero(); tree.len()];
    for n in 1..tree.len() {
        let p = tree.node(n).parent.unwrap_or(0);
        cumulative[n] = cumulative[p] + withdrawals[n];
    }
    let residual = withdrawals.iter().fold(T::zero(), |m, &v| m.max(-v));
    Ok(OptionalDecomposition { hedges, withdrawals, cumulative, residual })
}

/// Shape of a randomly generated tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomTreeSpec {
    pub branching: usize,
    pub assets: usize,
    pub depth: usize,
    /// Chance that a node's children all repeat its prices, which makes the
    /// node (and the market) incomplete without breaking viability.
    pub degenerate_prob: f64,
}

/// Viable random tree: at each node, child prices are drawn around the
/// parent and shifted so that a random strictly positive `q` is a one-step
/// martingale measure.
pub fn random_tree<T: Real, R: Rng>(rng: &mut R, spec: RandomTreeSpec) -> TreeMarket<T> {
    let RandomTreeSpec { branching, assets, depth, degenerate_prob } = spec;
    let mut specs = vec![NodeSpec {
        id: "n0".to_string(),
        parent: None,
        prob: T::one(),
        prices: (0..assets).map(|_| T::lit(rng.gen_range(0.8..1.2))).collect(),
    }];
    let mut frontier = vec![0usize];
    for _ in 0..depth {
        let mut next = Vec::new();
        for &n in &frontier {
            let parent = specs[n].prices.clone();
            let probs = normalized(rng, branching);
            let children: Vec<Vec<f64>> = if rng.gen::<f64>() < degenerate_prob {
                vec![parent.iter().map(|p| p.as_f64()).collect(); branching]
            } else {
                let q = normalized(rng, branching);
                let z: Vec<Vec<f64>> =
                    (0..branching).map(|_| parent.iter().map(|p| rng.gen_range(-0.3..0.3) * p.as_f64()).collect()).collect();
                let mean: Vec<f64> = (0..assets).map(|i| (0..branching).map(|c| q[c] * z[c][i]).sum()).collect();
                z.iter().map(|zc| (0..assets).map(|i| parent[i].as_f64() + zc[i] - mean[i]).collect()).collect()
            };
            let pid = specs[n].id.clone();
            for (c, prices) in children.into_iter().enumerate() {
                next.push(specs.len());
                specs.push(NodeSpec {
                    id: format!("n{}", specs.len()),
                    parent: Some(pid.clone()),
                    prob: T::lit(probs[c]),
                    prices: prices.into_iter().map(T::lit).collect(),
                });
            }
        }
        frontier = next;
    }
    TreeMarket::from_nodes(specs).expect("generated tree is valid")
}

fn normalized<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    let mut out: Vec<f64> = w.iter().map(|v| v / s).collect();
    // make the weights sum to one to the last bit
    let rest: f64 = out[1..].iter().sum();
    out[0] = 1.0 - rest;
    out
}

/// Generic terminal claim with values drawn independently per leaf.
pub fn random_claim<T: Real, R: Rng>(rng: &mut R, tree: &TreeMarket<T>) -> Vec<T> {
    (0..tree.len()).map(|n| if tree.is_leaf(n) { T::lit(rng.gen_range(0.0..1.0)) } else { T::zero() }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn binomial() -> TreeMarket<f64> {
        TreeMarket::one_period(vec![1.0], vec![(0.5, vec![2.0]), (0.5, vec![0.5])]).unwrap()
    }

    fn trinomial() -> TreeMarket<f64> {
        TreeMarket::one_period(vec![1.0], vec![(1.0 / 3.0, vec![0.5]), (1.0 / 3.0, vec![1.0]), (1.0 - 2.0 / 3.0, vec![2.0])]).unwrap()
    }

    #[test]
    fn rejects_bad_trees() {
        assert!(TreeMarket::one_period(vec![1.0], vec![(0.0, vec![2.0]), (1.0, vec![0.5])]).is_err());
        assert!(TreeMarket::one_period(vec![1.0], vec![(0.6, vec![2.0]), (0.5, vec![0.5])]).is_err());
        assert!(TreeMarket::one_period(vec![1.0], vec![(0.5, vec![2.0, 1.0]), (0.5, vec![0.5])]).is_err());
        let specs = vec![
            NodeSpec { id: "a".to_string(), parent: Some("b".to_string()), prob: 1.0, prices: vec![1.0] },
            NodeSpec { id: "b".to_string(), parent: Some("a".to_string()), prob: 1.0, prices: vec![1.0] },
        ];
        assert!(TreeMarket::from_nodes(specs).is_err());
    }

    #[test]
    fn binomial_unique_deflator() {
        let t = binomial();
        let poly = deflator_polytope(&t).unwrap();
        assert!(poly.is_complete());
        let y = poly.canonical_deflator(&t);
        assert!((y[1] - 2.0 / 3.0).abs() < 1e-15 && (y[2] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn trinomial_family() {
        let t = trinomial();
        let poly = deflator_polytope(&t).unwrap();
        assert_eq!(poly.dimension, 1);
        let p = poly.node(0).unwrap();
        assert_eq!(p.vertices.len(), 2);
        // every vertex deflator lies on y3 = y1/2, y2 = 3 − 1.5 y1 with y1 ∈ [0, 2]
        for q in &p.vertices {
            let y: Vec<f64> = q.iter().map(|v| v * 3.0).collect();
            assert!((y[2] - 0.5 * y[0]).abs() < 1e-12);
            assert!((y[1] - (3.0 - 1.5 * y[0])).abs() < 1e-12);
            assert!(y[0] >= 0.0 && y[0] <= 2.0 + 1e-12);
        }
        let (a, b) = deflator_equalities(&t);
        for q in &p.vertices {
            let y: Vec<f64> = q.iter().map(|v| v * 3.0).collect();
            let r = a.mul_vec(&y);
            assert!(r.iter().zip(&b).all(|(x, z)| (x - z).abs() < 1e-12));
        }
    }

    #[test]
    fn no_deflator_when_price_always_rises() {
        let t = TreeMarket::one_period(vec![1.0], vec![(0.5, vec![1.5]), (0.5, vec![1.1])]).unwrap();
        assert_eq!(deflator_polytope(&t), Err(Error::NoDeflator));
        // touching the boundary is still not strictly positive
        let t = TreeMarket::one_period(vec![1.0], vec![(0.5, vec![1.5]), (0.5, vec![1.0])]).unwrap();
        assert_eq!(deflator_polytope(&t), Err(Error::NoDeflator));
    }

    #[test]
    fn replication_examples() {
        let t = binomial();
        let r = replicate_backward(&t, &[0.0, 1.0, 0.0]).unwrap();
        assert!((r.cost - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.hedges[0].as_ref().unwrap()[0] - 2.0 / 3.0).abs() < 1e-15);
        let r = replicate_backward(&t, &[0.0, 0.7, 0.7]).unwrap();
        assert!((r.cost - 0.7).abs() < 1e-15 && r.hedges[0].as_ref().unwrap()[0].abs() < 1e-15);
        let claim = t.terminal_claim(|p| p[0]);
        let r = replicate_backward(&t, &claim).unwrap();
        assert!((r.cost - 1.0).abs() < 1e-15 && (r.hedges[0].as_ref().unwrap()[0] - 1.0).abs() < 1e-15);
        let w = r.forward_wealth(&t, &claim);
        assert!((w[1] - 2.0).abs() < 1e-15 && (w[2] - 0.5).abs() < 1e-15);
        assert_eq!(replicate_backward(&trinomial(), &[0.0, 0.0, 0.0, 1.0]), Err(Error::Incomplete { node: 0 }));
    }

    #[test]
    fn duality_examples() {
        let opts = DualityOptions::default();
        let t = trinomial();
        let call = t.terminal_claim(|p| (p[0] - 1.0).max(0.0));
        let r = superhedge_duality(&t, &call, &opts).unwrap();
        assert!((r.primal - 1.0 / 3.0).abs() < 1e-12, "{r:?}");
        assert!((r.dual - 1.0 / 3.0).abs() < 1e-12 && r.gap.abs() < 1e-12);
        assert!((r.hedges[0].as_ref().unwrap()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.dp_values[0] - 1.0 / 3.0).abs() < 1e-12);
        // the optimal deflator sits on the boundary y2 = 0
        assert!(r.deflator[2].abs() < 1e-12);

        let t = binomial();
        let r = superhedge_duality(&t, &[0.0, 1.0, 0.0], &opts).unwrap();
        assert!((r.primal - 1.0 / 3.0).abs() < 1e-12 && r.gap.abs() < 1e-12);
        let r = superhedge_duality(&t, &[0.0; 3], &opts).unwrap();
        assert!(r.primal.abs() < 1e-15 && r.dual.abs() < 1e-15);
    }

    #[test]
    fn random_trees_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let opts = DualityOptions::default();
        for i in 0..20 {
            let spec = if i % 2 == 0 {
                RandomTreeSpec { branching: 2, assets: 1, depth: 3, degenerate_prob: 0.2 }
            } else {
                RandomTreeSpec { branching: 3, assets: 1 + (i % 4 == 1) as usize, depth: 2, degenerate_prob: 0.0 }
            };
            let t: TreeMarket<f64> = random_tree(&mut rng, spec);
            let k = random_claim(&mut rng, &t);
            let r = superhedge_duality(&t, &k, &opts).unwrap();
            assert!(r.gap.abs() <= 1e-9, "{r:?}");
            assert!((r.dp_values[0] - r.primal).abs() <= 1e-9);
            let poly = deflator_polytope(&t).unwrap();
            let (lo, hi) = price_bounds(&t, &k).unwrap();
            assert_eq!(poly.is_complete(), replicate_backward(&t, &k).is_ok());
            assert_eq!(poly.is_complete(), hi - lo <= 1e-9, "{lo} {hi}");
            // the dynamic programme holds on every subtree
            for n in t.internal() {
                let sub = t.subtree(n);
                let sk = t.restrict_values(n, &k);
                let s = superhedge_duality(&sub, &sk, &opts).unwrap();
                assert!((s.primal - r.dp_values[n]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn optional_decomposition_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t: TreeMarket<f64> = random_tree(&mut rng, RandomTreeSpec { branching: 3, assets: 1, depth: 2, degenerate_prob: 0.0 });
        // wealth of a fixed strategy: K ≡ 0
        let mut x = vec![1.0; t.len()];
        for n in 1..t.len() {
            let p = t.node(n).parent.unwrap();
            x[n] = x[p] + 0.7 * (t.node(n).prices[0] - t.node(p).prices[0]);
        }
        let od = optional_decomposition_check(&t, &x).unwrap();
        assert!(od.withdrawals.iter().all(|v| v.abs() < 1e-12) && od.residual <= 1e-10);
        // minus a deterministic ramp
        let depth = |mut n: usize| {
            let mut d = 0;
            while let Some(p) = t.node(n).parent {
                n = p;
                d += 1;
            }
            d as f64
        };
        let xr: Vec<f64> = (0..t.len()).map(|n| x[n] - 0.05 * depth(n)).collect();
        let od = optional_decomposition_check(&t, &xr).unwrap();
        for n in 1..t.len() {
            assert!((od.withdrawals[n] - 0.05).abs() < 1e-12);
            assert!((od.cumulative[n] - 0.05 * depth(n)).abs() < 1e-12);
        }
        // superhedging value process: a supermartingale that is not a hedge
        let k = random_claim(&mut rng, &t);
        let poly = deflator_polytope(&t).unwrap();
        let u = hedge_value_dp(&t, &poly, &k, true).unwrap();
        let od = optional_decomposition_check(&t, &u).unwrap();
        assert!(od.residual <= 1e-10);
        // a strict submartingale at the root
        let mut bad = x.clone();
        bad[0] -= 0.1;
        assert!(matches!(optional_decomposition_check(&t, &bad), Err(Error::NotSupermartingale { node: 0, .. })));
    }
}
