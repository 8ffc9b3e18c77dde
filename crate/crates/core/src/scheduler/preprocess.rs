use crate::qidg::{EdgeTags, Qidg, QidgError, Reachability};

use super::cmp_priority;

/// Serialize every sibling set with auxiliary edges. Returns the number of
/// edges added; a second call on the result adds none.
///
/// Each pass takes the lowest-ASAP instruction that still has siblings, pools
/// it with its same-ASAP siblings, and makes the highest-priority member of
/// the pool a parent of all of its remaining siblings. Levels and mobilities
/// are recomputed after every pass.
pub fn preprocess(g: &mut Qidg) -> Result<usize, QidgError> {
    g.levelize()?;
    let mut reach = Reachability::new(g);
    prune(g, &reach);
    let mut added = 0;
    loop {
        let pivot = (0..g.len())
            .filter(|&i| !g.siblings(i).is_empty())
            .min_by_key(|&i| (g.asap(i), i));
        let Some(pivot) = pivot else { break };
        let level = g.asap(pivot);
        let mut pool: Vec<usize> = g.siblings(pivot).iter().copied().filter(|&j| g.asap(j) == level).collect();
        pool.push(pivot);
        let chosen = pool.into_iter().min_by(|&a, &b| cmp_priority(g, a, b)).unwrap();
        let targets: Vec<usize> = g.siblings(chosen).iter().copied().collect();
        for j in targets {
            if !reach.ordered(chosen, j) {
                g.add_edge(chosen, j, EdgeTags::AUX);
                reach.add_edge(chosen, j);
                added += 1;
            }
        }
        prune(g, &reach);
        g.levelize()?;
    }
    Ok(added)
}

/// Drop sibling pairs that a directed path already orders.
fn prune(g: &mut Qidg, reach: &Reachability) {
    for (i, set) in g.siblings_mut().iter_mut().enumerate() {
        set.retain(|&j| !reach.ordered(i, j));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FabricConfig;
    use crate::qasm::{parse, STEANE_ZERO_PREP};
    use crate::qidg::OperandRoles;

    fn analyzed(src: &str, roles: OperandRoles) -> Qidg {
        let mut g = Qidg::build_with_roles(&parse(src).unwrap(), &FabricConfig::default(), roles);
        g.compute_siblings();
        g.levelize().unwrap();
        g
    }

    fn aux_edges(g: &Qidg) -> Vec<(usize, usize)> {
        g.edges()
            .filter(|(_, _, t)| t.contains(EdgeTags::AUX))
            .map(|(a, b, _)| (g.node(a).index, g.node(b).index))
            .collect()
    }

    #[test]
    fn symmetric_readers_lower_index_wins() {
        let mut g = analyzed("QUBIT c, 0\nQUBIT x, 0\nQUBIT y, 0\nH c\nCNOT c, x\nCNOT c, y\n", OperandRoles::ControlFirst);
        assert_eq!(preprocess(&mut g).unwrap(), 1);
        assert_eq!(aux_edges(&g), vec![(2, 3)]);
    }

    #[test]
    fn no_siblings_is_a_no_op() {
        let mut g = analyzed("QUBIT a, 0\nH a\nX a\n", OperandRoles::ControlFirst);
        let before: Vec<_> = g.edges().collect();
        assert_eq!(preprocess(&mut g).unwrap(), 0);
        assert_eq!(before, g.edges().collect::<Vec<_>>());
    }

    #[test]
    fn critical_reader_goes_first() {
        // reader 3 has a long tail, so it is less mobile than reader 2
        let src = "QUBIT c, 0\nQUBIT x, 0\nQUBIT y, 0\nH c\nCNOT c, x\nCNOT c, y\nT y\nS y\nX y\n";
        let mut g = analyzed(src, OperandRoles::ControlFirst);
        assert!(g.mobility(2) > g.mobility(1));
        preprocess(&mut g).unwrap();
        assert_eq!(aux_edges(&g), vec![(3, 2)]);
    }

    fn assert_serialized(g: &Qidg) {
        let reach = Reachability::new(g);
        for q in 0..g.qubits().len() {
            let acc: Vec<usize> = g.accesses(crate::qidg::QubitId(q as u32)).collect();
            for (k, &a) in acc.iter().enumerate() {
                for &b in &acc[k + 1..] {
                    assert!(reach.ordered(a, b), "q{q}: {} and {} unordered", a + 1, b + 1);
                }
            }
        }
        for i in 0..g.len() {
            assert!(g.siblings(i).is_empty());
        }
    }

    #[test]
    fn steane_both_role_readings_serialize_and_are_idempotent() {
        for roles in [OperandRoles::ControlFirst, OperandRoles::TargetFirst] {
            let mut g = analyzed(STEANE_ZERO_PREP, roles);
            let added = preprocess(&mut g).unwrap();
            assert!(added > 0);
            assert_serialized(&g);
            assert!(g.topo_order().is_ok());
            let edges: Vec<_> = g.edges().collect();
            assert_eq!(preprocess(&mut g).unwrap(), 0);
            assert_eq!(edges, g.edges().collect::<Vec<_>>());
        }
    }

    #[test]
    fn steane_fan_out_on_q0_is_ordered() {
        // reading the second operand as control: 4, 7, 10 all read q0 after H
        let mut g = analyzed(STEANE_ZERO_PREP, OperandRoles::TargetFirst);
        preprocess(&mut g).unwrap();
        let reach = Reachability::new(&g);
        let (a, b, c) = (3, 6, 9);
        assert!(reach.ordered(a, b) && reach.ordered(b, c) && reach.ordered(a, c));
        assert!(aux_edges(&g).iter().any(|&(x, y)| [4, 7, 10].contains(&x) && [4, 7, 10].contains(&y)));
    }
}
