use crossflow::network::{generate_grid_with, load_network, NodeRef};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn grid_survives_json_roundtrip(
        rows in 1usize..5,
        cols in 1usize..5,
        travel in 1u32..30,
        actions in prop::sample::select(vec![4u8, 6, 8]),
    ) {
        let net = generate_grid_with(rows, cols, travel, actions);
        let back = load_network(&net.to_json()).unwrap();
        prop_assert_eq!(&back, &net);
        prop_assert_eq!(back.to_json(), net.to_json());
    }

    #[test]
    fn grid_structure(rows in 1usize..6, cols in 1usize..6) {
        let net = generate_grid_with(rows, cols, 10, 4);
        prop_assert_eq!(net.intersections.len(), rows * cols);
        prop_assert_eq!(net.boundary.len(), 2 * (rows + cols));
        // two directed links per edge, interior and boundary
        let edges = rows * (cols - 1) + cols * (rows - 1) + 2 * (rows + cols);
        prop_assert_eq!(net.links.len(), 2 * edges);
        for inter in &net.intersections {
            prop_assert_eq!(inter.approaches.len(), 4);
            for n in net.neighbors(&inter.id).unwrap() {
                if let Ok(j) = net.intersection_index(&n) {
                    let back = net.neighbors(&net.intersections[j].id).unwrap();
                    prop_assert!(back.contains(&inter.id));
                }
            }
        }
        for l in &net.links {
            prop_assert!(l.from != l.to);
            prop_assert!(matches!(l.from, NodeRef::Intersection(_)) || matches!(l.to, NodeRef::Intersection(_)));
        }
    }
}

#[test]
fn truncated_document_is_an_error() {
    let json = generate_grid_with(2, 2, 10, 4).to_json();
    assert!(load_network(&json[..json.len() / 2]).is_err());
}
