import numpy as np
import pytest
from censurv import backend as B
from censurv.models.modality import (
    ModalityEmbedding,
    ModalityEncoder,
    ModalityGraph,
    ModalityKind,
    attention_pool,
    build_modality_graph,
    complete_adjacency,
    grid_adjacency,
    pad_features,
    sage_forward,
)
from censurv.exceptions import ShapeError, ValidationError
from conftest import check_gradients


def test_pathology_grid_2x2():
    graph = build_modality_graph(ModalityKind.PATHOLOGY, np.ones((2, 2, 3)))
    assert graph.num_nodes == 4
    assert len(graph.adjacency) == 6
    assert list(graph.degrees()) == [3, 3, 3, 3]


def test_pathology_grid_degrees():
    degrees = build_modality_graph('pathology', np.zeros((4, 4, 2))).degrees()
    assert degrees.max() == 8
    assert sorted(set(degrees[[0, 3, 12, 15]])) == [3]
    assert sorted(set(degrees[[1, 2, 4, 8]])) == [5]


def test_genomic_complete_graph():
    graph = build_modality_graph(ModalityKind.GENOMIC, np.zeros((5, 4)))
    assert graph.num_nodes == 5
    assert len(graph.adjacency) == 10
    with pytest.raises(ValidationError):
        build_modality_graph(ModalityKind.GENOMIC, np.zeros((4, 4)))


def test_clinical_one_hot():
    graph = build_modality_graph(ModalityKind.CLINICAL, [2, 0], cardinalities=[3, 2])
    assert graph.num_nodes == 1
    assert graph.adjacency == []
    np.testing.assert_array_equal(graph.node_features, [[0, 0, 1, 1, 0]])
    with pytest.raises(ValidationError):
        build_modality_graph(ModalityKind.CLINICAL, [3, 0], cardinalities=[3, 2])


def test_graph_rejects_bad_edges():
    with pytest.raises(ValidationError):
        ModalityGraph(ModalityKind.GENOMIC, np.zeros((2, 2)), [(0, 2)])
    with pytest.raises(ValidationError):
        ModalityGraph(ModalityKind.GENOMIC, np.zeros((2, 2)), [(1, 1)])


def test_pad_features():
    graph = build_modality_graph(ModalityKind.CLINICAL, [1, 1], cardinalities=[3, 2])
    padded = pad_features(graph, 8)
    np.testing.assert_array_equal(padded.node_features, [[0, 1, 0, 0, 1, 0, 0, 0]])
    assert pad_features(padded, 8) is padded
    with pytest.raises(ValidationError):
        pad_features(padded, 4)


def test_grid_and_complete_helpers():
    assert grid_adjacency(1) == []
    assert complete_adjacency(3) == [(0, 1), (0, 2), (1, 2)]


def test_sage_single_node_clinical():
    graph = build_modality_graph(ModalityKind.CLINICAL, [1], cardinalities=[3])
    encoder = ModalityEncoder(ModalityKind.CLINICAL, 4, num_layers=1, seed=0)
    out = sage_forward(graph, encoder)
    kernel = encoder.sage_layers[0].kernel.values
    expected = np.maximum(np.concatenate([graph.node_features, np.zeros((1, 3))], 1) @ kernel, 0)
    np.testing.assert_allclose(out.values, expected)


def test_sage_path_graph_symmetry():
    graph = ModalityGraph(ModalityKind.GENOMIC, np.tile([[0.3, -1.2, 0.5]], (2, 1)), [(0, 1)])
    out = sage_forward(graph, ModalityEncoder(ModalityKind.GENOMIC, 5, seed=1)).values
    np.testing.assert_array_equal(out[0], out[1])


def test_sage_complete_graph_hand_computed():
    graph = ModalityGraph(ModalityKind.GENOMIC, np.eye(5), complete_adjacency(5))
    encoder = ModalityEncoder(ModalityKind.GENOMIC, 10, num_layers=1, seed=0)
    encoder.build((None, 5))
    encoder.sage_layers[0].kernel.assign(np.eye(10))
    out = sage_forward(graph, encoder).values
    neighbour_means = (np.ones((5, 5)) - np.eye(5)) / 4.
    np.testing.assert_allclose(out, np.concatenate([np.eye(5), neighbour_means], axis=1))


def test_sage_permutation_equivariance(rng):
    features = rng.normal(size=(5, 3))
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]
    perm = rng.permutation(5)
    inverse = np.argsort(perm)
    encoder = ModalityEncoder(ModalityKind.GENOMIC, 4, seed=2)
    out = sage_forward(ModalityGraph('genomic', features, edges), encoder).values
    permuted = ModalityGraph('genomic', features[perm],
                             [(inverse[u], inverse[v]) for u, v in edges])
    np.testing.assert_allclose(sage_forward(permuted, encoder).values, out[perm], atol=1e-12)


def test_sage_parameter_shape_mismatch():
    encoder = ModalityEncoder(ModalityKind.GENOMIC, 4, seed=0)
    encoder.build((None, 3))
    with pytest.raises(ShapeError):
        sage_forward(ModalityGraph('genomic', np.zeros((5, 6)), complete_adjacency(5)), encoder)


def test_attention_pool_two_nodes():
    encoder = ModalityEncoder(ModalityKind.GENOMIC, 2, seed=0)
    encoder.build((None, 2))
    mlp = encoder.pooling.score_mlp
    mlp.h_dense.kernel.assign([[1.], [0.]])
    mlp.o_dense.kernel.assign([[np.log(3.)]])
    v = np.eye(2)
    np.testing.assert_allclose(encoder.pooling.attention_weights(B.constant(v)).values[:, 0],
                               [0.75, 0.25])
    np.testing.assert_allclose(attention_pool(v, encoder.pooling).values, [0.75, 0.25])


def test_attention_pool_identical_nodes(rng):
    encoder = ModalityEncoder(ModalityKind.PATHOLOGY, 3, seed=0)
    encoder.build((None, 3))
    v = rng.normal(size=3)
    np.testing.assert_allclose(attention_pool(np.tile(v, (4, 1)), encoder.pooling).values, v)
    with pytest.raises(ShapeError):
        attention_pool(np.zeros((0, 3)), encoder.pooling)


def test_encode_graphs_matches_single_graph_forward(rng):
    encoder = ModalityEncoder(ModalityKind.PATHOLOGY, 4, seed=3)
    graphs = [build_modality_graph('pathology', rng.normal(size=(g, g, 3))) for g in (2, 3, 2)]
    batched = encoder.encode_graphs(graphs).values
    for i, graph in enumerate(graphs):
        single = attention_pool(sage_forward(graph, encoder), encoder.pooling).values
        np.testing.assert_allclose(batched[i], single, atol=1e-12)


def test_encoder_rejects_other_kind():
    encoder = ModalityEncoder(ModalityKind.GENOMIC, 4, seed=0)
    with pytest.raises(ValidationError):
        encoder.encode_graphs([build_modality_graph('pathology', np.zeros((2, 2, 3)))])


def test_end_to_end_gradient_to_node_features(rng):
    encoder = ModalityEncoder(ModalityKind.GENOMIC, 4, seed=5)
    encoder.build((None, 3))
    adjacency = ModalityGraph('genomic', np.zeros((5, 3)), complete_adjacency(5)).mean_adjacency()
    w = rng.normal(size=4)
    for _ in range(20):
        check_gradients(
            lambda x: B.reduce_sum(
                encoder.pooling(encoder.node_embeddings(x, adjacency)) * B.constant(w)),
            [rng.normal(size=(5, 3))])


def test_modality_embedding_must_be_finite():
    with pytest.raises(ValidationError):
        ModalityEmbedding(ModalityKind.CLINICAL, [1.0, np.inf])
