import numpy as np
import pytest

from consensus_tracking import (
    AgentDynamics,
    ConsensusGraph,
    CostSpec,
    ExosystemModel,
    PlantModel,
    assemble_plant,
    check_observability,
    check_solvability,
    consensus_to_agents,
)
from consensus_tracking.errors import (
    DimensionMismatch,
    InvalidModel,
    NegativeWeight,
    UnknownNeighbor,
)
from consensus_tracking.system_model import (
    is_detectable,
    is_hurwitz,
    is_stabilizable,
    leader_injection,
    psd_sqrt,
)

I2 = np.eye(2)


def _agent(i, A_ii, p=2, couplings=None):
    return AgentDynamics(index=i, A_ii=A_ii, B1_i=np.eye(p), B2_i=np.eye(p), C_i=np.eye(p),
                         couplings=couplings or {})


def test_single_agent_assembly_is_identity():
    ag = AgentDynamics(index=1, A_ii=[[-1.0, 2.0], [0.0, -3.0]], B1_i=[[1.0], [2.0]],
                       B2_i=[[0.5], [0.0]], C_i=[[1.0, 1.0]])
    plant = assemble_plant([ag], x0=[0, 0], Qm=1.0, Qn=1.0)
    assert np.array_equal(plant.A, ag.A_ii)
    assert np.array_equal(plant.B1, ag.B1_i)
    assert np.array_equal(plant.C, ag.C_i)
    assert plant.n_agents == 1


def test_two_agent_block_placement():
    agents = [_agent(1, -I2, couplings={2: I2}), _agent(2, -2 * I2)]
    plant = assemble_plant(agents, x0=np.zeros(4), Qm=1.0, Qn=1.0)
    expected = np.block([[-I2, I2], [np.zeros((2, 2)), -2 * I2]])
    assert np.array_equal(plant.A, expected)
    assert np.array_equal(plant.B1, np.eye(4))


def test_agent_order_does_not_matter():
    agents = [_agent(2, -2 * I2), _agent(1, -I2, couplings={2: I2})]
    plant = assemble_plant(agents, x0=np.zeros(4), Qm=1.0, Qn=1.0)
    assert plant.A[0, 2] == 1.0


def test_mismatched_agent_dims():
    agents = [_agent(1, -I2), _agent(2, -np.eye(3), p=3)]
    with pytest.raises(DimensionMismatch):
        assemble_plant(agents, x0=np.zeros(5), Qm=1.0, Qn=1.0)


def test_unknown_neighbor():
    with pytest.raises(UnknownNeighbor):
        assemble_plant([_agent(1, -I2, couplings={3: I2})], x0=np.zeros(2), Qm=1.0, Qn=1.0)


def test_consensus_two_agents_by_hand():
    graph = ConsensusGraph(a=[[0, 1], [1, 0]], a0=[1, 0], av=[1, 1])
    plant = assemble_plant(consensus_to_agents(graph, p=1), x0=[0, 0], Qm=1.0, Qn=1.0)
    assert np.array_equal(plant.A, [[-2.0, 1.0], [1.0, -1.0]])
    assert np.array_equal(leader_injection(graph, 1), [[1.0, 0.0], [0.0, 0.0]])


def test_consensus_zero_weights():
    graph = ConsensusGraph(a=np.zeros((3, 3)), a0=np.zeros(3), av=np.zeros(3))
    plant = assemble_plant(consensus_to_agents(graph, p=2), x0=np.zeros(6), Qm=1.0, Qn=1.0)
    assert np.array_equal(plant.A, np.zeros((6, 6)))


def test_negative_weight():
    with pytest.raises(NegativeWeight):
        ConsensusGraph(a=[[0, -1], [1, 0]], a0=[1, 0], av=[1, 1])


def test_plant_rejects_bad_shapes_and_noise():
    with pytest.raises(DimensionMismatch):
        PlantModel(A=np.eye(2), B1=np.ones((3, 1)), B2=np.ones((2, 1)), C=np.eye(2),
                   x0=[0, 0], Qm=1.0, Qn=1.0)
    with pytest.raises(InvalidModel):
        PlantModel(A=np.eye(2), B1=np.ones((2, 1)), B2=np.ones((2, 1)), C=np.eye(2),
                   x0=[0, 0], Qm=1.0, Qn=0.0)


def test_models_are_read_only(builtin):
    with pytest.raises(ValueError):
        builtin.plant.A[0, 0] = 5.0


def test_cost_must_be_positive_definite():
    with pytest.raises(InvalidModel):
        CostSpec(Q=[[1.0, 0.0], [0.0, 0.0]], R=[[1.0]])


def test_observability_examples(builtin):
    assert check_observability([[0, 1], [0, 0]], [[1, 0]]).observable
    rep = check_observability([[0, 1], [0, 0]], [[0, 0]])
    assert not rep and rep.rank == 0
    assert check_observability(builtin.exo.F, builtin.exo.H).observable


def test_solvability_examples(builtin):
    assert is_stabilizable(-np.eye(2), np.zeros((2, 1)))
    assert not is_stabilizable([[1.0]], [[0.0]])
    assert is_detectable(-np.eye(2), np.zeros((1, 2)))
    assert check_solvability(builtin.plant, builtin.cost).ok


def test_solvability_reports_unstabilizable():
    plant = PlantModel(A=[[1.0]], B1=[[0.0]], B2=[[1.0]], C=[[1.0]], x0=[0], Qm=1.0, Qn=1.0)
    rep = check_solvability(plant, CostSpec(Q=[[1.0]], R=[[1.0]]))
    assert not rep.stabilizable and rep.detectable and not rep


def test_hurwitz_and_sqrt():
    assert is_hurwitz([[-1.0, 5.0], [0.0, -0.1]])
    assert not is_hurwitz([[0.0]])
    M = np.array([[2.0, 1.0], [1.0, 2.0]])
    R = psd_sqrt(M)
    assert np.allclose(R @ R, M, atol=1e-14)


def test_exosystem_dims(builtin):
    exo = builtin.exo
    assert (exo.n_dist, exo.n_ref, exo.n_output) == (2, 2, 2)
    with pytest.raises(DimensionMismatch):
        ExosystemModel(K=-np.eye(2), w0=[0, 0, 0], Qmw=1.0, F=-np.eye(2), H=np.eye(2),
                       z0=[0, 0], Qmz=1.0, Qnz=1.0)
