import dataclasses
import math

import numpy as np
import pytest

from asyncfl.data import Dataset, Partition, gen_synthetic, partition_iid
from asyncfl.engine import SimConfig, run_async, run_fedavg, run_simulation
from asyncfl.model import ModelParams, TrainingHyper
from asyncfl.server import PolicyConfig


def toy_setup():
    """Three single-sample devices with one scalar feature, two classes."""
    features = np.array([[0.1], [0.5], [0.9]])
    labels = np.array([0, 1, 1])
    dataset = Dataset(features, labels, num_classes=2)
    partition = Partition((np.array([0]), np.array([1]), np.array([2])))
    return dataset, partition


def golden_config(num_iterations):
    return SimConfig(
        num_devices=3,
        t_max=3.0,
        aggregation_period=1.0,
        num_iterations=num_iterations,
        policy=PolicyConfig(scheduler="significance", weighting="age",
                            gamma=0.85, normalization="scheduled",
                            max_scheduled=1),
        hyper=TrainingHyper(local_epochs=1, batch_size=1,
                            lr_schedule=((100, 0.05),), reg_lambda=0.02),
        seed=0,
        protocol="async",
        compute_mode="explicit",
        explicit_times=(0.5, 1.5, 2.5),
    )


def scalar_step(theta, x, y, lr):
    """One SGD step of the toy model in straight-line scalar arithmetic.

    theta layout: [w0, w1, b0, b1]. With a single local step the proximal
    term vanishes (params == anchor), so this is the plain gradient step.
    """
    z0 = x * theta[0] + theta[2]
    z1 = x * theta[1] + theta[3]
    m = max(z0, z1)
    e0 = math.exp(z0 - m)
    e1 = math.exp(z1 - m)
    s = e0 + e1
    p0, p1 = e0 / s, e1 / s
    if y == 0:
        p0 -= 1.0
    else:
        p1 -= 1.0
    grad = [x * p0, x * p1, p0, p1]
    return [t - lr * g for t, g in zip(theta, grad)]


def scalar_norm(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b)) ** 0.5


class TestGoldenTrace:
    """Hand-executed five-iteration protocol trace on the toy setup.

    Fixed compute times 0.5 / 1.5 / 2.5 with period 1 give the readiness
    pattern below (device 0 finishes every period; 1 and 2 straggle):

        t=1: K={0}        t=2: K={0,1}    t=3: K={0,2}
        t=4: K={0,1}      t=5: K={0}

    With R=1, significance scheduling picks the largest update norm; the
    expected model values come from a scalar re-execution of the protocol.
    """

    READY = {1: (0,), 2: (0, 1), 3: (0, 2), 4: (0, 1), 5: (0,)}
    SAMPLES = {0: (0.1, 0), 1: (0.5, 1), 2: (0.9, 1)}

    def oracle(self, num_iterations):
        """Replay the protocol with scalar arithmetic; returns the theta
        trajectory, scheduled sets, and scheduled-device ages."""
        theta = [0.0, 0.0, 0.0, 0.0]
        anchor = {k: theta for k in range(3)}
        anchor_iter = {k: 1 for k in range(3)}
        thetas, scheduled_sets, ages = [], [], []
        for t in range(1, num_iterations + 1):
            ready = self.READY[t]
            updates = {}
            norms = {}
            for k in ready:
                x, y = self.SAMPLES[k]
                updates[k] = scalar_step(anchor[k], x, y, 0.05)
                norms[k] = scalar_norm(updates[k], anchor[k])
            winner = min(ready, key=lambda k: (-norms[k], k))
            theta = updates[winner]
            ages.append(t - anchor_iter[winner])
            scheduled_sets.append((winner,))
            thetas.append(list(theta))
            for k in ready:
                anchor[k] = theta
                anchor_iter[k] = t + 1
        return thetas, scheduled_sets, ages

    def test_ready_and_scheduled_sets(self):
        dataset, partition = toy_setup()
        trace = run_async(dataset, partition, dataset, golden_config(5))
        _, scheduled_sets, ages = self.oracle(5)
        for rec, (t, ready, scheduled) in zip(trace.records,
                                              trace.schedule_history):
            assert ready == self.READY[t]
            assert scheduled == scheduled_sets[t - 1]
            assert rec.mean_alu_scheduled == ages[t - 1]

    def test_theta_trajectory_bit_for_bit(self):
        dataset, partition = toy_setup()
        thetas, _, _ = self.oracle(5)
        for n in range(1, 6):
            trace = run_async(dataset, partition, dataset, golden_config(n))
            assert trace.final_model.theta.tolist() == thetas[n - 1]

    def test_sched_counts_match_history_replay(self):
        dataset, partition = toy_setup()
        trace = run_async(dataset, partition, dataset, golden_config(5))
        replayed = np.zeros(3, dtype=int)
        for _, _, scheduled in trace.schedule_history:
            for k in scheduled:
                replayed[k] += 1
        np.testing.assert_array_equal(trace.sched_counts, replayed)


def small_world(seed=0):
    train = gen_synthetic(200, 4, 6, 0.2, seed=seed)
    test = gen_synthetic(80, 4, 6, 0.2, seed=seed + 1)
    partition = partition_iid(train, 10, seed=seed)
    return train, partition, test


class TestRunAsync:
    def test_zero_iterations_empty_trace(self):
        train, partition, test = small_world()
        cfg = SimConfig(num_devices=10, num_iterations=0, seed=1)
        trace = run_async(train, partition, test, cfg)
        assert trace.records == []
        assert np.all(trace.final_model.theta == 0.0)

    def test_identical_seeds_identical_traces(self):
        train, partition, test = small_world()
        cfg = SimConfig(num_devices=10, num_iterations=8, seed=3,
                        policy=PolicyConfig(scheduler="random", weighting="age",
                                            gamma=0.85, max_scheduled=4))
        a = run_async(train, partition, test, cfg)
        b = run_async(train, partition, test, cfg)
        assert a.records == b.records
        assert np.array_equal(a.final_model.theta, b.final_model.theta)

    def test_different_seeds_differ(self):
        train, partition, test = small_world()
        a = run_async(train, partition, test,
                      SimConfig(num_devices=10, num_iterations=8, seed=1))
        b = run_async(train, partition, test,
                      SimConfig(num_devices=10, num_iterations=8, seed=2))
        assert not np.array_equal(a.final_model.theta, b.final_model.theta)

    def test_wall_clock_and_trace_length(self):
        train, partition, test = small_world()
        cfg = SimConfig(num_devices=10, num_iterations=12, seed=4,
                        t_max=2.0, aggregation_period=0.5)
        trace = run_async(train, partition, test, cfg)
        assert len(trace.records) == 12
        for t, rec in enumerate(trace.records, start=1):
            assert rec.wall_clock == t * 0.5
        clocks = [r.wall_clock for r in trace.records]
        assert clocks == sorted(clocks)

    def test_ready_plus_busy_conserved(self):
        train, partition, test = small_world()
        cfg = SimConfig(num_devices=10, num_iterations=20, seed=5)
        trace = run_async(train, partition, test, cfg)
        for _, ready, scheduled in trace.schedule_history:
            assert set(scheduled) <= set(ready)
            assert set(ready) <= set(range(10))
        for rec in trace.records:
            assert 0 <= rec.ready_count <= 10

    def test_alu_bound_under_quarter_period(self):
        train, partition, test = small_world()
        cfg = SimConfig(num_devices=10, num_iterations=40, seed=6,
                        t_max=1.0, aggregation_period=0.25,
                        compute_mode="redraw")
        trace = run_async(train, partition, test, cfg)
        assert all(rec.max_alu_scheduled <= 4 for rec in trace.records)

    def test_all_devices_normalization_runs(self):
        train, partition, test = small_world()
        cfg = SimConfig(num_devices=10, num_iterations=6, seed=7,
                        policy=PolicyConfig(weighting="age", gamma=1.17,
                                            normalization="all",
                                            max_scheduled=3))
        trace = run_async(train, partition, test, cfg)
        assert len(trace.records) == 6
        assert np.all(np.isfinite(trace.final_model.theta))


class TestFedAvg:
    def test_full_participation_plain_average(self):
        train, partition, test = small_world()
        cfg = SimConfig(num_devices=10, num_iterations=1, seed=8,
                        protocol="fedavg",
                        policy=PolicyConfig(max_scheduled=10))
        trace = run_fedavg(train, partition, test, cfg)
        assert trace.records[0].scheduled_count == 10

    def test_equivalence_with_uniform_async(self):
        # fixed compute times equal to the period make every device ready at
        # every boundary; with R=N the async engine must reproduce FedAvg
        train, partition, test = small_world()
        policy = PolicyConfig(scheduler="random", weighting="equal",
                              max_scheduled=10)
        hyper = TrainingHyper(local_epochs=2, batch_size=8)
        async_cfg = SimConfig(num_devices=10, num_iterations=10, seed=9,
                              t_max=0.5, aggregation_period=0.5,
                              policy=policy, hyper=hyper, protocol="async",
                              compute_mode="explicit",
                              explicit_times=(0.5,) * 10)
        sync_cfg = SimConfig(num_devices=10, num_iterations=10, seed=9,
                             t_max=0.5, policy=policy, hyper=hyper,
                             protocol="fedavg")
        a = run_async(train, partition, test, async_cfg)
        s = run_fedavg(train, partition, test, sync_cfg)
        assert np.array_equal(a.final_model.theta, s.final_model.theta)
        for ra, rs in zip(a.records, s.records):
            assert ra.test_accuracy == rs.test_accuracy
            assert ra.train_loss == rs.train_loss
            assert ra.scheduled_count == rs.scheduled_count

    def test_literal_rule_damps_partial_updates(self):
        train, partition, test = small_world()
        cfg = SimConfig(num_devices=10, num_iterations=5, seed=10,
                        protocol="fedavg", fedavg_literal=True,
                        policy=PolicyConfig(max_scheduled=2))
        renorm = dataclasses.replace(cfg, fedavg_literal=False)
        literal_trace = run_fedavg(train, partition, test, cfg)
        renorm_trace = run_fedavg(train, partition, test, renorm)
        literal_move = np.linalg.norm(literal_trace.final_model.theta)
        renorm_move = np.linalg.norm(renorm_trace.final_model.theta)
        assert literal_move < renorm_move

    def test_fedavg_wall_clock_is_round_times_tmax(self):
        train, partition, test = small_world()
        cfg = SimConfig(num_devices=10, num_iterations=3, seed=11,
                        protocol="fedavg", t_max=2.0)
        trace = run_fedavg(train, partition, test, cfg)
        assert [r.wall_clock for r in trace.records] == [2.0, 4.0, 6.0]


class TestSimConfig:
    def test_protocol_mismatch_rejected(self):
        train, partition, test = small_world()
        with pytest.raises(ValueError):
            run_async(train, partition, test,
                      SimConfig(num_devices=10, protocol="fedavg"))
        with pytest.raises(ValueError):
            run_fedavg(train, partition, test,
                       SimConfig(num_devices=10, protocol="async"))

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            SimConfig(protocol="semi-sync")
        with pytest.raises(ValueError):
            SimConfig(t_max=0.0)
        with pytest.raises(ValueError):
            SimConfig(aggregation_period=-1.0)
        with pytest.raises(ValueError):
            SimConfig(init="ones")

    def test_default_async_period_is_quarter_tmax(self):
        cfg = SimConfig(t_max=2.0, protocol="async")
        assert cfg.period == 0.5
        sync = SimConfig(t_max=2.0, protocol="fedavg")
        assert sync.period == 2.0

    def test_run_simulation_dispatch(self):
        train, partition, test = small_world()
        cfg = SimConfig(num_devices=10, num_iterations=2, seed=12)
        trace = run_simulation(train, partition, test, cfg)
        assert len(trace.records) == 2
