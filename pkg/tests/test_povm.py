import math

import numpy as np
import pytest

from wfhtomo.fock import StateSpec, make_state
from wfhtomo.optics import PartitionSpec, standard_block
from wfhtomo.povm import (
    CounterConfig,
    MeasurementContext,
    Setting,
    apply_detector_response,
    apply_loss,
    build_povm,
    click_povm,
    compose_response,
    ic_check,
    identity_response,
    overflow_elements,
    pi_k,
    pi_kl,
)
from wfhtomo.sim import born_oracle, born_table
from wfhtomo.twirl import BlockOperator, twirl_analytic

BAL = PartitionSpec(sectors=((1 / math.sqrt(2), 1 / math.sqrt(2)),), s1_multi=False)
BAL_MULTI = PartitionSpec(sectors=((1 / math.sqrt(2), 1 / math.sqrt(2)),), s1_multi=True)
P1 = PartitionSpec(sectors=((math.sqrt(0.6), math.sqrt(0.4)),), s1_multi=False)
P2 = PartitionSpec(sectors=((math.sqrt(0.7), math.sqrt(0.3)),
                            (math.sqrt(0.45), math.sqrt(0.55))), s1_multi=False)


def tuple_length(partition: PartitionSpec) -> int:
    return partition.K if partition.s1_multi else partition.K - 1


def povm_sum(povm):
    total = None
    for el in povm.values():
        total = el.op if total is None else total + el.op
    return total


def identity_dev(povm, N, partition):
    ident = BlockOperator.identity(N, tuple_length(partition), partition)
    total = povm_sum(povm)
    return max(float(np.max(np.abs(total.blocks[k] - ident.blocks[k])))
               for k in total.blocks)


def test_pi_kl_gamma_zero_vacuum():
    el = pi_kl(0.0, 0, 0, P1, 3)
    vac = BlockOperator.zeros(3, 0, P1)
    vac.blocks[()][0, 0] = 1.0
    assert abs(vac.pair_trace(el.op).real - 1.0) < 1e-14


def test_pi_kl_gamma_zero_one_photon_projector():
    # with no probe, one count at counter 1 means the input photon was
    # transmitted: Pi_10 = eta^2 |1><1| on the signal
    eta2 = 0.6
    el = pi_kl(0.0, 1, 0, P1, 4)
    blk = el.op.blocks[()]
    want = np.zeros((5, 5))
    want[1, 1] = eta2
    assert np.max(np.abs(blk - want)) < 1e-14


def test_pi_kl_vacuum_product_poisson():
    vac = BlockOperator.zeros(6, 0, BAL)
    vac.blocks[()][0, 0] = 1.0
    for k in range(4):
        for l in range(4):
            el = pi_kl(1.0, k, l, BAL, 6)
            want = math.exp(-1.0) * 0.5 ** (k + l) / (math.factorial(k) * math.factorial(l))
            assert abs(vac.pair_trace(el.op).real - want) < 1e-12


def test_pi_kl_psd_and_hermitian():
    rng = np.random.default_rng(7)
    for _ in range(4):
        g = rng.uniform(0.2, 1.8) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        k, l = rng.integers(0, 4, size=2)
        el = pi_kl(g, int(k), int(l), P2, 4)
        assert el.op.max_abs_dev_from_hermitian() < 1e-12
        el.validate_psd()


@pytest.mark.parametrize("partition,assignment,spec", [
    (P1, [0], StateSpec(kind="coherent", N=6, alpha=0.5 + 0.2j)),
    (BAL_MULTI, [0, 0], StateSpec(kind="tmsv", N=3, r=0.5, phi=0.3)),
    (P2, [0, 1], StateSpec(kind="cat", N=5, alpha=0.6 + 0.3j)),
])
def test_pi_kl_matches_dense_oracle(partition, assignment, spec):
    state = make_state(spec)
    rho = state.density()
    N = rho.basis.cutoff
    chi = twirl_analytic(rho, assignment, partition, N)
    blocks = [standard_block(*partition.sectors[s]) for s in assignment]
    g = 0.8 - 0.4j
    for k in range(4):
        for l in range(4):
            el = pi_kl(g, k, l, partition, N)
            p_analytic = chi.pair_trace(el.op).real
            p_dense = born_oracle(rho, g, blocks, k, l)
            assert abs(p_analytic - p_dense) < 1e-8


def test_pi_kl_rejects_large_k():
    p3 = PartitionSpec(sectors=((0.6, 0.8), (0.5, math.sqrt(0.75)),
                                (0.4, math.sqrt(0.84))), s1_multi=False)
    with pytest.raises(ValueError):
        pi_kl(0.5, 0, 0, p3, 2)


def test_pi_k_single_photon_reflected():
    # gamma=0: a lone input photon reaches counter 1 with probability eta^2,
    # so <1|Pi_0|1> = zeta^2
    el = pi_k(0.0, 0, P1, 3)
    assert abs(el.op.blocks[()][1, 1].real - 0.4) < 1e-12
    assert el.meta["counter"] == 1


def test_pi_k_vacuum_expectation():
    g = 1.1 - 0.6j
    el = pi_k(g, 0, P1, 4)
    want = math.exp(-0.4 * abs(g) ** 2)  # counter-1 amplitude is zeta*gamma
    assert abs(el.op.blocks[()][0, 0].real - want) < 1e-12


def test_pi_k_counter_two_vacuum_expectation():
    g = 0.9 + 0.3j
    el = pi_k(g, 0, P1, 4, counter=2)
    want = math.exp(-0.6 * abs(g) ** 2)  # counter-2 amplitude is -eta*gamma
    assert abs(el.op.blocks[()][0, 0].real - want) < 1e-12
    assert el.meta["counter"] == 2


def test_pi_k_completeness():
    g = 1.3 + 0.2j
    N = 4
    total = BlockOperator.zeros(N, 0, P1)
    k = 0
    while True:
        el = pi_k(g, k, P1, N)
        total = total + el.op
        if k > 5 and float(np.max(np.abs(el.op.blocks[()]))) < 1e-13:
            break
        k += 1
    ident = BlockOperator.identity(N, 0, P1)
    assert float(np.max(np.abs(total.blocks[()] - ident.blocks[()]))) < 1e-8


def test_pi_k_matches_oracle_marginal():
    spec = StateSpec(kind="coherent", N=6, alpha=0.5 + 0.2j)
    rho = make_state(spec).density()
    chi = twirl_analytic(rho, [0], P1, 6)
    blocks = [standard_block(*P1.sectors[0])]
    g = 0.9 - 0.3j
    table = born_table(rho, g, blocks)
    for k in range(4):
        el1 = pi_k(g, k, P1, 6, counter=1)
        assert abs(chi.pair_trace(el1.op).real - table[k, :].sum()) < 1e-10
        el2 = pi_k(g, k, P1, 6, counter=2)
        assert abs(chi.pair_trace(el2.op).real - table[:, k].sum()) < 1e-10
    assert el1.meta["tail_bound"] < 1e-12


def test_overflow_element_count_and_identity():
    g = 0.8 + 0.5j
    N, n_c = 4, 3
    setting = Setting(gamma=g, counter=CounterConfig(counters=2, N_c=n_c),
                      partition=P1, N=N)
    povm = build_povm(setting)
    assert len(povm) == (n_c + 2) ** 2
    assert identity_dev(povm, N, P1) < 1e-8
    for el in povm.values():
        el.validate_psd()
    # overflow labels present in construction order
    keys = list(povm)
    assert keys[: (n_c + 1) ** 2] == [(k, l) for k in range(n_c + 1)
                                      for l in range(n_c + 1)]
    assert keys[-1] == (">", ">")


def test_overflow_negligible_for_large_n_c():
    g = 0.4
    setting = Setting(gamma=g, counter=CounterConfig(counters=2, N_c=14),
                      partition=P1, N=2)
    povm = build_povm(setting)
    for outcome, el in povm.items():
        if ">" in outcome:
            assert el.op.max_eigenvalue() < 1e-8


def test_overflow_matches_oracle_tail():
    spec = StateSpec(kind="coherent", N=5, alpha=0.4 + 0.1j)
    rho = make_state(spec).density()
    chi = twirl_analytic(rho, [0], P1, 5)
    blocks = [standard_block(*P1.sectors[0])]
    g = 1.2 - 0.7j
    n_c = 3
    setting = Setting(gamma=g, counter=CounterConfig(counters=2, N_c=n_c),
                      partition=P1, N=5)
    povm = build_povm(setting)
    table = born_table(rho, g, blocks)
    for k in range(n_c + 1):
        want = table[k, n_c + 1:].sum()
        assert abs(chi.pair_trace(povm[(k, ">")].op).real - want) < 1e-9
        want = table[n_c + 1:, k].sum()
        assert abs(chi.pair_trace(povm[(">", k)].op).real - want) < 1e-9
    want = table[n_c + 1:, n_c + 1:].sum()
    assert abs(chi.pair_trace(povm[(">", ">")].op).real - want) < 1e-9


def test_apply_loss_nu_one_is_identity():
    g = 0.7 + 0.2j
    N = 3
    rect = {(m, n): pi_kl(g, m, n, P1, N) for m in range(8) for n in range(8)}
    out = apply_loss(rect, 1.0, 1.0, conv_cut=7)
    for key in rect:
        assert float(np.max(np.abs(out[key].op.blocks[()] - rect[key].op.blocks[()]))) == 0.0


def test_apply_loss_nu_zero_sends_everything_to_zero_counts():
    g = 0.7 + 0.2j
    N = 3
    cut = 20
    rect = {(m, n): pi_kl(g, m, n, P1, N) for m in range(cut + 1)
            for n in range(cut + 1)}
    out = apply_loss(rect, 0.0, 0.0, conv_cut=cut)
    ident = BlockOperator.identity(N, 0, P1)
    assert float(np.max(np.abs(out[(0, 0)].op.blocks[()] - ident.blocks[()]))) < 1e-10
    assert out[(2, 1)].op.max_eigenvalue() < 1e-14


def test_apply_loss_composition():
    g = 0.9 - 0.4j
    N = 3
    cut = 22
    nu_a, nu_b = 0.9, 0.8
    rect = {(m, n): pi_kl(g, m, n, P1, N) for m in range(cut + 1)
            for n in range(cut + 1)}
    once = apply_loss(rect, nu_a * nu_b, nu_a * nu_b, conv_cut=cut)
    twice = apply_loss(apply_loss(rect, nu_a, nu_a, conv_cut=cut),
                       nu_b, nu_b, conv_cut=cut)
    for k in range(4):
        for l in range(4):
            d = float(np.max(np.abs(once[(k, l)].op.blocks[()]
                                    - twice[(k, l)].op.blocks[()])))
            assert d < 1e-9


def test_loss_povm_matches_thinned_oracle():
    spec = StateSpec(kind="coherent", N=5, alpha=0.5 + 0.2j)
    rho = make_state(spec).density()
    chi = twirl_analytic(rho, [0], P1, 5)
    blocks = [standard_block(*P1.sectors[0])]
    g = 0.9 - 0.3j
    nu1, nu2 = 0.85, 0.7
    setting = Setting(gamma=g, counter=CounterConfig(counters=2, N_c=3, loss=(nu1, nu2)),
                      partition=P1, N=5)
    povm = build_povm(setting)
    assert identity_dev(povm, 5, P1) < 1e-8
    table = born_table(rho, g, blocks)
    d = table.shape[0]
    t1 = np.array([[math.comb(m, k) * nu1 ** k * (1 - nu1) ** (m - k) if k <= m else 0.0
                    for m in range(d)] for k in range(d)])
    t2 = np.array([[math.comb(m, k) * nu2 ** k * (1 - nu2) ** (m - k) if k <= m else 0.0
                    for m in range(d)] for k in range(d)])
    thinned = t1 @ table @ t2.T
    for k in range(4):
        for l in range(4):
            assert abs(chi.pair_trace(povm[(k, l)].op).real - thinned[k, l]) < 1e-9
    for k in range(4):
        assert abs(chi.pair_trace(povm[(k, ">")].op).real - thinned[k, 4:].sum()) < 1e-9


def test_single_counter_povm():
    spec = StateSpec(kind="coherent", N=5, alpha=0.5 + 0.2j)
    rho = make_state(spec).density()
    chi = twirl_analytic(rho, [0], P1, 5)
    blocks = [standard_block(*P1.sectors[0])]
    g = 0.9 - 0.3j
    setting = Setting(gamma=g, counter=CounterConfig(counters=1, N_c=4),
                      partition=P1, N=5)
    povm = build_povm(setting)
    assert len(povm) == 6
    assert identity_dev(povm, 5, P1) < 1e-8
    table = born_table(rho, g, blocks)
    for k in range(5):
        assert abs(chi.pair_trace(povm[(k,)].op).real - table[k, :].sum()) < 1e-9
    assert abs(chi.pair_trace(povm[(">",)].op).real - table[5:, :].sum()) < 1e-9


def test_single_counter_with_loss():
    spec = StateSpec(kind="coherent", N=5, alpha=0.5 + 0.2j)
    rho = make_state(spec).density()
    chi = twirl_analytic(rho, [0], P1, 5)
    blocks = [standard_block(*P1.sectors[0])]
    g = 0.9 - 0.3j
    nu = 0.9
    setting = Setting(gamma=g, counter=CounterConfig(counters=1, N_c=4, loss=(nu,)),
                      partition=P1, N=5)
    povm = build_povm(setting)
    assert identity_dev(povm, 5, P1) < 1e-8
    table = born_table(rho, g, blocks)
    marg = table.sum(axis=1)
    d = marg.size
    thin = np.array([sum(math.comb(m, k) * nu ** k * (1 - nu) ** (m - k) * marg[m]
                         for m in range(k, d)) for k in range(d)])
    for k in range(5):
        assert abs(chi.pair_trace(povm[(k,)].op).real - thin[k]) < 1e-9


def test_compose_response_nu_one_is_plain_response():
    T = identity_response(3, 12)
    assert np.max(np.abs(compose_response(T, 1.0) - T)) == 0.0


def test_compose_response_columns_sum_to_one():
    rng = np.random.default_rng(11)
    raw = rng.uniform(0.1, 1.0, size=(5, 9))
    T = raw / raw.sum(axis=0)
    for nu in (0.3, 0.75, 1.0):
        Tp = compose_response(T, nu)
        assert np.max(np.abs(Tp.sum(axis=0) - 1.0)) < 1e-12


def test_identity_response_reproduces_ideal_povm():
    spec = StateSpec(kind="coherent", N=5, alpha=0.5 + 0.2j)
    rho = make_state(spec).density()
    chi = twirl_analytic(rho, [0], P1, 5)
    blocks = [standard_block(*P1.sectors[0])]
    g = 0.9 - 0.3j
    n_c = 3
    T = identity_response(n_c, 22)
    cfg = CounterConfig(counters=2, N_c=n_c, response=(T, T))
    povm = build_povm(Setting(gamma=g, counter=cfg, partition=P1, N=5))
    assert identity_dev(povm, 5, P1) < 1e-8
    table = born_table(rho, g, blocks)
    for k in range(n_c + 1):
        for l in range(n_c + 1):
            assert abs(chi.pair_trace(povm[(k, l)].op).real - table[k, l]) < 1e-9


def test_noisy_response_povm():
    # smear each count symmetrically onto its neighbors and check the POVM
    # still resolves the identity and reproduces the smeared oracle table
    n_c, m_cut = 3, 22
    T = np.zeros((n_c + 2, m_cut + 1))
    for m in range(m_cut + 1):
        for o, w in ((m - 1, 0.15), (m, 0.7), (m + 1, 0.15)):
            if o < 0:
                T[0, m] += w
            elif o > n_c:
                T[n_c + 1, m] += w
            else:
                T[o, m] += w
    cfg = CounterConfig(counters=2, N_c=n_c, response=(T, T))
    g = 0.8 + 0.3j
    povm = build_povm(Setting(gamma=g, counter=cfg, partition=P1, N=4))
    assert identity_dev(povm, 4, P1) < 1e-8
    spec = StateSpec(kind="coherent", N=4, alpha=0.3 - 0.2j)
    rho = make_state(spec).density()
    chi = twirl_analytic(rho, [0], P1, 4)
    table = born_table(rho, g, [standard_block(*P1.sectors[0])])
    d = table.shape[0]
    Tfull = np.zeros((n_c + 2, d))
    Tfull[:, : m_cut + 1] = T[:, :d] if d <= m_cut + 1 else T
    if d > m_cut + 1:
        Tfull = np.hstack([T, np.tile(T[:, -1:], (1, d - m_cut - 1))])
    smeared = Tfull @ table @ Tfull.T
    for k in range(n_c + 1):
        for l in range(n_c + 1):
            assert abs(chi.pair_trace(povm[(k, l)].op).real - smeared[k, l]) < 1e-9


def test_response_with_loss_composes():
    g = 0.6 + 0.1j
    n_c, m_cut = 2, 20
    T = identity_response(n_c, m_cut)
    nu = 0.8
    cfg_resp = CounterConfig(counters=2, N_c=n_c, loss=(nu, nu), response=(T, T))
    povm_a = build_povm(Setting(gamma=g, counter=cfg_resp, partition=P1, N=3))
    cfg_loss = CounterConfig(counters=2, N_c=n_c, loss=(nu, nu))
    povm_b = build_povm(Setting(gamma=g, counter=cfg_loss, partition=P1, N=3))
    for k in range(n_c + 1):
        for l in range(n_c + 1):
            d = float(np.max(np.abs(povm_a[(k, l)].op.blocks[()]
                                    - povm_b[(k, l)].op.blocks[()])))
            assert d < 1e-9


def test_click_povm_identity_and_vacuum():
    g = 0.9 - 0.2j
    povm = click_povm(g, P1, 4)
    assert set(povm) == {(0, 0), ("I", 0), (0, "I"), ("I", "I")}
    assert identity_dev(povm, 4, P1) < 1e-10
    vac = BlockOperator.zeros(4, 0, P1)
    vac.blocks[()][0, 0] = 1.0
    p00 = vac.pair_trace(povm[(0, 0)].op).real
    assert abs(p00 - math.exp(-abs(g) ** 2)) < 1e-12
    povm0 = click_povm(0.0, P1, 4)
    assert abs(vac.pair_trace(povm0[(0, 0)].op).real - 1.0) < 1e-12


def test_click_povm_no_count_element_is_scaled_vacuum():
    # the double-dark element only sees the chi_{0,00} entry of the state
    g = 0.7 + 0.4j
    povm = click_povm(g, BAL_MULTI, 3)
    el = povm[(0, 0)].op
    for key, blk in el.blocks.items():
        want = np.zeros_like(blk)
        if key == (0,):
            want[0, 0] = math.exp(-abs(g) ** 2)
        assert np.max(np.abs(blk - want)) < 1e-12


def test_click_povm_matches_oracle():
    spec = StateSpec(kind="coherent", N=5, alpha=0.4 + 0.3j)
    rho = make_state(spec).density()
    chi = twirl_analytic(rho, [0], P1, 5)
    blocks = [standard_block(*P1.sectors[0])]
    g = 0.8 - 0.5j
    povm = click_povm(g, P1, 5)
    table = born_table(rho, g, blocks)
    assert abs(chi.pair_trace(povm[(0, 0)].op).real - table[0, 0]) < 1e-9
    assert abs(chi.pair_trace(povm[("I", 0)].op).real - table[1:, 0].sum()) < 1e-9
    assert abs(chi.pair_trace(povm[(0, "I")].op).real - table[0, 1:].sum()) < 1e-9
    assert abs(chi.pair_trace(povm[("I", "I")].op).real - table[1:, 1:].sum()) < 1e-9


def test_click_povm_requires_k1():
    with pytest.raises(ValueError):
        click_povm(0.5, P2, 3)


def test_setting_click_with_loss_rejected():
    cfg = CounterConfig(counters=2, N_c=1, loss=(0.9, 0.9))
    with pytest.raises(ValueError):
        Setting(gamma=0.5, counter=cfg, partition=P1, N=3, detector="click")


def test_measurement_context_build_and_json():
    gammas = [0.5, 0.9 * np.exp(1j * np.pi / 7)]
    settings = [Setting(gamma=g, counter=CounterConfig(counters=2, N_c=3),
                        partition=P1, N=3) for g in gammas]
    ctx = MeasurementContext.build(settings)
    assert len(ctx.povms) == 2
    ctx2 = MeasurementContext.from_json(ctx.to_json())
    assert len(ctx2.povms) == 2
    for povm_a, povm_b in zip(ctx.povms, ctx2.povms):
        assert list(povm_a) == list(povm_b)
        for key in povm_a:
            d = float(np.max(np.abs(povm_a[key].op.blocks[()]
                                    - povm_b[key].op.blocks[()])))
            assert d == 0.0


def test_ic_check_six_probe_rank():
    gammas = [0.3, 0.6 * np.exp(1j * np.pi / 6), 0.9 * np.exp(2j * np.pi / 6),
              1.2 * np.exp(3j * np.pi / 6), 1.5 * np.exp(4j * np.pi / 6),
              1.8 * np.exp(5j * np.pi / 6)]
    settings = [Setting(gamma=g, counter=CounterConfig(counters=2, N_c=9),
                        partition=BAL_MULTI, N=5) for g in gammas]
    ctx = MeasurementContext.build(settings)
    res = ic_check(ctx)
    assert res["rank"] == 91
    assert res["required"] == 91
    assert res["is_ic"] is True


def test_ic_check_single_probe_deficient():
    settings = [Setting(gamma=0.7, counter=CounterConfig(counters=2, N_c=6),
                        partition=BAL_MULTI, N=2)]
    res = ic_check(MeasurementContext.build(settings))
    assert res["is_ic"] is False
    assert res["rank"] < res["required"]


def test_ic_check_n_zero():
    settings = [Setting(gamma=0.4, counter=CounterConfig(counters=2, N_c=2),
                        partition=BAL_MULTI, N=0)]
    res = ic_check(MeasurementContext.build(settings))
    assert res == {"rank": 1, "required": 1, "is_ic": True}


def test_ic_check_rank_monotone_in_settings():
    gammas = [0.4, 0.8 * np.exp(1j * 0.9), 1.2 * np.exp(1j * 1.7), 1.6 * np.exp(1j * 2.4)]
    prev = 0
    for n in range(1, 5):
        settings = [Setting(gamma=g, counter=CounterConfig(counters=2, N_c=5),
                            partition=BAL_MULTI, N=2) for g in gammas[:n]]
        res = ic_check(MeasurementContext.build(settings))
        assert res["rank"] >= prev
        assert res["rank"] <= res["required"]
        prev = res["rank"]


def test_ic_check_rejects_mixed_contexts():
    s1 = Setting(gamma=0.5, counter=CounterConfig(counters=2, N_c=3), partition=P1, N=3)
    s2 = Setting(gamma=0.5, counter=CounterConfig(counters=2, N_c=3), partition=P1, N=4)
    ctx = MeasurementContext.build([s1, s2])
    with pytest.raises(ValueError):
        ic_check(ctx)


def test_counter_config_validation():
    with pytest.raises(ValueError):
        CounterConfig(counters=3, N_c=2)
    with pytest.raises(ValueError):
        CounterConfig(counters=2, N_c=2, loss=(0.5,))
    with pytest.raises(ValueError):
        CounterConfig(counters=1, N_c=2, loss=(1.5,))
    bad = np.full((4, 6), 0.3)
    with pytest.raises(ValueError):
        CounterConfig(counters=1, N_c=2, response=(bad,))


def test_setting_json_roundtrip():
    T = identity_response(2, 10)
    cfg = CounterConfig(counters=2, N_c=2, loss=(0.9, 0.8), response=(T, T))
    s = Setting(gamma=0.4 - 0.6j, counter=cfg, partition=P2, N=3)
    s2 = Setting.from_json(s.to_json())
    assert s2.gamma == s.gamma
    assert s2.N == s.N
    assert s2.partition == s.partition
    assert s2.counter.loss == cfg.loss
    assert np.max(np.abs(s2.counter.response[0] - T)) == 0.0
