"""Shared builders for hand-made scenarios."""
import numpy as np

from mumimo_sched.env_model import EnvConfig, JointState, Scenario

# 2 users, 2 sub-bands, P_j = 1 W, noise 0.1 W. User 1's sub-band-1 channel overlaps user 0's.
WORKSHEET_CFG = EnvConfig(n_users=2, n_subbands=2, max_coscheduled=2, tx_power=2.0, noise_power=0.1)
WORKSHEET_ROWS = [[[1, 0], [1, 0]], [[0, 1], [0.6, 0.8]]]
WORKSHEET_AVG = [4.0e5, 6.0e5]
WORKSHEET_BUFFERS = [400, 3000]
# Single-sub-band rates (bit/s) from the scalar pipeline: alone SINR 10 -> MCS 7, TBS 826;
# paired on sub-band 0 SINR 5 -> MCS 5, TBS 521; paired on sub-band 1 SINR 1.79 -> MCS 3, TBS 288.
R0_ALONE, R0_PAIR0, R0_PAIR1 = 392805.5160151634, 398990.41706241, 286140.61850435036
R1_ALONE, R1_PAIR0 = 811143.3905713123, 519685.018223789
# Hand trace of the greedy rounds: (user, sub-band, marginal utility)
HAND_TRACE = [
    (1, 0, R1_ALONE / 6e5),
    (0, 0, R0_PAIR0 / 4e5),
    (1, 1, (R1_PAIR0 + R1_ALONE) / (6e5 + R1_PAIR0) - R1_PAIR0 / (6e5 + R1_PAIR0)),
    (0, 1, (R0_PAIR0 + R0_PAIR1) / (4e5 + R0_PAIR0) - R0_PAIR0 / (4e5 + R0_PAIR0)),
]


def fixed_scenario(config: EnvConfig, avg_rates) -> Scenario:
    n = config.n_users
    return Scenario(
        config=config,
        seed=(),
        user_positions=np.zeros((n, 2)),
        large_scale_gain=np.ones(n),
        tap_coefficients=np.zeros((n, config.n_rx, config.n_tx, config.n_taps), dtype=complex),
        doppler_coeff=np.ones(n),
        avg_rates=np.asarray(avg_rates, dtype=float),
        table=config.action_table(),
    )


def fixed_state(rows, buffers) -> JointState:
    """``rows[k][j]`` is user k's length-N_tx channel on sub-band j (single rx antenna)."""
    h = np.asarray(rows, dtype=complex)[:, :, None, :]
    return JointState(true_channel=h, est_channel=h.copy(), buffers=np.asarray(buffers, dtype=float))


# acceptance lines collected during the session and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
