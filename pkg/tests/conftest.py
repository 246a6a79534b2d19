import numpy as np
import pytest

from aggbid.io import parse_config
from aggbid.model import MarketPriceSeries, ScenarioConfig, StationParams, UtilityParams

PAPER_STATION = dict(e_initial=0.18, e_min=0.12, e_max=0.6, cr_max=0.6, dr_max=0.6, p_cap=0.6)

_ACCEPTANCE_LINES = []


def record_acceptance(name, ok, detail=""):
    _ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def single_station(prices, a=320.0, b=320.0, mode="hourly", eta=1.0, policy="auto", **station):
    params = dict(PAPER_STATION, eta_ch=eta, eta_di=eta)
    params.update(station)
    return ScenarioConfig(
        stations=(StationParams(**params),),
        utilities=(UtilityParams(a, b, mode),),
        prices=MarketPriceSeries(prices),
        binary_policy=policy,
    )


def random_config(rng, T, n_stations=1, eta_range=(0.8, 1.0), lossless_share=0.0,
                  policy="auto", mode="hourly"):
    """A valid scenario whose terminal floor is reachable within T hours."""
    stations, utilities = [], []
    for _ in range(n_stations):
        e_max = rng.uniform(0.2, 1.5)
        e_min = e_max * rng.uniform(0.0, 0.3)
        frac = rng.uniform(max(e_min / e_max, 0.3), 0.7)
        cr = e_max * rng.uniform(0.3, 1.0)
        dr = e_max * rng.uniform(0.3, 1.0)
        p_cap = max(cr, dr) * rng.uniform(0.6, 1.2)
        if rng.uniform() < lossless_share:
            eta_ch = eta_di = 1.0
        else:
            eta_ch, eta_di = rng.uniform(*eta_range, size=2)
        reach = 0.9 * eta_ch * T * min(cr, p_cap)
        e_init = rng.uniform(e_min, e_max)
        e_init = min(e_max, max(e_init, frac * e_max - reach))
        stations.append(StationParams(e_initial=e_init, e_min=e_min, e_max=e_max, eta_ch=eta_ch,
                                      eta_di=eta_di, cr_max=cr, dr_max=dr, p_cap=p_cap,
                                      terminal_soc_fraction=frac))
        utilities.append(UtilityParams(rng.uniform(0, 400), rng.uniform(0, 400), mode))
    prices = MarketPriceSeries(rng.uniform(0.0, 150.0, size=T))
    return ScenarioConfig(tuple(stations), tuple(utilities), prices, binary_policy=policy)


@pytest.fixture(scope="session")
def paper_config():
    return parse_config("paper_base.cfg")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
