import os
import threading
import warnings

import pytest
from hypothesis import HealthCheck, settings

from tripdte.gf2 import InsecureFieldWarning
from tripdte.rss import Party
from tripdte.transport import local_network

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(autouse=True)
def _quiet_small_fields():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsecureFieldWarning)
        yield


def run3(fn, seed=1, adversaries=None, keys=True, lockstep=True, timeout=30.0):
    """Run fn(party) at all three parties; returns (outputs, errors, endpoints)."""
    eps = local_network(timeout=timeout, lockstep=lockstep)
    out, err = [None] * 3, [None] * 3
    adversaries = adversaries or {}

    def go(i):
        p = Party(i, eps[i], seed, adversary=adversaries.get(i))
        if lockstep:
            eps[i].lockstep.enter(i)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", InsecureFieldWarning)
                if keys:
                    p.setup_keys()
                out[i] = fn(p)
        except Exception as exc:  # collected for the caller
            err[i] = exc
            eps[i].abort(getattr(exc, "site", "error"))
        finally:
            if lockstep:
                eps[i].lockstep.leave(i)

    ts = [threading.Thread(target=go, args=(i,), daemon=True) for i in range(3)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    return out, err, eps


def ok3(fn, **kw):
    out, err, eps = run3(fn, **kw)
    for e in err:
        if e is not None:
            raise e
    return out
