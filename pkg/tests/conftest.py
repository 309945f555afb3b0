import numpy as np
import pytest

from saddlevar.harness import build, parse_config
from saddlevar.lprecond import L0, LI, LM, exact_L
from saddlevar.rprecond import VARIANTS
from saddlevar.harness import rhat_for


def small_built(s=8, p=4, N=3, seed=0, **kw):
    """A desk-scale problem through the same builder the CLI uses."""
    kw.setdefault("k_list", tuple(range(1, N + 2)))
    kw.setdefault("smoothing", p <= s - 4)
    kw.setdefault("spinup", 50)
    kw.setdefault("r_blocks", min(3, p))
    cfg = parse_config("", s=s, p=p, N=N, seed=seed, **kw)
    return build(cfg)


def all_lhats(b):
    s, N = b.problem.s, b.problem.N
    out = [L0(s, N), LI(s, N), exact_L(b.blocks, s)]
    out += [LM(b.blocks, k, s) for k in range(1, N + 2)]
    return out


def all_rhats(b):
    return [rhat_for(b.config, v, b.Ri, b.pvec) for v in VARIANTS]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report: number -> (passed, detail)
ACCEPTANCE = {}


def record(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
