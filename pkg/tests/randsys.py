"""Random acyclic quantum-input-free systems for property tests.

Terms are generated as source strings and pushed through the real parser so
the sampled space is exactly what users can write.  `variants` produces
companions that are bisimilar by construction (internal padding, probabilistic
duplication), giving the invariant tests non-vacuous positive instances.
"""

import numpy as np

from qbisim.calculus import parse_module
from qbisim.quantum import QubitRegister, random_density
from qbisim.semantics import System

REGISTER = QubitRegister.of(["q1"])

_CHANNELS = ("a", "b", "c")
_OPS = ("H", "X", "Set0", "Set1", "Dephase")
_WEIGHTS = (("1/2", "1/2"), ("1/4", "3/4"), ("3/4", "1/4"))


def random_term(rng: np.random.Generator, depth: int, counter=None) -> str:
    if counter is None:
        counter = [0]
    if depth <= 0 or rng.random() < 0.2:
        return "nil"
    kind = rng.choice(["out", "out", "tau", "apply", "meas", "pchoice", "sum"])
    sub = lambda: random_term(rng, depth - 1, counter)
    if kind == "out":
        ch = _CHANNELS[rng.integers(0, len(_CHANNELS))]
        return f"{ch}!{rng.integers(0, 2)} . {_paren(sub())}"
    if kind == "tau":
        return f"tau . {_paren(sub())}"
    if kind == "apply":
        op = _OPS[rng.integers(0, len(_OPS))]
        return f"apply {op}[q1] . {_paren(sub())}"
    if kind == "meas":
        counter[0] += 1
        var = f"x{counter[0]}"
        ch = _CHANNELS[rng.integers(0, len(_CHANNELS))]
        if rng.random() < 0.5:
            return f"meas Mcomp[q1; {var}] . {ch}!{var} . {_paren(sub())}"
        return f"meas Mcomp[q1; {var}] . {_paren(sub())}"
    if kind == "pchoice":
        w1, w2 = _WEIGHTS[rng.integers(0, len(_WEIGHTS))]
        return f"pchoice {{ {w1} -> {_paren(sub())} ; {w2} -> {_paren(sub())} }}"
    left = f"{_CHANNELS[rng.integers(0, 3)]}!{rng.integers(0, 2)} . {_paren(sub())}"
    right = "tau . " + _paren(sub()) if rng.random() < 0.4 else \
        f"{_CHANNELS[rng.integers(0, 3)]}!{rng.integers(0, 2)} . {_paren(sub())}"
    return f"{left} + {right}"


def _paren(src: str) -> str:
    return f"( {src} )" if ("+" in src or "||" in src) else src


def variants(src: str) -> list:
    """Sources bisimilar to `src` by construction (state-based, hence both)."""
    inner = _paren(src)
    return [
        src,
        f"tau . {inner}",
        f"pchoice {{ 1/2 -> {inner} ; 1/2 -> {inner} }}",
    ]


def random_system(rng: np.random.Generator, depth: int = 3):
    """A fresh system over one qubit with a random initial density matrix."""
    system = System(parse_module("Dummy := nil"), register=REGISTER)
    state = random_density(rng, 2)
    return system, state


def random_config(rng: np.random.Generator, system, state, depth: int = 3):
    return system.config(random_term(rng, depth), state)
