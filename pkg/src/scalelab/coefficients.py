"""Published fitted coefficients per finetuning domain.

``FINETUNING`` holds the multiplicative finetuning law (alpha, beta, A, E),
``FORGETTING`` the forgetting law (alpha, beta, A, B). The reported
bootstrapped mean relative errors are kept alongside for comparison.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

from .core import l0_table
from .laws import LawFamily, LawParams

__all__ = ["DomainCoefficients", "DOMAINS", "IFT_DOMAINS", "domain", "ft_params", "fg_params"]


class DomainCoefficients(NamedTuple):
    name: str
    ft_alpha: float
    ft_beta: float
    ft_A: float
    ft_E: float
    ft_mre: float
    fg_alpha: float
    fg_beta: float
    fg_A: float
    fg_B: float
    fg_mre: float


_ROWS = [
    # name               ft: alpha beta  A       E     MRE     fg: alpha beta  A     B      MRE
    ("arxiv",            0.17, 0.10, 95.18, 1.30, 0.0091, 0.74, 0.34, 526, 392, 0.0036),
    ("dm_mathematics",   0.06, 0.19, 16.03, 0.88, 0.0050, 0.58, 0.27, 202, 9847, 0.0091),
    ("enron_emails",     0.07, 0.05, 20.21, 0.00, 0.0113, 0.53, 0.21, 127, 1754, 0.0049),
    ("github",           0.14, 0.12, 84.55, 0.79, 0.0140, 0.76, 0.43, 217, 647, 0.0043),
    ("pg19",             0.14, 0.02, 34.55, 1.25, 0.0065, 0.78, 0.60, 14, 259, 0.0039),
    ("wikipedia_en",     0.13, 0.02, 30.11, 0.62, 0.0053, 0.52, 0.11, 145, 829, 0.0021),
    ("europarl",         0.12, 0.17, 160.24, 1.10, 0.0186, 0.81, 0.39, 2511, 1107, 0.0079),
    ("freelaw",          0.19, 0.05, 94.06, 1.11, 0.0091, 0.75, 0.45, 74, 236, 0.0030),
    ("openwebtext2",     0.14, 0.01, 31.54, 0.96, 0.0035, 0.38, 0.23, 2, 6504, 0.0025),
    ("pubmed_abstracts", 0.17, 0.01, 46.89, 0.94, 0.0083, 0.76, 0.57, 8, 948, 0.0017),
    ("pubmed_central",   0.18, 0.05, 74.37, 1.09, 0.0056, 0.65, 0.34, 81, 574, 0.0026),
    ("stackexchange",    0.16, 0.08, 78.23, 1.27, 0.0103, 0.62, 0.34, 63, 1179, 0.0027),
]

DOMAINS: dict[str, DomainCoefficients] = {r[0]: DomainCoefficients(*r) for r in _ROWS}

# Instruction finetuning on OpenHermes.
IFT_DOMAINS: dict[str, DomainCoefficients] = {
    "openhermes": DomainCoefficients("openhermes", 0.17, 0.03, 64.28, 0.46, 0.0059, 0.80, 0.27, 5513, 8584, 0.0029),
}


def domain(name: str) -> DomainCoefficients:
    key = name.lower().replace(" ", "_").replace("-", "_")
    table = {**DOMAINS, **IFT_DOMAINS}
    if key not in table:
        raise KeyError(f"unknown domain {name!r}; known: {', '.join(sorted(table))}")
    return table[key]


def ft_params(name: str) -> LawParams:
    c = domain(name)
    return LawParams(A=c.ft_A, alpha=c.ft_alpha, beta=c.ft_beta, E=c.ft_E).validate(LawFamily.MULTIPLICATIVE_FT)


def fg_params(name: str, l0: Optional[dict] = None) -> LawParams:
    """Forgetting coefficients with the rewarmed baselines attached by default."""
    c = domain(name)
    l0 = l0_table("rewarmed") if l0 is None else l0
    return LawParams(A=c.fg_A, alpha=c.fg_alpha, beta=c.fg_beta, B=c.fg_B, l0_pt=l0).validate(
        LawFamily.FORGETTING_MULT
    )
