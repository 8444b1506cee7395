"""Independent reference implementations used only by the tests."""

import math

from scipy import integrate


def student_t_pdf(x: float, df: float) -> float:
    logc = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)
    return math.exp(logc - (df + 1) / 2 * math.log1p(x * x / df))


def t_two_sided_quadrature(t: float, df: float) -> float:
    """2 * integral_{|t|}^inf of the Student t density, by adaptive quadrature."""
    tail, _ = integrate.quad(student_t_pdf, abs(t), math.inf, args=(df,), epsabs=1e-14, epsrel=1e-12,
                             limit=200)
    return 2.0 * tail


def welch_reference(a, b):
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    va = sum((x - ma) ** 2 for x in a) / (na - 1) / na
    vb = sum((x - mb) ** 2 for x in b) / (nb - 1) / nb
    t = (ma - mb) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (na - 1) + vb**2 / (nb - 1))
    return t, df, t_two_sided_quadrature(t, df)
