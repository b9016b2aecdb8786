# scratch: independent oracle values for numerics tests (not shipped)
import math
import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

# normal quantile oracle by integrating the normal pdf
def phi(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)

def Phi(x):
    v, _ = quad(phi, -12, x, epsabs=1e-14, epsrel=1e-13, limit=300)
    return v

for q in (0.975, 0.995, 0.9975, 0.9, 0.75, 0.6, 0.025):
    z = brentq(lambda x: Phi(x) - q, -10, 10, xtol=1e-13)
    print("normal q=%r -> %.12f" % (q, z))

# beta quantile oracle: integrate the beta pdf, invert by brentq
def beta_pdf(x, a, b):
    from scipy.special import gammaln
    return math.exp((a-1)*math.log(x) + (b-1)*math.log1p(-x)
                    + gammaln(a+b) - gammaln(a) - gammaln(b))

def beta_cdf(x, a, b):
    if x <= 0: return 0.0
    if x >= 1: return 1.0
    v, _ = quad(beta_pdf, 0, x, args=(a, b), epsabs=1e-14, epsrel=1e-13, limit=400)
    return v

cases = [
    (2.5, 8.5, 0.025), (2.5, 8.5, 0.975),   # Jeffreys n=2 N=10 b=2
    (1.0, 2.0, 0.025), (1.0, 2.0, 0.975),   # Uniform n=0 N=1 b=2
    (3.0, 15.0, 0.005), (3.0, 15.0, 0.5), (3.0, 15.0, 0.995),
    (31.0, 169.0, 0.975),
    (0.5, 0.5, 0.25),
    (63.0, 6.0, 0.1),
]
for a, b, q in cases:
    x = brentq(lambda x: beta_cdf(x, a, b) - q, 1e-12, 1-1e-12, xtol=1e-13)
    print("beta a=%g b=%g q=%g -> %.12f" % (a, b, q, x))

# betainc spot values by quad
for a, b, x in [(2.5, 8.5, 0.3), (5.0, 3.0, 0.7), (0.5, 0.5, 0.5), (40.0, 60.0, 0.35)]:
    print("betainc a=%g b=%g x=%g -> %.14f" % (a, b, x, beta_cdf(x, a, b)))

# interval_normal example: n=0 N=1 b=2 Uniform xi=0.95
p = 1.0/3.0
s = math.sqrt(p*(1-p)/4)   # (N+1+b) = 4
z = brentq(lambda x: Phi(x) - 0.975, -10, 10, xtol=1e-13)
print("n=0,N=1 Uniform: p=%.6f s=%.6f hi=%.6f" % (p, s, min(1.0, p + z*s)))
# Wald n=5 N=10
print("wald: %.5f %.5f" % (0.5 - z*math.sqrt(0.025), 0.5 + z*math.sqrt(0.025)))
