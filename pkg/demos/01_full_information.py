"""When everyone sees their own state, nobody infectious goes out.

Susceptible agents stay active because no infectious agent is active, and
infectious agents isolate because they pay for the risk they impose.  The
epidemic therefore stops at once: the susceptible share is frozen and the
initial presymptomatic agents resolve into recovered and dead.
"""

from epimfg.fully_observed import beta_crit, fo_mfe, phi_bar_a, phi_bar_i, stationary_susceptible
from epimfg.model import ModelParams

params = ModelParams()
print(f"value of a symptomatic agent      {phi_bar_i(params):.6f}")
print(f"value of a presymptomatic agent   {phi_bar_a(params):.6f}")
print(f"critical infected activity (0.5)  {beta_crit(params, None, 0.5):.6f}")

for beta in (0.05, 0.2):
    v, u = stationary_susceptible(params, None, beta, 0.5)
    print(f"susceptible facing beta={beta}: value {v:+.6f}, {'active' if u else 'isolated'}")

res = fo_mfe(params, {"s": 0.9, "a": 0.1}, horizon=40.0)
rho = res.population.rho["all"]
print(f"max infected activity over time   {res.mean_field.beta.max():.1e}")
print(f"susceptible share start/end       {rho[0, 0]:.4f} / {rho[-1, 0]:.4f}")
print(f"activity reward alpha start/end   {res.mean_field.alpha[0]:.4f} / {res.mean_field.alpha[-1]:.4f}")
