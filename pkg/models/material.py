from dataclasses import dataclass


@dataclass(frozen=True)
class Material:
    vp: float      # primary wave velocity, m/s
    vs: float      # secondary wave velocity, m/s
    rho: float     # density, kg/m^3
    lam: float     # first Lame parameter, Pa
    mu: float      # shear modulus, Pa

    def scaled(self, s: float) -> "Material":
        """Same wave speeds label, moduli multiplied by s."""
        return Material(vp=self.vp, vs=self.vs, rho=self.rho, lam=self.lam * s, mu=self.mu * s)
