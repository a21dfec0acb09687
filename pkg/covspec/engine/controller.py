from dataclasses import dataclass

from covspec.engine.params import DraftingConfig


@dataclass
class LengthController:
    """
    Draft length adaptation from an EMA of token acceptance and the latency a rejection would cost.
    """
    k: int
    k_min: int
    k_max: int
    eta: float = 0.1
    p_low: float = 0.4
    p_up: float = 0.8
    T_ref: float = 0.05
    s: float = 2.0
    p_hat: float = 1.0
    adaptive: bool = True

    def __post_init__(self):
        if not self.k_min <= self.k <= self.k_max:
            raise ValueError(f"k={self.k} outside [{self.k_min}, {self.k_max}]")
        if not self.p_low < self.p_up:
            raise ValueError(f"p_low={self.p_low} must be below p_up={self.p_up}")

    @staticmethod
    def from_config(cfg: DraftingConfig) -> "LengthController":
        return LengthController(k=cfg.k_init, k_min=cfg.k_min, k_max=cfg.k_max, eta=cfg.eta,
                                p_low=cfg.p_low, p_up=cfg.p_up, T_ref=cfg.T_ref, s=cfg.s,
                                adaptive=cfg.adaptive)

    def observe(self, a: int):
        self.p_hat = (1 - self.eta) * self.p_hat + self.eta * a

    def phi(self, T_rej: float) -> int:
        if self.p_hat <= self.p_low:
            return -1
        if self.p_hat >= self.p_up and T_rej <= self.T_ref:
            return 1
        return 0

    def update_length(self, n_acc: int, k_used: int, T_rej_estimate: float) -> int:
        """
        folds one round into the EMA (accepts first, then rejects) and returns the new draft length
        """
        if not 0 <= n_acc <= k_used:
            raise ValueError(f"accepted {n_acc} of {k_used} drafted tokens")
        for _ in range(n_acc):
            self.observe(1)
        for _ in range(k_used - n_acc):
            self.observe(0)
        if self.adaptive:
            k = round(self.k * self.s ** self.phi(T_rej_estimate))  # halves go to even
            self.k = min(self.k_max, max(self.k_min, k))
        return self.k
