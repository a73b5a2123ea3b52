"""From reconstruction error to a risk score, including the escalation path.

Run with ``python demos/risk_decisions.py``.
"""

from __future__ import annotations

from frba.risk import SessionState, base_score, dynamic_threshold, risk_score, security_measure
from frba.thresholds import classify_risk_level, compute_thresholds


def main() -> None:
    errors = [0.01] * 20 + [0.30, 0.32, 0.90, 0.95]
    t = compute_thresholds(errors)
    print(f"thresholds from calibration errors: lower {t.t_lower:.2f}, upper {t.t_upper:.2f}")
    for x in (0.005, 0.5, 1.2):
        print(f"  error {x:<5} -> risk level {classify_risk_level(x, t)}")

    print("\nbase scores (rows: asset criticality, columns: risk level)")
    for ac in (1, 2, 3):
        print(f"  AC{ac}: " + " ".join(str(base_score(ac, rl)) for rl in (0, 1, 2)))

    print("\nfailed logins before a low-risk login on a critical asset (AC=3)")
    for f in range(7):
        s = SessionState(consecutive_failed_logins=f)
        print(f"  F={f}  S={security_measure(s):.2f}  T={dynamic_threshold(3):.2f}  score={risk_score(3, 0, s)}")


if __name__ == "__main__":
    main()
