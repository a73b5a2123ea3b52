"""Walk one user through a few weeks of logins and watch the features move.

Run with ``python demos/profile_and_scoring.py``.
"""

from __future__ import annotations

from dataclasses import replace
from datetime import timedelta

from frba.data import generate_synthetic
from frba.features import FEATURE_IDS, build_feature_vector
from frba.profile import UserProfile, update


def main() -> None:
    records = [r for r in generate_synthetic(1, 30, 0.0, seed=7) if r.success]
    profile = UserProfile(records[0].user_id)
    for r in records:
        update(profile, r)
    print(f"replayed {len(records)} successful logins for {profile.user_id}")

    usual = replace(records[-1], timestamp=records[-1].timestamp + timedelta(days=1))
    odd = replace(
        usual,
        country="ZZ", region="Nowhere", city="Elsewhere", asn=64512,
        browser_name_version="Curl 8.0", timestamp=usual.timestamp + timedelta(hours=11),
        rtt_ms=(usual.rtt_ms or 0) * 4,
    )
    a = build_feature_vector(profile, usual)
    b = build_feature_vector(profile, odd)
    print(f"{'feature':<22}{'usual':>8}{'odd':>8}")
    for name, x, y in zip(FEATURE_IDS, a.values, b.values):
        print(f"{name:<22}{x:8.3f}{y:8.3f}")
    print(f"{'mean':<22}{a.values.mean():8.3f}{b.values.mean():8.3f}")


if __name__ == "__main__":
    main()
