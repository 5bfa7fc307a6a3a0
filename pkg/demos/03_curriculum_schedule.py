"""Show the monotonic curriculum: q(t) and the resulting batch plans.

Prints the schedule table for a short run and emits an SVG of q(t) plus the
per-epoch o-fake/p-fake counts for the paper-scale settings (T=50, b=64).
"""

import os

from cdfa.curriculum import CurriculumSchedule, plan_batch, schedule_q
from cdfa.plots import line_chart_svg

OUT_DIR = os.path.join(os.path.dirname(__file__), "out")


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    schedule = CurriculumSchedule(total_epochs=10)
    print("T=10, b=16")
    print("epoch   q(t)    n_real  n_ofake n_pfake")
    for t in range(11):
        plan = plan_batch(t, 16, schedule)
        print(f"{t:5d}  {schedule_q(t, schedule):6.3f}  {plan.n_real:6d}  {plan.n_ofake:7d} {plan.n_pfake:7d}")

    big = CurriculumSchedule(total_epochs=50)
    epochs = list(range(51))
    q = [schedule_q(t, big) for t in epochs]
    plans = [plan_batch(t, 64, big) for t in epochs]
    line_chart_svg(
        os.path.join(OUT_DIR, "curriculum_q.svg"),
        epochs,
        {"q(t)": q},
        title="Pseudo-fake share schedule, T=50",
        x_label="epoch",
        y_label="q",
        y_range=(0.0, 1.0),
    )
    line_chart_svg(
        os.path.join(OUT_DIR, "curriculum_counts.svg"),
        epochs,
        {"n_ofake": [p.n_ofake for p in plans], "n_pfake": [p.n_pfake for p in plans]},
        title="Fake-half composition per batch, T=50, b=64",
        x_label="epoch",
        y_label="count",
    )
    print(f"wrote {OUT_DIR}/curriculum_q.svg and curriculum_counts.svg")


if __name__ == "__main__":
    main()
