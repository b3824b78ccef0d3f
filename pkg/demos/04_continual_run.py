"""A short continual run over haze, rain and snow, with the forgetting matrix.

Use ``--steps 2000`` for the full-length setting (a few minutes on one core).

    python demos/04_continual_run.py --steps 200
"""

import argparse

from weather_experts import RunConfig, forgetting_report, run_continual


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--out", default=None, help="optional directory for CSV logs and the checkpoint")
    args = ap.parse_args()

    run = run_continual(RunConfig(steps_per_task=args.steps), args.out)
    print("task  family  input PSNR  end PSNR  gain")
    for row in run.task_rows():
        print(f"{row['task']:4d}  {row['family']:6s}  {row['input_psnr']:10.2f}  {row['end_psnr']:8.2f}  "
              f"{row['end_psnr'] - row['input_psnr']:+.2f}")
    print("\nforgetting matrix (PSNR after task i, evaluated on task j):")
    for i, j, p, _ in run.matrix.rows():
        print(f"  after {i} on {j}: {p:.4f}")
    print("forgetting:", forgetting_report(run.matrix))


if __name__ == "__main__":
    main()
